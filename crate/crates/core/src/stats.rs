//! Normalization, human-rating aggregation and rank correlation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricKind, MetricScore};
use crate::suite::{Category, PromptRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("need at least 2 paired samples, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rating {0} outside 1..=5")]
    RatingOutOfRange(u8),
    #[error("non-finite value")]
    NonFinite,
    #[error("correlation undefined: {0} side has no variation")]
    Degenerate(&'static str),
}

pub type StatsResult<T> = Result<T, StatsError>;

/// Maps min to 0 and max to 1; constant input maps to 0.5 everywhere.
pub fn normalize_minmax(values: &[f64]) -> StatsResult<Vec<f64>> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

/// Mean of 1-5 ratings divided by 5.
pub fn aggregate_human(ratings: &[u8]) -> StatsResult<f64> {
    if ratings.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(StatsError::RatingOutOfRange(*bad));
    }
    let sum: f64 = ratings.iter().map(|r| f64::from(*r)).sum();
    Ok(sum / ratings.len() as f64 / 5.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageKey {
    pub prompt_id: String,
    pub image_id: String,
}

impl ImageKey {
    pub fn new(prompt_id: impl Into<String>, image_id: impl Into<String>) -> Self {
        Self { prompt_id: prompt_id.into(), image_id: image_id.into() }
    }
}

/// Aggregated human judgement of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub prompt_id: String,
    pub image_id: String,
    pub value: f64,
    pub raters: usize,
}

/// Metric and human values aligned by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    pub keys: Vec<ImageKey>,
    pub metric_values: Vec<f64>,
    pub human_values: Vec<f64>,
}

impl PairedScores {
    pub fn new(keys: Vec<ImageKey>, metric_values: Vec<f64>, human_values: Vec<f64>) -> StatsResult<Self> {
        if metric_values.len() != human_values.len() {
            return Err(StatsError::LengthMismatch(metric_values.len(), human_values.len()));
        }
        if keys.len() != metric_values.len() {
            return Err(StatsError::LengthMismatch(keys.len(), metric_values.len()));
        }
        if metric_values.len() < 2 {
            return Err(StatsError::TooFew(metric_values.len()));
        }
        if metric_values.iter().chain(&human_values).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { keys, metric_values, human_values })
    }

    /// Pairs without meaningful keys.
    pub fn unkeyed(metric_values: Vec<f64>, human_values: Vec<f64>) -> StatsResult<Self> {
        let keys = (0..metric_values.len()).map(|i| ImageKey::new(i.to_string(), "")).collect();
        Self::new(keys, metric_values, human_values)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            keys: self.keys.clone(),
            metric_values: self.human_values.clone(),
            human_values: self.metric_values.clone(),
        }
    }
}

/// Number of pairs sharing a value, over runs of equal values in sorted data.
fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` in place and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(paired: &PairedScores) -> StatsResult<f64> {
    let n = paired.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let mut pairs: Vec<(f64, f64)> =
        paired.metric_values.iter().copied().zip(paired.human_values.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);

    if n1 == n0 {
        return Err(StatsError::Degenerate("metric"));
    }
    if n2 == n0 {
        return Err(StatsError::Degenerate("human"));
    }
    let numerator = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denominator = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok((numerator / denominator).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> StatsResult<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::Degenerate("metric"));
    }
    if syy == 0.0 {
        return Err(StatsError::Degenerate("human"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman_rho(paired: &PairedScores) -> StatsResult<f64> {
    if paired.len() < 2 {
        return Err(StatsError::TooFew(paired.len()));
    }
    pearson(&average_ranks(&paired.metric_values), &average_ranks(&paired.human_values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub tau: f64,
    pub rho: f64,
    pub n: usize,
    /// Kendall variant used.
    pub variant: String,
}

pub fn correlate(paired: &PairedScores) -> StatsResult<CorrelationResult> {
    Ok(CorrelationResult {
        tau: kendall_tau(paired)?,
        rho: spearman_rho(paired)?,
        n: paired.len(),
        variant: "tau_b".into(),
    })
}

/// Inner join on (prompt, image), then correlate min-max normalized metric
/// values with human scores.
pub fn correlate_metric(scores: &[MetricScore], human: &[HumanScore]) -> StatsResult<CorrelationResult> {
    correlate(&join(scores, human)?)
}

/// Joined and metric-normalized pairs, sorted by key.
pub fn join(scores: &[MetricScore], human: &[HumanScore]) -> StatsResult<PairedScores> {
    let by_key: HashMap<ImageKey, f64> = human
        .iter()
        .map(|h| (ImageKey::new(h.prompt_id.clone(), h.image_id.clone()), h.value))
        .collect();
    let mut joined: Vec<(ImageKey, f64, f64)> = scores
        .iter()
        .filter_map(|s| {
            let key = ImageKey::new(s.prompt_id.clone(), s.image_id.clone());
            by_key.get(&key).map(|h| (key, s.value, *h))
        })
        .collect();
    if joined.len() < 2 {
        return Err(StatsError::TooFew(joined.len()));
    }
    joined.sort_by(|a, b| a.0.cmp(&b.0));
    joined.dedup_by(|a, b| a.0 == b.0);
    let metric = normalize_minmax(&joined.iter().map(|j| j.1).collect::<Vec<_>>())?;
    let humans = joined.iter().map(|j| j.2).collect();
    PairedScores::new(joined.into_iter().map(|j| j.0).collect(), metric, humans)
}

/// One cell of a correlation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub metric: MetricKind,
    pub category: Category,
    pub tau: f64,
    pub rho: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub variant: String,
    pub entries: Vec<CorrelationEntry>,
    /// (metric, category) cells that could not be computed, with the reason.
    pub undefined: Vec<(MetricKind, Category, String)>,
}

/// Correlates every metric present in `scores` with human judgement, per
/// category of the prompt each score belongs to.
pub fn correlation_report(
    scores: &[MetricScore],
    human: &[HumanScore],
    records: &[PromptRecord],
) -> CorrelationReport {
    let categories: HashMap<&str, Category> = records.iter().map(|r| (r.id.as_str(), r.category)).collect();
    let mut groups: BTreeMap<(MetricKind, Category), Vec<MetricScore>> = BTreeMap::new();
    for s in scores {
        if let Some(c) = categories.get(s.prompt_id.as_str()) {
            groups.entry((s.metric, *c)).or_default().push(s.clone());
        }
    }
    let mut report = CorrelationReport { variant: "tau_b".into(), ..Default::default() };
    for ((metric, category), group) in groups {
        match correlate_metric(&group, human) {
            Ok(r) => report.entries.push(CorrelationEntry { metric, category, tau: r.tau, rho: r.rho, n: r.n }),
            Err(e) => report.undefined.push((metric, category, e.to_string())),
        }
    }
    report
}

impl CorrelationReport {
    /// Metric rows, τ/ρ column pairs per category.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", "metric");
        for c in Category::ALL {
            out.push_str(&format!("{:>24}", format!("{} tau/rho", c.as_str())));
        }
        out.push('\n');
        let metrics: std::collections::BTreeSet<MetricKind> = self.entries.iter().map(|e| e.metric).collect();
        for m in metrics {
            out.push_str(&format!("{:<14}", m.as_str()));
            for c in Category::ALL {
                let cell = self
                    .entries
                    .iter()
                    .find(|e| e.metric == m && e.category == c)
                    .map(|e| format!("{:.4}/{:.4}", e.tau, e.rho))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!("{cell:>24}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                } else if dx == 0.0 {
                    tx += 1.0;
                } else if dy == 0.0 {
                    ty += 1.0;
                } else if dx * dy > 0.0 {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
    }

    fn pairs(x: &[f64], y: &[f64]) -> PairedScores {
        PairedScores::unkeyed(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn normalizes() {
        assert_eq!(normalize_minmax(&[2.0, 4.0, 6.0]).unwrap(), [0.0, 0.5, 1.0]);
        assert_eq!(normalize_minmax(&[7.0; 3]).unwrap(), [0.5; 3]);
        assert_eq!(normalize_minmax(&[0.0, 0.3, 1.0]).unwrap(), [0.0, 0.3, 1.0]);
        assert_eq!(normalize_minmax(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn aggregates_ratings() {
        assert_relative_eq!(aggregate_human(&[5, 4, 3]).unwrap(), 0.8, epsilon = 1e-12);
        assert_eq!(aggregate_human(&[5, 5, 5]).unwrap(), 1.0);
        assert_relative_eq!(aggregate_human(&[1]).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(aggregate_human(&[0]), Err(StatsError::RatingOutOfRange(0)));
        assert_eq!(aggregate_human(&[6]), Err(StatsError::RatingOutOfRange(6)));
    }

    #[test]
    fn perfect_and_reversed_order() {
        let p = pairs(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(kendall_tau(&p).unwrap(), 1.0);
        assert_relative_eq!(spearman_rho(&p).unwrap(), 1.0, epsilon = 1e-12);
        let p = pairs(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]);
        assert_eq!(kendall_tau(&p).unwrap(), -1.0);
        assert_relative_eq!(spearman_rho(&p).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_tied_side_is_an_error() {
        let p = pairs(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(kendall_tau(&p), Err(StatsError::Degenerate(_))));
        assert!(matches!(spearman_rho(&p), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), [2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn disjoint_keys_fail_to_join() {
        let s = |p: &str| MetricScore {
            prompt_id: p.into(),
            image_id: "i".into(),
            metric: MetricKind::Clip,
            value: 0.3,
            detail: crate::metrics::ScoreDetail::Cosine { cosine: 0.3, caption: None },
        };
        let h = |p: &str| HumanScore { prompt_id: p.into(), image_id: "i".into(), value: 0.8, raters: 3 };
        assert_eq!(correlate_metric(&[s("a"), s("b")], &[h("c"), h("d")]), Err(StatsError::TooFew(0)));
    }

    fn tied_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..6).prop_map(f64::from), n)
    }

    proptest! {
        #[test]
        fn tau_matches_brute_force((x, y) in (2usize..50).prop_flat_map(|n| (tied_vec(n), tied_vec(n)))) {
            let p = pairs(&x, &y);
            match kendall_tau(&p) {
                Ok(t) => {
                    prop_assert!((t - brute_tau(&x, &y)).abs() < 1e-9);
                    prop_assert!((-1.0..=1.0).contains(&t));
                }
                Err(_) => prop_assert!(brute_tau(&x, &y).is_nan()),
            }
        }

        #[test]
        fn coefficients_are_symmetric(x in prop::collection::vec(0.0f64..1.0, 20), y in prop::collection::vec(0.0f64..1.0, 20)) {
            let p = pairs(&x, &y);
            let q = p.swapped();
            prop_assert!((kendall_tau(&p).unwrap() - kendall_tau(&q).unwrap()).abs() < 1e-12);
            prop_assert!((spearman_rho(&p).unwrap() - spearman_rho(&q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_maps(x in prop::collection::vec(-5.0f64..5.0, 30), y in prop::collection::vec(0u8..6, 30)) {
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let base = pairs(&x, &y);
            let mapped: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let m = pairs(&mapped, &y);
            if let (Ok(a), Ok(b)) = (kendall_tau(&base), kendall_tau(&m)) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((spearman_rho(&base).unwrap() - spearman_rho(&m).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn human_aggregate_in_range(r in prop::collection::vec(1u8..=5, 1..10)) {
            let v = aggregate_human(&r).unwrap();
            prop_assert!((0.2..=1.0).contains(&v));
        }
    }
}
