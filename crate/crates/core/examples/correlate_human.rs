//! Correlates metric scores with simulated human ratings per category.
//!
//!     cargo run --example correlate_human

use compbench::backends::Backends;
use compbench::metrics::{evaluate_suite, EvalConfig, ImageIndex, MetricKind, ScoreStore};
use compbench::stats::{aggregate_human, correlation_report, HumanScore};
use compbench::suite::{Category, SuiteBuilder};
use rand::{Rng, SeedableRng};

fn main() {
    let suite = SuiteBuilder::default().build().unwrap();
    let records: Vec<_> = [Category::Color, Category::Spatial]
        .iter()
        .flat_map(|c| suite.category(*c).take(15))
        .cloned()
        .collect();
    let backends = Backends::fake(3);
    let index = ImageIndex::generate(&records, backends.generator.as_ref(), 0, 2).unwrap();
    let mut store = ScoreStore::in_memory();
    let metrics = [MetricKind::BVqa, MetricKind::Clip, MetricKind::BClip];
    evaluate_suite(&records, &index, &metrics, &backends, &EvalConfig::default(), &mut store).unwrap();

    // Raters who loosely agree with b_vqa.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let human: Vec<HumanScore> = store
        .scores()
        .filter(|s| s.metric == MetricKind::BVqa)
        .map(|s| {
            let ratings: Vec<u8> =
                (0..3).map(|_| (1.0 + 4.0 * s.value + rng.gen_range(-1.0..1.0)).round().clamp(1.0, 5.0) as u8).collect();
            HumanScore {
                prompt_id: s.prompt_id.clone(),
                image_id: s.image_id.clone(),
                value: aggregate_human(&ratings).unwrap(),
                raters: ratings.len(),
            }
        })
        .collect();

    let scores: Vec<_> = store.scores().cloned().collect();
    let report = correlation_report(&scores, &human, &records);
    println!("Kendall variant: {}", report.variant);
    print!("{}", report.to_table());
}
