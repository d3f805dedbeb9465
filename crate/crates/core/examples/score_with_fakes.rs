//! Scores a handful of prompts with every metric using deterministic fake
//! backends, then prints the per-category summary.
//!
//!     cargo run --example score_with_fakes

use compbench::backends::Backends;
use compbench::metrics::{evaluate_suite, EvalConfig, ImageIndex, MetricKind, ScoreDetail, ScoreStore};
use compbench::suite::{Category, SuiteBuilder};

fn main() {
    let suite = SuiteBuilder::default().build().unwrap();
    let records: Vec<_> = Category::ALL.iter().flat_map(|c| suite.category(*c).take(2)).cloned().collect();
    let backends = Backends::fake(7);
    let index = ImageIndex::generate(&records, backends.generator.as_ref(), 0, 4).unwrap();
    let mut store = ScoreStore::in_memory();
    let report = evaluate_suite(&records, &index, &MetricKind::ALL, &backends, &EvalConfig::default(), &mut store).unwrap();

    println!("{} scores, {} inapplicable\n", report.new_scores, report.skipped.len());
    print!("{}", report.summary.to_table());

    let first = &records[0];
    println!("\nper-question detail for `{}`:", first.text);
    for s in store.scores().filter(|s| s.prompt_id == first.id && s.metric == MetricKind::BVqa).take(2) {
        if let ScoreDetail::Vqa { answers } = &s.detail {
            for a in answers {
                println!("  {} {:<28} p(yes) = {:.3}", s.image_id, a.question, a.probability);
            }
            println!("  {} b_vqa = {:.4}", s.image_id, s.value);
        }
    }
}
