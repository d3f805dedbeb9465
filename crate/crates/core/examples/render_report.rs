//! Renders the published benchmark numbers next to a freshly scored fake
//! model and lists the leader of every (category, metric) cell.
//!
//!     cargo run --example render_report

use std::path::Path;

use compbench::backends::Backends;
use compbench::metrics::{evaluate_suite, EvalConfig, ImageIndex, MetricKind, ScoreStore};
use compbench::report::ReportTable;
use compbench::suite::{Category, SuiteBuilder};

fn main() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/published_tables.json");
    let published = ReportTable::read(&fixture).unwrap();

    let suite = SuiteBuilder::default().build().unwrap();
    let records: Vec<_> = Category::ALL.iter().flat_map(|c| suite.category(*c).take(5)).cloned().collect();
    let backends = Backends::fake(0);
    let index = ImageIndex::generate(&records, backends.generator.as_ref(), 0, 2).unwrap();
    let metrics = [MetricKind::BVqa, MetricKind::Unidet, MetricKind::Clip];
    let report =
        evaluate_suite(&records, &index, &metrics, &backends, &EvalConfig::default(), &mut ScoreStore::in_memory()).unwrap();

    let table = published.merge(ReportTable::from_summaries([("fake", &report.summary)])).unwrap();
    print!("{}", table.render());
    for r in table.rankings() {
        println!("{:<12} {:<13} {}", r.category.as_str(), r.metric.as_str(), r.leaders().join(", "));
    }
}
