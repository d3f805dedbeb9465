//! Records backend responses into a replay cache, then evaluates again with
//! no backend behind the cache and checks the stores match byte for byte.
//!
//!     cargo run --example replay_cache

use std::sync::Arc;

use compbench::backends::{Backends, ReplayCache, ReplayMode};
use compbench::metrics::{evaluate_suite, EvalConfig, ImageIndex, MetricKind, ScoreStore};
use compbench::suite::{Category, SuiteBuilder};

fn main() {
    let dir = std::env::temp_dir().join(format!("compbench-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cache_path = dir.join("cache.jsonl");
    let records = SuiteBuilder::default().build_category(Category::Complex).unwrap()[..5].to_vec();
    let metrics = [MetricKind::ThreeInOne, MetricKind::MgptCot];
    let cfg = EvalConfig::default();

    let cache = Arc::new(ReplayCache::open(&cache_path).unwrap());
    let live = Backends::fake(1).replayed(cache, ReplayMode::Record);
    let index = ImageIndex::generate(&records, live.generator.as_ref(), 0, 2).unwrap();
    let mut store = ScoreStore::open(&dir.join("recorded.jsonl")).unwrap();
    evaluate_suite(&records, &index, &metrics, &live, &cfg, &mut store).unwrap();

    let cache = Arc::new(ReplayCache::open(&cache_path).unwrap());
    println!("cache holds {} responses from:", cache.len());
    for d in cache.descriptors() {
        println!("  {:<10} {}", d.role.to_string(), d.model);
    }
    let offline = Backends::strict_replay(&cache.descriptors(), cache);
    let mut replayed = ScoreStore::open(&dir.join("replayed.jsonl")).unwrap();
    evaluate_suite(&records, &index, &metrics, &offline, &cfg, &mut replayed).unwrap();

    let a = std::fs::read(dir.join("recorded.jsonl")).unwrap();
    let b = std::fs::read(dir.join("replayed.jsonl")).unwrap();
    println!("identical stores: {} ({} bytes)", a == b, a.len());

    let unseen = SuiteBuilder::default().build_category(Category::Color).unwrap()[..1].to_vec();
    let unseen_index = ImageIndex::generate(&unseen, &compbench::backends::FakeGenerator::new(512, 512), 0, 1).unwrap();
    let miss = evaluate_suite(&unseen, &unseen_index, &[MetricKind::BVqa], &offline, &cfg, &mut ScoreStore::in_memory());
    println!("unrecorded request: {}", miss.unwrap_err());
    std::fs::remove_dir_all(&dir).ok();
}
