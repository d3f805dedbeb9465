//! Builds the reference prompt suite, validates it, and prints a few prompts
//! per category.
//!
//!     cargo run --example generate_suite -- [seed]

use compbench::suite::{validate_suite, Category, Novelty, SuiteBuilder};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let manifest = SuiteBuilder::with_seed(seed).build().expect("suite builds");
    let report = validate_suite(&manifest);
    println!("{} prompts, valid: {}", report.total, report.ok);

    for category in Category::ALL {
        let c = &report.categories[&category];
        println!("\n[{category}] total {} train {} test {} seen {} unseen {}", c.total, c.train, c.test, c.seen, c.unseen);
        for r in manifest.category(category).take(3) {
            println!("  {:<16} {}", r.id, r.text);
        }
        if let Some(r) = manifest.category(category).find(|r| r.novelty == Novelty::Unseen) {
            println!("  unseen example:  {}", r.text);
        }
    }
}
