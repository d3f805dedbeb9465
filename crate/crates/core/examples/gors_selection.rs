//! Generates candidates, keeps the ones whose reward clears the category
//! threshold, and prints the resulting fine-tuning manifest. Also shows the
//! weighted denoising loss on a toy model.
//!
//!     cargo run --example gors_selection

use compbench::backends::Backends;
use compbench::gors::{build_manifest, generate_and_score, select, EngineReward, SelectionConfig, ThresholdAblation, ToyDenoiser, ToyItem};
use compbench::metrics::EvalConfig;
use compbench::suite::{Category, Split, SuiteBuilder};

fn main() {
    let suite = SuiteBuilder::default().build().unwrap();
    let records: Vec<_> = Category::ALL
        .iter()
        .flat_map(|c| suite.category(*c).filter(|r| r.split == Split::Train).take(3))
        .cloned()
        .collect();
    let backends = Backends::fake(2);
    let eval = EvalConfig::default();
    let reward = EngineReward { backends: &backends, config: &eval };
    let cfg = SelectionConfig { k_per_prompt: 6, ..SelectionConfig::default() };
    let generation = generate_and_score(&records, backends.generator.as_ref(), &reward, &cfg).unwrap();

    for ablation in [ThresholdAblation::Full, ThresholdAblation::Half, ThresholdAblation::Zero] {
        let s = select(&generation.samples, &cfg.clone().with_ablation(ablation));
        println!("{ablation:?}: kept {} of {}", s.samples.len(), s.considered);
    }
    let selection = select(&generation.samples, &cfg);
    for (c, t) in &selection.thresholds {
        println!("  {c:<12} threshold {t:.4} ({})", cfg.reward_metric(*c));
    }
    let manifest = build_manifest(&selection, &cfg).unwrap();
    println!(
        "manifest: batch {} steps {}..{} optimizer {} lr targets {:?}",
        manifest.batch_size,
        manifest.min_steps,
        manifest.max_steps,
        manifest.optimizer.name,
        manifest.adaptation.iter().map(|a| a.module.as_str()).collect::<Vec<_>>()
    );

    let model = ToyDenoiser::new(4, 3, 0);
    let items: Vec<ToyItem> = selection
        .samples
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, s)| ToyItem {
            latent: vec![0.1 * i as f64, -0.2, 0.3, 0.05],
            timestep: 500,
            text: s.prompt.clone(),
            noise: vec![0.2, -0.1, 0.4, 0.0],
            reward: s.reward,
        })
        .collect();
    println!("toy weighted loss {:.6}", model.loss(&items).unwrap());
}
