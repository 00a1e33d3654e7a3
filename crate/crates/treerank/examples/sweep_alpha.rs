//! Sweeps the pairwise-loss weight and reports held-out AUC/GAUC at each
//! point of the grid, showing the pointwise/pairwise tradeoff.
//!
//! Usage: cargo run --release --example sweep_alpha

use treerank::data::{generate, GenConfig, SyntheticWorld};
use treerank::metrics::evaluate;
use treerank::model::ModelConfig;
use treerank::telemetry::Telemetry;
use treerank::training::train;

fn main() -> treerank::error::Result<()> {
    let base = ModelConfig {
        embed_dim: 8,
        list_size: 8,
        candidates: 8,
        hidden: vec![32, 16],
        item_vocab: 1_000,
        user_vocab: 200,
        context_vocab: 16,
        dense_dim: 2,
        batch_size: 256,
        epochs: 2,
        seed: 6,
        ..ModelConfig::default()
    };
    let world = SyntheticWorld::new(base.item_vocab, base.dense_dim, 1.0, 0.6, 60)?;
    let gen = GenConfig {
        num_lists: 10_000,
        n: 8,
        m: 8,
        seed: 61,
        user_vocab: base.user_vocab as u64,
        context_vocab: base.context_vocab as u64,
        behaviors_per_request: 8,
    };
    let train_set = generate(&world, &gen)?;
    let test_set = generate(&world, &GenConfig { num_lists: 1_000, seed: 62, ..gen })?;

    let telemetry = Telemetry::default();
    println!("{:>6} {:>8} {:>8} {:>10} {:>10}", "alpha", "auc", "gauc", "final ce", "final gbpr");
    for alpha in [0.0, 0.01, 0.05, 0.1, 0.5] {
        let cfg = ModelConfig { alpha, ..base.clone() };
        let result = train(&train_set, &cfg)?;
        let summary = evaluate(&test_set, &result.params, &cfg, &telemetry)?;
        let last = result.epochs.last().unwrap();
        println!(
            "{alpha:>6} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            summary.auc, summary.gauc, last.loss.ce, last.loss.gbpr
        );
    }
    Ok(())
}
