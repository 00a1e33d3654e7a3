//! Validates the hand-written backward pass: analytic gradients of the
//! full training loss (pointwise + pairwise, with context dropout active)
//! against central finite differences, per parameter tensor.
//!
//! Usage: cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treerank::data::{generate, GenConfig, SyntheticWorld};
use treerank::model::{ModelConfig, ModelParams};
use treerank::tcem::TreeLayout;
use treerank::telemetry::Telemetry;
use treerank::tensor::{gradcheck, ParamCollection};
use treerank::training::{backward_sample, forward_sample};

fn main() -> treerank::error::Result<()> {
    let config = ModelConfig {
        embed_dim: 8,
        list_size: 4,
        candidates: 4,
        hidden: vec![16, 8],
        item_vocab: 100,
        user_vocab: 32,
        context_vocab: 8,
        dense_dim: 2,
        max_behaviors: 4,
        // Default-scale init puts many gradients near the f64 roundoff
        // floor where finite differences are meaningless; a larger init
        // keeps the comparison informative.
        init_std: 0.3,
        context_dropout: 0.25,
        seed: 5,
        ..ModelConfig::default()
    };
    let layout = TreeLayout::for_config(&config)?;
    let telemetry = Telemetry::default();
    let world = SyntheticWorld::new(config.item_vocab, config.dense_dim, 1.0, 0.5, 50)?;
    let samples = generate(
        &world,
        &GenConfig {
            num_lists: 2,
            n: 4,
            m: 4,
            seed: 51,
            user_vocab: config.user_vocab as u64,
            context_vocab: config.context_vocab as u64,
            behaviors_per_request: 4,
        },
    )?;

    // The loss closure re-seeds the dropout stream, so each evaluation
    // sees the same masks and the loss is a fixed function of parameters.
    let loss_of = |params: &ModelParams| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        samples
            .iter()
            .map(|s| {
                forward_sample(s, params, &config, &layout, Some(&mut rng), &telemetry)
                    .unwrap()
                    .report
                    .total
                    * 0.5
            })
            .sum()
    };

    let mut params = ModelParams::init(&config)?;
    params.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for sample in &samples {
        let fwd = forward_sample(sample, &params, &config, &layout, Some(&mut rng), &telemetry)?;
        backward_sample(sample, &fwd, &mut params, &config, &layout, 0.5)?;
    }

    let report = gradcheck(&mut params, loss_of, 1e-4, 6, 123)?;
    println!("{:<24} worst relative error", "tensor");
    for (name, err) in &report.per_tensor {
        println!("{name:<24} {err:.3e}");
    }
    println!(
        "\nchecked {} coordinates; worst {:.3e} on {} -> {}",
        report.coords_checked,
        report.worst_rel_error,
        report.worst_tensor,
        if report.passes(1e-4) { "PASS" } else { "FAIL" }
    );
    Ok(())
}
