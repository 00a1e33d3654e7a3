//! Shows that the subset cache reproduces per-ordering recomputation
//! bit-for-bit in value while doing a fraction of the attention work, and
//! measures the wall-clock difference.
//!
//! Usage: cargo run --release --example cache_vs_naive

use std::time::Instant;

use treerank::ccm::{build_cache, naive_score_all, score_all_permutations, Precomputed};
use treerank::data::{generate, GenConfig, SyntheticWorld};
use treerank::irm;
use treerank::model::{ModelConfig, ModelParams};
use treerank::tcem::TreeLayout;
use treerank::telemetry::Telemetry;

fn main() -> treerank::error::Result<()> {
    let config = ModelConfig {
        embed_dim: 8,
        list_size: 8,
        candidates: 8,
        hidden: vec![32, 16],
        item_vocab: 500,
        user_vocab: 100,
        context_vocab: 16,
        dense_dim: 2,
        seed: 2,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config)?;
    let layout = TreeLayout::for_config(&config)?;
    let weights = config.resolved_weights();
    let telemetry = Telemetry::default();

    let world = SyntheticWorld::new(config.item_vocab, config.dense_dim, 1.0, 0.5, 20)?;
    let sample = generate(
        &world,
        &GenConfig {
            num_lists: 1,
            n: 8,
            m: 8,
            seed: 21,
            user_vocab: config.user_vocab as u64,
            context_vocab: config.context_vocab as u64,
            behaviors_per_request: 8,
        },
    )?
    .remove(0);
    let (x_s, _) = irm::encode(&sample.pool_request(), &params, &config, &telemetry)?;
    let pre = Precomputed::for_config(8, &config)?;

    // Cached path: one summary per item subset, then pure gathers.
    let calls_before = telemetry.set_attention_count();
    let t = Instant::now();
    let cache = build_cache(&x_s, &params, &layout, &telemetry)?;
    let cached = score_all_permutations(
        &x_s,
        &cache,
        &pre.table,
        &pre.index,
        &params,
        &weights,
        config.chunk_size,
        &telemetry,
    )?;
    let cached_s = t.elapsed().as_secs_f64();
    let cached_calls = telemetry.set_attention_count() - calls_before;

    // Naive path: rebuild every block summary of every ordering.
    let calls_before = telemetry.set_attention_count();
    let t = Instant::now();
    let naive = naive_score_all(&x_s, &pre.table, &params, &layout, &weights, &telemetry)?;
    let naive_s = t.elapsed().as_secs_f64();
    let naive_calls = telemetry.set_attention_count() - calls_before;

    let worst = cached
        .iter()
        .zip(&naive)
        .map(|(c, n)| (c - n).abs())
        .fold(0.0f64, f64::max);
    println!("orderings scored      {}", cached.len());
    println!("max |cached - naive|  {worst:.3e}");
    println!("set-attention calls   {cached_calls} cached vs {naive_calls} naive ({}x)", naive_calls / cached_calls.max(1));
    println!("wall clock            {cached_s:.4}s cached vs {naive_s:.4}s naive ({:.1}x)", naive_s / cached_s);
    Ok(())
}
