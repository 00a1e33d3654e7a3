//! Smallest end-to-end use: build a model, make one request with eight
//! candidates, and find the best of all 40,320 orderings.
//!
//! Usage: cargo run --release --example quickstart_rerank

use treerank::ccm::rerank;
use treerank::data::{generate, GenConfig, SyntheticWorld};
use treerank::model::{ModelConfig, ModelParams};
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
        seed: 1,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config)?;

    // A synthetic request; any RawRequest with ids inside the vocabularies
    // and n = 8 candidates works the same way.
    let world = SyntheticWorld::new(config.item_vocab, config.dense_dim, 1.0, 0.5, 7)?;
    let sample = generate(
        &world,
        &GenConfig {
            num_lists: 1,
            n: 8,
            m: 8,
            seed: 7,
            user_vocab: config.user_vocab as u64,
            context_vocab: config.context_vocab as u64,
            behaviors_per_request: 8,
        },
    )?
    .remove(0);
    let request = sample.pool_request();

    let telemetry = Telemetry::default();
    let out = rerank(&request, &params, &config, &telemetry)?;
    println!("request {}:", out.request_id);
    println!("  scored orderings        {}", out.permutations);
    println!("  set-attention calls     {}", out.set_attention_calls);
    println!("  item-head evaluations   {}", out.head_evals);
    println!("  best ordering (rank {}) {:?}", out.best_rank, out.ranked_item_ids);
    println!("  best list score         {:.6}", out.best_score);
    println!(
        "  stage seconds: encode {:.4}, cache {:.4}, score {:.4}, argmax {:.4}",
        out.timings.semantic_s, out.timings.cache_s, out.timings.score_s, out.timings.argmax_s
    );
    Ok(())
}
