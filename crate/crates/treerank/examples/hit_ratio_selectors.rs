//! Compares candidate-selector baselines by hit ratio: how often each
//! selector's proposed orderings contain the one the full evaluator would
//! pick. Full enumeration always hits; a random-K selector hits with
//! probability K / 40,320; beam search sits in between at a fraction of
//! the cost.
//!
//! Usage: cargo run --release --example hit_ratio_selectors

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treerank::ccm::{rerank_with, Precomputed};
use treerank::data::{generate, GenConfig, SyntheticWorld};
use treerank::irm;
use treerank::metrics::{gsu_beam_search, gsu_random_k, hit_ratio, HRTrial};
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
        seed: 3,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config)?;
    let layout = TreeLayout::for_config(&config)?;
    let telemetry = Telemetry::default();
    let pre = Precomputed::for_config(8, &config)?;
    let total = pre.table.count();

    let world = SyntheticWorld::new(config.item_vocab, config.dense_dim, 1.0, 0.5, 30)?;
    let lists = generate(
        &world,
        &GenConfig {
            num_lists: 60,
            n: 8,
            m: 8,
            seed: 31,
            user_vocab: config.user_vocab as u64,
            context_vocab: config.context_vocab as u64,
            behaviors_per_request: 8,
        },
    )?;

    // The evaluator's answer per request, shared by every selector row.
    let mut best = Vec::new();
    let mut encoded = Vec::new();
    for sample in &lists {
        let request = sample.pool_request();
        best.push(rerank_with(&request, &params, &config, &pre, &telemetry)?.best_rank);
        encoded.push(irm::encode(&request, &params, &config, &telemetry)?.0);
    }

    println!("{:>10} {:>8} {:>8} {:>10}", "selector", "param", "trials", "hit ratio");
    let full: Vec<HRTrial> = best
        .iter()
        .enumerate()
        .map(|(i, &b)| HRTrial {
            request_id: i as u64,
            best_index: b,
            candidates: (0..total).collect(),
        })
        .collect();
    println!("{:>10} {:>8} {:>8} {:>10.4}", "full", total, full.len(), hit_ratio(&full)?);

    for k in [10usize, 100, 1000, 10_000] {
        let mut trials = Vec::new();
        for (i, &b) in best.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
            for _ in 0..50 {
                trials.push(HRTrial {
                    request_id: i as u64,
                    best_index: b,
                    candidates: gsu_random_k(total, k, &mut rng),
                });
            }
        }
        println!(
            "{:>10} {:>8} {:>8} {:>10.4}",
            "random_k",
            k,
            trials.len(),
            hit_ratio(&trials)?
        );
    }

    for beam in [1usize, 3, 10] {
        let mut trials = Vec::new();
        for (i, &b) in best.iter().enumerate() {
            let lists = gsu_beam_search(&encoded[i], &params, &layout, beam, &telemetry)?;
            let candidates = lists
                .iter()
                .map(|l| pre.table.rank_of(l))
                .collect::<treerank::error::Result<Vec<u64>>>()?;
            trials.push(HRTrial {
                request_id: i as u64,
                best_index: b,
                candidates,
            });
        }
        println!(
            "{:>10} {:>8} {:>8} {:>10.4}",
            "beam",
            beam,
            trials.len(),
            hit_ratio(&trials)?
        );
    }
    Ok(())
}
