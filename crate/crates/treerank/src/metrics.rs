//! Evaluation and measurement: pooled and per-list ranking quality (AUC,
//! GAUC), a hit-ratio harness with candidate-selector baselines, and a
//! latency/work benchmark over the cached and naive scoring paths.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ccm::{self, PermutationTable, Precomputed};
use crate::data::ListSample;
use crate::error::{Error, Result};
use crate::irm::{self, RawRequest};
use crate::model::{ModelConfig, ModelParams};
use crate::tcem::{self, TreeLayout};
use crate::telemetry::Telemetry;
use crate::tensor::Tensor2D;
use crate::training;

/// One list's scored items: (score, binary label) per item.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub list_id: u64,
    pub scored: Vec<(f64, u8)>,
}

/// Rank-based (Mann–Whitney) AUC over (score, label) pairs; tied scores
/// contribute one half.
pub fn auc(pairs: &[(f64, u8)]) -> Result<f64> {
    let positives = pairs.iter().filter(|(_, y)| *y == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Input(format!(
            "AUC undefined: {positives} positives and {negatives} negatives"
        )));
    }
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score in AUC input".into()));
    }
    // Average ranks with midpoints on ties, then the Mann–Whitney identity.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midpoint.
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if pairs[idx].1 == 1 {
                rank_sum_pos += rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// AUC with all records' items pooled together.
pub fn pooled_auc(records: &[EvalRecord]) -> Result<f64> {
    let all: Vec<(f64, u8)> = records.iter().flat_map(|r| r.scored.iter().copied()).collect();
    auc(&all)
}

/// Mean of per-list AUCs; `weighted` weights each list by its item count
/// instead of uniformly.
pub fn gauc(records: &[EvalRecord], weighted: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("GAUC over an empty record set".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        let w = if weighted { r.scored.len() as f64 } else { 1.0 };
        num += w * auc(&r.scored)?;
        den += w;
    }
    Ok(num / den)
}

/// One hit-ratio trial: the evaluator's best permutation index and the
/// candidate indices some selector proposed.
#[derive(Debug, Clone)]
pub struct HRTrial {
    pub request_id: u64,
    pub best_index: u64,
    pub candidates: Vec<u64>,
}

/// Fraction of trials whose candidate set contains the evaluator's argmax.
pub fn hit_ratio(trials: &[HRTrial]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Input("hit ratio over zero trials".into()));
    }
    let mut hits = 0u64;
    for t in trials {
        if t.candidates.is_empty() {
            return Err(Error::Input(format!(
                "trial {} has an empty candidate set",
                t.request_id
            )));
        }
        if t.candidates.contains(&t.best_index) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials.len() as f64)
}

/// Selector baseline: K distinct permutation indices drawn uniformly from
/// 0..total (all of them when k ≥ total).
pub fn gsu_random_k(total: u64, k: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let total_usize = total as usize;
    if k >= total_usize {
        return (0..total).collect();
    }
    rand::seq::index::sample(rng, total_usize, k)
        .into_iter()
        .map(|i| i as u64)
        .collect()
}

/// Selector baseline: beam search over positions, ranking extensions by the
/// item head evaluated with a zeroed summary stack (no list context).
/// Returns up to `beam` complete orderings, best cumulative score first;
/// ties broken toward lexicographically smaller orderings.
pub fn gsu_beam_search(
    x_s: &Tensor2D,
    params: &ModelParams,
    layout: &TreeLayout,
    beam: usize,
    telemetry: &Telemetry,
) -> Result<Vec<Vec<u32>>> {
    if beam == 0 {
        return Err(Error::Input("beam width must be at least 1".into()));
    }
    let n = x_s.rows();
    let m = layout.m();
    if n < m {
        return Err(Error::Input(format!(
            "{n} candidates for slates of {m}"
        )));
    }
    let zero_stack = vec![0.0; layout.level_count() * x_s.cols()];
    // Context-free item score per (position, item).
    let mut item_score = Tensor2D::zeros(m, n);
    for t in 0..m {
        for i in 0..n {
            let (pred, _) = tcem::predict_item_pctr(t, x_s.row(i), &zero_stack, params, telemetry)?;
            item_score.set(t, i, pred);
        }
    }
    let mut partials: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for t in 0..m {
        let mut extended: Vec<(Vec<u32>, f64)> = Vec::with_capacity(partials.len() * n);
        for (items, score) in &partials {
            for i in 0..n as u32 {
                if !items.contains(&i) {
                    let mut next = items.clone();
                    next.push(i);
                    extended.push((next, score + item_score.get(t, i as usize)));
                }
            }
        }
        extended.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        extended.truncate(beam);
        partials = extended;
    }
    Ok(partials.into_iter().map(|(items, _)| items).collect())
}

/// Scoring-path choice for the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Full enumeration from the subset cache.
    Cached,
    /// Per-list recomputation of `k` sampled orderings (all of them when
    /// k = 0).
    Naive,
}

impl BenchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchMode::Cached => "cached",
            BenchMode::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cached" => Ok(BenchMode::Cached),
            "naive" => Ok(BenchMode::Naive),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected cached or naive)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    /// Sampled orderings per request in naive mode; 0 = all of them.
    pub k: usize,
    pub warmups: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mode: BenchMode::Cached,
            k: 100,
            warmups: 10,
            repetitions: 100,
            seed: 42,
        }
    }
}

/// Measured latency and per-request instrumentation counts.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub k: usize,
    pub warmups: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    /// Work per request, identical across repetitions by construction.
    pub set_attention_calls: u64,
    pub head_evals: u64,
    /// Orderings scored per request.
    pub permutations_scored: u64,
}

/// Times one scoring pass per repetition (round-robin over `requests`),
/// excluding `warmups` initial passes. Counters are observation-only; the
/// scored values are exactly what the non-benchmarked paths produce.
pub fn bench(
    requests: &[RawRequest],
    params: &ModelParams,
    config: &ModelConfig,
    bench_cfg: &BenchConfig,
    telemetry: &Telemetry,
) -> Result<BenchReport> {
    if requests.is_empty() {
        return Err(Error::Input("bench needs at least one request".into()));
    }
    if bench_cfg.repetitions == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    let n = requests[0].n();
    if requests.iter().any(|r| r.n() != n) {
        return Err(Error::Input("bench requests must share a candidate count".into()));
    }
    let layout = TreeLayout::for_config(config)?;
    let weights = config.resolved_weights();
    let pre = Precomputed::build(n, &layout, config.max_permutations)?;

    let mut attn_per_rep = None;
    let mut heads_per_rep = None;
    let mut perms_scored = 0u64;
    let mut times_ms = Vec::with_capacity(bench_cfg.repetitions);

    for rep in 0..bench_cfg.warmups + bench_cfg.repetitions {
        let request = &requests[rep % requests.len()];
        let attn_before = telemetry.set_attention_count();
        let heads_before = telemetry.head_eval_count();
        let start = Instant::now();
        match bench_cfg.mode {
            BenchMode::Cached => {
                let out = ccm::rerank_with(request, params, config, &pre, telemetry)?;
                perms_scored = out.permutations;
            }
            BenchMode::Naive => {
                perms_scored = naive_pass(
                    request,
                    params,
                    config,
                    &layout,
                    &weights,
                    &pre.table,
                    bench_cfg,
                    rep as u64,
                    telemetry,
                )?;
            }
        }
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let attn = telemetry.set_attention_count() - attn_before;
        let heads = telemetry.head_eval_count() - heads_before;
        match (attn_per_rep, heads_per_rep) {
            (None, _) => {
                attn_per_rep = Some(attn);
                heads_per_rep = Some(heads);
            }
            (Some(a), Some(h)) => {
                if a != attn || h != heads {
                    return Err(Error::Internal(format!(
                        "work varied across repetitions: {a}/{h} then {attn}/{heads}"
                    )));
                }
            }
            _ => unreachable!(),
        }
        if rep >= bench_cfg.warmups {
            times_ms.push(elapsed_ms);
        }
    }

    let mean_ms = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    let mut sorted = times_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let p99_idx = ((sorted.len() as f64 * 0.99).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(BenchReport {
        mode: bench_cfg.mode,
        k: if bench_cfg.mode == BenchMode::Naive {
            bench_cfg.k
        } else {
            0
        },
        warmups: bench_cfg.warmups,
        repetitions: bench_cfg.repetitions,
        mean_ms,
        p99_ms: sorted[p99_idx],
        set_attention_calls: attn_per_rep.unwrap_or(0),
        head_evals: heads_per_rep.unwrap_or(0),
        permutations_scored: perms_scored,
    })
}

/// One naive repetition: encode, then rebuild every block of k sampled
/// orderings (or all orderings) from scratch.
#[allow(clippy::too_many_arguments)]
fn naive_pass(
    request: &RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
    layout: &TreeLayout,
    weights: &[f64],
    table: &PermutationTable,
    bench_cfg: &BenchConfig,
    rep: u64,
    telemetry: &Telemetry,
) -> Result<u64> {
    let (x_s, _) = irm::encode(request, params, config, telemetry)?;
    let rows: Vec<usize> = if bench_cfg.k == 0 {
        (0..table.count() as usize).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(bench_cfg.seed ^ rep.wrapping_mul(0x9E37_79B9));
        gsu_random_k(table.count(), bench_cfg.k, &mut rng)
            .into_iter()
            .map(|i| i as usize)
            .collect()
    };
    let mut best: Option<(usize, f64)> = None;
    let mut perm = vec![0usize; table.m()];
    for &p in &rows {
        for (dst, &src) in perm.iter_mut().zip(table.row(p)) {
            *dst = src as usize;
        }
        let (_, total, _) = tcem::score_list(&perm, &x_s, params, layout, weights, telemetry)?;
        if best.is_none_or(|(_, s)| total > s) {
            best = Some((p, total));
        }
    }
    Ok(rows.len() as u64)
}

/// Quality summary of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub auc: f64,
    pub gauc: f64,
    pub lists: u64,
    pub items: u64,
    /// Degenerate-label lists excluded before scoring.
    pub lists_dropped: u64,
}

/// Scores every usable list in display order and reduces to pooled AUC and
/// per-list GAUC. Lists whose labels are all equal are excluded (their AUC
/// is undefined) and counted.
pub fn evaluate(
    samples: &[ListSample],
    params: &ModelParams,
    config: &ModelConfig,
    telemetry: &Telemetry,
) -> Result<EvalSummary> {
    let mut records = Vec::new();
    let mut dropped = 0u64;
    for sample in samples {
        if sample.m() != config.list_size {
            dropped += 1;
            continue;
        }
        let pos = sample.labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == sample.labels.len() {
            dropped += 1;
            continue;
        }
        let preds = training::predict_sample(sample, params, config, telemetry)?;
        records.push(EvalRecord {
            list_id: sample.request_id,
            scored: preds.into_iter().zip(sample.labels.iter().copied()).collect(),
        });
    }
    if records.is_empty() {
        return Err(Error::Input("no usable lists to evaluate".into()));
    }
    let items = records.iter().map(|r| r.scored.len() as u64).sum();
    Ok(EvalSummary {
        auc: pooled_auc(&records)?,
        gauc: gauc(&records, false)?,
        lists: records.len() as u64,
        items,
        lists_dropped: dropped,
    })
}

/// Stable identifier of the binary producing a report; deliberately free of
/// timestamps so equal runs emit equal bytes.
pub fn build_id() -> String {
    format!("treerank-{}", env!("CARGO_PKG_VERSION"))
}

/// Run metadata stamped onto every report.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub seed: u64,
    pub config_fingerprint: String,
    pub build_id: String,
}

impl RunMeta {
    pub fn new(seed: u64, config: &ModelConfig) -> Self {
        Self {
            seed,
            config_fingerprint: format!("{:016x}", config.fingerprint()),
            build_id: build_id(),
        }
    }
}

/// Writes metric rows as CSV: `metric,value,seed,config,build`.
pub fn write_metrics_csv(path: &std::path::Path, rows: &[(String, f64)], meta: &RunMeta) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "metric,value,seed,config,build")?;
    for (name, value) in rows {
        writeln!(
            f,
            "{name},{value},{},{},{}",
            meta.seed, meta.config_fingerprint, meta.build_id
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Writes metric rows as a single JSON object with metadata.
pub fn write_metrics_json(
    path: &std::path::Path,
    rows: &[(String, f64)],
    meta: &RunMeta,
) -> Result<()> {
    use std::io::Write;
    let metrics: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::json!(v)))
        .collect();
    let doc = serde_json::json!({
        "metrics": metrics,
        "seed": meta.seed,
        "config": meta.config_fingerprint,
        "build": meta.build_id,
    });
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &doc).map_err(|e| Error::Format(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
