//! Exhaustive slate scoring backed by a shared context cache.
//!
//! A slate's score depends on each position's block summaries, and a block
//! summary depends only on the *set* of items in the block. Across all
//! orderings of n candidates those sets repeat massively: every block of
//! every permutation is one of the Σ C(n, size) subsets. This module
//! computes each subset summary once ([`build_cache`]), precomputes which
//! cache slot every (permutation, position, level) needs ([`IndexMatrix`]),
//! then scores all permutations with plain gathers and head evaluations —
//! no attention in the scoring loop.

pub mod index;
pub mod subsets;

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::irm;
use crate::model::{ModelConfig, ModelParams};
use crate::tcem::{self, TreeLayout};
use crate::telemetry::{StageTimings, Telemetry};
use crate::tensor::{sigmoid_scalar, Tensor2D};

pub use index::{IndexMatrix, PermutationTable};
pub use subsets::{enumerate_subsets, enumerate_subsets_for_layout, SubsetIndex};

/// One summary vector per item subset, slot-addressed via [`SubsetIndex`].
#[derive(Debug, Clone)]
pub struct ContextCache {
    subsets: SubsetIndex,
    /// total-slots × D, rows in enumeration (slot) order.
    embeddings: Tensor2D,
}

impl ContextCache {
    pub fn subsets(&self) -> &SubsetIndex {
        &self.subsets
    }

    pub fn embeddings(&self) -> &Tensor2D {
        &self.embeddings
    }

    /// Summary row for a sorted subset.
    pub fn lookup(&self, subset: &[u32]) -> Result<&[f64]> {
        let slot = self.subsets.slot_of(subset)?;
        Ok(self.embeddings.row(slot as usize))
    }
}

/// Runs set attention once per subset key — every block summary any
/// ordering can need — and stores the results slot-addressed.
pub fn build_cache(
    x_s: &Tensor2D,
    params: &ModelParams,
    layout: &TreeLayout,
    telemetry: &Telemetry,
) -> Result<ContextCache> {
    let n = x_s.rows();
    let d = x_s.cols();
    let subsets = SubsetIndex::for_layout(n, layout)?;
    let total = usize::try_from(subsets.total())
        .map_err(|_| Error::Resource("cache slot count exceeds usize".into()))?;
    let mut embeddings = Tensor2D::zeros(total, d);
    let mut slot = 0usize;
    for level in 0..layout.level_count() {
        let size = layout.block_size(level);
        let attn = params.set_attn_at(level);
        let mut members: Vec<u32> = (0..size as u32).collect();
        let mut rows = Tensor2D::zeros(size, d);
        loop {
            for (r, &i) in members.iter().enumerate() {
                rows.row_mut(r).copy_from_slice(x_s.row(i as usize));
            }
            let (summary, _) = tcem::set_attention(&rows, attn, telemetry)?;
            embeddings.row_mut(slot).copy_from_slice(&summary);
            slot += 1;
            if !advance_combination(&mut members, n) {
                break;
            }
        }
    }
    debug_assert_eq!(slot, total);
    Ok(ContextCache {
        subsets,
        embeddings,
    })
}

/// Advances a sorted combination to its lexicographic successor in place;
/// false when `members` was the last combination.
fn advance_combination(members: &mut [u32], n: usize) -> bool {
    let k = members.len();
    let mut i = k;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if members[i] < (n - k + i) as u32 {
            break;
        }
        if i == 0 {
            return false;
        }
    }
    members[i] += 1;
    for j in i + 1..k {
        members[j] = members[j - 1] + 1;
    }
    true
}

/// Scores every ordering in `table` using cached summaries only.
///
/// The head is affine, so each input segment's contribution to the logit is
/// precomputed once — per position, per candidate, and per cache slot — and
/// each of the count × m head evaluations reduces to a few adds and a
/// sigmoid. Output is chunked and chunks score independently, so worker
/// threads never contend and results are identical for any chunk size.
#[allow(clippy::too_many_arguments)]
pub fn score_all_permutations(
    x_s: &Tensor2D,
    cache: &ContextCache,
    table: &PermutationTable,
    index: &IndexMatrix,
    params: &ModelParams,
    weights: &[f64],
    chunk_size: usize,
    telemetry: &Telemetry,
) -> Result<Vec<f64>> {
    let m = table.m();
    let levels = index.levels();
    let d = x_s.cols();
    if index.m() != m || index.n() != table.n() || index.count() != table.count() {
        return Err(Error::Internal(format!(
            "slot index is for ({}, {}) with {} rows; permutation table is for ({}, {}) with {} rows",
            index.n(),
            index.m(),
            index.count(),
            table.n(),
            table.m(),
            table.count()
        )));
    }
    if x_s.rows() != table.n() {
        return Err(Error::Input(format!(
            "{} item vectors for {} candidates",
            x_s.rows(),
            table.n()
        )));
    }
    if cache.subsets.n() != table.n() || cache.subsets.level_count() != levels {
        return Err(Error::Internal(format!(
            "cache built for n={} with {} levels; scoring needs n={} with {levels}",
            cache.subsets.n(),
            cache.subsets.level_count(),
            table.n()
        )));
    }
    if weights.len() != m {
        return Err(Error::Input(format!(
            "{} position weights for slate length {m}",
            weights.len()
        )));
    }
    let head_w = &params.head_w.value;
    if head_w.rows() != (2 + levels) * d {
        return Err(Error::Dimension {
            context: "head weights vs gathered input",
            lhs: (head_w.rows(), 1),
            rhs: ((2 + levels) * d, 1),
        });
    }
    let head_b = params.head_b.value.get(0, 0);

    // Per-segment logit contributions.
    let pos_dot: Vec<f64> = (0..m)
        .map(|t| seg_dot(params.position_embed.value.row(t), head_w, 0))
        .collect();
    let xs_dot: Vec<f64> = (0..x_s.rows())
        .map(|i| seg_dot(x_s.row(i), head_w, d))
        .collect();
    let total_slots = cache.embeddings.rows();
    let mut slot_dot = vec![0.0f64; total_slots];
    for level in 0..levels {
        let (start, end) = cache.subsets.span(level);
        for (slot, dot) in slot_dot
            .iter_mut()
            .enumerate()
            .take(end as usize)
            .skip(start as usize)
        {
            *dot = seg_dot(cache.embeddings.row(slot), head_w, (2 + level) * d);
        }
    }

    let count = table.count() as usize;
    let chunk = chunk_size.max(1);
    let mut scores = vec![0.0f64; count];
    scores
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(ci, out)| {
            let base = ci * chunk;
            for (k, slot_out) in out.iter_mut().enumerate() {
                let p = base + k;
                let perm = table.row(p);
                let slots = index.row(p);
                let mut total = 0.0;
                for t in 0..m {
                    let mut logit = head_b + pos_dot[t] + xs_dot[perm[t] as usize];
                    for &s in &slots[t * levels..(t + 1) * levels] {
                        logit += slot_dot[s as usize];
                    }
                    total += weights[t] * sigmoid_scalar(logit);
                }
                *slot_out = total;
            }
        });
    telemetry.add_head_evals(table.count() * m as u64);
    Ok(scores)
}

fn seg_dot(row: &[f64], head_w: &Tensor2D, offset: usize) -> f64 {
    let mut acc = 0.0;
    for (j, &v) in row.iter().enumerate() {
        acc += v * head_w.get(offset + j, 0);
    }
    acc
}

/// Reference scorer: rebuilds every block summary of every ordering from
/// scratch. Same numbers as the cached path, used for equivalence checks
/// and as the baseline in speedup measurements.
pub fn naive_score_all(
    x_s: &Tensor2D,
    table: &PermutationTable,
    params: &ModelParams,
    layout: &TreeLayout,
    weights: &[f64],
    telemetry: &Telemetry,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(table.count() as usize);
    let mut perm = vec![0usize; table.m()];
    for p in 0..table.count() as usize {
        for (dst, &src) in perm.iter_mut().zip(table.row(p)) {
            *dst = src as usize;
        }
        let (_, total, _) = tcem::score_list(&perm, x_s, params, layout, weights, telemetry)?;
        scores.push(total);
    }
    Ok(scores)
}

/// Per-request scorer that memoizes block summaries on first use instead of
/// precomputing all of them; suited to scoring a sampled subset of
/// orderings, where most cache slots would never be read.
pub struct LazyScorer<'a> {
    x_s: &'a Tensor2D,
    params: &'a ModelParams,
    layout: &'a TreeLayout,
    weights: &'a [f64],
    memo: HashMap<Vec<u32>, Vec<f64>>,
}

impl<'a> LazyScorer<'a> {
    pub fn new(
        x_s: &'a Tensor2D,
        params: &'a ModelParams,
        layout: &'a TreeLayout,
        weights: &'a [f64],
    ) -> Result<Self> {
        if weights.len() != layout.m() {
            return Err(Error::Input(format!(
                "{} position weights for slate length {}",
                weights.len(),
                layout.m()
            )));
        }
        Ok(Self {
            x_s,
            params,
            layout,
            weights,
            memo: HashMap::new(),
        })
    }

    /// Number of distinct block summaries computed so far.
    pub fn memoized_blocks(&self) -> usize {
        self.memo.len()
    }

    /// Scores one ordering, computing only the block summaries not yet seen.
    pub fn score(&mut self, perm: &[u32], telemetry: &Telemetry) -> Result<f64> {
        let m = self.layout.m();
        if perm.len() != m {
            return Err(Error::Input(format!(
                "ordering of {} positions for slate length {m}",
                perm.len()
            )));
        }
        let d = self.x_s.cols();
        let levels = self.layout.level_count();
        let mut stack = Tensor2D::zeros(m, levels * d);
        let mut key: Vec<u32> = Vec::with_capacity(m);
        for level in 0..levels {
            let size = self.layout.block_size(level);
            let attn_index = self.params.set_attn_index(level);
            for block_start in (0..m).step_by(size) {
                key.clear();
                key.extend_from_slice(&perm[block_start..block_start + size]);
                key.sort_unstable();
                if !self.memo.contains_key(&key) {
                    let mut rows = Tensor2D::zeros(size, d);
                    for (r, &i) in key.iter().enumerate() {
                        rows.row_mut(r).copy_from_slice(self.x_s.row(i as usize));
                    }
                    let attn = &self.params.set_attn[attn_index];
                    let (summary, _) = tcem::set_attention(&rows, attn, telemetry)?;
                    self.memo.insert(key.clone(), summary);
                }
                let summary = &self.memo[&key];
                for t in block_start..block_start + size {
                    stack.row_mut(t)[level * d..(level + 1) * d].copy_from_slice(summary);
                }
            }
        }
        let mut total = 0.0;
        for (t, &item) in perm.iter().enumerate() {
            let (pred, _) = tcem::predict_item_pctr(
                t,
                self.x_s.row(item as usize),
                stack.row(t),
                self.params,
                telemetry,
            )?;
            total += self.weights[t] * pred;
        }
        Ok(total)
    }
}

/// Index of the best score; the lowest index wins ties.
pub fn argmax_list(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Input("argmax over an empty score list".into()));
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("score {s} at index {i}")));
        }
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Request-independent structures for one (n, m) shape, built once and
/// shared across requests.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub table: PermutationTable,
    pub index: IndexMatrix,
}

impl Precomputed {
    pub fn build(n: usize, layout: &TreeLayout, max_permutations: u64) -> Result<Self> {
        let table = PermutationTable::build(n, layout.m(), max_permutations)?;
        let index = IndexMatrix::build(&table, layout)?;
        Ok(Self { table, index })
    }

    pub fn for_config(n: usize, config: &ModelConfig) -> Result<Self> {
        let layout = TreeLayout::for_config(config)?;
        Self::build(n, &layout, config.max_permutations)
    }
}

/// Result of reranking one request.
#[derive(Debug, Clone)]
pub struct RerankOutput {
    pub request_id: u64,
    /// Lexicographic rank of the winning ordering.
    pub best_rank: u64,
    /// Candidate item ids in the winning order.
    pub ranked_item_ids: Vec<u64>,
    pub best_score: f64,
    /// Orderings scored.
    pub permutations: u64,
    /// Set-attention calls and head evaluations spent on this request.
    pub set_attention_calls: u64,
    pub head_evals: u64,
    pub timings: StageTimings,
}

/// Full pipeline for one request: encode candidates, build the context
/// cache, score every ordering from the cache, and return the best one.
pub fn rerank_with(
    request: &irm::RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
    pre: &Precomputed,
    telemetry: &Telemetry,
) -> Result<RerankOutput> {
    if pre.table.n() != request.n() || pre.table.m() != config.list_size {
        return Err(Error::Input(format!(
            "precomputed tables are for ({}, {}), request has {} candidates for slates of {}",
            pre.table.n(),
            pre.table.m(),
            request.n(),
            config.list_size
        )));
    }
    let layout = TreeLayout::for_config(config)?;
    let weights = config.resolved_weights();
    let attn_before = telemetry.set_attention_count();
    let head_before = telemetry.head_eval_count();

    let t0 = Instant::now();
    let (x_s, _) = irm::encode(request, params, config, telemetry)?;
    let semantic_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let cache = build_cache(&x_s, params, &layout, telemetry)?;
    let cache_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let scores = score_all_permutations(
        &x_s,
        &cache,
        &pre.table,
        &pre.index,
        params,
        &weights,
        config.chunk_size,
        telemetry,
    )?;
    let score_s = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let best = argmax_list(&scores)?;
    let argmax_s = t3.elapsed().as_secs_f64();

    let ranked_item_ids = pre
        .table
        .row(best)
        .iter()
        .map(|&i| request.candidate_item_ids[i as usize])
        .collect();
    Ok(RerankOutput {
        request_id: request.request_id,
        best_rank: best as u64,
        ranked_item_ids,
        best_score: scores[best],
        permutations: pre.table.count(),
        set_attention_calls: telemetry.set_attention_count() - attn_before,
        head_evals: telemetry.head_eval_count() - head_before,
        timings: StageTimings {
            semantic_s,
            cache_s,
            score_s,
            argmax_s,
        },
    })
}

/// As [`rerank_with`], building the permutation table and slot index on the
/// fly. Prefer [`Precomputed`] + [`rerank_with`] when serving many requests
/// of the same shape.
pub fn rerank(
    request: &irm::RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
    telemetry: &Telemetry,
) -> Result<RerankOutput> {
    let pre = Precomputed::for_config(request.n(), config)?;
    rerank_with(request, params, config, &pre, telemetry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    fn test_config(n: usize, m: usize) -> ModelConfig {
        ModelConfig {
            candidates: n,
            list_size: m,
            ..ModelConfig::default()
        }
    }

    fn test_setup(n: usize, m: usize, seed: u64) -> (ModelConfig, ModelParams, Tensor2D) {
        let mut config = test_config(n, m);
        config.seed = seed;
        let params = ModelParams::init(&config).unwrap();
        // Any deterministic item-vector matrix works; take semantic vectors
        // from a synthetic request so downstream numbers are realistic.
        let request = demo_request(n, 7 + seed);
        let tel = Telemetry::default();
        let (x_s, _) = irm::encode(&request, &params, &config, &tel).unwrap();
        (config, params, x_s)
    }

    fn demo_request(n: usize, salt: u64) -> irm::RawRequest {
        let mut dense = Tensor2D::zeros(n, 4);
        for i in 0..n {
            for j in 0..4 {
                dense.set(i, j, ((i * 4 + j) as f64 * 0.37 + salt as f64 * 0.11).sin());
            }
        }
        irm::RawRequest {
            request_id: salt,
            user_ids: vec![salt % 50],
            context_ids: vec![(salt * 3) % 20],
            behavior_ids: vec![salt % 100, (salt * 7 + 1) % 100, (salt * 11 + 2) % 100],
            candidate_item_ids: (0..n as u64).map(|i| (i * 13 + salt) % 1000).collect(),
            candidate_dense: Some(dense),
        }
    }

    #[test]
    fn cache_lookup_matches_direct_set_attention() {
        let (_, params, x_s) = test_setup(8, 8, 3);
        let layout = TreeLayout::new(8).unwrap();
        let tel = Telemetry::default();
        let cache = build_cache(&x_s, &params, &layout, &tel).unwrap();
        for key in [vec![0u32, 1], vec![2, 5], vec![0, 3, 4, 7], vec![0, 1, 2, 3, 4, 5, 6, 7]] {
            let level = match key.len() {
                8 => 0,
                4 => 1,
                _ => 2,
            };
            let mut rows = Tensor2D::zeros(key.len(), x_s.cols());
            for (r, &i) in key.iter().enumerate() {
                rows.row_mut(r).copy_from_slice(x_s.row(i as usize));
            }
            let (direct, _) =
                tcem::set_attention(&rows, params.set_attn_at(level), &tel).unwrap();
            assert_eq!(cache.lookup(&key).unwrap(), direct.as_slice());
        }
    }

    #[test]
    fn cache_build_spends_one_attention_call_per_key() {
        let (_, params, x_s) = test_setup(8, 8, 1);
        let layout = TreeLayout::new(8).unwrap();
        let tel = Telemetry::default();
        build_cache(&x_s, &params, &layout, &tel).unwrap();
        assert_eq!(tel.set_attention_count(), 99);

        let (_, params, x_s) = test_setup(2, 2, 1);
        let layout = TreeLayout::new(2).unwrap();
        let tel = Telemetry::default();
        let cache = build_cache(&x_s, &params, &layout, &tel).unwrap();
        assert_eq!(tel.set_attention_count(), 1);
        assert_eq!(cache.embeddings().rows(), 1);
    }

    #[test]
    fn cache_build_is_deterministic() {
        let (_, params, x_s) = test_setup(4, 4, 9);
        let layout = TreeLayout::new(4).unwrap();
        let tel = Telemetry::default();
        let a = build_cache(&x_s, &params, &layout, &tel).unwrap();
        let b = build_cache(&x_s, &params, &layout, &tel).unwrap();
        assert_eq!(a.embeddings().data(), b.embeddings().data());
    }

    #[test]
    fn cached_scores_match_naive_recomputation_exhaustively() {
        for (n, m) in [(2usize, 2usize), (4, 4), (5, 4)] {
            let (config, params, x_s) = test_setup(n, m, 21);
            let layout = TreeLayout::new(m).unwrap();
            let weights = config.resolved_weights();
            let tel = Telemetry::default();
            let pre = Precomputed::build(n, &layout, 1_000_000).unwrap();
            let cache = build_cache(&x_s, &params, &layout, &tel).unwrap();
            let cached = score_all_permutations(
                &x_s, &cache, &pre.table, &pre.index, &params, &weights, 7, &tel,
            )
            .unwrap();
            let naive = naive_score_all(&x_s, &pre.table, &params, &layout, &weights, &tel)
                .unwrap();
            assert_eq!(cached.len(), naive.len());
            for (p, (c, v)) in cached.iter().zip(&naive).enumerate() {
                assert!(
                    (c - v).abs() <= 1e-9,
                    "n={n} m={m} row {p}: cached {c} vs naive {v}"
                );
            }
        }
    }

    #[test]
    fn scoring_spends_heads_but_no_attention() {
        let (config, params, x_s) = test_setup(4, 4, 2);
        let layout = TreeLayout::new(4).unwrap();
        let weights = config.resolved_weights();
        let pre = Precomputed::build(4, &layout, 1_000_000).unwrap();
        let tel = Telemetry::default();
        let cache = build_cache(&x_s, &params, &layout, &tel).unwrap();
        let before_attn = tel.set_attention_count();
        score_all_permutations(&x_s, &cache, &pre.table, &pre.index, &params, &weights, 4096, &tel)
            .unwrap();
        assert_eq!(tel.set_attention_count(), before_attn);
        assert_eq!(tel.head_eval_count(), 24 * 4);
    }

    #[test]
    fn chunk_size_does_not_change_scores() {
        let (config, params, x_s) = test_setup(4, 4, 5);
        let layout = TreeLayout::new(4).unwrap();
        let weights = config.resolved_weights();
        let pre = Precomputed::build(4, &layout, 1_000_000).unwrap();
        let tel = Telemetry::default();
        let cache = build_cache(&x_s, &params, &layout, &tel).unwrap();
        let mut baseline: Option<Vec<f64>> = None;
        for chunk in [1usize, 3, 24, 4096] {
            let scores = score_all_permutations(
                &x_s, &cache, &pre.table, &pre.index, &params, &weights, chunk, &tel,
            )
            .unwrap();
            match &baseline {
                None => baseline = Some(scores),
                Some(b) => assert_eq!(&scores, b, "chunk {chunk}"),
            }
        }
    }

    #[test]
    fn swapping_a_pair_block_leaves_other_positions_untouched() {
        // Two orderings that differ only by swapping the items inside one
        // size-2 block share every block set, so per-position probabilities
        // elsewhere are bitwise identical.
        let (config, params, x_s) = test_setup(8, 8, 11);
        let layout = TreeLayout::new(8).unwrap();
        let weights = config.resolved_weights();
        let tel = Telemetry::default();
        let a = [0usize, 1, 2, 3, 4, 5, 6, 7];
        let b = [0usize, 1, 3, 2, 4, 5, 6, 7]; // swap inside block {2,3}
        let (preds_a, _, _) =
            tcem::score_list(&a, &x_s, &params, &layout, &weights, &tel).unwrap();
        let (preds_b, _, _) =
            tcem::score_list(&b, &x_s, &params, &layout, &weights, &tel).unwrap();
        for t in [0usize, 1, 4, 5, 6, 7] {
            assert_eq!(preds_a[t], preds_b[t], "position {t}");
        }
        assert_ne!(preds_a[2], preds_b[2]);
    }

    #[test]
    fn lazy_scorer_matches_naive_and_memoizes() {
        let (config, params, x_s) = test_setup(8, 8, 13);
        let layout = TreeLayout::new(8).unwrap();
        let weights = config.resolved_weights();
        let pre = Precomputed::build(8, &layout, 1_000_000).unwrap();
        let tel = Telemetry::default();
        let mut lazy = LazyScorer::new(&x_s, &params, &layout, &weights).unwrap();
        // A handful of rows, including repeats of the same blocks.
        for p in [0usize, 1, 2, 40_319, 777] {
            let row = pre.table.row(p);
            let perm: Vec<usize> = row.iter().map(|&i| i as usize).collect();
            let (_, naive_total, _) =
                tcem::score_list(&perm, &x_s, &params, &layout, &weights, &tel).unwrap();
            let lazy_total = lazy.score(row, &tel).unwrap();
            assert_eq!(lazy_total, naive_total, "row {p}");
        }
        // Scoring the full space lazily touches each distinct subset once.
        let tel = Telemetry::default();
        let mut lazy = LazyScorer::new(&x_s, &params, &layout, &weights).unwrap();
        for p in 0..pre.table.count() as usize {
            lazy.score(pre.table.row(p), &tel).unwrap();
        }
        assert_eq!(lazy.memoized_blocks(), 99);
        assert_eq!(tel.set_attention_count(), 99);
    }

    #[test]
    fn argmax_takes_lowest_index_on_ties() {
        assert_eq!(argmax_list(&[0.1, 0.9, 0.9]).unwrap(), 1);
        assert_eq!(argmax_list(&[0.5]).unwrap(), 0);
        assert_eq!(argmax_list(&[2.0, 1.0, 2.0]).unwrap(), 0);
        assert!(matches!(argmax_list(&[]), Err(Error::Input(_))));
        assert!(matches!(
            argmax_list(&[0.3, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn rerank_is_deterministic_and_accounts_for_work() {
        let config = test_config(4, 4);
        let params = ModelParams::init(&config).unwrap();
        let request = demo_request(4, 42);
        let tel = Telemetry::default();
        let out1 = rerank(&request, &params, &config, &tel).unwrap();
        let out2 = rerank(&request, &params, &config, &tel).unwrap();
        assert_eq!(out1.best_rank, out2.best_rank);
        assert_eq!(out1.best_score, out2.best_score);
        assert_eq!(out1.ranked_item_ids, out2.ranked_item_ids);
        assert_eq!(out1.permutations, 24);
        assert_eq!(out1.set_attention_calls, 7); // C(4,4) + C(4,2)
        assert_eq!(out1.head_evals, 24 * 4);
        // The winning ordering is a permutation of the candidates.
        let mut sorted = out1.ranked_item_ids.clone();
        sorted.sort_unstable();
        let mut expect = request.candidate_item_ids.clone();
        expect.sort_unstable();
        assert_eq!(sorted, expect);
    }

    #[test]
    fn rerank_agrees_with_naive_argmax() {
        let mut config = test_config(4, 4);
        config.seed = 31;
        // Spread the head so scores differ meaningfully across orderings.
        config.init_std = 0.3;
        let params = ModelParams::init(&config).unwrap();
        let request = demo_request(4, 8);
        let tel = Telemetry::default();
        let out = rerank(&request, &params, &config, &tel).unwrap();

        let layout = TreeLayout::new(4).unwrap();
        let weights = config.resolved_weights();
        let (x_s, _) = irm::encode(&request, &params, &config, &tel).unwrap();
        let table = PermutationTable::build(4, 4, 1_000_000).unwrap();
        let naive = naive_score_all(&x_s, &table, &params, &layout, &weights, &tel).unwrap();
        let best = argmax_list(&naive).unwrap();
        assert_eq!(out.best_rank, best as u64);
        assert!((out.best_score - naive[best]).abs() <= 1e-9);
    }

    #[test]
    fn rerank_supports_more_candidates_than_slots() {
        let config = test_config(5, 4);
        let params = ModelParams::init(&config).unwrap();
        let request = demo_request(5, 4);
        let tel = Telemetry::default();
        let out = rerank(&request, &params, &config, &tel).unwrap();
        assert_eq!(out.permutations, 120);
        assert_eq!(out.ranked_item_ids.len(), 4);
        // C(5,4) + C(5,2) = 5 + 10 cache keys.
        assert_eq!(out.set_attention_calls, 15);
    }

    #[test]
    fn flat_tree_reranks_with_single_level_cache() {
        let mut config = test_config(4, 4);
        config.ablation = Ablation::NoTcem;
        let params = ModelParams::init(&config).unwrap();
        let request = demo_request(4, 6);
        let tel = Telemetry::default();
        let out = rerank(&request, &params, &config, &tel).unwrap();
        assert_eq!(out.permutations, 24);
        assert_eq!(out.set_attention_calls, 1); // C(4,4) only
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let config = test_config(4, 4);
        let params = ModelParams::init(&config).unwrap();
        let request = demo_request(5, 1); // five candidates
        let layout = TreeLayout::new(4).unwrap();
        let pre = Precomputed::build(4, &layout, 1_000_000).unwrap();
        let tel = Telemetry::default();
        assert!(rerank_with(&request, &params, &config, &pre, &tel).is_err());
    }
}
