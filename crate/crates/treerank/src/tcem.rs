//! Tree-structured context extraction and the per-position scoring head.
//!
//! A slate of length m (power of two) is split into nested blocks of sizes
//! m, m/2, ..., 2. Each block is summarized by set attention — self-attention
//! without positional encoding followed by mean pooling — so the summary
//! depends only on the block's item set, never on the order the caller
//! supplies the rows in (rows are sorted into a canonical order internally,
//! making the invariance bit-exact). Every position then owns a stack of one
//! summary per level, and a single affine head maps
//! [position embedding ‖ item vector ‖ summary stack] to a click probability.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, SetAttnParams};
use crate::telemetry::Telemetry;
use crate::tensor::{
    matmul, matmul_at, matmul_bt, sigmoid_scalar, softmax_rows, softmax_rows_backward, Tensor2D,
};

/// Nested block structure over slate positions. Level 0 covers the whole
/// slate; each later level halves the block size, down to pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLayout {
    m: usize,
    /// Block size per level, outermost first.
    block_sizes: Vec<usize>,
}

impl TreeLayout {
    /// Standard layout: block sizes m, m/2, ..., 2.
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "slate length must be a power of two >= 2, got {m}"
            )));
        }
        let mut block_sizes = Vec::new();
        let mut size = m;
        while size >= 2 {
            block_sizes.push(size);
            size /= 2;
        }
        Ok(Self { m, block_sizes })
    }

    /// Degenerate single-level layout: one block spanning the whole slate
    /// (used by the flat-summary ablation).
    pub fn flat(m: usize) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "slate length must be a power of two >= 2, got {m}"
            )));
        }
        Ok(Self {
            m,
            block_sizes: vec![m],
        })
    }

    pub fn for_config(config: &ModelConfig) -> Result<Self> {
        match config.ablation {
            crate::model::Ablation::NoTcem => Self::flat(config.list_size),
            _ => Self::new(config.list_size),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn level_count(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_size(&self, level: usize) -> usize {
        self.block_sizes[level]
    }

    pub fn blocks_at(&self, level: usize) -> usize {
        self.m / self.block_sizes[level]
    }

    pub fn total_blocks(&self) -> usize {
        (0..self.level_count()).map(|l| self.blocks_at(l)).sum()
    }

    /// Position range [start, end) of the level-`level` block containing
    /// position `pos`.
    pub fn block_range(&self, level: usize, pos: usize) -> (usize, usize) {
        let size = self.block_sizes[level];
        let start = (pos / size) * size;
        (start, start + size)
    }
}

/// Forward state of one set-attention call.
#[derive(Debug, Clone)]
pub struct SetAttnCache {
    /// Rows in canonical (sorted) order.
    pub rows: Tensor2D,
    /// canonical row i came from input row `sort_perm[i]`.
    pub sort_perm: Vec<usize>,
    pub queries: Tensor2D,
    pub keys: Tensor2D,
    pub values: Tensor2D,
    /// k × k row-softmax attention weights.
    pub attn: Tensor2D,
}

/// Sort row indices lexicographically by content (total order on f64 bits),
/// making downstream arithmetic independent of the caller's row order.
fn canonical_order(rows: &Tensor2D) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.rows()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (rows.row(a), rows.row(b));
        for (x, y) in ra.iter().zip(rb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

/// Permutation-invariant summary of a set of D-vectors: single-layer
/// self-attention (no positional encoding) followed by mean pooling.
pub fn set_attention(
    rows: &Tensor2D,
    params: &SetAttnParams,
    telemetry: &Telemetry,
) -> Result<(Vec<f64>, SetAttnCache)> {
    let k = rows.rows();
    if k == 0 {
        return Err(Error::Input("set attention over an empty set".into()));
    }
    let d = params.w_query.value.cols();
    if rows.cols() != params.w_query.value.rows() {
        return Err(Error::Dimension {
            context: "set_attention",
            lhs: rows.shape(),
            rhs: params.w_query.value.shape(),
        });
    }
    telemetry.add_set_attention(1);

    let sort_perm = canonical_order(rows);
    let mut canon = Tensor2D::zeros(k, rows.cols());
    for (i, &src) in sort_perm.iter().enumerate() {
        canon.row_mut(i).copy_from_slice(rows.row(src));
    }

    let queries = matmul(&canon, &params.w_query.value)?;
    let keys = matmul(&canon, &params.w_key.value)?;
    let values = matmul(&canon, &params.w_value.value)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = matmul_bt(&queries, &keys)?;
    for v in logits.data_mut() {
        *v *= scale;
    }
    let attn = softmax_rows(&logits);
    let mixed = matmul(&attn, &values)?;

    let mut out = vec![0.0; d];
    for r in 0..k {
        for (o, &v) in out.iter_mut().zip(mixed.row(r)) {
            *o += v;
        }
    }
    let inv = 1.0 / k as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }

    Ok((
        out,
        SetAttnCache {
            rows: canon,
            sort_perm,
            queries,
            keys,
            values,
            attn,
        },
    ))
}

/// Backward of `set_attention`. Accumulates projection gradients into
/// `params` and returns d(rows) in the caller's original row order.
pub fn set_attention_backward(
    cache: &SetAttnCache,
    d_out: &[f64],
    params: &mut SetAttnParams,
) -> Result<Tensor2D> {
    let k = cache.rows.rows();
    let d = cache.rows.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let inv_k = 1.0 / k as f64;

    // out = mean over rows of (attn · values)
    let mut d_mixed = Tensor2D::zeros(k, d);
    for r in 0..k {
        for (g, &go) in d_mixed.row_mut(r).iter_mut().zip(d_out) {
            *g = go * inv_k;
        }
    }
    let d_attn = matmul_bt(&d_mixed, &cache.values)?;
    let mut d_values = matmul_at(&cache.attn, &d_mixed)?;

    let d_logits = softmax_rows_backward(&cache.attn, &d_attn)?;
    // logits = scale · Q K^T
    let mut d_queries = matmul(&d_logits, &cache.keys)?;
    for v in d_queries.data_mut() {
        *v *= scale;
    }
    let mut d_keys = matmul_at(&d_logits, &cache.queries)?;
    for v in d_keys.data_mut() {
        *v *= scale;
    }

    // Q = R Wq, K = R Wk, V = R Wv
    params
        .w_query
        .grad
        .add_scaled(&matmul_at(&cache.rows, &d_queries)?, 1.0)?;
    params
        .w_key
        .grad
        .add_scaled(&matmul_at(&cache.rows, &d_keys)?, 1.0)?;
    params
        .w_value
        .grad
        .add_scaled(&matmul_at(&cache.rows, &d_values)?, 1.0)?;

    let mut d_canon = matmul_bt(&d_queries, &params.w_query.value)?;
    d_canon.add_scaled(&matmul_bt(&d_keys, &params.w_key.value)?, 1.0)?;
    d_values = matmul_bt(&d_values, &params.w_value.value)?;
    d_canon.add_scaled(&d_values, 1.0)?;

    // Undo the canonical sort.
    let mut d_rows = Tensor2D::zeros(k, d);
    for (i, &src) in cache.sort_perm.iter().enumerate() {
        d_rows.row_mut(src).copy_from_slice(d_canon.row(i));
    }
    Ok(d_rows)
}

/// Forward state of one slate's summary stack.
#[derive(Debug, Clone)]
pub struct ContextStackCache {
    /// Per level, one cache per block (block index order).
    pub blocks: Vec<Vec<SetAttnCache>>,
}

fn validate_permutation(perm: &[usize], n: usize, m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(Error::Input(format!(
            "permutation has {} entries, slate length is {m}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n {
            return Err(Error::Input(format!(
                "permutation entry {p} out of range for {n} candidates"
            )));
        }
        if seen[p] {
            return Err(Error::Input(format!("duplicate item {p} in permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Build the m × (L·D) summary stack for one ordered slate. `perm[t]` is the
/// row of `x_s` shown at position t. Costs exactly one set-attention call per
/// block: m − 1 for the standard layout.
pub fn context_stack_for_list(
    perm: &[usize],
    x_s: &Tensor2D,
    params: &ModelParams,
    layout: &TreeLayout,
    telemetry: &Telemetry,
) -> Result<(Tensor2D, ContextStackCache)> {
    validate_permutation(perm, x_s.rows(), layout.m())?;
    let d = x_s.cols();
    let m = layout.m();
    let mut stack = Tensor2D::zeros(m, layout.level_count() * d);
    let mut blocks = Vec::with_capacity(layout.level_count());

    for level in 0..layout.level_count() {
        let size = layout.block_size(level);
        let attn_params = params.set_attn_at(level);
        let mut level_caches = Vec::with_capacity(layout.blocks_at(level));
        for b in 0..layout.blocks_at(level) {
            let start = b * size;
            let mut rows = Tensor2D::zeros(size, d);
            for (r, t) in (start..start + size).enumerate() {
                rows.row_mut(r).copy_from_slice(x_s.row(perm[t]));
            }
            let (embed, cache) = set_attention(&rows, attn_params, telemetry)?;
            for t in start..start + size {
                stack.row_mut(t)[level * d..(level + 1) * d].copy_from_slice(&embed);
            }
            level_caches.push(cache);
        }
        blocks.push(level_caches);
    }
    Ok((stack, ContextStackCache { blocks }))
}

/// Backward of `context_stack_for_list`: accumulates attention-projection
/// gradients and scatters d(x_s) into `d_x_s` (same shape as x_s).
pub fn context_stack_backward(
    perm: &[usize],
    cache: &ContextStackCache,
    d_stack: &Tensor2D,
    params: &mut ModelParams,
    layout: &TreeLayout,
    d_x_s: &mut Tensor2D,
) -> Result<()> {
    let d = d_x_s.cols();
    for level in 0..layout.level_count() {
        let size = layout.block_size(level);
        let attn_index = params.set_attn_index(level);
        for (b, block_cache) in cache.blocks[level].iter().enumerate() {
            let start = b * size;
            // Every position in the block reads the same summary vector, so
            // the summary's gradient is the sum over those positions.
            let mut d_embed = vec![0.0; d];
            for t in start..start + size {
                let seg = &d_stack.row(t)[level * d..(level + 1) * d];
                for (acc, &g) in d_embed.iter_mut().zip(seg) {
                    *acc += g;
                }
            }
            let d_rows =
                set_attention_backward(block_cache, &d_embed, &mut params.set_attn[attn_index])?;
            for (r, t) in (start..start + size).enumerate() {
                let dst = d_x_s.row_mut(perm[t]);
                for (acc, &g) in dst.iter_mut().zip(d_rows.row(r)) {
                    *acc += g;
                }
            }
        }
    }
    Ok(())
}

/// Forward state of one head evaluation.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub input: Vec<f64>,
    pub pred: f64,
}

/// Click probability of the item at position `t`:
/// sigmoid(affine([position embedding ‖ item vector ‖ summary stack row])).
pub fn predict_item_pctr(
    t: usize,
    x_s_row: &[f64],
    stack_row: &[f64],
    params: &ModelParams,
    telemetry: &Telemetry,
) -> Result<(f64, HeadCache)> {
    let d = params.position_embed.value.cols();
    if t >= params.position_embed.value.rows() {
        return Err(Error::Input(format!(
            "position {t} out of range for slate length {}",
            params.position_embed.value.rows()
        )));
    }
    let expect = params.head_w.value.rows();
    let got = d + x_s_row.len() + stack_row.len();
    if got != expect {
        return Err(Error::Dimension {
            context: "head input",
            lhs: (got, 1),
            rhs: (expect, 1),
        });
    }
    let mut input = Vec::with_capacity(expect);
    input.extend_from_slice(params.position_embed.value.row(t));
    input.extend_from_slice(x_s_row);
    input.extend_from_slice(stack_row);

    let mut logit = params.head_b.value.get(0, 0);
    for (i, &v) in input.iter().enumerate() {
        logit += v * params.head_w.value.get(i, 0);
    }
    telemetry.add_head_evals(1);
    let pred = sigmoid_scalar(logit);
    Ok((pred, HeadCache { input, pred }))
}

/// Backward of one head evaluation given d(pred). Accumulates head-weight
/// gradients and splits d(input) back into its three segments:
/// (d position-embedding row t, d item vector, d stack row).
pub fn head_backward(
    t: usize,
    cache: &HeadCache,
    d_pred: f64,
    params: &mut ModelParams,
) -> (Vec<f64>, Vec<f64>) {
    let d = params.position_embed.value.cols();
    let d_logit = d_pred * cache.pred * (1.0 - cache.pred);
    for (i, &v) in cache.input.iter().enumerate() {
        params.head_w.grad.data_mut()[i] += d_logit * v;
    }
    params.head_b.grad.data_mut()[0] += d_logit;

    let mut d_input = vec![0.0; cache.input.len()];
    for (g, i) in d_input.iter_mut().zip(0..cache.input.len()) {
        *g = d_logit * params.head_w.value.get(i, 0);
    }
    // Position-embedding gradient is scattered here; the rest is returned.
    for (k, &g) in d_input[..d].iter().enumerate() {
        params.position_embed.grad.data_mut()[t * d + k] += g;
    }
    let d_x_s_row = d_input[d..2 * d].to_vec();
    let d_stack_row = d_input[2 * d..].to_vec();
    (d_x_s_row, d_stack_row)
}

/// Forward state of a whole scored slate.
#[derive(Debug, Clone)]
pub struct ListCache {
    pub stack: Tensor2D,
    pub stack_cache: ContextStackCache,
    pub heads: Vec<HeadCache>,
}

/// Score one ordered slate: per-position click probabilities and their
/// weighted sum.
pub fn score_list(
    perm: &[usize],
    x_s: &Tensor2D,
    params: &ModelParams,
    layout: &TreeLayout,
    weights: &[f64],
    telemetry: &Telemetry,
) -> Result<(Vec<f64>, f64, ListCache)> {
    if weights.len() != layout.m() {
        return Err(Error::Input(format!(
            "{} position weights for slate length {}",
            weights.len(),
            layout.m()
        )));
    }
    let (stack, stack_cache) = context_stack_for_list(perm, x_s, params, layout, telemetry)?;
    let mut preds = Vec::with_capacity(layout.m());
    let mut heads = Vec::with_capacity(layout.m());
    let mut total = 0.0;
    for t in 0..layout.m() {
        let (pred, cache) = predict_item_pctr(t, x_s.row(perm[t]), stack.row(t), params, telemetry)?;
        total += weights[t] * pred;
        preds.push(pred);
        heads.push(cache);
    }
    Ok((
        preds,
        total,
        ListCache {
            stack,
            stack_cache,
            heads,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, ModelConfig, ModelParams};
    use crate::tensor::ParamCollection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_m(m: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            list_size: m,
            candidates: m,
            hidden: vec![6],
            dense_dim: 0,
            seed: 5,
            ..ModelConfig::default()
        }
    }

    fn random_x_s(n: usize, d: usize, seed: u64) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2D::from_flat(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn layout_base_case_m2() {
        let l = TreeLayout::new(2).unwrap();
        assert_eq!(l.level_count(), 1);
        assert_eq!(l.blocks_at(0), 1);
        assert_eq!(l.block_range(0, 0), (0, 2));
        assert_eq!(l.block_range(0, 1), (0, 2));
    }

    #[test]
    fn layout_m8_blocks_and_membership() {
        let l = TreeLayout::new(8).unwrap();
        assert_eq!(l.level_count(), 3);
        assert_eq!(
            (0..3).map(|k| l.block_size(k)).collect::<Vec<_>>(),
            vec![8, 4, 2]
        );
        assert_eq!(l.total_blocks(), 7);
        // Fourth slate position (index 3): whole list, first half, second pair.
        assert_eq!(l.block_range(0, 3), (0, 8));
        assert_eq!(l.block_range(1, 3), (0, 4));
        assert_eq!(l.block_range(2, 3), (2, 4));
    }

    #[test]
    fn layout_m4_blocks() {
        let l = TreeLayout::new(4).unwrap();
        assert_eq!(l.level_count(), 2);
        assert_eq!(l.block_range(0, 2), (0, 4));
        assert_eq!(l.block_range(1, 0), (0, 2));
        assert_eq!(l.block_range(1, 3), (2, 4));
    }

    #[test]
    fn layout_rejects_non_power_of_two() {
        for m in [0usize, 1, 3, 6, 12] {
            assert!(TreeLayout::new(m).is_err(), "m={m}");
        }
    }

    #[test]
    fn flat_layout_has_single_level() {
        let l = TreeLayout::flat(8).unwrap();
        assert_eq!(l.level_count(), 1);
        assert_eq!(l.block_size(0), 8);
        assert_eq!(l.total_blocks(), 1);
        let cfg = ModelConfig {
            ablation: Ablation::NoTcem,
            ..cfg_m(8)
        };
        assert_eq!(TreeLayout::for_config(&cfg).unwrap(), l);
    }

    #[test]
    fn set_attention_empty_set_is_an_error() {
        let cfg = cfg_m(2);
        let params = ModelParams::init(&cfg).unwrap();
        let tel = Telemetry::default();
        let empty = Tensor2D::zeros(0, 4);
        assert!(set_attention(&empty, &params.set_attn[0], &tel).is_err());
    }

    #[test]
    fn set_attention_single_row_is_its_value_projection() {
        let cfg = cfg_m(2);
        let params = ModelParams::init(&cfg).unwrap();
        let tel = Telemetry::default();
        let row = Tensor2D::from_flat(1, 4, vec![0.3, -0.8, 1.2, 0.05]).unwrap();
        let (out, _) = set_attention(&row, &params.set_attn[0], &tel).unwrap();
        let expect = matmul(&row, &params.set_attn[0].w_value.value).unwrap();
        for (k, &o) in out.iter().enumerate() {
            assert!((o - expect.get(0, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn set_attention_is_bit_exact_under_row_permutation() {
        let cfg = cfg_m(8);
        let params = ModelParams::init(&cfg).unwrap();
        let tel = Telemetry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..200 {
            let k = [2usize, 4, 8][trial % 3];
            let rows = random_x_s(k, 4, 1000 + trial as u64);
            let (base, _) = set_attention(&rows, &params.set_attn[0], &tel).unwrap();

            // Random shuffle of the same rows.
            let mut order: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let shuffled = Tensor2D::from_rows(
                &order.iter().map(|&i| rows.row(i).to_vec()).collect::<Vec<_>>(),
            )
            .unwrap();
            let (out, _) = set_attention(&shuffled, &params.set_attn[0], &tel).unwrap();
            let same = base
                .iter()
                .zip(&out)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "trial {trial}: row order changed the summary");
        }
    }

    #[test]
    fn set_attention_two_rows_matches_hand_computation() {
        let cfg = cfg_m(2);
        let mut params = ModelParams::init(&cfg).unwrap();
        let eye = Tensor2D::from_flat(
            4,
            4,
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        params.set_attn[0].w_query.value = eye.clone();
        params.set_attn[0].w_key.value = eye.clone();
        params.set_attn[0].w_value.value = eye;
        let tel = Telemetry::default();

        // Rows a=(1,0,0,0), b=(0,1,0,0). With identity projections:
        // logits/softmax per row over <r_i, r_j>/2: row a → (0.5, 0),
        // row b → (0, 0.5). Let s = 1/(1+e^-0.5) be the self weight.
        let rows =
            Tensor2D::from_flat(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (out, _) = set_attention(&rows, &params.set_attn[0], &tel).unwrap();
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        // Row a output: s·a + (1−s)·b; row b output: (1−s)·a + s·b.
        // Mean of the two outputs: ((s+1−s)/2)(a+b) = 0.5·(a+b).
        let expect = [0.5, 0.5, 0.0, 0.0];
        for k in 0..4 {
            assert!((out[k] - expect[k]).abs() <= 1e-6);
        }
        // And the raw per-row mixture is asymmetric unless s = 0.5.
        assert!(s > 0.5);
    }

    #[test]
    fn stack_m2_shares_the_single_block() {
        let cfg = cfg_m(2);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(2).unwrap();
        let x_s = random_x_s(2, 4, 3);
        let tel = Telemetry::default();
        let (stack, _) = context_stack_for_list(&[0, 1], &x_s, &params, &layout, &tel).unwrap();
        assert_eq!(stack.row(0), stack.row(1));
        assert_eq!(tel.set_attention_count(), 1);
    }

    #[test]
    fn stack_m8_uses_seven_calls_and_shares_blocks() {
        let cfg = cfg_m(8);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(8).unwrap();
        let x_s = random_x_s(8, 4, 4);
        let tel = Telemetry::default();
        let perm: Vec<usize> = (0..8).collect();
        let (stack, _) = context_stack_for_list(&perm, &x_s, &params, &layout, &tel).unwrap();
        assert_eq!(tel.set_attention_count(), 7);

        let d = 4;
        // Positions 2 and 3 share their pair block (level 2 segment).
        assert_eq!(stack.row(2)[2 * d..3 * d], stack.row(3)[2 * d..3 * d]);
        // Positions 0 and 7 sit in different halves and pairs: only the
        // global segment matches.
        assert_eq!(stack.row(0)[..d], stack.row(7)[..d]);
        assert_ne!(stack.row(0)[d..2 * d], stack.row(7)[d..2 * d]);
        assert_ne!(stack.row(0)[2 * d..3 * d], stack.row(7)[2 * d..3 * d]);
    }

    #[test]
    fn duplicate_permutation_entries_are_rejected() {
        let cfg = cfg_m(4);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let x_s = random_x_s(4, 4, 5);
        let tel = Telemetry::default();
        let err = context_stack_for_list(&[0, 1, 1, 2], &x_s, &params, &layout, &tel).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn block_sharing_across_permutations() {
        // Two orderings whose second pair holds the same item set {2, 3}
        // (in swapped order) get identical pair summaries at those positions.
        let cfg = cfg_m(4);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let x_s = random_x_s(6, 4, 6);
        let tel = Telemetry::default();
        let (s1, _) = context_stack_for_list(&[0, 1, 2, 3], &x_s, &params, &layout, &tel).unwrap();
        let (s2, _) = context_stack_for_list(&[1, 0, 3, 2], &x_s, &params, &layout, &tel).unwrap();
        let d = 4;
        assert_eq!(s1.row(2)[d..2 * d], s2.row(2)[d..2 * d]);
        assert_eq!(s1.row(0)[..d], s2.row(0)[..d]);
    }

    #[test]
    fn zeroed_head_predicts_one_half() {
        let cfg = cfg_m(2);
        let mut params = ModelParams::init(&cfg).unwrap();
        params.position_embed.value.fill(0.0);
        params.head_w.value.fill(0.0);
        params.head_b.value.fill(0.0);
        let tel = Telemetry::default();
        let (pred, _) =
            predict_item_pctr(0, &[0.0; 4], &[0.0; 4], &params, &tel).unwrap();
        assert_eq!(pred, 0.5);
    }

    #[test]
    fn head_matches_hand_computed_affine_sigmoid() {
        let cfg = cfg_m(2);
        let mut params = ModelParams::init(&cfg).unwrap();
        // Slate length 2, one level: head input = 3 segments of 4.
        params.position_embed.value.fill(0.0);
        params.position_embed.value.set(1, 0, 0.5);
        let w: Vec<f64> = (0..12).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        params.head_w.value = Tensor2D::from_flat(12, 1, w).unwrap();
        params.head_b.value = Tensor2D::from_flat(1, 1, vec![-0.2]).unwrap();
        let tel = Telemetry::default();

        let x_s_row = [1.0, -1.0, 0.0, 2.0];
        let stack_row = [0.0, 0.5, 0.0, 0.0];
        let (pred, _) = predict_item_pctr(1, &x_s_row, &stack_row, &params, &tel).unwrap();
        // logit = 0.5·0.1 + (1·0.5 − 1·0.6 + 0 + 2·0.8) + 0.5·1.0 − 0.2
        let logit: f64 = 0.05 + (0.5 - 0.6 + 0.0 + 1.6) + 0.5 - 0.2;
        let expect = 1.0 / (1.0 + (-logit).exp());
        assert!((pred - expect).abs() <= 1e-6, "{pred} vs {expect}");
    }

    #[test]
    fn same_item_position_context_gives_same_pctr() {
        // Slates (0,1,2,3) and (0,1,3,2): position 0 keeps its item, its pair
        // {0,1}, and the same global set, so its pCTR cannot change.
        let cfg = cfg_m(4);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let x_s = random_x_s(4, 4, 7);
        let tel = Telemetry::default();
        let w = vec![1.0; 4];
        let (p1, _, _) = score_list(&[0, 1, 2, 3], &x_s, &params, &layout, &w, &tel).unwrap();
        let (p2, _, _) = score_list(&[0, 1, 3, 2], &x_s, &params, &layout, &w, &tel).unwrap();
        assert_eq!(p1[0].to_bits(), p2[0].to_bits());
        assert_eq!(p1[1].to_bits(), p2[1].to_bits());
    }

    #[test]
    fn list_score_sums_weighted_predictions() {
        let cfg = cfg_m(2);
        let mut params = ModelParams::init(&cfg).unwrap();
        params.position_embed.value.fill(0.0);
        params.head_w.value.fill(0.0);
        params.head_b.value.fill(0.0);
        let layout = TreeLayout::new(2).unwrap();
        let x_s = random_x_s(2, 4, 8);
        let tel = Telemetry::default();
        // Zeroed head: both predictions are exactly 0.5 → total 1.0.
        let (preds, total, _) =
            score_list(&[0, 1], &x_s, &params, &layout, &[1.0, 1.0], &tel).unwrap();
        assert_eq!(preds, vec![0.5, 0.5]);
        assert_eq!(total, 1.0);

        // First-position-only weights: total equals the first prediction.
        let params = ModelParams::init(&cfg).unwrap();
        let (preds, total, _) =
            score_list(&[0, 1], &x_s, &params, &layout, &[1.0, 0.0], &tel).unwrap();
        assert_eq!(total, preds[0]);
    }

    #[test]
    fn scores_stay_in_the_open_interval() {
        let cfg = cfg_m(4);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let x_s = random_x_s(4, 4, 9);
        let tel = Telemetry::default();
        let (preds, total, _) =
            score_list(&[2, 0, 3, 1], &x_s, &params, &layout, &[1.0; 4], &tel).unwrap();
        assert!(preds.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(total > 0.0 && total < 4.0);
    }

    #[test]
    fn score_ignores_candidates_outside_the_slate() {
        let cfg = cfg_m(4);
        let params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let tel = Telemetry::default();
        let x_a = random_x_s(6, 4, 10);
        // Same first four rows, different trailing rows.
        let mut x_b = x_a.clone();
        x_b.row_mut(4).copy_from_slice(&[9.0, 9.0, 9.0, 9.0]);
        x_b.row_mut(5).copy_from_slice(&[-9.0, 0.0, 0.0, 0.0]);
        let w = vec![1.0; 4];
        let (_, t_a, _) = score_list(&[3, 1, 0, 2], &x_a, &params, &layout, &w, &tel).unwrap();
        let (_, t_b, _) = score_list(&[3, 1, 0, 2], &x_b, &params, &layout, &w, &tel).unwrap();
        assert_eq!(t_a.to_bits(), t_b.to_bits());
    }

    #[test]
    fn stack_and_head_gradients_match_finite_differences() {
        // Default-scale init leaves some attention gradients near 1e-8,
        // where central differences are pure roundoff; a larger init keeps
        // every gradient well above the noise floor.
        let cfg = ModelConfig {
            init_std: 0.3,
            ..cfg_m(4)
        };
        let mut params = ModelParams::init(&cfg).unwrap();
        let layout = TreeLayout::new(4).unwrap();
        let x_s = random_x_s(5, 4, 11);
        let perm = [4usize, 0, 2, 1];
        let tel = Telemetry::default();
        let coef = [0.9, -0.4, 0.7, 0.2];

        let loss = |p: &ModelParams| -> f64 {
            let (preds, _, _) =
                score_list(&perm, &x_s, p, &layout, &[1.0; 4], &tel).unwrap();
            preds.iter().zip(&coef).map(|(p, c)| p * c).sum()
        };

        params.zero_grads();
        let (_, _, cache) = score_list(&perm, &x_s, &params, &layout, &[1.0; 4], &tel).unwrap();
        let mut d_stack = Tensor2D::zeros(4, layout.level_count() * 4);
        let mut d_x_s = Tensor2D::zeros(5, 4);
        for t in 0..4 {
            let (d_x_row, d_stack_row) = head_backward(t, &cache.heads[t], coef[t], &mut params);
            for (acc, &g) in d_x_s.row_mut(perm[t]).iter_mut().zip(&d_x_row) {
                *acc += g;
            }
            for (acc, &g) in d_stack.row_mut(t).iter_mut().zip(&d_stack_row) {
                *acc += g;
            }
        }
        context_stack_backward(&perm, &cache.stack_cache, &d_stack, &mut params, &layout, &mut d_x_s)
            .unwrap();

        // Parameter gradients via the shared checker.
        let report = crate::tensor::gradcheck(&mut params, loss, 1e-4, 6, 13).unwrap();
        assert!(
            report.worst_rel_error <= 1e-4,
            "worst {} on {}",
            report.worst_rel_error,
            report.worst_tensor
        );

        // Input (x_s) gradients via direct central differences.
        let eps = 1e-4;
        for idx in 0..x_s.numel() {
            let mut xp = x_s.clone();
            xp.data_mut()[idx] += eps;
            let (pp, _, _) = score_list(&perm, &xp, &params, &layout, &[1.0; 4], &tel).unwrap();
            let mut xm = x_s.clone();
            xm.data_mut()[idx] -= eps;
            let (pm, _, _) = score_list(&perm, &xm, &params, &layout, &[1.0; 4], &tel).unwrap();
            let lp: f64 = pp.iter().zip(&coef).map(|(p, c)| p * c).sum();
            let lm: f64 = pm.iter().zip(&coef).map(|(p, c)| p * c).sum();
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = d_x_s.data()[idx];
            let rel = (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs());
            assert!(rel <= 1e-4, "x_s[{idx}]: {analytic} vs {numeric}");
        }
    }
}
