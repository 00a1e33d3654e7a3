//! Item-level representation: turn a raw request into one semantic embedding
//! per candidate item.
//!
//! Pipeline per request: embedding lookups (user profile, context, behavior
//! sequence, candidate items) → target attention of each candidate over the
//! behavior sequence → feature-crossing MLP over the concatenated vectors.
//! Each candidate's row depends only on that candidate and the shared request
//! context, so the cost is linear in the candidate count and permuting the
//! candidates permutes the output rows identically.

use crate::error::{Error, Result};
use crate::model::{resolve_id, Ablation, ModelConfig, ModelParams};
use crate::telemetry::Telemetry;
use crate::tensor::{
    affine, affine_backward, dot, matmul_at, relu, relu_backward, softmax_in_place,
    softmax_rows_backward, Tensor2D,
};

/// One reranking request in raw feature form.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRequest {
    pub request_id: u64,
    pub user_ids: Vec<u64>,
    pub context_ids: Vec<u64>,
    /// Most-recent-first item ids the user interacted with; may be empty.
    pub behavior_ids: Vec<u64>,
    pub candidate_item_ids: Vec<u64>,
    /// Optional per-candidate dense features, one row per candidate.
    pub candidate_dense: Option<Tensor2D>,
}

impl RawRequest {
    pub fn n(&self) -> usize {
        self.candidate_item_ids.len()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.candidate_item_ids.is_empty() {
            return Err(Error::Input("request has no candidates".into()));
        }
        match (&self.candidate_dense, config.dense_dim) {
            (None, 0) => {}
            (None, d) => {
                return Err(Error::Input(format!(
                    "model expects {d} dense features per candidate, request has none"
                )))
            }
            (Some(m), d) => {
                if m.shape() != (self.n(), d) {
                    return Err(Error::Dimension {
                        context: "candidate_dense",
                        lhs: m.shape(),
                        rhs: (self.n(), d),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Embedding-table rows resolved for one request, with the row indices kept
/// for the backward scatter.
#[derive(Debug, Clone)]
pub struct EmbedOut {
    pub e_user: Vec<f64>,
    pub e_context: Vec<f64>,
    /// One row per behavior, in request order.
    pub e_behavior: Tensor2D,
    /// One row per candidate, in request order.
    pub x_raw: Tensor2D,
    pub user_rows: Vec<usize>,
    pub context_rows: Vec<usize>,
    pub behavior_rows: Vec<usize>,
    pub item_rows: Vec<usize>,
}

/// Mean of the table rows at `rows` (zero vector when empty).
fn mean_rows(table: &Tensor2D, rows: &[usize]) -> Vec<f64> {
    let d = table.cols();
    let mut out = vec![0.0; d];
    if rows.is_empty() {
        return out;
    }
    for &r in rows {
        for (o, &v) in out.iter_mut().zip(table.row(r)) {
            *o += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    out
}

pub fn embed_lookup(
    request: &RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EmbedOut> {
    let resolve_all = |ids: &[u64], vocab: usize, what: &str| -> Result<Vec<usize>> {
        let mut truncated = ids;
        if what == "behavior" && ids.len() > config.max_behaviors {
            truncated = &ids[..config.max_behaviors];
        }
        truncated
            .iter()
            .map(|&id| resolve_id(id, vocab, config.allow_oov, what))
            .collect()
    };
    let user_rows = resolve_all(&request.user_ids, config.user_vocab, "user")?;
    let context_rows = resolve_all(&request.context_ids, config.context_vocab, "context")?;
    let behavior_rows = resolve_all(&request.behavior_ids, config.item_vocab, "behavior")?;
    let item_rows = resolve_all(&request.candidate_item_ids, config.item_vocab, "item")?;

    let d = config.embed_dim;
    let e_user = mean_rows(&params.user_table.value, &user_rows);
    let e_context = mean_rows(&params.context_table.value, &context_rows);

    let mut e_behavior = Tensor2D::zeros(behavior_rows.len(), d);
    for (i, &r) in behavior_rows.iter().enumerate() {
        e_behavior.row_mut(i).copy_from_slice(params.item_table.value.row(r));
    }
    let mut x_raw = Tensor2D::zeros(item_rows.len(), d);
    for (i, &r) in item_rows.iter().enumerate() {
        x_raw.row_mut(i).copy_from_slice(params.item_table.value.row(r));
    }

    Ok(EmbedOut {
        e_user,
        e_context,
        e_behavior,
        x_raw,
        user_rows,
        context_rows,
        behavior_rows,
        item_rows,
    })
}

/// Forward state of one candidate's attention over the behavior sequence.
#[derive(Debug, Clone)]
pub struct TargetAttnCache {
    /// Query row (1 × D), empty when there were no behaviors.
    pub q: Vec<f64>,
    pub keys: Tensor2D,
    pub values: Tensor2D,
    /// Softmax weights over behaviors (length N_b).
    pub weights: Vec<f64>,
}

/// Scaled dot-product attention of one candidate embedding over the behavior
/// rows. Empty behavior sequences yield the zero vector (cold-start users).
pub fn target_attention(
    x_i: &[f64],
    e_behavior: &Tensor2D,
    params: &ModelParams,
) -> (Vec<f64>, TargetAttnCache) {
    let d = params.attn_query.value.cols();
    let n_b = e_behavior.rows();
    if n_b == 0 {
        return (
            vec![0.0; d],
            TargetAttnCache {
                q: Vec::new(),
                keys: Tensor2D::zeros(0, d),
                values: Tensor2D::zeros(0, d),
                weights: Vec::new(),
            },
        );
    }
    let scale = 1.0 / (d as f64).sqrt();
    // q = x_i Wq; keys/values = E_b Wk / E_b Wv.
    let mut q = vec![0.0; d];
    for (k, &x) in x_i.iter().enumerate() {
        for (qv, &w) in q.iter_mut().zip(params.attn_query.value.row(k)) {
            *qv += x * w;
        }
    }
    let keys = crate::tensor::matmul(e_behavior, &params.attn_key.value).expect("shape checked");
    let values = crate::tensor::matmul(e_behavior, &params.attn_value.value).expect("shape checked");

    let mut weights: Vec<f64> = (0..n_b).map(|j| dot(&q, keys.row(j)) * scale).collect();
    softmax_in_place(&mut weights);

    let mut out = vec![0.0; d];
    for (j, &w) in weights.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(values.row(j)) {
            *o += w * v;
        }
    }
    (
        out,
        TargetAttnCache {
            q,
            keys,
            values,
            weights,
        },
    )
}

/// Backward of `target_attention`. Accumulates projection-weight gradients
/// into `params` and returns (d x_i, d e_behavior).
pub fn target_attention_backward(
    x_i: &[f64],
    e_behavior: &Tensor2D,
    cache: &TargetAttnCache,
    d_out: &[f64],
    params: &mut ModelParams,
) -> (Vec<f64>, Tensor2D) {
    let d = params.attn_query.value.cols();
    let n_b = e_behavior.rows();
    if n_b == 0 {
        return (vec![0.0; d], Tensor2D::zeros(0, d));
    }
    let scale = 1.0 / (d as f64).sqrt();

    // out = sum_j w_j * V_j
    let mut d_values = Tensor2D::zeros(n_b, d);
    let mut d_weights = vec![0.0; n_b];
    for (j, dw) in d_weights.iter_mut().enumerate() {
        let w = cache.weights[j];
        for (dv, &g) in d_values.row_mut(j).iter_mut().zip(d_out) {
            *dv = w * g;
        }
        *dw = dot(d_out, cache.values.row(j));
    }

    // weights = softmax(logits); logits_j = scale * <q, K_j>
    let w_row = Tensor2D::from_flat(1, n_b, cache.weights.clone()).expect("sized");
    let dw_row = Tensor2D::from_flat(1, n_b, d_weights).expect("sized");
    let d_logits = softmax_rows_backward(&w_row, &dw_row).expect("same shape");

    let mut d_q = vec![0.0; d];
    let mut d_keys = Tensor2D::zeros(n_b, d);
    for j in 0..n_b {
        let dl = d_logits.get(0, j) * scale;
        for (dq, &k) in d_q.iter_mut().zip(cache.keys.row(j)) {
            *dq += dl * k;
        }
        for (dk, &qv) in d_keys.row_mut(j).iter_mut().zip(&cache.q) {
            *dk = dl * qv;
        }
    }

    // q = x_i Wq  →  dWq += x_i^T d_q ; d_x_i = d_q Wq^T
    let mut d_x_i = vec![0.0; d];
    for (k, &x) in x_i.iter().enumerate() {
        let wq_grad = params.attn_query.grad.row_mut(k);
        for (g, &dq) in wq_grad.iter_mut().zip(&d_q) {
            *g += x * dq;
        }
    }
    for (k, dx) in d_x_i.iter_mut().enumerate() {
        *dx = dot(&d_q, params.attn_query.value.row(k));
    }

    // keys = E_b Wk ; values = E_b Wv
    let dwk = matmul_at(e_behavior, &d_keys).expect("shape");
    params.attn_key.grad.add_scaled(&dwk, 1.0).expect("shape");
    let dwv = matmul_at(e_behavior, &d_values).expect("shape");
    params.attn_value.grad.add_scaled(&dwv, 1.0).expect("shape");

    let mut d_e_behavior =
        crate::tensor::matmul_bt(&d_keys, &params.attn_key.value).expect("shape");
    let from_values =
        crate::tensor::matmul_bt(&d_values, &params.attn_value.value).expect("shape");
    d_e_behavior.add_scaled(&from_values, 1.0).expect("shape");

    (d_x_i, d_e_behavior)
}

/// Forward state of the full encoding pass for one request.
#[derive(Debug, Clone)]
pub struct IrmCache {
    pub embed: EmbedOut,
    pub attn: Vec<TargetAttnCache>,
    /// n × (3D + dense) concatenated MLP input.
    pub cross_input: Tensor2D,
    /// Input fed to each affine layer (first entry == cross_input).
    pub layer_inputs: Vec<Tensor2D>,
    /// Pre-activation output of each hidden layer.
    pub pre_activations: Vec<Tensor2D>,
}

/// Semantic encoding used everywhere except the raw-embedding ablation.
pub fn semantic_encode(
    request: &RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
    telemetry: &Telemetry,
) -> Result<(Tensor2D, IrmCache)> {
    request.validate(config)?;
    let d = config.embed_dim;
    let n = request.n();
    let embed = embed_lookup(request, params, config)?;

    let mut attn = Vec::with_capacity(n);
    let mut cross_input = Tensor2D::zeros(n, config.cross_input_dim());
    for i in 0..n {
        let (attended, cache) = target_attention(embed.x_raw.row(i), &embed.e_behavior, params);
        let row = cross_input.row_mut(i);
        row[..d].copy_from_slice(&attended);
        row[d..2 * d].copy_from_slice(&embed.e_user);
        row[2 * d..3 * d].copy_from_slice(&embed.e_context);
        if let Some(dense) = &request.candidate_dense {
            row[3 * d..].copy_from_slice(dense.row(i));
        }
        attn.push(cache);
    }

    // Feature-crossing MLP over all candidate rows at once; ReLU on hidden
    // layers, linear final projection to D.
    let mut layer_inputs = Vec::with_capacity(params.cross_layers.len());
    let mut pre_activations = Vec::with_capacity(params.cross_layers.len().saturating_sub(1));
    let mut h = cross_input.clone();
    for (li, layer) in params.cross_layers.iter().enumerate() {
        layer_inputs.push(h.clone());
        let z = affine(&h, &layer.w, &layer.b)?;
        if li + 1 < params.cross_layers.len() {
            pre_activations.push(z.clone());
            h = relu(&z);
        } else {
            h = z;
        }
    }
    telemetry.add_feature_cross_rows(n as u64);

    let cache = IrmCache {
        embed,
        attn,
        cross_input,
        layer_inputs,
        pre_activations,
    };
    Ok((h, cache))
}

/// Backward of `semantic_encode`: routes d(X^s) through the MLP, attention,
/// and embedding lookups, accumulating into parameter gradients.
pub fn semantic_encode_backward(
    request: &RawRequest,
    cache: &IrmCache,
    d_x_s: &Tensor2D,
    params: &mut ModelParams,
    config: &ModelConfig,
) -> Result<()> {
    let d = config.embed_dim;
    let n = request.n();

    // MLP backward (reverse layer order).
    let mut grad = d_x_s.clone();
    for li in (0..params.cross_layers.len()).rev() {
        if li + 1 < params.cross_layers.len() {
            grad = relu_backward(&cache.pre_activations[li], &grad)?;
        }
        let layer = &mut params.cross_layers[li];
        grad = affine_backward(&cache.layer_inputs[li], &mut layer.w, &mut layer.b, &grad)?;
    }
    let d_cross = grad; // n × (3D + dense)

    // Split each row into the attended, user, and context segments (dense
    // features are raw inputs and receive no gradient).
    let mut d_e_user = vec![0.0; d];
    let mut d_e_context = vec![0.0; d];
    let mut d_e_behavior_total = Tensor2D::zeros(cache.embed.e_behavior.rows(), d);
    for i in 0..n {
        let row = d_cross.row(i).to_vec();
        let d_attended = &row[..d];
        for (acc, &g) in d_e_user.iter_mut().zip(&row[d..2 * d]) {
            *acc += g;
        }
        for (acc, &g) in d_e_context.iter_mut().zip(&row[2 * d..3 * d]) {
            *acc += g;
        }
        let (d_x_i, d_e_b) = target_attention_backward(
            cache.embed.x_raw.row(i),
            &cache.embed.e_behavior,
            &cache.attn[i],
            d_attended,
            params,
        );
        d_e_behavior_total.add_scaled(&d_e_b, 1.0)?;
        // Candidate raw embedding feeds only the attention query.
        let item_row = cache.embed.item_rows[i];
        for (g, &v) in params
            .item_table
            .grad
            .row_mut(item_row)
            .iter_mut()
            .zip(&d_x_i)
        {
            *g += v;
        }
    }

    // Mean-pool backward: each contributing row receives grad / count.
    scatter_mean(&mut params.user_table.grad, &cache.embed.user_rows, &d_e_user);
    scatter_mean(
        &mut params.context_table.grad,
        &cache.embed.context_rows,
        &d_e_context,
    );
    for (j, &row) in cache.embed.behavior_rows.iter().enumerate() {
        for (g, &v) in params
            .item_table
            .grad
            .row_mut(row)
            .iter_mut()
            .zip(d_e_behavior_total.row(j))
        {
            *g += v;
        }
    }
    Ok(())
}

fn scatter_mean(grad_table: &mut Tensor2D, rows: &[usize], d_vec: &[f64]) {
    if rows.is_empty() {
        return;
    }
    let inv = 1.0 / rows.len() as f64;
    for &r in rows {
        for (g, &v) in grad_table.row_mut(r).iter_mut().zip(d_vec) {
            *g += v * inv;
        }
    }
}

/// Raw-embedding encoding for the representation-module ablation: the
/// semantic matrix is just the candidate embedding rows.
pub fn raw_encode(
    request: &RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Tensor2D, Vec<usize>)> {
    request.validate(config)?;
    let rows: Vec<usize> = request
        .candidate_item_ids
        .iter()
        .map(|&id| resolve_id(id, config.item_vocab, config.allow_oov, "item"))
        .collect::<Result<_>>()?;
    let mut x = Tensor2D::zeros(rows.len(), config.embed_dim);
    for (i, &r) in rows.iter().enumerate() {
        x.row_mut(i).copy_from_slice(params.item_table.value.row(r));
    }
    Ok((x, rows))
}

/// Forward state for either encoding path.
#[derive(Debug, Clone)]
pub enum EncodeCache {
    Full(Box<IrmCache>),
    Raw { item_rows: Vec<usize> },
}

/// Encode a request according to the configured ablation.
pub fn encode(
    request: &RawRequest,
    params: &ModelParams,
    config: &ModelConfig,
    telemetry: &Telemetry,
) -> Result<(Tensor2D, EncodeCache)> {
    if config.ablation == Ablation::NoIrm {
        let (x, item_rows) = raw_encode(request, params, config)?;
        Ok((x, EncodeCache::Raw { item_rows }))
    } else {
        let (x, cache) = semantic_encode(request, params, config, telemetry)?;
        Ok((x, EncodeCache::Full(Box::new(cache))))
    }
}

/// Backward for either encoding path.
pub fn encode_backward(
    request: &RawRequest,
    cache: &EncodeCache,
    d_x_s: &Tensor2D,
    params: &mut ModelParams,
    config: &ModelConfig,
) -> Result<()> {
    match cache {
        EncodeCache::Full(irm) => semantic_encode_backward(request, irm, d_x_s, params, config),
        EncodeCache::Raw { item_rows } => {
            for (i, &row) in item_rows.iter().enumerate() {
                for (g, &v) in params
                    .item_table
                    .grad
                    .row_mut(row)
                    .iter_mut()
                    .zip(d_x_s.row(i))
                {
                    *g += v;
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, ParamCollection};

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            list_size: 2,
            candidates: 2,
            hidden: vec![6, 5],
            user_vocab: 10,
            context_vocab: 10,
            item_vocab: 20,
            dense_dim: 2,
            seed: 11,
            ..ModelConfig::default()
        }
    }

    fn sample_request(n: usize) -> RawRequest {
        let dense =
            Tensor2D::from_flat(n, 2, (0..2 * n).map(|i| 0.1 * i as f64 - 0.3).collect()).unwrap();
        RawRequest {
            request_id: 1,
            user_ids: vec![1, 4],
            context_ids: vec![2],
            behavior_ids: vec![3, 7, 12],
            candidate_item_ids: (0..n as u64).map(|i| i + 2).collect(),
            candidate_dense: Some(dense),
        }
    }

    #[test]
    fn lookup_handles_empty_and_single_and_mean() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();

        let mut req = sample_request(2);
        req.behavior_ids.clear();
        let out = embed_lookup(&req, &params, &cfg).unwrap();
        assert_eq!(out.e_behavior.rows(), 0);

        // Single profile id: that row exactly.
        let single = RawRequest {
            user_ids: vec![4],
            ..sample_request(2)
        };
        let out = embed_lookup(&single, &params, &cfg).unwrap();
        assert_eq!(out.e_user.as_slice(), params.user_table.value.row(4));

        // Two ids: elementwise mean, checked against direct arithmetic.
        let two = RawRequest {
            user_ids: vec![1, 4],
            ..sample_request(2)
        };
        let out = embed_lookup(&two, &params, &cfg).unwrap();
        for k in 0..cfg.embed_dim {
            let expect =
                (params.user_table.value.get(1, k) + params.user_table.value.get(4, k)) / 2.0;
            assert!((out.e_user[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_vocab_ids_follow_policy() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut req = sample_request(2);
        req.candidate_item_ids[0] = 999;
        assert!(embed_lookup(&req, &params, &cfg).is_err());

        let oov_cfg = ModelConfig {
            allow_oov: true,
            ..cfg
        };
        let out = embed_lookup(&req, &params, &oov_cfg).unwrap();
        assert_eq!(out.item_rows[0], oov_cfg.item_vocab);
    }

    #[test]
    fn behavior_sequence_is_truncated_to_cap() {
        let cfg = ModelConfig {
            max_behaviors: 2,
            ..small_config()
        };
        let params = ModelParams::init(&cfg).unwrap();
        let req = sample_request(2);
        let out = embed_lookup(&req, &params, &cfg).unwrap();
        assert_eq!(out.behavior_rows, vec![3, 7]);
    }

    #[test]
    fn attention_with_no_behaviors_is_zero() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let empty = Tensor2D::zeros(0, 4);
        let (out, _) = target_attention(&[1.0, 2.0, 3.0, 4.0], &empty, &params);
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn attention_with_one_behavior_returns_its_value_projection() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let e_b = Tensor2D::from_flat(1, 4, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let (out, cache) = target_attention(&[1.0, 0.0, 0.0, 0.0], &e_b, &params);
        assert_eq!(cache.weights, vec![1.0]);
        let expect = crate::tensor::matmul(&e_b, &params.attn_value.value).unwrap();
        for (k, &o) in out.iter().enumerate() {
            assert!((o - expect.get(0, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_two_behaviors_matches_hand_computation() {
        let cfg = small_config();
        let mut params = ModelParams::init(&cfg).unwrap();
        // Identity projections make logits = <x_i, b_j> / sqrt(D).
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
        params.attn_query.value = eye.clone();
        params.attn_key.value = eye.clone();
        params.attn_value.value = eye;

        let x_i = [1.0, 0.0, 0.0, 0.0];
        let e_b = Tensor2D::from_flat(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (out, _) = target_attention(&x_i, &e_b, &params);

        // logits = (0.5, 0); softmax weight of the first row is 1/(1+e^-0.5).
        let w1 = 1.0 / (1.0 + (-0.5f64).exp());
        let w2 = 1.0 - w1;
        let expect = [w1, w2, 0.0, 0.0];
        for k in 0..4 {
            assert!((out[k] - expect[k]).abs() <= 1e-6, "k={k}: {} vs {}", out[k], expect[k]);
        }
    }

    #[test]
    fn identical_candidates_encode_identically() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let dense = Tensor2D::from_flat(3, 2, vec![0.4, 0.1, 0.4, 0.1, -0.2, 0.9]).unwrap();
        let req = RawRequest {
            candidate_item_ids: vec![5, 5, 9],
            candidate_dense: Some(dense),
            ..sample_request(3)
        };
        let tel = Telemetry::default();
        let (x_s, _) = semantic_encode(&req, &params, &cfg, &tel).unwrap();
        assert_eq!(x_s.row(0), x_s.row(1));
        assert_ne!(x_s.row(0), x_s.row(2));
    }

    #[test]
    fn single_candidate_yields_one_row() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let req = sample_request(1);
        let tel = Telemetry::default();
        let (x_s, _) = semantic_encode(&req, &params, &cfg, &tel).unwrap();
        assert_eq!(x_s.shape(), (1, 4));
    }

    #[test]
    fn permuting_candidates_permutes_rows() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let tel = Telemetry::default();
        let req = sample_request(4);
        let (x_s, _) = semantic_encode(&req, &params, &cfg, &tel).unwrap();

        let perm = [2usize, 0, 3, 1];
        let dense = req.candidate_dense.as_ref().unwrap();
        let permuted = RawRequest {
            candidate_item_ids: perm.iter().map(|&i| req.candidate_item_ids[i]).collect(),
            candidate_dense: Some(
                Tensor2D::from_rows(&perm.iter().map(|&i| dense.row(i).to_vec()).collect::<Vec<_>>())
                    .unwrap(),
            ),
            ..req.clone()
        };
        let (x_p, _) = semantic_encode(&permuted, &params, &cfg, &tel).unwrap();
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            assert_eq!(x_p.row(new_pos), x_s.row(old_pos));
        }
    }

    #[test]
    fn feature_cross_row_count_equals_candidate_count() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let tel = Telemetry::default();
        semantic_encode(&sample_request(4), &params, &cfg, &tel).unwrap();
        assert_eq!(tel.feature_cross_row_count(), 4);
        semantic_encode(&sample_request(2), &params, &cfg, &tel).unwrap();
        assert_eq!(tel.feature_cross_row_count(), 6);
    }

    #[test]
    fn outputs_finite_for_zeroed_model() {
        let cfg = small_config();
        let mut params = ModelParams::init(&cfg).unwrap();
        params.for_each_param_mut(&mut |_, p| p.value.fill(0.0));
        let tel = Telemetry::default();
        let (x_s, _) = semantic_encode(&sample_request(3), &params, &cfg, &tel).unwrap();
        assert!(x_s.all_finite());
    }

    #[test]
    fn raw_encoding_returns_embedding_rows() {
        let cfg = small_config();
        let params = ModelParams::init(&cfg).unwrap();
        let req = sample_request(3);
        let (x, rows) = raw_encode(&req, &params, &cfg).unwrap();
        assert_eq!(rows, vec![2, 3, 4]);
        assert_eq!(x.row(1), params.item_table.value.row(3));
    }

    #[test]
    fn encode_gradients_match_finite_differences() {
        let cfg = small_config();
        let mut params = ModelParams::init(&cfg).unwrap();
        let req = sample_request(3);
        let tel = Telemetry::default();

        // Scalar loss: fixed-coefficient contraction of X^s.
        let coef: Vec<f64> = (0..3 * cfg.embed_dim).map(|i| ((i as f64) * 0.7).sin()).collect();
        let loss = |p: &ModelParams| -> f64 {
            let (x_s, _) = semantic_encode(&req, p, &cfg, &tel).unwrap();
            dot(x_s.data(), &coef)
        };

        params.zero_grads();
        let (x_s, cache) = semantic_encode(&req, &params, &cfg, &tel).unwrap();
        let d_x_s = Tensor2D::from_flat(3, cfg.embed_dim, coef.clone()).unwrap();
        semantic_encode_backward(&req, &cache, &d_x_s, &mut params, &cfg).unwrap();
        let _ = x_s;

        let report = gradcheck(&mut params, loss, 1e-4, 6, 99).unwrap();
        assert!(
            report.worst_rel_error <= 1e-4,
            "worst {} on {}",
            report.worst_rel_error,
            report.worst_tensor
        );
    }

    #[test]
    fn raw_encode_backward_scatters_into_item_table() {
        let cfg = small_config();
        let mut params = ModelParams::init(&cfg).unwrap();
        let req = RawRequest {
            candidate_item_ids: vec![5, 5, 9],
            candidate_dense: Some(Tensor2D::zeros(3, 2)),
            ..sample_request(3)
        };
        let tel = Telemetry::default();
        let no_irm_cfg = ModelConfig {
            ablation: Ablation::NoIrm,
            ..cfg
        };
        let (_, cache) = encode(&req, &params, &no_irm_cfg, &tel).unwrap();
        let mut d = Tensor2D::zeros(3, 4);
        d.fill(1.0);
        encode_backward(&req, &cache, &d, &mut params, &no_irm_cfg).unwrap();
        // Item 5 appears twice: its row accumulates 2.0 per column.
        assert_eq!(params.item_table.grad.get(5, 0), 2.0);
        assert_eq!(params.item_table.grad.get(9, 0), 1.0);
        assert_eq!(params.item_table.grad.get(1, 0), 0.0);
    }
}
