//! Supervised training from exposed-list logs: per-position cross-entropy
//! plus an intra-list pairwise contrast term, context dropout on the block
//! summaries, Adam updates.
//!
//! Training scores each list in its logged display order only — labels
//! exist for that order alone — so the permutation machinery never runs
//! here; it is purely forward/backward through encoder, summary tree, and
//! head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ListSample;
use crate::error::{Error, Result};
use crate::irm;
use crate::model::{ModelConfig, ModelParams};
use crate::tcem::{self, TreeLayout};
use crate::telemetry::Telemetry;
use crate::tensor::{adam_step, AdamConfig, ParamCollection, Tensor2D};

/// Predictions are clamped into this range before any log.
pub const PRED_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over the list's positions.
pub fn ce_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let p = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
        sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / preds.len() as f64)
}

/// Pairwise contrast over label-discordant intra-list pairs:
/// mean of −ln sigmoid(pred_clicked − pred_unclicked). Returns the loss and
/// the pair count (0 pairs → loss 0).
pub fn gbpr_loss(preds: &[f64], labels: &[u8]) -> (f64, u64) {
    let mut sum = 0.0;
    let mut pairs = 0u64;
    for i in 0..preds.len() {
        for j in 0..preds.len() {
            if labels[i] == 1 && labels[j] == 0 {
                // −ln σ(d) = ln(1 + e^(−d)), stable for both signs of d.
                let d = preds[i] - preds[j];
                sum += if d > 0.0 {
                    (-d).exp().ln_1p()
                } else {
                    -d + d.exp().ln_1p()
                };
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        (0.0, 0)
    } else {
        (sum / pairs as f64, pairs)
    }
}

/// Loss decomposition of one sample, batch, or epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub gbpr: f64,
    /// Always exactly `ce + alpha * gbpr`.
    pub total: f64,
    pub pair_count: u64,
}

impl LossReport {
    pub fn new(ce: f64, gbpr: f64, alpha: f64, pair_count: u64) -> Self {
        Self {
            ce,
            gbpr,
            total: ce + alpha * gbpr,
            pair_count,
        }
    }
}

/// Which summary sub-vectors survived dropout, for the backward pass.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    /// keep[t * levels + l] — one flag per (position, level) sub-vector.
    keep: Vec<bool>,
    levels: usize,
    scale: f64,
}

impl DropoutMask {
    pub fn identity(positions: usize, levels: usize) -> Self {
        Self {
            keep: vec![true; positions * levels],
            levels,
            scale: 1.0,
        }
    }

    pub fn kept(&self, t: usize, level: usize) -> bool {
        self.keep[t * self.levels + level]
    }
}

/// Inverted dropout over the summary stack: each (position, level)
/// sub-vector is zeroed whole with probability `rate`, survivors scaled by
/// 1/(1−rate). Rate 0 (and inference) is the identity.
pub fn context_dropout(
    stack: &Tensor2D,
    levels: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor2D, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if levels == 0 || !stack.cols().is_multiple_of(levels) {
        return Err(Error::Input(format!(
            "stack width {} does not split into {levels} sub-vectors",
            stack.cols()
        )));
    }
    let positions = stack.rows();
    if rate == 0.0 {
        return Ok((stack.clone(), DropoutMask::identity(positions, levels)));
    }
    let d = stack.cols() / levels;
    let scale = 1.0 / (1.0 - rate);
    let mut out = stack.clone();
    let mut keep = Vec::with_capacity(positions * levels);
    for t in 0..positions {
        for l in 0..levels {
            let kept = rng.gen::<f64>() >= rate;
            keep.push(kept);
            let seg = &mut out.row_mut(t)[l * d..(l + 1) * d];
            if kept {
                for v in seg {
                    *v *= scale;
                }
            } else {
                seg.fill(0.0);
            }
        }
    }
    Ok((
        out,
        DropoutMask {
            keep,
            levels,
            scale,
        },
    ))
}

/// Routes stack gradients through the dropout mask in place.
pub fn context_dropout_backward(d_stack: &mut Tensor2D, mask: &DropoutMask) {
    let levels = mask.levels;
    let d = d_stack.cols() / levels;
    for t in 0..d_stack.rows() {
        for l in 0..levels {
            let seg = &mut d_stack.row_mut(t)[l * d..(l + 1) * d];
            if mask.kept(t, l) {
                for v in seg {
                    *v *= mask.scale;
                }
            } else {
                seg.fill(0.0);
            }
        }
    }
}

/// Forward state of one training sample.
pub struct SampleForward {
    pub preds: Vec<f64>,
    pub report: LossReport,
    /// Per-item semantic vectors (m × D), display order.
    pub x_s: Tensor2D,
    encode_cache: irm::EncodeCache,
    stack_cache: tcem::ContextStackCache,
    mask: DropoutMask,
    heads: Vec<tcem::HeadCache>,
    perm: Vec<usize>,
}

/// Scores one list in its display order. `dropout_rng` engages context
/// dropout (training); `None` is inference.
pub fn forward_sample(
    sample: &ListSample,
    params: &ModelParams,
    config: &ModelConfig,
    layout: &TreeLayout,
    dropout_rng: Option<&mut ChaCha8Rng>,
    telemetry: &Telemetry,
) -> Result<SampleForward> {
    let m = sample.m();
    if m != config.list_size {
        return Err(Error::Input(format!(
            "sample {} has {} items, model expects {}",
            sample.request_id, m, config.list_size
        )));
    }
    let request = sample.exposed_request();
    let (x_s, encode_cache) = irm::encode(&request, params, config, telemetry)?;
    let perm: Vec<usize> = (0..m).collect();
    let (stack, stack_cache) = tcem::context_stack_for_list(&perm, &x_s, params, layout, telemetry)?;
    let levels = layout.level_count();
    let (stack, mask) = match dropout_rng {
        Some(rng) => context_dropout(&stack, levels, config.context_dropout, rng)?,
        None => (stack, DropoutMask::identity(m, levels)),
    };
    let mut preds = Vec::with_capacity(m);
    let mut heads = Vec::with_capacity(m);
    for t in 0..m {
        let (pred, cache) =
            tcem::predict_item_pctr(t, x_s.row(t), stack.row(t), params, telemetry)?;
        preds.push(pred);
        heads.push(cache);
    }
    let ce = ce_loss(&preds, &sample.labels)?;
    let (gbpr, pair_count) = gbpr_loss(&preds, &sample.labels);
    let report = LossReport::new(ce, gbpr, config.effective_alpha(), pair_count);
    Ok(SampleForward {
        preds,
        report,
        x_s,
        encode_cache,
        stack_cache,
        mask,
        heads,
        perm,
    })
}

/// d(total)/d(pred_t) for one sample at weight `scale` (1/batch size).
fn pred_gradients(preds: &[f64], labels: &[u8], alpha: f64, scale: f64) -> Vec<f64> {
    let m = preds.len();
    let mut d = vec![0.0; m];
    // Cross-entropy term; the clamp means saturated predictions stop
    // carrying gradient.
    for t in 0..m {
        let p = preds[t];
        if p > PRED_CLAMP && p < 1.0 - PRED_CLAMP {
            let y = f64::from(labels[t]);
            d[t] += scale * (p - y) / (m as f64 * p * (1.0 - p));
        }
    }
    // Pairwise term.
    if alpha != 0.0 {
        let pairs = preds
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 1)
            .count()
            * preds.iter().zip(labels).filter(|(_, &y)| y == 0).count();
        if pairs > 0 {
            let w = scale * alpha / pairs as f64;
            for i in 0..m {
                for j in 0..m {
                    if labels[i] == 1 && labels[j] == 0 {
                        // d/dx of −ln σ(x) at x = pred_i − pred_j.
                        let g = -sigmoid_neg(preds[i] - preds[j]);
                        d[i] += w * g;
                        d[j] -= w * g;
                    }
                }
            }
        }
    }
    d
}

fn sigmoid_neg(x: f64) -> f64 {
    // σ(−x), computed stably.
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Accumulates gradients of `scale · total_loss(sample)` into `params`.
pub fn backward_sample(
    sample: &ListSample,
    fwd: &SampleForward,
    params: &mut ModelParams,
    config: &ModelConfig,
    layout: &TreeLayout,
    scale: f64,
) -> Result<()> {
    let m = sample.m();
    let d_preds = pred_gradients(&fwd.preds, &sample.labels, config.effective_alpha(), scale);
    let mut d_x_s = Tensor2D::zeros(m, config.embed_dim);
    let mut d_stack = Tensor2D::zeros(m, layout.level_count() * config.embed_dim);
    for (t, &d_pred) in d_preds.iter().enumerate() {
        let (d_x_row, d_stack_row) = tcem::head_backward(t, &fwd.heads[t], d_pred, params);
        for (acc, &g) in d_x_s.row_mut(t).iter_mut().zip(&d_x_row) {
            *acc += g;
        }
        d_stack.row_mut(t).copy_from_slice(&d_stack_row);
    }
    context_dropout_backward(&mut d_stack, &fwd.mask);
    tcem::context_stack_backward(&fwd.perm, &fwd.stack_cache, &d_stack, params, layout, &mut d_x_s)?;
    let request = sample.exposed_request();
    irm::encode_backward(&request, &fwd.encode_cache, &d_x_s, params, config)?;
    Ok(())
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: LossReport,
    pub samples: u64,
}

/// Trained parameters plus the training trace.
pub struct TrainResult {
    pub params: ModelParams,
    pub epochs: Vec<EpochReport>,
    /// Samples dropped for not matching the configured list size.
    pub skipped_samples: u64,
}

/// Trains fresh parameters on `samples`. Fully deterministic given
/// `config.seed`: initialization, epoch shuffles, and dropout masks all
/// derive from it.
pub fn train(samples: &[ListSample], config: &ModelConfig) -> Result<TrainResult> {
    train_from(samples, ModelParams::init(config)?, config)
}

/// As [`train`], continuing from existing parameters.
pub fn train_from(
    samples: &[ListSample],
    mut params: ModelParams,
    config: &ModelConfig,
) -> Result<TrainResult> {
    config.validate()?;
    let layout = TreeLayout::for_config(config)?;
    let telemetry = Telemetry::default();
    let alpha = config.effective_alpha();

    let mut usable: Vec<&ListSample> = Vec::with_capacity(samples.len());
    let mut skipped_samples = 0u64;
    for s in samples {
        if s.m() == config.list_size {
            usable.push(s);
        } else {
            skipped_samples += 1;
            log::warn!(
                "skipping sample {}: {} items, model expects {}",
                s.request_id,
                s.m(),
                config.list_size
            );
        }
    }
    if usable.is_empty() {
        return Err(Error::Input("no usable training samples".into()));
    }

    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED_0001));
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut rng);
        let mut ce_sum = 0.0;
        let mut gbpr_sum = 0.0;
        let mut pair_count = 0u64;
        for batch in order.chunks(config.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            params.zero_grads();
            for &idx in batch {
                let sample = usable[idx];
                let fwd =
                    forward_sample(sample, &params, config, &layout, Some(&mut rng), &telemetry)?;
                backward_sample(sample, &fwd, &mut params, config, &layout, scale)?;
                ce_sum += fwd.report.ce;
                gbpr_sum += fwd.report.gbpr;
                pair_count += fwd.report.pair_count;
            }
            adam_step(&mut params, &adam);
        }
        let count = usable.len() as f64;
        let loss = LossReport::new(ce_sum / count, gbpr_sum / count, alpha, pair_count);
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "epoch {epoch} loss is not finite: {loss:?}"
            )));
        }
        log::info!(
            "epoch {epoch}: total {:.6} (ce {:.6}, pairwise {:.6})",
            loss.total,
            loss.ce,
            loss.gbpr
        );
        epochs.push(EpochReport {
            epoch,
            loss,
            samples: usable.len() as u64,
        });
    }

    Ok(TrainResult {
        params,
        epochs,
        skipped_samples,
    })
}

/// Fisher–Yates with our seeded generator (keeps the byte layout of the
/// random stream under our control).
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Inference-mode per-position click probabilities for one list.
pub fn predict_sample(
    sample: &ListSample,
    params: &ModelParams,
    config: &ModelConfig,
    telemetry: &Telemetry,
) -> Result<Vec<f64>> {
    let layout = TreeLayout::for_config(config)?;
    let fwd = forward_sample(sample, params, config, &layout, None, telemetry)?;
    Ok(fwd.preds)
}
