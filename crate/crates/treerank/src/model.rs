//! Model configuration and the learnable parameter set.
//!
//! A single config drives dataset generation shape, training, and inference
//! so that every stage agrees on dimensions. Configs serialize as TOML; every
//! field has a default so a partial file works.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamCollection, ParamTensor, Tensor2D};

/// Which part of the model to disable for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full model.
    #[default]
    None,
    /// Replace the item representation module with raw id embeddings
    /// (no behavior attention, no feature crossing, dense features unused).
    NoIrm,
    /// Replace the tree of sub-slate summaries with one flat summary of the
    /// whole slate (single level, permutation-invariant over all items).
    NoTcem,
    /// Train with the pointwise loss only (pairwise weight forced to zero).
    NoGbpr,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoIrm => "no_irm",
            Ablation::NoTcem => "no_tcem",
            Ablation::NoGbpr => "no_gbpr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "irm" | "no_irm" => Ok(Ablation::NoIrm),
            "tcem" | "no_tcem" => Ok(Ablation::NoTcem),
            "gbpr" | "no_gbpr" => Ok(Ablation::NoGbpr),
            other => Err(Error::Config(format!(
                "unknown ablation '{other}' (expected irm, tcem, or gbpr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of every embedding and attention space.
    pub embed_dim: usize,
    /// Slate length m. Must be a power of two so the slate splits evenly
    /// into halves down to pairs.
    pub list_size: usize,
    /// Candidate pool size n fed to the reranker; n >= list_size.
    pub candidates: usize,
    /// Hidden widths of the feature-crossing MLP.
    pub hidden: Vec<usize>,
    /// Id spaces. Ids must be < vocab unless `allow_oov` maps them to a
    /// shared out-of-vocabulary row.
    pub user_vocab: usize,
    pub context_vocab: usize,
    pub item_vocab: usize,
    /// Per-item dense feature width (0 disables dense features).
    pub dense_dim: usize,
    /// Behavior sequences longer than this are truncated (most recent kept).
    pub max_behaviors: usize,
    pub learning_rate: f64,
    /// Weight of the pairwise ranking term in the training loss.
    pub alpha: f64,
    /// Probability of dropping each summary vector during training.
    pub context_dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Std-dev of the zero-mean normal used for parameter init.
    pub init_std: f64,
    pub ablation: Ablation,
    pub allow_oov: bool,
    /// Give each summary level its own attention projections instead of one
    /// shared set (shared is the default and what the cache paths assume
    /// costs nothing extra; per-level stays cacheable because a block's size
    /// determines its level).
    pub per_level_set_attention: bool,
    /// Per-position business weights for the list score; empty means all
    /// ones. Length must equal list_size when set.
    pub position_weights: Vec<f64>,
    /// Hard cap on orderings scored per request; exceeding it is an error
    /// rather than a silent partial answer.
    pub max_permutations: u64,
    /// Orderings scored per work unit when scoring in parallel.
    pub chunk_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            list_size: 8,
            candidates: 8,
            hidden: vec![1024, 256, 128],
            user_vocab: 1000,
            context_vocab: 64,
            item_vocab: 10_000,
            dense_dim: 4,
            max_behaviors: 16,
            learning_rate: 0.001,
            alpha: 0.05,
            context_dropout: 0.1,
            batch_size: 1024,
            epochs: 1,
            seed: 42,
            init_std: 0.01,
            ablation: Ablation::None,
            allow_oov: false,
            per_level_set_attention: false,
            position_weights: Vec::new(),
            max_permutations: 1_000_000,
            chunk_size: 4096,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.list_size < 2 || !self.list_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "list_size must be a power of two >= 2, got {}",
                self.list_size
            )));
        }
        if self.candidates < self.list_size {
            return Err(Error::Config(format!(
                "candidates ({}) must be >= list_size ({})",
                self.candidates, self.list_size
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be non-empty and positive".into()));
        }
        if self.user_vocab == 0 || self.context_vocab == 0 || self.item_vocab == 0 {
            return Err(Error::Config("vocab sizes must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.context_dropout) {
            return Err(Error::Config("context_dropout must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        if self.max_permutations == 0 || self.chunk_size == 0 {
            return Err(Error::Config("max_permutations and chunk_size must be positive".into()));
        }
        if !self.position_weights.is_empty() {
            if self.position_weights.len() != self.list_size {
                return Err(Error::Config(format!(
                    "position_weights has {} entries, list_size is {}",
                    self.position_weights.len(),
                    self.list_size
                )));
            }
            if self.position_weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Config("position_weights must be finite".into()));
            }
        }
        Ok(())
    }

    /// Position weights resolved to length list_size (all ones by default).
    pub fn resolved_weights(&self) -> Vec<f64> {
        if self.position_weights.is_empty() {
            vec![1.0; self.list_size]
        } else {
            self.position_weights.clone()
        }
    }

    /// Number of summary levels feeding each position's context stack:
    /// block sizes m, m/2, ..., 2 give log2(m) levels; the flat-summary
    /// ablation collapses this to one.
    pub fn levels(&self) -> usize {
        match self.ablation {
            Ablation::NoTcem => 1,
            _ => self.list_size.trailing_zeros() as usize,
        }
    }

    /// Input width of the feature-crossing MLP: behavior-attended item
    /// vector, user vector, and context vector plus dense features.
    pub fn cross_input_dim(&self) -> usize {
        3 * self.embed_dim + self.dense_dim
    }

    /// Input width of the scoring head: position embedding, item semantic
    /// vector, and one summary vector per level.
    pub fn head_input_dim(&self) -> usize {
        (2 + self.levels()) * self.embed_dim
    }

    pub fn effective_alpha(&self) -> f64 {
        match self.ablation {
            Ablation::NoGbpr => 0.0,
            _ => self.alpha,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Stable fingerprint of the fully-resolved config, for run manifests.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.to_toml_string().hash(&mut h);
        h.finish()
    }
}

/// One affine layer of the feature-crossing MLP.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: ParamTensor,
    pub b: ParamTensor,
}

/// Projections for one level of permutation-invariant set attention.
#[derive(Debug, Clone)]
pub struct SetAttnParams {
    pub w_query: ParamTensor,
    pub w_key: ParamTensor,
    pub w_value: ParamTensor,
}

/// Every learnable tensor in the model. Embedding tables reserve one extra
/// row at index `vocab` for out-of-vocabulary ids.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub user_table: ParamTensor,
    pub context_table: ParamTensor,
    pub item_table: ParamTensor,
    pub attn_query: ParamTensor,
    pub attn_key: ParamTensor,
    pub attn_value: ParamTensor,
    pub cross_layers: Vec<Layer>,
    pub set_attn: Vec<SetAttnParams>,
    pub position_embed: ParamTensor,
    pub head_w: ParamTensor,
    pub head_b: ParamTensor,
}

impl ModelParams {
    /// Initialize all tensors from a zero-mean normal with the configured
    /// std-dev, in a fixed order so a seed fully determines every value.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::Config(format!("bad init_std: {e}")))?;
        let mut draw = |rows: usize, cols: usize| -> ParamTensor {
            let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            ParamTensor::new(Tensor2D::from_flat(rows, cols, data).expect("sized draw"))
        };

        let user_table = draw(config.user_vocab + 1, d);
        let context_table = draw(config.context_vocab + 1, d);
        let item_table = draw(config.item_vocab + 1, d);
        let attn_query = draw(d, d);
        let attn_key = draw(d, d);
        let attn_value = draw(d, d);

        let mut cross_layers = Vec::new();
        let mut in_dim = config.cross_input_dim();
        for &h in &config.hidden {
            cross_layers.push(Layer {
                w: draw(in_dim, h),
                b: draw(1, h),
            });
            in_dim = h;
        }
        cross_layers.push(Layer {
            w: draw(in_dim, d),
            b: draw(1, d),
        });

        let attn_sets = if config.per_level_set_attention {
            config.levels()
        } else {
            1
        };
        let set_attn = (0..attn_sets)
            .map(|_| SetAttnParams {
                w_query: draw(d, d),
                w_key: draw(d, d),
                w_value: draw(d, d),
            })
            .collect();

        let position_embed = draw(config.list_size, d);
        let head_w = draw(config.head_input_dim(), 1);
        let head_b = draw(1, 1);

        Ok(Self {
            user_table,
            context_table,
            item_table,
            attn_query,
            attn_key,
            attn_value,
            cross_layers,
            set_attn,
            position_embed,
            head_w,
            head_b,
        })
    }

    pub fn total_values(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, p| n += p.value.numel());
        n
    }

    /// Attention projections for a given summary level; collapses to the
    /// single shared set unless per-level parameters were configured.
    pub fn set_attn_at(&self, level: usize) -> &SetAttnParams {
        let idx = level.min(self.set_attn.len() - 1);
        &self.set_attn[idx]
    }

    /// Index into `set_attn` used by `set_attn_at`, for gradient routing.
    pub fn set_attn_index(&self, level: usize) -> usize {
        level.min(self.set_attn.len() - 1)
    }

    /// Visit parameters in the fixed canonical order used by init, Adam,
    /// checkpoints, and the gradient checker.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a ParamTensor)) {
        f("user_table", &self.user_table);
        f("context_table", &self.context_table);
        f("item_table", &self.item_table);
        f("attn_query", &self.attn_query);
        f("attn_key", &self.attn_key);
        f("attn_value", &self.attn_value);
        for (i, layer) in self.cross_layers.iter().enumerate() {
            f(&format!("cross.{i}.w"), &layer.w);
            f(&format!("cross.{i}.b"), &layer.b);
        }
        for (i, sa) in self.set_attn.iter().enumerate() {
            f(&format!("set_attn.{i}.w_query"), &sa.w_query);
            f(&format!("set_attn.{i}.w_key"), &sa.w_key);
            f(&format!("set_attn.{i}.w_value"), &sa.w_value);
        }
        f("position_embed", &self.position_embed);
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut ParamTensor)) {
        f("user_table", &mut self.user_table);
        f("context_table", &mut self.context_table);
        f("item_table", &mut self.item_table);
        f("attn_query", &mut self.attn_query);
        f("attn_key", &mut self.attn_key);
        f("attn_value", &mut self.attn_value);
        for (i, layer) in self.cross_layers.iter_mut().enumerate() {
            f(&format!("cross.{i}.w"), &mut layer.w);
            f(&format!("cross.{i}.b"), &mut layer.b);
        }
        for (i, sa) in self.set_attn.iter_mut().enumerate() {
            f(&format!("set_attn.{i}.w_query"), &mut sa.w_query);
            f(&format!("set_attn.{i}.w_key"), &mut sa.w_key);
            f(&format!("set_attn.{i}.w_value"), &mut sa.w_value);
        }
        f("position_embed", &mut self.position_embed);
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }
}

impl ParamCollection for ModelParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &ParamTensor)) {
        self.visit(&mut |name, p| f(name, p));
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        self.visit_mut(&mut |name, p| f(name, p));
    }
}

/// Resolve an id to an embedding-table row, honoring the OOV policy.
pub fn resolve_id(id: u64, vocab: usize, allow_oov: bool, what: &str) -> Result<usize> {
    let id = id as usize;
    if id < vocab {
        Ok(id)
    } else if allow_oov {
        Ok(vocab)
    } else {
        Err(Error::Input(format!(
            "{what} id {id} out of range (vocab {vocab}); enable allow_oov to map it"
        )))
    }
}
