//! Dataset files, list filtering, and a synthetic click world with a
//! brute-force best-ordering oracle.
//!
//! Files are line-delimited JSON: a header object on the first line, then
//! one list record per line. Records carry the m exposed items in display
//! order with binary click labels, and optionally a wider candidate pool
//! for reranking experiments (n > m).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irm::RawRequest;
use crate::tensor::Tensor2D;

pub const SCHEMA_VERSION: u32 = 1;

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    /// Exposed-list length m shared by every record in the file.
    pub list_size: usize,
    /// Dense feature width per item (0 = none).
    pub dense_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ItemEntry {
    item_id: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dense: Vec<f64>,
    label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CandidateEntry {
    item_id: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dense: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    request_id: u64,
    user_ids: Vec<u64>,
    context_ids: Vec<u64>,
    behavior_ids: Vec<u64>,
    /// The m exposed items in display order.
    items: Vec<ItemEntry>,
    /// Full candidate pool (n ≥ m) when wider than the exposed list;
    /// omitted when the pool is exactly the exposed list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    candidates: Vec<CandidateEntry>,
    /// Conversion labels are carried through but unused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conversions: Option<Vec<u8>>,
}

/// One exposure list plus its (optional) wider candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ListSample {
    pub request_id: u64,
    pub user_ids: Vec<u64>,
    pub context_ids: Vec<u64>,
    pub behavior_ids: Vec<u64>,
    /// Exposed items, display order.
    pub item_ids: Vec<u64>,
    /// m × dense_dim when the file declares dense features.
    pub dense: Option<Tensor2D>,
    pub labels: Vec<u8>,
    /// Candidate pool ids (empty = pool is the exposed list).
    pub pool_ids: Vec<u64>,
    pub pool_dense: Option<Tensor2D>,
}

impl ListSample {
    pub fn m(&self) -> usize {
        self.item_ids.len()
    }

    /// Pool size available for reranking.
    pub fn n(&self) -> usize {
        if self.pool_ids.is_empty() {
            self.item_ids.len()
        } else {
            self.pool_ids.len()
        }
    }

    /// Request over the exposed items in display order (training/eval view).
    pub fn exposed_request(&self) -> RawRequest {
        RawRequest {
            request_id: self.request_id,
            user_ids: self.user_ids.clone(),
            context_ids: self.context_ids.clone(),
            behavior_ids: self.behavior_ids.clone(),
            candidate_item_ids: self.item_ids.clone(),
            candidate_dense: self.dense.clone(),
        }
    }

    /// Request over the full candidate pool (reranking view).
    pub fn pool_request(&self) -> RawRequest {
        if self.pool_ids.is_empty() {
            return self.exposed_request();
        }
        RawRequest {
            request_id: self.request_id,
            user_ids: self.user_ids.clone(),
            context_ids: self.context_ids.clone(),
            behavior_ids: self.behavior_ids.clone(),
            candidate_item_ids: self.pool_ids.clone(),
            candidate_dense: self.pool_dense.clone(),
        }
    }

    fn to_line(&self) -> LineRecord {
        let items = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, &item_id)| ItemEntry {
                item_id,
                dense: self.dense.as_ref().map(|d| d.row(i).to_vec()).unwrap_or_default(),
                label: self.labels[i],
            })
            .collect();
        let candidates = self
            .pool_ids
            .iter()
            .enumerate()
            .map(|(i, &item_id)| CandidateEntry {
                item_id,
                dense: self
                    .pool_dense
                    .as_ref()
                    .map(|d| d.row(i).to_vec())
                    .unwrap_or_default(),
            })
            .collect();
        LineRecord {
            request_id: self.request_id,
            user_ids: self.user_ids.clone(),
            context_ids: self.context_ids.clone(),
            behavior_ids: self.behavior_ids.clone(),
            items,
            candidates,
            conversions: None,
        }
    }
}

fn dense_block(entries: &[Vec<f64>], dense_dim: usize, what: &str) -> Result<Option<Tensor2D>> {
    if dense_dim == 0 {
        if entries.iter().any(|d| !d.is_empty()) {
            return Err(Error::Format(format!(
                "{what}: dense features present but header declares dense_dim 0"
            )));
        }
        return Ok(None);
    }
    let mut out = Tensor2D::zeros(entries.len(), dense_dim);
    for (i, d) in entries.iter().enumerate() {
        if d.len() != dense_dim {
            return Err(Error::Format(format!(
                "{what}: item {i} has {} dense values, header declares {dense_dim}",
                d.len()
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("{what}: non-finite dense value")));
        }
        out.row_mut(i).copy_from_slice(d);
    }
    Ok(Some(out))
}

fn sample_from_line(record: LineRecord, header: &DatasetHeader) -> Result<ListSample> {
    let m = header.list_size;
    if record.items.len() != m {
        return Err(Error::Format(format!(
            "record {} has {} items, header declares {m}",
            record.request_id,
            record.items.len()
        )));
    }
    let labels: Vec<u8> = record.items.iter().map(|e| e.label).collect();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Format(format!(
            "record {} has a non-binary label",
            record.request_id
        )));
    }
    let item_ids: Vec<u64> = record.items.iter().map(|e| e.item_id).collect();
    let item_dense: Vec<Vec<f64>> = record.items.into_iter().map(|e| e.dense).collect();
    let dense = dense_block(&item_dense, header.dense_dim, "exposed items")?;

    let pool_ids: Vec<u64> = record.candidates.iter().map(|e| e.item_id).collect();
    let pool_dense = if pool_ids.is_empty() {
        None
    } else {
        if pool_ids.len() < m {
            return Err(Error::Format(format!(
                "record {} pool has {} candidates for list size {m}",
                record.request_id,
                pool_ids.len()
            )));
        }
        for id in &item_ids {
            if !pool_ids.contains(id) {
                return Err(Error::Format(format!(
                    "record {}: exposed item {id} missing from candidate pool",
                    record.request_id
                )));
            }
        }
        let cand_dense: Vec<Vec<f64>> = record.candidates.into_iter().map(|e| e.dense).collect();
        dense_block(&cand_dense, header.dense_dim, "candidate pool")?
    };

    Ok(ListSample {
        request_id: record.request_id,
        user_ids: record.user_ids,
        context_ids: record.context_ids,
        behavior_ids: record.behavior_ids,
        item_ids,
        dense,
        labels,
        pool_ids,
        pool_dense,
    })
}

/// Streaming reader over a dataset file. Malformed lines are skipped and
/// counted; exceeding `error_budget` aborts the stream with a format error.
pub struct DatasetReader<R: BufRead> {
    lines: std::io::Lines<R>,
    header: DatasetHeader,
    error_budget: u64,
    skipped: u64,
    line_no: u64,
    failed: bool,
}

impl DatasetReader<BufReader<std::fs::File>> {
    pub fn open(path: &Path, error_budget: u64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(BufReader::new(file), error_budget)
    }
}

impl<R: BufRead> DatasetReader<R> {
    pub fn from_reader(reader: R, error_budget: u64) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("dataset file is empty (no header line)".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Format(format!("bad dataset header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "dataset schema version {} unsupported (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        if header.list_size == 0 {
            return Err(Error::Format("dataset header declares list_size 0".into()));
        }
        Ok(Self {
            lines,
            header,
            error_budget,
            skipped: 0,
            line_no: 1,
            failed: false,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    /// Malformed lines skipped so far.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<ListSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<LineRecord>(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", self.line_no)))
                .and_then(|r| sample_from_line(r, &self.header));
            match parsed {
                Ok(sample) => return Some(Ok(sample)),
                Err(err) => {
                    self.skipped += 1;
                    log::warn!("skipping malformed dataset line {}: {err}", self.line_no);
                    if self.skipped > self.error_budget {
                        self.failed = true;
                        return Some(Err(Error::Format(format!(
                            "malformed-line budget exceeded: {} bad lines (budget {})",
                            self.skipped, self.error_budget
                        ))));
                    }
                }
            }
        }
    }
}

/// Reads a whole file; returns (header, samples, skipped-line count).
pub fn read_dataset(path: &Path, error_budget: u64) -> Result<(DatasetHeader, Vec<ListSample>, u64)> {
    let mut reader = DatasetReader::open(path, error_budget)?;
    let mut samples = Vec::new();
    for sample in &mut reader {
        samples.push(sample?);
    }
    let skipped = reader.skipped();
    Ok((reader.header, samples, skipped))
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, samples: &[ListSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, header).map_err(|e| Error::Format(e.to_string()))?;
    f.write_all(b"\n")?;
    for sample in samples {
        serde_json::to_writer(&mut f, &sample.to_line())
            .map_err(|e| Error::Format(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Lists dropped by the degenerate-label filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub dropped_all_zero: u64,
    pub dropped_all_one: u64,
}

impl FilterStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_all_zero + self.dropped_all_one
    }
}

/// Drops lists whose labels are all 0 or all 1; such lists carry no
/// intra-list ranking signal.
pub fn filter_lists(samples: Vec<ListSample>) -> (Vec<ListSample>, FilterStats) {
    let mut stats = FilterStats::default();
    let kept = samples
        .into_iter()
        .filter(|s| {
            if s.labels.iter().all(|&l| l == 0) {
                stats.dropped_all_zero += 1;
                false
            } else if s.labels.iter().all(|&l| l == 1) {
                stats.dropped_all_one += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, stats)
}

/// Synthetic click model with block-local item interactions.
///
/// Each item i has a latent appeal `quality[i]` and a neighborhood boost
/// `boost[i]` it contributes to items sharing a block with it. The click
/// probability of the item at position t is
/// `sigmoid(quality + Σ pair_effect over its size-2 and size-4 blockmates)`,
/// so the best ordering genuinely depends on which items end up in a block
/// together — signal a per-item scorer cannot express. Specific item pairs
/// can override the boost (planted affinities).
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub item_count: usize,
    pub quality: Vec<f64>,
    pub boost: Vec<f64>,
    /// (i, j) → effect of j on i, replacing the default `boost[j]`.
    pub overrides: HashMap<(u32, u32), f64>,
    pub dense_dim: usize,
    dense: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticWorld {
    /// Draws item latents from seeded normals: quality ~ N(0, sigma_quality),
    /// boost ~ N(0, sigma_boost). Dense features expose [quality, boost,
    /// noise...] per item, so a feature-aware encoder can read the latents
    /// directly while an id-only encoder has to infer them.
    pub fn new(
        item_count: usize,
        dense_dim: usize,
        sigma_quality: f64,
        sigma_boost: f64,
        seed: u64,
    ) -> Result<Self> {
        if item_count == 0 {
            return Err(Error::Config("synthetic world needs at least one item".into()));
        }
        if dense_dim < 2 {
            return Err(Error::Config(
                "synthetic world needs dense_dim >= 2 to expose its latents".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q_dist = Normal::new(0.0, sigma_quality)
            .map_err(|e| Error::Config(format!("sigma_quality: {e}")))?;
        let b_dist = Normal::new(0.0, sigma_boost)
            .map_err(|e| Error::Config(format!("sigma_boost: {e}")))?;
        let noise = Normal::new(0.0, 1.0).unwrap();
        let quality: Vec<f64> = (0..item_count).map(|_| q_dist.sample(&mut rng)).collect();
        let boost: Vec<f64> = (0..item_count).map(|_| b_dist.sample(&mut rng)).collect();
        let dense = (0..item_count)
            .map(|i| {
                let mut d = vec![quality[i], boost[i]];
                d.extend((2..dense_dim).map(|_| noise.sample(&mut rng)));
                d
            })
            .collect();
        Ok(Self {
            item_count,
            quality,
            boost,
            overrides: HashMap::new(),
            dense_dim,
            dense,
            seed,
        })
    }

    /// Plants a symmetric affinity: each of a, b contributes `effect` to the
    /// other when they share a block.
    pub fn plant_pair(&mut self, a: usize, b: usize, effect: f64) {
        self.overrides.insert((a as u32, b as u32), effect);
        self.overrides.insert((b as u32, a as u32), effect);
    }

    /// Effect of item `j` on item `i` when they share a block.
    pub fn pair_effect(&self, i: usize, j: usize) -> f64 {
        self.overrides
            .get(&(i as u32, j as u32))
            .copied()
            .unwrap_or(self.boost[j])
    }

    pub fn dense_features(&self, item: usize) -> &[f64] {
        &self.dense[item]
    }

    /// True click probability of position `t` in an ordered slate of world
    /// item indices: blockmate effects from the size-2 block and, when
    /// distinct, the size-4 block (its pair partner therefore counts at
    /// both scales).
    pub fn true_click_prob(&self, slate: &[usize], t: usize) -> f64 {
        let m = slate.len();
        let me = slate[t];
        let mut logit = self.quality[me];
        let pair = (t / 2 * 2, (t / 2 * 2 + 2).min(m));
        let quad = (t / 4 * 4, (t / 4 * 4 + 4).min(m));
        for (lo, hi) in dedup_blocks(pair, quad) {
            for (u, &other) in slate.iter().enumerate().take(hi).skip(lo) {
                if u != t {
                    logit += self.pair_effect(me, other);
                }
            }
        }
        sigmoid(logit)
    }

    /// Sum of true click probabilities over the slate (unit weights).
    pub fn true_list_score(&self, slate: &[usize]) -> f64 {
        (0..slate.len()).map(|t| self.true_click_prob(slate, t)).sum()
    }

    /// Brute-force best ordering of `m` items from `pool` by true list
    /// score, via depth-first enumeration (lexicographic in pool positions;
    /// the earliest maximum wins ties).
    pub fn best_permutation(&self, pool: &[usize], m: usize) -> Result<(Vec<usize>, f64)> {
        if m == 0 || m > pool.len() {
            return Err(Error::Input(format!(
                "cannot pick {m} of {} pool items",
                pool.len()
            )));
        }
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut cur: Vec<usize> = Vec::with_capacity(m);
        let mut used = vec![false; pool.len()];
        self.search(pool, m, &mut cur, &mut used, &mut best);
        Ok(best.expect("at least one ordering exists"))
    }

    fn search(
        &self,
        pool: &[usize],
        m: usize,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if cur.len() == m {
            let score = self.true_list_score(cur);
            let better = match best {
                None => true,
                Some((_, s)) => score > *s,
            };
            if better {
                *best = Some((cur.clone(), score));
            }
            return;
        }
        for p in 0..pool.len() {
            if !used[p] {
                used[p] = true;
                cur.push(pool[p]);
                self.search(pool, m, cur, used, best);
                cur.pop();
                used[p] = false;
            }
        }
    }
}

fn dedup_blocks(a: (usize, usize), b: (usize, usize)) -> Vec<(usize, usize)> {
    if a == b {
        vec![a]
    } else {
        vec![a, b]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generation settings for one dataset file.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub num_lists: usize,
    /// Candidate pool size per request.
    pub n: usize,
    /// Exposed-list length.
    pub m: usize,
    pub seed: u64,
    pub user_vocab: u64,
    pub context_vocab: u64,
    pub behaviors_per_request: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_lists: 1000,
            n: 8,
            m: 8,
            seed: 42,
            user_vocab: 100,
            context_vocab: 16,
            behaviors_per_request: 3,
        }
    }
}

/// Samples `num_lists` exposure lists from the world. Each request draws a
/// pool of n distinct items, exposes a uniformly random ordered pick of m
/// of them, and samples Bernoulli clicks from the true probabilities.
/// Request seeds derive from (seed, request index) alone, so output is
/// identical regardless of chunking.
pub fn generate(world: &SyntheticWorld, gen: &GenConfig) -> Result<Vec<ListSample>> {
    if gen.m == 0 || gen.n < gen.m {
        return Err(Error::Config(format!(
            "pool size {} must cover list size {}",
            gen.n, gen.m
        )));
    }
    if gen.n > world.item_count {
        return Err(Error::Config(format!(
            "pool size {} exceeds world item count {}",
            gen.n, world.item_count
        )));
    }
    (0..gen.num_lists)
        .map(|r| generate_one(world, gen, r as u64))
        .collect()
}

fn generate_one(world: &SyntheticWorld, gen: &GenConfig, request_id: u64) -> Result<ListSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        gen.seed ^ request_id.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let pool: Vec<usize> =
        rand::seq::index::sample(&mut rng, world.item_count, gen.n).into_vec();
    let mut exposed_pos: Vec<usize> =
        rand::seq::index::sample(&mut rng, gen.n, gen.m).into_vec();
    exposed_pos.shuffle(&mut rng);
    let slate: Vec<usize> = exposed_pos.iter().map(|&p| pool[p]).collect();

    let labels: Vec<u8> = (0..gen.m)
        .map(|t| u8::from(rng.gen::<f64>() < world.true_click_prob(&slate, t)))
        .collect();

    let user = rng.gen_range(0..gen.user_vocab);
    let context = rng.gen_range(0..gen.context_vocab);
    let behaviors: Vec<u64> = (0..gen.behaviors_per_request)
        .map(|_| rng.gen_range(0..world.item_count as u64))
        .collect();

    let dense_rows = |items: &[usize]| {
        let mut d = Tensor2D::zeros(items.len(), world.dense_dim);
        for (i, &item) in items.iter().enumerate() {
            d.row_mut(i).copy_from_slice(world.dense_features(item));
        }
        d
    };

    let (pool_ids, pool_dense) = if gen.n > gen.m {
        (
            pool.iter().map(|&i| i as u64).collect(),
            Some(dense_rows(&pool)),
        )
    } else {
        (Vec::new(), None)
    };

    Ok(ListSample {
        request_id,
        user_ids: vec![user],
        context_ids: vec![context],
        behavior_ids: behaviors,
        item_ids: slate.iter().map(|&i| i as u64).collect(),
        dense: Some(dense_rows(&slate)),
        labels,
        pool_ids,
        pool_dense,
    })
}

/// Ground-truth sidecar entry: the true-probability-optimal ordering of one
/// request's pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub request_id: u64,
    pub best_item_ids: Vec<u64>,
    pub best_score: f64,
}

/// Exhaustive-search oracle for one sample's candidate pool.
pub fn oracle_for(world: &SyntheticWorld, sample: &ListSample, m: usize) -> Result<OracleEntry> {
    let pool: Vec<usize> = if sample.pool_ids.is_empty() {
        sample.item_ids.iter().map(|&i| i as usize).collect()
    } else {
        sample.pool_ids.iter().map(|&i| i as usize).collect()
    };
    let (best, score) = world.best_permutation(&pool, m)?;
    Ok(OracleEntry {
        request_id: sample.request_id,
        best_item_ids: best.iter().map(|&i| i as u64).collect(),
        best_score: score,
    })
}

pub fn write_oracle(path: &Path, entries: &[OracleEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e).map_err(|err| Error::Format(err.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_oracle(path: &Path) -> Result<Vec<OracleEntry>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("oracle line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
