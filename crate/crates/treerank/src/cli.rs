//! Command-line front end: dataset generation, training, evaluation,
//! reranking, benchmarking, ablation comparison, and the pairwise-weight
//! sweep.
//!
//! Every run writes into one directory (`--out`, or
//! `$TREERANK_OUT/<command>-seed<seed>` with `runs/` as the fallback root)
//! containing the fully resolved config, so any run can be repeated
//! bit-identically. Wall-clock measurements go to files with a `timings`
//! suffix; everything else a run writes is a pure function of its inputs
//! and seed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccm::{self, Precomputed};
use crate::data::{
    self, generate, oracle_for, read_dataset, write_dataset, write_oracle, DatasetHeader,
    GenConfig, ListSample, SyntheticWorld,
};
use crate::error::{Error, Result};
use crate::irm::{self, RawRequest};
use crate::metrics::{self, BenchConfig, BenchMode, HRTrial, RunMeta};
use crate::model::{Ablation, ModelConfig, ModelParams};
use crate::tcem::TreeLayout;
use crate::telemetry::Telemetry;
use crate::tensor::{apply_checkpoint, load_checkpoint, save_checkpoint};
use crate::training;

/// Scores orderings of recommendation slates with a subset-level context
/// cache instead of per-ordering recomputation.
#[derive(Debug, Parser)]
#[command(name = "treerank", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/test datasets (and optionally the
    /// exhaustive ground-truth sidecar).
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a per-epoch loss CSV.
    Train(TrainArgs),
    /// Score a held-out dataset and report AUC / GAUC.
    Evaluate(EvaluateArgs),
    /// Emit the best ordering per request as JSON lines.
    Rerank(RerankArgs),
    /// Measure latency and instrumentation counts; report hit ratios for
    /// candidate-selector baselines.
    Bench(BenchArgs),
    /// Train and evaluate the full model against its ablations.
    Ablate(AblateArgs),
    /// Train and evaluate across the pairwise-weight grid.
    SweepAlpha(SweepAlphaArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to $TREERANK_OUT/<command>-seed<seed>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override as key=value (TOML syntax on the right-hand side);
    /// repeatable, wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training lists to generate.
    #[arg(long, default_value_t = 1000)]
    pub lists: usize,
    /// Held-out lists to generate (same world, shifted seed).
    #[arg(long, default_value_t = 100)]
    pub test_lists: usize,
    /// Candidate pool size per request (defaults to the config's).
    #[arg(long)]
    pub n: Option<usize>,
    /// Exposed list length (defaults to the config's).
    #[arg(long)]
    pub m: Option<usize>,
    /// Item universe size.
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
    /// Std-dev of per-item quality logits.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_quality: f64,
    /// Std-dev of per-item context boosts.
    #[arg(long, default_value_t = 0.5)]
    pub sigma_boost: f64,
    /// Behavior-history length per request.
    #[arg(long, default_value_t = 8)]
    pub behaviors: usize,
    /// Also write the exhaustive best-ordering sidecar (costly for large
    /// pools: it scores every ordering of every request).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training dataset (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Pairwise-loss weight (overrides the config).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Train an ablated variant: irm, tcem, or gbpr.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Epoch count (overrides the config).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from an existing checkpoint instead of fresh parameters.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Held-out dataset (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Trained parameters.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Requests to rerank (JSON lines; the candidate pool is used when
    /// present, else the exposed list).
    #[arg(long)]
    pub data: PathBuf,
    /// Trained parameters.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// cached: score all orderings from the subset cache. naive: recompute
    /// every block per ordering (slow; for cross-checking).
    #[arg(long, default_value = "cached")]
    pub mode: String,
    /// Stop after this many requests.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Requests to draw timed passes from (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Trained parameters (fresh seeded parameters when omitted).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// cached or naive.
    #[arg(long, default_value = "cached")]
    pub mode: String,
    /// Orderings sampled per request in naive mode (0 = all of them).
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Timed repetitions after warmup.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Untimed warmup passes.
    #[arg(long, default_value_t = 10)]
    pub warmups: usize,
    /// Requests used for the hit-ratio section (0 skips it).
    #[arg(long, default_value_t = 50)]
    pub hr_requests: usize,
    /// Random-candidate draws per request and K value.
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    /// Beam width for the beam-search selector baseline.
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset.
    #[arg(long)]
    pub test: PathBuf,
    /// Single variant to compare against the full model: irm, tcem, or
    /// gbpr. All three when omitted.
    #[arg(long)]
    pub ablate: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset.
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated pairwise-loss weights to sweep.
    #[arg(long, default_value = "0,0.01,0.05,0.1,0.5", value_delimiter = ',')]
    pub alphas: Vec<f64>,
}

/// Parses argv, runs the chosen command, and maps errors to exit codes:
/// 0 success, 2 usage/config, 1 any runtime failure. Failures print one
/// line to stderr: `error[<class>]: <message>`.
pub fn main_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles help/version (exit 0) and usage errors (exit 2).
            e.exit();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Rerank(args) => cmd_rerank(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::SweepAlpha(args) => cmd_sweep_alpha(args),
    }
}

/// defaults → config file → --set overrides → --seed; validated at the end.
fn resolve_config(common: &CommonArgs) -> Result<ModelConfig> {
    let mut cfg = match &common.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::default(),
    };
    if !common.set.is_empty() {
        cfg = apply_overrides(&cfg, &common.set)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Round-trips the config through a TOML table so overrides use the same
/// names and syntax as the config file.
fn apply_overrides(cfg: &ModelConfig, sets: &[String]) -> Result<ModelConfig> {
    let mut table: toml::Table = toml::from_str(&cfg.to_toml_string())
        .map_err(|e| Error::Internal(format!("config did not round-trip: {e}")))?;
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{set}' is not KEY=VALUE")))?;
        let parsed: toml::Table = toml::from_str(&format!("{key} = {value}"))
            .or_else(|_| toml::from_str(&format!("{key} = \"{value}\"")))
            .map_err(|e| Error::Config(format!("override '{set}' is not valid: {e}")))?;
        for (k, v) in parsed {
            table.insert(k, v);
        }
    }
    table
        .try_into()
        .map_err(|e| Error::Config(format!("bad config after overrides: {e}")))
}

/// --out, or $TREERANK_OUT/<command>-seed<seed>, or runs/<command>-seed<seed>.
fn resolve_run_dir(common: &CommonArgs, command: &str, seed: u64) -> Result<PathBuf> {
    let dir = match &common.out {
        Some(out) => out.clone(),
        None => {
            let root = std::env::var_os("TREERANK_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("{command}-seed{seed}"))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Generation settings materialized alongside the data they produced.
#[derive(Debug, Serialize, Deserialize)]
struct GenManifest {
    lists: usize,
    test_lists: usize,
    n: usize,
    m: usize,
    seed: u64,
    items: usize,
    dense_dim: usize,
    sigma_quality: f64,
    sigma_boost: f64,
    user_vocab: u64,
    context_vocab: u64,
    behaviors: usize,
    oracle: bool,
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let n = args.n.unwrap_or(cfg.candidates);
    let m = args.m.unwrap_or(cfg.list_size);
    if args.items > cfg.item_vocab {
        return Err(Error::Config(format!(
            "--items {} exceeds the config's item_vocab {}",
            args.items, cfg.item_vocab
        )));
    }
    let dir = resolve_run_dir(&args.common, "gen-data", cfg.seed)?;
    let manifest = GenManifest {
        lists: args.lists,
        test_lists: args.test_lists,
        n,
        m,
        seed: cfg.seed,
        items: args.items,
        dense_dim: cfg.dense_dim,
        sigma_quality: args.sigma_quality,
        sigma_boost: args.sigma_boost,
        user_vocab: cfg.user_vocab as u64,
        context_vocab: cfg.context_vocab as u64,
        behaviors: args.behaviors,
        oracle: args.oracle,
    };

    let world = SyntheticWorld::new(
        manifest.items,
        manifest.dense_dim,
        manifest.sigma_quality,
        manifest.sigma_boost,
        cfg.seed ^ 0x5751_D00D,
    )?;
    let header = DatasetHeader {
        schema_version: data::SCHEMA_VERSION,
        list_size: m,
        dense_dim: cfg.dense_dim,
    };
    let gen = |num_lists: usize, seed: u64| -> Result<Vec<ListSample>> {
        generate(
            &world,
            &GenConfig {
                num_lists,
                n,
                m,
                seed,
                user_vocab: manifest.user_vocab,
                context_vocab: manifest.context_vocab,
                behaviors_per_request: manifest.behaviors,
            },
        )
    };

    let train = gen(args.lists, cfg.seed)?;
    let test = gen(args.test_lists, cfg.seed.wrapping_add(1))?;
    write_dataset(&dir.join("train.jsonl"), &header, &train)?;
    write_dataset(&dir.join("test.jsonl"), &header, &test)?;
    if args.oracle {
        let entries: Vec<_> = test
            .iter()
            .map(|s| oracle_for(&world, s, m))
            .collect::<Result<_>>()?;
        write_oracle(&dir.join("oracle.jsonl"), &entries)?;
    }
    write_text(
        &dir.join("gen_config.toml"),
        &toml::to_string_pretty(&manifest)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?,
    )?;
    cfg.save(&dir.join("resolved_config.toml"))?;
    println!(
        "wrote {} train and {} test lists (n={n}, m={m}) to {}",
        train.len(),
        test.len(),
        dir.display()
    );
    Ok(())
}

/// Applies per-command training overrides on top of the resolved config.
fn training_config(
    common: &CommonArgs,
    alpha: Option<f64>,
    ablate: Option<&str>,
    epochs: Option<usize>,
) -> Result<ModelConfig> {
    let mut cfg = resolve_config(common)?;
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    if let Some(name) = ablate {
        cfg.ablation = Ablation::parse(name)?;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_samples(path: &Path, expect_m: usize) -> Result<Vec<ListSample>> {
    let (header, samples, skipped) = read_dataset(path, 0)?;
    if header.list_size != expect_m {
        return Err(Error::Config(format!(
            "{} holds lists of {} items, config expects {}",
            path.display(),
            header.list_size,
            expect_m
        )));
    }
    if skipped > 0 {
        log::warn!("{} records skipped while reading {}", skipped, path.display());
    }
    Ok(samples)
}

fn loss_csv(result: &training::TrainResult) -> String {
    let mut out = String::from("epoch,ce,gbpr,total,pairs,samples\n");
    for e in &result.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch, e.loss.ce, e.loss.gbpr, e.loss.total, e.loss.pair_count, e.samples
        );
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = training_config(
        &args.common,
        args.alpha,
        args.ablate.as_deref(),
        args.epochs,
    )?;
    let dir = resolve_run_dir(&args.common, "train", cfg.seed)?;
    let samples = load_samples(&args.data, cfg.list_size)?;
    let result = match &args.from {
        Some(ckpt) => {
            let mut params = ModelParams::init(&cfg)?;
            apply_checkpoint(&mut params, &load_checkpoint(ckpt)?)?;
            training::train_from(&samples, params, &cfg)?
        }
        None => training::train(&samples, &cfg)?,
    };

    save_checkpoint(&result.params, &dir.join("checkpoint.bin"))?;
    write_text(&dir.join("loss.csv"), &loss_csv(&result))?;
    cfg.save(&dir.join("resolved_config.toml"))?;
    let last = result
        .epochs
        .last()
        .ok_or_else(|| Error::Internal("training produced no epochs".into()))?;
    println!(
        "trained {} epochs on {} lists (skipped {}); final loss total={} ce={} gbpr={}",
        result.epochs.len(),
        last.samples,
        result.skipped_samples,
        last.loss.total,
        last.loss.ce,
        last.loss.gbpr
    );
    println!("checkpoint: {}", dir.join("checkpoint.bin").display());
    Ok(())
}

/// Loads a checkpoint into parameters shaped by `cfg`.
fn load_params(cfg: &ModelConfig, checkpoint: &Path) -> Result<ModelParams> {
    let mut params = ModelParams::init(cfg)?;
    apply_checkpoint(&mut params, &load_checkpoint(checkpoint)?)?;
    Ok(params)
}

/// Uses --config when given, else the resolved config saved next to the
/// checkpoint by `train`.
fn config_for_checkpoint(common: &CommonArgs, checkpoint: &Path) -> Result<ModelConfig> {
    if common.config.is_none() {
        let sibling = checkpoint
            .parent()
            .map(|d| d.join("resolved_config.toml"))
            .filter(|p| p.exists());
        if let Some(path) = sibling {
            let with_sibling = CommonArgs {
                config: Some(path),
                seed: common.seed,
                out: common.out.clone(),
                set: common.set.clone(),
            };
            return resolve_config(&with_sibling);
        }
    }
    resolve_config(common)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = config_for_checkpoint(&args.common, &args.checkpoint)?;
    let dir = resolve_run_dir(&args.common, "evaluate", cfg.seed)?;
    let samples = load_samples(&args.data, cfg.list_size)?;
    let params = load_params(&cfg, &args.checkpoint)?;
    let telemetry = Telemetry::default();
    let summary = metrics::evaluate(&samples, &params, &cfg, &telemetry)?;

    let meta = RunMeta::new(cfg.seed, &cfg);
    let rows = vec![
        ("auc".to_string(), summary.auc),
        ("gauc".to_string(), summary.gauc),
        ("lists".to_string(), summary.lists as f64),
        ("items".to_string(), summary.items as f64),
        ("lists_dropped".to_string(), summary.lists_dropped as f64),
    ];
    metrics::write_metrics_csv(&dir.join("metrics.csv"), &rows, &meta)?;
    metrics::write_metrics_json(&dir.join("metrics.json"), &rows, &meta)?;
    cfg.save(&dir.join("resolved_config.toml"))?;
    println!(
        "auc={} gauc={} over {} lists ({} dropped)",
        summary.auc, summary.gauc, summary.lists, summary.lists_dropped
    );
    Ok(())
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let mode = BenchMode::parse(&args.mode)?;
    let cfg = config_for_checkpoint(&args.common, &args.checkpoint)?;
    let dir = resolve_run_dir(&args.common, "rerank", cfg.seed)?;
    let samples = load_samples(&args.data, cfg.list_size)?;
    let params = load_params(&cfg, &args.checkpoint)?;
    let telemetry = Telemetry::default();
    let limit = args.limit.unwrap_or(samples.len());

    let layout = TreeLayout::for_config(&cfg)?;
    let weights = cfg.resolved_weights();
    let mut pre: Option<Precomputed> = None;
    let out_path = dir.join("rerank.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&out_path)?);
    let mut done = 0usize;
    for sample in samples.iter().take(limit) {
        let request = sample.pool_request();
        let pre = match &pre {
            Some(p) if p.table.n() == request.n() => pre.as_ref().unwrap(),
            _ => {
                pre = Some(Precomputed::for_config(request.n(), &cfg)?);
                pre.as_ref().unwrap()
            }
        };
        let (best_rank, ranked_item_ids, best_score) = match mode {
            BenchMode::Cached => {
                let r = ccm::rerank_with(&request, &params, &cfg, pre, &telemetry)?;
                (r.best_rank, r.ranked_item_ids, r.best_score)
            }
            BenchMode::Naive => {
                let (x_s, _) = irm::encode(&request, &params, &cfg, &telemetry)?;
                let scores =
                    ccm::naive_score_all(&x_s, &pre.table, &params, &layout, &weights, &telemetry)?;
                let best = ccm::argmax_list(&scores)?;
                let ids = pre
                    .table
                    .row(best)
                    .iter()
                    .map(|&i| request.candidate_item_ids[i as usize])
                    .collect();
                (best as u64, ids, scores[best])
            }
        };
        serde_json::to_writer(
            &mut out,
            &serde_json::json!({
                "request_id": request.request_id,
                "best_rank": best_rank,
                "ranked_item_ids": ranked_item_ids,
                "best_score": best_score,
            }),
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        done += 1;
    }
    out.flush()?;
    cfg.save(&dir.join("resolved_config.toml"))?;
    println!("reranked {done} requests ({}) -> {}", mode.as_str(), out_path.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mode = BenchMode::parse(&args.mode)?;
    let cfg = match &args.checkpoint {
        Some(ckpt) => config_for_checkpoint(&args.common, ckpt)?,
        None => resolve_config(&args.common)?,
    };
    let dir = resolve_run_dir(&args.common, "bench", cfg.seed)?;
    let samples = load_samples(&args.data, cfg.list_size)?;
    let params = match &args.checkpoint {
        Some(ckpt) => load_params(&cfg, ckpt)?,
        None => ModelParams::init(&cfg)?,
    };
    let telemetry = Telemetry::default();
    let requests: Vec<RawRequest> = samples.iter().map(|s| s.pool_request()).collect();
    if requests.is_empty() {
        return Err(Error::Input("bench dataset is empty".into()));
    }

    let bench_cfg = BenchConfig {
        mode,
        k: args.k,
        warmups: args.warmups,
        repetitions: args.reps,
        seed: cfg.seed,
    };
    let report = metrics::bench(&requests, &params, &cfg, &bench_cfg, &telemetry)?;

    let meta = RunMeta::new(cfg.seed, &cfg);
    let mut counters = String::from(
        "mode,k,warmups,repetitions,permutations_scored,set_attention_calls,head_evals,seed,config,build\n",
    );
    let _ = writeln!(
        counters,
        "{},{},{},{},{},{},{},{},{},{}",
        report.mode.as_str(),
        report.k,
        report.warmups,
        report.repetitions,
        report.permutations_scored,
        report.set_attention_calls,
        report.head_evals,
        meta.seed,
        meta.config_fingerprint,
        meta.build_id
    );
    write_text(&dir.join("bench_counters.csv"), &counters)?;

    // Wall-clock results live apart from the deterministic outputs.
    let mut timings = String::from("mode,k,mean_ms,p99_ms\n");
    let _ = writeln!(
        timings,
        "{},{},{},{}",
        report.mode.as_str(),
        report.k,
        report.mean_ms,
        report.p99_ms
    );
    write_text(&dir.join("bench_timings.csv"), &timings)?;

    if args.hr_requests > 0 {
        let hr = hit_ratio_table(
            &requests[..args.hr_requests.min(requests.len())],
            &params,
            &cfg,
            args.k,
            args.draws,
            args.beam,
            &telemetry,
        )?;
        let mut csv = String::from("selector,param,trials,hits,hit_ratio\n");
        for row in &hr {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                row.selector, row.param, row.trials, row.hits, row.hit_ratio
            );
        }
        write_text(&dir.join("hr.csv"), &csv)?;
    }
    cfg.save(&dir.join("resolved_config.toml"))?;
    println!(
        "{} mode: mean {:.3} ms, p99 {:.3} ms over {} reps; {} set-attention calls and {} head evals per request",
        report.mode.as_str(),
        report.mean_ms,
        report.p99_ms,
        report.repetitions,
        report.set_attention_calls,
        report.head_evals
    );
    Ok(())
}

struct HrRow {
    selector: &'static str,
    param: u64,
    trials: u64,
    hits: u64,
    hit_ratio: f64,
}

/// Hit ratio of selector baselines against the full evaluator's argmax:
/// full enumeration, random-K across a K grid, and beam search.
fn hit_ratio_table(
    requests: &[RawRequest],
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    draws: usize,
    beam: usize,
    telemetry: &Telemetry,
) -> Result<Vec<HrRow>> {
    let layout = TreeLayout::for_config(cfg)?;
    let pre = Precomputed::for_config(requests[0].n(), cfg)?;
    let total = pre.table.count();

    // The expensive part: one full rerank per request, shared by all rows.
    let mut best_ranks = Vec::with_capacity(requests.len());
    let mut semantics = Vec::with_capacity(requests.len());
    for request in requests {
        let out = ccm::rerank_with(request, params, cfg, &pre, telemetry)?;
        best_ranks.push(out.best_rank);
        let (x_s, _) = irm::encode(request, params, cfg, telemetry)?;
        semantics.push(x_s);
    }

    let mut rows = Vec::new();
    let full_trials: Vec<HRTrial> = best_ranks
        .iter()
        .enumerate()
        .map(|(i, &best)| HRTrial {
            request_id: requests[i].request_id,
            best_index: best,
            candidates: (0..total).collect(),
        })
        .collect();
    rows.push(HrRow {
        selector: "full",
        param: total,
        trials: full_trials.len() as u64,
        hits: (metrics::hit_ratio(&full_trials)? * full_trials.len() as f64).round() as u64,
        hit_ratio: metrics::hit_ratio(&full_trials)?,
    });

    let mut k_grid: Vec<usize> = [1usize, 10, 100, 1000]
        .into_iter()
        .filter(|&g| (g as u64) < total)
        .collect();
    if !k_grid.contains(&k) && (k as u64) <= total {
        k_grid.push(k);
    }
    k_grid.sort_unstable();
    for grid_k in k_grid {
        let mut trials = Vec::with_capacity(requests.len() * draws);
        for (i, &best) in best_ranks.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for _ in 0..draws {
                trials.push(HRTrial {
                    request_id: requests[i].request_id,
                    best_index: best,
                    candidates: metrics::gsu_random_k(total, grid_k, &mut rng),
                });
            }
        }
        let hr = metrics::hit_ratio(&trials)?;
        rows.push(HrRow {
            selector: "random_k",
            param: grid_k as u64,
            trials: trials.len() as u64,
            hits: (hr * trials.len() as f64).round() as u64,
            hit_ratio: hr,
        });
    }

    let mut beam_trials = Vec::with_capacity(requests.len());
    for (i, &best) in best_ranks.iter().enumerate() {
        let lists = metrics::gsu_beam_search(&semantics[i], params, &layout, beam, telemetry)?;
        let candidates = lists
            .iter()
            .map(|l| pre.table.rank_of(l))
            .collect::<Result<Vec<u64>>>()?;
        beam_trials.push(HRTrial {
            request_id: requests[i].request_id,
            best_index: best,
            candidates,
        });
    }
    let hr = metrics::hit_ratio(&beam_trials)?;
    rows.push(HrRow {
        selector: "beam",
        param: beam as u64,
        trials: beam_trials.len() as u64,
        hits: (hr * beam_trials.len() as f64).round() as u64,
        hit_ratio: hr,
    });
    Ok(rows)
}

/// Trains one configuration and evaluates it on the held-out set.
fn train_and_evaluate(
    cfg: &ModelConfig,
    train_samples: &[ListSample],
    test_samples: &[ListSample],
) -> Result<(training::TrainResult, metrics::EvalSummary)> {
    let result = training::train(train_samples, cfg)?;
    let telemetry = Telemetry::default();
    let summary = metrics::evaluate(test_samples, &result.params, cfg, &telemetry)?;
    Ok((result, summary))
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let base = resolve_config(&args.common)?;
    let dir = resolve_run_dir(&args.common, "ablate", base.seed)?;
    let train_samples = load_samples(&args.data, base.list_size)?;
    let test_samples = load_samples(&args.test, base.list_size)?;

    let variants: Vec<Ablation> = match &args.ablate {
        Some(name) => vec![Ablation::None, Ablation::parse(name)?],
        None => vec![
            Ablation::None,
            Ablation::NoIrm,
            Ablation::NoTcem,
            Ablation::NoGbpr,
        ],
    };
    let mut csv = String::from("variant,auc,gauc,final_total_loss\n");
    for variant in variants {
        let cfg = ModelConfig {
            ablation: variant,
            ..base.clone()
        };
        let (result, summary) = train_and_evaluate(&cfg, &train_samples, &test_samples)?;
        let last = result
            .epochs
            .last()
            .ok_or_else(|| Error::Internal("training produced no epochs".into()))?;
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            variant.as_str(),
            summary.auc,
            summary.gauc,
            last.loss.total
        );
        println!(
            "{}: auc={} gauc={}",
            variant.as_str(),
            summary.auc,
            summary.gauc
        );
    }
    write_text(&dir.join("ablate.csv"), &csv)?;
    base.save(&dir.join("resolved_config.toml"))?;
    Ok(())
}

fn cmd_sweep_alpha(args: SweepAlphaArgs) -> Result<()> {
    let base = resolve_config(&args.common)?;
    let dir = resolve_run_dir(&args.common, "sweep-alpha", base.seed)?;
    let train_samples = load_samples(&args.data, base.list_size)?;
    let test_samples = load_samples(&args.test, base.list_size)?;

    let mut csv = String::from("alpha,auc,gauc,final_ce,final_gbpr\n");
    for &alpha in &args.alphas {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
        }
        let cfg = ModelConfig {
            alpha,
            ..base.clone()
        };
        let (result, summary) = train_and_evaluate(&cfg, &train_samples, &test_samples)?;
        let last = result
            .epochs
            .last()
            .ok_or_else(|| Error::Internal("training produced no epochs".into()))?;
        let _ = writeln!(
            csv,
            "{alpha},{},{},{},{}",
            summary.auc, summary.gauc, last.loss.ce, last.loss.gbpr
        );
        println!("alpha={alpha}: auc={} gauc={}", summary.auc, summary.gauc);
    }
    write_text(&dir.join("sweep_alpha.csv"), &csv)?;
    base.save(&dir.join("resolved_config.toml"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_file_values() {
        let base = ModelConfig::default();
        let cfg = apply_overrides(
            &base,
            &[
                "alpha=0.5".to_string(),
                "hidden=[16, 8]".to_string(),
                "ablation=no_tcem".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.hidden, vec![16, 8]);
        assert_eq!(cfg.ablation, Ablation::NoTcem);
        // Untouched fields keep their file values.
        assert_eq!(cfg.embed_dim, base.embed_dim);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let base = ModelConfig::default();
        let missing_eq = apply_overrides(&base, &["alpha".to_string()]).unwrap_err();
        assert!(matches!(missing_eq, Error::Config(_)));
        let unknown_key = apply_overrides(&base, &["no_such_key=1".to_string()]).unwrap_err();
        assert!(matches!(unknown_key, Error::Config(_)));
    }

    #[test]
    fn string_overrides_accept_bare_words() {
        let base = ModelConfig::default();
        let cfg = apply_overrides(&base, &["ablation=no_irm".to_string()]).unwrap();
        assert_eq!(cfg.ablation, Ablation::NoIrm);
    }

    #[test]
    fn run_dir_prefers_explicit_out() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("here");
        let common = CommonArgs {
            config: None,
            seed: None,
            out: Some(out.clone()),
            set: vec![],
        };
        let dir = resolve_run_dir(&common, "train", 7).unwrap();
        assert_eq!(dir, out);
        assert!(dir.is_dir());
    }

    #[test]
    fn cli_parses_every_subcommand() {
        Cli::try_parse_from(["treerank", "gen-data", "--lists", "10", "--n", "8", "--m", "8"])
            .unwrap();
        Cli::try_parse_from(["treerank", "train", "--data", "d.jsonl", "--alpha", "0.1"]).unwrap();
        Cli::try_parse_from([
            "treerank",
            "evaluate",
            "--data",
            "d.jsonl",
            "--checkpoint",
            "c.bin",
        ])
        .unwrap();
        Cli::try_parse_from([
            "treerank", "rerank", "--data", "d.jsonl", "--checkpoint", "c.bin", "--mode", "naive",
        ])
        .unwrap();
        Cli::try_parse_from(["treerank", "bench", "--data", "d.jsonl", "--k", "50"]).unwrap();
        Cli::try_parse_from([
            "treerank", "ablate", "--data", "a.jsonl", "--test", "b.jsonl", "--ablate", "tcem",
        ])
        .unwrap();
        Cli::try_parse_from(["treerank", "sweep-alpha", "--data", "a.jsonl", "--test", "b.jsonl"])
            .unwrap();
        assert!(Cli::try_parse_from(["treerank", "frobnicate"]).is_err());
    }
}
