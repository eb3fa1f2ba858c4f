use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use etad_core::detector::init_detector;
use etad_core::encoder::init_encoder;
use etad_core::rng::stream;
use etad_core::sgs::{naive_e2e_step, stage3_sampled_update, train_with, ENCODER_PHASE};
use etad_core::synthdata::{generate_dataset, index_checksum, load_dataset, save_dataset, INDEX_FILE};
use etad_core::tadeval::{compute_map, evaluate, ground_truth, ScoreParts};
use etad_core::{
    Checkpoint, Dataset, Detection, Error, EvalResult, Graph, Mode, RunConfig, Strategy, Tensor, TrainOutcome,
};
use serde::Serialize;

use crate::report::{metrics_csv, write_csv};
use crate::{Cli, Command, Common, Failure};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData(c) => gen_data(c)?,
        Command::Train(c) => train_cmd(c)?,
        Command::AblateAps { common, ratios } => {
            let cfg = load_config(common)?;
            check_list("ratios", ratios, |r| r > 0.0 && r <= 1.0)?;
            let ds = dataset(common, &cfg)?;
            let rows = ablate_aps(&ds, &cfg, ratios)?;
            emit(&cfg, "ablate_aps.csv", &rows)?;
        }
        Command::AblateSgs { common, gammas } => {
            let cfg = load_config(common)?;
            check_list("gammas", gammas, |g| (0.0..=1.0).contains(&g))?;
            let ds = dataset(common, &cfg)?;
            let rows = ablate_sgs(&ds, &cfg, gammas)?;
            emit(&cfg, "ablate_sgs.csv", &rows)?;
        }
        Command::BenchMem { common, ks } => {
            let cfg = load_config(common)?;
            let n = cfg.dataset.snippets;
            if let Some(k) = ks.iter().find(|&&k| k == 0 || k > n) {
                return Err(Error::Config(vec![format!("ks must lie in [1, {n}], got {k}")]).into());
            }
            let ds = dataset(common, &cfg)?;
            let rows = bench_mem(&ds, &cfg, ks)?;
            emit(&cfg, "bench_mem.csv", &rows)?;
        }
        Command::Eval { common, checkpoint, split } => eval_cmd(common, checkpoint.as_deref(), split)?,
    }
    Ok(())
}

/// Reads `--config` (or the defaults), applies flag overrides and validates.
/// Parse failures and invalid fields are all reported as one config error.
pub fn load_config(c: &Common) -> Result<RunConfig> {
    let mut errors = Vec::new();
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(gamma) = c.gamma {
        cfg.sgs.gamma = gamma;
    }
    if let Some(ratio) = c.aps_ratio {
        cfg.aps.ratio = ratio;
    }
    let mut strategy = |flag: &str, name: &Option<String>, slot: &mut Strategy| {
        if let Some(name) = name {
            match name.parse() {
                Ok(s) => *slot = s,
                Err(e) => errors.push(format!("--{flag}: {e}")),
            }
        }
    };
    strategy("sampler", &c.sampler, &mut cfg.aps.strategy);
    strategy("snippet-sampler", &c.snippet_sampler, &mut cfg.sgs.snippet_sampler);
    if let Some(k) = c.micro_batch {
        cfg.sgs.micro_batch = k;
    }
    if let Some(epochs) = c.epochs {
        cfg.sgs.epochs = epochs;
    }
    if c.naive_e2e {
        cfg.sgs.naive_e2e = true;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    errors.extend(cfg.errors());
    if !errors.is_empty() {
        return Err(Error::Config(errors).into());
    }
    Ok(cfg)
}

fn check_list(name: &str, values: &[f64], ok: impl Fn(f64) -> bool) -> Result<()> {
    let bad: Vec<String> = values.iter().filter(|&&v| !ok(v)).map(|v| format!("{name}: {v} is out of range")).collect();
    if values.is_empty() {
        return Err(Error::Config(vec![format!("{name} must not be empty")]).into());
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad).into());
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn data_dir(c: &Common, cfg: &RunConfig) -> PathBuf {
    c.data.clone().unwrap_or_else(|| Path::new(&cfg.out_dir).join("data"))
}

/// Loads the dataset from the data directory, generating and saving it first
/// if no index exists. A dataset built from a different config is an error.
fn dataset(c: &Common, cfg: &RunConfig) -> Result<Dataset> {
    let dir = data_dir(c, cfg);
    if !dir.join(INDEX_FILE).exists() {
        eprintln!("no dataset at {}; generating", dir.display());
        let ds = generate_dataset(&cfg.dataset)?;
        save_dataset(&ds, &dir, false)?;
        return Ok(ds);
    }
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    if ds.config != cfg.dataset {
        bail!("dataset at {} was generated from a different config; rerun gen-data --force", dir.display());
    }
    Ok(ds)
}

fn gen_data(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let dir = data_dir(c, &cfg);
    let ds = generate_dataset(&cfg.dataset)?;
    save_dataset(&ds, &dir, c.force)?;
    let actions: usize = ds.train.iter().chain(&ds.val).map(|v| v.annotations.len()).sum();
    println!(
        "{} train + {} val videos, {actions} actions, written to {} (index sha256 {})",
        ds.train.len(),
        ds.val.len(),
        dir.display(),
        index_checksum(&dir)?
    );
    Ok(())
}

/// Trains with per-epoch progress on stderr.
pub fn train_logged(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome> {
    let epochs = cfg.sgs.epochs;
    Ok(train_with(ds, cfg, |r| {
        eprintln!(
            "epoch {}/{epochs}  loss {:.4}  mAP {:.4}  {:.1}s",
            r.epoch, r.loss.total, r.eval.average, r.wall_seconds
        )
    })?)
}

fn train_cmd(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let ds = dataset(c, &cfg)?;
    let outcome = train_logged(&ds, &cfg)?;
    let dir = out_dir(&cfg)?;
    fs::write(dir.join(CHECKPOINT_FILE), serde_json::to_vec_pretty(&outcome.checkpoint)?)?;
    metrics_csv(&dir.join(METRICS_FILE), &outcome.metrics)?;
    match outcome.metrics.last() {
        Some(last) => println!("epoch {}: average mAP {:.4}", last.epoch, last.eval.average),
        None => println!("0 epochs; saved the initial model"),
    }
    println!("wrote {} and {}", dir.join(CHECKPOINT_FILE).display(), dir.join(METRICS_FILE).display());
    Ok(())
}

fn emit<T: Serialize>(cfg: &RunConfig, name: &str, rows: &[T]) -> Result<()> {
    let path = out_dir(cfg)?.join(name);
    print!("{}", write_csv(&path, rows)?);
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApsRow {
    pub ratio: f64,
    pub average_map: f64,
    /// Forward plus backward detector FLOPs summed over all epochs.
    pub detector_flops: u64,
    /// Largest per-epoch detector peak.
    pub peak_bytes_detector: u64,
    pub wall_seconds: f64,
}

/// One frozen-encoder run per ratio, in ascending ratio order.
pub fn ablate_aps(ds: &Dataset, cfg: &RunConfig, ratios: &[f64]) -> Result<Vec<ApsRow>> {
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios
        .into_iter()
        .map(|ratio| {
            let mut run = cfg.clone();
            run.sgs.gamma = 0.0;
            run.sgs.naive_e2e = false;
            run.aps.ratio = ratio;
            eprintln!("ratio {ratio}");
            let clock = Instant::now();
            let out = train_logged(ds, &run)?;
            Ok(ApsRow {
                ratio,
                average_map: final_map(&out),
                detector_flops: out.metrics.iter().map(|m| m.detector_forward_flops + m.detector_backward_flops).sum(),
                peak_bytes_detector: out.metrics.iter().map(|m| m.peak_detector_bytes).max().unwrap_or(0),
                wall_seconds: clock.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgsRow {
    /// `naive` for the parallel baseline, `sgs` otherwise.
    pub method: &'static str,
    pub gamma: f64,
    pub average_map: f64,
    /// Encoder FLOPs as a percentage of the baseline's.
    pub flop_ratio: f64,
    /// Forward and backward FLOPs, each against the baseline's same pass.
    pub forward_ratio: f64,
    pub backward_ratio: f64,
    pub encoder_forward_flops: u64,
    pub encoder_backward_flops: u64,
    pub peak_bytes_encoder: u64,
    /// Wall time relative to the baseline; not reproducible.
    pub time_ratio: f64,
}

/// The parallel baseline followed by one run per gamma, in the given order.
pub fn ablate_sgs(ds: &Dataset, cfg: &RunConfig, gammas: &[f64]) -> Result<Vec<SgsRow>> {
    let run = |naive: bool, gamma: f64| -> Result<(TrainOutcome, f64)> {
        let mut run = cfg.clone();
        run.sgs.naive_e2e = naive;
        run.sgs.gamma = gamma;
        eprintln!("{} gamma {gamma}", if naive { "naive" } else { "sgs" });
        let clock = Instant::now();
        let out = train_logged(ds, &run)?;
        Ok((out, clock.elapsed().as_secs_f64()))
    };
    let (base, base_time) = run(true, 1.0)?;
    let (base_fwd, base_bwd) = encoder_flops(&base);
    let base_total = (base_fwd + base_bwd) as f64;
    let row = |method, gamma, out: &TrainOutcome, time: f64| {
        let (fwd, bwd) = encoder_flops(out);
        SgsRow {
            method,
            gamma,
            average_map: final_map(out),
            flop_ratio: 100.0 * (fwd + bwd) as f64 / base_total,
            forward_ratio: 100.0 * fwd as f64 / base_fwd as f64,
            backward_ratio: 100.0 * bwd as f64 / base_bwd as f64,
            encoder_forward_flops: fwd,
            encoder_backward_flops: bwd,
            peak_bytes_encoder: out.metrics.iter().map(|m| m.peak_encoder_bytes).max().unwrap_or(0),
            time_ratio: time / base_time,
        }
    };
    let mut rows = vec![row("naive", 1.0, &base, base_time)];
    for &gamma in gammas {
        let (out, time) = run(false, gamma)?;
        rows.push(row("sgs", gamma, &out, time));
    }
    Ok(rows)
}

fn encoder_flops(out: &TrainOutcome) -> (u64, u64) {
    out.metrics.iter().fold((0, 0), |(f, b), m| (f + m.encoder_forward_flops, b + m.encoder_backward_flops))
}

fn final_map(out: &TrainOutcome) -> f64 {
    out.metrics.last().map_or(0.0, |m| m.eval.average)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemRow {
    pub k: usize,
    pub peak_bytes_encoder: u64,
    pub naive_peak_bytes: u64,
    pub ratio: f64,
}

/// Encoder-phase peak of one full sampled update (every snippet, micro-batch
/// `k`) on the first training video, against one parallel step.
pub fn bench_mem(ds: &Dataset, cfg: &RunConfig, ks: &[usize]) -> Result<Vec<MemRow>> {
    let video = ds.train.first().context("bench-mem needs a training video")?;
    let n = video.len();
    let mut g = Graph::new(Mode::Train);
    let mut encoder = init_encoder(&cfg.encoder, cfg.seed);
    let mut detector = init_detector(&cfg.detector, cfg.seed);
    naive_e2e_step(&mut g, &mut encoder, &mut detector, video, &cfg.aps, &mut stream(cfg.seed, "bench.aps"), 1.0)?;
    let naive = g.snapshot_memory().peak(ENCODER_PHASE);
    let grads = Tensor::full(&[n, cfg.encoder.out_dim], 1.0 / n as f64);
    let all: Vec<usize> = (0..n).collect();
    ks.iter()
        .map(|&k| {
            let mut g = Graph::new(Mode::Train);
            stage3_sampled_update(&mut g, &mut encoder, video, &grads, &all, k, 1.0)?;
            let peak = g.snapshot_memory().peak(ENCODER_PHASE);
            Ok(MemRow { k, peak_bytes_encoder: peak, naive_peak_bytes: naive, ratio: peak as f64 / naive as f64 })
        })
        .collect()
}

/// Ground truth as score-one detections.
pub fn oracle_detections(ds: &Dataset, split: &str) -> Result<Vec<Detection>> {
    Ok(ds
        .split(split)?
        .iter()
        .flat_map(|v| {
            v.segments().into_iter().map(|s| Detection {
                video_id: v.video_id.clone(),
                start: s.start,
                end: s.end,
                score: 1.0,
                components: ScoreParts { p_s: 1.0, p_e: 1.0, p_iou: 1.0 },
            })
        })
        .collect())
}

fn eval_cmd(c: &Common, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let flag_cfg = load_config(c)?;
    let (cfg, ckpt) = if c.oracle {
        (flag_cfg, None)
    } else {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| Path::new(&flag_cfg.out_dir).join(CHECKPOINT_FILE));
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let ckpt = Checkpoint::from_json(&text)?;
        let mut cfg = ckpt.config.clone();
        cfg.out_dir = flag_cfg.out_dir;
        (cfg, Some(ckpt))
    };
    let ds = dataset(c, &cfg)?;
    let videos = ds.split(split)?;
    let result: EvalResult = match &ckpt {
        Some(ck) => evaluate(videos, &ck.encoder, &ck.detector, &cfg.inference, &cfg.thresholds)?,
        None => compute_map(&oracle_detections(&ds, split)?, &ground_truth(videos), &cfg.thresholds)?,
    };
    let json = serde_json::to_string_pretty(&result)?;
    let path = out_dir(&cfg)?.join("eval.json");
    fs::write(&path, &json)?;
    println!("{json}");
    eprintln!("wrote {}", path.display());
    Ok(())
}
