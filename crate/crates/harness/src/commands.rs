//! The experiment commands. Each one is a pure function of its config,
//! seed and input files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kvae_autodiff::{Tape, Tensor};
use kvae_core::checkpoint::{pack, read_checkpoint, unpack, write_checkpoint};
use kvae_core::imputation::{impute, pixel_error, ImputeMode, ImputeOptions};
use kvae_core::kvae::{generate, GenerateOptions, KvaeModel, Sequence};
use kvae_core::lgssm::ObservationMask;
use kvae_core::train::{derive_seed, train_epoch, EpochMetrics, TrainState};
use kvae_worldgen::{read_dataset, simulate_episode, write_dataset, Dataset, Episode, TEST_INDEX_OFFSET};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{tile, write_pgm, CsvLog};
use crate::patterns::DropPattern;

pub const TRAIN_FILE: &str = "train.kvd";
pub const TEST_FILE: &str = "test.kvd";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const IMPUTATION_FILE: &str = "imputation.csv";

pub const METRICS_SCHEMA: &str = "kvae-metrics v1";
pub const METRICS_COLUMNS: [&str; 10] =
    ["epoch", "recon", "lgssm_joint", "entropy_q", "neg_post", "total", "weighted", "lr", "steps", "skipped_steps"];
const TIMING_SCHEMA: &str = "kvae-timing v1";
const IMPUTATION_SCHEMA: &str = "kvae-imputation v1";
const IMPUTATION_COLUMNS: [&str; 6] = ["pattern", "param", "mode", "mean_error", "std", "n"];

// Stream tags for derive_seed.
const INIT: u64 = 1;
const TRAIN: u64 = 2;
const TRAIN_MASK: u64 = 3;
const EVAL: u64 = 4;
const EXPORT: u64 = 5;
const GENERATE: u64 = 6;

const CONFIG_PREFIX: &str = "config.";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))
}

/// Writes the resolved config next to a command's outputs.
pub fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_text()).map_err(HarnessError::io(&path))
}

pub fn episode_sequence(e: &Episode) -> Sequence {
    let frames = Tensor::matrix(e.steps, e.pixels(), e.frames.iter().map(|&b| f64::from(b)).collect())
        .expect("episode sizes are consistent");
    let controls = (e.u_dim > 0).then(|| Tensor::matrix(e.steps, e.u_dim, e.controls.clone()).expect("control sizes"));
    Sequence::new(frames, controls)
}

/// Reads a dataset and checks it against the configured world.
pub fn load_sequences(cfg: &ExperimentConfig, path: &Path) -> Result<(Dataset, Vec<Sequence>)> {
    let ds = read_dataset(path)?;
    let w = &cfg.world;
    if (ds.steps, ds.height, ds.width, ds.u_dim) != (w.steps, w.height, w.width, w.u_dim()) {
        return Err(HarnessError::Config(format!(
            "{} holds {}x{} frames, {} steps, {} controls; the config expects {}x{}, {}, {}",
            path.display(),
            ds.height,
            ds.width,
            ds.steps,
            ds.u_dim,
            w.height,
            w.width,
            w.steps,
            w.u_dim()
        )));
    }
    let seqs = ds.episodes.iter().map(episode_sequence).collect();
    Ok((ds, seqs))
}

fn simulate_parallel(cfg: &ExperimentConfig, n: usize, first: u64) -> Result<Dataset> {
    cfg.world.validate()?;
    let episodes = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_episode(&cfg.world, cfg.seed, first + i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Dataset::new(episodes)?)
}

#[derive(Debug, Clone)]
pub struct GenDataOutput {
    pub train: PathBuf,
    pub test: PathBuf,
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<GenDataOutput> {
    cfg.validate()?;
    write_config(cfg, out)?;
    let train = out.join(TRAIN_FILE);
    let test = out.join(TEST_FILE);
    write_dataset(&train, &simulate_parallel(cfg, cfg.n_train, 0)?)?;
    write_dataset(&test, &simulate_parallel(cfg, cfg.n_test, TEST_INDEX_OFFSET)?)?;
    info!("wrote {} training and {} test episodes to {}", cfg.n_train, cfg.n_test, out.display());
    Ok(GenDataOutput { train, test })
}

/// Stores the model with the config needed to rebuild it.
pub fn save_checkpoint(path: &Path, cfg: &ExperimentConfig, model: &KvaeModel, state: &TrainState) -> Result<()> {
    let extra: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (format!("{CONFIG_PREFIX}{k}"), v)).collect();
    Ok(write_checkpoint(path, &pack(model, state, &extra))?)
}

/// Loads a checkpoint written by [`save_checkpoint`], with its config.
pub fn load_checkpoint(path: &Path) -> Result<(ExperimentConfig, KvaeModel, TrainState)> {
    let ck = read_checkpoint(path)?;
    let entries = ck.manifest.iter().filter_map(|(k, v)| k.strip_prefix(CONFIG_PREFIX).map(|k| (k, v.as_str())));
    let cfg = ExperimentConfig::from_entries(entries)?;
    let (model, state) = unpack(&ck, cfg.model.clone())?;
    Ok((cfg, model, state))
}

/// Fixed training masks, one per episode.
pub fn training_masks(cfg: &ExperimentConfig, n: usize) -> Result<Option<Vec<ObservationMask>>> {
    if cfg.train_drop == DropPattern::None {
        return Ok(None);
    }
    (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TRAIN_MASK, i]));
            cfg.train_drop.mask(cfg.world.steps, cfg.train_prefix, &mut rng)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn metric_fields(m: &EpochMetrics) -> Vec<String> {
    let e = &m.elbo;
    vec![
        m.epoch.to_string(),
        e.recon.to_string(),
        e.lgssm_joint.to_string(),
        e.entropy_q.to_string(),
        e.neg_post.to_string(),
        e.total.to_string(),
        e.weighted.to_string(),
        m.lr.to_string(),
        m.steps.to_string(),
        m.skipped_steps.to_string(),
    ]
}

fn finite(m: &EpochMetrics) -> bool {
    let e = &m.elbo;
    [e.recon, e.lgssm_joint, e.entropy_q, e.neg_post, e.total, e.weighted].iter().all(|v| v.is_finite())
}

fn dump_diagnostics(out: &Path, cfg: &ExperimentConfig, model: &KvaeModel, state: &TrainState, m: &EpochMetrics) -> Result<PathBuf> {
    let mut text = format!("non-finite metrics at epoch {}\n{m:?}\n\nparameters (name, shape, max |value|, finite):\n", m.epoch);
    for p in model.params.iter() {
        let max = p.value.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let _ = writeln!(text, "{} {:?} {max} {}", p.name, p.value.shape(), p.value.is_finite());
    }
    let path = out.join("diagnostic.txt");
    fs::write(&path, text).map_err(HarnessError::io(&path))?;
    save_checkpoint(&out.join("diagnostic.ckpt"), cfg, model, state)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: KvaeModel,
    pub state: TrainState,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
}

/// Trains on `<data>/train.kvd` up to `cfg.epochs`, appending to
/// `<out>/metrics.csv`. With `resume`, training continues from that
/// checkpoint and the log must end at the epoch before it.
pub fn train(cfg: &ExperimentConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    write_config(cfg, out)?;
    let (_, seqs) = load_sequences(cfg, &data.join(TRAIN_FILE))?;
    let (mut model, mut state) = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            unpack(&ck, cfg.model.clone())?
        }
        None => {
            let model = KvaeModel::new(cfg.model.clone(), derive_seed(cfg.seed, &[INIT]))?;
            let state = TrainState::new(&model, derive_seed(cfg.seed, &[TRAIN]));
            (model, state)
        }
    };
    let mut log = CsvLog::open(&out.join(METRICS_FILE), METRICS_SCHEMA, &METRICS_COLUMNS)?;
    if log.rows() != state.epoch {
        return Err(HarnessError::Config(format!(
            "{} already holds {} epochs but training starts at epoch {}; resume from the matching checkpoint or use a fresh output directory",
            out.join(METRICS_FILE).display(),
            log.rows(),
            state.epoch
        )));
    }
    let mut timing = CsvLog::open(&out.join(TIMING_FILE), TIMING_SCHEMA, &["epoch", "seconds"])?;
    let masks = training_masks(cfg, seqs.len())?;
    let ckpt_dir = out.join("checkpoints");
    let mut metrics = Vec::new();
    while state.epoch < cfg.epochs {
        let start = Instant::now();
        let m = train_epoch(&mut model, &mut state, &seqs, masks.as_deref(), &cfg.train)?;
        if !finite(&m) {
            let path = dump_diagnostics(out, cfg, &model, &state, &m)?;
            return Err(HarnessError::Numerical(format!(
                "epoch {} produced non-finite metrics; details in {}",
                m.epoch,
                path.display()
            )));
        }
        log.append(&metric_fields(&m))?;
        timing.append(&[m.epoch.to_string(), format!("{:.3}", start.elapsed().as_secs_f64())])?;
        info!("epoch {} elbo {:.3} (weighted {:.3}) lr {:.5}", m.epoch, m.elbo.total, m.elbo.weighted, m.lr);
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
            create_dir(&ckpt_dir)?;
            save_checkpoint(&ckpt_dir.join(format!("epoch-{:04}.ckpt", state.epoch)), cfg, &model, &state)?;
        }
        metrics.push(m);
    }
    let checkpoint = out.join(MODEL_FILE);
    save_checkpoint(&checkpoint, cfg, &model, &state)?;
    Ok(TrainOutput { model, state, metrics, checkpoint })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub pattern: DropPattern,
    pub mode: ImputeMode,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// The benchmark patterns: random drops at each probability, then middle
/// spans of each length.
pub fn benchmark_patterns(cfg: &ExperimentConfig) -> Vec<DropPattern> {
    let random = cfg.eval.probs.iter().map(|&p| DropPattern::Random { p });
    let spans = cfg.eval.spans.iter().map(|&len| DropPattern::MiddleSpan { len });
    random.chain(spans).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Mean pixel error over the missing frames of each episode, for every
/// pattern and mode. All three modes see the same mask. Patterns that
/// hide nothing give no rows.
pub fn evaluate(
    model: &KvaeModel,
    seqs: &[Sequence],
    patterns: &[DropPattern],
    prefix: usize,
    seed: u64,
    sample_predictive: bool,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (pi, pattern) in patterns.iter().enumerate() {
        let per_episode: Vec<Option<[f64; 3]>> = seqs
            .par_iter()
            .enumerate()
            .map(|(e, seq)| -> Result<Option<[f64; 3]>> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[EVAL, pi as u64, e as u64]));
                let mask = pattern.mask(seq.steps(), prefix, &mut rng)?;
                if mask.all() {
                    return Ok(None);
                }
                let mut errs = [0.0; 3];
                for (slot, mode) in ImputeMode::ALL.into_iter().enumerate() {
                    let opts = ImputeOptions { mode, sample_predictive, generate_prefix: prefix, ..ImputeOptions::default() };
                    let res = impute(model, seq, &mask, &opts, &mut rng)?;
                    let err = pixel_error(&res.x_hat, &seq.frames, &mask)?;
                    errs[slot] = err.mean.expect("mask hides at least one frame");
                }
                Ok(Some(errs))
            })
            .collect::<Result<_>>()?;
        let scored: Vec<[f64; 3]> = per_episode.into_iter().flatten().collect();
        if scored.is_empty() {
            let (kind, param) = pattern.label();
            warn!("pattern {kind} {param} hides no frames; row omitted");
            continue;
        }
        for (slot, mode) in ImputeMode::ALL.into_iter().enumerate() {
            let xs: Vec<f64> = scored.iter().map(|e| e[slot]).collect();
            let (mean, std) = mean_std(&xs);
            rows.push(EvalRow { pattern: *pattern, mode, mean, std, n: xs.len() });
        }
    }
    Ok(rows)
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut text = format!("# {IMPUTATION_SCHEMA}\n{}\n", IMPUTATION_COLUMNS.join(","));
    for r in rows {
        let (kind, param) = r.pattern.label();
        let _ = writeln!(text, "{kind},{param},{},{},{},{}", r.mode, r.mean, r.std, r.n);
    }
    fs::write(path, text).map_err(HarnessError::io(path))
}

/// Scores the configured benchmark on `<data>/test.kvd` and writes
/// `<out>/imputation.csv`.
pub fn eval_impute(cfg: &ExperimentConfig, model: &KvaeModel, data: &Path, out: &Path) -> Result<Vec<EvalRow>> {
    write_config(cfg, out)?;
    let (_, mut seqs) = load_sequences(cfg, &data.join(TEST_FILE))?;
    if cfg.eval.episodes > 0 {
        seqs.truncate(cfg.eval.episodes);
    }
    let rows = evaluate(model, &seqs, &benchmark_patterns(cfg), cfg.eval.prefix, cfg.seed, cfg.eval.sample_predictive)?;
    write_eval_csv(&out.join(IMPUTATION_FILE), &rows)?;
    Ok(rows)
}

/// Mixture weights for a single step from the initial recurrent state,
/// over a regular grid of previous encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid {
    pub n: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub k: usize,
    /// `n * n * k`; grid row `i` holds `a_2 = hi - i * step` so the image
    /// has `a_2` increasing upwards, column `j` holds `a_1 = lo + j * step`.
    pub alpha: Vec<f64>,
}

impl AlphaGrid {
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let s = |d: usize| (self.hi[d] - self.lo[d]) / (self.n - 1) as f64;
        [self.lo[0] + j as f64 * s(0), self.hi[1] - i as f64 * s(1)]
    }

    pub fn weights(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.n + j) * self.k;
        &self.alpha[at..at + self.k]
    }

    /// Index of the largest weight at each grid point, row-major.
    pub fn argmax(&self) -> Vec<usize> {
        self.alpha
            .chunks(self.k)
            .map(|w| w.iter().enumerate().fold(0, |best, (k, &v)| if v > w[best] { k } else { best }))
            .collect()
    }
}

pub fn alpha_grid(model: &KvaeModel, lo: [f64; 2], hi: [f64; 2], n: usize) -> Result<AlphaGrid> {
    if model.config.a_dim != 2 || n < 2 {
        return Err(HarnessError::Config("the α grid needs a 2-d encoding and at least 2 points per side".into()));
    }
    let k = model.config.k;
    let mut grid = AlphaGrid { n, lo, hi, k, alpha: Vec::with_capacity(n * n * k) };
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape)?;
    for i in 0..n {
        for j in 0..n {
            let a = tape.constant(Tensor::row(grid.point(i, j).to_vec()))?;
            let state = model.alpha.initial_state(&tape)?;
            let (alpha, _) = model.alpha.alpha_step(&p, a, state).map_err(HarnessError::from)?;
            grid.alpha.extend_from_slice(alpha.value().data());
        }
    }
    Ok(grid)
}

fn bounding_box(points: &Tensor, margin: f64) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in 0..points.rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(points.get(r, d));
            hi[d] = hi[d].max(points.get(r, d));
        }
    }
    for d in 0..2 {
        let pad = ((hi[d] - lo[d]) * margin).max(1e-3);
        lo[d] -= pad;
        hi[d] += pad;
    }
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct ExportOutput {
    pub files: Vec<PathBuf>,
    pub grid: Option<AlphaGrid>,
}

fn frame_tiles(x: &Tensor) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|t| x.row_slice(t).to_vec()).collect()
}

/// Per-episode trajectory CSVs and frame stacks, plus α heatmaps over the
/// bounding box of the exported encodings.
pub fn export_latents(
    cfg: &ExperimentConfig,
    model: &KvaeModel,
    data: &Path,
    episodes: &[usize],
    out: &Path,
) -> Result<ExportOutput> {
    write_config(cfg, out)?;
    let (_, seqs) = load_sequences(cfg, &data.join(TEST_FILE))?;
    if let Some(&bad) = episodes.iter().find(|&&e| e >= seqs.len()) {
        return Err(HarnessError::Config(format!("episode {bad} is out of range; the test set has {}", seqs.len())));
    }
    let (m, k) = (model.config.a_dim, model.config.k);
    let (h, w) = (cfg.world.height, cfg.world.width);
    let mut files = Vec::new();
    let mut encodings = Vec::new();
    for &e in episodes {
        let seq = &seqs[e];
        let steps = seq.steps();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[EXPORT, e as u64]));
        let all = ObservationMask::all_observed(steps);
        let enc = impute(model, seq, &all, &ImputeOptions::mode(ImputeMode::Filter), &mut rng)?;
        let gen_opts = ImputeOptions { generate_prefix: cfg.eval.prefix, ..ImputeOptions::mode(ImputeMode::Generate) };
        let gen = impute(model, seq, &all, &gen_opts, &mut rng)?;
        let mask = cfg.export.drop.mask(steps, cfg.eval.prefix, &mut rng)?;
        let smooth = impute(model, seq, &mask, &ImputeOptions::mode(ImputeMode::Smooth), &mut rng)?;

        let mut header: Vec<String> = vec!["t".into(), "observed".into()];
        for part in ["enc", "gen", "smooth"] {
            header.extend((1..=m).map(|d| format!("{part}_a{d}")));
        }
        header.extend((1..=k).map(|j| format!("alpha{j}")));
        let mut text = format!("{}\n", header.join(","));
        for t in 0..steps {
            let mut row = vec![t.to_string(), u8::from(mask.is_observed(t)).to_string()];
            for a in [&enc.a_hat, &gen.a_hat, &smooth.a_hat] {
                row.extend(a.row_slice(t).iter().map(f64::to_string));
            }
            row.extend(smooth.alpha.row_slice(t).iter().map(f64::to_string));
            let _ = writeln!(text, "{}", row.join(","));
        }
        let csv = out.join(format!("latents-{e:04}.csv"));
        fs::write(&csv, text).map_err(HarnessError::io(&csv))?;
        files.push(csv);

        // Rows: ground truth, smoothed reconstruction, generation.
        let mut tiles = frame_tiles(&seq.frames);
        tiles.extend(frame_tiles(&smooth.x_hat));
        tiles.extend(frame_tiles(&gen.x_hat));
        let (tw, th, px) = tile(&tiles, h, w, steps, 0.5);
        let pgm = out.join(format!("frames-{e:04}.pgm"));
        write_pgm(&pgm, tw, th, &px)?;
        files.push(pgm);
        encodings.push(enc.a_hat);
    }
    let grid = if m == 2 && !encodings.is_empty() {
        let data: Vec<f64> = encodings.iter().flat_map(|a| a.data().iter().copied()).collect();
        let stacked = Tensor::matrix(data.len() / 2, 2, data)?;
        let (lo, hi) = bounding_box(&stacked, cfg.export.grid_margin);
        let grid = alpha_grid(model, lo, hi, cfg.export.grid)?;
        let n = grid.n;
        let argmax = grid.argmax();
        let mut text = String::from("i,j,a1,a2,");
        text.push_str(&(1..=k).map(|j| format!("alpha{j}")).collect::<Vec<_>>().join(","));
        text.push_str(",argmax\n");
        for i in 0..n {
            for j in 0..n {
                let [a1, a2] = grid.point(i, j);
                let ws: Vec<String> = grid.weights(i, j).iter().map(f64::to_string).collect();
                let _ = writeln!(text, "{i},{j},{a1},{a2},{},{}", ws.join(","), argmax[i * n + j]);
            }
        }
        let csv = out.join("alpha-grid.csv");
        fs::write(&csv, text).map_err(HarnessError::io(&csv))?;
        files.push(csv);
        for c in 0..k {
            let px: Vec<f64> = grid.alpha.chunks(k).map(|w| w[c]).collect();
            let pgm = out.join(format!("alpha-{}.pgm", c + 1));
            write_pgm(&pgm, n, n, &px)?;
            files.push(pgm);
        }
        Some(grid)
    } else {
        if m != 2 {
            warn!("α heatmaps need a 2-d encoding; skipped");
        }
        None
    };
    Ok(ExportOutput { files, grid })
}

/// Samples `count` videos. With `prefix > 0` each one continues the first
/// frames of a test episode; controls, when the world has them, come from
/// the test episodes too.
pub fn generate_videos(
    cfg: &ExperimentConfig,
    model: &KvaeModel,
    data: Option<&Path>,
    count: usize,
    steps: usize,
    prefix: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    write_config(cfg, out)?;
    let needs_data = prefix > 0 || cfg.world.u_dim() > 0;
    let seqs = match data {
        Some(dir) if needs_data => load_sequences(cfg, &dir.join(TEST_FILE))?.1,
        None if needs_data => return Err(HarnessError::Config("seed frames or controls need a test dataset".into())),
        _ => Vec::new(),
    };
    if needs_data && (seqs.len() < count || steps > cfg.world.steps) {
        return Err(HarnessError::Config(format!(
            "need {count} test episodes of at least {steps} steps, have {} of {}",
            seqs.len(),
            cfg.world.steps
        )));
    }
    let (h, w) = (cfg.world.height, cfg.world.width);
    let mut files = Vec::new();
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[GENERATE, i as u64]));
        let seed_frames = (prefix > 0).then(|| rows(&seqs[i].frames, prefix));
        let controls = seqs.get(i).and_then(|s| s.controls.as_ref()).map(|u| rows(u, steps));
        let opts = GenerateOptions { sample: true, binarize: true };
        let g = generate(model, steps, controls.as_ref(), seed_frames.as_ref(), &mut rng, opts)?;
        let (tw, th, px) = tile(&frame_tiles(&g.frames), h, w, steps, 0.5);
        let pgm = out.join(format!("generated-{i:04}.pgm"));
        write_pgm(&pgm, tw, th, &px)?;
        let mut text = String::from("t,");
        let mut cols: Vec<String> = (1..=model.config.a_dim).map(|d| format!("a{d}")).collect();
        cols.extend((1..=model.config.k).map(|j| format!("alpha{j}")));
        text.push_str(&cols.join(","));
        text.push('\n');
        for t in 0..steps {
            let vals: Vec<String> = g.a.row_slice(t).iter().chain(g.alpha.row_slice(t)).map(f64::to_string).collect();
            let _ = writeln!(text, "{t},{}", vals.join(","));
        }
        let csv = out.join(format!("generated-{i:04}.csv"));
        fs::write(&csv, text).map_err(HarnessError::io(&csv))?;
        files.extend([pgm, csv]);
    }
    Ok(files)
}

fn rows(x: &Tensor, n: usize) -> Tensor {
    Tensor::matrix(n, x.cols(), x.data()[..n * x.cols()].to_vec()).expect("row prefix")
}
