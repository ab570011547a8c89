//! Acceptance suite, run as a plain binary so its report is never
//! captured. Every criterion prints one PASS/FAIL line; the process exits
//! non-zero if any of them fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kvae_autodiff::Tensor;
use kvae_core::dynparam::AlphaVariant;
use kvae_core::imputation::{impute, ImputeMode, ImputeOptions};
use kvae_core::kvae::{episode_gradients, ElboNoise, KvaeModel, MaskedOptions, ModelConfig, Sequence};
use kvae_core::lgssm::{NoiseScales, ObservationMask, TimeVaryingParams};
use kvae_core::oracle::{elbo_gradient_probes, elbo_value, linear_toy_elbo, DenseJoint};
use kvae_core::vae::Likelihood;
use kvae_harness::commands::{self, alpha_grid, evaluate, EvalRow, TEST_FILE, TRAIN_FILE};
use kvae_harness::{DropPattern, ExperimentConfig};
use kvae_worldgen::{simulate_trace, WorldKind, WorldSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = rng.random_range(1..=6);
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let u_dim = rng.random_range(0..=1);
        let mut params = TimeVaryingParams { a: vec![], b: vec![], c: vec![] };
        for _ in 0..steps {
            params.a.push(randn(&mut rng, n, n, 0.6 / (n as f64).sqrt()));
            params.c.push(randn(&mut rng, m, n, 1.0));
            if u_dim > 0 {
                params.b.push(randn(&mut rng, n, u_dim, 0.5));
            }
        }
        let noise = NoiseScales {
            q: rng.random_range(0.05..1.0),
            r: rng.random_range(0.05..1.0),
            sigma0: rng.random_range(0.5..3.0),
        };
        let mask = ObservationMask::new((0..steps).map(|_| rng.random_bool(0.75)).collect());
        let a = randn(&mut rng, steps, m, 1.0);
        let u = (u_dim > 0).then(|| randn(&mut rng, steps, u_dim, 1.0));
        let res = params.filter_smooth(&a, u.as_ref(), &mask, noise).map_err(|e| e.to_string())?;
        let dense = DenseJoint::new(&params, u.as_ref(), noise);
        for t in 0..steps {
            let (fm, fc) = dense.filtered(t, &mask, &a);
            let (sm, sc) = dense.smoothed(t, &mask, &a);
            worst = worst
                .max(res.filtered.means[t].max_abs_diff(&fm))
                .max(res.filtered.covs[t].max_abs_diff(&fc))
                .max(res.smoothed.means[t].max_abs_diff(&sm))
                .max(res.smoothed.covs[t].max_abs_diff(&sc));
        }
        worst = worst.max((res.log_lik - dense.log_lik(&mask, &a)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-8 && secs < 5.0, format!("200 instances, max abs error {worst:.2e}, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        a_dim: 1,
        z_dim: 2,
        k: 2,
        height: 2,
        width: 2,
        lstm_hidden: 3,
        alpha_mlp_hidden: vec![4],
        fifo_window: 2,
        vae_hidden: vec![3],
        init_scale: 0.5,
        init_noise: NoiseScales { q: 0.3, r: 0.2, sigma0: 2.0 },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut total, mut bad, mut worst) = (0, 0, 0.0f64);
    for variant in [AlphaVariant::Lstm, AlphaVariant::Mlp, AlphaVariant::FifoMlp] {
        let mut model = KvaeModel::new(ModelConfig { alpha: variant, ..config.clone() }, 21).unwrap();
        // move ReLU units off their kinks so central differences are valid
        for p in model.params.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let data = (0..12).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let seq = Sequence::new(Tensor::matrix(3, 4, data).unwrap(), None);
        let noise = ElboNoise::draw(&mut rng, 3, 1, 2);
        let probes = elbo_gradient_probes(&model, &seq, None, &noise, 0.3, 1e-5).map_err(|e| e.to_string())?;
        let expected: usize = model.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum();
        if probes.len() != expected {
            return Err(format!("{} probes for {expected} parameters", probes.len()));
        }
        for pr in &probes {
            total += 1;
            worst = worst.max(pr.rel_err());
            bad += usize::from(pr.rel_err() >= 1e-4);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad == 0 && secs < 30.0,
        format!("{total} coordinates over 3 α networks, {bad} above 1e-4, worst {worst:.2e}, {secs:.2} s"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        a_dim: 1,
        z_dim: 1,
        k: 2,
        height: 1,
        width: 1,
        alpha: AlphaVariant::Mlp,
        alpha_mlp_hidden: vec![3],
        vae_hidden: vec![],
        likelihood: Likelihood::Gaussian,
        init_scale: 0.8,
        init_noise: NoiseScales { q: 0.5, r: 0.3, sigma0: 1.5 },
        ..ModelConfig::default()
    };
    let mut model = KvaeModel::new(config, 3).unwrap();
    model.params.value_mut("vae.enc.l0.b").unwrap().data_mut()[1] = -1.0;
    let frames = Tensor::matrix(2, 1, vec![0.7, -0.4]).unwrap();
    let exact = linear_toy_elbo(&model, &frames, 40).map_err(|e| e.to_string())?;
    let seq = Sequence::new(frames, None);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let noise = ElboNoise::draw(&mut rng, 2, 1, 1);
            elbo_value(&model, &seq, None, &noise, 1.0).unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let secs = start.elapsed().as_secs_f64();
    check(
        (mean - exact).abs() < 3.0 * se && secs < 60.0,
        format!("mean {mean:.5} vs quadrature {exact:.5}, {:.2} SE, {secs:.2} s", (mean - exact).abs() / se),
    )
}

fn row(rows: &[EvalRow], pattern: DropPattern, mode: ImputeMode) -> f64 {
    rows.iter().find(|r| r.pattern == pattern && r.mode == mode).map(|r| r.mean).unwrap_or(f64::NAN)
}

fn benchmark() -> Vec<DropPattern> {
    let mut v: Vec<DropPattern> = [0.2, 0.5, 0.8].iter().map(|&p| DropPattern::Random { p }).collect();
    v.extend([4, 8].iter().map(|&len| DropPattern::MiddleSpan { len }));
    v
}

/// Shared desk-scale state: the box dataset, the trained models and
/// their benchmark scores.
struct Desk {
    dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    test: Vec<Sequence>,
    full: Option<(KvaeModel, Vec<EvalRow>, f64)>,
}

impl Desk {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset("desk").unwrap();
        commands::gen_data(&cfg, dir.path()).unwrap();
        let (_, test) = commands::load_sequences(&cfg, &dir.path().join(TEST_FILE)).unwrap();
        Desk { dir, cfg, test, full: None }
    }

    fn train(&self, cfg: &ExperimentConfig, name: &str) -> KvaeModel {
        let out = self.dir.path().join(name);
        commands::train(cfg, self.dir.path(), &out, None).unwrap().model
    }

    fn score(&self, model: &KvaeModel) -> Vec<EvalRow> {
        evaluate(model, &self.test, &benchmark(), self.cfg.eval.prefix, self.cfg.seed, false).unwrap()
    }
}

fn criterion_4(desk: &mut Desk) -> Outcome {
    let start = Instant::now();
    let model = desk.train(&desk.cfg.clone(), "full");
    let rows = desk.score(&model);
    let secs = start.elapsed().as_secs_f64();
    let mut ok = secs < 1800.0;
    let mut parts = Vec::new();
    for pattern in benchmark() {
        let (f, s, g) = (
            row(&rows, pattern, ImputeMode::Filter),
            row(&rows, pattern, ImputeMode::Smooth),
            row(&rows, pattern, ImputeMode::Generate),
        );
        ok &= s <= f && f <= g;
        parts.push(format!("{pattern} s/f/g {s:.4}/{f:.4}/{g:.4}"));
    }
    let p8 = DropPattern::Random { p: 0.8 };
    let gain = 1.0 - row(&rows, p8, ImputeMode::Smooth) / row(&rows, p8, ImputeMode::Generate);
    ok &= gain >= 0.2;
    desk.full = Some((model, rows, secs));
    check(
        ok,
        format!("{}; smooth vs generate at p=0.8 {:.1}% better; {secs:.0} s", parts.join(", "), 100.0 * gain),
    )
}

fn criterion_5(desk: &Desk) -> Outcome {
    let (_, full_rows, _) = desk.full.as_ref().ok_or("needs the fully observed model from criterion 4")?;
    let cfg = ExperimentConfig::preset("desk,missing40").unwrap();
    let model = desk.train(&cfg, "missing40");
    let rows = desk.score(&model);
    let mut ok = true;
    let mut parts = Vec::new();
    for pattern in benchmark() {
        let full = row(full_rows, pattern, ImputeMode::Smooth);
        let masked = row(&rows, pattern, ImputeMode::Smooth);
        let degradation = masked / full - 1.0;
        ok &= degradation < 0.5;
        parts.push(format!("{pattern} smooth {masked:.4} vs {full:.4} ({:+.1}%)", 100.0 * degradation));
        if let DropPattern::MiddleSpan { .. } = pattern {
            let filter_full = row(full_rows, pattern, ImputeMode::Filter);
            ok &= masked < filter_full;
            parts.push(format!("{pattern} beats full-training filter {filter_full:.4}"));
        }
    }
    check(ok, parts.join(", "))
}

fn criterion_6(desk: &Desk) -> Outcome {
    let mut cfg = desk.cfg.clone();
    cfg.model.alpha = AlphaVariant::Mlp;
    let model = desk.train(&cfg, "mlp");
    // grid over the bounding box of the test encodings
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seq in desk.test.iter().take(200) {
        let all = ObservationMask::all_observed(seq.steps());
        let res = impute(&model, seq, &all, &ImputeOptions::mode(ImputeMode::Filter), &mut rng).unwrap();
        for t in 0..seq.steps() {
            for d in 0..2 {
                lo[d] = lo[d].min(res.a_hat.get(t, d));
                hi[d] = hi[d].max(res.a_hat.get(t, d));
            }
        }
    }
    let grid = alpha_grid(&model, lo, hi, 64).map_err(|e| e.to_string())?;
    let simplex = grid
        .alpha
        .chunks(grid.k)
        .map(|w| (w.iter().sum::<f64>() - 1.0).abs().max(if w.iter().all(|&v| v >= 0.0) { 0.0 } else { f64::INFINITY }))
        .fold(0.0, f64::max);
    let mut regions = grid.argmax();
    let counts: Vec<usize> = (0..grid.k).map(|k| regions.iter().filter(|&&r| r == k).count()).collect();
    regions.sort_unstable();
    regions.dedup();
    check(
        regions.len() >= 2 && simplex <= 1e-12,
        format!("{} argmax regions on a 64x64 grid (counts {counts:?}), simplex error {simplex:.1e}", regions.len()),
    )
}

fn criterion_7() -> Outcome {
    let spec = WorldSpec::new(WorldKind::Box);
    let episodes = kvae_worldgen::simulate(&spec, 100, 7, 0).map_err(|e| e.to_string())?;
    let variants = [AlphaVariant::Lstm, AlphaVariant::Mlp, AlphaVariant::FifoMlp];
    let models: Vec<KvaeModel> = variants
        .iter()
        .map(|&alpha| KvaeModel::new(ModelConfig { alpha, ..ModelConfig::default() }, 5).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for (i, e) in episodes.iter().enumerate() {
        let model = &models[i % 3];
        let seq = commands::episode_sequence(e);
        let noise = ElboNoise::draw(&mut rng, seq.steps(), model.config.a_dim, model.config.z_dim);
        let all = ObservationMask::all_observed(seq.steps());
        let opts = MaskedOptions::default();
        let (a, ga) = episode_gradients(model, &seq, None, &noise, 0.3, opts).map_err(|e| e.to_string())?;
        let (b, gb) = episode_gradients(model, &seq, Some(&all), &noise, 0.3, opts).map_err(|e| e.to_string())?;
        let same_values = [
            (a.recon, b.recon),
            (a.lgssm_joint, b.lgssm_joint),
            (a.entropy_q, b.entropy_q),
            (a.neg_post, b.neg_post),
            (a.total, b.total),
            (a.weighted, b.weighted),
        ]
        .iter()
        .all(|(x, y)| x.to_bits() == y.to_bits());
        let same_grads = ga.len() == gb.len()
            && ga.iter().zip(&gb).all(|((na, ta), (nb, tb))| {
                na == nb && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        mismatches += usize::from(!(same_values && same_grads));
    }
    check(mismatches == 0, format!("100 box episodes over 3 α networks, {mismatches} differ in value or gradient bits"))
}

fn digest(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kvae"))
        .args(args)
        .env("KVAE_THREADS", threads)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.txt");
    std::fs::write(
        &config,
        "preset = smoke\ndata.n_train = 48\ndata.n_test = 8\ntrain.epochs = 3\ntrain.batch_size = 16\n\
         model.vae_hidden = 32\nmodel.lstm_hidden = 8\ntrain.drop = random:0.3\n",
    )
    .unwrap();
    let mut hashes = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(run);
        let out_s = out.to_str().unwrap();
        let cfg_s = config.to_str().unwrap();
        run_cli(&["gen-data", "--config", cfg_s, "--seed", "42", "--out", out_s], threads)?;
        run_cli(&["train", "--config", cfg_s, "--seed", "42", "--out", out_s], threads)?;
        hashes.push(
            [TRAIN_FILE, TEST_FILE, commands::METRICS_FILE, commands::MODEL_FILE].map(|f| digest(&out.join(f))),
        );
    }
    check(
        hashes[0] == hashes[1],
        format!("datasets, metrics.csv and model.ckpt {} across reruns", if hashes[0] == hashes[1] { "identical" } else { "differ" }),
    )
}

fn criterion_9() -> Outcome {
    let box_spec = WorldSpec::new(WorldKind::Box);
    let mut speed_err: f64 = 0.0;
    for i in 0..1000 {
        let tr = simulate_trace(&box_spec, &mut ChaCha8Rng::seed_from_u64(i)).map_err(|e| e.to_string())?;
        let s0 = tr.velocities[0][0].hypot(tr.velocities[0][1]);
        for v in &tr.velocities {
            speed_err = speed_err.max((v[0].hypot(v[1]) - s0).abs());
        }
    }
    let grav = WorldSpec::new(WorldKind::Gravity);
    let g = grav.gravity[1];
    let (mut accel_err, mut checked): (f64, usize) = (0.0, 0);
    for i in 0..1000 {
        let tr = simulate_trace(&grav, &mut ChaCha8Rng::seed_from_u64(i)).map_err(|e| e.to_string())?;
        for t in 1..tr.positions.len() - 1 {
            if tr.contacts[t] || tr.contacts[t + 1] {
                continue;
            }
            let d2 = tr.positions[t + 1][1] - 2.0 * tr.positions[t][1] + tr.positions[t - 1][1];
            accel_err = accel_err.max((d2 - g).abs());
            checked += 1;
        }
    }
    check(
        speed_err < 1e-9 && accel_err < 1e-9 && checked > 0,
        format!("box speed drift {speed_err:.1e} over 1000 episodes; gravity acceleration error {accel_err:.1e} over {checked} free steps"),
    )
}

fn main() {
    let mut desk: Option<Desk> = None;
    let mut results = Vec::new();
    for n in 1..=9 {
        let outcome = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(desk.get_or_insert_with(Desk::new)),
            5 => criterion_5(desk.get_or_insert_with(Desk::new)),
            6 => criterion_6(desk.get_or_insert_with(Desk::new)),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => criterion_9(),
        }))
        .unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let line = match &outcome {
            Ok(d) => format!("criterion {n}: PASS {d}"),
            Err(d) => format!("criterion {n}: FAIL {d}"),
        };
        println!("{line}");
        results.push(outcome.is_ok());
    }
    let failed: Vec<usize> = (1..=9).filter(|&n| !results[n - 1]).collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
