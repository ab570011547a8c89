use std::fs;
use std::path::Path;
use std::process::Command;

use kvae_core::imputation::{impute, ImputeMode, ImputeOptions};
use kvae_core::lgssm::ObservationMask;
use kvae_harness::commands::{self, *};
use kvae_harness::output::read_rows;
use kvae_harness::{DropPattern, ExperimentConfig, HarnessError};
use kvae_worldgen::{read_dataset, Dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: &str = "\
world.height = 16
world.width = 16
world.steps = 10
world.radius = 2
data.n_train = 24
data.n_test = 6
train.epochs = 2
train.batch_size = 8
train.warmup_epochs = 1
model.vae_hidden = 16
model.lstm_hidden = 4
eval.probs = 0.5,1
eval.spans = 0,2
export.grid = 8
";

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL).unwrap()
}

fn kvae(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kvae")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tiny_dataset_round_trips_and_config_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.n_train = 2;
    let out = gen_data(&cfg, dir.path()).unwrap();
    let ds = read_dataset(&out.train).unwrap();
    assert_eq!(ds.episodes.len(), 2);
    let bytes = fs::read(&out.train).unwrap();
    assert_eq!(Dataset::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    let saved = ExperimentConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn default_box_config_gives_full_size_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen_data(&ExperimentConfig::default(), dir.path()).unwrap();
    let train = read_dataset(&out.train).unwrap();
    let test = read_dataset(&out.test).unwrap();
    assert_eq!((train.episodes.len(), test.episodes.len()), (5000, 1000));
    assert_eq!((train.steps, train.height, train.width), (20, 32, 32));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.train_drop = DropPattern::Random { p: 0.3 };
    cfg.epochs = 3;
    cfg.checkpoint_every = 1;
    gen_data(&cfg, dir.path()).unwrap();
    let full = dir.path().join("full");
    train(&cfg, dir.path(), &full, None).unwrap();

    let part = dir.path().join("part");
    let mut short = cfg.clone();
    short.epochs = 1;
    train(&short, dir.path(), &part, None).unwrap();
    let resumed = train(&cfg, dir.path(), &part, Some(&part.join("checkpoints/epoch-0001.ckpt"))).unwrap();
    assert_eq!(resumed.metrics.len(), 2);
    assert_eq!(fs::read(full.join(METRICS_FILE)).unwrap(), fs::read(part.join(METRICS_FILE)).unwrap());
    assert_eq!(fs::read(full.join(MODEL_FILE)).unwrap(), fs::read(part.join(MODEL_FILE)).unwrap());
    assert_eq!(read_rows(&full.join(METRICS_FILE)).unwrap().len(), 3);
    assert_eq!(read_rows(&full.join(TIMING_FILE)).unwrap().len(), 3);
}

#[test]
fn metrics_log_guards_its_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    gen_data(&cfg, dir.path()).unwrap();
    let out = dir.path().join("run");
    train(&cfg, dir.path(), &out, None).unwrap();
    // a fresh run would duplicate epochs
    assert!(matches!(train(&cfg, dir.path(), &out, None), Err(HarnessError::Config(_))));
    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    fs::write(other.join(METRICS_FILE), "# kvae-metrics v0\nepoch,elbo\n").unwrap();
    assert!(matches!(train(&cfg, dir.path(), &other, None), Err(HarnessError::Config(_))));
}

#[test]
fn dataset_shape_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(&small(), dir.path()).unwrap();
    let mut cfg = small();
    cfg.world.steps = 12;
    let err = train(&cfg, dir.path(), &dir.path().join("run"), None).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "model.k = many\n").unwrap();
    assert_eq!(kvae(&["gen-data", "--config", s(&bad), "--out", s(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nothing");
    assert_eq!(kvae(&["train", "--out", s(&missing)]).status.code(), Some(2));

    let cfg = dir.path().join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    assert!(kvae(&["gen-data", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]).status.success());
    let wild = dir.path().join("wild.txt");
    fs::write(&wild, format!("{SMALL}model.init_q = 1e300\nmodel.init_sigma0 = 1e300\n")).unwrap();
    let run = dir.path().join("wild");
    let out = kvae(&["train", "--config", s(&wild), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("diagnostic.txt").exists());
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let ok = |args: &[&str]| {
        let o = kvae(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let eval = dir.path().join("eval");
    ok(&["eval-impute", "--data", s(&out), "--checkpoint", s(&out.join(MODEL_FILE)), "--out", s(&eval)]);
    let rows = read_rows(&eval.join(IMPUTATION_FILE)).unwrap();
    // span 0 hides nothing and is dropped
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().all(|r| r[0] != "span" || r[1] == "2"));
    let gen = dir.path().join("gen");
    ok(&["generate", "--out", s(&gen), "--data", s(&out), "--checkpoint", s(&out.join(MODEL_FILE)), "--count", "2", "--prefix", "3"]);
    assert!(gen.join("generated-0001.pgm").exists() && gen.join("generated-0001.csv").exists());
    let exp = dir.path().join("exp");
    ok(&["export-latents", "--data", s(&out), "--checkpoint", s(&out.join(MODEL_FILE)), "--out", s(&exp), "--episodes", "0,5"]);
    for f in ["latents-0005.csv", "frames-0000.pgm", "alpha-grid.csv", "alpha-3.pgm", CONFIG_FILE] {
        assert!(exp.join(f).exists(), "{f}");
    }
    let o = kvae(&["export-latents", "--data", s(&out), "--checkpoint", s(&out.join(MODEL_FILE)), "--out", s(&exp), "--episodes", "6"]);
    assert_eq!(o.status.code(), Some(2));
}

fn trained(dir: &Path) -> (ExperimentConfig, kvae_core::kvae::KvaeModel) {
    let cfg = small();
    gen_data(&cfg, dir).unwrap();
    let model = train(&cfg, dir, &dir.join("run"), None).unwrap().model;
    (cfg, model)
}

#[test]
fn certain_drop_makes_filter_and_generate_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, model) = trained(dir.path());
    let rows = eval_impute(&cfg, &model, dir.path(), &dir.path().join("eval")).unwrap();
    let get = |mode| rows.iter().find(|r| r.pattern == DropPattern::Random { p: 1.0 } && r.mode == mode).unwrap();
    assert_eq!(get(ImputeMode::Filter).mean, get(ImputeMode::Generate).mean);
    assert_eq!(get(ImputeMode::Filter).n, cfg.n_test);
    assert!(rows.iter().all(|r| r.pattern != DropPattern::MiddleSpan { len: 0 }));
    // reruns are identical
    let again = eval_impute(&cfg, &model, dir.path(), &dir.path().join("eval2")).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn exports_pass_encodings_through_and_heatmaps_are_simplices() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, model) = trained(dir.path());
    let exp = dir.path().join("exp");
    let out = export_latents(&cfg, &model, dir.path(), &[2], &exp).unwrap();
    let (_, test) = load_sequences(&cfg, &dir.path().join(TEST_FILE)).unwrap();
    let all = ObservationMask::all_observed(cfg.world.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let direct = impute(&model, &test[2], &all, &ImputeOptions::mode(ImputeMode::Smooth), &mut rng).unwrap();
    let text = fs::read_to_string(exp.join("latents-0002.csv")).unwrap();
    for (t, line) in text.lines().skip(1).enumerate() {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[2..4], *direct.a_hat.row_slice(t), "t {t}");
    }
    let grid = out.grid.unwrap();
    assert_eq!(grid.alpha.len(), 8 * 8 * cfg.model.k);
    for w in grid.alpha.chunks(grid.k) {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let pgm = fs::read(exp.join("alpha-1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert!(matches!(
        export_latents(&cfg, &model, dir.path(), &[99], &exp),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn benchmark_patterns_follow_the_config() {
    let cfg = ExperimentConfig::default();
    let pats = commands::benchmark_patterns(&cfg);
    assert_eq!(pats.len(), 10 + 11);
    assert_eq!(pats[0], DropPattern::Random { p: 0.1 });
    assert_eq!(pats[20], DropPattern::MiddleSpan { len: 12 });
}
