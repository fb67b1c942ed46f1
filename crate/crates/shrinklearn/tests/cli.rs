use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shrinklearn::dataset::{load_dataset, save_dataset};
use shrinklearn::manifest::RunManifest;
use shrinklearn::model::ModelFile;
use shrinklearn_core::backprop::batch_gradient;
use shrinklearn_core::datagen::Instance;
use shrinklearn_core::ista::{GammaPolicy, OperatorForm};
use shrinklearn_core::linalg::Matrix;
use shrinklearn_core::spline::fit_soft_threshold;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shrinklearn"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHRINKLEARN_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &[&str] = &["--n", "16", "--m", "8", "--count", "4"];

fn datagen(dir: &Path, out: &str, extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["datagen", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
    fs::read(dir.join(out)).unwrap()
}

#[test]
fn datagen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = datagen(dir.path(), "a.bin", &["--seed", "9"]);
    let b = datagen(dir.path(), "b.bin", &["--seed", "9"]);
    let c = datagen(dir.path(), "c.bin", &["--seed", "10"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let d = load_dataset(&dir.path().join("a.bin")).unwrap();
    assert_eq!(
        (d.n(), d.m(), d.instances.len(), d.master_seed),
        (16, 8, 4, 9)
    );
    let info: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a.bin.json")).unwrap()).unwrap();
    assert_eq!(info["count"], 4);
    assert_eq!(info["domain"], "dataset");
}

#[test]
fn environment_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let flagged = datagen(dir.path(), "flag.bin", &["--seed", "5"]);
    let out = Command::new(env!("CARGO_BIN_EXE_shrinklearn"))
        .args(["datagen", "--out", "env.bin", "--seed", "1"])
        .args(SMALL)
        .current_dir(dir.path())
        .env("SHRINKLEARN_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(dir.path().join("env.bin")).unwrap(), flagged);
    let m = RunManifest::load(&dir.path().join("env.bin.manifest.json")).unwrap();
    assert_eq!(m.master_seed, 5);

    let bad = Command::new(env!("CARGO_BIN_EXE_shrinklearn"))
        .args(["datagen", "--out", "x.bin"])
        .current_dir(dir.path())
        .env("SHRINKLEARN_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "[datagen]\nn = 16\nm = 8\ncount = 7\nseed = 3\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &["datagen", "--config", "run.toml", "--out", "a.bin"],
    );
    ok(
        dir.path(),
        &[
            "datagen", "--config", "run.toml", "--out", "b.bin", "--count", "2",
        ],
    );
    assert_eq!(
        load_dataset(&dir.path().join("a.bin"))
            .unwrap()
            .instances
            .len(),
        7
    );
    let b = load_dataset(&dir.path().join("b.bin")).unwrap();
    assert_eq!((b.instances.len(), b.master_seed), (2, 3));
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        run(p, &["datagen", "--out", "z.bin", "--count", "0"])
            .status
            .code(),
        Some(2)
    );
    assert!(!p.join("z.bin").exists());
    assert_eq!(run(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(p, &["train", "--data", "missing.bin", "--out", "m.json"])
            .status
            .code(),
        Some(4)
    );
    datagen(p, "d.bin", &[]);
    assert_eq!(
        run(
            p,
            &[
                "train",
                "--data",
                "d.bin",
                "--out",
                "m.json",
                "--iterations",
                "0",
                "--lambda",
                "0.1"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    let gamp = run(
        p,
        &[
            "eval",
            "--data",
            "d.bin",
            "--estimators",
            "gamp",
            "--out",
            "r.csv",
        ],
    );
    assert_eq!(gamp.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&gamp.stderr).contains("not available"));
    assert_eq!(
        run(
            p,
            &[
                "eval",
                "--data",
                "d.bin",
                "--estimators",
                "learned_ista",
                "--out",
                "r.csv"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    fs::write(p.join("junk.bin"), b"SLRN but not really").unwrap();
    assert_eq!(
        run(
            p,
            &[
                "eval",
                "--data",
                "junk.bin",
                "--estimators",
                "genie",
                "--out",
                "r.csv"
            ]
        )
        .status
        .code(),
        Some(4)
    );
}

#[test]
fn gradcheck_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--out", "g.txt"]);
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(
        line.starts_with("max_rel_err ") && line.contains(" PASS "),
        "{line}"
    );
    let err: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err <= 1e-6);
    assert_eq!(fs::read_to_string(dir.path().join("g.txt")).unwrap(), line);
}

#[test]
fn one_training_step_is_one_gradient_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "datagen", "--out", "one.bin", "--n", "16", "--m", "10", "--count", "1", "--seed", "4",
        ],
    );
    let (depth, mu) = (6, 1e-3);
    ok(
        p,
        &[
            "train",
            "--data",
            "one.bin",
            "--out",
            "m.json",
            "--lambda",
            "0.05",
            "--iterations",
            "1",
            "--depth",
            "6",
            "--grid-k",
            "60",
            "--learning-rate",
            "1e-3",
        ],
    );
    let model = ModelFile::load(&p.join("m.json")).unwrap();
    assert_eq!((model.init_lambda, model.depth), (Some(0.05), Some(depth)));
    let start = fit_soft_threshold(60, model.delta, model.init_threshold.unwrap()).unwrap();
    let data = load_dataset(&p.join("one.bin")).unwrap();
    let ex: Vec<_> = data
        .instances
        .iter()
        .map(|i| {
            i.to_example(GammaPolicy::Auto, OperatorForm::Dense)
                .unwrap()
        })
        .collect();
    assert!((model.init_threshold.unwrap() - 0.05 * ex[0].problem.gamma()).abs() < 1e-15);
    let g = batch_gradient(&ex, &start, depth).unwrap();
    assert!(g.iter().any(|v| *v != 0.0));
    for ((c, c0), gk) in model.coefficients.iter().zip(start.coefficients()).zip(&g) {
        assert!((c - (c0 - mu * gk)).abs() <= 1e-12 * (1.0 + c0.abs()));
    }
    let curve = fs::read_to_string(p.join("m.json.curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn eval_marks_exact_recovery_as_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let x = vec![0.0, 1.5, 0.0, -2.0, 0.0, 0.0, 0.25, 0.0];
    let inst = Instance {
        x_true: x.clone(),
        h: Matrix::identity(8),
        y: x,
        noise_var: 0.0,
        seed: 0,
        stream: 0,
    };
    save_dataset(&p.join("exact.bin"), 0, &[inst]).unwrap();
    ok(
        p,
        &[
            "eval",
            "--data",
            "exact.bin",
            "--estimators",
            "genie,lasso",
            "--lambda",
            "0.1",
            "--timing",
            "off",
            "--out",
            "r.csv",
        ],
    );
    let csv = fs::read_to_string(p.join("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "estimator,m_over_n,trial,snr_db,wall_ms");
    assert_eq!(rows[1], "genie,1,0,perfect,0.000");
    let lasso: Vec<&str> = rows[2].split(',').collect();
    assert_eq!(lasso[0], "lasso");
    assert!(lasso[3].parse::<f64>().unwrap().is_finite());
    let summary = fs::read_to_string(p.join("r.csv.summary.csv")).unwrap();
    assert!(summary
        .lines()
        .any(|l| l.starts_with("genie,") && l.ends_with(",0")));
}

#[test]
fn replay_reproduces_datagen() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let first = datagen(p, "d.bin", &["--seed", "77"]);
    fs::remove_file(p.join("d.bin")).unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let manifest = p.join("d.bin.manifest.json");
    let out = Command::new(env!("CARGO_BIN_EXE_shrinklearn"))
        .args(["replay", manifest.to_str().unwrap()])
        .current_dir(elsewhere.path())
        .env("SHRINKLEARN_SEED", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read(p.join("d.bin")).unwrap(), first);
}
