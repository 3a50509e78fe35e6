use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use icl_attn_lab::estimator::SweepAxis;
use icl_attn_lab::experiment::spec::{Outputs, SweepSpec};
use icl_attn_lab::experiment::{ExperimentSpec, PredictorSpec};
use icl_attn_lab::ScenarioConfig;

const HEADER: &str = "axis,value,mc_mean,mc_stderr,theory,theory_valid,z";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icl-attn-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `(value, mc_mean, theory)` per data row.
fn rows(path: &Path) -> Vec<(f64, Option<f64>, Option<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 7, "{l}");
            let num = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap());
            (f[1].parse().unwrap(), num(f[2]), num(f[4]))
        })
        .collect()
}

#[test]
fn list_presets() {
    let o = cli(&["list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in [
        "fig1",
        "fig2",
        "fig3",
        "prior-scale",
        "noisy",
        "correlated-equiv",
        "local",
        "shifted-local",
        "fit-singlehead",
        "curvature-c1",
    ] {
        assert!(text.contains(name), "{name} missing");
    }
    let o = cli(&["list", "no-such-thing"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1, "header only");
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["run", "fig9", "--out", out]).status.code(), Some(1));
    assert_eq!(cli(&["run", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(cli(&["run"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"name\": \"x\"}").unwrap();
    assert_eq!(
        cli(&["run", "--config", bad.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(1)
    );

    let file = dir.path().join("plain-file");
    fs::write(&file, "").unwrap();
    let o = cli(&[
        "run",
        "fig2",
        "--reps",
        "0",
        "--out",
        file.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fig1_theory_is_u_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "fig1",
        "--reps",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for d in [5, 10, 20] {
        let r = rows(&dir.path().join(format!("fig1-d{d}.csv")));
        let theory: Vec<f64> = r.iter().map(|x| x.2.unwrap()).collect();
        let argmin = theory
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(argmin > 0 && argmin < theory.len() - 1, "d={d}: {theory:?}");
        assert!(dir.path().join(format!("fig1-d{d}.json")).exists());
        assert!(dir.path().join(format!("fig1-d{d}.svg")).exists());
    }
}

#[test]
fn fig3_multi_head_beats_single_head() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "fig3",
        "--reps",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r = rows(&dir.path().join("fig3.csv"));
    let at_one = r
        .iter()
        .find(|x| (x.0 - 1.0).abs() < 1e-12)
        .unwrap()
        .2
        .unwrap();
    let best = r.iter().filter_map(|x| x.2).fold(f64::INFINITY, f64::min);
    assert!(best < at_one);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fig3.json")).unwrap()).unwrap();
    let c_star = meta["analysis"]["c_star"].as_f64().unwrap();
    assert!(c_star > 0.0 && c_star < 1.0);
}

#[test]
fn shifted_local_final_row_near_limit() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "shifted-local",
        "--v",
        "3",
        "--sigma-x2",
        "1",
        "--D",
        "5000",
        "--reps",
        "4000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = rows(&dir.path().join("shifted-local.csv"));
    let last = r.last().unwrap();
    assert_eq!(last.0, 5000.0);
    assert!((last.1.unwrap() - 9.0).abs() <= 0.9);
}

#[test]
fn failing_gate_exits_2() {
    // A two-row fit that cannot get close in a handful of steps.
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        name: "short-fit".into(),
        config: ScenarioConfig::base(2, 50).unwrap(),
        predictor: PredictorSpec::Fit {
            v: 3.0,
            lr: 0.001,
            steps: 5,
            batch: 4,
            init_scale: 0.0,
        },
        sweep: SweepSpec {
            axis: SweepAxis::PromptLen,
            values: vec![50.0],
        },
        n_reps: 0,
        master_seed: 1,
        whiten: false,
        gate: Some(icl_attn_lab::experiment::Gate::FitDistance {
            max: 0.01,
            rows: icl_attn_lab::experiment::GateRows::All,
        }),
        analysis: None,
        outputs: Outputs::default(),
    };
    let path = dir.path().join("spec.json");
    fs::write(&path, spec.to_json().unwrap()).unwrap();
    let o = cli(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        name: "cfg".into(),
        config: ScenarioConfig::base(3, 100).unwrap(),
        predictor: PredictorSpec::TwoHead { v: 3.0, c: 0.5 },
        sweep: SweepSpec {
            axis: SweepAxis::C,
            values: vec![0.3, 0.6, 1.0],
        },
        n_reps: 500,
        master_seed: 42,
        whiten: false,
        gate: None,
        analysis: None,
        outputs: Outputs {
            plot: false,
            ..Outputs::default()
        },
    };
    let path = dir.path().join("spec.json");
    fs::write(&path, spec.to_json().unwrap()).unwrap();
    let run = |sub: &str, workers: &str| {
        let out = dir.path().join(sub);
        let o = cli(&[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.join("cfg.svg").exists());
        fs::read(out.join("cfg.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_eq!(a, b);
    let r = rows(&dir.path().join("a/cfg.csv"));
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|x| x.1.is_some() && x.2.is_some()));
}

#[test]
fn seed_and_reps_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&["run", "noisy", "--reps", "300", "--seed", "9", "--out", out]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("noisy.json")).unwrap()).unwrap();
    assert_eq!(meta["master_seed"], 9);
    assert_eq!(meta["n_reps"], 300);
    assert!(meta["timestamp_unix"].as_u64().is_some());
}
