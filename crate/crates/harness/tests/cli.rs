use std::path::Path;
use std::process::{Command, Output};

use lpvreduce::{AffineLpvModel, ParameterBox, TimeKind};
use lpvreduce_harness::generate::{generate_random_model, RandomModelConfig};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpvreduce"))
        .args(args)
        .env("LPVREDUCE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn save_small(dir: &TempDir) -> String {
    let cfg = RandomModelConfig { n: 4, l: 2, ..RandomModelConfig::default() };
    let file = path(dir, "small.json");
    generate_random_model(3, &cfg).unwrap().save(&file).unwrap();
    file
}

fn save_unstable(dir: &TempDir) -> String {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let model = AffineLpvModel::new(
        vec![one(0.5), one(0.1)],
        vec![one(1.0), one(0.0)],
        vec![one(1.0), one(0.0)],
        vec![one(0.0), one(0.0)],
        ParameterBox::unit(1),
        TimeKind::Continuous,
    )
    .unwrap();
    let file = path(dir, "unstable.json");
    model.save(&file).unwrap();
    file
}

#[test]
fn generation_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (path(&dir, "a.json"), path(&dir, "b.json"), path(&dir, "c.json"));
    for (file, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let out = run(&["gen", "thermal", "--seed", seed, "--out", file]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &str| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let model = AffineLpvModel::load(Path::new(&a)).unwrap();
    assert_eq!((model.n_states(), model.n_params(), model.n_inputs(), model.n_outputs()), (45, 5, 2, 2));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["gen", "bogus", "--out", &path(&dir, "x.json")])), 1);
    assert_eq!(code(&run(&["eval", &path(&dir, "missing.json"), "--norm", "pinf-hinf"])), 1);
    let small = save_small(&dir);
    let out = run(&["reduce", &small, "--method", "hankel", "--nr", "1", "--out", &path(&dir, "p.json")]);
    assert_eq!(code(&out), 1, "hankel without Gramians is a usage error");
}

#[test]
fn unstable_models_are_numerical_failures() {
    let dir = TempDir::new().unwrap();
    let unstable = save_unstable(&dir);
    assert_eq!(code(&run(&["eval", &unstable, "--norm", "pinf-hinf", "--samples", "4"])), 2);
}

#[test]
fn infeasible_lmis_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let unstable = save_unstable(&dir);
    let out = run(&["gramians", &unstable, "--out", &path(&dir, "g")]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reduce_then_simulate_writes_error_columns() {
    let dir = TempDir::new().unwrap();
    let small = save_small(&dir);
    let proj = path(&dir, "proj.json");
    let out = run(&["reduce", &small, "--method", "tscm", "--nr", "1", "--out", &proj]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let spec = path(&dir, "spec.json");
    std::fs::write(
        &spec,
        r#"{"segments":[{"value":[1.0,-0.5],"duration":2.0}],"t_final":4.0,"step":0.01,"theta":{"random":{"seed":1}}}"#,
    )
    .unwrap();
    let csv = path(&dir, "trace.csv");
    let out = run(&["simulate", &small, "--spec", &spec, "--csv", &csv, "--projection", &proj]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,u1,u2,y1,y2,e1,e2");
    assert_eq!(lines.count(), 401);

    let out = run(&["eval", &small, "--norm", "pinf-hinf", "--samples", "8", "--projection", &proj]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_report_and_csv() {
    let dir = TempDir::new().unwrap();
    let small = save_small(&dir);
    let prefix = path(&dir, "g");
    let out = run(&["gramians", &small, "--out", &prefix]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = path(&dir, "report.json");
    let csv_dir = path(&dir, "csv");
    let out = run(&[
        "sweep", &small, "--nr", "0..2", "--gramians", &prefix, "--csv-dir", &csv_dir, "--report", &report,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 12);
    assert!(dir.path().join("csv/relative_error.csv").exists());
}
