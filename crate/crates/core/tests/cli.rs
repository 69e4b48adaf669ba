use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use trase_node::cli::{run_with_args, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trase-node"))
}

fn run(args: &[&str]) -> i32 {
    run_with_args(std::iter::once("trase-node").chain(args.iter().copied()))
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_writes_files_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    let code = run(&[
        "generate",
        "--system",
        "linear",
        "--u",
        "1,2,3,4",
        "--t-end",
        "2",
        "--points",
        "21",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    for u in 1..=4 {
        assert!(out.join(format!("linear_u{u}.csv")).exists());
        assert!(out.join(format!("linear_u{u}.json")).exists());
    }
    let m = manifest(&out);
    assert_eq!(m.command, "generate");
    assert_eq!(m.outputs.len(), 8);
    assert_eq!(m.config_hash.len(), 64);
    let sc = trase_node::systems::load_scenario(&out.join("linear_u3.csv")).unwrap();
    assert_eq!(sc.u, 3.0);
    assert_eq!(sc.grid.len(), 21);
}

#[test]
fn generate_with_empty_u_list_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    assert_eq!(run(&["generate", "--out", p(&out)]), 0);
    let files: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert!(manifest(&out).outputs.is_empty());
}

#[test]
fn output_directories_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("once");
    assert_eq!(run(&["generate", "--u", "1", "--out", p(&out)]), 0);
    let before = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert_eq!(run(&["generate", "--u", "2", "--out", p(&out)]), 5);
    assert_eq!(
        fs::read_to_string(out.join("manifest.json")).unwrap(),
        before
    );
    assert!(!out.join("oscillator_u2.csv").exists());
}

fn write_train_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    assert_eq!(
        run(&[
            "generate",
            "--system",
            "oscillator",
            "--u",
            "1,1.1",
            "--t-end",
            "2",
            "--points",
            "21",
            "--out",
            p(&data)
        ]),
        0
    );
    let cfg = dir.join("train.json");
    let text = format!(
        r#"{{
  "mode": "TRASE",
  "scenarios": ["data/oscillator_u1.csv"],
  "hidden_layers": [{{"width": 8, "activation": {{"kind": "tanh"}}}}],
  "epochs": 5,
  "lr": 0.01,
  "solver": {{"method": {{"kind": "rk4", "step": 0.01}}}}{extra}
}}"#
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn train_twice_gives_identical_history_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_train_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    assert_eq!(run(&["train", "--config", p(&cfg), "--out", p(&a)]), 0);
    assert_eq!(run(&["train", "--config", p(&cfg), "--out", p(&b)]), 0);
    let ra: Value =
        serde_json::from_str(&fs::read_to_string(a.join("train_report.json")).unwrap()).unwrap();
    let rb: Value =
        serde_json::from_str(&fs::read_to_string(b.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(ra["loss_history"], rb["loss_history"]);
    assert_eq!(ra["loss_history"].as_array().unwrap().len(), 5);
    let (ma, mb) = (manifest(&a), manifest(&b));
    // the output directory is part of the resolved config
    assert_ne!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.inputs, mb.inputs);
    assert!(a.join("checkpoint.json").exists());

    // seed override changes the run and is recorded
    let c = tmp.path().join("run_c");
    assert_eq!(
        run(&["train", "--config", p(&cfg), "--out", p(&c), "--seed", "7"]),
        0
    );
    assert_eq!(manifest(&c).seed, Some(7));
    let rc: Value =
        serde_json::from_str(&fs::read_to_string(c.join("train_report.json")).unwrap()).unwrap();
    assert_ne!(ra["loss_history"], rc["loss_history"]);
}

#[test]
fn train_config_errors_exit_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_train_config(
        tmp.path(),
        r#", "loss_weights": {"state": 1, "sensitivity": -1}"#,
    );
    let out = tmp.path().join("bad");
    let status = bin()
        .args(["train", "--config", p(&cfg), "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(!out.exists());

    fs::write(&cfg, r#"{"mode": "TRASE", "epochs": "many"}"#).unwrap();
    let res = bin()
        .args(["train", "--config", p(&cfg), "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("epochs"), "{stderr}");
    assert!(!out.exists());

    assert_eq!(run(&["train", "--out", p(&out)]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(
        run(&[
            "generate",
            "--u",
            "1",
            "--solver",
            "euler:1",
            "--out",
            p(&out)
        ]),
        2
    );
    assert!(!out.exists());
}

#[test]
fn train_with_missing_scenario_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"scenarios": ["nope.csv"]}"#).unwrap();
    assert_eq!(
        run(&[
            "train",
            "--config",
            p(&cfg),
            "--out",
            p(&tmp.path().join("o"))
        ]),
        5
    );
}

#[test]
fn train_divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_train_config(
        tmp.path(),
        r#", "mode": "NODE", "lr": 10000.0, "hidden_layers": [{"width": 8, "activation": {"kind": "leaky_relu", "slope": 0.01}}]"#,
    );
    // duplicated keys: later fields win in serde_json, so patch explicitly
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replacen(r#""lr": 0.01,"#, "", 1)
        .replacen(
            r#""hidden_layers": [{"width": 8, "activation": {"kind": "tanh"}}],"#,
            "",
            1,
        )
        .replacen(r#""mode": "TRASE","#, "", 1);
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("div");
    assert_eq!(
        run(&[
            "train",
            "--config",
            p(&cfg),
            "--out",
            p(&out),
            "--epochs",
            "20"
        ]),
        4
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(rep["diverged"], Value::Bool(true));
}

#[test]
fn sweep_and_compare_paired_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_train_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["train", "--config", p(&cfg), "--out", p(&a)]), 0);
    assert_eq!(
        run(&["train", "--config", p(&cfg), "--out", p(&b), "--seed", "3"]),
        0
    );
    let ck_a = a.join("checkpoint.json");
    let ck_b = b.join("checkpoint.json");

    let sw = tmp.path().join("sweep");
    let code = run(&[
        "sweep",
        "--model",
        p(&ck_a),
        "--baseline",
        p(&ck_b),
        "--u-range",
        "0.5:2:0.5",
        "--t-end",
        "2",
        "--points",
        "21",
        "--trace-u",
        "1",
        "--svg",
        "--out",
        p(&sw),
    ]);
    assert_eq!(code, 0);
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(sw.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["u_values"].as_array().unwrap().len(), 4);
    assert_eq!(rep["models"].as_array().unwrap().len(), 2);
    assert!(sw.join("nmse_vs_u.csv").exists());
    assert!(sw.join("state_traces.csv").exists());
    assert!(sw.join("nmse_s_x.svg").exists());
    assert_eq!(manifest(&sw).inputs.len(), 2);

    let one = tmp.path().join("one");
    assert_eq!(
        run(&[
            "sweep",
            "--model",
            p(&ck_a),
            "--u",
            "2",
            "--t-end",
            "2",
            "--points",
            "21",
            "--out",
            p(&one)
        ]),
        0
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(one.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["models"][0]["per_u"].as_array().unwrap().len(), 1);

    let cmp = tmp.path().join("cmp");
    let data = tmp.path().join("data/oscillator_u1.1.csv");
    assert_eq!(
        run(&[
            "compare",
            "--model",
            p(&ck_a),
            "--baseline",
            p(&ck_b),
            "--scenarios",
            p(&data),
            "--out",
            p(&cmp)
        ]),
        0
    );
    assert!(cmp.join("report.json").exists());

    let missing = tmp.path().join("missing");
    assert_eq!(
        run(&[
            "sweep",
            "--model",
            p(&tmp.path().join("nope.json")),
            "--u",
            "1",
            "--out",
            p(&missing)
        ]),
        5
    );
}

#[test]
fn sweep_reports_blowup_as_infinity_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    // hand-written checkpoint whose field grows like e^{50 t}
    let ck = tmp.path().join("boom.json");
    fs::write(
        &ck,
        r#"{"spec": {"input_dim": 3, "output_dim": 2, "exo_dim": 0, "time_as_input": false,
             "hidden_layers": [{"width": 2, "activation": {"kind": "leaky_relu", "slope": 0.01}}],
             "input_normalization": null},
            "param_values": [1,0,1, 0,1,1, 0,0, 50,0, 0,50, 0,0]}"#,
    )
    .unwrap();
    let out = tmp.path().join("s");
    assert_eq!(
        run(&["sweep", "--model", p(&ck), "--u", "1", "--out", p(&out)]),
        0
    );
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(text.contains("\"inf\""));
}

#[test]
fn export_fixtures_writes_standard_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fx");
    assert_eq!(run(&["export-fixtures", "--out", p(&out)]), 0);
    let m = manifest(&out);
    assert_eq!(m.outputs.len(), 18);
    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ibr");
    for f in fs::read_dir(&out).unwrap() {
        let name = f.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(
            fs::read(out.join(&name)).unwrap(),
            fs::read(committed.join(&name)).unwrap(),
            "{name:?} differs from the committed fixture"
        );
    }
}

#[test]
fn help_exits_zero() {
    let res = bin().arg("--help").output().unwrap();
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    for cmd in ["generate", "train", "sweep", "compare", "export-fixtures"] {
        assert!(text.contains(cmd));
    }
}
