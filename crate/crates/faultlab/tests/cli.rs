//! End-to-end checks of the `faultlab` binary: exit codes, JSON summaries,
//! and the determinism contracts of the file outputs.

use std::path::Path;
use std::process::{Command, Output};

fn faultlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn json_line(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().expect("one JSON line")).expect("valid JSON")
}

// quick config: tiny blob set, 3 training epochs
fn small_train_config(seed: u64, out: &Path) -> String {
    format!(
        r#"
        seed = {seed}
        out = "{}"
        [model]
        zoo = "mlp"
        [dataset]
        zoo = "blobs"
        n = 200
        [train]
        epochs = 3
        out_model = "m"
        "#,
        out.display()
    )
}

#[test]
fn missing_dataset_section_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[model]\nzoo = \"mlp\"\n");
    let out = faultlab(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dataset"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "no_such_key = 1\n");
    let out = faultlab(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // model directory does not exist
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!(
            "[model]\npath = \"{}\"\n[dataset]\nzoo = \"blobs\"\nn = 200\n",
            dir.path().join("nope").display()
        ),
    );
    let out = faultlab(&[
        "inject",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_empty_store_writes_header_only_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.db");
    let out = faultlab(&[
        "report",
        "--store",
        store.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v = json_line(&out);
    assert_eq!(v["command"], "report");
    assert_eq!(v["accuracy_rows"], 0);
    let acc = std::fs::read_to_string(dir.path().join("report_accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 1);
    assert_eq!(
        acc.lines().next().unwrap(),
        "experiment_id,rate,min_accuracy"
    );
    let ovh = std::fs::read_to_string(dir.path().join("report_overhead.csv")).unwrap();
    assert_eq!(ovh.lines().count(), 1);
}

#[test]
fn train_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), "a.toml", &small_train_config(7, &out_a));
    let cfg_b = write_config(dir.path(), "b.toml", &small_train_config(7, &out_b));
    assert_eq!(
        faultlab(&["train", "--config", &cfg_a]).status.code(),
        Some(0)
    );
    assert_eq!(
        faultlab(&["train", "--config", &cfg_b]).status.code(),
        Some(0)
    );

    let manifest_a = std::fs::read(out_a.join("m/manifest.toml")).unwrap();
    let manifest_b = std::fs::read(out_b.join("m/manifest.toml")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    for entry in std::fs::read_dir(out_a.join("m")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(out_a.join("m").join(&name)).unwrap();
        let b = std::fs::read(out_b.join("m").join(&name)).unwrap();
        assert_eq!(a, b, "blob {name:?} differs");
    }
}

#[test]
fn empty_injection_list_reproduces_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.toml", &small_train_config(3, &out));
    let train_out = faultlab(&["train", "--config", &cfg]);
    assert_eq!(train_out.status.code(), Some(0));
    let baseline = json_line(&train_out)["baseline_accuracy"].as_f64().unwrap();

    let inject_cfg = write_config(
        dir.path(),
        "i.toml",
        &format!(
            r#"
            seed = 3
            out = "{}"
            [model]
            path = "{}"
            [dataset]
            zoo = "blobs"
            n = 200
            "#,
            out.display(),
            out.join("m").display()
        ),
    );
    let inject_out = faultlab(&["inject", "--config", &inject_cfg]);
    assert_eq!(inject_out.status.code(), Some(0), "{inject_out:?}");
    let v = json_line(&inject_out);
    assert_eq!(
        v["accuracy"].as_f64().unwrap().to_bits(),
        baseline.to_bits()
    );
    assert_eq!(v["fault_rows"], 0);
}

#[test]
fn single_weight_fault_traces_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.toml", &small_train_config(5, &out));
    assert_eq!(
        faultlab(&["train", "--config", &cfg]).status.code(),
        Some(0)
    );

    let inject_cfg = write_config(
        dir.path(),
        "i.toml",
        &format!(
            r#"
            seed = 5
            out = "{}"
            [model]
            path = "{}"
            [dataset]
            zoo = "blobs"
            n = 200
            [[injections]]
            type = "fault"
            layer = "fc1"
            target = "weight"
            site = "dense_float"
            kind = "bit_flip"
            elements = [[0, 0]]
            bits = [[31]]
            "#,
            out.display(),
            out.join("m").display()
        ),
    );
    let inject_out = faultlab(&["inject", "--config", &inject_cfg]);
    assert_eq!(inject_out.status.code(), Some(0), "{inject_out:?}");
    assert_eq!(json_line(&inject_out)["fault_rows"], 1);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.toml", &small_train_config(3, &out));
    let run = faultlab(&["train", "--config", &cfg, "--seed", "11"]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(json_line(&run)["seed"], 11);
}

#[test]
fn unknown_layer_in_injection_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.toml", &small_train_config(9, &out));
    assert_eq!(
        faultlab(&["train", "--config", &cfg]).status.code(),
        Some(0)
    );
    let inject_cfg = write_config(
        dir.path(),
        "i.toml",
        &format!(
            r#"
            out = "{}"
            [model]
            path = "{}"
            [dataset]
            zoo = "blobs"
            n = 200
            [[injections]]
            type = "fault"
            layer = "not_a_layer"
            target = "weight"
            site = "dense_float"
            kind = "bit_flip"
            elements = [[0, 0]]
            bits = [[0]]
            "#,
            out.display(),
            out.join("m").display()
        ),
    );
    let inject_out = faultlab(&["inject", "--config", &inject_cfg]);
    assert_eq!(inject_out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&inject_out.stderr).contains("not_a_layer"));
}

#[test]
fn report_after_sweep_emits_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let store = out.join("results.db");
    let cfg = write_config(dir.path(), "t.toml", &small_train_config(2, &out));
    assert_eq!(
        faultlab(&["train", "--config", &cfg]).status.code(),
        Some(0)
    );
    let sweep_cfg = write_config(
        dir.path(),
        "s.toml",
        &format!(
            r#"
            seed = 2
            out = "{}"
            [model]
            path = "{}"
            [dataset]
            zoo = "blobs"
            n = 200
            [sweep]
            target = "weight"
            site = "dense_float"
            kind = "bit_flip"
            seeds = [1]
            layers = ["fc3"]
            include_control = true
            "#,
            out.display(),
            out.join("m").display()
        ),
    );
    let sweep_out = faultlab(&["sweep", "--config", &sweep_cfg]);
    assert_eq!(sweep_out.status.code(), Some(0), "{sweep_out:?}");
    assert_eq!(json_line(&sweep_out)["cells"], 65);

    let report_out = faultlab(&[
        "report",
        "--store",
        store.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(report_out.status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("report_accuracy.csv")).unwrap();
    // train experiment contributes its baseline row; the sweep experiment
    // contributes 64 grid rates plus the rate-0 control
    let sweep_rows = text.lines().skip(1).filter(|l| l.starts_with("2,")).count();
    assert_eq!(sweep_rows, 65, "csv:\n{text}");

    // reporting is idempotent: a second run writes nothing to the store and
    // reproduces the CSV byte for byte
    let store_bytes = std::fs::read(&store).unwrap();
    let rerun = faultlab(&[
        "report",
        "--store",
        store.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(rerun.status.code(), Some(0));
    assert_eq!(std::fs::read(&store).unwrap(), store_bytes);
    assert_eq!(
        std::fs::read_to_string(out.join("report_accuracy.csv")).unwrap(),
        text
    );
}
