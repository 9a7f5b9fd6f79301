use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tlstm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlstm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A tiny addition run: 2D tLSTM, P=2, M=4, six iterations.
fn small_config(dir: &Path, out: &str, extra: Value) -> std::path::PathBuf {
    let mut doc = json!({
        "preset": "addition-desk",
        "model": {"dims": 2, "tensor_size": 2, "channels": 4},
        "task": {"kind": "addition", "digits": 2},
        "batch_size": 4,
        "eval_every": 3,
        "stop": {"max_iterations": 6, "max_samples": null, "target_accuracy": null},
        "seed": 3,
        "out_dir": out,
    });
    if let (Some(d), Some(e)) = (doc.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            d.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join(format!("{}.json", out.replace('/', "_")));
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

fn metric_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn without_timing(mut v: Vec<Value>) -> Vec<Value> {
    for r in &mut v {
        r.as_object_mut().unwrap().remove("wall_ms_per_step");
    }
    v
}

#[test]
fn train_writes_metrics_checkpoint_and_summary() {
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(work.path(), "run", json!({}));
    let o = tlstm(&["train", cfg.to_str().unwrap()], work.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = work.path().join("run");
    let lines = metric_lines(&run.join("metrics.jsonl"));
    assert_eq!(lines.len(), 2);
    for key in ["iteration", "samples_seen", "loss", "accuracy", "wall_ms_per_step"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    assert_eq!(lines[1]["iteration"], 6);
    assert_eq!(lines[1]["samples_seen"], 24);
    assert_eq!(&std::fs::read(run.join("checkpoint.bin")).unwrap()[..8], b"TLSTMCKP");
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["stop"], "max-iterations");
    assert!(run.join("summary.json").exists());
    assert!(run.join("config.json").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let work = tempfile::tempdir().unwrap();
    let a = small_config(work.path(), "a", json!({}));
    let b = small_config(work.path(), "b", json!({}));
    assert!(tlstm(&["train", a.to_str().unwrap()], work.path()).status.success());
    assert!(tlstm(&["train", b.to_str().unwrap()], work.path()).status.success());
    let ma = without_timing(metric_lines(&work.path().join("a/metrics.jsonl")));
    let mb = without_timing(metric_lines(&work.path().join("b/metrics.jsonl")));
    assert_eq!(ma, mb);
    // Rerunning into the same directory starts the metrics file afresh.
    assert!(tlstm(&["train", a.to_str().unwrap()], work.path()).status.success());
    assert_eq!(without_timing(metric_lines(&work.path().join("a/metrics.jsonl"))), mb);
}

#[test]
fn resume_continues_exactly() {
    let work = tempfile::tempdir().unwrap();
    let full = small_config(work.path(), "full", json!({}));
    assert!(tlstm(&["train", full.to_str().unwrap()], work.path()).status.success());

    let half = small_config(work.path(), "half", json!({"stop": {"max_iterations": 3}}));
    assert!(tlstm(&["train", half.to_str().unwrap()], work.path()).status.success());
    let rest = small_config(work.path(), "half", json!({}));
    let o = tlstm(&["train", rest.to_str().unwrap(), "--resume"], work.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let a = without_timing(metric_lines(&work.path().join("full/metrics.jsonl")));
    let b = without_timing(metric_lines(&work.path().join("half/metrics.jsonl")));
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(work.path().join("full/checkpoint.bin")).unwrap().len(),
        std::fs::read(work.path().join("half/checkpoint.bin")).unwrap().len()
    );
}

#[test]
fn bad_configs_exit_one_with_field_message() {
    let work = tempfile::tempdir().unwrap();
    let cases = [
        (json!({"model": {"dims": 2, "tensor_size": 2, "channels": 4, "variant": "lstm"}}), "lstm"),
        (json!({"learning_rate": 0.1}), "learning_rate"),
        (json!({"model": {"dims": 2, "tensor_size": 2, "channels": 4, "variant": "tlstm", "depth": 5}}), "depth"),
        (json!({"optimizer": {"lr": -1.0}}), "optimizer"),
    ];
    for (i, (extra, needle)) in cases.into_iter().enumerate() {
        let cfg = small_config(work.path(), &format!("bad{i}"), extra);
        let o = tlstm(&["train", cfg.to_str().unwrap()], work.path());
        assert_eq!(o.status.code(), Some(1), "case {i}");
        assert!(stderr(&o).contains(needle), "case {i}: {}", stderr(&o));
        assert!(!work.path().join(format!("bad{i}")).exists(), "case {i} wrote output");
    }
    let o = tlstm(&["train", "missing.json"], work.path());
    assert_eq!(o.status.code(), Some(1));
    let o = tlstm(&["frobnicate"], work.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_two() {
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(work.path(), "boom", json!({"optimizer": {"lr": 1e300}}));
    let o = tlstm(&["train", cfg.to_str().unwrap()], work.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn writes_only_inside_out_dir() {
    let configs = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(configs.path(), "only/here", json!({}));
    assert!(tlstm(&["train", cfg.to_str().unwrap()], work.path()).status.success());
    assert!(tlstm(&["trace", cfg.to_str().unwrap()], work.path()).status.success());
    assert!(tlstm(&["eval", cfg.to_str().unwrap()], work.path()).status.success());
    let top: Vec<_> = std::fs::read_dir(work.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec!["only"]);
    let inner: Vec<_> = std::fs::read_dir(work.path().join("only")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(inner, vec!["here"]);
}

#[test]
fn eval_reports_loss_and_accuracy() {
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(work.path(), "run", json!({}));
    assert!(tlstm(&["train", cfg.to_str().unwrap()], work.path()).status.success());
    for split in ["validation", "test"] {
        let o = tlstm(&["eval", cfg.to_str().unwrap(), "--split", split], work.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["split"], split);
        let acc = v["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(v["loss"].as_f64().unwrap() > 0.0);
    }
    let o = tlstm(&["eval", cfg.to_str().unwrap(), "--checkpoint", "nope.bin"], work.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trace_has_p_rows_and_t_plus_l_minus_one_columns() {
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(work.path(), "run", json!({}));
    assert!(tlstm(&["train", cfg.to_str().unwrap()], work.path()).status.success());
    let o = tlstm(&["trace", cfg.to_str().unwrap(), "--example-seed", "9", "--stdout"], work.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // 2-digit addition has T = 3*2 + 4 = 10; P = L = 2.
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 10 + 2 - 1));
    assert!(rows.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let o = tlstm(&["trace", cfg.to_str().unwrap(), "--example-seed", "9"], work.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(work.path().join("run/trace.csv")).unwrap(), text);
}

#[test]
fn gradcheck_passes_for_three_shapes() {
    let work = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 3] = [
        &["--variant", "tlstm", "--tensor-size", "2", "--channels", "3", "--kernel", "3"],
        &["--variant", "trnn", "--dims", "3", "--tensor-size", "2", "--channels", "3", "--kernel", "2", "--norm", "cn"],
        &["--variant", "slstm", "--tensor-size", "3", "--channels", "3"],
    ];
    for args in cases {
        let mut full = vec!["gradcheck"];
        full.extend_from_slice(args);
        let o = tlstm(&full, work.path());
        assert!(o.status.success(), "{args:?}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).starts_with("PASS, max_rel_err="), "{}", stdout(&o));
    }
}

#[test]
fn gradcheck_rejects_inconsistent_depth() {
    let work = tempfile::tempdir().unwrap();
    let o = tlstm(&["gradcheck", "--tensor-size", "2", "--kernel", "3", "--depth", "2"], work.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tlstm(&["gradcheck", "--tensor-size", "2", "--kernel", "3", "--depth", "5"], work.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("L = 2"), "{}", stderr(&o));
    let o = tlstm(&["gradcheck", "--kernel", "1"], work.path());
    assert_eq!(o.status.code(), Some(1));
    let o = tlstm(&["gradcheck", "--variant", "gru"], work.path());
    assert_eq!(o.status.code(), Some(1));
}

fn bench_rows(args: &[&str]) -> Vec<Value> {
    let work = tempfile::tempdir().unwrap();
    let mut full = vec!["bench", "--json", "--repeats", "1", "--batch-size", "2", "--channels", "4"];
    full.extend_from_slice(args);
    let o = tlstm(&full, work.path());
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn bench_params_constant_for_tensorized() {
    let rows = bench_rows(&["--depths", "1,2,3,4"]);
    assert_eq!(rows.len(), 4);
    for (l, r) in rows.iter().enumerate() {
        let l = l as u64 + 1;
        let t = r["T"].as_u64().unwrap();
        assert_eq!(r["L"], l);
        assert_eq!(r["params"], rows[0]["params"]);
        assert_eq!(r["steps_per_sequence"].as_u64().unwrap(), t + l - 1);
    }
}

#[test]
fn bench_slstm_layer_updates_are_t_times_l() {
    let rows = bench_rows(&["--variant", "slstm", "--depths", "1,3"]);
    for r in rows {
        let (t, l) = (r["T"].as_u64().unwrap(), r["L"].as_u64().unwrap());
        assert_eq!(r["steps_per_sequence"].as_u64().unwrap(), t);
        assert_eq!(r["layer_updates"].as_u64().unwrap(), t * l);
    }
}

#[test]
fn presets_list_and_resolve() {
    let work = tempfile::tempdir().unwrap();
    let o = tlstm(&["preset"], work.path());
    assert!(stdout(&o).lines().any(|l| l == "addition-desk"));
    let o = tlstm(&["preset", "memorization-desk"], work.path());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["task"]["vocab_size"], 16);
    assert_eq!(v["model"]["tensor_size"], 3);
}
