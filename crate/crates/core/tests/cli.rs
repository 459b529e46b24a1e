//! The `hfz` binary: subcommands, outputs, exit codes.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "n_participating=3",
    "m_nonparticipating=2",
    "rounds=2",
    "local_iters=2",
    "lr=0.05",
    "batch_size=16",
    "min_per_client=5",
    "embed_dim=4",
    "chunk_size=16",
    "chunk_dim=3",
    "classifier_hidden=[6]",
    "extractor_hidden=[5]",
    "trunk_hidden=[6]",
    "dataset.samples_per_class=40",
];

fn hfz(args: &[&str], results: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfz"))
        .args(args)
        .env("HFZ_RESULTS_DIR", results)
        .output()
        .unwrap()
}

/// `head`, then the small-run overrides, then `extra` (later keys win).
fn small_args<'a>(head: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = head.to_vec();
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    args
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_outputs_under_results_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfz(&small_args(&["train"], &[]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    for f in [
        "checkpoint.json",
        "metrics.csv",
        "report.json",
        "config.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let fp = run.file_name().unwrap().to_str().unwrap().to_string();
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with(&fp)));

    // eval reproduces the training-time metrics from the checkpoint alone
    let ck = run.join("checkpoint.json");
    let e = hfz(&["eval", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let train_line = stdout(&o).lines().next().unwrap().to_string();
    assert_eq!(stdout(&e).lines().next().unwrap(), train_line);

    let emb = dir.path().join("emb.csv");
    let x = hfz(
        &[
            "export-embeddings",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--out",
            emb.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(x.status.code(), Some(0), "{}", stderr(&x));
    let text = std::fs::read_to_string(&emb).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "client_id,label,e_1,e_2,e_3,e_4");
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // 160 samples minus a 10% holdout
    assert_eq!(text.lines().count(), 1 + 144);
}

#[test]
fn train_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = hfz(
        &small_args(&["train", "--out-dir", out.to_str().unwrap()], &[]),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = out.join("checkpoint.json");
    let more = dir.path().join("more");
    let r = hfz(
        &[
            "resume",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--rounds",
            "3",
            "--out-dir",
            more.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let csv = std::fs::read_to_string(more.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
}

#[test]
fn partition_subcommand_writes_loadable_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let o = hfz(
        &small_args(&["partition", "--out", path.to_str().unwrap()], &[]),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = hfz_core::data::load_partition(&path).unwrap();
    assert_eq!(p.num_clients(), 5);

    // a saved partition can drive training
    let arg = format!("partition_path=\"{}\"", path.display());
    let out = dir.path().join("run");
    let t = hfz(
        &small_args(&["train", "--out-dir", out.to_str().unwrap()], &[&arg]),
        dir.path(),
    );
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
}

#[test]
fn budget_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfz(
        &["budget", "--config", "../../configs/default.toml"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("ratio"));
    let j = hfz(&["budget", "--json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    let ratio = v["ratio"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&ratio));
    assert_eq!(
        v["generated_side"].as_u64().unwrap(),
        v["extractor"].as_u64().unwrap()
            + v["noisy"].as_u64().unwrap()
            + v["hypernet"].as_u64().unwrap()
    );
}

#[test]
fn ablate_runs_once_and_reuses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let spec = dir.path().join("sweep.toml");
    let mut text = format!(
        "output_dir = \"{}\"\nseeds = [0, 1]\n[base]\n",
        out.display()
    );
    for kv in SMALL {
        let (k, v) = kv.split_once('=').unwrap();
        if let Some(k) = k.strip_prefix("dataset.") {
            text.push_str(&format!("dataset = {{ {k} = {v} }}\n"));
        } else {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    text.push_str("[sweep]\nmethod = [\"fedavg\", \"hyperfedzero\"]\n");
    std::fs::write(&spec, text).unwrap();

    let a = hfz(&["ablate", "--spec", spec.to_str().unwrap()], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert!(
        stdout(&a).contains("4 new runs, 0 reused"),
        "{}",
        stdout(&a)
    );
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let b = hfz(&["ablate", "--spec", spec.to_str().unwrap()], dir.path());
    assert!(
        stdout(&b).contains("0 new runs, 4 reused"),
        "{}",
        stdout(&b)
    );
    assert_eq!(
        std::fs::read_to_string(out.join("summary.csv")).unwrap(),
        summary
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // config problems → 1
    for args in [
        vec!["train", "rounds=0"],
        vec!["train", "no_such_key=1"],
        vec!["train", "--config", "/nonexistent/cfg.toml"],
        vec!["frobnicate"],
        vec!["budget", "method=fedavg"],
    ] {
        let o = hfz(&args, d);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = hfz(&["train", "--config", "/nonexistent/cfg.toml"], d);
    assert!(stderr(&o).contains("/nonexistent/cfg.toml"));
    assert_eq!(stderr(&o).lines().count(), 1);

    // data problems → 2
    let bad = d.join("bad.json");
    std::fs::write(&bad, "not json").unwrap();
    let o = hfz(&["eval", "--checkpoint", bad.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = hfz(
        &small_args(&["train"], &["alpha_d=0.01", "min_per_client=60"]),
        d,
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let arg = format!("dataset.images_path=\"{}\"", d.join("missing").display());
    let o = hfz(
        &[
            "train",
            "dataset.kind=idx",
            &arg,
            "dataset.labels_path=\"x\"",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // divergence → 3
    let o = hfz(&small_args(&["train"], &["lr=1e300"]), d);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));

    let o = hfz(&["--help"], d);
    assert_eq!(o.status.code(), Some(0));
}
