mod common;

use common::cli::{describe, noisecap, rerun_from_manifests, run_pipeline};
use noisecap::eval::read_sweep_csv;

#[test]
fn pipeline_runs_and_reruns_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(dir.path()).unwrap();
    for f in ["data/corpus.jsonl", "epsilon.json", "checkpoints/model.gdck", "train_log.csv", "eval/metrics.csv", "report/summary.md"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let sweeps: Vec<_> = std::fs::read_dir(run.join("sweep")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(sweeps.len(), 1);
    let rows = read_sweep_csv(&sweeps[0].join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 4 * 6);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,val_loss,lr\n"));
    assert!(rerun_from_manifests(&run).unwrap() > 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = out.to_str().unwrap();
    assert_eq!(noisecap(&["--help"]).status.code(), Some(0));
    assert_eq!(noisecap(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(noisecap(&["--out", o, "--set", "train.bogus=1", "gen-data"]).status.code(), Some(1));
    assert_eq!(noisecap(&["--out", o, "--config", "/nonexistent.toml", "gen-data"]).status.code(), Some(2));

    let r = noisecap(&["--out", o, "train"]);
    assert_eq!(r.status.code(), Some(2), "{}", describe(&r));
    assert!(String::from_utf8_lossy(&r.stderr).contains("gen-data"));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = out.to_str().unwrap();
    let args = ["--out", o, "--set", "world.n_scenes=20", "gen-data"];
    assert_eq!(noisecap(&args).status.code(), Some(0));
    let first = std::fs::read(out.join("data/corpus.jsonl")).unwrap();
    let r = noisecap(&args);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--force"));
    let r = noisecap(&["--out", o, "--set", "world.n_scenes=20", "--force", "gen-data"]);
    assert_eq!(r.status.code(), Some(0), "{}", describe(&r));
    assert_eq!(std::fs::read(out.join("data/corpus.jsonl")).unwrap(), first);
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let r = noisecap(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nothing to report"));
}
