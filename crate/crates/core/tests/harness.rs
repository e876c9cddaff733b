use std::fs;
use std::path::Path;
use std::process::Command;

use exdyn::run::{run_scenario, RunOptions};
use exdyn::scenario::{parse_scenario, preset, Scenario};

const SMALL: &str = r#"
name = "small"
engine = "exemplar"
dimension = 1
horizon = 3.0
sample_interval = 0.5
snapshot_times = [2.0]
seed = 42

[params]
w0 = 0.01
beta = 0.1
prune_ratio = 0.001
regime = "competition-with-discards"

[[category]]
label = "A"
rate = 100.0
position = [-2.0]
count = 20

[[category]]
label = "B"
rate = 100.0
position = [2.0]
count = 20
"#;

const SMALL_FIELD: &str = r#"
name = "smallf"
engine = "field"
dimension = 1
horizon = 2.0
sample_interval = 0.5
snapshot_times = [2.0]

[params]
w0 = 0.01
beta = 0.1
regime = "competition-with-discards"

[[category]]
label = "A"
rate = 100.0
position = [-4.0]
count = 20
spread = 1.0

[[category]]
label = "B"
rate = 100.0
position = [4.0]
count = 20
spread = 1.0

[integrator]
dt = 0.05
"#;

fn opts(dir: &Path, replicates: usize, jobs: usize) -> RunOptions {
    RunOptions { replicates, seed: None, out_dir: dir.to_path_buf(), jobs }
}

fn small() -> Scenario {
    parse_scenario(SMALL, "small").unwrap()
}

#[test]
fn replicates_write_trajectories_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_scenario(&preset("fig1").unwrap(), &opts(dir.path(), 5, 2)).unwrap();
    assert!(!s.failed());
    for k in 0..5 {
        assert!(dir.path().join(format!("fig1.r{k}.traj.csv")).exists());
    }
    assert!(dir.path().join("fig1.manifest.json").exists());
    let n_traj = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".traj.csv"))
        .count();
    assert_eq!(n_traj, 5);
}

#[test]
fn one_snapshot_file_per_category() {
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&small(), &opts(dir.path(), 1, 1)).unwrap();
    let snaps: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".snap.csv"))
        .collect();
    assert_eq!(snaps.len(), 2, "{snaps:?}");
    assert!(snaps.contains(&"small.r0.t2.A.snap.csv".to_string()));
    let body = fs::read_to_string(dir.path().join("small.r0.t2.B.snap.csv")).unwrap();
    assert!(body.starts_with("category,x,weight\n"));
    assert!(body.lines().skip(1).all(|l| l.starts_with("B,")));

    let dir = tempfile::tempdir().unwrap();
    run_scenario(&parse_scenario(SMALL_FIELD, "f").unwrap(), &opts(dir.path(), 1, 1)).unwrap();
    assert!(dir.path().join("smallf.t2.A.field.txt").exists());
    assert!(dir.path().join("smallf.t2.B.field.txt").exists());
}

#[test]
fn field_engine_rejects_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let s = parse_scenario(SMALL_FIELD, "f").unwrap();
    assert!(run_scenario(&s, &opts(dir.path(), 2, 1)).is_err());
    assert!(run_scenario(&s, &opts(dir.path(), 1, 1)).is_ok());
}

#[test]
fn rerun_from_manifest_reproduces_bytes() {
    let first = tempfile::tempdir().unwrap();
    run_scenario(&small(), &opts(first.path(), 3, 3)).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.path().join("small.manifest.json")).unwrap()).unwrap();
    let scenario = parse_scenario(manifest["scenario"].as_str().unwrap(), "manifest").unwrap();
    let reps = manifest["replicates"].as_array().unwrap().len();
    let second = tempfile::tempdir().unwrap();
    run_scenario(&scenario, &opts(second.path(), reps, 1)).unwrap();
    for k in 0..reps {
        let name = format!("small.r{k}.traj.csv");
        assert_eq!(fs::read(first.path().join(&name)).unwrap(), fs::read(second.path().join(&name)).unwrap());
    }
}

#[test]
fn replicate_depends_only_on_its_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&small(), &opts(a.path(), 2, 1)).unwrap();
    run_scenario(&small(), &opts(b.path(), 4, 3)).unwrap();
    for k in 0..2 {
        let name = format!("small.r{k}.traj.csv");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    assert_ne!(
        fs::read(b.path().join("small.r0.traj.csv")).unwrap(),
        fs::read(b.path().join("small.r1.traj.csv")).unwrap()
    );
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path(), 1, 1);
    o.seed = Some(9);
    let s = run_scenario(&small(), &o).unwrap();
    assert_eq!(s.manifest.master_seed, Some(9));
    assert_eq!(parse_scenario(&s.manifest.scenario, "m").unwrap().seed, Some(9));
}

fn exdyn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_exdyn"));
    c.env_remove("EXDYN_OUT");
    c
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    fs::write(&bad, SMALL.replace("beta = 0.1", "alpha = 2.0\nbeta = 0.5")).unwrap();
    assert_eq!(exdyn().args(["run", bad.to_str().unwrap()]).output().unwrap().status.code(), Some(1));
    assert_eq!(exdyn().args(["run", "no-such-thing"]).output().unwrap().status.code(), Some(1));
    assert_eq!(exdyn().args(["frobnicate"]).output().unwrap().status.code(), Some(1));
    assert_eq!(exdyn().args(["presets"]).output().unwrap().status.code(), Some(0));
    let good = dir.path().join("small.scn");
    fs::write(&good, SMALL).unwrap();
    let out = dir.path().join("out");
    let st = exdyn().args(["run", good.to_str().unwrap(), "--replicates", "2", "--out", out.to_str().unwrap()]).output().map(|o| o.status);
    assert_eq!(st.unwrap().code(), Some(0));
    assert!(out.join("small.r1.traj.csv").exists());
}

#[test]
fn cli_output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("small.scn");
    fs::write(&good, SMALL).unwrap();
    let out = dir.path().join("env-out");
    let st = exdyn().env("EXDYN_OUT", &out).args(["run", good.to_str().unwrap()]).current_dir(dir.path()).output().map(|o| o.status);
    assert_eq!(st.unwrap().code(), Some(0));
    assert!(out.join("small.manifest.json").exists());
}

#[test]
fn cli_verdict_peaks_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("smallf.scn");
    fs::write(&good, SMALL_FIELD).unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert!(exdyn().args(["run", good.to_str().unwrap(), "--out", o]).output().unwrap().status.success());
    let traj = out.join("smallf.traj.csv");
    let v = exdyn().args(["verdict", traj.to_str().unwrap(), "--window", "1:2"]).output().unwrap();
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    let text = String::from_utf8(v.stdout).unwrap();
    assert!(text.contains("Distinct"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("smallf.traj.csv.verdict.json")).unwrap()).unwrap();
    assert_eq!(json["verdict"], "distinct");
    assert!(json["gap"].as_f64().unwrap() > 4.0);

    let a = out.join("smallf.t2.A.field.txt");
    let b = out.join("smallf.t2.B.field.txt");
    let p = exdyn().args(["peaks", a.to_str().unwrap(), b.to_str().unwrap()]).output().unwrap();
    assert_eq!(String::from_utf8(p.stdout).unwrap().trim(), "2");

    let c = exdyn().args(["compare", traj.to_str().unwrap(), traj.to_str().unwrap(), "--at", "1"]).output().unwrap();
    let text = String::from_utf8(c.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("A,1,1,0,0,0"), "{text}");
    let bad = exdyn().args(["verdict", traj.to_str().unwrap(), "--window", "5:9"]).output().unwrap().status;
    assert_eq!(bad.code(), Some(1));
}
