use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn ensemble(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ensemble"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path, expected: &[&str]) {
    let m = manifest(dir);
    let files = m["files"].as_array().unwrap();
    let listed: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for name in expected {
        assert!(listed.contains(name), "{name} missing from manifest");
    }
    for f in files {
        let bytes = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(m["versions"]["ensemble_core"].is_string());
}

#[test]
fn dpss_returns_ordered_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ensemble(&["dpss", "--N", "8", "--W", "0.2", "--k", "4"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let kappas: Vec<f64> = read_csv(&tmp.path().join("eigenvalues.csv")).iter().map(|r| r[1]).collect();
    assert_eq!(kappas.len(), 4);
    assert!(kappas.windows(2).all(|w| w[0] > w[1]));
    assert!(kappas.iter().all(|k| *k > 0.0 && *k < 1.0));
    let seqs = read_csv(&tmp.path().join("sequences.csv"));
    assert_eq!(seqs.len(), 8);
    assert_eq!(seqs[0].len(), 5);
    assert_manifest_complete(tmp.path(), &["sequences.csv", "eigenvalues.csv", "dpss.json"]);
}

#[test]
fn qp_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let out = ensemble(&["qp", "--T", "3.14159", "--n", "51"], dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["solution.csv", "distance.csv", "qp.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    let sol = read_csv(&a.path().join("solution.csv"));
    assert_eq!(sol.len(), 51);
    assert!(sol.iter().all(|r| r[1].abs() <= 1.0));
    assert_manifest_complete(a.path(), &["solution.csv", "distance.csv", "qp.json"]);
}

#[test]
fn fig2_demo_reaches_the_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ensemble(&["demo", "fig2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let finals = read_csv(&tmp.path().join("final_states.csv"));
    assert_eq!(finals.len(), 1001);
    let worst = finals.iter().map(|r| r[3]).fold(0.0, f64::max);
    assert!(worst <= 0.05, "max final distance {worst}");
    let control = read_csv(&tmp.path().join("control.csv"));
    assert_eq!(control.len(), 1001);
    let traj = read_csv(&tmp.path().join("trajectories.csv"));
    assert_eq!(traj[0].len(), 7);
    // every trajectory starts at p0 = 1
    assert_eq!(&traj[0][1..], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    assert_manifest_complete(tmp.path(), &["control.csv", "final_states.csv", "trajectories.csv", "summary.json"]);
}

#[test]
fn fig5_demo_distance_shrinks_with_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ensemble(&["demo", "fig5"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let maxes: Vec<f64> = ["1", "pi", "5pi", "10pi"]
        .iter()
        .map(|l| read_csv(&tmp.path().join(format!("distance_T{l}.csv"))).iter().map(|r| r[1]).fold(0.0, f64::max))
        .collect();
    assert!(maxes.windows(2).all(|w| w[1] < w[0]), "{maxes:?}");
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_ensemble"))
        .args(["dpss", "--N", "16", "--W", "0.1"])
        .env("ENSEMBLE_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn synth_simulate_and_diagnose_from_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"schema":1,"system":{"family":"harmonic","omega1":1.0,"omega2":3.0,"t_final":2.0},
            "n_time":201,"n_param":21,"x0":[[1,0],[0,0]],"xf":[[0,0],[0,0]],"rel_eps":1e-2}"#,
    )
    .unwrap();
    let syn = tmp.path().join("synth");
    let out = ensemble(&["synth", "--spec", spec.to_str().unwrap()], &syn);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(syn.join("synthesis.json")).unwrap()).unwrap();
    assert!(report["reached"].as_bool().unwrap());
    let step_tol = 1e-10;
    assert!(
        report["simulated_residual"].as_f64().unwrap() <= report["predicted_residual"].as_f64().unwrap() + 10.0 * step_tol
    );

    let sim = tmp.path().join("sim");
    let control = syn.join("control.csv");
    let out = ensemble(&["simulate", "--spec", spec.to_str().unwrap(), "--control", control.to_str().unwrap()], &sim);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(sim.join("final_states.csv")).unwrap(), fs::read(syn.join("final_states.csv")).unwrap());

    let diag = tmp.path().join("diag");
    let out = ensemble(&["diagnose", "--spec", spec.to_str().unwrap()], &diag);
    assert!(out.status.success());
    let picard: serde_json::Value = serde_json::from_str(&fs::read_to_string(diag.join("picard.json")).unwrap()).unwrap();
    assert!(picard["range_residual"].as_f64().unwrap() < 1e-2);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"schema":2,"system":{"family":"example1","t_final":1.0},"x0":[[0,0],[0,0]],"xf":[[0,0],[0,0]]}"#)
        .unwrap();
    assert_eq!(ensemble(&["synth", "--spec", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));
    assert_eq!(ensemble(&["dpss", "--N", "8", "--W", "0.7"], tmp.path()).status.code(), Some(2));
    assert_eq!(ensemble(&["frobnicate"], tmp.path()).status.code(), Some(2));

    // Example 1 cannot reach a target that is not proportional to s
    let spec = tmp.path().join("ex1.json");
    fs::write(
        &spec,
        r#"{"schema":1,"system":{"family":"example1","t_final":2.0},"n_time":81,"n_param":21,
            "x0":[[0,0],[0,0]],"xf":[[1,0],[0,0]],"rel_eps":1e-3}"#,
    )
    .unwrap();
    let dir = tmp.path().join("ex1");
    let out = ensemble(&["synth", "--spec", spec.to_str().unwrap()], &dir);
    assert_eq!(out.status.code(), Some(4));
    // outputs are still written
    assert_manifest_complete(&dir, &["control.csv", "final_states.csv", "synthesis.json"]);
}
