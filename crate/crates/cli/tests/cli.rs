use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use invnav::dataio::{export_segment, write_mapping, ColumnMapping, Segment};
use invnav::simgen::TrajectoryFamily;

fn invnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invnav")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn one_segment_dataset(dir: &Path, seg: &Segment) -> String {
    export_segment(dir, seg).unwrap();
    let mapping = ColumnMapping { segments: 1, ..ColumnMapping::default() };
    let p = dir.join("mapping.toml");
    write_mapping(&p, &mapping).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn banana_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("banana.csv");
    let o = invnav(&["dump-banana", "--n", "50", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let s = fs::read_to_string(&out).unwrap();
    assert_eq!(s.lines().count(), 51);
    assert!(s.starts_with("xi_rx,"));
}

#[test]
fn run_on_simulated_trajectory_reports_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let o = invnav(&["run", "--filter", "AR-IKF", "--simulate", "straight_const", "--out", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("position RMSE"));
    let rows = fs::read_to_string(&log).unwrap().lines().count();
    assert!(rows > 100);
}

#[test]
fn bad_arguments_fail() {
    assert_eq!(invnav(&["run", "--filter", "AEKF", "--simulate", "nonsense"]).status.code(), Some(1));
    assert_eq!(invnav(&["run", "--filter", "NN-AR-IKF", "--simulate", "circular"]).status.code(), Some(1));
    assert_eq!(invnav(&["run", "--filter", "AEKF", "--lambda", "1.5", "--simulate", "circular"]).status.code(), Some(1));
    let o = invnav(&["benchmark", "--simulated", "1", "--variants", "NN-AEKF:s1_mse"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_on_dataset_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let seg = Segment::simulated(1, TrajectoryFamily::Circular, 4).unwrap();
    let mapping = one_segment_dataset(dir.path(), &seg);
    let csv = dir.path().join("t.csv");
    let o = invnav(&[
        "benchmark",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--mapping",
        &mapping,
        "--variants",
        "AEKF,AR-IKF",
        "--seeds",
        "2",
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(&csv).unwrap();
    assert!(table.contains("AEKF") && table.contains("AR-IKF"));
}

#[test]
fn divergence_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let mut seg = Segment::simulated(1, TrajectoryFamily::StraightConst, 0).unwrap();
    let n = seg.imu.len() / 2;
    seg.imu[n].accel.x = f64::NAN;
    let mapping = one_segment_dataset(dir.path(), &seg);
    let ds = dir.path().to_str().unwrap();
    let o = invnav(&["benchmark", "--dataset", ds, "--mapping", &mapping, "--variants", "AR-IKF", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = invnav(&["run", "--filter", "AEKF", "--dataset", ds, "--mapping", &mapping, "--segment", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_train_and_run_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let w = dir.path().join("w.txt");
    let o = invnav(&["simulate", "--out", data.to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = invnav(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--step",
        "2000",
        "--epochs",
        "1",
        "--loss",
        "huber",
        "--out",
        w.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&w).unwrap().contains("loss=huber"));
    let o = invnav(&["run", "--filter", "NN-AR-IKF", "--weights", w.to_str().unwrap(), "--simulate", "circular"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
