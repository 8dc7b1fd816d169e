use std::path::PathBuf;
use std::process::{Command, Output};

fn case(name: &str) -> PathBuf {
    lyapgrid::data_dir().join(name)
}

fn lyapgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapgrid"))
        .args(args)
        .env_remove("LYAPGRID_H")
        .env_remove("LYAPGRID_BETA")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_prints_both_sides_and_pass() {
    let c = case("case9.m");
    let o = lyapgrid(&["validate", "--case", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("lhs") && out.contains("rhs"));
    assert_eq!(out.lines().last(), Some("PASS"));
}

#[test]
fn rank_lists_every_bus_once() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ranking.csv");
    let svg_path = dir.path().join("ranking.svg");
    let c = case("case9.m");
    let o = lyapgrid(&[
        "rank",
        "--case",
        c.to_str().unwrap(),
        "--beta",
        "2",
        "--out",
        csv_path.to_str().unwrap(),
        "--plot",
        svg_path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let mut buses = Vec::new();
    let mut index = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        buses.push(rec[0].parse::<u32>().unwrap());
        index.push(rec[2].parse::<usize>().unwrap());
    }
    assert_eq!(index, (1..=9).collect::<Vec<_>>());
    buses.sort_unstable();
    assert_eq!(buses, (1..=9).collect::<Vec<_>>());
    assert!(std::fs::read_to_string(svg_path).unwrap().starts_with("<svg"));
}

#[test]
fn allocate_orders_all_nodes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("case9.m");
    let run = |name: &str, workers: &str| {
        let p = dir.path().join(name);
        let o = lyapgrid(&[
            "allocate",
            "--case",
            c.to_str().unwrap(),
            "--s",
            "all",
            "--workers",
            workers,
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(p).unwrap()
    };
    let a = run("a.json", "1");
    let b = run("b.json", "1");
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["schema"], "lyapgrid.allocation/1");
    assert_eq!(v["config"]["beta"], 2.0);
    let order: Vec<u64> = v["ordered_nodes"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (1..=9).collect::<Vec<_>>());
    assert_eq!(v["marginal_gains"].as_array().unwrap().len(), 9);
    let trace: Vec<f64> = v["objective_trace"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    assert!(v["failed"].as_array().unwrap().is_empty());
}

#[test]
fn powerflow_reports_voltages() {
    let c = case("case9.m");
    let o = lyapgrid(&["powerflow", "--case", c.to_str().unwrap(), "--tol", "1e-10"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["v"].as_array().unwrap().len(), 9);
    assert!(v["mismatch"].as_f64().unwrap() < 1e-10);
    assert_eq!(v["config"]["pipeline"]["powerflow"]["tol"], 1e-10);
}

#[test]
fn simulate_writes_one_row_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let plot = dir.path().join("omega.svg");
    let c = case("case9.m");
    let o = lyapgrid(&[
        "simulate",
        "--case",
        c.to_str().unwrap(),
        "--h",
        "0.1",
        "--t",
        "5",
        "--perturb-node",
        "5",
        "--beta",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 1 + 36);
    assert_eq!(&rdr.headers().unwrap()[1], "delta_1");
    assert_eq!(rdr.records().count(), 50);
    assert!(plot.exists());
}

#[test]
fn lyapunov_report_lists_spectrum_and_buses() {
    let c = case("case9.m");
    let o = lyapgrid(&["lyapunov", "--case", c.to_str().unwrap(), "--perturb-node", "5", "--beta", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let ex: Vec<f64> = v["exponents"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(ex.len(), 36);
    assert!(ex.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["buses"].as_array().unwrap().len(), 9);
}

#[test]
fn environment_overrides_defaults() {
    let c = case("case9.m");
    let o = Command::new(env!("CARGO_BIN_EXE_lyapgrid"))
        .args(["lyapunov", "--case", c.to_str().unwrap()])
        .env("LYAPGRID_T_END", "2")
        .env("LYAPGRID_BETA", "5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["horizon"], 20);
    assert_eq!(v["config"]["beta"], 5.0);
    assert_eq!(v["config"]["perturb_node"], 5);
}

#[test]
fn input_errors_exit_with_two() {
    let c = case("case9.m");
    let c = c.to_str().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["rank", "--case", c, "--bogus"],
        vec!["rank", "--case", c, "--beta", "1"],
        vec!["allocate", "--case", c, "--beta", "25"],
        vec!["allocate", "--case", c, "--s", "10"],
        vec!["powerflow", "--case", "/nonexistent/case.m"],
        vec!["lyapunov", "--case", c, "--perturb-node", "42"],
        vec!["lyapunov", "--case", c, "--h", "0.07"],
    ] {
        let o = lyapgrid(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numerical_failures_exit_with_one() {
    let c = case("case9.m");
    let o = lyapgrid(&["powerflow", "--case", c.to_str().unwrap(), "--max-iter", "1", "--tol", "1e-14"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lyapgrid(&["lyapunov", "--case", c.to_str().unwrap(), "--paper-literal-governor"]);
    assert_eq!(o.status.code(), Some(1));
}
