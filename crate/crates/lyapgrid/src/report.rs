//! JSON and CSV report emission.
//!
//! Every JSON report carries a `schema` tag and the full `config` it was
//! produced with. Reports contain no timestamps or host data, so the same
//! config produces byte-identical files.
//!
//! CSV schemas:
//!
//! * trajectory: `t` followed by one column per state, named
//!   `delta_<bus>`, `omega_<bus>`, `eprime_<bus>`, `tn_<bus>`, `pg_<bus>`,
//!   `qg_<bus>` for machines and `v_<bus>`, `theta_<bus>` for every bus.
//! * ranking: `bus,lambda,stability_index,settling_time,error`, sorted by
//!   stability index (most stable first).

use std::io::Write;
use std::path::Path;

use lyapgrid_core::allocate::PipelineConfig;
use lyapgrid_core::dynamics::{PowerSystemModel, Quantity};
use lyapgrid_core::lyapunov::RankEntry;
use serde::Serialize;

use crate::sweep::NodeSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub case: String,
    pub sidecar: Option<String>,
    pub pipeline: PipelineConfig,
    pub beta: Option<f64>,
    pub perturb_node: Option<u32>,
    pub s: Option<usize>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerFlowReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub bus_ids: Vec<u32>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BusExponent {
    pub bus: u32,
    pub lambda: f64,
    pub stability_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub horizon: usize,
    /// Descending.
    pub exponents: Vec<f64>,
    /// State index each exponent started from.
    pub directions: Vec<usize>,
    pub max_le: f64,
    pub sum: f64,
    pub stable: bool,
    pub buses: Vec<BusExponent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedNode {
    pub bus: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AllocationReport {
    pub schema: &'static str,
    pub config: RunConfig,
    /// From most critical to most stable.
    pub ordered_nodes: Vec<u32>,
    /// `null` for failed nodes.
    pub marginal_gains: Vec<Option<f64>>,
    pub objective_trace: Vec<f64>,
    pub failed: Vec<FailedNode>,
    pub nodes: Vec<NodeSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub report: lyapgrid_core::lyapunov::LogDetIdentity,
    pub pass: bool,
}

pub const POWERFLOW_SCHEMA: &str = "lyapgrid.powerflow/1";
pub const SPECTRUM_SCHEMA: &str = "lyapgrid.spectrum/1";
pub const ALLOCATION_SCHEMA: &str = "lyapgrid.allocation/1";
pub const VALIDATION_SCHEMA: &str = "lyapgrid.validation/1";

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

pub fn state_names(model: &PowerSystemModel) -> Vec<String> {
    let l = model.layout;
    (0..l.dim())
        .map(|i| {
            let (q, k) = l.locate(i).expect("index within layout");
            let (prefix, bus) = match q {
                Quantity::Delta => ("delta", model.gen_bus[k]),
                Quantity::Omega => ("omega", model.gen_bus[k]),
                Quantity::EqPrime => ("eprime", model.gen_bus[k]),
                Quantity::Tn => ("tn", model.gen_bus[k]),
                Quantity::Pg => ("pg", model.gen_bus[k]),
                Quantity::Qg => ("qg", model.gen_bus[k]),
                Quantity::V => ("v", k),
                Quantity::Theta => ("theta", k),
            };
            format!("{prefix}_{}", model.bus_ids[bus])
        })
        .collect()
}

pub fn write_trajectory_csv<W: Write>(
    out: W,
    names: &[String],
    times: &[f64],
    states: &[Vec<f64>],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (t, x) in times.iter().zip(states) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranking_csv<W: Write>(out: W, ranking: &[RankEntry], nodes: &[NodeSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bus", "lambda", "stability_index", "settling_time", "error"])?;
    let by_bus = |b: u32| nodes.iter().find(|n| n.bus == b);
    for e in ranking {
        let settle = by_bus(e.bus).and_then(|n| n.settling_time).map(|t| t.to_string()).unwrap_or_default();
        let err = by_bus(e.bus).and_then(|n| n.error.clone()).unwrap_or_default();
        w.write_record([e.bus.to_string(), e.lambda.to_string(), e.index.to_string(), settle, err])?;
    }
    w.flush()?;
    Ok(())
}
