//! Parallel per-node perturbation sweeps.

use lyapgrid_core::allocate::{per_node_tensor, NodeRun, NodeTensorBank, PipelineConfig};
use lyapgrid_core::metrics::settling_time;
use lyapgrid_core::network::PowerNetwork;
use rayon::prelude::*;
use serde::Serialize;

/// Band used for frequency settling, as a fraction of the peak excursion.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub bus: u32,
    pub own_exponent: Option<f64>,
    pub global_exponent: Option<f64>,
    pub max_le: Option<f64>,
    pub settling_time: Option<f64>,
    pub max_algebraic_residual: Option<f64>,
    pub max_nr_iterations: Option<usize>,
    pub error: Option<String>,
}

impl NodeSummary {
    fn from_run(bus: u32, r: &lyapgrid_core::Result<NodeRun>) -> Self {
        match r {
            Ok(run) => Self {
                bus,
                own_exponent: Some(run.own_exponent),
                global_exponent: run.tensor.node_exponent().ok(),
                max_le: Some(run.spectrum.max_le()),
                settling_time: Some(settling_time(&run.times, &run.omega, SETTLING_BAND)),
                max_algebraic_residual: Some(run.max_algebraic_residual),
                max_nr_iterations: Some(run.max_nr_iterations),
                error: None,
            },
            Err(e) => Self {
                bus,
                own_exponent: None,
                global_exponent: None,
                max_le: None,
                settling_time: None,
                max_algebraic_residual: None,
                max_nr_iterations: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub bank: NodeTensorBank,
    /// In ascending bus order.
    pub nodes: Vec<NodeSummary>,
}

/// Runs one perturbation per node on `workers` threads. A failing node is
/// recorded in the bank's failure set instead of aborting the sweep.
pub fn sweep(
    net: &PowerNetwork,
    nodes: &[u32],
    beta: f64,
    cfg: &PipelineConfig,
    workers: usize,
) -> lyapgrid_core::Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| lyapgrid_core::Error::Config(e.to_string()))?;
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let runs: Vec<(u32, lyapgrid_core::Result<NodeRun>)> = pool.install(|| {
        sorted
            .par_iter()
            .map(|&n| (n, per_node_tensor(net, n, beta, cfg)))
            .collect()
    });
    let summaries = runs.iter().map(|(n, r)| NodeSummary::from_run(*n, r)).collect();
    Ok(SweepResult {
        bank: NodeTensorBank::from_runs(runs)?,
        nodes: summaries,
    })
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
