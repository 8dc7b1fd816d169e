//! Per-node perturbation experiments, the log-det set objective and greedy
//! allocation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{Dae, ModelOptions, PowerSystemModel, ReducedOde};
use crate::error::{Error, Result};
use crate::integrator::{simulate_with, SimConfig};
use crate::linalg::{inf_norm, spd_log_det, symmetric_eigenvalues};
use crate::lyapunov::{DeformationTensor, LyapunovSpectrum, StateSelector, LogDetIdentity, TrajectoryAnalyzer};
use crate::network::PowerNetwork;
use crate::powerflow::{solve_powerflow, PowerFlowOptions, SteadyState};

pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Exhaustive search guard.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub powerflow: PowerFlowOptions,
    pub model: ModelOptions,
    /// Renewable injection (pu) assumed at a node that declares none.
    pub default_rer: (f64, f64),
    /// Tolerance for re-solving the algebraic states after a perturbation.
    pub algebraic_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            powerflow: PowerFlowOptions::default(),
            model: ModelOptions::default(),
            default_rer: (1.0, 0.0),
            algebraic_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationSpec {
    pub node: u32,
    /// Percent increase of the renewable injection.
    pub beta: f64,
    pub base_injection: (f64, f64),
}

impl PerturbationSpec {
    /// Uses the node's declared renewable, or the configured default when it has none.
    pub fn new(net: &PowerNetwork, node: u32, beta: f64, cfg: &PipelineConfig) -> Result<Self> {
        let bus = net.bus(node).ok_or(Error::UnknownBus(node))?;
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(alloc::format!("beta must be a nonnegative percentage, got {beta}")));
        }
        let declared = (bus.renewable_p, bus.renewable_q);
        let base_injection = if declared == (0.0, 0.0) { cfg.default_rer } else { declared };
        Ok(Self {
            node,
            beta,
            base_injection,
        })
    }

    pub fn perturbed(&self) -> (f64, f64) {
        let s = 1.0 + self.beta / 100.0;
        (s * self.base_injection.0, s * self.base_injection.1)
    }
}

/// Lowest-id bus carrying active load, used when no node is named.
pub fn default_perturbation_node(net: &PowerNetwork) -> Option<u32> {
    net.buses.iter().filter(|b| b.load_p != 0.0).map(|b| b.id).min()
}

/// Operating point with the base renewable present, and the consistent
/// initial state after the injection is scaled.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub spec: PerturbationSpec,
    pub steady: SteadyState,
    pub model: PowerSystemModel,
    pub x_eq: DVector<f64>,
    pub x0: DVector<f64>,
}

/// Solves the power flow with the node's base renewable, initializes the
/// machines there, then scales the renewable and re-solves the algebraic
/// states with the machine states held.
pub fn prepare(net: &PowerNetwork, spec: &PerturbationSpec, cfg: &PipelineConfig) -> Result<PreparedRun> {
    let k = net.bus_index(spec.node).ok_or(Error::UnknownBus(spec.node))?;
    let mut base = net.clone();
    base.buses[k].renewable_p = spec.base_injection.0;
    base.buses[k].renewable_q = spec.base_injection.1;
    let steady = solve_powerflow(&base, &cfg.powerflow)?;
    let mut model = PowerSystemModel::new(&base, cfg.model)?;
    let x_eq = model.initialize(&steady)?;
    let (p, q) = spec.perturbed();
    model.renewable_p[k] = p;
    model.renewable_q[k] = q;
    let x0 = if spec.beta == 0.0 {
        x_eq.clone()
    } else {
        model.solve_algebraic(&x_eq, cfg.algebraic_tol, cfg.powerflow.max_iter)?
    };
    Ok(PreparedRun {
        spec: *spec,
        steady,
        model,
        x_eq,
        x0,
    })
}

/// Everything recorded from one simulated perturbation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub analyzer: TrajectoryAnalyzer,
    pub times: Vec<f64>,
    /// Rotor speed per machine per stored state.
    pub omega: Vec<Vec<f64>>,
    pub max_nr_iterations: usize,
    pub max_algebraic_residual: f64,
}

/// Simulates a prepared run, streaming step maps into tensors for
/// `selectors` and, optionally, a square-root factor for `root`.
pub fn analyze(
    prep: &PreparedRun,
    sim: &SimConfig,
    selectors: Vec<StateSelector>,
    root: Option<StateSelector>,
) -> Result<RunOutput> {
    let model = &prep.model;
    let n = model.layout.dim();
    let mut analyzer = TrajectoryAnalyzer::new(n, selectors)?;
    if let Some(r) = root {
        analyzer = analyzer.with_root(r)?;
    }
    let g = model.layout.g;
    let mut out_times = Vec::new();
    let mut omega = vec![Vec::new(); g];
    let mut max_nr = 0;
    let mut max_res: f64 = 0.0;
    let ode = ReducedOde::new(model);
    simulate_with(&ode, &prep.x0, sim, true, |rec| {
        if let Some(m) = rec.map {
            analyzer.push(m).map_err(|e| e.at_step(rec.k))?;
        }
        out_times.push(rec.t);
        for (i, w) in omega.iter_mut().enumerate() {
            w.push(rec.x[model.layout.omega(i)]);
        }
        max_nr = max_nr.max(rec.nr_iterations);
        max_res = max_res.max(inf_norm(&model.algebraic(rec.x)));
        Ok(())
    })?;
    Ok(RunOutput {
        analyzer,
        times: out_times,
        omega,
        max_nr_iterations: max_nr,
        max_algebraic_residual: max_res,
    })
}

#[derive(Debug, Clone)]
pub struct NodeRun {
    pub node: u32,
    /// Global-selector tensor used by the allocation objective.
    pub tensor: DeformationTensor,
    /// Exponent of the perturbed bus's own channels.
    pub own_exponent: f64,
    pub spectrum: LyapunovSpectrum,
    pub times: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    pub max_nr_iterations: usize,
    pub max_algebraic_residual: f64,
}

/// Perturb, initialize, simulate and accumulate the global-selector tensor
/// along with the perturbed bus's own tensor.
pub fn per_node_tensor(net: &PowerNetwork, node: u32, beta: f64, cfg: &PipelineConfig) -> Result<NodeRun> {
    let spec = PerturbationSpec::new(net, node, beta, cfg)?;
    let prep = prepare(net, &spec, cfg)?;
    let global = StateSelector::global(&prep.model);
    let own = StateSelector::for_bus(&prep.model, node)?;
    let out = analyze(&prep, &cfg.sim, vec![global, own], None)?;
    let mut tensors = out.analyzer.tensors();
    let own_exponent = tensors[1].node_exponent()?;
    Ok(NodeRun {
        node,
        tensor: tensors.swap_remove(0),
        own_exponent,
        spectrum: out.analyzer.spectrum()?,
        times: out.times,
        omega: out.omega,
        max_nr_iterations: out.max_nr_iterations,
        max_algebraic_residual: out.max_algebraic_residual,
    })
}

/// Log-det identity check for one perturbation, over all states.
pub fn verify_logdet_identity(net: &PowerNetwork, spec: &PerturbationSpec, cfg: &PipelineConfig) -> Result<LogDetIdentity> {
    let prep = prepare(net, spec, cfg)?;
    let all = StateSelector::all(prep.model.layout.dim());
    let out = analyze(&prep, &cfg.sim, vec![all.clone()], Some(all))?;
    crate::lyapunov::logdet_identity(&out.analyzer, 0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeTensorBank {
    pub dim: usize,
    pub horizon: usize,
    pub tensors: BTreeMap<u32, DMatrix<f64>>,
    /// Nodes whose experiment failed, with the reason.
    pub failed: BTreeMap<u32, String>,
}

impl NodeTensorBank {
    pub fn new(dim: usize, horizon: usize) -> Self {
        Self {
            dim,
            horizon,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, node: u32, tensor: DMatrix<f64>) -> Result<()> {
        if tensor.nrows() != self.dim || tensor.ncols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: tensor.nrows(),
            });
        }
        self.tensors.insert(node, tensor);
        Ok(())
    }

    pub fn mark_failed(&mut self, node: u32, reason: impl ToString) {
        self.failed.insert(node, reason.to_string());
    }

    /// Collects sweep results; failures are recorded, not propagated.
    pub fn from_runs(runs: Vec<(u32, Result<NodeRun>)>) -> Result<Self> {
        let mut bank: Option<Self> = None;
        let mut failed = BTreeMap::new();
        for (node, r) in runs {
            match r {
                Ok(run) => {
                    let b = bank.get_or_insert_with(|| Self::new(run.tensor.matrix.nrows(), run.tensor.horizon));
                    if run.tensor.horizon != b.horizon {
                        return Err(Error::Dimension {
                            expected: b.horizon,
                            got: run.tensor.horizon,
                        });
                    }
                    b.insert(node, run.tensor.matrix)?;
                }
                Err(e) => {
                    failed.insert(node, e.to_string());
                }
            }
        }
        let mut bank = bank.unwrap_or_default();
        bank.failed = failed;
        Ok(bank)
    }

    /// Candidate nodes, successful and failed.
    pub fn len(&self) -> usize {
        self.tensors.len() + self.failed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> Vec<u32> {
        self.tensors.keys().copied().collect()
    }
}

fn log_det_ridged(sum: &DMatrix<f64>, ridge: f64) -> f64 {
    let n = sum.nrows();
    let mut m = sum.clone();
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    match spd_log_det(&m) {
        Some(v) => v,
        // Round-off can break Cholesky when the spread of eigenvalues is extreme.
        None => symmetric_eigenvalues(sum).iter().map(|&e| libm::log(e.max(0.0) + ridge)).sum(),
    }
}

/// `log det(Σ_{i∈S} Ξ̃_i + ridge·I) − n·log ridge`, so the empty set scores 0.
pub fn set_objective(set: &[u32], bank: &NodeTensorBank, ridge: f64) -> Result<f64> {
    let n = bank.dim;
    let mut sum = DMatrix::zeros(n, n);
    let mut members: Vec<u32> = set.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Ok(0.0);
    }
    for node in members {
        let t = bank.tensors.get(&node).ok_or(Error::UnknownBus(node))?;
        sum += t;
    }
    Ok(log_det_ridged(&sum, ridge) - n as f64 * libm::log(ridge))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AllocationResult {
    /// From most critical to most stable.
    pub ordered_nodes: Vec<u32>,
    /// Objective increase of each pick; failed nodes carry NaN.
    pub marginal_gains: Vec<f64>,
    /// Objective after each pick.
    pub objective_trace: Vec<f64>,
    pub failed: Vec<u32>,
}

/// Greedy maximization of the log-det objective. Failed nodes are treated as
/// the most critical and lead the order.
pub fn greedy_allocate(bank: &NodeTensorBank, s: usize, ridge: f64) -> Result<AllocationResult> {
    if s > bank.len() {
        return Err(Error::TooManyNodes {
            requested: s,
            available: bank.len(),
        });
    }
    let n = bank.dim;
    let mut result = AllocationResult {
        ordered_nodes: Vec::with_capacity(s),
        marginal_gains: Vec::with_capacity(s),
        objective_trace: Vec::with_capacity(s),
        failed: bank.failed.keys().copied().collect(),
    };
    let offset = n as f64 * libm::log(ridge);
    let mut current = 0.0;
    for &node in bank.failed.keys().take(s) {
        result.ordered_nodes.push(node);
        result.marginal_gains.push(f64::NAN);
        result.objective_trace.push(current);
    }
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut remaining: Vec<u32> = bank.nodes();
    while result.ordered_nodes.len() < s {
        let mut best: Option<(usize, f64)> = None;
        for (pos, node) in remaining.iter().enumerate() {
            let value = log_det_ridged(&(&sum + &bank.tensors[node]), ridge) - offset;
            // Candidates are visited in ascending id, so strict > keeps the lowest id on ties.
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((pos, value));
            }
        }
        let (pos, value) = best.expect("s within bank size");
        let node = remaining.remove(pos);
        sum += &bank.tensors[&node];
        result.ordered_nodes.push(node);
        result.marginal_gains.push(value - current);
        result.objective_trace.push(value);
        current = value;
    }
    Ok(result)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive maximum over all size-`s` subsets of the successful nodes.
pub fn brute_force_allocate(bank: &NodeTensorBank, s: usize, ridge: f64) -> Result<(Vec<u32>, f64)> {
    let nodes = bank.nodes();
    if nodes.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchTooLarge {
            limit: BRUTE_FORCE_LIMIT,
            got: nodes.len(),
        });
    }
    if s > nodes.len() {
        return Err(Error::TooManyNodes {
            requested: s,
            available: nodes.len(),
        });
    }
    let mut comb: Vec<usize> = (0..s).collect();
    let mut best: Option<(Vec<u32>, f64)> = None;
    loop {
        let set: Vec<u32> = comb.iter().map(|&i| nodes[i]).collect();
        let v = set_objective(&set, bank, ridge)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((set, v));
        }
        if s == 0 || !next_combination(&mut comb, nodes.len()) {
            break;
        }
    }
    Ok(best.expect("at least one subset"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_bank(values: &[(u32, f64)], n: usize) -> NodeTensorBank {
        let mut b = NodeTensorBank::new(n, 10);
        for &(node, d) in values {
            b.insert(node, DMatrix::identity(n, n) * d).unwrap();
        }
        b
    }

    #[test]
    fn empty_set_scores_zero() {
        let b = diag_bank(&[(1, 2.0)], 3);
        assert_eq!(set_objective(&[], &b, DEFAULT_RIDGE).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_closed_form() {
        let b = diag_bank(&[(1, 2.0), (2, 0.5), (3, 1.5)], 4);
        let r = 1e-3;
        let v = set_objective(&[1, 3], &b, r).unwrap();
        let expect = 4.0 * libm::log(r + 3.5) - 4.0 * libm::log(r);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn greedy_trivial_sizes() {
        let b = diag_bank(&[(4, 1.0)], 2);
        assert!(greedy_allocate(&b, 0, DEFAULT_RIDGE).unwrap().ordered_nodes.is_empty());
        assert_eq!(greedy_allocate(&b, 1, DEFAULT_RIDGE).unwrap().ordered_nodes, vec![4]);
        assert!(matches!(
            greedy_allocate(&b, 2, DEFAULT_RIDGE),
            Err(Error::TooManyNodes { .. })
        ));
    }

    #[test]
    fn greedy_ties_prefer_lower_id() {
        let b = diag_bank(&[(7, 1.0), (3, 1.0), (5, 1.0)], 2);
        let r = greedy_allocate(&b, 3, DEFAULT_RIDGE).unwrap();
        assert_eq!(r.ordered_nodes, vec![3, 5, 7]);
    }

    #[test]
    fn failed_nodes_lead() {
        let mut b = diag_bank(&[(1, 1.0), (2, 3.0)], 2);
        b.mark_failed(9, "diverged");
        let r = greedy_allocate(&b, 3, DEFAULT_RIDGE).unwrap();
        assert_eq!(r.ordered_nodes, vec![9, 2, 1]);
        assert!(r.marginal_gains[0].is_nan());
    }

    #[test]
    fn brute_force_single_pick() {
        let b = diag_bank(&[(1, 1.0), (2, 3.0), (3, 2.0)], 2);
        let (set, v) = brute_force_allocate(&b, 1, DEFAULT_RIDGE).unwrap();
        assert_eq!(set, vec![2]);
        assert_eq!(v, set_objective(&[2], &b, DEFAULT_RIDGE).unwrap());
        let (all, _) = brute_force_allocate(&b, 3, DEFAULT_RIDGE).unwrap();
        assert_eq!(all, vec![1, 2, 3]);
    }

    #[test]
    fn brute_force_guard() {
        let vals: Vec<(u32, f64)> = (1..=21).map(|i| (i, 1.0)).collect();
        let b = diag_bank(&vals, 1);
        assert!(matches!(
            brute_force_allocate(&b, 2, DEFAULT_RIDGE),
            Err(Error::SearchTooLarge { .. })
        ));
    }
}
