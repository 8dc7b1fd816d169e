use lyapgrid::load_case;
use lyapgrid_core::allocate::{
    analyze, greedy_allocate, per_node_tensor, prepare, PerturbationSpec, PipelineConfig, DEFAULT_RIDGE,
};
use lyapgrid_core::dynamics::{Dae, GovernorSign, ModelOptions};
use lyapgrid_core::linalg::inf_norm;
use lyapgrid_core::lyapunov::StateSelector;
use lyapgrid_core::network::PowerNetwork;

fn case9() -> PowerNetwork {
    load_case(&lyapgrid::data_dir().join("case9.m"), None).unwrap()
}

#[test]
fn zero_perturbation_stays_at_equilibrium() {
    let net = case9();
    let cfg = PipelineConfig::default();
    let spec = PerturbationSpec::new(&net, 5, 0.0, &cfg).unwrap();
    let prep = prepare(&net, &spec, &cfg).unwrap();
    assert_eq!(prep.x0, prep.x_eq);
    let out = analyze(&prep, &cfg.sim, vec![StateSelector::all(prep.model.layout.dim())], None).unwrap();
    let w0 = lyapgrid_core::OMEGA0;
    for w in out.omega.iter().flatten() {
        assert!((w - w0).abs() < 1e-9, "{w}");
    }
}

#[test]
fn perturbation_moves_the_algebraic_states_only() {
    let net = case9();
    let cfg = PipelineConfig::default();
    let spec = PerturbationSpec::new(&net, 5, 2.0, &cfg).unwrap();
    assert_eq!(spec.base_injection, (1.0, 0.0));
    assert_eq!(spec.perturbed(), (1.02, 0.0));
    let prep = prepare(&net, &spec, &cfg).unwrap();
    let nd = prep.model.n_diff();
    assert_eq!(prep.x0.rows(0, nd), prep.x_eq.rows(0, nd));
    assert!(inf_norm(&prep.model.algebraic(&prep.x0)) < 1e-10);
    assert!((prep.x0.clone() - &prep.x_eq).amax() > 1e-4);
}

#[test]
fn node_tensor_is_symmetric_psd_and_every_step_converges() {
    let net = case9();
    let cfg = PipelineConfig::default();
    let run = per_node_tensor(&net, 5, 2.0, &cfg).unwrap();
    let t = &run.tensor;
    assert!((&t.matrix - t.matrix.transpose()).amax() <= 1e-12 * t.matrix.amax());
    t.check_psd().unwrap();
    assert_eq!(t.horizon, 300);
    assert!(run.max_nr_iterations <= cfg.sim.nr_max_iter);
}

// The bus tensor is the sum of its channel tensors, which pins its exponent
// between the largest channel exponent and that plus ln(m)/2(N−1).
#[test]
fn generator_bus_exponent_is_sandwiched_by_channels() {
    let net = case9();
    let cfg = PipelineConfig::default();
    let spec = PerturbationSpec::new(&net, 5, 2.0, &cfg).unwrap();
    let prep = prepare(&net, &spec, &cfg).unwrap();
    for bus in [1, 2, 3] {
        let mut sels = vec![StateSelector::for_bus(&prep.model, bus).unwrap()];
        sels.extend(StateSelector::channels(&prep.model, bus).unwrap());
        let out = analyze(&prep, &cfg.sim, sels, None).unwrap();
        let ex: Vec<f64> = out.analyzer.tensors().iter().map(|t| t.node_exponent().unwrap()).collect();
        assert!(ex.iter().all(|e| e.is_finite()));
        let top = ex[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = ((ex.len() - 1) as f64).ln() / (2.0 * (out.analyzer.horizon() - 1) as f64);
        assert!(ex[0] >= top - 1e-12, "bus {bus}: {} < {top}", ex[0]);
        assert!(ex[0] <= top + slack + 1e-12, "bus {bus}: {} > {top} + {slack}", ex[0]);
    }
}

#[test]
#[ignore = "does not hold for this model: on case9 the trace falls as beta grows, see README"]
fn larger_perturbation_does_not_shrink_the_tensor() {
    let net = case9();
    let cfg = PipelineConfig::default();
    for b in &net.buses {
        let small = per_node_tensor(&net, b.id, 2.0, &cfg).unwrap().tensor.trace();
        let large = per_node_tensor(&net, b.id, 20.0, &cfg).unwrap().tensor.trace();
        assert!(large >= small, "bus {}: {large} < {small}", b.id);
    }
}

#[test]
fn failed_nodes_lead_the_allocation() {
    let net = case9();
    // The printed governor sign is unstable and diverges on a long horizon.
    let cfg = PipelineConfig {
        model: ModelOptions {
            governor: GovernorSign::PaperLiteral,
            ..ModelOptions::default()
        },
        ..PipelineConfig::default()
    };
    let res = lyapgrid::sweep::sweep(&net, &[4, 5], 2.0, &cfg, 1).unwrap();
    assert_eq!(res.bank.failed.len(), 2);
    assert!(res.nodes.iter().all(|n| n.error.is_some()));
    let alloc = greedy_allocate(&res.bank, 2, DEFAULT_RIDGE).unwrap();
    assert_eq!(alloc.ordered_nodes, vec![4, 5]);
    assert_eq!(alloc.failed, vec![4, 5]);
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let net = case9();
    let cfg = PipelineConfig::default();
    let nodes = [9, 2, 5];
    let a = lyapgrid::sweep::sweep(&net, &nodes, 2.0, &cfg, 1).unwrap();
    let b = lyapgrid::sweep::sweep(&net, &nodes, 2.0, &cfg, 3).unwrap();
    assert_eq!(a.bank, b.bank);
    assert_eq!(a.nodes, b.nodes);
    assert_eq!(a.bank.nodes(), vec![2, 5, 9]);
}
