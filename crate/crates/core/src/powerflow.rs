//! Polar Newton-Raphson AC power flow and the bus-injection kernels shared
//! with the dynamic model.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Factorized};
use crate::network::{AdmittanceMatrix, BusKind, PowerNetwork};
use crate::scalar::Scalar;

/// Form of the reactive balance equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum QBalance {
    /// Q_i = Σ v_i v_j (G sin θij − B cos θij)
    #[default]
    Standard,
    /// Q_i = Σ v_i v_j (G cos θij − B sin θij), the printed variant.
    PaperLiteral,
}

impl QBalance {
    #[inline]
    fn coeff<S: Scalar>(self, g: f64, b: f64, s: S, c: S) -> S {
        match self {
            QBalance::Standard => s.scale(g) - c.scale(b),
            QBalance::PaperLiteral => c.scale(g) - s.scale(b),
        }
    }

    /// Derivative of `coeff` with respect to θ_i.
    #[inline]
    fn coeff_dtheta(self, g: f64, b: f64, s: f64, c: f64) -> f64 {
        match self {
            QBalance::Standard => g * c + b * s,
            QBalance::PaperLiteral => -g * s - b * c,
        }
    }
}

/// Sparse view of the admittance used by the injection kernels.
#[derive(Debug, Clone)]
pub struct SparseY {
    /// Per row: (column, G, B), diagonal first.
    pub rows: Vec<Vec<(usize, f64, f64)>>,
}

impl SparseY {
    pub fn new(y: &AdmittanceMatrix) -> Self {
        let rows = y
            .adjacency()
            .into_iter()
            .enumerate()
            .map(|(i, cols)| cols.into_iter().map(|j| (j, y.g[(i, j)], y.b[(i, j)])).collect())
            .collect();
        Self { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

/// Computed active and reactive injections at every bus.
pub fn injections<S: Scalar>(y: &SparseY, v: &[S], theta: &[S], mode: QBalance) -> (Vec<S>, Vec<S>) {
    let n = y.dim();
    let mut p = vec![S::constant(0.0); n];
    let mut q = vec![S::constant(0.0); n];
    for i in 0..n {
        let mut pa = S::constant(0.0);
        let mut qa = S::constant(0.0);
        for &(j, g, b) in &y.rows[i] {
            let t = theta[i] - theta[j];
            let (s, c) = (t.sin(), t.cos());
            pa = pa + v[j] * (c.scale(g) + s.scale(b));
            qa = qa + v[j] * mode.coeff(g, b, s, c);
        }
        p[i] = v[i] * pa;
        q[i] = v[i] * qa;
    }
    (p, q)
}

/// Dense partials of the injections with respect to θ and v.
pub struct InjectionJacobian {
    pub dp_dtheta: DMatrix<f64>,
    pub dp_dv: DMatrix<f64>,
    pub dq_dtheta: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
}

pub fn injection_jacobian(y: &SparseY, v: &[f64], theta: &[f64], mode: QBalance) -> InjectionJacobian {
    let n = y.dim();
    let mut jac = InjectionJacobian {
        dp_dtheta: DMatrix::zeros(n, n),
        dp_dv: DMatrix::zeros(n, n),
        dq_dtheta: DMatrix::zeros(n, n),
        dq_dv: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for &(j, g, b) in &y.rows[i] {
            if j == i {
                let qd = mode.coeff(g, b, 0.0, 1.0);
                jac.dp_dv[(i, i)] += 2.0 * v[i] * g;
                jac.dq_dv[(i, i)] += 2.0 * v[i] * qd;
                continue;
            }
            let t = theta[i] - theta[j];
            let (s, c) = (libm::sin(t), libm::cos(t));
            let a = g * c + b * s;
            let bb = g * s - b * c;
            let qc = mode.coeff(g, b, s, c);
            let qt = mode.coeff_dtheta(g, b, s, c);
            let vv = v[i] * v[j];

            jac.dp_dtheta[(i, j)] += vv * bb;
            jac.dp_dtheta[(i, i)] -= vv * bb;
            jac.dp_dv[(i, j)] += v[i] * a;
            jac.dp_dv[(i, i)] += v[j] * a;

            jac.dq_dtheta[(i, j)] -= vv * qt;
            jac.dq_dtheta[(i, i)] += vv * qt;
            jac.dq_dv[(i, j)] += v[i] * qc;
            jac.dq_dv[(i, i)] += v[j] * qc;
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub q_balance: QBalance,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            q_balance: QBalance::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SteadyState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    /// Infinity norm of the final mismatch.
    pub mismatch: f64,
    /// Mismatch norm before each Newton update, then the final one.
    pub history: Vec<f64>,
}

impl SteadyState {
    /// Generator output at bus index `i`: injection plus local load minus renewable.
    pub fn generation_at(&self, net: &PowerNetwork, i: usize) -> (f64, f64) {
        let bus = &net.buses[i];
        (
            self.p_inj[i] + bus.load_p - bus.renewable_p,
            self.q_inj[i] + bus.load_q - bus.renewable_q,
        )
    }
}

pub fn solve_powerflow(net: &PowerNetwork, opts: &PowerFlowOptions) -> Result<SteadyState> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("power-flow tolerance must be positive".into()));
    }
    let y = SparseY::new(&net.admittance()?);
    let n = net.n_buses();

    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (i, bus) in net.buses.iter().enumerate() {
        p_spec[i] = bus.renewable_p - bus.load_p;
        q_spec[i] = bus.renewable_q - bus.load_q;
    }
    for g in &net.generators {
        let i = net.bus_index(g.bus).expect("validated");
        v[i] = g.v_set;
        p_spec[i] += g.p_set;
    }

    // The printed reactive balance has a singular Jacobian at flat start, so
    // it starts from the standard solution.
    if opts.q_balance == QBalance::PaperLiteral {
        let warm = solve_powerflow(
            net,
            &PowerFlowOptions {
                q_balance: QBalance::Standard,
                ..*opts
            },
        )?;
        v.copy_from_slice(warm.v.as_slice());
        theta.copy_from_slice(warm.theta.as_slice());
    }

    let ang: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind == BusKind::Load).collect();
    let m = ang.len() + mag.len();

    let mismatch = |v: &[f64], theta: &[f64]| {
        let (p, q) = injections(&y, v, theta, opts.q_balance);
        let mut r = DVector::zeros(m);
        for (k, &i) in ang.iter().enumerate() {
            r[k] = p[i] - p_spec[i];
        }
        for (k, &i) in mag.iter().enumerate() {
            r[ang.len() + k] = q[i] - q_spec[i];
        }
        r
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = mismatch(&v, &theta);
        let norm = inf_norm(&r);
        history.push(norm);
        if !norm.is_finite() {
            return Err(Error::PowerFlowDiverged { iterations, mismatch: norm });
        }
        if norm < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::PowerFlowDiverged { iterations, mismatch: norm });
        }

        let jac = injection_jacobian(&y, &v, &theta, opts.q_balance);
        let mut a = DMatrix::zeros(m, m);
        for (r_k, &i) in ang.iter().enumerate() {
            for (c_k, &j) in ang.iter().enumerate() {
                a[(r_k, c_k)] = jac.dp_dtheta[(i, j)];
            }
            for (c_k, &j) in mag.iter().enumerate() {
                a[(r_k, ang.len() + c_k)] = jac.dp_dv[(i, j)];
            }
        }
        for (r_k, &i) in mag.iter().enumerate() {
            for (c_k, &j) in ang.iter().enumerate() {
                a[(ang.len() + r_k, c_k)] = jac.dq_dtheta[(i, j)];
            }
            for (c_k, &j) in mag.iter().enumerate() {
                a[(ang.len() + r_k, ang.len() + c_k)] = jac.dq_dv[(i, j)];
            }
        }
        let dx = Factorized::new(a, "power-flow Jacobian")?.solve(&(-r));
        for (k, &i) in ang.iter().enumerate() {
            theta[i] += dx[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            v[i] += dx[ang.len() + k];
        }
        iterations += 1;
    }

    let (p_inj, q_inj) = injections(&y, &v, &theta, opts.q_balance);
    Ok(SteadyState {
        mismatch: *history.last().expect("at least one evaluation"),
        v,
        theta,
        p_inj,
        q_inj,
        iterations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, Generator, MachineParams};

    fn two_bus(p: f64, q: f64) -> PowerNetwork {
        let slack = Bus::load(1, 0.0, 0.0).with_kind(BusKind::Slack);
        PowerNetwork::new(
            100.0,
            vec![slack, Bus::load(2, p, q)],
            vec![Branch::line(1, 2, 0.0, 0.1, 0.0)],
            vec![Generator {
                bus: 1,
                p_set: 0.0,
                v_set: 1.0,
                params: MachineParams::default(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn no_load_flat_solution() {
        let ss = solve_powerflow(&two_bus(0.0, 0.0), &PowerFlowOptions::default()).unwrap();
        assert_eq!(ss.iterations, 0);
        assert!(ss.v.iter().all(|v| (*v - 1.0).abs() < 1e-14));
        assert!(ss.theta.iter().all(|t| t.abs() < 1e-14));
    }

    #[test]
    fn two_bus_matches_quadratic() {
        // V2 = v e^{jθ}; S = 0.5 + j0.2 drawn through x = 0.1 from 1∠0.
        // Writing u = v², the high-voltage root of u² − 0.96u + 0.0029 = 0,
        // with v sinθ = −0.05 and v cosθ = u + 0.02.
        let ss = solve_powerflow(&two_bus(0.5, 0.2), &PowerFlowOptions::default()).unwrap();
        let disc: f64 = 0.96 * 0.96 - 4.0 * 0.0029;
        let u = 0.5 * (0.96 + disc.sqrt());
        let v = u.sqrt();
        let th = (-0.05f64).atan2(u + 0.02);
        assert!((ss.v[1] - v).abs() < 1e-9, "{} vs {}", ss.v[1], v);
        assert!((ss.theta[1] - th).abs() < 1e-9);
        assert!((ss.v[1] * ss.theta[1].sin() + 0.05).abs() < 1e-9);
    }

    #[test]
    fn injection_jacobian_matches_finite_differences() {
        let slack = Bus::load(1, 0.0, 0.0).with_kind(BusKind::Slack);
        let net = PowerNetwork::new(
            100.0,
            vec![slack, Bus::load(2, 0.3, 0.1), Bus::load(3, 0.2, 0.05)],
            vec![
                Branch::line(1, 2, 0.02, 0.1, 0.05),
                Branch::line(2, 3, 0.01, 0.08, 0.02),
                Branch::line(1, 3, 0.03, 0.2, 0.0),
            ],
            vec![Generator {
                bus: 1,
                p_set: 0.0,
                v_set: 1.0,
                params: MachineParams::default(),
            }],
        )
        .unwrap();
        let y = SparseY::new(&net.admittance().unwrap());
        let v = [1.02, 0.97, 0.95];
        let th = [0.0, -0.1, -0.17];
        for mode in [QBalance::Standard, QBalance::PaperLiteral] {
            let jac = injection_jacobian(&y, &v, &th, mode);
            let eps = 1e-6;
            for j in 0..3 {
                let (mut tp, mut tm) = (th, th);
                tp[j] += eps;
                tm[j] -= eps;
                let (pp, qp) = injections(&y, &v, &tp, mode);
                let (pm, qm) = injections(&y, &v, &tm, mode);
                let (mut vp, mut vm) = (v, v);
                vp[j] += eps;
                vm[j] -= eps;
                let (pvp, qvp) = injections(&y, &vp, &th, mode);
                let (pvm, qvm) = injections(&y, &vm, &th, mode);
                for i in 0..3 {
                    let d = 0.5 / eps;
                    assert!((jac.dp_dtheta[(i, j)] - (pp[i] - pm[i]) * d).abs() < 1e-7);
                    assert!((jac.dq_dtheta[(i, j)] - (qp[i] - qm[i]) * d).abs() < 1e-7);
                    assert!((jac.dp_dv[(i, j)] - (pvp[i] - pvm[i]) * d).abs() < 1e-7);
                    assert!((jac.dq_dv[(i, j)] - (qvp[i] - qvm[i]) * d).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        // Far beyond the nose of the PV curve.
        let err = solve_powerflow(&two_bus(10.0, 5.0), &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, Error::PowerFlowDiverged { .. } | Error::Singular(_)));
    }
}
