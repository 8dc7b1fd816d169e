//! 4th-order synchronous machine network model written as a semi-explicit
//! DAE, and its reduction to an ODE through the implicit function theorem.
//!
//! State layout for G machines on N buses:
//! `x = [δ (G), ω (G), E' (G), T_N (G) | P_G (G), Q_G (G), v (N), θ (N)]`.
//! Algebraic rows are ordered as stator P, stator Q, bus P balance, bus Q
//! balance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Factorized;
use crate::network::{MachineParams, PowerNetwork};
use crate::powerflow::{injection_jacobian, injections, QBalance, SparseY, SteadyState};
use crate::scalar::{HyperDual, Scalar};

/// A semi-explicit DAE `ẋ_d = f(x)`, `0 = g(x)` with `x = [x_d, x_a]`.
pub trait Dae {
    fn n_diff(&self) -> usize;
    fn n_alg(&self) -> usize;
    fn dim(&self) -> usize {
        self.n_diff() + self.n_alg()
    }
    fn differential(&self, x: &DVector<f64>) -> DVector<f64>;
    fn algebraic(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∂f/∂x`, n_d × n.
    fn differential_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂g/∂x`, n_a × n.
    fn algebraic_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂/∂x (G_x(x)·c)` for a fixed vector `c`, n_a × n.
    fn algebraic_curvature(&self, x: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64>;
    /// Rejects states the model cannot continue from.
    fn check_state(&self, _x: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

/// Split `G_x` into `(G_xd, G_xa)`.
pub fn algebraic_jacobians<D: Dae + ?Sized>(dae: &D, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let gx = dae.algebraic_jacobian(x);
    let nd = dae.n_diff();
    let na = dae.n_alg();
    (gx.columns(0, nd).into_owned(), gx.columns(nd, na).into_owned())
}

/// An explicit ODE `ẋ = F(x)` with an exact Jacobian.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn rhs_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.rhs(x)?, self.jacobian(x)?))
    }
    fn check_state(&self, _x: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

/// Linear ODE `ẋ = A x`.
#[derive(Debug, Clone)]
pub struct LinearOde(pub DMatrix<f64>);

impl OdeSystem for LinearOde {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.0 * x)
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

/// The DAE with its algebraic states advanced by `ẋ_a = −G_xa⁻¹ G_xd f`.
pub struct ReducedOde<'a, D: Dae + ?Sized> {
    pub dae: &'a D,
}

impl<'a, D: Dae + ?Sized> ReducedOde<'a, D> {
    pub fn new(dae: &'a D) -> Self {
        Self { dae }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dae.dim() {
            return Err(Error::Dimension {
                expected: self.dae.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn factor_gxa(&self, gxa: DMatrix<f64>, x: &DVector<f64>) -> Result<Factorized> {
        Factorized::new(gxa, "G_xa").map_err(|_| Error::SingularAlgebraic {
            context: format!("x = {:?}", x.as_slice()),
        })
    }

    fn evaluate(&self, x: &DVector<f64>, with_jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        self.check_dim(x)?;
        let nd = self.dae.n_diff();
        let na = self.dae.n_alg();
        let f = self.dae.differential(x);
        let (gxd, gxa) = algebraic_jacobians(self.dae, x);
        let lu = self.factor_gxa(gxa, x)?;
        let ga = -lu.solve(&(&gxd * &f));

        let mut rhs = DVector::zeros(nd + na);
        rhs.rows_mut(0, nd).copy_from(&f);
        rhs.rows_mut(nd, na).copy_from(&ga);
        if !with_jacobian {
            return Ok((rhs, None));
        }

        let fx = self.dae.differential_jacobian(x);
        let curvature = self.dae.algebraic_curvature(x, &rhs);
        let lower = -lu.solve_matrix(&(&gxd * &fx + curvature));
        let mut jac = DMatrix::zeros(nd + na, nd + na);
        jac.rows_mut(0, nd).copy_from(&fx);
        jac.rows_mut(nd, na).copy_from(&lower);
        Ok((rhs, Some(jac)))
    }
}

impl<D: Dae + ?Sized> OdeSystem for ReducedOde<'_, D> {
    fn dim(&self) -> usize {
        self.dae.dim()
    }
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(x, false)?.0)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(x, true)?.1.expect("requested"))
    }
    fn rhs_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (r, j) = self.evaluate(x, true)?;
        Ok((r, j.expect("requested")))
    }
    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        self.dae.check_state(x)
    }
}

/// Linear DAE `ẋ_d = A_dd x_d + A_da x_a`, `0 = A_ad x_d + A_aa x_a`.
#[derive(Debug, Clone)]
pub struct LinearDae {
    pub a: DMatrix<f64>,
    pub n_diff: usize,
}

impl Dae for LinearDae {
    fn n_diff(&self) -> usize {
        self.n_diff
    }
    fn n_alg(&self) -> usize {
        self.a.nrows() - self.n_diff
    }
    fn differential(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.rows(0, self.n_diff) * x
    }
    fn algebraic(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.rows(self.n_diff, self.n_alg()) * x
    }
    fn differential_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.rows(0, self.n_diff).into_owned()
    }
    fn algebraic_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.rows(self.n_diff, self.n_alg()).into_owned()
    }
    fn algebraic_curvature(&self, x: &DVector<f64>, _c: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.n_alg(), x.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GovernorSign {
    /// T_CH Ṫ_N = −T_N − (ω − ω₀)/R_D + T_r
    #[default]
    Stabilizing,
    /// T_CH Ṫ_N = T_N − (ω − ω₀)/R_D + T_r, the printed variant with positive feedback.
    PaperLiteral,
}

impl GovernorSign {
    fn coeff(self) -> f64 {
        match self {
            GovernorSign::Stabilizing => -1.0,
            GovernorSign::PaperLiteral => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StatorQ {
    /// Constant term v²(x'_d + x_q)/(2 x'_d x_q).
    #[default]
    Standard,
    /// Constant term v²(x_q − x'_d)/(2 x'_d x_q), the printed variant.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelOptions {
    pub q_balance: QBalance,
    pub governor: GovernorSign,
    pub stator_q: StatorQ,
}

/// Field voltage and governor reference per machine.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlInput {
    pub e_fd: Vec<f64>,
    pub t_r: Vec<f64>,
}

/// Quantity addressed by a flat state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Delta,
    Omega,
    EqPrime,
    Tn,
    Pg,
    Qg,
    V,
    Theta,
}

/// Index arithmetic for the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub g: usize,
    pub n: usize,
}

impl StateLayout {
    pub fn n_diff(&self) -> usize {
        4 * self.g
    }
    pub fn n_alg(&self) -> usize {
        2 * self.g + 2 * self.n
    }
    pub fn dim(&self) -> usize {
        6 * self.g + 2 * self.n
    }
    pub fn delta(&self, i: usize) -> usize {
        i
    }
    pub fn omega(&self, i: usize) -> usize {
        self.g + i
    }
    pub fn e(&self, i: usize) -> usize {
        2 * self.g + i
    }
    pub fn tn(&self, i: usize) -> usize {
        3 * self.g + i
    }
    pub fn pg(&self, i: usize) -> usize {
        4 * self.g + i
    }
    pub fn qg(&self, i: usize) -> usize {
        5 * self.g + i
    }
    pub fn v(&self, k: usize) -> usize {
        6 * self.g + k
    }
    pub fn theta(&self, k: usize) -> usize {
        6 * self.g + self.n + k
    }

    /// Inverse map: flat index to (quantity, machine or bus position).
    pub fn locate(&self, idx: usize) -> Option<(Quantity, usize)> {
        let (g, n) = (self.g, self.n);
        let q = match idx {
            i if i < g => (Quantity::Delta, i),
            i if i < 2 * g => (Quantity::Omega, i - g),
            i if i < 3 * g => (Quantity::EqPrime, i - 2 * g),
            i if i < 4 * g => (Quantity::Tn, i - 3 * g),
            i if i < 5 * g => (Quantity::Pg, i - 4 * g),
            i if i < 6 * g => (Quantity::Qg, i - 5 * g),
            i if i < 6 * g + n => (Quantity::V, i - 6 * g),
            i if i < 6 * g + 2 * n => (Quantity::Theta, i - 6 * g - n),
            _ => return None,
        };
        Some(q)
    }

    pub fn index_of(&self, q: Quantity, k: usize) -> usize {
        match q {
            Quantity::Delta => self.delta(k),
            Quantity::Omega => self.omega(k),
            Quantity::EqPrime => self.e(k),
            Quantity::Tn => self.tn(k),
            Quantity::Pg => self.pg(k),
            Quantity::Qg => self.qg(k),
            Quantity::V => self.v(k),
            Quantity::Theta => self.theta(k),
        }
    }
}

/// The network-wide machine model.
#[derive(Debug, Clone)]
pub struct PowerSystemModel {
    pub layout: StateLayout,
    pub bus_ids: Vec<u32>,
    /// Bus position of each machine.
    pub gen_bus: Vec<usize>,
    /// Machine index at each bus, if any.
    pub bus_gen: Vec<Option<usize>>,
    pub machines: Vec<MachineParams>,
    pub y: SparseY,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub renewable_p: Vec<f64>,
    pub renewable_q: Vec<f64>,
    pub control: ControlInput,
    pub options: ModelOptions,
    pub omega0: f64,
}

/// Voltages below this are treated as collapsed.
const MIN_VOLTAGE: f64 = 1e-6;

impl PowerSystemModel {
    pub fn new(net: &PowerNetwork, options: ModelOptions) -> Result<Self> {
        net.validate()?;
        let n = net.n_buses();
        let g = net.n_generators();
        let mut bus_gen = vec![None; n];
        let mut gen_bus = Vec::with_capacity(g);
        for (i, gen) in net.generators.iter().enumerate() {
            let k = net.bus_index(gen.bus).expect("validated");
            bus_gen[k] = Some(i);
            gen_bus.push(k);
        }
        Ok(Self {
            layout: StateLayout { g, n },
            bus_ids: net.buses.iter().map(|b| b.id).collect(),
            gen_bus,
            bus_gen,
            machines: net.generators.iter().map(|g| g.params).collect(),
            y: SparseY::new(&net.admittance()?),
            load_p: net.buses.iter().map(|b| b.load_p).collect(),
            load_q: net.buses.iter().map(|b| b.load_q).collect(),
            renewable_p: net.buses.iter().map(|b| b.renewable_p).collect(),
            renewable_q: net.buses.iter().map(|b| b.renewable_q).collect(),
            control: ControlInput {
                e_fd: vec![0.0; g],
                t_r: vec![0.0; g],
            },
            options,
            omega0: crate::OMEGA0,
        })
    }

    fn stator_coeffs(&self, i: usize) -> (f64, f64) {
        let m = &self.machines[i];
        let c = (m.x_q - m.x_d_prime) / (2.0 * m.x_d_prime * m.x_q);
        let c1 = match self.options.stator_q {
            StatorQ::Standard => (m.x_q + m.x_d_prime) / (2.0 * m.x_d_prime * m.x_q),
            StatorQ::PaperLiteral => c,
        };
        (c, c1)
    }

    /// Stator active and reactive output of machine `i`.
    fn stator<S: Scalar>(&self, i: usize, delta: S, e: S, v: S, theta: S) -> (S, S) {
        let xdp = self.machines[i].x_d_prime;
        let (c, c1) = self.stator_coeffs(i);
        let s = delta - theta;
        let s2 = s + s;
        let vv = v * v;
        let p = (e * v * s.sin()).scale(1.0 / xdp) - (vv * s2.sin()).scale(c);
        let q = (e * v * s.cos()).scale(1.0 / xdp) - vv.scale(c1) - (vv * s2.cos()).scale(c);
        (p, q)
    }

    pub fn algebraic_generic<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let l = self.layout;
        let (g, n) = (l.g, l.n);
        let mut out = Vec::with_capacity(l.n_alg());
        let mut q_rows = Vec::with_capacity(g);
        for i in 0..g {
            let k = self.gen_bus[i];
            let (p, q) = self.stator(i, x[l.delta(i)], x[l.e(i)], x[l.v(k)], x[l.theta(k)]);
            out.push(p - x[l.pg(i)]);
            q_rows.push(q - x[l.qg(i)]);
        }
        out.extend(q_rows);
        let v = &x[l.v(0)..l.v(0) + n];
        let th = &x[l.theta(0)..l.theta(0) + n];
        let (p, q) = injections(&self.y, v, th, self.options.q_balance);
        let mut qb = Vec::with_capacity(n);
        for k in 0..n {
            let mut pk = p[k] + S::constant(self.load_p[k] - self.renewable_p[k]);
            let mut qk = q[k] + S::constant(self.load_q[k] - self.renewable_q[k]);
            if let Some(i) = self.bus_gen[k] {
                pk = pk - x[l.pg(i)];
                qk = qk - x[l.qg(i)];
            }
            out.push(pk);
            qb.push(qk);
        }
        out.extend(qb);
        out
    }

    /// Consistent state and controls from a converged power flow.
    pub fn initialize(&mut self, ss: &SteadyState) -> Result<DVector<f64>> {
        let l = self.layout;
        if ss.v.len() != l.n {
            return Err(Error::Dimension {
                expected: l.n,
                got: ss.v.len(),
            });
        }
        let mut x = DVector::zeros(l.dim());
        for k in 0..l.n {
            x[l.v(k)] = ss.v[k];
            x[l.theta(k)] = ss.theta[k];
        }
        for i in 0..l.g {
            let k = self.gen_bus[i];
            let bus = self.bus_ids[k];
            let (v, th) = (ss.v[k], ss.theta[k]);
            if !(v > MIN_VOLTAGE) {
                return Err(Error::Initialization {
                    bus,
                    reason: "zero terminal voltage",
                });
            }
            let pg = ss.p_inj[k] + self.load_p[k] - self.renewable_p[k];
            let qg = ss.q_inj[k] + self.load_q[k] - self.renewable_q[k];
            let m = self.machines[i];

            // Terminal current I = conj(S / V), E_Q = V + j x_q I.
            let (vr, vi) = (v * libm::cos(th), v * libm::sin(th));
            let (ir, ii) = ((pg * vr + qg * vi) / (v * v), (pg * vi - qg * vr) / (v * v));
            let (er, ei) = (vr - m.x_q * ii, vi + m.x_q * ir);
            let mut delta = libm::atan2(ei, er);
            // d-axis current from the rotation into the machine frame.
            let i_d = ir * libm::sin(delta) - ii * libm::cos(delta);
            let mut e = v * libm::cos(delta - th) + m.x_d_prime * i_d;

            // Newton polish on the stator equations, which also covers the
            // literal reactive form.
            let mut converged = false;
            for _ in 0..50 {
                let d = HyperDual::new(delta, 1.0, 0.0, 0.0);
                let ee = HyperDual::new(e, 0.0, 1.0, 0.0);
                let vv = HyperDual::constant(v);
                let tt = HyperDual::constant(th);
                let (p, q) = self.stator(i, d, ee, vv, tt);
                let (rp, rq) = (p.re - pg, q.re - qg);
                if rp.abs().max(rq.abs()) < 1e-13 {
                    converged = true;
                    break;
                }
                let det = p.e1 * q.e2 - p.e2 * q.e1;
                if det.abs() < 1e-300 || !det.is_finite() {
                    break;
                }
                delta -= (q.e2 * rp - p.e2 * rq) / det;
                e -= (p.e1 * rq - q.e1 * rp) / det;
            }
            if !converged {
                return Err(Error::Initialization {
                    bus,
                    reason: "stator equations have no solution",
                });
            }

            let s = delta - th;
            self.control.e_fd[i] =
                (m.x_d / m.x_d_prime) * e - ((m.x_d - m.x_d_prime) / m.x_d_prime) * v * libm::cos(s);
            self.control.t_r[i] = -self.options.governor.coeff() * pg;
            x[l.delta(i)] = delta;
            x[l.omega(i)] = self.omega0;
            x[l.e(i)] = e;
            x[l.tn(i)] = pg;
            x[l.pg(i)] = pg;
            x[l.qg(i)] = qg;
        }
        Ok(x)
    }

    /// Solves `g(x_d, x_a) = 0` for `x_a` with `x_d` held, starting from `x`.
    pub fn solve_algebraic(&self, x: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
        let nd = self.layout.n_diff();
        let na = self.layout.n_alg();
        let mut x = x.clone();
        for it in 0..=max_iter {
            let g = self.algebraic(&x);
            let norm = crate::linalg::inf_norm(&g);
            if norm < tol {
                return Ok(x);
            }
            if it == max_iter || !norm.is_finite() {
                return Err(Error::PowerFlowDiverged {
                    iterations: it,
                    mismatch: norm,
                });
            }
            let (_, gxa) = algebraic_jacobians(self, &x);
            let dx = Factorized::new(gxa, "G_xa")?.solve(&(-g));
            let mut xa = x.rows_mut(nd, na);
            xa += dx;
        }
        unreachable!()
    }
}

impl Dae for PowerSystemModel {
    fn n_diff(&self) -> usize {
        self.layout.n_diff()
    }

    fn n_alg(&self) -> usize {
        self.layout.n_alg()
    }

    fn differential(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = self.layout;
        let mut f = DVector::zeros(l.n_diff());
        let gov = self.options.governor.coeff();
        for i in 0..l.g {
            let m = &self.machines[i];
            let k = self.gen_bus[i];
            let dw = x[l.omega(i)] - self.omega0;
            let s = x[l.delta(i)] - x[l.theta(k)];
            f[l.delta(i)] = dw;
            f[l.omega(i)] = (x[l.tn(i)] - x[l.pg(i)] - m.d * dw) / m.m;
            f[l.e(i)] = (-(m.x_d / m.x_d_prime) * x[l.e(i)]
                + ((m.x_d - m.x_d_prime) / m.x_d_prime) * x[l.v(k)] * libm::cos(s)
                + self.control.e_fd[i])
                / m.t_d0_prime;
            f[l.tn(i)] = (gov * x[l.tn(i)] - dw / m.r_d + self.control.t_r[i]) / m.t_ch;
        }
        f
    }

    fn algebraic(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.algebraic_generic(x.as_slice()))
    }

    fn differential_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.n_diff(), l.dim());
        let gov = self.options.governor.coeff();
        for i in 0..l.g {
            let m = &self.machines[i];
            let k = self.gen_bus[i];
            let s = x[l.delta(i)] - x[l.theta(k)];
            let v = x[l.v(k)];
            j[(l.delta(i), l.omega(i))] = 1.0;

            j[(l.omega(i), l.tn(i))] = 1.0 / m.m;
            j[(l.omega(i), l.pg(i))] = -1.0 / m.m;
            j[(l.omega(i), l.omega(i))] = -m.d / m.m;

            let kk = (m.x_d - m.x_d_prime) / m.x_d_prime / m.t_d0_prime;
            j[(l.e(i), l.e(i))] = -(m.x_d / m.x_d_prime) / m.t_d0_prime;
            j[(l.e(i), l.v(k))] = kk * libm::cos(s);
            j[(l.e(i), l.delta(i))] = -kk * v * libm::sin(s);
            j[(l.e(i), l.theta(k))] = kk * v * libm::sin(s);

            j[(l.tn(i), l.tn(i))] = gov / m.t_ch;
            j[(l.tn(i), l.omega(i))] = -1.0 / (m.r_d * m.t_ch);
        }
        j
    }

    fn algebraic_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let (g, n) = (l.g, l.n);
        let nd = l.n_diff();
        let mut j = DMatrix::zeros(l.n_alg(), l.dim());
        // Row offsets within the algebraic block.
        let (rp, rq, rbp, rbq) = (0, g, 2 * g, 2 * g + n);
        for i in 0..g {
            let m = &self.machines[i];
            let k = self.gen_bus[i];
            let (c, c1) = self.stator_coeffs(i);
            let xdp = m.x_d_prime;
            let (e, v) = (x[l.e(i)], x[l.v(k)]);
            let s = x[l.delta(i)] - x[l.theta(k)];
            let (ss, cs) = (libm::sin(s), libm::cos(s));
            let (s2, c2) = (libm::sin(2.0 * s), libm::cos(2.0 * s));

            let dp_ds = e * v * cs / xdp - 2.0 * c * v * v * c2;
            j[(rp + i, l.e(i))] = v * ss / xdp;
            j[(rp + i, l.v(k))] = e * ss / xdp - 2.0 * c * v * s2;
            j[(rp + i, l.delta(i))] = dp_ds;
            j[(rp + i, l.theta(k))] = -dp_ds;
            j[(rp + i, l.pg(i))] = -1.0;

            let dq_ds = -e * v * ss / xdp + 2.0 * c * v * v * s2;
            j[(rq + i, l.e(i))] = v * cs / xdp;
            j[(rq + i, l.v(k))] = e * cs / xdp - 2.0 * c1 * v - 2.0 * c * v * c2;
            j[(rq + i, l.delta(i))] = dq_ds;
            j[(rq + i, l.theta(k))] = -dq_ds;
            j[(rq + i, l.qg(i))] = -1.0;

            j[(rbp + k, l.pg(i))] = -1.0;
            j[(rbq + k, l.qg(i))] = -1.0;
        }
        let v = &x.as_slice()[l.v(0)..l.v(0) + n];
        let th = &x.as_slice()[l.theta(0)..l.theta(0) + n];
        let inj = injection_jacobian(&self.y, v, th, self.options.q_balance);
        for a in 0..n {
            for &(b, _, _) in &self.y.rows[a] {
                j[(rbp + a, l.v(b))] = inj.dp_dv[(a, b)];
                j[(rbp + a, l.theta(b))] = inj.dp_dtheta[(a, b)];
                j[(rbq + a, l.v(b))] = inj.dq_dv[(a, b)];
                j[(rbq + a, l.theta(b))] = inj.dq_dtheta[(a, b)];
            }
        }
        debug_assert_eq!(nd + l.n_alg(), l.dim());
        j
    }

    fn algebraic_curvature(&self, x: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut h = DMatrix::zeros(l.n_alg(), l.dim());
        let mut xs: Vec<HyperDual> = x
            .iter()
            .zip(c.iter())
            .map(|(&xi, &ci)| HyperDual::new(xi, 0.0, ci, 0.0))
            .collect();
        // g is affine in ω, T_N, P_G and Q_G, so only these columns curve.
        let cols = (0..l.g)
            .map(|i| l.delta(i))
            .chain((0..l.g).map(|i| l.e(i)))
            .chain((0..l.n).map(|k| l.v(k)))
            .chain((0..l.n).map(|k| l.theta(k)));
        for col in cols {
            xs[col].e1 = 1.0;
            let gs = self.algebraic_generic(&xs);
            for (r, val) in gs.iter().enumerate() {
                h[(r, col)] = val.e12;
            }
            xs[col].e1 = 0.0;
        }
        h
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        let l = self.layout;
        for k in 0..l.n {
            let v = x[l.v(k)];
            if !(v > MIN_VOLTAGE) {
                return Err(Error::VoltageCollapse {
                    bus: self.bus_ids[k],
                    v,
                });
            }
        }
        Ok(())
    }
}

/// `log|det(sE − A)|` at `s = 1 + i` for the linearization at `x`, where
/// `E = diag(I, 0)` and `A = [F_x; G_x]`. Errors if the pencil is singular there.
pub fn regularity_certificate<D: Dae + ?Sized>(dae: &D, x: &DVector<f64>) -> Result<f64> {
    let n = dae.dim();
    let nd = dae.n_diff();
    let mut a = DMatrix::zeros(n, n);
    a.rows_mut(0, nd).copy_from(&dae.differential_jacobian(x));
    a.rows_mut(nd, n - nd).copy_from(&dae.algebraic_jacobian(x));
    let mut e = DMatrix::zeros(n, n);
    for i in 0..nd {
        e[(i, i)] = 1.0;
    }
    // Real embedding of (E − A) + iE.
    let re = &e - &a;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&re);
    m.view_mut((0, n), (n, n)).copy_from(&(-&e));
    m.view_mut((n, 0), (n, n)).copy_from(&e);
    m.view_mut((n, n), (n, n)).copy_from(&re);
    let lu = Factorized::new(m, "regularity pencil")?;
    Ok(0.5 * lu.log_abs_det())
}
