//! Discrete-QR Lyapunov spectra, parameterized deformation tensors, node
//! exponents and stability ranking.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{PowerSystemModel, Quantity};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::linalg::{all_finite, spd_log_det, symmetric_eigenvalues};

/// QR with the sign fixed so that `diag(R) > 0`.
pub fn positive_qr(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.qr();
    let (mut q, mut r) = (qr.q(), qr.r());
    for j in 0..r.nrows().min(r.ncols()) {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
            let mut row = r.row_mut(j);
            row.neg_mut();
        }
    }
    (q, r)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LyapunovSpectrum {
    /// Exponents per step, in descending order.
    pub exponents: Vec<f64>,
    /// Column of the running basis each exponent came from.
    pub directions: Vec<usize>,
    /// Number of stored states N; exponents are normalized by N − 1.
    pub horizon: usize,
    /// Σ_k log r_jj^(k) in original column order.
    pub log_diag_accum: Vec<f64>,
}

impl LyapunovSpectrum {
    pub fn max_le(&self) -> f64 {
        self.exponents.first().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    pub fn is_stable(&self) -> bool {
        self.max_le() <= 0.0
    }
}

pub fn max_le(spec: &LyapunovSpectrum) -> f64 {
    spec.max_le()
}

/// Running discrete-QR state: `Φ₀ᵏ = Q_k P_k` with `P_k = R_k ⋯ R_1 Q₀ᵀ`.
#[derive(Debug, Clone)]
pub struct QrAccumulator {
    q: DMatrix<f64>,
    p: Option<DMatrix<f64>>,
    log_diag: DVector<f64>,
    steps: usize,
}

impl QrAccumulator {
    pub fn new(n: usize) -> Self {
        Self::with_basis(DMatrix::identity(n, n))
    }

    /// Starts from an orthogonal basis `Q₀`.
    pub fn with_basis(q0: DMatrix<f64>) -> Self {
        let n = q0.nrows();
        Self {
            q: q0,
            p: None,
            log_diag: DVector::zeros(n),
            steps: 0,
        }
    }

    /// Also tracks the triangular products needed to rebuild `Φ₀ᵏ`.
    pub fn tracking_products(mut self) -> Self {
        self.p = Some(self.q.transpose());
        self
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `Φ₀ᵏ` as the factored pair `(Q_k, P_k)`, when products are tracked.
    pub fn factors(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.p.as_ref().map(|p| (&self.q, p))
    }

    pub fn push(&mut self, map: &DMatrix<f64>) -> Result<()> {
        let step = self.steps + 1;
        if map.nrows() != self.dim() || map.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: map.nrows(),
            });
        }
        if !all_finite(map) {
            return Err(Error::NonFinite { step });
        }
        let (q, r) = positive_qr(map * &self.q);
        for j in 0..self.dim() {
            let d = r[(j, j)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NonFinite { step });
            }
            self.log_diag[j] += libm::log(d);
        }
        if let Some(p) = self.p.as_mut() {
            *p = &r * &*p;
        }
        self.q = q;
        self.steps = step;
        Ok(())
    }

    pub fn spectrum(&self) -> Result<LyapunovSpectrum> {
        if self.steps == 0 {
            return Err(Error::Config("spectrum needs at least two states".into()));
        }
        let norm = self.steps as f64;
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| self.log_diag[b].total_cmp(&self.log_diag[a]).then(a.cmp(&b)));
        Ok(LyapunovSpectrum {
            exponents: order.iter().map(|&j| self.log_diag[j] / norm).collect(),
            directions: order,
            horizon: self.steps + 1,
            log_diag_accum: self.log_diag.iter().copied().collect(),
        })
    }
}

pub fn qr_accumulate(traj: &Trajectory) -> Result<LyapunovSpectrum> {
    let n = traj.states.first().map(|x| x.len()).unwrap_or(0);
    if traj.step_maps.is_empty() {
        return Err(Error::Config("trajectory has no step maps".into()));
    }
    let mut acc = QrAccumulator::new(n);
    for m in &traj.step_maps {
        acc.push(m)?;
    }
    acc.spectrum()
}

/// Binary state mask γ with a record of which bus channels it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSelector {
    pub dim: usize,
    /// Selected flat indices, ascending.
    pub rows: Vec<usize>,
    pub provenance: Vec<(u32, Vec<Quantity>)>,
}

impl StateSelector {
    pub fn from_rows(dim: usize, mut rows: Vec<usize>) -> Result<Self> {
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() {
            return Err(Error::EmptySelector);
        }
        if let Some(&r) = rows.last() {
            if r >= dim {
                return Err(Error::Dimension { expected: dim, got: r + 1 });
            }
        }
        Ok(Self {
            dim,
            rows,
            provenance: Vec::new(),
        })
    }

    pub fn all(dim: usize) -> Self {
        Self {
            dim,
            rows: (0..dim).collect(),
            provenance: Vec::new(),
        }
    }

    pub fn gamma(&self) -> Vec<bool> {
        let mut g = vec![false; self.dim];
        for &r in &self.rows {
            g[r] = true;
        }
        g
    }

    /// Generator buses select {δ, ω, v}; other buses select {v}.
    pub fn for_bus(model: &PowerSystemModel, bus: u32) -> Result<Self> {
        let k = model.bus_ids.iter().position(|&b| b == bus).ok_or(Error::UnknownBus(bus))?;
        let l = model.layout;
        let (rows, quantities) = match model.bus_gen[k] {
            Some(i) => (
                vec![l.delta(i), l.omega(i), l.v(k)],
                vec![Quantity::Delta, Quantity::Omega, Quantity::V],
            ),
            None => (vec![l.v(k)], vec![Quantity::V]),
        };
        let mut sel = Self::from_rows(l.dim(), rows)?;
        sel.provenance = vec![(bus, quantities)];
        Ok(sel)
    }

    /// Union of every bus's channels.
    pub fn global(model: &PowerSystemModel) -> Self {
        let mut rows = Vec::new();
        let mut provenance = Vec::new();
        for &bus in &model.bus_ids {
            let s = Self::for_bus(model, bus).expect("bus from model");
            rows.extend(s.rows);
            provenance.extend(s.provenance);
        }
        let mut sel = Self::from_rows(model.layout.dim(), rows).expect("nonempty network");
        sel.provenance = provenance;
        sel
    }

    /// The single-quantity selectors of a bus, one per channel.
    pub fn channels(model: &PowerSystemModel, bus: u32) -> Result<Vec<Self>> {
        let s = Self::for_bus(model, bus)?;
        let quantities = s.provenance[0].1.clone();
        Ok(s.rows
            .iter()
            .zip(quantities)
            .map(|(&r, q)| {
                let mut c = Self::from_rows(s.dim, vec![r]).expect("valid row");
                c.provenance = vec![(bus, vec![q])];
                c
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationTensor {
    pub matrix: DMatrix<f64>,
    pub selector: StateSelector,
    /// Number of summed terms N.
    pub horizon: usize,
}

impl DeformationTensor {
    pub fn eigenvalues(&self) -> DVector<f64> {
        symmetric_eigenvalues(&self.matrix)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn check_psd(&self) -> Result<()> {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        if lo < -1e-10 * scale {
            return Err(Error::NotPsd(lo));
        }
        Ok(())
    }

    /// `(1 / 2(N−1)) · ln λ_max`.
    pub fn node_exponent(&self) -> Result<f64> {
        let top = self.eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(top > 0.0) || !top.is_finite() {
            return Err(Error::DegenerateTensor(top));
        }
        Ok(libm::log(top) / (2.0 * (self.horizon.max(2) - 1) as f64))
    }
}

/// Streams step maps into a spectrum, a set of deformation tensors
/// `Σ_{i<N} (ΓΦ₀ⁱ)ᵀ(ΓΦ₀ⁱ)`, and optionally an upper-triangular square root
/// `S` with `SᵀS` equal to one more tensor.
#[derive(Debug, Clone)]
pub struct TrajectoryAnalyzer {
    qr: QrAccumulator,
    selectors: Vec<StateSelector>,
    tensors: Vec<DMatrix<f64>>,
    root: Option<(StateSelector, DMatrix<f64>)>,
}

impl TrajectoryAnalyzer {
    pub fn new(n: usize, selectors: Vec<StateSelector>) -> Result<Self> {
        for s in &selectors {
            if s.dim != n {
                return Err(Error::Dimension { expected: n, got: s.dim });
            }
        }
        let mut a = Self {
            qr: QrAccumulator::new(n).tracking_products(),
            tensors: vec![DMatrix::zeros(n, n); selectors.len()],
            selectors,
            root: None,
        };
        a.add_terms();
        Ok(a)
    }

    /// Also maintain a square-root factor for `selector`.
    pub fn with_root(mut self, selector: StateSelector) -> Result<Self> {
        let n = self.qr.dim();
        if self.qr.steps() > 0 || selector.dim != n {
            return Err(Error::Dimension { expected: n, got: selector.dim });
        }
        let mut s = DMatrix::zeros(n, n);
        let rows = Self::selected(&selector, self.qr.q(), &DMatrix::identity(n, n));
        s = Self::stack_root(&s, &rows);
        self.root = Some((selector, s));
        Ok(self)
    }

    fn selected(sel: &StateSelector, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let qs = q.select_rows(sel.rows.iter());
        qs * p
    }

    fn stack_root(s: &DMatrix<f64>, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let n = s.ncols();
        let mut stacked = DMatrix::zeros(n + rows.nrows(), n);
        stacked.rows_mut(0, n).copy_from(s);
        stacked.rows_mut(n, rows.nrows()).copy_from(rows);
        let r = stacked.qr().r();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (r.nrows(), n)).copy_from(&r);
        out
    }

    fn add_terms(&mut self) {
        let (q, p) = self.qr.factors().expect("products tracked");
        let (q, p) = (q.clone(), p.clone());
        for (sel, t) in self.selectors.iter().zip(self.tensors.iter_mut()) {
            let b = Self::selected(sel, &q, &p);
            *t += b.transpose() * &b;
        }
        if self.qr.steps() > 0 {
            if let Some((sel, s)) = self.root.as_mut() {
                let b = Self::selected(sel, &q, &p);
                *s = Self::stack_root(s, &b);
            }
        }
    }

    pub fn push(&mut self, map: &DMatrix<f64>) -> Result<()> {
        self.qr.push(map)?;
        self.add_terms();
        Ok(())
    }

    /// Stored states seen so far (steps + 1).
    pub fn horizon(&self) -> usize {
        self.qr.steps() + 1
    }

    pub fn spectrum(&self) -> Result<LyapunovSpectrum> {
        self.qr.spectrum()
    }

    pub fn tensors(&self) -> Vec<DeformationTensor> {
        self.selectors
            .iter()
            .zip(&self.tensors)
            .map(|(s, m)| DeformationTensor {
                matrix: (m + m.transpose()) * 0.5,
                selector: s.clone(),
                horizon: self.horizon(),
            })
            .collect()
    }

    /// `log det(SᵀS) = 2 Σ ln |S_jj|` for the root selector.
    pub fn root_log_det(&self) -> Option<f64> {
        self.root
            .as_ref()
            .map(|(_, s)| (0..s.nrows()).map(|j| 2.0 * libm::log(s[(j, j)].abs())).sum())
    }
}

pub fn deformation_tensor(traj: &Trajectory, sel: &StateSelector) -> Result<DeformationTensor> {
    let n = sel.dim;
    if sel.rows.is_empty() {
        return Err(Error::EmptySelector);
    }
    let mut a = TrajectoryAnalyzer::new(n, vec![sel.clone()])?;
    for m in &traj.step_maps {
        a.push(m)?;
    }
    Ok(a.tensors().remove(0))
}

pub fn node_exponent(traj: &Trajectory, bus: u32, model: &PowerSystemModel) -> Result<f64> {
    let sel = StateSelector::for_bus(model, bus)?;
    deformation_tensor(traj, &sel)?.node_exponent()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankEntry {
    pub bus: u32,
    pub lambda: f64,
    /// 1-based position in ascending λ order.
    pub index: usize,
}

/// Ascending λ, ties broken by ascending bus id.
pub fn stability_ranking(lambdas: &BTreeMap<u32, f64>) -> Vec<RankEntry> {
    let mut v: Vec<(u32, f64)> = lambdas.iter().map(|(&b, &l)| (b, l)).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (bus, lambda))| RankEntry {
            bus,
            lambda,
            index: i + 1,
        })
        .collect()
}

/// Both sides of the log-det / exponent-sum identity for one tensor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogDetIdentity {
    pub horizon: usize,
    /// Σλ from the eigenvalues of the tensor.
    pub sum_eigen: f64,
    /// (1/2(N−1)) log det from a Cholesky factorization of the same tensor.
    pub sum_logdet: f64,
    /// Σλ from the QR-updated square-root factor.
    pub sum_qr: f64,
    pub rel_err_same_tensor: f64,
    pub rel_err_qr_vs_eigen: f64,
    /// Sum of the discrete-QR spectrum, for reference.
    pub spectrum_sum: f64,
}

/// Compares the eigenvalue, Cholesky and square-root evaluations of
/// `Σλ = log det(Ξ̃) / 2(N−1)`.
pub fn logdet_identity(analyzer: &TrajectoryAnalyzer, tensor_index: usize) -> Result<LogDetIdentity> {
    let tensor = analyzer
        .tensors()
        .into_iter()
        .nth(tensor_index)
        .ok_or(Error::Dimension { expected: tensor_index + 1, got: 0 })?;
    tensor.check_psd()?;
    let horizon = analyzer.horizon();
    let norm = 2.0 * (horizon.max(2) - 1) as f64;
    let ev = tensor.eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lo > 0.0) {
        return Err(Error::NotPsd(lo));
    }
    let sum_eigen = ev.iter().map(|&e| libm::log(e)).sum::<f64>() / norm;
    let sum_logdet = spd_log_det(&tensor.matrix).ok_or(Error::NotPsd(lo))? / norm;
    let sum_qr = analyzer
        .root_log_det()
        .ok_or(Error::Config("analyzer has no square-root factor".into()))?
        / norm;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
    Ok(LogDetIdentity {
        horizon,
        sum_eigen,
        sum_logdet,
        sum_qr,
        rel_err_same_tensor: rel(sum_eigen, sum_logdet),
        rel_err_qr_vs_eigen: rel(sum_qr, sum_eigen),
        spectrum_sum: analyzer.spectrum()?.sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(maps: &[DMatrix<f64>], sel: Vec<StateSelector>) -> TrajectoryAnalyzer {
        let n = maps[0].nrows();
        let mut a = TrajectoryAnalyzer::new(n, sel).unwrap();
        for m in maps {
            a.push(m).unwrap();
        }
        a
    }

    #[test]
    fn identity_flow() {
        let maps = vec![DMatrix::<f64>::identity(3, 3); 9];
        let a = run(&maps, vec![StateSelector::all(3)]);
        let spec = a.spectrum().unwrap();
        assert!(spec.exponents.iter().all(|e| *e == 0.0));
        let t = &a.tensors()[0];
        assert!((&t.matrix - DMatrix::<f64>::identity(3, 3) * 10.0).amax() < 1e-14);
        assert!((t.node_exponent().unwrap() - libm::log(10.0) / 18.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_map_exponents() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let maps = vec![d; 40];
        let spec = run(&maps, vec![StateSelector::all(2)]).spectrum().unwrap();
        assert!((spec.exponents[0] - libm::log(2.0)).abs() < 1e-14);
        assert!((spec.exponents[1] - libm::log(0.5)).abs() < 1e-14);
        assert_eq!(spec.directions, vec![1, 0]);
        assert!((spec.max_le() - libm::log(2.0)).abs() < 1e-14);
        assert!(!spec.is_stable());
    }

    #[test]
    fn single_state_tensor_is_geometric_sum() {
        // Ξ̃ = Σ_{i<N} 0.25^i for the first coordinate of diag(0.5, 3).
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0]));
        let n_states = 30;
        let maps = vec![d; n_states - 1];
        let sel = StateSelector::from_rows(2, vec![0]).unwrap();
        let t = run(&maps, vec![sel]).tensors().remove(0);
        let closed = (1.0 - 0.25f64.powi(n_states as i32)) / 0.75;
        assert!((t.matrix[(0, 0)] - closed).abs() < 1e-14);
        assert_eq!(t.matrix[(1, 1)], 0.0);
        let lam = t.node_exponent().unwrap();
        assert!((lam - libm::log(closed) / (2.0 * (n_states - 1) as f64)).abs() < 1e-15);
    }

    #[test]
    fn tensor_matches_dense_products() {
        let n = 4;
        let maps: Vec<DMatrix<f64>> = (0..8)
            .map(|k| DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3 + k) as f64).sin() * 0.4 + if i == j { 0.8 } else { 0.0 }))
            .collect();
        for row in 0..n {
            let sel = StateSelector::from_rows(n, vec![row]).unwrap();
            let t = run(&maps, vec![sel]).tensors().remove(0);
            let mut phi = DMatrix::<f64>::identity(n, n);
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..=maps.len() {
                if i > 0 {
                    phi = &maps[i - 1] * phi;
                }
                let r = phi.row(row);
                dense += r.transpose() * r;
            }
            assert!((&t.matrix - &dense).amax() / dense.amax() < 1e-12);
        }
    }

    #[test]
    fn qr_products_rebuild_transition_matrix() {
        let n = 5;
        let maps: Vec<DMatrix<f64>> = (0..30)
            .map(|k| DMatrix::from_fn(n, n, |i, j| ((i * 5 + j * 11 + 3 * k) as f64).cos() * 0.3 + if i == j { 0.9 } else { 0.0 }))
            .collect();
        let mut acc = QrAccumulator::new(n).tracking_products();
        let mut phi = DMatrix::<f64>::identity(n, n);
        for m in &maps {
            acc.push(m).unwrap();
            phi = m * phi;
        }
        let (q, p) = acc.factors().unwrap();
        assert!((q * p - &phi).norm() / phi.norm() < 1e-8);
        // Sum of log r_jj equals Σ log |det Φ|.
        let det_sum: f64 = maps.iter().map(|m| libm::log(m.determinant().abs())).sum();
        let spec = acc.spectrum().unwrap();
        let total: f64 = spec.log_diag_accum.iter().sum();
        assert!((total - det_sum).abs() < 1e-8 * det_sum.abs().max(1.0));
    }

    #[test]
    fn root_factor_matches_tensor() {
        let n = 4;
        let maps: Vec<DMatrix<f64>> = (0..12)
            .map(|k| DMatrix::from_fn(n, n, |i, j| ((i + 2 * j + k) as f64).sin() * 0.2 + if i == j { 0.95 } else { 0.0 }))
            .collect();
        let sel = StateSelector::all(n);
        let mut a = TrajectoryAnalyzer::new(n, vec![sel.clone()]).unwrap().with_root(sel).unwrap();
        for m in &maps {
            a.push(m).unwrap();
        }
        let rep = logdet_identity(&a, 0).unwrap();
        assert!(rep.rel_err_same_tensor < 1e-12);
        assert!(rep.rel_err_qr_vs_eigen < 1e-10);
    }

    #[test]
    fn empty_selector_is_rejected() {
        assert_eq!(StateSelector::from_rows(3, vec![]), Err(Error::EmptySelector));
    }

    #[test]
    fn non_finite_map_reports_step() {
        let mut acc = QrAccumulator::new(2);
        acc.push(&DMatrix::identity(2, 2)).unwrap();
        let bad = DMatrix::from_element(2, 2, f64::NAN);
        assert_eq!(acc.push(&bad), Err(Error::NonFinite { step: 2 }));
    }

    #[test]
    fn ranking_order_and_ties() {
        let mut m = BTreeMap::new();
        m.insert(1, -0.2);
        m.insert(2, -0.5);
        let r = stability_ranking(&m);
        assert_eq!((r[0].bus, r[0].index), (2, 1));
        let mut m = BTreeMap::new();
        for b in [5, 3, 9] {
            m.insert(b, 0.1);
        }
        let r: Vec<u32> = stability_ranking(&m).iter().map(|e| e.bus).collect();
        assert_eq!(r, vec![3, 5, 9]);
    }

    #[test]
    fn max_of_two() {
        let spec = LyapunovSpectrum {
            exponents: vec![-0.1, -0.3],
            directions: vec![0, 1],
            horizon: 2,
            log_diag_accum: vec![-0.1, -0.3],
        };
        assert_eq!(max_le(&spec), -0.1);
        assert!(spec.is_stable());
    }
}
