//! Trapezoidal time stepping with a Newton corrector, and the tangent map of
//! each accepted step.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::OdeSystem;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, Factorized};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub h: f64,
    pub t_end: f64,
    pub nr_tol: f64,
    pub nr_max_iter: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            t_end: 30.0,
            nr_tol: 1e-10,
            nr_max_iter: 25,
        }
    }
}

impl SimConfig {
    /// Number of stored states, `N = t_end / h`.
    pub fn horizon(&self) -> Result<usize> {
        if !(self.h > 0.0) || !(self.t_end > 0.0) || !(self.nr_tol > 0.0) || self.nr_max_iter == 0 {
            return Err(Error::Config("h, t_end, nr_tol and nr_max_iter must be positive".into()));
        }
        let ratio = self.t_end / self.h;
        let n = libm::round(ratio);
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
            return Err(Error::Config(alloc::format!(
                "t_end / h = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn half_step(&self) -> f64 {
        0.5 * self.h
    }
}

/// An accepted step together with what the next step and the tangent map reuse.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x: DVector<f64>,
    pub rhs: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
}

/// One trapezoidal step from `x_prev`, given `F(x_prev)`.
pub fn trapezoidal_step_from<S: OdeSystem + ?Sized>(
    sys: &S,
    x_prev: &DVector<f64>,
    f_prev: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<StepResult> {
    let ht = cfg.half_step();
    let n = sys.dim();
    let base = x_prev + f_prev * ht;
    let mut x = x_prev.clone();
    let mut last = f64::INFINITY;
    for it in 1..=cfg.nr_max_iter {
        let (f, j) = sys.rhs_and_jacobian(&x)?;
        let residual = &x - &base - f * ht;
        let newton = DMatrix::identity(n, n) - j * ht;
        let dx = Factorized::new(newton, "trapezoidal Newton matrix")?.solve(&(-residual));
        x += &dx;
        last = dx.norm();
        if !last.is_finite() {
            break;
        }
        if last <= cfg.nr_tol {
            let (rhs, jacobian) = sys.rhs_and_jacobian(&x)?;
            return Ok(StepResult {
                x,
                rhs,
                jacobian,
                iterations: it,
            });
        }
    }
    Err(Error::NewtonDiverged {
        iterations: cfg.nr_max_iter,
        last_step: last,
    })
}

pub fn trapezoidal_step<S: OdeSystem + ?Sized>(sys: &S, x_prev: &DVector<f64>, cfg: &SimConfig) -> Result<DVector<f64>> {
    let f_prev = sys.rhs(x_prev)?;
    Ok(trapezoidal_step_from(sys, x_prev, &f_prev, cfg)?.x)
}

/// `Φ = (I − h̃ J(x_next))⁻¹ (I + h̃ J(x_prev))`.
pub fn variational_map(j_prev: &DMatrix<f64>, j_next: &DMatrix<f64>, h_tilde: f64) -> Result<DMatrix<f64>> {
    let n = j_prev.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = &eye - j_next * h_tilde;
    let rhs = &eye + j_prev * h_tilde;
    Ok(Factorized::new(lhs, "step map")?.solve_matrix(&rhs))
}

pub fn step_variational_map<S: OdeSystem + ?Sized>(
    sys: &S,
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<DMatrix<f64>> {
    variational_map(&sys.jacobian(x_prev)?, &sys.jacobian(x_next)?, cfg.half_step())
}

/// What the observer sees for each stored state.
pub struct StepRecord<'a> {
    pub k: usize,
    pub t: f64,
    pub x: &'a DVector<f64>,
    /// `Φ^k_{k−1}`; absent for the initial state or when maps are off.
    pub map: Option<&'a DMatrix<f64>>,
    pub nr_iterations: usize,
}

/// Runs `N − 1` steps, calling `observer` on every stored state.
pub fn simulate_with<S, F>(sys: &S, x0: &DVector<f64>, cfg: &SimConfig, with_maps: bool, mut observer: F) -> Result<()>
where
    S: OdeSystem + ?Sized,
    F: FnMut(StepRecord<'_>) -> Result<()>,
{
    let horizon = cfg.horizon()?;
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    sys.check_state(x0).map_err(|e| e.at_step(0))?;
    let (mut f_prev, mut j_prev) = sys.rhs_and_jacobian(x0).map_err(|e| e.at_step(0))?;
    observer(StepRecord {
        k: 0,
        t: 0.0,
        x: x0,
        map: None,
        nr_iterations: 0,
    })?;
    let mut x_prev = x0.clone();
    for k in 1..horizon {
        let step = trapezoidal_step_from(sys, &x_prev, &f_prev, cfg).map_err(|e| e.at_step(k))?;
        if step.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        sys.check_state(&step.x).map_err(|e| e.at_step(k))?;
        let map = if with_maps {
            let m = variational_map(&j_prev, &step.jacobian, cfg.half_step()).map_err(|e| e.at_step(k))?;
            if !all_finite(&m) {
                return Err(Error::NonFinite { step: k });
            }
            Some(m)
        } else {
            None
        };
        observer(StepRecord {
            k,
            t: k as f64 * cfg.h,
            x: &step.x,
            map: map.as_ref(),
            nr_iterations: step.iterations,
        })?;
        x_prev = step.x;
        f_prev = step.rhs;
        j_prev = step.jacobian;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub step_maps: Vec<DMatrix<f64>>,
    /// Newton iterations per step (0 for the initial state).
    pub nr_iterations: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

pub fn simulate<S: OdeSystem + ?Sized>(sys: &S, x0: &DVector<f64>, cfg: &SimConfig, with_maps: bool) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    simulate_with(sys, x0, cfg, with_maps, |rec| {
        traj.times.push(rec.t);
        traj.states.push(rec.x.clone());
        traj.nr_iterations.push(rec.nr_iterations);
        if let Some(m) = rec.map {
            traj.step_maps.push(m.clone());
        }
        Ok(())
    })?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearOde;
    use alloc::vec;

    fn cfg(h: f64, t_end: f64) -> SimConfig {
        SimConfig {
            h,
            t_end,
            ..SimConfig::default()
        }
    }

    #[test]
    fn horizon_requires_integer_ratio() {
        assert_eq!(cfg(0.1, 30.0).horizon().unwrap(), 300);
        assert!(cfg(0.3, 1.0).horizon().is_err());
        assert!(cfg(-0.1, 1.0).horizon().is_err());
    }

    #[test]
    fn scalar_growth_factor() {
        let a = -3.0;
        let sys = LinearOde(DMatrix::from_element(1, 1, a));
        let c = cfg(0.1, 1.0);
        let x = trapezoidal_step(&sys, &DVector::from_element(1, 2.0), &c).unwrap();
        let ht = 0.05;
        let expect = 2.0 * (1.0 + ht * a) / (1.0 - ht * a);
        assert!((x[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_is_kept_exactly() {
        let sys = LinearOde(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]));
        let x0 = DVector::zeros(2);
        let traj = simulate(&sys, &x0, &cfg(0.1, 1.0), false).unwrap();
        assert!(traj.states.iter().all(|x| x == &x0));
        assert_eq!(traj.states.len(), 10);
    }

    #[test]
    fn lti_map_is_cayley_transform() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
        let sys = LinearOde(a.clone());
        let c = cfg(0.2, 1.0);
        let traj = simulate(&sys, &DVector::from_vec(vec![1.0, 0.0]), &c, true).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        let expect = (&eye - &a * 0.1).try_inverse().unwrap() * (&eye + &a * 0.1);
        assert_eq!(traj.step_maps.len(), 4);
        for m in &traj.step_maps {
            assert!((m - &expect).amax() < 1e-14);
        }
    }

    #[test]
    fn tiny_step_map_is_near_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
        let m = variational_map(&a, &a, 1e-9).unwrap();
        assert!((m - DMatrix::<f64>::identity(2, 2)).amax() < 1e-8);
    }

    #[test]
    fn newton_failure_is_reported() {
        let sys = LinearOde(DMatrix::from_element(1, 1, -1.0));
        let c = SimConfig {
            nr_tol: 1e-300,
            nr_max_iter: 1,
            ..cfg(0.1, 1.0)
        };
        let err = trapezoidal_step(&sys, &DVector::from_element(1, 1.0), &c).unwrap_err();
        assert!(matches!(err, Error::NewtonDiverged { .. }));
    }
}
