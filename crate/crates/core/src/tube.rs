//! Backward/forward ellipsoidal tube propagation.
//!
//! The backward tube `E(q_B(t), Q_B(t))` encloses the states from which the
//! follower can keep the game feasible on `[t, T]`; the forward tube
//! `E(q_F(t), Q_F(t))` encloses the states reachable from `x0` while staying
//! inside the backward tube. Their pointwise-in-time intersection encloses
//! the follower's constrained reachable set under the given leader control.
//!
//! The boundary conditions make the system triangular: the backward pair is
//! a terminal-value problem integrated from `(s(T), S(T))`, after which the
//! forward pair is an initial-value problem from `(x0, eps I)`. The forward
//! pass re-advances the backward states jointly from their `t = 0` values
//! instead of interpolating stored nodes, which keeps the coupling terms
//! exact to integrator accuracy.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{eval_rhs, jacobians, omega_bound, GameProblem, ModelError};
use crate::ellipsoid::{
    self, intersection_minmax_level, Ellipsoid, EllipsoidError,
};
use crate::integrate::{IntegrateError, Integration, Stepper};
use crate::sym;

#[derive(Debug, Error)]
pub enum TubeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("shape matrix lost positive semidefiniteness near t = {t} (cumulative clamp {magnitude:.3e})")]
    PsdLoss { t: f64, magnitude: f64 },
    #[error("time grid must be strictly increasing from 0 to the horizon")]
    GridInvalid,
    #[error("trajectory count mismatch: expected {expected} per-interval entries, got {got}")]
    TrajectoryLength { expected: usize, got: usize },
    #[error("time {0} outside the tube's grid")]
    TimeOutOfRange(f64),
    #[error("multiplier validation failed: {0}")]
    BadMultiplier(String),
    #[error("tube csv: {0}")]
    Csv(String),
}

/// Cross-section state `y = (q_B, q_F, Q_B, Q_F)`.
#[derive(Debug, Clone)]
pub struct TubeState {
    pub center_b: DVector<f64>,
    pub center_f: DVector<f64>,
    pub shape_b: DMatrix<f64>,
    pub shape_f: DMatrix<f64>,
}

impl TubeState {
    pub fn backward_ellipsoid(&self) -> Ellipsoid {
        Ellipsoid::new_unchecked(self.center_b.clone(), self.shape_b.clone())
    }

    pub fn forward_ellipsoid(&self) -> Ellipsoid {
        Ellipsoid::new_unchecked(self.center_f.clone(), self.shape_f.clone())
    }
}

/// Tube ODE multipliers
/// `(A_F, A_B, B_F, B_B, sigma_B, sigma_F, mu_B, mu_F, kappa_B, kappa_F)`.
#[derive(Debug, Clone)]
pub struct Multipliers {
    pub a_f: DMatrix<f64>,
    pub a_b: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    pub b_b: DMatrix<f64>,
    pub sigma_b: f64,
    pub sigma_f: f64,
    pub mu_b: f64,
    pub mu_f: f64,
    pub kappa_b: f64,
    pub kappa_f: f64,
}

impl Multipliers {
    pub fn validate(&self) -> Result<(), TubeError> {
        for (name, v) in [
            ("sigma_b", self.sigma_b),
            ("sigma_f", self.sigma_f),
            ("mu_b", self.mu_b),
            ("mu_f", self.mu_f),
        ] {
            if !(v > 0.0) {
                return Err(TubeError::BadMultiplier(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("kappa_b", self.kappa_b), ("kappa_f", self.kappa_f)] {
            if !(v >= 0.0) {
                return Err(TubeError::BadMultiplier(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Integrated tube on a time grid. Controls and multipliers are piecewise
/// constant; the entry at node `k` applies on `[t_k, t_{k+1})` and the last
/// node repeats the final interval's values.
#[derive(Debug, Clone)]
pub struct TubeTrajectory {
    pub grid: Vec<f64>,
    pub states: Vec<TubeState>,
    pub multipliers: Vec<Multipliers>,
    pub leader_control: Vec<DVector<f64>>,
    /// Regularization used for `Q_F(0) = eps I`.
    pub epsilon0: f64,
    /// Cumulative PSD clamp magnitude accepted during integration.
    pub clamp_total: f64,
}

/// Regularization for the forward tube's initial shape; the boundary
/// function prescribes the zero matrix, which leaves the positive-definite
/// domain of the tube ODEs.
pub fn forward_epsilon(x0: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + x0.norm_squared())
}

/// Tolerance for the cumulative PSD clamping magnitude; beyond it the
/// integration is considered failed rather than silently repaired.
pub const CLAMP_FAILURE_THRESHOLD: f64 = 1e-6;

/// Right-hand side of the coupled tube ODEs at one instant.
///
/// Both shape equations drop a `Phi_2` inflation term when its numerator
/// matrix is identically zero (the tight small-multiplier limit); this is
/// what makes linear models propagate without remainder inflation.
pub fn tube_rhs(
    t: f64,
    y: &TubeState,
    u1: &DVector<f64>,
    lam: &Multipliers,
    problem: &GameProblem,
) -> Result<TubeState, TubeError> {
    let v = problem.u2_ellipsoid.center().clone();
    let v_shape = problem.u2_ellipsoid.shape();
    let constraint = problem.state_constraint_at(t)?;
    let (s_c, s_s) = (constraint.center(), constraint.shape());

    // backward pair
    let f_b = eval_rhs(&problem.model, &y.center_b, u1, &v, t)?;
    let mut d_center_b = f_b;
    let mut d_shape_b = ellipsoid::phi1(&y.shape_b, &lam.a_b);
    let w_b = &lam.b_b * v_shape * lam.b_b.transpose();
    if w_b.abs().max() > 0.0 {
        d_shape_b -= ellipsoid::phi2(&y.shape_b, &w_b, lam.sigma_b)?;
    }
    let omega_b = omega_bound(
        &problem.model,
        &lam.a_b,
        &lam.b_b,
        &y.center_b,
        u1,
        &problem.u2_ellipsoid,
        &y.shape_b,
        t,
    )?;
    if omega_b.abs().max() > 0.0 {
        d_shape_b -= ellipsoid::phi2(&y.shape_b, &omega_b, lam.mu_b)?;
    }
    if lam.kappa_b > 0.0 {
        d_center_b -= ellipsoid::phi3_vec(&y.center_b, s_c, &y.shape_b, s_s, lam.kappa_b)?;
        d_shape_b -= ellipsoid::phi3_mat(&y.center_b, s_c, &y.shape_b, s_s, lam.kappa_b)?;
    }

    // forward pair, coupled to the backward tube through the fusion terms
    let f_f = eval_rhs(&problem.model, &y.center_f, u1, &v, t)?;
    let mut d_center_f = f_f;
    let mut d_shape_f = ellipsoid::phi1(&y.shape_f, &lam.a_f);
    let w_f = &lam.b_f * v_shape * lam.b_f.transpose();
    if w_f.abs().max() > 0.0 {
        d_shape_f += ellipsoid::phi2(&y.shape_f, &w_f, lam.sigma_f)?;
    }
    let omega_f = omega_bound(
        &problem.model,
        &lam.a_f,
        &lam.b_f,
        &y.center_f,
        u1,
        &problem.u2_ellipsoid,
        &y.shape_f,
        t,
    )?;
    if omega_f.abs().max() > 0.0 {
        d_shape_f += ellipsoid::phi2(&y.shape_f, &omega_f, lam.mu_f)?;
    }
    if lam.kappa_f > 0.0 {
        d_center_f +=
            ellipsoid::phi3_vec(&y.center_f, &y.center_b, &y.shape_f, &y.shape_b, lam.kappa_f)?;
        d_shape_f +=
            ellipsoid::phi3_mat(&y.center_f, &y.center_b, &y.shape_f, &y.shape_b, lam.kappa_f)?;
    }

    Ok(TubeState {
        center_b: d_center_b,
        center_f: d_center_f,
        shape_b: d_shape_b,
        shape_f: d_shape_f,
    })
}

/// Residual of the boundary function
/// `G(y(0), y(T)) = (q_F(0) - x0, q_B(T) - s(T), Q_F(0) - eps I,
/// Q_B(T) - S(T))`, stacked.
pub fn boundary_residual(
    y0: &TubeState,
    y_t: &TubeState,
    problem: &GameProblem,
) -> Result<DVector<f64>, TubeError> {
    let n = problem.model.n_x();
    let eps = forward_epsilon(&problem.x0);
    let terminal = problem.state_constraint_at(problem.horizon)?;
    let mut parts: Vec<f64> = Vec::with_capacity(2 * n + 2 * sym::vech_len(n));
    parts.extend((&y0.center_f - &problem.x0).iter());
    parts.extend((&y_t.center_b - terminal.center()).iter());
    let qf0 = &y0.shape_f - DMatrix::identity(n, n) * eps;
    parts.extend(sym::vech(&qf0).iter());
    let qbt = &y_t.shape_b - terminal.shape();
    parts.extend(sym::vech(&qbt).iter());
    Ok(DVector::from_vec(parts))
}

fn check_grid(grid: &[f64], horizon: f64) -> Result<(), TubeError> {
    if grid.len() < 2
        || grid[0].abs() > 1e-12
        || (grid[grid.len() - 1] - horizon).abs() > 1e-9 * horizon.max(1.0)
        || grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(TubeError::GridInvalid);
    }
    Ok(())
}

fn check_per_interval<T>(slice: &[T], intervals: usize) -> Result<(), TubeError> {
    if slice.len() != intervals {
        return Err(TubeError::TrajectoryLength {
            expected: intervals,
            got: slice.len(),
        });
    }
    Ok(())
}

fn pack_half(center: &DVector<f64>, shape: &DMatrix<f64>) -> DVector<f64> {
    let mut z = Vec::with_capacity(center.len() + sym::vech_len(center.len()));
    z.extend(center.iter());
    z.extend(sym::vech(shape).iter());
    DVector::from_vec(z)
}

fn unpack_half(z: &[f64], n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let center = DVector::from_column_slice(&z[..n]);
    let shape = sym::unvech(&z[n..n + sym::vech_len(n)], n);
    (center, shape)
}

/// Eigenvalue clamping of the shape blocks, applied after accepted steps.
fn clamp_blocks(z: &mut DVector<f64>, n: usize, blocks: usize) -> f64 {
    let mut total = 0.0;
    let half = n + sym::vech_len(n);
    for b in 0..blocks {
        let off = b * half + n;
        let shape = sym::unvech(&z.as_slice()[off..off + sym::vech_len(n)], n);
        let (clamped, mag) = sym::clamp_psd(&shape);
        if mag > 0.0 {
            total += mag;
            let packed = sym::vech(&clamped);
            for (i, v) in packed.iter().enumerate() {
                z[off + i] = *v;
            }
        }
    }
    total
}

/// Integrates the backward pair `(q_B, Q_B)` from the terminal condition
/// `(s(T), S(T))` down to `t = 0`. Returns per-node values, node `k` at
/// `grid[k]`, along with the cumulative clamp magnitude.
pub fn propagate_backward(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    lam_traj: &[Multipliers],
    grid: &[f64],
    stepper: Stepper,
) -> Result<(Vec<(DVector<f64>, DMatrix<f64>)>, f64), TubeError> {
    check_grid(grid, problem.horizon)?;
    let intervals = grid.len() - 1;
    check_per_interval(u1_traj, intervals)?;
    check_per_interval(lam_traj, intervals)?;
    for lam in lam_traj {
        lam.validate()?;
    }
    let n = problem.model.n_x();
    let terminal = problem.state_constraint_at(problem.horizon)?;
    let mut nodes = vec![(DVector::zeros(n), DMatrix::zeros(n, n)); grid.len()];
    nodes[intervals] = (terminal.center().clone(), terminal.shape().clone());
    let mut z = pack_half(terminal.center(), terminal.shape());
    let mut clamp_total = 0.0;
    for k in (0..intervals).rev() {
        let (u1, lam) = (&u1_traj[k], &lam_traj[k]);
        let dummy_f = TubeState {
            center_b: DVector::zeros(n),
            center_f: DVector::zeros(n),
            shape_b: DMatrix::zeros(n, n),
            shape_f: DMatrix::zeros(n, n),
        };
        let rhs = |t: f64, zv: &DVector<f64>| -> Result<DVector<f64>, String> {
            let (c, s) = unpack_half(zv.as_slice(), n);
            let y = TubeState {
                center_b: c,
                shape_b: s,
                center_f: dummy_f.center_f.clone(),
                shape_f: dummy_f.shape_f.clone(),
            };
            let dy = tube_rhs(t, &y, u1, lam, problem).map_err(|e| e.to_string())?;
            Ok(pack_half(&dy.center_b, &dy.shape_b))
        };
        let post = |zv: &mut DVector<f64>| -> Result<f64, String> { Ok(clamp_blocks(zv, n, 1)) };
        let integ = Integration::with_post_step(&rhs, &post);
        let out = integ.run(grid[k + 1], grid[k], &z, stepper, None)?;
        clamp_total += out.repair;
        if clamp_total > CLAMP_FAILURE_THRESHOLD {
            return Err(TubeError::PsdLoss {
                t: grid[k],
                magnitude: clamp_total,
            });
        }
        z = out.state;
        let (c, s) = unpack_half(z.as_slice(), n);
        nodes[k] = (c, s);
    }
    Ok((nodes, clamp_total))
}

/// Integrates the forward pair from `(x0, eps I)` jointly with a re-advance
/// of the backward pair seeded from the backward pass at `t = 0`, and
/// assembles the full tube trajectory.
pub fn propagate_forward(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    lam_traj: &[Multipliers],
    backward: &[(DVector<f64>, DMatrix<f64>)],
    grid: &[f64],
    stepper: Stepper,
) -> Result<TubeTrajectory, TubeError> {
    check_grid(grid, problem.horizon)?;
    let intervals = grid.len() - 1;
    check_per_interval(u1_traj, intervals)?;
    check_per_interval(lam_traj, intervals)?;
    if backward.len() != grid.len() {
        return Err(TubeError::TrajectoryLength {
            expected: grid.len(),
            got: backward.len(),
        });
    }
    let n = problem.model.n_x();
    let eps = forward_epsilon(&problem.x0);
    let shape_f0 = DMatrix::identity(n, n) * eps;

    let mut states = Vec::with_capacity(grid.len());
    states.push(TubeState {
        center_b: backward[0].0.clone(),
        shape_b: backward[0].1.clone(),
        center_f: problem.x0.clone(),
        shape_f: shape_f0.clone(),
    });

    let mut z = {
        let zb = pack_half(&backward[0].0, &backward[0].1);
        let zf = pack_half(&problem.x0, &shape_f0);
        let mut joint = Vec::with_capacity(zb.len() + zf.len());
        joint.extend(zb.iter());
        joint.extend(zf.iter());
        DVector::from_vec(joint)
    };
    let half = n + sym::vech_len(n);
    let mut clamp_total = 0.0;
    for k in 0..intervals {
        let (u1, lam) = (&u1_traj[k], &lam_traj[k]);
        let rhs = |t: f64, zv: &DVector<f64>| -> Result<DVector<f64>, String> {
            let (cb, sb) = unpack_half(&zv.as_slice()[..half], n);
            let (cf, sf) = unpack_half(&zv.as_slice()[half..], n);
            let y = TubeState {
                center_b: cb,
                shape_b: sb,
                center_f: cf,
                shape_f: sf,
            };
            let dy = tube_rhs(t, &y, u1, lam, problem).map_err(|e| e.to_string())?;
            let zb = pack_half(&dy.center_b, &dy.shape_b);
            let zf = pack_half(&dy.center_f, &dy.shape_f);
            let mut joint = Vec::with_capacity(2 * half);
            joint.extend(zb.iter());
            joint.extend(zf.iter());
            Ok(DVector::from_vec(joint))
        };
        let post = |zv: &mut DVector<f64>| -> Result<f64, String> { Ok(clamp_blocks(zv, n, 2)) };
        let integ = Integration::with_post_step(&rhs, &post);
        let out = integ.run(grid[k], grid[k + 1], &z, stepper, None)?;
        clamp_total += out.repair;
        if clamp_total > CLAMP_FAILURE_THRESHOLD {
            return Err(TubeError::PsdLoss {
                t: grid[k + 1],
                magnitude: clamp_total,
            });
        }
        z = out.state;
        let (cf, sf) = unpack_half(&z.as_slice()[half..], n);
        // stored backward nodes come from the backward pass, which satisfies
        // the terminal condition exactly
        states.push(TubeState {
            center_b: backward[k + 1].0.clone(),
            shape_b: backward[k + 1].1.clone(),
            center_f: cf,
            shape_f: sf,
        });
    }

    let mut multipliers: Vec<Multipliers> = lam_traj.to_vec();
    multipliers.push(lam_traj[intervals - 1].clone());
    let mut leader_control: Vec<DVector<f64>> = u1_traj.to_vec();
    leader_control.push(u1_traj[intervals - 1].clone());
    Ok(TubeTrajectory {
        grid: grid.to_vec(),
        states,
        multipliers,
        leader_control,
        epsilon0: eps,
        clamp_total,
    })
}

/// Backward pass followed by the forward pass.
pub fn propagate(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    lam_traj: &[Multipliers],
    grid: &[f64],
    stepper: Stepper,
) -> Result<TubeTrajectory, TubeError> {
    let (backward, _) = propagate_backward(problem, u1_traj, lam_traj, grid, stepper)?;
    propagate_forward(problem, u1_traj, lam_traj, &backward, grid, stepper)
}

impl TubeTrajectory {
    /// Tube cross-section at `t` by linear interpolation between nodes.
    pub fn state_at(&self, t: f64) -> Result<TubeState, TubeError> {
        let n = self.grid.len();
        let t0 = self.grid[0];
        let t1 = self.grid[n - 1];
        let tol = 1e-9 * (1.0 + t1.abs());
        if t < t0 - tol || t > t1 + tol {
            return Err(TubeError::TimeOutOfRange(t));
        }
        let t = t.clamp(t0, t1);
        let k = match self.grid.iter().position(|&g| g >= t) {
            Some(0) => return Ok(self.states[0].clone()),
            Some(k) => k,
            None => return Ok(self.states[n - 1].clone()),
        };
        let (ta, tb) = (self.grid[k - 1], self.grid[k]);
        let w = (t - ta) / (tb - ta);
        let (a, b) = (&self.states[k - 1], &self.states[k]);
        Ok(TubeState {
            center_b: &a.center_b * (1.0 - w) + &b.center_b * w,
            center_f: &a.center_f * (1.0 - w) + &b.center_f * w,
            shape_b: &a.shape_b * (1.0 - w) + &b.shape_b * w,
            shape_f: &a.shape_f * (1.0 - w) + &b.shape_f * w,
        })
    }
}

/// Both cross-section ellipsoids at time `t`; the enclosure of the
/// reachable set is their (lazily represented) intersection.
pub fn fused_cross_section(
    tube: &TubeTrajectory,
    t: f64,
) -> Result<(Ellipsoid, Ellipsoid), TubeError> {
    let s = tube.state_at(t)?;
    Ok((s.forward_ellipsoid(), s.backward_ellipsoid()))
}

/// Trace-optimal inflation rate `sigma = sqrt(tr W / tr Q)`, clamped to
/// `[1e-6, 1e6]`.
pub fn trace_rule_sigma(w_trace: f64, q_trace: f64) -> f64 {
    let ratio = (w_trace.max(0.0) / q_trace.max(1e-300)).sqrt();
    ratio.clamp(1e-6, 1e6)
}

/// Heuristic multipliers for tube-only runs: Jacobians along nominal center
/// trajectories, trace-rule inflation rates bootstrapped from a unit-rate
/// pass, and zero fusion weights.
pub fn heuristic_multipliers(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    grid: &[f64],
) -> Result<Vec<Multipliers>, TubeError> {
    check_grid(grid, problem.horizon)?;
    let intervals = grid.len() - 1;
    check_per_interval(u1_traj, intervals)?;
    let n = problem.model.n_x();
    let v = problem.u2_ellipsoid.center().clone();
    let stepper = Stepper::rk4(20);

    // nominal centers: forward from x0, backward from s(T)
    let nominal = |start: DVector<f64>, backward: bool| -> Result<Vec<DVector<f64>>, TubeError> {
        let mut centers = vec![DVector::zeros(n); grid.len()];
        let mut x = start;
        if backward {
            centers[intervals] = x.clone();
            for k in (0..intervals).rev() {
                let u1 = &u1_traj[k];
                let rhs = |t: f64, xv: &DVector<f64>| -> Result<DVector<f64>, String> {
                    eval_rhs(&problem.model, xv, u1, &v, t)
                        .map_err(|e| e.to_string())
                };
                let integ = Integration::new(&rhs);
                x = integ.run(grid[k + 1], grid[k], &x, stepper, None)?.state;
                centers[k] = x.clone();
            }
        } else {
            centers[0] = x.clone();
            for k in 0..intervals {
                let u1 = &u1_traj[k];
                let rhs = |t: f64, xv: &DVector<f64>| -> Result<DVector<f64>, String> {
                    eval_rhs(&problem.model, xv, u1, &v, t)
                        .map_err(|e| e.to_string())
                };
                let integ = Integration::new(&rhs);
                x = integ.run(grid[k], grid[k + 1], &x, stepper, None)?.state;
                centers[k + 1] = x.clone();
            }
        }
        Ok(centers)
    };
    let terminal = problem.state_constraint_at(problem.horizon)?;
    let back_centers = nominal(terminal.center().clone(), true)?;
    let fwd_centers = nominal(problem.x0.clone(), false)?;

    let mut lam = Vec::with_capacity(intervals);
    for k in 0..intervals {
        let t = grid[k];
        let (a_b, b_b) = jacobians(&problem.model, &back_centers[k], &u1_traj[k], &v, t)?;
        let (a_f, b_f) = jacobians(&problem.model, &fwd_centers[k], &u1_traj[k], &v, t)?;
        lam.push(Multipliers {
            a_f,
            a_b,
            b_f,
            b_b,
            sigma_b: 1.0,
            sigma_f: 1.0,
            mu_b: 1.0,
            mu_f: 1.0,
            kappa_b: 0.0,
            kappa_f: 0.0,
        });
    }

    // bootstrap pass: refine sigma and mu with the trace rule against the
    // shapes from a unit-rate integration
    let Ok(tube) = propagate(problem, u1_traj, &lam, grid, stepper) else {
        return Ok(lam);
    };
    for (k, l) in lam.iter_mut().enumerate() {
        let y = &tube.states[k];
        let w_b = &l.b_b * problem.u2_ellipsoid.shape() * l.b_b.transpose();
        let w_f = &l.b_f * problem.u2_ellipsoid.shape() * l.b_f.transpose();
        l.sigma_b = trace_rule_sigma(w_b.trace(), y.shape_b.trace());
        l.sigma_f = trace_rule_sigma(w_f.trace(), y.shape_f.trace().max(tube.epsilon0));
        let om_b = omega_bound(
            &problem.model,
            &l.a_b,
            &l.b_b,
            &y.center_b,
            &u1_traj[k],
            &problem.u2_ellipsoid,
            &y.shape_b,
            grid[k],
        )?;
        let om_f = omega_bound(
            &problem.model,
            &l.a_f,
            &l.b_f,
            &y.center_f,
            &u1_traj[k],
            &problem.u2_ellipsoid,
            &y.shape_f,
            grid[k],
        )?;
        l.mu_b = trace_rule_sigma(om_b.trace(), y.shape_b.trace());
        l.mu_f = trace_rule_sigma(om_f.trace(), y.shape_f.trace().max(tube.epsilon0));
    }
    Ok(lam)
}

/// Per-node diagnostic flags for the tube hypotheses.
#[derive(Debug, Clone)]
pub struct NodeDiagnostics {
    pub t: f64,
    /// Backward ellipsoid meets the interior of the follower constraint.
    pub backward_meets_constraint: bool,
    /// Forward and backward ellipsoids intersect.
    pub tubes_intersect: bool,
    pub psd_ok: bool,
}

#[derive(Debug, Clone)]
pub struct TubeDiagnostics {
    pub nodes: Vec<NodeDiagnostics>,
    pub epsilon0: f64,
    pub clamp_total: f64,
}

impl TubeDiagnostics {
    pub fn all_pass(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.backward_meets_constraint && n.tubes_intersect && n.psd_ok)
    }
}

/// Checks the enclosure hypotheses along the tube: nonempty intersection of
/// the backward ellipsoid with the interior of the follower constraint,
/// overlap of the two tubes, and PSD health of the shapes.
pub fn validate_tube_conditions(
    tube: &TubeTrajectory,
    problem: &GameProblem,
) -> Result<TubeDiagnostics, TubeError> {
    let mut nodes = Vec::with_capacity(tube.grid.len());
    for (k, &t) in tube.grid.iter().enumerate() {
        let y = &tube.states[k];
        let back = y.backward_ellipsoid();
        let fwd = y.forward_ellipsoid();
        let constraint = problem.state_constraint_at(t)?;
        let backward_meets_constraint =
            intersection_minmax_level(&back, &constraint)? < 1.0 - 1e-12;
        let tubes_intersect = intersection_minmax_level(&fwd, &back)? <= 1.0 + 1e-9;
        let psd_tol = |m: &DMatrix<f64>| -1e-9 * (1.0 + m.trace().abs());
        let psd_ok = sym::min_eigenvalue(&y.shape_b) >= psd_tol(&y.shape_b)
            && sym::min_eigenvalue(&y.shape_f) >= psd_tol(&y.shape_f);
        nodes.push(NodeDiagnostics {
            t,
            backward_meets_constraint,
            tubes_intersect,
            psd_ok,
        });
    }
    Ok(TubeDiagnostics {
        nodes,
        epsilon0: tube.epsilon0,
        clamp_total: tube.clamp_total,
    })
}

/// Writes the tube as CSV: per node, the time, both centers, both packed
/// shapes, and per-axis projection edges of the backward ellipsoid and of
/// the fused cross-section (exact intersection support values).
pub fn write_tube_csv(tube: &TubeTrajectory, path: &Path) -> Result<(), TubeError> {
    let n = tube.states[0].center_b.len();
    let m = sym::vech_len(n);
    let mut out = String::new();
    out.push('t');
    for part in ["qB", "qF"] {
        for i in 1..=n {
            let _ = write!(out, ",{part}_{i}");
        }
    }
    for part in ["QB", "QF"] {
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let _ = write!(out, ",{part}_{}{}", i + 1, j + 1);
                k += 1;
            }
        }
        debug_assert_eq!(k, m);
    }
    for i in 1..=n {
        let _ = write!(out, ",B_lo_{i},B_hi_{i},FB_lo_{i},FB_hi_{i}");
    }
    out.push('\n');
    for (k, state) in tube.states.iter().enumerate() {
        let _ = write!(out, "{:.16e}", tube.grid[k]);
        for v in state.center_b.iter().chain(state.center_f.iter()) {
            let _ = write!(out, ",{v:.16e}");
        }
        for v in sym::vech(&state.shape_b)
            .iter()
            .chain(sym::vech(&state.shape_f).iter())
        {
            let _ = write!(out, ",{v:.16e}");
        }
        let back = state.backward_ellipsoid();
        let fwd = state.forward_ellipsoid();
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let b_hi = ellipsoid::support_value(&back, &e)?;
            let fb_hi = ellipsoid::intersection_support_exact(&fwd, &back, &e)?;
            e[i] = -1.0;
            let b_lo = -ellipsoid::support_value(&back, &e)?;
            let fb_lo = -ellipsoid::intersection_support_exact(&fwd, &back, &e)?;
            let _ = write!(out, ",{b_lo:.16e},{b_hi:.16e},{fb_lo:.16e},{fb_hi:.16e}");
        }
        out.push('\n');
    }
    crate::config::write_atomic(path, out.as_bytes()).map_err(|e| TubeError::Csv(e.to_string()))
}

/// Reads back the node data written by [`write_tube_csv`] (projection
/// columns are ignored).
pub fn read_tube_csv(path: &Path, n: usize) -> Result<TubeTrajectory, TubeError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| TubeError::Csv(format!("{path:?}: {e}")))?;
    let m = sym::vech_len(n);
    let mut grid = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| TubeError::Csv(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() < 1 + 2 * n + 2 * m {
            return Err(TubeError::Csv(format!(
                "line {}: expected at least {} columns, got {}",
                lineno + 1,
                1 + 2 * n + 2 * m,
                vals.len()
            )));
        }
        grid.push(vals[0]);
        let center_b = DVector::from_column_slice(&vals[1..1 + n]);
        let center_f = DVector::from_column_slice(&vals[1 + n..1 + 2 * n]);
        let shape_b = sym::unvech(&vals[1 + 2 * n..1 + 2 * n + m], n);
        let shape_f = sym::unvech(&vals[1 + 2 * n + m..1 + 2 * n + 2 * m], n);
        states.push(TubeState {
            center_b,
            center_f,
            shape_b,
            shape_f,
        });
    }
    if grid.len() < 2 {
        return Err(TubeError::Csv("fewer than two nodes".into()));
    }
    let n_nodes = grid.len();
    let ident = Multipliers {
        a_f: DMatrix::zeros(n, n),
        a_b: DMatrix::zeros(n, n),
        b_f: DMatrix::zeros(n, 0),
        b_b: DMatrix::zeros(n, 0),
        sigma_b: 1.0,
        sigma_f: 1.0,
        mu_b: 1.0,
        mu_f: 1.0,
        kappa_b: 0.0,
        kappa_f: 0.0,
    };
    Ok(TubeTrajectory {
        grid,
        states: states.clone(),
        multipliers: vec![ident; n_nodes],
        leader_control: vec![DVector::zeros(0); n_nodes],
        epsilon0: 0.0,
        clamp_total: 0.0,
    })
}
