//! Independent verification tools: Monte-Carlo sampling of feasible
//! follower trajectories (an inner approximation of the constrained
//! reachable set), containment checks against integrated tubes, and an
//! exhaustive grid-reachability check of the backward-forward splitting
//! identity at desk scale.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{eval_rhs, GameProblem, ModelError};
use crate::ellipsoid::{containment_margin, BoxSet, EllipsoidError};
use crate::sym;
use crate::tube::{TubeError, TubeTrajectory};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error("empty trajectory set")]
    EmptyTrajectorySet,
    #[error("state grid exceeds the cell budget: {cells} > {budget}")]
    CellBudget { cells: usize, budget: usize },
    #[error("grid/trajectory mismatch: {0}")]
    GridMismatch(String),
    #[error("report csv: {0}")]
    Csv(String),
}

/// Follower input sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Piecewise-constant inputs drawn uniformly per shooting interval.
    Uniform,
    /// Uniform draws, but at each substep the input is replaced, with
    /// probability 1/2, by the box vertex that steers hardest toward the
    /// interior of the follower constraint. Improves the feasible yield in
    /// tight geometries; still an inner approximation.
    Greedy,
}

/// One feasible follower trajectory sampled on the tube grid.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    /// States at the grid nodes (length = grid length).
    pub states: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub samples_requested: usize,
    pub feasible_count: usize,
    /// Fraction of feasible trajectories inside BOTH cross-section
    /// ellipsoids, per grid node. Reported as 1.0 with `zero_samples` set
    /// when no feasible trajectory exists.
    pub containment_fraction: Vec<f64>,
    pub min_margin: f64,
    pub empirical_worst_mayer: Option<f64>,
    pub seed: u64,
    pub zero_samples: bool,
}

impl MonteCarloReport {
    pub fn fully_contained(&self) -> bool {
        self.containment_fraction.iter().all(|&f| f == 1.0)
    }
}

fn membership_residual(problem: &GameProblem, t: f64, x: &DVector<f64>) -> Result<f64, OracleError> {
    let c = problem.state_constraint_at(t)?;
    Ok(-containment_margin(&c, x)?)
}

struct SimulateOutcome {
    states: Vec<DVector<f64>>,
    feasible: bool,
}

fn simulate_one(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    grid: &[f64],
    substeps: usize,
    mode: SamplerMode,
    rng: &mut ChaCha8Rng,
) -> Result<SimulateOutcome, OracleError> {
    let n_u2 = problem.model.n_u2();
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_fn(n_u2, |i, _| {
            let (lo, hi) = (problem.u2_box.lower[i], problem.u2_box.upper[i]);
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
    };
    let vertices = problem.u2_box.vertices();
    let mut x = problem.x0.clone();
    let mut states = Vec::with_capacity(grid.len());
    if membership_residual(problem, grid[0], &x)? > 1e-9 {
        return Ok(SimulateOutcome {
            states,
            feasible: false,
        });
    }
    states.push(x.clone());
    for k in 0..grid.len() - 1 {
        let u1 = &u1_traj[k];
        let interval_u2 = draw(rng);
        let h = (grid[k + 1] - grid[k]) / substeps as f64;
        for s in 0..substeps {
            let t = grid[k] + h * s as f64;
            let u2 = match mode {
                SamplerMode::Uniform => interval_u2.clone(),
                SamplerMode::Greedy => {
                    if rng.random_bool(0.5) {
                        // steer toward the constraint interior: pick the box
                        // vertex minimizing the membership-level derivative
                        let c = problem.state_constraint_at(t)?;
                        let sinv =
                            sym::inv_spd(c.shape()).ok_or(EllipsoidError::SingularShape)?;
                        let grad = sinv * (&x - c.center()) * 2.0;
                        let mut best = interval_u2.clone();
                        let mut best_val = f64::INFINITY;
                        for v in &vertices {
                            let f = eval_rhs(&problem.model, &x, u1, v, t)?;
                            let dv = grad.dot(&f);
                            if dv < best_val {
                                best_val = dv;
                                best = v.clone();
                            }
                        }
                        best
                    } else {
                        interval_u2.clone()
                    }
                }
            };
            // one classical RK4 substep
            let f1 = eval_rhs(&problem.model, &x, u1, &u2, t)?;
            let x2 = &x + &f1 * (0.5 * h);
            let f2 = eval_rhs(&problem.model, &x2, u1, &u2, t + 0.5 * h)?;
            let x3 = &x + &f2 * (0.5 * h);
            let f3 = eval_rhs(&problem.model, &x3, u1, &u2, t + 0.5 * h)?;
            let x4 = &x + &f3 * h;
            let f4 = eval_rhs(&problem.model, &x4, u1, &u2, t + h)?;
            x += (f1 + f2 * 2.0 + f3 * 2.0 + f4) * (h / 6.0);
            if membership_residual(problem, t + h, &x)? > 1e-9 {
                return Ok(SimulateOutcome {
                    states,
                    feasible: false,
                });
            }
        }
        states.push(x.clone());
    }
    Ok(SimulateOutcome {
        states,
        feasible: true,
    })
}

fn check_inputs(u1_traj: &[DVector<f64>], grid: &[f64]) -> Result<(), OracleError> {
    if u1_traj.len() != grid.len() - 1 {
        return Err(OracleError::GridMismatch(format!(
            "expected {} leader inputs, got {}",
            grid.len() - 1,
            u1_traj.len()
        )));
    }
    Ok(())
}

/// Draws `count` follower control realizations, simulates them under the
/// given leader control, and keeps the trajectories that respect the
/// follower state constraint at every substep. Deterministic for a fixed
/// seed: each sample index gets its own RNG stream, so results do not
/// depend on thread scheduling.
pub fn sample_feasible_trajectories(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    grid: &[f64],
    count: usize,
    seed: u64,
    mode: SamplerMode,
    substeps: usize,
) -> Result<Vec<SampledTrajectory>, OracleError> {
    check_inputs(u1_traj, grid)?;
    let run = |i: usize| -> Result<Option<SampledTrajectory>, OracleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let out = simulate_one(problem, u1_traj, grid, substeps, mode, &mut rng)?;
        Ok(out
            .feasible
            .then_some(SampledTrajectory { states: out.states }))
    };
    #[cfg(feature = "parallel")]
    let collected: Vec<Option<SampledTrajectory>> = {
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let collected: Vec<Option<SampledTrajectory>> =
        (0..count).map(run).collect::<Result<Vec<_>, _>>()?;
    Ok(collected.into_iter().flatten().collect())
}

/// Sequential variant, kept for benchmarking the parallel speedup.
pub fn sample_feasible_trajectories_serial(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    grid: &[f64],
    count: usize,
    seed: u64,
    mode: SamplerMode,
    substeps: usize,
) -> Result<Vec<SampledTrajectory>, OracleError> {
    check_inputs(u1_traj, grid)?;
    let mut out = Vec::new();
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let res = simulate_one(problem, u1_traj, grid, substeps, mode, &mut rng)?;
        if res.feasible {
            out.push(SampledTrajectory { states: res.states });
        }
    }
    Ok(out)
}

/// Checks each sampled trajectory for membership in BOTH cross-section
/// ellipsoids at every grid node.
pub fn containment_report(
    trajectories: &[SampledTrajectory],
    tube: &TubeTrajectory,
    tol: f64,
    problem: &GameProblem,
    samples_requested: usize,
    seed: u64,
) -> Result<MonteCarloReport, OracleError> {
    let n_nodes = tube.grid.len();
    if trajectories.iter().any(|t| t.states.len() != n_nodes) {
        return Err(OracleError::GridMismatch(
            "trajectory nodes do not match the tube grid".into(),
        ));
    }
    let mut fraction = vec![1.0; n_nodes];
    let mut min_margin = f64::INFINITY;
    if trajectories.is_empty() {
        return Ok(MonteCarloReport {
            samples_requested,
            feasible_count: 0,
            containment_fraction: fraction,
            min_margin: f64::INFINITY,
            empirical_worst_mayer: None,
            seed,
            zero_samples: true,
        });
    }
    for k in 0..n_nodes {
        let fwd = tube.states[k].forward_ellipsoid();
        let back = tube.states[k].backward_ellipsoid();
        let mut inside = 0usize;
        for traj in trajectories {
            let x = &traj.states[k];
            let mf = containment_margin(&fwd, x)?;
            let mb = containment_margin(&back, x)?;
            min_margin = min_margin.min(mf).min(mb);
            if mf >= -tol && mb >= -tol {
                inside += 1;
            }
        }
        fraction[k] = inside as f64 / trajectories.len() as f64;
    }
    let mayer = empirical_game_value(trajectories, &problem.mayer_direction).ok();
    Ok(MonteCarloReport {
        samples_requested,
        feasible_count: trajectories.len(),
        containment_fraction: fraction,
        min_margin,
        empirical_worst_mayer: mayer,
        seed,
        zero_samples: false,
    })
}

/// Worst terminal cost over the sampled feasible trajectories; a lower
/// bound on the follower's best response.
pub fn empirical_game_value(
    trajectories: &[SampledTrajectory],
    mayer_direction: &DVector<f64>,
) -> Result<f64, OracleError> {
    trajectories
        .iter()
        .map(|t| mayer_direction.dot(t.states.last().unwrap()))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(OracleError::EmptyTrajectorySet)
}

pub fn write_report_csv(
    report: &MonteCarloReport,
    grid: &[f64],
    path: &Path,
) -> Result<(), OracleError> {
    let mut out = String::from("node,t,containment_fraction\n");
    for (k, f) in report.containment_fraction.iter().enumerate() {
        let _ = writeln!(out, "{k},{:.16e},{:.16e}", grid[k], f);
    }
    crate::config::write_atomic(path, out.as_bytes()).map_err(|e| OracleError::Csv(e.to_string()))
}

pub fn report_summary(report: &MonteCarloReport) -> String {
    let worst = report
        .containment_fraction
        .iter()
        .cloned()
        .fold(1.0f64, f64::min);
    let mayer = report
        .empirical_worst_mayer
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "n/a".into());
    format!(
        "samples {} feasible {} worst-node containment {:.6} min margin {:.3e} empirical mayer {} seed {}{}",
        report.samples_requested,
        report.feasible_count,
        worst,
        report.min_margin,
        mayer,
        report.seed,
        if report.zero_samples { " (zero feasible samples)" } else { "" }
    )
}

// ---------------------------------------------------------------------------
// Gridded splitting check
// ---------------------------------------------------------------------------

/// Result of the gridded verification of the backward-forward splitting
/// identity: the time-`k` slice of the full-horizon feasible trajectory set
/// must equal the forward reach set constrained to the backward survivable
/// sets.
#[derive(Debug, Clone)]
pub struct SplitMetrics {
    /// Symmetric-difference cell counts per time step.
    pub symmetric_difference: Vec<usize>,
    /// Largest Hausdorff distance between the two per-step sets, in state
    /// units (zero when all symmetric differences are empty).
    pub max_hausdorff: f64,
    pub total_cells: usize,
}

impl SplitMetrics {
    pub fn all_zero(&self) -> bool {
        self.symmetric_difference.iter().all(|&c| c == 0)
    }
}

pub const CELL_BUDGET: usize = 10_000_000;

struct Grid {
    lower: DVector<f64>,
    width: DVector<f64>,
    cells: Vec<usize>,
    total: usize,
}

impl Grid {
    fn new(state_box: &BoxSet, cells: &[usize]) -> Result<Self, OracleError> {
        let total: usize = cells.iter().product();
        if total > CELL_BUDGET {
            return Err(OracleError::CellBudget {
                cells: total,
                budget: CELL_BUDGET,
            });
        }
        let n = state_box.dim();
        let width = DVector::from_fn(n, |i, _| {
            (state_box.upper[i] - state_box.lower[i]) / cells[i] as f64
        });
        Ok(Self {
            lower: state_box.lower.clone(),
            width,
            cells: cells.to_vec(),
            total,
        })
    }

    fn center(&self, flat: usize) -> DVector<f64> {
        let n = self.cells.len();
        let mut rem = flat;
        let mut c = DVector::zeros(n);
        for i in 0..n {
            let idx = rem % self.cells[i];
            rem /= self.cells[i];
            c[i] = self.lower[i] + (idx as f64 + 0.5) * self.width[i];
        }
        c
    }

    fn locate(&self, x: &DVector<f64>) -> Option<Vec<usize>> {
        let n = self.cells.len();
        let mut idx = vec![0usize; n];
        for i in 0..n {
            let rel = (x[i] - self.lower[i]) / self.width[i];
            if rel < 0.0 || rel >= self.cells[i] as f64 {
                return None;
            }
            idx[i] = rel as usize;
        }
        Some(idx)
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for i in (0..self.cells.len()).rev() {
            flat = flat * self.cells[i] + idx[i];
        }
        flat
    }

    /// Cells within one cell of the containing cell of `x` (Chebyshev
    /// dilation), clipped at the grid edge; empty when `x` leaves the box.
    fn dilated(&self, x: &DVector<f64>) -> Vec<usize> {
        let Some(idx) = self.locate(x) else {
            return Vec::new();
        };
        let n = self.cells.len();
        let mut out = Vec::with_capacity(3usize.pow(n as u32));
        let mut offsets = vec![-1i64; n];
        loop {
            let mut ok = true;
            let mut nb = vec![0usize; n];
            for i in 0..n {
                let v = idx[i] as i64 + offsets[i];
                if v < 0 || v >= self.cells[i] as i64 {
                    ok = false;
                    break;
                }
                nb[i] = v as usize;
            }
            if ok {
                out.push(self.flatten(&nb));
            }
            // odometer over {-1,0,1}^n
            let mut i = 0;
            loop {
                if i == n {
                    return out;
                }
                offsets[i] += 1;
                if offsets[i] <= 1 {
                    break;
                }
                offsets[i] = -1;
                i += 1;
            }
        }
    }
}

fn input_grid(u2_box: &BoxSet, cells: usize) -> Vec<DVector<f64>> {
    let n = u2_box.dim();
    let per_dim: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if cells <= 1 {
                vec![0.5 * (u2_box.lower[i] + u2_box.upper[i])]
            } else {
                (0..cells)
                    .map(|k| {
                        u2_box.lower[i]
                            + (u2_box.upper[i] - u2_box.lower[i]) * k as f64 / (cells - 1) as f64
                    })
                    .collect()
            }
        })
        .collect();
    let mut out = vec![DVector::zeros(n)];
    for (i, vals) in per_dim.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for base in &out {
            for &v in vals {
                let mut b = base.clone();
                b[i] = v;
                next.push(b);
            }
        }
        out = next;
    }
    out
}

/// Exhaustive graph reachability on a state grid, comparing
/// (a) the slice of full-horizon feasible paths (forward-pruned reach
/// intersected with backward survivable sets) against
/// (b) the forward reach sets constrained to the backward sets.
pub fn brute_force_splitting_check(
    problem: &GameProblem,
    u1_traj: &[DVector<f64>],
    state_box: &BoxSet,
    state_cells: &[usize],
    input_cells: usize,
    steps: usize,
) -> Result<SplitMetrics, OracleError> {
    if u1_traj.len() != steps {
        return Err(OracleError::GridMismatch(format!(
            "expected {} leader inputs, got {}",
            steps,
            u1_traj.len()
        )));
    }
    let grid = Grid::new(state_box, state_cells)?;
    let inputs = input_grid(&problem.u2_box, input_cells);
    let dt = problem.horizon / steps as f64;

    // feasible cells per time node
    let mut feas: Vec<Vec<bool>> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = dt * k as f64;
        let constraint = problem.state_constraint_at(t)?;
        let mut row = vec![false; grid.total];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = containment_margin(&constraint, &grid.center(c))? >= 0.0;
        }
        feas.push(row);
    }

    // transition images per step (one RK4 step per input sample, dilated)
    let mut images: Vec<Vec<Vec<usize>>> = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = dt * k as f64;
        let u1 = &u1_traj[k];
        let mut per_cell: Vec<Vec<usize>> = Vec::with_capacity(grid.total);
        for c in 0..grid.total {
            let x = grid.center(c);
            let mut targets: Vec<usize> = Vec::new();
            for u2 in &inputs {
                let f1 = eval_rhs(&problem.model, &x, u1, u2, t)?;
                let x2 = &x + &f1 * (0.5 * dt);
                let f2 = eval_rhs(&problem.model, &x2, u1, u2, t + 0.5 * dt)?;
                let x3 = &x + &f2 * (0.5 * dt);
                let f3 = eval_rhs(&problem.model, &x3, u1, u2, t + 0.5 * dt)?;
                let x4 = &x + &f3 * dt;
                let f4 = eval_rhs(&problem.model, &x4, u1, u2, t + dt)?;
                let next = &x + (f1 + f2 * 2.0 + f3 * 2.0 + f4) * (dt / 6.0);
                targets.extend(grid.dilated(&next));
            }
            targets.sort_unstable();
            targets.dedup();
            per_cell.push(targets);
        }
        images.push(per_cell);
    }

    let start_cell = grid.locate(&problem.x0).map(|idx| grid.flatten(&idx));

    // forward reach with per-step feasibility pruning
    let mut fwd: Vec<Vec<bool>> = vec![vec![false; grid.total]; steps + 1];
    if let Some(c0) = start_cell {
        fwd[0][c0] = feas[0][c0];
    }
    for k in 0..steps {
        for c in 0..grid.total {
            if fwd[k][c] {
                for &nb in &images[k][c] {
                    if feas[k + 1][nb] {
                        fwd[k + 1][nb] = true;
                    }
                }
            }
        }
    }

    // backward survivable sets
    let mut bwd: Vec<Vec<bool>> = vec![vec![false; grid.total]; steps + 1];
    bwd[steps] = feas[steps].clone();
    for k in (0..steps).rev() {
        for c in 0..grid.total {
            if feas[k][c] && images[k][c].iter().any(|&nb| bwd[k + 1][nb]) {
                bwd[k][c] = true;
            }
        }
    }

    // (b): forward reach constrained to the backward sets
    let mut fwd_b: Vec<Vec<bool>> = vec![vec![false; grid.total]; steps + 1];
    if let Some(c0) = start_cell {
        fwd_b[0][c0] = bwd[0][c0];
    }
    for k in 0..steps {
        for c in 0..grid.total {
            if fwd_b[k][c] {
                for &nb in &images[k][c] {
                    if bwd[k + 1][nb] {
                        fwd_b[k + 1][nb] = true;
                    }
                }
            }
        }
    }

    let mut sym_diff = Vec::with_capacity(steps + 1);
    let mut max_hausdorff = 0.0f64;
    for k in 0..=steps {
        let slice: Vec<usize> = (0..grid.total)
            .filter(|&c| fwd[k][c] && bwd[k][c])
            .collect();
        let alt: Vec<usize> = (0..grid.total).filter(|&c| fwd_b[k][c]).collect();
        let diff = slice.iter().filter(|c| !fwd_b[k][**c]).count()
            + alt.iter().filter(|c| !(fwd[k][**c] && bwd[k][**c])).count();
        sym_diff.push(diff);
        if diff > 0 {
            max_hausdorff = max_hausdorff.max(hausdorff(&grid, &slice, &alt));
        }
    }
    Ok(SplitMetrics {
        symmetric_difference: sym_diff,
        max_hausdorff,
        total_cells: grid.total,
    })
}

fn hausdorff(grid: &Grid, a: &[usize], b: &[usize]) -> f64 {
    let one_sided = |from: &[usize], to: &[usize]| -> f64 {
        from.iter()
            .map(|&c| {
                let x = grid.center(c);
                to.iter()
                    .map(|&d| (grid.center(d) - &x).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    one_sided(a, b).max(one_sided(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{parse_model, X2Spec};
    use crate::ellipsoid::Ellipsoid;
    use nalgebra::dvector;

    /// Scalar integrator: xdot = u2, U2 = [-1, 1], X2 a centered interval.
    fn toy_problem(x2_radius: f64) -> GameProblem {
        let model = parse_model("u2_1").unwrap().with_input_dims(1, 1);
        GameProblem::new(
            model,
            1.0,
            dvector![0.0],
            BoxSet::new(dvector![0.0], dvector![0.0]).unwrap(),
            BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap(),
            None,
            BoxSet::new(dvector![-9.0], dvector![9.0]).unwrap(),
            X2Spec::time_invariant(
                Ellipsoid::new(dvector![0.0], nalgebra::dmatrix![x2_radius * x2_radius]).unwrap(),
            ),
            dvector![1.0],
        )
        .unwrap()
    }

    fn uniform_grid(t1: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t1 * k as f64 / n as f64).collect()
    }

    #[test]
    fn splitting_identity_on_scalar_integrator() {
        let p = toy_problem(0.5);
        let u1 = vec![dvector![0.0]; 10];
        let state_box = BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap();
        let metrics = brute_force_splitting_check(&p, &u1, &state_box, &[101], 5, 10).unwrap();
        assert!(
            metrics.all_zero(),
            "sym diff {:?}",
            metrics.symmetric_difference
        );
        assert_eq!(metrics.max_hausdorff, 0.0);
    }

    #[test]
    fn splitting_without_constraint_reaches_everything_reachable() {
        // X2 huge: backward sets cover the grid, both constructions give
        // the unconstrained reach set
        let p = toy_problem(100.0);
        let u1 = vec![dvector![0.0]; 8];
        let state_box = BoxSet::new(dvector![-1.5], dvector![1.5]).unwrap();
        let metrics = brute_force_splitting_check(&p, &u1, &state_box, &[61], 3, 8).unwrap();
        assert!(metrics.all_zero());
    }

    #[test]
    fn splitting_coarse_grid_still_zero() {
        let p = toy_problem(0.5);
        let u1 = vec![dvector![0.0]; 10];
        let state_box = BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap();
        let metrics = brute_force_splitting_check(&p, &u1, &state_box, &[3], 3, 10).unwrap();
        assert!(metrics.all_zero());
    }

    #[test]
    fn cell_budget_enforced() {
        let p = toy_problem(0.5);
        let u1 = vec![dvector![0.0]; 2];
        let state_box = BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap();
        let err = brute_force_splitting_check(&p, &u1, &state_box, &[20_000_001], 3, 2);
        assert!(matches!(err, Err(OracleError::CellBudget { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = toy_problem(0.5);
        let grid = uniform_grid(1.0, 5);
        let u1 = vec![dvector![0.0]; 5];
        let a =
            sample_feasible_trajectories(&p, &u1, &grid, 200, 7, SamplerMode::Uniform, 8).unwrap();
        let b =
            sample_feasible_trajectories(&p, &u1, &grid, 200, 7, SamplerMode::Uniform, 8).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (sx, sy) in x.states.iter().zip(&y.states) {
                assert_eq!(sx, sy);
            }
        }
        // serial path produces the identical set
        let c = sample_feasible_trajectories_serial(&p, &u1, &grid, 200, 7, SamplerMode::Uniform, 8)
            .unwrap();
        assert_eq!(a.len(), c.len());
        for (x, y) in a.iter().zip(&c) {
            for (sx, sy) in x.states.iter().zip(&y.states) {
                assert_eq!(sx, sy);
            }
        }
    }

    #[test]
    fn huge_constraint_accepts_all_samples() {
        let p = toy_problem(1e6);
        let grid = uniform_grid(1.0, 5);
        let u1 = vec![dvector![0.0]; 5];
        let trajs =
            sample_feasible_trajectories(&p, &u1, &grid, 100, 3, SamplerMode::Uniform, 8).unwrap();
        assert_eq!(trajs.len(), 100);
    }

    #[test]
    fn point_constraint_rejects_all_samples() {
        // X2 a tiny ball away from x0: even the start is infeasible
        let model = parse_model("u2_1").unwrap().with_input_dims(1, 1);
        let p = GameProblem::new(
            model,
            1.0,
            dvector![0.0],
            BoxSet::new(dvector![0.0], dvector![0.0]).unwrap(),
            BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap(),
            None,
            BoxSet::new(dvector![-9.0], dvector![9.0]).unwrap(),
            X2Spec::time_invariant(
                Ellipsoid::new(dvector![5.0], nalgebra::dmatrix![1e-6]).unwrap(),
            ),
            dvector![1.0],
        )
        .unwrap();
        let grid = uniform_grid(1.0, 5);
        let u1 = vec![dvector![0.0]; 5];
        let trajs =
            sample_feasible_trajectories(&p, &u1, &grid, 50, 3, SamplerMode::Uniform, 8).unwrap();
        assert!(trajs.is_empty());
    }

    #[test]
    fn empty_set_reported_as_vacuous() {
        let p = toy_problem(0.5);
        let grid = uniform_grid(1.0, 5);
        let u1 = vec![dvector![0.0]; 5];
        let lam = crate::tube::heuristic_multipliers(&p, &u1, &grid).unwrap();
        let tube =
            crate::tube::propagate(&p, &u1, &lam, &grid, crate::integrate::Stepper::rk4(10))
                .unwrap();
        let report = containment_report(&[], &tube, 1e-6, &p, 50, 3).unwrap();
        assert!(report.zero_samples);
        assert!(report.fully_contained());
        assert!(report.empirical_worst_mayer.is_none());
    }

    #[test]
    fn greedy_mode_improves_or_matches_yield() {
        let p = toy_problem(0.3);
        let grid = uniform_grid(1.0, 8);
        let u1 = vec![dvector![0.0]; 8];
        let uni =
            sample_feasible_trajectories(&p, &u1, &grid, 300, 5, SamplerMode::Uniform, 10).unwrap();
        let greedy =
            sample_feasible_trajectories(&p, &u1, &grid, 300, 5, SamplerMode::Greedy, 10).unwrap();
        assert!(greedy.len() >= uni.len());
        assert!(!greedy.is_empty());
    }

    #[test]
    fn empirical_value_single_trajectory() {
        let t = SampledTrajectory {
            states: vec![dvector![0.0, 0.0], dvector![2.0, -1.0]],
        };
        let v = empirical_game_value(&[t], &dvector![1.0, -1.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
        assert!(matches!(
            empirical_game_value(&[], &dvector![1.0]),
            Err(OracleError::EmptyTrajectorySet)
        ));
    }
}
