//! SQP driver: damped BFGS Hessian approximation, interior-point QP
//! subproblems with an elastic fallback, and an Armijo line search on an
//! l1 exact-penalty merit function.

use nalgebra::{DMatrix, DVector};

use super::qp::{self, QpData, QpStatus};
use super::{Derivatives, Evaluation, NlpProblem};

#[derive(Debug, Clone)]
pub struct SqpOptions {
    pub max_iterations: usize,
    /// Stationarity tolerance, relative to `1 + |grad f|_inf`.
    pub kkt_tolerance: f64,
    /// Feasibility tolerance on equality and inequality residuals.
    pub feasibility_tolerance: f64,
    pub armijo_factor: f64,
    pub backtrack_ratio: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub fd_step: f64,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            kkt_tolerance: 1e-6,
            feasibility_tolerance: 1e-8,
            armijo_factor: 1e-4,
            backtrack_ratio: 0.5,
            penalty_init: 10.0,
            penalty_growth: 2.0,
            fd_step: 1e-6,
            qp_tolerance: 1e-10,
            qp_max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    IterationCap,
    LineSearchFailure,
    QpFailure,
    EvaluationFailure,
}

#[derive(Debug, Clone)]
pub struct IterRow {
    pub iter: usize,
    pub merit: f64,
    pub objective: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub step: f64,
    pub kkt: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub iterations: usize,
    pub status: SqpStatus,
    pub multipliers_eq: DVector<f64>,
    pub multipliers_ineq: DVector<f64>,
    pub log: Vec<IterRow>,
    pub message: String,
}

impl SqpResult {
    pub fn converged(&self) -> bool {
        self.status == SqpStatus::Converged
    }
}

fn violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter().map(|v| v.abs()).sum::<f64>() + ci.iter().map(|v| v.max(0.0)).sum::<f64>()
}

fn feas_norms(ce: &DVector<f64>, ci: &DVector<f64>) -> (f64, f64) {
    let eq = ce.amax();
    let ineq = ci.iter().cloned().fold(0.0f64, f64::max);
    (if ce.is_empty() { 0.0 } else { eq }, ineq.max(0.0))
}

/// Gradient of the Lagrangian with the bound duals scattered back onto the
/// variable coordinates.
fn lagrangian_grad(
    deriv: &Derivatives,
    y: &DVector<f64>,
    z_ineq: &DVector<f64>,
    z_lower: &DVector<f64>,
    z_upper: &DVector<f64>,
    lo_idx: &[usize],
    hi_idx: &[usize],
) -> DVector<f64> {
    let mut g = deriv.grad.clone();
    if !y.is_empty() {
        g += deriv.jac_eq.transpose() * y;
    }
    if !z_ineq.is_empty() {
        g += deriv.jac_ineq.transpose() * z_ineq;
    }
    for (r, &j) in lo_idx.iter().enumerate() {
        g[j] -= z_lower[r];
    }
    for (r, &j) in hi_idx.iter().enumerate() {
        g[j] += z_upper[r];
    }
    g
}

struct ElasticResult {
    d: DVector<f64>,
    y: DVector<f64>,
    z_ineq: DVector<f64>,
    z_lower: DVector<f64>,
    z_upper: DVector<f64>,
}

/// l1 relaxation of an infeasible QP subproblem: slacks on every equality
/// and inequality row with a large linear penalty.
#[allow(clippy::too_many_arguments)]
fn solve_elastic(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    jac_eq: &DMatrix<f64>,
    ce: &DVector<f64>,
    jac_ineq: &DMatrix<f64>,
    ci: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    rho: f64,
    opts: &SqpOptions,
) -> Option<ElasticResult> {
    let n = grad.len();
    let me = ce.len();
    let mi = ci.len();
    let next = n + 2 * me + mi;
    let mut h = DMatrix::zeros(next, next);
    h.view_mut((0, 0), (n, n)).copy_from(hess);
    for j in n..next {
        h[(j, j)] = 1e-8;
    }
    let mut g = DVector::from_element(next, rho);
    g.rows_mut(0, n).copy_from(grad);
    let mut a = DMatrix::zeros(me, next);
    a.view_mut((0, 0), (me, n)).copy_from(jac_eq);
    for r in 0..me {
        a[(r, n + r)] = 1.0;
        a[(r, n + me + r)] = -1.0;
    }
    let b = -ce.clone();
    let mut c = DMatrix::zeros(mi, next);
    c.view_mut((0, 0), (mi, n)).copy_from(jac_ineq);
    for r in 0..mi {
        c[(r, n + 2 * me + r)] = -1.0;
    }
    let e = -ci.clone();
    let mut lo = DVector::from_element(next, 0.0);
    lo.rows_mut(0, n).copy_from(lower);
    let mut hi = DVector::from_element(next, f64::INFINITY);
    hi.rows_mut(0, n).copy_from(upper);
    let sol = qp::solve_qp(
        &QpData {
            h: &h,
            g: &g,
            a: &a,
            b: &b,
            c: &c,
            e: &e,
            lower: &lo,
            upper: &hi,
        },
        opts.qp_tolerance.max(1e-9),
        opts.qp_max_iterations,
    );
    if sol.status == QpStatus::NumericalFailure {
        return None;
    }
    // bound duals of the original variables sit in the first n slots of the
    // (extended) finite-bound index lists
    let lo_idx_ext = qp::finite_lower(&lo);
    let hi_idx_ext = qp::finite_upper(&hi);
    let lo_idx = qp::finite_lower(lower);
    let hi_idx = qp::finite_upper(upper);
    let mut z_lower = DVector::zeros(lo_idx.len());
    for (r_orig, &j) in lo_idx.iter().enumerate() {
        if let Some(r_ext) = lo_idx_ext.iter().position(|&k| k == j) {
            z_lower[r_orig] = sol.z_lower[r_ext];
        }
    }
    let mut z_upper = DVector::zeros(hi_idx.len());
    for (r_orig, &j) in hi_idx.iter().enumerate() {
        if let Some(r_ext) = hi_idx_ext.iter().position(|&k| k == j) {
            z_upper[r_orig] = sol.z_upper[r_ext];
        }
    }
    Some(ElasticResult {
        d: sol.d.rows(0, n).into_owned(),
        y: sol.y,
        z_ineq: sol.z_ineq,
        z_lower,
        z_upper,
    })
}

/// Minimum-norm second-order correction step for the equality residuals at
/// the trial point.
fn soc_step(jac_eq: &DMatrix<f64>, ce_trial: &DVector<f64>) -> Option<DVector<f64>> {
    if ce_trial.is_empty() {
        return None;
    }
    let jjt = jac_eq * jac_eq.transpose();
    let me = jjt.nrows();
    let reg = &jjt + DMatrix::identity(me, me) * (1e-12 * (1.0 + jjt.trace().abs()));
    let w = reg.cholesky()?.solve(&(-ce_trial));
    Some(jac_eq.transpose() * w)
}

pub fn solve_sqp<P: NlpProblem>(
    problem: &mut P,
    x0: &DVector<f64>,
    opts: &SqpOptions,
) -> SqpResult {
    let n = problem.num_vars();
    let (lower, upper) = problem.bounds();
    let lo_idx = qp::finite_lower(&lower);
    let hi_idx = qp::finite_upper(&upper);
    let mut x = x0.clone();
    for j in 0..n {
        x[j] = x[j].clamp(lower[j], upper[j]);
    }

    let fail = |status: SqpStatus, x: DVector<f64>, log: Vec<IterRow>, msg: String| SqpResult {
        objective: f64::NAN,
        kkt_residual: f64::NAN,
        eq_violation: f64::NAN,
        ineq_violation: f64::NAN,
        iterations: log.len(),
        status,
        multipliers_eq: DVector::zeros(0),
        multipliers_ineq: DVector::zeros(0),
        log,
        message: msg,
        x,
    };

    if let Err(e) = problem.refresh(&x) {
        return fail(SqpStatus::EvaluationFailure, x, vec![], e);
    }
    let (mut f, mut ce, mut ci) = match problem.evaluate(&x) {
        Ok(v) => (v.objective, v.eq, v.ineq),
        Err(e) => return fail(SqpStatus::EvaluationFailure, x, vec![], e),
    };

    let mut hess = DMatrix::identity(n, n);
    let mut nu = opts.penalty_init;
    let mut log: Vec<IterRow> = Vec::new();
    let mut prev: Option<(DVector<f64>, Derivatives)> = None;
    let mut best: Option<(f64, f64, DVector<f64>)> = None; // (violation, f, x)
    let mut y = DVector::zeros(ce.len());
    let mut z_ineq = DVector::zeros(ci.len());
    let mut z_lower = DVector::zeros(lo_idx.len());
    let mut z_upper = DVector::zeros(hi_idx.len());

    for iter in 0..opts.max_iterations {
        let deriv = match problem.derivatives(&x, opts.fd_step) {
            Ok(d) => d,
            Err(e) => return fail(SqpStatus::EvaluationFailure, x, log, e),
        };

        // delayed damped BFGS update with the freshly available Jacobians
        if let Some((x_prev, deriv_prev)) = prev.take() {
            let s = &x - &x_prev;
            let gl_new = lagrangian_grad(&deriv, &y, &z_ineq, &z_lower, &z_upper, &lo_idx, &hi_idx);
            let gl_old = lagrangian_grad(
                &deriv_prev,
                &y,
                &z_ineq,
                &z_lower,
                &z_upper,
                &lo_idx,
                &hi_idx,
            );
            let mut yv = gl_new - gl_old;
            let bs = &hess * &s;
            let sbs = s.dot(&bs).max(1e-300);
            let sy = s.dot(&yv);
            if s.norm() > 1e-14 {
                if sy < 0.2 * sbs {
                    let theta = 0.8 * sbs / (sbs - sy);
                    yv = yv * theta + &bs * (1.0 - theta);
                }
                let sy_d = s.dot(&yv).max(1e-300);
                hess = hess - (&bs * bs.transpose()) / sbs + (&yv * yv.transpose()) / sy_d;
                // guard against drift from symmetry
                hess = (&hess + hess.transpose()) * 0.5;
            }
        }

        // QP subproblem in the step d
        let qp_lower = DVector::from_fn(n, |j, _| lower[j] - x[j]);
        let qp_upper = DVector::from_fn(n, |j, _| upper[j] - x[j]);
        let qp_tol = opts.qp_tolerance;
        let sol = qp::solve_qp(
            &QpData {
                h: &hess,
                g: &deriv.grad,
                a: &deriv.jac_eq,
                b: &(-&ce),
                c: &deriv.jac_ineq,
                e: &(-&ci),
                lower: &qp_lower,
                upper: &qp_upper,
            },
            qp_tol,
            opts.qp_max_iterations,
        );
        let (d, used_elastic) = if sol.status == QpStatus::Solved {
            y = sol.y;
            z_ineq = sol.z_ineq;
            z_lower = sol.z_lower;
            z_upper = sol.z_upper;
            (sol.d, false)
        } else {
            let rho = 1e3 * (nu + deriv.grad.amax() + 1.0);
            match solve_elastic(
                &hess,
                &deriv.grad,
                &deriv.jac_eq,
                &ce,
                &deriv.jac_ineq,
                &ci,
                &qp_lower,
                &qp_upper,
                rho,
                opts,
            ) {
                Some(el) => {
                    y = el.y;
                    z_ineq = el.z_ineq;
                    z_lower = el.z_lower;
                    z_upper = el.z_upper;
                    (el.d, true)
                }
                None => {
                    return fail(
                        SqpStatus::QpFailure,
                        x,
                        log,
                        "QP subproblem failed even after elastic relaxation".into(),
                    )
                }
            }
        };

        // KKT assessment at the current point with the fresh multipliers
        let grad_l = lagrangian_grad(&deriv, &y, &z_ineq, &z_lower, &z_upper, &lo_idx, &hi_idx);
        let stat = grad_l.amax() / (1.0 + deriv.grad.amax());
        let (eq_viol, ineq_viol) = feas_norms(&ce, &ci);
        let kkt = stat.max(eq_viol).max(ineq_viol);
        let feasible = eq_viol <= opts.feasibility_tolerance && ineq_viol <= opts.feasibility_tolerance;

        let cur_viol = violation(&ce, &ci);
        if best
            .as_ref()
            .map(|(bv, bf, _)| {
                cur_viol < bv - 1e-12 || (cur_viol <= bv + 1e-12 && f < *bf)
            })
            .unwrap_or(true)
        {
            best = Some((cur_viol, f, x.clone()));
        }

        if feasible && stat <= opts.kkt_tolerance {
            log.push(IterRow {
                iter,
                merit: f + nu * cur_viol,
                objective: f,
                eq_violation: eq_viol,
                ineq_violation: ineq_viol,
                step: 0.0,
                kkt,
                penalty: nu,
            });
            return SqpResult {
                objective: f,
                kkt_residual: kkt,
                eq_violation: eq_viol,
                ineq_violation: ineq_viol,
                iterations: iter,
                status: SqpStatus::Converged,
                multipliers_eq: y,
                multipliers_ineq: z_ineq,
                log,
                message: String::new(),
                x,
            };
        }

        // penalty weight must dominate the multipliers
        let mult_inf = y
            .amax()
            .max(z_ineq.amax())
            .max(z_lower.amax())
            .max(z_upper.amax());
        if nu < 1.1 * mult_inf {
            nu = (opts.penalty_growth * mult_inf).max(nu * opts.penalty_growth);
        }
        nu = nu.min(1e12);

        // Armijo backtracking on the l1 merit
        let merit0 = f + nu * cur_viol;
        let ddir = deriv.grad.dot(&d) - nu * cur_viol;
        let mut alpha = 1.0f64;
        let mut accepted = false;
        let mut trial = (f, ce.clone(), ci.clone(), x.clone());
        let mut tried_soc = false;
        for _ in 0..60 {
            let x_t = &x + &d * alpha;
            match problem.evaluate(&x_t) {
                Ok(Evaluation {
                    objective: f_t,
                    eq: ce_t,
                    ineq: ci_t,
                }) => {
                    let merit_t = f_t + nu * violation(&ce_t, &ci_t);
                    if merit_t <= merit0 + opts.armijo_factor * alpha * ddir.min(0.0) {
                        trial = (f_t, ce_t, ci_t, x_t);
                        accepted = true;
                        break;
                    }
                    // one second-order correction attempt at the full step
                    if alpha == 1.0 && !tried_soc && violation(&ce_t, &ci_t) > cur_viol {
                        tried_soc = true;
                        if let Some(dsoc) = soc_step(&deriv.jac_eq, &ce_t) {
                            let x_s = &x_t + &dsoc;
                            if let Ok(ev) = problem.evaluate(&x_s) {
                                let merit_s =
                                    ev.objective + nu * violation(&ev.eq, &ev.ineq);
                                if merit_s <= merit0 + opts.armijo_factor * ddir.min(0.0) {
                                    trial = (ev.objective, ev.eq, ev.ineq, x_s);
                                    accepted = true;
                                    break;
                                }
                            }
                        }
                    }
                }
                Err(_) => {}
            }
            alpha *= opts.backtrack_ratio;
            if alpha < 1e-12 {
                break;
            }
        }

        log.push(IterRow {
            iter,
            merit: merit0,
            objective: f,
            eq_violation: eq_viol,
            ineq_violation: ineq_viol,
            step: if accepted { alpha } else { 0.0 },
            kkt,
            penalty: nu,
        });

        if !accepted {
            let (bv, bf, bx) = best.unwrap();
            let _ = (bv, bf);
            let mut res = final_result(problem, bx, SqpStatus::LineSearchFailure, log, opts);
            res.message = format!(
                "line search failed at iteration {iter} (elastic step: {used_elastic})"
            );
            return res;
        }

        prev = Some((x.clone(), deriv));
        x = trial.3;
        if let Err(e) = problem.refresh(&x) {
            return fail(SqpStatus::EvaluationFailure, x, log, e);
        }
        // re-evaluate: the refreshed discretization may shift values slightly
        match problem.evaluate(&x) {
            Ok(v) => (f, ce, ci) = (v.objective, v.eq, v.ineq),
            Err(e) => return fail(SqpStatus::EvaluationFailure, x, log, e),
        }
    }

    let (_, _, bx) = best.unwrap_or((f64::INFINITY, f64::INFINITY, x));
    final_result(problem, bx, SqpStatus::IterationCap, log, opts)
}

fn final_result<P: NlpProblem>(
    problem: &mut P,
    x: DVector<f64>,
    status: SqpStatus,
    log: Vec<IterRow>,
    _opts: &SqpOptions,
) -> SqpResult {
    let _ = problem.refresh(&x);
    let (f, ce, ci) = match problem.evaluate(&x) {
        Ok(v) => (v.objective, v.eq, v.ineq),
        Err(e) => {
            return SqpResult {
                objective: f64::NAN,
                kkt_residual: f64::NAN,
                eq_violation: f64::NAN,
                ineq_violation: f64::NAN,
                iterations: log.len(),
                status: SqpStatus::EvaluationFailure,
                multipliers_eq: DVector::zeros(0),
                multipliers_ineq: DVector::zeros(0),
                log,
                message: e,
                x,
            }
        }
    };
    let (eq_viol, ineq_viol) = feas_norms(&ce, &ci);
    SqpResult {
        objective: f,
        kkt_residual: f64::NAN,
        eq_violation: eq_viol,
        ineq_violation: ineq_viol,
        iterations: log.len(),
        status,
        multipliers_eq: DVector::zeros(0),
        multipliers_ineq: DVector::zeros(0),
        log,
        message: String::new(),
        x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl NlpProblem for Quadratic {
        fn num_vars(&self) -> usize {
            3
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(3, f64::NEG_INFINITY),
                DVector::from_element(3, f64::INFINITY),
            )
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String> {
            Ok(Evaluation {
                objective: x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum(),
                eq: DVector::zeros(0),
                ineq: DVector::zeros(0),
            })
        }
    }

    #[test]
    fn quadratic_in_three_iterations() {
        let mut p = Quadratic;
        let res = solve_sqp(&mut p, &DVector::zeros(3), &SqpOptions::default());
        assert!(res.converged());
        assert!(res.iterations <= 3, "took {} iterations", res.iterations);
        assert!((&res.x - DVector::from_element(3, 1.0)).amax() < 1e-6);
    }

    /// Constrained problem with known solution:
    /// min (x1-2)^2 + (x2-1)^2 s.t. x1 + x2 = 1, x1 >= 0 -> (1, 0).
    struct EqIneq;

    impl NlpProblem for EqIneq {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(2, f64::NEG_INFINITY),
                DVector::from_element(2, f64::INFINITY),
            )
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String> {
            Ok(Evaluation {
                objective: (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
                eq: DVector::from_vec(vec![x[0] + x[1] - 1.0]),
                ineq: DVector::from_vec(vec![-x[0]]),
            })
        }
    }

    #[test]
    fn equality_and_inequality() {
        let mut p = EqIneq;
        let res = solve_sqp(
            &mut p,
            &DVector::from_vec(vec![-1.0, 3.0]),
            &SqpOptions::default(),
        );
        assert!(res.converged(), "status {:?}: {}", res.status, res.message);
        assert!((res.x[0] - 1.0).abs() < 1e-6, "x = {}", res.x);
        assert!((res.x[1] - 0.0).abs() < 1e-6);
    }

    /// Rosenbrock constrained to a disk; optimum on the boundary at (1,1).
    struct RosenbrockDisk;

    impl NlpProblem for RosenbrockDisk {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(2, -2.0),
                DVector::from_element(2, 2.0),
            )
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String> {
            Ok(Evaluation {
                objective: (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
                eq: DVector::zeros(0),
                ineq: DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 2.0]),
            })
        }
    }

    #[test]
    fn rosenbrock_on_disk() {
        let mut p = RosenbrockDisk;
        let res = solve_sqp(
            &mut p,
            &DVector::from_vec(vec![-0.5, 0.5]),
            &SqpOptions::default(),
        );
        assert!(res.converged(), "status {:?}", res.status);
        assert!((&res.x - DVector::from_element(2, 1.0)).amax() < 1e-4, "x = {}", res.x);
    }

    /// Infeasible constraints must not be reported as converged.
    struct Infeasible;

    impl NlpProblem for Infeasible {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            2
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(1, f64::NEG_INFINITY),
                DVector::from_element(1, f64::INFINITY),
            )
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String> {
            Ok(Evaluation {
                objective: x[0] * x[0],
                eq: DVector::from_vec(vec![x[0], x[0] - 1.0]),
                ineq: DVector::zeros(0),
            })
        }
    }

    #[test]
    fn infeasible_is_flagged() {
        let mut p = Infeasible;
        let mut opts = SqpOptions::default();
        opts.max_iterations = 40;
        let res = solve_sqp(&mut p, &DVector::zeros(1), &opts);
        assert!(!res.converged());
        assert!(res.eq_violation > 0.1);
    }
}
