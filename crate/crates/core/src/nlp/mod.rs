//! Generic nonlinear programming layer: problem trait, finite-difference
//! derivatives, a dense interior-point QP solver and an SQP driver with an
//! l1 exact-penalty line search.

use nalgebra::{DMatrix, DVector};

pub mod qp;
pub mod sqp;

pub use sqp::{solve_sqp, SqpOptions, SqpResult, SqpStatus};

/// One combined evaluation of the problem functions at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

/// A smooth NLP
/// `min f(x)  s.t.  c_E(x) = 0,  c_I(x) <= 0,  l <= x <= u`.
///
/// The evaluator returns `Err` on undefined points (lost positive
/// definiteness, domain violations); the solver treats such points as
/// infinitely bad in the line search and as one-sided information in finite
/// differencing.
pub trait NlpProblem: Sync {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    /// Variable bounds; entries may be infinite.
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);
    /// Objective and constraint residuals, evaluated together so shared
    /// work (shooting integrations) happens once.
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String>;
    /// Hook called once per accepted iterate; lets problems refresh cached
    /// integration step schedules so that all evaluations within the next
    /// iteration share one smooth discretization.
    fn refresh(&mut self, _x: &DVector<f64>) -> Result<(), String> {
        Ok(())
    }
    /// Derivative evaluator; central finite differences by default.
    fn derivatives(&self, x: &DVector<f64>, fd_step: f64) -> Result<Derivatives, String> {
        fd_derivatives(self, x, fd_step)
    }
}

#[derive(Debug, Clone)]
pub struct Derivatives {
    pub grad: DVector<f64>,
    pub jac_eq: DMatrix<f64>,
    pub jac_ineq: DMatrix<f64>,
}

type Column = (f64, DVector<f64>, DVector<f64>);

fn fd_column<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    base: &Evaluation,
    j: usize,
    fd_step: f64,
) -> Result<Column, String> {
    let h = fd_step * (1.0 + x[j].abs());
    let mut xp = x.clone();
    xp[j] += h;
    let mut xm = x.clone();
    xm[j] -= h;
    match (p.evaluate(&xp), p.evaluate(&xm)) {
        (Ok(fp), Ok(fm)) => Ok((
            (fp.objective - fm.objective) / (2.0 * h),
            (fp.eq - fm.eq) / (2.0 * h),
            (fp.ineq - fm.ineq) / (2.0 * h),
        )),
        (Ok(fp), Err(_)) => Ok((
            (fp.objective - base.objective) / h,
            (&fp.eq - &base.eq) / h,
            (&fp.ineq - &base.ineq) / h,
        )),
        (Err(_), Ok(fm)) => Ok((
            (base.objective - fm.objective) / h,
            (&base.eq - &fm.eq) / h,
            (&base.ineq - &fm.ineq) / h,
        )),
        (Err(e), Err(_)) => Err(format!("finite difference column {j}: {e}")),
    }
}

fn assemble<P: NlpProblem + ?Sized>(p: &P, cols: Vec<Column>) -> Derivatives {
    let n = cols.len();
    let mut grad = DVector::zeros(n);
    let mut jac_eq = DMatrix::zeros(p.num_eq(), n);
    let mut jac_ineq = DMatrix::zeros(p.num_ineq(), n);
    for (j, (g, ce, ci)) in cols.into_iter().enumerate() {
        grad[j] = g;
        jac_eq.set_column(j, &ce);
        jac_ineq.set_column(j, &ci);
    }
    Derivatives {
        grad,
        jac_eq,
        jac_ineq,
    }
}

/// Central-difference derivatives, columns evaluated sequentially.
pub fn fd_derivatives_serial<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<Derivatives, String> {
    let base = p.evaluate(x)?;
    let cols = (0..p.num_vars())
        .map(|j| fd_column(p, x, &base, j, fd_step))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(p, cols))
}

/// Central-difference derivatives with columns evaluated in parallel.
#[cfg(feature = "parallel")]
pub fn fd_derivatives_parallel<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<Derivatives, String> {
    use rayon::prelude::*;
    let base = p.evaluate(x)?;
    let cols = (0..p.num_vars())
        .into_par_iter()
        .map(|j| fd_column(p, x, &base, j, fd_step))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(p, cols))
}

/// Default derivative path: parallel columns when the `parallel` feature is
/// enabled, sequential otherwise.
pub fn fd_derivatives<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<Derivatives, String> {
    #[cfg(feature = "parallel")]
    {
        fd_derivatives_parallel(p, x, fd_step)
    }
    #[cfg(not(feature = "parallel"))]
    {
        fd_derivatives_serial(p, x, fd_step)
    }
}
