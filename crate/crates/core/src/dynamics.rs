//! Game model representation: right-hand side evaluation, forward-mode
//! Jacobians, the interval nonlinearity bounder, and the problem data
//! (control sets, both players' state constraints, horizon, terminal cost
//! direction).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ellipsoid::{affine_image, contains, BoxSet, Ellipsoid, EllipsoidError};
use crate::expr::{self, Degree, Dual, Env, EvalError, Expr, ParseError, Span};
use crate::interval::Interval;
use crate::sym;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error("state variable x{} referenced but model has {dim} components", index + 1)]
    StateIndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model is not differentiable at the evaluation point ({span})")]
    NonDifferentiable { span: Span },
    #[error("remainder bound diverges over the box hull")]
    UnboundedRemainder,
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("follower control box vertex {0} lies outside the enclosing ellipsoid")]
    U2NotEnclosed(usize),
    #[error("follower state constraint is not positive definite at t = {0}")]
    ConstraintNotPositiveDefinite(f64),
    #[error("constraint rotation expressions may only reference t")]
    RotationUsesStateVars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Nonlinear,
}

/// Parsed game dynamics `xdot = f(x, u1, u2, t)`.
#[derive(Debug, Clone)]
pub struct GameModel {
    components: Vec<Expr>,
    source: String,
    n_x: usize,
    n_u1: usize,
    n_u2: usize,
    kind: ModelKind,
}

impl GameModel {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u1(&self) -> usize {
        self.n_u1
    }

    pub fn n_u2(&self) -> usize {
        self.n_u2
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Widens the inferred input dimensions, for models that do not
    /// reference every input channel.
    pub fn with_input_dims(mut self, n_u1: usize, n_u2: usize) -> Self {
        self.n_u1 = self.n_u1.max(n_u1);
        self.n_u2 = self.n_u2.max(n_u2);
        self
    }
}

/// Parses a `;`-separated vector of component expressions into a model.
///
/// The state dimension is the number of components; input dimensions are
/// the largest referenced channel indices. Referencing a state beyond the
/// component count is rejected.
pub fn parse_model(text: &str) -> Result<GameModel, ModelError> {
    let components = expr::parse_components(text)?;
    let n_x = components.len();
    let mut acc = (0, 0, 0);
    for c in &components {
        c.max_indices(&mut acc);
    }
    if acc.0 > n_x {
        return Err(ModelError::StateIndexOutOfRange {
            index: acc.0 - 1,
            dim: n_x,
        });
    }
    let kind = if components.iter().all(|c| c.degree() <= Degree::Linear) {
        ModelKind::Linear
    } else {
        ModelKind::Nonlinear
    };
    Ok(GameModel {
        components,
        source: text.to_string(),
        n_x,
        n_u1: acc.1,
        n_u2: acc.2,
        kind,
    })
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Evaluates the right-hand side `f(x, u1, u2, t)`.
pub fn eval_rhs(
    model: &GameModel,
    x: &DVector<f64>,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, ModelError> {
    check_len("state", x.len(), model.n_x)?;
    check_len("leader input", u1.len(), model.n_u1)?;
    check_len("follower input", u2.len(), model.n_u2)?;
    let env = Env {
        x: x.as_slice(),
        u1: u1.as_slice(),
        u2: u2.as_slice(),
        t,
    };
    let mut out = DVector::zeros(model.n_x);
    for (i, c) in model.components.iter().enumerate() {
        out[i] = c.eval(&env)?;
    }
    Ok(out)
}

/// Linearization matrices `A = df/dx` and `B = df/du2` at `(q, u1, v, t)`,
/// by forward-mode differentiation of the expression tree.
pub fn jacobians(
    model: &GameModel,
    q: &DVector<f64>,
    u1: &DVector<f64>,
    v: &DVector<f64>,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    check_len("state", q.len(), model.n_x)?;
    check_len("leader input", u1.len(), model.n_u1)?;
    check_len("follower input", v.len(), model.n_u2)?;
    let consts = |vals: &DVector<f64>| -> Vec<Dual<f64>> {
        vals.iter().map(|&v| Dual::constant(v)).collect()
    };
    let mut a = DMatrix::zeros(model.n_x, model.n_x);
    let mut b = DMatrix::zeros(model.n_x, model.n_u2);
    let u1d = consts(u1);
    for seed in 0..model.n_x + model.n_u2 {
        let mut xd = consts(q);
        let mut u2d = consts(v);
        if seed < model.n_x {
            xd[seed] = Dual::seeded(q[seed]);
        } else {
            u2d[seed - model.n_x] = Dual::seeded(v[seed - model.n_x]);
        }
        let env = Env {
            x: &xd,
            u1: &u1d,
            u2: &u2d,
            t: Dual::constant(t),
        };
        for (i, c) in model.components.iter().enumerate() {
            let dual = c.eval(&env).map_err(|e| ModelError::NonDifferentiable {
                span: e.span,
            })?;
            if seed < model.n_x {
                a[(i, seed)] = dual.d;
            } else {
                b[(i, seed - model.n_x)] = dual.d;
            }
        }
    }
    Ok((a, b))
}

/// Nonlinearity bound: a PSD matrix `Omega` such that the linearization
/// residual `f(x,u1,u2) - f(q,u1,v) - A (x-q) - B (u2-v)` lies in
/// `E(0, Omega)` for all `x` in `E(q,Q)` and all `u2` in the enclosing
/// ellipsoid of the follower's control set.
///
/// The bound is a mean-value form: interval Jacobians of `f` over the box
/// hulls of `E(q,Q)` and `E(v,V)`, minus the supplied `A` and `B`, paired
/// with the box half-widths. The result is `rho^2 I` with `rho` the 2-norm
/// of the componentwise bounds, which is exactly zero when `A`, `B` match
/// constant Jacobians (in particular for affine models).
#[allow(clippy::too_many_arguments)]
pub fn omega_bound(
    model: &GameModel,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DVector<f64>,
    u1: &DVector<f64>,
    u2_ellipsoid: &Ellipsoid,
    shape: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>, ModelError> {
    check_len("state", q.len(), model.n_x)?;
    check_len("follower input", u2_ellipsoid.dim(), model.n_u2)?;
    let n_x = model.n_x;
    let n_u2 = model.n_u2;
    let rx: Vec<f64> = (0..n_x).map(|i| shape[(i, i)].max(0.0).sqrt()).collect();
    let v = u2_ellipsoid.center();
    let vshape = u2_ellipsoid.shape();
    let ru: Vec<f64> = (0..n_u2).map(|i| vshape[(i, i)].max(0.0).sqrt()).collect();

    // Interval Jacobian columns over the box hulls by dual-over-interval
    // evaluation, seeding one variable per pass.
    let mk = |center: &DVector<f64>, radii: &[f64], seed: Option<usize>| -> Vec<Dual<Interval>> {
        (0..center.len())
            .map(|i| {
                let iv = Interval::new(center[i] - radii[i], center[i] + radii[i]);
                if seed == Some(i) {
                    Dual::seeded(iv)
                } else {
                    Dual::constant(iv)
                }
            })
            .collect()
    };
    let u1_iv: Vec<Dual<Interval>> = u1
        .iter()
        .map(|&c| Dual::constant(Interval::point(c)))
        .collect();
    let t_iv = Dual::constant(Interval::point(t));

    let mut bounds = vec![0.0f64; n_x];
    for seed in 0..n_x + n_u2 {
        let (x_iv, u2_iv) = if seed < n_x {
            (mk(q, &rx, Some(seed)), mk(v, &ru, None))
        } else {
            (mk(q, &rx, None), mk(v, &ru, Some(seed - n_x)))
        };
        let env = Env {
            x: &x_iv,
            u1: &u1_iv,
            u2: &u2_iv,
            t: t_iv.clone(),
        };
        for (i, c) in model.components.iter().enumerate() {
            let dual = c.eval(&env).map_err(|_| ModelError::UnboundedRemainder)?;
            let lin = if seed < n_x {
                a[(i, seed)]
            } else {
                b[(i, seed - n_x)]
            };
            let dev = dual.d.sub(&Interval::point(lin)).mag();
            let radius = if seed < n_x { rx[seed] } else { ru[seed - n_x] };
            bounds[i] += dev * radius;
        }
    }
    let rho_sq: f64 = bounds.iter().map(|b| b * b).sum();
    if !rho_sq.is_finite() {
        return Err(ModelError::UnboundedRemainder);
    }
    Ok(DMatrix::identity(n_x, n_x) * rho_sq)
}

/// Time-varying follower state constraint: a base ellipsoid `E(s, S)` with
/// an optional linear map `R(t)` given as expressions over `t`, evaluated
/// as `E(R(t) s, R(t) S R(t)')`.
#[derive(Debug, Clone)]
pub struct X2Spec {
    pub base: Ellipsoid,
    /// Row-major `n_x * n_x` expressions over `t`; identity when absent.
    pub rotation: Option<Vec<Expr>>,
}

impl X2Spec {
    pub fn time_invariant(base: Ellipsoid) -> Self {
        Self {
            base,
            rotation: None,
        }
    }

    pub fn with_rotation(base: Ellipsoid, rotation: Vec<Expr>) -> Result<Self, ModelError> {
        let n = base.dim();
        check_len("rotation entries", rotation.len(), n * n)?;
        let mut acc = (0, 0, 0);
        for e in &rotation {
            e.max_indices(&mut acc);
        }
        if acc != (0, 0, 0) {
            return Err(ModelError::RotationUsesStateVars);
        }
        Ok(Self {
            base,
            rotation: Some(rotation),
        })
    }

    pub fn rotation_at(&self, t: f64) -> Result<Option<DMatrix<f64>>, ModelError> {
        let Some(exprs) = &self.rotation else {
            return Ok(None);
        };
        let n = self.base.dim();
        let env = Env {
            x: &[],
            u1: &[],
            u2: &[],
            t,
        };
        let mut m = DMatrix::zeros(n, n);
        for (k, e) in exprs.iter().enumerate() {
            m[(k / n, k % n)] = e.eval(&env)?;
        }
        Ok(Some(m))
    }
}

/// Full problem data of the constrained two-player game.
#[derive(Debug, Clone)]
pub struct GameProblem {
    pub model: GameModel,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub u1_box: BoxSet,
    pub u2_box: BoxSet,
    /// Ellipsoid `(v, V)` enclosing the follower's control box.
    pub u2_ellipsoid: Ellipsoid,
    pub x1_box: BoxSet,
    pub x2: X2Spec,
    /// Linear terminal cost direction: `m(x) = c' x`.
    pub mayer_direction: DVector<f64>,
}

impl GameProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: GameModel,
        horizon: f64,
        x0: DVector<f64>,
        u1_box: BoxSet,
        u2_box: BoxSet,
        u2_ellipsoid: Option<Ellipsoid>,
        x1_box: BoxSet,
        x2: X2Spec,
        mayer_direction: DVector<f64>,
    ) -> Result<Self, ModelError> {
        if !(horizon > 0.0) {
            return Err(ModelError::InvalidHorizon(horizon));
        }
        check_len("x0", x0.len(), model.n_x())?;
        check_len("u1 box", u1_box.dim(), model.n_u1())?;
        check_len("u2 box", u2_box.dim(), model.n_u2())?;
        check_len("x1 box", x1_box.dim(), model.n_x())?;
        check_len("x2 constraint", x2.base.dim(), model.n_x())?;
        check_len("mayer direction", mayer_direction.len(), model.n_x())?;
        let u2_ellipsoid = u2_ellipsoid.unwrap_or_else(|| u2_box.enclosing_ball());
        check_len("u2 ellipsoid", u2_ellipsoid.dim(), model.n_u2())?;
        for (k, vertex) in u2_box.vertices().iter().enumerate() {
            if !contains(&u2_ellipsoid, vertex, 1e-9)? {
                return Err(ModelError::U2NotEnclosed(k));
            }
        }
        let problem = Self {
            model,
            horizon,
            x0,
            u1_box,
            u2_box,
            u2_ellipsoid,
            x1_box,
            x2,
            mayer_direction,
        };
        // the constraint must stay evaluable and positive definite on [0, T]
        for k in 0..=50 {
            let t = horizon * k as f64 / 50.0;
            problem.state_constraint_at(t)?;
        }
        Ok(problem)
    }

    /// Follower state constraint ellipsoid at time `t`.
    pub fn state_constraint_at(&self, t: f64) -> Result<Ellipsoid, ModelError> {
        let e = match self.x2.rotation_at(t)? {
            None => self.x2.base.clone(),
            Some(r) => affine_image(&self.x2.base, &r, &DVector::zeros(r.nrows()))?,
        };
        if sym::min_eigenvalue(e.shape()) <= 0.0 {
            return Err(ModelError::ConstraintNotPositiveDefinite(t));
        }
        Ok(e)
    }

    /// The benchmark game: planar linear dynamics, a rotating ellipsoidal
    /// follower constraint, box control sets and the terminal cost
    /// `m(x) = x1 - x2`.
    pub fn benchmark() -> Self {
        let model = parse_model("x1 + 0.5*x2 + u1_1 ; 1.5*x1 + x2 + u2_1").unwrap();
        let s = DVector::from_vec(vec![0.1, -2.84]);
        let shape = DMatrix::from_row_slice(2, 2, &[32.08, 3.2, 3.2, 32.08]);
        let base = Ellipsoid::new(s, shape).unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let rot: Vec<Expr> = [
            format!("(21/20)*cos({half_pi}*t)"),
            format!("-(19/20)*sin({half_pi}*t)"),
            format!("(21/20)*sin({half_pi}*t)"),
            format!("(19/20)*cos({half_pi}*t)"),
        ]
        .iter()
        .map(|s| expr::parse_expr(s).unwrap())
        .collect();
        let x2 = X2Spec::with_rotation(base, rot).unwrap();
        GameProblem::new(
            model,
            1.5,
            DVector::zeros(2),
            BoxSet::new(DVector::from_vec(vec![-1.4]), DVector::from_vec(vec![0.0])).unwrap(),
            BoxSet::new(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])).unwrap(),
            None,
            BoxSet::new(
                DVector::from_vec(vec![-6.0, -6.0]),
                DVector::from_vec(vec![6.0, 6.0]),
            )
            .unwrap(),
            x2,
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap()
    }

    /// Clone of the problem with the follower state constraint replaced by
    /// a huge ball, degenerating the game to robust optimal control.
    pub fn without_follower_constraint(&self, radius: f64) -> Self {
        let mut p = self.clone();
        p.x2 = X2Spec::time_invariant(Ellipsoid::ball(DVector::zeros(self.model.n_x()), radius));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn benchmark_rhs_values() {
        let p = GameProblem::benchmark();
        let zero = eval_rhs(&p.model, &dvector![0.0, 0.0], &dvector![0.0], &dvector![0.0], 0.0)
            .unwrap();
        assert!(zero.norm() < 1e-15);
        let ones = eval_rhs(&p.model, &dvector![1.0, 1.0], &dvector![0.0], &dvector![0.0], 0.0)
            .unwrap();
        assert!((ones - dvector![1.5, 2.5]).norm() < 1e-15);
        let inputs =
            eval_rhs(&p.model, &dvector![0.0, 0.0], &dvector![-1.4], &dvector![2.0], 0.0).unwrap();
        assert!((inputs - dvector![-1.4, 2.0]).norm() < 1e-15);
    }

    #[test]
    fn benchmark_jacobians() {
        let p = GameProblem::benchmark();
        let (a, b) = jacobians(&p.model, &dvector![0.3, -0.7], &dvector![-1.0], &dvector![1.0], 0.4)
            .unwrap();
        let a_ref = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.5, 1.0]);
        assert!((a - a_ref).abs().max() < 1e-14);
        assert!((b - DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).abs().max() < 1e-14);
    }

    #[test]
    fn quadratic_input_jacobian_vanishes_at_origin() {
        let m = parse_model("u2_1^2").unwrap();
        let (_, b) = jacobians(&m, &dvector![0.0], &DVector::zeros(0), &dvector![0.0], 0.0)
            .unwrap();
        assert!(b.abs().max() < 1e-14);
    }

    #[test]
    fn omega_zero_for_linear_model() {
        let p = GameProblem::benchmark();
        let (a, b) = jacobians(&p.model, &dvector![0.0, 0.0], &dvector![0.0], &dvector![1.0], 0.0)
            .unwrap();
        let q = DMatrix::identity(2, 2) * 3.0;
        let omega = omega_bound(
            &p.model,
            &a,
            &b,
            &dvector![0.2, -0.4],
            &dvector![0.0],
            &p.u2_ellipsoid,
            &q,
            0.0,
        )
        .unwrap();
        assert_eq!(omega.abs().max(), 0.0);
    }

    #[test]
    fn omega_quadratic_scalar() {
        // xdot = x^2 around q = 0 with A = 0: residual x^2 <= r^2 on |x| <= r,
        // so Omega must be at least r^4.
        let m = parse_model("x1^2").unwrap().with_input_dims(0, 1);
        let r: f64 = 0.8;
        let q = DMatrix::from_element(1, 1, r * r);
        let u2e = Ellipsoid::point(dvector![0.0]);
        let omega = omega_bound(
            &m,
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(1, 1),
            &dvector![0.0],
            &DVector::zeros(0),
            &u2e,
            &q,
            0.0,
        )
        .unwrap();
        assert!(omega[(0, 0)] >= r.powi(4) - 1e-12);
        // interval Jacobian of x^2 over [-r, r] is [-2r, 2r]: bound 2r * r
        assert!(omega[(0, 0)] <= (2.0 * r * r) * (2.0 * r * r) + 1e-12);
    }

    #[test]
    fn omega_zero_for_point_sets_affine_inputs() {
        let m = parse_model("sin(x1) + u2_1").unwrap();
        let q0 = dvector![0.4];
        let (a, b) = jacobians(&m, &q0, &DVector::zeros(0), &dvector![0.3], 0.0).unwrap();
        let omega = omega_bound(
            &m,
            &a,
            &b,
            &q0,
            &DVector::zeros(0),
            &Ellipsoid::point(dvector![0.3]),
            &DMatrix::zeros(1, 1),
            0.0,
        )
        .unwrap();
        assert_eq!(omega.abs().max(), 0.0);
    }

    #[test]
    fn state_constraint_rotation() {
        let p = GameProblem::benchmark();
        let e0 = p.state_constraint_at(0.0).unwrap();
        let expect = dvector![1.05 * 0.1, 0.95 * -2.84];
        assert!((e0.center() - expect).norm() < 1e-12);
        // shape stays symmetric positive definite across the horizon
        for k in 0..=10 {
            let t = 1.5 * k as f64 / 10.0;
            let e = p.state_constraint_at(t).unwrap();
            assert!(sym::min_eigenvalue(e.shape()) > 0.0);
        }
    }

    #[test]
    fn state_constraint_identity_without_rotation() {
        let base = Ellipsoid::ball(dvector![1.0, 2.0], 3.0);
        let model = parse_model("x2 ; u2_1 + u1_1").unwrap();
        let p = GameProblem::new(
            model,
            1.0,
            dvector![1.0, 2.0],
            BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap(),
            BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap(),
            None,
            BoxSet::new(dvector![-9.0, -9.0], dvector![9.0, 9.0]).unwrap(),
            X2Spec::time_invariant(base.clone()),
            dvector![1.0, 0.0],
        )
        .unwrap();
        let e = p.state_constraint_at(0.7).unwrap();
        assert_eq!(e.center(), base.center());
    }

    #[test]
    fn u2_enclosure_is_validated() {
        let model = parse_model("u2_1").unwrap();
        let bad = Ellipsoid::ball(dvector![0.0], 0.2);
        let err = GameProblem::new(
            model,
            1.0,
            dvector![0.0],
            BoxSet::new(DVector::zeros(0), DVector::zeros(0)).unwrap(),
            BoxSet::new(dvector![-1.0], dvector![1.0]).unwrap(),
            Some(bad),
            BoxSet::new(dvector![-9.0], dvector![9.0]).unwrap(),
            X2Spec::time_invariant(Ellipsoid::ball(dvector![0.0], 5.0)),
            dvector![1.0],
        );
        assert!(matches!(err, Err(ModelError::U2NotEnclosed(_))));
    }

    #[test]
    fn default_u2_ellipsoid_is_enclosing_ball() {
        let p = GameProblem::benchmark();
        assert!((p.u2_ellipsoid.center() - dvector![1.0]).norm() < 1e-15);
        assert!((p.u2_ellipsoid.shape()[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
