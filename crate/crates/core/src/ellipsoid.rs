//! Ellipsoid data type and the set-calculus primitives the tube solver is
//! built on: support functions, affine images, Minkowski-sum outer bounds,
//! intersection fusion and exact intersection support values.
//!
//! An ellipsoid is stored as a center `q` and a symmetric positive
//! semidefinite shape matrix `Q`, describing the set `{ q + Q^(1/2) u :
//! |u| <= 1 }`. Degenerate (rank-deficient) shapes are permitted; membership
//! tests use the pseudo-inverse and operations that structurally require an
//! inverse regularize by a small multiple of the trace scale.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::sym;

#[derive(Debug, Error)]
pub enum EllipsoidError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("shape matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("lambda must lie strictly inside (0,1), got {0}")]
    LambdaOutOfRange(f64),
    #[error("fusion parameter must lie in [0,1], got {0}")]
    FusionParamOutOfRange(f64),
    #[error("sigma must be positive, got {0}")]
    SigmaNonPositive(f64),
    #[error("shape matrix is singular")]
    SingularShape,
    #[error("ellipsoid intersection is empty or degenerate")]
    EmptyIntersection,
    #[error("box bounds are inverted in component {0}")]
    InvertedBox(usize),
}

/// Ellipsoid `E(q, Q)` with center `q` and symmetric PSD shape matrix `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    /// Builds an ellipsoid, validating symmetry, positive semidefiniteness
    /// and dimension consistency of the shape matrix.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self, EllipsoidError> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(EllipsoidError::DimensionMismatch {
                expected: n,
                got: shape.nrows(),
            });
        }
        let max_abs = shape.abs().max();
        let max_asym = (&shape - shape.transpose()).abs().max();
        if max_asym > 1e-12 * (1.0 + max_abs) {
            return Err(EllipsoidError::NotSymmetric(max_asym));
        }
        let min_eig = sym::min_eigenvalue(&shape);
        if min_eig < -1e-9 * (1.0 + shape.trace().abs()) {
            return Err(EllipsoidError::NotPsd(min_eig));
        }
        Ok(Self { center, shape })
    }

    /// Builds without validating; for internal call sites that construct
    /// shapes known to be symmetric PSD.
    pub(crate) fn new_unchecked(center: DVector<f64>, shape: DMatrix<f64>) -> Self {
        Self { center, shape }
    }

    /// Ball of the given radius.
    pub fn ball(center: DVector<f64>, radius: f64) -> Self {
        let n = center.len();
        let shape = DMatrix::identity(n, n) * radius * radius;
        Self { center, shape }
    }

    /// Degenerate point ellipsoid `E(x, 0)`.
    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            shape: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Symmetric PSD square root of the shape matrix.
    pub fn sqrt_shape(&self) -> DMatrix<f64> {
        sym::sqrt_psd(&self.shape)
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), EllipsoidError> {
        if v.len() != self.dim() {
            return Err(EllipsoidError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned box `[lower, upper]` used for control bounds and the
/// leader's state constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, EllipsoidError> {
        if lower.len() != upper.len() {
            return Err(EllipsoidError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                return Err(EllipsoidError::InvertedBox(i));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn midpoint(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn half_widths(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }

    /// All `2^n` vertices of the box.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_fn(n, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect()
    }

    /// Smallest ball containing the box: centered at the midpoint with
    /// radius equal to the Euclidean norm of the half widths.
    pub fn enclosing_ball(&self) -> Ellipsoid {
        Ellipsoid::ball(self.midpoint(), self.half_widths().norm())
    }
}

/// Support function value `V[E(q,Q)](c) = c'q + sqrt(c'Qc)`.
pub fn support_value(e: &Ellipsoid, c: &DVector<f64>) -> Result<f64, EllipsoidError> {
    e.check_dim(c)?;
    let quad = (c.transpose() * &e.shape * c)[(0, 0)];
    let scale = 1.0 + e.shape.trace().abs() * c.norm_squared();
    if quad < -1e-9 * scale {
        return Err(EllipsoidError::NotPsd(quad));
    }
    Ok(c.dot(&e.center) + quad.max(0.0).sqrt())
}

/// Membership test robust to rank-deficient shapes.
///
/// `x` is inside when the Mahalanobis distance computed with the
/// pseudo-inverse is at most `1 + tol` and the component of `x - q` outside
/// the range of `Q` has norm at most `tol`.
pub fn contains(e: &Ellipsoid, x: &DVector<f64>, tol: f64) -> Result<bool, EllipsoidError> {
    Ok(containment_margin(e, x)? >= -tol)
}

/// Signed containment margin: non-negative inside, negative outside.
///
/// Inside the range of `Q` the margin is `1 - (x-q)' Q^+ (x-q)`; any
/// component outside the range contributes its (negated) norm, so that
/// `margin >= -tol` is equivalent to the two-part test of [`contains`].
pub fn containment_margin(e: &Ellipsoid, x: &DVector<f64>) -> Result<f64, EllipsoidError> {
    e.check_dim(x)?;
    let d = x - &e.center;
    let eig = e.shape.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let rank_tol = 1e-12 * (1.0 + max_eig);
    let z = eig.eigenvectors.transpose() * &d;
    let mut maha = 0.0;
    let mut null_sq = 0.0;
    for i in 0..z.len() {
        if eig.eigenvalues[i] > rank_tol {
            maha += z[i] * z[i] / eig.eigenvalues[i];
        } else {
            null_sq += z[i] * z[i];
        }
    }
    let range_margin = 1.0 - maha;
    if null_sq > 0.0 {
        Ok(range_margin.min(0.0) - null_sq.sqrt())
    } else {
        Ok(range_margin)
    }
}

/// Image of an ellipsoid under the affine map `x -> m x + b`:
/// `E(m q + b, m Q m')`.
pub fn affine_image(
    e: &Ellipsoid,
    m: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<Ellipsoid, EllipsoidError> {
    if m.ncols() != e.dim() {
        return Err(EllipsoidError::DimensionMismatch {
            expected: e.dim(),
            got: m.ncols(),
        });
    }
    if b.len() != m.nrows() {
        return Err(EllipsoidError::DimensionMismatch {
            expected: m.nrows(),
            got: b.len(),
        });
    }
    let center = m * &e.center + b;
    let shape = m * &e.shape * m.transpose();
    // exact for invertible m; outer-exact otherwise
    Ok(Ellipsoid::new_unchecked(center, symmetrize(&shape)))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Outer ellipsoidal bound of the Minkowski sum:
/// `E(q1,Q1) + E(q2,Q2) <= E(q1+q2, Q1/lambda + Q2/(1-lambda))` for
/// `lambda` in `(0,1)`.
pub fn minkowski_sum_outer(
    e1: &Ellipsoid,
    e2: &Ellipsoid,
    lambda: f64,
) -> Result<Ellipsoid, EllipsoidError> {
    e1.check_dim(e2.center())?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(EllipsoidError::LambdaOutOfRange(lambda));
    }
    let center = &e1.center + &e2.center;
    let shape = &e1.shape / lambda + &e2.shape / (1.0 - lambda);
    Ok(Ellipsoid::new_unchecked(center, shape))
}

/// Regularized inverse for shapes that must be inverted structurally.
fn reg_inverse(q: &DMatrix<f64>) -> Result<DMatrix<f64>, EllipsoidError> {
    let n = q.nrows();
    let eps = 1e-10 * (1.0 + q.trace().abs());
    let reg = q + DMatrix::identity(n, n) * eps;
    reg.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| reg.try_inverse())
        .ok_or(EllipsoidError::SingularShape)
}

/// Outer ellipsoidal bound of the intersection `E(q1,Q1) ∩ E(q2,Q2)`.
///
/// The bound is drawn from the one-parameter family with weights
/// `kappa_1 = p a`, `kappa_2 = (1-p) a`, where `a > 0` is chosen so that the
/// fusion normalization
/// `1 = k1 (1 - q1' Q1^-1 q1) + k2 (1 - q2' Q2^-1 q2) + q~' Q~^-1 q~`
/// holds; the fused center `q~` is independent of `a`, which makes the
/// normalization linear in `a`. A non-positive root signals an empty or
/// degenerate intersection. `p = 0` and `p = 1` return the second and first
/// input unchanged.
pub fn fuse_intersection_outer(
    e1: &Ellipsoid,
    e2: &Ellipsoid,
    fusion_param: f64,
) -> Result<Ellipsoid, EllipsoidError> {
    e1.check_dim(e2.center())?;
    if !(0.0..=1.0).contains(&fusion_param) {
        return Err(EllipsoidError::FusionParamOutOfRange(fusion_param));
    }
    if fusion_param == 0.0 {
        return Ok(e2.clone());
    }
    if fusion_param == 1.0 {
        return Ok(e1.clone());
    }
    let p1 = reg_inverse(&e1.shape)?;
    let p2 = reg_inverse(&e2.shape)?;
    let w1 = fusion_param;
    let w2 = 1.0 - fusion_param;
    let x_hat = &p1 * w1 + &p2 * w2;
    let x_hat_inv = reg_inverse(&x_hat)?;
    let b = (&p1 * &e1.center) * w1 + (&p2 * &e2.center) * w2;
    let q_tilde = &x_hat_inv * &b;
    let m1 = (e1.center.transpose() * &p1 * &e1.center)[(0, 0)];
    let m2 = (e2.center.transpose() * &p2 * &e2.center)[(0, 0)];
    let delta =
        w1 * (1.0 - m1) + w2 * (1.0 - m2) + (q_tilde.transpose() * &x_hat * &q_tilde)[(0, 0)];
    if delta <= 0.0 {
        return Err(EllipsoidError::EmptyIntersection);
    }
    let shape = symmetrize(&(x_hat_inv * delta));
    Ok(Ellipsoid::new_unchecked(q_tilde, shape))
}

/// Tightest fusion over the one-parameter family, found by golden-section
/// search on the trace of the fused shape.
pub fn fuse_intersection_auto(
    e1: &Ellipsoid,
    e2: &Ellipsoid,
) -> Result<Ellipsoid, EllipsoidError> {
    let trace_of = |p: f64| -> f64 {
        fuse_intersection_outer(e1, e2, p)
            .map(|e| e.shape.trace())
            .unwrap_or(f64::INFINITY)
    };
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (trace_of(c), trace_of(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = trace_of(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = trace_of(d);
        }
    }
    let best = 0.5 * (a + b);
    fuse_intersection_outer(e1, e2, best)
}

/// Level `v = min_x max(h1(x), h2(x))` of the two Mahalanobis forms.
///
/// The intersection is non-empty iff `v <= 1` and has non-empty interior iff
/// `v < 1`. Both shapes must be positive definite. The minimizer is found on
/// the path `x(t) = ((1-t)P1 + tP2)^-1 ((1-t)P1q1 + tP2q2)` by bisection on
/// `h1(x(t)) - h2(x(t))`.
pub fn intersection_minmax_level(
    e1: &Ellipsoid,
    e2: &Ellipsoid,
) -> Result<f64, EllipsoidError> {
    e1.check_dim(e2.center())?;
    let p1 = reg_inverse(&e1.shape)?;
    let p2 = reg_inverse(&e2.shape)?;
    let h = |p: &DMatrix<f64>, q: &DVector<f64>, x: &DVector<f64>| -> f64 {
        let d = x - q;
        (d.transpose() * p * &d)[(0, 0)]
    };
    let h2_at_q1 = h(&p2, &e2.center, &e1.center);
    let h1_at_q2 = h(&p1, &e1.center, &e2.center);
    if h2_at_q1 <= 1.0 || h1_at_q2 <= 1.0 {
        return Ok(h2_at_q1.min(h1_at_q2).min(1.0).max(0.0));
    }
    let x_of = |t: f64| -> Result<DVector<f64>, EllipsoidError> {
        let m = &p1 * (1.0 - t) + &p2 * t;
        let rhs = (&p1 * &e1.center) * (1.0 - t) + (&p2 * &e2.center) * t;
        m.lu().solve(&rhs).ok_or(EllipsoidError::SingularShape)
    };
    let g = |t: f64| -> Result<f64, EllipsoidError> {
        let x = x_of(t)?;
        Ok(h(&p1, &e1.center, &x) - h(&p2, &e2.center, &x))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = x_of(0.5 * (lo + hi))?;
    Ok(h(&p1, &e1.center, &x).max(h(&p2, &e2.center, &x)))
}

/// Exact support value of the intersection of two ellipsoids.
///
/// Solves `max c'x` subject to membership in both ellipsoids through its
/// two-multiplier dual, which is smooth and convex; the nested cases (the
/// maximizer of one ellipsoid already lies in the other) are resolved first
/// in closed form. Divergence of the dual iteration signals an empty
/// intersection.
pub fn intersection_support_exact(
    e1: &Ellipsoid,
    e2: &Ellipsoid,
    c: &DVector<f64>,
) -> Result<f64, EllipsoidError> {
    e1.check_dim(e2.center())?;
    e1.check_dim(c)?;
    let c_norm = c.norm();
    if c_norm == 0.0 {
        if intersection_minmax_level(e1, e2)? > 1.0 + 1e-9 {
            return Err(EllipsoidError::EmptyIntersection);
        }
        return Ok(0.0);
    }

    // Nested / single-active cases: argmax of one ellipsoid inside the other.
    for (ea, eb) in [(e1, e2), (e2, e1)] {
        let quad = (c.transpose() * &ea.shape * c)[(0, 0)].max(0.0);
        let denom = quad.sqrt();
        let x_star = if denom > 0.0 {
            &ea.center + (&ea.shape * c) / denom
        } else {
            ea.center.clone()
        };
        if contains(eb, &x_star, 1e-12)? {
            return support_value(ea, c);
        }
    }

    // Both constraints active: minimize the dual
    //   g(l) = c'x* + sum_i l_i (1 - h_i(x*)) / 2,
    //   x* = (l1 P1 + l2 P2)^-1 (c + l1 P1 q1 + l2 P2 q2)
    // by a damped Newton method on l > 0.
    let p1 = reg_inverse(&e1.shape)?;
    let p2 = reg_inverse(&e2.shape)?;
    let q1 = &e1.center;
    let q2 = &e2.center;
    let init = |e: &Ellipsoid| -> f64 {
        let quad = (c.transpose() * &e.shape * c)[(0, 0)].max(0.0);
        quad.sqrt().max(1e-8 * c_norm)
    };
    let mut l = [init(e1), init(e2)];
    let scale0 = l[0].max(l[1]);

    let eval = |l: &[f64; 2]| -> Result<(f64, [f64; 2], DMatrix<f64>, DVector<f64>), EllipsoidError> {
        let x_mat = &p1 * l[0] + &p2 * l[1];
        let rhs = c + (&p1 * q1) * l[0] + (&p2 * q2) * l[1];
        let x_star = x_mat
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| x_mat.clone().lu().solve(&rhs))
            .ok_or(EllipsoidError::SingularShape)?;
        let d1 = &x_star - q1;
        let d2 = &x_star - q2;
        let h1 = (d1.transpose() * &p1 * &d1)[(0, 0)];
        let h2 = (d2.transpose() * &p2 * &d2)[(0, 0)];
        let val = c.dot(&x_star) + 0.5 * l[0] * (1.0 - h1) + 0.5 * l[1] * (1.0 - h2);
        Ok((val, [0.5 * (1.0 - h1), 0.5 * (1.0 - h2)], x_mat, x_star))
    };

    let (mut val, mut grad, mut x_mat, mut x_star) = eval(&l)?;
    for iter in 0..200 {
        let gnorm = grad[0].abs().max(grad[1].abs());
        if gnorm <= 1e-12 * (1.0 + val.abs()) {
            break;
        }
        if l[0].max(l[1]) > 1e12 * scale0.max(1.0) {
            return Err(EllipsoidError::EmptyIntersection);
        }
        // Dual Hessian H_ij = g_i' X^-1 g_j with g_i = P_i (x* - q_i).
        let g1 = &p1 * (&x_star - q1);
        let g2 = &p2 * (&x_star - q2);
        let lu = x_mat.clone().lu();
        let s1 = lu.solve(&g1).ok_or(EllipsoidError::SingularShape)?;
        let s2 = lu.solve(&g2).ok_or(EllipsoidError::SingularShape)?;
        let h11 = g1.dot(&s1);
        let h12 = g1.dot(&s2);
        let h22 = g2.dot(&s2);
        let reg = 1e-14 * (h11 + h22).abs() + 1e-300;
        let det = (h11 + reg) * (h22 + reg) - h12 * h12;
        let (dl0, dl1) = if det.abs() > 0.0 {
            (
                -((h22 + reg) * grad[0] - h12 * grad[1]) / det,
                -(-h12 * grad[0] + (h11 + reg) * grad[1]) / det,
            )
        } else {
            (-grad[0], -grad[1])
        };
        // Keep multipliers strictly positive, then backtrack on the value.
        let mut alpha = 1.0f64;
        for (li, dli) in l.iter().zip([dl0, dl1]) {
            if dli < 0.0 {
                alpha = alpha.min(0.95 * li / -dli);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = [l[0] + alpha * dl0, l[1] + alpha * dl1];
            if trial[0] > 0.0 && trial[1] > 0.0 {
                if let Ok((tv, tg, tm, tx)) = eval(&trial) {
                    if tv <= val + 1e-14 * (1.0 + val.abs()) {
                        l = trial;
                        val = tv;
                        grad = tg;
                        x_mat = tm;
                        x_star = tx;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if iter == 199 {
            return Err(EllipsoidError::EmptyIntersection);
        }
    }
    // Certify with the final primal feasibility check.
    let margin1 = containment_margin(e1, &x_star)?;
    let margin2 = containment_margin(e2, &x_star)?;
    if margin1 < -1e-6 || margin2 < -1e-6 {
        return Err(EllipsoidError::EmptyIntersection);
    }
    Ok(val)
}

/// `Phi_1(Q, A) = A Q + Q A'`.
pub fn phi1(q: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    a * q + q * a.transpose()
}

/// `Phi_2(Q, W, sigma) = sigma Q + W / sigma`, `sigma > 0`.
pub fn phi2(q: &DMatrix<f64>, w: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>, EllipsoidError> {
    if sigma <= 0.0 {
        return Err(EllipsoidError::SigmaNonPositive(sigma));
    }
    Ok(q * sigma + w / sigma)
}

/// `phi_3(q1, q2, Q1, Q2, kappa) = kappa Q1 Q2^-1 (q2 - q1)`.
pub fn phi3_vec(
    q1: &DVector<f64>,
    q2: &DVector<f64>,
    shape1: &DMatrix<f64>,
    shape2: &DMatrix<f64>,
    kappa: f64,
) -> Result<DVector<f64>, EllipsoidError> {
    let p2 = reg_inverse(shape2)?;
    Ok(shape1 * (&p2 * (q2 - q1)) * kappa)
}

/// `Phi_3(q1, q2, Q1, Q2, kappa)
///   = kappa (I - |q1-q2|^2_{Q2^-1} I - Q1 Q2^-1) Q1`.
pub fn phi3_mat(
    q1: &DVector<f64>,
    q2: &DVector<f64>,
    shape1: &DMatrix<f64>,
    shape2: &DMatrix<f64>,
    kappa: f64,
) -> Result<DMatrix<f64>, EllipsoidError> {
    let p2 = reg_inverse(shape2)?;
    let d = q1 - q2;
    let wnorm = (d.transpose() * &p2 * &d)[(0, 0)];
    let n = shape1.nrows();
    let factor = DMatrix::identity(n, n) * (1.0 - wnorm) - shape1 * &p2;
    Ok(symmetrize(&(factor * shape1)) * kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn unit_ball2() -> Ellipsoid {
        Ellipsoid::ball(dvector![0.0, 0.0], 1.0)
    }

    #[test]
    fn support_of_unit_ball() {
        let e = unit_ball2();
        let v = support_value(&e, &dvector![1.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn support_closed_form() {
        let e = Ellipsoid::new(dvector![1.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        let v = support_value(&e, &dvector![1.0, 0.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn support_dimension_mismatch() {
        let e = unit_ball2();
        assert!(matches!(
            support_value(&e, &dvector![1.0]),
            Err(EllipsoidError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn new_rejects_asymmetric_and_indefinite() {
        assert!(matches!(
            Ellipsoid::new(dvector![0.0, 0.0], dmatrix![1.0, 0.5; -0.5, 1.0]),
            Err(EllipsoidError::NotSymmetric(_))
        ));
        assert!(matches!(
            Ellipsoid::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, -1.0]),
            Err(EllipsoidError::NotPsd(_))
        ));
    }

    #[test]
    fn contains_center_and_outside() {
        let e = unit_ball2();
        assert!(contains(&e, &dvector![0.0, 0.0], 0.0).unwrap());
        assert!(!contains(&e, &dvector![1.1, 0.0], 0.0).unwrap());
    }

    #[test]
    fn contains_degenerate_axis() {
        let e = Ellipsoid::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        assert!(!contains(&e, &dvector![0.0, 0.5], 1e-9).unwrap());
        assert!(contains(&e, &dvector![0.7, 0.0], 1e-9).unwrap());
    }

    #[test]
    fn affine_rotation_of_ball_is_ball() {
        let e = unit_ball2();
        let r = dmatrix![0.0, -1.0; 1.0, 0.0];
        let img = affine_image(&e, &r, &dvector![0.0, 0.0]).unwrap();
        assert!((img.shape() - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn affine_collapse_to_point() {
        let e = unit_ball2();
        let img = affine_image(&e, &DMatrix::zeros(2, 2), &dvector![3.0, -1.0]).unwrap();
        assert_eq!(img.center(), &dvector![3.0, -1.0]);
        assert!(img.shape().abs().max() < 1e-14);
    }

    #[test]
    fn minkowski_equal_balls_tight() {
        let e = unit_ball2();
        let s = minkowski_sum_outer(&e, &e, 0.5).unwrap();
        assert!((s.shape() - DMatrix::identity(2, 2) * 4.0).abs().max() < 1e-14);
    }

    #[test]
    fn minkowski_point_translation() {
        let e = unit_ball2();
        let p = Ellipsoid::point(dvector![2.0, 1.0]);
        let s = minkowski_sum_outer(&e, &p, 0.7).unwrap();
        assert_eq!(s.center(), &dvector![2.0, 1.0]);
        // translate of e1 is contained: shape Q1/lambda >= Q1
        assert!(contains(&s, &dvector![2.9, 1.0], 1e-9).unwrap());
        assert!(matches!(
            minkowski_sum_outer(&e, &p, 1.0),
            Err(EllipsoidError::LambdaOutOfRange(_))
        ));
    }

    #[test]
    fn fusion_identical_inputs_collapse() {
        let e = Ellipsoid::new(dvector![0.3, -0.2], dmatrix![2.0, 0.4; 0.4, 1.0]).unwrap();
        // exact up to the deliberate 1e-10 trace-scale regularization of the
        // structural inverses
        let f = fuse_intersection_outer(&e, &e, 0.5).unwrap();
        assert!((f.center() - e.center()).norm() < 1e-9);
        assert!((f.shape() - e.shape()).abs().max() < 1e-8);
    }

    #[test]
    fn fusion_boundary_params_return_inputs() {
        let e1 = Ellipsoid::ball(dvector![-0.5, 0.0], 1.0);
        let e2 = Ellipsoid::ball(dvector![0.5, 0.0], 1.0);
        let f0 = fuse_intersection_outer(&e1, &e2, 0.0).unwrap();
        assert_eq!(f0.center(), e2.center());
        let f1 = fuse_intersection_outer(&e1, &e2, 1.0).unwrap();
        assert_eq!(f1.center(), e1.center());
    }

    #[test]
    fn intersection_support_idempotent() {
        let e = Ellipsoid::new(dvector![0.3, -0.2], dmatrix![2.0, 0.4; 0.4, 1.0]).unwrap();
        let c = dvector![0.6, -1.2];
        let v = intersection_support_exact(&e, &e, &c).unwrap();
        let s = support_value(&e, &c).unwrap();
        assert!((v - s).abs() < 1e-8);
    }

    #[test]
    fn intersection_support_lens() {
        let e1 = Ellipsoid::ball(dvector![-0.5, 0.0], 1.0);
        let e2 = Ellipsoid::ball(dvector![0.5, 0.0], 1.0);
        let v = intersection_support_exact(&e1, &e2, &dvector![1.0, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn intersection_support_nested() {
        let inner = Ellipsoid::ball(dvector![0.1, 0.0], 0.2);
        let outer = unit_ball2();
        let c = dvector![0.3, 0.7];
        let v = intersection_support_exact(&inner, &outer, &c).unwrap();
        assert!((v - support_value(&inner, &c).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn intersection_support_empty_errors() {
        let e1 = Ellipsoid::ball(dvector![-5.0, 0.0], 1.0);
        let e2 = Ellipsoid::ball(dvector![5.0, 0.0], 1.0);
        assert!(matches!(
            intersection_support_exact(&e1, &e2, &dvector![1.0, 0.0]),
            Err(EllipsoidError::EmptyIntersection)
        ));
    }

    #[test]
    fn minmax_level_detects_overlap() {
        let e1 = Ellipsoid::ball(dvector![-0.5, 0.0], 1.0);
        let e2 = Ellipsoid::ball(dvector![0.5, 0.0], 1.0);
        assert!(intersection_minmax_level(&e1, &e2).unwrap() < 1.0);
        let far = Ellipsoid::ball(dvector![3.0, 0.0], 1.0);
        assert!(intersection_minmax_level(&e1, &far).unwrap() > 1.0);
        // touching case: centers 2 apart, radii 1
        let touch = Ellipsoid::ball(dvector![1.5, 0.0], 1.0);
        let v = intersection_minmax_level(&e1, &touch).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phi_identities() {
        let id = DMatrix::identity(2, 2);
        assert!((phi1(&id, &id) - &id * 2.0).abs().max() < 1e-14);
        assert!((phi2(&id, &id, 1.0).unwrap() - &id * 2.0).abs().max() < 1e-14);
        assert!(matches!(
            phi2(&id, &id, 0.0),
            Err(EllipsoidError::SigmaNonPositive(_))
        ));
        let q = dvector![0.4, -0.7];
        let z = phi3_vec(&q, &q, &(id.clone() * 2.0), &id, 3.0).unwrap();
        assert!(z.norm() < 1e-14);
    }

    #[test]
    fn box_set_basics() {
        let b = BoxSet::new(dvector![0.0, -1.0], dvector![2.0, 1.0]).unwrap();
        assert_eq!(b.midpoint(), dvector![1.0, 0.0]);
        assert_eq!(b.vertices().len(), 4);
        let ball = b.enclosing_ball();
        for v in b.vertices() {
            assert!(contains(&ball, &v, 1e-12).unwrap());
        }
        assert!(matches!(
            BoxSet::new(dvector![1.0], dvector![0.0]),
            Err(EllipsoidError::InvertedBox(0))
        ));
    }
}
