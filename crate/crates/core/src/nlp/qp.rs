//! Dense convex quadratic programming by a Mehrotra-style primal-dual
//! interior point method.
//!
//! Solves
//! ```text
//!   min  1/2 d'H d + g'd
//!   s.t. A d  = b
//!        C d <= e
//!        l <= d <= u
//! ```
//! with `H` positive semidefinite (the SQP layer supplies a damped
//! quasi-Newton matrix). Variable bounds get their own slack pairs and only
//! contribute diagonal barrier terms, so the reduced matrix is
//! `H + C' W C + D` with `C` the general rows alone; the Newton systems are
//! then a Cholesky solve plus a Schur complement on the equality block.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub d: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Multipliers of the general inequality rows `C d <= e`.
    pub z_ineq: DVector<f64>,
    /// Multipliers of the finite lower/upper variable bounds, aligned with
    /// [`finite_lower`] / [`finite_upper`].
    pub z_lower: DVector<f64>,
    pub z_upper: DVector<f64>,
    pub iterations: usize,
}

pub struct QpData<'a> {
    pub h: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    pub c: &'a DMatrix<f64>,
    pub e: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
}

pub fn finite_lower(lower: &DVector<f64>) -> Vec<usize> {
    (0..lower.len()).filter(|&j| lower[j].is_finite()).collect()
}

pub fn finite_upper(upper: &DVector<f64>) -> Vec<usize> {
    (0..upper.len()).filter(|&j| upper[j].is_finite()).collect()
}

struct KktFactors {
    k_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    kinv_at: DMatrix<f64>,
    schur: SchurFactor,
}

enum SchurFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    None,
}

fn factorize(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w_c: &DVector<f64>,
    diag: &DVector<f64>,
    delta: f64,
) -> Option<KktFactors> {
    let n = h.nrows();
    let mut k = h.clone();
    if c.nrows() > 0 {
        let mut cw = c.clone();
        for r in 0..c.nrows() {
            let s = w_c[r].sqrt();
            for j in 0..n {
                cw[(r, j)] *= s;
            }
        }
        k += cw.transpose() * &cw;
    }
    for j in 0..n {
        k[(j, j)] += diag[j] + delta;
    }
    let k_chol = k.cholesky()?;
    if a.nrows() == 0 {
        return Some(KktFactors {
            k_chol,
            kinv_at: DMatrix::zeros(n, 0),
            schur: SchurFactor::None,
        });
    }
    let at = a.transpose();
    let mut kinv_at = at.clone();
    k_chol.solve_mut(&mut kinv_at);
    let mut schur_m = a * &kinv_at;
    for j in 0..schur_m.nrows() {
        schur_m[(j, j)] += delta;
    }
    let schur = match schur_m.clone().cholesky() {
        Some(ch) => SchurFactor::Chol(ch),
        None => SchurFactor::Lu(schur_m.lu()),
    };
    Some(KktFactors {
        k_chol,
        kinv_at,
        schur,
    })
}

impl KktFactors {
    fn solve(
        &self,
        a: &DMatrix<f64>,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let kinv_r1 = self.k_chol.solve(r1);
        if a.nrows() == 0 {
            return Some((kinv_r1, DVector::zeros(0)));
        }
        let rhs = a * &kinv_r1 - r2;
        let dy = match &self.schur {
            SchurFactor::Chol(ch) => ch.solve(&rhs),
            SchurFactor::Lu(lu) => lu.solve(&rhs)?,
            SchurFactor::None => unreachable!(),
        };
        let dd = kinv_r1 - &self.kinv_at * &dy;
        Some((dd, dy))
    }
}

/// Nonnegative slack/dual pair bundle.
struct Cone {
    s: DVector<f64>,
    z: DVector<f64>,
}

impl Cone {
    fn len(&self) -> usize {
        self.s.len()
    }
    fn dot(&self) -> f64 {
        self.s.dot(&self.z)
    }
    fn w(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            (self.z[i] / self.s[i].max(1e-300)).clamp(1e-16, 1e16)
        })
    }
    fn step_limit(&self, ds: &DVector<f64>, dz: &DVector<f64>, tau: f64) -> (f64, f64) {
        let mut ap = 1.0f64;
        let mut ad = 1.0f64;
        for i in 0..self.len() {
            if ds[i] < 0.0 {
                ap = ap.min(-tau * self.s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                ad = ad.min(-tau * self.z[i] / dz[i]);
            }
        }
        (ap, ad)
    }
    fn advance(&mut self, ds: &DVector<f64>, dz: &DVector<f64>, alpha: f64) {
        for i in 0..self.len() {
            self.s[i] = (self.s[i] + alpha * ds[i]).max(1e-300);
            self.z[i] = (self.z[i] + alpha * dz[i]).max(1e-300);
        }
    }
}

struct Directions {
    dd: DVector<f64>,
    dy: DVector<f64>,
    dc: (DVector<f64>, DVector<f64>),
    dlo: (DVector<f64>, DVector<f64>),
    dhi: (DVector<f64>, DVector<f64>),
}

pub fn solve_qp(data: &QpData<'_>, tol: f64, max_iter: usize) -> QpSolution {
    let n = data.g.len();
    let me = data.a.nrows();
    let mc = data.c.nrows();
    let lo_idx = finite_lower(data.lower);
    let hi_idx = finite_upper(data.upper);
    let n_lo = lo_idx.len();
    let n_hi = hi_idx.len();
    let m_total = mc + n_lo + n_hi;

    let mut d = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut cone_c = Cone {
        s: DVector::from_fn(mc, |i, _| data.e[i].max(1.0)),
        z: DVector::from_element(mc, 1.0),
    };
    let mut cone_lo = Cone {
        s: DVector::from_fn(n_lo, |r, _| (-data.lower[lo_idx[r]]).max(1.0)),
        z: DVector::from_element(n_lo, 1.0),
    };
    let mut cone_hi = Cone {
        s: DVector::from_fn(n_hi, |r, _| data.upper[hi_idx[r]].max(1.0)),
        z: DVector::from_element(n_hi, 1.0),
    };

    let result = |status: QpStatus,
                  d: DVector<f64>,
                  y: DVector<f64>,
                  zc: DVector<f64>,
                  zl: DVector<f64>,
                  zu: DVector<f64>,
                  it: usize| QpSolution {
        status,
        d,
        y,
        z_ineq: zc,
        z_lower: zl,
        z_upper: zu,
        iterations: it,
    };

    let scale = 1.0
        + data
            .g
            .amax()
            .max(if me > 0 { data.b.amax() } else { 0.0 })
            .max(if mc > 0 { data.e.amax() } else { 0.0 });
    let tau = 0.995;
    let mut delta = 1e-11 * (1.0 + data.h.trace().abs() / n.max(1) as f64);

    for iter in 0..=max_iter {
        // residuals
        let mut r_d = data.h * &d + data.g;
        if me > 0 {
            r_d += data.a.transpose() * &y;
        }
        if mc > 0 {
            r_d += data.c.transpose() * &cone_c.z;
        }
        for (r, &j) in lo_idx.iter().enumerate() {
            r_d[j] -= cone_lo.z[r];
        }
        for (r, &j) in hi_idx.iter().enumerate() {
            r_d[j] += cone_hi.z[r];
        }
        let r_p = if me > 0 {
            data.a * &d - data.b
        } else {
            DVector::zeros(0)
        };
        let r_c = if mc > 0 {
            data.c * &d + &cone_c.s - data.e
        } else {
            DVector::zeros(0)
        };
        let r_lo =
            DVector::from_fn(n_lo, |r, _| d[lo_idx[r]] - cone_lo.s[r] - data.lower[lo_idx[r]]);
        let r_hi =
            DVector::from_fn(n_hi, |r, _| d[hi_idx[r]] + cone_hi.s[r] - data.upper[hi_idx[r]]);
        let gap = cone_c.dot() + cone_lo.dot() + cone_hi.dot();
        let mu = if m_total > 0 {
            gap / m_total as f64
        } else {
            0.0
        };
        let amax_or = |v: &DVector<f64>| if v.is_empty() { 0.0 } else { v.amax() };
        let residual = r_d
            .amax()
            .max(amax_or(&r_p))
            .max(amax_or(&r_c))
            .max(amax_or(&r_lo))
            .max(amax_or(&r_hi))
            .max(mu);
        if residual <= tol * scale {
            return result(QpStatus::Solved, d, y, cone_c.z, cone_lo.z, cone_hi.z, iter);
        }
        if iter == max_iter {
            // stalled but essentially converged iterates are still usable
            let status = if residual <= 1e4 * tol * scale {
                QpStatus::Solved
            } else {
                QpStatus::MaxIterations
            };
            return result(status, d, y, cone_c.z, cone_lo.z, cone_hi.z, iter);
        }
        // exploding duals with stalled primal residuals signal infeasibility
        let zmax = cone_c.z.amax().max(cone_lo.z.amax()).max(cone_hi.z.amax());
        if zmax > 1e13 * scale {
            return result(
                QpStatus::MaxIterations,
                d,
                y,
                cone_c.z,
                cone_lo.z,
                cone_hi.z,
                iter,
            );
        }

        let w_c = cone_c.w();
        let mut diag = DVector::zeros(n);
        let w_lo = cone_lo.w();
        for (r, &j) in lo_idx.iter().enumerate() {
            diag[j] += w_lo[r];
        }
        let w_hi = cone_hi.w();
        for (r, &j) in hi_idx.iter().enumerate() {
            diag[j] += w_hi[r];
        }
        let factors = loop {
            match factorize(data.h, data.a, data.c, &w_c, &diag, delta) {
                Some(f) => break Some(f),
                None => {
                    delta *= 100.0;
                    if delta > 1e8 {
                        break None;
                    }
                }
            }
        };
        let Some(factors) = factors else {
            return result(
                QpStatus::NumericalFailure,
                d,
                y,
                cone_c.z,
                cone_lo.z,
                cone_hi.z,
                iter,
            );
        };

        let solve_dir = |rsz_c: &DVector<f64>,
                         rsz_lo: &DVector<f64>,
                         rsz_hi: &DVector<f64>|
         -> Option<Directions> {
            let mut rhs1 = -r_d.clone();
            if mc > 0 {
                let tmp = DVector::from_fn(mc, |i, _| {
                    (rsz_c[i] - cone_c.z[i] * r_c[i]) / cone_c.s[i].max(1e-300)
                });
                rhs1 += data.c.transpose() * tmp;
            }
            for (r, &j) in lo_idx.iter().enumerate() {
                rhs1[j] -= (rsz_lo[r] + cone_lo.z[r] * r_lo[r]) / cone_lo.s[r].max(1e-300);
            }
            for (r, &j) in hi_idx.iter().enumerate() {
                rhs1[j] += (rsz_hi[r] - cone_hi.z[r] * r_hi[r]) / cone_hi.s[r].max(1e-300);
            }
            let rhs2 = -r_p.clone();
            let (dd, dy) = factors.solve(data.a, &rhs1, &rhs2)?;
            let ds_c = if mc > 0 {
                -&r_c - data.c * &dd
            } else {
                DVector::zeros(0)
            };
            let dz_c = DVector::from_fn(mc, |i, _| {
                -(rsz_c[i] + cone_c.z[i] * ds_c[i]) / cone_c.s[i].max(1e-300)
            });
            let ds_lo = DVector::from_fn(n_lo, |r, _| dd[lo_idx[r]] + r_lo[r]);
            let dz_lo = DVector::from_fn(n_lo, |r, _| {
                -(rsz_lo[r] + cone_lo.z[r] * ds_lo[r]) / cone_lo.s[r].max(1e-300)
            });
            let ds_hi = DVector::from_fn(n_hi, |r, _| -dd[hi_idx[r]] - r_hi[r]);
            let dz_hi = DVector::from_fn(n_hi, |r, _| {
                -(rsz_hi[r] + cone_hi.z[r] * ds_hi[r]) / cone_hi.s[r].max(1e-300)
            });
            Some(Directions {
                dd,
                dy,
                dc: (ds_c, dz_c),
                dlo: (ds_lo, dz_lo),
                dhi: (ds_hi, dz_hi),
            })
        };

        // affine predictor
        let rsz_c = DVector::from_fn(mc, |i, _| cone_c.s[i] * cone_c.z[i]);
        let rsz_lo = DVector::from_fn(n_lo, |r, _| cone_lo.s[r] * cone_lo.z[r]);
        let rsz_hi = DVector::from_fn(n_hi, |r, _| cone_hi.s[r] * cone_hi.z[r]);
        let Some(aff) = solve_dir(&rsz_c, &rsz_lo, &rsz_hi) else {
            return result(
                QpStatus::NumericalFailure,
                d,
                y,
                cone_c.z,
                cone_lo.z,
                cone_hi.z,
                iter,
            );
        };
        let (ap_c, ad_c) = cone_c.step_limit(&aff.dc.0, &aff.dc.1, 1.0);
        let (ap_l, ad_l) = cone_lo.step_limit(&aff.dlo.0, &aff.dlo.1, 1.0);
        let (ap_h, ad_h) = cone_hi.step_limit(&aff.dhi.0, &aff.dhi.1, 1.0);
        let a_p = ap_c.min(ap_l).min(ap_h);
        let a_d = ad_c.min(ad_l).min(ad_h);
        let mut gap_aff = 0.0;
        for i in 0..mc {
            gap_aff += (cone_c.s[i] + a_p * aff.dc.0[i]) * (cone_c.z[i] + a_d * aff.dc.1[i]);
        }
        for r in 0..n_lo {
            gap_aff += (cone_lo.s[r] + a_p * aff.dlo.0[r]) * (cone_lo.z[r] + a_d * aff.dlo.1[r]);
        }
        for r in 0..n_hi {
            gap_aff += (cone_hi.s[r] + a_p * aff.dhi.0[r]) * (cone_hi.z[r] + a_d * aff.dhi.1[r]);
        }
        let mu_aff = if m_total > 0 {
            gap_aff / m_total as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // centering + corrector
        let rsz_c2 = DVector::from_fn(mc, |i, _| {
            cone_c.s[i] * cone_c.z[i] + aff.dc.0[i] * aff.dc.1[i] - sigma * mu
        });
        let rsz_lo2 = DVector::from_fn(n_lo, |r, _| {
            cone_lo.s[r] * cone_lo.z[r] + aff.dlo.0[r] * aff.dlo.1[r] - sigma * mu
        });
        let rsz_hi2 = DVector::from_fn(n_hi, |r, _| {
            cone_hi.s[r] * cone_hi.z[r] + aff.dhi.0[r] * aff.dhi.1[r] - sigma * mu
        });
        let Some(dir) = solve_dir(&rsz_c2, &rsz_lo2, &rsz_hi2) else {
            return result(
                QpStatus::NumericalFailure,
                d,
                y,
                cone_c.z,
                cone_lo.z,
                cone_hi.z,
                iter,
            );
        };
        let (ap_c, ad_c) = cone_c.step_limit(&dir.dc.0, &dir.dc.1, tau);
        let (ap_l, ad_l) = cone_lo.step_limit(&dir.dlo.0, &dir.dlo.1, tau);
        let (ap_h, ad_h) = cone_hi.step_limit(&dir.dhi.0, &dir.dhi.1, tau);
        let alpha = ap_c.min(ap_l).min(ap_h).min(ad_c).min(ad_l).min(ad_h);
        d += &dir.dd * alpha;
        y += &dir.dy * alpha;
        cone_c.advance(&dir.dc.0, &dir.dc.1, alpha);
        cone_lo.advance(&dir.dlo.0, &dir.dlo.1, alpha);
        cone_hi.advance(&dir.dhi.0, &dir.dhi.1, alpha);
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn empty_rows(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    fn free_bounds(n: usize) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    #[test]
    fn infeasible_qp_is_not_reported_solved() {
        // d = 10 conflicts with d <= 5
        let h = DMatrix::identity(1, 1);
        let g = dvector![0.0];
        let a = dmatrix![1.0];
        let b = dvector![10.0];
        let (c, e) = empty_rows(1);
        let l = dvector![-5.0];
        let u = dvector![5.0];
        let sol = solve_qp(
            &QpData {
                h: &h,
                g: &g,
                a: &a,
                b: &b,
                c: &c,
                e: &e,
                lower: &l,
                upper: &u,
            },
            1e-9,
            60,
        );
        assert_ne!(sol.status, QpStatus::Solved);
    }

    #[test]
    fn unconstrained_quadratic() {
        let h = DMatrix::identity(3, 3) * 2.0;
        let g = dvector![-2.0, -4.0, 2.0];
        let (a, b) = empty_rows(3);
        let (c, e) = empty_rows(3);
        let (l, u) = free_bounds(3);
        let sol = solve_qp(
            &QpData {
                h: &h,
                g: &g,
                a: &a,
                b: &b,
                c: &c,
                e: &e,
                lower: &l,
                upper: &u,
            },
            1e-10,
            50,
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.d - dvector![1.0, 2.0, -1.0]).amax() < 1e-8);
    }

    #[test]
    fn equality_constrained() {
        // min 1/2|d|^2 s.t. d1 + d2 = 1 -> d = (0.5, 0.5)
        let h = DMatrix::identity(2, 2);
        let g = dvector![0.0, 0.0];
        let a = dmatrix![1.0, 1.0];
        let b = dvector![1.0];
        let (c, e) = empty_rows(2);
        let (l, u) = free_bounds(2);
        let sol = solve_qp(
            &QpData {
                h: &h,
                g: &g,
                a: &a,
                b: &b,
                c: &c,
                e: &e,
                lower: &l,
                upper: &u,
            },
            1e-10,
            50,
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.d - dvector![0.5, 0.5]).amax() < 1e-9);
        // KKT: H d + g + A' y = 0 -> y = -0.5
        assert!((sol.y[0] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn active_bound() {
        // min (d1+1)^2 + (d2-3)^2 with d <= 2 componentwise
        let h = DMatrix::identity(2, 2) * 2.0;
        let g = dvector![2.0, -6.0];
        let (a, b) = empty_rows(2);
        let (c, e) = empty_rows(2);
        let l = DVector::from_element(2, f64::NEG_INFINITY);
        let u = dvector![2.0, 2.0];
        let sol = solve_qp(
            &QpData {
                h: &h,
                g: &g,
                a: &a,
                b: &b,
                c: &c,
                e: &e,
                lower: &l,
                upper: &u,
            },
            1e-10,
            60,
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.d - dvector![-1.0, 2.0]).amax() < 1e-7);
        // active upper bound carries a positive multiplier
        assert!(sol.z_upper[1] > 1e-6);
        assert!(sol.z_upper[0] < 1e-6);
    }

    #[test]
    fn general_inequality() {
        // min 1/2|d - (2,2)|^2 s.t. d1 + d2 <= 2 -> (1,1)
        let h = DMatrix::identity(2, 2);
        let g = dvector![-2.0, -2.0];
        let (a, b) = empty_rows(2);
        let c = dmatrix![1.0, 1.0];
        let e = dvector![2.0];
        let (l, u) = free_bounds(2);
        let sol = solve_qp(
            &QpData {
                h: &h,
                g: &g,
                a: &a,
                b: &b,
                c: &c,
                e: &e,
                lower: &l,
                upper: &u,
            },
            1e-10,
            60,
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.d - dvector![1.0, 1.0]).amax() < 1e-7);
        assert!((sol.z_ineq[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kkt_conditions_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let n = rng.random_range(2..7);
            let me = rng.random_range(0..n);
            let mi = rng.random_range(0..4);
            let mut l = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    l[(i, j)] = rng.random_range(-1.0..1.0);
                }
                l[(i, i)] += 2.0;
            }
            let h = &l * l.transpose();
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
            // guarantee feasibility: build rhs data around an interior point
            let d0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let b = &a * &d0;
            let e = &c * &d0 + DVector::from_fn(mi, |_, _| rng.random_range(0.1..1.0));
            let lower = DVector::from_element(n, -5.0);
            let upper = DVector::from_element(n, 5.0);
            let sol = solve_qp(
                &QpData {
                    h: &h,
                    g: &g,
                    a: &a,
                    b: &b,
                    c: &c,
                    e: &e,
                    lower: &lower,
                    upper: &upper,
                },
                1e-9,
                80,
            );
            assert_eq!(sol.status, QpStatus::Solved, "case {case}");
            // KKT: stationarity, primal feasibility, dual nonnegativity
            let mut grad_l =
                &h * &sol.d + &g + a.transpose() * &sol.y + c.transpose() * &sol.z_ineq;
            for (r, &j) in finite_lower(&lower).iter().enumerate() {
                grad_l[j] -= sol.z_lower[r];
            }
            for (r, &j) in finite_upper(&upper).iter().enumerate() {
                grad_l[j] += sol.z_upper[r];
            }
            assert!(grad_l.amax() < 1e-6, "case {case}: stationarity");
            if me > 0 {
                assert!((&a * &sol.d - &b).amax() < 1e-6, "case {case}: eq");
            }
            for r in 0..mi {
                let viol = (c.row(r) * &sol.d)[(0, 0)] - e[r];
                assert!(viol < 1e-6, "case {case}: ineq");
                assert!(sol.z_ineq[r] > -1e-9, "case {case}: dual sign");
            }
        }
    }
}
