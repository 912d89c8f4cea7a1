//! Closed interval arithmetic over `f64`.
//!
//! Used by the nonlinearity bounder to enclose expression ranges and
//! Jacobian entries over boxes. Outward rounding is not applied; the
//! consumers work at tolerances far above the accumulated rounding error of
//! the desk-scale models handled here.

use std::f64::consts::{FRAC_PI_2, PI};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Symmetric interval `[-r, r]`.
    pub fn symmetric(r: f64) -> Self {
        let r = r.abs();
        Self { lo: -r, hi: r }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Magnitude: largest absolute value in the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn hull(&self, o: &Self) -> Self {
        Self::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, o: &Self) -> Self {
        let cands = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Self::new(
            cands.iter().cloned().fold(f64::INFINITY, f64::min),
            cands.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Division; `None` when the divisor straddles zero.
    pub fn div(&self, o: &Self) -> Option<Self> {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return None;
        }
        let inv = Self::new((1.0 / o.hi).min(1.0 / o.lo), (1.0 / o.hi).max(1.0 / o.lo));
        Some(self.mul(&inv))
    }

    pub fn exp(&self) -> Self {
        Self::new(self.lo.exp(), self.hi.exp())
    }

    /// Natural logarithm; `None` unless strictly positive.
    pub fn ln(&self) -> Option<Self> {
        if self.lo <= 0.0 {
            return None;
        }
        Some(Self::new(self.lo.ln(), self.hi.ln()))
    }

    /// Square root; tolerates tiny negative lower bounds from round-off.
    pub fn sqrt(&self) -> Option<Self> {
        let tol = 1e-14 * (1.0 + self.mag());
        if self.lo < -tol {
            return None;
        }
        Some(Self::new(self.lo.max(0.0).sqrt(), self.hi.max(0.0).sqrt()))
    }

    pub fn sin(&self) -> Self {
        if self.width() >= 2.0 * PI {
            return Self::new(-1.0, 1.0);
        }
        let mut lo = self.lo.sin().min(self.hi.sin());
        let mut hi = self.lo.sin().max(self.hi.sin());
        if contains_phase(self.lo, self.hi, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_phase(self.lo, self.hi, -FRAC_PI_2) {
            lo = -1.0;
        }
        Self::new(lo, hi)
    }

    pub fn cos(&self) -> Self {
        if self.width() >= 2.0 * PI {
            return Self::new(-1.0, 1.0);
        }
        let mut lo = self.lo.cos().min(self.hi.cos());
        let mut hi = self.lo.cos().max(self.hi.cos());
        if contains_phase(self.lo, self.hi, 0.0) {
            hi = 1.0;
        }
        if contains_phase(self.lo, self.hi, PI) {
            lo = -1.0;
        }
        Self::new(lo, hi)
    }

    /// Integer power with the usual even/odd case split.
    pub fn powi(&self, k: i32) -> Option<Self> {
        if k == 0 {
            return Some(Self::point(1.0));
        }
        if k < 0 {
            return Self::point(1.0).div(&self.powi(-k)?);
        }
        let a = self.lo.powi(k);
        let b = self.hi.powi(k);
        if k % 2 == 1 {
            Some(Self::new(a.min(b), a.max(b)))
        } else if self.lo <= 0.0 && self.hi >= 0.0 {
            Some(Self::new(0.0, a.max(b)))
        } else {
            Some(Self::new(a.min(b), a.max(b)))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// True when some `phase + 2 pi k` lies in `[lo, hi]`.
fn contains_phase(lo: f64, hi: f64, phase: f64) -> bool {
    let k = ((lo - phase) / (2.0 * PI)).ceil();
    phase + 2.0 * PI * k <= hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_encloses_samples() {
        let a = Interval::new(-1.0, 2.0);
        let b = Interval::new(0.5, 3.0);
        let prod = a.mul(&b);
        for &x in &[-1.0, 0.0, 1.3, 2.0] {
            for &y in &[0.5, 1.0, 2.7, 3.0] {
                assert!(prod.contains(x * y));
            }
        }
        assert!(a.div(&Interval::new(-1.0, 1.0)).is_none());
        let q = a.div(&b).unwrap();
        assert!(q.contains(2.0 / 0.5));
        assert!(q.contains(-1.0 / 0.5));
    }

    #[test]
    fn trig_ranges() {
        let i = Interval::new(0.0, PI);
        let s = i.sin();
        assert!((s.hi - 1.0).abs() < 1e-15 && s.lo.abs() < 1e-15);
        let c = i.cos();
        assert!((c.lo + 1.0).abs() < 1e-15 && (c.hi - 1.0).abs() < 1e-15);
        let wide = Interval::new(-100.0, 100.0);
        assert_eq!(wide.sin(), Interval::new(-1.0, 1.0));
        // narrow interval away from critical points
        let narrow = Interval::new(0.1, 0.2);
        assert!((narrow.sin().lo - 0.1f64.sin()).abs() < 1e-15);
        assert!((narrow.sin().hi - 0.2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn powers() {
        let i = Interval::new(-2.0, 1.0);
        assert_eq!(i.powi(2).unwrap(), Interval::new(0.0, 4.0));
        assert_eq!(i.powi(3).unwrap(), Interval::new(-8.0, 1.0));
        assert!(Interval::new(0.5, 2.0).powi(-1).unwrap().contains(1.0));
        assert!(i.sqrt().is_none());
        assert!(Interval::new(0.0, 4.0).sqrt().unwrap().contains(2.0));
    }
}
