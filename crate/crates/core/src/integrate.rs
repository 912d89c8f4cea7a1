//! ODE steppers used by the tube propagation and the shooting transcription:
//! fixed-step classical RK4 and adaptive Dormand-Prince 5(4).
//!
//! Both integrate from `t0` to `t1` in either time direction. The adaptive
//! stepper can record its accepted step sequence and replay it later, which
//! keeps shooting residuals a smooth function of the decision variables
//! while finite differencing.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("right-hand side evaluation failed at t = {t}: {msg}")]
    Rhs { t: f64, msg: String },
    #[error("step size collapsed below {min_step:.3e} at t = {t}")]
    StepCollapse { t: f64, min_step: f64 },
    #[error("step postprocessing failed at t = {t}: {msg}")]
    PostStep { t: f64, msg: String },
}

/// Stepper selection, mirroring the `rk4` / `rk45` CLI choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepper {
    /// Classical RK4 with a fixed number of substeps per call.
    Rk4 { substeps: usize },
    /// Dormand-Prince 5(4) with absolute/relative error control.
    Rk45 { atol: f64, rtol: f64 },
}

impl Stepper {
    pub fn rk4(substeps: usize) -> Self {
        Stepper::Rk4 {
            substeps: substeps.max(1),
        }
    }

    pub fn rk45_default() -> Self {
        Stepper::Rk45 {
            atol: 1e-8,
            rtol: 1e-6,
        }
    }
}

/// Recorded step sequence of an adaptive integration, replayable as a fixed
/// step schedule.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    pub steps: Vec<f64>,
}

pub type RhsFn<'a> = dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>, String> + 'a;

/// Hook applied after each accepted step (PSD clamping and the like);
/// returns a scalar "repair magnitude" accumulated by the caller.
pub type PostStepFn<'a> = dyn Fn(&mut DVector<f64>) -> Result<f64, String> + 'a;

pub struct Integration<'a> {
    rhs: &'a RhsFn<'a>,
    post_step: Option<&'a PostStepFn<'a>>,
}

#[derive(Debug)]
pub struct IntegrationResult {
    pub state: DVector<f64>,
    /// Total postprocessing repair magnitude over the span.
    pub repair: f64,
    /// Accepted steps (adaptive mode only).
    pub record: Option<StepRecord>,
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl<'a> Integration<'a> {
    pub fn new(rhs: &'a RhsFn<'a>) -> Self {
        Self {
            rhs,
            post_step: None,
        }
    }

    pub fn with_post_step(rhs: &'a RhsFn<'a>, post: &'a PostStepFn<'a>) -> Self {
        Self {
            rhs,
            post_step: Some(post),
        }
    }

    fn eval(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>, IntegrateError> {
        (self.rhs)(t, y).map_err(|msg| IntegrateError::Rhs { t, msg })
    }

    fn apply_post(&self, t: f64, y: &mut DVector<f64>) -> Result<f64, IntegrateError> {
        match self.post_step {
            None => Ok(0.0),
            Some(p) => p(y).map_err(|msg| IntegrateError::PostStep { t, msg }),
        }
    }

    fn rk4_step(&self, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>, IntegrateError> {
        let k1 = self.eval(t, y)?;
        let k2 = self.eval(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
        let k3 = self.eval(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
        let k4 = self.eval(t + h, &(y + &k3 * h))?;
        Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }

    /// One Dormand-Prince 5(4) step: the 5th-order state and the weighted
    /// error norm.
    fn dopri_step(
        &self,
        t: f64,
        y: &DVector<f64>,
        h: f64,
        atol: f64,
        rtol: f64,
    ) -> Result<(DVector<f64>, f64), IntegrateError> {
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        k.push(self.eval(t, y)?);
        for i in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[i][j] != 0.0 {
                    yi += kj * (A[i][j] * h);
                }
            }
            k.push(self.eval(t + C[i] * h, &yi)?);
        }
        let mut y5 = y.clone();
        let mut err_acc = 0.0;
        for i in 0..7 {
            if B5[i] != 0.0 {
                y5 += &k[i] * (B5[i] * h);
            }
        }
        let n = y.len();
        for idx in 0..n {
            let mut diff = 0.0;
            for i in 0..7 {
                diff += (B5[i] - B4[i]) * k[i][idx];
            }
            diff *= h;
            let sc = atol + rtol * y[idx].abs().max(y5[idx].abs());
            let e = diff / sc;
            err_acc += e * e;
        }
        let err = (err_acc / n as f64).sqrt();
        Ok((y5, err))
    }

    /// Integrates from `t0` to `t1` (either direction).
    ///
    /// With `replay` set, the recorded step schedule is used verbatim and no
    /// error control is applied.
    pub fn run(
        &self,
        t0: f64,
        t1: f64,
        y0: &DVector<f64>,
        stepper: Stepper,
        replay: Option<&StepRecord>,
    ) -> Result<IntegrationResult, IntegrateError> {
        if t0 == t1 {
            return Ok(IntegrationResult {
                state: y0.clone(),
                repair: 0.0,
                record: None,
            });
        }
        match stepper {
            Stepper::Rk4 { substeps } => {
                let mut y = y0.clone();
                let mut repair = 0.0;
                let h = (t1 - t0) / substeps as f64;
                for k in 0..substeps {
                    let t = t0 + h * k as f64;
                    y = self.rk4_step(t, &y, h)?;
                    repair += self.apply_post(t + h, &mut y)?;
                }
                Ok(IntegrationResult {
                    state: y,
                    repair,
                    record: None,
                })
            }
            Stepper::Rk45 { atol, rtol } => {
                if let Some(rec) = replay {
                    let mut t = t0;
                    let mut y = y0.clone();
                    let mut repair = 0.0;
                    for &h in &rec.steps {
                        let (y1, _) = self.dopri_step(t, &y, h, atol, rtol)?;
                        y = y1;
                        t += h;
                        repair += self.apply_post(t, &mut y)?;
                    }
                    Ok(IntegrationResult {
                        state: y,
                        repair,
                        record: None,
                    })
                } else {
                    self.dopri_adaptive(t0, t1, y0, atol, rtol)
                }
            }
        }
    }

    fn dopri_adaptive(
        &self,
        t0: f64,
        t1: f64,
        y0: &DVector<f64>,
        atol: f64,
        rtol: f64,
    ) -> Result<IntegrationResult, IntegrateError> {
        let span = t1 - t0;
        let dir = span.signum();
        let mut h = span / 10.0;
        let min_step = 1e-13 * span.abs().max(1.0);
        let mut t = t0;
        let mut y = y0.clone();
        let mut repair = 0.0;
        let mut steps = Vec::new();
        let mut rejects_in_a_row = 0usize;
        while (t1 - t) * dir > 1e-14 * span.abs() {
            if ((t + h) - t1) * dir > 0.0 {
                h = t1 - t;
            }
            let (y1, err) = self.dopri_step(t, &y, h, atol, rtol)?;
            if err <= 1.0 {
                t += h;
                steps.push(h);
                y = y1;
                repair += self.apply_post(t, &mut y)?;
                rejects_in_a_row = 0;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h *= factor;
            } else {
                rejects_in_a_row += 1;
                if rejects_in_a_row > 60 {
                    return Err(IntegrateError::StepCollapse { t, min_step });
                }
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h.abs() < min_step {
                return Err(IntegrateError::StepCollapse { t, min_step });
            }
        }
        Ok(IntegrationResult {
            state: y,
            repair,
            record: Some(StepRecord { steps }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn exp_rhs(_t: f64, y: &DVector<f64>) -> Result<DVector<f64>, String> {
        Ok(y.clone())
    }

    #[test]
    fn rk4_matches_exponential() {
        let integ = Integration::new(&exp_rhs);
        let out = integ
            .run(0.0, 1.0, &dvector![1.0], Stepper::rk4(50), None)
            .unwrap();
        assert!((out.state[0] - 1.0f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk45_matches_exponential_and_records() {
        let integ = Integration::new(&exp_rhs);
        let out = integ
            .run(
                0.0,
                2.0,
                &dvector![1.0],
                Stepper::Rk45 {
                    atol: 1e-10,
                    rtol: 1e-9,
                },
                None,
            )
            .unwrap();
        assert!((out.state[0] - 2.0f64.exp()).abs() < 1e-7);
        let rec = out.record.unwrap();
        let total: f64 = rec.steps.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        // replay reproduces the same terminal state exactly
        let replayed = integ
            .run(
                0.0,
                2.0,
                &dvector![1.0],
                Stepper::Rk45 {
                    atol: 1e-10,
                    rtol: 1e-9,
                },
                Some(&rec),
            )
            .unwrap();
        assert_eq!(replayed.state[0], out.state[0]);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let integ = Integration::new(&exp_rhs);
        let fwd = integ
            .run(0.0, 1.0, &dvector![1.0], Stepper::rk45_default(), None)
            .unwrap();
        let back = integ
            .run(1.0, 0.0, &fwd.state, Stepper::rk45_default(), None)
            .unwrap();
        assert!((back.state[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rk4_order_is_four() {
        // observed convergence order on a smooth nonlinear problem
        let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>, String> {
            Ok(dvector![t.sin() * y[0] + 0.1 * y[0] * y[0]])
        };
        let integ = Integration::new(&rhs);
        let sol = |n: usize| -> f64 {
            integ
                .run(0.0, 1.0, &dvector![0.8], Stepper::rk4(n), None)
                .unwrap()
                .state[0]
        };
        let (s1, s2, s4) = (sol(8), sol(16), sol(32));
        let order = ((s1 - s2).abs() / (s2 - s4).abs()).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn rhs_error_is_reported() {
        let rhs = |_t: f64, _y: &DVector<f64>| -> Result<DVector<f64>, String> {
            Err("boom".into())
        };
        let integ = Integration::new(&rhs);
        let err = integ
            .run(0.0, 1.0, &dvector![1.0], Stepper::rk4(4), None)
            .unwrap_err();
        assert!(matches!(err, IntegrateError::Rhs { .. }));
    }
}
