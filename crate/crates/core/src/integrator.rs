//! Explicit Runge–Kutta integration with transient discarding and uniform
//! observable sampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriveSpec, Flat, Model, StateVector, SystemParams, DIM};

/// A first-order system y' = f(t, y) on a fixed-size real vector.
pub trait OdeSystem<const N: usize> {
    fn eval(&self, t: f64, y: &[f64; N], dy: &mut [f64; N]);
}

impl OdeSystem<DIM> for Model {
    #[inline]
    fn eval(&self, t: f64, y: &Flat, dy: &mut Flat) {
        self.deriv(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    #[serde(rename = "rk4_fixed")]
    Rk4Fixed,
    /// Dormand–Prince 5(4) with embedded error control.
    #[serde(rename = "rk45_adaptive")]
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub method: Method,
    /// Fixed step (RK4) or initial step (RK45), in τ.
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Discarded time before recording starts.
    pub t_transient: f64,
    /// Length of the recorded window.
    pub t_record: f64,
    /// Spacing of recorded samples.
    pub sample_dt: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt: 2.0 * PI / 200.0,
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            t_transient: 1000.0 * 2.0 * PI,
            t_record: 200.0 * 2.0 * PI,
            sample_dt: 2.0 * PI / 64.0,
        }
    }
}

impl IntegrationConfig {
    /// Bit-reproducible fixed-step variant of the defaults.
    pub fn rk4() -> Self {
        Self {
            method: Method::Rk4Fixed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        };
        positive("dt", self.dt)?;
        positive("t_record", self.t_record)?;
        positive("sample_dt", self.sample_dt)?;
        if self.method == Method::Rk45Adaptive {
            positive("rel_tol", self.rel_tol)?;
            positive("abs_tol", self.abs_tol)?;
        }
        if !self.t_transient.is_finite() || self.t_transient < 0.0 {
            return Err(Error::InvalidParameter {
                name: "t_transient",
                reason: format!("must be finite and >= 0, got {}", self.t_transient),
            });
        }
        if self.method == Method::Rk4Fixed && self.sample_dt < self.dt {
            return Err(Error::InvalidParameter {
                name: "sample_dt",
                reason: format!(
                    "must be >= dt for fixed-step integration ({} < {})",
                    self.sample_dt, self.dt
                ),
            });
        }
        Ok(())
    }

    /// Number of intervals in the recorded window.
    pub fn record_intervals(&self) -> usize {
        ((self.t_record / self.sample_dt).round() as usize).max(1)
    }
}

/// Stateful stepping engine shared by trajectory integration and the
/// tangent-space propagation.
#[derive(Debug, Clone)]
pub struct Stepper {
    method: Method,
    dt: f64,
    rel_tol: f64,
    abs_tol: f64,
    /// Step proposed by the last accepted adaptive step.
    h: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (error weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let hc = h * c;
        for i in 0..N {
            out[i] += hc * k[i];
        }
    }
    out
}

impl Stepper {
    pub fn new(config: &IntegrationConfig) -> Self {
        Self::with_settings(config.method, config.dt, config.rel_tol, config.abs_tol)
    }

    pub fn with_settings(method: Method, dt: f64, rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            method,
            dt,
            rel_tol,
            abs_tol,
            h: dt,
        }
    }

    /// Integrate `y` from `t0` to `t1` in place.
    pub fn advance<S: OdeSystem<N>, const N: usize>(
        &mut self,
        sys: &S,
        t0: f64,
        y: &mut [f64; N],
        t1: f64,
    ) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        match self.method {
            Method::Rk4Fixed => self.advance_rk4(sys, t0, y, t1),
            Method::Rk45Adaptive => self.advance_dopri(sys, t0, y, t1),
        }
    }

    fn advance_rk4<S: OdeSystem<N>, const N: usize>(
        &mut self,
        sys: &S,
        t0: f64,
        y: &mut [f64; N],
        t1: f64,
    ) -> Result<()> {
        let span = t1 - t0;
        // Equal substeps no longer than dt so that t1 is hit exactly.
        let n = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let mut k1 = [0.0; N];
        let mut k2 = [0.0; N];
        let mut k3 = [0.0; N];
        let mut k4 = [0.0; N];
        for step in 0..n {
            let t = t0 + step as f64 * h;
            sys.eval(t, y, &mut k1);
            sys.eval(t + 0.5 * h, &axpy(y, 0.5 * h, &[(1.0, &k1)]), &mut k2);
            sys.eval(t + 0.5 * h, &axpy(y, 0.5 * h, &[(1.0, &k2)]), &mut k3);
            sys.eval(t + h, &axpy(y, h, &[(1.0, &k3)]), &mut k4);
            let h6 = h / 6.0;
            for i in 0..N {
                y[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { tau: t + h });
            }
        }
        Ok(())
    }

    fn advance_dopri<S: OdeSystem<N>, const N: usize>(
        &mut self,
        sys: &S,
        t0: f64,
        y: &mut [f64; N],
        t1: f64,
    ) -> Result<()> {
        const SAFETY: f64 = 0.9;
        const MIN_FACTOR: f64 = 0.2;
        const MAX_FACTOR: f64 = 5.0;

        let mut t = t0;
        let mut k1 = [0.0; N];
        let mut k2 = [0.0; N];
        let mut k3 = [0.0; N];
        let mut k4 = [0.0; N];
        let mut k5 = [0.0; N];
        let mut k6 = [0.0; N];
        let mut k7 = [0.0; N];
        sys.eval(t, y, &mut k1);

        while t < t1 {
            let remaining = t1 - t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { tau: t, step: h });
            }

            sys.eval(t + C2 * h, &axpy(y, h, &[(A21, &k1)]), &mut k2);
            sys.eval(t + C3 * h, &axpy(y, h, &[(A31, &k1), (A32, &k2)]), &mut k3);
            sys.eval(
                t + C4 * h,
                &axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
                &mut k4,
            );
            sys.eval(
                t + C5 * h,
                &axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
                &mut k5,
            );
            sys.eval(
                t + h,
                &axpy(
                    y,
                    h,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
                &mut k6,
            );
            let y_new = axpy(
                y,
                h,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            sys.eval(t + h, &y_new, &mut k7);

            let mut err_sq = 0.0;
            let mut finite = true;
            for i in 0..N {
                if !y_new[i].is_finite() {
                    finite = false;
                    break;
                }
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.abs_tol + self.rel_tol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            if !finite {
                // A non-finite trial point is treated as a rejected step; it
                // only becomes a divergence if the step collapses.
                self.h = h * MIN_FACTOR;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { tau: t });
                }
                if self.h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Divergence { tau: t });
                }
                continue;
            }
            let err = (err_sq / N as f64).sqrt();

            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                *y = y_new;
                k1 = k7;
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                // A truncated final step says nothing about the natural step.
                if !last || h * factor < self.h {
                    self.h = h * factor;
                }
            } else {
                self.h = h * (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            }
        }
        Ok(())
    }
}

/// Recorded, post-transient portion of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub taus: Vec<f64>,
    pub states: Vec<StateVector>,
    /// |a_cw|² + |a_ccw|²
    pub i_a: Vec<f64>,
    /// |b_cw|² + |b_ccw|²
    pub i_b: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Sampling interval of `taus`.
    pub sample_dt: f64,
}

impl Trajectory {
    fn with_capacity(n: usize, sample_dt: f64) -> Self {
        Self {
            taus: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            i_a: Vec::with_capacity(n),
            i_b: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            sample_dt,
        }
    }

    fn push(&mut self, tau: f64, s: StateVector) {
        self.taus.push(tau);
        self.i_a.push(s.intensity_a());
        self.i_b.push(s.intensity_b());
        self.q.push(s.q);
        self.p.push(s.p);
        self.states.push(s);
    }

    /// Build a trajectory from explicit samples (used by tests and tools).
    pub fn from_samples(taus: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if taus.len() != states.len() {
            return Err(Error::LengthMismatch {
                left: taus.len(),
                right: states.len(),
            });
        }
        let sample_dt = if taus.len() > 1 {
            taus[1] - taus[0]
        } else {
            0.0
        };
        let mut t = Self::with_capacity(taus.len(), sample_dt);
        for (tau, s) in taus.into_iter().zip(states) {
            t.push(tau, s);
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn last_state(&self) -> Option<&StateVector> {
        self.states.last()
    }
}

/// Integrate from the all-zero state.
pub fn integrate(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &IntegrationConfig,
) -> Result<Trajectory> {
    integrate_from(params, drive, config, &StateVector::zero(), 0.0)
}

/// Integrate from an explicit initial state at time `tau0`; the transient and
/// recorded windows are measured from `tau0`.
pub fn integrate_from(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &IntegrationConfig,
    initial: &StateVector,
    tau0: f64,
) -> Result<Trajectory> {
    config.validate()?;
    let model = Model::checked(params, drive)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { tau: tau0 });
    }
    let mut stepper = Stepper::new(config);
    let mut y = initial.to_flat();
    let t_start = tau0 + config.t_transient;
    stepper.advance(&model, tau0, &mut y, t_start)?;

    let n = config.record_intervals();
    let mut traj = Trajectory::with_capacity(n + 1, config.sample_dt);
    traj.push(t_start, StateVector::from_flat(&y));
    let mut t = t_start;
    for k in 1..=n {
        let t_next = t_start + k as f64 * config.sample_dt;
        stepper.advance(&model, t, &mut y, t_next)?;
        t = t_next;
        traj.push(t, StateVector::from_flat(&y));
    }
    Ok(traj)
}

/// Largest total A-intensity over the recorded window.
pub fn max_intensity(trajectory: &Trajectory) -> Result<f64> {
    trajectory
        .i_a
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyTrajectory)
}
