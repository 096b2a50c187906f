//! Maximal Lyapunov exponent from tangent-space propagation.
//!
//! A unit tangent vector is carried along the nonlinear flow with the analytic
//! Jacobian. Every `t_renorm` its norm is logged and it is rescaled to unit
//! length; λ_max is the time average of the logged stretch factors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{Method, OdeSystem, Stepper};
use crate::model::{DriveSpec, Flat, Model, StateVector, SystemParams, DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    pub method: Method,
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Base-flow time discarded before the tangent vector is launched.
    pub t_transient: f64,
    /// Averaging window.
    pub t_average: f64,
    /// Interval between renormalizations.
    pub t_renorm: f64,
    /// Convergence threshold on the spread of the last quarter of the history.
    pub conv_tol: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt: 2.0 * PI / 200.0,
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            t_transient: 1000.0 * 2.0 * PI,
            t_average: 2000.0 * 2.0 * PI,
            t_renorm: 2.0 * PI,
            conv_tol: 5e-3,
        }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("t_average", self.t_average),
            ("t_renorm", self.t_renorm),
            ("conv_tol", self.conv_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(self.t_transient.is_finite() && self.t_transient >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_transient",
                reason: format!("must be finite and >= 0, got {}", self.t_transient),
            });
        }
        if self.method == Method::Rk45Adaptive && !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rel_tol/abs_tol",
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }

    fn stepper(&self) -> Stepper {
        Stepper::with_settings(self.method, self.dt, self.rel_tol, self.abs_tol)
    }

    /// Number of renormalization intervals in the averaging window.
    pub fn renorm_count(&self) -> usize {
        ((self.t_average / self.t_renorm).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Exponent in units of Ω.
    pub lambda_max: f64,
    /// Running estimate after each renormalization.
    pub history: Vec<f64>,
    pub converged: bool,
    /// (t_transient, t_average)
    pub window: (f64, f64),
}

/// Base flow plus its linearization, stacked as [x, v].
struct TangentFlow<'a>(&'a Model);

impl OdeSystem<{ 2 * DIM }> for TangentFlow<'_> {
    #[inline]
    fn eval(&self, t: f64, y: &[f64; 2 * DIM], dy: &mut [f64; 2 * DIM]) {
        let mut x = [0.0; DIM];
        let mut v = [0.0; DIM];
        x.copy_from_slice(&y[..DIM]);
        v.copy_from_slice(&y[DIM..]);
        let mut fx = [0.0; DIM];
        let mut jv = [0.0; DIM];
        self.0.deriv(t, &x, &mut fx);
        self.0.jvp(&x, &v, &mut jv);
        dy[..DIM].copy_from_slice(&fx);
        dy[DIM..].copy_from_slice(&jv);
    }
}

/// Rescale `v` to unit Euclidean norm and return ln of its previous norm.
pub fn renormalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in v.iter_mut() {
        *c /= norm;
    }
    norm.ln()
}

fn initial_tangent() -> Flat {
    [1.0 / (DIM as f64).sqrt(); DIM]
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Benettin-style estimate of λ_max starting from the all-zero state.
pub fn max_lyapunov(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &LyapunovConfig,
) -> Result<LyapunovEstimate> {
    max_lyapunov_from(params, drive, config, &StateVector::zero())
}

pub fn max_lyapunov_from(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &LyapunovConfig,
    initial: &StateVector,
) -> Result<LyapunovEstimate> {
    if !drive.is_autonomous() {
        return Err(Error::Precondition(
            "Lyapunov estimate needs a time-independent drive envelope (d_eps = 0 or d_omega = 0)"
                .into(),
        ));
    }
    tangent_estimate(params, drive, config, initial, 0.0)
}

/// Same estimator without the autonomy check, for drives whose envelope is
/// periodic in τ. The tangent method stays well defined for a time-periodic
/// flow; `tau0` fixes the phase of the modulation at the initial state.
pub fn max_lyapunov_periodic(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &LyapunovConfig,
    initial: &StateVector,
    tau0: f64,
) -> Result<LyapunovEstimate> {
    tangent_estimate(params, drive, config, initial, tau0)
}

fn tangent_estimate(
    params: &SystemParams,
    drive: &DriveSpec,
    config: &LyapunovConfig,
    initial: &StateVector,
    tau0: f64,
) -> Result<LyapunovEstimate> {
    config.validate()?;
    let model = Model::checked(params, drive)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { tau: tau0 });
    }
    let mut stepper = config.stepper();

    let mut x = initial.to_flat();
    let t_launch = tau0 + config.t_transient;
    stepper.advance(&model, tau0, &mut x, t_launch)?;

    let mut y = [0.0; 2 * DIM];
    y[..DIM].copy_from_slice(&x);
    y[DIM..].copy_from_slice(&initial_tangent());

    let flow = TangentFlow(&model);
    let n = config.renorm_count();
    let mut history = Vec::with_capacity(n);
    let mut log_sum = 0.0;
    let mut t = t_launch;
    for k in 1..=n {
        let t_next = t_launch + k as f64 * config.t_renorm;
        stepper.advance(&flow, t, &mut y, t_next)?;
        t = t_next;
        let log_norm = renormalize(&mut y[DIM..]);
        if !log_norm.is_finite() {
            return Err(Error::Divergence { tau: t });
        }
        log_sum += log_norm;
        history.push(log_sum / (k as f64 * config.t_renorm));
    }

    let tail = &history[history.len() - (history.len() / 4).max(1)..];
    let converged = sample_std(tail) < config.conv_tol;
    Ok(LyapunovEstimate {
        lambda_max: *history.last().expect("at least one renormalization"),
        history,
        converged,
        window: (config.t_transient, n as f64 * config.t_renorm),
    })
}

/// Largest real part of the eigenvalues of the constant Jacobian of the
/// affine (G = 0) flow.
pub fn linear_lambda_oracle(params: &SystemParams, drive: &DriveSpec) -> Result<f64> {
    if params.g_om != 0.0 {
        return Err(Error::Precondition(format!(
            "linear oracle requires g_om = 0, got {}",
            params.g_om
        )));
    }
    let model = Model::checked(params, drive)?;
    let jac = model.jacobian_matrix(&[0.0; DIM]);
    Ok(jac
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}
