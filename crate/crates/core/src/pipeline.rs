//! One simulate-then-classify pass shared by the sweep, window and sensing
//! code.

use serde::{Deserialize, Serialize};

use crate::analysis::{classify, PhaseLabel, Thresholds};
use crate::error::Result;
use crate::integrator::{
    integrate_from, max_intensity, IntegrationConfig, Method, Stepper, Trajectory,
};
use crate::lyapunov::{max_lyapunov_periodic, LyapunovConfig};
use crate::model::{DriveSpec, Model, StateVector, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub integration: IntegrationConfig,
    pub lyapunov: LyapunovConfig,
    pub thresholds: Thresholds,
}

impl RunSettings {
    /// Fixed-step settings with a shorter averaging window; used for scans
    /// where many points must be classified.
    pub fn fast() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let dt = two_pi / 400.0;
        Self {
            integration: IntegrationConfig {
                method: Method::Rk4Fixed,
                dt,
                ..IntegrationConfig::default()
            },
            lyapunov: LyapunovConfig {
                method: Method::Rk4Fixed,
                dt,
                t_average: 1000.0 * two_pi,
                ..LyapunovConfig::default()
            },
            thresholds: Thresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.integration.validate()?;
        self.lyapunov.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub phase: PhaseLabel,
    pub lambda_converged: bool,
    pub i_a_max: f64,
    /// State at the end of the transient, where recording and the tangent
    /// vector both start.
    pub settled: StateVector,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// Run the transient once, then record the trajectory and estimate λ_max
/// from the same settled state.
///
/// `integration.t_transient` is the only transient; the λ estimate starts
/// directly from the settled state.
pub fn simulate_and_classify(
    params: &SystemParams,
    drive: &DriveSpec,
    settings: &RunSettings,
    initial: &StateVector,
    tau0: f64,
    keep_trajectory: bool,
) -> Result<Classified> {
    settings.validate()?;
    let model = Model::checked(params, drive)?;
    let cfg = &settings.integration;

    let mut x = initial.to_flat();
    let t_settled = tau0 + cfg.t_transient;
    Stepper::new(cfg).advance(&model, tau0, &mut x, t_settled)?;
    let settled = StateVector::from_flat(&x);

    let record_cfg = IntegrationConfig {
        t_transient: 0.0,
        ..*cfg
    };
    let trajectory = integrate_from(params, drive, &record_cfg, &settled, t_settled)?;
    let lyap_cfg = LyapunovConfig {
        t_transient: 0.0,
        ..settings.lyapunov
    };
    let estimate = max_lyapunov_periodic(params, drive, &lyap_cfg, &settled, t_settled)?;
    let phase = classify(&trajectory, estimate.lambda_max, &settings.thresholds)?;
    Ok(Classified {
        phase,
        lambda_converged: estimate.converged,
        i_a_max: max_intensity(&trajectory)?,
        settled,
        trajectory: keep_trajectory.then_some(trajectory),
    })
}

/// Convenience wrapper starting from the all-zero state at τ = 0.
pub fn classify_point(
    params: &SystemParams,
    drive: &DriveSpec,
    settings: &RunSettings,
) -> Result<Classified> {
    simulate_and_classify(params, drive, settings, &StateVector::zero(), 0.0, false)
}

/// A scalar knob that a scan, window or sweep axis can move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    /// φ in radians.
    Phi,
    /// φ in units of π.
    PhiOverPi,
    XiMag,
    /// Pump amplitude ε.
    Eps,
    /// Both detunings Δ_A = Δ_B.
    Delta,
    DeltaA,
    DeltaB,
    JCoupling,
    Eta,
    /// Signal amplitude δε.
    DEps,
    /// Signal detuning δω.
    DOmega,
    /// Signal phase θ.
    Theta,
}

impl Control {
    pub fn apply(self, params: &mut SystemParams, drive: &mut DriveSpec, value: f64) {
        match self {
            Control::Phi => params.phi = value,
            Control::PhiOverPi => params.phi = value * std::f64::consts::PI,
            Control::XiMag => params.xi_mag = value,
            Control::Eps => drive.eps = value,
            Control::Delta => {
                params.delta_a = value;
                params.delta_b = value;
            }
            Control::DeltaA => params.delta_a = value,
            Control::DeltaB => params.delta_b = value,
            Control::JCoupling => params.j_coupling = value,
            Control::Eta => params.eta = value,
            Control::DEps => drive.d_eps = value,
            Control::DOmega => drive.d_omega = value,
            Control::Theta => drive.theta = value,
        }
    }

    /// Copies of `params` and `drive` with the control set to `value`.
    pub fn applied(
        self,
        params: &SystemParams,
        drive: &DriveSpec,
        value: f64,
    ) -> (SystemParams, DriveSpec) {
        let (mut p, mut d) = (*params, *drive);
        self.apply(&mut p, &mut d, value);
        (p, d)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Control::Phi => "phi",
            Control::PhiOverPi => "phi_over_pi",
            Control::XiMag => "xi_mag",
            Control::Eps => "eps",
            Control::Delta => "delta",
            Control::DeltaA => "delta_a",
            Control::DeltaB => "delta_b",
            Control::JCoupling => "j_coupling",
            Control::Eta => "eta",
            Control::DEps => "d_eps",
            Control::DOmega => "d_omega",
            Control::Theta => "theta",
        }
    }
}

impl std::fmt::Display for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `n` points from `lo` to `hi` inclusive. Written so that a range symmetric
/// about zero yields exactly negated values at mirrored indices.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let m = (n - 1) as f64;
            (0..n)
                .map(|k| (lo * (n - 1 - k) as f64 + hi * k as f64) / m)
                .collect()
        }
    }
}
