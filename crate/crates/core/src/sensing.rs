//! Chaos-assisted detection: port-wise critical points, the window they
//! bound, and signal trials run from a settled baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriveSpec, Port, StateVector, SystemParams};
use crate::pipeline::{simulate_and_classify, Classified, Control, RunSettings};

const HBAR: f64 = 1.054_571_817e-34;

/// Effective amplitude and phase of pump plus signal at time τ, such that the
/// envelope equals eps_tot · e^{−i θ_tot}.
pub fn compose_drive(eps: f64, d_eps: f64, d_omega: f64, theta: f64, tau: f64) -> (f64, f64) {
    let arg = d_omega * tau + theta;
    let eps_tot = (eps * eps + d_eps * d_eps + 2.0 * eps * d_eps * arg.cos())
        .max(0.0)
        .sqrt();
    let theta_tot = (d_eps * arg.sin()).atan2(eps + d_eps * arg.cos());
    (eps_tot, theta_tot)
}

/// Signal amplitude δε/Ω for a detected power `power` (W) at angular
/// frequency `omega_signal` (rad/s), external coupling `kappa0` (1/s) and
/// normalization frequency `omega_m` (rad/s).
pub fn signal_amplitude(power: f64, omega_signal: f64, kappa0: f64, omega_m: f64) -> Result<f64> {
    for (name, v) in [
        ("omega_signal", omega_signal),
        ("kappa0", kappa0),
        ("omega_m", omega_m),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be finite and > 0, got {v}"),
            });
        }
    }
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "power",
            reason: format!("must be finite and >= 0, got {power}"),
        });
    }
    Ok((kappa0 * power / (HBAR * omega_signal)).sqrt() / omega_m)
}

/// Locate a chaos/order boundary of `is_chaotic` in [lo, hi] by bisection to
/// within `resolution`; returns the midpoint of the final bracket.
pub fn bisect_transition<F>(lo: f64, hi: f64, resolution: f64, mut is_chaotic: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less)
        || resolution.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
    {
        return Err(Error::InvalidParameter {
            name: "range/resolution",
            reason: format!("need lo < hi and resolution > 0, got [{lo}, {hi}], {resolution}"),
        });
    }
    let at_lo = is_chaotic(lo)?;
    let at_hi = is_chaotic(hi)?;
    if at_lo == at_hi {
        return Err(Error::NoTransition {
            lo,
            hi,
            label: if at_lo { "chaos" } else { "ordered" }.into(),
        });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > resolution {
        let mid = 0.5 * (a + b);
        if is_chaotic(mid)? == at_lo {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Critical control value where the pumped port's dynamics switch between
/// chaos and order.
pub fn find_transition(
    params: &SystemParams,
    drive: &DriveSpec,
    control: Control,
    range: (f64, f64),
    resolution: f64,
    settings: &RunSettings,
) -> Result<f64> {
    bisect_transition(range.0, range.1, resolution, |v| {
        let (p, d) = control.applied(params, drive, v);
        Ok(
            simulate_and_classify(&p, &d, settings, &StateVector::zero(), 0.0, false)?
                .phase
                .label
                .is_chaotic(),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub control: Control,
    pub range: (f64, f64),
    pub resolution: f64,
    /// Working point; the window center when absent.
    #[serde(default)]
    pub working_point: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub control: Control,
    pub crit_port1: f64,
    pub crit_port2: f64,
    /// Half-width D = |crit_port1 − crit_port2| / 2.
    pub half_width: f64,
    /// (crit_port1 + crit_port2) / 2
    pub position: f64,
    pub working_point: f64,
}

impl Window {
    pub fn from_criticals(
        control: Control,
        crit_port1: f64,
        crit_port2: f64,
        working_point: Option<f64>,
    ) -> Self {
        let position = 0.5 * (crit_port1 + crit_port2);
        Self {
            control,
            crit_port1,
            crit_port2,
            half_width: 0.5 * (crit_port1 - crit_port2).abs(),
            position,
            working_point: working_point.unwrap_or(position),
        }
    }

    /// Both ports switch at the same point, so there is no window.
    pub fn is_degenerate(&self) -> bool {
        self.half_width == 0.0
    }

    /// Parameters and drive at the working point.
    pub fn operating_point(
        &self,
        params: &SystemParams,
        drive: &DriveSpec,
    ) -> (SystemParams, DriveSpec) {
        self.control.applied(params, drive, self.working_point)
    }
}

pub fn build_window(
    params: &SystemParams,
    drive: &DriveSpec,
    spec: &WindowSpec,
    settings: &RunSettings,
) -> Result<Window> {
    let crit = |port: Port| {
        find_transition(
            params,
            &drive.with_port(port),
            spec.control,
            spec.range,
            spec.resolution,
            settings,
        )
    };
    Ok(Window::from_criticals(
        spec.control,
        crit(Port::Port1)?,
        crit(Port::Port2)?,
        spec.working_point,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Conventional detection through port 2 only.
    SinglePort,
    /// Either port may register the signal.
    DualPort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub settings: RunSettings,
    /// Time after signal onset discarded before classification.
    pub t_settle: f64,
    /// Relative change of max I_A counted as a detectable amplitude change.
    pub amp_change_tol: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            settings: RunSettings::default(),
            t_settle: 500.0 * 2.0 * std::f64::consts::PI,
            amp_change_tol: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub d_eps: f64,
    pub d_omega: f64,
    pub theta: f64,
}

/// Unperturbed run at the working point for one port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub port: Port,
    pub run: Classified,
}

pub fn baseline(
    params: &SystemParams,
    drive: &DriveSpec,
    port: Port,
    cfg: &SensingConfig,
) -> Result<Baseline> {
    let drive = DriveSpec {
        port,
        d_eps: 0.0,
        ..*drive
    };
    Ok(Baseline {
        port,
        run: simulate_and_classify(
            params,
            &drive,
            &cfg.settings,
            &StateVector::zero(),
            0.0,
            false,
        )?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingOutcome {
    pub port: Port,
    pub transition_induced: bool,
    pub amplitude_changed: bool,
    /// Change of max I_A relative to the baseline (absolute).
    pub delta_i_a: f64,
    pub success: bool,
    pub baseline_label: String,
    pub trial_label: String,
    pub trial_lambda: f64,
}

/// Apply the signal from the baseline's settled state (τ restarts at 0 at
/// signal onset) and compare against the baseline.
pub fn trial_port(
    params: &SystemParams,
    drive: &DriveSpec,
    base: &Baseline,
    signal: &SignalSpec,
    cfg: &SensingConfig,
) -> Result<SensingOutcome> {
    let drive = DriveSpec {
        port: base.port,
        d_eps: signal.d_eps,
        d_omega: signal.d_omega,
        theta: signal.theta,
        ..*drive
    }
    .validated()?;
    let mut settings = cfg.settings;
    settings.integration.t_transient = cfg.t_settle;
    let run = simulate_and_classify(params, &drive, &settings, &base.run.settled, 0.0, false)?;
    let delta_i_a = run.i_a_max - base.run.i_a_max;
    let transition_induced = run.phase.label != base.run.phase.label;
    let amplitude_changed = delta_i_a.abs() > cfg.amp_change_tol * base.run.i_a_max.abs();
    Ok(SensingOutcome {
        port: base.port,
        transition_induced,
        amplitude_changed,
        delta_i_a,
        success: transition_induced && amplitude_changed,
        baseline_label: base.run.phase.label.to_string(),
        trial_label: run.phase.label.to_string(),
        trial_lambda: run.phase.lambda_max,
    })
}

/// Outcomes of one signal applied through each port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortOutcomes {
    pub port1: SensingOutcome,
    pub port2: SensingOutcome,
}

impl PortOutcomes {
    pub fn success(&self, protocol: Protocol) -> bool {
        match protocol {
            Protocol::SinglePort => self.port2.success,
            Protocol::DualPort => self.port1.success || self.port2.success,
        }
    }

    /// Outcome that decides the protocol's result.
    pub fn decisive(&self, protocol: Protocol) -> &SensingOutcome {
        match protocol {
            Protocol::SinglePort => &self.port2,
            Protocol::DualPort if self.port1.success && !self.port2.success => &self.port1,
            Protocol::DualPort => &self.port2,
        }
    }
}

/// Baselines at the working point of `window` for both ports.
pub fn baselines(
    params: &SystemParams,
    drive: &DriveSpec,
    window: &Window,
    cfg: &SensingConfig,
) -> Result<[Baseline; 2]> {
    let (p, d) = window.operating_point(params, drive);
    Ok([
        baseline(&p, &d, Port::Port1, cfg)?,
        baseline(&p, &d, Port::Port2, cfg)?,
    ])
}

pub fn run_ports(
    params: &SystemParams,
    drive: &DriveSpec,
    window: &Window,
    bases: &[Baseline; 2],
    signal: &SignalSpec,
    cfg: &SensingConfig,
) -> Result<PortOutcomes> {
    let (p, d) = window.operating_point(params, drive);
    Ok(PortOutcomes {
        port1: trial_port(&p, &d, &bases[0], signal, cfg)?,
        port2: trial_port(&p, &d, &bases[1], signal, cfg)?,
    })
}

/// One trial under `protocol`, including its own baselines.
pub fn run_trial(
    params: &SystemParams,
    drive: &DriveSpec,
    window: &Window,
    signal: &SignalSpec,
    protocol: Protocol,
    cfg: &SensingConfig,
) -> Result<SensingOutcome> {
    let (p, d) = window.operating_point(params, drive);
    match protocol {
        Protocol::SinglePort => {
            let base = baseline(&p, &d, Port::Port2, cfg)?;
            trial_port(&p, &d, &base, signal, cfg)
        }
        Protocol::DualPort => {
            let bases = baselines(params, drive, window, cfg)?;
            let out = run_ports(params, drive, window, &bases, signal, cfg)?;
            Ok(out.decisive(protocol).clone())
        }
    }
}

/// Second grid axis of a success-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondAxis {
    DEps,
    DOmega,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingRow {
    pub theta: f64,
    pub second_axis: f64,
    pub port1_success: bool,
    pub port2_success: bool,
    pub dual_success: bool,
    pub delta_i_a_1: f64,
    pub delta_i_a_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingSummary {
    pub window: Window,
    pub baseline_labels: [String; 2],
    pub rows: Vec<SensingRow>,
    pub single_port_rate: f64,
    pub dual_port_rate: f64,
}

impl SensingSummary {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "theta",
            "second_axis",
            "port1_success",
            "port2_success",
            "dual_success",
            "delta_i_a_1",
            "delta_i_a_2",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{:?}", r.theta),
                format!("{:?}", r.second_axis),
                r.port1_success.to_string(),
                r.port2_success.to_string(),
                r.dual_success.to_string(),
                format!("{:?}", r.delta_i_a_1),
                format!("{:?}", r.delta_i_a_2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of (θ, second-axis) grid points where each protocol succeeds.
/// `fixed` supplies the signal component not on the second axis.
#[allow(clippy::too_many_arguments)]
pub fn success_rate_sweep(
    params: &SystemParams,
    drive: &DriveSpec,
    window: &Window,
    thetas: &[f64],
    axis: SecondAxis,
    axis_values: &[f64],
    fixed: &SignalSpec,
    cfg: &SensingConfig,
) -> Result<SensingSummary> {
    if thetas.is_empty() || axis_values.is_empty() {
        return Err(Error::InvalidParameter {
            name: "thetas/axis_values",
            reason: "sweep grid must be non-empty".into(),
        });
    }
    let bases = baselines(params, drive, window, cfg)?;
    let grid: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&t| axis_values.iter().map(move |&v| (t, v)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(theta, v)| {
            let signal = match axis {
                SecondAxis::DEps => SignalSpec {
                    d_eps: v,
                    theta,
                    ..*fixed
                },
                SecondAxis::DOmega => SignalSpec {
                    d_omega: v,
                    theta,
                    ..*fixed
                },
            };
            let out = run_ports(params, drive, window, &bases, &signal, cfg)?;
            Ok(SensingRow {
                theta,
                second_axis: v,
                port1_success: out.port1.success,
                port2_success: out.port2.success,
                dual_success: out.success(Protocol::DualPort),
                delta_i_a_1: out.port1.delta_i_a,
                delta_i_a_2: out.port2.delta_i_a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let single = rows.iter().filter(|r| r.port2_success).count() as f64 / n;
    let dual = rows.iter().filter(|r| r.dual_success).count() as f64 / n;
    Ok(SensingSummary {
        window: *window,
        baseline_labels: [
            bases[0].run.phase.label.to_string(),
            bases[1].run.phase.label.to_string(),
        ],
        rows,
        single_port_rate: single,
        dual_port_rate: dual,
    })
}

/// θ grid of `n` points covering [0, 2π).
pub fn theta_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64)
        .collect()
}
