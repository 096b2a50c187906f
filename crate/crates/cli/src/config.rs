use std::path::Path;

use chiral_chaos::analytic::TipConfig;
use chiral_chaos::model::{DriveSpec, SystemParams};
use chiral_chaos::pipeline::{Control, RunSettings};
use chiral_chaos::sensing::{SecondAxis, SensingConfig, WindowSpec};
use chiral_chaos::sweep::Axis;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a command reads. Every field is optional; missing sections
/// fall back to the device defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub params: SystemParams,
    pub drive: DriveSpec,
    pub settings: RunSettings,
    /// Scan axes (at most two). Empty means a single point.
    pub axes: Vec<Axis>,
    pub window: Option<WindowSpec>,
    pub sensing: Option<SenseSection>,
    pub tipmap: TipConfig,
    pub metrics: Option<MetricsInput>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: SystemParams::default(),
            drive: DriveSpec::default(),
            settings: RunSettings::default(),
            axes: vec![],
            window: None,
            sensing: None,
            tipmap: TipConfig::default(),
            metrics: None,
        }
    }
}

/// A window given directly by its two critical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedWindow {
    pub control: Control,
    pub crit_port1: f64,
    pub crit_port2: f64,
    #[serde(default)]
    pub working_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenseSection {
    /// Use these critical values instead of locating them with `window`.
    #[serde(default)]
    pub fixed_window: Option<FixedWindow>,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    pub second_axis: SecondAxis,
    pub axis_min: f64,
    pub axis_max: f64,
    pub axis_count: usize,
    /// Signal component held fixed while the other one is scanned.
    #[serde(default)]
    pub d_eps: f64,
    #[serde(default)]
    pub d_omega: f64,
    #[serde(default)]
    pub config: SensingConfig,
}

fn default_n_theta() -> usize {
    16
}

/// Precomputed λ arrays for the two ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsInput {
    pub lambda_port1: Vec<f64>,
    pub lambda_port2: Vec<f64>,
}

const PRESETS: &[(&str, &str)] = &[
    (
        "chaotic-trace",
        include_str!("../presets/chaotic-trace.json"),
    ),
    ("phase-phi", include_str!("../presets/phase-phi.json")),
    ("phase-phi-xi", include_str!("../presets/phase-phi-xi.json")),
    (
        "bifurcation-phi",
        include_str!("../presets/bifurcation-phi.json"),
    ),
    ("steady-phi", include_str!("../presets/steady-phi.json")),
    ("window-phi", include_str!("../presets/window-phi.json")),
    (
        "window-surface",
        include_str!("../presets/window-surface.json"),
    ),
    ("sense-deps", include_str!("../presets/sense-deps.json")),
    (
        "sense-deps-offset",
        include_str!("../presets/sense-deps-offset.json"),
    ),
    ("sense-domega", include_str!("../presets/sense-domega.json")),
    ("tipmap", include_str!("../presets/tipmap.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{origin}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.params
            .validated()
            .and_then(|_| cfg.drive.validated())
            .and_then(|_| cfg.settings.validate())
            .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset {name:?}; available: {}",
                preset_names().join(", ")
            ))
        })?;
        Self::parse(text, &format!("preset {name}"))
    }
}
