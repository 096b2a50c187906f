//! Bifurcation extrema, power spectra, phase labels and the structural
//! metrics S (symmetry) and C (chirality) over λ_max arrays.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;

/// Thresholds used to turn a trajectory and λ_max into a phase label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// λ_max above this counts as chaotic.
    pub lambda_chaos_tol: f64,
    /// Extrema closer than this fraction of the largest extremum magnitude
    /// belong to the same cluster.
    pub cluster_eps_rel: f64,
    /// Relative variance of q below which the run is stationary.
    pub var_eps: f64,
    /// Spectral flatness of q above which the spectrum counts as broadband.
    pub flatness_chaos: f64,
    /// Upper edge of the flatness band, in units of Ω.
    pub flatness_band: f64,
    /// Cluster count treated as "infinitely many" scatter points.
    pub n_chaos_clusters: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            lambda_chaos_tol: 0.01,
            cluster_eps_rel: 1e-3,
            var_eps: 1e-12,
            flatness_chaos: 0.2,
            flatness_band: 8.0,
            n_chaos_clusters: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Stationary,
    SelfOscillation,
    PeriodDoubling,
    Chaos,
}

impl Phase {
    pub fn is_chaotic(self) -> bool {
        self == Phase::Chaos
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Stationary => "stationary",
            Phase::SelfOscillation => "self_oscillation",
            Phase::PeriodDoubling => "period_doubling",
            Phase::Chaos => "chaos",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stationary" => Ok(Phase::Stationary),
            "self_oscillation" => Ok(Phase::SelfOscillation),
            "period_doubling" => Ok(Phase::PeriodDoubling),
            "chaos" => Ok(Phase::Chaos),
            other => Err(Error::Config(format!("unknown phase label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabel {
    pub label: Phase,
    pub lambda_max: f64,
    /// Number of distinct extrema clusters of q.
    pub n_clusters: usize,
    /// Spectral flatness of q over (0, flatness_band].
    pub flatness: f64,
    /// Set when λ_max and the spectrum disagree.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSlice {
    pub control_value: f64,
    pub extrema: Vec<f64>,
}

/// Local maxima of q over the recorded window, sorted ascending.
///
/// Each strict discrete maximum is refined with a parabola through the three
/// neighbouring samples so the value does not depend on where the sampling
/// grid happens to fall relative to the true peak.
pub fn extract_extrema(trajectory: &Trajectory) -> Result<Vec<f64>> {
    local_maxima(&trajectory.q)
}

pub fn local_maxima(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if series.len() < 3 {
        return Err(Error::SeriesTooShort {
            needed: 3,
            got: series.len(),
        });
    }
    let mut out: Vec<f64> = series
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2])
        .map(|w| {
            let curv = w[0] - 2.0 * w[1] + w[2];
            let slope = w[2] - w[0];
            // vertex of the interpolating parabola; curv < 0 at a strict max
            w[1] - slope * slope / (8.0 * curv)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Group sorted values into clusters separated by gaps larger than `eps`.
/// Returns (center, count) per cluster.
pub fn cluster_values(sorted: &[f64], eps: f64) -> Vec<(f64, usize)> {
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut prev = f64::NAN;
    for &v in sorted {
        if count > 0 && v - prev > eps {
            clusters.push((sum / count as f64, count));
            sum = 0.0;
            count = 0;
        }
        sum += v;
        count += 1;
        prev = v;
    }
    if count > 0 {
        clusters.push((sum / count as f64, count));
    }
    clusters
}

/// Cluster extrema using eps = `cluster_eps_rel` × max |extremum|.
pub fn count_clusters(extrema: &[f64], cluster_eps_rel: f64) -> usize {
    let scale = extrema.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    cluster_values(extrema, cluster_eps_rel * scale).len()
}

pub fn bifurcation_slice(control_value: f64, trajectory: &Trajectory) -> Result<BifurcationSlice> {
    Ok(BifurcationSlice {
        control_value,
        extrema: extract_extrema(trajectory)?,
    })
}

/// One-sided magnitude spectrum with the mean removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Angular frequencies in units of Ω.
    pub freqs: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Ratio of geometric to arithmetic mean of the magnitudes in (0, band].
    pub fn flatness(&self, band: f64) -> f64 {
        let vals: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.magnitudes)
            .filter(|(f, _)| **f > 0.0 && **f <= band)
            .map(|(_, m)| *m)
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        let arith = vals.iter().sum::<f64>() / vals.len() as f64;
        if arith <= 0.0 {
            return 0.0;
        }
        if vals.iter().any(|m| *m <= 0.0) {
            return 0.0;
        }
        let geo = (vals.iter().map(|m| m.ln()).sum::<f64>() / vals.len() as f64).exp();
        geo / arith
    }

    /// Frequency of the largest non-DC bin.
    pub fn peak_frequency(&self) -> Option<f64> {
        self.freqs
            .iter()
            .zip(&self.magnitudes)
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
    }
}

pub const MIN_SPECTRUM_LEN: usize = 256;

/// Magnitude spectrum |X_k|/N of a uniformly sampled real series.
pub fn power_spectrum(series: &[f64], sample_dt: f64) -> Result<Spectrum> {
    if series.len() < MIN_SPECTRUM_LEN {
        return Err(Error::SeriesTooShort {
            needed: MIN_SPECTRUM_LEN,
            got: series.len(),
        });
    }
    if !(sample_dt.is_finite() && sample_dt > 0.0) {
        return Err(Error::NonUniformSampling(format!(
            "sample_dt must be > 0, got {sample_dt}"
        )));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let half = n / 2;
    let df = 2.0 * std::f64::consts::PI / (n as f64 * sample_dt);
    Ok(Spectrum {
        freqs: (0..=half).map(|k| k as f64 * df).collect(),
        magnitudes: buf[..=half].iter().map(|c| c.norm() / n as f64).collect(),
    })
}

/// Spectrum of a series given with explicit sample times, which must be
/// uniformly spaced.
pub fn power_spectrum_sampled(taus: &[f64], series: &[f64]) -> Result<Spectrum> {
    if taus.len() != series.len() {
        return Err(Error::LengthMismatch {
            left: taus.len(),
            right: series.len(),
        });
    }
    if taus.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: MIN_SPECTRUM_LEN,
            got: taus.len(),
        });
    }
    let dt = (taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64;
    for (k, w) in taus.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::NonUniformSampling(format!(
                "step {k} is {step}, expected {dt}"
            )));
        }
    }
    power_spectrum(series, dt)
}

fn relative_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var / mean.powi(2).max(1.0)
}

/// Assign a phase label from a recorded trajectory and its λ_max.
pub fn classify(trajectory: &Trajectory, lambda_max: f64, th: &Thresholds) -> Result<PhaseLabel> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let q = &trajectory.q;
    let flatness = if q.len() >= MIN_SPECTRUM_LEN && trajectory.sample_dt > 0.0 {
        power_spectrum(q, trajectory.sample_dt)?.flatness(th.flatness_band)
    } else {
        0.0
    };

    if lambda_max > th.lambda_chaos_tol {
        let n_clusters = if q.len() >= 3 {
            count_clusters(&extract_extrema(trajectory)?, th.cluster_eps_rel)
        } else {
            0
        };
        let diagnostic = (flatness <= th.flatness_chaos).then(|| {
            format!(
                "lambda_max {lambda_max:.4} above tolerance but spectral flatness {flatness:.4} is discrete"
            )
        });
        return Ok(PhaseLabel {
            label: Phase::Chaos,
            lambda_max,
            n_clusters,
            flatness,
            diagnostic,
        });
    }

    if relative_variance(q) < th.var_eps {
        return Ok(PhaseLabel {
            label: Phase::Stationary,
            lambda_max,
            n_clusters: 0,
            flatness,
            diagnostic: None,
        });
    }

    let n_clusters = if q.len() >= 3 {
        count_clusters(&extract_extrema(trajectory)?, th.cluster_eps_rel)
    } else {
        0
    };
    let (label, diagnostic) = match n_clusters {
        0 => (
            Phase::Stationary,
            Some("no local maxima in the recorded window".to_string()),
        ),
        1 => (Phase::SelfOscillation, None),
        n if n > th.n_chaos_clusters => (
            Phase::PeriodDoubling,
            Some(format!(
                "{n} extrema clusters but lambda_max {lambda_max:.4} below tolerance"
            )),
        ),
        _ => (Phase::PeriodDoubling, None),
    };
    Ok(PhaseLabel {
        label,
        lambda_max,
        n_clusters,
        flatness,
        diagnostic,
    })
}

/// Port-1 and port-2 λ_max arrays over the same control grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrumPair {
    pub controls: Vec<f64>,
    pub lambda_1: Vec<f64>,
    pub lambda_2: Vec<f64>,
}

impl LyapunovSpectrumPair {
    pub fn new(controls: Vec<f64>, lambda_1: Vec<f64>, lambda_2: Vec<f64>) -> Result<Self> {
        if lambda_1.len() != lambda_2.len() {
            return Err(Error::LengthMismatch {
                left: lambda_1.len(),
                right: lambda_2.len(),
            });
        }
        if controls.len() != lambda_1.len() {
            return Err(Error::LengthMismatch {
                left: controls.len(),
                right: lambda_1.len(),
            });
        }
        Ok(Self {
            controls,
            lambda_1,
            lambda_2,
        })
    }

    /// Pair built from bare arrays with index controls 0..N.
    pub fn from_arrays(lambda_1: &[f64], lambda_2: &[f64]) -> Result<Self> {
        Self::new(
            (0..lambda_1.len()).map(|i| i as f64).collect(),
            lambda_1.to_vec(),
            lambda_2.to_vec(),
        )
    }
}

/// |x − y| / (|x| + |y|), with 0/0 := 0.
#[inline]
fn dissimilarity(x: f64, y: f64) -> f64 {
    let den = x.abs() + y.abs();
    if den == 0.0 {
        0.0
    } else {
        (x - y).abs() / den
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Precondition("metric needs N >= 1".into()));
    }
    Ok(())
}

/// Symmetry metric: 1 − mean_i |λᵢ − Λᵢ| / (|λᵢ| + |Λᵢ|).
pub fn metric_s(pair: &LyapunovSpectrumPair) -> Result<f64> {
    symmetry(&pair.lambda_1, &pair.lambda_2)
}

/// Chirality metric: 1 − mean_i |λᵢ − Λ_{N−i+1}| / (|λᵢ| + |Λ_{N−i+1}|).
pub fn metric_c(pair: &LyapunovSpectrumPair) -> Result<f64> {
    chirality(&pair.lambda_1, &pair.lambda_2)
}

pub fn symmetry(lambda: &[f64], big_lambda: &[f64]) -> Result<f64> {
    check_pair(lambda, big_lambda)?;
    let n = lambda.len() as f64;
    let total: f64 = lambda
        .iter()
        .zip(big_lambda)
        .map(|(x, y)| dissimilarity(*x, *y))
        .sum();
    Ok(1.0 - total / n)
}

pub fn chirality(lambda: &[f64], big_lambda: &[f64]) -> Result<f64> {
    check_pair(lambda, big_lambda)?;
    let n = lambda.len() as f64;
    let total: f64 = lambda
        .iter()
        .zip(big_lambda.iter().rev())
        .map(|(x, y)| dissimilarity(*x, *y))
        .sum();
    Ok(1.0 - total / n)
}
