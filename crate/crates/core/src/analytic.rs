//! Closed-form steady state of the linearized system and the mapping from
//! nanotip geometry to the effective coupling |ξ|e^{iφ}.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_phase, Port, SystemParams};
use crate::pipeline::linspace;

/// Relative size below which a denominator counts as zero.
const SINGULAR_REL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySolution {
    pub a_cw: Complex64,
    pub a_ccw: Complex64,
    pub b_cw: Complex64,
    pub b_ccw: Complex64,
    pub i_a: f64,
    pub i_b: f64,
    /// Mechanical displacement G·I_A implied by the optical solution.
    pub q: f64,
    /// Common prefactor ε² / |Δ̃² − (η + F e^{−iφ})(η + F e^{iφ})|².
    pub gain: f64,
}

/// Intermediate complex quantities of the steady-state solution.
#[derive(Debug, Clone, Copy)]
struct Reduced {
    /// (Δ_B − iγ)
    detuned_b: Complex64,
    /// (Δ_B − iγ)² − |ξ|²
    b_den: Complex64,
    /// Effective A-mode detuning with the B-mode dressing folded in.
    dressed: Complex64,
    /// η + F e^{−iφ}
    back_minus: Complex64,
    /// η + F e^{iφ}
    back_plus: Complex64,
    /// dressed² − back_minus·back_plus
    a_den: Complex64,
}

fn reduce(p: &SystemParams) -> Result<Reduced> {
    let detuned_b = Complex64::new(p.delta_b, -p.gamma);
    let b_den = detuned_b * detuned_b - p.xi_mag * p.xi_mag;
    let b_scale = detuned_b.norm_sqr() + p.xi_mag * p.xi_mag;
    if b_den.norm() <= SINGULAR_REL * b_scale {
        return Err(Error::Singular(format!(
            "(delta_b - i gamma)^2 = |xi|^2 at delta_b = {}, gamma = {}, |xi| = {}",
            p.delta_b, p.gamma, p.xi_mag
        )));
    }
    let j2 = p.j_coupling * p.j_coupling;
    // F = J²|ξ| / b_den, and F(Δ_B − iγ)/|ξ| = J²(Δ_B − iγ)/b_den stays finite at |ξ| = 0.
    let f = j2 * p.xi_mag / b_den;
    let dressed = Complex64::new(p.delta_a, -p.kappa) - j2 * detuned_b / b_den;
    let e_phi = Complex64::from_polar(1.0, p.phi);
    let back_minus = p.eta + f * e_phi.conj();
    let back_plus = p.eta + f * e_phi;
    let a_den = dressed * dressed - back_minus * back_plus;
    let a_scale = dressed.norm_sqr() + back_minus.norm() * back_plus.norm();
    if a_den.norm() <= SINGULAR_REL * a_scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!(
            "A-mode determinant vanishes (|den| = {:e})",
            a_den.norm()
        )));
    }
    Ok(Reduced {
        detuned_b,
        b_den,
        dressed,
        back_minus,
        back_plus,
        a_den,
    })
}

/// Steady state for a constant pump of amplitude `eps` into `port`, with the
/// optomechanical frequency shift neglected in the optical equations.
pub fn steady_state(params: &SystemParams, port: Port, eps: f64) -> Result<SteadySolution> {
    let p = params.validated()?;
    if !eps.is_finite() {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("must be finite, got {eps}"),
        });
    }
    let r = reduce(&p)?;
    let (e1, e2) = match port {
        Port::Port1 => (eps, 0.0),
        Port::Port2 => (0.0, eps),
    };
    let i = Complex64::i();
    let a_cw = -i * (e1 * r.dressed + e2 * r.back_minus) / r.a_den;
    let a_ccw = -i * (e2 * r.dressed + e1 * r.back_plus) / r.a_den;
    let xi_plus = Complex64::from_polar(p.xi_mag, p.phi);
    let b_cw = p.j_coupling * (xi_plus * a_cw + r.detuned_b * a_ccw) / r.b_den;
    let b_ccw = p.j_coupling * (xi_plus.conj() * a_ccw + r.detuned_b * a_cw) / r.b_den;
    let i_a = a_cw.norm_sqr() + a_ccw.norm_sqr();
    Ok(SteadySolution {
        a_cw,
        a_ccw,
        b_cw,
        b_ccw,
        i_a,
        i_b: b_cw.norm_sqr() + b_ccw.norm_sqr(),
        q: p.g_om * i_a,
        gain: eps * eps / r.a_den.norm_sqr(),
    })
}

/// Port-2 minus port-1 steady A-intensity.
pub fn delta_intensity_steady(params: &SystemParams, eps: f64) -> Result<f64> {
    Ok(steady_state(params, Port::Port2, eps)?.i_a - steady_state(params, Port::Port1, eps)?.i_a)
}

/// Closed form ΔI_A = g·(|η + F e^{−iφ}|² − |η + F e^{iφ}|²), evaluated
/// independently of the mode amplitudes.
pub fn delta_intensity_closed_form(params: &SystemParams, eps: f64) -> Result<f64> {
    let p = params.validated()?;
    let r = reduce(&p)?;
    let gain = eps * eps / r.a_den.norm_sqr();
    Ok(gain * (r.back_minus.norm_sqr() - r.back_plus.norm_sqr()))
}

/// Residuals of the steady-state equations (optical part with the
/// optomechanical shift dropped, mechanical part in full), normalized by the
/// largest term of each equation.
pub fn steady_residual(params: &SystemParams, port: Port, eps: f64, s: &SteadySolution) -> f64 {
    let p = params;
    let i = Complex64::i();
    let (e1, e2) = match port {
        Port::Port1 => (eps, 0.0),
        Port::Port2 => (0.0, eps),
    };
    let decay_a = Complex64::new(-p.kappa, -p.delta_a);
    let decay_b = Complex64::new(-p.gamma, -p.delta_b);
    let xp = Complex64::from_polar(p.xi_mag, p.phi);
    let xm = xp.conj();
    let rel = |terms: &[Complex64]| {
        let sum: Complex64 = terms.iter().sum();
        let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            0.0
        } else {
            sum.norm() / scale
        }
    };
    let r1 = rel(&[
        decay_a * s.a_cw,
        i * p.eta * s.a_ccw,
        i * p.j_coupling * s.b_ccw,
        e1.into(),
    ]);
    let r2 = rel(&[
        decay_a * s.a_ccw,
        i * p.eta * s.a_cw,
        i * p.j_coupling * s.b_cw,
        e2.into(),
    ]);
    let r3 = rel(&[
        decay_b * s.b_cw,
        i * xp * s.b_ccw,
        i * p.j_coupling * s.a_ccw,
    ]);
    let r4 = rel(&[
        decay_b * s.b_ccw,
        i * xm * s.b_cw,
        i * p.j_coupling * s.a_cw,
    ]);
    let force = p.g_om * s.i_a;
    let r5 = if force == 0.0 && s.q == 0.0 {
        0.0
    } else {
        (s.q - force).abs() / s.q.abs().max(force.abs())
    };
    [r1, r2, r3, r4, r5].into_iter().fold(0.0, f64::max)
}

/// Clausius–Mossotti polarizability 4πR³(n²−1)/(n²+2) of a sphere.
pub fn polarizability(radius: f64, refractive_index_sq: f64) -> f64 {
    4.0 * PI * radius.powi(3) * (refractive_index_sq - 1.0) / (refractive_index_sq + 2.0)
}

/// Physical constants and sampling ranges for the two-tip perturbation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TipConfig {
    /// Tip refractive index squared.
    pub refractive_index_sq: f64,
    /// Field distribution at each tip position.
    pub field_factor_1: f64,
    pub field_factor_2: f64,
    /// Mode volume of the B resonator in m³.
    pub mode_volume: f64,
    /// Speed of light in m/s.
    pub light_speed: f64,
    /// B-mode angular frequency in rad/s.
    pub omega_b: f64,
    /// Mechanical angular frequency used for normalization, rad/s.
    pub omega_m: f64,
    /// Intrinsic backscattering of the bare resonator, in units of Ω.
    pub xi0: Complex64,
    /// Azimuthal mode order.
    pub azimuthal_order: u32,
    /// Tip radius range in m (shared by both tips).
    pub radius_range: (f64, f64),
    /// Relative angular position range in rad.
    pub beta_range: (f64, f64),
    pub n_radius: usize,
    pub n_beta: usize,
    /// φ bins used when extracting the region boundary.
    pub boundary_bins: usize,
}

impl Default for TipConfig {
    fn default() -> Self {
        Self {
            refractive_index_sq: 3.9,
            field_factor_1: 0.3,
            field_factor_2: 0.3,
            mode_volume: 200e-18,
            light_speed: 3e8,
            omega_b: 2.0 * PI * 190e12,
            omega_m: 2.0 * PI * 20e6,
            xi0: Complex64::new(0.0, 0.0),
            azimuthal_order: 1,
            radius_range: (20e-9, 80e-9),
            beta_range: (-PI, PI),
            n_radius: 16,
            n_beta: 361,
            boundary_bins: 36,
        }
    }
}

impl TipConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("refractive_index_sq", self.refractive_index_sq),
            ("mode_volume", self.mode_volume),
            ("light_speed", self.light_speed),
            ("omega_b", self.omega_b),
            ("omega_m", self.omega_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(self.radius_range.0 > 0.0 && self.radius_range.1 >= self.radius_range.0) {
            return Err(Error::InvalidParameter {
                name: "radius_range",
                reason: format!("need 0 < min <= max, got {:?}", self.radius_range),
            });
        }
        if self.beta_range.1 < self.beta_range.0 {
            return Err(Error::InvalidParameter {
                name: "beta_range",
                reason: format!("need min <= max, got {:?}", self.beta_range),
            });
        }
        if self.n_radius == 0 || self.n_beta == 0 || self.boundary_bins == 0 {
            return Err(Error::InvalidParameter {
                name: "n_radius/n_beta/boundary_bins",
                reason: "grid sizes must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Same ranges with `factor`× more samples per axis (endpoints kept).
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_radius: (self.n_radius - 1) * factor + 1,
            n_beta: (self.n_beta - 1) * factor + 1,
            ..self.clone()
        }
    }
}

/// Tip-induced quantities, all in units of Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipDerived {
    pub radius_1: f64,
    pub radius_2: f64,
    pub beta: f64,
    /// |ξ|/Ω
    pub xi_mag: f64,
    pub phi: f64,
    /// Frequency shift δ/Ω.
    pub delta: f64,
    /// |ζ|/Ω
    pub zeta_mag: f64,
    pub theta_zeta: f64,
    /// Tip-induced linewidth γ_t/Ω.
    pub gamma_t: f64,
}

impl TipDerived {
    /// Smallest of |ξ|/|ζ| and δ/γ_t: each coherent term against its
    /// dissipative counterpart. Infinite when the counterpart vanishes.
    pub fn paired_separation(&self) -> f64 {
        let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
        ratio(self.xi_mag, self.zeta_mag).min(ratio(self.delta, self.gamma_t))
    }

    /// min(|ξ|, δ) / max(|ζ|, γ_t).
    pub fn cross_separation(&self) -> f64 {
        let den = self.zeta_mag.max(self.gamma_t);
        if den == 0.0 {
            f64::INFINITY
        } else {
            self.xi_mag.min(self.delta) / den
        }
    }
}

/// Map two tips (radii R₁, R₂, relative angle β) to the coupling terms.
pub fn tip_map(cfg: &TipConfig, radius_1: f64, radius_2: f64, beta: f64) -> Result<TipDerived> {
    cfg.validate()?;
    if !(radius_1 > 0.0 && radius_2 > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "radius/beta",
            reason: format!(
                "radii must be > 0 and beta finite, got {radius_1}, {radius_2}, {beta}"
            ),
        });
    }
    let chi1 = polarizability(radius_1, cfg.refractive_index_sq);
    let chi2 = polarizability(radius_2, cfg.refractive_index_sq);
    let f1 = cfg.field_factor_1 * cfg.field_factor_1;
    let f2 = cfg.field_factor_2 * cfg.field_factor_2;
    let phase = Complex64::from_polar(1.0, 2.0 * cfg.azimuthal_order as f64 * beta);
    let wb = cfg.omega_b;
    let vb = cfg.mode_volume;
    let norm = cfg.omega_m;

    let xi = cfg.xi0 + wb * (chi1 * f1 + chi2 * f2 * phase) / (2.0 * vb) / norm;
    let delta = wb * (chi1 * f1 + chi2 * f2) / (2.0 * vb) / norm;
    let rad = wb.powi(4) / (12.0 * PI * cfg.light_speed.powi(3) * vb) / norm;
    let zeta = rad * (chi1 * chi1 * f1 + chi2 * chi2 * f2 * phase);
    let gamma_t = rad * (chi1 * chi1 * f1 + chi2 * chi2 * f2);
    Ok(TipDerived {
        radius_1,
        radius_2,
        beta,
        xi_mag: xi.norm(),
        phi: wrap_phase(xi.arg()),
        delta,
        zeta_mag: zeta.norm(),
        theta_zeta: wrap_phase(zeta.arg()),
        gamma_t,
    })
}

/// Image of the (R₁, R₂, β) grid in the (|ξ|/Ω, φ) plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievableRegion {
    pub points: Vec<TipDerived>,
}

pub fn achievable_region(cfg: &TipConfig) -> Result<AchievableRegion> {
    let mut points = Vec::with_capacity(cfg.n_radius * cfg.n_radius * cfg.n_beta);
    for_each_tip_point(cfg, |d| points.push(d))?;
    Ok(AchievableRegion { points })
}

fn for_each_tip_point(cfg: &TipConfig, mut f: impl FnMut(TipDerived)) -> Result<()> {
    cfg.validate()?;
    let radii = linspace(cfg.radius_range.0, cfg.radius_range.1, cfg.n_radius);
    let betas = linspace(cfg.beta_range.0, cfg.beta_range.1, cfg.n_beta);
    for &r1 in &radii {
        for &r2 in &radii {
            for &b in &betas {
                f(tip_map(cfg, r1, r2, b)?);
            }
        }
    }
    Ok(())
}

/// Outer boundary of the region without materializing the point cloud.
pub fn region_boundary(cfg: &TipConfig, n_bins: usize) -> Result<RegionBoundary> {
    let mut b = RegionBoundary::empty(n_bins);
    for_each_tip_point(cfg, |d| b.insert(d.xi_mag, d.phi))?;
    Ok(b)
}

/// Outer |ξ| envelope of a region per φ bin. The region reaches |ξ| = 0 from
/// every direction, so the outer envelope is its only boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundary {
    pub phi_centers: Vec<f64>,
    /// Largest |ξ|/Ω per bin; `None` where the bin is empty.
    pub outer: Vec<Option<f64>>,
}

impl AchievableRegion {
    pub fn boundary(&self, n_bins: usize) -> RegionBoundary {
        let mut b = RegionBoundary::empty(n_bins);
        for pt in &self.points {
            b.insert(pt.xi_mag, pt.phi);
        }
        b
    }

    /// Diagonal of the bounding box in the (|ξ|/Ω, φ) plane.
    pub fn diameter(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            x0 = x0.min(p.xi_mag);
            x1 = x1.max(p.xi_mag);
            y0 = y0.min(p.phi);
            y1 = y1.max(p.phi);
        }
        ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
    }

    pub fn min_paired_separation(&self) -> f64 {
        self.points
            .iter()
            .map(TipDerived::paired_separation)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_cross_separation(&self) -> f64 {
        self.points
            .iter()
            .map(TipDerived::cross_separation)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["xi_over_omega", "phi"])?;
        for p in &self.points {
            w.write_record([format!("{:?}", p.xi_mag), format!("{:?}", p.phi)])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl RegionBoundary {
    fn empty(n_bins: usize) -> Self {
        let width = 2.0 * PI / n_bins as f64;
        Self {
            phi_centers: (0..n_bins)
                .map(|k| -PI + (k as f64 + 0.5) * width)
                .collect(),
            outer: vec![None; n_bins],
        }
    }

    fn insert(&mut self, xi_mag: f64, phi: f64) {
        let n = self.outer.len();
        let k = (((phi + PI) / (2.0 * PI) * n as f64).floor() as usize).min(n - 1);
        self.outer[k] = Some(self.outer[k].map_or(xi_mag, |m| m.max(xi_mag)));
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.phi_centers
            .iter()
            .zip(&self.outer)
            .filter_map(|(phi, m)| m.map(|m| (m, *phi)))
            .collect()
    }

    /// Symmetric Hausdorff distance between two boundaries in the
    /// (|ξ|/Ω, φ) plane.
    pub fn hausdorff(&self, other: &RegionBoundary) -> f64 {
        let a = self.points();
        let b = other.points();
        let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&a, &b).max(directed(&b, &a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DIM;
    use nalgebra::{DMatrix, DVector};

    /// Direct linear solve of the optical steady-state equations (with the
    /// optomechanical shift dropped) as an 8×8 real system.
    fn dense_steady(p: &SystemParams, port: Port, eps: f64) -> [f64; 8] {
        use crate::model::{DriveSpec, Model};
        let params = SystemParams { g_om: 0.0, ..*p };
        let model = Model::new(&params, &DriveSpec::pump(port, eps));
        let jac = model.jacobian_matrix(&[0.0; DIM]);
        let mut f0 = [0.0; DIM];
        model.deriv(0.0, &[0.0; DIM], &mut f0);
        let a = DMatrix::from_fn(8, 8, |r, c| jac[(r, c)]);
        let b = DVector::from_fn(8, |r, _| -f0[r]);
        let x = a.lu().solve(&b).unwrap();
        let mut out = [0.0; 8];
        out.copy_from_slice(x.as_slice());
        out
    }

    #[test]
    fn matches_dense_linear_solve() {
        for &(phi, port) in &[
            (0.3, Port::Port1),
            (-1.1, Port::Port2),
            (2.5, Port::Port1),
            (0.0, Port::Port2),
        ] {
            let p = SystemParams {
                phi,
                ..SystemParams::default()
            };
            let s = steady_state(&p, port, 10.0).unwrap();
            let d = dense_steady(&p, port, 10.0);
            let got = [
                s.a_cw.re, s.a_cw.im, s.a_ccw.re, s.a_ccw.im, s.b_cw.re, s.b_cw.im, s.b_ccw.re,
                s.b_ccw.im,
            ];
            for (g, w) in got.iter().zip(&d) {
                assert!((g - w).abs() < 1e-10 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn residual_is_tiny() {
        let p = SystemParams::default();
        for port in [Port::Port1, Port::Port2] {
            let s = steady_state(&p, port, 10.0).unwrap();
            assert!(steady_residual(&p, port, 10.0, &s) < 1e-10);
        }
    }

    #[test]
    fn closed_form_delta_agrees() {
        for phi in [-2.0, -0.4, 0.0, 0.7, 3.0] {
            let p = SystemParams {
                phi,
                ..SystemParams::default()
            };
            let a = delta_intensity_steady(&p, 10.0).unwrap();
            let b = delta_intensity_closed_form(&p, 10.0).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn nonreciprocity_vanishes_at_symmetric_phase() {
        for phi in [0.0, PI] {
            let p = SystemParams {
                phi,
                ..SystemParams::default()
            };
            let d = delta_intensity_steady(&p, 10.0).unwrap();
            let i1 = steady_state(&p, Port::Port1, 10.0).unwrap().i_a;
            assert!(d.abs() < 1e-12 * i1, "{d}");
        }
    }

    #[test]
    fn singular_b_denominator() {
        let p = SystemParams {
            delta_b: 3.0,
            gamma: 0.0,
            xi_mag: 3.0,
            ..SystemParams::default()
        };
        assert!(matches!(
            steady_state(&p, Port::Port1, 10.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn polarizability_formula() {
        let chi = polarizability(1.0, 4.0);
        assert!((chi - 4.0 * PI * 0.5).abs() < 1e-15);
        assert_eq!(polarizability(2.0, 1.0), 0.0);
    }

    #[test]
    fn equal_tips_cancel_at_opposite_phase() {
        let cfg = TipConfig::default();
        let d = tip_map(&cfg, 50e-9, 50e-9, PI / 2.0).unwrap();
        assert!(d.xi_mag < 1e-12 * d.delta);
        assert!(d.zeta_mag < 1e-12 * d.gamma_t);
        let aligned = tip_map(&cfg, 50e-9, 50e-9, 0.0).unwrap();
        assert!((aligned.xi_mag - aligned.delta).abs() < 1e-12 * aligned.delta);
        assert!(aligned.phi.abs() < 1e-12);
    }

    #[test]
    fn region_grid_size_and_csv() {
        let cfg = TipConfig {
            n_radius: 3,
            n_beta: 5,
            ..TipConfig::default()
        };
        let region = achievable_region(&cfg).unwrap();
        assert_eq!(region.points.len(), 45);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("region.csv");
        region.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("xi_over_omega,phi\n"));
        assert_eq!(text.lines().count(), 46);
    }
}
