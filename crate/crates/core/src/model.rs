//! Mean-field equations of motion for two coupled whispering-gallery
//! resonators, A (optomechanical) and B (carrying two Rayleigh scatterers).
//!
//! Everything is expressed in units of the mechanical frequency: rates and
//! detunings are divided by Ω and time is τ = Ωt.
//!
//! The flat real layout used by the integrator, the Jacobian and every golden
//! fixture is
//!
//! ```text
//! [Re a_cw, Im a_cw, Re a_ccw, Im a_ccw, Re b_cw, Im b_cw, Re b_ccw, Im b_ccw, q, p]
//! ```

use std::f64::consts::PI;

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real degrees of freedom.
pub const DIM: usize = 10;

pub type Flat = [f64; DIM];
pub type Jacobian = SMatrix<f64, DIM, DIM>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Reduce an angle to the canonical interval (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut x = phi % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Normalized rates and detunings of the device (all divided by Ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    /// (ω_A − ω)/Ω
    pub delta_a: f64,
    /// (ω_B − ω)/Ω
    pub delta_b: f64,
    /// Optical damping of resonator A.
    pub kappa: f64,
    /// Optical damping of resonator B.
    pub gamma: f64,
    /// Single-photon optomechanical coupling G/Ω.
    pub g_om: f64,
    /// Mechanical damping Γ/Ω.
    pub gamma_m: f64,
    /// Intrinsic CW/CCW backscattering in resonator A.
    pub eta: f64,
    /// Tip-induced backscattering magnitude |ξ|/Ω in resonator B.
    pub xi_mag: f64,
    /// Hopping phase φ of the tip-induced backscattering.
    pub phi: f64,
    /// Inter-resonator tunnelling J/Ω.
    pub j_coupling: f64,
}

impl Default for SystemParams {
    /// Reference device: η=0.15, J=2, Γ=5e-3, γ=5, κ=0.25, G=5e-5,
    /// Δ_A=Δ_B=−0.5, |ξ|=3, φ=0.
    fn default() -> Self {
        Self {
            delta_a: -0.5,
            delta_b: -0.5,
            kappa: 0.25,
            gamma: 5.0,
            g_om: 5e-5,
            gamma_m: 5e-3,
            eta: 0.15,
            xi_mag: 3.0,
            phi: 0.0,
            j_coupling: 2.0,
        }
    }
}

impl SystemParams {
    /// Check the nonnegativity/finiteness invariants and return a copy with
    /// `phi` wrapped to (−π, π].
    pub fn validated(&self) -> Result<Self> {
        let checks: [(&'static str, f64); 7] = [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("g_om", self.g_om),
            ("gamma_m", self.gamma_m),
            ("eta", self.eta),
            ("xi_mag", self.xi_mag),
            ("j_coupling", self.j_coupling),
        ];
        for (name, v) in checks {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("delta_a", self.delta_a),
            ("delta_b", self.delta_b),
            ("phi", self.phi),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        Ok(Self {
            phi: wrap_phase(self.phi),
            ..*self
        })
    }

    /// Same device with the hopping phase reversed (φ → −φ).
    pub fn mirrored(&self) -> Self {
        Self {
            phi: -self.phi,
            ..*self
        }
    }
}

/// Which fiber port carries the pump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    /// Drives a_cw.
    Port1,
    /// Drives a_ccw.
    Port2,
}

impl Port {
    pub fn other(self) -> Self {
        match self {
            Port::Port1 => Port::Port2,
            Port::Port2 => Port::Port1,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Port::Port1 => 1,
            Port::Port2 => 2,
        }
    }
}

impl std::fmt::Display for Port {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Pump plus optional weak detected signal, both entering one port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSpec {
    pub port: Port,
    /// Pump amplitude ε/Ω.
    pub eps: f64,
    /// Signal amplitude δε/Ω.
    pub d_eps: f64,
    /// Signal detuning δω/Ω from the pump.
    pub d_omega: f64,
    /// Initial phase difference θ between pump and signal.
    pub theta: f64,
}

impl Default for DriveSpec {
    fn default() -> Self {
        Self {
            port: Port::Port1,
            eps: 5.8e4,
            d_eps: 0.0,
            d_omega: 0.0,
            theta: 0.0,
        }
    }
}

impl DriveSpec {
    pub fn pump(port: Port, eps: f64) -> Self {
        Self {
            port,
            eps,
            ..Self::default()
        }
    }

    pub fn validated(&self) -> Result<Self> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: format!("must be finite and >= 0, got {}", self.eps),
            });
        }
        if !self.d_eps.is_finite() || self.d_eps < 0.0 {
            return Err(Error::InvalidParameter {
                name: "d_eps",
                reason: format!("must be finite and >= 0, got {}", self.d_eps),
            });
        }
        if !self.d_omega.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "d_omega/theta",
                reason: "must be finite".into(),
            });
        }
        Ok(*self)
    }

    pub fn with_port(&self, port: Port) -> Self {
        Self { port, ..*self }
    }

    /// True when the envelope does not depend on τ.
    pub fn is_autonomous(&self) -> bool {
        self.d_eps == 0.0 || self.d_omega == 0.0
    }

    /// Rotating-frame envelope ε + δε·e^{−i(δω τ + θ)}.
    #[inline]
    pub fn envelope(&self, tau: f64) -> Complex64 {
        if self.d_eps == 0.0 {
            Complex64::new(self.eps, 0.0)
        } else {
            Complex64::new(self.eps, 0.0)
                + self.d_eps * Complex64::from_polar(1.0, -(self.d_omega * tau + self.theta))
        }
    }
}

/// Mode amplitudes and mechanical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub a_cw: Complex64,
    pub a_ccw: Complex64,
    pub b_cw: Complex64,
    pub b_ccw: Complex64,
    pub q: f64,
    pub p: f64,
}

impl StateVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_flat(&self) -> Flat {
        [
            self.a_cw.re,
            self.a_cw.im,
            self.a_ccw.re,
            self.a_ccw.im,
            self.b_cw.re,
            self.b_cw.im,
            self.b_ccw.re,
            self.b_ccw.im,
            self.q,
            self.p,
        ]
    }

    pub fn from_flat(x: &Flat) -> Self {
        Self {
            a_cw: Complex64::new(x[0], x[1]),
            a_ccw: Complex64::new(x[2], x[3]),
            b_cw: Complex64::new(x[4], x[5]),
            b_ccw: Complex64::new(x[6], x[7]),
            q: x[8],
            p: x[9],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Exchange CW and CCW in both resonators.
    pub fn swapped(&self) -> Self {
        Self {
            a_cw: self.a_ccw,
            a_ccw: self.a_cw,
            b_cw: self.b_ccw,
            b_ccw: self.b_cw,
            q: self.q,
            p: self.p,
        }
    }

    /// Total intracavity intensity of resonator A.
    pub fn intensity_a(&self) -> f64 {
        self.a_cw.norm_sqr() + self.a_ccw.norm_sqr()
    }

    /// Total intracavity intensity of resonator B.
    pub fn intensity_b(&self) -> f64 {
        self.b_cw.norm_sqr() + self.b_ccw.norm_sqr()
    }
}

/// Exchange CW/CCW components of a flat vector.
pub fn swap_flat(x: &Flat) -> Flat {
    [x[2], x[3], x[0], x[1], x[6], x[7], x[4], x[5], x[8], x[9]]
}

/// Precomputed complex coefficients of the equations of motion.
///
/// Building this once per run avoids re-evaluating `e^{±iφ}` inside the
/// integrator loop.
#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub params: SystemParams,
    pub drive: DriveSpec,
    /// −κ − iΔ_A
    decay_a: Complex64,
    /// −γ − iΔ_B
    decay_b: Complex64,
    /// i|ξ|e^{iφ}
    xi_plus: Complex64,
    /// i|ξ|e^{−iφ}
    xi_minus: Complex64,
}

impl Model {
    pub fn new(params: &SystemParams, drive: &DriveSpec) -> Self {
        let p = *params;
        Self {
            params: p,
            drive: *drive,
            decay_a: Complex64::new(-p.kappa, -p.delta_a),
            decay_b: Complex64::new(-p.gamma, -p.delta_b),
            xi_plus: I * Complex64::from_polar(p.xi_mag, p.phi),
            xi_minus: I * Complex64::from_polar(p.xi_mag, -p.phi),
        }
    }

    /// Validating constructor.
    pub fn checked(params: &SystemParams, drive: &DriveSpec) -> Result<Self> {
        Ok(Self::new(&params.validated()?, &drive.validated()?))
    }

    /// Pump terms (E₁, E₂) at time τ.
    #[inline]
    pub fn pumps(&self, tau: f64) -> (Complex64, Complex64) {
        let e = self.drive.envelope(tau);
        match self.drive.port {
            Port::Port1 => (e, Complex64::new(0.0, 0.0)),
            Port::Port2 => (Complex64::new(0.0, 0.0), e),
        }
    }

    /// dX/dτ on the flat layout. Does not check finiteness.
    #[inline]
    pub fn deriv(&self, tau: f64, x: &Flat, dx: &mut Flat) {
        let p = &self.params;
        let a_cw = Complex64::new(x[0], x[1]);
        let a_ccw = Complex64::new(x[2], x[3]);
        let b_cw = Complex64::new(x[4], x[5]);
        let b_ccw = Complex64::new(x[6], x[7]);
        let q = x[8];
        let mom = x[9];
        let (e1, e2) = self.pumps(tau);

        let diag_a = self.decay_a + I * (p.g_om * q);
        let ieta = I * p.eta;
        let ij = I * p.j_coupling;

        let d_a_cw = diag_a * a_cw + ieta * a_ccw + ij * b_ccw + e1;
        let d_a_ccw = diag_a * a_ccw + ieta * a_cw + ij * b_cw + e2;
        let d_b_cw = self.decay_b * b_cw + self.xi_plus * b_ccw + ij * a_ccw;
        let d_b_ccw = self.decay_b * b_ccw + self.xi_minus * b_cw + ij * a_cw;

        dx[0] = d_a_cw.re;
        dx[1] = d_a_cw.im;
        dx[2] = d_a_ccw.re;
        dx[3] = d_a_ccw.im;
        dx[4] = d_b_cw.re;
        dx[5] = d_b_cw.im;
        dx[6] = d_b_ccw.re;
        dx[7] = d_b_ccw.im;
        dx[8] = mom;
        dx[9] = -q + p.g_om * (a_cw.norm_sqr() + a_ccw.norm_sqr()) - p.gamma_m * mom;
    }

    /// Tangent-space product J(x)·v without forming the matrix.
    #[inline]
    pub fn jvp(&self, x: &Flat, v: &Flat, out: &mut Flat) {
        let p = &self.params;
        let a_cw = Complex64::new(x[0], x[1]);
        let a_ccw = Complex64::new(x[2], x[3]);
        let q = x[8];
        let va_cw = Complex64::new(v[0], v[1]);
        let va_ccw = Complex64::new(v[2], v[3]);
        let vb_cw = Complex64::new(v[4], v[5]);
        let vb_ccw = Complex64::new(v[6], v[7]);
        let vq = v[8];
        let vp = v[9];

        let diag_a = self.decay_a + I * (p.g_om * q);
        let ieta = I * p.eta;
        let ij = I * p.j_coupling;
        let ig = I * (p.g_om * vq);

        let t_a_cw = diag_a * va_cw + ig * a_cw + ieta * va_ccw + ij * vb_ccw;
        let t_a_ccw = diag_a * va_ccw + ig * a_ccw + ieta * va_cw + ij * vb_cw;
        let t_b_cw = self.decay_b * vb_cw + self.xi_plus * vb_ccw + ij * va_ccw;
        let t_b_ccw = self.decay_b * vb_ccw + self.xi_minus * vb_cw + ij * va_cw;
        let d_int = 2.0
            * (a_cw.re * va_cw.re
                + a_cw.im * va_cw.im
                + a_ccw.re * va_ccw.re
                + a_ccw.im * va_ccw.im);

        out[0] = t_a_cw.re;
        out[1] = t_a_cw.im;
        out[2] = t_a_ccw.re;
        out[3] = t_a_ccw.im;
        out[4] = t_b_cw.re;
        out[5] = t_b_cw.im;
        out[6] = t_b_ccw.re;
        out[7] = t_b_ccw.im;
        out[8] = vp;
        out[9] = -vq + p.g_om * d_int - p.gamma_m * vp;
    }

    /// Dense Jacobian ∂(dX/dτ)/∂X at `x`.
    pub fn jacobian_matrix(&self, x: &Flat) -> Jacobian {
        let p = &self.params;
        let mut m = Jacobian::zeros();
        // complex coefficient c acting on the mode at (col, col+1), landing at (row, row+1)
        let mut put = |row: usize, col: usize, c: Complex64| {
            m[(row, col)] += c.re;
            m[(row, col + 1)] -= c.im;
            m[(row + 1, col)] += c.im;
            m[(row + 1, col + 1)] += c.re;
        };
        let diag_a = self.decay_a + I * (p.g_om * x[8]);
        let ieta = I * p.eta;
        let ij = I * p.j_coupling;

        put(0, 0, diag_a);
        put(0, 2, ieta);
        put(0, 6, ij);
        put(2, 2, diag_a);
        put(2, 0, ieta);
        put(2, 4, ij);
        put(4, 4, self.decay_b);
        put(4, 6, self.xi_plus);
        put(4, 2, ij);
        put(6, 6, self.decay_b);
        put(6, 4, self.xi_minus);
        put(6, 0, ij);

        // i G a q: derivative with respect to q
        m[(0, 8)] = -p.g_om * x[1];
        m[(1, 8)] = p.g_om * x[0];
        m[(2, 8)] = -p.g_om * x[3];
        m[(3, 8)] = p.g_om * x[2];

        m[(8, 9)] = 1.0;
        m[(9, 8)] = -1.0;
        m[(9, 9)] = -p.gamma_m;
        for k in 0..4 {
            m[(9, k)] = 2.0 * p.g_om * x[k];
        }
        m
    }
}

/// Time derivative of `state` under the equations of motion.
pub fn rhs(
    params: &SystemParams,
    drive: &DriveSpec,
    tau: f64,
    state: &StateVector,
) -> Result<StateVector> {
    if !state.is_finite() {
        return Err(Error::Divergence { tau });
    }
    let model = Model::new(params, drive);
    let mut dx = [0.0; DIM];
    model.deriv(tau, &state.to_flat(), &mut dx);
    Ok(StateVector::from_flat(&dx))
}

/// Analytic Jacobian in the flat real layout. The drive contributes nothing.
pub fn jacobian(
    params: &SystemParams,
    drive: &DriveSpec,
    tau: f64,
    state: &StateVector,
) -> Result<Jacobian> {
    if !state.is_finite() {
        return Err(Error::Divergence { tau });
    }
    Ok(Model::new(params, drive).jacobian_matrix(&state.to_flat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2(phi: f64) -> SystemParams {
        SystemParams {
            phi,
            ..SystemParams::default()
        }
    }

    fn sample_state() -> StateVector {
        StateVector {
            a_cw: Complex64::new(1.2e4, -3.1e3),
            a_ccw: Complex64::new(-2.2e3, 7.5e3),
            b_cw: Complex64::new(410.0, -95.0),
            b_ccw: Complex64::new(-33.0, 620.0),
            q: 4.1e4,
            p: -1.3e3,
        }
    }

    #[test]
    fn zero_state_unforced_is_fixed_point() {
        let drive = DriveSpec::pump(Port::Port1, 0.0);
        let d = rhs(&fig2(0.3), &drive, 1.0, &StateVector::zero()).unwrap();
        assert_eq!(d, StateVector::zero());
    }

    #[test]
    fn harmonic_restoring_force() {
        let drive = DriveSpec::pump(Port::Port2, 0.0);
        let s = StateVector {
            q: 1.0,
            ..StateVector::zero()
        };
        let d = rhs(&fig2(0.3), &drive, 0.0, &s).unwrap();
        assert_eq!(d.p, -1.0);
        assert_eq!(d.q, 0.0);
        assert_eq!(d.a_cw, Complex64::new(0.0, 0.0));
        assert_eq!(d.a_ccw, Complex64::new(0.0, 0.0));
        assert_eq!(d.b_cw, Complex64::new(0.0, 0.0));
        assert_eq!(d.b_ccw, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn non_finite_state_is_divergence() {
        let mut s = StateVector::zero();
        s.q = f64::NAN;
        let err = rhs(&fig2(0.0), &DriveSpec::default(), 2.5, &s).unwrap_err();
        assert_eq!(err, Error::Divergence { tau: 2.5 });
    }

    #[test]
    fn drive_enters_only_pumped_mode() {
        let p = SystemParams {
            g_om: 0.0,
            ..fig2(0.4)
        };
        let d1 = rhs(
            &p,
            &DriveSpec::pump(Port::Port1, 7.0),
            0.0,
            &StateVector::zero(),
        )
        .unwrap();
        assert_eq!(d1.a_cw, Complex64::new(7.0, 0.0));
        assert_eq!(d1.a_ccw, Complex64::new(0.0, 0.0));
        let d2 = rhs(
            &p,
            &DriveSpec::pump(Port::Port2, 7.0),
            0.0,
            &StateVector::zero(),
        )
        .unwrap();
        assert_eq!(d2.a_ccw, Complex64::new(7.0, 0.0));
        assert_eq!(d2.a_cw, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn envelope_without_signal_is_plain_pump() {
        let d = DriveSpec {
            d_eps: 0.0,
            d_omega: 0.7,
            theta: 1.1,
            ..DriveSpec::default()
        };
        for tau in [0.0, 1.0, 123.4] {
            assert_eq!(d.envelope(tau), Complex64::new(d.eps, 0.0));
        }
    }

    #[test]
    fn jacobian_is_state_independent_without_optomechanics() {
        let p = SystemParams {
            g_om: 0.0,
            ..fig2(0.9)
        };
        let d = DriveSpec::default();
        let j0 = jacobian(&p, &d, 0.0, &StateVector::zero()).unwrap();
        let j1 = jacobian(&p, &d, 3.0, &sample_state()).unwrap();
        assert_eq!(j0, j1);
    }

    #[test]
    fn jacobian_at_zero_state_matches_linear_case() {
        let p = fig2(-1.3);
        let lin = SystemParams { g_om: 0.0, ..p };
        let d = DriveSpec::default();
        let j = jacobian(&p, &d, 0.0, &StateVector::zero()).unwrap();
        let j_lin = jacobian(&lin, &d, 0.0, &StateVector::zero()).unwrap();
        assert_eq!(j, j_lin);
    }

    #[test]
    fn jvp_matches_dense_jacobian() {
        let m = Model::new(&fig2(2.2), &DriveSpec::default());
        let x = sample_state().to_flat();
        let v: Flat = [0.3, -0.1, 0.7, 0.2, -0.5, 0.05, 0.9, -0.4, 0.11, -0.6];
        let mut out = [0.0; DIM];
        m.jvp(&x, &v, &mut out);
        let dense = m.jacobian_matrix(&x) * nalgebra::SVector::<f64, DIM>::from(v);
        for k in 0..DIM {
            let scale = dense[k].abs().max(1.0);
            assert!((out[k] - dense[k]).abs() / scale < 1e-12, "component {k}");
        }
    }

    #[test]
    fn flat_round_trip_uses_documented_order() {
        let s = sample_state();
        let f = s.to_flat();
        assert_eq!(f[0], s.a_cw.re);
        assert_eq!(f[3], s.a_ccw.im);
        assert_eq!(f[6], s.b_ccw.re);
        assert_eq!(f[9], s.p);
        assert_eq!(StateVector::from_flat(&f), s);
        assert_eq!(swap_flat(&f), s.swapped().to_flat());
    }

    #[test]
    fn phase_wrapping() {
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_phase(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_negative_rates() {
        let p = SystemParams {
            kappa: -0.1,
            ..SystemParams::default()
        };
        assert!(matches!(
            p.validated(),
            Err(Error::InvalidParameter { name: "kappa", .. })
        ));
        let d = DriveSpec {
            d_eps: -1.0,
            ..DriveSpec::default()
        };
        assert!(d.validated().is_err());
    }
}
