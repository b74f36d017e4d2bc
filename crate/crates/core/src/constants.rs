//! Normalisation constants, the spectral density of the noise and the
//! elementary integrals behind the frequency-domain estimates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Hurst index of the spatial noise.
///
/// Identity checks accept any `h ∈ (0, 1/2)`; the solver additionally
/// requires `h > 1/4`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

impl HurstIndex {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 0.5 {
            Ok(HurstIndex(h))
        } else {
            domain(format!("Hurst index {h} outside (0, 1/2)"))
        }
    }

    /// Solver-mode constructor: `h ∈ (1/4, 1/2)`.
    pub fn for_solver(h: f64) -> Result<Self> {
        if h > 0.25 && h < 0.5 {
            Ok(HurstIndex(h))
        } else {
            domain(format!("Hurst index {h} outside (1/4, 1/2) required by the solver"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn solver_ok(self) -> bool {
        self.0 > 0.25
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = crate::Error;
    fn try_from(h: f64) -> Result<Self> {
        HurstIndex::new(h)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

pub fn beta(a: f64, b: f64) -> f64 {
    (libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)).exp()
}

fn check_half_open(h: f64) -> Result<()> {
    if h > 0.0 && h <= 0.5 {
        Ok(())
    } else {
        domain(format!("h = {h} outside (0, 1/2]"))
    }
}

/// `c_H = Γ(2h+1) sin(πh) / (2π)`. The endpoint `h = 1/2` is accepted as a
/// boundary probe.
pub fn c_h(h: f64) -> Result<f64> {
    check_half_open(h)?;
    Ok(gamma(2.0 * h + 1.0) * (PI * h).sin() / (2.0 * PI))
}

/// `C_H = h(1-2h)/2`, the constant of the Sobolev form of the norm.
pub fn big_c_h(h: f64) -> Result<f64> {
    check_half_open(h)?;
    Ok(h * (1.0 - 2.0 * h) / 2.0)
}

/// Closed form of `∫_0^∞ (1 - cos x) x^{-α-1} dx`, `α ∈ (0, 2)`.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return domain(format!("alpha = {alpha} outside (0, 2): the integral diverges"));
    }
    Ok(if alpha == 1.0 {
        PI / 2.0
    } else if alpha < 1.0 {
        gamma(1.0 - alpha) * (PI * alpha / 2.0).cos() / alpha
    } else {
        -gamma(2.0 - alpha) * (PI * alpha / 2.0).cos() / (alpha * (alpha - 1.0))
    })
}

/// `∫_ℝ |1 - e^{-ix}|² |x|^{2h-2} dx = 2Γ(2h+1) sin(πh) / (h(1-2h))`.
///
/// At frequency `ξ` the same integral equals `|ξ|^{1-2h}` times this value.
pub fn frequency_identity_constant(h: f64) -> Result<f64> {
    if !(h > 0.0 && h < 0.5) {
        return domain(format!("h = {h} outside (0, 1/2)"));
    }
    Ok(2.0 * gamma(2.0 * h + 1.0) * (PI * h).sin() / (h * (1.0 - 2.0 * h)))
}

/// Covariance of fractional Brownian motion with `E B(1)² = 1`.
pub fn fbm_covariance(x: f64, y: f64, h: f64) -> f64 {
    let p = 2.0 * h;
    0.5 * (x.abs().powf(p) + y.abs().powf(p) - (x - y).abs().powf(p))
}

/// Spectral density `c_H |ξ|^{1-2h}` of the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub h: HurstIndex,
    pub c_h: f64,
}

impl SpectralDensity {
    pub fn new(h: HurstIndex) -> Self {
        SpectralDensity {
            h,
            c_h: c_h(h.value()).expect("validated Hurst index"),
        }
    }

    pub fn density(&self, xi: f64) -> f64 {
        if xi == 0.0 {
            0.0
        } else {
            self.c_h * xi.abs().powf(1.0 - 2.0 * self.h.value())
        }
    }

    /// `μ([0, x])` for `x ≥ 0`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let q = 2.0 - 2.0 * self.h.value();
        self.c_h * x.abs().powf(q) / q
    }

    /// `μ([a, b])`, exact.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let f = |x: f64| x.signum() * self.cumulative(x);
        f(b) - f(a)
    }

    /// `∫_a^b ξ μ(dξ)`, used for mass centroids.
    pub fn first_moment(&self, a: f64, b: f64) -> f64 {
        let q = 3.0 - 2.0 * self.h.value();
        let f = |x: f64| self.c_h * x.abs().powf(q) / q;
        f(b) - f(a)
    }
}
