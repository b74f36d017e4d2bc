//! Fundamental solutions of the wave and heat equations and the kernel
//! integrals used in the moment estimates.
//!
//! Every closed form here has a quadrature counterpart (`*_quadrature`)
//! that works from `green_fourier` and generic integration only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants::{beta, c_alpha, gamma, HurstIndex};
use crate::error::{domain, Error, Result};
use crate::quadrature::{
    cos_power_tail, grading_exponent, integrate, integrate_left_singular,
    integrate_to_infinity, one_minus_cos_power, Tolerance,
};
use crate::regression::linear_fit;
use crate::report::VerificationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Wave,
    Heat,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Wave => "wave",
            Kernel::Heat => "heat",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave" => Ok(Kernel::Wave),
            "heat" => Ok(Kernel::Heat),
            _ => domain(format!("unknown equation `{s}` (expected wave or heat)")),
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        domain(format!("time {t} must be positive"))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > -1.0 && alpha < 1.0 {
        Ok(())
    } else {
        domain(format!("alpha = {alpha} outside (-1, 1): the kernel integral diverges"))
    }
}

/// `G_t(x)`.
pub fn green(kernel: Kernel, t: f64, x: f64) -> Result<f64> {
    check_t(t)?;
    Ok(match kernel {
        Kernel::Wave => {
            if x.abs() < t {
                0.5
            } else {
                0.0
            }
        }
        Kernel::Heat => (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt(),
    })
}

/// `ℱG_t(ξ)`; the wave case returns the limit `t` at `ξ = 0`.
pub fn green_fourier(kernel: Kernel, t: f64, xi: f64) -> f64 {
    match kernel {
        Kernel::Wave => {
            let a = xi.abs();
            if a * t < 1e-8 {
                t * (1.0 - (a * t) * (a * t) / 6.0)
            } else {
                (t * a).sin() / a
            }
        }
        Kernel::Heat => (-t * xi * xi / 2.0).exp(),
    }
}

/// `∫ G_t(z)² dz`: `t/2` (wave), `1/(2√(πt))` (heat).
pub fn g_l2_norm_sq(kernel: Kernel, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(match kernel {
        Kernel::Wave => t / 2.0,
        Kernel::Heat => 0.5 / (PI * t).sqrt(),
    })
}

/// The heat-equation value `2π^{1/2} t^{-1/2}` printed in the source derivation,
/// kept only so reports can show the discrepancy with [`g_l2_norm_sq`].
pub fn g_l2_norm_sq_printed_heat(t: f64) -> f64 {
    2.0 * PI.sqrt() / t.sqrt()
}

/// `∫ G_t(z)² dz` by quadrature.
pub fn g_l2_norm_sq_quadrature(kernel: Kernel, t: f64) -> Result<f64> {
    check_t(t)?;
    let w = match kernel {
        Kernel::Wave => t,
        Kernel::Heat => 14.0 * t.sqrt(),
    };
    let f = |z: f64| green(kernel, t, z).unwrap().powi(2);
    // Split at ±t so the wave discontinuities sit on panel edges.
    let tol = Tolerance::new(1e-12, 0.0);
    let mid = integrate(&f, -w, w, tol).require("L2 norm of G")?;
    let outer = match kernel {
        Kernel::Wave => 0.0,
        Kernel::Heat => 2.0 * integrate(&f, w, 2.0 * w, tol).value,
    };
    Ok(mid + outer)
}

/// Constant `C_α` of the wave formula for `A_T(α)`, `α ∈ (-1, 1)`.
pub fn kernel_weight_constant(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if alpha == 0.0 {
        PI / 2.0
    } else if alpha > 0.0 {
        gamma(alpha) * (PI * alpha / 2.0).sin() / (1.0 - alpha)
    } else {
        gamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / (alpha * (1.0 - alpha))
    })
}

/// `∫_ℝ |ℱG_t(ξ)|² |ξ|^α dξ` in closed form.
pub fn weighted_fourier_norm(kernel: Kernel, t: f64, alpha: f64) -> Result<f64> {
    check_t(t)?;
    check_alpha_extended(kernel, alpha)?;
    Ok(match kernel {
        Kernel::Wave => t.powf(1.0 - alpha) * 2f64.powf(1.0 - alpha) * c_alpha(1.0 - alpha)?,
        Kernel::Heat => t.powf(-(alpha + 1.0) / 2.0) * gamma((alpha + 1.0) / 2.0),
    })
}

fn check_alpha_extended(kernel: Kernel, alpha: f64) -> Result<()> {
    // The wave inner integral needs α ∈ (-1, 1); the heat one only α > -1.
    let ok = match kernel {
        Kernel::Wave => alpha > -1.0 && alpha < 1.0,
        Kernel::Heat => alpha > -1.0,
    };
    if ok {
        Ok(())
    } else {
        domain(format!("alpha = {alpha} outside the convergence range for {kernel}"))
    }
}

/// `A_T(α) = ∫_0^T ∫_ℝ |ℱG_t(ξ)|² |ξ|^α dξ dt`.
pub fn a_t(kernel: Kernel, t_end: f64, alpha: f64) -> Result<f64> {
    check_t(t_end)?;
    check_alpha(alpha)?;
    Ok(match kernel {
        Kernel::Wave => {
            2f64.powf(1.0 - alpha) * kernel_weight_constant(alpha)? * t_end.powf(2.0 - alpha) / (2.0 - alpha)
        }
        Kernel::Heat => 2.0 / (1.0 - alpha) * gamma((alpha + 1.0) / 2.0) * t_end.powf((1.0 - alpha) / 2.0),
    })
}

/// Inner integral `∫_ℝ |ℱG_t(ξ)|²|ξ|^α dξ` by one-dimensional quadrature.
pub fn weighted_fourier_norm_quadrature(kernel: Kernel, t: f64, alpha: f64) -> Result<f64> {
    check_alpha_extended(kernel, alpha)?;
    match kernel {
        // sin²(tξ) = (1 - cos 2tξ)/2, and the integrand is even.
        Kernel::Wave => one_minus_cos_power(2.0 * t, 1.0 - alpha),
        Kernel::Heat => {
            let f = |x: f64| green_fourier(kernel, t, x).powi(2) * x.powf(alpha);
            let x1 = 1.0 / t.sqrt();
            let tol = Tolerance::new(1e-12, 0.0);
            let near = integrate_left_singular(f, 0.0, x1, grading_exponent(alpha), tol).require("heat inner")?;
            let far = integrate_to_infinity(f, x1, 6.0, tol).require("heat inner tail")?;
            Ok(2.0 * (near + far))
        }
    }
}

/// `A_T(α)` by two-dimensional quadrature (oracle for [`a_t`]).
pub fn a_t_quadrature(kernel: Kernel, t_end: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let p = match kernel {
        Kernel::Wave => 1.0 - alpha,
        Kernel::Heat => -(alpha + 1.0) / 2.0,
    };
    let inner = |t: f64| weighted_fourier_norm_quadrature(kernel, t, alpha).unwrap_or(f64::NAN);
    integrate_left_singular(inner, 0.0, t_end, grading_exponent(p), Tolerance::new(1e-9, 0.0))
        .require("A_T outer integral")
}

/// `F(a, b) = ∫_a^b ‖G_{b-s}‖² ∫|ℱG_{s-a}(ξ)|²|ξ|^{2(1-2H)} dξ ds` in closed form.
pub fn f_ab(kernel: Kernel, a: f64, b: f64, h: HurstIndex) -> Result<f64> {
    let hv = h.value();
    if hv <= 0.25 {
        return domain(format!("F(a,b) requires H > 1/4, got {hv}"));
    }
    if !(0.0 <= a && a <= b) {
        return domain(format!("F(a,b) requires 0 ≤ a ≤ b, got a={a}, b={b}"));
    }
    if a == b {
        return Ok(0.0);
    }
    let r = b - a;
    Ok(match kernel {
        Kernel::Wave => {
            let c1 = 2f64.powf(4.0 * hv - 1.0) * kernel_weight_constant(2.0 - 4.0 * hv)?;
            c1 / 2.0 * beta(2.0, 4.0 * hv) * r.powf(4.0 * hv + 1.0)
        }
        Kernel::Heat => {
            let c1 = gamma(1.5 - 2.0 * hv);
            c1 / (2.0 * PI.sqrt()) * beta(0.5, 2.0 * hv - 0.5) * r.powf(2.0 * hv - 1.0)
        }
    })
}

/// `F(a, b)` by nested quadrature (oracle for [`f_ab`]).
pub fn f_ab_quadrature(kernel: Kernel, a: f64, b: f64, h: HurstIndex) -> Result<f64> {
    let hv = h.value();
    if a == b {
        return Ok(0.0);
    }
    let alpha = 2.0 * (1.0 - 2.0 * hv);
    let len = b - a;
    // f(r, q) with r = s - a and q = b - s passed exactly, so the weak
    // endpoint singularities are not smeared by cancellation.
    let f = |r: f64, q: f64| {
        if r <= 0.0 || q <= 0.0 {
            return 0.0;
        }
        let l2 = g_l2_norm_sq_quadrature(kernel, q).unwrap_or(f64::NAN);
        let inner = weighted_fourier_norm_quadrature(kernel, r, alpha).unwrap_or(f64::NAN);
        l2 * inner
    };
    let (pa, pb) = match kernel {
        Kernel::Wave => (4.0 * hv - 1.0, 1.0),
        Kernel::Heat => (2.0 * hv - 1.5, -0.5),
    };
    let tol = Tolerance::new(1e-7, 0.0);
    let half = len / 2.0;
    let left = integrate_left_singular(|r| f(r, len - r), 0.0, half, grading_exponent(pa), tol).require("F(a,b)")?;
    let right = integrate_left_singular(|q| f(len - q, q), 0.0, half, grading_exponent(pb), tol).require("F(a,b)")?;
    Ok(left + right)
}

/// `∫_0^T ∫_ℝ (1 - cos ξh) |ℱG_t(ξ)|² |ξ|^α dξ dt` by quadrature.
pub fn cos_increment_lhs(kernel: Kernel, t_end: f64, alpha: f64, hstep: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let h = hstep.abs();
    if h == 0.0 {
        return Ok(0.0);
    }
    let beta_ = 1.0 - alpha;
    match kernel {
        Kernel::Wave => {
            let q = |w: f64| if w == 0.0 { 0.0 } else { one_minus_cos_power(w.abs(), beta_).unwrap_or(f64::NAN) };
            // (1-cos hξ) sin²(tξ) expanded into (1 - cos ωξ) terms; even integrand.
            let inner = |t: f64| q(h) + q(2.0 * t) - 0.5 * q(2.0 * t + h) - 0.5 * q(2.0 * t - h);
            let tol = Tolerance::new(1e-9, 1e-15);
            let split = (h / 2.0).min(t_end);
            let a = integrate(inner, 0.0, split, tol).require("wave cosine-increment integral")?;
            let b = integrate(inner, split, t_end, tol).require("wave cosine-increment integral")?;
            Ok(a + b)
        }
        Kernel::Heat => {
            // t-integral of e^{-tξ²} done in closed form; the ξ-integral numerically.
            let f = |x: f64| {
                let s = (0.5 * h * x).sin();
                2.0 * s * s * (-(-t_end * x * x).exp_m1()) * x.powf(alpha - 2.0)
            };
            let x0 = (40.0 / t_end).sqrt().max(std::f64::consts::PI / h);
            let tol = Tolerance::new(1e-11, 0.0);
            let head = integrate_left_singular(f, 0.0, x0, grading_exponent(alpha + 2.0), tol).require("heat head")?;
            let tail = x0.powf(alpha - 1.0) / (1.0 - alpha) - cos_power_tail(h, 2.0 - alpha, x0).require("heat tail")?;
            Ok(2.0 * (head + tail))
        }
    }
}

/// Cosine-increment bound: LHS ≤ C·T·|h|^{1-α} (wave) or C·|h|^{1-α} (heat),
/// `C = ∫_ℝ (1 - cos η)|η|^{α-2} dη`.
pub fn cos_increment_bound_check(kernel: Kernel, t_end: f64, alpha: f64, hstep: f64) -> Result<VerificationReport> {
    let start = std::time::Instant::now();
    let lhs = cos_increment_lhs(kernel, t_end, alpha, hstep)?;
    let c = 2.0 * c_alpha(1.0 - alpha)?;
    let bound = match kernel {
        Kernel::Wave => c * t_end * hstep.abs().powf(1.0 - alpha),
        Kernel::Heat => c * hstep.abs().powf(1.0 - alpha),
    };
    let ratio = if bound > 0.0 { lhs / bound } else { 0.0 };
    Ok(VerificationReport::upper_bound(format!("cos_increment_bound[{kernel}]"), lhs, bound, 0.0)
        .with_input("T", t_end)
        .with_input("alpha", alpha)
        .with_input("hstep", hstep)
        .with_extra("ratio", ratio)
        .with_runtime(start.elapsed().as_secs_f64()))
}

/// `∫_0^T ∫_ℝ |ℱG_{t+h}(ξ) - ℱG_t(ξ)|² |ξ|^α dξ dt` by quadrature.
pub fn time_increment_lhs(kernel: Kernel, t_end: f64, alpha: f64, hstep: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let h = hstep.abs();
    if h == 0.0 {
        return Ok(0.0);
    }
    match kernel {
        Kernel::Wave => {
            let q = |w: f64| if w == 0.0 { 0.0 } else { one_minus_cos_power(w.abs(), 1.0 - alpha).unwrap_or(f64::NAN) };
            // |sin((t+h)ξ) - sin(tξ)|² = (1-cos hξ) - (1-cos(2t+h)ξ) + ½(1-cos 2(t+h)ξ) + ½(1-cos 2tξ)
            let inner = |t: f64| 2.0 * (q(h) - q(2.0 * t + h) + 0.5 * q(2.0 * (t + h)) + 0.5 * q(2.0 * t));
            integrate(inner, 0.0, t_end, Tolerance::new(1e-9, 1e-15)).require("wave time-increment integral")
        }
        Kernel::Heat => {
            let f = |x: f64| {
                let d = -(-h * x * x / 2.0).exp_m1();
                d * d * (-(-t_end * x * x).exp_m1()) * x.powf(alpha - 2.0)
            };
            let x0 = (80.0 / h.min(t_end)).sqrt();
            let tol = Tolerance::new(1e-11, 0.0);
            let head = integrate_left_singular(f, 0.0, x0, grading_exponent(alpha + 2.0), tol).require("heat head")?;
            Ok(2.0 * (head + x0.powf(alpha - 1.0) / (1.0 - alpha)))
        }
    }
}

/// Fits the exponent of [`time_increment_lhs`] over `hsteps` and checks it is at
/// least `1 - α` (wave) or `(1 - α)/2` (heat), minus `slack`.
pub fn time_increment_bound_check(
    kernel: Kernel,
    t_end: f64,
    alpha: f64,
    hsteps: &[f64],
    slack: f64,
) -> Result<VerificationReport> {
    let start = std::time::Instant::now();
    if hsteps.len() < 2 {
        return domain("need at least two step sizes for the exponent fit");
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &h in hsteps {
        xs.push(h.abs().ln());
        ys.push(time_increment_lhs(kernel, t_end, alpha, h)?.ln());
    }
    let fit = linear_fit(&xs, &ys)?;
    let target = match kernel {
        Kernel::Wave => 1.0 - alpha,
        Kernel::Heat => (1.0 - alpha) / 2.0,
    };
    Ok(VerificationReport::lower_bound(format!("time_increment_exponent[{kernel}]"), fit.slope, target, slack)
        .with_input("T", t_end)
        .with_input("alpha", alpha)
        .with_extra("r_squared", fit.r_squared)
        .with_extra("slope_stderr", fit.slope_stderr)
        .with_runtime(start.elapsed().as_secs_f64()))
}

/// `∫_0^cutoff (1 + ξ²)^{-1} (ξ + η)^{1-2h} dξ`.
pub fn peszat_probe(h: f64, eta: f64, cutoff: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 0.5) {
        return domain(format!("h = {h} outside (0, 1/2]"));
    }
    if eta < 0.0 || cutoff <= 0.0 {
        return domain("peszat_probe needs eta ≥ 0 and cutoff > 0");
    }
    let p = 1.0 - 2.0 * h;
    let f = |x: f64| (x + eta).powf(p) / (1.0 + x * x);
    let tol = Tolerance::new(1e-12, 0.0);
    let split = cutoff.min(1.0);
    let a = integrate_left_singular(f, 0.0, split, 2.0, tol).require("peszat probe")?;
    let b = integrate(f, split, cutoff, tol).require("peszat probe")?;
    Ok(a + b)
}

/// Probe values over `etas` with a strictly-increasing verdict.
pub fn peszat_scan(h: f64, etas: &[f64], cutoff: f64) -> Result<VerificationReport> {
    let vals = etas
        .iter()
        .map(|&e| peszat_probe(h, e, cutoff))
        .collect::<Result<Vec<_>>>()?;
    let min_gap = vals
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let mut r = VerificationReport::lower_bound("peszat_monotone", min_gap, 0.0, 0.0)
        .with_input("h", h)
        .with_input("cutoff", cutoff);
    if min_gap <= 0.0 {
        r = r.failed("probe values not strictly increasing");
    }
    for (e, v) in etas.iter().zip(&vals) {
        r = r.with_extra(&format!("probe[eta={e}]"), *v);
    }
    Ok(r)
}
