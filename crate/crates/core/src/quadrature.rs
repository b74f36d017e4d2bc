//! Adaptive Gauss–Kronrod quadrature with helpers for endpoint singularities,
//! algebraic tails and oscillatory power-law tails.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-10,
            abs: 1e-14,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerance {
            rel,
            abs,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

impl QuadResult {
    /// Turn an unconverged result into an error.
    pub fn require(self, what: &str) -> Result<f64> {
        if self.converged && self.value.is_finite() {
            Ok(self.value)
        } else {
            Err(Error::Quadrature(format!(
                "{what}: value {} with error estimate {}",
                self.value, self.error
            )))
        }
    }
}

/// One 15-point Kronrod rule with its embedded 7-point Gauss error estimate.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = hw * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * hw, ((rk - rg) * hw).abs())
}

struct Seg {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Seg {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Seg {}
impl PartialOrd for Seg {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Seg {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive integration on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Seg { a, b, val: v, err: e });
    let (mut total, mut err) = (v, e);
    let mut n = 1;
    loop {
        if err <= tol.abs.max(tol.rel * total.abs()) {
            break;
        }
        if n >= tol.max_intervals {
            break;
        }
        let s = heap.pop().unwrap();
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            heap.push(s);
            break;
        }
        let (v1, e1) = gk15(&f, s.a, m);
        let (v2, e2) = gk15(&f, m, s.b);
        total += v1 + v2 - s.val;
        err += e1 + e2 - s.err;
        heap.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        heap.push(Seg { a: m, b: s.b, val: v2, err: e2 });
        n += 1;
    }
    // Re-sum to shed accumulated rounding from the running updates.
    let (total, err) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.val, e + s.err));
    QuadResult {
        value: total,
        error: err,
        converged: err <= tol.abs.max(tol.rel * total.abs()) * 1.0001,
    }
}

/// Integral over `[a, b]` of a function with an integrable power singularity at `a`,
/// via `x = a + (b - a) u^m`.
pub fn integrate_left_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    m: f64,
    tol: Tolerance,
) -> QuadResult {
    let w = b - a;
    integrate(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let um = u.powf(m - 1.0);
            f(a + w * um * u) * m * w * um
        },
        0.0,
        1.0,
        tol,
    )
}

/// Same as [`integrate_left_singular`] with the singularity at `b`.
pub fn integrate_right_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    m: f64,
    tol: Tolerance,
) -> QuadResult {
    integrate_left_singular(|y| f(a + b - y), a, b, m, tol)
}

/// Substitution exponent that turns an `x^p` endpoint behaviour into a smooth integrand.
pub fn grading_exponent(p: f64) -> f64 {
    (2.0 / (p + 1.0)).clamp(1.0, 60.0).ceil()
}

/// Integral over `[a, b]` with power singularities `(x-a)^pa` and `(b-x)^pb`.
pub fn integrate_both_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    pa: f64,
    pb: f64,
    tol: Tolerance,
) -> QuadResult {
    let m = 0.5 * (a + b);
    let l = integrate_left_singular(&f, a, m, grading_exponent(pa), tol);
    let r = integrate_right_singular(&f, m, b, grading_exponent(pb), tol);
    QuadResult {
        value: l.value + r.value,
        error: l.error + r.error,
        converged: l.converged && r.converged,
    }
}

/// Integral over `[a, ∞)` of a function decaying like `x^-p` with `p > 1`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, p: f64, tol: Tolerance) -> QuadResult {
    let m = (2.0 / (p - 1.0)).clamp(1.0, 60.0).ceil();
    integrate(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let um = u.powf(-m);
            f(a + um - 1.0) * m * um / u
        },
        0.0,
        1.0,
        tol,
    )
}

/// Wynn epsilon extrapolation of a slowly converging sequence.
pub fn wynn_epsilon(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n < 3 {
        return *seq.last().unwrap_or(&0.0);
    }
    let mut prev = vec![0.0; n + 1];
    let mut cur: Vec<f64> = seq.to_vec();
    let mut best = seq[n - 1];
    let mut k = 0;
    while cur.len() > 1 {
        let next: Vec<f64> = (0..cur.len() - 1)
            .map(|i| {
                let d = cur[i + 1] - cur[i];
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    prev[i + 1] + 1.0 / d
                }
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        prev = cur;
        cur = next;
        k += 1;
        if k % 2 == 0 {
            best = *cur.last().unwrap();
        }
    }
    best
}

/// Sum of `cell(0) + cell(1) + ...` for alternating, decaying cell contributions,
/// accelerated with Wynn's epsilon.
pub fn alternating_sum<F: Fn(usize) -> f64>(cell: F, rel_tol: f64) -> QuadResult {
    let mut partial = Vec::with_capacity(64);
    let mut s = 0.0;
    let mut last = f64::NAN;
    for k in 0..200 {
        s += cell(k);
        partial.push(s);
        if k >= 12 && k % 4 == 0 {
            let start = partial.len().saturating_sub(24);
            let est = wynn_epsilon(&partial[start..]);
            if (est - last).abs() <= rel_tol * est.abs().max(1e-300) {
                return QuadResult {
                    value: est,
                    error: (est - last).abs(),
                    converged: true,
                };
            }
            last = est;
        }
    }
    QuadResult {
        value: last,
        error: f64::INFINITY,
        converged: false,
    }
}

/// `∫_a^∞ cos(ωx) x^{-q} dx` for `a > 0`, `q > 0`, `ω > 0`.
pub fn cos_power_tail(omega: f64, q: f64, a: f64) -> QuadResult {
    let tol = Tolerance::new(1e-13, 0.0);
    let f = |x: f64| (omega * x).cos() * x.powf(-q);
    let p = std::f64::consts::PI / omega;
    // First zero of cos(ωx) past a, then half-period cells between zeros.
    let k0 = (a / p - 0.5).floor() + 1.0;
    let z0 = (k0 + 0.5) * p;
    let head = integrate(f, a, z0, tol);
    let tail = alternating_sum(
        |k| gk15(&f, z0 + k as f64 * p, z0 + (k + 1) as f64 * p).0,
        1e-13,
    );
    QuadResult {
        value: head.value + tail.value,
        error: head.error + tail.error,
        converged: head.converged && tail.converged,
    }
}

/// `∫_0^∞ (1 - cos ωx) x^{-β-1} dx` for `β ∈ (0, 2)` by quadrature.
pub fn one_minus_cos_power(omega: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 2.0) {
        return Err(Error::Domain(format!("beta = {beta} outside (0, 2)")));
    }
    if omega == 0.0 {
        return Ok(0.0);
    }
    let omega = omega.abs();
    let x1 = std::f64::consts::PI / omega;
    let near = integrate_left_singular(
        |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            let r = (0.5 * omega * x).sin() / x;
            2.0 * r * r * x.powf(1.0 - beta)
        },
        0.0,
        x1,
        grading_exponent(1.0 - beta),
        Tolerance::new(1e-12, 0.0),
    )
    .require("near-zero part")?;
    let tail = cos_power_tail(omega, beta + 1.0, x1).require("oscillatory tail")?;
    Ok(near + x1.powf(-beta) / beta - tail)
}
