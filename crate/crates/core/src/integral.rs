//! Stochastic integrals `(S·X)_T = Σ_j Σ_k ℱS(t_j, ·)(ξ_k) M_{j,k}` of grid-sampled
//! integrands, plus the isometry, quadratic-variation and moment-bound checks.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::constants::HurstIndex;
use crate::error::{domain, Error, Result};
use crate::noise::{fill_step, realization_seed, SpectralGrid, SpectralNoise};
use crate::report::VerificationReport;
use crate::sobolev::{sobolev_side, QuadratureConfig, TestFunction};

/// Integrand sampled at `x_n = x0 + n·dx` on each time slab.
#[derive(Debug, Clone, PartialEq)]
pub struct GridIntegrand {
    pub n_steps: usize,
    pub n_space: usize,
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    /// `depends_on[j]`: number of leading noise steps slice `j` is a function of.
    pub depends_on: Vec<usize>,
}

impl GridIntegrand {
    pub fn new(n_steps: usize, n_space: usize, x0: f64, dx: f64, values: Vec<f64>, depends_on: Vec<usize>) -> Result<Self> {
        if values.len() != n_steps * n_space {
            return Err(Error::Shape(format!(
                "{} values for a {n_steps} × {n_space} grid",
                values.len()
            )));
        }
        if depends_on.len() != n_steps {
            return Err(Error::Shape("one adaptedness marker per step required".into()));
        }
        if !(dx > 0.0) {
            return domain(format!("space step must be positive, got {dx}"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("integrand has non-finite samples");
        }
        Ok(GridIntegrand {
            n_steps,
            n_space,
            x0,
            dx,
            values,
            depends_on,
        })
    }

    /// Deterministic integrand `S(t_j, x_n) = f(j, x_n)`.
    pub fn deterministic(n_steps: usize, n_space: usize, x0: f64, dx: f64, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n_steps * n_space);
        for j in 0..n_steps {
            values.extend((0..n_space).map(|n| f(j, x0 + n as f64 * dx)));
        }
        Self::new(n_steps, n_space, x0, dx, values, vec![0; n_steps])
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_space..(j + 1) * self.n_space]
    }

    /// `a·self + b·other` on a shared grid.
    pub fn combine(&self, a: f64, other: &GridIntegrand, b: f64) -> Result<Self> {
        if (self.n_steps, self.n_space, self.x0, self.dx) != (other.n_steps, other.n_space, other.x0, other.dx) {
            return Err(Error::Shape("integrands live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let dep = self.depends_on.iter().zip(&other.depends_on).map(|(x, y)| *x.max(y)).collect();
        Self::new(self.n_steps, self.n_space, self.x0, self.dx, values, dep)
    }

    fn check_adapted(&self) -> Result<()> {
        for (j, &d) in self.depends_on.iter().enumerate() {
            if d > j {
                return Err(Error::Adaptedness { step: j, depends_on: d - 1 });
            }
        }
        Ok(())
    }
}

fn sinc2(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        1.0 - u * u / 3.0
    } else {
        (u.sin() / u).powi(2)
    }
}

/// `ℱ` of the piecewise-linear interpolant of `values`, evaluated at `nodes`.
pub fn slice_transform(values: &[f64], x0: f64, dx: f64, nodes: &[f64]) -> Vec<Complex64> {
    nodes
        .iter()
        .map(|&xi| {
            let step = Complex64::from_polar(1.0, -xi * dx);
            let mut ph = Complex64::from_polar(1.0, -xi * x0);
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, v) in values.iter().enumerate() {
                if n % 64 == 0 {
                    ph = Complex64::from_polar(1.0, -xi * (x0 + n as f64 * dx));
                }
                acc += ph * v;
                ph *= step;
            }
            acc * dx * sinc2(xi * dx / 2.0)
        })
        .collect()
}

/// As [`slice_transform`], via one FFT when the spectral grid is aligned with
/// the integrand's grid.
fn slice_transform_grid(values: &[f64], x0: f64, dx: f64, grid: &SpectralGrid, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    if let Some((period, n, origin)) = grid.fft_params() {
        let aligned = n == values.len()
            && (period - n as f64 * dx).abs() <= 1e-12 * period
            && (origin - x0).abs() <= 1e-12 * period.max(1.0);
        if aligned {
            let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut buf);
            let m_max = (grid.n_bins() - 1) / 2;
            return grid
                .nodes
                .iter()
                .enumerate()
                .map(|(k, &xi)| {
                    let m = k as i64 - m_max as i64;
                    buf[m.rem_euclid(n as i64) as usize]
                        * Complex64::from_polar(dx * sinc2(xi * dx / 2.0), -xi * x0)
                })
                .collect();
        }
    }
    slice_transform(values, x0, dx, &grid.nodes)
}

/// Per-slice transforms at the grid nodes.
pub fn integrand_transforms(s: &GridIntegrand, grid: &SpectralGrid) -> Vec<Vec<Complex64>> {
    let mut planner = FftPlanner::new();
    (0..s.n_steps)
        .map(|j| slice_transform_grid(s.slice(j), s.x0, s.dx, grid, &mut planner))
        .collect()
}

fn contract(transforms: &[Vec<Complex64>], mut noise_step: impl FnMut(usize, &mut Vec<Complex64>)) -> Complex64 {
    let mut buf = Vec::new();
    transforms
        .iter()
        .enumerate()
        .map(|(j, f)| {
            noise_step(j, &mut buf);
            f.iter().zip(&buf).map(|(a, z)| a * z).sum::<Complex64>()
        })
        .sum()
}

/// `(S·X)_T` with its imaginary residue.
pub fn integrate_complex(s: &GridIntegrand, noise: &SpectralNoise) -> Result<Complex64> {
    if s.n_steps != noise.n_steps {
        return Err(Error::Shape(format!(
            "integrand has {} steps, noise has {}",
            s.n_steps, noise.n_steps
        )));
    }
    s.check_adapted()?;
    let tr = integrand_transforms(s, &noise.grid);
    Ok(contract(&tr, |j, buf| {
        buf.clear();
        buf.extend_from_slice(noise.step(j));
    }))
}

/// `(S·X)_T`, real by Hermitian symmetry.
pub fn integrate(s: &GridIntegrand, noise: &SpectralNoise) -> Result<f64> {
    Ok(integrate_complex(s, noise)?.re)
}

/// `I(T) = C_H ∫_0^T ∫∫ |S(t,x) - S(t,y)|² |x-y|^{2h-2} dx dy dt` for slices
/// constant on consecutive time intervals of the given durations.
pub fn deterministic_i_t(slices: &[(f64, TestFunction)], h: HurstIndex, quad: &QuadratureConfig) -> Result<f64> {
    slices
        .iter()
        .map(|(dur, g)| Ok(dur * sobolev_side(g, h, quad)?))
        .sum()
}

/// Predictable quadratic variation `Σ_{j ≤ J} Σ_k |ℱS_j(ξ_k)|² dt·mass_k` after each step.
pub fn quadratic_variation(s: &GridIntegrand, grid: &SpectralGrid, dt: f64) -> Result<Vec<f64>> {
    s.check_adapted()?;
    let tr = integrand_transforms(s, grid);
    let mut acc = 0.0;
    Ok(tr
        .iter()
        .map(|f| {
            acc += f.iter().zip(&grid.mass).map(|(a, m)| a.norm_sqr() * m).sum::<f64>() * dt;
            acc
        })
        .collect())
}

/// Monte Carlo samples of `(S·X)_T` for a deterministic integrand over
/// independent realizations `realization_seed(seed, r)`.
pub fn mc_integrals(s: &GridIntegrand, grid: Arc<SpectralGrid>, dt: f64, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    if s.depends_on.iter().any(|&d| d != 0) {
        return domain("Monte Carlo moments need a deterministic integrand");
    }
    let tr = integrand_transforms(s, &grid);
    let n = grid.n_bins();
    Ok((0..n_mc)
        .into_par_iter()
        .map(|r| {
            let rs = realization_seed(seed, r as u64);
            contract(&tr, |j, buf| {
                buf.resize(n, Complex64::new(0.0, 0.0));
                fill_step(&grid, dt, rs, j, buf);
            })
            .re
        })
        .collect())
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// `E|Y|⁴ / (E|Y|²)²` with a delta-method standard error.
pub fn moment_ratio_4_2(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let m2 = ys.iter().map(|y| y * y).sum::<f64>() / n;
    let m4 = ys.iter().map(|y| y.powi(4)).sum::<f64>() / n;
    let r = m4 / (m2 * m2);
    let infl: Vec<f64> = ys
        .iter()
        .map(|y| (y.powi(4) - m4) / (m2 * m2) - 2.0 * m4 * (y * y - m2) / m2.powi(3))
        .collect();
    let (_, se) = mean_se(&infl);
    (r, se)
}

/// Conservative Burkholder-Davis-Gundy constant `z_p = (4p)^{p/2}`.
pub fn bdg_constant(p: f64) -> f64 {
    (4.0 * p).powf(p / 2.0)
}

/// Largest relative standard error of a p-th moment estimate accepted by the kurtosis guard.
pub const MOMENT_REL_SE_LIMIT: f64 = 0.1;

/// Compare the Monte Carlo `E|(S·X)_T|^p` with `I(T)` (p = 2, equality) or
/// with `z_p I(T)^{p/2}` (p > 2, upper bound).
pub fn bdg_bound_check(samples: &[f64], i_t: f64, p: f64) -> Result<VerificationReport> {
    if !(p >= 2.0) {
        return domain(format!("moment order must be at least 2, got {p}"));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::EnsembleTooSmall { needed: 2, got: n });
    }
    let pw: Vec<f64> = samples.iter().map(|y| y.abs().powf(p)).collect();
    let (m, se) = mean_se(&pw);
    let name = format!("bdg[p={p}]");
    if m == 0.0 && i_t == 0.0 {
        return Ok(VerificationReport::upper_bound(name, 0.0, 0.0, 0.0)
            .with_input("p", p)
            .with_input("n_mc", n as f64));
    }
    if se > MOMENT_REL_SE_LIMIT * m {
        let needed = (n as f64 * (se / (MOMENT_REL_SE_LIMIT * m)).powi(2)).ceil() as usize;
        return Err(Error::EnsembleTooSmall { needed, got: n });
    }
    let r = if p == 2.0 {
        VerificationReport::statistical(name, m, i_t, se, 0.0)
    } else {
        VerificationReport::upper_bound(name, m, bdg_constant(p) * i_t.powf(p / 2.0), 0.0)
    };
    Ok(r.with_input("p", p)
        .with_input("n_mc", n as f64)
        .with_extra("i_t", i_t)
        .with_extra("standard_error", se))
}

/// Samples of `1_{(u,v]}` convolved with a uniform kernel of width `2·dx`.
pub fn mollified_rectangle(u: f64, v: f64, dx: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        let ramp = |c: f64| ((x - c + dx) / (2.0 * dx)).clamp(0.0, 1.0);
        ramp(u) - ramp(v)
    }
}

/// Elementary integral `Y(X_{t∧b}((u,v]) - X_{t∧a}((u,v]))` against the grid
/// pipeline on the mollified rectangle `Y·1_{(a,b]}(s)·1_{(u,v]}(x)`.
pub fn elementary_integral_check(
    noise: &SpectralNoise,
    (a, b): (f64, f64),
    (u, v): (f64, f64),
    y: f64,
    dx: f64,
    t: f64,
) -> Result<VerificationReport> {
    let x0 = u - 4.0 * dx;
    let n_space = ((v - u) / dx).ceil() as usize + 9;
    let (ja, jb) = (noise.steps_up_to(a.min(t))?, noise.steps_up_to(b.min(t))?);
    let rect = mollified_rectangle(u, v, dx);
    let s = GridIntegrand::deterministic(noise.n_steps, n_space, x0, dx, |j, x| {
        if j >= ja && j < jb {
            y * rect(x)
        } else {
            0.0
        }
    })?;
    let grid_value = integrate(&s, noise)?;
    let xb = noise.field_value(b.min(t), v)? - noise.field_value(b.min(t), u)?;
    let xa = noise.field_value(a.min(t), v)? - noise.field_value(a.min(t), u)?;
    let exact = y * (xb - xa);
    Ok(VerificationReport::relative("elementary_integral", grid_value, exact, 1e-2)
        .with_input("a", a)
        .with_input("b", b)
        .with_input("u", u)
        .with_input("v", v)
        .with_input("dx", dx))
}
