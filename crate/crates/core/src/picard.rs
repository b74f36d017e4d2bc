//! Picard iteration for the mild equation `u = w + ∫∫ G_{t-s}(x-y) σ(u(s,y)) X(ds,dy)`
//! with affine `σ`, on a periodic space grid with FFT-aligned noise modes.
//!
//! Each source slab `[t_i, t_{i+1})` contributes `σ(u(t_i,·))·ẇ_i` (left-endpoint,
//! predictable). The convolution with `G` is propagated mode by mode:
//! the wave kernel `sin(τξ)/ξ` by a rotation, evaluated at slab midpoints; the heat
//! kernel `e^{-τξ²/2}` by exponential decay with a slab factor that reproduces the
//! exact per-slab variance `∫ e^{-(t-s)ξ²} ds`.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constants::{big_c_h, c_h, frequency_identity_constant, HurstIndex};
use crate::error::{domain, Error, Result};
use crate::gronwall::{GFunction, GronwallProblem};
use crate::kernels::{f_ab, weighted_fourier_norm, Kernel};
use crate::noise::{realization_seed, splitmix64, SpectralGrid, SpectralNoise};
use crate::report::VerificationReport;

/// `σ(x) = a·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineSigma {
    pub a: f64,
    pub b: f64,
}

impl AffineSigma {
    pub fn new(a: f64, b: f64) -> Self {
        AffineSigma { a, b }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    /// `(|σ(x)-σ(y)-σ(u)+σ(v)|, |a|·|x-y-u+v|)`; equal up to rounding for affine `σ`.
    pub fn four_point(&self, x: f64, y: f64, u: f64, v: f64) -> (f64, f64) {
        (
            (self.eval(x) - self.eval(y) - self.eval(u) + self.eval(v)).abs(),
            self.a.abs() * (x - y - u + v).abs(),
        )
    }
}

/// Deterministic initial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    /// `amplitude · Σ_{k<terms} 2^{-k·hurst} cos(2^k x + φ_k)`, Hölder of order `hurst`.
    Weierstrass { amplitude: f64, hurst: f64, seed: u64, terms: usize },
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Constant { value }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Weierstrass { amplitude, hurst, seed, terms } => {
                let mut s = 0.0;
                let mut freq: f64 = 1.0;
                for k in 0..terms {
                    let phase = 2.0 * PI * (splitmix64(seed.wrapping_add(k as u64)) >> 11) as f64 / (1u64 << 53) as f64;
                    s += freq.powf(-hurst) * (freq * x + phase).cos();
                    freq *= 2.0;
                }
                amplitude * s
            }
        }
    }

    /// `const:<v>`, `holder-sample` or `holder-sample:<seed>`.
    pub fn parse(s: &str, hurst: f64) -> Result<Self> {
        if let Some(v) = s.strip_prefix("const:") {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("bad constant profile `{s}`")))?;
            return Ok(Profile::constant(value));
        }
        if s == "holder-sample" || s.starts_with("holder-sample:") {
            let seed = match s.strip_prefix("holder-sample:") {
                Some(v) => v.trim().parse().map_err(|_| Error::Domain(format!("bad seed in `{s}`")))?,
                None => 1,
            };
            return Ok(Profile::Weierstrass {
                amplitude: 0.5,
                hurst,
                seed,
                terms: 24,
            });
        }
        domain(format!("unknown profile `{s}`; expected const:<v> or holder-sample[:seed]"))
    }
}

/// `u(0,·) = u0`, `∂_t u(0,·) = v0` (wave only).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u0: Profile,
    pub v0: Profile,
    pub holder_exponent: f64,
    /// Largest `|u0(x)-u0(y)|/|x-y|^H` over the spot-checked pairs.
    pub holder_constant: f64,
}

impl InitialData {
    /// Spot-checks boundedness and the Hölder ratio of `u0` on `window`.
    pub fn new(u0: Profile, v0: Profile, h: HurstIndex, window: (f64, f64)) -> Result<Self> {
        let hv = h.value();
        let (lo, hi) = window;
        let mut worst: f64 = 0.0;
        let n = 400;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            for p in [u0.eval(x), v0.eval(x)] {
                if !p.is_finite() {
                    return domain(format!("initial data not finite at x = {x}"));
                }
            }
            for k in 1..=20 {
                let d = (hi - lo) * 0.5f64.powi(k);
                let y = x + d;
                worst = worst.max((u0.eval(x) - u0.eval(y)).abs() / d.powf(hv));
            }
        }
        Ok(InitialData {
            u0,
            v0,
            holder_exponent: hv,
            holder_constant: worst,
        })
    }

    pub fn constant(u0: f64, v0: f64, h: HurstIndex) -> Self {
        InitialData {
            u0: Profile::constant(u0),
            v0: Profile::constant(v0),
            holder_exponent: h.value(),
            holder_constant: 0.0,
        }
    }
}

/// Space-time grid: `n_steps + 1` time rows, `n_space` periodic space points
/// `x_n = x0 + n·dx` covering the core window `[-half_core, half_core]` plus padding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverGrid {
    pub kernel: Kernel,
    pub t_end: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub n_space: usize,
    pub dx: f64,
    pub x0: f64,
    pub half_core: f64,
    pub padding: f64,
}

impl SolverGrid {
    /// Padding that keeps the core window free of wrap-around: `T` (wave), `6√T` (heat).
    pub fn required_padding(kernel: Kernel, t_end: f64) -> f64 {
        match kernel {
            Kernel::Wave => t_end,
            Kernel::Heat => 6.0 * t_end.sqrt(),
        }
    }

    pub fn new(kernel: Kernel, t_end: f64, n_steps: usize, half_core: f64, n_space: usize) -> Result<Self> {
        Self::with_padding(kernel, t_end, n_steps, half_core, Self::required_padding(kernel, t_end), n_space)
    }

    pub fn with_padding(kernel: Kernel, t_end: f64, n_steps: usize, half_core: f64, padding: f64, n_space: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return domain(format!("horizon must be positive, got {t_end}"));
        }
        if n_steps == 0 {
            return domain("need at least one time step");
        }
        if !(half_core > 0.0) || !(padding >= 0.0) {
            return domain("core half-width must be positive and padding nonnegative");
        }
        if n_space < 8 {
            return domain("need at least 8 space points");
        }
        let period = 2.0 * (half_core + padding);
        Ok(SolverGrid {
            kernel,
            t_end,
            n_steps,
            dt: t_end / n_steps as f64,
            n_space,
            dx: period / n_space as f64,
            x0: -period / 2.0,
            half_core,
            padding,
        })
    }

    pub fn period(&self) -> f64 {
        self.n_space as f64 * self.dx
    }

    pub fn x(&self, n: usize) -> f64 {
        self.x0 + n as f64 * self.dx
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn rows(&self) -> usize {
        self.n_steps + 1
    }

    /// Indices of the core window.
    pub fn core(&self) -> Range<usize> {
        let lo = ((-self.half_core - self.x0) / self.dx - 1e-9).ceil().max(0.0) as usize;
        let hi = ((self.half_core - self.x0) / self.dx + 1e-9).floor() as usize;
        lo..(hi + 1).min(self.n_space)
    }

    /// Signed DFT frequency of index `k`.
    pub fn xi(&self, k: usize) -> f64 {
        let n = self.n_space as i64;
        let m = if (k as i64) <= n / 2 { k as i64 } else { k as i64 - n };
        2.0 * PI * m as f64 / self.period()
    }

    fn is_nyquist(&self, k: usize) -> bool {
        self.n_space % 2 == 0 && k == self.n_space / 2
    }

    /// Noise modes matched to this grid.
    pub fn spectral_grid(&self, h: HurstIndex) -> Result<SpectralGrid> {
        SpectralGrid::fft_aligned(h, self.period(), self.n_space, self.x0)
    }

    fn check_window(&self) -> Result<()> {
        let need = Self::required_padding(self.kernel, self.t_end);
        if self.padding < need * (1.0 - 1e-9) {
            return Err(Error::Window(format!(
                "padding {} is below the {} domain of dependence {need}",
                self.padding, self.kernel
            )));
        }
        Ok(())
    }
}

/// Real samples `u(t_j, x_n)`, rows `j = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: SolverGrid,
    pub h: HurstIndex,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: SolverGrid, h: HurstIndex) -> Self {
        SpaceTimeField {
            grid,
            h,
            values: vec![0.0; grid.rows() * grid.n_space],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.n_space;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.grid.n_space;
        &mut self.values[j * n..(j + 1) * n]
    }

    pub fn at(&self, j: usize, n: usize) -> f64 {
        self.values[j * self.grid.n_space + n]
    }

    /// `sup` over all rows and core points of `|self - other|`.
    pub fn core_sup_diff(&self, other: &SpaceTimeField) -> f64 {
        let core = self.grid.core();
        (0..self.grid.rows())
            .flat_map(|j| {
                let (a, b) = (self.row(j), other.row(j));
                core.clone().map(move |n| (a[n] - b[n]).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV rows `t,x,value` for the given time rows, core window only.
    pub fn to_csv(&self, rows: &[usize]) -> String {
        let mut s = String::from("t,x,value\n");
        for &j in rows {
            for n in self.grid.core() {
                s.push_str(&format!(
                    "{},{},{}\n",
                    crate::report::fmt12(self.grid.t(j)),
                    crate::report::fmt12(self.grid.x(n)),
                    crate::report::fmt12(self.at(j, n))
                ));
            }
        }
        s
    }
}

/// Homogeneous part `w`: d'Alembert (wave) or heat-kernel convolution (heat).
pub fn homogeneous_term(init: &InitialData, grid: &SolverGrid, h: HurstIndex) -> Result<SpaceTimeField> {
    grid.check_window()?;
    let mut w = SpaceTimeField::zeros(*grid, h);
    match grid.kernel {
        Kernel::Wave => {
            let panels = 64;
            for j in 0..grid.rows() {
                let t = grid.t(j);
                for n in 0..grid.n_space {
                    let x = grid.x(n);
                    let mut v = 0.5 * (init.u0.eval(x + t) + init.u0.eval(x - t));
                    if t > 0.0 {
                        // Trapezoidal rule for ½∫_{x-t}^{x+t} v0.
                        let hstep = 2.0 * t / panels as f64;
                        let mut s = 0.5 * (init.v0.eval(x - t) + init.v0.eval(x + t));
                        for k in 1..panels {
                            s += init.v0.eval(x - t + k as f64 * hstep);
                        }
                        v += 0.5 * s * hstep;
                    }
                    w.row_mut(j)[n] = v;
                }
            }
        }
        Kernel::Heat => {
            let n = grid.n_space;
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(n);
            let inv = planner.plan_fft_inverse(n);
            let mut spec: Vec<Complex64> = (0..n).map(|k| Complex64::new(init.u0.eval(grid.x(k)), 0.0)).collect();
            inv.process(&mut spec);
            spec.iter_mut().for_each(|c| *c /= n as f64);
            w.row_mut(0).iter_mut().enumerate().for_each(|(k, v)| *v = init.u0.eval(grid.x(k)));
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for j in 1..grid.rows() {
                let t = grid.t(j);
                for k in 0..n {
                    let xi = grid.xi(k);
                    buf[k] = spec[k] * (-t * xi * xi / 2.0).exp();
                }
                fwd.process(&mut buf);
                w.row_mut(j).iter_mut().zip(&buf).for_each(|(v, c)| *v = c.re);
            }
        }
    }
    Ok(w)
}

/// Noise increment densities `ẇ_j(x_n)` of one realization, cached for all iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub n_steps: usize,
    pub n_space: usize,
    rows: Vec<f64>,
}

impl NoiseField {
    pub fn from_noise(noise: &SpectralNoise, grid: &SolverGrid) -> Result<Self> {
        let (period, n, origin) = noise
            .grid
            .fft_params()
            .ok_or_else(|| Error::Shape("solver needs FFT-aligned noise".into()))?;
        let same = n == grid.n_space
            && (period - grid.period()).abs() <= 1e-12 * period
            && (origin - grid.x0).abs() <= 1e-12 * period
            && noise.n_steps == grid.n_steps
            && (noise.dt - grid.dt).abs() <= 1e-12 * grid.dt;
        if !same {
            return Err(Error::Shape("noise realization does not match the solver grid".into()));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut rows = Vec::with_capacity(n * grid.n_steps);
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..grid.n_steps {
            noise.density_into(j, origin, &mut c);
            fft.process(&mut c);
            rows.extend(c.iter().map(|z| z.re));
        }
        Ok(NoiseField {
            n_steps: grid.n_steps,
            n_space: n,
            rows,
        })
    }

    /// Sample realization `seed` directly on the solver grid.
    pub fn sample(grid: &SolverGrid, h: HurstIndex, seed: u64) -> Result<Self> {
        let sg = Arc::new(grid.spectral_grid(h)?);
        let noise = SpectralNoise::sample(sg, grid.dt, grid.n_steps, seed)?;
        Self::from_noise(&noise, grid)
    }

    pub fn zeros(grid: &SolverGrid) -> Self {
        NoiseField {
            n_steps: grid.n_steps,
            n_space: grid.n_space,
            rows: vec![0.0; grid.n_steps * grid.n_space],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.n_space..(j + 1) * self.n_space]
    }

    /// Copy with increments of steps `≥ k` set to zero.
    pub fn truncated(&self, k: usize) -> Self {
        let mut out = self.clone();
        let start = (k * self.n_space).min(out.rows.len());
        out.rows[start..].iter_mut().for_each(|v| *v = 0.0);
        out
    }
}

/// Per-mode propagation coefficients and FFT plans.
struct Propagator {
    grid: SolverGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    // wave: rotation (cos ξdt, ξ sin ξdt, sin ξdt / ξ) and slab injection (cos ξdt/2, sin(ξdt/2)/ξ)
    // heat: decay e^{-ξ²dt/2} in `c0`, slab factor in `s_in`
    c0: Vec<f64>,
    xs: Vec<f64>,
    sx: Vec<f64>,
    c_in: Vec<f64>,
    s_in: Vec<f64>,
}

impl Propagator {
    fn new(grid: &SolverGrid) -> Self {
        let n = grid.n_space;
        let mut planner = FftPlanner::new();
        let dt = grid.dt;
        let mut p = Propagator {
            grid: *grid,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            c0: vec![0.0; n],
            xs: vec![0.0; n],
            sx: vec![0.0; n],
            c_in: vec![0.0; n],
            s_in: vec![0.0; n],
        };
        for k in 0..n {
            let xi = grid.xi(k);
            let sinc = |tau: f64| if xi == 0.0 { tau } else { (xi * tau).sin() / xi };
            match grid.kernel {
                Kernel::Wave => {
                    p.c0[k] = (xi * dt).cos();
                    p.xs[k] = xi * (xi * dt).sin();
                    p.sx[k] = sinc(dt);
                    p.c_in[k] = (xi * dt / 2.0).cos();
                    p.s_in[k] = sinc(dt / 2.0);
                }
                Kernel::Heat => {
                    let q = xi * xi * dt;
                    p.c0[k] = (-q / 2.0).exp();
                    p.s_in[k] = if q < 1e-12 { 1.0 } else { (-(-q).exp_m1() / q).sqrt() };
                }
            }
            if grid.is_nyquist(k) {
                p.c_in[k] = 0.0;
                p.s_in[k] = 0.0;
            }
        }
        p
    }

    /// One Picard map application: `out = w + G ⋆ (σ(u_prev) ẇ)`.
    fn apply(&self, u_prev: &SpaceTimeField, sigma: AffineSigma, noise: &NoiseField, w: &SpaceTimeField, out: &mut SpaceTimeField) {
        let n = self.grid.n_space;
        let inv_n = 1.0 / n as f64;
        let mut cstate = vec![Complex64::new(0.0, 0.0); n];
        let mut sstate = vec![Complex64::new(0.0, 0.0); n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        out.row_mut(0).copy_from_slice(w.row(0));
        for j in 0..self.grid.n_steps {
            let (u, wn) = (u_prev.row(j), noise.row(j));
            for k in 0..n {
                buf[k] = Complex64::new(sigma.eval(u[k]) * wn[k], 0.0);
            }
            self.inv.process(&mut buf);
            match self.grid.kernel {
                Kernel::Wave => {
                    for k in 0..n {
                        let a = buf[k] * inv_n;
                        let (c, s) = (cstate[k], sstate[k]);
                        cstate[k] = c * self.c0[k] - s * self.xs[k] + a * self.c_in[k];
                        sstate[k] = c * self.sx[k] + s * self.c0[k] + a * self.s_in[k];
                        buf[k] = sstate[k];
                    }
                }
                Kernel::Heat => {
                    for k in 0..n {
                        let a = buf[k] * inv_n;
                        sstate[k] = sstate[k] * self.c0[k] + a * self.s_in[k];
                        buf[k] = sstate[k];
                    }
                }
            }
            self.fwd.process(&mut buf);
            let row = out.row_mut(j + 1);
            let wr = w.row(j + 1);
            for k in 0..n {
                row[k] = wr[k] + buf[k].re;
            }
        }
    }
}

/// `u_next = w + Σ_{i<j} G ⋆ (σ(u_prev(t_i,·)) ẇ_i)` evaluated at every `t_j`.
pub fn picard_step(u_prev: &SpaceTimeField, sigma: AffineSigma, noise: &NoiseField, w: &SpaceTimeField) -> Result<SpaceTimeField> {
    if u_prev.grid != w.grid || noise.n_space != w.grid.n_space || noise.n_steps != w.grid.n_steps {
        return Err(Error::Shape("picard step needs matching grids".into()));
    }
    let mut out = SpaceTimeField::zeros(w.grid, w.h);
    Propagator::new(&w.grid).apply(u_prev, sigma, noise, w, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once `δ_n ≤ tol·δ_1`, `δ_n` the grid 𝒳₁ delta.
    pub tol: f64,
    /// Constant added to `w` to form the starting iterate.
    pub perturbation: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 12,
            tol: 1e-3,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveHistory {
    /// `δ_n = sup_{j, x ∈ core} |u^n - u^{n-1}|`, `n ≥ 1`.
    pub deltas: Vec<f64>,
    pub iterations: usize,
    /// Pathwise 𝒳₂ seminorm of the returned field.
    pub x2_seminorm: f64,
}

/// Iterate the Picard map from `u⁰ = w + perturbation` on one noise realization.
pub fn solve(sigma: AffineSigma, w: &SpaceTimeField, noise: &NoiseField, opts: SolveOptions) -> Result<(SpaceTimeField, SolveHistory)> {
    if opts.max_iters == 0 {
        return domain("max_iters must be at least 1");
    }
    let prop = Propagator::new(&w.grid);
    let mut prev = w.clone();
    prev.values.iter_mut().for_each(|v| *v += opts.perturbation);
    let mut next = SpaceTimeField::zeros(w.grid, w.h);
    let mut deltas = Vec::new();
    for n in 1..=opts.max_iters {
        prop.apply(&prev, sigma, noise, w, &mut next);
        if !next.all_finite() {
            return domain(format!("iterate {n} is not finite"));
        }
        let d = next.core_sup_diff(&prev);
        deltas.push(d);
        std::mem::swap(&mut prev, &mut next);
        if d <= opts.tol * deltas[0] {
            let x2 = x2_seminorm(&prev)?;
            return Ok((
                prev,
                SolveHistory {
                    deltas,
                    iterations: n,
                    x2_seminorm: x2,
                },
            ));
        }
    }
    Err(Error::Nonconvergence { history: deltas })
}

/// Runs [`solve`] from `w` and from `w + perturbation` on the same noise and
/// compares the limits against three times the stopping tolerance.
pub fn uniqueness_probe(sigma: AffineSigma, w: &SpaceTimeField, noise: &NoiseField, opts: SolveOptions, perturbation: f64) -> Result<VerificationReport> {
    let start = std::time::Instant::now();
    let (ua, ha) = solve(sigma, w, noise, SolveOptions { perturbation: 0.0, ..opts })?;
    let (ub, hb) = solve(sigma, w, noise, SolveOptions { perturbation, ..opts })?;
    let gap = ua.core_sup_diff(&ub);
    let stop = opts.tol * ha.deltas[0];
    Ok(VerificationReport::upper_bound("uniqueness_probe", gap, 3.0 * stop, 0.0)
        .with_input("perturbation", perturbation)
        .with_input("tol", opts.tol)
        .with_extra("iterations_a", ha.iterations as f64)
        .with_extra("iterations_b", hb.iterations as f64)
        .with_runtime(start.elapsed().as_secs_f64()))
}

/// Grid evaluation of `∫∫ |y-z|^{2H-2} |Y(y) - Y(z)|² dz` per `y` for one path,
/// and of its time convolution against `G²`.
pub struct IncrementFunctional {
    grid: SolverGrid,
    h: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Transform of the cell weights `∫_cell |r|^{2H-2} dr`, `r ≠ 0`.
    w_hat: Vec<f64>,
    w_sum: f64,
    near: f64,
    /// `K̂_ℓ(ξ) = ∫_{(ℓ-1)dt}^{ℓ dt} ℱ(G_τ²)(ξ) dτ`, `ℓ = 1..=n_steps` (index 0 unused).
    k_hat: Vec<Vec<f64>>,
}

impl IncrementFunctional {
    pub fn new(grid: &SolverGrid, h: HurstIndex) -> Self {
        let hv = h.value();
        let n = grid.n_space;
        let dx = grid.dx;
        let p = 2.0 * hv - 1.0;
        let cell = |a: f64, b: f64| (b.powf(p) - a.powf(p)) / p;
        let mut w = vec![0.0; n];
        for (k, wk) in w.iter_mut().enumerate().skip(1) {
            let r = k.min(n - k) as f64;
            *wk = if n % 2 == 0 && k == n / 2 {
                2.0 * cell((r - 0.5) * dx, r * dx)
            } else {
                cell((r - 0.5) * dx, (r + 0.5) * dx)
            };
        }
        // Mass beyond half a period, spread uniformly over the far band
        // `N/4 ≤ |k| ≤ N/2` so it weights the average far-field increment.
        let tail = 2.0 * (grid.period() / 2.0).powf(p) / (-p);
        let far: Vec<usize> = (1..n).filter(|&k| 4 * k.min(n - k) >= n).collect();
        for &k in &far {
            w[k] += tail / far.len() as f64;
        }
        let w_sum = w.iter().sum();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut c: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut c);
        let w_hat = c.iter().map(|z| z.re).collect();
        // |D(y)-D(y+r)|² ≈ q(y)(|r|/dx)^{2H} inside the zero cell.
        let near = 2.0 * dx.powf(-2.0 * hv) * (dx / 2.0).powf(4.0 * hv - 1.0) / (4.0 * hv - 1.0);
        let k_hat = (0..=grid.n_steps)
            .map(|l| {
                if l == 0 {
                    return Vec::new();
                }
                let (a, b) = ((l - 1) as f64 * grid.dt, l as f64 * grid.dt);
                (0..n).map(|k| g2_slab_transform(grid.kernel, grid.xi(k), a, b)).collect()
            })
            .collect();
        IncrementFunctional {
            grid: *grid,
            h: hv,
            fwd,
            inv,
            w_hat,
            w_sum,
            near,
            k_hat,
        }
    }

    /// `φ(y) = ∫ |r|^{2H-2} |D(y) - D(y+r)|² dr` on the grid.
    pub fn phi(&self, d: &[f64], out: &mut [f64]) {
        let n = d.len();
        let mut a: Vec<Complex64> = d.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut b: Vec<Complex64> = d.iter().map(|&v| Complex64::new(v * v, 0.0)).collect();
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        for k in 0..n {
            a[k] *= self.w_hat[k];
            b[k] *= self.w_hat[k];
        }
        self.inv.process(&mut a);
        self.inv.process(&mut b);
        let inv_n = 1.0 / n as f64;
        for y in 0..n {
            let dy = d[y];
            let conv_d = a[y].re * inv_n;
            let conv_d2 = b[y].re * inv_n;
            let up = d[(y + 1) % n];
            let down = d[(y + n - 1) % n];
            let q = 0.5 * ((dy - up).powi(2) + (dy - down).powi(2));
            out[y] = (dy * dy * self.w_sum + conv_d2 - 2.0 * dy * conv_d).max(0.0) + self.near * q;
        }
    }

    /// DFT coefficients of a real row.
    pub fn coefficients(&self, row: &[f64]) -> Vec<Complex64> {
        let n = row.len();
        let mut c: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inv.process(&mut c);
        c.iter_mut().for_each(|z| *z /= n as f64);
        c
    }

    /// `∫_0^{t_j} (G²_{t_j-s} ⋆ Φ_s)(x) ds` with Φ trapezoidal in time, given the
    /// DFT coefficients of `Φ` at rows `0..=j`.
    pub fn time_convolution(&self, coeffs: &[Vec<Complex64>], j: usize) -> Vec<f64> {
        let n = self.grid.n_space;
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..j {
            let k = &self.k_hat[j - i];
            for m in 0..n {
                acc[m] += (coeffs[i][m] + coeffs[i + 1][m]) * (0.5 * k[m]);
            }
        }
        self.fwd.process(&mut acc);
        acc.iter().map(|z| z.re).collect()
    }

    pub fn hurst(&self) -> f64 {
        self.h
    }
}

/// `∫_a^b ℱ(G_τ²)(ξ) dτ`: `(cos aξ - cos bξ)/(2ξ²)` (wave),
/// `(erf(√b ξ/2) - erf(√a ξ/2))/ξ` (heat).
pub fn g2_slab_transform(kernel: Kernel, xi: f64, a: f64, b: f64) -> f64 {
    let x = xi.abs();
    match kernel {
        Kernel::Wave => {
            if x * b < 1e-4 {
                (b * b - a * a) / 4.0 - x * x * (b.powi(4) - a.powi(4)) / 48.0
            } else {
                // cos aξ - cos bξ = 2 sin((a+b)ξ/2) sin((b-a)ξ/2)
                (((a + b) * x / 2.0).sin() * ((b - a) * x / 2.0).sin()) / (x * x)
            }
        }
        Kernel::Heat => {
            if x * b.sqrt() < 1e-6 {
                (b.sqrt() - a.sqrt()) / PI.sqrt()
            } else {
                (libm::erf(b.sqrt() * x / 2.0) - libm::erf(a.sqrt() * x / 2.0)) / x
            }
        }
    }
}

/// Pathwise 𝒳₂ seminorm `sup_{t, x ∈ core} (∫_0^t ∫∫ G²_{t-s}(x-y) |Y(s,y)-Y(s,z)|² |y-z|^{2H-2})^{1/2}`.
pub fn x2_seminorm(field: &SpaceTimeField) -> Result<f64> {
    let f = IncrementFunctional::new(&field.grid, field.h);
    let n = field.grid.n_space;
    let mut phi = vec![0.0; n];
    let coeffs: Vec<Vec<Complex64>> = (0..field.grid.rows())
        .map(|j| {
            f.phi(field.row(j), &mut phi);
            f.coefficients(&phi)
        })
        .collect();
    let core = field.grid.core();
    let mut best: f64 = 0.0;
    for j in 1..field.grid.rows() {
        let w = f.time_convolution(&coeffs, j);
        best = best.max(core.clone().map(|x| w[x]).fold(0.0, f64::max));
    }
    Ok(best.sqrt())
}

/// Settings of an ensemble of Picard runs over independent noise realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub n_realizations: usize,
    pub seed: u64,
    /// Iterates computed per realization (no early stop; convergence is judged on the ensemble).
    pub iterations: usize,
    pub diag_rows: usize,
    pub batches: usize,
    /// Space lags (grid points) for increment moments of the final iterate at `t = T`.
    pub space_lags: Vec<usize>,
    /// Time lags (steps) for increment moments of the final iterate, ending at `t = T`.
    pub time_lags: Vec<usize>,
    /// Moment orders recorded for the final iterate at the diagnostic rows.
    pub moment_orders: Vec<f64>,
    pub perturbation: f64,
    /// Accumulate the increment functionals behind `W_n` and the 𝒳₂ seminorm.
    pub diagnostics: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            n_realizations: 100,
            seed: 1,
            iterations: 8,
            diag_rows: 16,
            batches: 10,
            space_lags: Vec::new(),
            time_lags: Vec::new(),
            moment_orders: vec![2.0],
            perturbation: 0.0,
            diagnostics: true,
        }
    }
}

/// Point estimate with standard error per core point.
#[derive(Debug, Clone, PartialEq)]
pub struct RowEstimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub grid: SolverGrid,
    pub h: HurstIndex,
    pub sigma: AffineSigma,
    pub n_realizations: usize,
    pub iterations: usize,
    pub diag_rows: Vec<usize>,
    /// `V_n(t_j)`, index `[n-1][j]`.
    pub v: Vec<Vec<f64>>,
    /// `W_n(t_j)`, index `[n-1][j]`.
    pub w: Vec<Vec<f64>>,
    /// `E|u^n - u^{n-1}|²` at diagnostic rows over the core, `[n-1][d]`.
    pub v_diag: Vec<Vec<RowEstimate>>,
    /// `W_n(t_d, x)` before the sup, `[n-1][d]`.
    pub w_diag: Vec<Vec<RowEstimate>>,
    /// `sup_{t_d, x} E|u^n|²`, `[n]` for `n = 0..=iterations`.
    pub second_moment_sup: Vec<f64>,
    /// 𝒳₂ seminorm of the final iterate (when diagnostics are on).
    pub x2_final: Option<f64>,
    /// Per realization, per lag: core average of `|u(T,x+ℓdx) - u(T,x)|²`.
    pub space_increments: Vec<Vec<f64>>,
    /// Per realization, per lag: core average of `|u(T,x) - u(T-ℓdt,x)|²`.
    pub time_increments: Vec<Vec<f64>>,
    /// `(p, E|u|^p)` of the final iterate at diagnostic rows, `[order][d]`.
    pub final_moments: Vec<(f64, Vec<RowEstimate>)>,
}

impl EnsembleResult {
    /// `δ_n = sup_t V_n(t)^{1/2}`: grid 𝒳₁ norm of `u^n - u^{n-1}` for `p = 2`.
    pub fn deltas_x1(&self) -> Vec<f64> {
        self.v.iter().map(|r| r.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt()).collect()
    }

    /// `sup_t W_n(t)^{1/2}`: grid 𝒳₂ seminorm of `u^n - u^{n-1}`.
    pub fn deltas_x2(&self) -> Vec<f64> {
        self.w.iter().map(|r| r.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt()).collect()
    }

    /// `M_n(t_j) = V_n(t_j) + W_n(t_j)`.
    pub fn m(&self) -> Vec<Vec<f64>> {
        self.v
            .iter()
            .zip(&self.w)
            .map(|(v, w)| v.iter().zip(w).map(|(a, b)| a + b).collect())
            .collect()
    }
}

struct Accum {
    rows: usize,
    n: usize,
    ncore: usize,
    sum_d2: Vec<f64>,
    sum_phi: Vec<f64>,
    sum_phi_u: Vec<f64>,
    batch_v: Vec<f64>,
    batch_w: Vec<f64>,
    batch_count: Vec<usize>,
    batch_u2: Vec<f64>,
    batch_mom: Vec<f64>,
    space_inc: Vec<(usize, Vec<f64>)>,
    time_inc: Vec<(usize, Vec<f64>)>,
}

struct Ctx<'a> {
    grid: SolverGrid,
    h: HurstIndex,
    sigma: AffineSigma,
    w: &'a SpaceTimeField,
    opts: &'a EnsembleOptions,
    diag: Vec<usize>,
    functional: IncrementFunctional,
}

impl Accum {
    fn new(ctx: &Ctx) -> Self {
        let g = &ctx.grid;
        let it = ctx.opts.iterations;
        let nd = ctx.diag.len();
        let nc = g.core().len();
        let b = ctx.opts.batches;
        let diag = ctx.opts.diagnostics;
        Accum {
            rows: g.rows(),
            n: g.n_space,
            ncore: nc,
            sum_d2: vec![0.0; it * g.rows() * g.n_space],
            sum_phi: vec![0.0; if diag { it * g.rows() * g.n_space } else { 0 }],
            sum_phi_u: vec![0.0; if diag { g.rows() * g.n_space } else { 0 }],
            batch_v: vec![0.0; b * it * nd * nc],
            batch_w: vec![0.0; b * it * nd * nc],
            batch_count: vec![0; b],
            batch_u2: vec![0.0; b * (it + 1) * nd * nc],
            batch_mom: vec![0.0; b * ctx.opts.moment_orders.len() * nd * nc],
            space_inc: Vec::new(),
            time_inc: Vec::new(),
        }
    }

    fn merge(mut self, other: Accum) -> Accum {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.sum_d2, &other.sum_d2);
        add(&mut self.sum_phi, &other.sum_phi);
        add(&mut self.sum_phi_u, &other.sum_phi_u);
        add(&mut self.batch_v, &other.batch_v);
        add(&mut self.batch_w, &other.batch_w);
        add(&mut self.batch_u2, &other.batch_u2);
        add(&mut self.batch_mom, &other.batch_mom);
        self.batch_count.iter_mut().zip(&other.batch_count).for_each(|(a, b)| *a += b);
        self.space_inc.extend(other.space_inc);
        self.time_inc.extend(other.time_inc);
        self
    }

    fn realization(mut self, ctx: &Ctx, r: usize) -> Result<Accum> {
        let g = &ctx.grid;
        let opts = ctx.opts;
        let noise = NoiseField::sample(g, ctx.h, realization_seed(opts.seed, r as u64))?;
        let prop = Propagator::new(g);
        let core = g.core();
        let nd = ctx.diag.len();
        let nc = self.ncore;
        let b = r % opts.batches;
        self.batch_count[b] += 1;
        let mut prev = ctx.w.clone();
        prev.values.iter_mut().for_each(|v| *v += opts.perturbation);
        let mut next = SpaceTimeField::zeros(*g, ctx.h);
        let mut d = vec![0.0; self.n];
        let mut phi = vec![0.0; self.n];
        let it = opts.iterations;
        let u2_at = |n: usize, di: usize, ci: usize| ((b * (it + 1) + n) * nd + di) * nc + ci;
        for (di, &j) in ctx.diag.iter().enumerate() {
            for (ci, x) in core.clone().enumerate() {
                self.batch_u2[u2_at(0, di, ci)] += prev.at(j, x).powi(2);
            }
        }
        for n in 1..=it {
            prop.apply(&prev, ctx.sigma, &noise, ctx.w, &mut next);
            let mut coeffs = Vec::with_capacity(self.rows);
            for j in 0..self.rows {
                let (a, bb) = (next.row(j), prev.row(j));
                for x in 0..self.n {
                    d[x] = a[x] - bb[x];
                }
                let base = ((n - 1) * self.rows + j) * self.n;
                self.sum_d2[base..base + self.n]
                    .iter_mut()
                    .zip(&d)
                    .for_each(|(s, v)| *s += v * v);
                if opts.diagnostics {
                    ctx.functional.phi(&d, &mut phi);
                    self.sum_phi[base..base + self.n]
                        .iter_mut()
                        .zip(&phi)
                        .for_each(|(s, v)| *s += v);
                    coeffs.push(ctx.functional.coefficients(&phi));
                }
            }
            for (di, &j) in ctx.diag.iter().enumerate() {
                let wrow = if opts.diagnostics {
                    ctx.functional.time_convolution(&coeffs, j)
                } else {
                    vec![0.0; self.n]
                };
                let drow_a = next.row(j);
                let drow_b = prev.row(j);
                for (ci, x) in core.clone().enumerate() {
                    let idx = ((b * it + (n - 1)) * nd + di) * nc + ci;
                    self.batch_v[idx] += (drow_a[x] - drow_b[x]).powi(2);
                    self.batch_w[idx] += wrow[x];
                    self.batch_u2[u2_at(n, di, ci)] += drow_a[x].powi(2);
                }
            }
            std::mem::swap(&mut prev, &mut next);
        }
        // Final iterate: 𝒳₂ accumulator, moments, increments.
        for j in (0..self.rows).filter(|_| opts.diagnostics) {
            ctx.functional.phi(prev.row(j), &mut phi);
            let base = j * self.n;
            self.sum_phi_u[base..base + self.n]
                .iter_mut()
                .zip(&phi)
                .for_each(|(s, v)| *s += v);
        }
        for (oi, &p) in opts.moment_orders.iter().enumerate() {
            for (di, &j) in ctx.diag.iter().enumerate() {
                for (ci, x) in core.clone().enumerate() {
                    let idx = ((b * opts.moment_orders.len() + oi) * nd + di) * nc + ci;
                    self.batch_mom[idx] += prev.at(j, x).abs().powf(p);
                }
            }
        }
        let last = g.n_steps;
        let top = prev.row(last);
        let space: Vec<f64> = opts
            .space_lags
            .iter()
            .map(|&l| {
                let s: f64 = core.clone().map(|x| (top[(x + l) % self.n] - top[x]).powi(2)).sum();
                s / nc as f64
            })
            .collect();
        let time: Vec<f64> = opts
            .time_lags
            .iter()
            .map(|&l| {
                let lower = prev.row(last.saturating_sub(l));
                let s: f64 = core.clone().map(|x| (top[x] - lower[x]).powi(2)).sum();
                s / nc as f64
            })
            .collect();
        self.space_inc.push((r, space));
        self.time_inc.push((r, time));
        Ok(self)
    }
}

fn batch_estimate(sums: &[f64], counts: &[usize], offset: impl Fn(usize) -> usize, len: usize) -> RowEstimate {
    let total: usize = counts.iter().sum();
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    let active: Vec<usize> = (0..counts.len()).filter(|&b| counts[b] > 0).collect();
    let nb = active.len() as f64;
    for c in 0..len {
        let s: f64 = active.iter().map(|&b| sums[offset(b) + c]).sum();
        let m = s / total as f64;
        mean[c] = m;
        if nb > 1.0 {
            let v: f64 = active
                .iter()
                .map(|&b| (sums[offset(b) + c] / counts[b] as f64 - m).powi(2))
                .sum::<f64>()
                / (nb - 1.0);
            se[c] = (v / nb).sqrt();
        }
    }
    RowEstimate { mean, se }
}

/// Runs `opts.n_realizations` independent Picard sequences and accumulates the
/// `V_n`, `W_n` diagnostics, moments and increment statistics.
pub fn run_ensemble(sigma: AffineSigma, w: &SpaceTimeField, opts: &EnsembleOptions) -> Result<EnsembleResult> {
    if opts.n_realizations < 2 || opts.batches < 2 || opts.n_realizations < opts.batches {
        return Err(Error::EnsembleTooSmall {
            needed: opts.batches.max(2),
            got: opts.n_realizations,
        });
    }
    if opts.iterations == 0 {
        return domain("ensemble needs at least one iteration");
    }
    let g = w.grid;
    if opts.space_lags.iter().any(|&l| l == 0 || l >= g.n_space / 2) || opts.time_lags.iter().any(|&l| l == 0 || l > g.n_steps) {
        return domain("increment lags must be positive and inside the grid");
    }
    let nd = opts.diag_rows.clamp(1, g.n_steps);
    let diag: Vec<usize> = (1..=nd).map(|d| (d * g.n_steps) / nd).collect();
    let ctx = Ctx {
        grid: g,
        h: w.h,
        sigma,
        w,
        opts,
        diag,
        functional: IncrementFunctional::new(&g, w.h),
    };
    let acc = (0..opts.n_realizations)
        .into_par_iter()
        .try_fold(|| Accum::new(&ctx), |acc, r| acc.realization(&ctx, r))
        .try_reduce(|| Accum::new(&ctx), |a, b| Ok(a.merge(b)))?;

    let rn = opts.n_realizations as f64;
    let it = opts.iterations;
    let rows = g.rows();
    let n = g.n_space;
    let core = g.core();
    let nc = core.len();
    let sup_core = |row: &[f64]| core.clone().map(|x| row[x]).fold(0.0f64, f64::max);
    let mut v = Vec::with_capacity(it);
    let mut wv = Vec::with_capacity(it);
    for k in 0..it {
        let base = k * rows * n;
        v.push(
            (0..rows)
                .map(|j| sup_core(&acc.sum_d2[base + j * n..base + (j + 1) * n]) / rn)
                .collect::<Vec<_>>(),
        );
        if !opts.diagnostics {
            wv.push(vec![0.0; rows]);
            continue;
        }
        let coeffs: Vec<Vec<Complex64>> = (0..rows)
            .map(|j| {
                let row: Vec<f64> = acc.sum_phi[base + j * n..base + (j + 1) * n].iter().map(|s| s / rn).collect();
                ctx.functional.coefficients(&row)
            })
            .collect();
        let mut wrow = vec![0.0; rows];
        for (j, wj) in wrow.iter_mut().enumerate().skip(1) {
            *wj = sup_core(&ctx.functional.time_convolution(&coeffs, j));
        }
        wv.push(wrow);
    }
    let x2_final = opts.diagnostics.then(|| {
        let coeffs_u: Vec<Vec<Complex64>> = (0..rows)
            .map(|j| {
                let row: Vec<f64> = acc.sum_phi_u[j * n..(j + 1) * n].iter().map(|s| s / rn).collect();
                ctx.functional.coefficients(&row)
            })
            .collect();
        (1..rows)
            .map(|j| sup_core(&ctx.functional.time_convolution(&coeffs_u, j)))
            .fold(0.0f64, f64::max)
            .sqrt()
    });

    let counts = &acc.batch_count;
    let b_off = |b: usize, k: usize, di: usize, stride_k: usize| ((b * stride_k + k) * nd + di) * nc;
    let v_diag = (0..it)
        .map(|k| {
            (0..nd)
                .map(|di| batch_estimate(&acc.batch_v, counts, |b| b_off(b, k, di, it), nc))
                .collect()
        })
        .collect();
    let w_diag = (0..it)
        .map(|k| {
            (0..nd)
                .map(|di| batch_estimate(&acc.batch_w, counts, |b| b_off(b, k, di, it), nc))
                .collect()
        })
        .collect();
    let second_moment_sup = (0..=it)
        .map(|k| {
            (0..nd)
                .map(|di| {
                    batch_estimate(&acc.batch_u2, counts, |b| b_off(b, k, di, it + 1), nc)
                        .mean
                        .into_iter()
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max)
        })
        .collect();
    let no = opts.moment_orders.len();
    let final_moments = opts
        .moment_orders
        .iter()
        .enumerate()
        .map(|(oi, &p)| {
            (
                p,
                (0..nd)
                    .map(|di| batch_estimate(&acc.batch_mom, counts, |b| b_off(b, oi, di, no), nc))
                    .collect(),
            )
        })
        .collect();
    let mut space_inc = acc.space_inc;
    space_inc.sort_by_key(|(r, _)| *r);
    let mut time_inc = acc.time_inc;
    time_inc.sort_by_key(|(r, _)| *r);
    Ok(EnsembleResult {
        grid: g,
        h: w.h,
        sigma,
        n_realizations: opts.n_realizations,
        iterations: it,
        diag_rows: ctx.diag,
        v,
        w: wv,
        v_diag,
        w_diag,
        second_moment_sup,
        x2_final,
        space_increments: space_inc.into_iter().map(|(_, v)| v).collect(),
        time_increments: time_inc.into_iter().map(|(_, v)| v).collect(),
        final_moments,
    })
}

/// Power law `coef · τ^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn eval(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            0.0
        } else {
            self.coef * tau.powf(self.exponent)
        }
    }

    /// `∫_a^b coef·τ^e dτ`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let e1 = self.exponent + 1.0;
        self.coef * (b.max(0.0).powf(e1) - a.max(0.0).powf(e1)) / e1
    }
}

/// `J₁(τ) = 2a² c_H ∫ |ℱG_τ|² |ξ|^{1-2H} dξ`: `∝ τ^{2H}` (wave), `∝ τ^{H-1}` (heat).
pub fn j1(kernel: Kernel, h: HurstIndex, sigma: AffineSigma) -> Result<PowerLaw> {
    let hv = h.value();
    let coef = 2.0 * sigma.a * sigma.a * c_h(hv)? * weighted_fourier_norm(kernel, 1.0, 1.0 - 2.0 * hv)?;
    let exponent = match kernel {
        Kernel::Wave => 2.0 * hv,
        Kernel::Heat => hv - 1.0,
    };
    Ok(PowerLaw { coef, exponent })
}

/// `J₂(τ) = 2a² c_H K_H F(0, τ)`: `∝ τ^{4H+1}` (wave), `∝ τ^{2H-1}` (heat).
pub fn j2(kernel: Kernel, h: HurstIndex, sigma: AffineSigma) -> Result<PowerLaw> {
    let hv = h.value();
    let coef = 2.0 * sigma.a * sigma.a * c_h(hv)? * frequency_identity_constant(hv)? * f_ab(kernel, 0.0, 1.0, h)?;
    let exponent = match kernel {
        Kernel::Wave => 4.0 * hv + 1.0,
        Kernel::Heat => 2.0 * hv - 1.0,
    };
    Ok(PowerLaw { coef, exponent })
}

/// Constant in front of `W_n` in the `V` recurrence, `2 C_H a²` for `p = 2`.
pub fn rec1_constant(h: HurstIndex, sigma: AffineSigma) -> Result<f64> {
    Ok(2.0 * big_c_h(h.value())? * sigma.a * sigma.a)
}

/// `Σ_{i<j} (f_i + f_{i+1})/2 · ∫_{t_j-t_{i+1}}^{t_j-t_i} J(τ) dτ`.
pub fn slab_convolution(f: &[f64], j: usize, dt: f64, kern: PowerLaw) -> f64 {
    (0..j)
        .map(|i| {
            let (a, b) = ((j - i - 1) as f64 * dt, (j - i) as f64 * dt);
            0.5 * (f[i] + f[i + 1]) * kern.integral(a, b)
        })
        .sum()
}

/// Outcome of the `V_n`/`W_n` recurrence checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardDiagnostics {
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub deltas_x1: Vec<f64>,
    pub deltas_x2: Vec<f64>,
    /// Fraction of (n, t_d, x) points where `LHS - 2 SE > RHS`.
    pub rec1_violation_fraction: f64,
    pub rec2_violation_fraction: f64,
    pub rec_points: usize,
    /// Partial sums of `sup_t M_n(t)^{1/2}`.
    pub m_partial_sums: Vec<f64>,
}

/// Checks `V_{n+1}(t) ≤ ∫V_n J₁ + C W_n(t)` and `W_{n+1}(t) ≤ ∫V_n J₂ + ∫W_n J₁`
/// at the diagnostic rows, pointwise in `x` with two standard errors of slack.
pub fn vn_wn_diagnostics(res: &EnsembleResult) -> Result<PicardDiagnostics> {
    if res.n_realizations < 2 {
        return Err(Error::EnsembleTooSmall {
            needed: 2,
            got: res.n_realizations,
        });
    }
    let k = res.grid.kernel;
    let (jj1, jj2) = (j1(k, res.h, res.sigma)?, j2(k, res.h, res.sigma)?);
    let c = rec1_constant(res.h, res.sigma)?;
    let dt = res.grid.dt;
    let (mut bad1, mut bad2, mut total) = (0usize, 0usize, 0usize);
    for n in 0..res.iterations.saturating_sub(1) {
        for (di, &j) in res.diag_rows.iter().enumerate() {
            let rhs1 = slab_convolution(&res.v[n], j, dt, jj1) + c * res.w[n][j];
            let rhs2 = slab_convolution(&res.v[n], j, dt, jj2) + slab_convolution(&res.w[n], j, dt, jj1);
            let (lv, lw) = (&res.v_diag[n + 1][di], &res.w_diag[n + 1][di]);
            for x in 0..lv.mean.len() {
                total += 1;
                if lv.mean[x] - 2.0 * lv.se[x] > rhs1 {
                    bad1 += 1;
                }
                if lw.mean[x] - 2.0 * lw.se[x] > rhs2 {
                    bad2 += 1;
                }
            }
        }
    }
    let m = res.m();
    let mut acc = 0.0;
    let partial = m
        .iter()
        .map(|row| {
            acc += row.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt();
            acc
        })
        .collect();
    let frac = |b: usize| if total == 0 { 0.0 } else { b as f64 / total as f64 };
    Ok(PicardDiagnostics {
        v: res.v.clone(),
        w: res.w.clone(),
        deltas_x1: res.deltas_x1(),
        deltas_x2: res.deltas_x2(),
        rec1_violation_fraction: frac(bad1),
        rec2_violation_fraction: frac(bad2),
        rec_points: total,
        m_partial_sums: partial,
    })
}

/// Gronwall inputs from an ensemble: `f_k = M_{k+1}` on the time rows and
/// `g = max(1, 2 C_H a²)(J₁ + J₂)`.
pub fn gronwall_inputs(res: &EnsembleResult) -> Result<(GronwallProblem, Vec<Vec<f64>>)> {
    let k = res.grid.kernel;
    let (a, b) = (j1(k, res.h, res.sigma)?, j2(k, res.h, res.sigma)?);
    let c = rec1_constant(res.h, res.sigma)?.max(1.0);
    let g = GFunction::PowerSum {
        terms: vec![(c * a.coef, a.exponent), (c * b.coef, b.exponent)],
    };
    let f = res.m();
    if f.len() < 3 {
        return domain("need at least three Picard iterates for the Gronwall check");
    }
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |x, y| x.max(*y));
    let problem = GronwallProblem::new(res.grid.t_end, g, sup(&f[0]), sup(&f[1]))?;
    Ok((problem, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{a_t, weighted_fourier_norm_quadrature};
    use crate::quadrature::{integrate, Tolerance};

    fn hh(h: f64) -> HurstIndex {
        HurstIndex::new(h).unwrap()
    }

    fn small_grid(kernel: Kernel) -> SolverGrid {
        SolverGrid::new(kernel, 0.25, 32, 0.25, 128).unwrap()
    }

    #[test]
    fn four_point_identity() {
        let s = AffineSigma::new(1.5, -0.3);
        let (l, r) = s.four_point(0.3, -1.2, 2.0, 0.7);
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_constants() {
        let h = hh(0.3);
        let wave = small_grid(Kernel::Wave);
        let w = homogeneous_term(&InitialData::constant(2.0, 0.0, h), &wave, h).unwrap();
        assert!(w.values.iter().all(|v| (*v - 2.0).abs() < 1e-14));
        let w = homogeneous_term(&InitialData::constant(0.0, 1.0, h), &wave, h).unwrap();
        for j in 0..wave.rows() {
            assert!(w.row(j).iter().all(|v| (v - wave.t(j)).abs() < 1e-13));
        }
        let heat = small_grid(Kernel::Heat);
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &heat, h).unwrap();
        assert!(w.values.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn heat_homogeneous_matches_gaussian_convolution() {
        // u0 = cos(kx) on the periodic grid: w = e^{-tk²/2} cos(kx).
        let h = hh(0.3);
        let g = SolverGrid::new(Kernel::Heat, 0.25, 16, 1.0, 256).unwrap();
        let kx = 2.0 * PI * 3.0 / g.period();
        let mut w = SpaceTimeField::zeros(g, h);
        let n = g.n_space;
        let mut spec: Vec<Complex64> = (0..n).map(|k| Complex64::new((kx * g.x(k)).cos(), 0.0)).collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_inverse(n).process(&mut spec);
        let t = g.t_end;
        for (k, c) in spec.iter_mut().enumerate() {
            *c *= (-t * g.xi(k).powi(2) / 2.0).exp() / n as f64;
        }
        planner.plan_fft_forward(n).process(&mut spec);
        w.row_mut(g.n_steps).iter_mut().zip(&spec).for_each(|(v, c)| *v = c.re);
        for k in 0..n {
            let exact = (-t * kx * kx / 2.0).exp() * (kx * g.x(k)).cos();
            assert!((w.at(g.n_steps, k) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn window_too_small() {
        let h = hh(0.3);
        let g = SolverGrid::with_padding(Kernel::Wave, 1.0, 8, 0.5, 0.5, 64).unwrap();
        assert!(matches!(
            homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h),
            Err(Error::Window(_))
        ));
    }

    #[test]
    fn zero_noise_keeps_w() {
        let h = hh(0.3);
        for kernel in [Kernel::Wave, Kernel::Heat] {
            let g = small_grid(kernel);
            let w = homogeneous_term(&InitialData::constant(1.0, 0.5, h), &g, h).unwrap();
            let noise = NoiseField::zeros(&g);
            let mut u = w.clone();
            for _ in 0..3 {
                u = picard_step(&u, AffineSigma::new(1.0, 0.2), &noise, &w).unwrap();
                assert_eq!(u.values, w.values);
            }
        }
    }

    #[test]
    fn additive_noise_is_stationary_after_one_step() {
        let h = hh(0.3);
        let g = small_grid(Kernel::Wave);
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
        let noise = NoiseField::sample(&g, h, 5).unwrap();
        let s = AffineSigma::new(0.0, 1.0);
        let u1 = picard_step(&w, s, &noise, &w).unwrap();
        let u2 = picard_step(&u1, s, &noise, &w).unwrap();
        assert_eq!(u1.values, u2.values);
        let (_, hist) = solve(s, &w, &noise, SolveOptions::default()).unwrap();
        assert_eq!(hist.iterations, 2);
        assert_eq!(hist.deltas[1], 0.0);
    }

    #[test]
    fn infinite_tolerance_returns_first_iterate() {
        let h = hh(0.35);
        let g = small_grid(Kernel::Heat);
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
        let noise = NoiseField::sample(&g, h, 2).unwrap();
        let s = AffineSigma::new(1.0, 0.0);
        let (u, hist) = solve(s, &w, &noise, SolveOptions { tol: f64::INFINITY, ..Default::default() }).unwrap();
        assert_eq!(hist.iterations, 1);
        assert_eq!(u.values, picard_step(&w, s, &noise, &w).unwrap().values);
    }

    #[test]
    fn adaptedness_future_noise_is_invisible() {
        let h = hh(0.35);
        for kernel in [Kernel::Wave, Kernel::Heat] {
            let g = small_grid(kernel);
            let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
            let noise = NoiseField::sample(&g, h, 9).unwrap();
            let s = AffineSigma::new(1.0, 0.0);
            let opts = SolveOptions { tol: 0.0, max_iters: 4, ..Default::default() };
            let full = solve(s, &w, &noise, opts).unwrap_err();
            assert!(matches!(full, Error::Nonconvergence { .. }));
            let mut a = w.clone();
            let mut b = w.clone();
            let k = 11;
            let cut = noise.truncated(k);
            for _ in 0..4 {
                a = picard_step(&a, s, &noise, &w).unwrap();
                b = picard_step(&b, s, &cut, &w).unwrap();
            }
            for j in 0..=k {
                assert_eq!(a.row(j), b.row(j), "{kernel} row {j}");
            }
            assert_ne!(a.row(k + 1), b.row(k + 1));
        }
    }

    #[test]
    fn affine_scaling_is_bitwise() {
        let h = hh(0.35);
        for kernel in [Kernel::Wave, Kernel::Heat] {
            let g = small_grid(kernel);
            let noise = NoiseField::sample(&g, h, 4).unwrap();
            let w1 = homogeneous_term(&InitialData::constant(0.7, 0.0, h), &g, h).unwrap();
            let w2 = homogeneous_term(&InitialData::constant(1.4, 0.0, h), &g, h).unwrap();
            let opts = SolveOptions { tol: 0.0, max_iters: 5, ..Default::default() };
            let run = |w: &SpaceTimeField, s: AffineSigma| {
                let mut u = w.clone();
                for _ in 0..opts.max_iters {
                    u = picard_step(&u, s, &noise, w).unwrap();
                }
                u
            };
            let u1 = run(&w1, AffineSigma::new(0.8, 0.3));
            let u2 = run(&w2, AffineSigma::new(0.8, 0.6));
            assert!(u1.values.iter().zip(&u2.values).all(|(a, b)| 2.0 * a == *b), "{kernel}");
        }
    }

    #[test]
    fn uniqueness_with_zero_and_unit_perturbation() {
        let h = hh(0.35);
        let g = small_grid(Kernel::Wave);
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
        let noise = NoiseField::sample(&g, h, 12).unwrap();
        let s = AffineSigma::new(1.0, 0.0);
        let opts = SolveOptions::default();
        let r0 = uniqueness_probe(s, &w, &noise, opts, 0.0).unwrap();
        assert_eq!(r0.computed, 0.0);
        let r1 = uniqueness_probe(s, &w, &noise, opts, 1.0).unwrap();
        assert!(r1.pass, "{}", r1.summary_line());
        let r2 = uniqueness_probe(AffineSigma::new(0.0, 1.0), &w, &noise, opts, 1.0).unwrap();
        assert!(r2.pass && r2.computed == 0.0, "{}", r2.summary_line());
    }

    #[test]
    fn first_iterate_variance_matches_a_t() {
        // σ ≡ 1, wave: Var(u¹(t,x) - w) ≈ c_H A_t(1-2H) up to the frequency cutoff.
        let h = hh(0.3);
        let g = SolverGrid::new(Kernel::Wave, 1.0, 128, 0.5, 512).unwrap();
        let w = homogeneous_term(&InitialData::constant(0.0, 0.0, h), &g, h).unwrap();
        let s = AffineSigma::new(0.0, 1.0);
        let n_real = 400;
        let core = g.core();
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for r in 0..n_real {
            let noise = NoiseField::sample(&g, h, realization_seed(77, r)).unwrap();
            let u = picard_step(&w, s, &noise, &w).unwrap();
            // Points 1 apart are nearly independent; average a few per realization.
            let xs: Vec<usize> = core.clone().step_by(core.len() / 4).collect();
            let m = xs.iter().map(|&x| u.at(g.n_steps, x).powi(2)).sum::<f64>() / xs.len() as f64;
            acc += m;
            acc2 += m * m;
        }
        let mean = acc / n_real as f64;
        let se = ((acc2 / n_real as f64 - mean * mean) / n_real as f64).sqrt();
        let target = c_h(0.3).unwrap() * a_t(Kernel::Wave, 1.0, 0.4).unwrap();
        assert!((target - 0.237).abs() < 1e-3, "{target}");
        // Cutoff bias: c_H ∫_{|ξ|>ξmax} T/(2ξ²)|ξ|^{0.4}.
        let xm = PI / g.dx;
        let bias = c_h(0.3).unwrap() * xm.powf(-0.6) / 0.6;
        assert!((mean - target).abs() < 3.0 * se + bias, "{mean} ± {se} vs {target} (bias {bias})");
    }

    #[test]
    fn j_kernels_power_laws() {
        let h = hh(0.35);
        let s = AffineSigma::new(1.0, 0.0);
        for k in [Kernel::Wave, Kernel::Heat] {
            let a = j1(k, h, s).unwrap();
            let direct = 2.0 * c_h(0.35).unwrap() * weighted_fourier_norm_quadrature(k, 0.7, 0.3).unwrap();
            assert!((a.eval(0.7) - direct).abs() < 1e-6 * direct, "{k}");
            let b = j2(k, h, s).unwrap();
            let direct = 2.0
                * c_h(0.35).unwrap()
                * frequency_identity_constant(0.35).unwrap()
                * f_ab(k, 0.0, 0.7, h).unwrap();
            assert!((b.eval(0.7) - direct).abs() < 1e-10 * direct, "{k}");
        }
    }

    #[test]
    fn g2_slab_transform_matches_quadrature() {
        for k in [Kernel::Wave, Kernel::Heat] {
            for xi in [0.0, 0.5, 7.0, 120.0] {
                let (a, b) = (0.1, 0.35);
                let f = |tau: f64| match k {
                    Kernel::Wave => {
                        if xi == 0.0 {
                            tau / 2.0
                        } else {
                            (tau * xi).sin() / (2.0 * xi)
                        }
                    }
                    Kernel::Heat => (-tau * xi * xi / 4.0).exp() / (2.0 * (PI * tau).sqrt()),
                };
                let q = integrate(f, a, b, Tolerance::new(1e-13, 1e-16)).value;
                let c = g2_slab_transform(k, xi, a, b);
                assert!((q - c).abs() < 1e-10 * q.abs().max(1e-6), "{k} {xi}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn increment_functional_on_linear_profile() {
        // For D(y) = cos(κy) the exact functional is K_H |κ|^{1-2H} sin²-weighted:
        // ∫ |r|^{2H-2} |cos κy - cos κ(y+r)|² dr = ½K_H|κ|^{1-2H}(1 + ...) averaged;
        // check the spatial average against ½ K_H |κ|^{1-2H}.
        let h = hh(0.35);
        let g = SolverGrid::with_padding(Kernel::Heat, 0.01, 4, 4.0, 0.0, 4096).unwrap();
        let f = IncrementFunctional::new(&g, h);
        let kappa = 2.0 * PI * 4.0 / g.period();
        let d: Vec<f64> = (0..g.n_space).map(|n| (kappa * g.x(n)).cos()).collect();
        let mut phi = vec![0.0; g.n_space];
        f.phi(&d, &mut phi);
        let avg = phi.iter().sum::<f64>() / g.n_space as f64;
        let target = 0.5 * frequency_identity_constant(0.35).unwrap() * kappa.powf(0.3);
        assert!((avg - target).abs() < 0.02 * target, "{avg} vs {target}");
    }

    #[test]
    fn ensemble_smoke() {
        let h = hh(0.35);
        let g = SolverGrid::new(Kernel::Wave, 0.25, 16, 0.25, 64).unwrap();
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
        let opts = EnsembleOptions {
            n_realizations: 20,
            iterations: 4,
            diag_rows: 4,
            batches: 5,
            space_lags: vec![1, 2],
            time_lags: vec![1, 2],
            moment_orders: vec![2.0, 4.0],
            ..Default::default()
        };
        let res = run_ensemble(AffineSigma::new(1.0, 0.0), &w, &opts).unwrap();
        assert_eq!(res.v.len(), 4);
        assert!(res.v.iter().flatten().all(|v| *v >= 0.0));
        assert!(res.w.iter().flatten().all(|v| *v >= 0.0));
        assert_eq!(res.space_increments.len(), 20);
        let d = res.deltas_x1();
        assert!(d[3] < d[0]);
        let diag = vn_wn_diagnostics(&res).unwrap();
        assert!(diag.m_partial_sums.windows(2).all(|w| w[1] >= w[0]));
        let (problem, f) = gronwall_inputs(&res).unwrap();
        let conv = crate::gronwall::HittingMethod::Convolution { cells: 1024 };
        let r = crate::gronwall::recurrence_check(&problem, &f, conv, 0.0).unwrap();
        assert!(r.pass, "{}", r.summary_line());
        // Reproducible regardless of scheduling.
        let again = run_ensemble(AffineSigma::new(1.0, 0.0), &w, &opts).unwrap();
        assert_eq!(again.v, res.v);
        assert!(run_ensemble(AffineSigma::new(1.0, 0.0), &w, &EnsembleOptions { n_realizations: 1, ..opts }).is_err());
    }

    #[test]
    fn a_zero_gives_vanishing_v_after_first() {
        let h = hh(0.35);
        let g = SolverGrid::new(Kernel::Heat, 0.25, 16, 0.25, 64).unwrap();
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h).unwrap();
        let opts = EnsembleOptions {
            n_realizations: 10,
            iterations: 3,
            diag_rows: 4,
            batches: 5,
            ..Default::default()
        };
        let res = run_ensemble(AffineSigma::new(0.0, 1.0), &w, &opts).unwrap();
        assert!(res.v[0].iter().any(|v| *v > 0.0));
        assert!(res.v[1].iter().chain(&res.v[2]).all(|v| *v == 0.0));
    }
}
