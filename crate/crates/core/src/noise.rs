//! Spectral synthesis of the noise: complex Gaussian increments of the
//! martingale measure on frequency bins, one row per time step.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::constants::{c_h, HurstIndex, SpectralDensity};
use crate::error::{domain, Error, Result};
use crate::quadrature::cos_power_tail;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridLayout {
    /// Uniform bins, evaluated at mass centroids.
    Linear,
    /// Uniform bins with the innermost pair split geometrically.
    Refined { levels: usize },
    /// Bins centred on the DFT frequencies `2πm/period` of an `n_points` grid
    /// starting at `origin`; the Nyquist mode is dropped.
    FftAligned { period: f64, n_points: usize, origin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub h: HurstIndex,
    pub xi_max: f64,
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// Frequency at which transfer functions are evaluated, per bin.
    pub nodes: Vec<f64>,
    pub layout: GridLayout,
}

impl SpectralGrid {
    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    /// Index of the bin mirrored through 0.
    pub fn partner(&self, k: usize) -> usize {
        self.n_bins() - 1 - k
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn from_edges(h: HurstIndex, edges: Vec<f64>, layout: GridLayout) -> Self {
        let mu = SpectralDensity::new(h);
        let mass: Vec<f64> = edges.windows(2).map(|w| mu.mass(w[0], w[1])).collect();
        let nodes = edges
            .windows(2)
            .zip(&mass)
            .map(|(w, m)| {
                if w[0] < 0.0 && w[1] > 0.0 {
                    0.0
                } else {
                    mu.first_moment(w[0], w[1]) / m
                }
            })
            .collect();
        let xi_max = *edges.last().unwrap();
        SpectralGrid {
            h,
            xi_max,
            edges,
            mass,
            nodes,
            layout,
        }
    }

    /// Even number of uniform bins over `[-ξ_max, ξ_max]`.
    pub fn linear(h: HurstIndex, xi_max: f64, n_bins: usize) -> Result<Self> {
        Self::refined(h, xi_max, n_bins, 0)
    }

    /// Uniform bins whose innermost pair is split into `levels` geometric
    /// halvings towards 0.
    pub fn refined(h: HurstIndex, xi_max: f64, n_bins: usize, levels: usize) -> Result<Self> {
        if !(xi_max > 0.0 && xi_max.is_finite()) {
            return domain(format!("frequency cutoff must be positive, got {xi_max}"));
        }
        if n_bins < 2 || n_bins % 2 != 0 {
            return domain(format!("bin count must be even and at least 2, got {n_bins}"));
        }
        let half = n_bins / 2;
        let w = xi_max / half as f64;
        let mut pos: Vec<f64> = vec![0.0];
        for l in (0..levels).rev() {
            pos.push(w * 0.5f64.powi(l as i32 + 1));
        }
        pos.extend((1..=half).map(|k| if k == half { xi_max } else { k as f64 * w }));
        let mut edges: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
        edges.pop();
        edges.extend(pos);
        let layout = if levels == 0 { GridLayout::Linear } else { GridLayout::Refined { levels } };
        Ok(Self::from_edges(h, edges, layout))
    }

    /// Bins matched to a periodic grid of `n_points` with spacing `period / n_points`.
    pub fn fft_aligned(h: HurstIndex, period: f64, n_points: usize, origin: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return domain(format!("period must be positive, got {period}"));
        }
        if n_points < 4 {
            return domain("periodic grid needs at least 4 points");
        }
        let m_max = (n_points - 1) / 2;
        let d = 2.0 * PI / period;
        let edges: Vec<f64> = (0..=2 * m_max + 1)
            .map(|i| (i as f64 - m_max as f64 - 0.5) * d)
            .collect();
        let mut g = Self::from_edges(h, edges, GridLayout::FftAligned { period, n_points, origin });
        g.nodes = (0..=2 * m_max).map(|i| (i as f64 - m_max as f64) * d).collect();
        Ok(g)
    }

    /// `(period, n_points, origin)` for FFT-aligned grids.
    pub fn fft_params(&self) -> Option<(f64, usize, f64)> {
        match self.layout {
            GridLayout::FftAligned { period, n_points, origin } => Some((period, n_points, origin)),
            _ => None,
        }
    }
}

/// `SplitMix64` step; derives independent stream keys from a base seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of realization `r` of an ensemble with base seed `seed`.
pub fn realization_seed(seed: u64, r: u64) -> u64 {
    splitmix64(seed ^ splitmix64(r.wrapping_add(0x5151_5151)))
}

/// Increments of one time step: a pure function of `(seed, step, bin)`.
pub(crate) fn fill_step(grid: &SpectralGrid, dt: f64, seed: u64, step: usize, out: &mut [Complex64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    let n = grid.n_bins();
    for k in (n / 2..n).rev() {
        let p = grid.partner(k);
        let v = dt * grid.mass[k];
        if p == k {
            let x: f64 = StandardNormal.sample(&mut rng);
            out[k] = Complex64::new(x * v.sqrt(), 0.0);
        } else {
            let s = (v / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            out[k] = Complex64::new(re * s, im * s);
            out[p] = out[k].conj();
        }
    }
}

/// One realization of the noise increments `M((t_j, t_{j+1}] × bin_k)`.
#[derive(Debug, Clone)]
pub struct SpectralNoise {
    pub grid: Arc<SpectralGrid>,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    increments: Vec<Complex64>,
}

impl SpectralNoise {
    pub fn sample(grid: Arc<SpectralGrid>, dt: f64, n_steps: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("time step must be positive, got {dt}"));
        }
        let n = grid.n_bins();
        let mut increments = vec![Complex64::new(0.0, 0.0); n * n_steps];
        for (j, row) in increments.chunks_mut(n).enumerate() {
            fill_step(&grid, dt, seed, j, row);
        }
        Ok(SpectralNoise {
            grid,
            dt,
            n_steps,
            seed,
            increments,
        })
    }

    /// All increments zero.
    pub fn zero(grid: Arc<SpectralGrid>, dt: f64, n_steps: usize) -> Self {
        let n = grid.n_bins();
        SpectralNoise {
            grid,
            dt,
            n_steps,
            seed: 0,
            increments: vec![Complex64::new(0.0, 0.0); n * n_steps],
        }
    }

    pub fn step(&self, j: usize) -> &[Complex64] {
        let n = self.grid.n_bins();
        &self.increments[j * n..(j + 1) * n]
    }

    pub fn step_mut(&mut self, j: usize) -> &mut [Complex64] {
        let n = self.grid.n_bins();
        &mut self.increments[j * n..(j + 1) * n]
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Number of whole steps inside `(0, t]`.
    pub fn steps_up_to(&self, t: f64) -> Result<usize> {
        if t < 0.0 || t > self.horizon() * (1.0 + 1e-12) {
            return domain(format!("t = {t} outside simulated horizon [0, {}]", self.horizon()));
        }
        Ok(((t / self.dt) * (1.0 + 1e-12)).floor().min(self.n_steps as f64) as usize)
    }

    /// `Σ_{j < steps(t)} increment[j, ·]`.
    pub fn aggregate(&self, t: f64) -> Result<Vec<Complex64>> {
        let n = self.grid.n_bins();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..self.steps_up_to(t)? {
            for (a, z) in acc.iter_mut().zip(self.step(j)) {
                *a += z;
            }
        }
        Ok(acc)
    }

    /// `X(t, x)` with real and imaginary parts.
    pub fn field_value_complex(&self, t: f64, x: f64) -> Result<Complex64> {
        let agg = self.aggregate(t)?;
        Ok(spectral_sum(&self.grid.nodes, &agg, x))
    }

    /// `X(t, x) = X(1_{(0,t] × (0,x]})`.
    pub fn field_value(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.field_value_complex(t, x)?.re)
    }

    /// `X(t, x)` at several points, sharing the time aggregation.
    pub fn field_values(&self, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
        let agg = self.aggregate(t)?;
        Ok(xs.iter().map(|&x| spectral_sum(&self.grid.nodes, &agg, x).re).collect())
    }

    /// `X(t, x_n)` on the periodic grid of an FFT-aligned layout; `X(t, 0) = 0`.
    pub fn field_on_grid(&self, t: f64) -> Result<Vec<f64>> {
        let (period, n, x0) = self.require_fft()?;
        let agg = self.aggregate(t)?;
        let m_max = (self.grid.n_bins() - 1) / 2;
        let dx = period / n as f64;
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        let mut constant = Complex64::new(0.0, 0.0);
        for (k, z) in agg.iter().enumerate() {
            let m = k as i64 - m_max as i64;
            if m == 0 {
                continue;
            }
            let xi = self.grid.nodes[k];
            let q = z / Complex64::new(0.0, xi);
            constant += q;
            c[m.rem_euclid(n as i64) as usize] = q * Complex64::from_polar(1.0, -xi * x0);
        }
        FftPlanner::new().plan_fft_forward(n).process(&mut c);
        let z0 = agg[m_max].re;
        Ok((0..n)
            .map(|i| (constant - c[i]).re + (x0 + i as f64 * dx) * z0)
            .collect())
    }

    /// Noise increment density `ẇ_j(x_n) = Σ_m e^{-iξ_m x_n} Z_{j,m}` on the
    /// periodic grid, so that `Σ_n φ(x_n) ẇ_j(x_n) Δx ≈ Σ_m ℱφ(ξ_m) Z_{j,m}`.
    pub fn density_on_grid(&self, j: usize) -> Result<Vec<f64>> {
        let (_, n, x0) = self.require_fft()?;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        self.density_into(j, x0, &mut c);
        fft.process(&mut c);
        Ok(c.iter().map(|z| z.re).collect())
    }

    /// Mode coefficients of step `j` placed at DFT positions (before the transform).
    pub fn density_into(&self, j: usize, x0: f64, c: &mut [Complex64]) {
        let n = c.len();
        let m_max = (self.grid.n_bins() - 1) / 2;
        c.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (k, z) in self.step(j).iter().enumerate() {
            let m = k as i64 - m_max as i64;
            let xi = self.grid.nodes[k];
            c[m.rem_euclid(n as i64) as usize] = z * Complex64::from_polar(1.0, -xi * x0);
        }
    }

    fn require_fft(&self) -> Result<(f64, usize, f64)> {
        self.grid
            .fft_params()
            .ok_or_else(|| Error::Domain("operation needs an FFT-aligned spectral grid".into()))
    }

    /// Write the container: header, bin edges and nodes, then little-endian
    /// `(re, im)` pairs row by row.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
        }
        let mut buf = Vec::with_capacity(64 + 16 * self.increments.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (tag, period, npts, origin, levels) = match self.grid.layout {
            GridLayout::Linear => (0u32, 0.0, 0u64, 0.0, 0u64),
            GridLayout::Refined { levels } => (1, 0.0, 0, 0.0, levels as u64),
            GridLayout::FftAligned { period, n_points, origin } => (2, period, n_points as u64, origin, 0),
        };
        buf.extend_from_slice(&tag.to_le_bytes());
        for v in [self.grid.h.value(), self.dt, period, origin] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.n_steps as u64, self.seed, npts, levels, self.grid.edges.len() as u64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.grid.edges.iter().chain(&self.grid.nodes) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for z in &self.increments {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&buf).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("missing magic header".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let tag = r.u32()?;
        let (h, dt, period, origin) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let (n_steps, seed, npts, levels, n_edges) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()? as usize);
        let h = HurstIndex::new(h).map_err(|e| Error::Format(e.to_string()))?;
        let edges = (0..n_edges).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if n_edges < 2 {
            return Err(Error::Format("fewer than two bin edges".into()));
        }
        let nodes = (0..n_edges - 1).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let layout = match tag {
            0 => GridLayout::Linear,
            1 => GridLayout::Refined { levels: levels as usize },
            2 => GridLayout::FftAligned {
                period,
                n_points: npts as usize,
                origin,
            },
            t => return Err(Error::Format(format!("unknown grid layout tag {t}"))),
        };
        let mut grid = SpectralGrid::from_edges(h, edges, layout);
        grid.nodes = nodes;
        let count = (n_edges - 1) * n_steps as usize;
        let mut increments = Vec::with_capacity(count);
        for _ in 0..count {
            increments.push(Complex64::new(r.f64()?, r.f64()?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after increments".into()));
        }
        Ok(SpectralNoise {
            grid: Arc::new(grid),
            dt,
            n_steps: n_steps as usize,
            seed,
            increments,
        })
    }

    /// Load and refuse a container whose Hurst index, time step or grid differ from the expected ones.
    pub fn load_checked(path: &Path, grid: &SpectralGrid, dt: f64) -> Result<Self> {
        let noise = Self::load(path)?;
        if noise.grid.h != grid.h {
            return Err(Error::Format(format!(
                "container has h = {}, expected {}",
                noise.grid.h.value(),
                grid.h.value()
            )));
        }
        if noise.grid.edges != grid.edges || noise.grid.nodes != grid.nodes || noise.grid.layout != grid.layout {
            return Err(Error::Format("container frequency grid differs from the configured one".into()));
        }
        if noise.dt != dt {
            return Err(Error::Format(format!("container has dt = {}, expected {dt}", noise.dt)));
        }
        Ok(noise)
    }
}

const MAGIC: &[u8; 8] = b"RSPDENZ\0";
const FORMAT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("container truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `ℱ1_{(0,x]}(ξ) = (1 - e^{-iξx}) / (iξ)`.
pub fn indicator_transform(xi: f64, x: f64) -> Complex64 {
    if (xi * x).abs() < 1e-6 {
        // Series: x - iξx²/2 + ...
        Complex64::new(x - xi * xi * x * x * x / 6.0, -xi * x * x / 2.0)
    } else {
        (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -xi * x)) / Complex64::new(0.0, xi)
    }
}

fn spectral_sum(nodes: &[f64], z: &[Complex64], x: f64) -> Complex64 {
    nodes.iter().zip(z).map(|(&xi, z)| indicator_transform(xi, x) * z).sum()
}

/// `E[X(t,x) X(s,y)]` of the discretized field, exactly: the closed-form
/// target plus truncation and binning bias.
pub fn discretized_covariance(grid: &SpectralGrid, t: f64, s: f64, x: f64, y: f64) -> f64 {
    let v: f64 = grid
        .nodes
        .iter()
        .zip(&grid.mass)
        .map(|(&xi, &m)| (indicator_transform(xi, x) * indicator_transform(xi, y).conj()).re * m)
        .sum();
    t.min(s) * v
}

/// `t ∫_{|ξ| > ξ_max} |ℱ1_{(0,x]}(ξ)|² μ(dξ)`: variance lost to the cutoff.
pub fn tail_bias(h: HurstIndex, t: f64, x: f64, xi_max: f64) -> Result<f64> {
    let hv = h.value();
    let ch = c_h(hv)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let q = 1.0 + 2.0 * hv;
    // |∫_a^∞ cos(ωξ) ξ^{-q}| ≤ 2a^{-q}/ω; skip it once negligible against the first term.
    let osc = if 2.0 / (x.abs() * xi_max) < 1e-12 {
        0.0
    } else {
        cos_power_tail(x.abs(), q, xi_max).require("cutoff tail")?
    };
    Ok(t * 4.0 * ch * (xi_max.powf(-2.0 * hv) / (2.0 * hv) - osc))
}

/// Smallest cutoff with tail bias of `Var X(1, 1)` below `fraction`.
pub fn default_xi_max(h: HurstIndex, fraction: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    while tail_bias(h, 1.0, 1.0, hi.exp())? >= fraction {
        lo = hi;
        hi += 2.0;
        if hi > 60.0 {
            return domain("no finite cutoff reaches the requested tail bias");
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if tail_bias(h, 1.0, 1.0, mid.exp())? < fraction {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}
