//! Extended Gronwall lemma: Fibonacci numbers, hitting probabilities
//! `P(S_k ≤ T)`, the `a_n` bound and checks of `f_n ≤ ∫(f_{n-1}+f_{n-2}) g`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::report::VerificationReport;

/// Number of cells of the convolution grid on `[0, T]`.
pub const DEFAULT_CELLS: usize = 1 << 12;

/// Fibonacci number `b_n` (`b_1 = b_2 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fibonacci {
    pub n: u32,
    pub value: f64,
    /// Exact integer value when it fits in 64 bits.
    pub exact: Option<u64>,
    /// Set when `value` comes from the closed form because the integer overflowed.
    pub overflow: bool,
}

pub fn fibonacci(n: u32) -> Result<Fibonacci> {
    if n == 0 {
        return domain("Fibonacci index starts at 1");
    }
    let (mut a, mut b) = (0u64, 1u64);
    for _ in 1..n {
        match a.checked_add(b) {
            Some(c) => {
                a = b;
                b = c;
            }
            None => {
                return Ok(Fibonacci {
                    n,
                    value: fibonacci_closed_form(n),
                    exact: None,
                    overflow: true,
                });
            }
        }
    }
    Ok(Fibonacci {
        n,
        value: b as f64,
        exact: Some(b),
        overflow: false,
    })
}

/// Closed form evaluated in double-double arithmetic (~32 digits), rounded to
/// the nearest integer; exact for every `n` whose value fits in 64 bits.
pub fn fibonacci_closed_form_exact(n: u32) -> Option<u64> {
    if n > 93 {
        return None;
    }
    let s5 = Dd::sqrt5();
    let phi = Dd::new(1.0).add(s5).scale(0.5);
    let psi = Dd::new(1.0).sub(s5).scale(0.5);
    let mut a = Dd::new(1.0);
    let mut b = Dd::new(1.0);
    for _ in 0..n {
        a = a.mul(phi);
        b = b.mul(psi);
    }
    let v = a.sub(b).div(s5);
    let hi = v.hi.round();
    let rest = (v.hi - hi + v.lo).round();
    let r = hi as i128 + rest as i128;
    u64::try_from(r).ok()
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn sqrt5() -> Self {
        let s = 5f64.sqrt();
        Dd {
            hi: s,
            lo: (-s).mul_add(s, 5.0) / (2.0 * s),
        }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Dd { hi: s, lo: lo - (s - hi) }
    }

    fn add(self, o: Dd) -> Self {
        let s = Self::two_sum(self.hi, o.hi);
        Self::norm(s.hi, s.lo + self.lo + o.lo)
    }

    fn sub(self, o: Dd) -> Self {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn scale(self, c: f64) -> Self {
        Dd {
            hi: self.hi * c,
            lo: self.lo * c,
        }
    }

    fn mul(self, o: Dd) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::norm(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn div(self, o: Dd) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        Self::norm(q1, q2)
    }
}

/// `((1+√5)/2)^n - ((1-√5)/2)^n) / √5`.
pub fn fibonacci_closed_form(n: u32) -> f64 {
    let s5 = 5f64.sqrt();
    let phi = (1.0 + s5) / 2.0;
    let psi = (1.0 - s5) / 2.0;
    (phi.powi(n as i32) - psi.powi(n as i32)) / s5
}

/// Nonnegative kernel `g` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GFunction {
    Constant { value: f64 },
    /// `Σ coef_i · t^{exponent_i}`, exponents `> -1`, coefficients `≥ 0`.
    PowerSum { terms: Vec<(f64, f64)> },
    /// Linear interpolation of `(t, g)` samples, zero outside.
    Table { t: Vec<f64>, g: Vec<f64> },
}

impl GFunction {
    pub fn power(coef: f64, exponent: f64) -> Self {
        GFunction::PowerSum {
            terms: vec![(coef, exponent)],
        }
    }

    /// `const[:<v>]`, `power:<exponent>`, or `table:<csv path>` with rows `t,g`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Domain(format!("g spec `{s}`: {m}"));
        if s == "const" {
            return Ok(GFunction::Constant { value: 1.0 });
        }
        if let Some(v) = s.strip_prefix("const:") {
            let value = v.trim().parse().map_err(|_| bad("bad constant"))?;
            return Ok(GFunction::Constant { value });
        }
        if let Some(v) = s.strip_prefix("power:") {
            let e: f64 = v.trim().parse().map_err(|_| bad("bad exponent"))?;
            return Ok(GFunction::power(1.0, e));
        }
        if let Some(path) = s.strip_prefix("table:") {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })?;
            let (mut t, mut g) = (Vec::new(), Vec::new());
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let mut it = line.split(',');
                let (Some(a), Some(b)) = (it.next(), it.next()) else {
                    return Err(bad("table rows need two columns"));
                };
                match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                    (Ok(x), Ok(y)) => {
                        t.push(x);
                        g.push(y);
                    }
                    _ if t.is_empty() => continue, // header
                    _ => return Err(bad("unparsable table row")),
                }
            }
            return Ok(GFunction::Table { t, g });
        }
        Err(bad("expected const, power:<exponent> or table:<csv>"))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GFunction::Constant { value } => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return domain("g must be nonnegative");
                }
            }
            GFunction::PowerSum { terms } => {
                if terms.iter().any(|&(c, e)| !(c >= 0.0 && c.is_finite()) || !(e > -1.0)) {
                    return domain("power terms need coefficients ≥ 0 and exponents > -1");
                }
            }
            GFunction::Table { t, g } => {
                if t.len() != g.len() || t.len() < 2 {
                    return domain("table needs at least two rows");
                }
                if t.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !(*v >= 0.0)) {
                    return domain("table needs increasing t and nonnegative g");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GFunction::Constant { value } => *value,
            GFunction::PowerSum { terms } => {
                if x <= 0.0 {
                    return terms.iter().map(|&(c, e)| if e == 0.0 { c } else if e > 0.0 { 0.0 } else { f64::INFINITY }).sum();
                }
                terms.iter().map(|&(c, e)| c * x.powf(e)).sum()
            }
            GFunction::Table { t, g } => {
                if x < t[0] || x > t[t.len() - 1] {
                    return 0.0;
                }
                let i = t.partition_point(|&v| v <= x).clamp(1, t.len() - 1);
                let s = (x - t[i - 1]) / (t[i] - t[i - 1]);
                g[i - 1] + s * (g[i] - g[i - 1])
            }
        }
    }

    /// `G(x) = ∫_0^x g`, exact for every variant.
    pub fn cumulative(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            GFunction::Constant { value } => value * x,
            GFunction::PowerSum { terms } => terms.iter().map(|&(c, e)| c * x.powf(e + 1.0) / (e + 1.0)).sum(),
            GFunction::Table { t, .. } => {
                let mut s = 0.0;
                for i in 1..t.len() {
                    let (a, b) = (t[i - 1].max(0.0), t[i].min(x));
                    if b <= a {
                        continue;
                    }
                    s += (b - a) * (self.eval(a) + self.eval(b)) / 2.0;
                }
                s
            }
        }
    }

    /// `∫_a^b g`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    /// One draw from the density `g/G(T)` on `[0, T]`, exact inverse transform.
    pub fn sample(&self, t_end: f64, rng: &mut impl Rng) -> f64 {
        match self {
            GFunction::Constant { .. } => t_end * rng.random::<f64>(),
            GFunction::PowerSum { terms } => {
                let w: Vec<f64> = terms.iter().map(|&(c, e)| c * t_end.powf(e + 1.0) / (e + 1.0)).collect();
                let total: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = terms.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                t_end * rng.random::<f64>().powf(1.0 / (terms[pick].1 + 1.0))
            }
            GFunction::Table { t, .. } => {
                let total = self.cumulative(t_end);
                let target = rng.random::<f64>() * total;
                let knots: Vec<f64> = t.iter().copied().filter(|&v| v > 0.0 && v < t_end).chain([t_end]).collect();
                let mut a = 0.0f64.max(t[0]);
                for &b in &knots {
                    if self.cumulative(b) >= target {
                        // Linear density on [a, b]: solve the quadratic for the offset.
                        let (ga, gb) = (self.eval(a), self.eval(b));
                        let need = target - self.cumulative(a);
                        let slope = (gb - ga) / (b - a);
                        let d = if slope.abs() < 1e-14 * ga.max(1e-300) {
                            need / ga
                        } else {
                            (-ga + (ga * ga + 2.0 * slope * need).max(0.0).sqrt()) / slope
                        };
                        return (a + d).clamp(a, b);
                    }
                    a = b;
                }
                t_end
            }
        }
    }
}

/// Inputs of the lemma.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallProblem {
    pub t_end: f64,
    pub g: GFunction,
    pub m0: f64,
    pub m1: f64,
}

impl GronwallProblem {
    pub fn new(t_end: f64, g: GFunction, m0: f64, m1: f64) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return domain("T must be positive");
        }
        if !(m0 >= 0.0 && m1 >= 0.0) {
            return domain("M0 and M1 must be nonnegative");
        }
        g.validate()?;
        Ok(GronwallProblem { t_end, g, m0, m1 })
    }

    pub fn big_g(&self) -> f64 {
        self.g.cumulative(self.t_end)
    }

    /// `K = max(G(T), 1)`.
    pub fn k(&self) -> f64 {
        self.big_g().max(1.0)
    }

    pub fn m(&self) -> f64 {
        self.m0 + self.m1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HittingMethod {
    Convolution { cells: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hitting {
    /// `G(T) = 0`: the lemma is trivial and no distribution exists.
    Trivial,
    Value { p: f64, se: f64 },
}

impl Hitting {
    pub fn value(self) -> Option<f64> {
        match self {
            Hitting::Trivial => None,
            Hitting::Value { p, .. } => Some(p),
        }
    }
}

/// `P(S_k ≤ T)` for `S_k` a sum of `k` i.i.d. draws with density `g/G(T)`.
pub fn hitting_probability(g: &GFunction, t_end: f64, k: usize, method: HittingMethod) -> Result<Hitting> {
    Ok(match hitting_probabilities(g, t_end, k, method)? {
        None => Hitting::Trivial,
        Some(v) => v[k],
    })
}

/// `P(S_j ≤ T)` for `j = 0..=k_max` (`None` when `G(T) = 0`).
pub fn hitting_probabilities(g: &GFunction, t_end: f64, k_max: usize, method: HittingMethod) -> Result<Option<Vec<Hitting>>> {
    g.validate()?;
    if !(t_end > 0.0) {
        return domain("T must be positive");
    }
    let total = g.cumulative(t_end);
    if total == 0.0 {
        return Ok(None);
    }
    match method {
        HittingMethod::Convolution { cells } => {
            if cells < 2 {
                return domain("convolution grid needs at least two cells");
            }
            Ok(Some(
                convolution_hitting(g, t_end, total, k_max, cells)
                    .into_iter()
                    .map(|p| Hitting::Value { p, se: 0.0 })
                    .collect(),
            ))
        }
        HittingMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::EnsembleTooSmall { needed: 2, got: samples });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = vec![0usize; k_max + 1];
            for _ in 0..samples {
                let mut s = 0.0;
                counts[0] += 1;
                for c in counts.iter_mut().skip(1) {
                    s += g.sample(t_end, &mut rng);
                    if s > t_end {
                        break;
                    }
                    *c += 1;
                }
            }
            Ok(Some(
                counts
                    .into_iter()
                    .map(|c| {
                        let p = c as f64 / samples as f64;
                        Hitting::Value {
                            p,
                            se: (p * (1.0 - p) / samples as f64).sqrt(),
                        }
                    })
                    .collect(),
            ))
        }
    }
}

/// Each draw is written `(I + U)·h` with cell index `I` (exact cell masses) and
/// `U` uniform in the cell. `Σ I` is convolved exactly; the offsets `Σ U` follow
/// the Irwin–Hall law and only matter in the last `k` cells below `T`.
fn convolution_hitting(g: &GFunction, t_end: f64, total: f64, k_max: usize, cells: usize) -> Vec<f64> {
    let h = t_end / cells as f64;
    let p: Vec<f64> = (0..cells).map(|i| g.mass(i as f64 * h, (i + 1) as f64 * h) / total).collect();
    let mut out = vec![1.0];
    let mut dist = vec![0.0; cells];
    dist[0] = 1.0;
    for k in 1..=k_max {
        let mut next = vec![0.0; cells];
        for (j, &dj) in dist.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            for (i, &pi) in p[..cells - j].iter().enumerate() {
                next[i + j] += dj * pi;
            }
        }
        dist = next;
        let prob: f64 = dist
            .iter()
            .enumerate()
            .map(|(j, &dj)| dj * irwin_hall_cdf(k, (cells - j) as f64))
            .sum();
        out.push(prob.clamp(0.0, 1.0));
    }
    out
}

/// CDF of the sum of `k` independent uniforms on `[0, 1]`.
pub fn irwin_hall_cdf(k: usize, x: f64) -> f64 {
    let kf = k as f64;
    if x <= 0.0 {
        return 0.0;
    }
    if x >= kf {
        return 1.0;
    }
    if x > kf / 2.0 {
        return 1.0 - irwin_hall_cdf(k, kf - x);
    }
    // (1/k!) Σ_{i ≤ x} (-1)^i C(k,i) (x-i)^k, evaluated in log space per term.
    let lnfact = |n: usize| (1..=n).map(|v| (v as f64).ln()).sum::<f64>();
    let lk = lnfact(k);
    let mut s = 0.0;
    for i in 0..=(x.floor() as usize) {
        let ln_term = lk - lnfact(i) - lnfact(k - i) + kf * (x - i as f64).ln() - lk;
        let term = ln_term.exp();
        s += if i % 2 == 0 { term } else { -term };
    }
    s.clamp(0.0, 1.0)
}

/// `a_0..=a_{n_max}`: `a_0 = a_1 = 1`, `a_n = b_{n+1} K^{n-1} P(S_{⌊n/2⌋} ≤ T)`.
/// When `G(T) = 0` every `a_n` with `n ≥ 2` is zero.
pub fn a_n_sequence(problem: &GronwallProblem, n_max: usize, method: HittingMethod) -> Result<Vec<f64>> {
    let hits = hitting_probabilities(&problem.g, problem.t_end, n_max / 2, method)?;
    let k = problem.k();
    (0..=n_max)
        .map(|n| {
            if n < 2 {
                return Ok(1.0);
            }
            let Some(h) = &hits else { return Ok(0.0) };
            let p = h[n / 2].value().unwrap_or(0.0);
            Ok(fibonacci(n as u32 + 1)?.value * k.powi(n as i32 - 1) * p)
        })
        .collect()
}

/// Single `a_n`.
pub fn a_n_bound(problem: &GronwallProblem, n: usize, method: HittingMethod) -> Result<f64> {
    Ok(a_n_sequence(problem, n, method)?[n])
}

/// Numeric Cauchy verdict for `Σ a_n^{1/p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyVerdict {
    pub p: f64,
    pub partial_sums: Vec<f64>,
    /// Smallest `N` with `Σ_{N<n≤2N} a_n^{1/p} < rel_tol · Σ_{n≤N} a_n^{1/p}`.
    pub n_star: Option<usize>,
    pub tail_ratio: f64,
}

pub fn cauchy_verdict(a: &[f64], p: f64, rel_tol: f64) -> CauchyVerdict {
    let mut acc = 0.0;
    let partial: Vec<f64> = a
        .iter()
        .map(|v| {
            acc += v.max(0.0).powf(1.0 / p);
            acc
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut n_star = None;
    for n in 1..partial.len() {
        if 2 * n >= partial.len() {
            break;
        }
        let ratio = (partial[2 * n] - partial[n]) / partial[n];
        best = best.min(ratio);
        if ratio < rel_tol {
            n_star = Some(n);
            best = ratio;
            break;
        }
    }
    CauchyVerdict {
        p,
        partial_sums: partial,
        n_star,
        tail_ratio: best,
    }
}

impl CauchyVerdict {
    pub fn report(&self, rel_tol: f64) -> VerificationReport {
        let r = VerificationReport::upper_bound(format!("gronwall_cauchy_p{}", self.p), self.tail_ratio, rel_tol, 0.0)
            .with_input("p", self.p)
            .with_extra("partial_sum", *self.partial_sums.last().unwrap_or(&0.0));
        match self.n_star {
            Some(n) => r.with_extra("n_star", n as f64),
            None => r.failed("tail increment never dropped below the threshold"),
        }
    }
}

/// Trapezoidal convolution `∫_0^{t_j} f(s) g(t_j - s) ds` on a uniform grid, using
/// exact `g` masses per slab so integrable singularities at 0 are handled.
pub fn grid_convolution(f: &[f64], dt: f64, g: &GFunction, j: usize) -> f64 {
    (0..j)
        .map(|i| {
            let (a, b) = ((j - i - 1) as f64 * dt, (j - i) as f64 * dt);
            0.5 * (f[i] + f[i + 1]) * g.mass(a, b)
        })
        .sum()
}

/// Builds `f_0, …, f_{n_max}` with equality in the recurrence from constant `f_0`, `f_1`.
pub fn equality_sequence(problem: &GronwallProblem, n_max: usize, grid_points: usize) -> Vec<Vec<f64>> {
    let dt = problem.t_end / (grid_points - 1) as f64;
    let mut f = vec![vec![problem.m0; grid_points], vec![problem.m1; grid_points]];
    for n in 2..=n_max {
        let sum: Vec<f64> = f[n - 1].iter().zip(&f[n - 2]).map(|(a, b)| a + b).collect();
        f.push((0..grid_points).map(|j| grid_convolution(&sum, dt, &problem.g, j)).collect());
    }
    f
}

/// Checks the convolution inequality for each `n ≥ 2` and `f_n ≤ M a_n` for every
/// `n`, on samples over a uniform grid of `[0, T]`. `rel_slack` loosens both.
pub fn recurrence_check(problem: &GronwallProblem, f: &[Vec<f64>], method: HittingMethod, rel_slack: f64) -> Result<VerificationReport> {
    if f.len() < 3 {
        return domain("need at least three functions f_0, f_1, f_2");
    }
    let m = f[0].len();
    if m < 2 || f.iter().any(|v| v.len() != m) {
        return Err(Error::Shape("f_n must share one time grid".into()));
    }
    let start = std::time::Instant::now();
    let dt = problem.t_end / (m - 1) as f64;
    let mut conv_bad = 0usize;
    let mut first: Option<String> = None;
    for n in 2..f.len() {
        let sum: Vec<f64> = f[n - 1].iter().zip(&f[n - 2]).map(|(a, b)| a + b).collect();
        for j in 0..m {
            let rhs = grid_convolution(&sum, dt, &problem.g, j);
            if f[n][j] > rhs * (1.0 + rel_slack) + 1e-300 {
                conv_bad += 1;
                first.get_or_insert(format!("convolution inequality fails at n={n}, t={}", j as f64 * dt));
            }
        }
    }
    let a = a_n_sequence(problem, f.len() - 1, method)?;
    let big_m = problem.m();
    let mut worst: f64 = 0.0;
    let mut bound_bad = 0usize;
    for (n, fn_) in f.iter().enumerate() {
        let sup = fn_.iter().fold(0.0f64, |x, y| x.max(*y));
        let bound = big_m * a[n];
        let ratio = if bound > 0.0 {
            sup / bound
        } else if sup > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
        if ratio > 1.0 + rel_slack {
            bound_bad += 1;
            first.get_or_insert(format!("sup f_{n} = {sup} exceeds M a_{n} = {bound}"));
        }
    }
    let mut r = VerificationReport::upper_bound("gronwall_recurrence", worst, 1.0, rel_slack)
        .with_input("T", problem.t_end)
        .with_input("M", big_m)
        .with_input("n_max", (f.len() - 1) as f64)
        .with_extra("convolution_violations", conv_bad as f64)
        .with_extra("bound_violations", bound_bad as f64)
        .with_runtime(start.elapsed().as_secs_f64());
    if let Some(msg) = first {
        r = if conv_bad > 0 { r.failed(msg) } else { r.with_note(msg) };
    }
    Ok(r)
}
