//! Moment bounds and Hölder exponents estimated from ensembles of noise fields
//! and Picard solutions.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::HurstIndex;
use crate::error::{domain, Error, Result};
use crate::integral::MOMENT_REL_SE_LIMIT;
use crate::noise::{realization_seed, SpectralGrid, SpectralNoise};
use crate::picard::EnsembleResult;
use crate::regression::linear_fit;
use crate::report::VerificationReport;

/// Number of realization batches used for the slope standard error.
const FIT_BATCHES: usize = 10;
/// Fits with `r² < MIN_R_SQUARED` are flagged, not rejected.
pub const MIN_R_SQUARED: f64 = 0.9;
/// Default exponent tolerance.
pub const EXPONENT_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    PoorFit,
    /// All increments vanish; no exponent is defined.
    Degenerate,
}

/// Log-log fit of increment moments against lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// Strictly decreasing geometric sequence.
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub moment_se: Vec<f64>,
    pub fitted_slope: f64,
    /// Spread of the slope across realization batches.
    pub stderr: f64,
    pub r_squared: f64,
    pub status: FitStatus,
}

impl ExponentFit {
    pub fn report(&self, name: &str, target: f64, tol: f64) -> VerificationReport {
        let r = VerificationReport::absolute(name, self.fitted_slope, target, tol)
            .with_extra("stderr", self.stderr)
            .with_extra("r_squared", self.r_squared);
        match self.status {
            FitStatus::Ok => r,
            FitStatus::PoorFit => r.with_note(format!("poor fit: r² = {:.4} < {MIN_R_SQUARED}", self.r_squared)),
            FitStatus::Degenerate => r.failed("degenerate: all increments vanish"),
        }
    }

    /// CSV rows `lag,moment,stderr`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt12;
        let mut s = String::from("lag,moment,stderr\n");
        for i in 0..self.lags.len() {
            s.push_str(&format!("{},{},{}\n", fmt12(self.lags[i]), fmt12(self.moments[i]), fmt12(self.moment_se[i])));
        }
        s
    }
}

/// `n` lags `largest·ratio^k`, `k = 0..n`, with `0 < ratio < 1`.
pub fn geometric_lags(largest: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| largest * ratio.powi(k as i32)).collect()
}

fn check_lags(lags: &[f64]) -> Result<()> {
    if lags.len() < 2 {
        return domain("need at least two lags");
    }
    if lags.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return domain("lags must be positive and finite");
    }
    let ratio = lags[1] / lags[0];
    if !(ratio < 1.0) {
        return domain("lags must be strictly decreasing");
    }
    for w in lags.windows(2) {
        if ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9 {
            return domain("lags must form a geometric sequence");
        }
    }
    Ok(())
}

fn mean_se(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = if n > 1.0 { v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, (var / n).sqrt())
}

/// Regresses `log E|Δ|²` on `log lag`. `samples[r][i]` is realization `r`'s
/// increment moment at `lags[i]`.
pub fn fit_exponent(lags: &[f64], samples: &[Vec<f64>]) -> Result<ExponentFit> {
    check_lags(lags)?;
    if samples.len() < 2 {
        return Err(Error::EnsembleTooSmall { needed: 2, got: samples.len() });
    }
    if samples.iter().any(|s| s.len() != lags.len()) {
        return Err(Error::Shape("each sample needs one moment per lag".into()));
    }
    let stats: Vec<(f64, f64)> = (0..lags.len()).map(|i| mean_se(samples.iter().map(|s| s[i]))).collect();
    let moments: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let moment_se: Vec<f64> = stats.iter().map(|s| s.1).collect();
    if moments.iter().any(|m| !(*m > 0.0)) {
        return Ok(ExponentFit {
            lags: lags.to_vec(),
            moments,
            moment_se,
            fitted_slope: f64::NAN,
            stderr: f64::NAN,
            r_squared: 0.0,
            status: FitStatus::Degenerate,
        });
    }
    let xs: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
    let fit = linear_fit(&xs, &moments.iter().map(|m| m.ln()).collect::<Vec<_>>())?;
    let nb = FIT_BATCHES.min(samples.len());
    let slopes: Vec<f64> = (0..nb)
        .filter_map(|b| {
            let mut mb = vec![0.0; lags.len()];
            let mut c = 0usize;
            for s in samples.iter().skip(b).step_by(nb) {
                mb.iter_mut().zip(s).for_each(|(a, v)| *a += v);
                c += 1;
            }
            if mb.iter().any(|v| !(*v > 0.0)) {
                return None;
            }
            let ys: Vec<f64> = mb.iter().map(|v| (v / c as f64).ln()).collect();
            linear_fit(&xs, &ys).ok().map(|f| f.slope)
        })
        .collect();
    let stderr = if slopes.len() > 1 { mean_se(slopes.iter().copied()).1 } else { fit.slope_stderr };
    let status = if fit.r_squared < MIN_R_SQUARED { FitStatus::PoorFit } else { FitStatus::Ok };
    Ok(ExponentFit {
        lags: lags.to_vec(),
        moments,
        moment_se,
        fitted_slope: fit.slope,
        stderr,
        r_squared: fit.r_squared,
        status,
    })
}

/// Spatial fit; lags must lie in `(2·dx, half_width/10)`.
pub fn holder_exponent_space(samples: &[Vec<f64>], lags: &[f64], dx: f64, half_width: f64) -> Result<ExponentFit> {
    if lags.iter().any(|&l| l <= 2.0 * dx || l >= half_width / 10.0) {
        return domain(format!("space lags must lie in ({}, {})", 2.0 * dx, half_width / 10.0));
    }
    fit_exponent(lags, samples)
}

/// Temporal fit; lags must not exceed the horizon.
pub fn holder_exponent_time(samples: &[Vec<f64>], lags: &[f64], horizon: f64) -> Result<ExponentFit> {
    if lags.iter().any(|&l| l > horizon * (1.0 + 1e-12)) {
        return domain(format!("time lag beyond horizon {horizon}"));
    }
    fit_exponent(lags, samples)
}

/// Spatial average of `|f(x + ℓ) - f(x)|²` over `window`, per integer lag `ℓ`, periodic.
pub fn increment_moments(row: &[f64], lag_points: &[usize], window: std::ops::Range<usize>) -> Vec<f64> {
    let n = row.len();
    let len = window.len() as f64;
    lag_points
        .iter()
        .map(|&l| window.clone().map(|x| (row[(x + l) % n] - row[x]).powi(2)).sum::<f64>() / len)
        .collect()
}

/// Per-realization spatial increment moments of `X(t,·)` on an FFT grid of
/// `n_space` points over `period`, averaged over all start points whose lagged
/// partner does not wrap (the field carries a non-periodic linear term).
pub fn noise_space_samples(h: HurstIndex, t: f64, period: f64, n_space: usize, lag_points: &[usize], n_real: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if lag_points.iter().any(|&l| l == 0 || l >= n_space / 2) {
        return domain("lag points must be in 1..n_space/2");
    }
    let grid = Arc::new(SpectralGrid::fft_aligned(h, period, n_space, 0.0)?);
    let window = 0..n_space - lag_points.iter().max().copied().unwrap_or(0);
    (0..n_real)
        .into_par_iter()
        .map(|r| {
            let noise = SpectralNoise::sample(grid.clone(), t, 1, realization_seed(seed, r as u64))?;
            let field = noise.field_on_grid(t)?;
            Ok(increment_moments(&field, lag_points, window.clone()))
        })
        .collect()
}

/// Grid-sup of `E|u|^p` over the diagnostic rows and core window of the final
/// iterate, with the standard error at the maximizer.
pub fn moment_sup(res: &EnsembleResult, p: f64) -> Result<(f64, f64)> {
    let (_, rows) = res
        .final_moments
        .iter()
        .find(|(q, _)| (*q - p).abs() < 1e-12)
        .ok_or_else(|| Error::Domain(format!("moment of order {p} was not recorded")))?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for row in rows {
        for (m, se) in row.mean.iter().zip(&row.se) {
            if *m > best.0 {
                best = (*m, *se);
            }
        }
    }
    Ok(best)
}

/// Finiteness surrogate: the moment sup over a run on a doubled horizon stays
/// within three times the sup over the base run.
pub fn moment_report(base: &EnsembleResult, extended: &EnsembleResult, p_list: &[f64]) -> Result<Vec<VerificationReport>> {
    p_list
        .iter()
        .map(|&p| {
            if p < 2.0 {
                return domain(format!("moment order must be at least 2, got {p}"));
            }
            let (mb, sb) = moment_sup(base, p)?;
            let (me, se) = moment_sup(extended, p)?;
            if p > 2.0 && (sb > MOMENT_REL_SE_LIMIT * mb || se > MOMENT_REL_SE_LIMIT * me) {
                return Err(Error::EnsembleTooSmall {
                    needed: base.n_realizations.max(extended.n_realizations) * 4,
                    got: base.n_realizations.min(extended.n_realizations),
                });
            }
            Ok(VerificationReport::upper_bound(format!("moment_bounded_p{p}"), me, 3.0 * mb, 0.0)
                .with_input("p", p)
                .with_input("t_base", base.grid.t_end)
                .with_input("t_extended", extended.grid.t_end)
                .with_extra("base_sup", mb)
                .with_extra("base_se", sb)
                .with_extra("extended_se", se))
        })
        .collect()
}

/// `sup E|u^n|²` does not more than double between consecutive iterates from `n = 3` on.
pub fn moment_growth_report(res: &EnsembleResult) -> VerificationReport {
    let m = &res.second_moment_sup;
    let worst = (3..m.len())
        .map(|n| if m[n - 1] > 0.0 { m[n] / m[n - 1] } else { 1.0 })
        .fold(0.0f64, f64::max);
    VerificationReport::upper_bound("second_moment_growth", worst, 2.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;
    use crate::picard::*;
    use proptest::prelude::*;

    #[test]
    fn lag_validation() {
        assert!(fit_exponent(&[0.1, 0.2], &[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(fit_exponent(&[0.4, 0.2, 0.05], &[vec![1.0; 3], vec![1.0; 3]]).is_err());
        assert!(holder_exponent_time(&vec![vec![1.0, 0.5]; 2], &[2.0, 1.0], 1.5).is_err());
        assert!(holder_exponent_space(&vec![vec![1.0, 0.5]; 2], &[0.01, 0.005], 0.003, 1.0).is_err());
    }

    #[test]
    fn exact_power_law_recovered() {
        let lags = geometric_lags(0.1, 0.5, 5);
        let samples: Vec<Vec<f64>> = (0..20).map(|r| lags.iter().map(|l| (1.0 + 0.01 * r as f64) * l.powf(0.7)).collect()).collect();
        let f = fit_exponent(&lags, &samples).unwrap();
        assert!((f.fitted_slope - 0.7).abs() < 1e-12);
        assert_eq!(f.status, FitStatus::Ok);
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let row = vec![3.5; 64];
        let lags = [8usize, 4, 2];
        let s = increment_moments(&row, &lags, 0..64);
        let f = fit_exponent(&[8.0, 4.0, 2.0], &[s.clone(), s]).unwrap();
        assert_eq!(f.status, FitStatus::Degenerate);
        assert!(!f.report("deg", 0.7, 0.05).pass);
    }

    proptest! {
        #[test]
        fn translation_invariance(c in -10.0f64..10.0, seed in 0u64..1000) {
            let row: Vec<f64> = (0..128).map(|k| ((k as f64 * 0.37 + seed as f64).sin() * 3.0).cos()).collect();
            let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
            let lags = [16usize, 8, 4];
            let a = increment_moments(&row, &lags, 0..128);
            let b = increment_moments(&shifted, &lags, 0..128);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            }
        }
    }

    #[test]
    fn noise_increment_variance_and_slope() {
        // E|X(t,x+h) - X(t,x)|² = t|h|^{2H}.
        let h = HurstIndex::new(0.4).unwrap();
        let (n, period) = (4096usize, 4.0);
        let dx = period / n as f64;
        let pts = [128usize, 64, 32, 16];
        let samples = noise_space_samples(h, 1.0, period, n, &pts, 400, 3).unwrap();
        let lags: Vec<f64> = pts.iter().map(|&p| p as f64 * dx).collect();
        let f = holder_exponent_space(&samples, &lags, dx, period / 2.0).unwrap();
        assert!((f.fitted_slope - 0.8).abs() < 0.05, "{:?}", f);
        for (l, (m, se)) in lags.iter().zip(f.moments.iter().zip(&f.moment_se)) {
            let exact = l.powf(0.8);
            assert!((m - exact).abs() < 3.0 * se + 0.03 * exact, "{l}: {m} vs {exact}");
        }
    }

    #[test]
    fn deterministic_moments_equal_w() {
        let h = HurstIndex::new(0.35).unwrap();
        let g = SolverGrid::new(Kernel::Wave, 0.25, 16, 0.25, 64).unwrap();
        let w = homogeneous_term(&InitialData::constant(1.5, 0.0, h), &g, h).unwrap();
        let opts = EnsembleOptions {
            n_realizations: 10,
            iterations: 2,
            diag_rows: 4,
            batches: 5,
            moment_orders: vec![2.0, 4.0],
            diagnostics: false,
            ..Default::default()
        };
        let res = run_ensemble(AffineSigma::new(0.0, 0.0), &w, &opts).unwrap();
        assert_eq!(moment_sup(&res, 2.0).unwrap(), (1.5f64.powi(2), 0.0));
        assert_eq!(moment_sup(&res, 4.0).unwrap(), (1.5f64.powi(4), 0.0));
        let reps = moment_report(&res, &res, &[2.0, 4.0]).unwrap();
        assert!(reps.iter().all(|r| r.pass));
        assert!(moment_report(&res, &res, &[1.0]).is_err());
        assert!(moment_growth_report(&res).pass);
    }
}
