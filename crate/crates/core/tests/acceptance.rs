//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use roughspde::constants::{c_alpha, fbm_covariance, frequency_identity_constant, gamma, HurstIndex};
use roughspde::gronwall::{
    a_n_sequence, cauchy_verdict, equality_sequence, hitting_probability, recurrence_check, GFunction, GronwallProblem, Hitting,
    HittingMethod, DEFAULT_CELLS,
};
use roughspde::integral::{deterministic_i_t, mc_integrals, mean_se, moment_ratio_4_2, quadratic_variation, GridIntegrand};
use roughspde::kernels::{a_t, a_t_quadrature, peszat_scan, Kernel};
use roughspde::noise::{default_xi_max, discretized_covariance, realization_seed, tail_bias, SpectralGrid, SpectralNoise};
use roughspde::picard::{
    homogeneous_term, run_ensemble, uniqueness_probe, vn_wn_diagnostics, AffineSigma, EnsembleOptions, EnsembleResult, InitialData,
    NoiseField, SolveOptions, SolverGrid,
};
use roughspde::quadrature::{cos_power_tail, integrate_left_singular, one_minus_cos_power, Tolerance};
use roughspde::regularity::{holder_exponent_space, holder_exponent_time, noise_space_samples, ExponentFit, FitStatus};
use roughspde::sobolev::{gaussian_closed_form, identity_check, QuadratureConfig, TestFunction};
use roughspde::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn hh(h: f64) -> HurstIndex {
    HurstIndex::new(h).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sobolev_identity() -> Result<Outcome> {
    let start = Instant::now();
    let hs = [0.26, 0.3, 0.35, 0.4, 0.45];
    let reports = identity_check(&TestFunction::gaussian(), &hs, &QuadratureConfig::default());
    let worst = reports.iter().map(|r| rel(r.computed, r.reference)).fold(0.0f64, f64::max);
    let all = reports.iter().all(|r| r.pass);
    // Γ(2H+1) sin(πH) Γ(1-H) at H = 0.3, evaluated independently.
    let analytic = gamma(1.6) * (0.3 * PI).sin() * gamma(0.7);
    let at03 = reports[1].computed;
    let closed = (gaussian_closed_form(0.3) - analytic).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        all && worst <= 1e-3 && rel(at03, analytic) <= 1e-3 && (analytic - 0.93833).abs() < 1e-5 && closed < 1e-12 && secs < 10.0,
        format!("worst rel err {worst:.2e}; H=0.3 value {at03:.6} vs {analytic:.6}; {secs:.2}s"),
    )
}

fn kernel_closed_forms() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let wave = a_t(Kernel::Wave, t, 0.0)?;
        let heat = a_t(Kernel::Heat, t, 0.0)?;
        worst = worst.max(rel(wave, PI * t * t / 2.0)).max(rel(heat, 2.0 * (PI * t).sqrt()));
        worst = worst.max(rel(wave, a_t_quadrature(Kernel::Wave, t, 0.0)?));
        worst = worst.max(rel(heat, a_t_quadrature(Kernel::Heat, t, 0.0)?));
    }
    let alphas = [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75];
    let mut quad_worst: f64 = 0.0;
    let mut scale_worst: f64 = 0.0;
    for &alpha in &alphas {
        for k in [Kernel::Wave, Kernel::Heat] {
            let v = a_t(k, 1.0, alpha)?;
            quad_worst = quad_worst.max(rel(v, a_t_quadrature(k, 1.0, alpha)?));
            let expo = match k {
                Kernel::Wave => 2.0 - alpha,
                Kernel::Heat => (1.0 - alpha) / 2.0,
            };
            for lambda in [2.0, 3.0, 10.0] {
                let got = (a_t(k, lambda, alpha)? / v).ln() / f64::ln(lambda);
                scale_worst = scale_worst.max((got - expo).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && quad_worst <= 1e-3 && scale_worst < 1e-12 && secs < 30.0,
        format!("A_T(0) worst rel {worst:.2e}; α-grid quadrature worst {quad_worst:.2e}; scaling exponent error {scale_worst:.1e}; {secs:.2}s"),
    )
}

/// `∫_ℝ |1 - e^{-ix}|² |x|^{2h-2} dx` by direct quadrature, split at π.
fn frequency_constant_oracle(h: f64) -> f64 {
    let p = 2.0 * h - 2.0;
    let f = |x: f64| {
        let re = 1.0 - x.cos();
        let im = x.sin();
        (re * re + im * im) * x.powf(p)
    };
    let near = integrate_left_singular(f, 0.0, PI, 20.0, Tolerance::default()).value;
    let tail = 2.0 * PI.powf(p + 1.0) / (-(p + 1.0)) - 2.0 * cos_power_tail(1.0, -p, PI).value;
    2.0 * (near + tail)
}

fn power_weight_constants() -> Result<Outcome> {
    let exact = c_alpha(1.0)? == PI / 2.0;
    let mut worst: f64 = 0.0;
    for i in 0..=38 {
        let a = 0.05 + 0.05 * i as f64;
        worst = worst.max(rel(c_alpha(a)?, one_minus_cos_power(1.0, a)?));
    }
    let k = frequency_identity_constant(0.25)?;
    let q = frequency_constant_oracle(0.25);
    outcome(
        exact && worst <= 1e-4 && rel(k, q) <= 1e-4 && (k - 10.0265).abs() < 1e-4,
        format!("c_1 = π/2 exactly: {exact}; c_α grid worst rel {worst:.2e}; constant at H=1/4 {k:.6} vs quadrature {q:.6}"),
    )
}

fn noise_law() -> Result<Outcome> {
    let start = Instant::now();
    let xs = [-1.0, -0.5, 0.25, 0.5, 1.0];
    let n_real = 10_000;
    let mut failures = 0;
    let mut worst_z: f64 = 0.0;
    let mut worst_trunc: f64 = 0.0;
    let mut reference_trunc: f64 = 0.0;
    for hv in [0.3, 0.4] {
        let h = hh(hv);
        let xi_max = default_xi_max(h, 0.01)?;
        // The cutoff is chosen for a 1% bias of Var X(1, 1); the absolute bias barely depends on x.
        reference_trunc = reference_trunc.max(tail_bias(h, 1.0, 1.0, xi_max)?);
        let grid = Arc::new(SpectralGrid::refined(h, xi_max, 8000, 8)?);
        let values: Vec<(Vec<f64>, Vec<f64>)> = (0..n_real)
            .into_par_iter()
            .map(|r| {
                let noise = SpectralNoise::sample(grid.clone(), 1.0, 2, realization_seed(41, r as u64))?;
                Ok((noise.field_values(1.0, &xs)?, noise.field_values(2.0, &xs)?))
            })
            .collect::<Result<_>>()?;
        for s in [1.0, 2.0] {
            for (i, &x) in xs.iter().enumerate() {
                for (j, &y) in xs.iter().enumerate() {
                    let prod: Vec<f64> =
                        values.iter().map(|(a, b)| a[i] * if s == 1.0 { a[j] } else { b[j] }).collect();
                    let (m, se) = mean_se(&prod);
                    let target = fbm_covariance(x, y, hv);
                    let bias = (discretized_covariance(&grid, 1.0, s, x, y) - target).abs();
                    let trunc = tail_bias(h, 1.0, x, xi_max)?.max(tail_bias(h, 1.0, y, xi_max)?);
                    worst_trunc = worst_trunc.max(trunc);
                    if (m - target).abs() > 3.0 * se + bias {
                        failures += 1;
                    }
                    worst_z = worst_z.max(((m - target).abs() - bias).max(0.0) / se);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && reference_trunc < 0.01 && secs < 120.0,
        format!(
            "{failures} of 100 probes outside 3 SE + bias; worst excess {worst_z:.2} SE; truncation bias {reference_trunc:.4} at x=1, {worst_trunc:.4} max; {secs:.1}s"
        ),
    )
}

fn isometry() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    for hv in [0.3, 0.4] {
        let h = hh(hv);
        let grid = Arc::new(SpectralGrid::refined(h, 14.0, 2800, 8)?);
        let s = GridIntegrand::deterministic(4, 801, -10.0, 0.025, |_, x| (-x * x / 2.0).exp())?;
        let ys = mc_integrals(&s, grid.clone(), 0.25, 10_000, 23)?;
        let i_t = deterministic_i_t(&[(1.0, TestFunction::gaussian())], h, &QuadratureConfig::default())?;
        let bias = (quadratic_variation(&s, &grid, 0.25)?[3] - i_t).abs();
        let sq: Vec<f64> = ys.iter().map(|y| y * y).collect();
        let (m2, se2) = mean_se(&sq);
        let (ratio, rse) = moment_ratio_4_2(&ys);
        let ok = (m2 - i_t).abs() <= 3.0 * se2 + bias && (ratio - 3.0).abs() <= 3.0 * rse;
        pass &= ok;
        lines.push(format!("H={hv}: E|I|²={m2:.4}±{se2:.4} vs {i_t:.4}, ratio {ratio:.3}±{rse:.3}"));
    }
    outcome(pass, lines.join("; "))
}

fn ham_grid() -> SolverGrid {
    SolverGrid::new(Kernel::Wave, 0.5, 256, 0.5, 1024).unwrap()
}

/// The wave run shared by the convergence and recurrence criteria.
fn ham_run() -> &'static Result<(EnsembleResult, f64)> {
    static RUN: OnceLock<Result<(EnsembleResult, f64)>> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let h = hh(0.35);
        let g = ham_grid();
        let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h)?;
        let opts = EnsembleOptions {
            n_realizations: 500,
            seed: 2024,
            iterations: 7,
            ..Default::default()
        };
        let res = run_ensemble(AffineSigma::new(1.0, 0.0), &w, &opts)?;
        Ok((res, start.elapsed().as_secs_f64()))
    })
}

fn picard_convergence() -> Result<Outcome> {
    let (res, secs) = match ham_run() {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ensemble failed: {e}")),
    };
    let d = res.deltas_x1();
    let decreasing = d.windows(2).skip(1).all(|p| p[1] < p[0]);
    let ratio6 = d[5] / d[0];
    let h = hh(0.35);
    let g = ham_grid();
    let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &g, h)?;
    let noise = NoiseField::sample(&g, h, realization_seed(2024, 0))?;
    let probe = uniqueness_probe(AffineSigma::new(1.0, 0.0), &w, &noise, SolveOptions::default(), 0.5)?;
    let deltas: Vec<String> = d.iter().map(|v| format!("{v:.2e}")).collect();
    outcome(
        decreasing && ratio6 < 1e-2 && probe.pass && *secs < 600.0,
        format!(
            "deltas [{}]; δ6/δ1 = {ratio6:.1e}; uniqueness gap {:.1e} vs {:.1e}; {secs:.0}s",
            deltas.join(", "),
            probe.computed,
            probe.reference
        ),
    )
}

fn vw_recurrences() -> Result<Outcome> {
    let (res, _) = match ham_run() {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ensemble failed: {e}")),
    };
    let diag = vn_wn_diagnostics(res)?;
    outcome(
        diag.rec1_violation_fraction <= 0.05 && diag.rec2_violation_fraction <= 0.05,
        format!(
            "violations at 2 SE: V {:.3}, W {:.3} of {} points",
            diag.rec1_violation_fraction, diag.rec2_violation_fraction, diag.rec_points
        ),
    )
}

struct Fits {
    text: String,
    ok: bool,
}

fn check_fit(fits: &mut Fits, name: &str, fit: &ExponentFit, target: f64) {
    let ok = fit.status == FitStatus::Ok && (fit.fitted_slope - target).abs() <= 0.05;
    fits.ok &= ok;
    fits.text.push_str(&format!("{name} {:.3} (target {target:.2}); ", fit.fitted_slope));
}

fn solution_run(kernel: Kernel, hv: f64, grid: SolverGrid, iterations: usize, space: &[usize], time: &[usize]) -> Result<EnsembleResult> {
    let h = hh(hv);
    let w = homogeneous_term(&InitialData::constant(1.0, 0.0, h), &grid, h)?;
    debug_assert_eq!(grid.kernel, kernel);
    let opts = EnsembleOptions {
        n_realizations: 1000,
        seed: 77,
        iterations,
        diag_rows: 4,
        space_lags: space.to_vec(),
        time_lags: time.to_vec(),
        diagnostics: false,
        ..Default::default()
    };
    run_ensemble(AffineSigma::new(1.0, 0.0), &w, &opts)
}

fn holder_exponents() -> Result<Outcome> {
    let start = Instant::now();
    let mut fits = Fits { text: String::new(), ok: true };
    for hv in [0.3, 0.4] {
        let (n, period) = (1usize << 14, 4.0);
        let dx = period / n as f64;
        let pts: Vec<usize> = (3..=7).map(|k| (2f64.powi(-k) / dx).round() as usize).collect();
        let samples = noise_space_samples(hh(hv), 1.0, period, n, &pts, 10_000, 11)?;
        let lags: Vec<f64> = pts.iter().map(|&p| p as f64 * dx).collect();
        check_fit(&mut fits, &format!("noise x H={hv}"), &holder_exponent_space(&samples, &lags, dx, period / 2.0)?, 2.0 * hv);

        let g = SolverGrid::new(Kernel::Wave, 0.5, 32, 1.0, 8192)?;
        let sp = [256, 128, 64, 32];
        let res = solution_run(Kernel::Wave, hv, g.clone(), 6, &sp, &[])?;
        let lags: Vec<f64> = sp.iter().map(|&p| p as f64 * g.dx).collect();
        check_fit(&mut fits, &format!("wave x H={hv}"), &holder_exponent_space(&res.space_increments, &lags, g.dx, 1.0)?, 2.0 * hv);

        let g = SolverGrid::new(Kernel::Wave, 0.5, 128, 0.5, 1024)?;
        let tl = [16, 8, 4, 2];
        let res = solution_run(Kernel::Wave, hv, g.clone(), 6, &[], &tl)?;
        let lags: Vec<f64> = tl.iter().map(|&p| p as f64 * g.dt).collect();
        check_fit(&mut fits, &format!("wave t H={hv}"), &holder_exponent_time(&res.time_increments, &lags, g.t_end)?, 2.0 * hv);

        let g = SolverGrid::new(Kernel::Heat, 0.1, 128, 0.5, 1024)?;
        let tl = [32, 16, 8, 4, 2];
        let res = solution_run(Kernel::Heat, hv, g.clone(), 8, &[], &tl)?;
        let lags: Vec<f64> = tl.iter().map(|&p| p as f64 * g.dt).collect();
        check_fit(&mut fits, &format!("heat t H={hv}"), &holder_exponent_time(&res.time_increments, &lags, g.t_end)?, hv);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(fits.ok, format!("{}{secs:.0}s", fits.text))
}

fn gronwall_lemma() -> Result<Outcome> {
    let g = GFunction::Constant { value: 1.0 };
    let mc = hitting_probability(&g, 1.0, 3, HittingMethod::MonteCarlo { samples: 1_000_000, seed: 5 })?;
    let conv = hitting_probability(&g, 1.0, 3, HittingMethod::Convolution { cells: DEFAULT_CELLS })?;
    let (Hitting::Value { p: pm, se }, Hitting::Value { p: pc, .. }) = (mc, conv) else {
        return outcome(false, "hitting probability unexpectedly trivial");
    };
    let sixth = 1.0 / 6.0;
    let sanity = (pm - sixth).abs() <= 3.0 * se && (pc - sixth).abs() <= 1e-3;

    let mut bound_ok = true;
    let mut cauchy_ok = true;
    let mut notes = Vec::new();
    for gf in [GFunction::Constant { value: 1.0 }, GFunction::power(1.0, -0.4), GFunction::power(2.0, 0.5)] {
        let pr = GronwallProblem::new(1.0, gf, 1.0, 1.0)?;
        let f = equality_sequence(&pr, 20, 257);
        let r = recurrence_check(&pr, &f, HittingMethod::Convolution { cells: DEFAULT_CELLS }, 1e-12)?;
        let viol = r.extra.get("bound_violations").copied().unwrap_or(f64::NAN)
            + r.extra.get("convolution_violations").copied().unwrap_or(f64::NAN);
        bound_ok &= r.pass && viol == 0.0;
        let a = a_n_sequence(&pr, 600, HittingMethod::Convolution { cells: DEFAULT_CELLS })?;
        let v = cauchy_verdict(&a, 2.0, 1e-6);
        cauchy_ok &= v.n_star.is_some();
        notes.push(format!("max f/(Ma) {:.3}, N* {:?}", r.computed, v.n_star));
    }
    outcome(
        sanity && bound_ok && cauchy_ok,
        format!("P(S3≤1): MC {pm:.5}±{se:.5}, grid {pc:.6}; {}", notes.join("; ")),
    )
}

fn peszat_failure() -> Result<Outcome> {
    let etas = [1.0, 10.0, 100.0, 1000.0];
    let mut pass = true;
    let mut notes = Vec::new();
    for hv in [0.3, 0.45] {
        let r = peszat_scan(hv, &etas, 1e6)?;
        pass &= r.pass;
        notes.push(format!("H={hv} min increment {:.3}", r.computed));
    }
    outcome(pass, notes.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("1 sobolev/fourier identity", sobolev_identity),
        ("2 kernel closed forms", kernel_closed_forms),
        ("3 power-weight constants", power_weight_constants),
        ("4 noise covariance", noise_law),
        ("5 isometry and gaussian moments", isometry),
        ("6 picard convergence", picard_convergence),
        ("7 V/W recurrences", vw_recurrences),
        ("8 hölder exponents", holder_exponents),
        ("9 gronwall bound", gronwall_lemma),
        ("10 peszat growth", peszat_failure),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of 10 criteria pass", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
