use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use roughspde::config::{Mode, SimulationConfig};
use roughspde::constants::{c_alpha, fbm_covariance, HurstIndex};
use roughspde::error::config_err;
use roughspde::gronwall::{
    a_n_sequence, cauchy_verdict, equality_sequence, hitting_probability, recurrence_check, GFunction, GronwallProblem, Hitting,
    HittingMethod, DEFAULT_CELLS,
};
use roughspde::kernels::{a_t, a_t_quadrature, cos_increment_bound_check, peszat_scan, time_increment_bound_check, Kernel};
use roughspde::noise::{default_xi_max, discretized_covariance, realization_seed, tail_bias, SpectralGrid, SpectralNoise};
use roughspde::picard::{
    gronwall_inputs, homogeneous_term, run_ensemble, solve, uniqueness_probe, vn_wn_diagnostics, EnsembleOptions, EnsembleResult,
    NoiseField,
};
use roughspde::regularity::{
    holder_exponent_space, holder_exponent_time, moment_growth_report, moment_report, noise_space_samples,
    ExponentFit,
};
use roughspde::report::{fmt12, reports_from_json, reports_to_csv, reports_to_json, svg_plot, write_file, EmitOptions, PlotSpec, Series};
use roughspde::sobolev::{gaussian_closed_form, identity_check, QuadratureConfig, TestFunction};
use roughspde::report::VerificationReport;
use roughspde::{Error, Result};

const THREADS_ENV: &str = "ROUGHSPDE_THREADS";

#[derive(Parser)]
#[command(name = "roughspde", version, about = "Rough-noise stochastic wave and heat equations: simulation and verification")]
struct Cli {
    /// Worker threads for ensemble work (default: $ROUGHSPDE_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Sobolev/Fourier seminorm identity on test functions.
    VerifyIdentities(IdentityArgs),
    /// Check kernel closed forms and increment bounds against quadrature.
    VerifyKernels(KernelArgs),
    /// Probe the growth of the classical second-moment condition.
    Peszat(PeszatArgs),
    /// Synthesize noise realizations and check their covariance.
    Simulate(SimulateArgs),
    /// Run the Picard iteration and its diagnostics.
    Picard(PicardArgs),
    /// Fit Hölder exponents of the noise or of solutions.
    Holder(HolderArgs),
    /// Check boundedness of solution moments.
    Moments(MomentArgs),
    /// Evaluate the Fibonacci-type Gronwall bound.
    Gronwall(GronwallArgs),
    /// Merge saved reports and re-emit them as JSON, CSV or SVG.
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
struct OutArgs {
    /// Output directory; reports go to stdout as JSON when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FunctionChoice {
    Gaussian,
    Tent,
    Indicator,
    All,
}

#[derive(Args, Serialize)]
struct IdentityArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.26, 0.3, 0.35, 0.4, 0.45])]
    hurst: Vec<f64>,
    #[arg(long, value_enum, default_value_t = FunctionChoice::Gaussian)]
    function: FunctionChoice,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Serialize)]
struct KernelArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [Kernel::Wave, Kernel::Heat])]
    equation: Vec<Kernel>,
    #[arg(long = "T", default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-0.5, 0.0, 0.4])]
    alpha: Vec<f64>,
    /// Increment step for the cosine bound.
    #[arg(long, default_value_t = 0.1)]
    hstep: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Serialize)]
struct PeszatArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.45])]
    hurst: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0, 1000.0])]
    eta: Vec<f64>,
    /// Upper integration limit of the probe.
    #[arg(long, default_value_t = 1e6)]
    cutoff: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.3)]
    hurst: f64,
    /// Horizon; the covariance probe uses times T/2 and T.
    #[arg(long = "T", default_value_t = 2.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Frequency cutoff (default: 1% tail bias of Var X(1,1)).
    #[arg(long)]
    xi_max: Option<f64>,
    #[arg(long, default_value_t = 8000)]
    n_bins: usize,
    /// Geometric refinement levels of the innermost bins.
    #[arg(long, default_value_t = 8)]
    levels: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    ensemble: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-1.0, -0.5, 0.25, 0.5, 1.0])]
    probe: Vec<f64>,
    /// Write the first realization to a binary container.
    #[arg(long)]
    save_noise: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

/// Solver settings shared by `picard`, `holder` and `moments`; flags override the file.
#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    equation: Option<Kernel>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long = "L")]
    half_width: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_b: Option<f64>,
    /// `const:<v>`, `holder-sample` or `holder-sample:<seed>`.
    #[arg(long)]
    u0: Option<String>,
    #[arg(long)]
    v0: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self, mode: Mode) -> Result<SimulationConfig> {
        let mut c = match &self.config {
            Some(p) => SimulationConfig::from_toml(&read(p)?)?,
            None => SimulationConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        set!(equation, hurst, t_end, dt, dx, half_width, sigma_a, sigma_b, u0, v0, seed, ensemble, max_iters, tol);
        if let Some(o) = &self.out {
            c.out = Some(o.display().to_string());
        }
        c.validate(mode)?;
        Ok(c)
    }
}

#[derive(Args)]
struct PicardArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Write the noise realization used for the single-path solve.
    #[arg(long)]
    save_noise: Option<PathBuf>,
    /// Shift of the initial condition in the uniqueness probe.
    #[arg(long, default_value_t = 1e-3)]
    perturbation: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum HolderTarget {
    Noise,
    Solution,
}

#[derive(Args)]
struct HolderArgs {
    #[arg(long, value_enum, default_value_t = HolderTarget::Noise)]
    target: HolderTarget,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Spatial lags in grid points, strictly decreasing by a constant ratio.
    #[arg(long, value_delimiter = ',')]
    space_lags: Option<Vec<usize>>,
    /// Temporal lags in time steps (solutions only).
    #[arg(long, value_delimiter = ',')]
    time_lags: Option<Vec<usize>>,
    /// Iterations per realization (solutions only).
    #[arg(long, default_value_t = 6)]
    iterations: usize,
    /// Period of the noise grid.
    #[arg(long, default_value_t = 4.0)]
    period: f64,
    /// Points of the noise grid.
    #[arg(long, default_value_t = 16384)]
    n_space: usize,
}

#[derive(Args)]
struct MomentArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0])]
    p: Vec<f64>,
    #[arg(long, default_value_t = 6)]
    iterations: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodChoice {
    Conv,
    Mc,
}

#[derive(Args, Serialize)]
struct GronwallArgs {
    /// `const`, `const:<v>`, `power:<exponent>` or `table:<csv>`.
    #[arg(long, default_value = "const")]
    g: String,
    #[arg(long = "T", default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0)]
    m0: f64,
    #[arg(long, default_value_t = 1.0)]
    m1: f64,
    /// Terms of the a_n sequence used by the summability check.
    #[arg(long, default_value_t = 100)]
    n_max: usize,
    /// Terms of the equality-built sequence checked against M·a_n.
    #[arg(long, default_value_t = 20)]
    n_check: usize,
    #[arg(long, value_enum, default_value_t = MethodChoice::Conv)]
    method: MethodChoice,
    #[arg(long, default_value_t = DEFAULT_CELLS)]
    cells: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Root taken in the summability check.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    /// Time grid points for the equality-built sequence.
    #[arg(long, default_value_t = 257)]
    grid_points: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

/// Prints a line, ignoring a closed stdout.
fn say(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

/// Output sink: a directory, or stdout for the report JSON.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::Io {
                path: d.to_path_buf(),
                source: e,
            })?;
        }
        Ok(Sink { dir: dir.map(Path::to_path_buf) })
    }

    fn file(&self, name: &str, contents: &str) -> Result<()> {
        match &self.dir {
            Some(d) => write_file(&d.join(name), contents),
            None => Ok(()),
        }
    }

    fn echo_config(&self, toml_text: &str) -> Result<()> {
        self.file("effective_config.toml", toml_text)
    }

    /// Writes `reports.json`/`reports.csv` (or prints JSON) and returns the exit code.
    fn finish(&self, reports: &[VerificationReport]) -> Result<u8> {
        let json = reports_to_json(reports, EmitOptions::default());
        match &self.dir {
            Some(_) => {
                self.file("reports.json", &json)?;
                self.file("reports.csv", &reports_to_csv(reports))?;
                for r in reports {
                    say(&r.summary_line());
                }
            }
            None => say(&json),
        }
        Ok(if reports.iter().all(|r| r.pass) { 0 } else { 2 })
    }
}

fn echo<T: Serialize>(sink: &Sink, args: &T) -> Result<()> {
    sink.echo_config(&toml::to_string(args).expect("arguments serialize"))
}

fn verify_identities(a: &IdentityArgs) -> Result<u8> {
    for &h in &a.hurst {
        HurstIndex::new(h).map_err(|e| config_err("hurst", e.to_string()))?;
    }
    let sink = Sink::new(a.out.out.as_deref())?;
    echo(&sink, a)?;
    let funcs = match a.function {
        FunctionChoice::Gaussian => vec![TestFunction::gaussian()],
        FunctionChoice::Tent => vec![TestFunction::tent()],
        FunctionChoice::Indicator => vec![TestFunction::indicator(0.0, 1.0)],
        FunctionChoice::All => vec![TestFunction::gaussian(), TestFunction::tent(), TestFunction::indicator(0.0, 1.0)],
    };
    let quad = QuadratureConfig::default();
    let mut reports = Vec::new();
    let mut csv = String::from("function,h,lhs,rhs,rel_err,pass\n");
    for g in &funcs {
        for r in identity_check(g, &a.hurst, &quad) {
            let h = r.inputs.get("h").copied().unwrap_or(f64::NAN);
            let x = |k: &str| r.extra.get(k).copied().unwrap_or(f64::NAN);
            csv.push_str(&format!("{},{},{},{},{},{}\n", g.name, fmt12(h), fmt12(x("lhs")), fmt12(x("rhs")), fmt12(x("rel_err")), r.pass));
            if g.name == "gaussian" && r.computed.is_finite() {
                reports.push(
                    VerificationReport::relative("gaussian_closed_form", r.computed, gaussian_closed_form(h), 1e-3).with_input("h", h),
                );
            }
            reports.push(r);
        }
    }
    sink.file("identities.csv", &csv)?;
    sink.finish(&reports)
}

fn verify_kernels(a: &KernelArgs) -> Result<u8> {
    let sink = Sink::new(a.out.out.as_deref())?;
    echo(&sink, a)?;
    let mut reports = vec![VerificationReport::absolute("c_alpha_at_1", c_alpha(1.0)?, std::f64::consts::FRAC_PI_2, 1e-15)];
    for &k in &a.equation {
        for &alpha in &a.alpha {
            let closed = a_t(k, a.t_end, alpha)?;
            let quad = a_t_quadrature(k, a.t_end, alpha)?;
            reports.push(
                VerificationReport::relative(format!("a_t[{k}]"), closed, quad, 1e-3)
                    .with_input("T", a.t_end)
                    .with_input("alpha", alpha),
            );
            let expo = match k {
                Kernel::Wave => 2.0 - alpha,
                Kernel::Heat => (1.0 - alpha) / 2.0,
            };
            let ratio = a_t(k, 2.0 * a.t_end, alpha)? / closed;
            reports.push(
                VerificationReport::relative(format!("a_t_scaling[{k}]"), ratio.log2(), expo, 1e-12)
                    .with_input("T", a.t_end)
                    .with_input("alpha", alpha),
            );
            if alpha > 0.0 {
                reports.push(cos_increment_bound_check(k, a.t_end, alpha, a.hstep)?);
            }
        }
        let hs: Vec<f64> = (3..=8).map(|e| 2f64.powi(-e)).collect();
        reports.push(time_increment_bound_check(k, a.t_end, 0.0, &hs, 0.05)?);
    }
    sink.finish(&reports)
}

fn peszat(a: &PeszatArgs) -> Result<u8> {
    for &h in &a.hurst {
        HurstIndex::new(h).map_err(|e| config_err("hurst", e.to_string()))?;
    }
    if a.eta.len() < 2 {
        return Err(config_err("eta", "need at least two values"));
    }
    let sink = Sink::new(a.out.out.as_deref())?;
    echo(&sink, a)?;
    let reports = a.hurst.iter().map(|&h| peszat_scan(h, &a.eta, a.cutoff)).collect::<Result<Vec<_>>>()?;
    sink.finish(&reports)
}

fn simulate(a: &SimulateArgs) -> Result<u8> {
    let h = HurstIndex::new(a.hurst).map_err(|e| config_err("hurst", e.to_string()))?;
    let steps = (a.t_end / a.dt).round();
    if !(a.dt > 0.0) || steps < 1.0 || (steps * a.dt - a.t_end).abs() > 1e-9 * a.t_end {
        return Err(config_err("dt", "T must be a positive integer multiple of dt"));
    }
    if a.ensemble < 2 {
        return Err(config_err("ensemble", "need at least two realizations"));
    }
    let xi_max = match a.xi_max {
        Some(x) => x,
        None => default_xi_max(h, 0.01)?,
    };
    let grid = Arc::new(SpectralGrid::refined(h, xi_max, a.n_bins, a.levels).map_err(|e| config_err("n_bins", e.to_string()))?);
    let sink = Sink::new(a.out.out.as_deref())?;
    echo(&sink, a)?;
    let n_steps = steps as usize;
    let (t1, t2) = (0.5 * a.t_end, a.t_end);
    if let Some(p) = &a.save_noise {
        SpectralNoise::sample(grid.clone(), a.dt, n_steps, realization_seed(a.seed, 0))?.save(p)?;
    }
    use rayon::prelude::*;
    let values: Vec<(Vec<f64>, Vec<f64>)> = (0..a.ensemble)
        .into_par_iter()
        .map(|r| {
            let noise = SpectralNoise::sample(grid.clone(), a.dt, n_steps, realization_seed(a.seed, r as u64))?;
            Ok((noise.field_values(t1, &a.probe)?, noise.field_values(t2, &a.probe)?))
        })
        .collect::<Result<_>>()?;
    let n = a.ensemble as f64;
    let mut reports = Vec::new();
    let mut csv = String::from("t,s,x,y,empirical,se,target,bias\n");
    for (t, s) in [(t1, t1), (t1, t2)] {
        for (i, &x) in a.probe.iter().enumerate() {
            for (j, &y) in a.probe.iter().enumerate() {
                let prod: Vec<f64> = values
                    .iter()
                    .map(|(v1, v2)| {
                        let vx = v1[i];
                        let vy = if s == t1 { v1[j] } else { v2[j] };
                        vx * vy
                    })
                    .collect();
                let mean = prod.iter().sum::<f64>() / n;
                let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                let target = t.min(s) * fbm_covariance(x, y, a.hurst);
                let bias = (discretized_covariance(&grid, t, s, x, y) - target).abs();
                csv.push_str(&format!("{},{},{},{},{},{},{},{}\n", t, s, x, y, fmt12(mean), fmt12(se), fmt12(target), fmt12(bias)));
                reports.push(
                    VerificationReport::statistical("noise_covariance", mean, target, se, bias)
                        .with_input("t", t)
                        .with_input("s", s)
                        .with_input("x", x)
                        .with_input("y", y)
                        .with_extra("tail_bias", tail_bias(h, t.min(s), x.abs().max(y.abs()), xi_max)?),
                );
            }
        }
    }
    sink.file("covariance.csv", &csv)?;
    sink.finish(&reports)
}

fn ensemble_options(c: &SimulationConfig, iterations: usize) -> EnsembleOptions {
    EnsembleOptions {
        n_realizations: c.ensemble,
        seed: c.seed,
        iterations,
        batches: c.ensemble.clamp(2, 10),
        ..Default::default()
    }
}

fn delta_plot(res: &EnsembleResult) -> String {
    let pts = |d: Vec<f64>| d.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| ((i + 1) as f64, *v)).collect();
    svg_plot(
        &PlotSpec {
            title: "Picard successive differences".into(),
            x_label: "iteration n".into(),
            y_label: "delta".into(),
            log_x: false,
            log_y: true,
            annotation: None,
        },
        &[
            Series { label: "X1 norm".into(), points: pts(res.deltas_x1()), markers: true },
            Series { label: "X2 seminorm".into(), points: pts(res.deltas_x2()), markers: true },
        ],
    )
}

fn picard(a: &PicardArgs) -> Result<u8> {
    let c = a.cfg.resolve(Mode::Solver)?;
    let sink = Sink::new(c.out.as_deref().map(Path::new))?;
    sink.echo_config(&c.to_toml())?;
    let grid = c.solver_grid()?;
    let h = HurstIndex::for_solver(c.hurst)?;
    let w = homogeneous_term(&c.initial_data()?, &grid, h)?;
    let sigma = c.sigma();
    let noise = SpectralNoise::sample(Arc::new(grid.spectral_grid(h)?), grid.dt, grid.n_steps, realization_seed(c.seed, 0))?;
    if let Some(p) = &a.save_noise {
        noise.save(p)?;
    }
    let field = NoiseField::from_noise(&noise, &grid)?;
    let mut reports = Vec::new();
    match solve(sigma, &w, &field, c.solve_options()) {
        Ok((u, hist)) => {
            let n = grid.n_steps;
            let rows: Vec<usize> = [0, n / 4, n / 2, 3 * n / 4, n].into_iter().collect();
            sink.file("field.csv", &u.to_csv(&rows))?;
            reports.push(
                VerificationReport::upper_bound("picard_converged", *hist.deltas.last().unwrap(), c.tol * hist.deltas[0], 0.0)
                    .with_extra("iterations", hist.iterations as f64),
            );
            reports.push(uniqueness_probe(sigma, &w, &field, c.solve_options(), a.perturbation)?);
        }
        Err(Error::Nonconvergence { history }) => {
            let last = *history.last().unwrap_or(&f64::NAN);
            reports.push(
                VerificationReport::upper_bound("picard_converged", last, c.tol * history.first().copied().unwrap_or(0.0), 0.0)
                    .failed(format!("no convergence within {} iterations", c.max_iters)),
            );
        }
        Err(e) => return Err(e),
    }
    if c.ensemble >= 2 {
        let res = run_ensemble(sigma, &w, &ensemble_options(&c, c.max_iters))?;
        let d = res.deltas_x1();
        let worst = d.windows(2).skip(1).map(|p| p[1] / p[0]).fold(0.0f64, f64::max);
        reports.push(VerificationReport::upper_bound("delta_decrease", worst, 1.0, 0.0).with_extra("delta_1", d[0]));
        let diag = vn_wn_diagnostics(&res)?;
        reports.push(VerificationReport::upper_bound("rec1_violations", diag.rec1_violation_fraction, 0.05, 0.0));
        reports.push(VerificationReport::upper_bound("rec2_violations", diag.rec2_violation_fraction, 0.05, 0.0));
        let (problem, m) = gronwall_inputs(&res)?;
        reports.push(recurrence_check(&problem, &m, HittingMethod::Convolution { cells: DEFAULT_CELLS }, 0.0)?);
        let json = serde_json::json!({
            "deltas_x1": d,
            "deltas_x2": res.deltas_x2(),
            "second_moment_sup": res.second_moment_sup,
            "x2_final": res.x2_final,
            "rec1_violation_fraction": diag.rec1_violation_fraction,
            "rec2_violation_fraction": diag.rec2_violation_fraction,
            "t": (0..=grid.n_steps).map(|j| grid.t(j)).collect::<Vec<_>>(),
            "v": res.v,
            "w": res.w,
        });
        sink.file("diagnostics.json", &serde_json::to_string_pretty(&json).expect("json"))?;
        sink.file("deltas.svg", &delta_plot(&res))?;
    }
    sink.finish(&reports)
}

fn fit_plot(fit: &ExponentFit, title: &str) -> String {
    let data: Vec<(f64, f64)> = fit.lags.iter().zip(&fit.moments).map(|(l, m)| (*l, *m)).collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = data.iter().map(|(l, m)| (l.ln(), m.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / lx.len() as f64, ly.iter().sum::<f64>() / ly.len() as f64);
    let line = data.iter().map(|(l, _)| (*l, (my + fit.fitted_slope * (l.ln() - mx)).exp())).collect();
    svg_plot(
        &PlotSpec {
            title: title.into(),
            x_label: "lag".into(),
            y_label: "E|increment|^2".into(),
            log_x: true,
            log_y: true,
            annotation: Some(format!("slope = {:.4} ± {:.4}", fit.fitted_slope, fit.stderr)),
        },
        &[
            Series { label: "moments".into(), points: data, markers: true },
            Series { label: "fit".into(), points: line, markers: false },
        ],
    )
}

fn emit_fit(sink: &Sink, name: &str, fit: &ExponentFit) -> Result<()> {
    sink.file(&format!("{name}.csv"), &fit.to_csv())?;
    sink.file(&format!("{name}.json"), &serde_json::to_string_pretty(fit).expect("json"))?;
    sink.file(&format!("{name}.svg"), &fit_plot(fit, name))
}

fn holder(a: &HolderArgs) -> Result<u8> {
    let mode = match a.target {
        HolderTarget::Noise => Mode::Noise,
        HolderTarget::Solution => Mode::Solver,
    };
    let c = a.cfg.resolve(mode)?;
    let sink = Sink::new(c.out.as_deref().map(Path::new))?;
    sink.echo_config(&c.to_toml())?;
    let mut reports = Vec::new();
    match a.target {
        HolderTarget::Noise => {
            let h = HurstIndex::new(c.hurst)?;
            let dx = a.period / a.n_space as f64;
            let pts = a.space_lags.clone().unwrap_or_else(|| {
                (3..=7).map(|e| (2f64.powi(-e) / dx).round().max(1.0) as usize).collect()
            });
            let samples = noise_space_samples(h, 1.0, a.period, a.n_space, &pts, c.ensemble, c.seed)?;
            let lags: Vec<f64> = pts.iter().map(|&p| p as f64 * dx).collect();
            let fit = holder_exponent_space(&samples, &lags, dx, a.period / 2.0)?;
            emit_fit(&sink, "noise_space", &fit)?;
            reports.push(fit.report("holder_noise_space", 2.0 * c.hurst, c.exponent_tol));
        }
        HolderTarget::Solution => {
            let grid = c.solver_grid()?;
            let h = HurstIndex::for_solver(c.hurst)?;
            let w = homogeneous_term(&c.initial_data()?, &grid, h)?;
            let core = grid.core().len();
            let sp = a.space_lags.clone().unwrap_or_else(|| {
                let top = (core / 20).max(8).next_power_of_two() / 2;
                (0..4).map(|k| top >> k).filter(|&p| p > 2).collect()
            });
            let tl = a.time_lags.clone().unwrap_or_else(|| vec![16, 8, 4, 2]);
            let opts = EnsembleOptions {
                space_lags: sp.clone(),
                time_lags: tl.clone(),
                diagnostics: false,
                ..ensemble_options(&c, a.iterations)
            };
            let res = run_ensemble(c.sigma(), &w, &opts)?;
            let sl: Vec<f64> = sp.iter().map(|&p| p as f64 * grid.dx).collect();
            let fit = holder_exponent_space(&res.space_increments, &sl, grid.dx, c.half_width)?;
            emit_fit(&sink, "solution_space", &fit)?;
            reports.push(fit.report("holder_solution_space", 2.0 * c.hurst, c.exponent_tol));
            let tlags: Vec<f64> = tl.iter().map(|&p| p as f64 * grid.dt).collect();
            let fit = holder_exponent_time(&res.time_increments, &tlags, grid.t_end)?;
            emit_fit(&sink, "solution_time", &fit)?;
            let target = match c.equation {
                Kernel::Wave => 2.0 * c.hurst,
                Kernel::Heat => c.hurst,
            };
            reports.push(fit.report("holder_solution_time", target, c.exponent_tol));
        }
    }
    sink.finish(&reports)
}

fn moments(a: &MomentArgs) -> Result<u8> {
    let c = a.cfg.resolve(Mode::Solver)?;
    let sink = Sink::new(c.out.as_deref().map(Path::new))?;
    sink.echo_config(&c.to_toml())?;
    let h = HurstIndex::for_solver(c.hurst)?;
    let run = |cfg: &SimulationConfig| -> Result<EnsembleResult> {
        let grid = cfg.solver_grid()?;
        let w = homogeneous_term(&cfg.initial_data()?, &grid, h)?;
        let opts = EnsembleOptions {
            moment_orders: a.p.clone(),
            diagnostics: false,
            ..ensemble_options(cfg, a.iterations)
        };
        run_ensemble(cfg.sigma(), &w, &opts)
    };
    let base = run(&c)?;
    let ext = run(&SimulationConfig { t_end: 2.0 * c.t_end, ..c.clone() })?;
    let mut reports = moment_report(&base, &ext, &a.p)?;
    reports.push(moment_growth_report(&base));
    let mut csv = String::from("p,t_end,row,max_moment\n");
    for r in [&base, &ext] {
        for (p, rows) in &r.final_moments {
            for (d, est) in rows.iter().enumerate() {
                let m = est.mean.iter().fold(0.0f64, |x, y| x.max(*y));
                csv.push_str(&format!("{},{},{},{}\n", p, r.grid.t_end, r.diag_rows[d], fmt12(m)));
            }
        }
    }
    sink.file("moments.csv", &csv)?;
    sink.finish(&reports)
}

fn gronwall(a: &GronwallArgs) -> Result<u8> {
    let g = GFunction::parse(&a.g).map_err(|e| config_err("g", e.to_string()))?;
    let problem = GronwallProblem::new(a.t_end, g.clone(), a.m0, a.m1).map_err(|e| config_err("T", e.to_string()))?;
    if a.grid_points < 2 {
        return Err(config_err("grid_points", "need at least two points"));
    }
    let sink = Sink::new(a.out.out.as_deref())?;
    echo(&sink, a)?;
    let method = match a.method {
        MethodChoice::Conv => HittingMethod::Convolution { cells: a.cells },
        MethodChoice::Mc => HittingMethod::MonteCarlo { samples: a.samples, seed: a.seed },
    };
    let an = a_n_sequence(&problem, a.n_max, method)?;
    let mut csv = String::from("n,a_n\n");
    for (n, v) in an.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", n, fmt12(*v)));
    }
    sink.file("a_n.csv", &csv)?;
    let pts: Vec<(f64, f64)> = an.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(n, v)| (n as f64, *v)).collect();
    sink.file(
        "a_n.svg",
        &svg_plot(
            &PlotSpec {
                title: "Gronwall bound".into(),
                x_label: "n".into(),
                y_label: "a_n".into(),
                log_x: false,
                log_y: true,
                annotation: Some(format!("g = {}", a.g)),
            },
            &[Series { label: "a_n".into(), points: pts, markers: true }],
        ),
    )?;
    let mut reports = Vec::new();
    let verdict = cauchy_verdict(&an, a.p, a.rel_tol);
    reports.push(verdict.report(a.rel_tol));
    if a.n_check < 2 {
        return Err(config_err("n_check", "need at least two terms"));
    }
    let f = equality_sequence(&problem, a.n_check, a.grid_points);
    // Sampled hitting probabilities vanish for large k, so the bound uses the exact scheme.
    reports.push(recurrence_check(&problem, &f, HittingMethod::Convolution { cells: a.cells }, 1e-12)?);
    let conv = hitting_probability(&g, a.t_end, 3, HittingMethod::Convolution { cells: a.cells })?;
    let mc = hitting_probability(&g, a.t_end, 3, HittingMethod::MonteCarlo { samples: a.samples, seed: a.seed })?;
    if let (Hitting::Value { p: pc, .. }, Hitting::Value { p: pm, se }) = (conv, mc) {
        reports.push(VerificationReport::statistical("hitting_s3_conv_vs_mc", pm, pc, se, 0.0).with_input("k", 3.0));
    }
    sink.finish(&reports)
}

fn report(a: &ReportArgs) -> Result<u8> {
    let mut all = Vec::new();
    for p in &a.inputs {
        all.extend(reports_from_json(&read(p)?)?);
    }
    let text = match a.format {
        Format::Json => reports_to_json(&all, EmitOptions::default()),
        Format::Csv => reports_to_csv(&all),
        Format::Svg => {
            let rel: Vec<(f64, f64)> = all
                .iter()
                .enumerate()
                .map(|(i, r)| (i as f64, if r.reference != 0.0 { r.computed / r.reference } else { r.computed }))
                .collect();
            svg_plot(
                &PlotSpec {
                    title: "computed / reference per check".into(),
                    x_label: "check index".into(),
                    y_label: "ratio".into(),
                    log_x: false,
                    log_y: false,
                    annotation: Some(format!("{} of {} pass", all.iter().filter(|r| r.pass).count(), all.len())),
                },
                &[Series { label: "ratio".into(), points: rel, markers: true }],
            )
        }
    };
    match &a.output {
        Some(p) => write_file(p, &text)?,
        None => say(text.trim_end()),
    }
    Ok(if all.iter().all(|r| r.pass) { 0 } else { 2 })
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match flag {
        Some(0) => Err(config_err("threads", "must be at least 1")),
        Some(n) => Ok(Some(n)),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => s
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .map(Some)
                .ok_or_else(|| config_err(THREADS_ENV, format!("expected a positive integer, got `{s}`"))),
            Err(_) => Ok(None),
        },
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err("threads", e.to_string()))?;
    }
    match &cli.command {
        Command::VerifyIdentities(a) => verify_identities(a),
        Command::VerifyKernels(a) => verify_kernels(a),
        Command::Peszat(a) => peszat(a),
        Command::Simulate(a) => simulate(a),
        Command::Picard(a) => picard(a),
        Command::Holder(a) => holder(a),
        Command::Moments(a) => moments(a),
        Command::Gronwall(a) => gronwall(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Nonconvergence { .. } | Error::Quadrature(_) => 2,
                _ => 1,
            })
        }
    }
}
