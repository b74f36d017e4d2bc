//! Run configuration: flat TOML with CLI overrides, validated with field names.

use serde::{Deserialize, Serialize};

use crate::constants::HurstIndex;
use crate::error::{config_err, Error, Result};
use crate::kernels::Kernel;
use crate::picard::{AffineSigma, InitialData, Profile, SolveOptions, SolverGrid};

/// Which Hurst range applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Noise synthesis and identity checks: `h ∈ (0, 1/2)`.
    Noise,
    /// Picard solver: `h ∈ (1/4, 1/2)`.
    Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub equation: Kernel,
    pub hurst: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub dx: f64,
    /// Half-width of the reported core window.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub u0: String,
    pub v0: String,
    pub seed: u64,
    pub ensemble: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub exponent_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            equation: Kernel::Wave,
            hurst: 0.35,
            t_end: 0.5,
            dt: 0.5 / 256.0,
            dx: 2.0 / 1024.0,
            half_width: 0.5,
            sigma_a: 1.0,
            sigma_b: 0.0,
            u0: "const:1".into(),
            v0: "const:0".into(),
            seed: 1,
            ensemble: 100,
            xi_max: None,
            n_bins: None,
            max_iters: 12,
            tol: 1e-3,
            exponent_tol: 0.05,
            out: None,
        }
    }
}

/// Grid quantities derived from a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub h: HurstIndex,
    pub n_steps: usize,
    pub n_space: usize,
    pub period: f64,
    pub padding: f64,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: e.span().map(|s| format!("{}..{}", s.start, s.end)).unwrap_or_else(|| "config".into()),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, mode: Mode) -> Result<Derived> {
        let h = match mode {
            Mode::Noise => HurstIndex::new(self.hurst),
            Mode::Solver => HurstIndex::for_solver(self.hurst),
        }
        .map_err(|e| config_err("hurst", e.to_string()))?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be positive and finite, got {v}")))
            }
        };
        positive("T", self.t_end)?;
        positive("dt", self.dt)?;
        positive("dx", self.dx)?;
        positive("L", self.half_width)?;
        positive("tol", self.tol)?;
        positive("exponent_tol", self.exponent_tol)?;
        let steps = (self.t_end / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(config_err("dt", format!("T = {} is not an integer multiple of dt = {}", self.t_end, self.dt)));
        }
        if !(self.sigma_a.is_finite() && self.sigma_b.is_finite()) {
            return Err(config_err("sigma_a", "σ coefficients must be finite"));
        }
        if let Some(xm) = self.xi_max {
            positive("xi_max", xm)?;
            if xm * self.dx > std::f64::consts::PI * (1.0 + 1e-12) {
                return Err(config_err("xi_max", format!("ξ_max·dx = {} exceeds π (aliasing)", xm * self.dx)));
            }
        }
        if let Some(nb) = self.n_bins {
            if nb < 2 || nb % 2 != 0 {
                return Err(config_err("n_bins", "must be even and at least 2"));
            }
        }
        if self.ensemble == 0 {
            return Err(config_err("ensemble", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(config_err("max_iters", "must be at least 1"));
        }
        Profile::parse(&self.u0, self.hurst).map_err(|e| config_err("u0", e.to_string()))?;
        Profile::parse(&self.v0, self.hurst).map_err(|e| config_err("v0", e.to_string()))?;
        let need = SolverGrid::required_padding(self.equation, self.t_end);
        let n_space = (2.0 * (self.half_width + need) / self.dx * (1.0 - 1e-12)).ceil() as usize;
        if n_space < 8 {
            return Err(config_err("dx", "window holds fewer than 8 grid points"));
        }
        let period = n_space as f64 * self.dx;
        Ok(Derived {
            h,
            n_steps: steps as usize,
            n_space,
            period,
            padding: period / 2.0 - self.half_width,
        })
    }

    pub fn solver_grid(&self) -> Result<SolverGrid> {
        let d = self.validate(Mode::Solver)?;
        SolverGrid::with_padding(self.equation, self.t_end, d.n_steps, self.half_width, d.padding, d.n_space)
    }

    pub fn sigma(&self) -> AffineSigma {
        AffineSigma::new(self.sigma_a, self.sigma_b)
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        let d = self.validate(Mode::Solver)?;
        let u0 = Profile::parse(&self.u0, self.hurst).map_err(|e| config_err("u0", e.to_string()))?;
        let v0 = Profile::parse(&self.v0, self.hurst).map_err(|e| config_err("v0", e.to_string()))?;
        InitialData::new(u0, v0, d.h, (-d.period / 2.0, d.period / 2.0))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            perturbation: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_valid() {
        let c = SimulationConfig::default();
        let d = c.validate(Mode::Solver).unwrap();
        assert_eq!(d.n_steps, 256);
        assert_eq!(d.n_space, 1024);
        assert!((d.padding - 0.5).abs() < 1e-12);
        let g = c.solver_grid().unwrap();
        assert!((g.dx - c.dx).abs() < 1e-15);
    }

    #[test]
    fn field_names_in_errors() {
        let field = |c: SimulationConfig, mode| match c.validate(mode) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let base = SimulationConfig::default();
        assert_eq!(field(SimulationConfig { hurst: 0.2, ..base.clone() }, Mode::Solver), "hurst");
        assert!(SimulationConfig { hurst: 0.2, ..base.clone() }.validate(Mode::Noise).is_ok());
        assert_eq!(field(SimulationConfig { dt: 0.3, ..base.clone() }, Mode::Solver), "dt");
        assert_eq!(field(SimulationConfig { xi_max: Some(1e5), ..base.clone() }, Mode::Noise), "xi_max");
        assert_eq!(field(SimulationConfig { u0: "spline".into(), ..base.clone() }, Mode::Solver), "u0");
        assert_eq!(field(SimulationConfig { n_bins: Some(7), ..base.clone() }, Mode::Noise), "n_bins");
    }

    #[test]
    fn heat_padding_rounds_up() {
        let c = SimulationConfig {
            equation: Kernel::Heat,
            dx: 0.01,
            ..Default::default()
        };
        let d = c.validate(Mode::Solver).unwrap();
        assert!(d.padding >= 6.0 * 0.5f64.sqrt());
        assert!((d.period - d.n_space as f64 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = SimulationConfig::default().to_toml() + "bogus = 1\n";
        assert!(matches!(SimulationConfig::from_toml(&text), Err(Error::Config { .. })));
    }

    proptest! {
        #[test]
        fn toml_round_trip(h in 0.26f64..0.49, t in 0.01f64..10.0, a in -5.0f64..5.0, seed in any::<u64>(), xm in proptest::option::of(1.0f64..1e4), tol in prop_oneof![Just(f64::INFINITY), 1e-8f64..1.0]) {
            let c = SimulationConfig {
                hurst: h,
                t_end: t,
                sigma_a: a,
                seed,
                xi_max: xm,
                tol,
                out: Some("out dir/α".into()),
                ..Default::default()
            };
            let back = SimulationConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
