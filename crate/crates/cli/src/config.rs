//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Unknown keys are rejected so that typos cannot silently fall back to a
//! default.

use std::path::{Path, PathBuf};

use monotone_spde::integrator::{DriftForm, SchemeConfig, SchemeMode};
use monotone_spde::kolmogorov::{Profile, ProbeMode};
use monotone_spde::measure::EmConfig;
use monotone_spde::{FieldState, GraphKind, MonotoneGraph, NoiseModel, TripleSpace};
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftFormKey {
    Graph,
    Yosida,
    Mollified,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid_n: usize,
    pub grid_diffusivity: f64,

    pub drift_kind: String,
    pub drift_coeffs: Vec<f64>,
    pub drift_lambda: f64,
    pub drift_mollify_n: u32,

    pub noise_b0: f64,
    pub noise_gamma: f64,
    pub noise_modes: usize,
    /// Slope of the norm-dependent factor; `0` means additive.
    pub noise_multiplicative: f64,

    pub time_dt: f64,
    pub time_horizon: f64,
    pub scheme_mode: SchemeMode,
    pub scheme_drift_form: DriftFormKey,
    pub ensemble_paths: usize,
    pub save_stride: usize,
    /// Number of paths written as per-path CSV files.
    pub save_paths: usize,
    /// Initial state `amplitude · e_mode`.
    pub init_mode: usize,
    pub init_amplitude: f64,
    pub ito_c_budget: f64,

    pub measure_burn_in: f64,
    pub measure_horizon: f64,
    pub measure_stride: usize,
    pub measure_batches: usize,
    pub measure_chains: usize,
    pub measure_retain: usize,
    pub measure_tail_levels: Vec<f64>,

    pub mixing_times: Vec<f64>,
    pub mixing_check_times: Vec<f64>,
    pub mixing_paths: usize,
    /// Starts are `±amplitude · e_1`.
    pub mixing_amplitude: f64,
    pub mixing_max_slope: f64,

    pub tangent_directions: usize,
    pub tangent_eps_ladder: Vec<f64>,
    pub tangent_horizon: f64,
    pub tangent_fd_horizon: f64,
    pub tangent_fd_scale: f64,
    pub tangent_order_range: Vec<f64>,

    pub kolmogorov_alpha: f64,
    pub kolmogorov_paths: usize,
    pub kolmogorov_lambda_grid: Vec<f64>,
    pub kolmogorov_n_grid: Vec<u32>,
    pub kolmogorov_modes_probe: ProbeMode,
    pub kolmogorov_probe_points: usize,
    pub kolmogorov_test_function: Profile,
    pub kolmogorov_test_modes: Vec<usize>,
    pub kolmogorov_c_budget: f64,
    pub kolmogorov_gap_samples: usize,
    pub kolmogorov_gap_paths: usize,

    pub master_seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_n: 64,
            grid_diffusivity: 1.0,
            drift_kind: "cubic".into(),
            drift_coeffs: Vec::new(),
            drift_lambda: 0.1,
            drift_mollify_n: 8,
            noise_b0: 0.5,
            noise_gamma: 1.0,
            noise_modes: 64,
            noise_multiplicative: 0.0,
            time_dt: 1e-3,
            time_horizon: 1.0,
            scheme_mode: SchemeMode::LieSplitting,
            scheme_drift_form: DriftFormKey::Graph,
            ensemble_paths: 1000,
            save_stride: 10,
            save_paths: 4,
            init_mode: 1,
            init_amplitude: 0.0,
            ito_c_budget: 10.0,
            measure_burn_in: 20.0,
            measure_horizon: 200.0,
            measure_stride: 10,
            measure_batches: 20,
            measure_chains: 1,
            measure_retain: 200,
            measure_tail_levels: vec![1.0, 2.0, 4.0, 8.0],
            mixing_times: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
            mixing_check_times: vec![0.5, 1.0, 2.0, 4.0],
            mixing_paths: 1000,
            mixing_amplitude: 0.5,
            mixing_max_slope: -0.8,
            tangent_directions: 1000,
            tangent_eps_ladder: vec![1e-2, 1e-3, 1e-4],
            tangent_horizon: 1.0,
            tangent_fd_horizon: 0.1,
            tangent_fd_scale: 4.0,
            tangent_order_range: vec![0.8, 1.2],
            kolmogorov_alpha: 1.0,
            kolmogorov_paths: 10_000,
            kolmogorov_lambda_grid: vec![0.2, 0.1, 0.05],
            kolmogorov_n_grid: vec![2, 4, 8, 64],
            kolmogorov_modes_probe: ProbeMode::DriftDirection,
            kolmogorov_probe_points: 5,
            kolmogorov_test_function: Profile::ProductCos,
            kolmogorov_test_modes: vec![1],
            kolmogorov_c_budget: 10.0,
            kolmogorov_gap_samples: 16,
            kolmogorov_gap_paths: 200,
            master_seed: 0,
            threads: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn scalar<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(scalar).collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults overridden by the settings in `text`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(i + 1, format!("expected `key = value`, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(|m| config_err(i + 1, m))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "grid.n" => self.grid_n = scalar(v)?,
            "grid.diffusivity" => self.grid_diffusivity = scalar(v)?,
            "drift.kind" => self.drift_kind = v.to_string(),
            "drift.coeffs" => self.drift_coeffs = list(v)?,
            "drift.lambda" => self.drift_lambda = scalar(v)?,
            "drift.mollify_n" => self.drift_mollify_n = scalar(v)?,
            "noise.b0" => self.noise_b0 = scalar(v)?,
            "noise.gamma" => self.noise_gamma = scalar(v)?,
            "noise.modes" => self.noise_modes = scalar(v)?,
            "noise.multiplicative" => {
                self.noise_multiplicative = match v {
                    "false" | "no" => 0.0,
                    "true" | "yes" => 1.0,
                    _ => scalar(v)?,
                }
            }
            "time.dt" => self.time_dt = scalar(v)?,
            "time.horizon" => self.time_horizon = scalar(v)?,
            "scheme.mode" => {
                self.scheme_mode = match v {
                    "lie_splitting" | "splitting" => SchemeMode::LieSplitting,
                    "full_implicit" | "implicit" => SchemeMode::FullImplicit,
                    _ => return Err(format!("unknown scheme mode {v:?}")),
                }
            }
            "scheme.drift_form" => {
                self.scheme_drift_form = match v {
                    "graph" | "graph_exact" => DriftFormKey::Graph,
                    "yosida" => DriftFormKey::Yosida,
                    "mollified" => DriftFormKey::Mollified,
                    _ => return Err(format!("unknown drift form {v:?}")),
                }
            }
            "ensemble.paths" => self.ensemble_paths = scalar(v)?,
            "save.stride" => self.save_stride = scalar(v)?,
            "save.paths" => self.save_paths = scalar(v)?,
            "init.mode" => self.init_mode = scalar(v)?,
            "init.amplitude" => self.init_amplitude = scalar(v)?,
            "ito.c_budget" => self.ito_c_budget = scalar(v)?,
            "measure.burn_in" => self.measure_burn_in = scalar(v)?,
            "measure.horizon" => self.measure_horizon = scalar(v)?,
            "measure.stride" => self.measure_stride = scalar(v)?,
            "measure.batches" => self.measure_batches = scalar(v)?,
            "measure.chains" => self.measure_chains = scalar(v)?,
            "measure.retain" => self.measure_retain = scalar(v)?,
            "measure.tail_levels" => self.measure_tail_levels = list(v)?,
            "mixing.times" => self.mixing_times = list(v)?,
            "mixing.check_times" => self.mixing_check_times = list(v)?,
            "mixing.paths" => self.mixing_paths = scalar(v)?,
            "mixing.amplitude" => self.mixing_amplitude = scalar(v)?,
            "mixing.max_slope" => self.mixing_max_slope = scalar(v)?,
            "tangent.directions" => self.tangent_directions = scalar(v)?,
            "tangent.eps_ladder" => self.tangent_eps_ladder = list(v)?,
            "tangent.horizon" => self.tangent_horizon = scalar(v)?,
            "tangent.fd_horizon" => self.tangent_fd_horizon = scalar(v)?,
            "tangent.fd_scale" => self.tangent_fd_scale = scalar(v)?,
            "tangent.order_range" => self.tangent_order_range = list(v)?,
            "kolmogorov.alpha" => self.kolmogorov_alpha = scalar(v)?,
            "kolmogorov.paths" => self.kolmogorov_paths = scalar(v)?,
            "kolmogorov.lambda_grid" => self.kolmogorov_lambda_grid = list(v)?,
            "kolmogorov.n_grid" => self.kolmogorov_n_grid = list(v)?,
            "kolmogorov.modes_probe" => {
                self.kolmogorov_modes_probe = match v {
                    "drift" => ProbeMode::DriftDirection,
                    "full" => ProbeMode::FullGradient,
                    _ => return Err(format!("modes_probe must be `drift` or `full`, got {v:?}")),
                }
            }
            "kolmogorov.probe_points" => self.kolmogorov_probe_points = scalar(v)?,
            "kolmogorov.test_function" => {
                self.kolmogorov_test_function = match v {
                    "cos" => Profile::ProductCos,
                    "tanh" => Profile::ProductTanh,
                    "gaussian" => Profile::GaussianBump,
                    _ => return Err(format!("unknown test function {v:?}")),
                }
            }
            "kolmogorov.test_modes" => self.kolmogorov_test_modes = list(v)?,
            "kolmogorov.c_budget" => self.kolmogorov_c_budget = scalar(v)?,
            "kolmogorov.gap_samples" => self.kolmogorov_gap_samples = scalar(v)?,
            "kolmogorov.gap_paths" => self.kolmogorov_gap_paths = scalar(v)?,
            "run.seed" => self.master_seed = scalar(v)?,
            "run.threads" => self.threads = scalar(v)?,
            "run.out" => self.out_dir = PathBuf::from(v),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Check every setting before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let space = self.space()?;
        self.graph()?;
        let noise = self.noise()?;
        noise.validate(&space).map_err(|e| CliError::Config(e.to_string()))?;
        self.scheme()?;
        if self.threads == 0 {
            return bad("run.threads must be at least 1".into());
        }
        if self.init_mode == 0 || self.init_mode > self.grid_n {
            return bad(format!("init.mode must lie in 1..={}", self.grid_n));
        }
        if !self.init_amplitude.is_finite() || !self.mixing_amplitude.is_finite() {
            return bad("initial amplitudes must be finite".into());
        }
        if self.ensemble_paths < 100 {
            return bad("ensemble.paths must be at least 100".into());
        }
        if !(self.ito_c_budget >= 0.0 && self.kolmogorov_c_budget >= 0.0) {
            return bad("bias budgets must be nonnegative".into());
        }
        self.em_config()
            .validate(self.time_dt)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let positive = |name: &str, xs: &[f64]| -> Result<(), CliError> {
            if xs.is_empty() || xs.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(CliError::Config(format!("{name} must be a nonempty list of positive numbers")));
            }
            Ok(())
        };
        positive("mixing.times", &self.mixing_times)?;
        positive("tangent.eps_ladder", &self.tangent_eps_ladder)?;
        if let Some(t) = self
            .mixing_check_times
            .iter()
            .find(|t| !self.mixing_times.iter().any(|s| (*s - **t).abs() < 1e-9))
        {
            return bad(format!("mixing.check_times entry {t} is not among mixing.times"));
        }
        if self.mixing_paths == 0 {
            return bad("mixing.paths must be positive".into());
        }
        if self.tangent_directions == 0 {
            return bad("tangent.directions must be positive".into());
        }
        for (name, v) in [
            ("tangent.horizon", self.tangent_horizon),
            ("tangent.fd_horizon", self.tangent_fd_horizon),
            ("tangent.fd_scale", self.tangent_fd_scale),
            ("kolmogorov.alpha", self.kolmogorov_alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.tangent_order_range.len() != 2 || self.tangent_order_range[0] > self.tangent_order_range[1] {
            return bad("tangent.order_range must be `lo, hi` with lo ≤ hi".into());
        }
        if self.kolmogorov_paths < 2 {
            return bad("kolmogorov.paths must be at least 2".into());
        }
        if self
            .kolmogorov_lambda_grid
            .iter()
            .any(|l| !(*l > 0.0 && l.is_finite()))
            || self.kolmogorov_n_grid.contains(&0)
        {
            return bad("kolmogorov grids need positive λ and n".into());
        }
        if self.kolmogorov_test_modes.is_empty()
            || self.kolmogorov_test_modes.iter().any(|&k| k == 0 || k > self.grid_n)
        {
            return bad(format!("kolmogorov.test_modes must lie in 1..={}", self.grid_n));
        }
        if self.kolmogorov_gap_samples == 0 || self.kolmogorov_gap_paths < 2 {
            return bad("gap table needs samples and at least two paths".into());
        }
        Ok(())
    }

    pub fn space(&self) -> Result<TripleSpace, CliError> {
        TripleSpace::new(self.grid_n, self.grid_diffusivity).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn graph(&self) -> Result<MonotoneGraph, CliError> {
        let kind = match self.drift_kind.as_str() {
            "cubic" => GraphKind::Cubic,
            "cubic_plus_linear" => GraphKind::CubicPlusLinear,
            "sinh" => GraphKind::Sinh,
            "exp_asymmetric" => GraphKind::ExpAsymmetric,
            "zero" => GraphKind::PolynomialOdd(Vec::new()),
            "polynomial_odd" => GraphKind::PolynomialOdd(self.drift_coeffs.clone()),
            other => return Err(CliError::Config(format!("unknown drift kind {other:?}"))),
        };
        MonotoneGraph::new(kind).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn noise(&self) -> Result<NoiseModel, CliError> {
        let mut noise = NoiseModel::additive(self.noise_b0, self.noise_gamma, self.noise_modes)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.noise_multiplicative != 0.0 {
            if !(self.noise_multiplicative > 0.0 && self.noise_multiplicative.is_finite()) {
                return Err(CliError::Config("noise.multiplicative must be ≥ 0".into()));
            }
            noise.multiplicative = Some(self.noise_multiplicative);
        }
        Ok(noise)
    }

    pub fn drift_form(&self) -> DriftForm {
        match self.scheme_drift_form {
            DriftFormKey::Graph => DriftForm::GraphExact,
            DriftFormKey::Yosida => DriftForm::Yosida {
                lambda: self.drift_lambda,
            },
            DriftFormKey::Mollified => self.mollified(),
        }
    }

    pub fn mollified(&self) -> DriftForm {
        DriftForm::Mollified {
            lambda: self.drift_lambda,
            n: self.drift_mollify_n,
        }
    }

    pub fn scheme(&self) -> Result<SchemeConfig, CliError> {
        let cfg = SchemeConfig::new(self.time_dt, self.time_horizon)
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_mode(self.scheme_mode)
            .with_drift(self.drift_form())
            .with_save_stride(self.save_stride);
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let DriftForm::Mollified { lambda, n } = self.mollified() {
            monotone_spde::RegularizedDrift::new(lambda, n).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            burn_in: self.measure_burn_in,
            horizon: self.measure_horizon,
            stride: self.measure_stride,
            batches: self.measure_batches,
            chains: self.measure_chains,
            retain: self.measure_retain,
            tail_levels: self.measure_tail_levels.clone(),
        }
    }

    pub fn initial_state(&self, space: &TripleSpace) -> FieldState {
        space.eigenmode(self.init_mode).scaled(self.init_amplitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn comments_lists_and_overrides() {
        let cfg = RunConfig::parse(
            "# benchmark\n grid.n = 32 # interior nodes\nmixing.times = 1, 2,4\nkolmogorov.modes_probe = full\n\n",
        )
        .unwrap();
        assert_eq!(cfg.grid_n, 32);
        assert_eq!(cfg.mixing_times, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.kolmogorov_modes_probe, ProbeMode::FullGradient);
    }

    #[test]
    fn unknown_and_malformed_lines_name_the_line() {
        let e = RunConfig::parse("grid.n = 8\ngrid.m = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse("grid.n 8").is_err());
        assert!(RunConfig::parse("grid.n = eight").is_err());
    }

    #[test]
    fn zero_grid_is_a_config_error() {
        let cfg = RunConfig::parse("grid.n = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
