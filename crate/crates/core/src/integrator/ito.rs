//! Monte Carlo checks of Itô's formula for the discrete scheme.
//!
//! For a functional `F` each path contributes
//!
//! ```text
//! R = F(X_M) - F(x0) + Σ dt [⟨DF(X_m), AX_m + ξ_{m+1}⟩ - ½ Tr(D²F(X_m) B Bᵀ)]
//! ```
//!
//! whose expectation vanishes up to the time discretization error. The
//! martingale `Σ⟨DF(X_m), ΔW_m⟩` and the fluctuation
//! `½ Σ (D²F(X_m)[ΔW_m, ΔW_m] - dt Tr(...))` have zero mean and are subtracted
//! per path to isolate the deterministic (discretization) part, whose dt-scaling
//! is then measurable with few paths.

use serde::{Deserialize, Serialize};

use super::Stepper;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::monotone::MonotoneGraph;
use crate::noise::NoiseModel;
use crate::rng;
use crate::space::{FieldState, TripleSpace};
use crate::stats::{mean_se, MeanSe};

use super::SchemeConfig;

/// Bounded scalar test functions with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarTest {
    Cos,
    Sin,
    Tanh,
}

impl ScalarTest {
    /// `(φ, φ', φ'')` at `p`.
    pub fn eval3(self, p: f64) -> (f64, f64, f64) {
        match self {
            ScalarTest::Cos => (p.cos(), -p.sin(), -p.cos()),
            ScalarTest::Sin => (p.sin(), p.cos(), -p.sin()),
            ScalarTest::Tanh => {
                let t = p.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * t * s)
            }
        }
    }
}

/// Functionals with closed-form first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ItoFunctional {
    /// `½‖x‖²`
    HalfNormSq,
    /// `g_δ(‖x‖²)` with `g_δ(r) = r / (1 + δr)`.
    GdeltaNormSq { delta: f64 },
    /// `φ(⟨x, e_k⟩)`.
    Cylindrical { phi: ScalarTest, mode: usize },
}

impl ItoFunctional {
    pub fn name(&self) -> String {
        match self {
            ItoFunctional::HalfNormSq => "half_norm_sq".into(),
            ItoFunctional::GdeltaNormSq { delta } => format!("g_delta_norm_sq({delta})"),
            ItoFunctional::Cylindrical { phi, mode } => format!("{phi:?}(<x,e_{mode}>)").to_lowercase(),
        }
    }

    fn validate(&self, space: &TripleSpace) -> Result<()> {
        match *self {
            ItoFunctional::HalfNormSq => Ok(()),
            ItoFunctional::GdeltaNormSq { delta } if delta > 0.0 && delta.is_finite() => Ok(()),
            ItoFunctional::GdeltaNormSq { delta } => {
                Err(Error::Unsupported(format!("g_delta needs delta > 0, got {delta}")))
            }
            ItoFunctional::Cylindrical { mode, .. } if mode >= 1 && mode <= space.n() => Ok(()),
            ItoFunctional::Cylindrical { mode, .. } => {
                Err(Error::Unsupported(format!("cylindrical functional on missing mode {mode}")))
            }
        }
    }
}

/// `g_δ'(r) = (1 + δr)^{-2}` and `g_δ''(r) = -2δ (1 + δr)^{-3}`.
pub fn g_delta_derivatives(delta: f64, r: f64) -> (f64, f64) {
    let q = 1.0 + delta * r;
    (1.0 / (q * q), -2.0 * delta / (q * q * q))
}

/// Ensemble options shared by the identity checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Budget constant `c` in `|residual| ≤ 3 SE + c dt`.
    pub c_budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub functional: String,
    pub dt: f64,
    pub n_paths: usize,
    /// Plain Monte Carlo estimate of the expectation residual.
    pub residual: MeanSe,
    /// Residual with the zero-mean martingale and fluctuation terms removed.
    pub deterministic: MeanSe,
    pub c_budget: f64,
    /// `3 SE + c dt`
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: IdentityReport,
    pub fine: IdentityReport,
    /// Ratio of the deterministic parts, coarse over fine.
    pub ratio: f64,
}

struct PathSample {
    residual: f64,
    deterministic: f64,
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 100 {
        return Err(Error::InvalidParameter(format!(
            "identity checks need at least 100 paths, got {n_paths}"
        )));
    }
    Ok(())
}

/// One path of the identity for `F`. The noise is drawn in `substeps`
/// sub-increments per step so that a coarse and a fine run can share paths.
fn identity_path(
    stepper: &Stepper,
    functional: ItoFunctional,
    x0: &[f64],
    steps: usize,
    substeps: usize,
    seed: u64,
    index: u64,
) -> Result<PathSample> {
    let space = stepper.space();
    let noise = stepper.noise();
    let dt = stepper.dt();
    let n = space.n();
    let hs = noise.hs_norm_sq();
    let bk = noise.mode_coeffs();
    let mut rng = rng::stream(seed, rng::domain::PATH, index);
    let mut ws = stepper.workspace();
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    let mut xm = vec![0.0; n];
    let ek = match functional {
        ItoFunctional::Cylindrical { mode, .. } => space.eigenmode_vec(mode),
        _ => Vec::new(),
    };
    let noise_modes: Vec<Vec<f64>> = match functional {
        ItoFunctional::GdeltaNormSq { .. } => (1..=bk.len()).map(|k| space.eigenmode_vec(k)).collect(),
        _ => Vec::new(),
    };

    let value = |x: &[f64]| -> f64 {
        match functional {
            ItoFunctional::HalfNormSq => 0.5 * space.norm_h_sq(x),
            ItoFunctional::GdeltaNormSq { delta } => {
                let r = space.norm_h_sq(x);
                r / (1.0 + delta * r)
            }
            ItoFunctional::Cylindrical { phi, .. } => phi.eval3(space.inner(x, &ek)).0,
        }
    };

    let mut drift = 0.0;
    let mut martingale = 0.0;
    let mut fluctuation = 0.0;
    for _ in 0..steps {
        stepper.draw_increment(substeps, &mut rng, &mut ws);
        let sigma2 = if noise.is_additive() {
            1.0
        } else {
            noise.sigma(space.norm_h(&x)).powi(2)
        };
        space.apply_a_into(&x, &mut ax);
        xm.copy_from_slice(&x);
        stepper.advance(&mut x, &mut ws)?;
        // ws.dw now carries σ(‖X_m‖) for multiplicative noise
        match functional {
            ItoFunctional::HalfNormSq => {
                // within-step Fenchel pair ⟨ξ_{m+1}, X*_{m+1}⟩
                drift += dt * (space.inner(&ax, &xm) + space.inner(&ws.xi, &ws.xstar));
                martingale += space.inner(&xm, &ws.dw);
                fluctuation += 0.5 * (space.norm_h_sq(&ws.dw) - dt * sigma2 * hs);
                drift -= 0.5 * dt * sigma2 * hs;
            }
            ItoFunctional::GdeltaNormSq { delta } => {
                let r = space.norm_h_sq(&xm);
                let (g1, g2) = g_delta_derivatives(delta, r);
                let mut pair = 0.0;
                let mut proj = 0.0;
                for (b, e) in bk.iter().zip(&noise_modes) {
                    let p = space.inner(&xm, e);
                    proj += b * b * p * p;
                }
                for i in 0..n {
                    pair += xm[i] * (ax[i] + ws.xi[i]);
                }
                pair *= space.h();
                let trace = sigma2 * (2.0 * g1 * hs + 4.0 * g2 * proj);
                drift += dt * (2.0 * g1 * pair - 0.5 * trace);
                martingale += 2.0 * g1 * space.inner(&xm, &ws.dw);
                let xdw = space.inner(&xm, &ws.dw);
                let quad = 2.0 * g1 * space.norm_h_sq(&ws.dw) + 4.0 * g2 * xdw * xdw;
                fluctuation += 0.5 * (quad - dt * trace);
            }
            ItoFunctional::Cylindrical { phi, mode } => {
                let p = space.inner(&xm, &ek);
                let (_, d1, d2) = phi.eval3(p);
                let lam = space.eigenvalue(mode);
                let b2 = if mode <= bk.len() { bk[mode - 1] * bk[mode - 1] } else { 0.0 };
                let trace = sigma2 * d2 * b2;
                drift += dt * (d1 * (lam * p + space.inner(&ek, &ws.xi)) - 0.5 * trace);
                let q = space.inner(&ek, &ws.dw);
                martingale += d1 * q;
                fluctuation += 0.5 * (d2 * q * q - dt * trace);
            }
        }
    }
    let residual = value(&x) - value(x0) + drift;
    Ok(PathSample {
        residual,
        deterministic: residual - martingale - fluctuation,
    })
}

fn run_identity(
    stepper: &Stepper,
    functional: ItoFunctional,
    x0: &FieldState,
    steps: usize,
    substeps: usize,
    opts: &IdentityOptions,
    exec: &Executor,
) -> Result<IdentityReport> {
    functional.validate(stepper.space())?;
    if x0.len() != stepper.space().n() {
        return Err(Error::DimensionMismatch {
            expected: stepper.space().n(),
            got: x0.len(),
        });
    }
    let samples = exec.try_map(opts.n_paths, |p| {
        identity_path(stepper, functional, x0, steps, substeps, opts.seed, p as u64)
    })?;
    let res: Vec<f64> = samples.iter().map(|s| s.residual).collect();
    let det: Vec<f64> = samples.iter().map(|s| s.deterministic).collect();
    let residual = mean_se(&res);
    let deterministic = mean_se(&det);
    let bound = 3.0 * residual.se + opts.c_budget * stepper.dt();
    Ok(IdentityReport {
        functional: functional.name(),
        dt: stepper.dt(),
        n_paths: opts.n_paths,
        residual,
        deterministic,
        c_budget: opts.c_budget,
        bound,
        pass: residual.mean.abs() <= bound,
    })
}

/// Itô's formula for `½‖X‖²`.
pub fn verify_ito_square(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    opts: &IdentityOptions,
    exec: &Executor,
) -> Result<IdentityReport> {
    verify_ito_general(space, graph, noise, cfg, x0, ItoFunctional::HalfNormSq, opts, exec)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_ito_general(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    functional: ItoFunctional,
    opts: &IdentityOptions,
    exec: &Executor,
) -> Result<IdentityReport> {
    check_paths(opts.n_paths)?;
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    run_identity(&stepper, functional, x0, cfg.steps(), 1, opts, exec)
}

/// Runs the identity at `cfg.dt` and `cfg.dt / 2` on the same Brownian
/// paths and compares the deterministic parts.
#[allow(clippy::too_many_arguments)]
pub fn ito_refinement(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    functional: ItoFunctional,
    opts: &IdentityOptions,
    exec: &Executor,
) -> Result<RefinementReport> {
    check_paths(opts.n_paths)?;
    let coarse_stepper = Stepper::new(space, graph, noise, cfg)?;
    let fine_stepper = coarse_stepper.with_dt(0.5 * cfg.dt)?;
    let steps = cfg.steps();
    let coarse = run_identity(&coarse_stepper, functional, x0, steps, 2, opts, exec)?;
    let fine = run_identity(&fine_stepper, functional, x0, 2 * steps, 1, opts, exec)?;
    let ratio = coarse.deterministic.mean / fine.deterministic.mean;
    Ok(RefinementReport { coarse, fine, ratio })
}

/// Ensemble check of the a-priori energy estimate
/// `C E∫‖X‖²_V + E∫∫j(X) + E∫∫j*(ξ) ≤ ½‖x0‖² + C0 t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub lhs: MeanSe,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

pub fn energy_estimate(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    n_paths: usize,
    seed: u64,
    exec: &Executor,
) -> Result<EnergyEstimate> {
    let (c, c0) = noise.coercivity_constants(space)?;
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    let steps = cfg.steps();
    let samples = exec.try_map(n_paths, |p| {
        let mut r = rng::stream(seed, rng::domain::PATH, p as u64);
        let out = stepper.simulate(x0, steps, 0, &mut r)?;
        let q = out.quadratics;
        Ok::<f64, Error>(c * q.v_int + q.j_int + q.jstar_int)
    })?;
    let lhs = mean_se(&samples);
    let rhs = 0.5 * space.norm_h_sq(x0) + c0 * steps as f64 * cfg.dt;
    let bound = rhs + 3.0 * lhs.se;
    Ok(EnergyEstimate {
        lhs,
        rhs,
        slack: bound - lhs.mean,
        pass: lhs.mean <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_delta_algebra() {
        for &r in &[0.0, 0.3, 2.0, 40.0] {
            let (g1, g2) = g_delta_derivatives(1.0, r);
            assert!((g1 - (1.0 + r).powi(-2)).abs() < 1e-15);
            assert!((g2 + 2.0 * (1.0 + r).powi(-3)).abs() < 1e-15);
            assert!(g1 <= 1.0 && g2 < 0.0);
        }
    }

    #[test]
    fn noiseless_linear_square_identity_is_first_order() {
        let space = TripleSpace::new(16, 1.0).unwrap();
        let x0 = space.eigenmode(2);
        let opts = IdentityOptions {
            n_paths: 100,
            seed: 3,
            c_budget: 0.0,
        };
        let mut prev = None;
        for dt in [2e-3, 1e-3] {
            let cfg = SchemeConfig::new(dt, 0.1).unwrap();
            let rep = verify_ito_square(
                &space,
                &MonotoneGraph::zero(),
                &NoiseModel::zero(),
                &cfg,
                &x0,
                &opts,
                &Executor::sequential(),
            )
            .unwrap();
            assert_eq!(rep.residual.se, 0.0);
            if let Some(p) = prev {
                let ratio: f64 = p / rep.residual.mean;
                assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
            }
            prev = Some(rep.residual.mean);
        }
    }
}
