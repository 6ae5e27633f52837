//! Synchronous coupling: two copies driven by the same noise path.
//!
//! For a superlinear drift, `(β(a) - β(b))(a - b) ≥ c|a - b|^{2+δ}`, the
//! difference `d = X^x - X^y` obeys
//!
//! ```text
//! ½ d/dt ‖d‖²_H ≤ -c ∫|d|^{2+δ} ≤ -c ‖d‖_H^{2+δ}
//! ```
//!
//! where the second step is Jensen on a domain of unit volume. Hence
//! `y = ‖d‖²` satisfies `y' + c̃ y^{1+δ/2} ≤ 0` with `c̃ = 2c`, and comparing with
//! the ODE solution started at `y₀ = ∞` gives `y(t) ≤ (c̃ (δ/2) t)^{-2/δ}`
//! uniformly in the initial states.

use serde::{Deserialize, Serialize};

use super::{Battery, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::integrator::{SchemeConfig, Stepper};
use crate::monotone::MonotoneGraph;
use crate::noise::NoiseModel;
use crate::rng;
use crate::space::{FieldState, TripleSpace};
use crate::stats::{linear_fit, mean, mean_se, MeanSe};

/// Relative slack allowed per step in the contraction check (roundoff).
const CONTRACTION_RTOL: f64 = 1e-12;
const CONTRACTION_ATOL: f64 = 1e-14;

/// `c̃` in `y' + c̃ y^{1+δ/2} ≤ 0` from the pointwise constant `c`.
pub fn jensen_rate(c: f64) -> f64 {
    2.0 * c
}

/// Uniform bound `(c̃ (δ/2) t)^{-2/δ}` on the coupled second moment.
pub fn envelope(c_tilde: f64, delta: f64, t: f64) -> f64 {
    (c_tilde * 0.5 * delta * t).powf(-2.0 / delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub times: Vec<f64>,
    pub coupled_m2: Vec<MeanSe>,
    pub envelope: Vec<f64>,
    pub phi_names: Vec<String>,
    /// `|P̂_t φ(x) - Ê_μ φ|` per time and functional; empty without a
    /// reference measure.
    pub gaps: Vec<Vec<f64>>,
    pub c: f64,
    pub c_tilde: f64,
    pub delta: f64,
    /// Log-log slope of the coupled moment over `t ∈ [1, 8]`.
    pub slope: f64,
    pub steps_checked: usize,
    pub contraction_violations: usize,
    /// Largest observed `‖d_{m+1}‖ / ‖d_m‖`.
    pub max_contraction_ratio: f64,
}

impl MixingReport {
    /// `Ê‖d‖²(t) ≤ c(t) + z·SE` at every time in `check`.
    pub fn envelope_holds(&self, check: &[f64], z: f64) -> bool {
        check.iter().all(|&t| {
            self.times
                .iter()
                .position(|&s| (s - t).abs() < 1e-9)
                .is_some_and(|i| self.coupled_m2[i].mean <= self.envelope[i] + z * self.coupled_m2[i].se)
        })
    }
}

struct PairOutput {
    d2: Vec<f64>,
    phi: Vec<Vec<f64>>,
    violations: usize,
    max_ratio: f64,
}

/// Coupled-pair experiment from `x` and `y` at the given observation times.
#[allow(clippy::too_many_arguments)]
pub fn mixing_experiment(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x: &FieldState,
    y: &FieldState,
    n_paths: usize,
    times: &[f64],
    reference: Option<&EmpiricalMeasure>,
    seed: u64,
    exec: &Executor,
) -> Result<MixingReport> {
    let sl = graph.superlinearity().ok_or_else(|| {
        Error::Unsupported(format!("drift {} has no known superlinearity constants", graph.name()))
    })?;
    if !noise.is_additive() {
        return Err(Error::Unsupported("coupling needs additive noise".into()));
    }
    for s in [x, y] {
        if s.len() != space.n() {
            return Err(Error::DimensionMismatch {
                expected: space.n(),
                got: s.len(),
            });
        }
    }
    if n_paths == 0 || times.is_empty() || times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter("need paths and positive observation times".into()));
    }
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    let dt = cfg.dt;
    let idx: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
    let last = *idx.iter().max().expect("nonempty");
    let battery = Battery::new(space);

    let pairs = exec.try_map(n_paths, |p| -> Result<PairOutput> {
        let mut r = rng::stream(seed, rng::domain::MIXING, p as u64);
        let mut wa = stepper.workspace();
        let mut wb = stepper.workspace();
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        let mut d = vec![0.0; a.len()];
        let diff = |a: &[f64], b: &[f64], d: &mut [f64]| {
            for i in 0..d.len() {
                d[i] = a[i] - b[i];
            }
            space.norm_h(d)
        };
        let mut out = PairOutput {
            d2: vec![0.0; idx.len()],
            phi: vec![Vec::new(); idx.len()],
            violations: 0,
            max_ratio: 0.0,
        };
        let mut prev = diff(&a, &b, &mut d);
        for m in 0..=last {
            if m > 0 {
                stepper.draw_increment(1, &mut r, &mut wa);
                wb.dw.copy_from_slice(&wa.dw);
                stepper.advance(&mut a, &mut wa)?;
                stepper.advance(&mut b, &mut wb)?;
                let now = diff(&a, &b, &mut d);
                if now > prev * (1.0 + CONTRACTION_RTOL) + CONTRACTION_ATOL {
                    out.violations += 1;
                }
                if prev > 0.0 {
                    out.max_ratio = out.max_ratio.max(now / prev);
                }
                prev = now;
            }
            for (j, &mj) in idx.iter().enumerate() {
                if mj == m {
                    out.d2[j] = prev * prev;
                    out.phi[j] = battery.eval(space, &a);
                }
            }
        }
        Ok(out)
    })?;

    let c_tilde = jensen_rate(sl.c);
    let coupled_m2: Vec<MeanSe> = (0..times.len())
        .map(|j| mean_se(&pairs.iter().map(|p| p.d2[j]).collect::<Vec<_>>()))
        .collect();
    let env: Vec<f64> = times.iter().map(|&t| envelope(c_tilde, sl.delta, t)).collect();
    let gaps = match reference {
        Some(em) => (0..times.len())
            .map(|j| {
                em.battery()
                    .iter()
                    .enumerate()
                    .map(|(f, e)| (mean(&pairs.iter().map(|p| p.phi[j][f]).collect::<Vec<_>>()) - e.mean).abs())
                    .collect()
            })
            .collect(),
        None => Vec::new(),
    };
    let (lx, ly): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&coupled_m2)
        .filter(|(t, m)| **t >= 1.0 && **t <= 8.0 && m.mean > 0.0)
        .map(|(t, m)| (t.ln(), m.mean.ln()))
        .unzip();
    let slope = if lx.len() >= 2 { linear_fit(&lx, &ly).0 } else { f64::NAN };
    Ok(MixingReport {
        times: times.to_vec(),
        coupled_m2,
        envelope: env,
        phi_names: battery.names(),
        gaps,
        c: sl.c,
        c_tilde,
        delta: sl.delta,
        slope,
        steps_checked: n_paths * last,
        contraction_violations: pairs.iter().map(|p| p.violations).sum(),
        max_contraction_ratio: pairs.iter().fold(0.0, |m, p| m.max(p.max_ratio)),
    })
}
