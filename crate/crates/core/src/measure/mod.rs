//! Time-averaged (Krylov–Bogoliubov) estimates of the invariant measure, the
//! moment and support bounds it must satisfy, and coupling experiments.

mod mixing;

pub use mixing::{envelope, jensen_rate, mixing_experiment, MixingReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::integrator::{SchemeConfig, Stepper};
use crate::monotone::MonotoneGraph;
use crate::noise::NoiseModel;
use crate::rng;
use crate::space::{FieldState, TripleSpace};
use crate::stats::{combined_se, mean, mean_se, variance, MeanSe};

/// Bounded test functionals `cos⟨x,e_k⟩`, `tanh⟨x,e_k⟩` (k ≤ 4) and
/// `exp(-‖x‖²_H)`.
#[derive(Clone, Debug)]
pub struct Battery {
    modes: Vec<Vec<f64>>,
}

impl Battery {
    pub const MAX_MODES: usize = 4;

    pub fn new(space: &TripleSpace) -> Self {
        let k = Self::MAX_MODES.min(space.n());
        Self {
            modes: (1..=k).map(|k| space.eigenmode_vec(k)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.modes.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let k = self.modes.len();
        let mut out: Vec<String> = (1..=k).map(|i| format!("cos_e{i}")).collect();
        out.extend((1..=k).map(|i| format!("tanh_e{i}")));
        out.push("exp_neg_h2".into());
        out
    }

    /// Append the battery values at `x` to `out`.
    pub fn eval_into(&self, space: &TripleSpace, x: &[f64], out: &mut Vec<f64>) {
        let p: Vec<f64> = self.modes.iter().map(|e| space.inner(x, e)).collect();
        out.extend(p.iter().map(|v| v.cos()));
        out.extend(p.iter().map(|v| v.tanh()));
        out.push((-space.norm_h_sq(x)).exp());
    }

    pub fn eval(&self, space: &TripleSpace, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.eval_into(space, x, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub burn_in: f64,
    pub horizon: f64,
    /// Steps between recorded samples.
    pub stride: usize,
    pub batches: usize,
    /// Independent trajectories; 1 is the plain ergodic average.
    pub chains: usize,
    /// States kept for later use as draws from the estimate.
    pub retain: usize,
    pub tail_levels: Vec<f64>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            burn_in: 20.0,
            horizon: 200.0,
            stride: 10,
            batches: 20,
            chains: 1,
            retain: 200,
            tail_levels: vec![1.0, 2.0, 4.0, 8.0],
        }
    }
}

impl EmConfig {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.burn_in >= 0.0 && self.horizon > self.burn_in && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= burn_in < horizon, got burn_in = {}, horizon = {}",
                self.burn_in, self.horizon
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("sample stride must be positive".into()));
        }
        if self.batches < 8 {
            return Err(Error::InvalidParameter(format!("need at least 8 batches, got {}", self.batches)));
        }
        if self.chains == 0 {
            return Err(Error::InvalidParameter("need at least one chain".into()));
        }
        if self.samples_per_chain(dt) < self.batches {
            return Err(Error::InvalidParameter(format!(
                "only {} samples per chain for {} batches",
                self.samples_per_chain(dt),
                self.batches
            )));
        }
        if self.tail_levels.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter("tail levels must be positive".into()));
        }
        Ok(())
    }

    fn burn_steps(&self, dt: f64) -> usize {
        (self.burn_in / dt).round() as usize
    }

    fn total_steps(&self, dt: f64) -> usize {
        (self.horizon / dt).round() as usize
    }

    pub fn samples_per_chain(&self, dt: f64) -> usize {
        let span = self.total_steps(dt).saturating_sub(self.burn_steps(dt));
        span / self.stride + 1
    }
}

/// Time averages of the recorded functionals with batch-means errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub burn_in: f64,
    pub horizon: f64,
    pub stride: usize,
    pub dt: f64,
    pub chains: usize,
    pub batches: usize,
    pub samples: usize,
    pub names: Vec<String>,
    pub estimates: Vec<MeanSe>,
    pub tail_levels: Vec<f64>,
    /// Fraction of samples with finite `∫j(u)` and `∫j*(β⁰(u))`.
    pub support_fraction: f64,
    #[serde(skip)]
    pub retained: Vec<FieldState>,
    battery_start: usize,
}

impl EmpiricalMeasure {
    pub fn get(&self, name: &str) -> Option<MeanSe> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }

    /// Estimates of the battery functionals, in [`Battery::names`] order.
    pub fn battery(&self) -> &[MeanSe] {
        &self.estimates[self.battery_start..]
    }

    pub fn battery_names(&self) -> &[String] {
        &self.names[self.battery_start..]
    }

    pub fn tail_name(level: f64) -> String {
        format!("tail_v_gt_{level}")
    }
}

fn functional_names(cfg: &EmConfig, battery: &Battery) -> (Vec<String>, usize) {
    let mut names: Vec<String> = ["norm_h2", "norm_v2", "j_int", "jstar_int", "energy_sum"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(cfg.tail_levels.iter().map(|&l| EmpiricalMeasure::tail_name(l)));
    let start = names.len();
    names.extend(battery.names());
    (names, start)
}

struct ChainOutput {
    batch_means: Vec<Vec<f64>>,
    finite: usize,
    samples: usize,
    retained: Vec<FieldState>,
}

fn sample_functionals(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    battery: &Battery,
    levels: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) -> Result<bool> {
    let h = space.h();
    let h2 = space.norm_h_sq(x);
    let v2 = space.norm_v_sq(x);
    let mut j = 0.0;
    let mut js = 0.0;
    for &u in x {
        j += graph.potential_unchecked(u);
        js += graph.conjugate(graph.minimal_section(u)?)?;
    }
    j *= h;
    js *= h;
    out.clear();
    out.extend([h2, v2, j, js, space.c_coercivity() * v2 + j + js]);
    let v = v2.sqrt();
    out.extend(levels.iter().map(|&l| if v > l { 1.0 } else { 0.0 }));
    battery.eval_into(space, x, out);
    Ok(j.is_finite() && js.is_finite())
}

/// Long-run time averages of the functionals after `burn_in`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_invariant(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    em_cfg: &EmConfig,
    seed: u64,
    exec: &Executor,
) -> Result<EmpiricalMeasure> {
    em_cfg.validate(cfg.dt)?;
    if x0.len() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            got: x0.len(),
        });
    }
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    let battery = Battery::new(space);
    let (names, battery_start) = functional_names(em_cfg, &battery);
    let nf = names.len();
    let dt = cfg.dt;
    let burn = em_cfg.burn_steps(dt);
    let total = em_cfg.total_steps(dt);
    let per_chain = em_cfg.samples_per_chain(dt);
    let batches = em_cfg.batches;
    let batch_size = per_chain / batches;
    let retain_per_chain = em_cfg.retain.div_ceil(em_cfg.chains);
    let retain_every = per_chain.checked_div(retain_per_chain).map_or(usize::MAX, |k| k.max(1));

    let chains = exec.try_map(em_cfg.chains, |c| -> Result<ChainOutput> {
        let mut r = rng::stream(seed, rng::domain::INVARIANT, c as u64);
        let mut ws = stepper.workspace();
        let mut x = x0.to_vec();
        let mut sums = vec![vec![0.0; batches]; nf];
        let mut vals = Vec::with_capacity(nf);
        let mut finite = 0;
        let mut k = 0;
        let mut retained = Vec::new();
        for m in 0..=total {
            if m > 0 {
                stepper.step(&mut x, &mut r, &mut ws).map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteState { step: m },
                    other => other,
                })?;
            }
            if m < burn || !(m - burn).is_multiple_of(em_cfg.stride) {
                continue;
            }
            if sample_functionals(space, graph, &battery, &em_cfg.tail_levels, &x, &mut vals)? {
                finite += 1;
            }
            let b = k / batch_size;
            if b < batches {
                for (s, v) in sums.iter_mut().zip(&vals) {
                    s[b] += v;
                }
            }
            if k % retain_every == 0 && retained.len() < retain_per_chain {
                retained.push(FieldState::from_vec(x.clone()));
            }
            k += 1;
        }
        for s in sums.iter_mut() {
            s.iter_mut().for_each(|v| *v /= batch_size as f64);
        }
        Ok(ChainOutput {
            batch_means: sums,
            finite,
            samples: k,
            retained,
        })
    })?;

    let mut estimates = Vec::with_capacity(nf);
    for f in 0..nf {
        let all: Vec<f64> = chains.iter().flat_map(|c| c.batch_means[f].iter().copied()).collect();
        estimates.push(MeanSe::new(mean(&all), (variance(&all) / all.len() as f64).sqrt()));
    }
    let samples: usize = chains.iter().map(|c| c.samples).sum();
    let finite: usize = chains.iter().map(|c| c.finite).sum();
    let mut retained: Vec<FieldState> = chains.into_iter().flat_map(|c| c.retained).collect();
    retained.truncate(em_cfg.retain);
    Ok(EmpiricalMeasure {
        burn_in: em_cfg.burn_in,
        horizon: em_cfg.horizon,
        stride: em_cfg.stride,
        dt,
        chains: em_cfg.chains,
        batches,
        samples,
        names,
        estimates,
        tail_levels: em_cfg.tail_levels.clone(),
        support_fraction: finite as f64 / samples as f64,
        retained,
        battery_start,
    })
}

/// Constants entering the moment bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c: f64,
    pub k: f64,
    pub c0: f64,
}

impl BoundConstants {
    pub fn new(space: &TripleSpace, noise: &NoiseModel) -> Result<Self> {
        let (c, c0) = noise.coercivity_constants(space)?;
        Ok(Self {
            c,
            k: space.k_embed(),
            c0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub functional: String,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    /// `bound + 3·SE - estimate`
    pub slack: f64,
    pub pass: bool,
}

impl BoundRow {
    fn new(functional: String, est: MeanSe, bound: f64, z: f64) -> Self {
        let slack = bound + z * est.se - est.mean;
        Self {
            functional,
            estimate: est.mean,
            se: est.se,
            bound,
            slack,
            pass: slack >= 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub support_fraction: f64,
}

impl BoundReport {
    pub fn support_pass(&self) -> bool {
        self.support_fraction == 1.0
    }

    pub fn passed(&self) -> bool {
        self.support_pass() && self.rows.iter().all(|r| r.pass)
    }
}

/// Second-moment, energy and tail bounds for the estimated measure.
pub fn check_moment_bounds(em: &EmpiricalMeasure, k: &BoundConstants) -> BoundReport {
    const Z: f64 = 3.0;
    let get = |name: &str| em.get(name).unwrap_or(MeanSe::new(f64::NAN, f64::NAN));
    let mut rows = vec![
        BoundRow::new("norm_h2".into(), get("norm_h2"), k.k * k.k * k.c0 / k.c, Z),
        BoundRow::new(
            "energy_sum".into(),
            get("energy_sum"),
            k.k * k.k * k.c0 / (2.0 * k.c) + k.c0,
            Z,
        ),
    ];
    for &l in &em.tail_levels {
        let name = EmpiricalMeasure::tail_name(l);
        rows.push(BoundRow::new(name.clone(), get(&name), k.c0 / (k.c * l * l), Z));
    }
    // NaN estimates compare false above; make sure they fail
    for r in rows.iter_mut() {
        r.pass &= r.estimate.is_finite();
    }
    BoundReport {
        rows,
        support_fraction: em.support_fraction,
    }
}

/// Difference between two estimates of the same functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub se: f64,
    pub pass: bool,
}

/// Compare every shared functional of `a` and `b` at `z` combined SEs.
pub fn compare_estimates(a: &EmpiricalMeasure, b: &EmpiricalMeasure, z: f64) -> Vec<Comparison> {
    a.names
        .iter()
        .zip(&a.estimates)
        .filter_map(|(name, ea)| {
            let eb = b.get(name)?;
            let se = combined_se(ea.se, eb.se);
            Some(Comparison {
                name: name.clone(),
                a: ea.mean,
                b: eb.mean,
                se,
                pass: (ea.mean - eb.mean).abs() <= z * se,
            })
        })
        .collect()
}

/// Stationarity check: from each retained sample `x_i` run the chain for time
/// `s` and compare the battery at `X_s` with the battery at `x_i`. Under the
/// invariant measure both averages agree; the comparison is paired.
pub fn invariance_proxy(
    stepper: &Stepper,
    em: &EmpiricalMeasure,
    s: f64,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<Comparison>> {
    if em.retained.is_empty() {
        return Err(Error::EmptySamples);
    }
    let space = stepper.space();
    let battery = Battery::new(space);
    let steps = (s / stepper.dt()).round() as usize;
    let per = exec.try_map(em.retained.len(), |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut r = rng::stream(seed, rng::domain::INVARIANCE, i as u64);
        let mut ws = stepper.workspace();
        let start = &em.retained[i];
        let mut x = start.to_vec();
        for _ in 0..steps {
            stepper.step(&mut x, &mut r, &mut ws)?;
        }
        Ok((battery.eval(space, start), battery.eval(space, &x)))
    })?;
    Ok(battery
        .names()
        .into_iter()
        .enumerate()
        .map(|(f, name)| {
            let before: Vec<f64> = per.iter().map(|p| p.0[f]).collect();
            let after: Vec<f64> = per.iter().map(|p| p.1[f]).collect();
            let diff: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
            let d = mean_se(&diff);
            Comparison {
                name,
                a: mean(&after),
                b: mean(&before),
                se: d.se,
                pass: d.mean.abs() <= 3.0 * d.se,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg() -> EmConfig {
        EmConfig {
            burn_in: 1.0,
            horizon: 5.0,
            stride: 5,
            batches: 8,
            chains: 1,
            retain: 10,
            tail_levels: vec![1.0, 2.0],
        }
    }

    #[test]
    fn noiseless_mass_collapses_to_zero() {
        let space = TripleSpace::new(16, 1.0).unwrap();
        let cfg = SchemeConfig::new(1e-2, 5.0).unwrap();
        let x0 = space.eigenmode(1);
        let em = estimate_invariant(
            &space,
            &MonotoneGraph::cubic(),
            &NoiseModel::zero(),
            &cfg,
            &x0,
            &short_cfg(),
            1,
            &Executor::sequential(),
        )
        .unwrap();
        assert!(em.get("norm_h2").unwrap().mean < 1e-6);
        assert_eq!(em.support_fraction, 1.0);
        let k = BoundConstants::new(&space, &NoiseModel::zero()).unwrap();
        let report = check_moment_bounds(&em, &k);
        assert!(report.passed());
        assert_eq!(em.retained.len(), 10);
    }

    #[test]
    fn rejects_too_few_batches() {
        let mut c = short_cfg();
        c.batches = 4;
        assert!(c.validate(1e-2).is_err());
    }

    #[test]
    fn chains_are_thread_independent() {
        let space = TripleSpace::new(8, 1.0).unwrap();
        let noise = NoiseModel::additive(0.5, 1.0, 4).unwrap();
        let cfg = SchemeConfig::new(1e-2, 5.0).unwrap();
        let mut em_cfg = short_cfg();
        em_cfg.chains = 3;
        let x0 = FieldState::zeros(8);
        let run = |exec: &Executor| {
            estimate_invariant(&space, &MonotoneGraph::cubic(), &noise, &cfg, &x0, &em_cfg, 9, exec).unwrap()
        };
        let a = run(&Executor::sequential());
        let b = run(&Executor::with_threads(3));
        assert_eq!(a.estimates, b.estimates);
    }
}
