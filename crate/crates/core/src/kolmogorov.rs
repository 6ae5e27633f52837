//! Monte Carlo resolvent of the regularized Kolmogorov operator.
//!
//! For the mollified dynamics `X = X^x_{λn}` and a cylindrical test function
//! `g`, the resolvent
//!
//! ```text
//! v(x) = E ∫_0^∞ e^{-αt} g(X(t)) dt
//! ```
//!
//! is estimated path by path together with its first and second derivatives,
//! obtained by pairing `Dg`, `D²g` with the variation flows carried along each
//! path. The residual of `αv + L₀v = g`, with
//! `L₀v = -½ Σ b_k² D²v(e_k, e_k) + ⟨Ax + β_{λn}(x), Dv⟩`, is then assembled
//! from the same paths so its standard error is propagated exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::integrator::{Drift, DriftForm, SchemeConfig, Stepper};
use crate::measure::EmpiricalMeasure;
use crate::monotone::{MollifiedDrift, MonotoneGraph};
use crate::noise::NoiseModel;
use crate::rng;
use crate::space::{FieldState, ShiftedSolver, TripleSpace};
use crate::stats::{combined_se, mean_se, MeanSe};
use crate::tangent::StepCoefficients;

/// Discarded tail budget: `e^{-α T_max}`.
pub const TAIL_BUDGET: f64 = 1e-6;
/// Noise modes with `b_k²` below this are left out of the trace.
pub const TRACE_THRESHOLD: f64 = 1e-10;

/// Integration horizon with `e^{-α T_max} = TAIL_BUDGET`.
pub fn truncation_horizon(alpha: f64) -> f64 {
    -TAIL_BUDGET.ln() / alpha
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `Π tanh(p_i)`
    ProductTanh,
    /// `Π cos(p_i)`
    ProductCos,
    /// `exp(-|p|²/2)`
    GaussianBump,
    /// The constant `c`; uses no modes.
    Constant(f64),
}

/// `g(x) = φ(⟨x, e_{k_1}⟩, …, ⟨x, e_{k_m}⟩)`.
#[derive(Clone, Debug)]
pub struct TestFunction {
    profile: Profile,
    modes: Vec<usize>,
    basis: Vec<Vec<f64>>,
    h: f64,
}

/// `g`, its gradient in the mode coordinates and the Hessian (row-major).
#[derive(Clone, Debug, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl TestFunction {
    pub fn new(space: &TripleSpace, profile: Profile, modes: &[usize]) -> Result<Self> {
        let modes = match profile {
            Profile::Constant(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidParameter("constant test function must be finite".into()));
                }
                Vec::new()
            }
            _ => {
                if modes.is_empty() {
                    return Err(Error::InvalidParameter("test function needs at least one mode".into()));
                }
                modes.to_vec()
            }
        };
        if let Some(&k) = modes.iter().find(|&&k| k == 0 || k > space.n()) {
            return Err(Error::InvalidParameter(format!("mode {k} outside 1..={}", space.n())));
        }
        Ok(Self {
            profile,
            basis: modes.iter().map(|&k| space.eigenmode_vec(k)).collect(),
            modes,
            h: space.h(),
        })
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn name(&self) -> String {
        let m: Vec<String> = self.modes.iter().map(|k| k.to_string()).collect();
        match self.profile {
            Profile::ProductTanh => format!("tanh[{}]", m.join(",")),
            Profile::ProductCos => format!("cos[{}]", m.join(",")),
            Profile::GaussianBump => format!("bump[{}]", m.join(",")),
            Profile::Constant(c) => format!("const({c})"),
        }
    }

    /// `⟨u, e_{k_i}⟩_H` for each mode.
    #[inline]
    pub fn project(&self, u: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.basis) {
            *o = self.h * u.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut jet = Jet::default();
        self.jet(x, &mut jet);
        jet.value
    }

    /// Fill `jet` at `x`.
    pub fn jet(&self, x: &[f64], jet: &mut Jet) {
        let m = self.modes.len();
        let mut p = vec![0.0; m];
        self.project(x, &mut p);
        jet.grad.clear();
        jet.grad.resize(m, 0.0);
        jet.hess.clear();
        jet.hess.resize(m * m, 0.0);
        match self.profile {
            Profile::Constant(c) => jet.value = c,
            Profile::GaussianBump => {
                let phi = (-0.5 * p.iter().map(|v| v * v).sum::<f64>()).exp();
                jet.value = phi;
                for i in 0..m {
                    jet.grad[i] = -p[i] * phi;
                    for j in 0..m {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        jet.hess[i * m + j] = (p[i] * p[j] - delta) * phi;
                    }
                }
            }
            Profile::ProductTanh | Profile::ProductCos => {
                let f: Vec<(f64, f64, f64)> = p
                    .iter()
                    .map(|&v| match self.profile {
                        Profile::ProductTanh => {
                            let t = v.tanh();
                            let s = 1.0 - t * t;
                            (t, s, -2.0 * t * s)
                        }
                        _ => (v.cos(), -v.sin(), -v.cos()),
                    })
                    .collect();
                let prod_except = |skip: &[usize]| -> f64 {
                    (0..m).filter(|l| !skip.contains(l)).map(|l| f[l].0).product()
                };
                jet.value = prod_except(&[]);
                for i in 0..m {
                    jet.grad[i] = f[i].1 * prod_except(&[i]);
                    for j in 0..m {
                        jet.hess[i * m + j] = if i == j {
                            f[i].2 * prod_except(&[i])
                        } else {
                            f[i].1 * f[j].1 * prod_except(&[i, j])
                        };
                    }
                }
            }
        }
    }

    /// `Dg(x)·y` from the jet and the projections of `y`.
    #[inline]
    pub fn dg(jet: &Jet, py: &[f64]) -> f64 {
        jet.grad.iter().zip(py).map(|(g, p)| g * p).sum()
    }

    /// `D²g(x)(y, z)` from the jet and the projections of `y`, `z`.
    #[inline]
    pub fn d2g(jet: &Jet, py: &[f64], pz: &[f64]) -> f64 {
        let m = py.len();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += jet.hess[i * m + j] * py[i] * pz[j];
            }
        }
        acc
    }

    /// `‖g‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self.profile {
            Profile::Constant(c) => c.abs(),
            _ => 1.0,
        }
    }

    /// `max_i sup |∂_i φ|`.
    pub fn dphi_sup(&self) -> f64 {
        match self.profile {
            Profile::Constant(_) => 0.0,
            Profile::GaussianBump => (-0.5f64).exp(),
            _ => 1.0,
        }
    }

    /// Bound on `sup_x ‖Dg(x)‖_{L^∞}`: `Σ_i sup|∂_i φ| ‖e_{k_i}‖_∞`.
    pub fn dg_linf_bound(&self) -> f64 {
        self.basis
            .iter()
            .map(|e| self.dphi_sup() * e.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum()
    }
}

/// Directions along which `Dv` is estimated and index pairs for `D²v`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Probes {
    pub directions: Vec<(String, Vec<f64>)>,
    pub pairs: Vec<(usize, usize)>,
}

/// How the drift term `⟨Ax + β_{λn}(x), Dv⟩` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeMode {
    /// A single probe along `w = Ax + β_{λn}(x)`.
    DriftDirection,
    /// `Dv` reconstructed on the grid from probes along all `N` eigenvectors.
    FullGradient,
}

/// Noise modes `k` with `b_k² ≥ TRACE_THRESHOLD`, and the discarded `Σ b_k²`.
pub fn active_modes(noise: &NoiseModel) -> (Vec<usize>, f64) {
    let mut active = Vec::new();
    let mut tail = 0.0;
    for (i, b) in noise.mode_coeffs().iter().enumerate() {
        if b * b >= TRACE_THRESHOLD {
            active.push(i + 1);
        } else {
            tail += b * b;
        }
    }
    (active, tail)
}

fn label(k: usize) -> String {
    format!("e{k}")
}

const DRIFT_LABEL: &str = "drift";

impl Probes {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn push_direction(&mut self, name: impl Into<String>, h: Vec<f64>) -> usize {
        self.directions.push((name.into(), h));
        self.directions.len() - 1
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.directions.iter().position(|(n, _)| n == name)
    }

    /// Probes needed by [`residual_l0`] at `x`.
    pub fn for_residual(
        space: &TripleSpace,
        noise: &NoiseModel,
        drift: &MollifiedDrift,
        x: &[f64],
        mode: ProbeMode,
    ) -> Self {
        let mut p = Probes::none();
        let (active, _) = active_modes(noise);
        match mode {
            ProbeMode::DriftDirection => {
                p.push_direction(DRIFT_LABEL, drift_direction(space, drift, x));
                for &k in &active {
                    p.push_direction(label(k), space.eigenmode_vec(k));
                }
            }
            ProbeMode::FullGradient => {
                for k in 1..=space.n() {
                    p.push_direction(label(k), space.eigenmode_vec(k));
                }
            }
        }
        for &k in &active {
            let i = p.index(&label(k)).expect("pushed above");
            p.pairs.push((i, i));
        }
        p
    }
}

/// `Ax + β_{λn}(x)` on the grid.
pub fn drift_direction(space: &TripleSpace, drift: &MollifiedDrift, x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    space.apply_a_into(x, &mut w);
    for (wi, &xi) in w.iter_mut().zip(x) {
        *wi += drift.value(xi);
    }
    w
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolventEstimate {
    pub x: FieldState,
    pub alpha: f64,
    pub t_max: f64,
    pub dt: f64,
    pub lambda: f64,
    pub n: u32,
    pub n_paths: usize,
    pub v: MeanSe,
    pub dv: Vec<(String, MeanSe)>,
    /// `(h, k, D²v(h, k))`
    pub d2v: Vec<(String, String, MeanSe)>,
    /// Per path: `[v, Dv..., D²v...]`.
    #[serde(skip)]
    pub per_path: Vec<Vec<f64>>,
}

impl ResolventEstimate {
    pub fn dv(&self, name: &str) -> Option<MeanSe> {
        self.dv.iter().find(|(n, _)| n == name).map(|p| p.1)
    }

    pub fn d2v(&self, h: &str, k: &str) -> Option<MeanSe> {
        self.d2v.iter().find(|(a, b, _)| a == h && b == k).map(|p| p.2)
    }

    fn dv_index(&self, name: &str) -> Option<usize> {
        self.dv.iter().position(|(n, _)| n == name).map(|i| 1 + i)
    }

    fn d2v_index(&self, h: &str, k: &str) -> Option<usize> {
        self.d2v
            .iter()
            .position(|(a, b, _)| a == h && b == k)
            .map(|i| 1 + self.dv.len() + i)
    }

    /// `|v̂| ≤ ‖g‖_∞/α + 3·SE`.
    pub fn contraction_holds(&self, tf: &TestFunction) -> bool {
        self.v.mean.abs() <= tf.sup_norm() / self.alpha + 3.0 * self.v.se
    }
}

/// Scheme for the regularized dynamics used by the resolvent estimates.
#[derive(Clone, Debug)]
pub struct KolmogorovSetup {
    stepper: Stepper,
    drift: std::sync::Arc<MollifiedDrift>,
    solver: ShiftedSolver,
}

impl KolmogorovSetup {
    pub fn new(space: &TripleSpace, graph: &MonotoneGraph, noise: &NoiseModel, cfg: &SchemeConfig) -> Result<Self> {
        if !noise.is_additive() {
            return Err(Error::Unsupported("the Kolmogorov resolvent needs additive noise".into()));
        }
        if !matches!(cfg.drift_form, DriftForm::Mollified { .. }) {
            return Err(Error::Unsupported(
                "the Kolmogorov resolvent needs the mollified drift".into(),
            ));
        }
        let stepper = Stepper::new(space, graph, noise, cfg)?;
        Self::from_stepper(stepper)
    }

    pub fn from_stepper(stepper: Stepper) -> Result<Self> {
        let drift = match stepper.drift() {
            Drift::Mollified(m) => m.clone(),
            _ => return Err(Error::Unsupported("the Kolmogorov resolvent needs the mollified drift".into())),
        };
        if !stepper.noise().is_additive() {
            return Err(Error::Unsupported("the Kolmogorov resolvent needs additive noise".into()));
        }
        let solver = stepper.space().shifted_solver(stepper.dt())?;
        Ok(Self { stepper, drift, solver })
    }

    pub fn space(&self) -> &TripleSpace {
        self.stepper.space()
    }

    pub fn noise(&self) -> &NoiseModel {
        self.stepper.noise()
    }

    pub fn drift(&self) -> &MollifiedDrift {
        &self.drift
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    /// `v`, `Dv` along the probe directions and `D²v` on the probe pairs.
    /// Path `p` always uses stream `p`, so estimates at different points share
    /// their noise.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate(
        &self,
        tf: &TestFunction,
        x: &FieldState,
        alpha: f64,
        probes: &Probes,
        n_paths: usize,
        seed: u64,
        exec: &Executor,
    ) -> Result<ResolventEstimate> {
        let space = self.space();
        if x.len() != space.n() {
            return Err(Error::DimensionMismatch {
                expected: space.n(),
                got: x.len(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if n_paths < 2 {
            return Err(Error::InvalidParameter("need at least two paths".into()));
        }
        for (name, h) in &probes.directions {
            if h.len() != space.n() {
                return Err(Error::InvalidParameter(format!("probe {name} has the wrong length")));
            }
        }
        if probes.pairs.iter().any(|&(a, b)| a >= probes.directions.len() || b >= probes.directions.len()) {
            return Err(Error::InvalidParameter("probe pair refers to a missing direction".into()));
        }
        let dt = self.dt();
        let t_max = truncation_horizon(alpha);
        let steps = (t_max / dt).ceil() as usize;
        let per_path = exec.try_map(n_paths, |p| self.one_path(tf, x, alpha, probes, steps, seed, p as u64))?;
        let column = |c: usize| mean_se(&per_path.iter().map(|r| r[c]).collect::<Vec<_>>());
        let nd = probes.directions.len();
        let dv = probes
            .directions
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.clone(), column(1 + i)))
            .collect();
        let d2v = probes
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                (
                    probes.directions[a].0.clone(),
                    probes.directions[b].0.clone(),
                    column(1 + nd + i),
                )
            })
            .collect();
        Ok(ResolventEstimate {
            x: x.clone(),
            alpha,
            t_max,
            dt,
            lambda: self.drift.lambda(),
            n: self.drift.n(),
            n_paths,
            v: column(0),
            dv,
            d2v,
            per_path,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn one_path(
        &self,
        tf: &TestFunction,
        x0: &[f64],
        alpha: f64,
        probes: &Probes,
        steps: usize,
        seed: u64,
        index: u64,
    ) -> Result<Vec<f64>> {
        let n = x0.len();
        let m = tf.modes().len();
        let dt = self.dt();
        let mut r = rng::stream(seed, rng::domain::KOLMOGOROV, index);
        let mut ws = self.stepper.workspace();
        let mut coef = StepCoefficients::new(n);
        let mut x = x0.to_vec();
        let mut ys: Vec<Vec<f64>> = probes.directions.iter().map(|(_, h)| h.clone()).collect();
        let mut zs: Vec<Vec<f64>> = vec![vec![0.0; n]; probes.pairs.len()];
        let mut py = vec![vec![0.0; m]; ys.len()];
        let mut pz = vec![0.0; m];
        let mut jet = Jet::default();
        let nd = ys.len();
        let mut acc = vec![0.0; 1 + nd + zs.len()];
        let decay = (-alpha * dt).exp();
        let mut weight = dt;
        for step in 0..steps {
            tf.jet(&x, &mut jet);
            acc[0] += weight * jet.value;
            if m > 0 {
                for (y, p) in ys.iter().zip(py.iter_mut()) {
                    tf.project(y, p);
                }
                for d in 0..nd {
                    acc[1 + d] += weight * TestFunction::dg(&jet, &py[d]);
                }
                for (i, &(a, b)) in probes.pairs.iter().enumerate() {
                    tf.project(&zs[i], &mut pz);
                    acc[1 + nd + i] +=
                        weight * (TestFunction::d2g(&jet, &py[a], &py[b]) + TestFunction::dg(&jet, &pz));
                }
            }
            self.stepper.step(&mut x, &mut r, &mut ws).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteState { step: step + 1 },
                other => other,
            })?;
            if nd > 0 {
                coef.update(&self.drift, dt, &ws.xstar);
                for (i, &(a, b)) in probes.pairs.iter().enumerate() {
                    coef.scale_second(&ys[a], &ys[b], &mut zs[i]);
                }
                for y in ys.iter_mut() {
                    coef.scale_first(y);
                }
                self.solver.solve_columns(&mut ys);
                self.solver.solve_columns(&mut zs);
            }
            weight *= decay;
        }
        Ok(acc)
    }

    /// `v` only.
    pub fn estimate_v(
        &self,
        tf: &TestFunction,
        x: &FieldState,
        alpha: f64,
        n_paths: usize,
        seed: u64,
        exec: &Executor,
    ) -> Result<ResolventEstimate> {
        self.estimate(tf, x, alpha, &Probes::none(), n_paths, seed, exec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// `α v̂ + L̂₀ v̂ - g(x)`
    pub residual: MeanSe,
    /// `L̂₀ v̂`
    pub l0v: MeanSe,
    /// `Σ b_k²` over the modes left out of the trace.
    pub trace_tail: f64,
}

/// Residual of `αv + L₀v = g` at the estimate's point.
pub fn residual_l0(
    space: &TripleSpace,
    noise: &NoiseModel,
    drift: &MollifiedDrift,
    tf: &TestFunction,
    est: &ResolventEstimate,
    mode: ProbeMode,
) -> Result<Residual> {
    let (active, trace_tail) = active_modes(noise);
    let b = noise.mode_coeffs();
    let mut missing = Vec::new();
    let mut trace_cols = Vec::new();
    for &k in &active {
        match est.d2v_index(&label(k), &label(k)) {
            Some(c) => trace_cols.push((b[k - 1] * b[k - 1], c)),
            None => missing.push(format!("D2v({0},{0})", label(k))),
        }
    }
    let w = drift_direction(space, drift, &est.x);
    // (column, weight) pairs whose weighted sum is ⟨w, Dv⟩
    let mut drift_cols = Vec::new();
    match mode {
        ProbeMode::DriftDirection => match est.dv_index(DRIFT_LABEL) {
            Some(c) => drift_cols.push((c, 1.0)),
            None => missing.push(format!("Dv({DRIFT_LABEL})")),
        },
        ProbeMode::FullGradient => {
            for k in 1..=space.n() {
                match est.dv_index(&label(k)) {
                    Some(c) => drift_cols.push((c, space.inner(&w, &space.eigenmode_vec(k)))),
                    None => missing.push(format!("Dv({})", label(k))),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingProbes(missing));
    }
    let g = tf.value(&est.x);
    let mut l0 = Vec::with_capacity(est.per_path.len());
    let mut res = Vec::with_capacity(est.per_path.len());
    for row in &est.per_path {
        let trace: f64 = trace_cols.iter().map(|&(b2, c)| b2 * row[c]).sum();
        let drift_term: f64 = drift_cols.iter().map(|&(c, wt)| wt * row[c]).sum();
        let l = -0.5 * trace + drift_term;
        l0.push(l);
        res.push(est.alpha * row[0] + l - g);
    }
    Ok(Residual {
        residual: mean_se(&res),
        l0v: mean_se(&l0),
        trace_tail,
    })
}

/// Check of `|Dv(x)h| ≤ (1/α) sup‖Dg‖_{L^∞} ‖h‖_{L¹}` on every probed direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Check {
    /// `max_h α|D̂v(x)h| / ‖h‖_{L¹}`
    pub observed_constant: f64,
    pub bound_constant: f64,
    pub pass: bool,
}

pub fn c1_bound_check(space: &TripleSpace, tf: &TestFunction, est: &ResolventEstimate, probes: &Probes) -> C1Check {
    let bound = tf.dg_linf_bound();
    let mut observed: f64 = 0.0;
    let mut pass = true;
    for ((_, h), (_, dv)) in probes.directions.iter().zip(&est.dv) {
        let l1 = space.norm_l1(h);
        if l1 == 0.0 {
            continue;
        }
        observed = observed.max(est.alpha * dv.mean.abs() / l1);
        pass &= dv.mean.abs() <= bound * l1 / est.alpha + 3.0 * dv.se;
    }
    C1Check {
        observed_constant: observed,
        bound_constant: bound,
        pass,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub lambda: f64,
    pub n: u32,
    pub gap: f64,
    pub se: f64,
    /// `max α|D̂v(x_i) d_i| / ‖d_i‖_{L¹}` over the samples.
    pub c1_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub lambdas: Vec<f64>,
    pub ns: Vec<u32>,
    /// Row-major in `(λ, n)`.
    pub rows: Vec<GapRow>,
}

/// One comparison in a monotonicity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub from: (f64, u32),
    pub to: (f64, u32),
    pub increase: f64,
    pub allowance: f64,
    pub pass: bool,
}

impl GapTable {
    pub fn cell(&self, li: usize, ni: usize) -> &GapRow {
        &self.rows[li * self.ns.len() + ni]
    }

    fn compare(a: &GapRow, b: &GapRow, z: f64) -> TrendCheck {
        let allowance = z * combined_se(a.se, b.se);
        let increase = b.gap - a.gap;
        TrendCheck {
            from: (a.lambda, a.n),
            to: (b.lambda, b.n),
            increase,
            allowance,
            pass: increase <= allowance,
        }
    }

    /// Nonincreasing in `n` at every fixed `λ` (n listed ascending).
    pub fn trend_in_n(&self, z: f64) -> Vec<TrendCheck> {
        let mut out = Vec::new();
        for li in 0..self.lambdas.len() {
            for ni in 1..self.ns.len() {
                out.push(Self::compare(self.cell(li, ni - 1), self.cell(li, ni), z));
            }
        }
        out
    }

    /// Nonincreasing as `λ` decreases at the largest `n` (λ listed descending).
    pub fn trend_in_lambda(&self, z: f64) -> Vec<TrendCheck> {
        let last = self.ns.len() - 1;
        (1..self.lambdas.len())
            .map(|li| Self::compare(self.cell(li - 1, last), self.cell(li, last), z))
            .collect()
    }

    /// Largest C¹ constant over all cells.
    pub fn uniform_c1_constant(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.c1_constant))
    }
}

/// Settings for [`drift_replacement_gap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub alpha: f64,
    pub samples: usize,
    pub paths: usize,
    pub dt: f64,
}

/// `∫ |⟨β_{λn}(x) - β⁰(x), Dv_{λn}(x)⟩| μ(dx)` over a grid of `(λ, n)`,
/// averaging over retained samples of `em`. All cells use the same samples and
/// the same noise streams.
#[allow(clippy::too_many_arguments)]
pub fn drift_replacement_gap(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    em: &EmpiricalMeasure,
    tf: &TestFunction,
    lambdas: &[f64],
    ns: &[u32],
    cfg: &GapConfig,
    seed: u64,
    exec: &Executor,
) -> Result<GapTable> {
    if em.retained.is_empty() || cfg.samples == 0 {
        return Err(Error::EmptySamples);
    }
    if lambdas.is_empty() || ns.is_empty() {
        return Err(Error::InvalidParameter("gap table needs at least one λ and one n".into()));
    }
    let stride = (em.retained.len() / cfg.samples).max(1);
    let samples: Vec<&FieldState> = em.retained.iter().step_by(stride).take(cfg.samples).collect();
    let mut rows = Vec::with_capacity(lambdas.len() * ns.len());
    for &lambda in lambdas {
        for &n in ns {
            let scheme = SchemeConfig::new(cfg.dt, cfg.dt)?.with_drift(DriftForm::Mollified { lambda, n });
            let setup = KolmogorovSetup::new(space, graph, noise, &scheme)?;
            let mut gaps = Vec::with_capacity(samples.len());
            let mut c1: f64 = 0.0;
            for (i, x) in samples.iter().enumerate() {
                let mut d = vec![0.0; space.n()];
                for (di, &xi) in d.iter_mut().zip(x.iter()) {
                    *di = setup.drift().value(xi) - graph.minimal_section(xi)?;
                }
                let l1 = space.norm_l1(&d);
                let mut probes = Probes::none();
                probes.push_direction("gap", d);
                let est = setup.estimate(
                    tf,
                    x,
                    cfg.alpha,
                    &probes,
                    cfg.paths,
                    seed.wrapping_add(i as u64),
                    exec,
                )?;
                let dv = est.dv[0].1.mean;
                gaps.push(dv.abs());
                if l1 > 0.0 {
                    c1 = c1.max(cfg.alpha * dv.abs() / l1);
                }
            }
            let g = mean_se(&gaps);
            rows.push(GapRow {
                lambda,
                n,
                gap: g.mean,
                se: g.se,
                c1_constant: c1,
            });
        }
    }
    Ok(GapTable {
        lambdas: lambdas.to_vec(),
        ns: ns.to_vec(),
        rows,
    })
}

/// `|α v̂(x) - g(x)|` along a ladder of `α`; shrinks as `α → ∞`.
pub fn alpha_ladder(
    setup: &KolmogorovSetup,
    tf: &TestFunction,
    x: &FieldState,
    alphas: &[f64],
    n_paths: usize,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<(f64, MeanSe)>> {
    let g = tf.value(x);
    alphas
        .iter()
        .map(|&a| {
            let est = setup.estimate_v(tf, x, a, n_paths, seed, exec)?;
            let dev: Vec<f64> = est.per_path.iter().map(|r| a * r[0] - g).collect();
            let d = mean_se(&dev);
            Ok((a, MeanSe::new(d.mean.abs(), d.se)))
        })
        .collect()
}

/// Mean of `α v̂` implied by a constant test function, for reference.
pub fn constant_resolvent(c: f64, alpha: f64, dt: f64) -> f64 {
    // left-endpoint sum of the discounted constant up to the horizon
    let steps = (truncation_horizon(alpha) / dt).ceil() as usize;
    let q = (-alpha * dt).exp();
    c * dt * (1.0 - q.powi(steps as i32)) / (1.0 - q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(graph: &MonotoneGraph, noise: &NoiseModel, n: usize, dt: f64) -> KolmogorovSetup {
        let space = TripleSpace::new(n, 1.0).unwrap();
        let cfg = SchemeConfig::new(dt, dt)
            .unwrap()
            .with_drift(DriftForm::Mollified { lambda: 0.1, n: 8 });
        KolmogorovSetup::new(&space, graph, noise, &cfg).unwrap()
    }

    #[test]
    fn jets_match_finite_differences() {
        let space = TripleSpace::new(12, 1.0).unwrap();
        let x: Vec<f64> = (0..12).map(|i| 0.3 * (i as f64).sin()).collect();
        let h: Vec<f64> = (0..12).map(|i| (0.7 * i as f64).cos()).collect();
        for profile in [Profile::ProductTanh, Profile::ProductCos, Profile::GaussianBump] {
            let tf = TestFunction::new(&space, profile, &[1, 2, 3]).unwrap();
            let mut jet = Jet::default();
            tf.jet(&x, &mut jet);
            let mut ph = vec![0.0; 3];
            tf.project(&h, &mut ph);
            let e = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + e * b).collect();
            let xm: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a - e * b).collect();
            let fd1 = (tf.value(&xp) - tf.value(&xm)) / (2.0 * e);
            let fd2 = (tf.value(&xp) - 2.0 * tf.value(&x) + tf.value(&xm)) / (e * e);
            assert!((fd1 - TestFunction::dg(&jet, &ph)).abs() < 1e-8, "{profile:?}");
            assert!((fd2 - TestFunction::d2g(&jet, &ph, &ph)).abs() < 1e-4, "{profile:?}");
        }
    }

    #[test]
    fn constant_function_resolvent() {
        let s = setup(&MonotoneGraph::cubic(), &NoiseModel::additive(0.5, 1.0, 4).unwrap(), 8, 1e-2);
        let tf = TestFunction::new(s.space(), Profile::Constant(2.0), &[]).unwrap();
        let x = FieldState::zeros(8);
        let probes = Probes::for_residual(s.space(), s.noise(), s.drift(), &x, ProbeMode::DriftDirection);
        let est = s.estimate(&tf, &x, 1.0, &probes, 4, 0, &Executor::sequential()).unwrap();
        assert_eq!(est.v.se, 0.0);
        assert!((est.v.mean - constant_resolvent(2.0, 1.0, 1e-2)).abs() < 1e-12);
        // left-endpoint bias c·α·dt/2
        assert!((est.v.mean - 2.0).abs() < 2e-2);
        assert!(est.dv.iter().all(|(_, d)| d.mean == 0.0));
        let r = residual_l0(s.space(), s.noise(), s.drift(), &tf, &est, ProbeMode::DriftDirection).unwrap();
        assert!(r.residual.mean.abs() < 2e-2);
    }

    #[test]
    fn missing_probes_are_listed() {
        let s = setup(&MonotoneGraph::cubic(), &NoiseModel::additive(0.5, 1.0, 2).unwrap(), 8, 1e-2);
        let tf = TestFunction::new(s.space(), Profile::ProductCos, &[1]).unwrap();
        let x = FieldState::zeros(8);
        let est = s.estimate_v(&tf, &x, 4.0, 2, 0, &Executor::sequential()).unwrap();
        match residual_l0(s.space(), s.noise(), s.drift(), &tf, &est, ProbeMode::DriftDirection) {
            Err(Error::MissingProbes(m)) => assert_eq!(m.len(), 3),
            other => panic!("expected missing probes, got {other:?}"),
        }
    }

    #[test]
    fn drift_probe_equals_full_reconstruction() {
        let s = setup(&MonotoneGraph::cubic(), &NoiseModel::additive(0.5, 1.0, 2).unwrap(), 8, 2e-2);
        let tf = TestFunction::new(s.space(), Profile::ProductCos, &[1]).unwrap();
        let x = s.space().eigenmode(1).scaled(0.7);
        let exec = Executor::sequential();
        let mut probes = Probes::for_residual(s.space(), s.noise(), s.drift(), &x, ProbeMode::FullGradient);
        let w = drift_direction(s.space(), s.drift(), &x);
        probes.push_direction(DRIFT_LABEL, w);
        let est = s.estimate(&tf, &x, 4.0, &probes, 8, 1, &exec).unwrap();
        let a = residual_l0(s.space(), s.noise(), s.drift(), &tf, &est, ProbeMode::DriftDirection).unwrap();
        let b = residual_l0(s.space(), s.noise(), s.drift(), &tf, &est, ProbeMode::FullGradient).unwrap();
        assert!((a.residual.mean - b.residual.mean).abs() < 1e-10);
    }

    #[test]
    fn zero_drift_has_zero_gap() {
        let space = TripleSpace::new(8, 1.0).unwrap();
        let noise = NoiseModel::additive(0.5, 1.0, 2).unwrap();
        let mut em = crate::measure::estimate_invariant(
            &space,
            &MonotoneGraph::zero(),
            &noise,
            &SchemeConfig::new(1e-2, 4.0).unwrap(),
            &FieldState::zeros(8),
            &crate::measure::EmConfig {
                burn_in: 1.0,
                horizon: 4.0,
                stride: 5,
                batches: 8,
                chains: 1,
                retain: 4,
                tail_levels: vec![1.0],
            },
            0,
            &Executor::sequential(),
        )
        .unwrap();
        let tf = TestFunction::new(&space, Profile::ProductCos, &[1]).unwrap();
        let cfg = GapConfig {
            alpha: 4.0,
            samples: 2,
            paths: 2,
            dt: 2e-2,
        };
        let table = drift_replacement_gap(
            &space,
            &MonotoneGraph::zero(),
            &noise,
            &em,
            &tf,
            &[0.1],
            &[2, 4],
            &cfg,
            0,
            &Executor::sequential(),
        )
        .unwrap();
        assert!(table.rows.iter().all(|r| r.gap == 0.0 && r.se == 0.0));
        em.retained.clear();
        assert!(drift_replacement_gap(
            &space,
            &MonotoneGraph::zero(),
            &noise,
            &em,
            &tf,
            &[0.1],
            &[2],
            &cfg,
            0,
            &Executor::sequential()
        )
        .is_err());
    }
}
