//! Time stepping for `dX + AX dt + β(X) dt ∋ B dW`.
//!
//! The default scheme is a Lie splitting with exact sub-resolvents:
//!
//! ```text
//! Ŷ       = X_m + B ΔW_m
//! X*_i    = (I + dt β)^{-1} Ŷ_i,        ξ_i = (Ŷ_i - X*_i) / dt ∈ β(X*_i)
//! X_{m+1} = (I + dt A)^{-1} X*
//! ```
//!
//! Both maps are nonexpansive in `H`, order preserving and fix `0`, which is
//! what the contraction and positivity checks downstream rely on.

mod ito;

pub use ito::{
    energy_estimate, ito_refinement, verify_ito_general, verify_ito_square, EnergyEstimate, IdentityOptions,
    IdentityReport, ItoFunctional, RefinementReport, ScalarTest,
};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::{MollifiedDrift, MonotoneGraph, RegularizedDrift};
use crate::noise::{NoiseBasis, NoiseModel};
use crate::space::{FieldState, ShiftedSolver, TripleSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeMode {
    LieSplitting,
    FullImplicit,
}

/// Which nonlinearity the scheme integrates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriftForm {
    /// The graph itself (possibly multivalued).
    GraphExact,
    /// Yosida approximation `β_λ`.
    Yosida { lambda: f64 },
    /// Mollified Yosida approximation `β_{λn}`.
    Mollified { lambda: f64, n: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub mode: SchemeMode,
    pub newton_tol: f64,
    pub drift_form: DriftForm,
    /// Save every `save_stride` steps; `0` keeps only accumulated functionals.
    pub save_stride: usize,
}

impl SchemeConfig {
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            mode: SchemeMode::LieSplitting,
            newton_tol: 1e-12,
            drift_form: DriftForm::GraphExact,
            save_stride: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_drift(mut self, drift_form: DriftForm) -> Self {
        self.drift_form = drift_form;
        self
    }

    pub fn with_mode(mut self, mode: SchemeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_save_stride(mut self, stride: usize) -> Self {
        self.save_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be finite and at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter("newton_tol must be positive".into()));
        }
        match self.drift_form {
            DriftForm::GraphExact => {}
            DriftForm::Yosida { lambda } => RegularizedDrift::new(lambda, 1).map(|_| ())?,
            DriftForm::Mollified { lambda, n } => RegularizedDrift::new(lambda, n).map(|_| ())?,
        }
        Ok(())
    }

    /// Number of steps to reach the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// The nonlinearity as seen by the scheme.
#[derive(Clone, Debug)]
pub enum Drift {
    Graph(MonotoneGraph),
    Yosida(MonotoneGraph, f64),
    Mollified(Arc<MollifiedDrift>),
}

impl Drift {
    pub fn build(graph: &MonotoneGraph, form: DriftForm) -> Result<Self> {
        Ok(match form {
            DriftForm::GraphExact => Drift::Graph(graph.clone()),
            DriftForm::Yosida { lambda } => {
                RegularizedDrift::new(lambda, 1)?;
                Drift::Yosida(graph.clone(), lambda)
            }
            DriftForm::Mollified { lambda, n } => {
                Drift::Mollified(Arc::new(MollifiedDrift::new(graph, RegularizedDrift::new(lambda, n)?)?))
            }
        })
    }

    pub fn graph(&self) -> &MonotoneGraph {
        match self {
            Drift::Graph(g) | Drift::Yosida(g, _) => g,
            Drift::Mollified(m) => m.graph(),
        }
    }

    pub fn mollified(&self) -> Option<&MollifiedDrift> {
        match self {
            Drift::Mollified(m) => Some(m),
            _ => None,
        }
    }

    /// Whether the drift is a single-valued function.
    pub fn is_function(&self) -> bool {
        match self {
            Drift::Graph(g) => g.is_function(),
            _ => true,
        }
    }

    /// `(I + μ f)^{-1} y` for the drift `f`.
    #[inline]
    pub fn resolvent(&self, mu: f64, y: f64) -> Result<f64> {
        match self {
            Drift::Graph(g) => g.resolvent_unchecked(mu, y),
            // (I + μβ_λ)^{-1} = λ/(λ+μ) I + μ/(λ+μ) J_{λ+μ}
            Drift::Yosida(g, lambda) => {
                let s = lambda + mu;
                Ok((lambda * y + mu * g.resolvent_unchecked(s, y)?) / s)
            }
            Drift::Mollified(m) => m.resolvent(mu, y),
        }
    }

    /// Drift value; the minimal section for a graph.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Drift::Graph(g) => g.value(x),
            Drift::Yosida(g, lambda) => g.yosida_unchecked(*lambda, x).unwrap_or(f64::NAN),
            Drift::Mollified(m) => m.value(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Drift::Graph(g) => g.derivative(x),
            Drift::Yosida(g, lambda) => g.yosida_with_slope(*lambda, x).map_or(f64::NAN, |p| p.1),
            Drift::Mollified(m) => m.derivative(x),
        }
    }
}

/// Scratch buffers for one path.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub coeffs: Vec<f64>,
    pub dw: Vec<f64>,
    pub xstar: Vec<f64>,
    pub xi: Vec<f64>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
    delta: Vec<f64>,
    cp: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize, modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; modes],
            dw: vec![0.0; n],
            xstar: vec![0.0; n],
            xi: vec![0.0; n],
            rhs: vec![0.0; n],
            diag: vec![0.0; n],
            delta: vec![0.0; n],
            cp: vec![0.0; n],
        }
    }
}

/// A configured scheme: space, drift, noise and the factorized `I + dt A`.
#[derive(Clone, Debug)]
pub struct Stepper {
    space: TripleSpace,
    noise: NoiseModel,
    basis: NoiseBasis,
    drift: Drift,
    solver: ShiftedSolver,
    dt: f64,
    mode: SchemeMode,
    newton_tol: f64,
}

impl Stepper {
    pub fn new(space: &TripleSpace, graph: &MonotoneGraph, noise: &NoiseModel, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let drift = Drift::build(graph, cfg.drift_form)?;
        Self::with_drift(space, drift, noise, cfg)
    }

    /// Reuse an already built drift (mollified tables are not free).
    pub fn with_drift(space: &TripleSpace, drift: Drift, noise: &NoiseModel, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        noise.validate(space)?;
        if cfg.mode == SchemeMode::FullImplicit && !drift.is_function() {
            return Err(Error::Unsupported(
                "the fully implicit scheme needs a single-valued drift".into(),
            ));
        }
        Ok(Self {
            space: space.clone(),
            noise: noise.clone(),
            basis: NoiseBasis::new(noise, space)?,
            solver: space.shifted_solver(cfg.dt)?,
            drift,
            dt: cfg.dt,
            mode: cfg.mode,
            newton_tol: cfg.newton_tol,
        })
    }

    /// Same scheme with a different time step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let mut out = self.clone();
        out.solver = self.space.shifted_solver(dt)?;
        out.dt = dt;
        Ok(out)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn space(&self) -> &TripleSpace {
        &self.space
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn mode(&self) -> SchemeMode {
        self.mode
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.space.n(), self.noise.modes)
    }

    /// Draw the additive increment `B ΔW` over one step into `ws.dw`, as the
    /// sum of `substeps` sub-increments.
    #[inline]
    pub fn draw_increment<R: Rng + ?Sized>(&self, substeps: usize, rng: &mut R, ws: &mut Workspace) {
        self.noise.draw_coeffs(self.dt, substeps, rng, &mut ws.coeffs);
        self.basis.synthesize(&ws.coeffs, &mut ws.dw);
    }

    /// Advance `x` by one step with the increment already in `ws.dw`.
    /// Afterwards `ws.xstar` holds the drift-resolvent output and `ws.xi`
    /// the selection. Multiplicative noise scales `ws.dw` in place.
    pub fn advance(&self, x: &mut [f64], ws: &mut Workspace) -> Result<()> {
        if !self.noise.is_additive() {
            let s = self.noise.sigma(self.space.norm_h(x));
            ws.dw.iter_mut().for_each(|v| *v *= s);
        }
        let dt = self.dt;
        if let Drift::Mollified(m) = &self.drift {
            for i in 0..x.len() {
                ws.xi[i] = x[i] + ws.dw[i];
            }
            m.resolvent_batch(dt, &ws.xi, &mut ws.xstar)?;
            for i in 0..x.len() {
                ws.xi[i] = (ws.xi[i] - ws.xstar[i]) / dt;
                x[i] = ws.xstar[i];
            }
        } else {
            for i in 0..x.len() {
                let y = x[i] + ws.dw[i];
                let xs = self.drift.resolvent(dt, y)?;
                ws.xstar[i] = xs;
                ws.xi[i] = (y - xs) / dt;
                x[i] = xs;
            }
        }
        self.solver.solve_in_place(x);
        if self.mode == SchemeMode::FullImplicit {
            self.implicit_correction(x, ws)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    /// Draw and advance.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R, ws: &mut Workspace) -> Result<()> {
        self.draw_increment(1, rng, ws);
        self.advance(x, ws)
    }

    /// Solve `X + dt A X + dt f(X) = Ŷ` by Newton, starting from the
    /// splitting result in `x`. Sets `xstar = X` and `xi = f(X)`.
    fn implicit_correction(&self, x: &mut [f64], ws: &mut Workspace) -> Result<()> {
        let n = x.len();
        let dt = self.dt;
        let s = self.space.diffusivity() / (self.space.h() * self.space.h());
        // Ŷ = X* + dt ξ
        for i in 0..n {
            ws.rhs[i] = ws.xstar[i] + dt * ws.xi[i];
        }
        let scale = ws.rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut history = Vec::new();
        for _ in 0..50 {
            let mut res_max: f64 = 0.0;
            for i in 0..n {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                let r = x[i] + dt * s * (2.0 * x[i] - left - right) + dt * self.drift.value(x[i]) - ws.rhs[i];
                ws.delta[i] = r;
                ws.diag[i] = 1.0 + 2.0 * dt * s + dt * self.drift.derivative(x[i]);
                res_max = res_max.max(r.abs());
            }
            history.push(res_max);
            if !res_max.is_finite() {
                break;
            }
            if res_max <= self.newton_tol * scale {
                for i in 0..n {
                    ws.xstar[i] = x[i];
                    ws.xi[i] = self.drift.value(x[i]);
                }
                return Ok(());
            }
            solve_tridiagonal(&ws.diag, dt * s, &mut ws.delta, &mut ws.cp);
            for i in 0..n {
                x[i] -= ws.delta[i];
            }
        }
        Err(Error::NewtonDiverged(history))
    }

    /// Run `steps` steps from `x0`, recording functionals.
    pub fn simulate<R: Rng + ?Sized>(&self, x0: &FieldState, steps: usize, save_stride: usize, rng: &mut R) -> Result<PathOutput> {
        if x0.len() != self.space.n() {
            return Err(Error::DimensionMismatch {
                expected: self.space.n(),
                got: x0.len(),
            });
        }
        let graph = self.drift.graph().clone();
        let space = &self.space;
        let h = space.h();
        let dt = self.dt;
        let mut ws = self.workspace();
        let mut x = x0.to_vec();
        let mut out = PathOutput::default();
        let spatial_j = |u: &[f64]| h * u.iter().map(|&v| graph.potential_unchecked(v)).sum::<f64>();
        let spatial_jstar = |u: &[f64]| -> Result<f64> {
            let mut acc = 0.0;
            for &v in u {
                acc += graph.conjugate(v)?;
            }
            Ok(h * acc)
        };
        let xi0: Vec<f64> = x.iter().map(|&v| graph.minimal_section(v)).collect::<Result<_>>()?;
        let save = |out: &mut PathOutput, t: f64, x: &[f64], xi: &[f64]| -> Result<()> {
            out.records.push(PathRecord {
                t,
                norm_h2: space.norm_h_sq(x),
                norm_v2: space.norm_v_sq(x),
                j_int: spatial_j(x),
                jstar_int: spatial_jstar(xi)?,
            });
            out.times.push(t);
            out.states.push(FieldState::from_vec(x.to_vec()));
            out.xis.push(FieldState::from_vec(xi.to_vec()));
            Ok(())
        };
        if save_stride > 0 {
            save(&mut out, 0.0, &x, &xi0)?;
        }
        let mut q = Quadratics::default();
        for m in 0..steps {
            let v2 = space.norm_v_sq(&x);
            q.energy_int += dt * space.energy(&x);
            q.v_int += dt * v2;
            q.j_int += dt * spatial_j(&x);
            self.step(&mut x, rng, &mut ws).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteState { step: m + 1 },
                other => other,
            })?;
            q.jstar_int += dt * spatial_jstar(&ws.xi)?;
            if save_stride > 0 && (m + 1) % save_stride == 0 {
                save(&mut out, (m + 1) as f64 * dt, &x, &ws.xi)?;
            }
        }
        out.quadratics = q;
        out.final_state = FieldState::from_vec(x);
        Ok(out)
    }
}

/// Solve `T δ = r` in place for the symmetric tridiagonal `T` with diagonal
/// `diag` and off-diagonal `-off`.
fn solve_tridiagonal(diag: &[f64], off: f64, r: &mut [f64], cp: &mut [f64]) {
    let n = r.len();
    let mut prev_c = 0.0;
    let mut prev_d = 0.0;
    for i in 0..n {
        let pivot = diag[i] - off * prev_c;
        prev_c = off / pivot;
        prev_d = (r[i] + off * prev_d) / pivot;
        cp[i] = prev_c;
        r[i] = prev_d;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        r[i] += cp[i] * r[i + 1];
    }
}

/// Time integrals accumulated with left-endpoint quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quadratics {
    /// `∫⟨AX, X⟩ dt`
    pub energy_int: f64,
    /// `∫‖X‖²_V dt`
    pub v_int: f64,
    /// `∫∫_D j(X) dx dt`
    pub j_int: f64,
    /// `∫∫_D j*(ξ) dx dt`
    pub jstar_int: f64,
}

/// One row of the per-path record: instantaneous functionals at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub t: f64,
    pub norm_h2: f64,
    pub norm_v2: f64,
    /// `∫_D j(X(t))`
    pub j_int: f64,
    /// `∫_D j*(ξ(t))`
    pub jstar_int: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathOutput {
    pub times: Vec<f64>,
    pub states: Vec<FieldState>,
    pub xis: Vec<FieldState>,
    pub records: Vec<PathRecord>,
    pub final_state: FieldState,
    pub quadratics: Quadratics,
}

impl Default for FieldState {
    fn default() -> Self {
        FieldState::zeros(0)
    }
}

/// One step from `x_m`; returns `(X_{m+1}, ξ_{m+1})`.
pub fn step<R: Rng + ?Sized>(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x_m: &FieldState,
    rng: &mut R,
) -> Result<(FieldState, FieldState)> {
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    if x_m.len() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            got: x_m.len(),
        });
    }
    let mut ws = stepper.workspace();
    let mut x = x_m.to_vec();
    stepper.step(&mut x, rng, &mut ws)?;
    Ok((FieldState::from_vec(x), FieldState::from_vec(ws.xi)))
}

/// Iterate [`step`] up to the configured horizon.
pub fn simulate<R: Rng + ?Sized>(
    space: &TripleSpace,
    graph: &MonotoneGraph,
    noise: &NoiseModel,
    cfg: &SchemeConfig,
    x0: &FieldState,
    rng: &mut R,
) -> Result<PathOutput> {
    let stepper = Stepper::new(space, graph, noise, cfg)?;
    stepper.simulate(x0, cfg.steps(), cfg.save_stride, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn linear_flow_on_eigenvector() {
        let space = TripleSpace::new(15, 1.0).unwrap();
        let cfg = SchemeConfig::new(1e-2, 0.2).unwrap();
        let e1 = space.eigenmode(1);
        let mut r = rng::stream(0, rng::domain::PATH, 0);
        let out = simulate(&space, &MonotoneGraph::zero(), &NoiseModel::zero(), &cfg, &e1, &mut r).unwrap();
        let factor = (1.0 + 1e-2 * space.lambda_min()).powi(-20);
        for (a, b) in out.final_state.iter().zip(e1.iter()) {
            assert!((a - factor * b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_implicit_solves_the_implicit_equation() {
        let space = TripleSpace::new(20, 1.0).unwrap();
        let noise = NoiseModel::additive(0.5, 1.0, 8).unwrap();
        let cfg = SchemeConfig::new(1e-2, 1e-2)
            .unwrap()
            .with_mode(SchemeMode::FullImplicit)
            .with_drift(DriftForm::Yosida { lambda: 0.1 });
        let stepper = Stepper::new(&space, &MonotoneGraph::cubic(), &noise, &cfg).unwrap();
        let mut ws = stepper.workspace();
        let mut r = rng::stream(4, rng::domain::PATH, 0);
        let x0: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = x0.clone();
        stepper.step(&mut x, &mut r, &mut ws).unwrap();
        let mut ax = vec![0.0; 20];
        space.apply_a_into(&x, &mut ax);
        for i in 0..20 {
            let lhs = x[i] + 1e-2 * ax[i] + 1e-2 * stepper.drift().value(x[i]);
            assert!((lhs - (x0[i] + ws.dw[i])).abs() < 1e-11);
        }
    }
}
