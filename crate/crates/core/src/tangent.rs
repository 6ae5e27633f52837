//! First and second variations of the mollified scheme along a frozen path.
//!
//! One step of the scheme is `X_{m+1} = L R(X_m + ΔW_m)` with
//! `L = (I + dt A)^{-1}` and the nodewise map `R = (I + dt f)^{-1}`, so its
//! derivatives are, with `r = R'(Ŷ) = 1/(1 + dt f'(X*))`,
//!
//! ```text
//! Y_{m+1} = L (r Y_m)
//! Z_{m+1} = L r (Z_m - dt f''(X*) r² Y_{h,m} Y_{k,m})
//! ```
//!
//! These are the exact derivatives of the discrete map, so finite differences
//! of the scheme converge to them as ε → 0 at fixed dt.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Stepper;
use crate::monotone::MollifiedDrift;
use crate::rng;
use crate::space::{FieldState, ShiftedSolver, TripleSpace};

static NEXT_PATH_ID: AtomicU64 = AtomicU64::new(1);

/// Per-step coefficients `r = R'` and `q = dt f''(X*) r²` at the frozen state.
#[derive(Clone, Debug)]
pub struct StepCoefficients {
    r: Vec<f64>,
    q: Vec<f64>,
    min_slope: f64,
}

impl StepCoefficients {
    pub fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            q: vec![0.0; n],
            min_slope: f64::INFINITY,
        }
    }

    /// Fill the coefficients for one step from the drift-resolvent output.
    #[inline]
    pub fn update(&mut self, drift: &MollifiedDrift, dt: f64, xstar: &[f64]) {
        self.min_slope = f64::INFINITY;
        for (i, &x) in xstar.iter().enumerate() {
            let (_, d1, d2) = drift.eval3(x);
            let r = 1.0 / (1.0 + dt * d1);
            self.r[i] = r;
            self.q[i] = dt * d2 * r * r;
            self.min_slope = self.min_slope.min(d1);
        }
    }

    /// Smallest `f'(X*)` seen in the last update.
    pub fn min_slope(&self) -> f64 {
        self.min_slope
    }

    /// `y ← L (r y)`.
    #[inline]
    pub fn first(&self, solver: &ShiftedSolver, y: &mut [f64]) {
        self.scale_first(y);
        solver.solve_in_place(y);
    }

    /// `y ← r y`, the part of [`first`](Self::first) before the solve.
    #[inline]
    pub fn scale_first(&self, y: &mut [f64]) {
        for (v, r) in y.iter_mut().zip(&self.r) {
            *v *= r;
        }
    }

    /// `z ← L r (z - q yh yk)`; `yh`, `yk` are the values before their own
    /// update.
    #[inline]
    pub fn second(&self, solver: &ShiftedSolver, yh: &[f64], yk: &[f64], z: &mut [f64]) {
        self.scale_second(yh, yk, z);
        solver.solve_in_place(z);
    }

    /// `z ← r (z - q yh yk)`, the part of [`second`](Self::second) before
    /// the solve.
    #[inline]
    pub fn scale_second(&self, yh: &[f64], yk: &[f64], z: &mut [f64]) {
        for i in 0..z.len() {
            z[i] = self.r[i] * (z[i] - self.q[i] * (yh[i] * yk[i]));
        }
    }
}

/// The drift-resolvent outputs `X*_m` of one mollified path.
#[derive(Clone, Debug)]
pub struct FrozenPath {
    id: u64,
    space: TripleSpace,
    drift: Arc<MollifiedDrift>,
    solver: ShiftedSolver,
    dt: f64,
    steps: usize,
    xstar: Vec<f64>,
    final_state: FieldState,
    min_slope: f64,
}

impl FrozenPath {
    /// Run `steps` steps from `x0`, each increment the sum of `substeps`
    /// draws, and keep the intermediate states.
    pub fn record<R: Rng + ?Sized>(
        stepper: &Stepper,
        x0: &FieldState,
        steps: usize,
        substeps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let drift = match stepper.drift() {
            crate::integrator::Drift::Mollified(m) => m.clone(),
            _ => {
                return Err(Error::Unsupported(
                    "variations need a path of the mollified dynamics".into(),
                ))
            }
        };
        if !stepper.noise().is_additive() {
            return Err(Error::Unsupported("variations need additive noise".into()));
        }
        let space = stepper.space();
        check_len(space, x0)?;
        let n = space.n();
        let mut ws = stepper.workspace();
        let mut x = x0.to_vec();
        let mut xstar = Vec::with_capacity(steps * n);
        let mut min_slope = f64::INFINITY;
        for m in 0..steps {
            stepper.draw_increment(substeps, rng, &mut ws);
            stepper.advance(&mut x, &mut ws).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteState { step: m + 1 },
                other => other,
            })?;
            for &v in &ws.xstar {
                min_slope = min_slope.min(drift.derivative(v));
            }
            xstar.extend_from_slice(&ws.xstar);
        }
        Ok(Self {
            id: NEXT_PATH_ID.fetch_add(1, Ordering::Relaxed),
            space: space.clone(),
            drift,
            solver: space.shifted_solver(stepper.dt())?,
            dt: stepper.dt(),
            steps,
            xstar,
            final_state: FieldState::from_vec(x),
            min_slope,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn space(&self) -> &TripleSpace {
        &self.space
    }

    pub fn drift(&self) -> &MollifiedDrift {
        &self.drift
    }

    pub fn xstar(&self, m: usize) -> &[f64] {
        let n = self.space.n();
        &self.xstar[m * n..(m + 1) * n]
    }

    pub fn final_state(&self) -> &FieldState {
        &self.final_state
    }

    /// Smallest `f'(X*_m)` along the path; nonnegative up to roundoff for a
    /// monotone drift.
    pub fn min_slope(&self) -> f64 {
        self.min_slope
    }
}

fn check_len(space: &TripleSpace, u: &[f64]) -> Result<()> {
    if u.len() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            got: u.len(),
        });
    }
    Ok(())
}

/// A variation trajectory `Y_0..Y_M` (or `Z_0..Z_M`) with its norms.
#[derive(Clone, Debug)]
pub struct VariationPath {
    path_id: u64,
    pub states: Vec<Vec<f64>>,
    /// `sup_m ‖Y_m‖_H`
    pub sup_h: f64,
    /// `sup_m ‖Y_m‖_{L¹}`
    pub sup_l1: f64,
    /// `Σ dt ‖Y_m‖²_V`
    pub v_int: f64,
}

impl VariationPath {
    fn new(path: &FrozenPath) -> Self {
        Self {
            path_id: path.id,
            states: Vec::with_capacity(path.steps + 1),
            sup_h: 0.0,
            sup_l1: 0.0,
            v_int: 0.0,
        }
    }

    fn push(&mut self, space: &TripleSpace, dt: f64, y: &[f64], last: bool) {
        self.sup_h = self.sup_h.max(space.norm_h(y));
        self.sup_l1 = self.sup_l1.max(space.norm_l1(y));
        if !last {
            self.v_int += dt * space.norm_v_sq(y);
        }
        self.states.push(y.to_vec());
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("at least the initial state")
    }
}

/// `Y_h` along the frozen path.
pub fn solve_first_variation(path: &FrozenPath, h: &[f64]) -> Result<VariationPath> {
    let space = &path.space;
    check_len(space, h)?;
    let mut coef = StepCoefficients::new(space.n());
    let mut out = VariationPath::new(path);
    let mut y = h.to_vec();
    out.push(space, path.dt, &y, path.steps == 0);
    for m in 0..path.steps {
        coef.update(&path.drift, path.dt, path.xstar(m));
        coef.first(&path.solver, &mut y);
        out.push(space, path.dt, &y, m + 1 == path.steps);
    }
    Ok(out)
}

/// `Z_hk` along the frozen path from the first variations `Y_h`, `Y_k`.
pub fn solve_second_variation(path: &FrozenPath, yh: &VariationPath, yk: &VariationPath) -> Result<VariationPath> {
    for y in [yh, yk] {
        if y.path_id != path.id || y.states.len() != path.steps + 1 {
            return Err(Error::InvalidParameter(
                "first variations were computed on a different path".into(),
            ));
        }
    }
    let space = &path.space;
    let mut coef = StepCoefficients::new(space.n());
    let mut out = VariationPath::new(path);
    let mut z = vec![0.0; space.n()];
    out.push(space, path.dt, &z, path.steps == 0);
    for m in 0..path.steps {
        coef.update(&path.drift, path.dt, path.xstar(m));
        coef.second(&path.solver, &yh.states[m], &yk.states[m], &mut z);
        out.push(space, path.dt, &z, m + 1 == path.steps);
    }
    Ok(out)
}

/// The same first variation by the exponential integrator
/// `Y_{m+1} = S(dt)(Y_m - dt f'(X*_m) Y_m)`, `S(t) = e^{-tA}` applied through
/// the eigenbasis; this is the left-endpoint quadrature of the mild form.
/// Returns `sup_m ‖Y_var - Y_mild‖_H`.
pub fn crosscheck_variational_mild(path: &FrozenPath, h: &[f64]) -> Result<f64> {
    let space = &path.space;
    check_len(space, h)?;
    let n = space.n();
    let dt = path.dt;
    // S(dt)_{ij} = Σ_k e^{-λ_k dt} e_k(i) e_k(j) h
    let modes: Vec<Vec<f64>> = (1..=n).map(|k| space.eigenmode_vec(k)).collect();
    let decay: Vec<f64> = (1..=n).map(|k| (-space.eigenvalue(k) * dt).exp()).collect();
    let var = solve_first_variation(path, h)?;
    let mut y = h.to_vec();
    let mut coef = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let mut diff = vec![0.0; n];
    for m in 0..path.steps {
        for (v, &x) in y.iter_mut().zip(path.xstar(m)) {
            *v -= dt * path.drift.derivative(x) * *v;
        }
        for (c, (e, d)) in coef.iter_mut().zip(modes.iter().zip(&decay)) {
            *c = d * space.inner(&y, e);
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for (c, e) in coef.iter().zip(&modes) {
            for (v, ei) in y.iter_mut().zip(e) {
                *v += c * ei;
            }
        }
        for i in 0..n {
            diff[i] = y[i] - var.states[m + 1][i];
        }
        worst = worst.max(space.norm_h(&diff));
    }
    Ok(worst)
}

/// One row of a check table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(name: impl Into<String>, bound: f64, observed: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            bound,
            observed,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub trials: usize,
    pub h_violations: usize,
    pub l1_violations: usize,
    /// `max sup_m ‖Z_m‖ / (‖h‖‖k‖)`
    pub m_second: f64,
    /// `max_m ‖Y_m‖ / ((1 ∨ t_m^{-1/2}) ‖h‖_{V'})`
    pub m_prime: f64,
    pub min_slope: f64,
    pub rows: Vec<CheckRow>,
}

/// Relative slack for the exact contraction checks.
pub const CONTRACTION_TOL: f64 = 1e-12;
/// Accepted smoothing constant.
pub const SMOOTHING_BOUND: f64 = 2.0;

/// Random direction with i.i.d. normal nodal values.
pub fn random_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Contraction, second-variation and smoothing estimates over random
/// direction pairs.
pub fn verify_prop_estimates(path: &FrozenPath, trials: usize, seed: u64) -> Result<EstimateReport> {
    let space = &path.space;
    let n = space.n();
    let mut r = rng::stream(seed, rng::domain::DIRECTIONS, 0);
    let mut rep = EstimateReport {
        trials,
        h_violations: 0,
        l1_violations: 0,
        m_second: 0.0,
        m_prime: 0.0,
        min_slope: path.min_slope,
        rows: Vec::new(),
    };
    for _ in 0..trials {
        let h = random_direction(n, &mut r);
        let k = random_direction(n, &mut r);
        let yh = solve_first_variation(path, &h)?;
        let yk = solve_first_variation(path, &k)?;
        let (nh, nk) = (space.norm_h(&h), space.norm_h(&k));
        for (y, d) in [(&yh, &h), (&yk, &k)] {
            if y.sup_h > space.norm_h(d) * (1.0 + CONTRACTION_TOL) {
                rep.h_violations += 1;
            }
            if y.sup_l1 > space.norm_l1(d) * (1.0 + CONTRACTION_TOL) {
                rep.l1_violations += 1;
            }
            rep.m_prime = rep.m_prime.max(smoothing_ratio(space, path.dt, y, d));
        }
        let z = solve_second_variation(path, &yh, &yk)?;
        rep.m_second = rep.m_second.max(z.sup_h / (nh * nk));
    }
    let total = 2 * trials;
    rep.rows = vec![
        CheckRow::new("h_contraction_violations", 0.0, rep.h_violations as f64, rep.h_violations == 0),
        CheckRow::new("l1_contraction_violations", 0.0, rep.l1_violations as f64, rep.l1_violations == 0),
        CheckRow::new("second_variation_m", f64::INFINITY, rep.m_second, rep.m_second.is_finite()),
        CheckRow::new("smoothing_m_prime", SMOOTHING_BOUND, rep.m_prime, rep.m_prime <= SMOOTHING_BOUND),
        CheckRow::new("min_drift_slope", -1e-12, rep.min_slope, rep.min_slope >= -1e-12),
        CheckRow::new("directions", total as f64, total as f64, true),
    ];
    Ok(rep)
}

/// `max_{m ≥ 1} ‖Y_m‖_H / ((1 ∨ t_m^{-1/2}) ‖h‖_{V'})`.
pub fn smoothing_ratio(space: &TripleSpace, dt: f64, y: &VariationPath, h: &[f64]) -> f64 {
    let dual = space.norm_vdual(h);
    if dual == 0.0 {
        return 0.0;
    }
    y.states
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, ym)| {
            let t = m as f64 * dt;
            space.norm_h(ym) / (t.powf(-0.5).max(1.0) * dual)
        })
        .fold(0.0, f64::max)
}

/// Errors of a finite-difference quotient against the variation, per ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdTable {
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
}

impl FdTable {
    /// `log10(err(ε_i)/err(ε_{i+1})) / log10(ε_i/ε_{i+1})` for consecutive rungs.
    pub fn orders(&self) -> Vec<f64> {
        self.eps
            .windows(2)
            .zip(self.errors.windows(2))
            .map(|(e, r)| (r[0] / r[1]).log10() / (e[0] / e[1]).log10())
            .collect()
    }

    /// Every observed order lies in `[lo, hi]`.
    pub fn first_order(&self, lo: f64, hi: f64) -> bool {
        let o = self.orders();
        !o.is_empty() && o.iter().all(|v| *v >= lo && *v <= hi)
    }
}

fn run_final(stepper: &Stepper, x0: &[f64], steps: usize, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, rng::domain::TANGENT, 0);
    let mut ws = stepper.workspace();
    let mut x = x0.to_vec();
    for _ in 0..steps {
        stepper.step(&mut x, &mut r, &mut ws)?;
    }
    Ok(x)
}

fn frozen(stepper: &Stepper, x0: &[f64], steps: usize, seed: u64) -> Result<FrozenPath> {
    let mut r = rng::stream(seed, rng::domain::TANGENT, 0);
    FrozenPath::record(stepper, &FieldState::from_vec(x0.to_vec()), steps, 1, &mut r)
}

fn axpy(x: &[f64], a: f64, h: &[f64]) -> Vec<f64> {
    x.iter().zip(h).map(|(u, v)| u + a * v).collect()
}

/// `‖(X^{x+εh}_M - X^x_M)/ε - Y_M‖_H` on a common noise path.
pub fn fd_first_variation(
    stepper: &Stepper,
    x0: &[f64],
    h: &[f64],
    steps: usize,
    seed: u64,
    eps: &[f64],
) -> Result<FdTable> {
    let path = frozen(stepper, x0, steps, seed)?;
    let y = solve_first_variation(&path, h)?;
    let base = path.final_state.to_vec();
    let space = stepper.space();
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let xe = run_final(stepper, &axpy(x0, e, h), steps, seed)?;
        let d: Vec<f64> = (0..xe.len()).map(|i| (xe[i] - base[i]) / e - y.last()[i]).collect();
        errors.push(space.norm_h(&d));
    }
    Ok(FdTable {
        eps: eps.to_vec(),
        errors,
    })
}

/// `‖(X^{x+εh+εk} - X^{x+εh} - X^{x+εk} + X^x)/ε² - Z_M‖_H` on a common noise
/// path.
pub fn fd_second_variation(
    stepper: &Stepper,
    x0: &[f64],
    h: &[f64],
    k: &[f64],
    steps: usize,
    seed: u64,
    eps: &[f64],
) -> Result<FdTable> {
    let path = frozen(stepper, x0, steps, seed)?;
    let yh = solve_first_variation(&path, h)?;
    let yk = solve_first_variation(&path, k)?;
    let z = solve_second_variation(&path, &yh, &yk)?;
    let base = path.final_state.to_vec();
    let space = stepper.space();
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let xhk = run_final(stepper, &axpy(&axpy(x0, e, h), e, k), steps, seed)?;
        let xh = run_final(stepper, &axpy(x0, e, h), steps, seed)?;
        let xk = run_final(stepper, &axpy(x0, e, k), steps, seed)?;
        let d: Vec<f64> = (0..base.len())
            .map(|i| (xhk[i] - xh[i] - xk[i] + base[i]) / (e * e) - z.last()[i])
            .collect();
        errors.push(space.norm_h(&d));
    }
    Ok(FdTable {
        eps: eps.to_vec(),
        errors,
    })
}
