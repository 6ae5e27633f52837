use monotone_spde::integrator::{energy_estimate, ito_refinement, verify_ito_square, IdentityOptions, IdentityReport, ItoFunctional};
use monotone_spde::integrator::{SchemeConfig, Stepper};
use monotone_spde::kolmogorov::{
    c1_bound_check, drift_replacement_gap, residual_l0, GapConfig, KolmogorovSetup, Probes, TestFunction,
    TAIL_BUDGET,
};
use monotone_spde::measure::mixing_experiment;
use monotone_spde::measure::{
    check_moment_bounds, compare_estimates, estimate_invariant, invariance_proxy, BoundConstants, EmConfig,
    EmpiricalMeasure,
};
use monotone_spde::monotone::{symmetry_certificate, SymmetryOutcome};
use monotone_spde::tangent::{
    crosscheck_variational_mild, fd_first_variation, fd_second_variation, random_direction, verify_prop_estimates,
    FdTable, FrozenPath,
};
use monotone_spde::{rng, Executor, FieldState, MonotoneGraph, TripleSpace};
use serde_json::json;

use crate::output::{checks_csv, Check, Csv};
use crate::{CliError, Outcome, RunConfig};

/// Random inputs for the order-preserving checks on `A`.
pub const VALIDATION_TRIALS: usize = 10_000;
/// Largest radius of the growth-symmetry scan.
pub const SYMMETRY_SCAN_RADIUS: f64 = 40.0;
/// Standard errors allowed in every statistical comparison.
pub const Z: f64 = 3.0;
/// Standard errors allowed per gap-table comparison.
pub const Z_GAP: f64 = 2.0;

struct Files<'a> {
    cfg: &'a RunConfig,
    names: Vec<String>,
}

impl<'a> Files<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self { cfg, names: Vec::new() }
    }

    fn put(&mut self, name: &str, csv: &Csv) -> Result<(), CliError> {
        csv.write(&self.cfg.out_dir.join(name))?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn finish(files: Files<'_>, command: &str, checks: Vec<Check>, diagnostics: Vec<Check>, details: serde_json::Value) -> Result<Outcome, CliError> {
    let mut files = files;
    files.put(&format!("{command}_checks.csv"), &checks_csv(&checks))?;
    Ok(Outcome {
        checks,
        diagnostics,
        files: files.names,
        details,
    })
}

/// Structural assumptions on `A`, `β` and `B`.
pub fn validate(cfg: &RunConfig, _exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let report = space.validate_assumptions(VALIDATION_TRIALS, cfg.master_seed)?;

    let mut csv = Csv::new(&["check", "assumption", "observed", "bound", "violations", "pass"]);
    let mut checks = Vec::new();
    let mut push = |name: &str, assumption: &str, observed: f64, bound: f64, violations: usize, pass: bool| {
        csv.row(&[name.into(), assumption.into(), observed.into(), bound.into(), violations.into(), pass.into()]);
        checks.push(Check::new(format!("{name} {assumption}"), bound, observed, pass));
    };
    for c in &report.checks {
        push(&c.name, &c.assumption, c.observed, c.bound, c.violations, c.pass);
    }

    // (v): 0 ∈ β(0), j(0) = 0
    let (lo, hi) = graph.section(0.0);
    let j0 = graph.potential(0.0)?;
    let origin = lo <= 0.0 && 0.0 <= hi && j0 == 0.0;
    let gap = lo.max(0.0) - hi.min(0.0);
    push("graph_origin", "(v)", j0.abs() + gap, 0.0, usize::from(!origin), origin);

    // (vi): growth symmetry of j
    let symmetry = symmetry_certificate(&graph, SYMMETRY_SCAN_RADIUS)?;
    let (m1, certified) = match &symmetry {
        SymmetryOutcome::Certified(c) => (c.m1, true),
        SymmetryOutcome::Failure { ratios, .. } => (ratios.last().copied().unwrap_or(f64::INFINITY), false),
    };
    push("growth_symmetry_m1", "(vi)", m1, f64::INFINITY, usize::from(!certified), certified);

    // (vii): Hilbert–Schmidt noise with linear growth
    let hs = noise.hs_norm_sq();
    push("noise_hilbert_schmidt", "(vii)", hs, f64::INFINITY, usize::from(!hs.is_finite()), hs.is_finite());
    let lb = noise.linear_growth_constant();
    let mut worst: f64 = 0.0;
    let mut growth_violations = 0;
    for i in 0..=120 {
        let nx = 10f64.powf(-6.0 + 0.1 * f64::from(i));
        let lhs = noise.sigma(nx) * hs.sqrt();
        let rhs = lb * (1.0 + nx);
        worst = worst.max(lhs / rhs);
        if lhs > rhs * (1.0 + 1e-12) {
            growth_violations += 1;
        }
    }
    push("noise_linear_growth", "(vii)", worst, 1.0, growth_violations, growth_violations == 0);
    let mut files = Files::new(cfg);
    files.put("validation.csv", &csv)?;
    let details = json!({
        "c_coercivity": report.c_coercivity,
        "k_embed": report.k_embed,
        "ultracontractivity_constant": report.ultracontractivity_constant,
        "symmetry": symmetry,
        "failed_assumptions": checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect::<Vec<_>>(),
    });
    finish(files, "validate", checks, Vec::new(), details)
}

fn identity_row(csv: &mut Csv, name: &str, r: &IdentityReport) {
    csv.row(&[
        name.into(),
        r.dt.into(),
        r.n_paths.into(),
        r.residual.mean.into(),
        r.residual.se.into(),
        r.deterministic.mean.into(),
        r.deterministic.se.into(),
        r.bound.into(),
        r.pass.into(),
    ]);
}

/// Sample paths, the Itô identity for `½‖X‖²` with its refinement, and the
/// energy estimate.
pub fn simulate(cfg: &RunConfig, exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let scheme = cfg.scheme()?;
    let x0 = cfg.initial_state(&space);
    let mut files = Files::new(cfg);

    if scheme.save_stride > 0 && cfg.save_paths > 0 {
        let stepper = Stepper::new(&space, &graph, &noise, &scheme)?;
        let paths = exec.try_map(cfg.save_paths.min(cfg.ensemble_paths), |p| {
            let mut r = rng::stream(cfg.master_seed, rng::domain::PATH, p as u64);
            stepper.simulate(&x0, scheme.steps(), scheme.save_stride, &mut r)
        })?;
        for (p, out) in paths.iter().enumerate() {
            let mut csv = Csv::new(&["t", "normH2", "normV2", "j_int", "jstar_int"]);
            for rec in &out.records {
                csv.row(&[rec.t.into(), rec.norm_h2.into(), rec.norm_v2.into(), rec.j_int.into(), rec.jstar_int.into()]);
            }
            files.put(&format!("path_{p:04}.csv"), &csv)?;
        }
    }

    let opts = IdentityOptions {
        n_paths: cfg.ensemble_paths,
        seed: cfg.master_seed,
        c_budget: cfg.ito_c_budget,
    };
    let square = verify_ito_square(&space, &graph, &noise, &scheme, &x0, &opts, exec)?;
    let refine = ito_refinement(&space, &graph, &noise, &scheme, &x0, ItoFunctional::HalfNormSq, &opts, exec)?;
    let mut csv = Csv::new(&[
        "name",
        "dt",
        "n_paths",
        "residual",
        "se",
        "deterministic",
        "se_deterministic",
        "bound",
        "pass",
    ]);
    identity_row(&mut csv, "ito_square", &square);
    identity_row(&mut csv, "ito_square_coarse", &refine.coarse);
    identity_row(&mut csv, "ito_square_fine", &refine.fine);
    files.put("identities.csv", &csv)?;

    let mut checks = vec![
        Check::at_most("ito_square_residual", square.bound, square.residual.mean.abs()),
        Check::at_least("refinement_ratio_min", 1.6, refine.ratio),
        Check::at_most("refinement_ratio_max", 2.4, refine.ratio),
    ];
    if noise.is_additive() {
        let energy = energy_estimate(&space, &graph, &noise, &scheme, &x0, cfg.ensemble_paths, cfg.master_seed, exec)?;
        checks.push(Check::new("energy_estimate", energy.rhs + Z * energy.lhs.se, energy.lhs.mean, energy.pass));
    }
    let details = json!({ "ito_square": square, "refinement": refine });
    finish(files, "simulate", checks, Vec::new(), details)
}

fn reference_measure(cfg: &RunConfig, space: &TripleSpace, graph: &MonotoneGraph, exec: &Executor, em_cfg: &EmConfig) -> Result<EmpiricalMeasure, CliError> {
    let noise = cfg.noise()?;
    let scheme = SchemeConfig::new(cfg.time_dt, cfg.time_dt)?.with_mode(cfg.scheme_mode).with_drift(cfg.drift_form());
    Ok(estimate_invariant(space, graph, &noise, &scheme, &cfg.initial_state(space), em_cfg, cfg.master_seed, exec)?)
}

/// Long-run averages and the moment bounds they must satisfy.
pub fn invariant(cfg: &RunConfig, exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let em_cfg = cfg.em_config();
    let em = reference_measure(cfg, &space, &graph, exec, &em_cfg)?;
    let constants = BoundConstants::new(&space, &noise)?;
    let report = check_moment_bounds(&em, &constants);

    let mut files = Files::new(cfg);
    let mut summary = Csv::new(&["functional", "estimate", "se", "bound", "slack", "pass"]);
    let mut checks = Vec::new();
    for r in &report.rows {
        summary.row(&[r.functional.as_str().into(), r.estimate.into(), r.se.into(), r.bound.into(), r.slack.into(), r.pass.into()]);
        checks.push(Check::new(r.functional.clone(), r.bound + Z * r.se, r.estimate, r.pass));
    }
    checks.push(Check::at_least("support_fraction", 1.0, report.support_fraction));
    files.put("invariant_summary.csv", &summary)?;

    let mut all = Csv::new(&["functional", "estimate", "se"]);
    for (name, e) in em.names.iter().zip(&em.estimates) {
        all.row(&[name.as_str().into(), e.mean.into(), e.se.into()]);
    }
    files.put("invariant_functionals.csv", &all)?;

    // stability of the estimate under longer burn-in, denser sampling and
    // one further unit of time
    let mut diagnostics = Vec::new();
    let mut diag = Csv::new(&["comparison", "functional", "a", "b", "se", "pass"]);
    let doubled = EmConfig {
        burn_in: 2.0 * em_cfg.burn_in,
        ..em_cfg.clone()
    };
    let halved = EmConfig {
        stride: (em_cfg.stride / 2).max(1),
        ..em_cfg.clone()
    };
    let scheme = SchemeConfig::new(cfg.time_dt, cfg.time_dt)?.with_mode(cfg.scheme_mode).with_drift(cfg.drift_form());
    let stepper = Stepper::new(&space, &graph, &noise, &scheme)?;
    let groups = [
        ("burn_in_doubled", compare_estimates(&em, &reference_measure(cfg, &space, &graph, exec, &doubled)?, Z)),
        ("stride_halved", compare_estimates(&em, &reference_measure(cfg, &space, &graph, exec, &halved)?, Z)),
        ("invariance_s1", invariance_proxy(&stepper, &em, 1.0, cfg.master_seed, exec)?),
    ];
    for (label, comps) in &groups {
        for c in comps {
            diag.row(&[(*label).into(), c.name.as_str().into(), c.a.into(), c.b.into(), c.se.into(), c.pass.into()]);
            diagnostics.push(Check::new(format!("{label}:{}", c.name), Z * c.se, (c.a - c.b).abs(), c.pass));
        }
    }
    files.put("invariant_diagnostics.csv", &diag)?;
    let details = json!({ "constants": { "c": constants.c, "k": constants.k, "c0": constants.c0 }, "samples": em.samples });
    finish(files, "invariant", checks, diagnostics, details)
}

/// Synchronous coupling from `±a e₁` against the closed-form envelope.
pub fn mixing(cfg: &RunConfig, exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let scheme = cfg.scheme()?;
    let em = reference_measure(cfg, &space, &graph, exec, &cfg.em_config())?;
    let x = space.eigenmode(1).scaled(cfg.mixing_amplitude);
    let y = space.eigenmode(1).scaled(-cfg.mixing_amplitude);
    let rep = mixing_experiment(
        &space,
        &graph,
        &noise,
        &scheme,
        &x,
        &y,
        cfg.mixing_paths,
        &cfg.mixing_times,
        Some(&em),
        cfg.master_seed,
        exec,
    )?;

    let mut header = vec!["t".to_string(), "coupled_m2".into(), "envelope".into()];
    header.extend(rep.phi_names.iter().map(|n| format!("gap_{n}")));
    header.push("se_coupled_m2".into());
    let mut csv = Csv::new(&header);
    for (j, &t) in rep.times.iter().enumerate() {
        let mut row: Vec<crate::output::Cell> = vec![t.into(), rep.coupled_m2[j].mean.into(), rep.envelope[j].into()];
        row.extend(rep.gaps[j].iter().map(|&g| g.into()));
        row.push(rep.coupled_m2[j].se.into());
        csv.row(&row);
    }
    let mut files = Files::new(cfg);
    files.put("mixing.csv", &csv)?;

    let mut checks = Vec::new();
    for &t in &cfg.mixing_check_times {
        let j = rep.times.iter().position(|s| (s - t).abs() < 1e-9).expect("validated check time");
        let m = rep.coupled_m2[j];
        checks.push(Check::at_most(format!("envelope_t{t}"), rep.envelope[j] + Z * m.se, m.mean));
    }
    checks.push(Check::at_most("loglog_slope", cfg.mixing_max_slope, rep.slope));
    checks.push(Check::at_most("contraction_violations", 0.0, rep.contraction_violations as f64));
    let details = json!({
        "c": rep.c,
        "c_tilde": rep.c_tilde,
        "delta": rep.delta,
        "slope": rep.slope,
        "steps_checked": rep.steps_checked,
        "max_contraction_ratio": rep.max_contraction_ratio,
    });
    finish(files, "mixing", checks, Vec::new(), details)
}

/// Deterministic finite-difference probes: base point `e₁ + ½e₃`,
/// directions `s·e₂` and `s·sin(0.37 i)`.
fn fd_probes(space: &TripleSpace, scale: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x0 = space.eigenmode(1).combine(1.0, &space.eigenmode(3.min(space.n())), 0.5).to_vec();
    let h = space.eigenmode(2.min(space.n())).scaled(scale).to_vec();
    let k = (1..=space.n()).map(|i| scale * (0.37 * i as f64).sin()).collect();
    (x0, h, k)
}

fn fd_rows(csv: &mut Csv, checks: &mut Vec<Check>, label: &str, t: &FdTable, range: &[f64]) {
    for (e, err) in t.eps.iter().zip(&t.errors) {
        csv.row(&[label.into(), (*e).into(), (*err).into()]);
    }
    for (i, o) in t.orders().into_iter().enumerate() {
        let name = format!("{label}_order_{}_{}", t.eps[i], t.eps[i + 1]);
        checks.push(Check::new(name, range[0], o, o >= range[0] && o <= range[1]));
    }
}

/// Contraction, smoothing and finite-difference checks of the tangent flows.
pub fn tangent(cfg: &RunConfig, _exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let dt = cfg.time_dt;
    let scheme = SchemeConfig::new(dt, cfg.tangent_horizon)?.with_drift(cfg.mollified());
    let stepper = Stepper::new(&space, &graph, &noise, &scheme)?;
    let x0 = cfg.initial_state(&space);
    let steps = scheme.steps();
    let mut r = rng::stream(cfg.master_seed, rng::domain::TANGENT, 1);
    let path = FrozenPath::record(&stepper, &x0, steps, 1, &mut r)?;
    let est = verify_prop_estimates(&path, cfg.tangent_directions, cfg.master_seed)?;

    let mut checks: Vec<Check> = est
        .rows
        .iter()
        .map(|row| Check::new(row.name.clone(), row.bound, row.observed, row.pass))
        .collect();

    // the linear flow: same noise, drift switched off
    let linear = Stepper::new(&space, &MonotoneGraph::zero(), &noise, &scheme)?;
    let mut r = rng::stream(cfg.master_seed, rng::domain::TANGENT, 1);
    let lin_path = FrozenPath::record(&linear, &x0, steps, 1, &mut r)?;
    let lin = verify_prop_estimates(&lin_path, cfg.tangent_directions, cfg.master_seed)?;
    checks.push(Check::at_most("smoothing_m_prime_linear", monotone_spde::tangent::SMOOTHING_BOUND, lin.m_prime));

    let mut diagnostics = Vec::new();
    let mut r = rng::stream(cfg.master_seed, rng::domain::DIRECTIONS, 1);
    let h = random_direction(space.n(), &mut r);
    let mild = crosscheck_variational_mild(&path, &h)?;
    diagnostics.push(Check::new("mild_crosscheck_sup_h", f64::INFINITY, mild / space.norm_h(&h), mild.is_finite()));

    let fd_scheme = SchemeConfig::new(dt, cfg.tangent_fd_horizon)?.with_drift(cfg.mollified());
    let fd_stepper = Stepper::new(&space, &graph, &noise, &fd_scheme)?;
    let (fx, fh, fk) = fd_probes(&space, cfg.tangent_fd_scale);
    let fd_steps = fd_scheme.steps();
    let fd1 = fd_first_variation(&fd_stepper, &fx, &fh, fd_steps, cfg.master_seed, &cfg.tangent_eps_ladder)?;
    let fd2 = fd_second_variation(&fd_stepper, &fx, &fh, &fk, fd_steps, cfg.master_seed, &cfg.tangent_eps_ladder)?;
    let mut fd_csv = Csv::new(&["variation", "eps", "error"]);
    fd_rows(&mut fd_csv, &mut checks, "fd_first", &fd1, &cfg.tangent_order_range);
    fd_rows(&mut fd_csv, &mut checks, "fd_second", &fd2, &cfg.tangent_order_range);

    let mut files = Files::new(cfg);
    let mut csv = Csv::new(&["name", "bound", "observed", "pass"]);
    for c in checks.iter().chain(&diagnostics) {
        csv.row(&[c.name.as_str().into(), c.bound.into(), c.observed.into(), c.pass.into()]);
    }
    files.put("tangent.csv", &csv)?;
    files.put("tangent_fd.csv", &fd_csv)?;
    let details = json!({ "estimates": est, "linear": lin, "fd_first": fd1, "fd_second": fd2 });
    finish(files, "tangent", checks, diagnostics, details)
}

/// Resolvent residuals at points drawn from the long-run estimate and the
/// drift-replacement gap table.
pub fn kolmogorov(cfg: &RunConfig, exec: &Executor) -> Result<Outcome, CliError> {
    let space = cfg.space()?;
    let graph = cfg.graph()?;
    let noise = cfg.noise()?;
    let em = reference_measure(cfg, &space, &graph, exec, &cfg.em_config())?;
    let tf = TestFunction::new(&space, cfg.kolmogorov_test_function, &cfg.kolmogorov_test_modes)?;
    let mut files = Files::new(cfg);
    let mut checks = Vec::new();
    let alpha = cfg.kolmogorov_alpha;

    let points = probe_points(&em, cfg.kolmogorov_probe_points)?;
    let mut csv = Csv::new(&[
        "x_id",
        "alpha",
        "lambda",
        "n",
        "v",
        "se_v",
        "residual",
        "se_residual",
        "bound",
        "pass",
        "c1_observed",
        "c1_bound",
        "c1_pass",
    ]);
    let mut point_details = Vec::new();
    if !points.is_empty() {
        let scheme = SchemeConfig::new(cfg.time_dt, cfg.time_dt)?.with_drift(cfg.mollified());
        let setup = KolmogorovSetup::new(&space, &graph, &noise, &scheme)?;
        for (id, x) in points.iter().enumerate() {
            let probes = Probes::for_residual(&space, &noise, setup.drift(), x, cfg.kolmogorov_modes_probe);
            let est = setup.estimate(&tf, x, alpha, &probes, cfg.kolmogorov_paths, cfg.master_seed, exec)?;
            let res = residual_l0(&space, &noise, setup.drift(), &tf, &est, cfg.kolmogorov_modes_probe)?;
            let bound = Z * res.residual.se + cfg.kolmogorov_c_budget * (setup.dt() + TAIL_BUDGET);
            let pass = res.residual.mean.abs() <= bound;
            let c1 = c1_bound_check(&space, &tf, &est, &probes);
            csv.row(&[
                id.into(),
                alpha.into(),
                setup.drift().lambda().into(),
                setup.drift().n().into(),
                est.v.mean.into(),
                est.v.se.into(),
                res.residual.mean.into(),
                res.residual.se.into(),
                bound.into(),
                pass.into(),
                c1.observed_constant.into(),
                c1.bound_constant.into(),
                c1.pass.into(),
            ]);
            checks.push(Check::at_most(format!("residual_x{id}"), bound, res.residual.mean.abs()));
            checks.push(Check::new(format!("c1_bound_x{id}"), c1.bound_constant, c1.observed_constant, c1.pass));
            point_details.push(json!({ "x_id": id, "l0v": res.l0v, "trace_tail": res.trace_tail }));
        }
    }
    files.put("kolmogorov.csv", &csv)?;

    let mut gap_details = serde_json::Value::Null;
    if !cfg.kolmogorov_lambda_grid.is_empty() && !cfg.kolmogorov_n_grid.is_empty() {
        let gc = GapConfig {
            alpha,
            samples: cfg.kolmogorov_gap_samples,
            paths: cfg.kolmogorov_gap_paths,
            dt: cfg.time_dt,
        };
        let table = drift_replacement_gap(
            &space,
            &graph,
            &noise,
            &em,
            &tf,
            &cfg.kolmogorov_lambda_grid,
            &cfg.kolmogorov_n_grid,
            &gc,
            cfg.master_seed,
            exec,
        )?;
        let mut gap = Csv::new(&["lambda", "n", "gap", "se", "c1_constant"]);
        for r in &table.rows {
            gap.row(&[r.lambda.into(), r.n.into(), r.gap.into(), r.se.into(), r.c1_constant.into()]);
        }
        files.put("gap_table.csv", &gap)?;
        for t in table.trend_in_n(Z_GAP).iter().chain(&table.trend_in_lambda(Z_GAP)) {
            let name = format!("gap_trend_{}_{}_to_{}_{}", t.from.0, t.from.1, t.to.0, t.to.1);
            checks.push(Check::new(name, t.allowance, t.increase, t.pass));
        }
        if graph.is_zero() {
            let zero = table.rows.iter().all(|r| r.gap == 0.0);
            checks.push(Check::new("gap_zero_drift", 0.0, table.rows.iter().fold(0.0, |m, r| m.max(r.gap)), zero));
        }
        gap_details = json!({ "uniform_c1_constant": table.uniform_c1_constant() });
    }
    let details = json!({ "points": point_details, "gap": gap_details });
    finish(files, "kolmogorov", checks, Vec::new(), details)
}

/// `count` retained states, evenly spaced through the run.
pub fn probe_points(em: &EmpiricalMeasure, count: usize) -> Result<Vec<FieldState>, CliError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if em.retained.len() < count {
        return Err(CliError::Config(format!(
            "{} probe points requested but only {} states retained",
            count,
            em.retained.len()
        )));
    }
    let step = em.retained.len() / count;
    Ok((0..count).map(|i| em.retained[(i + 1) * step - 1].clone()).collect())
}
