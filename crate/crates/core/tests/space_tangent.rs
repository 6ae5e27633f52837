use std::f64::consts::PI;

use monotone_spde::integrator::{DriftForm, SchemeConfig, Stepper};
use monotone_spde::rng;
use monotone_spde::tangent::{
    fd_first_variation, smoothing_ratio, solve_first_variation, solve_second_variation, FrozenPath,
};
use monotone_spde::{MonotoneGraph, NoiseModel, TripleSpace};
use proptest::prelude::*;

fn lambda_k(n: usize, kappa: f64, k: usize) -> f64 {
    let h = 1.0 / (n as f64 + 1.0);
    4.0 * kappa / (h * h) * (0.5 * PI * k as f64 * h).sin().powi(2)
}

#[test]
fn eigenpairs_match_the_closed_form() {
    for &(n, kappa) in &[(7, 1.0), (32, 0.01), (100, 2.5)] {
        let space = TripleSpace::new(n, kappa).unwrap();
        for k in 1..=n {
            let e = space.eigenmode(k);
            let ae = space.apply_a(&e).unwrap();
            let lam = lambda_k(n, kappa, k);
            assert!((space.eigenvalue(k) - lam).abs() < 1e-12 * lam);
            for i in 0..n {
                assert!((ae[i] - lam * e[i]).abs() < 1e-9 * lam);
            }
            assert!((space.norm_h_sq(&e) - 1.0).abs() < 1e-12);
            assert!((space.norm_v_sq(&e) - lam).abs() < 1e-9 * lam);
            assert!((space.norm_vdual_sq(&e) - 1.0 / lam).abs() < 1e-9 / lam);
        }
        assert!((space.k_embed() - lambda_k(n, kappa, 1).powf(-0.5)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn column_solve_is_the_single_solve(
        n in 1usize..40,
        delta in 1e-5f64..1.0,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let space = TripleSpace::new(n, 1.0).unwrap();
        let solver = space.shifted_solver(delta).unwrap();
        let mut r = rng::stream(seed, 0, 0);
        let mut many: Vec<Vec<f64>> = (0..cols).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let singles: Vec<Vec<f64>> = many
            .iter()
            .map(|c| {
                let mut c = c.clone();
                solver.solve_in_place(&mut c);
                c
            })
            .collect();
        solver.solve_columns(&mut many);
        prop_assert_eq!(many, singles);
    }

    #[test]
    fn shifted_solve_inverts_the_operator(n in 1usize..40, delta in 1e-4f64..1.0, seed in any::<u64>()) {
        use rand::Rng;
        let space = TripleSpace::new(n, 0.3).unwrap();
        let mut r = rng::stream(seed, 0, 1);
        let u: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut au = vec![0.0; n];
        space.apply_a_into(&u, &mut au);
        let mut f: Vec<f64> = u.iter().zip(&au).map(|(a, b)| a + delta * b).collect();
        space.shifted_solver(delta).unwrap().solve_in_place(&mut f);
        for (a, b) in f.iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}

fn frozen_path(graph: &MonotoneGraph, n: usize, steps: usize, seed: u64) -> FrozenPath {
    let space = TripleSpace::new(n, 1.0).unwrap();
    let noise = NoiseModel::additive(0.5, 1.0, n).unwrap();
    let cfg = SchemeConfig::new(1e-3, 1e-3 * steps as f64)
        .unwrap()
        .with_drift(DriftForm::Mollified { lambda: 0.1, n: 8 });
    let stepper = Stepper::new(&space, graph, &noise, &cfg).unwrap();
    let x0 = space.eigenmode(1).scaled(2.0);
    let mut r = rng::stream(seed, rng::domain::TANGENT, 0);
    FrozenPath::record(&stepper, &x0, steps, 1, &mut r).unwrap()
}

fn direction(n: usize, seed: u64, salt: u64) -> Vec<f64> {
    use rand::Rng;
    let mut r = rng::stream(seed, rng::domain::DIRECTIONS, salt);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn first_variation_is_linear_and_contracting(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = 16;
        let path = frozen_path(&MonotoneGraph::cubic(), n, 200, seed);
        let h = direction(n, seed, 1);
        let k = direction(n, seed, 2);
        let mix: Vec<f64> = h.iter().zip(&k).map(|(x, y)| a * x + b * y).collect();
        let yh = solve_first_variation(&path, &h).unwrap();
        let yk = solve_first_variation(&path, &k).unwrap();
        let ym = solve_first_variation(&path, &mix).unwrap();
        for m in 0..yh.states.len() {
            for i in 0..n {
                let want = a * yh.states[m][i] + b * yk.states[m][i];
                prop_assert!((ym.states[m][i] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }
        let space = path.space();
        prop_assert!(yh.sup_h <= space.norm_h(&h) * (1.0 + 1e-12));
        prop_assert!(yh.sup_l1 <= space.norm_l1(&h) * (1.0 + 1e-12));
        prop_assert!(path.min_slope() >= -1e-12);
    }

    #[test]
    fn second_variation_is_symmetric_and_bilinear(seed in any::<u64>(), a in -2.0f64..2.0) {
        let n = 12;
        let path = frozen_path(&MonotoneGraph::sinh(), n, 150, seed);
        let h = direction(n, seed, 3);
        let k = direction(n, seed, 4);
        let ah: Vec<f64> = h.iter().map(|x| a * x).collect();
        let yh = solve_first_variation(&path, &h).unwrap();
        let yk = solve_first_variation(&path, &k).unwrap();
        let yah = solve_first_variation(&path, &ah).unwrap();
        let zhk = solve_second_variation(&path, &yh, &yk).unwrap();
        let zkh = solve_second_variation(&path, &yk, &yh).unwrap();
        let zahk = solve_second_variation(&path, &yah, &yk).unwrap();
        for ((z, zs), za) in zhk.last().iter().zip(zkh.last()).zip(zahk.last()) {
            prop_assert!((z - zs).abs() <= 1e-14 * (1.0 + z.abs()));
            prop_assert!((za - a * z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
    }
}

#[test]
fn linear_flow_smoothing_matches_the_eigen_formula() {
    // zero drift: Y_m = (I + dt A)^{-m} h exactly
    let n = 32;
    let dt = 1e-3;
    let steps = 400;
    let path = frozen_path(&MonotoneGraph::zero(), n, steps, 7);
    let space = path.space().clone();
    for k in [1, 5, 17, 32] {
        let h = space.eigenmode(k).to_vec();
        let y = solve_first_variation(&path, &h).unwrap();
        let lam = lambda_k(n, 1.0, k);
        for (m, ym) in y.states.iter().enumerate() {
            let want = (1.0 + dt * lam).powi(-(m as i32));
            assert!((space.norm_h(ym) - want).abs() < 1e-12, "k={k} m={m}");
        }
        let want = (1..=steps)
            .map(|m| {
                let t = m as f64 * dt;
                lam.sqrt() * (1.0 + dt * lam).powi(-(m as i32)) / t.powf(-0.5).max(1.0)
            })
            .fold(0.0, f64::max);
        let got = smoothing_ratio(&space, dt, &y, &h);
        assert!((got - want).abs() < 1e-9 * want, "k={k}: {got} vs {want}");
        assert!(got <= 2.0);
    }
}

#[test]
fn finite_differences_converge_at_first_order() {
    let space = TripleSpace::new(16, 1.0).unwrap();
    let noise = NoiseModel::additive(0.5, 1.0, 16).unwrap();
    let cfg = SchemeConfig::new(1e-3, 0.05)
        .unwrap()
        .with_drift(DriftForm::Mollified { lambda: 0.1, n: 8 });
    let stepper = Stepper::new(&space, &MonotoneGraph::cubic(), &noise, &cfg).unwrap();
    let x0: Vec<f64> = space.eigenmode(1).to_vec();
    let h: Vec<f64> = space.eigenmode(2).scaled(4.0).to_vec();
    let t = fd_first_variation(&stepper, &x0, &h, cfg.steps(), 11, &[1e-2, 1e-3]).unwrap();
    let order = (t.errors[0] / t.errors[1]).log10();
    assert!((0.8..=1.2).contains(&order), "{:?}", t);
}
