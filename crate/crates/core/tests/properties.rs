use bsdelab_core::decomposition::{
    decompose, decompose_window, level_hitting, version_consistency, FlatTolerance, Label,
};
use bsdelab_core::driver::{builtin_catalog, mollify, verify_lipschitz, CatalogParams, MollifierKernel, ProbeBox};
use bsdelab_core::envelope::envelope_at;
use bsdelab_core::girsanov::{density, drift_eta, eta_bound, novikov_window, psi_values};
use bsdelab_core::ode::{solve_backward, BackwardOdeProblem};
use bsdelab_core::regression::RegressionConfig;
use bsdelab_core::solver::{distance_y, distance_z, solve_bsde};
use bsdelab_core::stochastic::{integrate_abs, ito_sum};
use bsdelab_core::{AdaptedProcess, Modulus, PathEnsemble, Shape, StoppingTime, TerminalCondition, TimeGrid};
use proptest::prelude::*;

fn modulus(i: usize) -> Modulus {
    match i % 4 {
        0 => Modulus::identity(),
        1 => Modulus::osgood(),
        2 => Modulus::sqrt(),
        _ => Modulus::capped_linear(2.0, 1.0),
    }
}

fn scalar(values: &[Vec<f64>]) -> AdaptedProcess {
    let times = values[0].len();
    let grid = TimeGrid::new(times.max(1)).unwrap();
    AdaptedProcess::from_fn(&grid, Shape::Scalar, values.len(), times, |p, j, v| v[0] = values[p][j])
}

/// Integrand with exact zeros so that flat stretches occur.
fn sparse_h() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), -2.0..2.0f64], 24), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ensembles_reproduce(seed in any::<u64>(), steps in 1usize..40, count in 1usize..20, dims in 1usize..3) {
        let grid = TimeGrid::new(steps).unwrap();
        let a = PathEnsemble::sample(&grid, dims, count, seed).unwrap();
        let b = PathEnsemble::sample(&grid, dims, count, seed).unwrap();
        prop_assert!(a.same_draw(&b));
        prop_assert_eq!(a.values(), b.values());
        // the increments telescope to B(1)
        for k in 0..dims {
            let unit = AdaptedProcess::from_fn(&grid, Shape::Matrix(1, dims), count, steps, |_, _, v| {
                v.fill(0.0);
                v[k] = 1.0;
            });
            let sums = ito_sum(&unit, &a, &StoppingTime::constant(count, 0), &StoppingTime::constant(count, steps)).unwrap();
            for (p, s) in sums.iter().enumerate() {
                prop_assert_eq!(s[0].to_bits(), a.value(p, steps)[k].to_bits());
            }
        }
    }

    #[test]
    fn integrate_abs_is_a_clock(h in sparse_h()) {
        let hp = scalar(&h);
        let c = integrate_abs(&hp, hp.grid()).unwrap();
        for p in 0..h.len() {
            let v = c.path(p);
            prop_assert_eq!(v[0], 0.0);
            prop_assert!(v.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn ode_is_monotone_in_gamma_and_eps(i in 0usize..4, g1 in 0.0..2.0f64, dg in 0.0..1.0f64, e1 in 0.0..0.5f64, de in 0.0..0.5f64) {
        let phi = modulus(i);
        let lo = solve_backward(&BackwardOdeProblem::unit(phi.clone(), e1, g1).unwrap(), 100).unwrap();
        let hi_g = solve_backward(&BackwardOdeProblem::unit(phi.clone(), e1, g1 + dg).unwrap(), 100).unwrap();
        let hi_e = solve_backward(&BackwardOdeProblem::unit(phi, e1 + de, g1).unwrap(), 100).unwrap();
        for j in 0..=100 {
            prop_assert!(lo.values[j] <= hi_g.values[j]);
            prop_assert!(lo.values[j] <= hi_e.values[j]);
        }
        prop_assert!(lo.values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(lo.values[100], g1);
    }

    #[test]
    fn envelopes_dominate(values in prop::collection::vec(prop::collection::vec(0.0..1.5f64, 21), 1..6), taus in prop::collection::vec(0usize..21, 6), i in 0usize..4, eps in 0.0..0.3f64) {
        let x = scalar(&values);
        let tau = StoppingTime::new(taus[..values.len()].to_vec());
        let env = envelope_at(&x, &tau, &BackwardOdeProblem::unit(modulus(i), eps, 0.0).unwrap(), 1.5).unwrap();
        for p in 0..values.len() {
            prop_assert!(env.theta[p] >= values[p][tau.index(p)]);
        }
        prop_assert!(env.gamma0 >= 0.0 && env.gamma0 <= 1.5);
    }

    #[test]
    fn envelope_is_stable_under_tau_shifts(values in prop::collection::vec(0.0..1.0f64, 41), j in 0usize..40, i in 0usize..4, eps in 0.0..0.3f64) {
        let x = scalar(std::slice::from_ref(&values));
        let problem = BackwardOdeProblem::unit(modulus(i), eps, 0.0).unwrap();
        let a = envelope_at(&x, &StoppingTime::constant(1, j), &problem, 1.0).unwrap();
        let b = envelope_at(&x, &StoppingTime::constant(1, j + 1), &problem, 1.0).unwrap();
        let u0 = solve_backward(&problem, 40).unwrap();
        let bound = (values[j + 1] - values[j]).abs() + (u0.values[j + 1] - u0.values[j]).abs() + 1e-8;
        prop_assert!((a.theta[0] - b.theta[0]).abs() <= bound);
    }

    #[test]
    fn hitting_times_are_monotone_in_level(h in sparse_h(), r1 in 0.0..1.0f64, dr in 0.0..1.0f64) {
        let c = integrate_abs(&scalar(&h), &TimeGrid::new(24).unwrap()).unwrap();
        let a = level_hitting(&c, r1).unwrap();
        let b = level_hitting(&c, r1 + dr).unwrap();
        for p in 0..h.len() {
            prop_assert!(a.time.index(p) <= b.time.index(p));
        }
    }

    #[test]
    fn decompositions_partition_and_are_idempotent(h in sparse_h(), start in 0usize..24) {
        let hp = scalar(&h);
        let c = integrate_abs(&hp, hp.grid()).unwrap();
        let paths = h.len();
        let rep = decompose(&c, &StoppingTime::constant(paths, start), FlatTolerance::default()).unwrap();
        prop_assert!(version_consistency(&hp, &rep).unwrap());
        let step = hp.grid().step();
        for (p, dec) in rep.paths.iter().enumerate() {
            let mut at = start;
            for s in &dec.segments {
                prop_assert_eq!(s.left, at);
                prop_assert!(s.right > s.left);
                at = s.right;
            }
            prop_assert_eq!(at, 24);
            for w in dec.segments.windows(2) {
                prop_assert!(w[0].label != w[1].label);
            }
            let tol = FlatTolerance::Absolute(dec.threshold / step);
            for s in &dec.segments {
                let mut l = vec![24; paths];
                let mut r = vec![24; paths];
                l[p] = s.left;
                r[p] = s.right;
                let again = decompose_window(&c, &StoppingTime::new(l), &StoppingTime::new(r), tol).unwrap();
                prop_assert_eq!(&again.paths[p].segments, &vec![*s]);
            }
        }
    }

    #[test]
    fn windows_keep_the_sandwich(z in prop::collection::vec(prop::collection::vec(0.0..0.6f64, 30), 1..5), dz in prop::collection::vec(prop::collection::vec(0.0..30.0f64, 30), 5), eps0 in 0.02..0.5f64, a in 0usize..15, len in 0usize..16) {
        let paths = z.len();
        let zp = scalar(&z);
        let dzp = scalar(&dz[..paths]);
        let from = StoppingTime::constant(paths, a);
        let to = StoppingTime::constant(paths, a + len);
        let w = novikov_window(&zp, &dzp, (&from, &to), eps0).unwrap();
        prop_assert!(w.check_sandwich(&zp, &dzp).is_ok());
        for p in 0..paths {
            prop_assert!(a <= w.left.index(p));
            prop_assert!(w.left.index(p) <= w.right.index(p));
            prop_assert!(w.right.index(p) <= a + len);
        }
    }

    #[test]
    fn unimodal_windows_grow_as_eps0_shrinks(peak in 0usize..30, height in 0.2..0.9f64, e1 in 0.05..0.19f64, shrink in 0.1..0.99f64) {
        let z: Vec<f64> = (0..30).map(|j| height * (-((j as f64 - peak as f64).powi(2)) / 40.0).exp()).collect();
        let zp = scalar(&[z]);
        let dzp = scalar(&[vec![0.1; 30]]);
        let (from, to) = (StoppingTime::constant(1, 0), StoppingTime::constant(1, 30));
        let wide = novikov_window(&zp, &dzp, (&from, &to), e1 * shrink).unwrap();
        let narrow = novikov_window(&zp, &dzp, (&from, &to), e1).unwrap();
        if narrow.left.index(0) < narrow.right.index(0) {
            prop_assert!(wide.left.index(0) <= narrow.left.index(0));
            prop_assert!(wide.right.index(0) >= narrow.right.index(0));
        }
    }

    #[test]
    fn drift_is_bounded_and_supported_on_windows(z in prop::collection::vec(prop::collection::vec(-0.6..0.6f64, 20), 1..4), eps0 in 0.05..0.5f64, mult in 1.0..3.0f64, seed in any::<u64>()) {
        let paths = z.len();
        let grid = TimeGrid::new(20).unwrap();
        let zmn = AdaptedProcess::from_fn(&grid, Shape::Vector(1), paths, 20, |p, j, v| v[0] = z[p][j]);
        let mag = zmn.map_scalar(|v| v[0].abs());
        let dz = AdaptedProcess::from_fn(&grid, Shape::Scalar, paths, 20, |p, j, v| v[0] = 2.0 * z[p][j].abs());
        let w = novikov_window(&mag, &dz, (&StoppingTime::constant(paths, 0), &StoppingTime::constant(paths, 20)), eps0).unwrap();
        let psi = Modulus::identity();
        let eta = drift_eta(&psi_values(&psi, &dz), &zmn, &w, mult).unwrap();
        let bound = eta_bound(&psi, eps0, mult);
        for p in 0..paths {
            for j in 0..20 {
                let e = eta.scalar(p, j);
                if w.contains(p, j) {
                    prop_assert!(e.abs() <= bound * (1.0 + 1e-12));
                } else {
                    prop_assert_eq!(e.to_bits(), 0f64.to_bits());
                }
            }
        }
        let ens = PathEnsemble::sample(&grid, 1, paths, seed).unwrap();
        let d = density(&eta, &ens, &w).unwrap();
        prop_assert!(d.positive);
        prop_assert!(d.log_density.iter().all(|l| l.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ladder_distances_are_pseudometrics(a in prop::collection::vec(-1.0..1.0f64, 3), b in prop::collection::vec(-1.0..1.0f64, 3), seed in any::<u64>()) {
        let grid = TimeGrid::new(10).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 200, seed).unwrap();
        let xi = TerminalCondition::sine(1);
        let sols: Vec<_> = a
            .iter()
            .zip(&b)
            .map(|(&a, &b)| {
                let f = builtin_catalog("linear", 1, 1, &CatalogParams { a, b }).unwrap();
                solve_bsde(&f, &xi, &ens, &RegressionConfig::default(), 3).unwrap()
            })
            .collect();
        for i in 0..3 {
            prop_assert_eq!(distance_y(&sols[i], &sols[i]).unwrap(), 0.0);
            prop_assert_eq!(distance_z(&sols[i], &sols[i]).unwrap(), 0.0);
            for j in 0..3 {
                prop_assert_eq!(distance_y(&sols[i], &sols[j]).unwrap(), distance_y(&sols[j], &sols[i]).unwrap());
                prop_assert_eq!(distance_z(&sols[i], &sols[j]).unwrap(), distance_z(&sols[j], &sols[i]).unwrap());
                for k in 0..3 {
                    let y = |p: usize, q: usize| distance_y(&sols[p], &sols[q]).unwrap();
                    let z = |p: usize, q: usize| distance_z(&sols[p], &sols[q]).unwrap().sqrt();
                    prop_assert!(y(i, k) <= y(i, j) + y(j, k) + 1e-12);
                    prop_assert!(z(i, k) <= z(i, j) + z(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mollified_drivers_respect_their_lipschitz_constant(which in 0usize..5, n in 1u32..80, seed in any::<u64>()) {
        let name = ["osgood", "abs", "sqrt", "sine", "linear"][which];
        let f = builtin_catalog(name, 1, 1, &CatalogParams::default()).unwrap();
        let fnn = mollify(&f, &MollifierKernel::default(), n).unwrap();
        let r = verify_lipschitz(&fnn, 5000, seed, ProbeBox::default());
        prop_assert_eq!(r.violations, 0, "{} n={}: {:?}", name, n, r);
    }
}

#[test]
fn window_counterexample_for_non_unimodal_profiles() {
    let z = scalar(&[vec![0.06, 0.01, 0.5, 0.5]]);
    let (a, b) = (StoppingTime::constant(1, 0), StoppingTime::constant(1, 4));
    let coarse = novikov_window(&z, &z, (&a, &b), 0.1).unwrap();
    let fine = novikov_window(&z, &z, (&a, &b), 0.05).unwrap();
    assert!(fine.right.index(0) < coarse.right.index(0));
}

#[test]
fn windows_fill_the_interval_as_eps0_shrinks() {
    let grid = TimeGrid::new(50).unwrap();
    let z = AdaptedProcess::from_fn(&grid, Shape::Scalar, 20, 50, |p, j, v| {
        v[0] = 0.06 + 0.3 * ((p * 7 + j * 3) % 11) as f64 / 11.0 * (j as f64 / 50.0)
    });
    let dz = AdaptedProcess::from_fn(&grid, Shape::Scalar, 20, 50, |_, _, v| v[0] = 0.2);
    let (a, b) = (StoppingTime::constant(20, 0), StoppingTime::constant(20, 50));
    let mut prev = -1.0;
    let mut lengths = Vec::new();
    for eps0 in [0.2, 0.1, 0.05] {
        let w = novikov_window(&z, &dz, (&a, &b), eps0).unwrap();
        let len: usize = (0..20).map(|p| w.right.index(p) - w.left.index(p)).sum();
        assert!(w.nondegenerate_fraction() >= prev);
        prev = w.nondegenerate_fraction();
        lengths.push(len);
    }
    assert_eq!(prev, 1.0);
    assert_eq!(*lengths.last().unwrap(), 20 * 50);
}

#[test]
fn ode_continuity_in_gamma() {
    for phi in [Modulus::osgood(), Modulus::sqrt(), Modulus::identity()] {
        let base = solve_backward(&BackwardOdeProblem::unit(phi.clone(), 0.1, 0.5).unwrap(), 200).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let g = 0.5 + 10f64.powi(-k);
            let u = solve_backward(&BackwardOdeProblem::unit(phi.clone(), 0.1, g).unwrap(), 200).unwrap();
            let gap = u
                .values
                .iter()
                .zip(&base.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < prev, "{}: {gap} !< {prev}", phi.name());
            prev = gap;
        }
        assert!(prev < 1e-4);
    }
}

#[test]
fn decomposition_labels_follow_the_integrand() {
    let grid = TimeGrid::new(40).unwrap();
    let h = AdaptedProcess::from_fn(&grid, Shape::Scalar, 1, 40, |_, j, v| {
        v[0] = if (10..25).contains(&j) { 1.0 } else { 0.0 }
    });
    let c = integrate_abs(&h, &grid).unwrap();
    let rep = decompose(&c, &StoppingTime::constant(1, 0), FlatTolerance::default()).unwrap();
    let labels: Vec<_> = rep.paths[0]
        .segments
        .iter()
        .map(|s| (s.label, s.left, s.right))
        .collect();
    assert_eq!(
        labels,
        vec![(Label::Flat, 0, 10), (Label::Increasing, 10, 25), (Label::Flat, 25, 40)]
    );
}
