use std::collections::BTreeMap;

use ioc_core::alg1::update_r;
use ioc_core::basis::{BasisSet, BasisVector, PositivityChecker, WuMap};
use ioc_core::forward::{policy_distance, solve_riccati};
use ioc_core::hjb::{informativity, HistoryStack, StackSource};
use ioc_core::linalg::min_eigenvalue_sym;
use ioc_core::sim::{
    add_measurement_noise, builtin_basis, make_builtin_system, simulate, BuiltinSystem, ControlLaw, DynamicalSystem,
    Trajectory,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn example1() -> (DynamicalSystem, BasisSet) {
    (
        make_builtin_system("example1", &BTreeMap::new()).unwrap(),
        builtin_basis(BuiltinSystem::Example1),
    )
}

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

fn mat_in(r: usize, c: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn short_run(gain: &DMatrix<f64>, x0: &DVector<f64>) -> Trajectory {
    let (sys, basis) = example1();
    let law = ControlLaw::gain(gain.clone(), basis.sigma_u.clone());
    simulate(&sys, &law, x0, 1e-2, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recorded_inputs_follow_the_gain_law(
        k in mat_in(1, 4, -1.0, 3.0),
        x0 in vec_in(2, -1.5, 1.5),
    ) {
        let traj = short_run(&k, &x0);
        let basis = builtin_basis(BuiltinSystem::Example1);
        for i in 0..traj.len() {
            let u = -(&k * basis.sigma_u.eval(&traj.state(i)));
            prop_assert!((traj.input(i) - u).amax() <= 1e-12);
        }
    }

    #[test]
    fn measurement_noise_is_seeded_and_bounded(
        x0 in vec_in(2, -1.5, 1.5),
        pct in 0.0..0.2f64,
        seed in any::<u64>(),
    ) {
        let k = DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]);
        let clean = short_run(&k, &x0);
        let before = clean.clone();
        let a = add_measurement_noise(&clean, pct, seed).unwrap();
        let b = add_measurement_noise(&clean, pct, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&clean, &before);
        prop_assert_eq!(&a.times, &clean.times);
        let tol = pct * (1.0 + 1e-12);
        for (noisy, orig) in a.states.iter().zip(clean.states.iter()) {
            prop_assert!((noisy - orig).abs() <= tol * orig.abs() + 1e-300);
        }
        for (noisy, orig) in a.inputs.iter().zip(clean.inputs.iter()) {
            prop_assert!((noisy - orig).abs() <= tol * orig.abs() + 1e-300);
        }
    }

    #[test]
    fn basis_jacobian_matches_central_differences(x in vec_in(3, -2.0, 2.0)) {
        let sigma = BasisVector::parse("x1^2, x1*x2, x3^3, sin(x2)*x3, cos(x1), x2^2*x3", 3).unwrap();
        let jac = sigma.jacobian(&x);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (sigma.eval(&xp) - sigma.eval(&xm)) / (2.0 * h);
            for i in 0..sigma.len() {
                let scale = jac[(i, j)].abs().max(1.0);
                prop_assert!((fd[i] - jac[(i, j)]).abs() <= 1e-6 * scale, "term {i} var {j}");
            }
        }
    }

    #[test]
    fn value_to_gain_map_reproduces_the_input_gradient(
        w in vec_in(3, -2.0, 2.0),
        x in vec_in(2, -1.0, 1.0),
    ) {
        let (sys, basis) = example1();
        let map = WuMap::build(&basis, sys.domain()).unwrap();
        let lhs = basis.sigma_g.eval(&x) * basis.sigma_v.jacobian(&x).transpose() * &w;
        let rhs = map.apply(&w) * basis.sigma_u.eval(&x);
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn riccati_solution_is_symmetric_psd_with_small_residual(
        a in mat_in(3, 3, -1.0, 1.0),
        b in mat_in(3, 2, -1.0, 1.0),
        qd in vec_in(3, 0.1, 3.0),
        rd in vec_in(2, 0.1, 3.0),
    ) {
        let q = DMatrix::from_diagonal(&qd);
        let r = DMatrix::from_diagonal(&rd);
        // controllability keeps the problem well posed
        let ctrb = DMatrix::from_columns(&[
            b.column(0).into_owned(), b.column(1).into_owned(),
            (&a * &b).column(0).into_owned(), (&a * &b).column(1).into_owned(),
            (&a * &a * &b).column(0).into_owned(), (&a * &a * &b).column(1).into_owned(),
        ]);
        prop_assume!(ctrb.svd(false, false).singular_values.min() > 1e-2);
        let sol = solve_riccati(&a, &b, &q, &r).unwrap();
        let p = &sol.p;
        prop_assert!((p - p.transpose()).amax() <= 1e-9 * p.amax().max(1.0));
        prop_assert!(min_eigenvalue_sym(p) >= -1e-9);
        let res = a.transpose() * p + p * &a - p * &b * r.clone().try_inverse().unwrap() * b.transpose() * p + &q;
        prop_assert!(res.amax() <= 1e-8 * p.amax().max(1.0), "residual {}", res.amax());
    }

    #[test]
    fn input_penalty_step_stays_spd(
        rd in vec_in(2, 0.05, 2.0),
        u in vec_in(2, -5.0, 5.0),
        e in vec_in(2, -5.0, 5.0),
        alpha in 0.0..10.0f64,
    ) {
        let r = DMatrix::from_diagonal(&rd);
        let next = update_r(&r, &u, &e, alpha, false).unwrap();
        prop_assert!((&next - next.transpose()).amax() <= 1e-12);
        prop_assert!(min_eigenvalue_sym(&next) > 0.0);
        prop_assert_eq!(update_r(&r, &u, &e, alpha, true).unwrap(), r);
    }

    #[test]
    fn value_step_keeps_positivity(
        k in mat_in(1, 4, -1.0, 3.0),
        e in vec_in(1, -5.0, 5.0),
        x in vec_in(2, -1.0, 1.0),
        alpha in 1e-4..1.0f64,
    ) {
        let (sys, basis) = example1();
        let map = WuMap::build(&basis, sys.domain()).unwrap();
        let checker = PositivityChecker::value(&basis, sys.domain(), 500, 3);
        let w_v = DVector::from_column_slice(&[1.0, 0.0, 1.0]);
        let w_ul = map.apply(&w_v);
        if let Ok(next) = ioc_core::alg1::update_wv(&w_v, &k, &w_ul, &e, &x, alpha, &basis, &checker) {
            prop_assert!(checker.check(&next).ok);
        }
    }

    #[test]
    fn appending_rows_never_lowers_informativity(
        base in prop::collection::vec(vec_in(3, -1.0, 1.0), 1..6),
        extra in prop::collection::vec(vec_in(3, -1.0, 1.0), 1..4),
    ) {
        let rows = |v: &[DVector<f64>]| -> Vec<(f64, DVector<f64>, f64)> {
            v.iter().enumerate().map(|(i, r)| (i as f64, r.clone(), 0.0)).collect()
        };
        let mut stack = HistoryStack::from_rows(3, &rows(&base), 0.1, StackSource::Expert);
        let before = informativity(&stack, 1e-6);
        stack.append(&HistoryStack::from_rows(3, &rows(&extra), 0.1, StackSource::Expert)).unwrap();
        let after = informativity(&stack, 1e-6);
        prop_assert!(after.rank >= before.rank);
        prop_assert!(after.informative || !before.informative);
        if before.rank == 3 {
            prop_assert!(after.sigma_min >= before.sigma_min * (1.0 - 1e-9));
        }
    }

    #[test]
    fn trajectory_csv_round_trips(
        k in mat_in(1, 4, -1.0, 3.0),
        x0 in vec_in(2, -1.5, 1.5),
    ) {
        let traj = short_run(&k, &x0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        traj.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        prop_assert_eq!(back.len(), traj.len());
        prop_assert!((back.states - &traj.states).amax() <= 1e-12 * traj.states.amax().max(1.0));
        prop_assert!((back.inputs - &traj.inputs).amax() <= 1e-12 * traj.inputs.amax().max(1.0));
    }

    #[test]
    fn policy_distance_is_symmetric_and_zero_on_identity(
        ka in mat_in(1, 4, -3.0, 3.0),
        kb in mat_in(1, 4, -3.0, 3.0),
    ) {
        let (sys, basis) = example1();
        let grid = sys.domain().grid(9);
        let ab = policy_distance(&ka, &kb, &basis.sigma_u, &grid).unwrap();
        let ba = policy_distance(&kb, &ka, &basis.sigma_u, &grid).unwrap();
        prop_assert!((ab.max_deviation - ba.max_deviation).abs() <= 1e-12 * ab.max_deviation.max(1.0));
        let same = policy_distance(&ka, &ka, &basis.sigma_u, &grid).unwrap();
        prop_assert_eq!(same.max_deviation, 0.0);
    }
}

proptest! {
    #[test]
    fn config_vectors_round_trip_through_text(
        x0 in prop::collection::vec(-1e3..1e3f64, 2),
        w_q in prop::collection::vec(-1e3..1e3f64, 3),
    ) {
        use ioc_core::experiment::ExperimentConfig;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let text = format!(
            "[system]\nname = linear2d\n\n[expert]\nq_bar = 1, 0; 0, 0.6\nr = 1\nx0 = {}\n\n\
             [init]\nw_q = {}\nr = 0.8\n\n[run]\nseed = 3\n",
            list(&x0),
            list(&w_q),
        );
        let cfg = ExperimentConfig::parse(&text, std::path::Path::new(".")).unwrap();
        prop_assert_eq!(cfg.expert.x0.as_slice(), x0.as_slice());
        prop_assert_eq!(cfg.init.w_q.as_slice(), w_q.as_slice());
    }
}
