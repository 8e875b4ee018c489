//! Call counters are process-wide, so this binary holds a single test.

use std::collections::BTreeMap;

use ioc_core::alg1::{run_algorithm1, Alg1Options, QSource};
use ioc_core::alg2::{run_algorithm2, Alg2Init};
use ioc_core::basis::WuMap;
use ioc_core::forward::{forward_solve_count, CostSpec, ForwardOptions};
use ioc_core::sim::{builtin_basis, make_builtin_system, simulate, simulation_count, BuiltinSystem, ControlLaw};
use nalgebra::{DMatrix, DVector};

#[test]
fn estimators_only_simulate_where_documented() {
    let sys = make_builtin_system("example1", &BTreeMap::new()).unwrap();
    let basis = builtin_basis(BuiltinSystem::Example1);
    let map = WuMap::build(&basis, sys.domain()).unwrap();
    let k_e = DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]);
    let law = ControlLaw::gain(k_e, basis.sigma_u.clone());
    let expert = simulate(&sys, &law, &DVector::from_column_slice(&[2.0, 2.0]), 1e-3, 10.0).unwrap();

    // model-free: one forward solve (its rollouts) per attempt, nothing in the loop
    let init = CostSpec::scalar_r(DVector::from_column_slice(&[0.5, 0.0, 1.5]), 0.8, 1).unwrap();
    let mut opts = Alg1Options::default();
    opts.sgd.alpha_v = 0.003;
    opts.sgd.fix_r = true;
    opts.q_source = QSource::Expert;
    let (sims, solves) = (simulation_count(), forward_solve_count());
    let res = run_algorithm1(&expert, &init, &sys, &basis, &map, &opts).unwrap();
    let attempts = 1 + res.restarts;
    assert_eq!(forward_solve_count() - solves, attempts);
    assert_eq!(simulation_count() - sims, ForwardOptions::default().rollouts * attempts);

    // known input dynamics: nothing at all
    let (sims, solves) = (simulation_count(), forward_solve_count());
    let init = Alg2Init::random(&basis, sys.domain(), 1, 4).unwrap();
    run_algorithm2(&expert, &sys, sys.domain(), &init, &basis, &opts.sgd).unwrap();
    assert_eq!(simulation_count(), sims);
    assert_eq!(forward_solve_count(), solves);
}
