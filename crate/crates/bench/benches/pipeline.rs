use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ioc_bench::example1;
use ioc_core::alg1::{learner_input, policy_error, update_wv};
use ioc_core::basis::{PositivityChecker, WuMap};
use ioc_core::forward::{forward_solve, solve_riccati, CostSpec, ForwardOptions, GainModel};
use ioc_core::hjb::{accumulate_expert, estimate_wq, StackOptions};
use ioc_core::sim::{simulate, ControlLaw};
use nalgebra::{DMatrix, DVector};

fn riccati(c: &mut Criterion) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
    let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.6]));
    let r = DMatrix::identity(1, 1);
    c.bench_function("riccati 2x2", |bch| bch.iter(|| solve_riccati(black_box(&a), &b, &q, &r).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let f = example1(0.1);
    let law = ControlLaw::gain(f.expert_gain.clone(), f.basis.sigma_u.clone());
    let x0 = DVector::from_column_slice(&[2.0, 2.0]);
    c.bench_function("simulate example1 1 s", |b| {
        b.iter(|| simulate(&f.sys, &law, black_box(&x0), 1e-3, 1.0).unwrap())
    });
}

fn gradient_step(c: &mut Criterion) {
    let f = example1(1.0);
    let map = WuMap::build(&f.basis, f.sys.domain()).unwrap();
    let w_v = DVector::from_column_slice(&[0.3, 0.0, 0.8]);
    let w_ul = map.apply(&w_v);
    let k = DMatrix::from_row_slice(1, 4, &[0.1, 1.8, 0.0, 0.9]);
    let checker = PositivityChecker::value(&f.basis, f.sys.domain(), 2000, 0);
    let x = f.expert.state(100);
    let u_e = f.expert.input(100);
    c.bench_function("value-weight step", |b| {
        b.iter(|| {
            let e = policy_error(&learner_input(&k, &f.basis, &x), &u_e);
            update_wv(&w_v, &k, &w_ul, &e, black_box(&x), 0.003, &f.basis, &checker).unwrap()
        })
    });
}

fn history_stack(c: &mut Criterion) {
    let f = example1(10.0);
    let r = DMatrix::identity(1, 1);
    let w_v = DVector::from_column_slice(&[0.5, 0.0, 1.0]);
    let opts = StackOptions::default();
    c.bench_function("expert stack + W_Q solve (10 s)", |b| {
        b.iter(|| {
            let s = accumulate_expert(&f.expert, &r, black_box(&w_v), &f.basis, &opts).unwrap();
            estimate_wq(&s, 1e-6).unwrap()
        })
    });
}

fn forward(c: &mut Criterion) {
    let f = example1(0.1);
    let cost = CostSpec::scalar_r(DVector::from_column_slice(&[1.0, 0.0, 1.0]), 1.0, 1).unwrap();
    let opts = ForwardOptions {
        gain_model: GainModel::FromValue,
        ..ForwardOptions::default()
    };
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    group.bench_function("example1", |b| b.iter(|| forward_solve(&f.sys, black_box(&cost), &f.basis, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, riccati, simulation, gradient_step, history_stack, forward);
criterion_main!(benches);
