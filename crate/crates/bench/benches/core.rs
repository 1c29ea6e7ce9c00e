use std::hint::black_box;
use std::sync::Arc;

use ballbox_core::approxexp::{almost_exponential, approx_exp};
use ballbox_core::fields::{build_table, builtin_family, Word};
use ballbox_core::flow::{run_plan, FlowPlan, Leg};
use ballbox_core::maximality::big_lambda;
use ballbox_core::metric::{reachable_grid, GridSpec};
use ballbox_core::select_maximal;
use criterion::{criterion_group, criterion_main, Criterion};

fn flows(c: &mut Criterion) {
    let f = builtin_family("martinet").unwrap();
    let plan = FlowPlan::new(vec![Leg::field(0, 0.3), Leg::field(1, -0.2), Leg::field(0, -0.3), Leg::field(1, 0.2)]);
    c.bench_function("flow/martinet_four_legs", |b| b.iter(|| run_plan(&f, black_box(&plan), &[0.1, 0.2, 0.0]).unwrap()));
}

fn exponentials(c: &mut Criterion) {
    let w = builtin_family("wright").unwrap();
    let word = Word::parse("1,2").unwrap();
    c.bench_function("approx_exp/wright_12", |b| b.iter(|| approx_exp(&w, &word, black_box(1e-3), &[0.2, 0.1]).unwrap()));

    let t = build_table(Arc::new(builtin_family("martinet").unwrap()));
    let sel = select_maximal(&t, &[0.0; 3], 0.1, 0.5).unwrap().selection;
    c.bench_function("almost_exponential/martinet", |b| {
        b.iter(|| almost_exponential(&t, &sel, &[0.0; 3], black_box(&[0.05, -0.03, 1e-4])).unwrap())
    });
}

fn lambdas(c: &mut Criterion) {
    let t = build_table(Arc::new(builtin_family("martinet").unwrap()));
    c.bench_function("big_lambda/martinet", |b| b.iter(|| big_lambda(&t, black_box(&[0.3, -0.2, 0.1]), 0.1).unwrap()));
}

fn grids(c: &mut Criterion) {
    let t = build_table(Arc::new(builtin_family("grushin").unwrap()));
    let grid = GridSpec::for_point(&t, &[0.0, 0.0], 0.1, 16).unwrap();
    c.bench_function("reachable_grid/grushin_k16", |b| {
        b.iter(|| reachable_grid(t.family(), &[0.0, 0.0], black_box(0.1), &grid).unwrap())
    });
}

criterion_group!(benches, flows, exponentials, lambdas, grids);
criterion_main!(benches);
