use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use ballbox_core::approxexp::{almost_exponential, invert_e, AnisotropicBox};
use ballbox_core::fields::{build_table, builtin_family, builtin_family_with, CommutatorTable, Word};
use ballbox_core::flow::{run_plan, Direction, FlowPlan, Leg};
use ballbox_core::maximality::select_maximal;
use ballbox_core::metric::{
    axis_weights, ballbox_verify, cc_upper, reachable_grid, rho_sample, BallboxOptions, DistanceOptions, GridSpec,
};
use ballbox_core::sampling::stream;
use proptest::prelude::*;

fn table(name: &str) -> CommutatorTable {
    build_table(Arc::new(builtin_family(name).unwrap()))
}

#[test]
fn heisenberg_commutator_budget_is_quadratic() {
    let h = builtin_family("heisenberg").unwrap();
    for r in [0.05, 0.1, 0.2] {
        // ρ-budget r along Y3 alone: flow [X1, X2] for time r².
        let plan = FlowPlan::new(vec![Leg { direction: Direction::Commutator(Word::new(vec![1, 2]).unwrap()), duration: r * r }]);
        let y = run_plan(&h, &plan, &[0.0; 3]).unwrap().endpoint;
        assert!((y[2] - r * r).abs() < 1e-12 && y[0].abs() < 1e-15);
        let d = cc_upper(&h, &[0.0; 3], &y, &DistanceOptions::default()).unwrap();
        assert!(d.upper <= 4.0 * r, "r={r}: {}", d.upper);
        assert!(d.lower <= d.upper + 1e-6);
    }
}

#[test]
fn upper_bounds_are_nearly_symmetric() {
    let cases: [(&str, Vec<f64>, Vec<f64>); 3] = [
        ("heisenberg", vec![0.0, 0.0, 0.0], vec![0.05, -0.02, 0.01]),
        ("grushin", vec![0.1, 0.0], vec![-0.05, 0.02]),
        ("heisenberg", vec![0.1, 0.1, 0.0], vec![0.0, 0.05, 0.02]),
    ];
    for (name, x, y) in cases {
        let f = builtin_family(name).unwrap();
        let a = cc_upper(&f, &x, &y, &DistanceOptions::default()).unwrap().upper;
        let b = cc_upper(&f, &y, &x, &DistanceOptions::default()).unwrap().upper;
        let gap = (a - b).abs() / a.max(b);
        assert!(gap <= 0.2, "{name}: {a} vs {b}");
    }
}

#[test]
fn triangle_inequality_with_concatenated_witness() {
    let h = builtin_family("heisenberg").unwrap();
    let (x, y, z) = ([0.0, 0.0, 0.0], [0.05, 0.0, 0.01], [0.02, 0.04, 0.0]);
    let opts = DistanceOptions::default();
    let xy = cc_upper(&h, &x, &y, &opts).unwrap();
    let yz = cc_upper(&h, &y, &z, &opts).unwrap();
    let warm = xy.witness.concat(&yz.witness);
    let xz = cc_upper(&h, &x, &z, &DistanceOptions { warm_start: Some(warm), ..opts }).unwrap();
    assert!(xz.upper <= xy.upper + yz.upper + 1e-6, "{} > {} + {}", xz.upper, xy.upper, yz.upper);
}

#[test]
fn rho_samples_are_reachable_at_comparable_cost() {
    let t = table("heisenberg");
    let r = 0.1;
    let (pts, dropped) = rho_sample(&t, &[0.0; 3], r, 8, 11);
    assert_eq!(dropped, 0);
    let mut fitted = 0.0f64;
    for y in &pts {
        let d = cc_upper(t.family(), &[0.0; 3], y, &DistanceOptions::default()).unwrap();
        fitted = fitted.max(d.upper / r);
    }
    assert!(fitted.is_finite() && fitted <= 4.0, "fitted C = {fitted}");
}

#[test]
fn grushin_ball_is_a_box_of_the_right_shape() {
    let t = table("grushin");
    let mut per_r3 = Vec::new();
    for r in [0.1, 0.05, 0.025] {
        let grid = GridSpec::for_point(&t, &[0.0, 0.0], r, 16).unwrap();
        assert_eq!(grid.axis_weights, vec![1, 2]);
        let b = reachable_grid(t.family(), &[0.0, 0.0], r, &grid).unwrap();
        let cells = grid.cells();
        let (mut ext1, mut ext2) = (0.0f64, 0.0f64);
        for c in &b.cells {
            ext1 = ext1.max(c[0].abs() as f64 * cells[0]);
            ext2 = ext2.max(c[1].abs() as f64 * cells[1]);
        }
        assert!(ext1 <= r * (1.0 + 1e-9));
        assert!(ext2 <= r * r);
        per_r3.push(b.measure / r.powi(3));
    }
    let (lo, hi) = per_r3.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi / lo - 1.0 <= 0.15, "{per_r3:?}");
}

#[test]
fn ball_box_constants_from_the_grid_are_stable() {
    let t = table("grushin");
    let x = [0.0, 0.0];
    let mut fits = Vec::new();
    for r in [0.1, 0.05] {
        let sel = select_maximal(&t, &x, r, 0.5).unwrap().selection;
        let grid = GridSpec::for_point(&t, &x, r, 16).unwrap();
        let ball = reachable_grid(t.family(), &x, r, &grid).unwrap();
        let cells = grid.cells();
        let mut big_c = 0.0f64;
        for c in &ball.cells {
            let y: Vec<f64> = (0..2).map(|k| x[k] + c[k] as f64 * cells[k]).collect();
            let h = invert_e(&t, &sel, &x, &y, &[0.0, 0.0]).unwrap();
            big_c = big_c.max(sel.norm(&h) / r);
        }
        let reached: HashSet<Vec<i64>> = ball.cells.iter().cloned().collect();
        let lands = |c: f64| {
            let qbox = AnisotropicBox::new(sel.clone(), c * r);
            (0..400u64).all(|k| {
                let h = qbox.sample(&mut stream(5, k));
                let y = almost_exponential(&t, &sel, &x, &h).unwrap();
                // Lattice moves of X2 from x1 = i h shift x2 by 2i cells, so
                // membership is judged up to one neighbouring cell.
                let idx: Vec<i64> = (0..2).map(|i| ((y[i] - x[i]) / cells[i]).round() as i64).collect();
                (-1..=1).any(|a| (-1..=1).any(|b| reached.contains(&vec![idx[0] + a, idx[1] + b])))
            })
        };
        let small_c = (0..20).map(|k| 0.9f64.powi(k)).find(|&c| lands(c)).unwrap();
        fits.push((small_c, big_c));
    }
    let (c1, cc1) = fits[0];
    let (c2, cc2) = fits[1];
    assert!((c2 / c1 - 1.0).abs() <= 0.2 && (cc2 / cc1 - 1.0).abs() <= 0.2, "{fits:?}");
}

fn euclidean(n: usize) -> CommutatorTable {
    let params = HashMap::from([("n".to_string(), n as f64)]);
    build_table(Arc::new(builtin_family_with("euclidean", &params).unwrap()))
}

#[test]
fn euclidean_ball_is_the_l1_ball() {
    for (n, k) in [(2usize, 16usize), (3, 32)] {
        let t = euclidean(n);
        let x = vec![0.0; n];
        let r = 0.2;
        let grid = GridSpec::for_point(&t, &x, r, k).unwrap();
        let ball = reachable_grid(t.family(), &x, r, &grid).unwrap();
        let exact = (2.0 * r).powi(n as i32) / (1..=n).product::<usize>() as f64;
        assert!((ball.measure / exact - 1.0).abs() <= 0.1, "n={n}: {} vs {exact}", ball.measure);
        let twice = reachable_grid(t.family(), &x, 2.0 * r, &GridSpec { base: grid.base, ..grid.clone() }).unwrap();
        let ratio = twice.measure / ball.measure;
        assert!((ratio / 2f64.powi(n as i32) - 1.0).abs() <= 0.1, "n={n}: doubling {ratio}");
    }
}

#[test]
fn radius_below_one_step_reaches_only_the_start_cell() {
    let t = table("grushin");
    let grid = GridSpec::for_point(&t, &[0.2, 0.1], 0.1, 16).unwrap();
    let ball = reachable_grid(t.family(), &[0.2, 0.1], 0.5 * grid.dt, &grid).unwrap();
    assert_eq!(ball.reached_cells, 1);
    assert_eq!(ball.measure, grid.cell_volume());
}

#[test]
fn axis_weights_follow_the_maximal_tuple() {
    assert_eq!(axis_weights(&table("heisenberg"), &[0.0; 3], 0.1).unwrap(), vec![1, 1, 2]);
    assert_eq!(axis_weights(&table("martinet"), &[0.0; 3], 0.1).unwrap(), vec![1, 1, 3]);
}

#[test]
fn sampled_ball_box_on_grushin() {
    let t = table("grushin");
    let sel = select_maximal(&t, &[0.0, 0.0], 0.1, 0.5).unwrap().selection;
    let opts = BallboxOptions { samples: 100, forward_samples: 4, injectivity_pairs: 500, ..Default::default() };
    let rep = ballbox_verify(&t, &sel, &[0.0, 0.0], 0.1, 0.5, &opts).unwrap();
    assert!(rep.passed, "{rep}");
    assert!(rep.get("c_inj").unwrap() > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reached_sets_grow_with_the_radius(k in 1usize..6, name in prop::sample::select(vec!["grushin", "heisenberg", "wright"])) {
        let t = table(name);
        let x = vec![0.0; t.family().dim()];
        let grid = GridSpec::for_point(&t, &x, 0.1, 8).unwrap();
        let r = k as f64 * grid.dt;
        let small = reachable_grid(t.family(), &x, r, &grid).unwrap();
        let large = reachable_grid(t.family(), &x, 2.0 * r, &grid).unwrap();
        let big: HashSet<&Vec<i64>> = large.cells.iter().collect();
        prop_assert!(small.cells.iter().all(|c| big.contains(c)));
    }
}
