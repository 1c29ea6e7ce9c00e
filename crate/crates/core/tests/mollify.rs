use std::sync::Arc;

use ballbox_core::acceptance::planar_first_moment;
use ballbox_core::approxexp::geometric_grid;
use ballbox_core::fields::{builtin_family, BoxDomain, ExprField, FieldSource, Kink, Smoothness, VectorFieldFamily, Word};
use ballbox_core::mollify::{
    convergence_check, mollified_bracket, mollified_commutator, mollify_family, uniform_bound_check, sigma_max,
};
use proptest::prelude::*;

fn w(s: &str) -> Word {
    Word::parse(s).unwrap()
}

/// `X1 = ∂1`, `X2 = a(x1 − p) ∂2` with `a(s) = s + s|s|`, kink at `x1 = p`.
fn shifted_step2(p: f64) -> VectorFieldFamily {
    let a = format!("(x1 - {p}) + (x1 - {p})*abs(x1 - {p})");
    let fields: Vec<Arc<dyn FieldSource>> =
        vec![Arc::new(ExprField::parse(&["1", "0"]).unwrap()), Arc::new(ExprField::parse(&["0", &a]).unwrap())];
    VectorFieldFamily::new("shifted", 2, fields, BoxDomain::cube(2, 1.0), BoxDomain::cube(2, 2.0), Smoothness::As)
        .unwrap()
        .with_kinks(vec![Kink { axis: 0, at: p }])
}

#[test]
fn bracket_at_the_kink_matches_the_first_moment() {
    let f = builtin_family("nonsmooth_step2").unwrap();
    let m1 = planar_first_moment();
    for sigma in [1e-3, 1e-2, 1e-1] {
        let mf = mollify_family(&f, sigma, 32).unwrap();
        let c = mollified_commutator(&mf, &w("1,2"), &[0.0, 0.2]).unwrap();
        let want = 1.0 + 2.0 * sigma * m1;
        assert!((c[1] - want).abs() <= 1e-6 * sigma, "sigma={sigma}: {} vs {want}", c[1]);
        assert!(c[1] > 1.0 && c[1] < 1.0 + 2.0 * sigma);
    }
}

#[test]
fn mollified_coefficient_vanishes_at_the_kink() {
    let f = builtin_family("nonsmooth_step2").unwrap();
    let mf = mollify_family(&f, 0.05, 32).unwrap();
    let mut out = [0.0; 2];
    mf.family().eval_field(1, &[0.0, 0.0], &mut out);
    assert!(out[1].abs() < 1e-15, "{out:?}");
}

#[test]
fn heisenberg_is_unchanged() {
    let h = builtin_family("heisenberg").unwrap();
    let mf = mollify_family(&h, 0.1, 12).unwrap();
    for x in [[0.0, 0.0, 0.0], [0.3, -0.4, 0.2]] {
        let c = mollified_commutator(&mf, &w("1,2"), &x).unwrap();
        assert!((c[2] - 1.0).abs() < 1e-13 && c[0].abs() < 1e-13 && c[1].abs() < 1e-13);
        let mut out = [0.0; 3];
        mf.family().eval_field(0, &x, &mut out);
        assert!((out[2] + x[1] / 2.0).abs() < 1e-14);
    }
    let u = uniform_bound_check(&h, &[1e-3, 1e-2], &h.omega_inner().grid(3), 8).unwrap();
    assert!(u.passed && u.get("bound").unwrap() < 1e-9, "{u}");
}

#[test]
fn grushin_uniform_bound_is_zero() {
    let g = builtin_family("grushin").unwrap();
    let u = uniform_bound_check(&g, &[1e-3, 1e-2], &g.omega_inner().grid(5), 16).unwrap();
    assert!(u.passed && u.get("bound").unwrap() < 1e-9, "{u}");
}

#[test]
fn smooth_families_converge_exactly_or_fast() {
    let h = builtin_family("heisenberg").unwrap();
    let r = convergence_check(&h, &w("1,2"), &[1e-3, 1e-2], &h.omega_inner().grid(3), 8).unwrap();
    assert!(r.passed && r.notes.iter().any(|n| n.contains("exact")), "{r}");
    let single = convergence_check(&builtin_family("wright").unwrap(), &w("1,2"), &[1e-2], &[vec![0.0, 0.0]], 16).unwrap();
    assert!(single.passed && single.get("slope").is_none());
}

#[test]
fn convergence_rate_predicts_the_smallest_sigma() {
    let f = builtin_family("nonsmooth_step2").unwrap();
    let grid: Vec<Vec<f64>> = (0..=40).map(|i| vec![-0.5 + i as f64 / 40.0, 0.0]).collect();
    let sigmas = geometric_grid(1e-4, 1e-2, 3);
    let r = convergence_check(&f, &w("1,2"), &sigmas, &grid, 32).unwrap();
    let (slope, c) = (r.get("slope").unwrap(), r.get("constant").unwrap());
    let predicted = c * sigmas[0].powf(slope);
    let observed = 2.0 * sigmas[0] * planar_first_moment();
    assert!(observed <= 10.0 * predicted);
    assert!(r.get("bracket_vs_mollified_c").unwrap().is_finite());
}

#[test]
fn shear_brackets_commute_with_mollification_at_step_three() {
    // X1 = ∂1, X2 = ∂2 + x1²|x1| ∂3: the third derivative of the coefficient is kinked.
    let fields: Vec<Arc<dyn FieldSource>> = vec![
        Arc::new(ExprField::parse(&["1", "0", "0"]).unwrap()),
        Arc::new(ExprField::parse(&["0", "1", "x1*x1*abs(x1)"]).unwrap()),
    ];
    let f = VectorFieldFamily::new("kinked3", 3, fields, BoxDomain::cube(3, 1.0), BoxDomain::cube(3, 2.0), Smoothness::As)
        .unwrap()
        .with_kinks(vec![Kink { axis: 0, at: 0.0 }]);
    let sigma = 0.05;
    let mf = mollify_family(&f, sigma, 12).unwrap();
    let x = [0.0, 0.0, 0.0];
    let a = mollified_commutator(&mf, &w("1,1,2"), &x).unwrap();
    let b = mollified_bracket(&f, &w("1,1,2"), sigma, 12, &x).unwrap();
    // f_{112} = (0, 0, 6|x1|): both mollify the same function here, so they agree.
    assert!((a[2] - b[2]).abs() < 1e-9, "{a:?} {b:?}");
    assert!(a[2] > 0.0);
}

#[test]
fn sigma_limit_is_half_the_margin() {
    let f = builtin_family("nonsmooth_step2").unwrap();
    assert_eq!(sigma_max(&f), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mollification_commutes_with_translation(p in -0.3f64..0.3, x1 in -0.5f64..0.5, x2 in -0.5f64..0.5, sigma in 1e-3f64..0.1) {
        let base = mollify_family(&builtin_family("nonsmooth_step2").unwrap(), sigma, 32).unwrap();
        let moved = mollify_family(&shifted_step2(p), sigma, 32).unwrap();
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        moved.family().eval_field(1, &[x1 + p, x2], &mut a);
        base.family().eval_field(1, &[x1, x2], &mut b);
        prop_assert!((a[1] - b[1]).abs() <= 1e-9, "{a:?} vs {b:?}");
        let ca = mollified_commutator(&moved, &w("1,2"), &[x1 + p, x2]).unwrap();
        let cb = mollified_commutator(&base, &w("1,2"), &[x1, x2]).unwrap();
        prop_assert!((ca[1] - cb[1]).abs() <= 1e-9);
    }
}
