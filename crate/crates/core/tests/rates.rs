use kac_core::rates::{
    conditioned_rate, entropic_rate, epsilon_n, l1_eta, l1_eta_numerical, l1_exponent_terms, l1_qstar, n_min,
    vonbahr_bound, vonbahr_min_n, w2_rate, wr_rate, Constant,
};
use proptest::prelude::*;

#[test]
fn exact_table_values() {
    assert!((l1_eta(1, 2.0, 0.0).unwrap() - 0.25).abs() < 1e-12);
    assert!((l1_qstar(1, 2.0, 0.0).unwrap() - 0.375).abs() < 1e-12);
    assert!((wr_rate(6.0, 3.0).unwrap().0 - 0.75).abs() < 1e-12);
    assert!((entropic_rate(6.0).unwrap().eta_max - 1.0 / 14.0).abs() < 1e-12);
    assert!((n_min(1, 2.0).unwrap() - 4.0).abs() < 1e-12);
    assert!((vonbahr_bound(256.0, 0.25, 2.0, 3.0).unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn epsilon_constant_regression() {
    let d = 1.0 - 2f64.powf(-0.5);
    let direct = (10.0 + 2.0 * (1.0 + 2.0 / d.sqrt())) / d;
    let (eps, c) = epsilon_n(1, 0.5, 100.0).unwrap();
    assert!((c - direct).abs() < 1e-12);
    assert!((c - 66.205_138_987_668_76).abs() < 1e-9);
    assert!((eps - c / 10.0).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for n in [2.0, 10.0, 1e3, 1e6] {
        let e = epsilon_n(2, 0.3, n).unwrap().0;
        assert!(e < prev);
        prev = e;
    }
}

#[test]
fn unknown_constants_have_no_value() {
    for pred in [w2_rate(6.0).unwrap(), wr_rate(6.0, 3.0).unwrap().1, conditioned_rate(1.0).unwrap()] {
        assert_eq!(pred.constant, Constant::Unknown);
        assert!(pred.value(100.0).is_none());
    }
}

#[test]
fn domain_errors() {
    assert!(w2_rate(2.0).is_err());
    assert!(wr_rate(3.0, 3.5).is_err());
    assert!(l1_eta(0, 1.0, 0.0).is_err());
    assert!(l1_eta(1, 0.0, 0.0).is_err());
    assert!(l1_qstar(1, 1.0, -1.0).is_err());
    assert!(epsilon_n(1, 1.0, 10.0).is_err());
    assert!(entropic_rate(4.0).is_err());
    assert!(vonbahr_min_n(1, 0.0, 1.0).is_err());
}

// Closed-form η and q* against numerical maximization of min(η₁, η₂, η₃)
// on a 10 × 10 × 10 parameter grid.
#[test]
fn exponent_terms_cross_check() {
    for k in 1..=10 {
        for i in 1..=10 {
            let delta = 0.2 * i as f64;
            for j in 0..10 {
                let r = 0.5 * j as f64;
                let (max, argmax) = l1_eta_numerical(k, delta, r, 10_000).unwrap();
                let eta = l1_eta(k, delta, r).unwrap();
                let q = l1_qstar(k, delta, r).unwrap();
                assert!((max - eta).abs() < 1e-6, "k={k} δ={delta} r={r}: {max} vs {eta}");
                assert!((argmax - q).abs() < 1e-3);
                for s in 0..=100 {
                    let (_, e2, e3) = l1_exponent_terms(k, delta, r, s as f64 / 100.0);
                    assert!(e2 <= e3 + 1e-15);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn qstar_balances_first_two_exponents(k in 1usize..20, delta in 0.01f64..=2.0, r in 0.0f64..10.0) {
        let q = l1_qstar(k, delta, r).unwrap();
        let eta = l1_eta(k, delta, r).unwrap();
        let (e1, e2, e3) = l1_exponent_terms(k, delta, r, q);
        prop_assert!((e1 - eta).abs() < 1e-12);
        prop_assert!((e2 - eta).abs() < 1e-12);
        prop_assert!(e3 >= eta);
        prop_assert!(eta > 0.0 && eta < 0.25 + 1e-15);
    }

    #[test]
    fn wr_shape_scales_w2_shape(p in 2.1f64..12.0, frac in 0.01f64..0.99) {
        let r = 2.0 + frac * (p - 2.0);
        let (b, pred) = wr_rate(p, r).unwrap();
        let w2 = w2_rate(p).unwrap();
        prop_assert!((b - (p - r) / (p - 2.0)).abs() < 1e-12);
        prop_assert!(b > 0.0 && b < 1.0);
        prop_assert!((pred.shape.exponent - b * w2.shape.exponent).abs() < 1e-12);
    }

    #[test]
    fn entropic_supremum_below_eighth(k in 4.01f64..1e6) {
        let e = entropic_rate(k).unwrap();
        prop_assert!(e.eta_max > 0.0 && e.eta_max < 0.125);
        prop_assert!(e.strict);
        prop_assert!((e.study_eta - (e.eta_max - 0.01)).abs() < 1e-15);
    }
}
