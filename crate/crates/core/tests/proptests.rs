use kac_core::density::DensityModel;
use kac_core::rescaled::{angular_density, SphericalDensityKernel};
use kac_core::sphere::{rescale, PsiMap};
use kac_core::Welford;
use proptest::prelude::*;

fn vector(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn rescale_lands_on_sphere_and_is_idempotent(x in vector(1..40)) {
        let n = x.len() as f64;
        let p = rescale(&x).unwrap();
        let norm2: f64 = p.coords().iter().map(|v| v * v).sum();
        prop_assert!((norm2 - n).abs() < 1e-12 * n);
        let again = rescale(p.coords()).unwrap();
        for (a, b) in again.coords().iter().zip(p.coords()) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rescale_ignores_positive_scaling(x in vector(1..20), lambda in 1e-3f64..1e3) {
        let y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
        let (p, q) = (rescale(&x).unwrap(), rescale(&y).unwrap());
        for (a, b) in p.coords().iter().zip(q.coords()) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn psi_round_trip(n in 10.0f64..1e5, q in 0.05f64..0.95, u in -0.95f64..0.95, k in 1usize..4, s in 0.0f64..2.0, seed in 0u64..1000) {
        let map = PsiMap::quantitative(n, q, u, k).unwrap();
        let dir: Vec<f64> = (0..k).map(|j| ((seed + 7 * j as u64) as f64).sin() + 0.1).collect();
        let r = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z: Vec<f64> = dir.iter().map(|v| v * s * map.threshold() / r).collect();
        let (x, _) = map.inverse(&z).unwrap();
        let back = map.forward(&x).unwrap();
        for (a, b) in back.iter().zip(&z) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn welford_merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut whole = Welford::new();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Welford::new(), Welford::new());
        xs[..cut].iter().for_each(|&x| a.push(x));
        xs[cut..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.count(), whole.count());
        prop_assert!((a.mean() - whole.mean()).abs() < 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((a.variance() - whole.variance()).abs() < 1e-8 * (1.0 + whole.variance()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_permutation_symmetric(x in vector(5..6), rot in 1usize..5) {
        let k = SphericalDensityKernel::new(DensityModel::mixture(0.6, 0.8).unwrap(), 5).unwrap();
        let mut y = x.clone();
        y.rotate_left(rot);
        y.swap(0, 1);
        let a = angular_density(&k, &x).unwrap().log_h;
        let b = angular_density(&k, &y).unwrap().log_h;
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }
}
