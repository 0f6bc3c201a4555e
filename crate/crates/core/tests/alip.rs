use kac_core::alip::{
    approx_mollify, approx_power, approx_step, distortion_bound, distortion_l1, fit_r, fit_r_pairs, measured_lipschitz,
    mollify_sweep, Deformation, HolderTarget, TestFunction,
};
use kac_core::Error;

fn sweep(from: f64, decades: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|j| from * 10f64.powf(-decades * j as f64 / (points - 1) as f64))
        .collect()
}

// |x|^a on [−R, R] against its linear interpolation on [−h, h]: the L¹ gap is
// 2∫_0^h (x^a − h^{a−1}x) dx = 2h^{1+a}(1/(1+a) − 1/2) = |a(a−1)|/(1+a)·h^{1+a}
// (R = 1), and the slope is |a|h^{a−1} just outside the core.
fn power_oracle(a: f64, h: f64) -> (f64, f64) {
    ((a * (a - 1.0)).abs() / (1.0 + a) * h.powf(1.0 + a), a.abs() * h.powf(a - 1.0))
}

#[test]
fn power_construction_matches_oracle() {
    for a in [-0.75, -0.5, -0.2, 0.3, 0.5, 0.9] {
        for h in [0.3, 0.05, 1e-3, 1e-5] {
            let f = approx_power(a, h, 1.0).unwrap();
            let (err, lip) = power_oracle(a, h);
            assert!((f.l1_error - err).abs() < 1e-7 * err, "a={a} h={h}: {} vs {err}", f.l1_error);
            assert!((f.lip_constant - lip).abs() < 0.01 * lip, "a={a} h={h}: {} vs {lip}", f.lip_constant);
            assert!(f.l1_error > 0.0);
        }
    }
    assert!(approx_power(-1.0, 0.1, 1.0).is_err());
    assert!(approx_power(0.5, 2.0, 1.0).is_err());
}

#[test]
fn power_exponents_follow_table() {
    let hs = sweep(0.3, 4.5, 10);
    for (a, tol) in [(-0.5, 0.3), (0.5, 0.05)] {
        let fams: Vec<_> = hs.iter().map(|&h| approx_power(a, h, 1.0).unwrap()).collect();
        let fit = fit_r(&fams).unwrap();
        let want = (1.0 - a) / (1.0 + a);
        assert!((fit.r_hat - want).abs() < tol, "a={a}: {}", fit.r_hat);
        assert!((fit.r_hat - want).abs() < 0.1 * want);
    }
    let linear: Vec<_> = hs.iter().map(|&h| approx_power(1.0, h, 1.0).unwrap()).collect();
    let fit = fit_r(&linear).unwrap();
    assert!(fit.exact_lipschitz && fit.r_hat.abs() <= 0.05);
    assert!(linear.iter().all(|f| (f.lip_constant - 1.0).abs() < 1e-9));
}

#[test]
fn step_ramp_examples() {
    let f = approx_step(0.1).unwrap();
    assert!((f.l1_error - 0.025).abs() < 1e-12);
    assert!((f.lip_constant - 10.0).abs() < 0.1);
    let one = approx_step(1.0).unwrap();
    assert!((one.l1_error - 0.25).abs() < 1e-12 && (one.lip_constant - 1.0).abs() < 0.01);
    let fams: Vec<_> = sweep(1.0, 4.0, 9).iter().map(|&h| approx_step(h).unwrap()).collect();
    for f in &fams {
        assert!((f.l1_error - f.parameter / 4.0).abs() < 1e-12);
        assert!((f.lip_constant * f.l1_error - 0.25).abs() < 0.05 * 0.25);
    }
    let fit = fit_r(&fams).unwrap();
    assert!((fit.r_hat - 1.0).abs() < 0.05);
    assert!(approx_step(0.0).is_err() && approx_step(1.5).is_err());
}

#[test]
fn recorded_lipschitz_matches_grid_measurement() {
    let h = 0.02;
    let ramp = |x: f64| (0.5 + x / h).clamp(0.0, 1.0);
    let measured = measured_lipschitz(ramp, -1.0, 1.0, &[-0.5 * h, 0.5 * h], 1.0);
    assert!((measured - approx_step(h).unwrap().lip_constant).abs() < 0.01 * measured);
    let a = -0.5;
    let core = |x: f64| if x.abs() >= h { x.abs().powf(a) } else { h.powf(a) };
    let m = measured_lipschitz(core, -1.0, 1.0, &[-h, h], 1.0);
    let rec = approx_power(a, h, 1.0).unwrap().lip_constant;
    assert!((m - rec).abs() < 0.01 * rec, "{m} vs {rec}");
}

#[test]
fn mollified_gaussian_is_lipschitz_class() {
    let deltas = sweep(1.0, 2.1, 8);
    let fams = mollify_sweep(&HolderTarget::Gaussian, &deltas, 4.0).unwrap();
    let fit = fit_r(&fams).unwrap();
    assert!(fit.r_hat <= 0.05, "{}", fit.r_hat);
    let peak = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for f in &fams {
        assert!(f.lip_constant <= peak * 1.001);
        assert!(f.lip_constant <= f.lip_bound.unwrap());
    }
}

#[test]
fn mollified_weierstrass_sweep() {
    let target = HolderTarget::Weierstrass { alpha: 0.5, beta: 2.0, terms: 20 };
    let deltas: Vec<f64> = (0..15).map(|j| 2f64.powi(-j)).collect();
    let fams = mollify_sweep(&target, &deltas, 2.0).unwrap();
    for w in fams.windows(2) {
        assert!(w[1].l1_error < w[0].l1_error);
    }
    for f in &fams {
        assert!(f.lip_constant <= f.lip_bound.unwrap());
    }
    // Measured Lipschitz constants grow like δ^{α−1} and errors like δ^α.
    let fit = fit_r(&fams).unwrap();
    assert!((fit.r_hat - 1.0).abs() < 0.15, "{}", fit.r_hat);
    let single = approx_mollify(&target, deltas[3], 2.0).unwrap();
    assert!((single.l1_error - fams[3].l1_error).abs() < 0.05 * fams[3].l1_error);
}

#[test]
fn fit_requires_wide_sweeps() {
    let errs = [1e-1, 5e-2, 2e-2, 1e-2, 5e-3];
    let lips = [1.0, 2.0, 5.0, 10.0, 20.0];
    assert!(matches!(fit_r_pairs(&errs, &lips), Err(Error::Insufficient { .. })));
    let errs = [1e-1, 8e-2, 6e-2, 4e-2, 2e-2, 1e-2];
    assert!(matches!(fit_r_pairs(&errs, &[1.0; 6]), Err(Error::Insufficient { .. })));
}

#[test]
fn distortion_identity_and_bounds() {
    for g in [TestFunction::GaussianProduct { k: 1 }, TestFunction::GaussianProduct { k: 2 }, TestFunction::Indicator] {
        let k = g.dim();
        let id = distortion_l1(&g, &Deformation::Identity { k }).unwrap();
        assert!(id.measured.value.abs() < 1e-12);
        assert_eq!(id.epsilon, 0.0);
    }
    let r = distortion_l1(
        &TestFunction::GaussianProduct { k: 1 },
        &Deformation::PsiInverse { n: 1e4, q: 0.5, u: 0.5, k: 1 },
    )
    .unwrap();
    assert!(r.measured.value >= 0.0 && r.within_bound());
    assert!(r.bound_theoretical.unwrap() >= r.bound);
}

#[test]
fn distortion_sweep_respects_bound_shape() {
    let fns = [
        TestFunction::GaussianProduct { k: 1 },
        TestFunction::GaussianProduct { k: 2 },
        TestFunction::Indicator,
        TestFunction::SmoothedIndicator { width: 0.25 },
    ];
    for g in fns {
        let reg = g.regularity();
        let k = g.dim();
        let shape = 1.0 / (1.0 + reg.r + (k as f64 + 1.0) / reg.beta);
        let mut prev = f64::INFINITY;
        for n in [1e2, 1e3, 1e4, 1e5, 1e6] {
            let d = distortion_l1(&g, &Deformation::PsiInverse { n, q: 0.5, u: 0.5, k }).unwrap();
            assert!(d.within_bound(), "{} N={n}: {} > {}", d.function, d.measured.value, d.bound);
            assert!((d.bound - distortion_bound(d.epsilon, k, &reg)).abs() < 1e-15);
            let scaled = d.measured.value / d.epsilon.powf(shape);
            assert!(scaled <= prev * 1.0001, "{} N={n}", d.function);
            prev = scaled;
        }
    }
}
