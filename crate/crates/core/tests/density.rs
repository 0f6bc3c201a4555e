use kac_core::density::{Derivative, DensityModel};
use kac_core::{Error, StreamKey, Welford};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn cdf(model: &DensityModel, x: f64) -> f64 {
    use kac_core::Family::*;
    match model.family() {
        Gaussian { mean, sd } => Normal::new(mean, sd).unwrap().cdf(x),
        SymmetricMixture { offset, sd } => {
            0.5 * (Normal::new(-offset, sd).unwrap().cdf(x) + Normal::new(offset, sd).unwrap().cdf(x))
        }
        StudentT { nu } => {
            let scale = ((nu - 2.0) / nu).sqrt();
            StudentsT::new(0.0, 1.0, nu).unwrap().cdf(x / scale)
        }
        Uniform { half_width } => ((x + half_width) / (2.0 * half_width)).clamp(0.0, 1.0),
    }
}

#[test]
fn evaluation_examples() {
    let g = DensityModel::standard_gaussian();
    assert!((g.evaluate(0.0).pdf - 0.398_942_280_4).abs() < 1e-10);
    match g.evaluate(1.0).derivative {
        Derivative::Value(d) => assert!((d + 0.241_970_724_519_143_37).abs() < 1e-12),
        Derivative::Undefined => panic!("gaussian derivative is defined"),
    }
    let m = DensityModel::mixture(0.6, 0.8).unwrap();
    let direct = 0.5 * (2.0 * (-0.36f64 / 1.28).exp()) / (0.8 * (2.0 * std::f64::consts::PI).sqrt());
    assert!((m.pdf(0.0) - direct).abs() < 1e-14);
    let u = DensityModel::unit_uniform();
    assert_eq!(u.evaluate(3f64.sqrt()).derivative, Derivative::Undefined);
    assert_eq!(u.pdf(2.0), 0.0);
    assert_eq!(u.log_pdf(2.0), f64::NEG_INFINITY);
}

#[test]
fn catalog_normalization_and_energy() {
    for model in DensityModel::catalog() {
        let (lo, hi) = match model.support().bounds() {
            (a, b) if a.is_finite() => (a, b),
            _ => (-400.0, 400.0),
        };
        let n = 400_000;
        let mass = simpson(|x| model.pdf(x), lo, hi, n);
        let tail = if lo == -400.0 { 2.0 * cdf(&model, -400.0) } else { 0.0 };
        assert!((mass + tail - 1.0).abs() < 1e-8, "{}: mass {mass}", model.name());
        if model.moment_order() > 3.0 {
            let energy = simpson(|x| x * x * model.pdf(x), lo, hi, n);
            assert!(model.unit_energy());
            assert!((energy - 1.0).abs() < 1e-6, "{}: energy {energy}", model.name());
        }
        for x in [-2.5, -0.3, 0.0, 0.7, 1.6] {
            let p = model.pdf(x);
            if p > 0.0 {
                assert!((model.log_pdf(x).exp() - p).abs() <= 1e-12 * p);
            }
        }
    }
}

#[test]
fn samplers_pass_ks() {
    let m = 100_000;
    let crit = 1.949 / (m as f64).sqrt();
    for (i, model) in DensityModel::catalog().into_iter().enumerate() {
        let mut rng = StreamKey::new(11).index(i as u64).rng(0);
        let mut xs = vec![0.0; m];
        model.sample_into(&mut rng, &mut xs);
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let c = cdf(&model, x);
                (c - j as f64 / m as f64).abs().max(((j + 1) as f64 / m as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < crit, "{}: KS {d} >= {crit}", model.name());
    }
}

#[test]
fn functionals_closed_forms() {
    let g = DensityModel::standard_gaussian();
    assert_eq!(g.rel_entropy_gaussian().unwrap().value, 0.0);
    assert_eq!(g.rel_fisher_gaussian().unwrap().value, 0.0);
    assert!((g.moment(2.0).unwrap().value - 1.0).abs() < 1e-12);
    assert!((g.moment(4.0).unwrap().value - 3.0).abs() < 1e-12);
    let n = DensityModel::gaussian(0.6, 0.8).unwrap();
    assert!((n.rel_entropy_gaussian().unwrap().value - 0.223_143_551_314_209_7).abs() < 1e-7);
    assert!((n.rel_fisher_gaussian().unwrap().value - 0.5625).abs() < 1e-12);
    let t5 = DensityModel::student_t(5.0).unwrap();
    assert!((t5.moment(4.0).unwrap().value - 9.0).abs() < 1e-10);
    assert!(t5.moment(5.0).unwrap().is_infinite());
    assert!(DensityModel::student_t(3.0).unwrap().moment(3.5).unwrap().is_infinite());
    assert!(matches!(
        DensityModel::unit_uniform().rel_fisher_gaussian(),
        Err(Error::Unsupported { .. })
    ));
}

#[test]
fn quadrature_moments_match_simpson() {
    let m = DensityModel::mixture(0.6, 0.8).unwrap();
    for p in [1.0, 2.5, 4.0] {
        let q = m.moment(p).unwrap();
        let s = simpson(|x| x.abs().powf(p) * m.pdf(x), -30.0, 30.0, 600_000);
        assert!((q.value - s).abs() < 1e-8, "p = {p}: {} vs {s}", q.value);
    }
    // Reference value from an independent adaptive quadrature of the mixture integrand.
    assert!((m.rel_fisher_gaussian().unwrap().value - 0.018_222_328_791_898_39).abs() < 1e-9);
}

// Quadrature against plain Monte Carlo plug-in, M = 10⁶, for every smooth member.
#[test]
fn functionals_match_monte_carlo() {
    let m = 1_000_000;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for (i, model) in DensityModel::catalog().into_iter().enumerate() {
        let mut rng = StreamKey::new(17).index(i as u64).rng(0);
        let (mut h, mut fi) = (Welford::new(), Welford::new());
        for _ in 0..m {
            let x = model.sample(&mut rng);
            h.push(model.log_pdf(x) + half_log_2pi + 0.5 * x * x);
            if let Some(s) = model.score(x) {
                fi.push((s + x) * (s + x));
            }
        }
        let hq = model.rel_entropy_gaussian().unwrap();
        assert!(hq.value >= 0.0);
        assert!(
            (hq.value - h.mean()).abs() <= 3.0 * h.std_error() + 1e-12,
            "{}: H {} vs MC {} ± {}",
            model.name(),
            hq.value,
            h.mean(),
            h.std_error()
        );
        if model.differentiable() {
            let iq = model.rel_fisher_gaussian().unwrap();
            assert!(iq.value >= 0.0);
            assert!(
                (iq.value - fi.mean()).abs() <= 3.0 * fi.std_error() + 1e-12,
                "{}: I {} vs MC {} ± {}",
                model.name(),
                iq.value,
                fi.mean(),
                fi.std_error()
            );
        }
    }
}
