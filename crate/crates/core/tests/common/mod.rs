#![allow(dead_code)]

use kac_core::density::DensityModel;
use kac_core::sphere::log_surface_area;

/// Composite Simpson rule with `n` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

// log h(y) = log|S^{N−1}(1)| + log ∫_0^∞ ρ^{N−1} Π f(ρ y_i/√N) dρ by composite Simpson.
pub fn radial_oracle(base: &DensityModel, y: &[f64]) -> f64 {
    let n = y.len();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = y.iter().map(|v| v / norm).collect();
    let g = |rho: f64| -> f64 {
        if rho == 0.0 {
            return f64::NEG_INFINITY;
        }
        (n as f64 - 1.0) * rho.ln() + u.iter().map(|&v| base.log_pdf(rho * v)).sum::<f64>()
    };
    let (a, b, steps) = (0.0, 20.0 + 4.0 * (n as f64).sqrt(), 200_000);
    let h = (b - a) / steps as f64;
    let vals: Vec<f64> = (0..=steps).map(|i| g(a + i as f64 * h)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * (v - top).exp();
    }
    log_surface_area(n, 1.0).unwrap() + top + (s * h / 3.0).ln()
}

// log Z and the per-particle entropy of the conditioned state at N = 4 by a
// midpoint rule in hyperspherical coordinates on the radius-2 sphere.
pub fn conditioned_oracle(base: &DensityModel) -> (f64, f64) {
    let (na, nb, nc) = (160, 160, 320);
    let pi = std::f64::consts::PI;
    let (ha, hb, hc) = (pi / na as f64, pi / nb as f64, 2.0 * pi / nc as f64);
    let (mut z, mut zl) = (0.0, 0.0);
    for i in 0..na {
        let a = (i as f64 + 0.5) * ha;
        let (sa, ca) = a.sin_cos();
        for j in 0..nb {
            let b = (j as f64 + 0.5) * hb;
            let (sb, cb) = b.sin_cos();
            let w = sa * sa * sb;
            for l in 0..nc {
                let c = (l as f64 + 0.5) * hc;
                let (sc, cc) = c.sin_cos();
                let y = [2.0 * ca, 2.0 * sa * cb, 2.0 * sa * sb * cc, 2.0 * sa * sb * sc];
                let lf: f64 = y.iter().map(|&v| base.log_pdf(v)).sum();
                let f = lf.exp();
                z += w * f;
                zl += w * f * lf;
            }
        }
    }
    let norm = ha * hb * hc / (2.0 * pi * pi);
    let (z, zl) = (z * norm, zl * norm);
    (z.ln(), (zl / z - z.ln()) / 4.0)
}

