//! Quantitative chaos functionals of rescaled product measures: coupling
//! bounds on Wasserstein distances, the L¹ distance of the one-particle
//! marginal, entropy and Fisher information per particle, and tail checks.

use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::error::{domain, Error, Result};
use crate::estimate::{EstimateWithError, Method, Welford};
use crate::quadrature::{integrate, integrate_split, GaussLegendre};
use crate::rates::{delta_bar, vonbahr_bound, vonbahr_min_n};
use crate::rescaled::{ConditionedState, Marginal1, RescaledLaw, SphericalDensityKernel};
use crate::rng::{fold_samples, map_indices, SampleRng, StreamKey};
use crate::sphere::{fill_gaussian, norm2};
use crate::stats::{fit_loglog, LineFit};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Samples whose quadrature error is audited: one in `AUDIT_EVERY`.
pub const AUDIT_EVERY: usize = 16;

/// Samples whose gradient is checked by finite differences: one in `FD_EVERY`.
pub const FD_EVERY: usize = 100;

/// Largest tolerated fraction of samples excluded for radial underflow.
pub const UNDERFLOW_LIMIT: f64 = 1e-3;

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

fn merge_welfords<const K: usize>(a: &mut [Welford; K], b: &[Welford; K]) {
    for (x, y) in a.iter_mut().zip(b) {
        x.merge(y);
    }
}

fn require_unit_energy(op: &'static str, base: &DensityModel) -> Result<()> {
    if !base.unit_energy() {
        return Err(domain(op, format!("{} does not have unit energy", base.name())));
    }
    Ok(())
}

/// `E[(√Q_N − 1)²] = (1/N) E|X − X̂|²`, which bounds `(1/N) W₂(f̂^N, f^{⊗N})²`.
pub fn w2_coupling_estimate(law: &RescaledLaw, m: usize, seed: u64) -> Result<EstimateWithError> {
    require_unit_energy("w2_coupling_estimate", &law.base)?;
    let n = law.n as f64;
    let key = StreamKey::new(seed).label("w2").index(law.n as u64);
    let acc = fold_samples(
        &key,
        m,
        || (Welford::new(), vec![0.0; law.n]),
        |(acc, x), rng, _| {
            let q = law.draw_product(rng, x) / n;
            let d = q.sqrt() - 1.0;
            acc.push(d * d);
            Ok(())
        },
        |(a, _), (b, _)| a.merge(&b),
    )?;
    Ok(acc.0.estimate(seed))
}

/// `(1/N) E Σ|X_i − X̂_i|^r = E[(1/N) Σ|X_i|^r |1 − Q_N^{−1/2}|^r]`, which
/// bounds `(1/N) W_r^r` for the coordinate `ℓ^r` cost.
pub fn wr_coupling_estimate(law: &RescaledLaw, r: f64, m: usize, seed: u64) -> Result<EstimateWithError> {
    if !(r >= 2.0 && r.is_finite()) {
        return Err(domain("wr_coupling_estimate", format!("need r >= 2, got {r}")));
    }
    let p = law.base.moment_order();
    if p <= r {
        return Err(Error::MomentInsufficient {
            op: "wr_coupling_estimate",
            density: law.base.name(),
            required: r,
            available: p,
        });
    }
    let n = law.n as f64;
    let key = StreamKey::new(seed).label("wr").index(law.n as u64);
    let acc = fold_samples(
        &key,
        m,
        || (Welford::new(), vec![0.0; law.n]),
        |(acc, x), rng, _| {
            let q = law.draw_product(rng, x) / n;
            let factor = (1.0 - q.sqrt().recip()).abs().powf(r);
            let s: f64 = x.iter().map(|v| v.abs().powf(r)).sum();
            acc.push(s / n * factor);
            Ok(())
        },
        |(a, _), (b, _)| a.merge(&b),
    )?;
    Ok(acc.0.estimate(seed))
}

/// Squared 2-Wasserstein distance between the first coordinate of `f̂^N`
/// and `f` by the one-dimensional quantile coupling of two samples of size
/// `m/10`, averaged over 10 independent batches. A diagnostic only: the
/// sample-to-sample distance is biased upward at finite `m`.
pub fn marginal_w2_quantile(law: &RescaledLaw, m: usize, seed: u64) -> Result<EstimateWithError> {
    let per = m / 10;
    if per < 10 {
        return Err(domain("marginal_w2_quantile", format!("need M >= 100, got {m}")));
    }
    let key = StreamKey::new(seed).label("marginal_w2_quantile").index(law.n as u64);
    let batches = map_indices(10, |b| {
        let mut rng = key.rng(b as u64);
        let mut x = vec![0.0; law.n];
        let mut hat = Vec::with_capacity(per);
        let mut direct = Vec::with_capacity(per);
        for _ in 0..per {
            law.draw_rescaled(&mut rng, &mut x);
            hat.push(x[0]);
            direct.push(law.base.sample(&mut rng));
        }
        hat.sort_by(f64::total_cmp);
        direct.sort_by(f64::total_cmp);
        Ok(hat.iter().zip(&direct).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / per as f64)
    })?;
    let mut acc = Welford::new();
    batches.iter().for_each(|&v| acc.push(v));
    let mut est = acc.estimate(seed);
    est.samples = (10 * per) as u64;
    Ok(est)
}

/// `‖Π₁f̂^N − f‖_{L¹(ℝ)}`: composite Gauss-Legendre over `(−√N, √N)` with
/// `quad_nodes / 16` panels of 16 nodes, plus the mass of `f` outside.
///
/// The standard error integrates the pointwise standard error of the
/// marginal; the error bound adds the difference against half as many
/// panels and the pointwise quadrature bounds.
pub fn l1_marginal_distance(law: &RescaledLaw, m_mix: usize, quad_nodes: usize, seed: u64) -> Result<EstimateWithError> {
    if quad_nodes < 32 || quad_nodes % 32 != 0 {
        return Err(domain(
            "l1_marginal_distance",
            format!("quad_nodes must be a positive multiple of 32, got {quad_nodes}"),
        ));
    }
    let marginal = Marginal1::new(law, m_mix, seed)?;
    let root = (law.n as f64).sqrt();
    let rule = GaussLegendre::new(16);
    let composite = |panels: usize| -> Vec<(f64, f64)> {
        let h = 2.0 * root / panels as f64;
        (0..panels)
            .flat_map(|p| {
                let a = -root + p as f64 * h;
                rule.mapped(a, a + h).collect::<Vec<_>>()
            })
            .collect()
    };
    let fine = composite(quad_nodes / 16);
    let coarse = composite(quad_nodes / 32);
    let points: Vec<(f64, f64)> = fine.iter().chain(&coarse).copied().collect();
    let chunks: Vec<&[(f64, f64)]> = points.chunks(64).collect();
    let values = map_indices(chunks.len(), |c| {
        let zs: Vec<f64> = chunks[c].iter().map(|&(z, _)| z).collect();
        marginal.density_many(&zs)
    })?
    .concat();
    let (fine_vals, coarse_vals) = values.split_at(fine.len());
    let sum = |nodes: &[(f64, f64)], vals: &[EstimateWithError]| {
        let (mut v, mut se, mut bound) = (0.0, 0.0, 0.0);
        for (&(z, w), e) in nodes.iter().zip(vals) {
            v += w * (e.value - law.base.pdf(z)).abs();
            se += w * e.std_error;
            bound += w * e.error_bound;
        }
        (v, se, bound)
    };
    let (v_fine, se, bound) = sum(&fine, fine_vals);
    let (v_coarse, _, _) = sum(&coarse, coarse_vals);
    let breaks = law.base.breakpoints();
    let outside = |a: f64, b: f64| integrate_split(|x| law.base.pdf(x), a, b, &breaks, 1e-13, 1e-12);
    let left = outside(f64::NEG_INFINITY, -root)?;
    let right = outside(root, f64::INFINITY)?;
    let tail = left.value + right.value;
    let samples = match marginal.method() {
        Method::MonteCarloMixture => m_mix as u64,
        _ => 0,
    };
    Ok(EstimateWithError {
        value: v_fine + tail,
        std_error: se,
        error_bound: bound + (v_fine - v_coarse).abs() + left.error + right.error,
        samples,
        seed: Some(seed),
        method: marginal.method(),
    })
}

/// Entropy estimates from one set of draws `X ~ f^{⊗N}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimates {
    /// `(1/N) H(f̂^N | σ^N)`, as `H(f|γ)` minus the gap estimate.
    pub per_particle: EstimateWithError,
    /// `(1/N) H(f^{⊗N} | F̌^N)`: mean of `(1/N)[Σ log(f/γ)(X_i) − log h(X̂)]`.
    pub gap: EstimateWithError,
    /// Plain mean of `(1/N) log h(X̂)` on the same draws.
    pub direct: EstimateWithError,
    /// Plain mean of `(1/N) Σ log(f/γ)(X_i)` on the same draws.
    pub plug_in: EstimateWithError,
    /// `H(f|γ)` from the density catalog.
    pub reference: EstimateWithError,
    /// Draws dropped because the radial integrand underflowed.
    pub excluded: u64,
}

#[derive(Debug, Clone)]
struct EntropyAcc {
    stats: [Welford; 3],
    max_error: f64,
    excluded: u64,
    x: Vec<f64>,
}

/// Entropy per particle and the entropy gap, computed jointly.
///
/// `log h` is audited for quadrature error on every [`AUDIT_EVERY`]-th draw;
/// the largest audited error, divided by `N`, is the reported error bound.
pub fn entropy_estimates(kernel: &SphericalDensityKernel, m: usize, seed: u64) -> Result<EntropyEstimates> {
    let n = kernel.dim();
    let nf = n as f64;
    let base = kernel.base().clone();
    let law = RescaledLaw::new(base.clone(), n)?;
    let reference = base.rel_entropy_gaussian()?;
    let key = StreamKey::new(seed).label("entropy").index(n as u64);
    let acc = fold_samples(
        &key,
        m,
        || EntropyAcc {
            stats: [Welford::new(); 3],
            max_error: 0.0,
            excluded: 0,
            x: vec![0.0; n],
        },
        |acc, rng, i| {
            law.draw_product(rng, &mut acc.x);
            let a = acc.x.iter().map(|&v| base.log_pdf(v) + LN_SQRT_2PI + 0.5 * v * v).sum::<f64>() / nf;
            let kv = kernel.log_density(&acc.x, i % AUDIT_EVERY == 0)?;
            if kv.underflow {
                acc.excluded += 1;
                return Ok(());
            }
            let b = kv.log_h / nf;
            acc.max_error = acc.max_error.max(kv.error);
            acc.stats[0].push(a - b);
            acc.stats[1].push(b);
            acc.stats[2].push(a);
            Ok(())
        },
        |a, b| {
            merge_welfords(&mut a.stats, &b.stats);
            a.max_error = a.max_error.max(b.max_error);
            a.excluded += b.excluded;
        },
    )?;
    check_underflow(acc.excluded, m)?;
    let bound = acc.max_error / nf;
    let gap = acc.stats[0].estimate(seed).with_bound(bound).with_method(Method::MonteCarloQuadrature);
    let per_particle = EstimateWithError {
        value: reference.value - gap.value,
        std_error: gap.std_error,
        error_bound: bound + reference.error_bound,
        ..gap
    };
    Ok(EntropyEstimates {
        per_particle,
        gap,
        direct: acc.stats[1].estimate(seed).with_bound(bound).with_method(Method::MonteCarloQuadrature),
        plug_in: acc.stats[2].estimate(seed),
        reference,
        excluded: acc.excluded,
    })
}

fn check_underflow(excluded: u64, total: usize) -> Result<()> {
    if excluded as f64 > UNDERFLOW_LIMIT * total as f64 {
        return Err(Error::Underflow {
            excluded: excluded as usize,
            total,
            limit_fraction: UNDERFLOW_LIMIT,
        });
    }
    if excluded > 0 {
        log::warn!("{excluded} of {total} draws excluded for radial underflow");
    }
    Ok(())
}

/// `(1/N) H(f̂^N | σ^N)`; see [`entropy_estimates`].
pub fn entropy_per_particle(kernel: &SphericalDensityKernel, m: usize, seed: u64) -> Result<EstimateWithError> {
    Ok(entropy_estimates(kernel, m, seed)?.per_particle)
}

/// `(1/N) H(f^{⊗N} | F̌^N) = H(f|γ) − (1/N) H(f̂^N | σ^N)`; see [`entropy_estimates`].
pub fn entropy_gap(kernel: &SphericalDensityKernel, m: usize, seed: u64) -> Result<EstimateWithError> {
    Ok(entropy_estimates(kernel, m, seed)?.gap)
}

/// A random unit tangent vector at `omega` (a unit vector).
fn random_tangent(rng: &mut SampleRng, omega: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; omega.len()];
    loop {
        fill_gaussian(rng, &mut v);
        let dot: f64 = v.iter().zip(omega).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(omega).for_each(|(a, &o)| *a -= dot * o);
        let len = norm2(&v).sqrt();
        if len > 1e-8 {
            v.iter_mut().for_each(|a| *a /= len);
            return v;
        }
    }
}

/// Compare `∇_S log h(y)·v` with a central difference of `log h` along the
/// unit-speed great circle through `y = √N ω` with direction `v`.
fn finite_difference_check(
    kernel: &SphericalDensityKernel,
    omega: &[f64],
    gradient: &[f64],
    rng: &mut SampleRng,
    sample: usize,
) -> Result<()> {
    let n = omega.len() as f64;
    let root = n.sqrt();
    let v = random_tangent(rng, omega);
    let analytic: f64 = gradient.iter().zip(&v).map(|(a, b)| a * b).sum();
    let at = |t: f64| -> Result<f64> {
        let (c, s) = ((t / root).cos(), (t / root).sin());
        let y: Vec<f64> = omega.iter().zip(&v).map(|(&o, &d)| root * (c * o + s * d)).collect();
        Ok(kernel.log_density(&y, false)?.log_h)
    };
    let fd = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
    if !((fd - analytic).abs() <= FD_TOL * analytic.abs().max(1.0)) {
        return Err(Error::GradientCheck {
            sample,
            analytic,
            finite_difference: fd,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct FisherAcc {
    stats: [Welford; 4],
    max_error: f64,
    /// Largest `N/|y|²` seen on the ambient side of the identity check.
    ambient_scale: f64,
    excluded: u64,
    x: Vec<f64>,
    z: Vec<f64>,
}

impl FisherAcc {
    fn new(n: usize) -> Self {
        Self {
            stats: [Welford::new(); 4],
            max_error: 0.0,
            ambient_scale: 0.0,
            excluded: 0,
            x: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    fn merge(&mut self, other: FisherAcc) {
        merge_welfords(&mut self.stats, &other.stats);
        self.max_error = self.max_error.max(other.max_error);
        self.ambient_scale = self.ambient_scale.max(other.ambient_scale);
        self.excluded += other.excluded;
    }
}

/// Draw `X̂`, evaluate `|∇_S log h(X̂)|²` with its error bound, and run the
/// finite-difference audit. Returns `None` on underflow.
fn spherical_fisher_sample(
    kernel: &SphericalDensityKernel,
    law: &RescaledLaw,
    acc: &mut FisherAcc,
    rng: &mut SampleRng,
    i: usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    let n = law.n as f64;
    let n2 = law.draw_product(rng, &mut acc.x);
    let kg = kernel.log_density_with_gradient(&acc.x, i % AUDIT_EVERY == 0)?;
    if kg.value.underflow {
        acc.excluded += 1;
        return Ok(None);
    }
    let g2 = norm2(&kg.gradient);
    let e = kg.gradient_error;
    acc.max_error = acc.max_error.max(2.0 * g2.sqrt() * n.sqrt() * e + n * e * e);
    if i % FD_EVERY == 0 {
        let inv = n2.sqrt().recip();
        let omega: Vec<f64> = acc.x.iter().map(|v| v * inv).collect();
        finite_difference_check(kernel, &omega, &kg.gradient, rng, i)?;
    }
    Ok(Some((g2, kg.gradient)))
}

/// `(1/N) I(f̂^N | σ^N) = (1/N) E|∇_S log h(X̂)|²` with the gradient from the
/// differentiated radial integral.
///
/// Every [`FD_EVERY`]-th draw checks the gradient against a finite
/// difference along a random great circle; a mismatch is an error.
pub fn fisher_per_particle(kernel: &SphericalDensityKernel, m: usize, seed: u64) -> Result<EstimateWithError> {
    let n = kernel.dim();
    let law = RescaledLaw::new(kernel.base().clone(), n)?;
    let key = StreamKey::new(seed).label("fisher").index(n as u64);
    let acc = fold_samples(
        &key,
        m,
        || FisherAcc::new(n),
        |acc, rng, i| {
            if let Some((g2, _)) = spherical_fisher_sample(kernel, &law, acc, rng, i)? {
                acc.stats[0].push(g2 / n as f64);
            }
            Ok(())
        },
        FisherAcc::merge,
    )?;
    check_underflow(acc.excluded, m)?;
    Ok(acc.stats[0]
        .estimate(seed)
        .with_bound(acc.max_error / n as f64)
        .with_method(Method::MonteCarloQuadrature))
}

/// Both sides of `I(f̂^N | σ^N) = ((N−2)/N) I(F̌^N | γ^{⊗N})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherIdentity {
    /// `E|∇_S log h(X̂)|²`.
    pub lhs: EstimateWithError,
    /// `((N−2)/N) E|∇ log(F̌^N/γ^{⊗N})(Y)|²` for `Y ~ F̌^N`.
    pub rhs: EstimateWithError,
    /// Paired estimate of `lhs − rhs`.
    pub discrepancy: EstimateWithError,
    /// `E|∇ log(F̌^N/γ^{⊗N})(Y)|²` without the dimensional factor.
    pub ambient_raw: EstimateWithError,
}

impl FisherIdentity {
    /// `sqrt(SE_lhs² + SE_rhs²)`.
    pub fn combined_se(&self) -> f64 {
        self.lhs.std_error.hypot(self.rhs.std_error)
    }

    /// `|lhs − rhs| < sigmas · combined SE` (or both vanish).
    pub fn holds(&self, sigmas: f64) -> bool {
        let d = (self.lhs.value - self.rhs.value).abs();
        d < sigmas * self.combined_se() || d <= self.lhs.error_bound + self.rhs.error_bound
    }
}

/// Monte Carlo of both sides of the Fisher identity on paired draws:
/// `Y = |Z| X̂/√N` with `|Z|² ~ χ²_N` independent of `X̂ ~ f̂^N`, and the
/// ambient gradient evaluated afresh at `Y`.
pub fn fisher_main_identity_check(base: &DensityModel, n: usize, m: usize, seed: u64) -> Result<FisherIdentity> {
    if n < 3 {
        return Err(domain("fisher_main_identity_check", format!("need N >= 3, got {n}")));
    }
    let kernel = SphericalDensityKernel::new(base.clone(), n)?;
    let law = RescaledLaw::new(base.clone(), n)?;
    let nf = n as f64;
    let factor = (nf - 2.0) / nf;
    let key = StreamKey::new(seed).label("fisher_identity").index(n as u64);
    let acc = fold_samples(
        &key,
        m,
        || FisherAcc::new(n),
        |acc, rng, i| {
            let Some((g2, _)) = spherical_fisher_sample(&kernel, &law, acc, rng, i)? else {
                return Ok(());
            };
            fill_gaussian(rng, &mut acc.z);
            let radius = norm2(&acc.z).sqrt();
            let scale = radius / norm2(&acc.x).sqrt();
            let y: Vec<f64> = acc.x.iter().map(|v| v * scale).collect();
            let amb = crate::rescaled::angular_log_ratio_gradient(&kernel, &y)?;
            let a2 = norm2(&amb.gradient);
            acc.ambient_scale = acc.ambient_scale.max(nf / (radius * radius));
            acc.stats[0].push(g2);
            acc.stats[1].push(factor * a2);
            acc.stats[2].push(g2 - factor * a2);
            acc.stats[3].push(a2);
            Ok(())
        },
        FisherAcc::merge,
    )?;
    check_underflow(acc.excluded, m)?;
    let est = |w: &Welford| w.estimate(seed).with_method(Method::MonteCarloQuadrature);
    // The ambient gradient is the spherical one scaled by √N/|y|.
    let ambient_bound = acc.ambient_scale * acc.max_error;
    Ok(FisherIdentity {
        lhs: est(&acc.stats[0]).with_bound(acc.max_error),
        rhs: est(&acc.stats[1]).with_bound(factor * ambient_bound),
        discrepancy: est(&acc.stats[2]).with_bound(acc.max_error + factor * ambient_bound),
        ambient_raw: est(&acc.stats[3]).with_bound(ambient_bound),
    })
}

/// `(1/2) I(f̂² | σ²)` on the circle of radius `√2`, by quadrature only.
///
/// With `h(θ) = 2π ∫_0^∞ r f(r cos θ) f(r sin θ) dr` and arc length
/// `√2 dθ`, the information is `(1/2π) ∫ h'(θ)²/(2 h(θ)) dθ`. The outer
/// integral is the periodic trapezoidal rule on `quad_nodes` points; inner
/// integrals are adaptive. The error bound is the change against half the
/// points plus the propagated inner errors.
pub fn fisher_n2_exact(base: &DensityModel, quad_nodes: usize) -> Result<EstimateWithError> {
    if !base.differentiable() {
        return Err(Error::Unsupported {
            op: "fisher_n2_exact",
            density: base.name(),
            reason: "pdf is not differentiable".into(),
        });
    }
    require_unit_energy("fisher_n2_exact", base)?;
    if quad_nodes < 8 || quad_nodes % 2 != 0 {
        return Err(domain("fisher_n2_exact", format!("quad_nodes must be even and >= 8, got {quad_nodes}")));
    }
    let score = |x: f64| base.score(x).unwrap_or(0.0);
    let term = |theta: f64| -> Result<(f64, f64)> {
        let (s, c) = theta.sin_cos();
        let h = integrate(|r| r * base.pdf(r * c) * base.pdf(r * s), 0.0, f64::INFINITY, 1e-15, 1e-13)?;
        let dh = integrate(
            |r| {
                let w = r * base.pdf(r * c) * base.pdf(r * s);
                if w == 0.0 {
                    0.0
                } else {
                    w * r * (c * score(r * s) - s * score(r * c))
                }
            },
            0.0,
            f64::INFINITY,
            1e-15,
            1e-13,
        )?;
        let ratio = dh.value / h.value;
        let v = ratio * ratio * h.value;
        let err = (2.0 * ratio.abs() * dh.error + ratio * ratio * h.error) * (1.0 + 1e-12);
        Ok((v, err))
    };
    let values = map_indices(quad_nodes, |j| term(2.0 * std::f64::consts::PI * j as f64 / quad_nodes as f64))?;
    let step = 2.0 * std::f64::consts::PI / quad_nodes as f64;
    // Trapezoid over θ of 2π·v(θ), scaled by 1/(2π) · 1/2 · 1/2.
    let scale = 0.25;
    let full: f64 = values.iter().map(|v| v.0).sum::<f64>() * step * scale;
    let half: f64 = values.iter().step_by(2).map(|v| v.0).sum::<f64>() * 2.0 * step * scale;
    let inner: f64 = values.iter().map(|v| v.1).sum::<f64>() * step * scale;
    Ok(EstimateWithError::quadrature(
        full,
        (full - half).abs() + inner + 8.0 * f64::EPSILON * full.abs(),
        Method::FixedQuadrature,
    ))
}

/// Empirical frequency of the large-deviation event and its moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub empirical: EstimateWithError,
    pub bound: f64,
    pub delta_bar: f64,
}

impl TailCheck {
    /// `empirical ≤ bound + sigmas·SE`.
    pub fn holds(&self, sigmas: f64) -> bool {
        self.empirical.value <= self.bound + sigmas * self.empirical.std_error
    }
}

/// Default moment exponent: `δ = 2` when the base has more than 4 moments,
/// otherwise `0.9 (p − 2)`.
pub fn default_tail_delta(base: &DensityModel) -> f64 {
    let p = base.moment_order();
    if p > 4.0 {
        2.0
    } else {
        0.9 * (p - 2.0)
    }
}

/// Frequency of `|X_1² + … + X_{N−k}² − N E X²| > N^{1−q}` against
/// `16 N^{−(δ̄/2 − (1+δ̄/2)q)} E|X|^{2+δ̄}`.
pub fn tail_probability_check(
    base: &DensityModel,
    n: usize,
    k: usize,
    q: f64,
    delta: f64,
    m: usize,
    seed: u64,
) -> Result<TailCheck> {
    let ex2 = base.second_moment();
    let n_min = vonbahr_min_n(k, q, ex2)?;
    if (n as f64) < n_min {
        return Err(domain(
            "tail_probability_check",
            format!("need N >= max(2k, (2k E X²)^(1/(1-q))) = {n_min:.3}, got {n}"),
        ));
    }
    let d = delta_bar(delta);
    if !(d > 0.0) || 2.0 + d >= base.moment_order() {
        return Err(Error::MomentInsufficient {
            op: "tail_probability_check",
            density: base.name(),
            required: 2.0 + d,
            available: base.moment_order(),
        });
    }
    let moment = base.moment(2.0 + d)?;
    let bound = vonbahr_bound(n as f64, q, d, moment.value)?;
    let nf = n as f64;
    let threshold = nf.powf(1.0 - q);
    let key = StreamKey::new(seed).label("tail").index(n as u64).index(k as u64);
    let count = fold_samples(
        &key,
        m,
        || 0u64,
        |c, rng, _| {
            let mut s = 0.0;
            for _ in 0..n - k {
                let v = base.sample(rng);
                s += v * v;
            }
            if (s - nf * ex2).abs() > threshold {
                *c += 1;
            }
            Ok(())
        },
        |a, b| *a += b,
    )?;
    let p = count as f64 / m as f64;
    let empirical = EstimateWithError::monte_carlo(p, (p * (1.0 - p) / m as f64).sqrt(), m as u64, seed);
    Ok(TailCheck { empirical, bound, delta_bar: d })
}

/// `(1/N) H([f^{⊗N}]_N | σ^N)` and the effective sample size.
pub fn conditioned_entropy_per_particle(state: &ConditionedState, m: usize, seed: u64) -> Result<(EstimateWithError, f64)> {
    state.entropy_per_particle(m, seed)
}

/// A metric measured over an `N` grid, with its bound curve and fitted slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub metric: String,
    pub base: String,
    pub ns: Vec<usize>,
    pub estimates: Vec<EstimateWithError>,
    /// Bound value at each `N`, when one is available.
    pub bounds: Vec<Option<f64>>,
    /// `estimate − 3 SE > bound`.
    pub violations: Vec<bool>,
    pub fit: Option<LineFit>,
    /// Why the slope fit was refused, if it was.
    pub fit_refusal: Option<String>,
    pub seed: u64,
}

impl ChaosReport {
    pub fn new(
        metric: &str,
        base: &DensityModel,
        ns: Vec<usize>,
        estimates: Vec<EstimateWithError>,
        bounds: Vec<Option<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if ns.len() != estimates.len() || ns.len() != bounds.len() {
            return Err(domain("chaos report", "grid, estimates and bounds differ in length"));
        }
        if let Some(e) = estimates.iter().find(|e| !e.std_error.is_finite()) {
            return Err(domain("chaos report", format!("non-finite standard error in {e:?}")));
        }
        let violations = estimates
            .iter()
            .zip(&bounds)
            .map(|(e, b)| b.is_some_and(|b| e.value - 3.0 * e.std_error > b))
            .collect();
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let (fit, fit_refusal) = match fit_loglog(&xs, &estimates) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            metric: metric.into(),
            base: base.name(),
            ns,
            estimates,
            bounds,
            violations,
            fit,
            fit_refusal,
            seed,
        })
    }

    pub fn violated(&self) -> bool {
        self.violations.iter().any(|&v| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_reduces_from_wr_at_two() {
        let law = RescaledLaw::new(DensityModel::mixture(0.6, 0.8).unwrap(), 12).unwrap();
        let a = w2_coupling_estimate(&law, 4000, 3).unwrap();
        let b = wr_coupling_estimate(&law, 2.0, 4000, 3).unwrap();
        assert!((a.value - b.value).abs() < 3.0 * a.std_error.hypot(b.std_error));
    }

    #[test]
    fn wr_rejects_insufficient_moments() {
        let law = RescaledLaw::new(DensityModel::student_t(3.0).unwrap(), 8).unwrap();
        assert!(matches!(
            wr_coupling_estimate(&law, 3.0, 100, 1),
            Err(Error::MomentInsufficient { .. })
        ));
    }

    #[test]
    fn gaussian_fisher_n2_is_zero() {
        let v = fisher_n2_exact(&DensityModel::standard_gaussian(), 64).unwrap();
        assert!(v.value.abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn tail_precondition_enforced() {
        let g = DensityModel::standard_gaussian();
        assert!(tail_probability_check(&g, 3, 2, 0.25, 2.0, 100, 1).is_err());
        assert!(tail_probability_check(&g, 64, 1, 0.25, 2.0, 1000, 1).is_ok());
    }

    #[test]
    fn report_flags_violations() {
        let g = DensityModel::standard_gaussian();
        let est = |v| EstimateWithError::monte_carlo(v, 0.01, 1000, 1);
        let r = ChaosReport::new(
            "w2",
            &g,
            vec![4, 8, 16, 32],
            vec![est(1.0), est(0.5), est(0.25), est(0.125)],
            vec![Some(2.0), Some(0.3), None, Some(1.0)],
            1,
        )
        .unwrap();
        assert_eq!(r.violations, vec![false, true, false, false]);
        assert!(r.violated());
        assert!((r.fit.unwrap().slope + 1.0).abs() < 1e-12);
    }
}
