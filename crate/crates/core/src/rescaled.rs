//! Measures on Kac's sphere built from a one-dimensional density `f`:
//! the rescaled product `f̂^N`, its density `h = df̂^N/dσ^N`, its angular
//! version, its one-particle marginal, and the conditioned product state.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::{DensityModel, Family, Support};
use crate::error::{domain, Error, Result};
use crate::estimate::{EstimateWithError, Method, Welford};
use crate::quadrature::{brent_minimize, integrate_split, log_sum_exp, GaussLegendre};
use crate::rng::{fold_samples, map_indices, SampleRng, StreamKey};
use crate::sphere::{log_surface_area, norm2, rescale_in_place, Ensemble, Provenance, SpherePoint};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Default number of Gauss-Legendre nodes in the radial core window.
pub const DEFAULT_RADIAL_NODES: usize = 256;

/// Default dimension cap for conditioned states.
pub const DEFAULT_CONDITIONED_CAP: usize = 64;

/// Minimum effective sample size accepted by importance estimators.
pub const MIN_ESS: f64 = 100.0;

/// The law `f̂^N` of `√N X/|X|` for `X ~ f^{⊗N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledLaw {
    pub base: DensityModel,
    pub n: usize,
}

impl RescaledLaw {
    pub fn new(base: DensityModel, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(domain("rescaled law", format!("need N >= 2, got {n}")));
        }
        Ok(Self { base, n })
    }

    /// Fill `x` with a draw of `f^{⊗N}`, redrawing the (probability zero)
    /// zero vector; returns `|x|²`.
    pub fn draw_product(&self, rng: &mut SampleRng, x: &mut [f64]) -> f64 {
        loop {
            self.base.sample_into(rng, x);
            let n2 = norm2(x);
            if n2 > 0.0 {
                return n2;
            }
            warn!("drew the zero vector from {}; redrawing", self.base.name());
        }
    }

    /// Draw `X ~ f^{⊗N}` into `x` and rescale it in place; returns `Q_N = |X|²/N`.
    pub fn draw_rescaled(&self, rng: &mut SampleRng, x: &mut [f64]) -> f64 {
        let n2 = self.draw_product(rng, x);
        let s = (self.n as f64 / n2).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
        n2 / self.n as f64
    }
}

/// `M` i.i.d. draws of `f̂^N`.
pub fn sample_rescaled(law: &RescaledLaw, m: usize, seed: u64) -> Result<Ensemble> {
    if m < 1 {
        return Err(domain("sample_rescaled", "need M >= 1"));
    }
    let key = StreamKey::new(seed).label("sample_rescaled").index(law.n as u64);
    let rows = map_indices(m, |i| {
        let mut rng = key.rng(i as u64);
        let mut x = vec![0.0; law.n];
        law.draw_rescaled(&mut rng, &mut x);
        Ok(x)
    })?;
    Ok(Ensemble::from_rows(
        law.n,
        rows,
        Provenance {
            law: format!("rescaled({})", law.base.name()),
            seed,
            rescaled: true,
        },
    ))
}

/// `log h` at one point, with its quadrature error when audited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub log_h: f64,
    /// Absolute error bound on `log_h` (0 when not audited).
    pub error: f64,
    /// Set when the radial integrand vanished on the whole window.
    pub underflow: bool,
}

/// `log h` with its spherical gradient `∇_S log h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub value: KernelValue,
    pub gradient: Vec<f64>,
    /// Max-norm error bound on `gradient` (0 when not audited).
    pub gradient_error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    full: bool,
}

#[derive(Debug, Clone, Copy)]
enum Fast {
    Gaussian { mean: f64, sd: f64 },
    General,
}

/// The density `h = df̂^N/dσ^N`, evaluated by radial quadrature:
///
/// `h(x) = |S^{N-1}(1)| ∫_0^∞ r^{N-1} ∏ f(r x_i/√N) dr`.
///
/// The integral is taken over `t = log r`, where the integrand
/// `exp(N t + Σ log f(e^t ω_i))` is close to Gaussian. The maximizer is
/// located by Brent's method and the window ends where the integrand has
/// dropped by `e^{-40}` on each side, found by doubling steps of the
/// curvature width followed by bisection.
#[derive(Debug, Clone)]
pub struct SphericalDensityKernel {
    base: DensityModel,
    n: usize,
    nodes: usize,
    full: GaussLegendre,
    half: GaussLegendre,
    quarter: GaussLegendre,
    log_area: f64,
    fast: Fast,
}

const BISECTIONS: usize = 6;
const TAIL_DROP: f64 = 40.0;

impl SphericalDensityKernel {
    pub fn new(base: DensityModel, n: usize) -> Result<Self> {
        Self::with_nodes(base, n, DEFAULT_RADIAL_NODES)
    }

    pub fn with_nodes(base: DensityModel, n: usize, nodes: usize) -> Result<Self> {
        if n < 2 {
            return Err(domain("spherical density kernel", format!("need N >= 2, got {n}")));
        }
        if nodes < 8 {
            return Err(domain("spherical density kernel", format!("need at least 8 radial nodes, got {nodes}")));
        }
        let fast = match base.family() {
            Family::Gaussian { mean, sd } => Fast::Gaussian { mean, sd },
            _ => Fast::General,
        };
        Ok(Self {
            n,
            nodes,
            full: GaussLegendre::new(nodes),
            half: GaussLegendre::new(nodes / 2),
            quarter: GaussLegendre::new(nodes / 4),
            log_area: log_surface_area(n, 1.0)?,
            fast,
            base,
        })
    }

    pub fn base(&self) -> &DensityModel {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `ψ(t) = N t + Σ log f(e^t ω_i)`.
    fn psi(&self, omega: &[f64], s1: f64, s2: f64, t: f64) -> f64 {
        let nf = self.n as f64;
        let r = t.exp();
        match self.fast {
            Fast::Gaussian { mean, sd } => {
                nf * t
                    - nf * (sd.ln() + LN_SQRT_2PI)
                    - (r * r * s2 - 2.0 * r * mean * s1 + nf * mean * mean) / (2.0 * sd * sd)
            }
            Fast::General => {
                let mut acc = nf * t;
                for &w in omega {
                    acc += self.base.log_pdf(r * w);
                    if acc == f64::NEG_INFINITY {
                        break;
                    }
                }
                acc
            }
        }
    }

    /// `log` of the largest radius keeping every `r ω_i` in the support.
    fn log_radius_limit(&self, omega: &[f64]) -> f64 {
        match self.base.support() {
            Support::RealLine => f64::INFINITY,
            Support::Interval(a, b) => omega
                .iter()
                .map(|&w| {
                    if w > 0.0 {
                        b / w
                    } else if w < 0.0 {
                        a / w
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(f64::INFINITY, f64::min)
                .ln(),
        }
    }

    fn window(&self, omega: &[f64], s1: f64, s2: f64) -> Option<(Vec<Panel>, f64)> {
        let psi = |t: f64| self.psi(omega, s1, s2, t);
        let t_sup = self.log_radius_limit(omega);
        let t_cap = if t_sup.is_finite() { t_sup - 1e-12 * (1.0 + t_sup.abs()) } else { f64::INFINITY };
        let t0 = (0.5 * (self.n as f64 * self.base.second_moment()).ln()).min(t_cap);
        let p0 = psi(t0);
        let (mut lo, mut hi) = (t0 - 1.0, (t0 + 1.0).min(t_cap));
        for _ in 0..60 {
            if psi(lo) < p0 {
                break;
            }
            lo -= 2.0;
        }
        for _ in 0..60 {
            if hi >= t_cap || psi(hi) < p0 {
                break;
            }
            hi = (hi + 2.0).min(t_cap);
        }
        let (t_star, neg) = brent_minimize(
            |t| {
                let v = psi(t);
                if v.is_finite() { -v } else { f64::MAX }
            },
            lo,
            hi,
            1e-8,
        );
        let p_star = -neg;
        let (t_star, p_star) = if p0 > p_star { (t0, p0) } else { (t_star, p_star) };
        if !p_star.is_finite() {
            return None;
        }
        let h = 1e-4;
        let curv = -(psi(t_star + h) - 2.0 * p_star + psi(t_star - h)) / (h * h);
        let sigma = if curv.is_finite() && curv > 0.0 {
            1.0 / curv.sqrt()
        } else {
            1.0 / (self.n as f64).sqrt()
        };
        let floor = p_star - TAIL_DROP;
        let cut = |dir: f64| -> f64 {
            let mut inside = t_star;
            let mut step = sigma;
            let mut outside = None;
            for _ in 0..64 {
                let t = t_star + dir * step;
                if dir > 0.0 && t >= t_cap {
                    if psi(t_cap) > floor {
                        return t_cap;
                    }
                    outside = Some(t_cap);
                    break;
                }
                if psi(t) <= floor {
                    outside = Some(t);
                    break;
                }
                inside = t;
                step *= 2.0;
            }
            let Some(mut out) = outside else { return inside };
            for _ in 0..BISECTIONS {
                let mid = 0.5 * (inside + out);
                if psi(mid) > floor {
                    inside = mid;
                } else {
                    out = mid;
                }
            }
            out
        };
        let panels = vec![Panel { lo: cut(-1.0), hi: cut(1.0), full: true }];
        Some((panels, p_star))
    }

    /// Log-integrand and log-weights on every node of the chosen rule set.
    fn nodes_for(&self, panels: &[Panel], coarse: bool) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for p in panels {
            let rule = match (p.full, coarse) {
                (true, false) => &self.full,
                (true, true) | (false, false) => &self.half,
                (false, true) => &self.quarter,
            };
            out.extend(rule.mapped(p.lo, p.hi));
        }
        out
    }

    fn rounding_allowance(&self, p_star: f64) -> f64 {
        let nf = self.n as f64;
        f64::EPSILON * (4.0 * self.log_area.abs() + nf.sqrt() * (p_star.abs() + nf))
    }

    fn prepare(&self, x: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        if x.len() != self.n {
            return Err(domain("density_wrt_sigma", format!("expected a point in dimension {}, got {}", self.n, x.len())));
        }
        let norm = norm2(x).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        let omega: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let s1: f64 = omega.iter().sum();
        let s2 = norm2(&omega);
        Ok((omega, s1, s2))
    }

    fn log_integral(&self, omega: &[f64], s1: f64, s2: f64, nodes: &[(f64, f64)]) -> (f64, Vec<f64>) {
        let logs: Vec<f64> = nodes
            .iter()
            .map(|&(t, w)| {
                let v = self.psi(omega, s1, s2, t);
                if w > 0.0 { v + w.ln() } else { f64::NEG_INFINITY }
            })
            .collect();
        (log_sum_exp(&logs), logs)
    }

    /// `log h(x)` for `x` on (or proportional to a point on) the sphere.
    /// With `audit`, also the quadrature error bound.
    pub fn log_density(&self, x: &[f64], audit: bool) -> Result<KernelValue> {
        let (omega, s1, s2) = self.prepare(x)?;
        let Some((panels, p_star)) = self.window(&omega, s1, s2) else {
            return Ok(KernelValue { log_h: f64::NEG_INFINITY, error: 0.0, underflow: true });
        };
        let (li, _) = self.log_integral(&omega, s1, s2, &self.nodes_for(&panels, false));
        if li == f64::NEG_INFINITY {
            return Ok(KernelValue { log_h: f64::NEG_INFINITY, error: 0.0, underflow: true });
        }
        let error = if audit {
            let (coarse, _) = self.log_integral(&omega, s1, s2, &self.nodes_for(&panels, true));
            (li - coarse).abs() + self.rounding_allowance(p_star)
        } else {
            0.0
        };
        Ok(KernelValue { log_h: self.log_area + li, error, underflow: false })
    }

    /// `∇_ω log H` from node log-values: `E_w[r · (log f)'(r ω_j)]`.
    fn omega_gradient(&self, omega: &[f64], nodes: &[(f64, f64)], logs: &[f64]) -> Result<Vec<f64>> {
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        match self.fast {
            Fast::Gaussian { mean, sd } => {
                let (mut e1, mut e2) = (0.0, 0.0);
                for (&(t, _), &w) in nodes.iter().zip(&weights) {
                    let r = t.exp();
                    e1 += w * r;
                    e2 += w * r * r;
                }
                e1 /= total;
                e2 /= total;
                let s2 = sd * sd;
                Ok(omega.iter().map(|&o| -(e2 * o - mean * e1) / s2).collect())
            }
            Fast::General => {
                let cutoff = 1e-18;
                let active: Vec<(f64, f64)> = nodes
                    .iter()
                    .zip(&weights)
                    .filter(|(_, &w)| w > cutoff)
                    .map(|(&(t, _), &w)| (t.exp(), w / total))
                    .collect();
                omega
                    .iter()
                    .map(|&o| {
                        let mut g = 0.0;
                        for &(r, w) in &active {
                            let s = self.base.score(r * o).ok_or_else(|| Error::Unsupported {
                                op: "spherical gradient",
                                density: self.base.name(),
                                reason: "pdf derivative undefined".into(),
                            })?;
                            g += w * r * s;
                        }
                        Ok(g)
                    })
                    .collect()
            }
        }
    }

    fn to_spherical(&self, omega: &[f64], mut g: Vec<f64>) -> Vec<f64> {
        let dot: f64 = g.iter().zip(omega).map(|(a, b)| a * b).sum();
        let inv = 1.0 / (self.n as f64).sqrt();
        g.iter_mut().zip(omega).for_each(|(a, &o)| *a = (*a - dot * o) * inv);
        g
    }

    /// `log h(x)` and `∇_S log h(x) = (1/√N)(Id − ωωᵀ)∇_ω log H(ω)`.
    pub fn log_density_with_gradient(&self, x: &[f64], audit: bool) -> Result<KernelGradient> {
        if !self.base.differentiable() {
            return Err(Error::Unsupported {
                op: "spherical gradient",
                density: self.base.name(),
                reason: "pdf is not differentiable".into(),
            });
        }
        let (omega, s1, s2) = self.prepare(x)?;
        let Some((panels, p_star)) = self.window(&omega, s1, s2) else {
            return Ok(KernelGradient {
                value: KernelValue { log_h: f64::NEG_INFINITY, error: 0.0, underflow: true },
                gradient: vec![0.0; self.n],
                gradient_error: 0.0,
            });
        };
        let nodes = self.nodes_for(&panels, false);
        let (li, logs) = self.log_integral(&omega, s1, s2, &nodes);
        if li == f64::NEG_INFINITY {
            return Ok(KernelGradient {
                value: KernelValue { log_h: f64::NEG_INFINITY, error: 0.0, underflow: true },
                gradient: vec![0.0; self.n],
                gradient_error: 0.0,
            });
        }
        let gradient = self.to_spherical(&omega, self.omega_gradient(&omega, &nodes, &logs)?);
        let (error, gradient_error) = if audit {
            let coarse_nodes = self.nodes_for(&panels, true);
            let (coarse, coarse_logs) = self.log_integral(&omega, s1, s2, &coarse_nodes);
            let coarse_grad = self.to_spherical(&omega, self.omega_gradient(&omega, &coarse_nodes, &coarse_logs)?);
            let gmax = gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gerr = gradient
                .iter()
                .zip(&coarse_grad)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                + 64.0 * f64::EPSILON * (1.0 + gmax) * (self.n as f64).sqrt();
            ((li - coarse).abs() + self.rounding_allowance(p_star), gerr)
        } else {
            (0.0, 0.0)
        };
        Ok(KernelGradient {
            value: KernelValue { log_h: self.log_area + li, error, underflow: false },
            gradient,
            gradient_error,
        })
    }
}

/// `log h(x)` for `x` on the sphere, with its quadrature error bound.
pub fn density_wrt_sigma(kernel: &SphericalDensityKernel, x: &SpherePoint) -> Result<KernelValue> {
    kernel.log_density(x.coords(), true)
}

/// `log F̌^N(x) = log γ^{⊗N}(x) + log h(x̂)`.
pub fn angular_density(kernel: &SphericalDensityKernel, x: &[f64]) -> Result<KernelValue> {
    let n2 = norm2(x);
    if n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut v = kernel.log_density(x, true)?;
    v.log_h += -(x.len() as f64) * LN_SQRT_2PI - 0.5 * n2;
    Ok(v)
}

/// `∇ log(F̌^N/γ^{⊗N})(x) = (√N/|x|) ∇_S log h(x̂)`, together with `log h(x̂)`.
pub fn angular_log_ratio_gradient(kernel: &SphericalDensityKernel, x: &[f64]) -> Result<KernelGradient> {
    let norm = norm2(x).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut g = kernel.log_density_with_gradient(x, false)?;
    let scale = (x.len() as f64).sqrt() / norm;
    g.gradient.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

/// Monte Carlo mean of `|X̂_1|^p` under `f̂^N`, from `m` independent draws.
pub fn coordinate_moment(law: &RescaledLaw, p: f64, m: usize, seed: u64) -> Result<EstimateWithError> {
    let key = StreamKey::new(seed).label("coordinate_moment").index(law.n as u64);
    let acc = fold_samples(
        &key,
        m,
        || (Welford::new(), vec![0.0; law.n]),
        |(acc, x), rng, _| {
            law.draw_rescaled(rng, x);
            acc.push(x[0].abs().powf(p));
            Ok(())
        },
        |(a, _), (b, _)| a.merge(&b),
    )?;
    Ok(acc.0.estimate(seed))
}

/// Same target as [`coordinate_moment`] from one stream of `m + N − 1`
/// i.i.d. draws of `f`: window `j` holds `(X_j, …, X_{j+N−1})`, an exact
/// draw of `f^{⊗N}`. Windows overlap, so the standard error uses batch
/// means over non-overlapping batches of `max(10N, 1000)` windows.
pub fn coordinate_moment_sliding(law: &RescaledLaw, p: f64, m: usize, seed: u64) -> Result<EstimateWithError> {
    let n = law.n;
    let mut rng = StreamKey::new(seed).label("coordinate_moment_sliding").index(n as u64).rng(0);
    let stream: Vec<f64> = (0..m + n - 1).map(|_| law.base.sample(&mut rng)).collect();
    let batch = (10 * n).max(1000).min(m);
    let mut batches = Welford::new();
    let mut total = 0.0;
    let mut ssq = 0.0;
    let mut batch_sum = 0.0;
    let mut in_batch = 0usize;
    for j in 0..m {
        if j % 4096 == 0 {
            ssq = stream[j..j + n].iter().map(|v| v * v).sum();
        }
        let x1 = stream[j] * (n as f64 / ssq).sqrt();
        let v = x1.abs().powf(p);
        total += v;
        batch_sum += v;
        in_batch += 1;
        if in_batch == batch {
            batches.push(batch_sum / batch as f64);
            batch_sum = 0.0;
            in_batch = 0;
        }
        if j + 1 < m {
            ssq += stream[j + n] * stream[j + n] - stream[j] * stream[j];
        }
    }
    let se = if batches.count() >= 2 { batches.std_error() } else { f64::INFINITY };
    Ok(EstimateWithError::monte_carlo(total / m as f64, se, m as u64, seed))
}

/// Monte Carlo `E|Q_N − 1|` for `Q_N = |X|²/N`, `X ~ f^{⊗N}`.
pub fn q_statistic_deviation(law: &RescaledLaw, m: usize, seed: u64) -> Result<EstimateWithError> {
    let key = StreamKey::new(seed).label("q_statistic").index(law.n as u64);
    let acc = fold_samples(
        &key,
        m,
        || (Welford::new(), vec![0.0; law.n]),
        |(acc, x), rng, _| {
            let q = law.draw_product(rng, x) / law.n as f64;
            acc.push((q - 1.0).abs());
            Ok(())
        },
        |(a, _), (b, _)| a.merge(&b),
    )?;
    Ok(acc.0.estimate(seed))
}

/// How the mixing variable `S = X_2² + … + X_N²` is integrated out.
#[derive(Debug, Clone)]
enum Mixing {
    /// `S ~ χ²_{N−1}` by adaptive quadrature.
    ChiSquare,
    /// Common Monte Carlo draws of `S` shared across all `z`.
    Draws { s: Vec<f64>, seed: u64 },
}

/// The one-particle marginal `Π₁f̂^N(z) = E_S[f(√S z/√(N−z²)) √S N (N−z²)^{−3/2}]`.
#[derive(Debug, Clone)]
pub struct Marginal1 {
    law: RescaledLaw,
    mixing: Mixing,
}

impl Marginal1 {
    /// Chi-square quadrature for `f = γ`, common Monte Carlo draws otherwise.
    pub fn new(law: &RescaledLaw, m_mix: usize, seed: u64) -> Result<Self> {
        if law.base.is_standard_gaussian() {
            return Ok(Self { law: law.clone(), mixing: Mixing::ChiSquare });
        }
        Self::monte_carlo(law, m_mix, seed)
    }

    /// Force Monte Carlo mixing.
    pub fn monte_carlo(law: &RescaledLaw, m_mix: usize, seed: u64) -> Result<Self> {
        if m_mix < 2 {
            return Err(domain("marginal1_density", "need at least 2 mixture draws"));
        }
        let key = StreamKey::new(seed).label("marginal1_mixing").index(law.n as u64);
        let n = law.n;
        let s = map_indices(m_mix, |i| {
            let mut rng = key.rng(i as u64);
            loop {
                let mut acc = 0.0;
                for _ in 1..n {
                    let v = law.base.sample(&mut rng);
                    acc += v * v;
                }
                if acc > 0.0 {
                    return Ok(acc);
                }
            }
        })?;
        Ok(Self { law: law.clone(), mixing: Mixing::Draws { s, seed } })
    }

    pub fn method(&self) -> Method {
        match self.mixing {
            Mixing::ChiSquare => Method::ChiSquareQuadrature,
            Mixing::Draws { .. } => Method::MonteCarloMixture,
        }
    }

    fn integrand(&self, s: f64, z: f64) -> f64 {
        let nf = self.law.n as f64;
        let gap = nf - z * z;
        let rs = s.sqrt();
        self.law.base.pdf(rs * z / gap.sqrt()) * rs * nf / (gap * gap.sqrt())
    }

    pub fn density(&self, z: f64) -> Result<EstimateWithError> {
        self.density_many(&[z]).map(|mut v| v.pop().expect("one point"))
    }

    /// Evaluate at many points, sharing mixture draws.
    pub fn density_many(&self, zs: &[f64]) -> Result<Vec<EstimateWithError>> {
        let nf = self.law.n as f64;
        let root = nf.sqrt();
        match &self.mixing {
            Mixing::ChiSquare => {
                let k = nf - 1.0;
                let log_norm = -(0.5 * k) * std::f64::consts::LN_2 - ln_gamma(0.5 * k);
                let sd = (2.0 * k).sqrt();
                let lo = (k - 40.0 * sd).max(0.0);
                let hi = k + 40.0 * sd + 60.0;
                zs.iter()
                    .map(|&z| {
                        if z.abs() >= root {
                            return Ok(EstimateWithError::exact(0.0, Method::ChiSquareQuadrature));
                        }
                        // γ(√S z/√(N−z²)) is negligible once S z²/(N−z²) > 1600; near
                        // the edge that cut falls far inside the chi-square window.
                        let c2 = z * z / (nf - z * z);
                        let top = if c2 > 0.0 { hi.min(1600.0 / c2) } else { hi };
                        let breaks: Vec<f64> = if c2 > 0.0 {
                            vec![1.0 / c2, 10.0 / c2, 100.0 / c2, k]
                        } else {
                            vec![k]
                        };
                        let r = integrate_split(
                            |s| {
                                if s <= 0.0 {
                                    return 0.0;
                                }
                                let lp = log_norm + (0.5 * k - 1.0) * s.ln() - 0.5 * s;
                                self.integrand(s, z) * lp.exp()
                            },
                            lo.min(top),
                            top,
                            &breaks,
                            1e-12,
                            1e-12,
                        )?;
                        Ok(EstimateWithError::quadrature(r.value, r.error, Method::ChiSquareQuadrature))
                    })
                    .collect()
            }
            Mixing::Draws { s, seed } => {
                let mut acc = vec![Welford::new(); zs.len()];
                for &sv in s {
                    for (a, &z) in acc.iter_mut().zip(zs) {
                        a.push(if z.abs() >= root { 0.0 } else { self.integrand(sv, z) });
                    }
                }
                Ok(acc
                    .iter()
                    .map(|a| a.estimate(*seed).with_method(Method::MonteCarloMixture))
                    .collect())
            }
        }
    }
}

/// Pointwise estimate of `Π₁f̂^N(z)`.
pub fn marginal1_density(law: &RescaledLaw, z: f64, m_mix: usize, seed: u64) -> Result<EstimateWithError> {
    Marginal1::new(law, m_mix, seed)?.density(z)
}

/// The product `f^{⊗N}` restricted to the sphere and normalized.
#[derive(Debug, Clone)]
pub struct ConditionedState {
    pub base: DensityModel,
    pub n: usize,
}

/// `log Z_N = log ∫ f^{⊗N} dσ^N` with importance-sampling diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalizer {
    pub log_z: EstimateWithError,
    pub ess: f64,
}

impl ConditionedState {
    pub fn new(base: DensityModel, n: usize, cap: usize) -> Result<Self> {
        if n < 2 {
            return Err(domain("conditioned state", format!("need N >= 2, got {n}")));
        }
        if n > cap {
            return Err(Error::CapExceeded { op: "conditioned state", n, cap });
        }
        if !base.bounded() {
            return Err(Error::Unsupported {
                op: "conditioned state",
                density: base.name(),
                reason: "pdf must be bounded".into(),
            });
        }
        Ok(Self { base, n })
    }

    /// Log-weights `Σ log f(W_i)` for `W ~ σ^N`, one per sample.
    fn log_weights(&self, m: usize, seed: u64) -> Result<Vec<f64>> {
        let key = StreamKey::new(seed).label("conditioned").index(self.n as u64);
        let n = self.n;
        map_indices(m, |i| {
            let mut rng = key.rng(i as u64);
            let mut w = vec![0.0; n];
            loop {
                crate::sphere::fill_gaussian(&mut rng, &mut w);
                if rescale_in_place(&mut w).is_ok() {
                    break;
                }
            }
            Ok(w.iter().map(|&v| self.base.log_pdf(v)).sum())
        })
    }

    fn normalizer_from(&self, logs: &[f64], seed: u64) -> Result<(LogNormalizer, Vec<f64>)> {
        let m = logs.len();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Degenerate { ess: 0.0, minimum: MIN_ESS });
        }
        let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        let sum2: f64 = w.iter().map(|v| v * v).sum();
        let ess = sum * sum / sum2;
        if ess < MIN_ESS {
            return Err(Error::Degenerate { ess, minimum: MIN_ESS });
        }
        let mean = sum / m as f64;
        let var = (sum2 / m as f64 - mean * mean).max(0.0) * m as f64 / (m as f64 - 1.0).max(1.0);
        let se = (var / m as f64).sqrt() / mean;
        let log_z = EstimateWithError::monte_carlo(max + mean.ln(), se, m as u64, seed)
            .with_method(Method::ImportanceSampling);
        Ok((LogNormalizer { log_z, ess }, w))
    }

    pub fn log_normalizer(&self, m: usize, seed: u64) -> Result<LogNormalizer> {
        let logs = self.log_weights(m, seed)?;
        Ok(self.normalizer_from(&logs, seed)?.0)
    }

    /// `(1/N) H([f^{⊗N}]_N | σ^N) = (1/N)(E[Σ log f(W_i)] − log Z_N)` with
    /// the expectation self-normalized; standard error from 200 weighted
    /// bootstrap resamples.
    pub fn entropy_per_particle(&self, m: usize, seed: u64) -> Result<(EstimateWithError, f64)> {
        let logs = self.log_weights(m, seed)?;
        let (norm, w) = self.normalizer_from(&logs, seed)?;
        let nf = self.n as f64;
        let stat = |idx: &mut dyn Iterator<Item = usize>| -> f64 {
            let (mut sw, mut swl) = (0.0, 0.0);
            let mut count = 0usize;
            for i in idx {
                sw += w[i];
                swl += w[i] * logs[i];
                count += 1;
            }
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + (sw / count as f64).ln();
            (swl / sw - log_z) / nf
        };
        let value = stat(&mut (0..m));
        let boot_key = StreamKey::new(seed).label("conditioned_bootstrap").index(self.n as u64);
        let reps = map_indices(200, |b| {
            let mut rng = boot_key.rng(b as u64);
            let draws: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            Ok(stat(&mut draws.into_iter()))
        })?;
        let mut acc = Welford::new();
        reps.iter().for_each(|&v| acc.push(v));
        let est = EstimateWithError::monte_carlo(value, acc.variance().sqrt(), m as u64, seed)
            .with_method(Method::ImportanceSampling);
        Ok((est, norm.ess))
    }
}

/// `log Z_N` of the conditioned state.
pub fn conditioned_log_normalizer(state: &ConditionedState, m: usize, seed: u64) -> Result<LogNormalizer> {
    state.log_normalizer(m, seed)
}
