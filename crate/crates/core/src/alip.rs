//! Lipschitz approximations of rough functions in `L¹`, the fitted cost
//! exponent `r` in `‖g_ε‖_Lip ≤ L₀ ε^{−r}`, and the `L¹` distortion of a
//! function under a near-identity change of variables.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimate::{EstimateWithError, Method};
use crate::quadrature::{brent_minimize, integrate_split};
use crate::rates::epsilon_n;
use crate::rng::map_indices;
use crate::sphere::PsiMap;
use crate::stats::weighted_line_fit;

/// Uniform points used by [`measured_lipschitz`] before refinement.
pub const LIP_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    PowerKink,
    Step,
    Mollified,
}

/// One member `g_ε` of an approximating family, with measured error and
/// Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationFamily {
    pub target: String,
    pub construction: Construction,
    /// Core width `h` or mollification radius `δ`.
    pub parameter: f64,
    pub l1_error: f64,
    pub lip_constant: f64,
    /// A priori Lipschitz bound, where the construction provides one
    /// (`δ^{−1} ‖ψ'‖₁ ‖f‖_∞` for mollification).
    pub lip_bound: Option<f64>,
    /// Interval on which error and Lipschitz constant were measured.
    pub window: (f64, f64),
}

/// Largest secant slope of `f` on `[a, b]` over a uniform grid of
/// [`LIP_GRID`] points, refined geometrically around each kink down to
/// `scale · 2^{−20}`.
pub fn measured_lipschitz<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, kinks: &[f64], scale: f64) -> f64 {
    let mut xs: Vec<f64> = (0..LIP_GRID)
        .map(|i| a + (b - a) * i as f64 / (LIP_GRID - 1) as f64)
        .collect();
    for &c in kinks.iter().filter(|&&c| c >= a && c <= b) {
        xs.push(c);
        for j in 0..=20 {
            let d = scale * 0.5f64.powi(j);
            xs.extend([c - d, c + d].into_iter().filter(|&x| x >= a && x <= b));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
        .fold(0.0, f64::max)
}

/// `|x|^a` with its core `|x| < h` replaced by the tangent line at `|x| = h`,
/// measured on `[−R, R]`.
pub fn approx_power(a: f64, h: f64, truncation: f64) -> Result<ApproximationFamily> {
    if !(a > -1.0 && a <= 1.0) || !(h > 0.0 && h < truncation) || !truncation.is_finite() {
        return Err(domain(
            "approx_power",
            format!("need a in (-1, 1] and 0 < h < R; got a = {a}, h = {h}, R = {truncation}"),
        ));
    }
    let ha = h.powf(a);
    let slope = a * h.powf(a - 1.0);
    let g = move |x: f64| {
        let ax = x.abs();
        if ax >= h {
            ax.powf(a)
        } else {
            ha + slope * (ax - h)
        }
    };
    let half = integrate_split(
        |x| (x.powf(a) - g(x)).abs(),
        0.0,
        truncation,
        &[h],
        1e-15 * ha * h,
        1e-12,
    )?;
    Ok(ApproximationFamily {
        target: format!("|x|^{a}"),
        construction: Construction::PowerKink,
        parameter: h,
        l1_error: 2.0 * half.value,
        lip_constant: measured_lipschitz(g, -truncation, truncation, &[-h, 0.0, h], h),
        lip_bound: None,
        window: (-truncation, truncation),
    })
}

/// `1_{[0,∞)}` with the jump replaced by the ramp `1/2 + x/h` on `(−h/2, h/2)`,
/// measured on `[−1, 1]`.
pub fn approx_step(h: f64) -> Result<ApproximationFamily> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(domain("approx_step", format!("need h in (0, 1], got {h}")));
    }
    let g = move |x: f64| (0.5 + x / h).clamp(0.0, 1.0);
    let step = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
    let err = integrate_split(|x| (step(x) - g(x)).abs(), -1.0, 1.0, &[-0.5 * h, 0.0, 0.5 * h], 1e-16, 1e-14)?;
    Ok(ApproximationFamily {
        target: "step".into(),
        construction: Construction::Step,
        parameter: h,
        l1_error: err.value,
        lip_constant: measured_lipschitz(g, -1.0, 1.0, &[-0.5 * h, 0.5 * h], h),
        lip_bound: None,
        window: (-1.0, 1.0),
    })
}

/// Hölder targets for mollification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HolderTarget {
    /// The standard Gaussian density (smooth, all tail orders).
    Gaussian,
    /// `(1+x²)^{−(1+β)/2} Σ_{n<terms} 2^{−nα} cos(2^n x)`: Hölder of order
    /// `α` down to scale `2^{−terms}`, with tail mass `O(R^{−β})`.
    Weierstrass { alpha: f64, beta: f64, terms: u32 },
}

impl HolderTarget {
    pub fn name(&self) -> String {
        match self {
            HolderTarget::Gaussian => "gaussian".into(),
            HolderTarget::Weierstrass { alpha, beta, terms } => {
                format!("weierstrass(alpha={alpha},beta={beta},terms={terms})")
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            HolderTarget::Gaussian => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            HolderTarget::Weierstrass { alpha, beta, terms } => {
                let env = (1.0 + x * x).powf(-0.5 * (1.0 + beta));
                let mut s = 0.0;
                let mut freq = 1.0;
                for n in 0..terms {
                    s += 2f64.powf(-(n as f64) * alpha) * (freq * x).cos();
                    freq *= 2.0;
                }
                env * s
            }
        }
    }

    /// `‖f‖_∞` (attained at 0 for both targets).
    pub fn sup_norm(&self) -> f64 {
        self.value(0.0).abs()
    }

    /// Shortest length scale present in the target.
    fn min_scale(&self) -> f64 {
        match *self {
            HolderTarget::Gaussian => 0.05,
            HolderTarget::Weierstrass { terms, .. } => {
                2.0 * std::f64::consts::PI / 2f64.powi(terms.max(1) as i32 - 1)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let HolderTarget::Weierstrass { alpha, beta, terms } = *self {
            if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0) || terms == 0 || terms > 40 {
                return Err(domain(
                    "holder target",
                    format!("need alpha in (0,1), beta > 0, 1 <= terms <= 40; got {alpha}, {beta}, {terms}"),
                ));
            }
        }
        Ok(())
    }
}

/// The raised-cosine bump `ψ(u) = (1 + cos πu)/2` on `[−1, 1]`: `C¹`,
/// unit mass, `‖ψ'‖₁ = 2`.
const BUMP_DERIV_L1: f64 = 2.0;

/// Mollifications `f ∗ ψ_δ` for each `δ`, measured on `[−window, window]`.
///
/// All members share one uniform grid with spacing below `δ_min/16` and an
/// eighth of the target's shortest scale. On that grid the convolution is
/// the trapezoidal rule in the bump variable, which for the raised cosine
/// reduces to sliding sums of `f` and `f e^{−iθk}`; the `L¹` error is the
/// trapezoidal rule on the grid and the Lipschitz constant the largest
/// grid secant.
pub fn mollify_sweep(target: &HolderTarget, deltas: &[f64], window: f64) -> Result<Vec<ApproximationFamily>> {
    target.validate()?;
    if deltas.is_empty() || deltas.iter().any(|&d| !(d > 0.0 && d <= 1.0)) || !(window > 0.0) {
        return Err(domain("approx_mollify", "need deltas in (0, 1] and a positive window"));
    }
    let d_min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = deltas.iter().copied().fold(0.0, f64::max);
    let dx = (d_min / 16.0).min(target.min_scale() / 8.0);
    let pad = (d_max / dx).ceil() as usize + 1;
    let inner = (2.0 * window / dx).ceil() as usize + 1;
    let total = inner + 2 * pad;
    if total > 50_000_000 {
        return Err(domain("approx_mollify", format!("grid of {total} points is too large")));
    }
    let x0 = -window - pad as f64 * dx;
    let fs = map_indices(total, |i| Ok(target.value(x0 + i as f64 * dx)))?;
    let sup = target.sup_norm();
    deltas
        .iter()
        .map(|&delta| {
            let g = convolve_raised_cosine(&fs, dx, delta, pad, inner);
            let diff: Vec<f64> = (0..inner).map(|j| (g[j] - fs[pad + j]).abs()).collect();
            let l1_error = dx * (diff.iter().sum::<f64>() - 0.5 * (diff[0] + diff[inner - 1]));
            let lip_constant = g.windows(2).map(|w| (w[1] - w[0]).abs() / dx).fold(0.0, f64::max);
            Ok(ApproximationFamily {
                target: target.name(),
                construction: Construction::Mollified,
                parameter: delta,
                l1_error,
                lip_constant,
                lip_bound: Some(BUMP_DERIV_L1 * sup / delta),
                window: (-window, window),
            })
        })
        .collect()
}

/// `(f ∗ ψ_δ)` at grid points `pad..pad+inner`.
fn convolve_raised_cosine(fs: &[f64], dx: f64, delta: f64, pad: usize, inner: usize) -> Vec<f64> {
    let k = ((delta / dx).floor() as usize).min(pad);
    let theta = std::f64::consts::PI * dx / delta;
    // Prefix sums of f and of f e^{−iθj}, anchored at the first needed point.
    let lo = pad - k;
    let hi = pad + inner - 1 + k;
    let mut p0 = Vec::with_capacity(hi - lo + 2);
    let mut pc = Vec::with_capacity(hi - lo + 2);
    let mut ps = Vec::with_capacity(hi - lo + 2);
    let (mut s0, mut sc, mut ss) = (0.0, 0.0, 0.0);
    p0.push(0.0);
    pc.push(0.0);
    ps.push(0.0);
    for (j, &f) in fs[lo..=hi].iter().enumerate() {
        let (s, c) = (theta * j as f64).sin_cos();
        s0 += f;
        sc += f * c;
        ss -= f * s;
        p0.push(s0);
        pc.push(sc);
        ps.push(ss);
    }
    let w = 0.5 * dx / delta;
    (0..inner)
        .map(|i| {
            // Window in local indices: centre c = i + k, span [c−k, c+k].
            let c = i + k;
            let (a, b) = (c - k, c + k + 1);
            let box_sum = p0[b] - p0[a];
            let (re, im) = (pc[b] - pc[a], ps[b] - ps[a]);
            let (s, co) = (theta * c as f64).sin_cos();
            // Re(e^{iθc} Σ f_j e^{−iθj}) = Σ f_j cos(θ(c−j)).
            let cos_sum = co * re - s * im;
            w * (box_sum + cos_sum)
        })
        .collect()
}

/// A single mollification; see [`mollify_sweep`].
pub fn approx_mollify(target: &HolderTarget, delta: f64, window: f64) -> Result<ApproximationFamily> {
    Ok(mollify_sweep(target, &[delta], window)?.remove(0))
}

/// Fitted `‖g_ε‖_Lip ≈ L₀ ε^{−r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub r_hat: f64,
    pub l0_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
    /// Every approximation was exact: the target is itself Lipschitz.
    pub exact_lipschitz: bool,
}

/// Least squares of `log lip` on `log(1/error)`; needs at least 6 points
/// whose errors span at least two decades. A sweep whose errors all vanish
/// is reported as exactly Lipschitz with `r = 0`.
pub fn fit_r_pairs(errors: &[f64], lips: &[f64]) -> Result<ExponentFit> {
    let n = errors.len();
    if n < 6 || lips.len() != n {
        return Err(Error::Insufficient {
            op: "fit_r",
            reason: format!("need at least 6 sweep points, got {n}"),
        });
    }
    let scale = lips.iter().copied().fold(0.0, f64::max).max(1.0);
    if errors.iter().all(|&e| e.abs() <= 1e-13 * scale) {
        return Ok(ExponentFit {
            r_hat: 0.0,
            l0_hat: scale,
            ci_low: 0.0,
            ci_high: 0.0,
            points: n,
            exact_lipschitz: true,
        });
    }
    if errors.iter().any(|&e| !(e > 0.0)) || lips.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Insufficient {
            op: "fit_r",
            reason: "errors and Lipschitz constants must be positive".into(),
        });
    }
    let (lo, hi) = errors
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    if hi / lo < 100.0 {
        return Err(Error::Insufficient {
            op: "fit_r",
            reason: format!("errors span {:.2} decades, need 2", (hi / lo).log10()),
        });
    }
    let x: Vec<f64> = errors.iter().map(|e| -e.ln()).collect();
    let y: Vec<f64> = lips.iter().map(|l| l.ln()).collect();
    let fit = weighted_line_fit(&x, &y, &vec![1.0; n])?;
    Ok(ExponentFit {
        r_hat: fit.slope,
        l0_hat: fit.intercept.exp(),
        ci_low: fit.ci_low,
        ci_high: fit.ci_high,
        points: n,
        exact_lipschitz: false,
    })
}

/// [`fit_r_pairs`] on measured Lipschitz constants.
pub fn fit_r(sweep: &[ApproximationFamily]) -> Result<ExponentFit> {
    let errors: Vec<f64> = sweep.iter().map(|s| s.l1_error).collect();
    let lips: Vec<f64> = sweep.iter().map(|s| s.lip_constant).collect();
    fit_r_pairs(&errors, &lips)
}

/// Test functions for the distortion functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `γ^{⊗k}`, `k ∈ {1, 2}`.
    GaussianProduct { k: usize },
    /// `1_{[−1,1]}` on the line (not Lipschitz; `ALip(1)` with `L₀ = 1/2`).
    Indicator,
    /// `1_{[−1,1]} ∗ ψ_w` on the line, with the raised-cosine bump.
    SmoothedIndicator { width: f64 },
}

/// Regularity data entering the distortion bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    /// Lipschitz constant, or `L₀` of an `ALip(r, L₀)` class.
    pub lip: f64,
    /// `r` of the `ALip` class (0 for Lipschitz functions).
    pub r: f64,
    /// Tail constant: `∫_{|x|>R} |g| ≤ M R^{−β}`.
    pub tail_m: f64,
    pub beta: f64,
    pub l1_norm: f64,
}

fn raised_cosine_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        0.5 * (t + 1.0) + (std::f64::consts::PI * t).sin() / (2.0 * std::f64::consts::PI)
    }
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match *self {
            TestFunction::GaussianProduct { k } => k,
            _ => 1,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TestFunction::GaussianProduct { k } => format!("gaussian_product(k={k})"),
            TestFunction::Indicator => "indicator".into(),
            TestFunction::SmoothedIndicator { width } => format!("smoothed_indicator(width={width})"),
        }
    }

    /// Value at `x` on the line, or at radius `x` for radial functions.
    fn value(&self, x: f64) -> f64 {
        match *self {
            TestFunction::GaussianProduct { k } => {
                (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).powf(0.5 * k as f64)
            }
            TestFunction::Indicator => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::SmoothedIndicator { width } => {
                raised_cosine_cdf((x + 1.0) / width) - raised_cosine_cdf((x - 1.0) / width)
            }
        }
    }

    pub fn regularity(&self) -> Regularity {
        match *self {
            TestFunction::GaussianProduct { k } => Regularity {
                lip: (2.0 * std::f64::consts::PI).powf(-0.5 * k as f64) * (-0.5f64).exp(),
                r: 0.0,
                tail_m: k as f64,
                beta: 2.0,
                l1_norm: 1.0,
            },
            TestFunction::Indicator => Regularity {
                lip: 0.5,
                r: 1.0,
                tail_m: 1.0,
                beta: 2.0,
                l1_norm: 2.0,
            },
            TestFunction::SmoothedIndicator { width } => Regularity {
                lip: 1.0 / width,
                r: 0.0,
                tail_m: 2.0 * (1.0 + width).powi(2),
                beta: 2.0,
                l1_norm: 2.0,
            },
        }
    }

    /// Points where the function or its derivative is discontinuous.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TestFunction::GaussianProduct { .. } => vec![],
            TestFunction::Indicator => vec![-1.0, 1.0],
            TestFunction::SmoothedIndicator { width } => vec![-1.0 - width, -1.0 + width, 1.0 - width, 1.0 + width],
        }
    }

    /// Half-width of the integration domain; the mass beyond it is below
    /// double precision.
    fn extent(&self) -> f64 {
        match *self {
            TestFunction::GaussianProduct { .. } => 14.0,
            TestFunction::Indicator => 3.0,
            TestFunction::SmoothedIndicator { width } => 3.0 + width,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TestFunction::GaussianProduct { k } if !(1..=2).contains(&k) => {
                Err(domain("distortion_l1", format!("need k in {{1, 2}}, got {k}")))
            }
            TestFunction::SmoothedIndicator { width } if !(width > 0.0 && width <= 1.0) => {
                Err(domain("distortion_l1", format!("need width in (0, 1], got {width}")))
            }
            _ => Ok(()),
        }
    }
}

/// A near-identity homeomorphism `φ` of `ℝ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    Identity { k: usize },
    /// `φ = ψ⁻¹` for `ψ = PsiMap::quantitative(n, q, u, k)`.
    PsiInverse { n: f64, q: f64, u: f64, k: usize },
}

impl Deformation {
    pub fn dim(&self) -> usize {
        match *self {
            Deformation::Identity { k } | Deformation::PsiInverse { k, .. } => k,
        }
    }

    fn psi(&self) -> Result<Option<PsiMap>> {
        match *self {
            Deformation::Identity { .. } => Ok(None),
            Deformation::PsiInverse { n, q, u, k } => PsiMap::quantitative(n, q, u, k).map(Some),
        }
    }

    /// Exact `sup max(|φ(x) − x|/|x|, ‖Dφ − Id‖)`.
    pub fn epsilon(&self) -> Result<f64> {
        Ok(match self.psi()? {
            None => 0.0,
            Some(p) => {
                let d = p.sup_distortion();
                d.displacement.max(d.operator_norm)
            }
        })
    }

    /// `C(k, q) N^{−q}`, when defined.
    pub fn theoretical_epsilon(&self) -> Result<Option<f64>> {
        match *self {
            Deformation::Identity { .. } => Ok(None),
            Deformation::PsiInverse { n, q, k, .. } => Ok(Some(epsilon_n(k, q, n)?.0)),
        }
    }
}

/// Measured `‖g − g∘φ |det Dφ|‖_{L¹}` against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionResult {
    pub function: String,
    pub deformation: Deformation,
    pub measured: EstimateWithError,
    pub epsilon: f64,
    pub bound: f64,
    /// Bound evaluated at `ε = C(k,q) N^{−q}`.
    pub bound_theoretical: Option<f64>,
}

impl DistortionResult {
    pub fn within_bound(&self) -> bool {
        self.measured.value <= self.bound + self.measured.error_bound
    }
}

fn unit_sphere_area(k: usize) -> f64 {
    match k {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => {
            let kf = k as f64;
            2.0 * std::f64::consts::PI.powf(0.5 * kf) / statrs::function::gamma::gamma(0.5 * kf)
        }
    }
}

/// Right-hand side of the `L¹` comparison for a Lipschitz `g`.
pub fn distortion_bound_lipschitz(eps: f64, k: usize, lip: f64, tail_m: f64, beta: f64, l1_norm: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let d = kf + 1.0 + beta;
    let first = d
        * (2.0 * tail_m / ((kf + 1.0) * (1.0 - eps).powf(kf + beta))).powf((kf + 1.0) / d)
        * (lip * unit_sphere_area(k) / (kf + 1.0) / beta).powf(beta / d)
        * eps.powf(beta / d);
    let second = ((1.0 + eps).powi(k as i32) - 1.0) / (1.0 - eps).powi(k as i32) * l1_norm;
    first + second
}

/// The comparison bound for an `ALip(r, L₀)` function: minimize over the
/// approximation level `e` the sum `2e + (Lipschitz bound for g_e with tail 2M)`.
pub fn distortion_bound(eps: f64, k: usize, reg: &Regularity) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    if reg.r == 0.0 {
        return distortion_bound_lipschitz(eps, k, reg.lip, reg.tail_m, reg.beta, reg.l1_norm);
    }
    let total = |le: f64| {
        let e = le.exp();
        2.0 * e + distortion_bound_lipschitz(eps, k, reg.lip * e.powf(-reg.r), 2.0 * reg.tail_m, reg.beta, reg.l1_norm + e)
    };
    let (le, v) = brent_minimize(total, -60.0, 5.0, 1e-10);
    v.min(total(le))
}

/// `‖g − g∘φ |det Dφ|‖_{L¹(ℝ^k)}` by adaptive quadrature split at every
/// kink of the integrand (in polar form for `k = 2`), with its bound.
pub fn distortion_l1(g: &TestFunction, map: &Deformation) -> Result<DistortionResult> {
    g.validate()?;
    let k = g.dim();
    if map.dim() != k {
        return Err(domain("distortion_l1", format!("function has k = {k}, map has k = {}", map.dim())));
    }
    let reg = g.regularity();
    let eps = map.epsilon()?;
    if eps >= 1.0 {
        return Err(domain("distortion_l1", format!("map is too far from the identity (epsilon = {eps})")));
    }
    let psi = map.psi()?;
    let extent = g.extent();
    let measured = match psi {
        None => EstimateWithError::exact(0.0, Method::ClosedForm),
        Some(p) => {
            let z0 = p.threshold();
            // On a ray, φ(z) = s(|z|) z and |det Dφ| depend only on |z|.
            let pulled = |rho: f64| -> f64 {
                let mut zk = vec![0.0; k];
                zk[0] = rho;
                let (phi, _) = p.inverse(&zk).expect("dimension checked");
                let (det, _) = p.inverse_jacobian_det(&zk).expect("dimension checked");
                g.value(phi[0]) * det
            };
            let mut breaks = vec![0.0, -z0, z0];
            for b in g.breakpoints() {
                breaks.push(b);
                breaks.push(p.forward(&[b])?[0]);
            }
            let r = if k == 1 {
                integrate_split(
                    |x| (g.value(x) - pulled(x)).abs(),
                    -extent,
                    extent,
                    &breaks,
                    1e-14,
                    1e-12,
                )?
            } else {
                let area = unit_sphere_area(k);
                integrate_split(
                    |rho| area * rho.powi(k as i32 - 1) * (g.value(rho) - pulled(rho)).abs(),
                    0.0,
                    extent,
                    &breaks,
                    1e-14,
                    1e-12,
                )?
            };
            EstimateWithError::quadrature(r.value, r.error, Method::AdaptiveQuadrature)
        }
    };
    let bound = distortion_bound(eps, k, &reg);
    let bound_theoretical = match map.theoretical_epsilon()? {
        Some(e) if e < 1.0 => Some(distortion_bound(e, k, &reg)),
        Some(_) => Some(f64::INFINITY),
        None => None,
    };
    Ok(DistortionResult {
        function: g.name(),
        deformation: *map,
        measured,
        epsilon: eps,
        bound,
        bound_theoretical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_example() {
        let s = approx_step(0.1).unwrap();
        assert!((s.l1_error - 0.025).abs() < 1e-12);
        assert!((s.lip_constant - 10.0).abs() < 1e-9);
        let s = approx_step(1.0).unwrap();
        assert!((s.l1_error - 0.25).abs() < 1e-12);
        assert!((s.lip_constant - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_power_is_exact() {
        let sweep: Vec<_> = (1..=6).map(|j| approx_power(1.0, 0.5f64.powi(j), 1.0).unwrap()).collect();
        assert!(sweep.iter().all(|s| s.l1_error < 1e-15));
        let fit = fit_r(&sweep).unwrap();
        assert!(fit.exact_lipschitz);
        assert!((fit.l0_hat - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_refuses_short_sweeps() {
        let e = [1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3];
        let l: Vec<f64> = e.iter().map(|v| 1.0 / v).collect();
        assert!(fit_r_pairs(&e[..5], &l[..5]).is_err());
        assert!(fit_r_pairs(&e, &l).is_err());
        let e2 = [1e-1, 5e-2, 2e-2, 1e-2, 1e-3, 1e-4];
        let l2: Vec<f64> = e2.iter().map(|v| 0.25 / v).collect();
        let fit = fit_r_pairs(&e2, &l2).unwrap();
        assert!((fit.r_hat - 1.0).abs() < 1e-12);
        assert!((fit.l0_hat - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_has_no_distortion() {
        let r = distortion_l1(&TestFunction::GaussianProduct { k: 1 }, &Deformation::Identity { k: 1 }).unwrap();
        assert_eq!(r.measured.value, 0.0);
        assert_eq!(r.bound, 0.0);
        assert!(r.within_bound());
    }
}
