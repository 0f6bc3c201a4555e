//! One-dimensional reference densities and their functionals relative to the
//! standard Gaussian `γ`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::estimate::{EstimateWithError, Method};
use crate::quadrature::{integrate_split, Integral};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Absolute tolerance for functional quadrature.
pub const FUNCTIONAL_TOL: f64 = 1e-10;

/// The parametric families in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian { mean: f64, sd: f64 },
    /// `½N(-offset, sd²) + ½N(offset, sd²)`.
    SymmetricMixture { offset: f64, sd: f64 },
    /// Student-t with `nu` degrees of freedom scaled to unit variance.
    StudentT { nu: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
}

/// A density as named in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

impl DensitySpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }
}

/// Support of a density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    RealLine,
    Interval(f64, f64),
}

impl Support {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Support::RealLine => (f64::NEG_INFINITY, f64::INFINITY),
            Support::Interval(a, b) => (a, b),
        }
    }
}

/// Derivative of the pdf, or a flag where it does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivative {
    Value(f64),
    Undefined,
}

/// `(pdf, log_pdf, derivative)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub pdf: f64,
    pub log_pdf: f64,
    pub derivative: Derivative,
}

/// An immutable reference density with sampler and functionals.
#[derive(Debug, Clone)]
pub struct DensityModel {
    family: Family,
    // Scale taking a standard t_ν variable to unit variance.
    t_scale: f64,
    t_log_norm: f64,
    t_sampler: Option<StudentT<f64>>,
}

impl PartialEq for DensityModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl fmt::Display for DensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl DensityModel {
    pub fn new(family: Family) -> Result<Self> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(domain("density", format!("{what} must be positive and finite, got {v}")))
            }
        };
        let mut model = Self {
            family,
            t_scale: 1.0,
            t_log_norm: 0.0,
            t_sampler: None,
        };
        match family {
            Family::Gaussian { mean, sd } => {
                positive(sd, "sd")?;
                if !mean.is_finite() {
                    return Err(domain("density", "mean must be finite"));
                }
            }
            Family::SymmetricMixture { offset, sd } => {
                positive(sd, "sd")?;
                if !offset.is_finite() {
                    return Err(domain("density", "offset must be finite"));
                }
            }
            Family::StudentT { nu } => {
                if !(nu.is_finite() && nu > 2.0) {
                    return Err(domain("density", format!("unit-variance Student-t needs nu > 2, got {nu}")));
                }
                model.t_scale = ((nu - 2.0) / nu).sqrt();
                model.t_log_norm =
                    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln() - model.t_scale.ln();
                model.t_sampler = Some(StudentT::new(nu).map_err(|e| domain("density", e.to_string()))?);
            }
            Family::Uniform { half_width } => positive(half_width, "half_width")?,
        }
        Ok(model)
    }

    pub fn standard_gaussian() -> Self {
        Self::new(Family::Gaussian { mean: 0.0, sd: 1.0 }).expect("valid parameters")
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::new(Family::Gaussian { mean, sd })
    }

    pub fn mixture(offset: f64, sd: f64) -> Result<Self> {
        Self::new(Family::SymmetricMixture { offset, sd })
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        Self::new(Family::StudentT { nu })
    }

    /// Uniform on `[-√3, √3]`, the unit-energy member with jumps.
    pub fn unit_uniform() -> Self {
        Self::new(Family::Uniform { half_width: 3f64.sqrt() }).expect("valid parameters")
    }

    /// Build from a `{name, parameters}` spec.
    ///
    /// Names: `standard_gaussian`, `gaussian` (mean, sd), `mixture`
    /// (offset, sd), `student_t` (nu), `uniform` (half_width, default √3).
    pub fn from_spec(spec: &DensitySpec) -> Result<Self> {
        let p = |key: &str, default: Option<f64>| -> Result<f64> {
            spec.parameters
                .get(key)
                .copied()
                .or(default)
                .ok_or_else(|| domain("density spec", format!("`{}` needs parameter `{key}`", spec.name)))
        };
        let known: &[&str] = match spec.name.as_str() {
            "standard_gaussian" | "gamma" => &[],
            "gaussian" => &["mean", "sd"],
            "mixture" => &["offset", "sd"],
            "student_t" => &["nu"],
            "uniform" => &["half_width"],
            other => return Err(Error::UnknownDensity(other.to_string())),
        };
        if let Some(extra) = spec.parameters.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(domain("density spec", format!("unknown parameter `{extra}` for `{}`", spec.name)));
        }
        match spec.name.as_str() {
            "gaussian" => Self::gaussian(p("mean", Some(0.0))?, p("sd", Some(1.0))?),
            "mixture" => Self::mixture(p("offset", None)?, p("sd", None)?),
            "student_t" => Self::student_t(p("nu", None)?),
            "uniform" => Self::new(Family::Uniform {
                half_width: p("half_width", Some(3f64.sqrt()))?,
            }),
            _ => Ok(Self::standard_gaussian()),
        }
    }

    /// The catalog members exercised by the studies.
    pub fn catalog() -> Vec<DensityModel> {
        let mut out = vec![
            Self::standard_gaussian(),
            Self::gaussian(0.6, 0.8).expect("valid"),
            Self::mixture(0.6, 0.8).expect("valid"),
        ];
        for nu in [3.0, 5.0, 9.0] {
            out.push(Self::student_t(nu).expect("valid"));
        }
        out.push(Self::unit_uniform());
        out
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn spec(&self) -> DensitySpec {
        match self.family {
            Family::Gaussian { mean, sd } if mean == 0.0 && sd == 1.0 => DensitySpec::new("standard_gaussian"),
            Family::Gaussian { mean, sd } => DensitySpec::new("gaussian").with("mean", mean).with("sd", sd),
            Family::SymmetricMixture { offset, sd } => {
                DensitySpec::new("mixture").with("offset", offset).with("sd", sd)
            }
            Family::StudentT { nu } => DensitySpec::new("student_t").with("nu", nu),
            Family::Uniform { half_width } => DensitySpec::new("uniform").with("half_width", half_width),
        }
    }

    pub fn name(&self) -> String {
        match self.family {
            Family::Gaussian { mean, sd } if mean == 0.0 && sd == 1.0 => "standard_gaussian".into(),
            Family::Gaussian { mean, sd } => format!("gaussian(mean={mean},sd={sd})"),
            Family::SymmetricMixture { offset, sd } => format!("mixture(offset={offset},sd={sd})"),
            Family::StudentT { nu } => format!("student_t(nu={nu})"),
            Family::Uniform { half_width } => format!("uniform(half_width={half_width})"),
        }
    }

    pub fn is_standard_gaussian(&self) -> bool {
        matches!(self.family, Family::Gaussian { mean, sd } if mean == 0.0 && sd == 1.0)
    }

    pub fn support(&self) -> Support {
        match self.family {
            Family::Uniform { half_width } => Support::Interval(-half_width, half_width),
            _ => Support::RealLine,
        }
    }

    /// Points where the pdf or its derivative is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.family {
            Family::Uniform { half_width } => vec![-half_width, half_width],
            _ => Vec::new(),
        }
    }

    pub fn differentiable(&self) -> bool {
        !matches!(self.family, Family::Uniform { .. })
    }

    pub fn bounded(&self) -> bool {
        true
    }

    /// Second moment of the density in closed form.
    pub fn second_moment(&self) -> f64 {
        match self.family {
            Family::Gaussian { mean, sd } => mean * mean + sd * sd,
            Family::SymmetricMixture { offset, sd } => offset * offset + sd * sd,
            Family::StudentT { .. } => 1.0,
            Family::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    /// `∫x² f = 1`.
    pub fn unit_energy(&self) -> bool {
        (self.second_moment() - 1.0).abs() < 1e-12
    }

    /// Supremum of the orders `p` with `∫|x|^p f < ∞`.
    pub fn moment_order(&self) -> f64 {
        match self.family {
            Family::StudentT { nu } => nu,
            _ => f64::INFINITY,
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match self.family {
            Family::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
            }
            Family::SymmetricMixture { offset, sd } => {
                let s2 = sd * sd;
                let y = x * offset / s2;
                -LN_SQRT_2PI - sd.ln() - (x * x + offset * offset) / (2.0 * s2) + log_cosh(y)
            }
            Family::StudentT { nu } => {
                let c = self.t_scale;
                let t = x / c;
                self.t_log_norm - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
            }
            Family::Uniform { half_width } => {
                if x.abs() <= half_width {
                    -(2.0 * half_width).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `(log f)'(x)`; `None` where undefined.
    pub fn score(&self, x: f64) -> Option<f64> {
        match self.family {
            Family::Gaussian { mean, sd } => Some(-(x - mean) / (sd * sd)),
            Family::SymmetricMixture { offset, sd } => {
                let s2 = sd * sd;
                Some((-x + offset * (x * offset / s2).tanh()) / s2)
            }
            Family::StudentT { nu } => Some(-(nu + 1.0) * x / (nu - 2.0 + x * x)),
            Family::Uniform { half_width } => {
                if x.abs() == half_width {
                    None
                } else {
                    Some(0.0)
                }
            }
        }
    }

    pub fn evaluate(&self, x: f64) -> Evaluation {
        let log_pdf = self.log_pdf(x);
        let pdf = log_pdf.exp();
        let derivative = match self.score(x) {
            Some(s) => Derivative::Value(if pdf > 0.0 { pdf * s } else { 0.0 }),
            None => Derivative::Undefined,
        };
        Evaluation { pdf, log_pdf, derivative }
    }

    /// One draw from the density using the caller's generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Family::SymmetricMixture { offset, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * offset + sd * z
            }
            Family::StudentT { .. } => {
                let t = self.t_sampler.as_ref().expect("built in constructor");
                self.t_scale * t.sample(rng)
            }
            Family::Uniform { half_width } => rng.random_range(-half_width..=half_width),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.sample(rng);
        }
    }

    fn integrate(&self, op: &'static str, g: impl FnMut(f64) -> f64, extra_breaks: &[f64]) -> Result<Integral> {
        let (a, b) = self.support().bounds();
        let mut breaks = self.breakpoints();
        breaks.extend_from_slice(extra_breaks);
        integrate_split(g, a, b, &breaks, FUNCTIONAL_TOL, 1e-13).map_err(|e| match e {
            Error::Divergence { error, tolerance, .. } => Error::Divergence { op, error, tolerance },
            other => other,
        })
    }

    /// `∫|x|^p f`, or `+∞` when `p` reaches the tail order.
    pub fn moment(&self, p: f64) -> Result<EstimateWithError> {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(domain("moment", format!("order must be finite and >= 0, got {p}")));
        }
        if p == 0.0 {
            return Ok(EstimateWithError::exact(1.0, Method::ClosedForm));
        }
        if p >= self.moment_order() {
            return Ok(EstimateWithError::exact(f64::INFINITY, Method::ClosedForm));
        }
        let closed = match self.family {
            Family::Gaussian { mean, sd } if mean == 0.0 => Some(
                (p * sd.ln() + 0.5 * p * 2f64.ln() + ln_gamma(0.5 * (p + 1.0)) - 0.5 * PI.ln()).exp(),
            ),
            Family::StudentT { nu } => Some(
                (p * self.t_scale.ln() + 0.5 * p * nu.ln() + ln_gamma(0.5 * (p + 1.0)) + ln_gamma(0.5 * (nu - p))
                    - 0.5 * PI.ln()
                    - ln_gamma(0.5 * nu))
                    .exp(),
            ),
            Family::Uniform { half_width } => Some(half_width.powf(p) / (p + 1.0)),
            _ => None,
        };
        if let Some(v) = closed {
            return Ok(EstimateWithError::exact(v, Method::ClosedForm));
        }
        let r = self.integrate("moment", |x| if x == 0.0 { 0.0 } else { x.abs().powf(p) * self.pdf(x) }, &[0.0])?;
        Ok(EstimateWithError::quadrature(r.value, r.error, Method::AdaptiveQuadrature))
    }

    /// `H(f|γ) = ∫ f log(f/γ)`.
    pub fn rel_entropy_gaussian(&self) -> Result<EstimateWithError> {
        match self.family {
            Family::Gaussian { mean, sd } => Ok(EstimateWithError::exact(
                0.5 * (sd * sd + mean * mean - 1.0) - sd.ln(),
                Method::ClosedForm,
            )),
            Family::Uniform { half_width } => Ok(EstimateWithError::exact(
                -(2.0 * half_width).ln() + LN_SQRT_2PI + half_width * half_width / 6.0,
                Method::ClosedForm,
            )),
            _ => {
                let r = self.integrate(
                    "relative entropy",
                    |x| {
                        let lf = self.log_pdf(x);
                        if lf == f64::NEG_INFINITY {
                            0.0
                        } else {
                            lf.exp() * (lf + LN_SQRT_2PI + 0.5 * x * x)
                        }
                    },
                    &[],
                )?;
                Ok(EstimateWithError::quadrature(r.value.max(0.0), r.error, Method::AdaptiveQuadrature))
            }
        }
    }

    /// `I(f|γ) = ∫ f ((log f)' + x)²`.
    pub fn rel_fisher_gaussian(&self) -> Result<EstimateWithError> {
        if !self.differentiable() {
            return Err(Error::Unsupported {
                op: "relative Fisher information",
                density: self.name(),
                reason: "pdf is not differentiable".into(),
            });
        }
        match self.family {
            Family::Gaussian { mean, sd } => {
                let a = 1.0 - 1.0 / (sd * sd);
                Ok(EstimateWithError::exact(a * a * sd * sd + mean * mean, Method::ClosedForm))
            }
            _ => {
                let r = self.integrate(
                    "relative Fisher information",
                    |x| {
                        let lf = self.log_pdf(x);
                        if lf == f64::NEG_INFINITY {
                            return 0.0;
                        }
                        let s = self.score(x).unwrap_or(0.0) + x;
                        lf.exp() * s * s
                    },
                    &[],
                )?;
                Ok(EstimateWithError::quadrature(r.value.max(0.0), r.error, Method::AdaptiveQuadrature))
            }
        }
    }
}

/// `log cosh(y)` without overflow.
fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
