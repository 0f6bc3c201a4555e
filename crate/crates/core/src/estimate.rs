//! Scalar estimates with their error budget, and the mergeable accumulators
//! used to build them.

use serde::{Deserialize, Serialize};

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    AdaptiveQuadrature,
    FixedQuadrature,
    MonteCarlo,
    /// Monte Carlo outer average with per-sample radial quadrature.
    MonteCarloQuadrature,
    /// Mixture over `S = X_2^2 + ... + X_N^2` sampled by Monte Carlo.
    MonteCarloMixture,
    /// Mixture over `S ~ chi^2_{N-1}` integrated by quadrature.
    ChiSquareQuadrature,
    ImportanceSampling,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::AdaptiveQuadrature => "adaptive_quadrature",
            Method::FixedQuadrature => "fixed_quadrature",
            Method::MonteCarlo => "monte_carlo",
            Method::MonteCarloQuadrature => "monte_carlo_quadrature",
            Method::MonteCarloMixture => "monte_carlo_mixture",
            Method::ChiSquareQuadrature => "chi_square_quadrature",
            Method::ImportanceSampling => "importance_sampling",
        }
    }
}

/// A point estimate with its stochastic standard error and a deterministic
/// (quadrature / round-off) error bound.
///
/// The two error sources are combined linearly by [`EstimateWithError::total_error`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub error_bound: f64,
    pub samples: u64,
    pub seed: Option<u64>,
    pub method: Method,
}

impl EstimateWithError {
    pub fn exact(value: f64, method: Method) -> Self {
        Self {
            value,
            std_error: 0.0,
            error_bound: 0.0,
            samples: 0,
            seed: None,
            method,
        }
    }

    pub fn quadrature(value: f64, error_bound: f64, method: Method) -> Self {
        Self {
            value,
            std_error: 0.0,
            error_bound,
            samples: 0,
            seed: None,
            method,
        }
    }

    pub fn monte_carlo(value: f64, std_error: f64, samples: u64, seed: u64) -> Self {
        Self {
            value,
            std_error,
            error_bound: 0.0,
            samples,
            seed: Some(seed),
            method: Method::MonteCarlo,
        }
    }

    pub fn with_bound(mut self, error_bound: f64) -> Self {
        self.error_bound = error_bound;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Standard error plus deterministic bound.
    pub fn total_error(&self) -> f64 {
        self.std_error + self.error_bound
    }

    /// `|value - target| <= sigmas * total_error`.
    pub fn consistent_with(&self, target: f64, sigmas: f64) -> bool {
        (self.value - target).abs() <= sigmas * self.total_error()
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Mergeable running mean/variance (Welford, merged with Chan's formula).
///
/// Merging in a fixed order gives bit-identical results regardless of how
/// blocks were scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
        self.mean = mean;
        self.m2 = m2;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self, seed: u64) -> EstimateWithError {
        EstimateWithError::monte_carlo(self.mean(), self.std_error(), self.n, seed)
    }
}
