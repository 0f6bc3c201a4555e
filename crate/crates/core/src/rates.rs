//! Closed-form rate exponents and constants for the chaos bounds.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::sphere::psi_constant;

/// A multiplicative constant that may not be known explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Constant {
    Known(f64),
    Unknown,
}

/// `N^{-exponent} (log N)^{log_power}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub exponent: f64,
    pub log_power: f64,
}

impl Shape {
    pub fn power(exponent: f64) -> Self {
        Self { exponent, log_power: 0.0 }
    }

    pub fn eval(&self, n: f64) -> f64 {
        let base = n.powf(-self.exponent);
        if self.log_power == 0.0 {
            base
        } else {
            base * n.ln().powf(self.log_power)
        }
    }
}

/// A theoretical rate: which bound, its shape, constant and validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub bound: String,
    pub shape: Shape,
    pub constant: Constant,
    /// The exponent is a supremum that is not attained.
    pub strict: bool,
    pub validity: String,
}

impl RatePrediction {
    /// `constant · shape(N)` when the constant is known.
    pub fn value(&self, n: f64) -> Option<f64> {
        match self.constant {
            Constant::Known(c) => Some(c * self.shape.eval(n)),
            Constant::Unknown => None,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 2.0) {
        return Err(domain("rate", format!("need p > 2, got {p}")));
    }
    Ok(())
}

fn w2_shape(p: f64) -> Shape {
    if p.is_infinite() || p > 4.0 {
        Shape::power(0.5)
    } else if p == 4.0 {
        Shape { exponent: 0.5, log_power: 1.0 }
    } else {
        Shape::power(1.0 - 2.0 / p)
    }
}

/// Shape of the `(1/N) W₂(f̂^N, f^{⊗N})²` bound for a base with `p` moments.
pub fn w2_rate(p: f64) -> Result<RatePrediction> {
    check_p(p)?;
    Ok(RatePrediction {
        bound: "w2_rescaled_tensor".into(),
        shape: w2_shape(p),
        constant: Constant::Unknown,
        strict: false,
        validity: format!("unit energy, no atom at 0, finite moment of order p = {p}"),
    })
}

/// `b = (p − r)/(p − 2)` and the `(1/N) W_r^r` bound shape (exponents scaled by `b`).
pub fn wr_rate(p: f64, r: f64) -> Result<(f64, RatePrediction)> {
    check_p(p)?;
    if !(r > 2.0 && r < p) {
        return Err(domain("wr_rate", format!("need 2 < r < p, got r = {r}, p = {p}")));
    }
    let b = if p.is_infinite() { 1.0 } else { (p - r) / (p - 2.0) };
    let s = w2_shape(p);
    Ok((
        b,
        RatePrediction {
            bound: "wr_rescaled_tensor".into(),
            shape: Shape {
                exponent: b * s.exponent,
                log_power: b * s.log_power,
            },
            constant: Constant::Unknown,
            strict: false,
            validity: format!("no atom at 0, finite moment of order p = {p} > r = {r}"),
        },
    ))
}

fn check_l1(k: usize, delta: f64, r: f64) -> Result<()> {
    if k < 1 || !(delta > 0.0 && delta <= 2.0) || !(r >= 0.0 && r.is_finite()) {
        return Err(domain(
            "l1 exponent",
            format!("need k >= 1, delta in (0, 2], r >= 0; got k = {k}, delta = {delta}, r = {r}"),
        ));
    }
    Ok(())
}

fn l1_denominator(k: usize, delta: f64, r: f64) -> f64 {
    k as f64 + 3.0 + delta + r * (2.0 + delta)
}

/// `η = δ/(k + 5 + δ + r(2+δ))`.
pub fn l1_eta(k: usize, delta: f64, r: f64) -> Result<f64> {
    check_l1(k, delta, r)?;
    Ok(delta / (l1_denominator(k, delta, r) + 2.0))
}

/// `q* = (δ/(δ+2)) (k+3+δ+r(2+δ))/(k+5+δ+r(2+δ))`.
pub fn l1_qstar(k: usize, delta: f64, r: f64) -> Result<f64> {
    check_l1(k, delta, r)?;
    let d = l1_denominator(k, delta, r);
    Ok(delta / (delta + 2.0) * d / (d + 2.0))
}

/// `(η₁(q), η₂(q), η₃(q))` with `η₁ = (2+δ)q/(k+3+δ+r(2+δ))`,
/// `η₂ = δ/2 − q(1+δ/2)`, `η₃ = (2+δ)(1−q)/4`.
pub fn l1_exponent_terms(k: usize, delta: f64, r: f64, q: f64) -> (f64, f64, f64) {
    let e1 = (2.0 + delta) * q / l1_denominator(k, delta, r);
    let e2 = 0.5 * delta - q * (1.0 + 0.5 * delta);
    let e3 = (2.0 + delta) * (1.0 - q) / 4.0;
    (e1, e2, e3)
}

/// Numerical `max_{q∈[0,1]} min(η₁, η₂, η₃)` on a grid of `grid` points
/// refined by golden-section search; returns `(max, argmax)`.
pub fn l1_eta_numerical(k: usize, delta: f64, r: f64, grid: usize) -> Result<(f64, f64)> {
    check_l1(k, delta, r)?;
    let g = |q: f64| {
        let (a, b, c) = l1_exponent_terms(k, delta, r, q);
        a.min(b).min(c)
    };
    let step = 1.0 / (grid - 1) as f64;
    let (mut best_q, mut best) = (0.0, g(0.0));
    for i in 1..grid {
        let q = i as f64 * step;
        let v = g(q);
        if v > best {
            best = v;
            best_q = q;
        }
    }
    // min of concave pieces is concave, so golden section on the bracket is safe.
    let (mut lo, mut hi) = ((best_q - step).max(0.0), (best_q + step).min(1.0));
    let phi = 0.618_033_988_749_894_8;
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if g(a) < g(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok((g(q), q))
}

/// `ε_N = C(k,q) N^{−q}` and `C(k,q)`.
pub fn epsilon_n(k: usize, q: f64, n: f64) -> Result<(f64, f64)> {
    if k < 1 || !(q > 0.0 && q < 1.0) || !(n >= 2.0) {
        return Err(domain("epsilon_n", format!("need k >= 1, q in (0,1), N >= 2; got k = {k}, q = {q}, N = {n}")));
    }
    let c = psi_constant(k, q);
    Ok((c * n.powf(-q), c))
}

/// `δ̄ = min(2, δ)`.
pub fn delta_bar(delta: f64) -> f64 {
    delta.min(2.0)
}

/// Tail bound `16 N^{−(δ̄/2 − (1+δ̄/2)q)} E|X|^{2+δ̄}`; `moment` is `E|X|^{2+δ̄}`.
pub fn vonbahr_bound(n: f64, q: f64, delta: f64, moment: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) || !(delta > 0.0) || !(moment >= 0.0) || !(n >= 1.0) {
        return Err(domain(
            "vonbahr_bound",
            format!("need q in (0,1), delta > 0, moment >= 0, N >= 1; got q = {q}, delta = {delta}, moment = {moment}"),
        ));
    }
    let d = delta_bar(delta);
    Ok(16.0 * n.powf(-(0.5 * d - (1.0 + 0.5 * d) * q)) * moment)
}

/// Smallest `N` admitted by the tail bound: `max{2k, (2k E X²)^{1/(1−q)}}`.
pub fn vonbahr_min_n(k: usize, q: f64, second_moment: f64) -> Result<f64> {
    if k < 1 || !(q > 0.0 && q < 1.0) || !(second_moment > 0.0) {
        return Err(domain("vonbahr_min_n", format!("need k >= 1, q in (0,1), E X² > 0; got k = {k}, q = {q}")));
    }
    let kf = 2.0 * k as f64;
    Ok(kf.max((kf * second_moment).powf(1.0 / (1.0 - q))))
}

/// `N₀(k, δ) = (2k)^{1+δ/2}`.
pub fn n_min(k: usize, delta: f64) -> Result<f64> {
    if k < 1 || !(delta > 0.0 && delta <= 2.0) {
        return Err(domain("n_min", format!("need k >= 1, delta in (0, 2]; got k = {k}, delta = {delta}")));
    }
    Ok((2.0 * k as f64).powf(1.0 + 0.5 * delta))
}

/// Entropic chaos rate for a base with `k > 4` moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropicRate {
    /// Supremum `(1/8)(k−2)/(k+1)` of admissible exponents.
    pub eta_max: f64,
    /// `eta_max` is not attained.
    pub strict: bool,
    /// Exponent `k/4 − 1` of the second term.
    pub companion: f64,
    /// Concrete exponent used for studies: `eta_max − 0.01`.
    pub study_eta: f64,
}

impl EntropicRate {
    /// Exponent of the slower of the two terms.
    pub fn effective(&self) -> f64 {
        self.study_eta.min(self.companion)
    }
}

pub fn entropic_rate(k: f64) -> Result<EntropicRate> {
    if !(k > 4.0) {
        return Err(domain("entropic_rate", format!("need k > 4 moments, got {k}")));
    }
    let eta_max = if k.is_infinite() { 0.125 } else { (k - 2.0) / (8.0 * (k + 1.0)) };
    Ok(EntropicRate {
        eta_max,
        strict: true,
        companion: if k.is_infinite() { f64::INFINITY } else { 0.25 * k - 1.0 },
        study_eta: eta_max - 0.01,
    })
}

/// `N^{−r/4}` rate of the conditioned-state entropy.
pub fn conditioned_rate(r: f64) -> Result<RatePrediction> {
    if !(r > 0.0) {
        return Err(domain("conditioned_rate", format!("need r > 0, got {r}")));
    }
    Ok(RatePrediction {
        bound: "conditioned_entropy".into(),
        shape: Shape::power(0.25 * r),
        constant: Constant::Unknown,
        strict: false,
        validity: format!("finite moment of order 4 + r = {}", 4.0 + r),
    })
}

/// `η` of the L¹ marginal bound as a prediction with unknown constant.
pub fn l1_rate(k: usize, delta: f64, r: f64) -> Result<RatePrediction> {
    Ok(RatePrediction {
        bound: "l1_marginal".into(),
        shape: Shape::power(l1_eta(k, delta, r)?),
        constant: Constant::Unknown,
        strict: false,
        validity: format!("unit energy, ALip({r}), finite moment of order {}", 2.0 + delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_cases() {
        let six = w2_rate(6.0).unwrap();
        assert!((six.shape.eval(100.0) - 0.1).abs() < 1e-15);
        assert_eq!(six.constant, Constant::Unknown);
        assert!((w2_rate(3.0).unwrap().shape.eval(100.0) - 100f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        let e2 = std::f64::consts::E.powi(2);
        assert!((w2_rate(4.0).unwrap().shape.eval(e2) - 2.0 / std::f64::consts::E).abs() < 1e-14);
        assert!(w2_rate(2.0).is_err());
    }

    #[test]
    fn wr_cases() {
        let (b, pred) = wr_rate(6.0, 3.0).unwrap();
        assert!((b - 0.75).abs() < 1e-15);
        assert!((pred.shape.exponent - 0.375).abs() < 1e-15);
        let (b, pred) = wr_rate(3.5, 3.0).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 1e-15);
        assert!((pred.shape.exponent - (1.0 - 2.0 / 3.5) / 3.0).abs() < 1e-15);
        let (b, pred) = wr_rate(6.0, 2.0 + 1e-12).unwrap();
        assert!((b - 1.0).abs() < 1e-11);
        assert!((pred.shape.exponent - 0.5).abs() < 1e-11);
        assert!(wr_rate(6.0, 6.0).is_err());
        assert!(wr_rate(6.0, 2.0).is_err());
    }

    #[test]
    fn l1_exponents() {
        assert!((l1_eta(1, 2.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((l1_qstar(1, 2.0, 0.0).unwrap() - 0.375).abs() < 1e-15);
        assert!((l1_eta(2, 1.0, 1.0).unwrap() - 1.0 / 11.0).abs() < 1e-15);
        assert!((l1_qstar(2, 1.0, 1.0).unwrap() - 3.0 / 11.0).abs() < 1e-15);
        let q = l1_qstar(2, 1.0, 1.0).unwrap();
        let (e1, e2, _) = l1_exponent_terms(2, 1.0, 1.0, q);
        assert!((e1 - 1.0 / 11.0).abs() < 1e-15 && (e2 - 1.0 / 11.0).abs() < 1e-15);
        assert!(l1_eta(1, 1e-9, 0.0).unwrap() < 1e-9);
        assert!(l1_eta(1, 2.5, 0.0).is_err());
    }

    #[test]
    fn epsilon_constants() {
        let (_, c) = epsilon_n(1, 0.5, 100.0).unwrap();
        let d = 1.0 - 2f64.powf(-0.5);
        assert!((c - (10.0 + 2.0 * (1.0 + 2.0 / d.sqrt())) / d).abs() < 1e-12);
        let (_, c_lim) = epsilon_n(1, 1.0 - 1e-12, 100.0).unwrap();
        assert!((c_lim - 2.0 * (12.0 + 4.0 * 2f64.sqrt())).abs() < 1e-9);
        let a = epsilon_n(2, 0.3, 10.0).unwrap().0;
        let b = epsilon_n(2, 0.3, 1000.0).unwrap().0;
        assert!(b < a);
    }

    #[test]
    fn misc_rates() {
        let e = entropic_rate(6.0).unwrap();
        assert!((e.eta_max - 1.0 / 14.0).abs() < 1e-15);
        assert!((e.companion - 0.5).abs() < 1e-15);
        assert!(e.strict);
        assert!((vonbahr_bound(256.0, 0.25, 2.0, 3.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((n_min(1, 2.0).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(conditioned_rate(2.0).unwrap().shape.exponent, 0.5);
        assert!((vonbahr_min_n(2, 0.2, 1.0).unwrap() - 4f64.powf(1.25)).abs() < 1e-12);
    }
}
