//! Geometry of Kac's sphere `S^{N-1} = {x : |x|² = N}` and the radial
//! change-of-variables maps `ψ` used to compare marginals.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::estimate::{EstimateWithError, Welford};
use crate::rng::{fold_samples, map_indices, SampleRng, StreamKey};

/// Relative tolerance of the `|x|² = N` invariant.
pub const SPHERE_TOL: f64 = 1e-12;

/// A point on `S^{N-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Wrap coordinates that already lie on the sphere.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(domain("sphere point", "empty coordinate vector"));
        }
        let norm2 = norm2(&coords);
        if ((norm2 / n as f64) - 1.0).abs() > SPHERE_TOL {
            return Err(domain("sphere point", format!("|x|² = {norm2}, expected {n}")));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `√N x/|x|`.
pub fn rescale(x: &[f64]) -> Result<SpherePoint> {
    let mut out = x.to_vec();
    rescale_in_place(&mut out)?;
    Ok(SpherePoint { coords: out })
}

/// Rescale in place; returns the original `|x|²`.
pub fn rescale_in_place(x: &mut [f64]) -> Result<f64> {
    let n2 = norm2(x);
    if n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let scale = (x.len() as f64 / n2).sqrt();
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(n2)
}

/// Where an ensemble came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub law: String,
    pub seed: u64,
    pub rescaled: bool,
}

/// An `M × N` batch of particle configurations, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    n: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn from_rows(n: usize, rows: Vec<Vec<f64>>, provenance: Provenance) -> Self {
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            assert_eq!(r.len(), n, "row length must equal N");
            data.extend(r);
        }
        Self { n, data, provenance }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }
}

/// Fill `out` with i.i.d. standard normals.
pub(crate) fn fill_gaussian(rng: &mut SampleRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// `M` i.i.d. draws of `σ^N`, obtained by rescaling Gaussian vectors.
pub fn sample_uniform_sphere(n: usize, m: usize, seed: u64) -> Result<Ensemble> {
    if n < 2 || m < 1 {
        return Err(domain("sample_uniform_sphere", format!("need N >= 2 and M >= 1, got N={n}, M={m}")));
    }
    let key = StreamKey::new(seed).label("uniform_sphere").index(n as u64);
    let rows = map_indices(m, |i| {
        let mut rng = key.rng(i as u64);
        let mut x = vec![0.0; n];
        loop {
            fill_gaussian(&mut rng, &mut x);
            if rescale_in_place(&mut x).is_ok() {
                return Ok(x);
            }
        }
    })?;
    Ok(Ensemble::from_rows(
        n,
        rows,
        Provenance {
            law: "uniform_sphere".into(),
            seed,
            rescaled: true,
        },
    ))
}

/// A function on `ℝ^N` with an optional analytic gradient.
pub trait AmbientFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Remove the component of `g` along the base point `y` (with `|y|² = N`).
pub fn project_tangent(g: &mut [f64], y: &[f64]) {
    let n2 = norm2(y);
    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    let c = dot / n2;
    g.iter_mut().zip(y).for_each(|(a, b)| *a -= c * b);
}

/// `∇_S f(y) = ∇f(y) − (1/N)(∇f(y)·y) y`.
///
/// Without an analytic gradient, central differences with step `1e-5·√N`
/// are taken in the ambient space and projected afterwards.
pub fn spherical_gradient<F: AmbientFunction + ?Sized>(f: &F, y: &SpherePoint) -> Vec<f64> {
    let x = y.coords();
    let mut g = f.gradient(x).unwrap_or_else(|| {
        let h = 1e-5 * (x.len() as f64).sqrt();
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|j| {
                probe[j] = x[j] + h;
                let up = f.value(&probe);
                probe[j] = x[j] - h;
                let down = f.value(&probe);
                probe[j] = x[j];
                (up - down) / (2.0 * h)
            })
            .collect()
    });
    project_tangent(&mut g, x);
    g
}

/// `log |S^{N-1}(radius)| = log(2π^{N/2}/Γ(N/2)) + (N-1) log radius`.
pub fn log_surface_area(n: usize, radius: f64) -> Result<f64> {
    if n < 2 || !(radius > 0.0) {
        return Err(domain("log_surface_area", format!("need N >= 2 and radius > 0, got N={n}, radius={radius}")));
    }
    let nf = n as f64;
    Ok(std::f64::consts::LN_2 + 0.5 * nf * std::f64::consts::PI.ln() - ln_gamma(0.5 * nf) + (nf - 1.0) * radius.ln())
}

/// Both sides of `E|Z|⁻² φ(Z/|Z|) = (1/(N−2)) ⨍ φ` for `Z ~ γ^{⊗N}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: EstimateWithError,
    pub rhs: EstimateWithError,
    /// Paired estimate of `lhs − rhs` on the same samples.
    pub discrepancy: EstimateWithError,
}

impl IdentityCheck {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.discrepancy.consistent_with(0.0, sigmas)
    }
}

/// Monte Carlo check of the inverse-square-norm identity; `phi` takes a unit vector.
pub fn inverse_norm2_identity_check<P>(n: usize, phi: P, m: usize, seed: u64) -> Result<IdentityCheck>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    if n < 3 {
        return Err(domain("inverse_norm2_identity_check", format!("need N >= 3, got {n}")));
    }
    let key = StreamKey::new(seed).label("inverse_norm2").index(n as u64);
    let inv = 1.0 / (n as f64 - 2.0);
    let acc = fold_samples(
        &key,
        m,
        || ([Welford::new(); 3], vec![0.0; n]),
        |(acc, z), rng, _| {
            fill_gaussian(rng, z);
            let r2 = norm2(z);
            let r = r2.sqrt();
            z.iter_mut().for_each(|v| *v /= r);
            let p = phi(z);
            let l = p / r2;
            let rt = p * inv;
            acc[0].push(l);
            acc[1].push(rt);
            acc[2].push(l - rt);
            Ok(())
        },
        |(a, _), (b, _)| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y);
            }
        },
    )?
    .0;
    Ok(IdentityCheck {
        lhs: acc[0].estimate(seed),
        rhs: acc[1].estimate(seed),
        discrepancy: acc[2].estimate(seed),
    })
}

/// Which branch of `ψ⁻¹` produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Inner,
    Outer,
    /// Exactly on `|z| = z₀`; the outer-branch value is returned.
    Threshold,
}

/// `ψ(x) = (a/(b + min(|x|², c)))^{1/2} x` on `ℝ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: usize,
}

/// The three distortion measures of `ψ⁻¹` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    /// `|ψ⁻¹(z) − z| / |z|`.
    pub displacement: f64,
    /// `‖Dψ⁻¹(z) − Id‖` (operator norm).
    pub operator_norm: f64,
    /// `|1 − |det Dψ⁻¹(z)||`.
    pub determinant: f64,
}

impl Distortion {
    pub fn max(&self) -> f64 {
        self.displacement.max(self.operator_norm).max(self.determinant)
    }
}

/// `C(k,q) = (10 + 2k(1 + 2k/(1−2^{−q})^{k/2})) / (1−2^{−q})`.
pub fn psi_constant(k: usize, q: f64) -> f64 {
    let kf = k as f64;
    let d = 1.0 - 2f64.powf(-q);
    (10.0 + 2.0 * kf * (1.0 + 2.0 * kf / d.powf(0.5 * kf))) / d
}

/// Sharper per-measure constants; returns `(displacement, operator, determinant)`
/// coefficients of `N^{-q}`.
pub fn psi_sharp_constants(k: usize, q: f64, n: f64) -> (f64, f64, f64) {
    let d = 1.0 - 2f64.powf(-q);
    let nq = n.powf(-q);
    let disp = 4.0 / d;
    let op = 4.0 * (1.0 + 2f64.powf(-q)) / d + 1.0;
    let det = (1.0 + 2.0 * k as f64 * (1.0 + 4.0 * nq / d).powf(0.5 * k as f64)) / d;
    (disp, op, det)
}

impl PsiMap {
    pub fn new(a: f64, b: f64, c: f64, k: usize) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || k == 0 {
            return Err(domain("psi map", format!("need a, b, c > 0 and k >= 1, got ({a}, {b}, {c}), k={k}")));
        }
        Ok(Self { a, b, c, k })
    }

    /// `(a, b, c) = (N, N + u N^{1−q}, N^{(1−q)/2})`.
    pub fn quantitative(n: f64, q: f64, u: f64, k: usize) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) || !(u > -1.0 && u < 1.0) || n < 2.0 {
            return Err(domain("psi map", format!("need q in (0,1), u in (-1,1), N >= 2; got q={q}, u={u}, N={n}")));
        }
        Self::new(n, n + u * n.powf(1.0 - q), n.powf(0.5 * (1.0 - q)), k)
    }

    /// Threshold radius `z₀ = √(ac/(b+c))`.
    pub fn threshold(&self) -> f64 {
        (self.a * self.c / (self.b + self.c)).sqrt()
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.k {
            return Err(domain("psi map", format!("expected a vector of length {}, got {}", self.k, v.len())));
        }
        Ok(())
    }

    fn branch(&self, z: &[f64]) -> Branch {
        let r2 = norm2(z);
        let t2 = self.a * self.c / (self.b + self.c);
        if r2 < t2 {
            Branch::Inner
        } else if r2 > t2 {
            Branch::Outer
        } else {
            Branch::Threshold
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let s = (self.a / (self.b + norm2(x).min(self.c))).sqrt();
        Ok(x.iter().map(|v| s * v).collect())
    }

    /// Scalar factor `s(z)` with `ψ⁻¹(z) = s(z) z`.
    fn inverse_scale(&self, z: &[f64], branch: Branch) -> Result<f64> {
        match branch {
            Branch::Inner => {
                let gap = self.a - norm2(z);
                if gap <= 0.0 {
                    return Err(domain("psi inverse", "inner branch requires |z|² < a"));
                }
                Ok((self.b / gap).sqrt())
            }
            Branch::Outer | Branch::Threshold => Ok(((self.b + self.c) / self.a).sqrt()),
        }
    }

    pub fn inverse(&self, z: &[f64]) -> Result<(Vec<f64>, Branch)> {
        self.check_dim(z)?;
        let branch = self.branch(z);
        let s = self.inverse_scale(z, branch)?;
        Ok((z.iter().map(|v| s * v).collect(), branch))
    }

    /// `Dψ⁻¹(z)`: `s(Id + zzᵀ/(a−|z|²))` inside, `√((b+c)/a) Id` outside.
    pub fn inverse_jacobian(&self, z: &[f64]) -> Result<(DMatrix<f64>, Branch)> {
        self.check_dim(z)?;
        let branch = self.branch(z);
        let s = self.inverse_scale(z, branch)?;
        let mut m = DMatrix::<f64>::identity(self.k, self.k) * s;
        if branch == Branch::Inner {
            let gap = self.a - norm2(z);
            for i in 0..self.k {
                for j in 0..self.k {
                    m[(i, j)] += s * z[i] * z[j] / gap;
                }
            }
        }
        Ok((m, branch))
    }

    /// `|det Dψ⁻¹(z)|`: `(b/(a−|z|²))^{k/2} · a/(a−|z|²)` inside.
    pub fn inverse_jacobian_det(&self, z: &[f64]) -> Result<(f64, Branch)> {
        self.check_dim(z)?;
        let branch = self.branch(z);
        let s = self.inverse_scale(z, branch)?;
        let det = match branch {
            Branch::Inner => {
                let r2 = norm2(z);
                s.powi(self.k as i32) * (1.0 + r2 / (self.a - r2))
            }
            _ => s.powi(self.k as i32),
        };
        Ok((det, branch))
    }

    /// Distortion at `z`, with the operator norm from the rank-one structure:
    /// eigenvalues `s − 1` (on `z⊥`) and `s(1 + |z|²/(a−|z|²)) − 1` (along `z`).
    pub fn distortion(&self, z: &[f64]) -> Result<Distortion> {
        self.check_dim(z)?;
        let branch = self.branch(z);
        let s = self.inverse_scale(z, branch)?;
        let (radial, det) = match branch {
            Branch::Inner => {
                let r2 = norm2(z);
                let t = 1.0 + r2 / (self.a - r2);
                (s * t, s.powi(self.k as i32) * t)
            }
            _ => (s, s.powi(self.k as i32)),
        };
        let tangential = if self.k > 1 { (s - 1.0).abs() } else { 0.0 };
        Ok(Distortion {
            displacement: (s - 1.0).abs(),
            operator_norm: tangential.max((radial - 1.0).abs()),
            determinant: (1.0 - det).abs(),
        })
    }

    /// Exact suprema over `z ∈ ℝ^k` of the three distortion measures.
    ///
    /// All inner-branch factors are monotone in `|z|`, so the suprema are
    /// attained at `z = 0`, the inner side of `z₀`, or on the outer branch.
    pub fn sup_distortion(&self) -> Distortion {
        let kf = self.k as i32;
        let s0 = (self.b / self.a).sqrt();
        let s_out = ((self.b + self.c) / self.a).sqrt();
        // On the inner side of the threshold, a − z₀² = ab/(b+c).
        let t_edge = (self.b + self.c) / self.b;
        let disp = (s0 - 1.0).abs().max((s_out - 1.0).abs());
        let radial_edge = s_out * t_edge;
        let mut op = (s0 - 1.0).abs().max((radial_edge - 1.0).abs()).max((s_out - 1.0).abs());
        if self.k > 1 {
            op = op.max((s_out - 1.0).abs());
        }
        let det = (1.0 - s0.powi(kf))
            .abs()
            .max((1.0 - s_out.powi(kf) * t_edge).abs())
            .max((1.0 - s_out.powi(kf)).abs());
        Distortion {
            displacement: disp,
            operator_norm: op,
            determinant: det,
        }
    }
}
