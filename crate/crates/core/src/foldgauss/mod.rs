//! Folded-Gaussian distributions over space-time `(s, t) ∈ ℝ² × ℝ`.
//!
//! A component has a Gaussian time marginal `N(m_t, σ_t²)` and, at every
//! time `t`, a Gaussian spatial conditional
//!
//! ```text
//! s | t ~ N(m_s + f(m_t - t), a(t) Σ_s),   a(t) = exp(-(t - m_t)² / (2 σ_t²))
//! ```
//!
//! where `f` is a polynomial without constant term. The joint density is the
//! product of the two (chain rule) and is not Gaussian in general. Slicing a
//! component at a frame time yields the flat 2D Gaussian the rasterizer draws.

pub mod quadrature;

use std::f64::consts::{SQRT_2, TAU};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default number of Gauss–Hermite nodes per axis for verification integrals.
pub const QUADRATURE_NODES: usize = 64;

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| quadrature::gauss_hermite(QUADRATURE_NODES))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian1D {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
            return Err(Error::Domain(format!(
                "1D Gaussian needs finite mean and var > 0 (mean={mean}, var={var})"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        gauss1d_pdf(x, *self)
    }
}

/// Normal density `(2π var)^(-1/2) exp(-(x - mean)² / (2 var))`.
pub fn gauss1d_pdf(x: f64, g: Gaussian1D) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("pdf evaluated at non-finite x={x}")));
    }
    if !(g.var > 0.0) {
        return Err(Error::Domain(format!("non-positive variance {}", g.var)));
    }
    let d = x - g.mean;
    Ok((-(d * d) / (2.0 * g.var)).exp() / (TAU * g.var).sqrt())
}

/// Temporal likelihood ratio `N(m_t, σ_t²)(t) / N(m_t, σ_t²)(m_t)`.
///
/// Equals 1 at the temporal mode and decays to 0 in both directions.
pub fn a_of_t(t: f64, m_t: f64, sigma_t: f64) -> Result<f64> {
    if !(sigma_t > 0.0) {
        return Err(Error::Domain(format!("sigma_t must be > 0, got {sigma_t}")));
    }
    Ok(time_scale(t, m_t, sigma_t))
}

#[inline]
pub(crate) fn time_scale(t: f64, m_t: f64, sigma_t: f64) -> f64 {
    let u = t - m_t;
    (-(u * u) / (2.0 * sigma_t * sigma_t)).exp()
}

/// Rotated anisotropic covariance `R(θ) diag(s1², s2²) R(θ)ᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialCov2 {
    pub theta: f64,
    pub s1: f64,
    pub s2: f64,
}

impl SpatialCov2 {
    pub fn new(theta: f64, s1: f64, s2: f64) -> Self {
        Self { theta, s1, s2 }
    }

    /// Columns `r1 = (cos θ, sin θ)` and `r2 = (-sin θ, cos θ)`.
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.theta.sin_cos();
        ([c, s], [-s, c])
    }

    /// Row-major `[[xx, xy], [xy, yy]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let (a, b) = (self.s1 * self.s1, self.s2 * self.s2);
        let xx = a * c * c + b * s * s;
        let yy = a * s * s + b * c * c;
        let xy = (a - b) * c * s;
        [[xx, xy], [xy, yy]]
    }

    pub fn det(&self) -> f64 {
        let s = self.s1 * self.s2;
        s * s
    }

    pub fn is_valid(&self) -> bool {
        self.s1 > 0.0 && self.s2 > 0.0 && self.theta.is_finite() && self.s1.is_finite() && self.s2.is_finite()
    }
}

/// Polynomial shift `f(u) = Σ_{p=1..P} (cx_p, cy_p) uᵖ`; `f(0) = 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolyShift {
    pub coeffs_x: Vec<f64>,
    pub coeffs_y: Vec<f64>,
}

impl PolyShift {
    pub fn new(coeffs_x: Vec<f64>, coeffs_y: Vec<f64>) -> Result<Self> {
        if coeffs_x.len() != coeffs_y.len() {
            return Err(Error::Shape(format!(
                "poly coefficient lengths differ: {} vs {}",
                coeffs_x.len(),
                coeffs_y.len()
            )));
        }
        Ok(Self { coeffs_x, coeffs_y })
    }

    pub fn zero(degree: usize) -> Self {
        Self {
            coeffs_x: vec![0.0; degree],
            coeffs_y: vec![0.0; degree],
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs_x.len()
    }

    pub fn eval(&self, u: f64) -> [f64; 2] {
        [horner(&self.coeffs_x, u), horner(&self.coeffs_y, u)]
    }

    /// `f'(u)`.
    pub fn derivative(&self, u: f64) -> [f64; 2] {
        [horner_deriv(&self.coeffs_x, u), horner_deriv(&self.coeffs_y, u)]
    }
}

/// `Σ_{p=1..P} c[p-1] uᵖ`.
#[inline]
pub(crate) fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cp| (acc + cp) * u)
}

#[inline]
pub(crate) fn horner_deriv(c: &[f64], u: f64) -> f64 {
    c.iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (i, &cp)| acc * u + (i as f64 + 1.0) * cp)
}

/// One space-time video primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedGaussian3D {
    pub m_s: [f64; 2],
    pub cov_s: SpatialCov2,
    pub m_t: f64,
    pub sigma_t: f64,
    pub poly: PolyShift,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl FoldedGaussian3D {
    pub fn validate(&self) -> Result<()> {
        let finite = self.m_s.iter().all(|v| v.is_finite()) && self.m_t.is_finite();
        if !finite {
            return Err(Error::Domain("non-finite mean".into()));
        }
        if !self.cov_s.is_valid() {
            return Err(Error::Domain(format!("invalid spatial covariance {:?}", self.cov_s)));
        }
        if !(self.sigma_t > 0.0) || !self.sigma_t.is_finite() {
            return Err(Error::Domain(format!("sigma_t must be > 0, got {}", self.sigma_t)));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::Domain(format!("opacity {} outside (0,1)", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain(format!("color {:?} outside [0,1]", self.color)));
        }
        if self.poly.coeffs_x.len() != self.poly.coeffs_y.len() {
            return Err(Error::Shape("poly coefficient lengths differ".into()));
        }
        Ok(())
    }

    pub fn time_marginal(&self) -> Gaussian1D {
        Gaussian1D {
            mean: self.m_t,
            var: self.sigma_t * self.sigma_t,
        }
    }
}

/// A flat 2D Gaussian with covariance `scale · Σ(θ, s1, s2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionedGaussian2D {
    pub mean: [f64; 2],
    pub cov: SpatialCov2,
    /// Covariance scale factor `a(t)`.
    pub scale: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl ConditionedGaussian2D {
    pub fn cov_matrix(&self) -> [[f64; 2]; 2] {
        let m = self.cov.matrix();
        [
            [self.scale * m[0][0], self.scale * m[0][1]],
            [self.scale * m[1][0], self.scale * m[1][1]],
        ]
    }

    /// Mahalanobis form `dᵀ (scale Σ)⁻¹ d` evaluated in the principal frame.
    #[inline]
    pub fn quad_form(&self, s: [f64; 2]) -> f64 {
        let (r1, r2) = self.cov.axes();
        let d = [s[0] - self.mean[0], s[1] - self.mean[1]];
        let u = d[0] * r1[0] + d[1] * r1[1];
        let v = d[0] * r2[0] + d[1] * r2[1];
        (u * u / (self.cov.s1 * self.cov.s1) + v * v / (self.cov.s2 * self.cov.s2)) / self.scale
    }

    pub fn pdf(&self, s: [f64; 2]) -> f64 {
        let q = self.quad_form(s);
        (-0.5 * q).exp() / (TAU * self.scale * self.cov.s1 * self.cov.s2)
    }
}

/// Slice `fg` at time `t`: mean `m_s + f(m_t - t)`, covariance `a(t) Σ_s`.
pub fn condition_at(fg: &FoldedGaussian3D, t: f64) -> ConditionedGaussian2D {
    let u = fg.m_t - t;
    let shift = fg.poly.eval(u);
    ConditionedGaussian2D {
        mean: [fg.m_s[0] + shift[0], fg.m_s[1] + shift[1]],
        cov: fg.cov_s,
        scale: time_scale(t, fg.m_t, fg.sigma_t),
        opacity: fg.opacity,
        color: fg.color,
    }
}

/// Joint density: conditional spatial density times temporal marginal.
pub fn fg_density(fg: &FoldedGaussian3D, s: [f64; 2], t: f64) -> f64 {
    let cond = condition_at(fg, t);
    if !(cond.scale > 0.0) {
        return 0.0;
    }
    let d = t - fg.m_t;
    let var_t = fg.sigma_t * fg.sigma_t;
    let time = (-(d * d) / (2.0 * var_t)).exp() / (TAU * var_t).sqrt();
    cond.pdf(s) * time
}

/// Draw `(s, t)` by the chain rule: `t` from the marginal, then `s | t`.
pub fn fg_sample<R: Rng + ?Sized>(fg: &FoldedGaussian3D, rng: &mut R) -> ([f64; 2], f64) {
    let zt: f64 = rng.sample(StandardNormal);
    let t = fg.m_t + fg.sigma_t * zt;
    let s = sample_conditioned(&condition_at(fg, t), rng);
    (s, t)
}

/// Draw from a flat 2D Gaussian.
pub fn sample_conditioned<R: Rng + ?Sized>(g: &ConditionedGaussian2D, rng: &mut R) -> [f64; 2] {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let (r1, r2) = g.cov.axes();
    let k = g.scale.sqrt();
    let (a, b) = (k * g.cov.s1 * z1, k * g.cov.s2 * z2);
    [
        g.mean[0] + a * r1[0] + b * r2[0],
        g.mean[1] + a * r1[1] + b * r2[1],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Importance-sampled estimate of `∫∫ fg_density ds dt`.
///
/// The proposal doubles the temporal standard deviation and the conditional
/// spatial variance, so every importance weight is bounded by 4 and the
/// estimator has finite variance.
pub fn normalization_estimate<R: Rng + ?Sized>(
    fg: &FoldedGaussian3D,
    n_samples: usize,
    rng: &mut R,
) -> Result<IntegralEstimate> {
    if n_samples < 10_000 {
        return Err(Error::Domain(format!(
            "normalization estimate needs at least 10^4 samples, got {n_samples}"
        )));
    }
    fg.validate()?;
    let prop_sigma_t = 2.0 * fg.sigma_t;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let zt: f64 = rng.sample(StandardNormal);
        let t = fg.m_t + prop_sigma_t * zt;
        let mut cond = condition_at(fg, t);
        cond.scale *= 2.0;
        let s = sample_conditioned(&cond, rng);
        let q_t = (-0.5 * zt * zt).exp() / (TAU.sqrt() * prop_sigma_t);
        let q = cond.pdf(s) * q_t;
        let w = if q > 0.0 { fg_density(fg, s, t) / q } else { 0.0 };
        sum += w;
        sum_sq += w * w;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(IntegralEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}

/// Nested Gauss–Hermite integral of the joint density with `nodes` points
/// per axis: time nodes from the marginal, spatial nodes from each slice.
pub fn quadrature_integral(fg: &FoldedGaussian3D, nodes: usize) -> f64 {
    let owned;
    let (x, w) = if nodes == QUADRATURE_NODES {
        let r = default_rule();
        (&r.0, &r.1)
    } else {
        owned = quadrature::gauss_hermite(nodes);
        (&owned.0, &owned.1)
    };
    let mut total = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        let t = fg.m_t + SQRT_2 * fg.sigma_t * xi;
        let jac_t = SQRT_2 * fg.sigma_t * (xi * xi).exp();
        let inner = slice_integral(fg, t, x, w);
        total += wi * jac_t * inner;
    }
    total
}

/// `∫ fg_density(s, t) ds` at fixed `t` by tensor Gauss–Hermite around the
/// conditional mean and principal axes.
fn slice_integral(fg: &FoldedGaussian3D, t: f64, x: &[f64], w: &[f64]) -> f64 {
    let cond = condition_at(fg, t);
    if !(cond.scale > 0.0) {
        return 0.0;
    }
    let (r1, r2) = cond.cov.axes();
    let k = (2.0 * cond.scale).sqrt();
    let (h1, h2) = (k * cond.cov.s1, k * cond.cov.s2);
    let jac = h1 * h2;
    let mut acc = 0.0;
    let mut comp = 0.0;
    for (xa, wa) in x.iter().zip(w) {
        for (xb, wb) in x.iter().zip(w) {
            let s = [
                cond.mean[0] + h1 * xa * r1[0] + h2 * xb * r2[0],
                cond.mean[1] + h1 * xa * r1[1] + h2 * xb * r2[1],
            ];
            let term = wa * wb * fg_density(fg, s, t) * (xa * xa + xb * xb).exp() * jac;
            // Kahan summation keeps the 4096-term sum at full precision.
            let y = term - comp;
            let next = acc + y;
            comp = (next - acc) - y;
            acc = next;
        }
    }
    acc
}

/// Residual of the conditional identity at `(s, t)`:
/// `|fg_density(s,t) / ∫ fg_density(·,t) ds − condition_at(fg,t).pdf(s)|`,
/// with the denominator from 64-point tensor Gauss–Hermite quadrature.
pub fn conditional_consistency(fg: &FoldedGaussian3D, s: [f64; 2], t: f64) -> f64 {
    let (x, w) = default_rule();
    let z = slice_integral(fg, t, x, w);
    let direct = condition_at(fg, t).pdf(s);
    let ratio = if z > 0.0 { fg_density(fg, s, t) / z } else { 0.0 };
    (ratio - direct).abs()
}
