//! Spectral representation of the symmetric coercive part `a1(t)` and its
//! fractional powers.
//!
//! The generalized eigenproblem `A1 v = m gram_H v` turns `𝒜1(t)` into the
//! multiplication operator by `m` on `ℓ²(counting measure)`. Powers act as
//! `x ↦ E diag(mᵖ) Eᵀ gram_H x`, where the columns of `E` are
//! `gram_H`-orthonormal. An independent route for `𝒜^{-1/2}` integrates
//! resolvents over `λ ∈ (0, ∞)`.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::forms::{self, FormDecomposition};
use crate::linalg::{self, Mat, Vector};
use crate::par;
use crate::quadrature::gauss_legendre_on;
use crate::triple::GelfandTriple;

/// Symmetry tolerance for the spectral route.
pub const SPECTRAL_SYMMETRY_TOL: f64 = 1e-12;

/// Default number of quadrature nodes for [`invsqrt_quadrature`].
pub const DEFAULT_QUADRATURE_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    Half,
    MinusHalf,
    One,
    MinusOne,
}

impl Power {
    pub fn exponent(self) -> f64 {
        match self {
            Power::Half => 0.5,
            Power::MinusHalf => -0.5,
            Power::One => 1.0,
            Power::MinusOne => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    eigvals: Vector,
    eigvecs: Mat,
    gram_h: Mat,
    time: f64,
}

impl SpectralFactorization {
    /// Multipliers `m_i`, ascending.
    pub fn eigvals(&self) -> &Vector {
        &self.eigvals
    }

    /// `gram_H`-orthonormal eigenvectors as columns.
    pub fn eigvecs(&self) -> &Mat {
        &self.eigvecs
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn min_multiplier(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// Coefficients `û = Eᵀ gram_H u` in the multiplication picture.
    pub fn transform(&self, u: &Vector) -> Vector {
        self.eigvecs.transpose() * (&self.gram_h * u)
    }

    /// `a1(t, u, v) = Σ m_i û_i v̂_i`.
    pub fn form_value(&self, u: &Vector, v: &Vector) -> f64 {
        let uh = self.transform(u);
        let vh = self.transform(v);
        uh.iter()
            .zip(vh.iter())
            .zip(self.eigvals.iter())
            .map(|((a, b), m)| m * a * b)
            .sum()
    }

    /// Coordinate matrix of `𝒜1(t)ᵖ` acting on `H`-coordinates.
    pub fn power_matrix(&self, p: Power) -> Mat {
        let e = p.exponent();
        let scaled = Mat::from_fn(self.dim(), self.dim(), |i, j| self.eigvecs[(i, j)] * self.eigvals[j].powf(e));
        scaled * self.eigvecs.transpose() * &self.gram_h
    }

    pub fn power_apply(&self, p: Power, x: &Vector) -> Result<Vector> {
        check_len(self.dim(), x.len())?;
        let e = p.exponent();
        let xh = self.transform(x);
        let scaled = Vector::from_fn(self.dim(), |i, _| xh[i] * self.eigvals[i].powf(e));
        Ok(&self.eigvecs * scaled)
    }

    /// `𝒜^{1/2}` as a map into functional (`V′`) coordinates.
    pub fn sqrt_to_vprime(&self) -> Mat {
        &self.gram_h * self.power_matrix(Power::Half)
    }
}

/// Diagonalises `a1(t)` relative to `gram_H`.
pub fn spectral_decompose(form: &FormDecomposition, t: f64) -> Result<SpectralFactorization> {
    let a1 = form.a1_matrix(t)?;
    let asym = linalg::asymmetry(&a1);
    if asym > SPECTRAL_SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            name: format!("A1({t})"),
            asymmetry: asym,
        });
    }
    decompose_matrix(&a1, form.triple(), t)
}

pub(crate) fn decompose_matrix(a1: &Mat, triple: &GelfandTriple, t: f64) -> Result<SpectralFactorization> {
    let eig = linalg::generalized_eigen(&linalg::symmetrize(a1), triple.gram_h())?;
    if !(eig.min() > 0.0) {
        return Err(Error::NotPositiveDefinite {
            name: format!("A1({t})"),
            min_eigenvalue: eig.min(),
        });
    }
    Ok(SpectralFactorization {
        eigvals: eig.values,
        eigvecs: eig.vectors,
        gram_h: triple.gram_h().clone(),
        time: t,
    })
}

pub fn power_apply(fact: &SpectralFactorization, p: Power, x: &Vector) -> Result<Vector> {
    fact.power_apply(p, x)
}

/// `𝒜1(t)^{-1/2} x` from `(1/π) ∫₀^∞ λ^{-1/2} (λ + 𝒜1(t))⁻¹ x dλ`.
///
/// With `λ = tan²θ` the integral becomes
/// `(2/π) ∫₀^{π/2} (sin²θ gram_H + cos²θ A1)⁻¹ gram_H x dθ`,
/// evaluated with `n_nodes`-point Gauss–Legendre. Each node costs one
/// shifted solve; nodes are solved concurrently and summed in node order.
pub fn invsqrt_quadrature(form: &FormDecomposition, t: f64, x: &Vector, n_nodes: usize) -> Result<Vector> {
    let a1 = form.a1_matrix(t)?;
    invsqrt_quadrature_matrix(&a1, form.triple().gram_h(), x, n_nodes)
}

pub(crate) fn invsqrt_quadrature_matrix(a1: &Mat, gram_h: &Mat, x: &Vector, n_nodes: usize) -> Result<Vector> {
    if n_nodes < 8 {
        return Err(Error::Config(format!("quadrature needs at least 8 nodes, got {n_nodes}")));
    }
    check_len(a1.nrows(), x.len())?;
    let rhs = gram_h * x;
    let rule = gauss_legendre_on(n_nodes, 0.0, 0.5 * PI);
    let terms = par::map(&rule, |&(theta, w)| -> Result<Vector> {
        let (s, c) = theta.sin_cos();
        let shifted = gram_h * (s * s) + a1 * (c * c);
        let y = linalg::solve(&shifted, &rhs, "shifted resolvent")?;
        Ok(y * (2.0 * w / PI))
    });
    let mut acc = Vector::zeros(x.len());
    for term in terms {
        acc += term?;
    }
    Ok(acc)
}

/// One measured operator norm against its ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub t: f64,
    pub lambda: f64,
    pub name: &'static str,
    pub measured: f64,
    pub ceiling: f64,
    pub pass: bool,
}

/// Relative slack allowed in the resolvent bounds.
pub const BOUND_REL_SLACK: f64 = 1e-10;

/// Measures the four resolvent and square-root norms of a symmetric
/// coercive `a1(t)` against their ceilings:
///
/// * `a`: `‖(λ+𝒜)⁻¹‖_{L(V)} ≤ c1 (1+λ)⁻¹` with `c1 = √(M/α) max{1, c_H²/α}`
/// * `b`: `‖(λ+𝒜)⁻¹‖_{L(V′,V)} ≤ 1/α`
/// * `c`: `‖𝒜^{-1/2}‖_{L(H,V)} ≤ 1/√α`
/// * `d`: `‖𝒜^{1/2}‖_{L(H,V′)} ≤ √M`
///
/// `c` and `d` do not depend on `λ` and are repeated on every row.
pub fn verify_resolvent_bounds(form: &FormDecomposition, t: f64, lambda_grid: &[f64]) -> Result<Vec<BoundRow>> {
    let c = form.constants();
    resolvent_bounds_for(&form.a1_matrix(t)?, form.triple(), c.alpha, c.m1, t, lambda_grid)
}

pub(crate) fn resolvent_bounds_for(
    a1: &Mat,
    triple: &GelfandTriple,
    alpha: f64,
    m: f64,
    t: f64,
    lambda_grid: &[f64],
) -> Result<Vec<BoundRow>> {
    if lambda_grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Config("lambda grid must be nonnegative".into()));
    }
    let fact = decompose_matrix(a1, triple, t)?;
    let gram_h = triple.gram_h();
    let gram_v = triple.gram_v();
    let n = triple.dim();
    let gram_vprime = linalg::symmetrize(&triple.riesz_v_matrix(&Mat::identity(n, n)));
    let c_h = triple.c_h();
    let c1 = (m / alpha).sqrt() * (c_h * c_h / alpha).max(1.0);

    let invsqrt = fact.power_matrix(Power::MinusHalf);
    let sqrt_vprime = fact.sqrt_to_vprime();
    let norm_c = linalg::operator_norm(&invsqrt, gram_h, gram_v)?;
    let norm_d = linalg::operator_norm(&sqrt_vprime, gram_h, &gram_vprime)?;

    let per_lambda = par::map(lambda_grid, |&lambda| -> Result<Vec<BoundRow>> {
        let shifted = gram_h * lambda + a1;
        let resolvent = linalg::inverse(&shifted, "λ + 𝒜")?;
        let on_v = &resolvent * gram_h;
        let norm_a = linalg::operator_norm(&on_v, gram_v, gram_v)?;
        let norm_b = linalg::operator_norm(&resolvent, &gram_vprime, gram_v)?;
        let row = |name, measured: f64, ceiling: f64| BoundRow {
            t,
            lambda,
            name,
            measured,
            ceiling,
            pass: measured <= ceiling * (1.0 + BOUND_REL_SLACK),
        };
        Ok(vec![
            row("a", norm_a, c1 / (1.0 + lambda)),
            row("b", norm_b, 1.0 / alpha),
            row("c", norm_c, 1.0 / alpha.sqrt()),
            row("d", norm_d, m.sqrt()),
        ])
    });
    let mut rows = Vec::with_capacity(4 * lambda_grid.len());
    for r in per_lambda {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Default finite-difference step `1e-5 · T`.
pub fn default_step(form: &FormDecomposition) -> f64 {
    1e-5 * (form.end() - form.start())
}

/// Finite-difference estimate of `Ȧ1(t)`: central in the interior,
/// one-sided within `h` of an endpoint.
pub fn derivative_estimate(form: &FormDecomposition, t: f64, h: f64) -> Result<Mat> {
    form.check_time(t)?;
    finite_difference(|s| form.a1_matrix(s), form.start(), form.end(), t, h)
}

pub(crate) fn finite_difference(
    f: impl Fn(f64) -> Result<Mat>,
    start: f64,
    end: f64,
    t: f64,
    h: f64,
) -> Result<Mat> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    if t - h >= start && t + h <= end {
        Ok((f(t + h)? - f(t - h)?) / (2.0 * h))
    } else if t + h <= end {
        Ok((f(t + h)? - f(t)?) / h)
    } else if t - h >= start {
        Ok((f(t)? - f(t - h)?) / h)
    } else {
        Err(Error::Config(format!("step {h} larger than the interval")))
    }
}

/// Measured Lipschitz quotients of the square roots and their ceilings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtLipschitz {
    /// `sup ‖𝒜^{-1/2}(t) − 𝒜^{-1/2}(s)‖_{L(V)} / |t−s|`.
    pub invsqrt: f64,
    /// `sup ‖𝒜^{1/2}(t) − 𝒜^{1/2}(s)‖_{L(V,V′)} / |t−s|`.
    pub sqrt: f64,
    /// `c1 Ṁ1 / α`.
    pub invsqrt_ceiling: f64,
    /// `Ṁ1 c_H / √α + M1 c1 Ṁ1 / α`.
    pub sqrt_ceiling: f64,
}

pub fn sqrt_lipschitz_probe(form: &FormDecomposition, sample_pairs: &[(f64, f64)]) -> Result<SqrtLipschitz> {
    let triple = form.triple();
    let gram_v = triple.gram_v();
    let n = triple.dim();
    let gram_vprime = linalg::symmetrize(&triple.riesz_v_matrix(&Mat::identity(n, n)));
    let quotients = par::map(sample_pairs, |&(s, t)| -> Result<(f64, f64)> {
        if s == t {
            return Ok((0.0, 0.0));
        }
        let fs = spectral_decompose(form, s)?;
        let ft = spectral_decompose(form, t)?;
        let dt = (t - s).abs();
        let d_inv = ft.power_matrix(Power::MinusHalf) - fs.power_matrix(Power::MinusHalf);
        let d_sqrt = ft.sqrt_to_vprime() - fs.sqrt_to_vprime();
        let q_inv = linalg::operator_norm(&d_inv, gram_v, gram_v)? / dt;
        let q_sqrt = linalg::operator_norm(&d_sqrt, gram_v, &gram_vprime)? / dt;
        Ok((q_inv, q_sqrt))
    });
    let mut invsqrt: f64 = 0.0;
    let mut sqrt: f64 = 0.0;
    for q in quotients {
        let (a, b) = q?;
        invsqrt = invsqrt.max(a);
        sqrt = sqrt.max(b);
    }
    let c = form.constants();
    let c_h = triple.c_h();
    let c1 = (c.m1 / c.alpha).sqrt() * (c_h * c_h / c.alpha).max(1.0);
    let invsqrt_ceiling = c1 * c.m1_dot / c.alpha;
    let sqrt_ceiling = c.m1_dot * c_h / c.alpha.sqrt() + c.m1 * invsqrt_ceiling;
    Ok(SqrtLipschitz {
        invsqrt,
        sqrt,
        invsqrt_ceiling,
        sqrt_ceiling,
    })
}

/// Principal square root of a matrix whose spectrum lies in the open right
/// half-plane, by the scaled Denman–Beavers iteration.
pub fn principal_sqrt(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = Mat::identity(n, n);
    for _ in 0..100 {
        let y_lu = y.clone().lu();
        let z_lu = z.clone().lu();
        let log_det = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>| {
            let u = lu.u();
            (0..n).map(|i| u[(i, i)].abs().ln()).sum::<f64>()
        };
        let mu = (-(log_det(&y_lu) + log_det(&z_lu)) / (2.0 * n as f64)).exp();
        let y_inv = y_lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("Denman-Beavers iterate".into()))?;
        let z_inv = z_lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("Denman-Beavers iterate".into()))?;
        let mu = if mu.is_finite() && mu > 0.0 { mu } else { 1.0 };
        let y_next = (&y * mu + z_inv / mu) * 0.5;
        let z_next = (&z * mu + y_inv / mu) * 0.5;
        let change = (&y_next - &y).norm() / y_next.norm();
        y = y_next;
        z = z_next;
        if change < 1e-15 {
            break;
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix square root".into()));
    }
    Ok(y)
}

/// `‖M‖_{V→V′}` helper re-exported for diagnostics.
pub fn vprime_norm(m: &Mat, triple: &GelfandTriple) -> Result<f64> {
    forms::vprime_norm(m, triple)
}
