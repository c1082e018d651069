//! Time-dependent forms `a(t) = a1(t) + a2(t)` on a Gelfand triple.
//!
//! `a1(t, u, v) = vᵀ A1(t) u` is the symmetric principal part (an operator
//! `V → V′` in functional coordinates). `a2(t, u, v) = (A2(t) u | v)_H` is
//! the lower-order part, stored as an operator `V → H` so that its bound
//! `M2` can be checked directly; its `V′` incarnation is `gram_H · A2(t)`.
//!
//! A quasi-coercive principal part is folded into coercive form by moving
//! `ω (·|·)_H` from `a2` into `a1`; the stored `A1` is always the coercive
//! one and [`FormConstants::omega`] records how much was moved.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::UniformMesh;
use crate::linalg::{self, Mat, Vector};
use crate::par;
use crate::triple::GelfandTriple;

pub type MatrixFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

/// Number of uniformly spaced times at which forms are validated.
pub const VALIDATION_SAMPLES: usize = 33;

const SYMMETRY_TOL: f64 = 1e-12;
const COERCIVITY_SLACK: f64 = 1e-10;
const BOUND_SLACK: f64 = 1e-10;
const LIPSCHITZ_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormConstants {
    /// `|a1(t,u,v)| ≤ M1 ‖u‖_V ‖v‖_V`.
    pub m1: f64,
    /// `a1(t,u,u) ≥ α ‖u‖_V²` (after any quasi-coercive shift).
    pub alpha: f64,
    /// Lipschitz constant of `t ↦ A1(t)` in `L(V, V′)`.
    pub m1_dot: f64,
    /// `|a2(t,u,v)| ≤ M2 ‖u‖_V ‖v‖_H`.
    pub m2: f64,
    /// Quasi-coercivity shift already folded into `a1`.
    pub omega: f64,
    /// Length of the time interval.
    pub horizon: f64,
}

impl FormConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.m1 >= self.alpha * (1.0 - COERCIVITY_SLACK)
            && self.m1_dot >= 0.0
            && self.m2 >= 0.0
            && self.omega >= 0.0
            && self.horizon > 0.0
            && [self.m1, self.alpha, self.m1_dot, self.m2, self.omega, self.horizon]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("inconsistent form constants {self:?}")))
        }
    }
}

/// Measured quantities from one validation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub max_asymmetry: f64,
    pub min_coercivity: f64,
    pub max_bound: f64,
    pub max_lipschitz: f64,
    pub max_a2_bound: f64,
}

#[derive(Clone)]
pub struct FormDecomposition {
    triple: Arc<GelfandTriple>,
    a1: MatrixFn,
    a2: MatrixFn,
    constants: FormConstants,
    start: f64,
    end: f64,
    label: String,
}

impl fmt::Debug for FormDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FormDecomposition")
            .field("label", &self.label)
            .field("dim", &self.triple.dim())
            .field("interval", &(self.start, self.end))
            .field("constants", &self.constants)
            .finish()
    }
}

impl FormDecomposition {
    /// Builds a form on `[start, end]` and validates all invariants eagerly.
    pub fn new(
        triple: Arc<GelfandTriple>,
        a1: MatrixFn,
        a2: MatrixFn,
        constants: FormConstants,
        interval: (f64, f64),
    ) -> Result<Self> {
        let form = Self::new_unchecked(triple, a1, a2, constants, interval)?;
        form.validate(VALIDATION_SAMPLES)?;
        Ok(form)
    }

    /// Builds a form checking only shapes and constants, not the sampled
    /// invariants.
    pub fn new_unchecked(
        triple: Arc<GelfandTriple>,
        a1: MatrixFn,
        a2: MatrixFn,
        constants: FormConstants,
        interval: (f64, f64),
    ) -> Result<Self> {
        let (start, end) = interval;
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::Config(format!("invalid interval [{start}, {end}]")));
        }
        constants.validate()?;
        if ((end - start) - constants.horizon).abs() > 1e-12 * constants.horizon.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {} does not match interval length {}",
                constants.horizon,
                end - start
            )));
        }
        let n = triple.dim();
        for (name, m) in [("A1", a1(start)), ("A2", a2(start))] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Config(format!(
                    "{name} has shape {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self {
            triple,
            a1,
            a2,
            constants,
            start,
            end,
            label: String::from("form"),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn triple(&self) -> &GelfandTriple {
        &self.triple
    }

    pub fn triple_arc(&self) -> Arc<GelfandTriple> {
        self.triple.clone()
    }

    pub fn dim(&self) -> usize {
        self.triple.dim()
    }

    pub fn constants(&self) -> FormConstants {
        self.constants
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * (self.end - self.start).max(1.0);
        if t.is_finite() && t >= self.start - slack && t <= self.end + slack {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                start: self.start,
                end: self.end,
            })
        }
    }

    /// Coordinate matrices `(A1(t), A2(t))`.
    pub fn assemble(&self, t: f64) -> Result<(Mat, Mat)> {
        self.check_time(t)?;
        Ok(((self.a1)(t), (self.a2)(t)))
    }

    pub fn a1_matrix(&self, t: f64) -> Result<Mat> {
        self.check_time(t)?;
        Ok((self.a1)(t))
    }

    pub fn a2_matrix(&self, t: f64) -> Result<Mat> {
        self.check_time(t)?;
        Ok((self.a2)(t))
    }

    /// The full operator `𝒜(t) = A1(t) + gram_H A2(t)` in `V′` coordinates.
    pub fn full_operator(&self, t: f64) -> Result<Mat> {
        let (a1, a2) = self.assemble(t)?;
        Ok(a1 + self.triple.gram_h() * a2)
    }

    /// `a(t, u, v)`.
    pub fn eval(&self, t: f64, u: &Vector, v: &Vector) -> Result<f64> {
        Ok(v.dot(&(self.full_operator(t)? * u)))
    }

    /// `a1(t, u, v)`.
    pub fn eval_a1(&self, t: f64, u: &Vector, v: &Vector) -> Result<f64> {
        Ok(v.dot(&(self.a1_matrix(t)? * u)))
    }

    /// Moves `ω(·|·)_H` from `a2` into `a1` (quasi-coercive shift).
    ///
    /// `alpha` is the coercivity constant of the shifted principal part.
    /// The full form is unchanged.
    pub fn with_shift(&self, omega: f64, alpha: f64) -> Result<Self> {
        if !(omega >= 0.0) {
            return Err(Error::Config(format!("shift must be nonnegative, got {omega}")));
        }
        let gram_h = self.triple.gram_h().clone();
        let n = self.dim();
        let a1 = self.a1.clone();
        let a2 = self.a2.clone();
        let g = gram_h.clone();
        let shifted_a1: MatrixFn = Arc::new(move |t| a1(t) + &g * omega);
        let shifted_a2: MatrixFn = Arc::new(move |t| a2(t) - Mat::identity(n, n) * omega);
        let c_h = self.triple.c_h();
        let c = self.constants;
        let constants = FormConstants {
            m1: c.m1 + omega * c_h * c_h,
            alpha,
            m2: c.m2 + omega * c_h,
            omega: c.omega + omega,
            ..c
        };
        let mut out = Self::new_unchecked(
            self.triple.clone(),
            shifted_a1,
            shifted_a2,
            constants,
            (self.start, self.end),
        )?;
        out.label = self.label.clone();
        Ok(out)
    }

    /// Restricts the form to a subinterval (same coefficient functions).
    pub fn restrict(&self, start: f64, end: f64) -> Result<Self> {
        self.check_time(start)?;
        self.check_time(end)?;
        let mut out = self.clone();
        out.start = start;
        out.end = end;
        out.constants.horizon = end - start;
        Ok(out)
    }

    fn sample_times(&self, n: usize) -> Vec<f64> {
        uniform_times(self.start, self.end, n)
    }

    /// Checks the five invariants on `n_samples` uniform times.
    pub fn validate(&self, n_samples: usize) -> Result<ValidationReport> {
        let report = measure(self, n_samples)?;
        let c = &self.constants;
        if report.max_asymmetry > SYMMETRY_TOL {
            return Err(Error::Validation(format!(
                "{}: A1 not symmetric (relative asymmetry {:e})",
                self.label, report.max_asymmetry
            )));
        }
        if report.min_coercivity < c.alpha * (1.0 - COERCIVITY_SLACK) {
            return Err(Error::Validation(format!(
                "{}: coercivity {} below declared alpha {}",
                self.label, report.min_coercivity, c.alpha
            )));
        }
        if report.max_bound > c.m1 * (1.0 + BOUND_SLACK) {
            return Err(Error::Validation(format!(
                "{}: V-bound {} exceeds declared M1 {}",
                self.label, report.max_bound, c.m1
            )));
        }
        if report.max_lipschitz > c.m1_dot * (1.0 + LIPSCHITZ_SLACK) + 1e-300 {
            return Err(Error::Validation(format!(
                "{}: Lipschitz quotient {} exceeds declared M1_dot {}",
                self.label, report.max_lipschitz, c.m1_dot
            )));
        }
        if report.max_a2_bound > c.m2 * (1.0 + BOUND_SLACK) + 1e-300 {
            return Err(Error::Validation(format!(
                "{}: a2 bound {} exceeds declared M2 {}",
                self.label, report.max_a2_bound, c.m2
            )));
        }
        Ok(report)
    }
}

pub(crate) fn uniform_times(start: f64, end: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| {
            if k == n - 1 {
                end
            } else {
                start + (end - start) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn measure(form: &FormDecomposition, n_samples: usize) -> Result<ValidationReport> {
    let times = form.sample_times(n_samples);
    let triple = form.triple();
    let per_time = par::map(&times, |&t| -> Result<(f64, f64, f64, f64, Mat)> {
        let a1 = (form.a1)(t);
        let a2 = (form.a2)(t);
        if a1.iter().chain(a2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} at t = {t}", form.label)));
        }
        let asym = linalg::asymmetry(&a1);
        let eig = linalg::generalized_eigen(&linalg::symmetrize(&a1), triple.gram_v())?;
        let bound = eig.min().abs().max(eig.max().abs());
        let a2_norm = linalg::operator_norm(&a2, triple.gram_v(), triple.gram_h())?;
        Ok((asym, eig.min(), bound, a2_norm, a1))
    });
    let per_time = per_time.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = ValidationReport {
        max_asymmetry: 0.0,
        min_coercivity: f64::INFINITY,
        max_bound: 0.0,
        max_lipschitz: 0.0,
        max_a2_bound: 0.0,
    };
    for (asym, coercivity, bound, a2_norm, _) in &per_time {
        report.max_asymmetry = report.max_asymmetry.max(*asym);
        report.min_coercivity = report.min_coercivity.min(*coercivity);
        report.max_bound = report.max_bound.max(*bound);
        report.max_a2_bound = report.max_a2_bound.max(*a2_norm);
    }
    let pairs: Vec<usize> = (0..times.len() - 1).collect();
    let slopes = par::map(&pairs, |&k| -> Result<f64> {
        let diff = &per_time[k + 1].4 - &per_time[k].4;
        let norm = vprime_norm_of_symmetric(&diff, triple)?;
        Ok(norm / (times[k + 1] - times[k]))
    });
    for s in slopes {
        report.max_lipschitz = report.max_lipschitz.max(s?);
    }
    Ok(report)
}

/// `‖M‖_{V→V′}` for a (nearly) symmetric matrix.
pub(crate) fn vprime_norm_of_symmetric(m: &Mat, triple: &GelfandTriple) -> Result<f64> {
    if m.norm() == 0.0 {
        return Ok(0.0);
    }
    let eig = linalg::generalized_eigen(&linalg::symmetrize(m), triple.gram_v())?;
    Ok(eig.min().abs().max(eig.max().abs()))
}

/// `‖M‖_{V→V′}` for a general matrix.
pub fn vprime_norm(m: &Mat, triple: &GelfandTriple) -> Result<f64> {
    let gv_inv = triple.riesz_v_matrix(&Mat::identity(triple.dim(), triple.dim()));
    linalg::operator_norm(m, triple.gram_v(), &linalg::symmetrize(&gv_inv))
}

/// Measures the constants of `form` on `n_time_samples` uniform times.
pub fn estimate_constants(form: &FormDecomposition, n_time_samples: usize) -> Result<FormConstants> {
    let report = measure(form, n_time_samples.max(2))?;
    Ok(FormConstants {
        m1: report.max_bound,
        alpha: report.min_coercivity,
        m1_dot: report.max_lipschitz,
        m2: report.max_a2_bound,
        omega: form.constants.omega,
        horizon: form.end - form.start,
    })
}

/// Form that does not depend on time.
pub fn constant_form(triple: Arc<GelfandTriple>, a1: Mat, a2: Mat, horizon: f64) -> Result<FormDecomposition> {
    affine_form(triple, a1, Mat::zeros(0, 0), a2, (0.0, horizon))
}

/// `A1(t) = S0 + (t − start)·S1` with exactly computed constants.
///
/// For symmetric `S0`, `S1` the extreme generalized eigenvalues are concave
/// (minimum) and convex (maximum) in `t`, so endpoint values are sharp.
/// Pass an empty `s1` for a time-independent form.
pub fn affine_form(
    triple: Arc<GelfandTriple>,
    s0: Mat,
    s1: Mat,
    a2: Mat,
    interval: (f64, f64),
) -> Result<FormDecomposition> {
    let n = triple.dim();
    let s1 = if s1.is_empty() { Mat::zeros(n, n) } else { s1 };
    let (start, end) = interval;
    let at_start = s0.clone();
    let at_end = &s0 + &s1 * (end - start);
    let e0 = linalg::generalized_eigen(&linalg::symmetrize(&at_start), triple.gram_v())?;
    let e1 = linalg::generalized_eigen(&linalg::symmetrize(&at_end), triple.gram_v())?;
    let alpha = e0.min().min(e1.min());
    if !(alpha > 0.0) {
        return Err(Error::Validation(format!("affine form is not coercive (alpha = {alpha})")));
    }
    let m1 = [e0.min(), e0.max(), e1.min(), e1.max()]
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let m1_dot = vprime_norm_of_symmetric(&s1, &triple)?;
    let m2 = if a2.iter().all(|x| *x == 0.0) {
        0.0
    } else {
        linalg::operator_norm(&a2, triple.gram_v(), triple.gram_h())?
    };
    let constants = FormConstants {
        m1,
        alpha,
        m1_dot,
        m2,
        omega: 0.0,
        horizon: end - start,
    };
    let a1: MatrixFn = Arc::new(move |t| &s0 + &s1 * (t - start));
    let a2: MatrixFn = Arc::new(move |_| a2.clone());
    FormDecomposition::new(triple, a1, a2, constants, interval)
}

/// One-dimensional form `a1(t,u,v) = c(t) u v` on `gram_H = gram_V = 1`.
///
/// `α` and `M1` come from sampling `c` on a fine grid, padded by the
/// Lipschitz constant times half the sample spacing.
pub fn scalar_form(
    coefficient: impl Fn(f64) -> f64 + Send + Sync + 'static,
    lipschitz: f64,
    interval: (f64, f64),
) -> Result<FormDecomposition> {
    let (start, end) = interval;
    let samples = uniform_times(start, end, 1025);
    let pad = lipschitz * 0.5 * (end - start) / 1024.0;
    let values: Vec<f64> = samples.iter().map(|&t| coefficient(t)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scalar coefficient".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, |a, b| a.max(b.abs())) + pad;
    if !(min > 0.0) {
        return Err(Error::Validation(format!("scalar coefficient not coercive (min {min})")));
    }
    let constants = FormConstants {
        m1: max,
        alpha: min,
        m1_dot: lipschitz,
        m2: 0.0,
        omega: 0.0,
        horizon: end - start,
    };
    let a1: MatrixFn = Arc::new(move |t| Mat::from_element(1, 1, coefficient(t)));
    let a2: MatrixFn = Arc::new(|_| Mat::zeros(1, 1));
    Ok(FormDecomposition::new(Arc::new(GelfandTriple::identity(1)), a1, a2, constants, interval)?
        .with_label("scalar"))
}

/// Endpoint of the interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Left,
    Right,
}

pub type BoundaryCoefficient = Arc<dyn Fn(f64, Endpoint) -> f64 + Send + Sync>;

/// Options of the Robin discretisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobinOptions {
    /// Use the lumped (diagonal) mass matrix for the `H` inner product.
    pub lumped_mass: bool,
    /// Sup-norm of an advection coefficient `b` in `a2(u,v) = ∫ b u′ v`.
    pub advection_sup: f64,
}

impl Default for RobinOptions {
    fn default() -> Self {
        Self {
            lumped_mass: false,
            advection_sup: 0.0,
        }
    }
}

/// Robin form `∫ u′v′ + β(t,0)u(0)v(0) + β(t,1)u(1)v(1)` on `(0, 1)`,
/// discretised by P1 elements and shifted to be coercive with `α = 1/2`.
pub fn robin_form_1d(
    n_elements: usize,
    beta: BoundaryCoefficient,
    beta_lipschitz: f64,
    horizon: f64,
) -> Result<FormDecomposition> {
    robin_form_1d_with(n_elements, beta, beta_lipschitz, horizon, RobinOptions::default(), None)
}

/// Robin form with options and an optional advection perturbation
/// `a2(u, v) = ∫ b(x) u′ v`, a genuine `V × H` bounded part.
pub fn robin_form_1d_with(
    n_elements: usize,
    beta: BoundaryCoefficient,
    beta_lipschitz: f64,
    horizon: f64,
    options: RobinOptions,
    advection: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
) -> Result<FormDecomposition> {
    if n_elements < 2 {
        return Err(Error::Config(format!("Robin form needs n_elements >= 2, got {n_elements}")));
    }
    if !(horizon > 0.0) || !(beta_lipschitz >= 0.0) {
        return Err(Error::Config("Robin form needs horizon > 0 and beta_lipschitz >= 0".into()));
    }
    let mesh = UniformMesh::unit(n_elements);
    let stiffness = mesh.stiffness();
    let gram_h = if options.lumped_mass {
        mesh.lumped_mass()
    } else {
        mesh.mass()
    };
    let gram_v = &stiffness + &gram_h;
    let triple = Arc::new(GelfandTriple::new(gram_h.clone(), gram_v)?);

    // Bounds of β from a fine sample, padded by Lipschitz continuity.
    let n_sample = 2049;
    let samples = uniform_times(0.0, horizon, n_sample);
    let pad = beta_lipschitz * 0.5 * horizon / (n_sample - 1) as f64;
    let mut abs_sum: f64 = 0.0;
    let mut neg_sum: f64 = 0.0;
    for &t in &samples {
        let b0 = beta(t, Endpoint::Left);
        let b1 = beta(t, Endpoint::Right);
        if !b0.is_finite() || !b1.is_finite() {
            return Err(Error::NonFinite(format!("beta at t = {t}")));
        }
        abs_sum = abs_sum.max(b0.abs() + b1.abs());
        neg_sum = neg_sum.max((-b0).max(0.0) + (-b1).max(0.0));
    }
    abs_sum += 2.0 * pad;
    if neg_sum > 0.0 {
        neg_sum += 2.0 * pad;
    }
    // Trace inequality |u(x)|² ≤ ε‖u′‖² + (1 + 1/ε)‖u‖² with ε = 1/(4 b⁻)
    // absorbs negative boundary terms; ω then makes α = 1/2.
    let omega = 0.5 + neg_sum + 4.0 * neg_sum * neg_sum;
    let n = mesh.n_nodes();
    let raw_m1 = 1.0 + 2.0 * abs_sum;
    let a1_raw: MatrixFn = {
        let stiffness = stiffness.clone();
        let beta = beta.clone();
        Arc::new(move |t| {
            let mut a = stiffness.clone();
            a[(0, 0)] += beta(t, Endpoint::Left);
            a[(n - 1, n - 1)] += beta(t, Endpoint::Right);
            a
        })
    };
    let (a2_raw, raw_m2): (MatrixFn, f64) = match advection {
        Some(b) => {
            let c = mesh.advection(|x| b(x));
            let a2 = triple.riesz_h_matrix(&c);
            (Arc::new(move |_| a2.clone()), options.advection_sup)
        }
        None => (Arc::new(move |_| Mat::zeros(n, n)), 0.0),
    };
    let raw = FormDecomposition::new_unchecked(
        triple,
        a1_raw,
        a2_raw,
        FormConstants {
            m1: raw_m1,
            alpha: 0.5,
            m1_dot: 4.0 * beta_lipschitz,
            m2: raw_m2,
            omega: 0.0,
            horizon,
        },
        (0.0, horizon),
    )?;
    let form = raw.with_shift(omega, 0.5)?.with_label("robin1d");
    // The trace bound |u(x)|² ≤ 2‖u‖_V² gives M1 ≤ max(1, ω) + 2Σ|β|.
    let mut c = form.constants;
    c.m1 = omega.max(1.0) + 2.0 * abs_sum;
    let form = FormDecomposition { constants: c, ..form };
    form.validate(VALIDATION_SAMPLES)?;
    Ok(form)
}

/// Robin form with β given per endpoint as the same function of `t`.
pub fn robin_uniform_beta(
    n_elements: usize,
    beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
    beta_lipschitz: f64,
    horizon: f64,
) -> Result<FormDecomposition> {
    robin_form_1d(n_elements, Arc::new(move |t, _| beta(t)), beta_lipschitz, horizon)
}

/// Uniform grid on `(−L, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchrodingerGrid {
    pub half_width: f64,
    pub n_elements: usize,
}

pub type PotentialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Mass floor added to `gram_V` when the weight `m0` vanishes at some node.
pub const SCHRODINGER_MASS_FLOOR: f64 = 1e-6;

/// Schrödinger form `∫ u′v′ + Σ m(t, x_i) u_i v_i w_i` with lumped
/// quadrature weights `w_i`.
///
/// Validates `α1 m0 ≤ m(t,·) ≤ α2 m0` and `|m(t,·) − m(s,·)| ≤ M |t−s| m0`
/// on all nodes and the validation time grid.
pub fn schrodinger_form_1d(
    grid: SchrodingerGrid,
    m0: &[f64],
    potential: PotentialFn,
    alpha1: f64,
    alpha2: f64,
    lipschitz: f64,
    horizon: f64,
) -> Result<FormDecomposition> {
    if !(alpha1 > 0.0 && alpha2 >= alpha1) {
        return Err(Error::Config(format!("need 0 < alpha1 <= alpha2, got {alpha1}, {alpha2}")));
    }
    if grid.n_elements < 2 || !(grid.half_width > 0.0) || !(horizon > 0.0) {
        return Err(Error::Config("invalid Schrodinger grid".into()));
    }
    let mesh = UniformMesh::new(-grid.half_width, grid.half_width, grid.n_elements);
    let n = mesh.n_nodes();
    if m0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: m0.len(),
        });
    }
    if m0.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config("m0 must be finite and nonnegative".into()));
    }
    let nodes = mesh.nodes();
    let times = uniform_times(0.0, horizon, VALIDATION_SAMPLES);
    let worst = scan_potential(&nodes, m0, &potential, &times, alpha1, alpha2, lipschitz);
    if let Some(v) = worst {
        return Err(Error::Validation(format!(
            "potential bound `{}` violated at t = {}, x = {} (excess {:e})",
            v.bound, v.t, v.x, v.excess
        )));
    }
    let weights = mesh.lumped_weights();
    let stiffness = mesh.stiffness();
    let mass = mesh.mass();
    let weighted = Mat::from_diagonal(&Vector::from_fn(n, |i, _| m0[i] * weights[i]));
    let floor = m0.contains(&0.0);
    let base = &stiffness + &weighted;
    let gram_v = if floor {
        &base + &mass * SCHRODINGER_MASS_FLOOR
    } else {
        base.clone()
    };
    let triple = Arc::new(GelfandTriple::new(mass.clone(), gram_v.clone())?);
    // a1 ≥ min(1, α1)·base ≥ min(1, α1)·κ·gram_V with κ = λ_min(base, gram_V).
    let kappa = if floor {
        linalg::generalized_eigen(&base, &gram_v)?.min()
    } else {
        1.0
    };
    let constants = FormConstants {
        m1: alpha2.max(1.0),
        alpha: alpha1.min(1.0) * kappa,
        m1_dot: lipschitz,
        m2: 0.0,
        omega: 0.0,
        horizon,
    };
    let a1: MatrixFn = Arc::new(move |t| {
        let mut a = stiffness.clone();
        for i in 0..n {
            a[(i, i)] += potential(t, nodes[i]) * weights[i];
        }
        a
    });
    let a2: MatrixFn = Arc::new(move |_| Mat::zeros(n, n));
    Ok(FormDecomposition::new(triple, a1, a2, constants, (0.0, horizon))?.with_label("schrodinger1d"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialViolation {
    pub bound: &'static str,
    pub t: f64,
    pub x: f64,
    pub excess: f64,
}

/// Exhaustive node × time scan of the two potential bounds; returns the
/// worst violation, if any.
pub fn scan_potential(
    nodes: &[f64],
    m0: &[f64],
    potential: &PotentialFn,
    times: &[f64],
    alpha1: f64,
    alpha2: f64,
    lipschitz: f64,
) -> Option<PotentialViolation> {
    let mut worst: Option<PotentialViolation> = None;
    let mut record = |bound: &'static str, t: f64, x: f64, excess: f64| {
        let tol = 1e-12 * (1.0 + excess.abs());
        if excess > tol && worst.as_ref().is_none_or(|w| excess > w.excess) {
            worst = Some(PotentialViolation { bound, t, x, excess });
        }
    };
    for (i, (&x, &w)) in nodes.iter().zip(m0).enumerate() {
        let _ = i;
        let mut prev: Option<(f64, f64)> = None;
        for &t in times {
            let m = potential(t, x);
            if !m.is_finite() {
                record("finite", t, x, f64::INFINITY);
                continue;
            }
            record("lower", t, x, alpha1 * w - m);
            record("upper", t, x, m - alpha2 * w);
            if let Some((s, ms)) = prev {
                record("lipschitz", t, x, (m - ms).abs() - lipschitz * (t - s).abs() * w);
            }
            prev = Some((t, m));
        }
    }
    worst
}

/// Piecewise form on `0 = t0 < t1 < … < tn = T`; piece `i` lives on
/// `[t_{i−1}, t_i]`.
#[derive(Debug, Clone)]
pub struct PiecewiseForm {
    breakpoints: Vec<f64>,
    pieces: Vec<FormDecomposition>,
}

impl PiecewiseForm {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<FormDecomposition>) -> Result<Self> {
        if pieces.is_empty() || breakpoints.len() != pieces.len() + 1 {
            return Err(Error::Config(format!(
                "{} breakpoints for {} pieces",
                breakpoints.len(),
                pieces.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("breakpoints must be strictly increasing".into()));
        }
        let dim = pieces[0].dim();
        for (i, p) in pieces.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: p.dim(),
                });
            }
            let (a, b) = (breakpoints[i], breakpoints[i + 1]);
            let tol = 1e-12 * (b - a).max(1.0);
            if (p.start() - a).abs() > tol || (p.end() - b).abs() > tol {
                return Err(Error::Config(format!(
                    "piece {i} lives on [{}, {}] but breakpoints give [{a}, {b}]",
                    p.start(),
                    p.end()
                )));
            }
        }
        Ok(Self { breakpoints, pieces })
    }

    pub fn single(form: FormDecomposition) -> Self {
        Self {
            breakpoints: vec![form.start(), form.end()],
            pieces: vec![form],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[FormDecomposition] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Index of the piece containing the open cell that starts at `t`
    /// (the last piece for `t = T`).
    pub fn piece_index(&self, t: f64) -> usize {
        let n = self.pieces.len();
        (0..n)
            .find(|&i| t < self.breakpoints[i + 1])
            .unwrap_or(n - 1)
    }

    pub fn piece_at(&self, t: f64) -> &FormDecomposition {
        &self.pieces[self.piece_index(t)]
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.pieces {
            p.validate(VALIDATION_SAMPLES)?;
        }
        Ok(())
    }
}
