//! Picard iteration for `u̇ = m(t,u)Δu + f` with time-dependent Robin
//! boundary conditions.
//!
//! Dividing by `m` turns the problem into `B_v(t)u̇ + 𝒜(t)u = f/m(t,v)` with
//! `B_v = 1/m(t, v(t))` acting by nodal multiplication. With a diagonal
//! `H` Gram matrix the bounds `δ ≤ B_v ≤ 1/δ` hold exactly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::evolve::{self, EvolutionProblem, Perturbation, Source, Trajectory};
use crate::forms::{self, BoundaryCoefficient, FormDecomposition, RobinOptions};
use crate::linalg::{Mat, Vector};

pub type NonlinearityFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct QuasilinearProblem {
    form: FormDecomposition,
    m: NonlinearityFn,
    delta_m: f64,
    pub f: Source,
    pub u0: Vector,
}

impl std::fmt::Debug for QuasilinearProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasilinearProblem")
            .field("form", &self.form)
            .field("delta_m", &self.delta_m)
            .field("u0", &self.u0)
            .finish()
    }
}

impl QuasilinearProblem {
    /// The form's `H` Gram matrix must be diagonal (nodal lumping).
    pub fn new(form: FormDecomposition, m: NonlinearityFn, delta_m: f64, f: Source, u0: Vector) -> Result<Self> {
        if !(delta_m > 0.0 && delta_m <= 1.0) {
            return Err(Error::Config(format!("delta_m must lie in (0, 1], got {delta_m}")));
        }
        let g = form.triple().gram_h();
        let off_diag = g.iter().enumerate().any(|(k, v)| k % g.nrows() != k / g.nrows() && *v != 0.0);
        if off_diag {
            return Err(Error::Config("quasilinear solver needs a diagonal (lumped) H Gram matrix".into()));
        }
        form.triple().check_vector(&u0)?;
        let problem = Self {
            form,
            m,
            delta_m,
            f,
            u0,
        };
        for t in forms::uniform_times(problem.start(), problem.end(), forms::VALIDATION_SAMPLES) {
            for i in 0..=40 {
                let xi = -10.0 + 0.5 * i as f64;
                if !problem.m(t, xi).is_finite() {
                    return Err(Error::NonFinite(format!("m({t}, {xi})")));
                }
            }
        }
        Ok(problem)
    }

    /// Robin form on `(0, 1)` with lumped mass.
    #[allow(clippy::too_many_arguments)]
    pub fn robin(
        n_elements: usize,
        beta: BoundaryCoefficient,
        beta_lipschitz: f64,
        horizon: f64,
        m: NonlinearityFn,
        delta_m: f64,
        f: Source,
        u0: Vector,
    ) -> Result<Self> {
        let options = RobinOptions {
            lumped_mass: true,
            ..RobinOptions::default()
        };
        let form = forms::robin_form_1d_with(n_elements, beta, beta_lipschitz, horizon, options, None)?;
        Self::new(form, m, delta_m, f, u0)
    }

    pub fn form(&self) -> &FormDecomposition {
        &self.form
    }

    pub fn delta_m(&self) -> f64 {
        self.delta_m
    }

    pub fn start(&self) -> f64 {
        self.form.start()
    }

    pub fn end(&self) -> f64 {
        self.form.end()
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// `m(t, ξ)` clipped into `[δ, 1/δ]`.
    pub fn m(&self, t: f64, xi: f64) -> f64 {
        (self.m)(t, xi).clamp(self.delta_m, 1.0 / self.delta_m)
    }

    fn inverse_m(&self, t: f64, v: &Vector) -> Vector {
        v.map(|xi| 1.0 / self.m(t, xi))
    }

    /// The linear problem `B_v u̇ + 𝒜u = f/m(t,v)`, `v` interpolated
    /// linearly between grid nodes.
    pub fn linearized(&self, v: &Trajectory) -> Result<EvolutionProblem> {
        let this = Arc::new(self.clone());
        let v = Arc::new(v.clone());
        let b = {
            let (this, v) = (this.clone(), v.clone());
            Arc::new(move |t| Mat::from_diagonal(&this.inverse_m(t, &v.interpolate(t))))
        };
        let b = Perturbation::new_unchecked(b, self.delta_m, 1.0 / self.delta_m)?;
        let f = match &self.f {
            Source::Zero => Source::Zero,
            Source::Function(f) => {
                let f = f.clone();
                Source::Function(Arc::new(move |t| f(t).component_mul(&this.inverse_m(t, &v.interpolate(t)))))
            }
        };
        EvolutionProblem::new(self.form.clone(), b, f, self.u0.clone())
    }
}

/// `diag(1/m(t_k, v_i(t_k)))`.
pub fn linearized_b(problem: &QuasilinearProblem, v: &Trajectory, t_index: usize) -> Result<Mat> {
    let t = *v
        .times
        .get(t_index)
        .ok_or_else(|| Error::Config(format!("time index {t_index} outside the trajectory")))?;
    Ok(Mat::from_diagonal(&problem.inverse_m(t, &v.states[t_index])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub n_steps: usize,
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            n_steps: 200,
            theta: 1.0,
            tol: 1e-8,
            max_iter: 50,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖v_{k+1} − v_k‖_{L²(0,T;H)}`.
    pub distance: f64,
    pub sub_mr_norm: f64,
    pub sub_apriori_satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub trajectory: Trajectory,
    pub history: Vec<IterationRecord>,
    /// Discrete residual of the nonlinear equation in `L²(0,T;H)`.
    pub residual: f64,
}

/// Picard iteration `v ← (1−d)v + d S(v)` from `v_0 ≡ u0`.
///
/// Stops once the distance is at most `tol` and the nonlinear residual at
/// most `10 tol`; otherwise reports the distance history.
pub fn solve_fixed_point(problem: &QuasilinearProblem, options: FixedPointOptions) -> Result<FixedPoint> {
    let FixedPointOptions {
        n_steps,
        theta,
        tol,
        max_iter,
        damping,
    } = options;
    if !(tol > 0.0) || max_iter == 0 || !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Config("need tol > 0, max_iter >= 1 and damping in (0, 1]".into()));
    }
    let triple = problem.form.triple();
    let times = evolve::uniform_grid(problem.start(), problem.end(), n_steps.max(1));
    let mut v = Trajectory::from_states(times.clone(), vec![problem.u0.clone(); times.len()])?;
    let mut history = Vec::new();
    for iter in 1..=max_iter {
        let linear = problem.linearized(&v)?;
        let u = evolve::solve_theta(&linear, n_steps, theta)?;
        let diag = evolve::mr_diagnostics(&linear, &u)?;
        let next = if damping == 1.0 {
            u.clone()
        } else {
            let states = v.states.iter().zip(&u.states).map(|(a, b)| a * (1.0 - damping) + b * damping).collect();
            Trajectory::from_states(times.clone(), states)?
        };
        let distance = next.l2h_distance(&v, triple)?;
        history.push(IterationRecord {
            iter,
            distance,
            sub_mr_norm: diag.norm_mr,
            sub_apriori_satisfied: diag.apriori_satisfied(),
        });
        v = next;
        if distance <= tol {
            let residual = nonlinear_residual(problem, &u, theta)?;
            if residual <= 10.0 * tol {
                return Ok(FixedPoint {
                    trajectory: u,
                    history,
                    residual,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last: history.last().map_or(f64::NAN, |r| r.distance),
        distances: history.iter().map(|r| r.distance).collect(),
    })
}

/// `‖B_u u̇ + 𝒜u − f/m(t,u)‖_{L²(0,T;H)}` of the θ-discretisation, every
/// coefficient evaluated at `t* = t_k + θΔt`.
pub fn nonlinear_residual(problem: &QuasilinearProblem, u: &Trajectory, theta: f64) -> Result<f64> {
    let triple = problem.form.triple();
    let gram_h = triple.gram_h();
    let n = problem.dim();
    let mut total = 0.0;
    for k in 0..u.n_steps() {
        let (t0, t1) = (u.times[k], u.times[k + 1]);
        let dt = t1 - t0;
        let ts = t0 + theta * dt;
        let us = &u.states[k] * (1.0 - theta) + &u.states[k + 1] * theta;
        let inv_m = problem.inverse_m(ts, &us);
        let b_du = u.derivative[k].component_mul(&inv_m);
        let f = problem.f.eval(ts, n).component_mul(&inv_m);
        let r = gram_h * (b_du - f) + problem.form.full_operator(ts)? * &us;
        total += dt * triple.h_norm_of_functional(&r)?.powi(2);
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::scalar_form;

    fn scalar(m: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, u0: f64) -> QuasilinearProblem {
        let form = scalar_form(|_| 1.0, 0.0, (0.0, 1.0)).unwrap();
        QuasilinearProblem::new(form, Arc::new(m), 0.1, Source::Zero, Vector::from_vec(vec![u0])).unwrap()
    }

    #[test]
    fn linearized_b_examples() {
        let times = evolve::uniform_grid(0.0, 1.0, 1);
        let v = Trajectory::from_states(times, vec![Vector::from_vec(vec![0.0, 1.0]); 2]).unwrap();
        let form = forms::robin_form_1d_with(
            2,
            Arc::new(|_, _| 1.0),
            0.0,
            1.0,
            RobinOptions {
                lumped_mass: true,
                ..RobinOptions::default()
            },
            None,
        )
        .unwrap();
        let u0 = Vector::zeros(3);
        let v3 = Trajectory::from_states(v.times.clone(), vec![Vector::from_vec(vec![0.0, 1.0, 0.0]); 2]).unwrap();
        let p = QuasilinearProblem::new(form.clone(), Arc::new(|_, _| 1.0), 0.5, Source::Zero, u0.clone()).unwrap();
        assert_eq!(linearized_b(&p, &v3, 0).unwrap(), Mat::identity(3, 3));
        let p = QuasilinearProblem::new(form.clone(), Arc::new(|_, _| 2.0), 0.5, Source::Zero, u0.clone()).unwrap();
        assert_eq!(linearized_b(&p, &v3, 1).unwrap(), Mat::identity(3, 3) * 0.5);
        let p = QuasilinearProblem::new(form, Arc::new(|_, xi| 1.0 + xi * xi), 0.1, Source::Zero, u0).unwrap();
        let b = linearized_b(&p, &v3, 0).unwrap();
        assert_eq!((b[(0, 0)], b[(1, 1)]), (1.0, 0.5));
    }

    #[test]
    fn constant_m_converges_on_second_iteration() {
        let p = scalar(|_, _| 2.0, 1.0);
        let out = solve_fixed_point(&p, FixedPointOptions::default()).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[1].distance, 0.0);
    }

    #[test]
    fn zero_data_is_an_immediate_fixed_point() {
        let p = scalar(|_, xi| 1.0 + xi * xi, 0.0);
        let out = solve_fixed_point(&p, FixedPointOptions::default()).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].distance, 0.0);
    }

    #[test]
    fn rejects_consistent_mass() {
        let form = forms::robin_uniform_beta(4, |_| 1.0, 0.0, 1.0).unwrap();
        let r = QuasilinearProblem::new(form, Arc::new(|_, _| 1.0), 0.5, Source::Zero, Vector::zeros(5));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn non_convergence_reports_history() {
        let p = scalar(|_, xi| 1.0 + xi * xi, 1.0);
        let opts = FixedPointOptions {
            max_iter: 2,
            ..FixedPointOptions::default()
        };
        match solve_fixed_point(&p, opts) {
            Err(Error::NonConvergence { distances, .. }) => assert_eq!(distances.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
