//! Reference solutions and discrete-calculus checks used as ground truth.
//!
//! The reference integrator is the Dormand–Prince 5(4) pair with PI step
//! control and its 4th-order continuous extension. It shares no code with
//! the θ-scheme or the space-time solver.

use crate::error::{Error, Result};
use crate::evolve::{self, EvolutionProblem, ProblemForm, Trajectory};
use crate::forms::FormDecomposition;
use crate::linalg::{self, Mat, Vector};
use crate::sqrtop::{self, Power};

pub const MIN_TOL: f64 = 1e-12;
pub const MAX_TOL: f64 = 1e-6;
const MAX_STEPS: usize = 2_000_000;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    r: [Vector; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> Vector {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        &self.r[0] + (&self.r[1] + (&self.r[2] + (&self.r[3] + &self.r[4] * s1) * s) * s1) * s
    }

    fn linear(t0: f64, t1: f64, y0: &Vector, y1: &Vector) -> Self {
        let z = Vector::zeros(y0.len());
        Self {
            t0,
            h: t1 - t0,
            r: [y0.clone(), y1 - y0, z.clone(), z.clone(), z],
        }
    }
}

/// How the reference solution was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    DormandPrince,
    /// Implicit Euler at two resolutions with Richardson extrapolation.
    ImplicitRichardson,
}

/// Dense reference solution.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    segments: Vec<Segment>,
    pub accuracy: f64,
    pub method: OracleMethod,
    pub n_steps: usize,
}

impl OracleSolution {
    pub fn start(&self) -> f64 {
        self.segments[0].t0
    }

    pub fn end(&self) -> f64 {
        let last = &self.segments[self.segments.len() - 1];
        last.t0 + last.h
    }

    pub fn eval(&self, t: f64) -> Vector {
        let k = self.segments.partition_point(|s| s.t0 <= t).saturating_sub(1);
        let seg = &self.segments[k];
        seg.eval(t.clamp(seg.t0, seg.t0 + seg.h))
    }

    /// Samples the dense output on `times`.
    pub fn sample(&self, times: &[f64]) -> Result<Trajectory> {
        Trajectory::from_states(times.to_vec(), times.iter().map(|&t| self.eval(t)).collect())
    }

    pub fn final_state(&self) -> Vector {
        self.eval(self.end())
    }

    /// Accepted step nodes.
    pub fn step_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        t.push(self.end());
        t
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if (MIN_TOL..=MAX_TOL).contains(&tol) {
        Ok(())
    } else {
        Err(Error::Config(format!("oracle tolerance must lie in [1e-12, 1e-6], got {tol}")))
    }
}

/// Integrates `ẏ = rhs(t, y)` from `y0` over `[start, end]`, restarting at
/// every interior breakpoint.
pub fn reference_solve_ode(
    rhs: impl Fn(f64, &Vector) -> Result<Vector>,
    y0: &Vector,
    breakpoints: &[f64],
    tol: f64,
) -> Result<OracleSolution> {
    check_tol(tol)?;
    if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("oracle needs increasing breakpoints".into()));
    }
    // Local control a decade below the target keeps the global error under it.
    let local = 0.1 * tol;
    let mut segments = Vec::new();
    let mut y = y0.clone();
    let mut accuracy: f64 = 0.0;
    for w in breakpoints.windows(2) {
        let err = integrate_piece(&rhs, &mut y, w[0], w[1], local, &mut segments)?;
        accuracy = accuracy.max(err);
    }
    let n_steps = segments.len();
    Ok(OracleSolution {
        segments,
        accuracy,
        method: OracleMethod::DormandPrince,
        n_steps,
    })
}

fn integrate_piece(
    rhs: &impl Fn(f64, &Vector) -> Result<Vector>,
    y: &mut Vector,
    start: f64,
    end: f64,
    tol: f64,
    segments: &mut Vec<Segment>,
) -> Result<f64> {
    let span = end - start;
    let mut t = start;
    let mut k1 = rhs(t, y)?;
    let scale0 = y.amax().max(1.0);
    let mut h = {
        let d = k1.amax();
        let guess = if d > 0.0 { 0.01 * scale0 / d } else { 0.01 * span };
        guess.min(span).max(1e-14 * span)
    };
    let mut err_prev: f64 = 1e-4;
    let mut max_err: f64 = 0.0;
    let mut steps = 0usize;
    while t < end {
        if steps > MAX_STEPS || h < 1e-14 * span.max(t.abs()) {
            return Err(Error::Stiff { t, h });
        }
        let last = t + h >= end - 1e-14 * span;
        if last {
            h = end - t;
        }
        let mut k: Vec<Vector> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    ys.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k.push(rhs(t + C[s] * h, &ys)?);
        }
        // The 7th stage is evaluated at the 5th-order solution.
        let mut y_new = y.clone();
        for j in 0..6 {
            if A[6][j] != 0.0 {
                y_new.axpy(h * A[6][j], &k[j], 1.0);
            }
        }
        let mut err_vec = Vector::zeros(y.len());
        for j in 0..7 {
            if E[j] != 0.0 {
                err_vec.axpy(h * E[j], &k[j], 1.0);
            }
        }
        let err = (err_vec
            .iter()
            .zip(y.iter().zip(y_new.iter()))
            .map(|(e, (a, b))| {
                let sc = tol + tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / y.len() as f64)
            .sqrt();
        if !err.is_finite() {
            h *= 0.1;
            steps += 1;
            continue;
        }
        if err <= 1.0 {
            let ydiff = &y_new - &*y;
            let bspl = &k[0] * h - &ydiff;
            let r4 = &ydiff - &k[6] * h - &bspl;
            let mut r5 = Vector::zeros(y.len());
            for j in 0..7 {
                if D[j] != 0.0 {
                    r5.axpy(h * D[j], &k[j], 1.0);
                }
            }
            segments.push(Segment {
                t0: t,
                h,
                r: [y.clone(), ydiff, bspl, r4, r5],
            });
            max_err = max_err.max(err * tol);
            t = if last { end } else { t + h };
            *y = y_new;
            k1 = k[6].clone();
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 5.0);
            err_prev = err.max(1e-4);
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
        steps += 1;
    }
    Ok(max_err)
}

/// Right-hand side `B(t)^{-1}(f(t) − 𝒜(t)u)` in `H`-coordinates for the
/// piece governing `(a, b)`.
fn evolution_rhs<'a>(problem: &'a EvolutionProblem) -> impl Fn(&'a FormDecomposition, f64, &Vector) -> Result<Vector> + 'a {
    move |piece, t, u| {
        let gram_h = problem.triple().gram_h();
        let lhs = gram_h * problem.b.matrix(t);
        let rhs = gram_h * problem.f.eval(t, problem.dim()) - piece.full_operator(t)? * u;
        linalg::solve(&lhs, &rhs, "oracle right-hand side")
    }
}

/// Reference solution of an evolution problem, restarting at breakpoints.
pub fn reference_solve(problem: &EvolutionProblem, tol: f64) -> Result<OracleSolution> {
    check_tol(tol)?;
    let breaks = problem.form.breakpoints();
    let rhs = evolution_rhs(problem);
    match &problem.form {
        ProblemForm::Single(form) => reference_solve_ode(|t, u| rhs(form, t, u), &problem.u0, &breaks, tol),
        ProblemForm::Piecewise(pw) => {
            let mut out: Option<OracleSolution> = None;
            let mut y = problem.u0.clone();
            for (i, piece) in pw.pieces().iter().enumerate() {
                let sol = reference_solve_ode(|t, u| rhs(piece, t, u), &y, &breaks[i..i + 2], tol)?;
                y = sol.final_state();
                out = Some(match out {
                    None => sol,
                    Some(mut acc) => {
                        acc.segments.extend(sol.segments);
                        acc.accuracy = acc.accuracy.max(sol.accuracy);
                        acc.n_steps += sol.n_steps;
                        acc
                    }
                });
            }
            out.ok_or_else(|| Error::Config("piecewise form without pieces".into()))
        }
    }
}

/// Implicit fallback for stiff or rough problems: implicit Euler with
/// `n_steps` and `2 n_steps` cells, extrapolated as `2u_{2n} − u_n`.
pub fn implicit_fallback(problem: &EvolutionProblem, n_steps: usize) -> Result<OracleSolution> {
    let coarse = evolve::solve_theta(problem, n_steps, 1.0)?;
    let fine = evolve::solve_theta(problem, 2 * n_steps, 1.0)?;
    let mut accuracy: f64 = 0.0;
    let states: Vec<Vector> = coarse
        .states
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let uf = &fine.states[2 * k];
            accuracy = accuracy.max((uf - u).amax());
            uf * 2.0 - u
        })
        .collect();
    let segments = coarse
        .times
        .windows(2)
        .zip(states.windows(2))
        .map(|(t, y)| Segment::linear(t[0], t[1], &y[0], &y[1]))
        .collect();
    Ok(OracleSolution {
        segments,
        accuracy,
        method: OracleMethod::ImplicitRichardson,
        n_steps,
    })
}

/// Reference solve, switching to the implicit fallback on stiffness.
pub fn reference_solve_or_fallback(problem: &EvolutionProblem, tol: f64, fallback_steps: usize) -> Result<OracleSolution> {
    match reference_solve(problem, tol) {
        Err(Error::Stiff { .. }) => implicit_fallback(problem, fallback_steps),
        other => other,
    }
}

/// Residual of a discrete calculus identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleResidual {
    pub absolute: f64,
    /// Magnitude of the largest term in the identity.
    pub scale: f64,
}

impl RuleResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.absolute / self.scale
        } else {
            self.absolute
        }
    }
}

fn same_grid(u: &Trajectory, v: &Trajectory) -> Result<()> {
    if u.times != v.times {
        return Err(Error::Config("trajectories live on different time grids".into()));
    }
    if u.dim() != v.dim() {
        return Err(Error::Dimension {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    Ok(())
}

/// `⟨v(T),u(T)⟩ − ⟨v(0),u(0)⟩ − ∫(⟨v̇,u⟩ + ⟨v,u̇⟩)` for piecewise-linear `u`
/// (V-coordinates) and `v` (V′-coordinates), Simpson per cell.
pub fn ibp_check(u: &Trajectory, v: &Trajectory) -> Result<RuleResidual> {
    same_grid(u, v)?;
    let last = u.times.len() - 1;
    let end = v.states[last].dot(&u.states[last]);
    let begin = v.states[0].dot(&u.states[0]);
    let mut integral = 0.0;
    let mut scale = end.abs().max(begin.abs());
    for k in 0..last {
        let h = u.times[k + 1] - u.times[k];
        let (du, dv) = (&u.derivative[k], &v.derivative[k]);
        let g = |a: &Vector, b: &Vector| dv.dot(a) + b.dot(du);
        let um = (&u.states[k] + &u.states[k + 1]) * 0.5;
        let vm = (&v.states[k] + &v.states[k + 1]) * 0.5;
        let cell = h / 6.0 * (g(&u.states[k], &v.states[k]) + 4.0 * g(&um, &vm) + g(&u.states[k + 1], &v.states[k + 1]));
        scale = scale.max(cell.abs());
        integral += cell;
    }
    Ok(RuleResidual {
        absolute: (end - begin - integral).abs(),
        scale,
    })
}

/// `S(T)u(T) − S(0)u(0) − ∫(Ṡu + Su̇)`, trapezoid per cell, `Ṡ` by finite
/// differences with step `h`. Returns the Euclidean norm of the defect.
pub fn product_rule_check(
    s: impl Fn(f64) -> Result<Mat>,
    interval: (f64, f64),
    u: &Trajectory,
    h: f64,
) -> Result<RuleResidual> {
    let n = u.times.len();
    let s_vals: Vec<Mat> = u.times.iter().map(|&t| s(t)).collect::<Result<_>>()?;
    let s_dot: Vec<Mat> = u
        .times
        .iter()
        .map(|&t| sqrtop::finite_difference(&s, interval.0, interval.1, t, h))
        .collect::<Result<_>>()?;
    let end = &s_vals[n - 1] * &u.states[n - 1];
    let begin = &s_vals[0] * &u.states[0];
    let mut scale = end.norm().max(begin.norm());
    let mut integral = Vector::zeros(end.len());
    for k in 0..n - 1 {
        let dt = u.times[k + 1] - u.times[k];
        let du = &u.derivative[k];
        let g0 = &s_dot[k] * &u.states[k] + &s_vals[k] * du;
        let g1 = &s_dot[k + 1] * &u.states[k + 1] + &s_vals[k + 1] * du;
        let cell = (g0 + g1) * (0.5 * dt);
        scale = scale.max(cell.norm());
        integral += cell;
    }
    Ok(RuleResidual {
        absolute: (end - begin - integral).norm(),
        scale,
    })
}

/// Product rule for `t ↦ 𝒜^{1/2}(t)` of a symmetric form.
pub fn chain_rule_sqrt_check(form: &FormDecomposition, u: &Trajectory) -> Result<RuleResidual> {
    let step = 1e-4 * (form.end() - form.start());
    product_rule_check(
        |t| Ok(sqrtop::spectral_decompose(form, t)?.power_matrix(Power::Half)),
        (form.start(), form.end()),
        u,
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{Perturbation, Source};
    use crate::forms::scalar_form;
    use crate::quadrature::gauss_legendre_on;

    fn scalar_problem(rate: impl Fn(f64) -> f64 + Send + Sync + 'static, lip: f64) -> EvolutionProblem {
        let form = scalar_form(rate, lip, (0.0, 1.0)).unwrap();
        EvolutionProblem::new(form, Perturbation::identity(1), Source::Zero, Vector::from_vec(vec![1.0])).unwrap()
    }

    #[test]
    fn closed_form_decay() {
        for tol in [1e-6, 1e-8, 1e-10, 1e-12] {
            let s = reference_solve(&scalar_problem(|_| 1.0, 0.0), tol).unwrap();
            assert!((s.final_state()[0] - (-1f64).exp()).abs() <= tol, "tol {tol}");
            let s = reference_solve(&scalar_problem(|t| 1.0 + t, 1.0), tol).unwrap();
            assert!((s.final_state()[0] - (-1.5f64).exp()).abs() <= tol, "tol {tol}");
        }
    }

    #[test]
    fn dense_output_is_accurate() {
        let s = reference_solve(&scalar_problem(|_| 1.0, 0.0), 1e-10).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((s.eval(t)[0] - (-t).exp()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn fundamental_theorem_on_nodes() {
        let tol = 1e-10;
        let s = reference_solve(&scalar_problem(|t| 1.0 + t, 1.0), tol).unwrap();
        let times = s.step_times();
        let mut integral = 0.0;
        for w in times.windows(2) {
            for (t, wt) in gauss_legendre_on(8, w[0], w[1]) {
                integral += wt * (-(1.0 + t) * s.eval(t)[0]);
            }
            let defect = s.eval(w[1])[0] - 1.0 - integral;
            assert!(defect.abs() <= 10.0 * tol);
        }
    }

    #[test]
    fn rejects_tolerance_outside_range() {
        let p = scalar_problem(|_| 1.0, 0.0);
        assert!(reference_solve(&p, 1e-5).is_err());
        assert!(reference_solve(&p, 1e-13).is_err());
    }

    #[test]
    fn fallback_is_second_order() {
        let p = scalar_problem(|_| 1.0, 0.0);
        let e1 = (implicit_fallback(&p, 50).unwrap().final_state()[0] - (-1f64).exp()).abs();
        let e2 = (implicit_fallback(&p, 100).unwrap().final_state()[0] - (-1f64).exp()).abs();
        assert!(e1 / e2 > 3.5);
    }

    fn linear_traj(times: &[f64], f: impl Fn(f64) -> Vec<f64>) -> Trajectory {
        Trajectory::from_states(times.to_vec(), times.iter().map(|&t| Vector::from_vec(f(t))).collect()).unwrap()
    }

    #[test]
    fn ibp_examples() {
        let times = evolve::uniform_grid(0.0, 1.0, 4);
        let c = linear_traj(&times, |_| vec![2.0, -1.0]);
        assert_eq!(ibp_check(&c, &c).unwrap().absolute, 0.0);
        let t = linear_traj(&times, |t| vec![t]);
        assert!(ibp_check(&t, &t).unwrap().absolute < 1e-15);
    }

    #[test]
    fn product_rule_examples() {
        let times = evolve::uniform_grid(0.0, 1.0, 8);
        let u = linear_traj(&times, |t| vec![1.0 + t, t * t]);
        let s = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let r = product_rule_check(|_| Ok(s.clone()), (0.0, 1.0), &u, 1e-3).unwrap();
        assert!(r.absolute <= 1e-12);
        let one = linear_traj(&times, |_| vec![1.0]);
        let r = product_rule_check(|t| Ok(Mat::from_element(1, 1, t)), (0.0, 1.0), &one, 1e-3).unwrap();
        assert!(r.absolute <= 1e-12);
    }

    #[test]
    fn chain_rule_for_scalar_root() {
        let form = scalar_form(|t| 1.0 + t, 1.0, (0.0, 1.0)).unwrap();
        let errs: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| {
                let times = evolve::uniform_grid(0.0, 1.0, n);
                let u = linear_traj(&times, |t| vec![(2.0 * t).sin()]);
                chain_rule_sqrt_check(&form, &u).unwrap().absolute
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.0, "{errs:?}");
        }
    }
}
