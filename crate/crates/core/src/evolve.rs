//! Solvers for `B(t)u̇ + 𝒜(t)u = f(t)`, `u(start) = u0`, and maximal-regularity
//! diagnostics.
//!
//! All operators are applied in functional (`V′`) coordinates: the step of
//! the θ-scheme reads
//! `[gram_H B/Δt + θ𝒜] u_{k+1} = [gram_H B/Δt − (1−θ)𝒜] u_k + gram_H f`,
//! every coefficient evaluated at `t* = t_k + θΔt`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forms::{self, FormConstants, FormDecomposition, MatrixFn, PiecewiseForm};
use crate::linalg::{self, BandedMatrix, Mat, Vector};
use crate::par;
use crate::quadrature::gauss_legendre_on;
use crate::sqrtop::{self, Power};
use crate::triple::GelfandTriple;

pub type VectorFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// Multiplicative perturbation `B(t)` acting on `H`-coordinates with
/// `β0‖g‖_H² ≤ (B(t)g | g)_H ≤ β1‖g‖_H²`.
#[derive(Clone)]
pub struct Perturbation {
    b: MatrixFn,
    beta0: f64,
    beta1: f64,
    identity: bool,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Perturbation")
            .field("beta0", &self.beta0)
            .field("beta1", &self.beta1)
            .field("identity", &self.identity)
            .finish()
    }
}

impl Perturbation {
    /// Validates the bounds on 100 random vectors at 33 sampled times.
    pub fn new(b: MatrixFn, beta0: f64, beta1: f64, triple: &GelfandTriple, interval: (f64, f64)) -> Result<Self> {
        let p = Self::new_unchecked(b, beta0, beta1)?;
        p.validate(triple, interval)?;
        Ok(p)
    }

    pub fn new_unchecked(b: MatrixFn, beta0: f64, beta1: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta1 >= beta0 && beta1.is_finite()) {
            return Err(Error::Config(format!("need 0 < beta0 <= beta1, got {beta0}, {beta1}")));
        }
        Ok(Self {
            b,
            beta0,
            beta1,
            identity: false,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            b: Arc::new(move |_| Mat::identity(dim, dim)),
            beta0: 1.0,
            beta1: 1.0,
            identity: true,
        }
    }

    /// `B(t) = c·I`.
    pub fn scalar(c: f64, dim: usize) -> Result<Self> {
        Self::new_unchecked(Arc::new(move |_| Mat::identity(dim, dim) * c), c, c)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn matrix(&self, t: f64) -> Mat {
        (self.b)(t)
    }

    pub fn validate(&self, triple: &GelfandTriple, interval: (f64, f64)) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let n = triple.dim();
        for t in forms::uniform_times(interval.0, interval.1, forms::VALIDATION_SAMPLES) {
            let b = self.matrix(t);
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: b.nrows(),
                });
            }
            let gb = triple.gram_h() * &b;
            for _ in 0..100 {
                let g = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let h2 = triple.h_inner(&g, &g);
                let q = g.dot(&(&gb * &g));
                let tol = 1e-10 * h2;
                if q < self.beta0 * h2 - tol || q > self.beta1 * h2 + tol {
                    return Err(Error::Validation(format!(
                        "perturbation bound violated at t = {t}: (Bg|g)_H / ‖g‖_H² = {}",
                        q / h2
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Right-hand side `f`, given in `H`-coordinates.
#[derive(Clone)]
pub enum Source {
    Zero,
    Function(VectorFn),
}

impl Source {
    pub fn eval(&self, t: f64, dim: usize) -> Vector {
        match self {
            Source::Zero => Vector::zeros(dim),
            Source::Function(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    pub fn constant(v: Vector) -> Self {
        Source::Function(Arc::new(move |_| v.clone()))
    }
}

#[derive(Debug, Clone)]
pub enum ProblemForm {
    Single(FormDecomposition),
    Piecewise(PiecewiseForm),
}

impl ProblemForm {
    pub fn start(&self) -> f64 {
        match self {
            ProblemForm::Single(f) => f.start(),
            ProblemForm::Piecewise(p) => p.start(),
        }
    }

    pub fn end(&self) -> f64 {
        match self {
            ProblemForm::Single(f) => f.end(),
            ProblemForm::Piecewise(p) => p.end(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemForm::Single(f) => f.dim(),
            ProblemForm::Piecewise(p) => p.dim(),
        }
    }

    pub fn triple(&self) -> &GelfandTriple {
        match self {
            ProblemForm::Single(f) => f.triple(),
            ProblemForm::Piecewise(p) => p.pieces()[0].triple(),
        }
    }

    /// Piece governing the open cell `(a, b)`.
    pub fn piece_for_cell(&self, a: f64, b: f64) -> &FormDecomposition {
        match self {
            ProblemForm::Single(f) => f,
            ProblemForm::Piecewise(p) => p.piece_at(0.5 * (a + b)),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ProblemForm::Single(f) => vec![f.start(), f.end()],
            ProblemForm::Piecewise(p) => p.breakpoints().to_vec(),
        }
    }
}

impl From<FormDecomposition> for ProblemForm {
    fn from(f: FormDecomposition) -> Self {
        ProblemForm::Single(f)
    }
}

impl From<PiecewiseForm> for ProblemForm {
    fn from(p: PiecewiseForm) -> Self {
        ProblemForm::Piecewise(p)
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionProblem {
    pub form: ProblemForm,
    pub b: Perturbation,
    pub f: Source,
    pub u0: Vector,
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero => write!(f, "Zero"),
            Source::Function(_) => write!(f, "Function"),
        }
    }
}

impl EvolutionProblem {
    pub fn new(form: impl Into<ProblemForm>, b: Perturbation, f: Source, u0: Vector) -> Result<Self> {
        let form = form.into();
        let n = form.dim();
        form.triple().check_vector(&u0)?;
        for t in forms::uniform_times(form.start(), form.end(), forms::VALIDATION_SAMPLES) {
            let ft = f.eval(t, n);
            if ft.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: ft.len(),
                });
            }
            if ft.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("f({t})")));
            }
            let bt = b.matrix(t);
            if bt.nrows() != n || bt.ncols() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: bt.nrows(),
                });
            }
        }
        Ok(Self { form, b, f, u0 })
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    pub fn start(&self) -> f64 {
        self.form.start()
    }

    pub fn end(&self) -> f64 {
        self.form.end()
    }

    pub fn horizon(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn triple(&self) -> &GelfandTriple {
        self.form.triple()
    }

    pub fn is_trivial(&self) -> bool {
        self.f.is_zero() && self.u0.iter().all(|x| *x == 0.0)
    }

    /// Same problem restricted to a single form on its own interval, with a
    /// new initial value.
    pub fn restricted(&self, form: FormDecomposition, u0: Vector) -> Self {
        Self {
            form: ProblemForm::Single(form),
            b: self.b.clone(),
            f: self.f.clone(),
            u0,
        }
    }
}

/// Discrete trajectory: nodal states (`V`-coordinates) and the backward
/// difference quotient on every interval (`H`-coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub derivative: Vec<Vector>,
}

impl Trajectory {
    pub fn from_states(times: Vec<f64>, states: Vec<Vector>) -> Result<Self> {
        if times.len() != states.len() || times.len() < 2 {
            return Err(Error::Config(format!(
                "trajectory needs matching times/states with at least 2 nodes ({} vs {})",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("trajectory times must be strictly increasing".into()));
        }
        let derivative = (0..times.len() - 1)
            .map(|k| (&states[k + 1] - &states[k]) / (times[k + 1] - times[k]))
            .collect();
        Ok(Self {
            times,
            states,
            derivative,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn final_state(&self) -> &Vector {
        &self.states[self.states.len() - 1]
    }

    pub fn zeros(times: Vec<f64>, dim: usize) -> Self {
        let states = vec![Vector::zeros(dim); times.len()];
        let derivative = vec![Vector::zeros(dim); times.len() - 1];
        Self {
            times,
            states,
            derivative,
        }
    }

    /// Linear interpolation of the states at `t`.
    pub fn interpolate(&self, t: f64) -> Vector {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return self.states[k].clone(),
            Err(k) => k - 1,
        };
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        &self.states[k] * (1.0 - s) + &self.states[k + 1] * s
    }

    /// Discrete `L²(0,T;H)` distance (trapezoid in time).
    pub fn l2h_distance(&self, other: &Trajectory, triple: &GelfandTriple) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::Dimension {
                expected: self.times.len(),
                found: other.times.len(),
            });
        }
        let values: Vec<f64> = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| {
                let d = a - b;
                triple.h_inner(&d, &d)
            })
            .collect();
        Ok(trapezoid(&self.times, &values).max(0.0).sqrt())
    }
}

pub(crate) fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

pub fn uniform_grid(start: f64, end: f64, n_steps: usize) -> Vec<f64> {
    let dt = (end - start) / n_steps as f64;
    (0..=n_steps)
        .map(|k| if k == n_steps { end } else { start + k as f64 * dt })
        .collect()
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.5..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::Config(format!("theta must lie in [1/2, 1], got {theta}")))
    }
}

/// θ-scheme on a uniform grid of `n_steps` cells.
///
/// For piecewise forms every breakpoint must be a grid node.
pub fn solve_theta(problem: &EvolutionProblem, n_steps: usize, theta: f64) -> Result<Trajectory> {
    check_theta(theta)?;
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let (start, end) = (problem.start(), problem.end());
    let times = uniform_grid(start, end, n_steps);
    let dt = (end - start) / n_steps as f64;
    for bp in problem.form.breakpoints() {
        let k = ((bp - start) / dt).round();
        if ((start + k * dt) - bp).abs() > 1e-9 * dt {
            return Err(Error::Config(format!(
                "breakpoint {bp} is not a node of the uniform grid with {n_steps} steps"
            )));
        }
    }
    if problem.is_trivial() {
        return Ok(Trajectory::zeros(times, problem.dim()));
    }
    step_through(problem, times, theta)
}

fn step_through(problem: &EvolutionProblem, times: Vec<f64>, theta: f64) -> Result<Trajectory> {
    let n = problem.dim();
    let gram_h = problem.triple().gram_h();
    let mut states = Vec::with_capacity(times.len());
    let mut derivative = Vec::with_capacity(times.len() - 1);
    states.push(problem.u0.clone());
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let dt = t1 - t0;
        let t_star = t0 + theta * dt;
        let piece = problem.form.piece_for_cell(t0, t1);
        let a = piece.full_operator(t_star)?;
        let mass = gram_h * problem.b.matrix(t_star) / dt;
        let lhs = &mass + &a * theta;
        let u = &states[k];
        let rhs = (&mass - &a * (1.0 - theta)) * u + gram_h * problem.f.eval(t_star, n);
        let next = linalg::solve(&lhs, &rhs, &format!("theta step {k}"))?;
        derivative.push((&next - u) / dt);
        states.push(next);
    }
    Ok(Trajectory {
        times,
        states,
        derivative,
    })
}

/// Solves piece by piece, each piece starting verbatim from the previous
/// piece's final state.
pub fn solve_glued(problem: &EvolutionProblem, n_steps_per_piece: usize, theta: f64) -> Result<Trajectory> {
    let pieces: Vec<FormDecomposition> = match &problem.form {
        ProblemForm::Single(f) => vec![f.clone()],
        ProblemForm::Piecewise(p) => p.pieces().to_vec(),
    };
    let mut out: Option<Trajectory> = None;
    let mut u_start = problem.u0.clone();
    for piece in pieces {
        let sub = problem.restricted(piece, u_start.clone());
        let traj = solve_theta(&sub, n_steps_per_piece, theta)?;
        u_start = traj.final_state().clone();
        out = Some(match out {
            None => traj,
            Some(mut acc) => {
                acc.times.extend_from_slice(&traj.times[1..]);
                acc.states.extend(traj.states.into_iter().skip(1));
                acc.derivative.extend(traj.derivative);
                acc
            }
        });
    }
    out.ok_or_else(|| Error::Config("piecewise form without pieces".into()))
}

/// `(ε, γ, δ)` making the weighted space-time form coercive:
/// `ε = β0/2`, `γ = (Ṁ1 + M2²/(2ε) + α)/α`, `δ = e^{−γT} min{β0, α}/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coercivity {
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
}

pub fn coercivity_constants(constants: &FormConstants, beta0: f64) -> Result<Coercivity> {
    if !(beta0 > 0.0 && constants.alpha > 0.0) {
        return Err(Error::Config("coercivity constants need beta0 > 0 and alpha > 0".into()));
    }
    let epsilon = beta0 / 2.0;
    let alpha = constants.alpha;
    let gamma = (constants.m1_dot + constants.m2 * constants.m2 / (2.0 * epsilon) + alpha) / alpha;
    let decay = (-gamma * constants.horizon).exp();
    let margin = gamma * alpha - constants.m1_dot - constants.m2 * constants.m2 / (2.0 * epsilon);
    let delta = (alpha / 2.0).min((beta0 - epsilon) * decay).min(0.5 * margin * decay);
    if !(delta > 0.0) {
        return Err(Error::Config(format!("coercivity constant is not positive (delta = {delta})")));
    }
    Ok(Coercivity { epsilon, gamma, delta })
}

/// Number of Gauss points per time cell in the space-time assembly.
pub const SPACETIME_QUADRATURE_POINTS: usize = 4;

/// Assembled Galerkin system of the weighted space-time form on
/// continuous piecewise-linear functions in time.
#[derive(Debug, Clone)]
pub struct SpaceTimeSystem {
    pub times: Vec<f64>,
    pub coercivity: Coercivity,
    dim: usize,
    /// `cell_blocks[k][a][b]`: test node `k+a`, trial node `k+b`.
    cell_blocks: Vec<[[Mat; 2]; 2]>,
    initial_block: Mat,
    rhs: Vec<Vector>,
    gram_h: Mat,
    gram_v: Mat,
}

impl SpaceTimeSystem {
    pub fn assemble(problem: &EvolutionProblem, n_cells: usize) -> Result<Self> {
        let form = match &problem.form {
            ProblemForm::Single(f) => f,
            ProblemForm::Piecewise(_) => {
                return Err(Error::Config("space-time solver needs a single Lipschitz form".into()))
            }
        };
        if n_cells == 0 {
            return Err(Error::Config("n_cells must be at least 1".into()));
        }
        let coercivity = coercivity_constants(&form.constants(), problem.b.beta0())?;
        let gamma = coercivity.gamma;
        let (start, end) = (problem.start(), problem.end());
        let times = uniform_grid(start, end, n_cells);
        let n = problem.dim();
        let gram_h = problem.triple().gram_h().clone();
        let cells: Vec<usize> = (0..n_cells).collect();
        let assembled = par::map(&cells, |&k| -> Result<([[Mat; 2]; 2], [Vector; 2])> {
            let (t0, t1) = (times[k], times[k + 1]);
            let h = t1 - t0;
            let mut blocks = [
                [Mat::zeros(n, n), Mat::zeros(n, n)],
                [Mat::zeros(n, n), Mat::zeros(n, n)],
            ];
            let mut rhs = [Vector::zeros(n), Vector::zeros(n)];
            for (t, w) in gauss_legendre_on(SPACETIME_QUADRATURE_POINTS, t0, t1) {
                let weight = w * (-gamma * (t - start)).exp();
                let s = (t - t0) / h;
                let phi = [1.0 - s, s];
                let dphi = [-1.0 / h, 1.0 / h];
                let gb = &gram_h * problem.b.matrix(t);
                let a = form.full_operator(t)?;
                let gf = &gram_h * problem.f.eval(t, n);
                for i in 0..2 {
                    for j in 0..2 {
                        blocks[i][j] += (&gb * (dphi[i] * dphi[j]) + &a * (dphi[i] * phi[j])) * weight;
                    }
                    rhs[i] += &gf * (dphi[i] * weight);
                }
            }
            Ok((blocks, rhs))
        });
        let a1_start = form.a1_matrix(start)?;
        let mut cell_blocks = Vec::with_capacity(n_cells);
        let mut rhs = vec![Vector::zeros(n); n_cells + 1];
        rhs[0] += &a1_start * &problem.u0;
        for (k, item) in assembled.into_iter().enumerate() {
            let (blocks, r) = item?;
            rhs[k] += &r[0];
            rhs[k + 1] += &r[1];
            cell_blocks.push(blocks);
        }
        Ok(Self {
            times,
            coercivity,
            dim: n,
            cell_blocks,
            initial_block: a1_start,
            rhs,
            gram_h,
            gram_v: problem.triple().gram_v().clone(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    /// `E(u, w)` for nodal coefficient vectors.
    pub fn energy(&self, u: &[Vector], w: &[Vector]) -> f64 {
        let mut e = w[0].dot(&(&self.initial_block * &u[0]));
        for (k, blocks) in self.cell_blocks.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    e += w[k + i].dot(&(&blocks[i][j] * &u[k + j]));
                }
            }
        }
        e
    }

    /// `‖w‖²_𝒱 = ∫‖ẇ‖²_H + ∫‖w‖²_V + ‖w(0)‖²_V`, exact for piecewise-linear `w`.
    pub fn trial_norm_sq(&self, w: &[Vector]) -> f64 {
        let mut total = w[0].dot(&(&self.gram_v * &w[0]));
        for k in 0..self.times.len() - 1 {
            let h = self.times[k + 1] - self.times[k];
            let d = (&w[k + 1] - &w[k]) / h;
            total += h * d.dot(&(&self.gram_h * &d));
            let (a, b) = (&w[k], &w[k + 1]);
            let va = a.dot(&(&self.gram_v * a));
            let vb = b.dot(&(&self.gram_v * b));
            let vab = a.dot(&(&self.gram_v * b));
            total += h / 3.0 * (va + vab + vb);
        }
        total
    }

    pub fn solve(&self) -> Result<Vec<Vector>> {
        let n = self.dim;
        let nodes = self.n_nodes();
        let bw = 2 * n - 1;
        let mut band = BandedMatrix::zeros(nodes * n, bw, bw);
        for r in 0..n {
            for c in 0..n {
                band.add(r, c, self.initial_block[(r, c)]);
            }
        }
        for (k, blocks) in self.cell_blocks.iter().enumerate() {
            for (i, row) in blocks.iter().enumerate() {
                for (j, block) in row.iter().enumerate() {
                    for r in 0..n {
                        for c in 0..n {
                            band.add((k + i) * n + r, (k + j) * n + c, block[(r, c)]);
                        }
                    }
                }
            }
        }
        let rhs: Vec<f64> = self.rhs.iter().flat_map(|v| v.iter().copied()).collect();
        let x = band
            .solve(&rhs)
            .map_err(|_| Error::Singular("space-time Galerkin system (coercivity broken)".into()))?;
        Ok((0..nodes)
            .map(|k| Vector::from_column_slice(&x[k * n..(k + 1) * n]))
            .collect())
    }
}

/// Space-time Galerkin solution with `n_time_cells` cells.
pub fn solve_spacetime(problem: &EvolutionProblem, n_time_cells: usize) -> Result<Trajectory> {
    if problem.is_trivial() {
        if let ProblemForm::Piecewise(_) = problem.form {
            return Err(Error::Config("space-time solver needs a single Lipschitz form".into()));
        }
        return Ok(Trajectory::zeros(
            uniform_grid(problem.start(), problem.end(), n_time_cells.max(1)),
            problem.dim(),
        ));
    }
    let system = SpaceTimeSystem::assemble(problem, n_time_cells)?;
    let states = system.solve()?;
    Trajectory::from_states(system.times.clone(), states)
}

/// Slack allowed in the discrete a-priori check.
pub const APRIORI_SLACK: f64 = 0.05;

/// The a-priori estimate `‖u‖_MR ≤ C (‖u0‖_V + ‖f‖_{L²H})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriCheck {
    pub delta: f64,
    /// `C = max{1/δ, √(M1/(2δ))}`.
    pub constant: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// `C = max{1/δ, √(M1/(2δ))}` from `δx² ≤ ‖f‖x + ½M1‖u0‖²`.
pub fn apriori_constant(delta: f64, m1: f64) -> f64 {
    (1.0 / delta).max((m1 / (2.0 * delta)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MRDiagnostics {
    pub norm_l2v: f64,
    /// `‖u̇‖_{L²(0,T;H)}`.
    pub norm_h1h: f64,
    pub norm_mr: f64,
    pub norm_au_l2h: f64,
    pub sup_v_norm: f64,
    pub energy_residual: f64,
    pub source_norm: f64,
    /// Only for single (Lipschitz) forms.
    pub apriori: Option<AprioriCheck>,
}

impl MRDiagnostics {
    pub fn apriori_satisfied(&self) -> bool {
        self.apriori.is_some_and(|a| a.satisfied)
    }
}

pub fn mr_diagnostics(problem: &EvolutionProblem, trajectory: &Trajectory) -> Result<MRDiagnostics> {
    let triple = problem.triple();
    let times = &trajectory.times;
    let n = problem.dim();
    if trajectory.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            found: trajectory.dim(),
        });
    }
    let last = times.len() - 1;
    let v_sq: Vec<f64> = trajectory.states.iter().map(|u| triple.v_inner(u, u)).collect();
    let norm_l2v_sq = trapezoid(times, &v_sq);
    let norm_h1h_sq: f64 = trajectory
        .derivative
        .iter()
        .zip(times.windows(2))
        .map(|(d, t)| (t[1] - t[0]) * triple.h_inner(d, d))
        .sum();
    let sup_v_norm = v_sq.iter().fold(0.0f64, |m, v| m.max(v.sqrt()));

    let per_node = par::map_range(times.len(), |k| -> Result<(f64, f64)> {
        let t = times[k];
        let piece = if k < last {
            problem.form.piece_for_cell(t, times[k + 1])
        } else {
            problem.form.piece_for_cell(times[k - 1], t)
        };
        let au = piece.full_operator(t)? * &trajectory.states[k];
        let au_h = triple.riesz_h(&au)?;
        let f = problem.f.eval(t, n);
        Ok((triple.h_inner(&au_h, &au_h), triple.h_inner(&f, &f)))
    });
    let per_node = per_node.into_iter().collect::<Result<Vec<_>>>()?;
    let au_sq: Vec<f64> = per_node.iter().map(|p| p.0).collect();
    let f_sq: Vec<f64> = per_node.iter().map(|p| p.1).collect();
    let norm_au_l2h = trapezoid(times, &au_sq).max(0.0).sqrt();
    let source_norm = trapezoid(times, &f_sq).max(0.0).sqrt();

    let residuals = par::map_range(last, |k| -> Result<f64> {
        let (t0, t1) = (times[k], times[k + 1]);
        let piece = problem.form.piece_for_cell(t0, t1);
        let (u0, u1) = (&trajectory.states[k], &trajectory.states[k + 1]);
        let a1_0 = piece.a1_matrix(t0)?;
        let a1_1 = piece.a1_matrix(t1)?;
        let jump = u1.dot(&(&a1_1 * u1)) - u0.dot(&(&a1_0 * u0));
        let a1_dot = sqrtop::derivative_estimate(piece, t0, sqrtop::default_step(piece))?;
        let rate = u0.dot(&(&a1_dot * u0)) + 2.0 * trajectory.derivative[k].dot(&(&a1_0 * u0));
        Ok((jump - rate * (t1 - t0)).abs())
    });
    let mut energy_residual = 0.0;
    for r in residuals {
        energy_residual += r?;
    }

    let norm_mr = (norm_l2v_sq + norm_h1h_sq).max(0.0).sqrt();
    let apriori = match &problem.form {
        ProblemForm::Single(form) => {
            let c = form.constants();
            let coercivity = coercivity_constants(&c, problem.b.beta0())?;
            let constant = apriori_constant(coercivity.delta, c.m1);
            let rhs = constant * (triple.v_norm(&problem.u0) + source_norm);
            Some(AprioriCheck {
                delta: coercivity.delta,
                constant,
                lhs: norm_mr,
                rhs,
                satisfied: norm_mr <= rhs * (1.0 + APRIORI_SLACK),
            })
        }
        ProblemForm::Piecewise(_) => None,
    };
    Ok(MRDiagnostics {
        norm_l2v: norm_l2v_sq.max(0.0).sqrt(),
        norm_h1h: norm_h1h_sq.max(0.0).sqrt(),
        norm_mr,
        norm_au_l2h,
        sup_v_norm,
        energy_residual,
        source_norm,
        apriori,
    })
}

/// How the square root of the full operator was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtMethod {
    /// Full operator symmetric: spectral decomposition.
    Spectral,
    /// Non-symmetric: principal square root by Denman–Beavers iteration.
    DenmanBeavers,
}

impl SqrtMethod {
    pub fn name(self) -> &'static str {
        match self {
            SqrtMethod::Spectral => "spectral",
            SqrtMethod::DenmanBeavers => "denman-beavers",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtRatioRow {
    pub dim: usize,
    pub r_upper: f64,
    pub r_lower: f64,
    pub method: SqrtMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtPropertyReport {
    pub rows: Vec<SqrtRatioRow>,
    /// `max r_upper / min r_lower` over the family.
    pub spread: f64,
    pub pass: bool,
}

/// Spread threshold for the square-root property probe.
pub const SQRT_SPREAD_LIMIT: f64 = 4.0;

/// Ratios `‖𝒜^{1/2}u‖_H / ‖u‖_V` (sup and inf) of the full operator at
/// `t0` for every member of a refinement family.
pub fn sqrt_property_probe(family: &[FormDecomposition], t0: f64) -> Result<SqrtPropertyReport> {
    let rows = par::map(family, |form| -> Result<SqrtRatioRow> {
        let triple = form.triple();
        let full = form.full_operator(t0)?;
        let (sqrt_h, method) = if linalg::asymmetry(&full) <= sqrtop::SPECTRAL_SYMMETRY_TOL {
            let fact = sqrtop::decompose_matrix(&full, triple, t0)?;
            (fact.power_matrix(Power::Half), SqrtMethod::Spectral)
        } else {
            let a_h = triple.riesz_h_matrix(&full);
            (sqrtop::principal_sqrt(&a_h)?, SqrtMethod::DenmanBeavers)
        };
        let q = sqrt_h.transpose() * triple.gram_h() * &sqrt_h;
        let eig = linalg::generalized_eigen(&linalg::symmetrize(&q), triple.gram_v())?;
        Ok(SqrtRatioRow {
            dim: triple.dim(),
            r_upper: eig.max().max(0.0).sqrt(),
            r_lower: eig.min().max(0.0).sqrt(),
            method,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let upper = rows.iter().fold(0.0f64, |m, r| m.max(r.r_upper));
    let lower = rows.iter().fold(f64::INFINITY, |m, r| m.min(r.r_lower));
    let spread = upper / lower;
    Ok(SqrtPropertyReport {
        rows,
        spread,
        pass: spread.is_finite() && spread <= SQRT_SPREAD_LIMIT,
    })
}
