//! TOML experiment configuration and its translation into library problems.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use maxreg::evolve::{EvolutionProblem, Perturbation, ProblemForm, Source};
use maxreg::fem::UniformMesh;
use maxreg::forms::{self, Endpoint, FormDecomposition, PiecewiseForm, RobinOptions, SchrodingerGrid};
use maxreg::linalg::{Mat, Vector};
use maxreg::quasilinear::QuasilinearProblem;
use maxreg::triple::GelfandTriple;
use serde::Deserialize;

use crate::expr::{Expr, Var};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub form: FormSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub run: RunSpec,
    pub quasilinear: Option<QuasilinearSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FormSpec {
    /// `a(t, u, v) = c(t) u v` on the real line.
    Scalar {
        coefficient: Expr,
        #[serde(default)]
        lipschitz: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// P1 Robin Laplacian on `(0, 1)`; `beta` may depend on `t` and the
    /// endpoint `x ∈ {0, 1}`.
    Robin {
        n_elements: usize,
        beta: Expr,
        beta_lipschitz: f64,
        #[serde(default = "one")]
        horizon: f64,
        #[serde(default)]
        lumped_mass: bool,
        advection: Option<Expr>,
        advection_sup: Option<f64>,
    },
    /// Weighted Schrödinger form on `(−L, L)`.
    Schrodinger {
        half_width: f64,
        n_elements: usize,
        m0: Expr,
        potential: Expr,
        alpha1: f64,
        alpha2: f64,
        lipschitz: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// Time-independent matrices; Gram matrices default to the identity.
    Constant {
        gram_h: Option<Vec<Vec<f64>>>,
        gram_v: Option<Vec<Vec<f64>>>,
        a1: Vec<Vec<f64>>,
        a2: Option<Vec<Vec<f64>>>,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// Pieces built on `[0, last breakpoint]` and restricted to their cells.
    Piecewise { breakpoints: Vec<f64>, pieces: Vec<FormSpec> },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PerturbationSpec {
    #[default]
    Identity,
    /// `B = value·I` or an explicit matrix.
    Constant {
        value: Option<f64>,
        matrix: Option<Vec<Vec<f64>>>,
        beta0: Option<f64>,
        beta1: Option<f64>,
    },
    /// `B(t) = diag(b(t, x_i))` over the node coordinates.
    Expression { value: Expr, beta0: f64, beta1: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSpec {
    #[default]
    Zero,
    /// Nodal values `f(t, x_i)` in `H` coordinates.
    Expression { value: Expr },
    /// Constant vector.
    Vector { values: Vec<f64> },
    /// Piecewise-linear interpolation of rows given at increasing times.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    Expression { value: Expr },
    Vector { values: Vec<f64> },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Expression { value: Expr::constant(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Theta,
    Spacetime,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub solver: SolverKind,
    /// Time steps (per piece for `glue`).
    pub steps: usize,
    pub theta: f64,
    /// Time cells of the space-time method.
    pub cells: usize,
    pub refinements: Vec<usize>,
    pub thetas: Vec<f64>,
    /// Exact solution `u(t, x)` used by `convergence` instead of the oracle.
    pub exact: Option<Expr>,
    pub min_order: f64,
    pub oracle_tol: f64,
    /// Compare `solve`/`spacetime`/`glue` against the reference integrator.
    pub oracle: bool,
    pub times: Vec<f64>,
    pub lambda_points: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            solver: SolverKind::Theta,
            steps: 100,
            theta: 1.0,
            cells: 64,
            refinements: vec![10, 20, 40, 80],
            thetas: vec![0.5, 1.0],
            exact: None,
            min_order: 0.8,
            oracle_tol: 1e-10,
            oracle: false,
            times: vec![0.0],
            lambda_points: 11,
            tol: 1e-8,
            max_iter: 50,
            damping: 1.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasilinearSpec {
    /// `m(t, ξ)`, clipped into `[delta_m, 1/delta_m]`.
    pub m: Expr,
    pub delta_m: f64,
}

pub fn load(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str) -> Result<Config, String> {
    toml::from_str(text).map_err(|e| {
        let message = e.to_string().trim_end().to_string();
        match expression_line(text, e.message()) {
            Some(line) => format!("line {line}: {}", e.message()),
            None => message,
        }
    })
}

/// Tagged sections are buffered before the expression is parsed, so the
/// TOML span points at the section header; recover the line of the string
/// literal instead.
fn expression_line(text: &str, message: &str) -> Option<usize> {
    let rest = message.strip_prefix("in expression `")?;
    let source = &rest[..rest.find("`: ")?];
    let quoted = [format!("\"{source}\""), format!("'{source}'")];
    text.lines().position(|l| quoted.iter().any(|q| l.contains(q.as_str()))).map(|i| i + 1)
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<Mat, String> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(format!("{name} must be a non-empty square matrix"));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

fn same_dim(m: &Mat, n: usize, name: &str) -> Result<(), String> {
    if m.nrows() != n {
        return Err(format!("dimension mismatch: {name} is {}x{0}, expected {n}x{n}", m.nrows()));
    }
    Ok(())
}

fn lib<T>(r: maxreg::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

impl FormSpec {
    pub fn horizon(&self) -> f64 {
        match self {
            FormSpec::Scalar { horizon, .. }
            | FormSpec::Robin { horizon, .. }
            | FormSpec::Schrodinger { horizon, .. }
            | FormSpec::Constant { horizon, .. } => *horizon,
            FormSpec::Piecewise { breakpoints, .. } => breakpoints.last().copied().unwrap_or(0.0),
        }
    }

    /// Spatial coordinate attached to each degree of freedom.
    pub fn nodes(&self) -> Result<Vec<f64>, String> {
        match self {
            FormSpec::Scalar { .. } => Ok(vec![0.0]),
            FormSpec::Robin { n_elements, .. } => Ok(UniformMesh::unit(*n_elements).nodes()),
            FormSpec::Schrodinger {
                half_width, n_elements, ..
            } => Ok(UniformMesh::new(-half_width, *half_width, *n_elements).nodes()),
            FormSpec::Constant { a1, .. } => Ok((0..a1.len()).map(|i| i as f64).collect()),
            FormSpec::Piecewise { pieces, .. } => pieces.first().ok_or("piecewise form has no pieces")?.nodes(),
        }
    }

    /// Same form with a different number of elements (Robin and Schrödinger).
    pub fn refined(&self, n: usize) -> Option<FormSpec> {
        let mut out = self.clone();
        match &mut out {
            FormSpec::Robin { n_elements, .. } | FormSpec::Schrodinger { n_elements, .. } => *n_elements = n,
            _ => return None,
        }
        Some(out)
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self, FormSpec::Piecewise { .. })
    }

    pub fn build(&self) -> Result<ProblemForm, String> {
        match self {
            FormSpec::Piecewise { breakpoints, pieces } => {
                if pieces.len() + 1 != breakpoints.len() {
                    return Err(format!(
                        "piecewise form: {} breakpoints need {} pieces, found {}",
                        breakpoints.len(),
                        breakpoints.len().saturating_sub(1),
                        pieces.len()
                    ));
                }
                let mut built = Vec::with_capacity(pieces.len());
                for (i, piece) in pieces.iter().enumerate() {
                    if piece.is_piecewise() {
                        return Err("piecewise forms cannot be nested".into());
                    }
                    if piece.horizon() < breakpoints[i + 1] {
                        return Err(format!(
                            "piece {i}: horizon {} ends before breakpoint {}",
                            piece.horizon(),
                            breakpoints[i + 1]
                        ));
                    }
                    let whole = piece.build_single()?;
                    built.push(lib(whole.restrict(breakpoints[i], breakpoints[i + 1]))?);
                }
                Ok(ProblemForm::Piecewise(lib(PiecewiseForm::new(breakpoints.clone(), built))?))
            }
            _ => Ok(ProblemForm::Single(self.build_single()?)),
        }
    }

    pub fn build_single(&self) -> Result<FormDecomposition, String> {
        match self {
            FormSpec::Scalar {
                coefficient,
                lipschitz,
                horizon,
            } => {
                coefficient.check_vars(&[Var::T], "form.coefficient")?;
                let c = coefficient.clone();
                lib(forms::scalar_form(move |t| c.eval(t, 0.0, 0.0), *lipschitz, (0.0, *horizon)))
            }
            FormSpec::Robin {
                n_elements,
                beta,
                beta_lipschitz,
                horizon,
                lumped_mass,
                advection,
                advection_sup,
            } => {
                beta.check_vars(&[Var::T, Var::X], "form.beta")?;
                let b = beta.clone();
                let beta = Arc::new(move |t, end| {
                    let x = if end == Endpoint::Left { 0.0 } else { 1.0 };
                    b.eval(t, x, 0.0)
                });
                let advection = match advection {
                    None => None,
                    Some(a) => {
                        a.check_vars(&[Var::X], "form.advection")?;
                        let a = a.clone();
                        Some(Arc::new(move |x: f64| a.eval(0.0, x, 0.0)) as Arc<dyn Fn(f64) -> f64 + Send + Sync>)
                    }
                };
                let sup = match (&advection, advection_sup) {
                    (None, _) => 0.0,
                    (Some(_), Some(s)) => *s,
                    (Some(a), None) => {
                        // Sampled supremum, padded to absorb the sampling gap.
                        (0..=4096).map(|i| a(i as f64 / 4096.0).abs()).fold(0.0, f64::max) * 1.01
                    }
                };
                let options = RobinOptions {
                    lumped_mass: *lumped_mass,
                    advection_sup: sup,
                };
                lib(forms::robin_form_1d_with(*n_elements, beta, *beta_lipschitz, *horizon, options, advection))
            }
            FormSpec::Schrodinger {
                half_width,
                n_elements,
                m0,
                potential,
                alpha1,
                alpha2,
                lipschitz,
                horizon,
            } => {
                m0.check_vars(&[Var::X], "form.m0")?;
                potential.check_vars(&[Var::T, Var::X], "form.potential")?;
                let grid = SchrodingerGrid {
                    half_width: *half_width,
                    n_elements: *n_elements,
                };
                let nodes = UniformMesh::new(-half_width, *half_width, *n_elements).nodes();
                let weights: Vec<f64> = nodes.iter().map(|&x| m0.eval(0.0, x, 0.0)).collect();
                let pot = potential.clone();
                lib(forms::schrodinger_form_1d(
                    grid,
                    &weights,
                    Arc::new(move |t, x| pot.eval(t, x, 0.0)),
                    *alpha1,
                    *alpha2,
                    *lipschitz,
                    *horizon,
                ))
            }
            FormSpec::Constant {
                gram_h,
                gram_v,
                a1,
                a2,
                horizon,
            } => {
                let a1 = matrix(a1, "form.a1")?;
                let n = a1.nrows();
                let identity = Mat::identity(n, n);
                let gh = gram_h.as_deref().map(|m| matrix(m, "form.gram_h")).transpose()?.unwrap_or(identity.clone());
                let gv = gram_v.as_deref().map(|m| matrix(m, "form.gram_v")).transpose()?.unwrap_or(identity);
                let a2 = a2.as_deref().map(|m| matrix(m, "form.a2")).transpose()?.unwrap_or(Mat::zeros(n, n));
                same_dim(&gh, n, "form.gram_h")?;
                same_dim(&gv, n, "form.gram_v")?;
                same_dim(&a2, n, "form.a2")?;
                let triple = Arc::new(lib(GelfandTriple::new(gh, gv))?);
                lib(forms::constant_form(triple, a1, a2, *horizon))
            }
            FormSpec::Piecewise { .. } => Err("a single (non-piecewise) form is required here".into()),
        }
    }
}

impl PerturbationSpec {
    fn build(&self, form: &ProblemForm, nodes: &[f64]) -> Result<Perturbation, String> {
        let n = form.dim();
        let interval = (form.start(), form.end());
        match self {
            PerturbationSpec::Identity => Ok(Perturbation::identity(n)),
            PerturbationSpec::Constant {
                value,
                matrix: m,
                beta0,
                beta1,
            } => match (value, m) {
                (Some(c), None) => lib(Perturbation::scalar(*c, n)),
                (None, Some(m)) => {
                    let m = matrix(m, "perturbation.matrix")?;
                    same_dim(&m, n, "perturbation.matrix")?;
                    let (b0, b1) = match (beta0, beta1) {
                        (Some(a), Some(b)) => (*a, *b),
                        _ => return Err("perturbation.matrix needs beta0 and beta1".into()),
                    };
                    lib(Perturbation::new(Arc::new(move |_| m.clone()), b0, b1, form.triple(), interval))
                }
                _ => Err("constant perturbation needs exactly one of `value` and `matrix`".into()),
            },
            PerturbationSpec::Expression { value, beta0, beta1 } => {
                value.check_vars(&[Var::T, Var::X], "perturbation.value")?;
                let (e, xs) = (value.clone(), nodes.to_vec());
                let b = Arc::new(move |t| Mat::from_diagonal(&Vector::from_iterator(xs.len(), xs.iter().map(|&x| e.eval(t, x, 0.0)))));
                lib(Perturbation::new(b, *beta0, *beta1, form.triple(), interval))
            }
        }
    }
}

impl SourceSpec {
    pub fn build(&self, n: usize, nodes: &[f64]) -> Result<Source, String> {
        match self {
            SourceSpec::Zero => Ok(Source::Zero),
            SourceSpec::Expression { value } => {
                value.check_vars(&[Var::T, Var::X], "source.value")?;
                let (e, xs) = (value.clone(), nodes.to_vec());
                Ok(Source::Function(Arc::new(move |t| {
                    Vector::from_iterator(xs.len(), xs.iter().map(|&x| e.eval(t, x, 0.0)))
                })))
            }
            SourceSpec::Vector { values } => {
                if values.len() != n {
                    return Err(format!("dimension mismatch: source has {} entries, expected {n}", values.len()));
                }
                Ok(Source::constant(Vector::from_vec(values.clone())))
            }
            SourceSpec::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err("source table needs one row per time".into());
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err("source table times must increase".into());
                }
                if let Some(r) = values.iter().find(|r| r.len() != n) {
                    return Err(format!("dimension mismatch: source row has {} entries, expected {n}", r.len()));
                }
                let times = times.clone();
                let rows: Vec<Vector> = values.iter().map(|r| Vector::from_vec(r.clone())).collect();
                Ok(Source::Function(Arc::new(move |t| {
                    let k = times.partition_point(|&s| s <= t);
                    if k == 0 {
                        return rows[0].clone();
                    }
                    if k == times.len() {
                        return rows[k - 1].clone();
                    }
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    &rows[k - 1] * (1.0 - w) + &rows[k] * w
                })))
            }
        }
    }
}

impl InitialSpec {
    pub fn build(&self, n: usize, nodes: &[f64]) -> Result<Vector, String> {
        match self {
            InitialSpec::Expression { value } => {
                value.check_vars(&[Var::X], "initial.value")?;
                Ok(Vector::from_iterator(nodes.len(), nodes.iter().map(|&x| value.eval(0.0, x, 0.0))))
            }
            InitialSpec::Vector { values } => {
                if values.len() != n {
                    return Err(format!("dimension mismatch: initial value has {} entries, expected {n}", values.len()));
                }
                Ok(Vector::from_vec(values.clone()))
            }
        }
    }
}

impl Config {
    pub fn problem(&self) -> Result<EvolutionProblem, String> {
        self.problem_for(&self.form)
    }

    /// Problem with the same data sections on another form (used for
    /// refinement families).
    pub fn problem_for(&self, spec: &FormSpec) -> Result<EvolutionProblem, String> {
        let form = spec.build()?;
        let nodes = spec.nodes()?;
        let n = form.dim();
        let b = self.perturbation.build(&form, &nodes)?;
        let f = self.source.build(n, &nodes)?;
        let u0 = self.initial.build(n, &nodes)?;
        lib(EvolutionProblem::new(form, b, f, u0))
    }

    pub fn quasilinear_problem(&self) -> Result<QuasilinearProblem, String> {
        let q = self.quasilinear.as_ref().ok_or("the [quasilinear] section is required")?;
        q.m.check_vars(&[Var::T, Var::Xi], "quasilinear.m")?;
        if !matches!(self.perturbation, PerturbationSpec::Identity) {
            return Err("quasilinear runs derive B from m; remove the [perturbation] section".into());
        }
        let form = self.form.build_single()?;
        let nodes = self.form.nodes()?;
        let n = form.dim();
        let f = self.source.build(n, &nodes)?;
        let u0 = self.initial.build(n, &nodes)?;
        let m = q.m.clone();
        lib(QuasilinearProblem::new(form, Arc::new(move |t, xi| m.eval(t, 0.0, xi)), q.delta_m, f, u0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROBIN: &str = r#"
        [form]
        kind = "robin"
        n_elements = 8
        beta = "1 + t"
        beta_lipschitz = 1.0

        [source]
        kind = "expression"
        value = "1"

        [initial]
        kind = "expression"
        value = "x"
    "#;

    #[test]
    fn robin_config_builds() {
        let c = parse(ROBIN).unwrap();
        let p = c.problem().unwrap();
        assert_eq!(p.dim(), 9);
        assert_eq!(p.u0[8], 1.0);
        assert_eq!(p.f.eval(0.3, 9)[4], 1.0);
        assert_eq!(c.run.steps, 100);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse("[form]\nkind = \"robin\"\nn_elements = 8\nbeta = \"1 + \"\n").unwrap_err();
        assert!(e.starts_with("line 4:"), "{e}");
        let e = parse("[form]\nkind = \"scalar\"\ncoefficient = 1\nbogus = 2\n").unwrap_err();
        assert!(e.contains("bogus"), "{e}");
        let e = parse("seed = [\n").unwrap_err();
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = parse("[form]\nkind = \"scalar\"\ncoefficient = 1\n[initial]\nkind = \"vector\"\nvalues = [1, 2]\n").unwrap();
        assert!(c.problem().unwrap_err().contains("dimension mismatch"));
    }

    #[test]
    fn variable_misuse_is_reported() {
        let c = parse("[form]\nkind = \"scalar\"\ncoefficient = \"1 + x\"\n").unwrap();
        assert!(c.problem().unwrap_err().contains("`x`"));
    }

    #[test]
    fn piecewise_and_table() {
        let c = parse(
            r#"
            [form]
            kind = "piecewise"
            breakpoints = [0.0, 0.5, 1.0]
            [[form.pieces]]
            kind = "scalar"
            coefficient = 1
            [[form.pieces]]
            kind = "scalar"
            coefficient = 2
            [source]
            kind = "table"
            times = [0.0, 1.0]
            values = [[0.0], [2.0]]
        "#,
        )
        .unwrap();
        let p = c.problem().unwrap();
        assert_eq!(p.form.breakpoints(), vec![0.0, 0.5, 1.0]);
        assert_eq!(p.f.eval(0.25, 1)[0], 0.5);
        assert_eq!(p.f.eval(2.0, 1)[0], 2.0);
    }
}
