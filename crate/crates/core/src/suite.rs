//! Seeded random forms and problems for randomized verification suites.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::evolve::{EvolutionProblem, Perturbation, Source};
use crate::forms::{self, FormDecomposition};
use crate::linalg::{self, Mat, Vector};
use crate::triple::GelfandTriple;

/// `XᵀX/n + shift·I` with standard-uniform entries scaled to `scale`.
pub fn random_spd(rng: &mut impl Rng, n: usize, scale: f64, shift: f64) -> Mat {
    let x = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale);
    linalg::symmetrize(&(x.transpose() * &x / n as f64 + Mat::identity(n, n) * shift))
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> Mat {
    let x = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale);
    linalg::symmetrize(&x)
}

/// Triple with `gram_V = gram_H + K`, `K` positive semidefinite, so that
/// `c_H ≤ 1`.
pub fn random_triple(rng: &mut impl Rng, n: usize) -> Result<GelfandTriple> {
    let gram_h = random_spd(rng, n, 1.0, 0.1);
    let scale = rng.gen_range(0.5..5.0);
    let k = random_spd(rng, n, scale, 0.0);
    GelfandTriple::new(gram_h.clone(), linalg::symmetrize(&(&gram_h + k)))
}

/// Constant symmetric coercive form of dimension `1..=max_dim`.
pub fn random_symmetric_form(rng: &mut impl Rng, max_dim: usize) -> Result<FormDecomposition> {
    let n = rng.gen_range(1..=max_dim);
    let triple = Arc::new(random_triple(rng, n)?);
    let scale = rng.gen_range(0.1..10.0);
    let floor = rng.gen_range(0.05..2.0);
    let a1 = linalg::symmetrize(&(random_spd(rng, n, scale, 0.0) + triple.gram_v() * floor));
    forms::constant_form(triple, a1, Mat::zeros(n, n), 1.0)
}

/// `B(t) = Q diag(d(t)) Q⁻¹` with `Q` orthonormal in `H`, so that
/// `gram_H B(t)` is symmetric with eigenvalue bounds `min d`, `max d`.
pub fn random_perturbation(rng: &mut impl Rng, triple: &GelfandTriple) -> Result<Perturbation> {
    let n = triple.dim();
    let basis = linalg::generalized_eigen(&random_spd(rng, n, 1.0, 0.1), triple.gram_h())?.vectors;
    let basis_inv = basis.transpose() * triple.gram_h();
    let beta0 = rng.gen_range(0.3..1.0);
    let beta1 = beta0 * rng.gen_range(1.0..4.0);
    let mid: Vec<f64> = (0..n).map(|_| rng.gen_range(beta0..=beta1)).collect();
    let amp: Vec<f64> = mid.iter().map(|m| (m - beta0).min(beta1 - m) * rng.gen_range(0.0..1.0)).collect();
    let freq: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..6.0)).collect();
    let b = Arc::new(move |t: f64| {
        let d = Vector::from_fn(n, |i, _| mid[i] + amp[i] * (freq[i] * t).sin());
        &basis * Mat::from_diagonal(&d) * &basis_inv
    });
    Perturbation::new(b, beta0, beta1, triple, (0.0, 1.0))
}

/// Random problem on `[0, 1]`: Lipschitz symmetric `a1`, constant bounded
/// `a2`, perturbation within `[β0, β1]`, smooth source, random `u0`.
pub fn random_mr_problem(rng: &mut impl Rng, max_dim: usize) -> Result<EvolutionProblem> {
    let n = rng.gen_range(1..=max_dim);
    let triple = Arc::new(random_triple(rng, n)?);
    let scale = rng.gen_range(0.5..4.0);
    let s0 = linalg::symmetrize(&(random_spd(rng, n, scale, 0.0) + triple.gram_v() * 0.5));
    // |s1| ≤ slope·gram_V keeps s0 + t s1 ≥ 0.1 gram_V on [0, 1].
    let slope = rng.gen_range(0.0..0.4);
    let l = linalg::cholesky(triple.gram_v(), "gram_V")?.l();
    let r = random_symmetric(rng, n, 1.0 / n as f64);
    let s1 = linalg::symmetrize(&(&l * r * l.transpose() * slope));
    let a2 = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) * rng.gen_range(0.0..0.5);
    let form = forms::affine_form(triple.clone(), s0, s1, a2, (0.0, 1.0))?;
    let b = random_perturbation(rng, &triple)?;
    let f0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let f1 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w = rng.gen_range(0.5..5.0);
    let f = Source::Function(Arc::new(move |t| &f0 + &f1 * (w * t).cos()));
    let u0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    EvolutionProblem::new(form, b, f, u0)
}

/// `{0} ∪ {10^{-1}, …, 10^3}` with `n_log` log-spaced points.
pub fn lambda_grid(n_log: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..n_log).map(|i| 10f64.powf(-1.0 + 4.0 * i as f64 / (n_log - 1) as f64)));
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_objects_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_mr_problem(&mut rng, 6).unwrap();
            p.b.validate(p.triple(), (0.0, 1.0)).unwrap();
            assert!(p.triple().c_h() <= 1.0 + 1e-12);
            random_symmetric_form(&mut rng, 8).unwrap();
        }
    }

    #[test]
    fn lambda_grid_has_twelve_points() {
        let g = lambda_grid(11);
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.1).abs() < 1e-15 && (g[11] - 1000.0).abs() < 1e-9);
    }
}
