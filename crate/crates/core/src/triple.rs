//! Finite-dimensional Gelfand triple `V ↪ H ↪ V′`.
//!
//! All three spaces share one coordinate system. Elements of `V` and `H` are
//! coordinate vectors measured with `gram_v` and `gram_h`; elements of `V′`
//! are stored as functional coordinates `f`, acting as `v ↦ fᵀv`. The dual
//! norm is the one induced by `gram_v⁻¹`.

use nalgebra::{Cholesky, Dyn};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Relative tolerance for symmetry of input Gram matrices.
pub const SPD_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GelfandTriple {
    gram_h: Mat,
    gram_v: Mat,
    c_h: f64,
    chol_v: Cholesky<f64, Dyn>,
    chol_h: Cholesky<f64, Dyn>,
}

impl GelfandTriple {
    /// Builds the triple and computes `c_H = √λ_max(gram_h, gram_v)`.
    pub fn new(gram_h: Mat, gram_v: Mat) -> Result<Self> {
        linalg::check_spd("gram_H", &gram_h, SPD_TOL)?;
        linalg::check_spd("gram_V", &gram_v, SPD_TOL)?;
        check_len(gram_h.nrows(), gram_v.nrows())?;
        let eig = linalg::generalized_eigen(&gram_h, &gram_v)?;
        let c_h = eig.max().sqrt();
        let chol_v = linalg::cholesky(&gram_v, "gram_V")?;
        let chol_h = linalg::cholesky(&gram_h, "gram_H")?;
        Ok(Self {
            gram_h,
            gram_v,
            c_h,
            chol_v,
            chol_h,
        })
    }

    /// Triple with `gram_h = gram_v = I`.
    pub fn identity(dim: usize) -> Self {
        Self::new(Mat::identity(dim, dim), Mat::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.gram_h.nrows()
    }

    pub fn gram_h(&self) -> &Mat {
        &self.gram_h
    }

    pub fn gram_v(&self) -> &Mat {
        &self.gram_v
    }

    /// Smallest constant with `‖u‖_H ≤ c_H ‖u‖_V`.
    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    pub fn h_inner(&self, u: &Vector, v: &Vector) -> f64 {
        u.dot(&(&self.gram_h * v))
    }

    pub fn v_inner(&self, u: &Vector, v: &Vector) -> f64 {
        u.dot(&(&self.gram_v * v))
    }

    pub fn h_norm(&self, u: &Vector) -> f64 {
        self.h_inner(u, u).max(0.0).sqrt()
    }

    pub fn v_norm(&self, u: &Vector) -> f64 {
        self.v_inner(u, u).max(0.0).sqrt()
    }

    /// Duality pairing `⟨f, v⟩ = fᵀv`.
    pub fn pairing(&self, f: &Vector, v: &Vector) -> f64 {
        f.dot(v)
    }

    /// `‖f‖_{V′} = √(fᵀ gram_v⁻¹ f)`.
    pub fn dual_norm(&self, f: &Vector) -> Result<f64> {
        check_len(self.dim(), f.len())?;
        let r = self.riesz_v(f)?;
        Ok(f.dot(&r).max(0.0).sqrt())
    }

    /// Riesz representative in `V`: `gram_v⁻¹ f`, the maximiser of `⟨f, v⟩/‖v‖_V`.
    pub fn riesz_v(&self, f: &Vector) -> Result<Vector> {
        check_len(self.dim(), f.len())?;
        Ok(self.chol_v.solve(f))
    }

    /// Converts functional coordinates of an element of `H ⊂ V′` back to
    /// `H`-coordinates: `gram_h⁻¹ f`.
    pub fn riesz_h(&self, f: &Vector) -> Result<Vector> {
        check_len(self.dim(), f.len())?;
        Ok(self.chol_h.solve(f))
    }

    /// `gram_h⁻¹ m` for a matrix right-hand side.
    pub fn riesz_h_matrix(&self, m: &Mat) -> Mat {
        self.chol_h.solve(m)
    }

    /// `gram_v⁻¹ m` for a matrix right-hand side.
    pub fn riesz_v_matrix(&self, m: &Mat) -> Mat {
        self.chol_v.solve(m)
    }

    /// The embedding `H → V′`: `g ↦ gram_h g`, so `⟨embed(g), v⟩ = (g|v)_H`.
    pub fn embed_h_to_vprime(&self, g: &Vector) -> Result<Vector> {
        check_len(self.dim(), g.len())?;
        Ok(&self.gram_h * g)
    }

    /// `H`-norm of an element of `H` given through functional coordinates.
    pub fn h_norm_of_functional(&self, f: &Vector) -> Result<f64> {
        let g = self.riesz_h(f)?;
        Ok(self.h_norm(&g))
    }

    pub(crate) fn check_vector(&self, x: &Vector) -> Result<()> {
        check_len(self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector entries".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_constants() {
        let t = GelfandTriple::new(Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
        assert_eq!(t.c_h(), 1.0);
        let t = GelfandTriple::new(Mat::identity(2, 2), Mat::identity(2, 2) * 2.0).unwrap();
        assert!((t.c_h() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dual_norm_examples() {
        let t = GelfandTriple::identity(3);
        let e1 = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((t.dual_norm(&e1).unwrap() - 1.0).abs() < 1e-15);
        let t = GelfandTriple::new(Mat::identity(1, 1), Mat::identity(1, 1) * 4.0).unwrap();
        assert!((t.dual_norm(&Vector::from_vec(vec![2.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            t.dual_norm(&Vector::zeros(2)),
            Err(Error::Dimension { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn embedding_examples() {
        let t = GelfandTriple::new(
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0])),
            Mat::identity(2, 2) * 3.0,
        )
        .unwrap();
        let g = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(t.embed_h_to_vprime(&g).unwrap(), Vector::from_vec(vec![1.0, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let g = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = t.pairing(&t.embed_h_to_vprime(&g).unwrap(), &g);
            assert!((lhs - t.h_norm(&g).powi(2)).abs() <= 1e-14 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_grams() {
        let bad = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            GelfandTriple::new(bad, Mat::identity(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(GelfandTriple::new(Mat::identity(2, 2), Mat::identity(3, 3)).is_err());
    }
}
