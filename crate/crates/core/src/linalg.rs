//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry `‖M − Mᵀ‖_F / ‖M‖_F` (zero for the zero matrix).
pub fn asymmetry(m: &Mat) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending order.
pub fn sym_eigen(m: &Mat) -> (Vector, Mat) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Validates that `m` is square, symmetric within `tol` and positive definite.
pub fn check_spd(name: &str, m: &Mat, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("matrix `{name}`")));
    }
    let asym = asymmetry(m);
    if asym > tol {
        return Err(Error::NotSymmetric {
            name: name.to_string(),
            asymmetry: asym,
        });
    }
    let (vals, _) = sym_eigen(m);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite {
            name: name.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Solution of the symmetric-definite pencil `A x = λ B x`.
///
/// Eigenvalues are ascending; eigenvector columns are `B`-orthonormal.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: Vector,
    pub vectors: Mat,
}

impl GeneralizedEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Reduces `A x = λ B x` to a standard symmetric problem through the
/// Cholesky factor of `B`.
pub fn generalized_eigen(a: &Mat, b: &Mat) -> Result<GeneralizedEigen> {
    let n = b.nrows();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            found: a.nrows(),
        });
    }
    let chol = cholesky(b, "B")?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let (values, y) = sym_eigen(&c);
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    Ok(GeneralizedEigen { values, vectors })
}

pub fn cholesky(m: &Mat, name: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite {
        name: name.to_string(),
        min_eigenvalue: sym_eigen(m).0[0],
    })
}

/// Operator norm of `k` from `(ℝⁿ, xᵀ G_in x)` to `(ℝᵐ, yᵀ G_out y)`.
pub fn operator_norm(k: &Mat, g_in: &Mat, g_out: &Mat) -> Result<f64> {
    let q = k.transpose() * g_out * k;
    let eig = generalized_eigen(&symmetrize(&q), g_in)?;
    Ok(eig.max().max(0.0).sqrt())
}

/// Smallest gain `inf ‖k x‖_out / ‖x‖_in` for the same pair of norms.
pub fn operator_lower_bound(k: &Mat, g_in: &Mat, g_out: &Mat) -> Result<f64> {
    let q = k.transpose() * g_out * k;
    let eig = generalized_eigen(&symmetrize(&q), g_in)?;
    Ok(eig.min().max(0.0).sqrt())
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

pub fn solve(m: &Mat, rhs: &Vector, what: &str) -> Result<Vector> {
    let x = m
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(x)
}

/// Band matrix with `kl` sub- and `ku` super-diagonals, factorised by
/// Gaussian elimination with partial pivoting (fill-in grows the upper
/// bandwidth to `ku + kl`).
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Solves `A x = b`, consuming the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut x = b.to_vec();
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-300 * scale.max(1e-300)) || !best.is_finite() {
                return Err(Error::Singular(format!("banded pivot {k}")));
            }
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
                x.swap(k, p);
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[s] = 0.0;
                for j in k + 1..=last_col {
                    let src = self.data[self.slot(k, j)];
                    let dst = self.slot(i, j);
                    self.data[dst] -= l * src;
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + ku + kl).min(n - 1);
            let mut acc = x[k];
            for (j, xj) in x.iter().enumerate().take(last_col + 1).skip(k + 1) {
                acc -= self.data[self.slot(k, j)] * xj;
            }
            x[k] = acc / self.data[self.slot(k, k)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("banded solve".into()));
        }
        Ok(x)
    }
}

/// Writes a matrix in the dense text format: the dimension on the first
/// line, then the entries row by row.
pub fn write_matrix(m: &Mat) -> String {
    let mut out = format!("{}\n", m.nrows());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the dense text format produced by [`write_matrix`].
pub fn read_matrix(text: &str) -> Result<Mat> {
    let mut tokens = text.split_whitespace();
    let dim: usize = tokens
        .next()
        .ok_or_else(|| Error::Config("empty matrix file".into()))?
        .parse()
        .map_err(|e| Error::Config(format!("bad matrix dimension: {e}")))?;
    if dim == 0 {
        return Err(Error::Config("matrix dimension must be positive".into()));
    }
    let values = tokens
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad matrix entry `{s}`: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != dim * dim {
        return Err(Error::Config(format!(
            "matrix of dimension {dim} needs {} entries, found {}",
            dim * dim,
            values.len()
        )));
    }
    Ok(Mat::from_row_slice(dim, dim, &values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_is_b_orthonormal() {
        let a = Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = Mat::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let eig = generalized_eigen(&a, &b).unwrap();
        let gram = eig.vectors.transpose() * &b * &eig.vectors;
        assert!((gram - Mat::identity(3, 3)).norm() < 1e-12);
        for i in 0..3 {
            let v = eig.vectors.column(i);
            let r = &a * v - (&b * v) * eig.values[i];
            assert!(r.norm() < 1e-12);
        }
        assert!(eig.values[0] <= eig.values[1] && eig.values[1] <= eig.values[2]);
    }

    #[test]
    fn matrix_text_format_round_trip() {
        let m = Mat::from_row_slice(2, 2, &[1.0, -0.25, 1e-300, 3.0]);
        let back = read_matrix(&write_matrix(&m)).unwrap();
        assert_eq!(m, back);
        assert!(read_matrix("2\n1 2 3").is_err());
        assert!(read_matrix("").is_err());
    }

    #[test]
    fn spd_check_reports_offender() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match check_spd("gram_H", &m, 1e-12) {
            Err(Error::NotPositiveDefinite { name, min_eigenvalue }) => {
                assert_eq!(name, "gram_H");
                assert!((min_eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let n = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(check_spd("gram_V", &n, 1e-12), Err(Error::NotSymmetric { .. })));
    }
    #[test]
    fn banded_solve_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, kl, ku) = (40, 3, 2);
        let mut band = BandedMatrix::zeros(n, kl, ku);
        let mut dense = Mat::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // Small diagonal forces pivoting.
                let v: f64 = if i == j { rng.gen_range(-0.01..0.01) } else { rng.gen_range(-1.0..1.0) };
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let y = band.mul_vec(&b);
        let y_dense = &dense * Vector::from_column_slice(&b);
        assert!((Vector::from_vec(y) - y_dense).norm() < 1e-12);
        let x = band.solve(&b).unwrap();
        let expected = solve(&dense, &Vector::from_column_slice(&b), "dense").unwrap();
        assert!((Vector::from_vec(x) - &expected).norm() < 1e-8 * expected.norm());
    }
}
