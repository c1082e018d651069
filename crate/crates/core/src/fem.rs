//! P1 finite elements on a uniform 1D mesh.

use crate::linalg::{Mat, Vector};

/// Uniform mesh of `[left, right]` with `n_elements` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformMesh {
    pub left: f64,
    pub right: f64,
    pub n_elements: usize,
}

impl UniformMesh {
    pub fn new(left: f64, right: f64, n_elements: usize) -> Self {
        assert!(right > left && n_elements >= 1);
        Self {
            left,
            right,
            n_elements,
        }
    }

    pub fn unit(n_elements: usize) -> Self {
        Self::new(0.0, 1.0, n_elements)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_elements + 1
    }

    pub fn h(&self) -> f64 {
        (self.right - self.left) / self.n_elements as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n_nodes())
            .map(|i| {
                if i == self.n_elements {
                    self.right
                } else {
                    self.left + i as f64 * h
                }
            })
            .collect()
    }

    /// `∫ φ′_i φ′_j`.
    pub fn stiffness(&self) -> Mat {
        let n = self.n_nodes();
        let h = self.h();
        let mut k = Mat::zeros(n, n);
        for e in 0..self.n_elements {
            let (i, j) = (e, e + 1);
            k[(i, i)] += 1.0 / h;
            k[(j, j)] += 1.0 / h;
            k[(i, j)] -= 1.0 / h;
            k[(j, i)] -= 1.0 / h;
        }
        k
    }

    /// Consistent mass matrix `∫ φ_i φ_j`.
    pub fn mass(&self) -> Mat {
        let n = self.n_nodes();
        let h = self.h();
        let mut m = Mat::zeros(n, n);
        for e in 0..self.n_elements {
            let (i, j) = (e, e + 1);
            m[(i, i)] += h / 3.0;
            m[(j, j)] += h / 3.0;
            m[(i, j)] += h / 6.0;
            m[(j, i)] += h / 6.0;
        }
        m
    }

    /// Nodal quadrature weights (row sums of the mass matrix).
    pub fn lumped_weights(&self) -> Vector {
        let h = self.h();
        Vector::from_fn(self.n_nodes(), |i, _| {
            if i == 0 || i == self.n_elements {
                0.5 * h
            } else {
                h
            }
        })
    }

    pub fn lumped_mass(&self) -> Mat {
        Mat::from_diagonal(&self.lumped_weights())
    }

    /// `C[i][j] = ∫ b(x) φ′_j φ_i`, integrated with two-point Gauss per cell.
    pub fn advection(&self, b: impl Fn(f64) -> f64) -> Mat {
        let n = self.n_nodes();
        let h = self.h();
        let mut c = Mat::zeros(n, n);
        let g = 0.5 / 3f64.sqrt();
        for e in 0..self.n_elements {
            let x0 = self.left + e as f64 * h;
            for s in [0.5 - g, 0.5 + g] {
                let w = 0.5 * h;
                let bx = b(x0 + s * h);
                let phi = [1.0 - s, s];
                let dphi = [-1.0 / h, 1.0 / h];
                for a in 0..2 {
                    for bb in 0..2 {
                        c[(e + a, e + bb)] += w * bx * dphi[bb] * phi[a];
                    }
                }
            }
        }
        c
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector::from_vec(self.nodes().into_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_in_kernel_of_stiffness() {
        let mesh = UniformMesh::unit(5);
        let ones = Vector::from_element(6, 1.0);
        assert!((mesh.stiffness() * &ones).norm() < 1e-12);
        assert!((ones.dot(&(mesh.mass() * &ones)) - 1.0).abs() < 1e-14);
        assert!((mesh.lumped_weights().sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn advection_of_linear_function() {
        // ∫ u′ v with u = x, v = 1 on (0,1) equals 1.
        let mesh = UniformMesh::unit(4);
        let c = mesh.advection(|_| 1.0);
        let u = mesh.interpolate(|x| x);
        let v = Vector::from_element(5, 1.0);
        assert!((v.dot(&(c * u)) - 1.0).abs() < 1e-14);
    }
}
