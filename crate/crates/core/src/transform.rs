//! Rigid motions `x ↦ Q x + g` with orthogonal `Q`.

use autodiff::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::rng::gaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    /// `n x n` orthogonal.
    pub q: Tensor,
    pub g: Vec<f64>,
}

impl RigidTransform {
    pub fn identity(n: usize) -> Self {
        Self {
            q: Tensor::identity(n),
            g: vec![0.0; n],
        }
    }

    /// Haar-random `Q` from the QR factorization of a Gaussian matrix (signs
    /// of `R`'s diagonal folded into `Q`), then one column negated if needed
    /// so `det Q` has the requested sign. `g` is Gaussian with the given scale.
    pub fn random(rng: &mut ChaCha8Rng, n: usize, reflection: bool, translation_scale: f64) -> Self {
        let a: Vec<f64> = (0..n * n).map(|_| gaussian(rng)).collect();
        let mut q = orthonormalize(n, &a);
        if (determinant(n, &q) < 0.0) != reflection {
            for r in 0..n {
                q[r * n] = -q[r * n];
            }
        }
        let g = (0..n).map(|_| translation_scale * gaussian(rng)).collect();
        Self {
            q: Tensor::matrix(n, n, q).expect("n x n"),
            g,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn det(&self) -> f64 {
        determinant(self.dim(), self.q.data())
    }

    /// Rows of `v` are vectors: `v Qᵀ`.
    pub fn rotate(&self, v: &Tensor) -> Tensor {
        v.matmul(&self.q.transpose().expect("square")).expect("widths match")
    }

    /// Rows of `x` are points: `x Qᵀ + g`.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = self.rotate(x);
        let n = self.dim();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (a, b) in row.iter_mut().zip(&self.g) {
                *a += b;
            }
        }
        out
    }
}

/// Modified Gram-Schmidt on the columns of the row-major `a`; the result has
/// positive diagonal in the implied `R`.
fn orthonormalize(n: usize, a: &[f64]) -> Vec<f64> {
    let mut q = a.to_vec();
    for c in 0..n {
        for p in 0..c {
            let dot: f64 = (0..n).map(|r| q[r * n + c] * q[r * n + p]).sum();
            for r in 0..n {
                q[r * n + c] -= dot * q[r * n + p];
            }
        }
        let norm = (0..n).map(|r| q[r * n + c].powi(2)).sum::<f64>().sqrt();
        for r in 0..n {
            q[r * n + c] /= norm;
        }
    }
    q
}

/// Gaussian elimination with partial pivoting.
fn determinant(n: usize, m: &[f64]) -> f64 {
    let mut a = m.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .expect("nonempty");
        if a[piv * n + c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for k in 0..n {
                a.swap(piv * n + k, c * n + k);
            }
            det = -det;
        }
        det *= a[c * n + c];
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_transforms_are_orthogonal_with_requested_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..20 {
            let t = RigidTransform::random(&mut rng, 3, k % 2 == 1, 10.0);
            let qtq = t.q.transpose().unwrap().matmul(&t.q).unwrap();
            assert!(qtq.max_abs_diff(&Tensor::identity(3)).unwrap() < 1e-12);
            let want = if k % 2 == 1 { -1.0 } else { 1.0 };
            assert!((t.det() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_is_exact() {
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap();
        assert_eq!(RigidTransform::identity(3).apply(&x), x);
    }

    #[test]
    fn determinant_by_hand() {
        assert_eq!(determinant(2, &[0.0, 1.0, 1.0, 0.0]), -1.0);
        assert_eq!(determinant(3, &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 4.0]), 24.0);
    }
}
