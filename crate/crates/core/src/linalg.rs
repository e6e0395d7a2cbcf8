//! Symmetric eigendecomposition (cyclic Jacobi).

use alloc::vec::Vec;

use crate::math;
use crate::tensor::Matrix;

/// Eigenvalues and column eigenvectors of a symmetric matrix.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
/// Only the upper triangle symmetry is assumed, not checked.
pub fn sym_eigen(a: &Matrix) -> SymEigen {
    let n = a.rows();
    assert_eq!(n, a.cols(), "square matrix required");
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    SymEigen { values: (0..n).map(|i| m.get(i, i)).collect(), vectors: v }
}

/// Principal square root of a symmetric positive semidefinite matrix
/// (negative eigenvalues are clamped to zero).
pub fn sym_sqrt(a: &Matrix) -> Matrix {
    let e = sym_eigen(a);
    let n = a.rows();
    let roots: Vec<f64> = e.values.iter().map(|&l| math::sqrt(l.max(0.0))).collect();
    Matrix::from_fn(n, n, |i, j| (0..n).map(|k| e.vectors.get(i, k) * roots[k] * e.vectors.get(j, k)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn reconstructs_random_symmetric() {
        let mut r = rng::seeded(3);
        let x = rng::normal_matrix(&mut r, 6, 6);
        let a = x.add(&x.transpose());
        let e = sym_eigen(&a);
        let d = Matrix::from_fn(6, 6, |i, j| if i == j { e.values[i] } else { 0.0 });
        let back = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
        assert!(back.sub(&a).max_abs() < 1e-10);
        let s = sym_sqrt(&x.matmul_tn(&x));
        assert!(s.matmul(&s).sub(&x.matmul_tn(&x)).max_abs() < 1e-9);
    }
}
