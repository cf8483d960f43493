use crate::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` belongs to `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigensolver; rejects input that is not symmetric to `1e-10`
/// (relative to the largest entry).
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Matrix("matrix has non-finite entries".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Matrix(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_factor(k: usize, c: f64) -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { c })
    }

    #[test]
    fn identity() {
        let e = sym_eigen(&DMatrix::identity(3, 3)).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn one_factor_spectrum() {
        for k in [4usize, 7, 30] {
            let c = 0.26;
            let e = sym_eigen(&one_factor(k, c)).unwrap();
            assert!((e.values[0] - (1.0 + (k as f64 - 1.0) * c)).abs() < 1e-10);
            for v in &e.values[1..] {
                assert!((v - (1.0 - c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reconstruction_of_random_matrix() {
        // Fixed pseudo-random entries from a linear congruential sequence.
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(10, 10, |_, _| next());
        let m = &a + a.transpose();
        let e = sym_eigen(&m).unwrap();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.values.clone()));
        let rebuilt = &e.vectors * lambda * e.vectors.transpose();
        assert!((&rebuilt - &m).norm() < 1e-8 * m.norm());
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(10, 10)).amax() < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 2)] = 0.5;
        assert!(matches!(sym_eigen(&m), Err(Error::Matrix(_))));
    }
}
