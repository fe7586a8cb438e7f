use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use super::HermitianMatrix;

#[derive(Debug, Clone)]
pub struct RankFactor {
    pub rank: usize,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvector of the largest eigenvalue, phased so its first
    /// nonzero component is real and positive.
    pub leading: Vec<Complex64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue} against max {max_eigenvalue}")]
pub struct NotPsd {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Numeric rank (eigenvalues above `rank_tol * lambda_max`) and leading eigenpair.
pub fn rank_and_factor(w: &HermitianMatrix, rank_tol: f64) -> Result<RankFactor, NotPsd> {
    let n = w.dim();
    if n == 0 {
        return Ok(RankFactor { rank: 0, eigenvalues: vec![], leading: vec![] });
    }
    let eig = SymmetricEigen::new(w.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let lmax = eigenvalues[0];
    let lmin = eigenvalues[n - 1];
    if lmin < -1e-6 * lmax.abs().max(f64::MIN_POSITIVE) {
        return Err(NotPsd { min_eigenvalue: lmin, max_eigenvalue: lmax });
    }
    let rank = if lmax <= 0.0 {
        0
    } else {
        eigenvalues.iter().filter(|&&l| l > rank_tol * lmax).count()
    };
    let col = eig.eigenvectors.column(order[0]);
    let mut leading: Vec<Complex64> = col.iter().copied().collect();
    let norm = leading.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = 1e-12 * norm;
    if let Some(first) = leading.iter().find(|z| z.norm() > scale).copied() {
        let phase = first.conj() / first.norm();
        for z in &mut leading {
            *z *= phase / norm;
        }
    }
    Ok(RankFactor { rank, eigenvalues, leading })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn outer_product_is_rank_one_and_recovers_vector() {
        let v = [Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, FRAC_PI_4)];
        let f = rank_and_factor(&HermitianMatrix::outer(&v), 1e-5).unwrap();
        assert_eq!(f.rank, 1);
        let scale = f.eigenvalues[0].sqrt();
        for (a, b) in f.leading.iter().zip(v.iter()) {
            assert!((a * scale - b).norm() < 1e-9);
        }
    }

    #[test]
    fn identity_is_full_rank() {
        assert_eq!(rank_and_factor(&HermitianMatrix::identity(2), 1e-5).unwrap().rank, 2);
    }

    #[test]
    fn small_orthogonal_component_still_counts() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = [Complex64::new(s, 0.0), Complex64::new(s, 0.0)];
        let u = [Complex64::new(s, 0.0), Complex64::new(-s, 0.0)];
        let w = HermitianMatrix::outer(&v).scale(0.999).add(&HermitianMatrix::outer(&u).scale(0.001));
        assert_eq!(rank_and_factor(&w, 1e-5).unwrap().rank, 2);
    }

    #[test]
    fn rejects_indefinite() {
        let w = HermitianMatrix::from_upper_fn(2, |i, k| if i == k { Complex64::new(1.0, 0.0) } else { Complex64::new(2.0, 0.0) });
        assert!(rank_and_factor(&w, 1e-5).is_err());
    }
}
