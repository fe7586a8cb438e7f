use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Dense complex Hermitian matrix.
///
/// Construction symmetrizes the input, so the stored entries always satisfy
/// `H[k, i] == conj(H[i, k])` exactly and the diagonal is real.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

impl HermitianMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    /// Projects `m` onto the Hermitian matrices: `(m + m^H) / 2`.
    pub fn from_matrix(m: DMatrix<Complex64>) -> Self {
        assert!(m.is_square(), "hermitian matrix must be square");
        let adj = m.adjoint();
        Self {
            data: (m + adj) * Complex64::new(0.5, 0.0),
        }
    }

    /// Builds from `f(i, k)` evaluated on the upper triangle (diagonal real part only).
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            data[(i, i)] = Complex64::new(f(i, i).re, 0.0);
            for k in i + 1..n {
                let v = f(i, k);
                data[(i, k)] = v;
                data[(k, i)] = v.conj();
            }
        }
        Self { data }
    }

    /// Rank-one matrix `v v^H`.
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_upper_fn(v.len(), |i, k| v[i] * v[k].conj())
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.data[(i, k)]
    }

    /// Sets entry `(i, k)` and its mirror.
    pub fn set(&mut self, i: usize, k: usize, v: Complex64) {
        if i == k {
            self.data[(i, i)] = Complex64::new(v.re, 0.0);
        } else {
            self.data[(i, k)] = v;
            self.data[(k, i)] = v.conj();
        }
    }

    /// Adds `v` to entry `(i, k)` and `conj(v)` to `(k, i)`.
    pub fn add_at(&mut self, i: usize, k: usize, v: Complex64) {
        let cur = self.get(i, k);
        self.set(i, k, cur + v);
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    /// `Tr(self * other)`; real for Hermitian arguments.
    pub fn trace_product(&self, other: &HermitianMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for k in 0..n {
                acc += (self.data[(i, k)] * other.data[(k, i)]).re;
            }
        }
        acc
    }

    /// `Tr(self * v v^H) = v^H self v`.
    pub fn quadratic_form(&self, v: &[Complex64]) -> f64 {
        let n = self.dim();
        assert_eq!(n, v.len());
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += v[i].conj() * self.data[(i, k)] * v[k];
            }
        }
        acc.re
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: &self.data * Complex64::new(s, 0.0),
        }
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        Self {
            data: &self.data + &other.data,
        }
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        let data = DMatrix::from_fn(m, m, |r, c| self.data[(idx[r], idx[c])]);
        Self { data }
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
        let n = m.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for k in 0..n {
                worst = worst.max((m[(i, k)] - m[(k, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Real symmetric `2n x 2n` embedding `[[Re, -Im], [Im, Re]]`.
    ///
    /// `Tr(A W) = Tr(embed(A) embed(W)) / 2` for Hermitian `A`, `W`.
    pub fn embed(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for k in 0..n {
                let z = self.data[(i, k)];
                out[(i, k)] = z.re;
                out[(n + i, n + k)] = z.re;
                out[(i, n + k)] = -z.im;
                out[(n + i, k)] = z.im;
            }
        }
        out
    }

    /// Inverse of [`embed`](Self::embed), averaging the redundant blocks so that
    /// any real symmetric matrix maps to the nearest Hermitian one.
    pub fn extract(m: &DMatrix<f64>) -> Self {
        let n2 = m.nrows();
        assert!(n2.is_multiple_of(2) && m.is_square(), "embedding must be 2n x 2n");
        let n = n2 / 2;
        Self::from_upper_fn(n, |i, k| {
            let re = 0.5 * (m[(i, k)] + m[(n + i, n + k)]);
            let im = 0.5 * (m[(n + i, k)] - m[(i, n + k)]);
            Complex64::new(re, im)
        })
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|i| (0..n).map(|k| [self.data[(i, k)].re, self.data[(i, k)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix rows must form a square"));
        }
        let m = DMatrix::from_fn(n, n, |i, k| Complex64::new(rows[i][k][0], rows[i][k][1]));
        if HermitianMatrix::hermitian_defect(&m) > 1e-12 * (1.0 + m.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
            return Err(serde::de::Error::custom("matrix is not hermitian"));
        }
        Ok(HermitianMatrix::from_matrix(m))
    }
}
