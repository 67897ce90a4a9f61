use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense symmetric matrix, stored row-major in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds from rows, symmetrising as `(A + Aᵀ)/2`.
    #[allow(clippy::needless_range_loop)]
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("matrix rows must be square".into()));
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.entries[i * dim + j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] = value;
        self.entries[j * self.dim + i] = value;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.dim.max(1))
            .map(<[f64]>::to_vec)
            .take(self.dim)
            .collect()
    }

    /// Principal submatrix on the given indices.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m.entries[a * idx.len() + b] = self.get(i, j);
            }
        }
        m
    }

    /// Lower Cholesky factor, `None` unless strictly positive definite.
    pub fn cholesky(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Some(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    /// Inverse via Cholesky; fails unless positive definite.
    pub fn inverse_pd(&self) -> Result<Self> {
        let n = self.dim;
        let l = self
            .cholesky()
            .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
        let mut inv = Self::zeros(n);
        let mut col = vec![0.0; n];
        for c in 0..n {
            // L y = e_c, then Lᵀ x = y
            for i in 0..n {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= l[i * n + k] * col[k];
                }
                col[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= l[k * n + i] * col[k];
                }
                col[i] = s / l[i * n + i];
            }
            for (r, v) in col.iter().enumerate() {
                inv.entries[r * n + c] = *v;
            }
        }
        let rows = inv.rows();
        Self::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let m = SymmetricMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let inv = m.inverse_pd().unwrap();
        // det = 8
        assert!((inv.get(0, 0) - 3.0 / 8.0).abs() < 1e-14);
        assert!((inv.get(0, 1) + 2.0 / 8.0).abs() < 1e-14);
        assert!((inv.get(1, 1) - 4.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_detected() {
        let m = SymmetricMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(!m.is_positive_definite());
        assert!(m.inverse_pd().is_err());
    }

    #[test]
    fn from_rows_symmetrises() {
        let m = SymmetricMatrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 0), 2.0);
    }
}
