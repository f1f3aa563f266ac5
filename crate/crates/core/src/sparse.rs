//! General compressed-row sparse matrices, used for products of Laplacians.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A square compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            dim,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    fn check_dims(&self, other: &Csr) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "{}x{0} vs {}x{1}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Csr) -> Result<Csr> {
        self.check_dims(other)?;
        let n = self.dim;
        let mut acc = vec![0.0; n];
        let mut touched = vec![false; n];
        let mut cols = Vec::new();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
                touched[j] = false;
            }
            cols.clear();
            indptr.push(indices.len());
        }
        Ok(Csr {
            dim: n,
            indptr,
            indices,
            values,
        })
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Csr, beta: f64) -> Result<Csr> {
        self.check_dims(other)?;
        let rows = (0..self.dim)
            .map(|i| {
                self.row(i)
                    .map(|(c, v)| (c, alpha * v))
                    .chain(other.row(i).map(|(c, v)| (c, beta * v)))
                    .collect()
            })
            .collect();
        Ok(Csr::from_rows(self.dim, rows))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_dense(m: &[&[f64]]) -> Csr {
        let rows = m
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
            .collect();
        Csr::from_rows(m.len(), rows)
    }

    #[test]
    fn product_matches_dense() {
        let a = from_dense(&[&[1.0, 2.0, 0.0], &[0.0, 0.0, 3.0], &[4.0, 0.0, 5.0]]);
        let b = from_dense(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 2.0, 0.0]]);
        let got = a.matmul(&b).unwrap().to_dense();
        let want = a.to_dense() * b.to_dense();
        assert_eq!(got, want);
        assert_eq!(a.get(2, 2), 5.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn axpby_and_norm() {
        let a = from_dense(&[&[1.0, 2.0], &[0.0, 3.0]]);
        let b = from_dense(&[&[1.0, 0.0], &[4.0, 3.0]]);
        let d = a.axpby(1.0, &b, -1.0).unwrap();
        assert_eq!(d.to_dense(), a.to_dense() - b.to_dense());
        assert_eq!(d.frobenius_sq(), 4.0 + 16.0);
    }

    #[test]
    fn duplicates_are_summed() {
        let m = Csr::from_rows(2, vec![vec![(1, 1.0), (1, 2.0)], vec![]]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 3.0);
    }
}
