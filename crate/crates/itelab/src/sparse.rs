//! Compressed-row storage used for nodal matrices and residual checks.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T> Csr<T>
where
    T: Copy + Add<Output = T> + Default,
{
    /// Sums duplicate entries; column order within a row is ascending.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); n_rows];
        for &(i, j, v) in triplets {
            let e = rows[i].entry(j).or_default();
            *e = *e + v;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (j, v) in r {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let slice = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match slice.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => T::default(),
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, &t)
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Csr<U> {
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Csr<T>
where
    T: Copy + Into<C64>,
{
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n_cols, "dimension mismatch in mat-vec");
        (0..self.n_rows)
            .map(|i| {
                let mut s = C64::new(0.0, 0.0);
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[k].into() * x[self.col_idx[k]];
                }
                s
            })
            .collect()
    }

    /// Sesquilinear pairing `Σ conj(y_i) A_ij x_j`.
    pub fn form(&self, x: &[C64], y: &[C64]) -> C64 {
        let ax = self.mul_vec(x);
        y.iter().zip(&ax).map(|(a, b)| a.conj() * b).sum()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.n_cols];
        for k in 0..self.values.len() {
            cols[self.col_idx[k]] += self.values[k].into().norm();
        }
        cols.into_iter().fold(0.0, f64::max)
    }
}

impl Csr<f64> {
    pub fn mul_real(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }
}

/// Linear combination `Σ c_k A_k` of matrices sharing no assumption on pattern.
pub fn combine<T, U>(n: usize, parts: &[(U, &Csr<T>)]) -> Csr<C64>
where
    T: Copy + Into<C64> + Add<Output = T> + Default,
    U: Copy + Into<C64>,
{
    let mut trip = Vec::new();
    for (c, a) in parts {
        let c: C64 = (*c).into();
        for (i, j, v) in a.triplets() {
            trip.push((i, j, c * v.into()));
        }
    }
    Csr::from_triplets(n, n, &trip)
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Copy + Mul<C64, Output = C64>>(alpha: T, x: &[C64]) -> Vec<C64> {
    x.iter().map(|&v| alpha * v).collect()
}

pub fn to_complex(x: &[f64]) -> Vec<C64> {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_summed_and_sorted() {
        let a = Csr::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)]);
        assert_eq!(a.get(0, 2), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.col_idx, vec![0, 2, 1]);
        let y = a.mul_vec(&to_complex(&[1.0, 2.0, 3.0]));
        assert_eq!(y, vec![C64::new(14.0, 0.0), C64::new(-2.0, 0.0)]);
        assert_eq!(a.transpose().get(2, 0), 4.0);
        assert_eq!(a.norm1(), 4.0);
    }
}
