//! Compressed sparse column storage.
//!
//! Every kernel operation in this crate is a per-column reduction
//! (`(ρ·H)_j = Σ_i ρ_i H_ij`), so CSC is the only layout we keep.

use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds a matrix from per-column `(row, value)` lists. Duplicate rows
    /// within a column are summed; rows are sorted.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        assert!(nrows <= u32::MAX as usize, "row index overflows u32");
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let nnz: usize = columns.iter().map(Vec::len).sum();
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut col in columns {
            col.sort_by_key(|&(r, _)| r);
            let mut last: Option<usize> = None;
            for (r, v) in col {
                assert!(r < nrows, "row {r} out of range for {nrows} rows");
                if last == Some(r) {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r as u32);
                    values.push(v);
                    last = Some(r);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    /// `Σ_i x_i A_ij`.
    #[inline]
    pub fn col_dot(&self, j: usize, x: &[f64]) -> f64 {
        let (rows, vals) = self.column(j);
        rows.iter()
            .zip(vals)
            .map(|(&i, &v)| x[i as usize] * v)
            .sum()
    }

    /// Row vector times matrix: `y_j = Σ_i x_i A_ij`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|j| self.col_dot(j, x)).collect()
    }

    /// Matrix times column vector: `y_i = Σ_j A_ij x_j`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i as usize] += v * xj;
            }
        }
        y
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        match rows.binary_search(&(i as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.column(j).1.iter().sum())
            .collect()
    }

    /// Scales column `j` in place.
    pub fn scale_column(&mut self, j: usize, factor: f64) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        for v in &mut self.values[a..b] {
            *v *= factor;
        }
    }

    /// Principal submatrix over `keep` (sorted, unique indices into a square
    /// matrix). Index `k` of the result corresponds to `keep[k]`.
    pub fn principal_submatrix(&self, keep: &[usize]) -> CscMatrix {
        assert_eq!(self.nrows, self.ncols, "principal submatrix of a non-square matrix");
        let mut map = vec![u32::MAX; self.nrows];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k as u32;
        }
        let columns = keep
            .iter()
            .map(|&j| {
                let (rows, vals) = self.column(j);
                rows.iter()
                    .zip(vals)
                    .filter(|(&i, _)| map[i as usize] != u32::MAX)
                    .map(|(&i, &v)| (map[i as usize] as usize, v))
                    .collect()
            })
            .collect();
        CscMatrix::from_columns(keep.len(), columns)
    }

    /// Iterates `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            let (rows, vals) = self.column(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i as usize, j, v))
        })
    }

    /// Writes `row,col,value` lines with a header.
    pub fn write_triplets_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i},{j},{v:e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CscMatrix {
        // [[1, 0, 2],
        //  [0, 3, 0],
        //  [4, 0, 5]]
        CscMatrix::from_columns(
            3,
            vec![
                vec![(2, 4.0), (0, 1.0)],
                vec![(1, 3.0)],
                vec![(0, 1.5), (2, 5.0), (0, 0.5)],
            ],
        )
    }

    #[test]
    fn duplicates_are_summed_and_rows_sorted() {
        let m = small();
        assert_eq!(m.nnz(), 5);
        assert_eq!(m.get(0, 2), 2.0);
        assert_eq!(m.column(0).0, &[0, 2]);
    }

    #[test]
    fn products() {
        let m = small();
        assert_eq!(m.vec_mul(&[1.0, 1.0, 1.0]), vec![5.0, 3.0, 7.0]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 3.0, 9.0]);
    }

    #[test]
    fn principal_submatrix_drops_rows_and_columns() {
        let m = small();
        let s = m.principal_submatrix(&[0, 2]);
        assert_eq!(s.nrows(), 2);
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(1, 0), 4.0);
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 1), 5.0);
    }
}
