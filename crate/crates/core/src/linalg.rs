//! Dense matrices over a [`FieldTower`] with Gaussian elimination.

use crate::finite_field::{FieldElem, FieldTower};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FqMatrix {
    rows: usize,
    cols: usize,
    data: Vec<FieldElem>,
}

impl FqMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FqMatrix { rows, cols, data: vec![FieldElem::ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, FieldElem::ONE);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<FieldElem>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        FqMatrix { rows: rows.len(), cols, data: rows.concat() }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<FieldElem>]) -> Self {
        Self::from_rows(cols).transpose()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> FieldElem {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: FieldElem) {
        self.data[i * self.cols + j] = x;
    }

    pub fn row(&self, i: usize) -> &[FieldElem] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<FieldElem> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<FieldElem>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let rows: Vec<Vec<FieldElem>> = idx.iter().map(|&i| self.row(i).to_vec()).collect();
        FqMatrix { rows: idx.len(), cols: self.cols, data: rows.concat() }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (k, &j) in idx.iter().enumerate() {
                m.set(i, k, self.get(i, j));
            }
        }
        m
    }

    pub fn mul(&self, f: &FieldTower, other: &FqMatrix) -> FqMatrix {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let cur = out.get(i, j);
                    out.set(i, j, f.add(cur, f.mul(a, other.get(k, j))));
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, f: &FieldTower, v: &[FieldElem]) -> Vec<FieldElem> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| dot(f, self.row(i), v))
            .collect()
    }

    /// `xᵀ M` for a row vector `x`.
    pub fn vec_mul(&self, f: &FieldTower, x: &[FieldElem]) -> Vec<FieldElem> {
        assert_eq!(self.rows, x.len(), "vector-matrix dimension mismatch");
        (0..self.cols)
            .map(|j| {
                x.iter()
                    .enumerate()
                    .fold(FieldElem::ZERO, |acc, (i, &xi)| f.add(acc, f.mul(xi, self.get(i, j))))
            })
            .collect()
    }

    pub fn add(&self, f: &FieldTower, other: &FqMatrix) -> FqMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        FqMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f.add(a, b)).collect(),
        }
    }

    /// Reduced row echelon form and pivot columns.
    pub fn rref(&self, f: &FieldTower) -> (FqMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| !m.get(i, c).is_zero()) else {
                continue;
            };
            m.swap_rows(r, p);
            let inv = f.inv(m.get(r, c)).expect("pivot is nonzero");
            for j in c..m.cols {
                let x = m.get(r, j);
                m.set(r, j, f.mul(x, inv));
            }
            for i in 0..m.rows {
                if i == r {
                    continue;
                }
                let factor = m.get(i, c);
                if factor.is_zero() {
                    continue;
                }
                for j in c..m.cols {
                    let x = f.sub(m.get(i, j), f.mul(factor, m.get(r, j)));
                    m.set(i, j, x);
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    pub fn rank(&self, f: &FieldTower) -> usize {
        self.rref(f).1.len()
    }

    pub fn determinant_is_nonzero(&self, f: &FieldTower) -> bool {
        self.rows == self.cols && self.rank(f) == self.rows
    }

    pub fn inverse(&self, f: &FieldTower) -> Option<FqMatrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut aug = Self::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug.set(i, j, self.get(i, j));
            }
            aug.set(i, n + i, FieldElem::ONE);
        }
        let (r, pivots) = aug.rref(f);
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        Some(r.select_columns(&(n..2 * n).collect::<Vec<_>>()))
    }

    /// Basis of the right null space `{x : M x = 0}`.
    pub fn kernel(&self, f: &FieldTower) -> Vec<Vec<FieldElem>> {
        let (r, pivots) = self.rref(f);
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        free.iter()
            .map(|&fc| {
                let mut x = vec![FieldElem::ZERO; self.cols];
                x[fc] = FieldElem::ONE;
                for (row, &pc) in pivots.iter().enumerate() {
                    x[pc] = f.neg(r.get(row, fc));
                }
                x
            })
            .collect()
    }

    /// Some solution of `M x = b` (free variables set to zero).
    pub fn solve(&self, f: &FieldTower, b: &[FieldElem]) -> Option<Vec<FieldElem>> {
        assert_eq!(b.len(), self.rows);
        let mut aug = Self::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.get(i, j));
            }
            aug.set(i, self.cols, b[i]);
        }
        let (r, pivots) = aug.rref(f);
        if pivots.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![FieldElem::ZERO; self.cols];
        for (row, &pc) in pivots.iter().enumerate() {
            x[pc] = r.get(row, self.cols);
        }
        Some(x)
    }
}

pub fn dot(f: &FieldTower, a: &[FieldElem], b: &[FieldElem]) -> FieldElem {
    a.iter()
        .zip(b)
        .fold(FieldElem::ZERO, |acc, (&x, &y)| f.add(acc, f.mul(x, y)))
}

pub fn vec_add(f: &FieldTower, a: &[FieldElem], b: &[FieldElem]) -> Vec<FieldElem> {
    a.iter().zip(b).map(|(&x, &y)| f.add(x, y)).collect()
}

pub fn vec_scale(f: &FieldTower, c: FieldElem, a: &[FieldElem]) -> Vec<FieldElem> {
    a.iter().map(|&x| f.mul(c, x)).collect()
}

pub fn vec_neg(f: &FieldTower, a: &[FieldElem]) -> Vec<FieldElem> {
    a.iter().map(|&x| f.neg(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(x: u128) -> FieldElem {
        FieldElem::from_index(x)
    }

    #[test]
    fn inverse_round_trip_over_f4() {
        let f = FieldTower::build(2, 1).unwrap();
        let m = FqMatrix::from_rows(&[vec![e(1), e(2)], vec![e(2), e(1)]]);
        let inv = m.inverse(&f).unwrap();
        assert_eq!(m.mul(&f, &inv), FqMatrix::identity(2));
        let singular = FqMatrix::from_rows(&[vec![e(1), e(2)], vec![e(2), f.mul(e(2), e(2))]]);
        assert!(singular.inverse(&f).is_none());
        assert_eq!(singular.rank(&f), 1);
    }

    #[test]
    fn kernel_and_solve_over_f3() {
        let f = FieldTower::build(3, 0).unwrap();
        let m = FqMatrix::from_rows(&[vec![e(1), e(1), e(0)], vec![e(0), e(1), e(2)]]);
        let ker = m.kernel(&f);
        assert_eq!(ker.len(), 1);
        assert!(m.mul_vec(&f, &ker[0]).iter().all(|x| x.is_zero()));
        let b = vec![e(2), e(1)];
        let x = m.solve(&f, &b).unwrap();
        assert_eq!(m.mul_vec(&f, &x), b);
        let inconsistent = FqMatrix::from_rows(&[vec![e(1), e(1)], vec![e(1), e(1)]]);
        assert!(inconsistent.solve(&f, &[e(0), e(1)]).is_none());
    }

    #[test]
    fn vec_mul_is_transpose_product() {
        let f = FieldTower::build(2, 2).unwrap();
        let m = FqMatrix::from_rows(&[vec![e(5), e(7), e(1)], vec![e(9), e(2), e(15)]]);
        let x = vec![e(3), e(11)];
        assert_eq!(m.vec_mul(&f, &x), m.transpose().mul_vec(&f, &x));
    }
}
