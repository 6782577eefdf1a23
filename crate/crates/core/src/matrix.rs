use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Dense square matrix, row-major. Serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        Self::try_from(rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .expect("rows must form a square matrix")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(k, &x)| (k / self.dim, k % self.dim, x))
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| v[i] * self[(i, j)]).sum())
            .collect()
    }

    /// Matrix exponential by scaling and squaring with a Taylor kernel.
    ///
    /// Intended for the small generators of mean-flow oracles; accurate to
    /// near machine precision when the norm after scaling is below 1/2.
    pub fn expm(&self) -> Matrix {
        let norm = (0..self.dim)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut squarings = 0;
        let mut scale = 1.0;
        while norm * scale > 0.5 {
            scale *= 0.5;
            squarings += 1;
        }
        let a = self.scaled(scale);
        let mut term = Matrix::identity(self.dim);
        let mut sum = Matrix::identity(self.dim);
        for k in 1..=20 {
            term = term.mul(&a).scaled(1.0 / k as f64);
            for (s, t) in sum.data.iter_mut().zip(&term.data) {
                *s += t;
            }
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        sum
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(format!(
                    "row {i} has {} entries, expected {dim} (matrix must be square)",
                    row.len()
                ));
            }
            data.extend(row);
        }
        Ok(Matrix { dim, data })
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.dim.max(1)).map(|r| r.to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_of_diagonal_and_nilpotent() {
        let d = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, -2.0]]).expm();
        assert_relative_eq!(d[(0, 0)], 1f64.exp(), max_relative = 1e-13);
        assert_relative_eq!(d[(1, 1)], (-2f64).exp(), max_relative = 1e-13);
        // exp([[0, t], [0, 0]]) = [[1, t], [0, 1]]
        let n = Matrix::from_rows(&[&[0.0, 3.0], &[0.0, 0.0]]).expm();
        assert_relative_eq!(n[(0, 1)], 3.0, max_relative = 1e-13);
        assert_relative_eq!(n[(0, 0)], 1.0, max_relative = 1e-13);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Matrix::try_from(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        let m: Matrix = serde_json::from_str("[[1,2],[3,4]]").unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(serde_json::to_string(&m).unwrap(), "[[1.0,2.0],[3.0,4.0]]");
    }
}
