//! Row-major dense complex matrices.
//!
//! Used for the master-equation oracle and for dense realizations of the
//! matrix-free operators, which the tests compare against.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Diagonal matrix from real entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `|a><b|`.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |r, c| a[r] * b[c].conj())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let src = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[r * n..(r + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.dim, v.len());
        (0..self.dim)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self * other - other * self`
    pub fn commutator(&self, other: &Self) -> Self {
        let mut ab = self.matmul(other);
        let ba = other.matmul(self);
        for (x, y) in ab.data.iter_mut().zip(&ba.data) {
            *x -= y;
        }
        ab
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self[(k, k)]).sum()
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_scaled(&mut self, s: C64, other: &Self) {
        assert_eq!(self.dim, other.dim);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Deviation from Hermiticity, `max |A - A^dagger|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let n = self.dim;
        let m = DMatrix::from_fn(n, n, |r, c| 0.5 * (self[(r, c)] + self[(c, r)].conj()));
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_commutator() {
        let x = DenseMatrix::from_fn(2, |r, c| if r != c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let z = DenseMatrix::diagonal(&[1.0, -1.0]);
        // [X, Z] = -2iY, Y = [[0, -i], [i, 0]]
        let comm = x.commutator(&z);
        assert_eq!(comm[(0, 1)], C64::new(-2.0, 0.0));
        assert_eq!(comm[(1, 0)], C64::new(2.0, 0.0));
        assert_eq!(z.hermitian_eigenvalues(), vec![-1.0, 1.0]);
    }
}
