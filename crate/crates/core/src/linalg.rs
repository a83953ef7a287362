//! Small dense linear algebra: row-major square matrices and a cyclic Jacobi
//! eigensolver for symmetric matrices.

use crate::error::{Error, Result};
use crate::Scalar;

/// Row-major `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, data }
    }

    pub fn diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// `out = self · x`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n)) {
            *o = row.iter().zip(x).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| *v * c).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> std::ops::Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Eigenpairs sorted by ascending eigenvalue; `vectors` holds unit-norm
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: SquareMatrix<T>,
    pub sweeps: usize,
}

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi iteration. Converges when the off-diagonal Frobenius norm
/// falls below `tol · ‖A‖_F`.
pub fn jacobi_eigen<T: Scalar>(a: &SquareMatrix<T>, tol: T, max_sweeps: usize) -> Result<SymmetricEigen<T>> {
    let n = a.n();
    let scale = a.max_abs().max(T::min_positive_value());
    if !a.is_symmetric(scale * T::lit(1e-12)) {
        return Err(Error::invalid("Jacobi eigensolver needs a symmetric matrix"));
    }
    let mut m = a.clone();
    let mut v = SquareMatrix::identity(n);
    let frob = m.as_slice().iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    let off_norm = |m: &SquareMatrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let two = T::lit(2.0);
    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= tol * frob || off == T::zero() {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off.as_f64(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // A ← Jᵀ A J
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = SquareMatrix::from_fn(n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_matrix() {
        let a = SquareMatrix::from_fn(4, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 2.0 } else { 0.0 });
        let e = jacobi_eigen(&a, 1e-15, JACOBI_MAX_SWEEPS).unwrap();
        let d = SquareMatrix::diagonal(&e.values);
        let back = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
        for i in 0..4 {
            for j in 0..4 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-13);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        for i in 0..4 {
            assert!((vtv[(i, i)] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn diagonal_input_needs_no_sweeps() {
        let a = SquareMatrix::diagonal(&[3.0, 1.0, 2.0]);
        let e = jacobi_eigen(&a, 1e-14, 10).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn rejects_asymmetric_and_caps_sweeps() {
        let mut a = SquareMatrix::<f64>::identity(3);
        a[(0, 1)] = 1.0;
        assert!(jacobi_eigen(&a, 1e-14, 10).is_err());
        let b = SquareMatrix::from_fn(5, |i, j| ((i * 7 + j * 7) % 5) as f64 + (i + j) as f64);
        assert!(matches!(jacobi_eigen(&b, 1e-300, 1), Err(Error::NoConvergence { .. })));
    }
}
