//! Small dense complex matrices and vector helpers.

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::scalar::{cast, Scalar};
use crate::{Error, Result};

pub type CVec<T> = Vec<Complex<T>>;

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[CVec<T>]) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::Shape(format!("column of length {} in a {rows}-row matrix", bad.len())));
        }
        Ok(Self::from_fn(rows, columns.len(), |r, c| columns[c][r]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> CVec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// `a*self + b*other`, shapes must agree.
    pub fn lin_comb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x * a + y * b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[Complex<T>]) -> CVec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).fold(Complex::zero(), |acc, (a, b)| acc + a * b))
            .collect()
    }

    /// `selfᴴ * v`.
    pub fn herm_mul_vec(&self, v: &[Complex<T>]) -> CVec<T> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![Complex::zero(); self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * vr;
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", self.shape(), other.shape())));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a.is_zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        Ok(out)
    }

    pub fn herm(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn cast<U: Scalar>(&self) -> CMat<U> {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| Complex::new(cast(x.re), cast(x.im))).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max)
    }

    /// Largest singular value via power iteration on `selfᴴ self`.
    pub fn spectral_norm(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        // Start from the row-sum direction plus a ramp so a zero start vector is unlikely.
        let mut v: CVec<T> = (0..self.cols)
            .map(|c| {
                let s = (0..self.rows).fold(Complex::<T>::zero(), |acc, r| acc + self[(r, c)].conj());
                s + Complex::new(T::lit(1e-3 * (1.0 + c as f64)), T::zero())
            })
            .collect();
        let mut lambda = T::zero();
        for _ in 0..2000 {
            let nv = norm(&v);
            if nv == T::zero() {
                return T::zero();
            }
            v.iter_mut().for_each(|x| *x = *x / nv);
            let u = self.mul_vec(&v);
            let next = self.herm_mul_vec(&u);
            let new_lambda = norm_sq(&u);
            let converged = (new_lambda - lambda).abs() <= T::lit(1e-13) * new_lambda;
            lambda = new_lambda;
            v = next;
            if converged {
                break;
            }
        }
        lambda.sqrt()
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.cols + c]
    }
}

/// `aᴴ b`.
#[inline]
pub fn dot_h<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * y)
}

#[inline]
pub fn norm_sq<T: Scalar>(v: &[Complex<T>]) -> T {
    v.iter().map(|x| x.norm_sqr()).sum()
}

#[inline]
pub fn norm<T: Scalar>(v: &[Complex<T>]) -> T {
    norm_sq(v).sqrt()
}

pub fn cast_vec<A: Scalar, B: Scalar>(v: &[Complex<A>]) -> CVec<B> {
    v.iter().map(|x| Complex::new(cast(x.re), cast(x.im))).collect()
}

/// Largest entry magnitude, `‖v‖_max`.
pub fn max_abs<T: Scalar>(v: &[Complex<T>]) -> T {
    v.iter().map(|x| x.norm()).fold(T::zero(), T::max)
}

/// Cosine similarity `|aᴴb| / (‖a‖‖b‖)`.
pub fn cosine_similarity<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> T {
    dot_h(a, b).norm() / (norm(a) * norm(b))
}
