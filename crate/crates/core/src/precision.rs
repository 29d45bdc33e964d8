//! Scalar types the simulation layer is generic over.
//!
//! Unstable plants drive the absolute state to magnitudes where float64 can no
//! longer resolve the O(1) estimation errors, so trajectories and filters can
//! run in double-double arithmetic instead.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use twofloat::TwoFloat as DoubleDouble;

/// Real scalar usable in nalgebra containers and the simulators.
pub trait Real:
    nalgebra::Scalar
    + Copy
    + Send
    + Sync
    + Debug
    + PartialOrd
    + num_traits::Num
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Quotient accurate to the working precision.
    fn quot(self, rhs: Self) -> Self {
        self / rhs
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for DoubleDouble {
    #[inline]
    fn from_f64(x: f64) -> Self {
        DoubleDouble::from_f64(x)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }

    /// twofloat's double-double by double-double division is only f64-accurate;
    /// one residual correction restores full precision.
    #[inline]
    fn quot(self, rhs: Self) -> Self {
        let q = self / rhs;
        let r = self - q * rhs;
        q + r / rhs.hi()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F64,
    #[default]
    DoubleDouble,
}

pub fn cast_matrix<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::from_f64)
}

pub fn cast_vector<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(T::from_f64)
}

pub fn to_f64_vector<T: Real>(v: &DVector<T>) -> DVector<f64> {
    v.map(|x| x.to_f64())
}

pub fn to_f64_matrix<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|x| x.to_f64())
}

/// Squared Euclidean norm accumulated in `T`, reported in f64.
pub fn norm_sq<T: Real>(v: &DVector<T>) -> f64 {
    let mut acc = T::zero();
    for &x in v.iter() {
        acc += x * x;
    }
    acc.to_f64()
}

/// Squared distance `|a - b|^2`, with the difference taken in `T`.
pub fn dist_sq<T: Real>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc.to_f64()
}

/// Dense `m * v` without the temporaries nalgebra's generic path allocates.
pub fn matvec<T: Real>(m: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
    let (rows, cols) = m.shape();
    debug_assert_eq!(cols, v.len());
    let mut out = DVector::from_element(rows, T::zero());
    for j in 0..cols {
        let vj = v[j];
        for i in 0..rows {
            out[i] += m[(i, j)] * vj;
        }
    }
    out
}
