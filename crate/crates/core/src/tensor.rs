//! Dense row-major matrices and the floating point types the engine runs on.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use ndarray::{s, Array1, ArrayView2, Axis};

/// Row-major matrix used for every tensor in the crate. Point sets are `N x 3`,
/// vector sets are `M x C`, scalars are `1 x 1`.
pub type Mat<T> = Array2<T>;

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Converts a matrix between element types.
pub fn cast<A: Scalar, B: Scalar>(m: &Mat<A>) -> Mat<B> {
    m.mapv(|x| B::of(x.to_f64()))
}

/// Builds an `N x 3` matrix from points.
pub fn points_to_mat<T: Scalar>(points: &[[f64; 3]]) -> Mat<T> {
    let mut m = Mat::zeros((points.len(), 3));
    for (i, p) in points.iter().enumerate() {
        for k in 0..3 {
            m[[i, k]] = T::of(p[k]);
        }
    }
    m
}

pub fn mat_to_points<T: Scalar>(m: &Mat<T>) -> Vec<[f64; 3]> {
    assert_eq!(m.ncols(), 3, "point matrix must have 3 columns");
    m.rows()
        .into_iter()
        .map(|r| [r[0].to_f64(), r[1].to_f64(), r[2].to_f64()])
        .collect()
}

/// Gathers rows by index.
pub fn gather_rows<T: Scalar>(m: &Mat<T>, idx: &[usize]) -> Mat<T> {
    let mut out = Mat::zeros((idx.len(), m.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

pub fn all_finite<T: Scalar>(m: &Mat<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}
