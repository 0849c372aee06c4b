use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::{Mat, Scalar};

/// Fixed sinusoidal embedding of 3-D points, `K x width`.
///
/// With `F = width / 6` frequencies `base * 2^k`, columns hold
/// `sin(f_k * x_a)` for every frequency and axis (frequency-major), followed
/// by the matching cosines in the same order.
pub fn positional_embed<T: Scalar>(points: &[Point3], width: usize, base: f64) -> Result<Mat<T>> {
    if width == 0 || !width.is_multiple_of(6) {
        return Err(Error::config("pe_width", format!("{width} is not a positive multiple of 6")));
    }
    let freqs = width / 6;
    let half = width / 2;
    let mut out = Mat::zeros((points.len(), width));
    for (r, p) in points.iter().enumerate() {
        let mut f = base;
        for k in 0..freqs {
            for a in 0..3 {
                let (s, c) = (f * p[a]).sin_cos();
                out[[r, 3 * k + a]] = T::of(s);
                out[[r, half + 3 * k + a]] = T::of(c);
            }
            f *= 2.0;
        }
    }
    Ok(out)
}
