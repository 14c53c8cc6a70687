//! 2D plane resampling with half-pixel-center alignment.
//!
//! Output pixel `k` maps to input coordinate `(k + 0.5) * in / out - 0.5`,
//! clamped to the valid range. Bilinear is used for intensities, nearest for
//! labels.

use super::{FPlane, LabelPlane, VolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    Bilinear,
    Nearest,
}

#[inline]
pub(crate) fn src_coord(k: usize, in_len: usize, out_len: usize) -> f64 {
    let c = (k as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    c.clamp(0.0, (in_len - 1) as f64)
}

#[inline]
pub(crate) fn nearest_index(k: usize, in_len: usize, out_len: usize) -> usize {
    // Round half up; clamp keeps the result in range.
    (src_coord(k, in_len, out_len) + 0.5).floor() as usize
}

/// Resample an intensity plane to `out_y` x `out_x`.
pub fn resample_plane(
    plane: &FPlane,
    out_y: usize,
    out_x: usize,
    mode: ResampleMode,
) -> Result<FPlane, VolError> {
    if out_y == 0 || out_x == 0 {
        return Err(VolError::ZeroOutputDims);
    }
    if out_y == plane.h && out_x == plane.w {
        return Ok(plane.clone());
    }
    let mut values = vec![0.0f32; out_y * out_x];
    match mode {
        ResampleMode::Nearest => {
            let xs: Vec<usize> = (0..out_x).map(|x| nearest_index(x, plane.w, out_x)).collect();
            for oy in 0..out_y {
                let sy = nearest_index(oy, plane.h, out_y);
                let row = &mut values[oy * out_x..(oy + 1) * out_x];
                for (ox, v) in row.iter_mut().enumerate() {
                    *v = plane.at(sy, xs[ox]);
                }
            }
        }
        ResampleMode::Bilinear => {
            // Precompute x-axis weights once per output row sweep.
            let xw: Vec<(usize, usize, f64)> = (0..out_x)
                .map(|x| {
                    let c = src_coord(x, plane.w, out_x);
                    let x0 = c.floor() as usize;
                    let x1 = (x0 + 1).min(plane.w - 1);
                    (x0, x1, c - x0 as f64)
                })
                .collect();
            for oy in 0..out_y {
                let c = src_coord(oy, plane.h, out_y);
                let y0 = c.floor() as usize;
                let y1 = (y0 + 1).min(plane.h - 1);
                let fy = c - y0 as f64;
                let row = &mut values[oy * out_x..(oy + 1) * out_x];
                for (ox, v) in row.iter_mut().enumerate() {
                    let (x0, x1, fx) = xw[ox];
                    let v00 = plane.at(y0, x0) as f64;
                    let v01 = plane.at(y0, x1) as f64;
                    let v10 = plane.at(y1, x0) as f64;
                    let v11 = plane.at(y1, x1) as f64;
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    *v = (top + (bot - top) * fy) as f32;
                }
            }
        }
    }
    Ok(FPlane {
        h: out_y,
        w: out_x,
        values,
    })
}

/// Resample a label plane (always nearest-neighbor so labels are never
/// interpolated).
pub fn resample_labels(
    plane: &LabelPlane,
    out_y: usize,
    out_x: usize,
) -> Result<LabelPlane, VolError> {
    if out_y == 0 || out_x == 0 {
        return Err(VolError::ZeroOutputDims);
    }
    let xs: Vec<usize> = (0..out_x).map(|x| nearest_index(x, plane.w, out_x)).collect();
    let mut values = vec![0u8; out_y * out_x];
    for oy in 0..out_y {
        let sy = nearest_index(oy, plane.h, out_y);
        let row = &mut values[oy * out_x..(oy + 1) * out_x];
        for (ox, v) in row.iter_mut().enumerate() {
            *v = plane.at(sy, xs[ox]);
        }
    }
    Ok(LabelPlane {
        h: out_y,
        w: out_x,
        values,
    })
}
