//! Image normalization ahead of the network: body-region cropping via
//! thresholding and morphological operations, rescaling to a square working
//! resolution, and Hounsfield windowing to [0, 1].

use thiserror::Error;

use crate::volgrid::resample::{resample_labels, resample_plane};
use crate::volgrid::{
    Dims3, FPlane, HuPlane, LabelPlane, LabelVolume, ResampleMode, Slice2, VolError, Volume3,
};

/// Intensity window lower bound in HU.
pub const WINDOW_LO_HU: f64 = -1024.0;
/// Intensity window upper bound in HU.
pub const WINDOW_HI_HU: f64 = 600.0;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("crop box out of bounds for plane {h}x{w}: {bx:?}")]
    BoxOutOfBounds { h: usize, w: usize, bx: CropBox },
    #[error(transparent)]
    Vol(#[from] VolError),
}

/// In-plane crop bounds, inclusive-exclusive, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CropBox {
    pub fn full_frame(dims: Dims3) -> Self {
        Self {
            y0: 0,
            y1: dims.y,
            x0: 0,
            x1: dims.x,
        }
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    fn check(&self, h: usize, w: usize) -> Result<(), PreprocessError> {
        if self.y0 < self.y1 && self.y1 <= h && self.x0 < self.x1 && self.x1 <= w {
            Ok(())
        } else {
            Err(PreprocessError::BoxOutOfBounds { h, w, bx: *self })
        }
    }
}

/// Tunable parameters of the body-region crop. The thresholding-and-
/// morphology technique is fixed; these values are declared defaults.
#[derive(Debug, Clone, Copy)]
pub struct BodyBoxParams {
    pub body_threshold_hu: i16,
    pub closing_radius: usize,
    pub box_pad: usize,
}

impl Default for BodyBoxParams {
    fn default() -> Self {
        Self {
            body_threshold_hu: -500,
            closing_radius: 3,
            box_pad: 5,
        }
    }
}

/// Map raw HU to [0, 1]: clamp((v + 1024) / 1624, 0, 1).
pub fn hu_normalize(plane: &FPlane) -> Slice2 {
    let span = (WINDOW_HI_HU - WINDOW_LO_HU) as f32;
    let values = plane
        .values
        .iter()
        .map(|&v| ((v - WINDOW_LO_HU as f32) / span).clamp(0.0, 1.0))
        .collect();
    Slice2::new(plane.h, plane.w, values).expect("dims preserved")
}

/// Disk structuring-element offsets for a given radius (squared-distance
/// disk, dy^2 + dx^2 <= r^2).
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn dilate2d(mask: &[bool], h: usize, w: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[y as usize * w + x as usize] {
                continue;
            }
            for &(dy, dx) in se {
                let (ny, nx) = (y + dy, x + dx);
                if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

fn erode2d(mask: &[bool], h: usize, w: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; h * w];
    'pixel: for idx in 0..h * w {
        let (y, x) = ((idx / w) as isize, (idx % w) as isize);
        for &(dy, dx) in se {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || ny >= h as isize || nx < 0 || nx >= w as isize {
                continue 'pixel;
            }
            if !mask[ny as usize * w + nx as usize] {
                continue 'pixel;
            }
        }
        out[idx] = true;
    }
    out
}

pub(crate) fn closing2d(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let se = disk_offsets(radius);
    erode2d(&dilate2d(mask, h, w, &se), h, w, &se)
}

/// Bounding box (y0, y1, x0, x1) of the largest 4-connected component, or
/// None for an all-false mask. Ties break on the component found first in
/// scan order.
fn largest_component_bbox(
    mask: &[bool],
    h: usize,
    w: usize,
) -> Option<(usize, usize, usize, usize)> {
    let mut visited = vec![false; h * w];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut queue = Vec::new();
    for start in 0..h * w {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push(start);
        let mut size = 0usize;
        let (mut y0, mut y1, mut x0, mut x1) = (h, 0usize, w, 0usize);
        while let Some(idx) = queue.pop() {
            size += 1;
            let (y, x) = (idx / w, idx % w);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
            x0 = x0.min(x);
            x1 = x1.max(x + 1);
            let mut push = |ny: usize, nx: usize, queue: &mut Vec<usize>| {
                let nidx = ny * w + nx;
                if mask[nidx] && !visited[nidx] {
                    visited[nidx] = true;
                    queue.push(nidx);
                }
            };
            if y > 0 {
                push(y - 1, x, &mut queue);
            }
            if y + 1 < h {
                push(y + 1, x, &mut queue);
            }
            if x > 0 {
                push(y, x - 1, &mut queue);
            }
            if x + 1 < w {
                push(y, x + 1, &mut queue);
            }
        }
        if best.map_or(true, |(bs, _)| size > bs) {
            best = Some((size, (y0, y1, x0, x1)));
        }
    }
    best.map(|(_, bbox)| bbox)
}

/// Find the in-plane body bounding box: per slice, threshold, close, take
/// the largest 4-connected component's box; union over all slices; pad and
/// clip. Returns the box plus a warning flag that is true when no voxel
/// exceeded the threshold anywhere (full-frame fallback).
pub fn find_body_box(v: &Volume3, params: &BodyBoxParams) -> (CropBox, bool) {
    let d = v.dims();
    let (h, w) = (d.y, d.x);
    let mut union: Option<(usize, usize, usize, usize)> = None;
    for z in 0..d.z {
        let plane = v.extract_slice(z).expect("z in range");
        let mask: Vec<bool> = plane
            .values
            .iter()
            .map(|&hu| hu > params.body_threshold_hu)
            .collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let closed = closing2d(&mask, h, w, params.closing_radius);
        if let Some((y0, y1, x0, x1)) = largest_component_bbox(&closed, h, w) {
            union = Some(match union {
                None => (y0, y1, x0, x1),
                Some((uy0, uy1, ux0, ux1)) => {
                    (uy0.min(y0), uy1.max(y1), ux0.min(x0), ux1.max(x1))
                }
            });
        }
    }
    match union {
        None => (CropBox::full_frame(d), true),
        Some((y0, y1, x0, x1)) => (
            CropBox {
                y0: y0.saturating_sub(params.box_pad),
                y1: (y1 + params.box_pad).min(h),
                x0: x0.saturating_sub(params.box_pad),
                x1: (x1 + params.box_pad).min(w),
            },
            false,
        ),
    }
}

fn crop_hu(plane: &HuPlane, bx: &CropBox) -> Result<FPlane, PreprocessError> {
    bx.check(plane.h, plane.w)?;
    let mut values = Vec::with_capacity(bx.height() * bx.width());
    for y in bx.y0..bx.y1 {
        for x in bx.x0..bx.x1 {
            values.push(plane.at(y, x) as f32);
        }
    }
    Ok(FPlane {
        h: bx.height(),
        w: bx.width(),
        values,
    })
}

fn crop_labels(plane: &LabelPlane, bx: &CropBox) -> Result<LabelPlane, PreprocessError> {
    bx.check(plane.h, plane.w)?;
    let mut values = Vec::with_capacity(bx.height() * bx.width());
    for y in bx.y0..bx.y1 {
        for x in bx.x0..bx.x1 {
            values.push(plane.at(y, x));
        }
    }
    Ok(LabelPlane {
        h: bx.height(),
        w: bx.width(),
        values,
    })
}

/// Full per-slice chain: crop to the body box, bilinear-resample to
/// `target` x `target`, then window HU to [0, 1].
pub fn preprocess_slice(
    v: &Volume3,
    z: usize,
    bx: &CropBox,
    target: usize,
) -> Result<Slice2, PreprocessError> {
    let plane = v.extract_slice(z)?;
    let cropped = crop_hu(&plane, bx)?;
    let resampled = resample_plane(&cropped, target, target, ResampleMode::Bilinear)?;
    Ok(hu_normalize(&resampled))
}

/// Label-plane counterpart of [`preprocess_slice`]: crop then
/// nearest-neighbor resample (labels are never interpolated).
pub fn preprocess_label_slice(
    m: &LabelVolume,
    z: usize,
    bx: &CropBox,
    target: usize,
) -> Result<LabelPlane, PreprocessError> {
    let plane = m.extract_slice(z)?;
    let cropped = crop_labels(&plane, bx)?;
    Ok(resample_labels(&cropped, target, target)?)
}
