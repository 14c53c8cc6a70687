//! Mask reconstruction at native resolution and cleanup: nearest-neighbor
//! paste-back of per-slice predictions, largest-component filtering with
//! cavity filling, and the dense-area removal variant (thresholding the
//! -50 < HU < 70 band inside the mask plus morphological operations).

use thiserror::Error;

use crate::preprocess::CropBox;
use crate::volgrid::resample::resample_labels;
use crate::volgrid::{
    Dims3, LabelPlane, LabelVolume, Spacing3, VolError, Volume3, LABEL_LEFT_LUNG,
    LABEL_RIGHT_LUNG,
};

/// Dense-tissue band removed by [`remove_dense_areas`]: -50 < HU < 70.
pub const DENSE_LO_HU: i16 = -50;
pub const DENSE_HI_HU: i16 = 70;

/// Morphological radii applied to the removal region, in voxel units:
/// opening spares single-voxel vessel cross-sections, closing consolidates
/// slab-like effusions.
pub const DENSE_OPEN_RADIUS: usize = 1;
pub const DENSE_CLOSE_RADIUS: usize = 2;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("plane count {found} does not match dims.z {expected}")]
    PlaneCountMismatch { expected: usize, found: usize },
    #[error("grid mismatch between mask and volume")]
    GridMismatch,
    #[error(transparent)]
    Vol(#[from] VolError),
}

/// Paste per-slice 2D label predictions back into the native frame:
/// nearest-neighbor resize each plane to the crop box size, then write it
/// at the box offset inside a zeroed full frame.
pub fn reassemble_mask(
    pred_planes: &[LabelPlane],
    bx: &CropBox,
    dims: Dims3,
    spacing: Spacing3,
) -> Result<LabelVolume, PostprocessError> {
    if pred_planes.len() != dims.z {
        return Err(PostprocessError::PlaneCountMismatch {
            expected: dims.z,
            found: pred_planes.len(),
        });
    }
    let mut labels = vec![0u8; dims.count()];
    for (z, plane) in pred_planes.iter().enumerate() {
        let resized = resample_labels(plane, bx.height(), bx.width())?;
        for y in 0..resized.h {
            for x in 0..resized.w {
                labels[dims.index(z, y + bx.y0, x + bx.x0)] = resized.at(y, x);
            }
        }
    }
    Ok(LabelVolume::new(dims, spacing, labels)?)
}

const NEIGHBORS_6: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];

fn neighbors_26() -> Vec<(isize, isize, isize)> {
    let mut out = Vec::with_capacity(26);
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dz, dy, dx) != (0, 0, 0) {
                    out.push((dz, dy, dx));
                }
            }
        }
    }
    out
}

#[inline]
fn offset_index(dims: Dims3, idx: usize, d: (isize, isize, isize)) -> Option<usize> {
    let x = (idx % dims.x) as isize + d.2;
    let y = ((idx / dims.x) % dims.y) as isize + d.1;
    let z = (idx / (dims.x * dims.y)) as isize + d.0;
    if z < 0
        || z >= dims.z as isize
        || y < 0
        || y >= dims.y as isize
        || x < 0
        || x >= dims.x as isize
    {
        None
    } else {
        Some(dims.index(z as usize, y as usize, x as usize))
    }
}

/// Flood-fill components of `mask` under the given connectivity; returns a
/// component id per voxel (usize::MAX outside the mask) and component sizes.
fn label_components(
    mask: &[bool],
    dims: Dims3,
    conn: &[(isize, isize, isize)],
) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        comp[start] = id;
        stack.push(start);
        let mut size = 0usize;
        while let Some(idx) = stack.pop() {
            size += 1;
            for &d in conn {
                if let Some(n) = offset_index(dims, idx, d) {
                    if mask[n] && comp[n] == usize::MAX {
                        comp[n] = id;
                        stack.push(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Per lung label, keep only the largest 26-connected component, then fill
/// internal cavities: background 6-components that do not reach the frame
/// border take the label of their enclosing lung (majority of 6-adjacent
/// labeled voxels; ties go to the smaller label).
pub fn keep_largest_components(m: &LabelVolume) -> LabelVolume {
    let dims = m.dims();
    let conn26 = neighbors_26();
    let mut labels = m.labels().to_vec();
    for target in [LABEL_RIGHT_LUNG, LABEL_LEFT_LUNG] {
        let mask: Vec<bool> = labels.iter().map(|&l| l == target).collect();
        let (comp, sizes) = label_components(&mask, dims, &conn26);
        if sizes.len() <= 1 {
            continue;
        }
        let keep = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        for (l, &c) in labels.iter_mut().zip(&comp) {
            if *l == target && c != keep {
                *l = 0;
            }
        }
    }

    // Cavity fill: flood the background from the frame border (6-conn);
    // anything background left unreached is an internal cavity.
    let bg: Vec<bool> = labels.iter().map(|&l| l == 0).collect();
    let mut outside = vec![false; bg.len()];
    let mut stack = Vec::new();
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let border = z == 0
                    || z + 1 == dims.z
                    || y == 0
                    || y + 1 == dims.y
                    || x == 0
                    || x + 1 == dims.x;
                let idx = dims.index(z, y, x);
                if border && bg[idx] && !outside[idx] {
                    outside[idx] = true;
                    stack.push(idx);
                }
            }
        }
    }
    while let Some(idx) = stack.pop() {
        for &d in &NEIGHBORS_6 {
            if let Some(n) = offset_index(dims, idx, d) {
                if bg[n] && !outside[n] {
                    outside[n] = true;
                    stack.push(n);
                }
            }
        }
    }
    let cavity: Vec<bool> = bg.iter().zip(&outside).map(|(&b, &o)| b && !o).collect();
    let (comp, sizes) = label_components(&cavity, dims, &NEIGHBORS_6);
    if !sizes.is_empty() {
        // Count labeled 6-neighbors per cavity component.
        let mut votes = vec![[0usize; 2]; sizes.len()];
        for idx in 0..labels.len() {
            let c = comp[idx];
            if c == usize::MAX {
                continue;
            }
            for &d in &NEIGHBORS_6 {
                if let Some(n) = offset_index(dims, idx, d) {
                    match labels[n] {
                        1 => votes[c][0] += 1,
                        2 => votes[c][1] += 1,
                        _ => {}
                    }
                }
            }
        }
        let fill: Vec<u8> = votes
            .iter()
            .map(|v| if v[1] > v[0] { 2 } else { 1 })
            .collect();
        for idx in 0..labels.len() {
            let c = comp[idx];
            if c != usize::MAX {
                labels[idx] = fill[c];
            }
        }
    }
    LabelVolume::new(dims, m.spacing(), labels).expect("labels stay in range")
}

fn ball_offsets(radius: usize) -> Vec<(isize, isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx <= r * r {
                    out.push((dz, dy, dx));
                }
            }
        }
    }
    out
}

fn dilate3d(mask: &[bool], dims: Dims3, se: &[(isize, isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for idx in 0..mask.len() {
        if !mask[idx] {
            continue;
        }
        for &d in se {
            if let Some(n) = offset_index(dims, idx, d) {
                out[n] = true;
            }
        }
    }
    out
}

fn erode3d(mask: &[bool], dims: Dims3, se: &[(isize, isize, isize)]) -> Vec<bool> {
    // Out-of-bounds counts as foreground (replicate padding), so regions
    // touching the frame are not artificially eroded there.
    let mut out = vec![false; mask.len()];
    'voxel: for idx in 0..mask.len() {
        for &d in se {
            if let Some(n) = offset_index(dims, idx, d) {
                if !mask[n] {
                    continue 'voxel;
                }
            }
        }
        out[idx] = true;
    }
    out
}

/// Remove dense areas from a lung mask: voxels inside the mask whose HU lie
/// in (-50, 70), after opening (radius 1) and 3D closing (radius 2) of the
/// removal region, are set to background. The output mask is always a
/// subset of the input mask.
pub fn remove_dense_areas(m: &LabelVolume, v: &Volume3) -> Result<LabelVolume, PostprocessError> {
    if m.dims() != v.dims() || m.spacing() != v.spacing() {
        return Err(PostprocessError::GridMismatch);
    }
    let dims = m.dims();
    let dense: Vec<bool> = m
        .labels()
        .iter()
        .zip(v.values())
        .map(|(&l, &hu)| l != 0 && hu > DENSE_LO_HU && hu < DENSE_HI_HU)
        .collect();
    let se_open = ball_offsets(DENSE_OPEN_RADIUS);
    let se_close = ball_offsets(DENSE_CLOSE_RADIUS);
    let opened = dilate3d(&erode3d(&dense, dims, &se_open), dims, &se_open);
    let closed = erode3d(&dilate3d(&opened, dims, &se_close), dims, &se_close);
    let labels: Vec<u8> = m
        .labels()
        .iter()
        .zip(&closed)
        .map(|(&l, &remove)| if remove { 0 } else { l })
        .collect();
    Ok(LabelVolume::new(dims, m.spacing(), labels)?)
}
