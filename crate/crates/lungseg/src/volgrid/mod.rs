//! Core grid types: CT volumes in Hounsfield units, label volumes, and the
//! 2D planes the slice-wise pipeline operates on.
//!
//! Voxel layout is x-fastest: the value of voxel `(z, y, x)` lives at index
//! `((z * dims.y) + y) * dims.x + x`. All types are immutable after
//! construction and every operation here is pure.

pub mod io;
pub mod manifest;
pub mod resample;

use thiserror::Error;

pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use resample::ResampleMode;

/// Labels used throughout the pipeline.
pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_RIGHT_LUNG: u8 = 1;
pub const LABEL_LEFT_LUNG: u8 = 2;

#[derive(Debug, Error)]
pub enum VolError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: String,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data after payload ({0} extra bytes)")]
    TrailingData(usize),
    #[error("non-positive spacing ({0}, {1}, {2})")]
    NonPositiveSpacing(f64, f64, f64),
    #[error("invalid dims ({0}, {1}, {2}): every axis must be >= 1")]
    InvalidDims(usize, usize, usize),
    #[error("value count {found} does not match dims product {expected}")]
    CountMismatch { expected: usize, found: usize },
    #[error("invalid label {0}: labels must be 0, 1 or 2")]
    InvalidLabel(u8),
    #[error("slice index {z} out of range for {dims} z-planes")]
    SliceOutOfRange { z: usize, dims: usize },
    #[error("zero output dims requested")]
    ZeroOutputDims,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Voxel counts along (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims3 {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims3 {
    pub fn new(z: usize, y: usize, x: usize) -> Result<Self, VolError> {
        if z == 0 || y == 0 || x == 0 {
            return Err(VolError::InvalidDims(z, y, x));
        }
        Ok(Self { z, y, x })
    }

    pub fn count(&self) -> usize {
        self.z * self.y * self.x
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        ((z * self.y) + y) * self.x + x
    }
}

/// Voxel spacing along (z, y, x) in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing3 {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl Spacing3 {
    pub fn new(z: f64, y: f64, x: f64) -> Result<Self, VolError> {
        if !(z > 0.0 && y > 0.0 && x > 0.0) {
            return Err(VolError::NonPositiveSpacing(z, y, x));
        }
        Ok(Self { z, y, x })
    }

    pub fn isotropic(s: f64) -> Result<Self, VolError> {
        Self::new(s, s, s)
    }
}

/// A 3D CT image: signed 16-bit Hounsfield units on an anisotropic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims3,
    spacing: Spacing3,
    values: Vec<i16>,
}

impl Volume3 {
    pub fn new(dims: Dims3, spacing: Spacing3, values: Vec<i16>) -> Result<Self, VolError> {
        if values.len() != dims.count() {
            return Err(VolError::CountMismatch {
                expected: dims.count(),
                found: values.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing3 {
        self.spacing
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> i16 {
        self.values[self.dims.index(z, y, x)]
    }

    /// The z-th xy plane as raw Hounsfield units.
    pub fn extract_slice(&self, z: usize) -> Result<HuPlane, VolError> {
        if z >= self.dims.z {
            return Err(VolError::SliceOutOfRange {
                z,
                dims: self.dims.z,
            });
        }
        let plane_len = self.dims.y * self.dims.x;
        let start = z * plane_len;
        Ok(HuPlane {
            h: self.dims.y,
            w: self.dims.x,
            values: self.values[start..start + plane_len].to_vec(),
        })
    }
}

/// A labelling aligned with a [`Volume3`]: 0 background, 1 right lung,
/// 2 left lung.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims3,
    spacing: Spacing3,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims3, spacing: Spacing3, labels: Vec<u8>) -> Result<Self, VolError> {
        if labels.len() != dims.count() {
            return Err(VolError::CountMismatch {
                expected: dims.count(),
                found: labels.len(),
            });
        }
        validate_labels(&labels)?;
        Ok(Self {
            dims,
            spacing,
            labels,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing3 {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[self.dims.index(z, y, x)]
    }

    /// The z-th xy plane of labels.
    pub fn extract_slice(&self, z: usize) -> Result<LabelPlane, VolError> {
        if z >= self.dims.z {
            return Err(VolError::SliceOutOfRange {
                z,
                dims: self.dims.z,
            });
        }
        let plane_len = self.dims.y * self.dims.x;
        let start = z * plane_len;
        Ok(LabelPlane {
            h: self.dims.y,
            w: self.dims.x,
            values: self.labels[start..start + plane_len].to_vec(),
        })
    }
}

pub(crate) fn validate_labels(labels: &[u8]) -> Result<(), VolError> {
    for &l in labels {
        if l > 2 {
            return Err(VolError::InvalidLabel(l));
        }
    }
    Ok(())
}

/// A 2D plane of raw Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct HuPlane {
    pub h: usize,
    pub w: usize,
    pub values: Vec<i16>,
}

impl HuPlane {
    pub fn new(h: usize, w: usize, values: Vec<i16>) -> Result<Self, VolError> {
        if values.len() != h * w {
            return Err(VolError::CountMismatch {
                expected: h * w,
                found: values.len(),
            });
        }
        Ok(Self { h, w, values })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> i16 {
        self.values[y * self.w + x]
    }

    pub fn to_f32(&self) -> FPlane {
        FPlane {
            h: self.h,
            w: self.w,
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// A 2D plane of unconstrained 32-bit reals, used mid-pipeline between
/// cropping and intensity windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct FPlane {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
}

impl FPlane {
    pub fn new(h: usize, w: usize, values: Vec<f32>) -> Result<Self, VolError> {
        if values.len() != h * w {
            return Err(VolError::CountMismatch {
                expected: h * w,
                found: values.len(),
            });
        }
        Ok(Self { h, w, values })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.w + x]
    }
}

/// A normalized intensity plane: every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2 {
    pub h: usize,
    pub w: usize,
    values: Vec<f32>,
}

impl Slice2 {
    pub fn new(h: usize, w: usize, values: Vec<f32>) -> Result<Self, VolError> {
        if values.len() != h * w {
            return Err(VolError::CountMismatch {
                expected: h * w,
                found: values.len(),
            });
        }
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(Self { h, w, values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.w + x]
    }
}

/// A 2D plane of labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPlane {
    pub h: usize,
    pub w: usize,
    pub values: Vec<u8>,
}

impl LabelPlane {
    pub fn new(h: usize, w: usize, values: Vec<u8>) -> Result<Self, VolError> {
        if values.len() != h * w {
            return Err(VolError::CountMismatch {
                expected: h * w,
                found: values.len(),
            });
        }
        Ok(Self { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            values: vec![0; h * w],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.w + x]
    }

    pub fn any_foreground(&self) -> bool {
        self.values.iter().any(|&v| v != 0)
    }
}

/// Rebuild a volume from per-z label planes at native dims.
pub fn assemble_labels(
    planes: &[LabelPlane],
    spacing: Spacing3,
) -> Result<LabelVolume, VolError> {
    let first = planes
        .first()
        .ok_or(VolError::InvalidDims(0, 0, 0))?;
    let dims = Dims3::new(planes.len(), first.h, first.w)?;
    let mut labels = Vec::with_capacity(dims.count());
    for p in planes {
        if p.h != first.h || p.w != first.w {
            return Err(VolError::CountMismatch {
                expected: first.h * first.w,
                found: p.h * p.w,
            });
        }
        labels.extend_from_slice(&p.values);
    }
    LabelVolume::new(dims, spacing, labels)
}
