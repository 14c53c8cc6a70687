//! Dense 4D tensors of 64-bit reals, w-fastest layout.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize, usize),
        found: (usize, usize, usize, usize),
    },
    #[error("value count {found} does not match shape product {expected}")]
    CountMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// A (n, c, h, w) tensor. Index of element (n, c, h, w) is
/// `((n*C + c)*H + h)*W + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if data.len() != n * c * h * w {
            return Err(TensorError::CountMismatch {
                expected: n * c * h * w,
                found: data.len(),
            });
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        &mut self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    /// The (n, c) spatial plane as a slice of length h*w.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn check_shape(&self, n: usize, c: usize, h: usize, w: usize) -> Result<(), TensorError> {
        if self.shape() != (n, c, h, w) {
            return Err(TensorError::ShapeMismatch {
                expected: (n, c, h, w),
                found: self.shape(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite(i));
            }
        }
        Ok(())
    }

    /// Elementwise in-place add; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor4) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}
