//! Pixelwise softmax cross-entropy over the class axis.

use thiserror::Error;

use super::tensor::Tensor4;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} at pixel {index} outside the {classes} classes")]
    LabelOutOfRange {
        label: u8,
        index: usize,
        classes: usize,
    },
    #[error("label batch {found:?} does not match logits {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

/// Per-pixel class labels for a batch, shape (n, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelBatch {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), n * h * w, "label count mismatch");
        Self { n, h, w, data }
    }
}

/// Mean over all pixels of -log softmax at the true class. Returns the
/// scalar loss and its analytic gradient w.r.t. the logits.
pub fn loss_softmax_ce(logits: &Tensor4, labels: &LabelBatch) -> Result<(f64, Tensor4), LossError> {
    let (n, c, h, w) = logits.shape();
    if (labels.n, labels.h, labels.w) != (n, h, w) {
        return Err(LossError::ShapeMismatch {
            expected: (n, h, w),
            found: (labels.n, labels.h, labels.w),
        });
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut grad = Tensor4::zeros(n, c, h, w);
    let mut loss = 0.0;
    let mut probs = vec![0.0f64; c];
    for ni in 0..n {
        for p in 0..hw {
            let label = labels.data[ni * hw + p] as usize;
            if label >= c {
                return Err(LossError::LabelOutOfRange {
                    label: label as u8,
                    index: ni * hw + p,
                    classes: c,
                });
            }
            let base = ni * c * hw + p;
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(logits.data[base + ch * hw]);
            }
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (logits.data[base + ch * hw] - max).exp();
                probs[ch] = e;
                sum += e;
            }
            loss += sum.ln() + max - logits.data[base + label * hw];
            for ch in 0..c {
                let softmax = probs[ch] / sum;
                let target = if ch == label { 1.0 } else { 0.0 };
                grad.data[base + ch * hw] = (softmax - target) / count;
            }
        }
    }
    Ok((loss / count, grad))
}
