//! Stratified mini-batch construction over slices: every batch holds
//! `batch_size/2` slices that show the lung and `batch_size/2` that don't.
//! Each stratum is drawn without replacement and reshuffled independently
//! when exhausted (lung slices are typically the scarcer stratum).

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::volgrid::LabelVolume;

/// Default stratified batch size: 7 lung + 7 non-lung slices.
pub const DEFAULT_BATCH_SIZE: usize = 14;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(
        "the {0} stratum is empty; augment the training set with {0} slices \
         (e.g. include cases whose field of view adds them)"
    )]
    EmptyStratum(&'static str),
    #[error("batch size {0} must be even and positive")]
    BadBatchSize(usize),
}

/// A slice reference: which case and which z plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceRef {
    /// Index into the case list the index was built from.
    pub case: usize,
    pub z: usize,
    pub has_lung: bool,
}

/// The lung / non-lung partition of every training slice.
#[derive(Debug, Clone)]
pub struct SliceIndex {
    pub entries: Vec<SliceRef>,
}

impl SliceIndex {
    /// Classify every slice of every case: a slice shows the lung iff its
    /// ground-truth mask has at least one foreground voxel there.
    pub fn build(masks: &[&LabelVolume]) -> Self {
        let mut entries = Vec::new();
        for (case, mask) in masks.iter().enumerate() {
            let d = mask.dims();
            let plane_len = d.y * d.x;
            for z in 0..d.z {
                let has_lung = mask.labels()[z * plane_len..(z + 1) * plane_len]
                    .iter()
                    .any(|&l| l != 0);
                entries.push(SliceRef { case, z, has_lung });
            }
        }
        Self { entries }
    }

    pub fn lung_count(&self) -> usize {
        self.entries.iter().filter(|e| e.has_lung).count()
    }

    pub fn non_lung_count(&self) -> usize {
        self.entries.len() - self.lung_count()
    }
}

/// Draws stratified batches. Within a stratum no slice repeats until the
/// stratum is exhausted; the two strata cycle independently.
#[derive(Debug)]
pub struct StratifiedSampler {
    lung: StratumQueue,
    non_lung: StratumQueue,
    batch_size: usize,
}

#[derive(Debug)]
struct StratumQueue {
    slices: Vec<SliceRef>,
    order: Vec<usize>,
    cursor: usize,
}

impl StratumQueue {
    fn new(slices: Vec<SliceRef>) -> Self {
        let order = (0..slices.len()).collect();
        Self {
            slices,
            order,
            cursor: usize::MAX, // force a shuffle before the first draw
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> SliceRef {
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let s = self.slices[self.order[self.cursor]];
        self.cursor += 1;
        s
    }
}

impl StratifiedSampler {
    pub fn new(index: &SliceIndex, batch_size: usize) -> Result<Self, SamplerError> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(SamplerError::BadBatchSize(batch_size));
        }
        let lung: Vec<SliceRef> = index.entries.iter().copied().filter(|e| e.has_lung).collect();
        let non_lung: Vec<SliceRef> =
            index.entries.iter().copied().filter(|e| !e.has_lung).collect();
        if lung.is_empty() {
            return Err(SamplerError::EmptyStratum("lung"));
        }
        if non_lung.is_empty() {
            return Err(SamplerError::EmptyStratum("non-lung"));
        }
        Ok(Self {
            lung: StratumQueue::new(lung),
            non_lung: StratumQueue::new(non_lung),
            batch_size,
        })
    }

    /// Number of batches that covers the larger stratum once.
    pub fn batches_per_epoch(&self) -> usize {
        let per_stratum = self.batch_size / 2;
        let largest = self.lung.slices.len().max(self.non_lung.slices.len());
        largest.div_ceil(per_stratum)
    }

    /// Draw the next batch: exactly half lung, half non-lung slices.
    pub fn next_batch<R: Rng>(&mut self, rng: &mut R) -> Vec<SliceRef> {
        let per_stratum = self.batch_size / 2;
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..per_stratum {
            batch.push(self.lung.next(rng));
        }
        for _ in 0..per_stratum {
            batch.push(self.non_lung.next(rng));
        }
        batch
    }
}
