//! Volumetric evaluation suite: Dice overlap, robust Hausdorff (HD95),
//! mean surface distance (MSD), tumour overlap, per-lung aggregation, and
//! paired t-tests. Segmentation runs slice-wise but every metric here is
//! computed on the three-dimensional volumes.

pub mod stats;
pub mod surface;

use thiserror::Error;

pub use stats::{paired_t_test, student_t_two_sided_p, TTestResult};
pub use surface::{extract_surface, hd95, msd, KdTree3, SurfacePointSet};

use crate::volgrid::{Dims3, LabelVolume, Spacing3, LABEL_LEFT_LUNG, LABEL_RIGHT_LUNG};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("grid mismatch: dims/spacing of the two regions differ")]
    GridMismatch,
    #[error("surface metric undefined on an empty region")]
    UndefinedOnEmptyRegion,
    #[error("tumour region is empty")]
    EmptyTumor,
    #[error("both lung labels are empty in the ground truth")]
    EmptyGroundTruth,
    #[error("cannot aggregate an empty report list")]
    EmptyReportList,
    #[error("sample length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("zero variance of paired differences: t statistic undefined")]
    ZeroVariance,
}

/// A binary region on a voxel grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Region3 {
    pub dims: Dims3,
    pub spacing: Spacing3,
    mask: Vec<bool>,
}

/// Which labels of a [`LabelVolume`] form a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSel {
    Single(u8),
    /// Union of labels 1 and 2.
    Lungs,
}

impl Region3 {
    pub fn new(dims: Dims3, spacing: Spacing3, mask: Vec<bool>) -> Result<Self, MetricsError> {
        if mask.len() != dims.count() {
            return Err(MetricsError::GridMismatch);
        }
        Ok(Self { dims, spacing, mask })
    }

    pub fn from_labels(vol: &LabelVolume, sel: LabelSel) -> Self {
        let mask = vol
            .labels()
            .iter()
            .map(|&l| match sel {
                LabelSel::Single(target) => l == target,
                LabelSel::Lungs => l == LABEL_RIGHT_LUNG || l == LABEL_LEFT_LUNG,
            })
            .collect();
        Self {
            dims: vol.dims(),
            spacing: vol.spacing(),
            mask,
        }
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.mask[self.dims.index(z, y, x)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub(crate) fn check_same_grid(&self, other: &Self) -> Result<(), MetricsError> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(MetricsError::GridMismatch);
        }
        Ok(())
    }
}

/// Dice overlap 2|X∩Y| / (|X|+|Y|). Both regions empty yields 1.0 by
/// convention; exactly one empty yields 0.0.
pub fn dice(x: &Region3, y: &Region3) -> Result<f64, MetricsError> {
    x.check_same_grid(y)?;
    let mut inter = 0usize;
    let mut nx = 0usize;
    let mut ny = 0usize;
    for (&a, &b) in x.mask.iter().zip(&y.mask) {
        inter += (a && b) as usize;
        nx += a as usize;
        ny += b as usize;
    }
    if nx + ny == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (nx + ny) as f64)
}

/// Proportion of tumour volume covered by the lung mask.
pub fn tumor_overlap(lung: &Region3, tumor: &Region3) -> Result<f64, MetricsError> {
    lung.check_same_grid(tumor)?;
    let mut inter = 0usize;
    let mut nt = 0usize;
    for (&l, &t) in lung.mask.iter().zip(&tumor.mask) {
        inter += (l && t) as usize;
        nt += t as usize;
    }
    if nt == 0 {
        return Err(MetricsError::EmptyTumor);
    }
    Ok(inter as f64 / nt as f64)
}

/// Which structure a report row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Right,
    Left,
    Combined,
    Averaged,
}

impl Structure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Structure::Right => "right",
            Structure::Left => "left",
            Structure::Combined => "combined",
            Structure::Averaged => "averaged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "right" => Some(Structure::Right),
            "left" => Some(Structure::Left),
            "combined" => Some(Structure::Combined),
            "averaged" => Some(Structure::Averaged),
            _ => None,
        }
    }
}

/// Per-case, per-structure metric record. Surface distances are +inf when
/// the prediction is empty for a structure the ground truth contains.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub case_id: String,
    pub structure: Structure,
    pub dsc: f64,
    pub hd95_mm: f64,
    pub msd_mm: f64,
}

/// Evaluation mode: metrics per lung then averaged, or on the union of
/// both lung labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    PerLung,
    Combined,
}

/// Full result of evaluating one case: the per-structure rows, the summary
/// row (averaged or combined), and any structures skipped because their
/// ground-truth label was empty.
#[derive(Debug, Clone)]
pub struct CaseEvaluation {
    pub per_structure: Vec<CaseReport>,
    pub summary: CaseReport,
    pub skipped: Vec<Structure>,
}

fn structure_metrics(
    case_id: &str,
    structure: Structure,
    pred: &Region3,
    gt: &Region3,
) -> Result<CaseReport, MetricsError> {
    let dsc = dice(pred, gt)?;
    let (h, m) = if pred.is_empty() {
        // Ground truth is non-empty here; the surface distances of an empty
        // prediction are undefined, recorded as +inf rather than an error so
        // a degenerate model still produces a report.
        (f64::INFINITY, f64::INFINITY)
    } else {
        (hd95(pred, gt)?, msd(pred, gt)?)
    };
    Ok(CaseReport {
        case_id: case_id.to_string(),
        structure,
        dsc,
        hd95_mm: h,
        msd_mm: m,
    })
}

/// Evaluate a predicted labelling against ground truth.
///
/// Per-lung mode computes each metric on label 1 and label 2 separately and
/// arithmetic-averages them; a lung label empty in the ground truth is
/// skipped and flagged. Combined mode uses the union of labels 1 and 2.
pub fn evaluate_case(
    case_id: &str,
    pred: &LabelVolume,
    gt: &LabelVolume,
    mode: EvalMode,
) -> Result<CaseEvaluation, MetricsError> {
    if pred.dims() != gt.dims() || pred.spacing() != gt.spacing() {
        return Err(MetricsError::GridMismatch);
    }
    match mode {
        EvalMode::Combined => {
            let gt_r = Region3::from_labels(gt, LabelSel::Lungs);
            if gt_r.is_empty() {
                return Err(MetricsError::EmptyGroundTruth);
            }
            let pred_r = Region3::from_labels(pred, LabelSel::Lungs);
            let report = structure_metrics(case_id, Structure::Combined, &pred_r, &gt_r)?;
            Ok(CaseEvaluation {
                per_structure: vec![report.clone()],
                summary: report,
                skipped: Vec::new(),
            })
        }
        EvalMode::PerLung => {
            let mut per_structure = Vec::new();
            let mut skipped = Vec::new();
            for (label, structure) in [
                (LABEL_RIGHT_LUNG, Structure::Right),
                (LABEL_LEFT_LUNG, Structure::Left),
            ] {
                let gt_r = Region3::from_labels(gt, LabelSel::Single(label));
                if gt_r.is_empty() {
                    skipped.push(structure);
                    continue;
                }
                let pred_r = Region3::from_labels(pred, LabelSel::Single(label));
                per_structure.push(structure_metrics(case_id, structure, &pred_r, &gt_r)?);
            }
            if per_structure.is_empty() {
                return Err(MetricsError::EmptyGroundTruth);
            }
            let n = per_structure.len() as f64;
            let summary = CaseReport {
                case_id: case_id.to_string(),
                structure: Structure::Averaged,
                dsc: per_structure.iter().map(|r| r.dsc).sum::<f64>() / n,
                hd95_mm: per_structure.iter().map(|r| r.hd95_mm).sum::<f64>() / n,
                msd_mm: per_structure.iter().map(|r| r.msd_mm).sum::<f64>() / n,
            };
            Ok(CaseEvaluation {
                per_structure,
                summary,
                skipped,
            })
        }
    }
}

/// Mean and sample standard deviation (n-1 denominator) of each metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStats {
    pub n: usize,
    pub dsc_mean: f64,
    pub dsc_sd: f64,
    pub hd95_mean: f64,
    pub hd95_sd: f64,
    pub msd_mean: f64,
    pub msd_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        // SD of a single observation is 0 by convention; n is reported so
        // consumers can flag it.
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregate per-case reports into mean +/- SD per metric. Reports are
/// sorted by case id first so the result is independent of input order.
pub fn aggregate(reports: &[CaseReport]) -> Result<AggregateStats, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyReportList);
    }
    let mut sorted: Vec<&CaseReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let dsc: Vec<f64> = sorted.iter().map(|r| r.dsc).collect();
    let hd: Vec<f64> = sorted.iter().map(|r| r.hd95_mm).collect();
    let ms: Vec<f64> = sorted.iter().map(|r| r.msd_mm).collect();
    let (dsc_mean, dsc_sd) = mean_sd(&dsc);
    let (hd95_mean, hd95_sd) = mean_sd(&hd);
    let (msd_mean, msd_sd) = mean_sd(&ms);
    Ok(AggregateStats {
        n: sorted.len(),
        dsc_mean,
        dsc_sd,
        hd95_mean,
        hd95_sd,
        msd_mean,
        msd_sd,
    })
}
