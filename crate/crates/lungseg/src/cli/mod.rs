//! Command implementations behind the `lungseg` binary: phantom dataset
//! generation, training, slice-wise inference, volumetric evaluation,
//! paired t-tests, and aggregate report tables.
//!
//! Every command is deterministic given its flags and `--seed`. Exit
//! codes: 0 success, 2 validation error, 3 runtime/numeric error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::augment_pair;
use crate::config::{ConfigError, PipelineConfig};
use crate::metrics::{
    aggregate, evaluate_case, paired_t_test, tumor_overlap, AggregateStats, CaseReport, EvalMode,
    LabelSel, MetricsError, Region3, Structure, TTestResult,
};
use crate::phantom::{
    generate_dataset, tumor_mask_path, PhantomConfig, PhantomError,
};
use crate::postprocess::{keep_largest_components, remove_dense_areas, reassemble_mask, PostprocessError};
use crate::preprocess::{
    find_body_box, preprocess_label_slice, preprocess_slice, PreprocessError,
};
use crate::sampler::{SamplerError, SliceIndex, StratifiedSampler};
use crate::tinynet::{
    backward, forward_eval, forward_train, init_params, load_weights, logits_to_labels,
    loss_softmax_ce, save_weights, sgd_momentum_step, LabelBatch, NetConfig, StoreError, Tensor4,
    TinynetError,
};
use crate::volgrid::io::{load_mask, load_volume, save_mask};
use crate::volgrid::manifest::{load_manifest, ManifestError, Split};
use crate::volgrid::{LabelPlane, LabelVolume, Slice2, VolError, Volume3};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for validation errors, 3 for runtime/numeric errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

macro_rules! validation_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}
macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
validation_from!(ManifestError, VolError, ConfigError, PhantomError, SamplerError, StoreError);
runtime_from!(MetricsError, TinynetError, PreprocessError, PostprocessError, std::io::Error);

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// phantom-gen
// ---------------------------------------------------------------------------

/// Generate a phantom dataset and its manifest.
pub fn cmd_phantom_gen(
    n: usize,
    template: &PhantomConfig,
    split: Split,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    if n == 0 {
        return Err(CliError::Validation("--n must be >= 1".into()));
    }
    generate_dataset(n, template, split, out_dir)?;
    Ok(out_dir.join("manifest.csv"))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainOutcome {
    pub losses: Vec<f64>,
    pub steps_per_epoch: usize,
    pub epochs: usize,
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ c.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PreparedCase {
    slices: Vec<(Slice2, LabelPlane)>,
}

fn prepare_case(
    image_path: &Path,
    mask_path: &Path,
    cfg: &PipelineConfig,
) -> Result<(PreparedCase, LabelVolume), CliError> {
    let volume = load_volume(image_path)?;
    let mask = load_mask(mask_path)?;
    if volume.dims() != mask.dims() {
        return Err(CliError::Validation(format!(
            "{}: image/mask dims differ",
            image_path.display()
        )));
    }
    let (bx, _) = find_body_box(&volume, &cfg.body_box_params());
    let target = cfg.target_resolution;
    let mut slices = Vec::with_capacity(volume.dims().z);
    for z in 0..volume.dims().z {
        let img = preprocess_slice(&volume, z, &bx, target)?;
        let lab = preprocess_label_slice(&mask, z, &bx, target)?;
        slices.push((img, lab));
    }
    Ok((PreparedCase { slices }, mask))
}

/// Train a network on the manifest's train split: preprocess, stratified
/// batches, augmentation, forward/backward, SGD with momentum. Checkpoints
/// the weights after every epoch and writes a line-oriented step log.
pub fn cmd_train(
    manifest_path: &Path,
    out_weights: &Path,
    log_path: Option<&Path>,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<TrainOutcome, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<_> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(CliError::Validation(
            "manifest has no train-split entries".into(),
        ));
    }
    let net_cfg = cfg.net_config();
    if cfg.target_resolution % (1 << cfg.depth) != 0 {
        return Err(CliError::Validation(format!(
            "target_resolution {} not divisible by 2^depth",
            cfg.target_resolution
        )));
    }

    let mut cases = Vec::with_capacity(entries.len());
    let mut masks = Vec::with_capacity(entries.len());
    for e in &entries {
        let (prepared, mask) = prepare_case(&e.image_path, &e.mask_path, cfg)?;
        cases.push(prepared);
        masks.push(mask);
    }
    let mask_refs: Vec<&LabelVolume> = masks.iter().collect();
    let index = SliceIndex::build(&mask_refs);
    let mut sampler = StratifiedSampler::new(&index, cfg.batch_size)?;
    let steps_per_epoch = sampler.batches_per_epoch();

    let mut store = init_params(&net_cfg, seed);
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(seed);
    let aug_params = cfg.augment_params();
    let target = cfg.target_resolution;
    let mut losses = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut log = String::new();
    let decay_from = (3 * cfg.epochs) / 4;

    let mut global_step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = if cfg.epochs > 1 && epoch >= decay_from {
            cfg.lr * 0.1
        } else {
            cfg.lr
        };
        for _ in 0..steps_per_epoch {
            let refs = sampler.next_batch(&mut sampler_rng);
            let mut batch = Tensor4::zeros(refs.len(), 1, target, target);
            let mut labels = vec![0u8; refs.len() * target * target];
            for (slot, r) in refs.iter().enumerate() {
                let (img, lab) = &cases[r.case].slices[r.z];
                let mut aug_rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(seed, global_step, slot as u64));
                let (img, lab) = augment_pair(img, lab, &mut aug_rng, &aug_params);
                let dst = &mut batch.data[slot * target * target..(slot + 1) * target * target];
                for (d, &s) in dst.iter_mut().zip(img.values()) {
                    *d = s as f64;
                }
                labels[slot * target * target..(slot + 1) * target * target]
                    .copy_from_slice(&lab.values);
            }
            let label_batch = LabelBatch::new(refs.len(), target, target, labels);
            let (logits, cache) = forward_train(&net_cfg, &mut store, &batch)?;
            let (loss, grad) = loss_softmax_ce(&logits, &label_batch).map_err(TinynetError::from)?;
            let grads = backward(&net_cfg, &store, &cache, &grad)?;
            sgd_momentum_step(&mut store, &grads, lr, cfg.momentum)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let _ = writeln!(log, "epoch {epoch} step {global_step} loss {loss:.6}");
            losses.push(loss);
            global_step += 1;
        }
        save_weights(&store, out_weights).map_err(|e| CliError::Runtime(e.to_string()))?;
        let _ = writeln!(log, "checkpoint epoch {epoch} {}", out_weights.display());
    }
    if let Some(p) = log_path {
        std::fs::write(p, &log)?;
    }
    Ok(TrainOutcome {
        losses,
        steps_per_epoch,
        epochs: cfg.epochs,
    })
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

/// Segment one volume: per-slice preprocess, eval-mode forward, argmax,
/// reassembly at native resolution, largest-component cleanup, and the
/// optional dense-area removal. The network architecture is reconstructed
/// from the weights file.
pub fn cmd_infer(
    weights_path: &Path,
    volume_path: &Path,
    out_path: &Path,
    remove_dense: bool,
    cfg: &PipelineConfig,
) -> Result<LabelVolume, CliError> {
    let store = load_weights(weights_path)?;
    let net_cfg = NetConfig::infer_from_store(&store)?;
    let volume = load_volume(volume_path)?;
    let mask = infer_volume(&net_cfg, &store, &volume, remove_dense, cfg)?;
    save_mask(&mask, out_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(mask)
}

/// In-memory inference path shared by [`cmd_infer`] and the experiments.
pub fn infer_volume(
    net_cfg: &NetConfig,
    store: &crate::tinynet::TensorStore,
    volume: &Volume3,
    remove_dense: bool,
    cfg: &PipelineConfig,
) -> Result<LabelVolume, CliError> {
    let target = cfg.target_resolution;
    if target % (1 << net_cfg.depth) != 0 {
        return Err(CliError::Validation(format!(
            "target_resolution {target} not divisible by 2^depth of the loaded net"
        )));
    }
    let (bx, _) = find_body_box(volume, &cfg.body_box_params());
    let nz = volume.dims().z;
    let mut planes: Vec<LabelPlane> = Vec::with_capacity(nz);
    let chunk = cfg.batch_size.max(1);
    let mut z0 = 0;
    while z0 < nz {
        let z1 = (z0 + chunk).min(nz);
        let mut batch = Tensor4::zeros(z1 - z0, 1, target, target);
        for (slot, z) in (z0..z1).enumerate() {
            let img = preprocess_slice(volume, z, &bx, target)?;
            let dst = &mut batch.data[slot * target * target..(slot + 1) * target * target];
            for (d, &s) in dst.iter_mut().zip(img.values()) {
                *d = s as f64;
            }
        }
        let logits = forward_eval(net_cfg, store, &batch)?;
        planes.extend(logits_to_labels(&logits));
        z0 = z1;
    }
    let assembled = reassemble_mask(&planes, &bx, volume.dims(), volume.spacing())?;
    let mut mask = keep_largest_components(&assembled);
    if remove_dense {
        mask = remove_dense_areas(&mask, volume)?;
    }
    Ok(mask)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub struct EvalOutcome {
    /// Summary report per case (averaged or combined), sorted by case id.
    pub summaries: Vec<CaseReport>,
    /// Tumour overlap per case, when a tumour ground-truth mask exists.
    pub tumor_overlaps: BTreeMap<String, f64>,
    pub aggregate: AggregateStats,
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

/// Evaluate a directory of predicted masks (`<case_id>.rvol`) against the
/// ground truth of every manifest entry. Writes the per-case report CSV
/// and the aggregate CSV; adds a tumour-overlap column when tumour masks
/// are present.
pub fn cmd_eval(
    pred_dir: &Path,
    manifest_path: &Path,
    mode: EvalMode,
    out_report: &Path,
    out_aggregate: &Path,
) -> Result<EvalOutcome, CliError> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Validation("manifest is empty".into()));
    }
    type CaseRow = (Vec<CaseReport>, CaseReport, Option<f64>);
    let mut results: Vec<(String, Result<CaseRow, CliError>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let run = || -> Result<CaseRow, CliError> {
                let gt = load_mask(&entry.mask_path)?;
                let pred_path = pred_dir.join(format!("{}.rvol", entry.case_id));
                if !pred_path.exists() {
                    return Err(CliError::Runtime(format!(
                        "missing prediction for case {}: {}",
                        entry.case_id,
                        pred_path.display()
                    )));
                }
                let pred = load_mask(&pred_path)?;
                let ev = evaluate_case(&entry.case_id, &pred, &gt, mode)?;
                let tumor = {
                    let tpath = tumor_mask_path(&entry.mask_path);
                    if tpath.exists() {
                        let tmask = load_mask(&tpath)?;
                        let tumor_region = Region3::from_labels(&tmask, LabelSel::Lungs);
                        let lung_region = Region3::from_labels(&pred, LabelSel::Lungs);
                        Some(tumor_overlap(&lung_region, &tumor_region)?)
                    } else {
                        None
                    }
                };
                let rows = match mode {
                    EvalMode::PerLung => ev.per_structure.clone(),
                    EvalMode::Combined => Vec::new(),
                };
                Ok((rows, ev.summary, tumor))
            };
            (entry.case_id.clone(), run())
        })
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut summaries = Vec::new();
    let mut tumor_overlaps = BTreeMap::new();
    let has_tumor_column = results
        .iter()
        .any(|(_, r)| matches!(r, Ok((_, _, Some(_)))));
    let mut w = csv::Writer::from_path(out_report).map_err(CliError::from)?;
    let mut header = vec!["case_id", "structure", "dsc", "hd95_mm", "msd_mm"];
    if has_tumor_column {
        header.push("tumor_overlap");
    }
    w.write_record(&header)?;
    for (case_id, result) in results {
        let (rows, summary, tumor) =
            result.map_err(|e| CliError::Runtime(format!("case {case_id}: {e}")))?;
        for r in rows.iter().chain(std::iter::once(&summary)) {
            let mut record = vec![
                r.case_id.clone(),
                r.structure.as_str().to_string(),
                fmt_metric(r.dsc),
                fmt_metric(r.hd95_mm),
                fmt_metric(r.msd_mm),
            ];
            if has_tumor_column {
                let cell = if r.structure == summary.structure {
                    tumor.map(fmt_metric).unwrap_or_default()
                } else {
                    String::new()
                };
                record.push(cell);
            }
            w.write_record(&record)?;
        }
        if let Some(t) = tumor {
            tumor_overlaps.insert(case_id.clone(), t);
        }
        summaries.push(summary);
    }
    w.flush().map_err(CliError::from)?;

    let agg = aggregate(&summaries)?;
    let mut aw = csv::Writer::from_path(out_aggregate).map_err(CliError::from)?;
    let mut aheader = vec![
        "n", "dsc_mean", "dsc_sd", "hd95_mean", "hd95_sd", "msd_mean", "msd_sd",
    ];
    if has_tumor_column {
        aheader.push("tumor_overlap_mean");
    }
    aw.write_record(&aheader)?;
    let mut arow = vec![
        agg.n.to_string(),
        fmt_metric(agg.dsc_mean),
        fmt_metric(agg.dsc_sd),
        fmt_metric(agg.hd95_mean),
        fmt_metric(agg.hd95_sd),
        fmt_metric(agg.msd_mean),
        fmt_metric(agg.msd_sd),
    ];
    if has_tumor_column {
        let mean = tumor_overlaps.values().sum::<f64>() / tumor_overlaps.len().max(1) as f64;
        arow.push(fmt_metric(mean));
    }
    aw.write_record(&arow)?;
    aw.flush().map_err(CliError::from)?;

    Ok(EvalOutcome {
        summaries,
        tumor_overlaps,
        aggregate: agg,
    })
}

// ---------------------------------------------------------------------------
// ttest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Dsc,
    Hd95,
    Msd,
}

impl MetricKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dsc" => Some(MetricKind::Dsc),
            "hd95" => Some(MetricKind::Hd95),
            "msd" => Some(MetricKind::Msd),
            _ => None,
        }
    }
}

/// Read the summary rows (structure averaged or combined) of a report CSV
/// into case_id -> metric.
pub fn read_summary_metric(
    path: &Path,
    metric: MetricKind,
) -> Result<BTreeMap<String, f64>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(CliError::from)?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 5 {
            return Err(CliError::Validation(format!(
                "{}: report rows need at least 5 columns",
                path.display()
            )));
        }
        let structure = Structure::parse(&record[1]).ok_or_else(|| {
            CliError::Validation(format!("{}: unknown structure {:?}", path.display(), &record[1]))
        })?;
        if !matches!(structure, Structure::Averaged | Structure::Combined) {
            continue;
        }
        let field = match metric {
            MetricKind::Dsc => &record[2],
            MetricKind::Hd95 => &record[3],
            MetricKind::Msd => &record[4],
        };
        let value: f64 = field.parse().map_err(|_| {
            CliError::Validation(format!("{}: bad metric value {field:?}", path.display()))
        })?;
        out.insert(record[0].to_string(), value);
    }
    Ok(out)
}

/// Paired t-test between two report CSVs over the chosen per-case metric.
/// The reports must cover identical case sets.
pub fn cmd_ttest(
    report_a: &Path,
    report_b: &Path,
    metric: MetricKind,
) -> Result<TTestResult, CliError> {
    let a = read_summary_metric(report_a, metric)?;
    let b = read_summary_metric(report_b, metric)?;
    if a.keys().ne(b.keys()) {
        return Err(CliError::Validation(
            "reports cover different case sets".into(),
        ));
    }
    let va: Vec<f64> = a.values().copied().collect();
    let vb: Vec<f64> = b.values().copied().collect();
    Ok(paired_t_test(&va, &vb)?)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn read_summaries(path: &Path) -> Result<Vec<CaseReport>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(CliError::from)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let structure = Structure::parse(&record[1]).ok_or_else(|| {
            CliError::Validation(format!("unknown structure {:?}", &record[1]))
        })?;
        if !matches!(structure, Structure::Averaged | Structure::Combined) {
            continue;
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|_| CliError::Validation(format!("bad metric value {s:?}")))
        };
        out.push(CaseReport {
            case_id: record[0].to_string(),
            structure,
            dsc: parse(&record[2])?,
            hd95_mm: parse(&record[3])?,
            msd_mm: parse(&record[4])?,
        });
    }
    Ok(out)
}

/// Build an aggregate table: one row per run label, one mean-DSC column per
/// test-set name, then pooled mean +/- SD columns for DSC, HD95 and MSD.
pub fn cmd_report(entries: &[(String, String, PathBuf)], out: &Path) -> Result<(), CliError> {
    if entries.is_empty() {
        return Err(CliError::Validation("no report entries given".into()));
    }
    let mut runs: Vec<String> = Vec::new();
    let mut sets: Vec<String> = Vec::new();
    for (run, set, _) in entries {
        if !runs.contains(run) {
            runs.push(run.clone());
        }
        if !sets.contains(set) {
            sets.push(set.clone());
        }
    }
    let mut cells: BTreeMap<(String, String), Vec<CaseReport>> = BTreeMap::new();
    for (run, set, path) in entries {
        let reports = read_summaries(path)?;
        cells
            .entry((run.clone(), set.clone()))
            .or_default()
            .extend(reports);
    }
    let mut w = csv::Writer::from_path(out).map_err(CliError::from)?;
    let mut header = vec!["run".to_string()];
    header.extend(sets.iter().map(|s| format!("{s}_dsc")));
    header.extend(
        ["dsc_mean", "dsc_sd", "hd95_mean", "hd95_sd", "msd_mean", "msd_sd"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for run in &runs {
        let mut record = vec![run.clone()];
        let mut pooled = Vec::new();
        for set in &sets {
            match cells.get(&(run.clone(), set.clone())) {
                Some(reports) if !reports.is_empty() => {
                    let agg = aggregate(reports)?;
                    record.push(fmt_metric(agg.dsc_mean));
                    pooled.extend(reports.iter().cloned());
                }
                _ => record.push(String::new()),
            }
        }
        let agg = aggregate(&pooled)?;
        record.extend([
            fmt_metric(agg.dsc_mean),
            fmt_metric(agg.dsc_sd),
            fmt_metric(agg.hd95_mean),
            fmt_metric(agg.hd95_sd),
            fmt_metric(agg.msd_mean),
            fmt_metric(agg.msd_sd),
        ]);
        w.write_record(&record)?;
    }
    w.flush().map_err(CliError::from)?;
    Ok(())
}
