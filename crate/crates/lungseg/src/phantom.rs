//! Deterministic synthetic chest phantoms with exact ground truth.
//!
//! Geometry is deliberately simple: an elliptical body on air, two
//! ellipsoidal lungs (right = label 1 at small x, left = label 2), a
//! trachea kept out of the lung labels, and profile-dependent lesions.
//! High-density anomalies (tumours attached to the lung border, dependent
//! effusion slabs) are part of the lung label; consolidations sit inside
//! the parenchyma at intermediate density. Tissue HU values are plausible
//! constants chosen to straddle the -50..70 dense band the right way:
//! tumour and effusion inside it, parenchyma and consolidation below it.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::metrics::Region3;
use crate::volgrid::io::{save_mask, save_volume};
use crate::volgrid::manifest::{load_manifest, save_manifest, DatasetManifest, ManifestError, Split};
use crate::volgrid::{Dims3, LabelVolume, Spacing3, VolError, Volume3};

pub const HU_AIR: f64 = -1000.0;
pub const HU_BODY: f64 = 40.0;
pub const HU_LUNG: f64 = -800.0;
pub const HU_TRACHEA: f64 = -950.0;
pub const HU_HEART: f64 = 30.0;
pub const HU_TUMOR: f64 = 30.0;
pub const HU_EFFUSION: f64 = 15.0;
pub const HU_CONSOLIDATION: f64 = -100.0;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("dims {0:?} too small: every axis must be >= 16")]
    DimsTooSmall(Dims3),
    #[error(transparent)]
    Vol(#[from] VolError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Lesion-free cohort.
    Healthy,
    /// Cohort with high-density anomalies drawn per the lesion
    /// probabilities.
    Diverse,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Healthy => "healthy",
            Profile::Diverse => "diverse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "healthy" => Some(Profile::Healthy),
            "diverse" => Some(Profile::Diverse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PhantomConfig {
    pub dims: Dims3,
    pub spacing: Spacing3,
    pub profile: Profile,
    pub tumor_prob: f64,
    pub effusion_prob: f64,
    pub consolidation_prob: f64,
    pub noise_sigma_hu: f64,
    pub seed: u64,
}

impl PhantomConfig {
    pub fn new(profile: Profile, seed: u64) -> Self {
        Self {
            dims: Dims3::new(40, 64, 64).expect("static dims"),
            spacing: Spacing3::new(2.0, 1.0, 1.0).expect("static spacing"),
            profile,
            tumor_prob: 0.6,
            effusion_prob: 0.6,
            consolidation_prob: 0.4,
            noise_sigma_hu: 15.0,
            seed,
        }
    }
}

/// A generated phantom: the image, its exact labelling, and the lesion
/// ground truth used by the experiments.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3,
    pub labels: LabelVolume,
    pub tumor_mask: Region3,
    pub effusion_mask: Region3,
    pub consolidation_mask: Region3,
}

#[derive(Clone, Copy)]
struct Ellipsoid {
    cz: f64,
    cy: f64,
    cx: f64,
    az: f64,
    ay: f64,
    ax: f64,
}

impl Ellipsoid {
    #[inline]
    fn contains(&self, z: f64, y: f64, x: f64) -> bool {
        let dz = (z - self.cz) / self.az;
        let dy = (y - self.cy) / self.ay;
        let dx = (x - self.cx) / self.ax;
        dz * dz + dy * dy + dx * dx <= 1.0
    }
}

/// Generate one phantom. Fully deterministic in the config (including the
/// seed): calling twice yields bit-identical results.
pub fn generate(cfg: &PhantomConfig) -> Result<Phantom, PhantomError> {
    let d = cfg.dims;
    if d.z < 16 || d.y < 16 || d.x < 16 {
        return Err(PhantomError::DimsTooSmall(d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (zf, yf, xf) = (d.z as f64, d.y as f64, d.x as f64);

    // Body: elliptical cylinder over all z, lightly jittered.
    let body_ay = 0.40 * yf * rng.random_range(0.95..1.02);
    let body_ax = 0.44 * xf * rng.random_range(0.95..1.02);
    let (body_cy, body_cx) = (0.5 * yf, 0.5 * xf);

    // Lungs: right (label 1, small x) and left (label 2). As in real
    // anatomy the right lung is the larger one and the left carries the
    // cardiac notch, so the two sides are locally distinguishable.
    let mut lungs = [Ellipsoid {
        cz: 0.0,
        cy: 0.0,
        cx: 0.0,
        az: 0.0,
        ay: 0.0,
        ax: 0.0,
    }; 2];
    for (k, base_cx, size) in [(0usize, 0.30, 1.06), (1usize, 0.70, 0.94)] {
        let az = 0.32 * zf * size * rng.random_range(0.90..1.05);
        let ay = 0.27 * yf * size * rng.random_range(0.90..1.05);
        let ax = 0.155 * xf * size * rng.random_range(0.90..1.05);
        let cz = 0.50 * zf + zf * rng.random_range(-0.02..0.02);
        let cy = 0.50 * yf + yf * rng.random_range(-0.02..0.02);
        let cx = base_cx * xf + xf * rng.random_range(-0.015..0.015);
        lungs[k] = Ellipsoid {
            cz,
            cy,
            cx,
            az,
            ay,
            ax,
        };
    }

    // Heart: a soft-tissue ellipsoid left of the midline, anterior, lower
    // half of the chest; it carves the cardiac notch out of the left lung.
    let heart = Ellipsoid {
        cz: lungs[1].cz + lungs[1].az * rng.random_range(0.15..0.30),
        cy: 0.44 * yf + yf * rng.random_range(-0.02..0.02),
        cx: 0.57 * xf + xf * rng.random_range(-0.01..0.02),
        az: 0.22 * zf * rng.random_range(0.9..1.1),
        ay: 0.17 * yf * rng.random_range(0.9..1.1),
        ax: 0.15 * xf * rng.random_range(0.9..1.1),
    };

    // Trachea: a z-aligned cylinder between the lungs, upper half of the
    // lung z-range, excluded from the lung labels.
    let trachea_r = 0.035 * xf * rng.random_range(0.9..1.1);
    let trachea_cx = 0.5 * xf;
    let trachea_cy = 0.46 * yf;
    let trachea_z0 = lungs[0].cz - lungs[0].az - 2.0;
    let trachea_z1 = lungs[0].cz;

    // Lesions (diverse profile only).
    let mut tumor: Option<(usize, Ellipsoid)> = None;
    let mut effusion: Option<(usize, f64)> = None; // (lung, y cut)
    let mut consolidation: Option<(usize, Ellipsoid)> = None;
    if cfg.profile == Profile::Diverse {
        if rng.random_range(0.0..1.0) < cfg.tumor_prob {
            let lung_idx = usize::from(rng.random_range(0.0..1.0) < 0.5);
            let lung = lungs[lung_idx];
            // Border-attached: center on the ellipsoid surface, biased to
            // the lateral (outward-facing) side so the other lung is never
            // touched.
            let theta: f64 = rng.random_range(-0.9..0.9); // polar offset from the equator
            let phi: f64 = rng.random_range(-1.0..1.0); // azimuth around the lateral axis
            let outward = if lung_idx == 0 { -1.0 } else { 1.0 };
            let uz = theta.sin();
            let uy = theta.cos() * phi.sin();
            let ux = outward * theta.cos() * phi.cos().abs();
            let r = rng.random_range(0.40..0.55) * lung.ax.min(lung.ay).min(lung.az);
            tumor = Some((
                lung_idx,
                Ellipsoid {
                    cz: lung.cz + uz * lung.az,
                    cy: lung.cy + uy * lung.ay,
                    cx: lung.cx + ux * lung.ax,
                    az: r,
                    ay: r,
                    ax: r,
                },
            ));
        }
        if rng.random_range(0.0..1.0) < cfg.effusion_prob {
            let lung_idx = usize::from(rng.random_range(0.0..1.0) < 0.5);
            let lung = lungs[lung_idx];
            // Dependent slab: the posterior (large-y) portion of the lung.
            let frac = rng.random_range(0.25..0.38);
            let y_cut = lung.cy + lung.ay - frac * 2.0 * lung.ay;
            effusion = Some((lung_idx, y_cut));
        }
        if rng.random_range(0.0..1.0) < cfg.consolidation_prob {
            let lung_idx = usize::from(rng.random_range(0.0..1.0) < 0.5);
            let lung = lungs[lung_idx];
            let blob = Ellipsoid {
                cz: lung.cz + lung.az * rng.random_range(-0.35..0.35),
                cy: lung.cy + lung.ay * rng.random_range(-0.35..0.35),
                cx: lung.cx + lung.ax * rng.random_range(-0.35..0.35),
                az: lung.az * rng.random_range(0.20..0.35),
                ay: lung.ay * rng.random_range(0.20..0.35),
                ax: lung.ax * rng.random_range(0.20..0.35),
            };
            consolidation = Some((lung_idx, blob));
        }
    }

    let count = d.count();
    let mut hu = vec![HU_AIR; count];
    let mut labels = vec![0u8; count];
    let mut tumor_mask = vec![false; count];
    let mut effusion_mask = vec![false; count];
    let mut consolidation_mask = vec![false; count];

    let in_body = |y: f64, x: f64| {
        let dy = (y - body_cy) / body_ay;
        let dx = (x - body_cx) / body_ax;
        dy * dy + dx * dx <= 1.0
    };

    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                let idx = d.index(z, y, x);
                let (fz, fy, fx) = (z as f64, y as f64, x as f64);
                if !in_body(fy, fx) {
                    continue;
                }
                hu[idx] = HU_BODY;
                for (k, lung) in lungs.iter().enumerate() {
                    if lung.contains(fz, fy, fx) {
                        hu[idx] = HU_LUNG;
                        labels[idx] = k as u8 + 1;
                        if let Some((li, blob)) = &consolidation {
                            if *li == k && blob.contains(fz, fy, fx) {
                                hu[idx] = HU_CONSOLIDATION;
                                consolidation_mask[idx] = true;
                            }
                        }
                        if let Some((li, y_cut)) = &effusion {
                            if *li == k && fy >= *y_cut {
                                hu[idx] = HU_EFFUSION;
                                effusion_mask[idx] = true;
                                consolidation_mask[idx] = false;
                            }
                        }
                        break;
                    }
                }
                // Cardiac notch: the heart displaces any lung tissue it
                // overlaps.
                if heart.contains(fz, fy, fx) {
                    hu[idx] = HU_HEART;
                    labels[idx] = 0;
                    effusion_mask[idx] = false;
                    consolidation_mask[idx] = false;
                }
                // Tumour: border-attached sphere, painted over whatever is
                // there (inside the body), carrying its lung's label.
                if let Some((li, sphere)) = &tumor {
                    if sphere.contains(fz, fy, fx) {
                        hu[idx] = HU_TUMOR;
                        labels[idx] = *li as u8 + 1;
                        tumor_mask[idx] = true;
                        effusion_mask[idx] = false;
                        consolidation_mask[idx] = false;
                    }
                }
                // Trachea trumps lungs: excluded from the labels.
                let dy_t = fy - trachea_cy;
                let dx_t = fx - trachea_cx;
                if fz >= trachea_z0
                    && fz <= trachea_z1
                    && dy_t * dy_t + dx_t * dx_t <= trachea_r * trachea_r
                {
                    hu[idx] = HU_TRACHEA;
                    labels[idx] = 0;
                    tumor_mask[idx] = false;
                    effusion_mask[idx] = false;
                    consolidation_mask[idx] = false;
                }
            }
        }
    }

    // Additive Gaussian HU noise over every voxel, in index order.
    let noise = Normal::new(0.0, cfg.noise_sigma_hu).expect("sigma >= 0");
    let values: Vec<i16> = hu
        .iter()
        .map(|&base| {
            let v = base + noise.sample(&mut rng);
            v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();

    let volume = Volume3::new(d, cfg.spacing, values)?;
    let labels = LabelVolume::new(d, cfg.spacing, labels)?;
    let region = |mask: Vec<bool>| {
        Region3::new(d, cfg.spacing, mask).expect("mask length matches dims")
    };
    Ok(Phantom {
        volume,
        labels,
        tumor_mask: region(tumor_mask),
        effusion_mask: region(effusion_mask),
        consolidation_mask: region(consolidation_mask),
    })
}

/// Write `n` phantoms (seeds `template.seed + i`) as RVOL1 pairs plus
/// lesion masks, emit a manifest CSV, and load it back (which validates
/// every referenced file).
pub fn generate_dataset(
    n: usize,
    template: &PhantomConfig,
    split: Split,
    out_dir: &Path,
) -> Result<DatasetManifest, PhantomError> {
    std::fs::create_dir_all(out_dir).map_err(VolError::Io)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let cfg = PhantomConfig {
            seed: template.seed.wrapping_add(i as u64),
            ..*template
        };
        let phantom = generate(&cfg)?;
        let case_id = format!("case_{i:03}");
        let image = format!("{case_id}.rvol");
        let mask = format!("{case_id}_mask.rvol");
        save_volume(&phantom.volume, &out_dir.join(&image))?;
        save_mask(&phantom.labels, &out_dir.join(&mask))?;
        let mut tags = vec![cfg.profile.as_str().to_string()];
        if !phantom.tumor_mask.is_empty() {
            let tumor_labels: Vec<u8> =
                phantom.tumor_mask.mask().iter().map(|&b| b as u8).collect();
            let tumor = LabelVolume::new(cfg.dims, cfg.spacing, tumor_labels)?;
            save_mask(&tumor, &out_dir.join(format!("{case_id}_tumor.rvol")))?;
            tags.push("tumor".into());
        }
        if !phantom.effusion_mask.is_empty() {
            let eff_labels: Vec<u8> =
                phantom.effusion_mask.mask().iter().map(|&b| b as u8).collect();
            let eff = LabelVolume::new(cfg.dims, cfg.spacing, eff_labels)?;
            save_mask(&eff, &out_dir.join(format!("{case_id}_effusion.rvol")))?;
            tags.push("effusion".into());
        }
        if !phantom.consolidation_mask.is_empty() {
            tags.push("consolidation".into());
        }
        rows.push((case_id, image, mask, split, tags));
    }
    let manifest_path = out_dir.join("manifest.csv");
    save_manifest(&rows, &manifest_path)?;
    Ok(load_manifest(&manifest_path)?)
}

/// Path of the tumour ground-truth mask for a manifest entry, by
/// convention next to the lung mask.
pub fn tumor_mask_path(mask_path: &Path) -> std::path::PathBuf {
    lesion_mask_path(mask_path, "tumor")
}

/// Path of the effusion ground-truth mask for a manifest entry.
pub fn effusion_mask_path(mask_path: &Path) -> std::path::PathBuf {
    lesion_mask_path(mask_path, "effusion")
}

fn lesion_mask_path(mask_path: &Path, kind: &str) -> std::path::PathBuf {
    let stem = mask_path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .trim_end_matches("_mask.rvol")
        .to_string();
    mask_path.with_file_name(format!("{stem}_{kind}.rvol"))
}
