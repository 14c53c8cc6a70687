//! Training-time stochastic augmentation: random rotation, non-linear
//! deformation, and Gaussian noise. Image and label planes always receive
//! the same geometric transform; images are sampled bilinearly, labels
//! nearest-neighbor so they are never interpolated.
//!
//! Every function is deterministic given its RNG: augmentation streams are
//! split per sample index by the training loop, so concurrency cannot
//! change results.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::volgrid::{LabelPlane, Slice2};

/// Declared defaults; all magnitudes are configuration, not fixed facts.
#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    /// Rotation angle is uniform in [-rot_deg, +rot_deg].
    pub rot_deg: f64,
    /// Std-dev of the control-grid displacements, in pixels.
    pub elastic_sigma_px: f64,
    /// Control grid is elastic_grid x elastic_grid points.
    pub elastic_grid: usize,
    /// Std-dev of the additive intensity noise (normalized units).
    pub noise_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rot_deg: 10.0,
            elastic_sigma_px: 6.0,
            elastic_grid: 4,
            noise_sigma: 0.02,
        }
    }
}

#[inline]
fn bilinear_zero_fill(values: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
        return 0.0;
    }
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let v00 = values[y0 * w + x0] as f64;
    let v01 = values[y0 * w + x1] as f64;
    let v10 = values[y1 * w + x0] as f64;
    let v11 = values[y1 * w + x1] as f64;
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    (top + (bot - top) * fy) as f32
}

#[inline]
fn nearest_zero_fill(values: &[u8], h: usize, w: usize, sy: f64, sx: f64) -> u8 {
    let ny = (sy + 0.5).floor();
    let nx = (sx + 0.5).floor();
    if ny < 0.0 || nx < 0.0 || ny >= h as f64 || nx >= w as f64 {
        return 0;
    }
    values[ny as usize * w + nx as usize]
}

/// Rotate an image/label pair by `angle_deg` about the plane center.
/// Image bilinear, label nearest; out-of-frame samples fill with 0.
pub fn rotate_pair(img: &Slice2, lab: &LabelPlane, angle_deg: f64) -> (Slice2, LabelPlane) {
    assert_eq!((img.h, img.w), (lab.h, lab.w), "paired planes must match");
    let (h, w) = (img.h, img.w);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let mut out_img = vec![0.0f32; h * w];
    let mut out_lab = vec![0u8; h * w];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            // Inverse rotation of the output coordinate.
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            out_img[y * w + x] = bilinear_zero_fill(img.values(), h, w, sy, sx);
            out_lab[y * w + x] = nearest_zero_fill(&lab.values, h, w, sy, sx);
        }
    }
    (
        Slice2::new(h, w, out_img).expect("dims preserved"),
        LabelPlane::new(h, w, out_lab).expect("dims preserved"),
    )
}

/// Rotate by a random angle uniform in [-params.rot_deg, +params.rot_deg].
pub fn random_rotation<R: Rng>(
    img: &Slice2,
    lab: &LabelPlane,
    rng: &mut R,
    params: &AugmentParams,
) -> (Slice2, LabelPlane) {
    let angle = if params.rot_deg == 0.0 {
        0.0
    } else {
        rng.random_range(-params.rot_deg..=params.rot_deg)
    };
    rotate_pair(img, lab, angle)
}

/// A dense per-pixel displacement field (dy, dx in pixels).
pub struct DisplacementField {
    pub h: usize,
    pub w: usize,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
}

impl DisplacementField {
    pub fn zero(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            dy: vec![0.0; h * w],
            dx: vec![0.0; h * w],
        }
    }
}

/// Catmull-Rom kernel weights for fractional position t in [0, 1), applied
/// to the four samples at offsets -1, 0, 1, 2.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t + t2 - 0.5 * t3,
        1.0 - 2.5 * t2 + 1.5 * t3,
        0.5 * t + 2.0 * t2 - 1.5 * t3,
        -0.5 * t2 + 0.5 * t3,
    ]
}

fn bicubic_upsample_grid(ctrl: &[f64], g: usize, h: usize, w: usize) -> Vec<f64> {
    // Control point j sits at image coordinate j*(len-1)/(g-1); the field is
    // sampled back on the full pixel grid. Indices clamp at the edges.
    let mut out = vec![0.0; h * w];
    let clamp = |i: isize| -> usize { i.clamp(0, g as isize - 1) as usize };
    for y in 0..h {
        let u = if h > 1 {
            y as f64 * (g - 1) as f64 / (h - 1) as f64
        } else {
            0.0
        };
        let iy = u.floor().min((g - 2) as f64).max(0.0);
        let ty = u - iy;
        let wy = catmull_rom(ty);
        let iy = iy as isize;
        for x in 0..w {
            let v = if w > 1 {
                x as f64 * (g - 1) as f64 / (w - 1) as f64
            } else {
                0.0
            };
            let ix = v.floor().min((g - 2) as f64).max(0.0);
            let tx = v - ix;
            let wx = catmull_rom(tx);
            let ix = ix as isize;
            let mut acc = 0.0;
            for (a, &wya) in wy.iter().enumerate() {
                let gy = clamp(iy + a as isize - 1);
                for (b, &wxb) in wx.iter().enumerate() {
                    let gx = clamp(ix + b as isize - 1);
                    acc += wya * wxb * ctrl[gy * g + gx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Draw a coarse control grid of Normal(0, sigma) displacements per axis
/// and bicubic-upsample it to a dense field.
pub fn elastic_field<R: Rng>(
    h: usize,
    w: usize,
    rng: &mut R,
    params: &AugmentParams,
) -> DisplacementField {
    let g = params.elastic_grid.max(2);
    let normal = Normal::new(0.0, params.elastic_sigma_px).expect("sigma >= 0");
    let ctrl_y: Vec<f64> = (0..g * g).map(|_| normal.sample(rng)).collect();
    let ctrl_x: Vec<f64> = (0..g * g).map(|_| normal.sample(rng)).collect();
    DisplacementField {
        h,
        w,
        dy: bicubic_upsample_grid(&ctrl_y, g, h, w),
        dx: bicubic_upsample_grid(&ctrl_x, g, h, w),
    }
}

/// Warp a pair through a displacement field: output(p) = input(p + d(p)).
/// Sample coordinates clamp to the frame, so a constant image stays
/// constant under any field.
pub fn apply_displacement_field(
    img: &Slice2,
    lab: &LabelPlane,
    field: &DisplacementField,
) -> (Slice2, LabelPlane) {
    assert_eq!((img.h, img.w), (lab.h, lab.w), "paired planes must match");
    assert_eq!((img.h, img.w), (field.h, field.w), "field must match planes");
    let (h, w) = (img.h, img.w);
    let mut out_img = vec![0.0f32; h * w];
    let mut out_lab = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let sy = (y as f64 + field.dy[idx]).clamp(0.0, (h - 1) as f64);
            let sx = (x as f64 + field.dx[idx]).clamp(0.0, (w - 1) as f64);
            out_img[idx] = bilinear_zero_fill(img.values(), h, w, sy, sx);
            out_lab[idx] = nearest_zero_fill(&lab.values, h, w, sy, sx);
        }
    }
    (
        Slice2::new(h, w, out_img).expect("dims preserved"),
        LabelPlane::new(h, w, out_lab).expect("dims preserved"),
    )
}

/// Random non-linear deformation of an image/label pair.
pub fn elastic_deform<R: Rng>(
    img: &Slice2,
    lab: &LabelPlane,
    rng: &mut R,
    params: &AugmentParams,
) -> (Slice2, LabelPlane) {
    let field = elastic_field(img.h, img.w, rng, params);
    apply_displacement_field(img, lab, &field)
}

/// Add i.i.d. Normal(0, sigma) noise to a normalized plane, clamped back
/// to [0, 1].
pub fn gaussian_noise<R: Rng>(img: &Slice2, rng: &mut R, sigma: f64) -> Slice2 {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    let values = img
        .values()
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Slice2::new(img.h, img.w, values).expect("dims preserved")
}

/// The full training augmentation chain: rotation, elastic deformation,
/// then intensity noise.
pub fn augment_pair<R: Rng>(
    img: &Slice2,
    lab: &LabelPlane,
    rng: &mut R,
    params: &AugmentParams,
) -> (Slice2, LabelPlane) {
    let (img, lab) = random_rotation(img, lab, rng, params);
    let (img, lab) = elastic_deform(&img, &lab, rng, params);
    let img = gaussian_noise(&img, rng, params.noise_sigma);
    (img, lab)
}
