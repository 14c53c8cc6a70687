//! Shared test machinery: the brute-force surface-distance oracle
//! (independent of the k-d tree implementation path), exact-rational Dice,
//! deterministic mask generators, and the finite-difference gradient
//! checker.

#![allow(dead_code)]

use lungseg::metrics::Region3;
use lungseg::tinynet::{Tensor4, TensorStore};
use lungseg::volgrid::{Dims3, Spacing3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Brute-force surface-distance oracle
// ---------------------------------------------------------------------------

/// Boundary voxel centers in mm, re-derived from first principles: a
/// foreground voxel with any 6-neighbor background or out of bounds.
pub fn surface_points_brute(region: &Region3) -> Vec<[f64; 3]> {
    let d = region.dims;
    let sp = region.spacing;
    let mut points = Vec::new();
    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                if !region.get(z, y, x) {
                    continue;
                }
                let mut boundary = false;
                let neighbors: [(isize, isize, isize); 6] = [
                    (-1, 0, 0),
                    (1, 0, 0),
                    (0, -1, 0),
                    (0, 1, 0),
                    (0, 0, -1),
                    (0, 0, 1),
                ];
                for (dz, dy, dx) in neighbors {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if nz < 0
                        || nz >= d.z as isize
                        || ny < 0
                        || ny >= d.y as isize
                        || nx < 0
                        || nx >= d.x as isize
                        || !region.get(nz as usize, ny as usize, nx as usize)
                    {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    points.push([z as f64 * sp.z, y as f64 * sp.y, x as f64 * sp.x]);
                }
            }
        }
    }
    points
}

fn min_dist_to(from: &[f64; 3], to: &[[f64; 3]]) -> f64 {
    to.iter()
        .map(|p| {
            let dz = from[0] - p[0];
            let dy = from[1] - p[1];
            let dx = from[2] - p[2];
            dz * dz + dy * dy + dx * dx
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Linear-interpolation percentile on sorted data (rank = p/100 * (n-1)).
pub fn percentile_brute(sorted: &[f64], p: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

fn directed_brute(from: &[[f64; 3]], to: &[[f64; 3]], stat: impl Fn(&[f64]) -> f64) -> f64 {
    let mut dists: Vec<f64> = from.iter().map(|p| min_dist_to(p, to)).collect();
    dists.sort_by(f64::total_cmp);
    stat(&dists)
}

/// All-pairs HD95 oracle: symmetric max of directed 95th percentiles.
pub fn hd95_brute(x: &Region3, y: &Region3) -> Option<f64> {
    let xs = surface_points_brute(x);
    let ys = surface_points_brute(y);
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let fwd = directed_brute(&xs, &ys, |d| percentile_brute(d, 95.0));
    let bwd = directed_brute(&ys, &xs, |d| percentile_brute(d, 95.0));
    Some(fwd.max(bwd))
}

/// All-pairs 100th-percentile (max) directed Hausdorff, symmetrized.
pub fn hd100_brute(x: &Region3, y: &Region3) -> Option<f64> {
    let xs = surface_points_brute(x);
    let ys = surface_points_brute(y);
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let max = |d: &[f64]| *d.last().unwrap();
    Some(directed_brute(&xs, &ys, max).max(directed_brute(&ys, &xs, max)))
}

/// All-pairs MSD oracle: symmetric max of directed means.
pub fn msd_brute(x: &Region3, y: &Region3) -> Option<f64> {
    let xs = surface_points_brute(x);
    let ys = surface_points_brute(y);
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    Some(directed_brute(&xs, &ys, mean).max(directed_brute(&ys, &xs, mean)))
}

/// Exact-rational Dice: numerator and denominator as integers, reduced,
/// then divided once in f64 (correctly rounded).
pub fn dice_rational(x: &Region3, y: &Region3) -> f64 {
    let mut inter = 0u64;
    let mut nx = 0u64;
    let mut ny = 0u64;
    for (&a, &b) in x.mask().iter().zip(y.mask()) {
        inter += (a && b) as u64;
        nx += a as u64;
        ny += b as u64;
    }
    if nx + ny == 0 {
        return 1.0;
    }
    let (mut num, mut den) = (2 * inter, nx + ny);
    let g = gcd(num.max(1), den);
    num /= g;
    den /= g;
    num as f64 / den as f64
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ---------------------------------------------------------------------------
// Deterministic random masks
// ---------------------------------------------------------------------------

/// A random region on a random grid (dims up to `max_dim` per axis) with
/// random anisotropic spacing, deterministic in the seed. Guaranteed
/// non-empty.
pub fn random_region_pair(seed: u64, max_dim: usize) -> (Region3, Region3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims3::new(
        rng.random_range(1..=max_dim),
        rng.random_range(1..=max_dim),
        rng.random_range(1..=max_dim),
    )
    .unwrap();
    let spacing = Spacing3::new(
        rng.random_range(0.5..3.0),
        rng.random_range(0.5..3.0),
        rng.random_range(0.5..3.0),
    )
    .unwrap();
    let density_a = rng.random_range(0.05..0.6);
    let density_b = rng.random_range(0.05..0.6);
    let make = |density: f64, rng: &mut ChaCha8Rng| {
        let mut mask: Vec<bool> = (0..dims.count())
            .map(|_| rng.random_range(0.0..1.0) < density)
            .collect();
        if !mask.iter().any(|&b| b) {
            let idx = rng.random_range(0..mask.len());
            mask[idx] = true;
        }
        Region3::new(dims, spacing, mask).unwrap()
    };
    let a = make(density_a, &mut rng);
    let b = make(density_b, &mut rng);
    (a, b)
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Central-difference step used by all the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Required relative accuracy of analytic vs numerical gradients.
pub const FD_REL_TOL: f64 = 1e-4;

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Check an analytic gradient against central differences of `f` over every
/// element of `values`; `f` must be a pure function of the values.
pub fn check_grad_vec(
    values: &mut Vec<f64>,
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    context: &str,
) {
    assert_eq!(values.len(), analytic.len(), "{context}: gradient length");
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + FD_STEP;
        let plus = f(values);
        values[i] = orig - FD_STEP;
        let minus = f(values);
        values[i] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let err = rel_err(analytic[i], fd);
        assert!(
            err < FD_REL_TOL,
            "{context}: element {i}: analytic {} vs fd {fd} (rel {err:.3e})",
            analytic[i]
        );
    }
}

/// Deterministic tensor filled from a seeded stream, values in
/// [-amplitude, amplitude] with the near-zero band excluded (keeps ReLU
/// and max-pool finite differences away from their kinks).
pub fn random_tensor_kink_free(
    seed: u64,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    amplitude: f64,
) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * c * h * w)
        .map(|_| {
            let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            sign * rng.random_range(0.01..amplitude)
        })
        .collect();
    Tensor4::from_vec(n, c, h, w, data).unwrap()
}

/// Sum of elementwise product with a fixed weighting tensor: the scalar
/// functional used to test layer backward passes.
pub fn weighted_sum(out: &Tensor4, weights: &Tensor4) -> f64 {
    out.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
}

/// Total number of elements across every trainable tensor of a store.
pub fn trainable_element_count(store: &TensorStore, names: &[String]) -> usize {
    names.iter().map(|n| store.get(n).unwrap().len()).sum()
}
