//! Surface extraction and nearest-surface distance queries.
//!
//! Surfaces are the 6-connectivity boundary voxels of a binary region,
//! taken as unweighted voxel centers in physical millimetres (index times
//! spacing). Nearest-point queries run through a k-d tree; the all-pairs
//! brute force lives only in test code as the oracle.

use super::{MetricsError, Region3};

/// Physical-space (mm) coordinates of the boundary voxels of a region,
/// stored as (z, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
}

impl SurfacePointSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Extract the 6-connectivity boundary of a binary region. A foreground
/// voxel is on the surface iff at least one of its six axis neighbors is
/// background or out of bounds. An empty region yields an empty set.
pub fn extract_surface(region: &Region3) -> SurfacePointSet {
    let d = region.dims;
    let sp = region.spacing;
    let mut points = Vec::new();
    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                if !region.get(z, y, x) {
                    continue;
                }
                let exposed = (z == 0 || !region.get(z - 1, y, x))
                    || (z + 1 == d.z || !region.get(z + 1, y, x))
                    || (y == 0 || !region.get(z, y - 1, x))
                    || (y + 1 == d.y || !region.get(z, y + 1, x))
                    || (x == 0 || !region.get(z, y, x - 1))
                    || (x + 1 == d.x || !region.get(z, y, x + 1));
                if exposed {
                    points.push([z as f64 * sp.z, y as f64 * sp.y, x as f64 * sp.x]);
                }
            }
        }
    }
    SurfacePointSet { points }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    dz * dz + dy * dy + dx * dx
}

/// A static k-d tree over 3D points for nearest-neighbor queries.
pub struct KdTree3 {
    pts: Vec<[f64; 3]>,
}

impl KdTree3 {
    /// Build from a non-empty point set.
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut pts = points.to_vec();
        if !pts.is_empty() {
            build_range(&mut pts, 0);
        }
        Self { pts }
    }

    fn build_on(mut pts: Vec<[f64; 3]>) -> Self {
        if !pts.is_empty() {
            build_range(&mut pts, 0);
        }
        Self { pts }
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Squared distance from `q` to the nearest stored point.
    pub fn nearest_dist2(&self, q: &[f64; 3]) -> f64 {
        assert!(!self.pts.is_empty(), "query on empty KdTree3");
        let mut best = f64::INFINITY;
        nearest_in(&self.pts, q, 0, &mut best);
        best
    }
}

fn build_range(pts: &mut [[f64; 3]], depth: usize) {
    if pts.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, rest) = pts.split_at_mut(mid);
    build_range(left, depth + 1);
    build_range(&mut rest[1..], depth + 1);
}

fn nearest_in(pts: &[[f64; 3]], q: &[f64; 3], depth: usize, best: &mut f64) {
    if pts.is_empty() {
        return;
    }
    let mid = pts.len() / 2;
    let d2 = dist2(q, &pts[mid]);
    if d2 < *best {
        *best = d2;
    }
    if pts.len() == 1 {
        return;
    }
    let axis = depth % 3;
    let delta = q[axis] - pts[mid][axis];
    let (near, far): (&[[f64; 3]], &[[f64; 3]]) = if delta < 0.0 {
        (&pts[..mid], &pts[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid])
    };
    nearest_in(near, q, depth + 1, best);
    if delta * delta < *best {
        nearest_in(far, q, depth + 1, best);
    }
}

/// Distances from every point of `from` to its nearest point in `to`,
/// in millimetres, unsorted.
pub fn directed_nearest_distances(from: &SurfacePointSet, to: &SurfacePointSet) -> Vec<f64> {
    let tree = KdTree3::build_on(to.points.clone());
    from.points
        .iter()
        .map(|p| tree.nearest_dist2(p).sqrt())
        .collect()
}

/// Linear-interpolation percentile of a sorted slice, NumPy 'linear'
/// convention: rank = p/100 * (n-1).
pub fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn directed_stat(
    from: &SurfacePointSet,
    to: &SurfacePointSet,
    stat: impl Fn(&[f64]) -> f64,
) -> f64 {
    let mut d = directed_nearest_distances(from, to);
    d.sort_by(f64::total_cmp);
    stat(&d)
}

fn surfaces(x: &Region3, y: &Region3) -> Result<(SurfacePointSet, SurfacePointSet), MetricsError> {
    x.check_same_grid(y)?;
    let xs = extract_surface(x);
    let ys = extract_surface(y);
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricsError::UndefinedOnEmptyRegion);
    }
    Ok((xs, ys))
}

/// Robust Hausdorff distance: the symmetric max of the two directed 95th
/// percentile nearest-surface distances, in millimetres.
pub fn hd95(x: &Region3, y: &Region3) -> Result<f64, MetricsError> {
    let (xs, ys) = surfaces(x, y)?;
    let fwd = directed_stat(&xs, &ys, |d| percentile_linear(d, 95.0));
    let bwd = directed_stat(&ys, &xs, |d| percentile_linear(d, 95.0));
    Ok(fwd.max(bwd))
}

/// Mean surface distance: the symmetric max of the two directed mean
/// nearest-surface distances, in millimetres.
pub fn msd(x: &Region3, y: &Region3) -> Result<f64, MetricsError> {
    let (xs, ys) = surfaces(x, y)?;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let fwd = directed_stat(&xs, &ys, mean);
    let bwd = directed_stat(&ys, &xs, mean);
    Ok(fwd.max(bwd))
}
