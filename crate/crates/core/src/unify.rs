//! Size-scaled search regions, extent-normalized offsets and shape-aware labels,
//! together with the fixed-margin / fixed-radius baselines they replace.
//!
//! Extents are passed axis-ordered, as returned by [`BBox3D::axis_extents`]:
//! `(l, w, h)` for the canonical `(x, y, z)` axes.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_points_in_box, to_canonical, BBox3D, PointCloud, Vec3};

/// Margin of the fixed-distance baseline region, meters.
pub const FIXED_MARGIN_M: f64 = 2.0;
/// Radius of the fixed-distance baseline labels, meters.
pub const FIXED_LABEL_RADIUS_M: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegionScale {
    /// Every extent multiplied by `1 + alpha`.
    Relative { alpha: f64 },
    /// Every extent grown by `2 * margin`.
    Margin { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub bbox: BBox3D,
    pub scale: RegionScale,
}

impl RegionSpec {
    /// Fraction of the region volume occupied by `target`.
    pub fn foreground_ratio(&self, target: &BBox3D) -> f64 {
        target.volume() / self.bbox.volume()
    }
}

pub fn make_search_region(prev: &BBox3D, alpha: f64) -> Result<RegionSpec> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    let f = 1.0 + alpha;
    Ok(RegionSpec {
        bbox: prev.with_extents(prev.w * f, prev.h * f, prev.l * f)?,
        scale: RegionScale::Relative { alpha },
    })
}

pub fn make_fixed_margin_region(prev: &BBox3D, margin: f64) -> Result<RegionSpec> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin must be > 0, got {margin}"
        )));
    }
    let m = 2.0 * margin;
    Ok(RegionSpec {
        bbox: prev.with_extents(prev.w + m, prev.h + m, prev.l + m)?,
        scale: RegionScale::Margin { margin },
    })
}

/// Region points in the region's canonical frame, resampled to exactly `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSample {
    pub cloud: PointCloud,
    /// Number of scene points inside the region before resampling.
    pub cropped: usize,
    /// Set when the region was empty and the cloud is `n` copies of the origin.
    pub empty: bool,
}

/// Seeded subsample without replacement when the crop holds more than `n`
/// points; otherwise every cropped point plus draws with replacement.
pub fn sample_region_points(
    scene: &PointCloud,
    region: &RegionSpec,
    n: usize,
    seed: u64,
) -> Result<RegionSample> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let crop = to_canonical(&crop_points_in_box(scene, &region.bbox), &region.bbox);
    Ok(resample(crop, n, seed))
}

/// Resampling step of [`sample_region_points`], for points already in frame.
pub fn resample(cloud: PointCloud, n: usize, seed: u64) -> RegionSample {
    let count = cloud.len();
    if count == 0 {
        return RegionSample {
            cloud: PointCloud::new(vec![Vec3::ZERO; n]),
            cropped: 0,
            empty: true,
        };
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let out = if count == n {
        cloud
    } else if count > n {
        let mut idx = index::sample(&mut rng, count, n).into_vec();
        idx.sort_unstable();
        cloud.select(&idx)
    } else {
        let mut points = cloud.points.clone();
        points.extend((count..n).map(|_| cloud.points[rng.random_range(0..count)]));
        PointCloud::new(points)
    };
    RegionSample {
        cloud: out,
        cropped: count,
        empty: false,
    }
}

fn check_extents(ext: Vec3) -> Result<()> {
    if ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0 && ext.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "extents must be positive, got {ext:?}"
        )))
    }
}

/// Displacement divided per axis by the box extent along that axis.
pub fn normalize_offset(delta: Vec3, axis_extents: Vec3) -> Result<Vec3> {
    check_extents(axis_extents)?;
    Ok(Vec3::new(
        delta.x / axis_extents.x,
        delta.y / axis_extents.y,
        delta.z / axis_extents.z,
    ))
}

pub fn denormalize_offset(normalized: Vec3, axis_extents: Vec3) -> Result<Vec3> {
    check_extents(axis_extents)?;
    Ok(normalized.hadamard(axis_extents))
}

/// Regression target for one sample: normalized center offset plus yaw change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetTarget {
    pub normalized: Vec3,
    pub dtheta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub beta: f64,
}

impl LabelConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta <= 1.0 {
            Ok(Self { beta })
        } else {
            Err(Error::InvalidArgument(format!(
                "beta must lie in (0, 1], got {beta}"
            )))
        }
    }
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { beta: 0.4 }
    }
}

/// Positive iff inside the `beta`-scaled box centered at the canonical origin.
pub fn is_shape_aware_positive(p: Vec3, axis_extents: Vec3, beta: f64) -> bool {
    let half = axis_extents * (beta / 2.0);
    p.x.abs() <= half.x && p.y.abs() <= half.y && p.z.abs() <= half.z
}

pub fn shape_aware_labels(points: &PointCloud, axis_extents: Vec3, beta: f64) -> Result<Vec<bool>> {
    check_extents(axis_extents)?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    Ok(points
        .points
        .iter()
        .map(|&p| is_shape_aware_positive(p, axis_extents, beta))
        .collect())
}

/// Baseline labels: positive within `radius` of the canonical origin.
pub fn fixed_radius_labels(points: &PointCloud, radius: f64) -> Vec<bool> {
    points.points.iter().map(|p| p.norm() <= radius).collect()
}

/// How positives are assigned; the fixed radius is the ablation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelRule {
    ShapeAware { beta: f64 },
    FixedRadius { radius: f64 },
}

impl LabelRule {
    pub fn is_positive(&self, p: Vec3, axis_extents: Vec3) -> bool {
        match *self {
            LabelRule::ShapeAware { beta } => is_shape_aware_positive(p, axis_extents, beta),
            LabelRule::FixedRadius { radius } => p.norm() <= radius,
        }
    }
}
