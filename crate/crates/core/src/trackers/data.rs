//! Turning (previous box, previous cloud, current cloud) into network inputs.
//! Training and tracking share this path; only training attaches ground truth.

use crate::error::Result;
use crate::geometry::{
    crop_points_in_box, normalize_angle, to_canonical, BBox3D, PointCloud, Vec3,
};
use crate::unify::{
    make_fixed_margin_region, make_search_region, resample, sample_region_points, RegionSpec,
    FIXED_MARGIN_M,
};

use super::{ModelConfig, Paradigm};

/// Expresses `b` in the canonical frame of `frame`.
pub fn box_to_frame(b: &BBox3D, frame: &BBox3D) -> BBox3D {
    BBox3D::new(
        frame.to_local(b.center),
        b.w,
        b.h,
        b.l,
        normalize_angle(b.yaw - frame.yaw),
    )
    .expect("valid box stays valid")
}

/// Inverse of [`box_to_frame`].
pub fn box_from_frame(b: &BBox3D, frame: &BBox3D) -> BBox3D {
    BBox3D::new(
        frame.from_local(b.center),
        b.w,
        b.h,
        b.l,
        normalize_angle(b.yaw + frame.yaw),
    )
    .expect("valid box stays valid")
}

/// Network inputs for one frame, all in the canonical frame of `prev_box`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub prev_box: BBox3D,
    pub region: RegionSpec,
    /// Axis-ordered extents of the tracked object.
    pub extents: Vec3,
    /// Siamese: previous-frame points inside `prev_box`.
    /// Motion: previous-frame points inside the region.
    pub reference: PointCloud,
    /// Motion only: reference points inside `prev_box`.
    pub reference_mask: Vec<bool>,
    /// Current-frame points inside the region.
    pub search: PointCloud,
    pub search_empty: bool,
    pub reference_empty: bool,
}

fn region_for(cfg: &ModelConfig, prev_box: &BBox3D) -> Result<RegionSpec> {
    if cfg.ablation.unified_inputs {
        make_search_region(prev_box, cfg.alpha)
    } else {
        make_fixed_margin_region(prev_box, FIXED_MARGIN_M)
    }
}

pub fn prepare(
    cfg: &ModelConfig,
    prev_cloud: &PointCloud,
    prev_box: &BBox3D,
    cur_cloud: &PointCloud,
    seed: u64,
) -> Result<Prepared> {
    let region = region_for(cfg, prev_box)?;
    let search = sample_region_points(cur_cloud, &region, cfg.n_s, seed)?;
    let (reference, reference_empty, mask) = match cfg.paradigm {
        Paradigm::Siamese => {
            let crop = to_canonical(&crop_points_in_box(prev_cloud, prev_box), prev_box);
            let s = resample(crop, cfg.n_t, seed ^ 0x5EED);
            let mask = vec![true; s.cloud.len()];
            (s.cloud, s.empty, mask)
        }
        Paradigm::Motion => {
            let s = sample_region_points(prev_cloud, &region, cfg.n_t, seed ^ 0x5EED)?;
            let half = prev_box.axis_extents() * 0.5;
            let mask = s
                .cloud
                .points
                .iter()
                .map(|p| {
                    !s.empty && p.x.abs() <= half.x && p.y.abs() <= half.y && p.z.abs() <= half.z
                })
                .collect();
            (s.cloud, s.empty, mask)
        }
    };
    Ok(Prepared {
        prev_box: *prev_box,
        region,
        extents: prev_box.axis_extents(),
        reference,
        reference_mask: mask,
        search: search.cloud,
        search_empty: search.empty,
        reference_empty,
    })
}

/// Ground truth for one prepared pair, in the `prev_box` frame.
#[derive(Debug, Clone, Copy)]
pub struct PairTruth {
    pub prev: BBox3D,
    pub cur: BBox3D,
}

impl PairTruth {
    pub fn new(prev_gt: &BBox3D, cur_gt: &BBox3D, frame: &BBox3D) -> Self {
        Self {
            prev: box_to_frame(prev_gt, frame),
            cur: box_to_frame(cur_gt, frame),
        }
    }
}
