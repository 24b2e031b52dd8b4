//! One-pass tracking. Ground truth enters only through the frame-0 box of
//! [`TrackInput`]; later frames are bare point clouds.

use std::time::{Duration, Instant};

use crate::autograd::Graph;
use crate::datasets::Sequence;
use crate::error::{Error, Result};
use crate::geometry::{crop_points_in_box, to_canonical, BBox3D, PointCloud};
use crate::unify::resample;

use super::data::{box_from_frame, prepare};
use super::{select_best_proposal, Head, TrackerModel};

/// What the tracker is allowed to see.
#[derive(Debug, Clone)]
pub struct TrackInput {
    pub sequence_id: String,
    pub category: String,
    pub frame_ids: Vec<u32>,
    pub init_cloud: PointCloud,
    pub init_box: BBox3D,
    /// Clouds of frames 1.., without labels.
    pub frames: Vec<PointCloud>,
}

impl TrackInput {
    /// Strips every label except the frame-0 target box.
    pub fn from_sequence(seq: &Sequence) -> Result<Self> {
        let first = seq.frames.first().ok_or(Error::Empty("sequence frames"))?;
        let init_box = first.target().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sequence {} has no target box in frame 0",
                seq.sequence_id
            ))
        })?;
        Ok(Self {
            sequence_id: seq.sequence_id.clone(),
            category: seq.category.clone(),
            frame_ids: seq.frames.iter().map(|f| f.frame_id).collect(),
            init_cloud: first.cloud.clone(),
            init_box,
            frames: seq.frames[1..].iter().map(|f| f.cloud.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameDiag {
    /// The search region held no points; the previous box was carried forward.
    pub empty_region: bool,
    /// The template/previous crop was empty.
    pub empty_reference: bool,
    /// The motion head pooled all current seeds because none passed the threshold.
    pub fallback: bool,
}

pub struct StepInput<'a> {
    /// Index of the frame being predicted (>= 1).
    pub index: usize,
    pub init_cloud: &'a PointCloud,
    pub init_box: &'a BBox3D,
    pub prev_cloud: &'a PointCloud,
    pub prev_box: BBox3D,
    pub cur_cloud: &'a PointCloud,
    /// Seed for point resampling in this frame.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub bbox: BBox3D,
    pub diag: FrameDiag,
}

/// Anything that maps the previous box and two clouds to the next box.
pub trait Predictor {
    fn predict(&self, step: &StepInput<'_>) -> Result<StepOutput>;
}

impl<F> Predictor for F
where
    F: Fn(&StepInput<'_>) -> Result<StepOutput>,
{
    fn predict(&self, step: &StepInput<'_>) -> Result<StepOutput> {
        self(step)
    }
}

/// Predicts no motion at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroMotion;

impl Predictor for ZeroMotion {
    fn predict(&self, step: &StepInput<'_>) -> Result<StepOutput> {
        Ok(StepOutput {
            bbox: step.prev_box,
            diag: FrameDiag::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    /// One box per frame; frame 0 is the given box.
    pub boxes: Vec<BBox3D>,
    pub diags: Vec<FrameDiag>,
}

pub fn frame_seed(seed: u64, index: usize) -> u64 {
    (seed ^ 0xC0FF_EE00)
        .wrapping_add(index as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn track_sequence<P: Predictor + ?Sized>(
    predictor: &P,
    input: &TrackInput,
    seed: u64,
) -> Result<TrackOutput> {
    let mut boxes = Vec::with_capacity(input.frames.len() + 1);
    let mut diags = Vec::with_capacity(input.frames.len() + 1);
    boxes.push(input.init_box);
    diags.push(FrameDiag::default());
    let mut prev_cloud = &input.init_cloud;
    for (i, cur) in input.frames.iter().enumerate() {
        let step = StepInput {
            index: i + 1,
            init_cloud: &input.init_cloud,
            init_box: &input.init_box,
            prev_cloud,
            prev_box: boxes[i],
            cur_cloud: cur,
            seed: frame_seed(seed, i + 1),
        };
        let out = predictor.predict(&step)?;
        boxes.push(out.bbox);
        diags.push(out.diag);
        prev_cloud = cur;
    }
    Ok(TrackOutput { boxes, diags })
}

/// Wall time of the three inference phases of one frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub preprocess: Duration,
    pub forward: Duration,
    pub postprocess: Duration,
}

impl TrackerModel {
    /// One tracking step with per-phase timing.
    pub fn predict_timed(&self, step: &StepInput<'_>) -> Result<(StepOutput, PhaseTimes)> {
        let t0 = Instant::now();
        let mut prep = prepare(
            &self.cfg,
            step.prev_cloud,
            &step.prev_box,
            step.cur_cloud,
            step.seed,
        )?;
        let mut diag = FrameDiag {
            empty_region: prep.search_empty,
            empty_reference: prep.reference_empty,
            fallback: false,
        };
        if prep.reference_empty && matches!(self.head, Head::Siamese(_)) {
            let crop = to_canonical(
                &crop_points_in_box(step.init_cloud, step.init_box),
                step.init_box,
            );
            let s = resample(crop, self.cfg.n_t, step.seed ^ 0x5EED);
            prep.reference = s.cloud;
            prep.reference_mask = vec![true; self.cfg.n_t];
        }
        let mut times = PhaseTimes {
            preprocess: t0.elapsed(),
            ..Default::default()
        };
        if prep.search_empty {
            return Ok((
                StepOutput {
                    bbox: step.prev_box,
                    diag,
                },
                times,
            ));
        }
        let t1 = Instant::now();
        let mut g = Graph::new(&self.store);
        let local = match &self.head {
            Head::Siamese(h) => {
                let out = h.forward(&mut g, &self.encoder, &self.cfg, &prep)?;
                times.forward = t1.elapsed();
                let t2 = Instant::now();
                let proposals = out.proposals(&g, &self.cfg, prep.extents)?;
                let (_, best) = select_best_proposal(&proposals)?;
                let b = &step.prev_box;
                let local = BBox3D::new(best.center(), b.w, b.h, b.l, best.theta)?;
                times.postprocess = t2.elapsed();
                local
            }
            Head::Motion(h) => {
                let out = h.forward(&mut g, &self.encoder, &self.cfg, &prep)?;
                times.forward = t1.elapsed();
                let t2 = Instant::now();
                let p = out.prediction(&g, &self.cfg, prep.extents)?;
                diag.fallback = p.fallback;
                let b = &step.prev_box;
                let local = BBox3D::new(p.center, b.w, b.h, b.l, p.dtheta)?;
                times.postprocess = t2.elapsed();
                local
            }
        };
        let t3 = Instant::now();
        let bbox = box_from_frame(&local, &step.prev_box);
        times.postprocess += t3.elapsed();
        Ok((StepOutput { bbox, diag }, times))
    }
}

impl Predictor for TrackerModel {
    fn predict(&self, step: &StepInput<'_>) -> Result<StepOutput> {
        Ok(self.predict_timed(step)?.0)
    }
}
