//! Two tracking heads on the shared encoder: a Siamese head that offsets
//! search seeds toward the target center and scores them, and a
//! motion-centric head that segments a two-frame cloud and regresses the
//! relative motion directly. Both run in the canonical frame of the previous box.

pub mod data;
mod heads;
mod track;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaformer::{Encoder, EncoderConfig};
use crate::autograd::{model_io, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::unify::{denormalize_offset, normalize_offset, LabelRule, FIXED_LABEL_RADIUS_M};

pub use data::{box_from_frame, box_to_frame, prepare, PairTruth, Prepared};
pub use heads::{
    masked_mean_pool_rows, select_best_proposal, LossTerms, MotionGraph, MotionHead,
    MotionPrediction, Proposal, SiameseGraph, SiameseHead,
};
pub use track::{
    frame_seed, track_sequence, FrameDiag, PhaseTimes, Predictor, StepInput, StepOutput,
    TrackInput, TrackOutput, ZeroMotion,
};
pub use train::{train, training_pairs, Example, LossRecord, LrSchedule, TrainConfig, TrainOutput};

/// Upper bound on predicted yaw change per frame, radians.
pub const MAX_DTHETA: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Siamese,
    Motion,
}

impl Paradigm {
    /// Input channels: xyz, plus prior mask and frame tag for the motion head.
    pub fn input_dim(self) -> usize {
        match self {
            Paradigm::Siamese => 3,
            Paradigm::Motion => 5,
        }
    }
}

/// Off-switches for the three unified components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub adaformer: bool,
    pub unified_inputs: bool,
    pub unified_objective: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::all_on()
    }
}

impl Ablation {
    pub fn all_on() -> Self {
        Self {
            adaformer: true,
            unified_inputs: true,
            unified_objective: true,
        }
    }

    pub fn all_off() -> Self {
        Self {
            adaformer: false,
            unified_inputs: false,
            unified_objective: false,
        }
    }

    /// All eight switch combinations, all-on first.
    pub fn matrix() -> Vec<Ablation> {
        (0..8u8)
            .map(|bits| Ablation {
                adaformer: bits & 1 == 0,
                unified_inputs: bits & 2 == 0,
                unified_objective: bits & 4 == 0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub paradigm: Paradigm,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    /// Template (Siamese) or previous-frame (motion) point count.
    pub n_t: usize,
    /// Search-region point count.
    pub n_s: usize,
    pub alpha: f64,
    pub beta: f64,
    pub ablation: Ablation,
    pub seg_threshold: f64,
}

impl ModelConfig {
    /// Three-stage encoder at toy scale.
    pub fn standard(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            encoder: EncoderConfig::standard(paradigm.input_dim()),
            head_hidden: 64,
            n_t: 128,
            n_s: 256,
            alpha: 1.0,
            beta: 0.4,
            ablation: Ablation::all_on(),
            seg_threshold: 0.5,
        }
    }

    /// Small configuration that trains in minutes on one core.
    pub fn small(paradigm: Paradigm) -> Self {
        Self {
            encoder: EncoderConfig::uniform(
                paradigm.input_dim(),
                &[64, 32, 16],
                &[0.3, 0.6, 1.2],
                &[16, 32, 48],
                8,
                16,
            ),
            head_hidden: 48,
            n_t: 64,
            n_s: 128,
            ..Self::standard(paradigm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.encoder.in_dim() != self.paradigm.input_dim() {
            return bad(format!(
                "encoder input width {} does not match the {:?} head ({})",
                self.encoder.in_dim(),
                self.paradigm,
                self.paradigm.input_dim()
            ));
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be positive".into());
        }
        let need = self.encoder.min_points();
        let have_t = match self.paradigm {
            Paradigm::Siamese => self.n_t,
            Paradigm::Motion => self.n_t + self.n_s,
        };
        if self.n_s < need || have_t < need {
            return bad(format!(
                "n_t={} / n_s={} too small for an encoder sampling {need} points",
                self.n_t, self.n_s
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.seg_threshold > 0.0 && self.seg_threshold < 1.0) {
            return bad(format!(
                "seg_threshold must lie in (0, 1), got {}",
                self.seg_threshold
            ));
        }
        Ok(())
    }

    pub fn label_rule(&self) -> LabelRule {
        if self.ablation.unified_objective {
            LabelRule::ShapeAware { beta: self.beta }
        } else {
            LabelRule::FixedRadius {
                radius: FIXED_LABEL_RADIUS_M,
            }
        }
    }

    /// Displacement in regression units: extent-normalized, or meters when
    /// the unified objective is switched off.
    pub fn to_units(&self, delta: Vec3, extents: Vec3) -> Result<Vec3> {
        if self.ablation.unified_objective {
            normalize_offset(delta, extents)
        } else {
            Ok(delta)
        }
    }

    pub fn from_units(&self, v: Vec3, extents: Vec3) -> Result<Vec3> {
        if self.ablation.unified_objective {
            denormalize_offset(v, extents)
        } else {
            Ok(v)
        }
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Siamese(SiameseHead),
    Motion(MotionHead),
}

#[derive(Debug, Clone)]
pub struct TrackerModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: Head,
}

impl TrackerModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let mut encoder = Encoder::new(&mut store, "encoder", &cfg.encoder)?;
        encoder.set_deform_enabled(cfg.ablation.adaformer);
        let d = cfg.encoder.out_dim();
        let head = match cfg.paradigm {
            Paradigm::Siamese => {
                Head::Siamese(SiameseHead::new(&mut store, "head", d, cfg.head_hidden)?)
            }
            Paradigm::Motion => {
                Head::Motion(MotionHead::new(&mut store, "head", d, cfg.head_hidden)?)
            }
        };
        Ok(Self {
            cfg,
            store,
            encoder,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        model_io::save(path, &self.store, serde_json::to_value(&self.cfg)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = model_io::load(path)?;
        let cfg: ModelConfig = serde_json::from_value(manifest.meta)?;
        let mut model = Self::new(cfg, 0)?;
        model_io::assign(&mut model.store, tensors)?;
        Ok(model)
    }
}
