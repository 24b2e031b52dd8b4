use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Graph};
use crate::datasets::Sequence;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, BBox3D, Vec3};
use crate::io_util::write_atomic;

use super::data::{prepare, PairTruth, Prepared};
use super::{Head, LossTerms, TrackerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` down to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub batch: usize,
    pub steps: usize,
    pub lambda_cls: f64,
    pub lambda_off: f64,
    pub lambda_ang: f64,
    pub seed: u64,
    /// Std of the previous-box center jitter, as a fraction of each extent.
    pub center_jitter: f64,
    /// Std of the previous-box yaw jitter, radians.
    pub yaw_jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            schedule: LrSchedule::Cosine,
            batch: 8,
            steps: 1000,
            lambda_cls: 1.0,
            lambda_off: 1.0,
            lambda_ang: 1.0,
            seed: 0,
            center_jitter: 0.1,
            yaw_jitter: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if self.batch == 0 || self.steps == 0 {
            return bad("batch and steps must be >= 1");
        }
        let lam = [self.lambda_cls, self.lambda_off, self.lambda_ang];
        if lam.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("loss weights must be finite and >= 0");
        }
        if !(self.center_jitter >= 0.0 && self.yaw_jitter >= 0.0) {
            return bad("jitter must be >= 0");
        }
        Ok(())
    }

    /// Learning rate used at `step` (1-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = (step - 1) as f64 / self.steps as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn lambda(&self) -> [f64; 3] {
        [self.lambda_cls, self.lambda_off, self.lambda_ang]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub cls: f64,
    pub off: f64,
    pub ang: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub losses: Vec<LossRecord>,
}

impl TrainOutput {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.losses {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// `(sequence, frame)` pairs whose frame and predecessor both carry the target.
pub fn training_pairs(seqs: &[Sequence]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        for t in 1..s.frames.len() {
            if s.frames[t - 1].target().is_some() && s.frames[t].target().is_some() {
                out.push((si, t));
            }
        }
    }
    out
}

/// Moves `b` by Gaussian noise scaled to its own extents, in its own frame.
fn jitter_box(b: &BBox3D, cfg: &TrainConfig, rng: &mut Xoshiro256PlusPlus) -> Result<BBox3D> {
    if cfg.center_jitter == 0.0 && cfg.yaw_jitter == 0.0 {
        return Ok(*b);
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let ext = b.axis_extents();
    let local =
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)).hadamard(ext) * cfg.center_jitter;
    let yaw = normalize_angle(b.yaw + cfg.yaw_jitter * n.sample(rng));
    BBox3D::new(b.from_local(local), b.w, b.h, b.l, yaw)
}

/// One training example: prepared inputs plus ground truth in the same frame.
pub struct Example {
    pub prep: Prepared,
    pub truth: PairTruth,
}

fn draw_example(
    model: &TrackerModel,
    seqs: &[Sequence],
    pair: (usize, usize),
    cfg: &TrainConfig,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<Example> {
    let seq = &seqs[pair.0];
    let (prev, cur) = (&seq.frames[pair.1 - 1], &seq.frames[pair.1]);
    let prev_gt = prev.target().expect("pair has target");
    let cur_gt = cur.target().expect("pair has target");
    let prev_box = jitter_box(&prev_gt, cfg, rng)?;
    let prep = prepare(&model.cfg, &prev.cloud, &prev_box, &cur.cloud, rng.random())?;
    let truth = PairTruth::new(&prev_gt, &cur_gt, &prev_box);
    Ok(Example { prep, truth })
}

impl TrackerModel {
    /// Forward pass plus loss on one example.
    pub fn loss(&self, g: &mut Graph<'_>, ex: &Example, lambda: [f64; 3]) -> Result<LossTerms> {
        match &self.head {
            Head::Siamese(h) => {
                let out = h.forward(g, &self.encoder, &self.cfg, &ex.prep)?;
                h.loss(g, &out, &self.cfg, &ex.prep, &ex.truth, lambda)
            }
            Head::Motion(h) => {
                let out = h.forward(g, &self.encoder, &self.cfg, &ex.prep)?;
                h.loss(g, &out, &self.cfg, &ex.prep, &ex.truth, lambda)
            }
        }
    }
}

/// Seeded minibatch Adam on jittered consecutive-frame pairs.
pub fn train(
    model: &mut TrackerModel,
    seqs: &[Sequence],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let pairs = training_pairs(seqs);
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let lambda = cfg.lambda();
    let inv = 1.0 / cfg.batch as f64;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        model.store.zero_grads();
        let mut rec = LossRecord {
            step,
            total: 0.0,
            cls: 0.0,
            off: 0.0,
            ang: 0.0,
        };
        let mut grads = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let pair = pairs[rng.random_range(0..pairs.len())];
            let ex = draw_example(model, seqs, pair, cfg, &mut rng)?;
            let mut g = Graph::new(&model.store);
            let terms = model.loss(&mut g, &ex, lambda)?;
            let total = g.value(terms.total).data()[0];
            if !total.is_finite() {
                return Err(Error::Diverged { step });
            }
            rec.total += total * inv;
            rec.cls += terms.cls * inv;
            rec.off += terms.off * inv;
            rec.ang += terms.ang * inv;
            grads.push(g.backward(terms.total)?);
        }
        for gr in &grads {
            gr.accumulate_into(&mut model.store);
        }
        model.store.scale_grads(inv);
        if model.store.iter().any(|p| !p.grad.all_finite()) {
            return Err(Error::Diverged { step });
        }
        adam.cfg.lr = cfg.lr_at(step);
        adam.step(&mut model.store);
        losses.push(rec);
    }
    Ok(TrainOutput { losses })
}
