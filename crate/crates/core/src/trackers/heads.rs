use crate::adaformer::Encoder;
use crate::autograd::{Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{BBox3D, PointCloud, Vec3};

use super::data::{PairTruth, Prepared};
use super::{ModelConfig, MAX_DTHETA};

/// Transition point of every smooth-L1 term.
pub const SMOOTH_L1_DELTA: f64 = 1.0;

/// One Siamese proposal in the previous-box frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub score: f64,
}

impl Proposal {
    pub fn center(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// Highest score wins; ties go to the lowest index.
pub fn select_best_proposal(proposals: &[Proposal]) -> Result<(usize, Proposal)> {
    let mut best: Option<(usize, Proposal)> = None;
    for (i, p) in proposals.iter().enumerate() {
        if best.is_none_or(|(_, b)| p.score > b.score) {
            best = Some((i, *p));
        }
    }
    best.ok_or(Error::Empty("proposals"))
}

/// Mean of the selected rows of `feats`, as a `[1 x d]` row.
pub fn masked_mean_pool_rows(g: &mut Graph<'_>, feats: Var, rows: &[usize]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Empty("pooled rows"));
    }
    let d = g.shape(feats)[1];
    let sel = g.gather_rows(feats, rows)?;
    let m = g.mean(sel, 0)?;
    g.reshape(m, &[1, d])
}

/// Lexicographic point order, so the heads see a canonical input order.
fn canonical_order(points: &[Vec3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
    });
    idx
}

fn unit_rows(cfg: &ModelConfig, points: &[Vec3], extents: Vec3) -> Result<Tensor> {
    let mut data = Vec::with_capacity(points.len() * 3);
    for &p in points {
        data.extend_from_slice(&cfg.to_units(p, extents)?.to_array());
    }
    Tensor::new(vec![points.len(), 3], data)
}

fn rows3(t: &Tensor, i: usize) -> Vec3 {
    let r = t.row(i);
    Vec3::new(r[0], r[1], r[2])
}

fn bounded_angle(g: &mut Graph<'_>, raw: Var) -> Var {
    let t = g.tanh(raw);
    g.scale(t, MAX_DTHETA)
}

/// Scalar loss plus its parts, for logging.
pub struct LossTerms {
    pub total: Var,
    pub cls: f64,
    pub off: f64,
    pub ang: f64,
    /// Seeds that carried an offset target.
    pub positives: usize,
    /// Set when no seed carried an offset target; the offset term is then 0.
    pub no_positive: bool,
}

fn combine(
    g: &mut Graph<'_>,
    terms: [Option<Var>; 3],
    lambda: [f64; 3],
) -> Result<(Var, [f64; 3])> {
    let mut total: Option<Var> = None;
    let mut vals = [0.0; 3];
    for (i, t) in terms.into_iter().enumerate() {
        let Some(t) = t else { continue };
        vals[i] = g.value(t).data()[0];
        let s = g.scale(t, lambda[i]);
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let total = total.ok_or(Error::Empty("loss terms"))?;
    Ok((total, vals))
}

/// Offset targets for the seeds inside `gt`, with per-row weights `1/count`.
fn offset_targets(
    cfg: &ModelConfig,
    seeds: &[Vec3],
    gt: &[&BBox3D],
    extents: Vec3,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let inside: Vec<bool> = seeds.iter().zip(gt).map(|(&p, b)| b.contains(p)).collect();
    let count = inside.iter().filter(|&&b| b).count();
    let mut target = Vec::with_capacity(seeds.len() * 3);
    let mut weight = Vec::with_capacity(seeds.len() * 3);
    for ((&p, b), &inn) in seeds.iter().zip(gt).zip(&inside) {
        let t = if inn {
            cfg.to_units(b.center - p, extents)?
        } else {
            Vec3::ZERO
        };
        target.extend_from_slice(&t.to_array());
        let w = if inn { 1.0 / count as f64 } else { 0.0 };
        weight.extend_from_slice(&[w; 3]);
    }
    Ok((target, weight, count))
}

/// Label of each displaced seed against its frame's ground-truth box.
fn displaced_labels(
    cfg: &ModelConfig,
    seeds: &[Vec3],
    disp: &Tensor,
    gt: &[&BBox3D],
    extents: Vec3,
) -> Result<Vec<f64>> {
    let rule = cfg.label_rule();
    seeds
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let q = p + cfg.from_units(rows3(disp, i), extents)?;
            let b = gt[i];
            Ok(if rule.is_positive(b.to_local(q), b.axis_extents()) {
                1.0
            } else {
                0.0
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SiameseHead {
    pub trunk: Mlp,
    pub offset: Linear,
    pub angle: Linear,
    pub score: Linear,
}

/// Graph handles of one Siamese pass; rows follow `seeds`.
pub struct SiameseGraph {
    /// Final-stage search seeds, previous-box frame.
    pub seeds: Vec<Vec3>,
    pub offsets: Var,
    pub theta: Var,
    pub logits: Var,
}

impl SiameseHead {
    pub fn new(store: &mut ParamStore, name: &str, feat_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            trunk: Mlp::new(
                store,
                &format!("{name}.trunk"),
                &[2 * feat_dim + 3, hidden, hidden],
            )?,
            offset: Linear::new(store, &format!("{name}.offset"), hidden, 3)?,
            angle: Linear::new(store, &format!("{name}.angle"), hidden, 1)?,
            score: Linear::new(store, &format!("{name}.score"), hidden, 1)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        encoder: &Encoder,
        cfg: &ModelConfig,
        prep: &Prepared,
    ) -> Result<SiameseGraph> {
        let encode = |g: &mut Graph<'_>, cloud: &PointCloud| -> Result<(Vec<Vec3>, Var)> {
            let order = canonical_order(&cloud.points);
            let sorted = cloud.select(&order);
            let feats = Tensor::new(
                vec![sorted.len(), 3],
                sorted.points.iter().flat_map(|p| p.to_array()).collect(),
            )?;
            let x = g.constant(feats);
            let out = encoder.forward(g, &sorted, x)?;
            let last = out.last();
            Ok((last.cloud.points.clone(), last.feats))
        };
        let (_, t_feats) = encode(g, &prep.reference)?;
        let (seeds, s_feats) = encode(g, &prep.search)?;
        let m = seeds.len();
        let all: Vec<usize> = (0..g.shape(t_feats)[0]).collect();
        let pooled = masked_mean_pool_rows(g, t_feats, &all)?;
        let pooled = g.gather_rows(pooled, &vec![0; m])?;
        let pos = g.constant(unit_rows(cfg, &seeds, prep.extents)?);
        let x = g.concat(&[s_feats, pooled, pos], 1)?;
        let h = self.trunk.forward(g, x)?;
        let h = g.relu(h);
        let offsets = self.offset.forward(g, h)?;
        let raw = self.angle.forward(g, h)?;
        let theta = bounded_angle(g, raw);
        let logits = self.score.forward(g, h)?;
        Ok(SiameseGraph {
            seeds,
            offsets,
            theta,
            logits,
        })
    }

    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        out: &SiameseGraph,
        cfg: &ModelConfig,
        prep: &Prepared,
        truth: &PairTruth,
        lambda: [f64; 3],
    ) -> Result<LossTerms> {
        let m = out.seeds.len();
        let gts = vec![&truth.cur; m];
        let offs = g.value(out.offsets).clone();
        let labels = displaced_labels(cfg, &out.seeds, &offs, &gts, prep.extents)?;
        let cls = g.bce_with_logits(out.logits, &labels)?;
        let (target, weight, count) = offset_targets(cfg, &out.seeds, &gts, prep.extents)?;
        let (off, ang) = if count > 0 {
            let off = g.smooth_l1(out.offsets, &target, &weight, SMOOTH_L1_DELTA)?;
            let w: Vec<f64> = weight.chunks(3).map(|c| c[0]).collect();
            let ang = g.smooth_l1(out.theta, &vec![truth.cur.yaw; m], &w, SMOOTH_L1_DELTA)?;
            (Some(off), Some(ang))
        } else {
            (None, None)
        };
        let (total, v) = combine(g, [Some(cls), off, ang], lambda)?;
        Ok(LossTerms {
            total,
            cls: v[0],
            off: v[1],
            ang: v[2],
            positives: count,
            no_positive: count == 0,
        })
    }
}

impl SiameseGraph {
    pub fn proposals(
        &self,
        g: &Graph<'_>,
        cfg: &ModelConfig,
        extents: Vec3,
    ) -> Result<Vec<Proposal>> {
        let (off, th, lg) = (
            g.value(self.offsets),
            g.value(self.theta),
            g.value(self.logits),
        );
        self.seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let c = s + cfg.from_units(rows3(off, i), extents)?;
                let logit = lg.data()[i];
                Ok(Proposal {
                    x: c.x,
                    y: c.y,
                    z: c.z,
                    theta: th.data()[i],
                    score: 1.0 / (1.0 + (-logit).exp()),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MotionHead {
    pub seed_trunk: Mlp,
    pub seg: Linear,
    pub vote: Linear,
    pub global: Mlp,
    pub motion: Linear,
    /// Direct path from the mean foreground vote to the motion output.
    pub vote_skip: Linear,
    pub dtheta: Linear,
}

/// Graph handles of one motion pass.
pub struct MotionGraph {
    /// Final-stage seeds of the concatenated cloud, previous-box frame.
    pub seeds: Vec<Vec3>,
    /// Whether each seed came from the current frame.
    pub is_cur: Vec<bool>,
    pub seg: Var,
    pub votes: Var,
    /// Seeds that fed the pooled descriptor.
    pub pooled_rows: Vec<usize>,
    /// Set when no current seed passed the threshold and all current seeds were pooled.
    pub fallback: bool,
    /// `[1 x 3]` center of the current box, in regression units.
    pub motion: Var,
    /// `[1 x 1]` yaw change.
    pub dtheta: Var,
}

/// Decoded motion output, previous-box frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPrediction {
    pub center: Vec3,
    pub dtheta: f64,
    pub fallback: bool,
}

impl MotionHead {
    pub fn new(store: &mut ParamStore, name: &str, feat_dim: usize, hidden: usize) -> Result<Self> {
        let vote_skip = Linear::new_no_bias(store, &format!("{name}.vote_skip"), 3, 3)?;
        let eye = Tensor::eye(3);
        *store.value_mut(vote_skip.weight) = eye;
        Ok(Self {
            seed_trunk: Mlp::new(
                store,
                &format!("{name}.seed_trunk"),
                &[feat_dim + 3, hidden, hidden],
            )?,
            seg: Linear::new(store, &format!("{name}.seg"), hidden, 1)?,
            vote: Linear::new(store, &format!("{name}.vote"), hidden, 3)?,
            global: Mlp::new(
                store,
                &format!("{name}.global"),
                &[feat_dim + 3, hidden, hidden],
            )?,
            motion: Linear::new(store, &format!("{name}.motion"), hidden, 3)?,
            vote_skip,
            dtheta: Linear::new(store, &format!("{name}.dtheta"), hidden, 1)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        encoder: &Encoder,
        cfg: &ModelConfig,
        prep: &Prepared,
    ) -> Result<MotionGraph> {
        let po = canonical_order(&prep.reference.points);
        let co = canonical_order(&prep.search.points);
        let n_prev = po.len();
        let mut points = Vec::with_capacity(po.len() + co.len());
        let mut data = Vec::with_capacity(5 * (po.len() + co.len()));
        for &i in &po {
            let p = prep.reference.points[i];
            points.push(p);
            let mask = if prep.reference_mask[i] { 1.0 } else { 0.0 };
            data.extend_from_slice(&[p.x, p.y, p.z, mask, 0.0]);
        }
        for &i in &co {
            let p = prep.search.points[i];
            points.push(p);
            data.extend_from_slice(&[p.x, p.y, p.z, 0.0, 1.0]);
        }
        let cloud = PointCloud::new(points);
        let x = g.constant(Tensor::new(vec![cloud.len(), 5], data)?);
        let enc = encoder.forward(g, &cloud, x)?;
        let last = enc.last();
        let seeds = last.cloud.points.clone();
        let is_cur: Vec<bool> = last.source.iter().map(|&s| s >= n_prev).collect();
        let feats = last.feats;

        let pos_t = unit_rows(cfg, &seeds, prep.extents)?;
        let pos = g.constant(pos_t);
        let xin = g.concat(&[feats, pos], 1)?;
        let h = self.seed_trunk.forward(g, xin)?;
        let h = g.relu(h);
        let seg = self.seg.forward(g, h)?;
        let votes = self.vote.forward(g, h)?;

        let seg_v = g.value(seg).data().to_vec();
        let thr = cfg.seg_threshold;
        let fg: Vec<usize> = (0..seeds.len())
            .filter(|&i| is_cur[i] && 1.0 / (1.0 + (-seg_v[i]).exp()) > thr)
            .collect();
        let (pooled_rows, fallback) = if fg.is_empty() {
            let cur: Vec<usize> = (0..seeds.len()).filter(|&i| is_cur[i]).collect();
            if cur.is_empty() {
                ((0..seeds.len()).collect(), true)
            } else {
                (cur, true)
            }
        } else {
            (fg, false)
        };
        let pooled = masked_mean_pool_rows(g, feats, &pooled_rows)?;
        let voted = g.add(pos, votes)?;
        let vote_mean = masked_mean_pool_rows(g, voted, &pooled_rows)?;
        let gin = g.concat(&[pooled, vote_mean], 1)?;
        let gh = self.global.forward(g, gin)?;
        let gh = g.relu(gh);
        let m1 = self.motion.forward(g, gh)?;
        let m2 = self.vote_skip.forward(g, vote_mean)?;
        let motion = g.add(m1, m2)?;
        let raw = self.dtheta.forward(g, gh)?;
        let dtheta = bounded_angle(g, raw);
        Ok(MotionGraph {
            seeds,
            is_cur,
            seg,
            votes,
            pooled_rows,
            fallback,
            motion,
            dtheta,
        })
    }

    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        out: &MotionGraph,
        cfg: &ModelConfig,
        prep: &Prepared,
        truth: &PairTruth,
        lambda: [f64; 3],
    ) -> Result<LossTerms> {
        let gts: Vec<&BBox3D> = out
            .is_cur
            .iter()
            .map(|&c| if c { &truth.cur } else { &truth.prev })
            .collect();
        let votes = g.value(out.votes).clone();
        let labels = displaced_labels(cfg, &out.seeds, &votes, &gts, prep.extents)?;
        let cls = g.bce_with_logits(out.seg, &labels)?;
        let (target, weight, count) = offset_targets(cfg, &out.seeds, &gts, prep.extents)?;
        let center = cfg.to_units(truth.cur.center, prep.extents)?.to_array();
        let motion_term = g.smooth_l1(out.motion, &center, &[1.0; 3], SMOOTH_L1_DELTA)?;
        let off = if count > 0 {
            let v = g.smooth_l1(out.votes, &target, &weight, SMOOTH_L1_DELTA)?;
            g.add(v, motion_term)?
        } else {
            motion_term
        };
        let ang = g.smooth_l1(out.dtheta, &[truth.cur.yaw], &[1.0], SMOOTH_L1_DELTA)?;
        let (total, v) = combine(g, [Some(cls), Some(off), Some(ang)], lambda)?;
        Ok(LossTerms {
            total,
            cls: v[0],
            off: v[1],
            ang: v[2],
            positives: count,
            no_positive: count == 0,
        })
    }
}

impl MotionGraph {
    pub fn prediction(
        &self,
        g: &Graph<'_>,
        cfg: &ModelConfig,
        extents: Vec3,
    ) -> Result<MotionPrediction> {
        let m = g.value(self.motion);
        Ok(MotionPrediction {
            center: cfg.from_units(rows3(m, 0), extents)?,
            dtheta: g.value(self.dtheta).data()[0],
            fallback: self.fallback,
        })
    }
}
