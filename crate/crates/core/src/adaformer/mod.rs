//! Hierarchical point encoder built from deformable-group vector-attention blocks.
//!
//! Each block starts from a fixed-radius ball around every sampled center,
//! regresses a scale/rotation transform for that ball from the pooled member
//! features and offsets, re-gathers members under the transform, and mixes
//! member features with per-channel (vector) attention.

pub mod deform;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{ball_query_at, farthest_point_sample, GroupIndex, PointCloud, Vec3};

pub use deform::{build_transform, deform_group, DeformParams, DeformTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub k: usize,
    /// Base radius of the default group, meters.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub samples: usize,
    pub block: BlockConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub stages: Vec<StageConfig>,
    /// Hidden width of the position-embedding and group-regression MLPs.
    pub hidden: usize,
}

impl EncoderConfig {
    /// Three stages with the given input width: 128/64/32 samples,
    /// radii 0.3/0.6/1.2 m, k=16, widths 32/64/128.
    pub fn standard(in_dim: usize) -> Self {
        Self::uniform(
            in_dim,
            &[128, 64, 32],
            &[0.3, 0.6, 1.2],
            &[32, 64, 128],
            16,
            32,
        )
    }

    pub fn uniform(
        in_dim: usize,
        samples: &[usize],
        radii: &[f64],
        dims: &[usize],
        k: usize,
        hidden: usize,
    ) -> Self {
        let mut stages = Vec::with_capacity(samples.len());
        let mut prev = in_dim;
        for i in 0..samples.len() {
            stages.push(StageConfig {
                samples: samples[i],
                block: BlockConfig {
                    in_dim: prev,
                    out_dim: dims[i],
                    k,
                    radius: radii[i],
                },
            });
            prev = dims[i];
        }
        Self { stages, hidden }
    }

    pub fn in_dim(&self) -> usize {
        self.stages[0].block.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.stages[self.stages.len() - 1].block.out_dim
    }

    pub fn min_points(&self) -> usize {
        self.stages[0].samples
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument(
                "encoder needs at least one stage".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "encoder hidden width must be positive".into(),
            ));
        }
        let mut prev: Option<&StageConfig> = None;
        for (i, s) in self.stages.iter().enumerate() {
            let b = &s.block;
            if s.samples == 0 || b.k == 0 || !(b.radius > 0.0) || b.in_dim == 0 || b.out_dim == 0 {
                return Err(Error::InvalidArgument(format!(
                    "stage {i}: samples, k, radius and dims must be positive"
                )));
            }
            if let Some(p) = prev {
                if s.samples >= p.samples {
                    return Err(Error::InvalidArgument(format!(
                        "stage {i}: sample counts must strictly decrease ({} -> {})",
                        p.samples, s.samples
                    )));
                }
                if b.in_dim != p.block.out_dim {
                    return Err(Error::InvalidArgument(format!(
                        "stage {i}: in_dim {} does not match previous out_dim {}",
                        b.in_dim, p.block.out_dim
                    )));
                }
            }
            prev = Some(s);
        }
        Ok(())
    }
}

/// Shared MLP that maps a pooled group descriptor to six raw deformation outputs.
#[derive(Debug, Clone)]
pub struct GroupRegression {
    pub mlp: Mlp,
}

impl GroupRegression {
    pub fn new(store: &mut ParamStore, name: &str, feat_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, name, &[feat_dim + 3, hidden, 6])?,
        })
    }

    /// `group_feats` is `[m*k x (dim+3)]` (member features then center-relative
    /// coordinates), grouped by center. Returns raw outputs `[m x 6]`.
    pub fn raw(&self, g: &mut Graph<'_>, group_feats: Var, k: usize) -> Result<Var> {
        let shape = g.shape(group_feats).to_vec();
        if shape.len() != 2 || shape[0] % k != 0 {
            return Err(Error::ShapeMismatch {
                op: "group regression",
                lhs: shape,
                rhs: vec![k],
            });
        }
        let m = shape[0] / k;
        let grouped = g.reshape(group_feats, &[m, k, shape[1]])?;
        let pooled = g.mean(grouped, 1)?;
        let pooled = g.reshape(pooled, &[m, shape[1]])?;
        self.mlp.forward(g, pooled)
    }

    /// Single-group convenience: `[k x (dim+3)]` in, deformation parameters out.
    pub fn regress(&self, g: &mut Graph<'_>, group_feats: Var) -> Result<DeformParams> {
        let k = g.shape(group_feats)[0];
        let raw = self.raw(g, group_feats, k)?;
        let r: [f64; 6] = g.value(raw).data().try_into().expect("six outputs");
        Ok(DeformParams::from_raw(&r))
    }
}

/// Two-layer MLP over relative offsets.
#[derive(Debug, Clone)]
pub struct PositionEmbedding {
    pub mlp: Mlp,
}

impl PositionEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, name, &[3, hidden, out_dim])?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, offsets: Var) -> Result<Var> {
        self.mlp.forward(g, offsets)
    }

    /// Embeds `center - member` for every member: `[k x out_dim]`.
    pub fn embed(&self, g: &mut Graph<'_>, center: Vec3, members: &[Vec3]) -> Result<Var> {
        if members.is_empty() {
            return Err(Error::Empty("position_embed members"));
        }
        let data = members
            .iter()
            .flat_map(|&m| (center - m).to_array())
            .collect();
        let off = g.constant(Tensor::new(vec![members.len(), 3], data)?);
        self.forward(g, off)
    }
}

/// Per-channel attention of one query against its group members.
#[derive(Debug, Clone)]
pub struct VectorAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Two layers; the last has no bias since a per-channel shift cancels in the softmax.
    pub phi: [Linear; 2],
}

impl VectorAttention {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), in_dim, dim)?,
            key: Linear::new(store, &format!("{name}.k"), in_dim, dim)?,
            value: Linear::new(store, &format!("{name}.v"), in_dim, dim)?,
            phi: [
                Linear::new(store, &format!("{name}.phi.0"), dim, dim)?,
                Linear::new_no_bias(store, &format!("{name}.phi.1"), dim, dim)?,
            ],
        })
    }

    /// `query [m x in]`, `keys`/`values` `[m*k x in]`, `pos [m*k x dim]` -> `[m x dim]`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        query: Var,
        keys: Var,
        values: Var,
        pos: Var,
        k: usize,
    ) -> Result<Var> {
        let q = self.query.forward(g, query)?;
        let kp = self.key.forward(g, keys)?;
        let vp = self.value.forward(g, values)?;
        self.attend(g, q, kp, vp, pos, k)
    }

    /// Attention over already-projected inputs.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        q: Var,
        kp: Var,
        vp: Var,
        pos: Var,
        k: usize,
    ) -> Result<Var> {
        if k == 0 {
            return Err(Error::Empty("vector attention with k = 0"));
        }
        let m = g.shape(q)[0];
        let d = g.shape(q)[1];
        if g.shape(kp) != [m * k, d] || g.shape(vp) != [m * k, d] || g.shape(pos) != [m * k, d] {
            return Err(Error::ShapeMismatch {
                op: "vector attention",
                lhs: g.shape(kp).to_vec(),
                rhs: vec![m * k, d],
            });
        }
        let rep: Vec<usize> = (0..m).flat_map(|c| std::iter::repeat_n(c, k)).collect();
        let q_rep = g.gather_rows(q, &rep)?;
        let rel = g.sub(q_rep, kp)?;
        let rel = g.add(rel, pos)?;
        let h = self.phi[0].forward(g, rel)?;
        let h = g.relu(h);
        let logits = self.phi[1].forward(g, h)?;
        let logits = g.reshape(logits, &[m, k, d])?;
        let weights = g.softmax(logits, 1)?;
        let vals = g.add(vp, pos)?;
        let vals = g.reshape(vals, &[m, k, d])?;
        let weighted = g.mul(weights, vals)?;
        let out = g.sum(weighted, 1)?;
        g.reshape(out, &[m, d])
    }
}

#[derive(Debug, Clone)]
pub struct AdaFormerBlock {
    pub cfg: BlockConfig,
    pub regression: GroupRegression,
    pub pos: PositionEmbedding,
    pub attention: VectorAttention,
    pub residual: Linear,
    pub ffn: Mlp,
    /// When false the regression is skipped and the default ball is used as is.
    pub deform_enabled: bool,
}

pub struct BlockOutput {
    pub feats: Var,
    pub groups: Vec<GroupIndex>,
    pub transforms: Vec<DeformTransform>,
}

impl AdaFormerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BlockConfig,
        hidden: usize,
    ) -> Result<Self> {
        let (i, o) = (cfg.in_dim, cfg.out_dim);
        Ok(Self {
            cfg: cfg.clone(),
            regression: GroupRegression::new(store, &format!("{name}.regress"), i, hidden)?,
            pos: PositionEmbedding::new(store, &format!("{name}.pos"), hidden, o)?,
            attention: VectorAttention::new(store, &format!("{name}.attn"), i, o)?,
            residual: Linear::new(store, &format!("{name}.residual"), i, o)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[o, o, o])?,
            deform_enabled: true,
        })
    }

    /// Runs the block over `centers` (indices into `cloud`). `feats` is `[n x in_dim]`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        cloud: &PointCloud,
        feats: Var,
        centers: &[usize],
    ) -> Result<BlockOutput> {
        let n = cloud.len();
        let (k, r) = (self.cfg.k, self.cfg.radius);
        if g.shape(feats) != [n, self.cfg.in_dim] {
            return Err(Error::ShapeMismatch {
                op: "adaformer block features",
                lhs: g.shape(feats).to_vec(),
                rhs: vec![n, self.cfg.in_dim],
            });
        }
        if centers.is_empty() {
            return Err(Error::Empty("adaformer block centers"));
        }
        let m = centers.len();
        let default_groups = centers
            .iter()
            .map(|&c| ball_query_at(cloud, cloud.points[c], c, r, k))
            .collect::<Result<Vec<_>>>()?;

        let (groups, raw, transforms) = if self.deform_enabled {
            let flat: Vec<usize> = default_groups
                .iter()
                .flat_map(|gr| gr.member_indices.iter().copied())
                .collect();
            let rel = relative_offsets(cloud, &default_groups, |c, p| p - c);
            let member_feats = g.gather_rows(feats, &flat)?;
            let rel_v = g.constant(rel);
            let desc = g.concat(&[member_feats, rel_v], 1)?;
            let raw = self.regression.raw(g, desc, k)?;
            let raws = g.value(raw).data().to_vec();
            let mut groups = Vec::with_capacity(m);
            let mut transforms = Vec::with_capacity(m);
            for (ci, &c) in centers.iter().enumerate() {
                let rr: [f64; 6] = raws[ci * 6..ci * 6 + 6].try_into().expect("six raws");
                let t = build_transform(&DeformParams::from_raw(&rr));
                groups.push(deform_group(cloud, c, &t, r, k)?);
                transforms.push(t);
            }
            (groups, Some(raw), transforms)
        } else {
            let id = build_transform(&DeformParams::IDENTITY);
            (default_groups, None, vec![id; m])
        };

        let flat: Vec<usize> = groups
            .iter()
            .flat_map(|gr| gr.member_indices.iter().copied())
            .collect();
        let rel = relative_offsets(cloud, &groups, |c, p| c - p);
        let offsets = match raw {
            Some(raw) => g.deform_offsets(raw, &rel, k)?,
            None => g.constant(rel),
        };
        let pos = self.pos.forward(g, offsets)?;

        let center_feats = g.gather_rows(feats, centers)?;
        let q = self.attention.query.forward(g, center_feats)?;
        let (kp, vp) = if m * k > n {
            let ka = self.attention.key.forward(g, feats)?;
            let va = self.attention.value.forward(g, feats)?;
            (g.gather_rows(ka, &flat)?, g.gather_rows(va, &flat)?)
        } else {
            let mf = g.gather_rows(feats, &flat)?;
            (
                self.attention.key.forward(g, mf)?,
                self.attention.value.forward(g, mf)?,
            )
        };
        let att = self.attention.attend(g, q, kp, vp, pos, k)?;
        let res = self.residual.forward(g, center_feats)?;
        let h = g.add(att, res)?;
        let out = self.ffn.forward(g, h)?;
        Ok(BlockOutput {
            feats: out,
            groups,
            transforms,
        })
    }
}

fn relative_offsets(
    cloud: &PointCloud,
    groups: &[GroupIndex],
    f: impl Fn(Vec3, Vec3) -> Vec3,
) -> Tensor {
    let k = groups[0].member_indices.len();
    let mut data = Vec::with_capacity(groups.len() * k * 3);
    for gr in groups {
        let c = cloud.points[gr.center_index];
        for &i in &gr.member_indices {
            data.extend_from_slice(&f(c, cloud.points[i]).to_array());
        }
    }
    Tensor::new(vec![groups.len() * k, 3], data).expect("offset shape")
}

pub struct StageOutput {
    /// Sampled points of this stage.
    pub cloud: PointCloud,
    /// Index of each sampled point in the encoder's input cloud.
    pub source: Vec<usize>,
    pub feats: Var,
    pub groups: Vec<GroupIndex>,
}

pub struct EncoderOutput {
    pub stages: Vec<StageOutput>,
}

impl EncoderOutput {
    pub fn last(&self) -> &StageOutput {
        self.stages.last().expect("at least one stage")
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub blocks: Vec<AdaFormerBlock>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = cfg
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                AdaFormerBlock::new(store, &format!("{name}.stage{i}"), &s.block, cfg.hidden)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            blocks,
        })
    }

    pub fn set_deform_enabled(&mut self, on: bool) {
        for b in &mut self.blocks {
            b.deform_enabled = on;
        }
    }

    /// Subsample then block, stage by stage. `feats` is `[n x in_dim]`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        cloud: &PointCloud,
        feats: Var,
    ) -> Result<EncoderOutput> {
        let mut cur_cloud = cloud.clone();
        let mut cur_feats = feats;
        let mut cur_source: Vec<usize> = (0..cloud.len()).collect();
        let mut stages = Vec::with_capacity(self.blocks.len());
        for (si, (stage, block)) in self.cfg.stages.iter().zip(&self.blocks).enumerate() {
            let centers = farthest_point_sample(&cur_cloud, stage.samples).map_err(|_| {
                Error::StageInsufficientPoints {
                    stage: si,
                    needed: stage.samples,
                    available: cur_cloud.len(),
                }
            })?;
            let out = block.forward(g, &cur_cloud, cur_feats, &centers)?;
            let next_cloud = cur_cloud.select(&centers);
            let source: Vec<usize> = centers.iter().map(|&c| cur_source[c]).collect();
            stages.push(StageOutput {
                cloud: next_cloud.clone(),
                source: source.clone(),
                feats: out.feats,
                groups: out.groups,
            });
            cur_cloud = next_cloud;
            cur_feats = out.feats;
            cur_source = source;
        }
        Ok(EncoderOutput { stages })
    }
}

#[cfg(test)]
mod tests;
