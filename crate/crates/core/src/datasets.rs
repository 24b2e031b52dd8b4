//! Synthetic sequences, the PCF1 on-disk format and KITTI ingestion.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, BBox3D, PointCloud, Vec3};
use crate::io_util::write_atomic;

/// Track id of the tracked target in every sequence.
pub const TARGET_TRACK: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub track_id: u32,
    pub category: String,
    pub bbox: BBox3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub cloud: PointCloud,
    pub boxes: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub sequence_id: String,
    pub category: String,
    pub frames: Vec<FrameRecord>,
}

impl Sequence {
    /// Target box of every frame, or an error naming the first frame without one.
    pub fn target_boxes(&self) -> Result<Vec<BBox3D>> {
        self.frames
            .iter()
            .map(|f| {
                f.target().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "sequence {} frame {} has no target annotation",
                        self.sequence_id, f.frame_id
                    ))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .frames
            .windows(2)
            .any(|w| w[0].frame_id >= w[1].frame_id)
        {
            return Err(Error::InvalidArgument(format!(
                "sequence {}: frame ids must be strictly increasing",
                self.sequence_id
            )));
        }
        Ok(())
    }
}

impl FrameRecord {
    pub fn target(&self) -> Option<BBox3D> {
        self.boxes
            .iter()
            .find(|a| a.track_id == TARGET_TRACK)
            .map(|a| a.bbox)
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceShape {
    /// Points on the side and top faces of the box.
    BoxShell,
    /// Points on an upright elliptic cylinder inscribed in the box, plus its top.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryTemplate {
    pub name: String,
    /// Mean `(w, h, l)`, meters.
    pub mean: [f64; 3],
    /// Standard deviation of `(w, h, l)`.
    pub std: [f64; 3],
    pub shape: SurfaceShape,
    /// Mean and standard deviation of the speed, meters per frame.
    pub speed: [f64; 2],
}

impl CategoryTemplate {
    pub fn car() -> Self {
        Self {
            name: "Car".into(),
            mean: [1.8, 1.6, 4.2],
            std: [0.1, 0.1, 0.3],
            shape: SurfaceShape::BoxShell,
            speed: [0.9, 0.3],
        }
    }

    pub fn pedestrian() -> Self {
        Self {
            name: "Pedestrian".into(),
            mean: [0.6, 1.75, 0.8],
            std: [0.05, 0.1, 0.08],
            shape: SurfaceShape::Cylinder,
            speed: [0.15, 0.05],
        }
    }

    pub fn van() -> Self {
        Self {
            name: "Van".into(),
            mean: [2.0, 2.1, 5.1],
            std: [0.1, 0.15, 0.3],
            shape: SurfaceShape::BoxShell,
            speed: [0.8, 0.3],
        }
    }

    pub fn cyclist() -> Self {
        Self {
            name: "Cyclist".into(),
            mean: [0.8, 1.7, 1.8],
            std: [0.08, 0.1, 0.15],
            shape: SurfaceShape::Cylinder,
            speed: [0.45, 0.15],
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self::car(),
            Self::pedestrian(),
            Self::van(),
            Self::cyclist(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub categories: Vec<CategoryTemplate>,
    pub sequences: usize,
    pub frames: usize,
    /// Target surface points per square meter before dropout.
    pub surface_density: f64,
    /// Probability that a surface point is dropped.
    pub dropout: f64,
    /// Gaussian point jitter stddev (meters), truncated at 3 sigma.
    pub point_noise: f64,
    /// Per-frame velocity perturbation stddev as a fraction of the speed.
    pub motion_noise: f64,
    /// Yaw-rate stddev, radians per frame.
    pub yaw_rate_std: f64,
    /// Inclusive upper bound of the uniform distractor count.
    pub max_distractors: usize,
    /// Lateral gap range between target and distractor sides, meters.
    pub distractor_gap: [f64; 2],
    /// Ground points per square meter.
    pub ground_density: f64,
    /// Clutter points per cubic meter in the first 3 m above ground.
    pub clutter_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            categories: CategoryTemplate::defaults(),
            sequences: 10,
            frames: 20,
            surface_density: 12.0,
            dropout: 0.3,
            point_noise: 0.02,
            motion_noise: 0.1,
            yaw_rate_std: 0.02,
            max_distractors: 2,
            distractor_gap: [0.5, 3.0],
            ground_density: 2.0,
            clutter_density: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.categories.is_empty() {
            return bad("at least one category template is required".into());
        }
        for c in &self.categories {
            if c.mean.iter().any(|&v| !(v > 0.0))
                || c.std.iter().chain(&c.speed).any(|&v| !(v >= 0.0))
            {
                return bad(format!(
                    "category {}: extents must be > 0 and stddevs >= 0",
                    c.name
                ));
            }
        }
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        if !(self.surface_density > 0.0) || self.ground_density < 0.0 || self.clutter_density < 0.0
        {
            return bad("densities must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.point_noise < 0.0 || self.motion_noise < 0.0 || self.yaw_rate_std < 0.0 {
            return bad("noise stddevs must be >= 0".into());
        }
        if !(self.distractor_gap[0] >= 0.0 && self.distractor_gap[1] >= self.distractor_gap[0]) {
            return bad("distractor_gap must be an ordered non-negative range".into());
        }
        Ok(())
    }
}

fn gauss(rng: &mut Xoshiro256PlusPlus, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        mean
    } else {
        Normal::new(mean, std).expect("finite stddev").sample(rng)
    }
}

fn truncated_jitter(rng: &mut Xoshiro256PlusPlus, std: f64) -> f64 {
    gauss(rng, 0.0, std).clamp(-3.0 * std, 3.0 * std)
}

/// Uniform surface samples on `bbox` in its local frame.
fn surface_points(
    rng: &mut Xoshiro256PlusPlus,
    shape: SurfaceShape,
    ext: Vec3,
    density: f64,
) -> Vec<Vec3> {
    let (l, w, h) = (ext.x, ext.y, ext.z);
    let mut out = Vec::new();
    let mut face = |rng: &mut Xoshiro256PlusPlus, area: f64, f: &dyn Fn(f64, f64) -> Vec3| {
        let n = (area * density).round() as usize;
        for _ in 0..n {
            out.push(f(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
        }
    };
    match shape {
        SurfaceShape::BoxShell => {
            face(rng, l * h, &|a, b| Vec3::new(a * l, w / 2.0, b * h));
            face(rng, l * h, &|a, b| Vec3::new(a * l, -w / 2.0, b * h));
            face(rng, w * h, &|a, b| Vec3::new(l / 2.0, a * w, b * h));
            face(rng, w * h, &|a, b| Vec3::new(-l / 2.0, a * w, b * h));
            face(rng, l * w, &|a, b| Vec3::new(a * l, b * w, h / 2.0));
        }
        SurfaceShape::Cylinder => {
            let (rx, ry) = (l / 2.0, w / 2.0);
            let perimeter = PI * (3.0 * (rx + ry) - ((3.0 * rx + ry) * (rx + 3.0 * ry)).sqrt());
            face(rng, perimeter * h, &|a, b| {
                let t = 2.0 * PI * (a + 0.5);
                Vec3::new(rx * t.cos(), ry * t.sin(), b * h)
            });
            face(rng, PI * rx * ry, &|a, b| {
                let t = 2.0 * PI * (a + 0.5);
                let r = (b + 0.5).sqrt();
                Vec3::new(rx * r * t.cos(), ry * r * t.sin(), h / 2.0)
            });
        }
    }
    out
}

struct Actor {
    track_id: u32,
    template: usize,
    ext: Vec3,
    center: Vec3,
    yaw: f64,
    speed: f64,
    yaw_rate: f64,
}

impl Actor {
    fn bbox(&self) -> BBox3D {
        BBox3D::new(self.center, self.ext.y, self.ext.z, self.ext.x, self.yaw)
            .expect("positive extents")
    }
}

fn sample_extents(rng: &mut Xoshiro256PlusPlus, t: &CategoryTemplate) -> Vec3 {
    let draw = |rng: &mut Xoshiro256PlusPlus, i: usize| {
        gauss(rng, t.mean[i], t.std[i]).max(0.25 * t.mean[i])
    };
    let w = draw(rng, 0);
    let h = draw(rng, 1);
    let l = draw(rng, 2);
    Vec3::new(l, w, h)
}

/// One sequence fully determined by `rng`.
pub fn gen_sequence(cfg: &SynthConfig, index: usize, rng: &mut Xoshiro256PlusPlus) -> Sequence {
    let ti = rng.random_range(0..cfg.categories.len());
    let tmpl = &cfg.categories[ti];
    let ext = sample_extents(rng, tmpl);
    let yaw = rng.random_range(-PI..PI);
    let speed = gauss(rng, tmpl.speed[0], tmpl.speed[1]).max(0.0);
    let yaw_rate = gauss(rng, 0.0, cfg.yaw_rate_std);
    let mut actors = vec![Actor {
        track_id: TARGET_TRACK,
        template: ti,
        ext,
        center: Vec3::new(0.0, 0.0, ext.z / 2.0),
        yaw,
        speed,
        yaw_rate,
    }];
    let n_distractors = rng.random_range(0..=cfg.max_distractors);
    let mut sides = [0usize; 2];
    for d in 0..n_distractors {
        // half the distractors share the target category
        let di = if rng.random_bool(0.5) {
            ti
        } else {
            rng.random_range(0..cfg.categories.len())
        };
        let dt = &cfg.categories[di];
        let dext = sample_extents(rng, dt);
        let side = rng.random_range(0..2usize);
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let gap = rng.random_range(cfg.distractor_gap[0]..=cfg.distractor_gap[1]);
        // stack further out when a side is already occupied
        let base = ext.y / 2.0 + dext.y / 2.0 + gap + sides[side] as f64 * 3.0;
        sides[side] += 1;
        let along = rng.random_range(-1.0..1.0) * (ext.x + dext.x) / 2.0;
        let offset = Vec3::new(along, sign * base, 0.0).rotate_z(yaw);
        actors.push(Actor {
            track_id: d as u32 + 1,
            template: di,
            ext: dext,
            center: Vec3::new(offset.x, offset.y, dext.z / 2.0),
            yaw,
            speed: gauss(rng, speed, 0.1 * speed.max(0.05)).max(0.0),
            yaw_rate,
        });
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        if f > 0 {
            for a in actors.iter_mut() {
                let v = a.speed * (1.0 + gauss(rng, 0.0, cfg.motion_noise));
                a.yaw = normalize_angle(a.yaw + a.yaw_rate);
                a.center = a.center + Vec3::new(v, 0.0, 0.0).rotate_z(a.yaw);
            }
        }
        let mut points = Vec::new();
        for a in &actors {
            let t = &cfg.categories[a.template];
            let bbox = a.bbox();
            for p in surface_points(rng, t.shape, a.ext, cfg.surface_density) {
                if rng.random_bool(cfg.dropout) {
                    continue;
                }
                let j = Vec3::new(
                    truncated_jitter(rng, cfg.point_noise),
                    truncated_jitter(rng, cfg.point_noise),
                    truncated_jitter(rng, cfg.point_noise),
                );
                points.push(bbox.from_local(p + j));
            }
        }
        // ground and clutter around the target
        let c = actors[0].center;
        let half = 4.0 + 2.0 * ext.x.max(ext.y);
        let area = (2.0 * half) * (2.0 * half);
        let n_ground = (area * cfg.ground_density).round() as usize;
        for _ in 0..n_ground {
            points.push(Vec3::new(
                c.x + rng.random_range(-half..half),
                c.y + rng.random_range(-half..half),
                truncated_jitter(rng, cfg.point_noise),
            ));
        }
        let n_clutter = (area * 3.0 * cfg.clutter_density).round() as usize;
        for _ in 0..n_clutter {
            let p = Vec3::new(
                c.x + rng.random_range(-half..half),
                c.y + rng.random_range(-half..half),
                rng.random_range(0.0..3.0),
            );
            if actors.iter().all(|a| !a.bbox().contains(p)) {
                points.push(p);
            }
        }
        frames.push(FrameRecord {
            frame_id: f as u32,
            cloud: PointCloud::new(points),
            boxes: actors
                .iter()
                .map(|a| Annotation {
                    track_id: a.track_id,
                    category: cfg.categories[a.template].name.clone(),
                    bbox: a.bbox(),
                })
                .collect(),
        });
    }
    Sequence {
        sequence_id: format!("{index:06}"),
        category: tmpl.name.clone(),
        frames,
    }
}

/// Per-sequence stream seed; `seed_from_u64` further scrambles it.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// `cfg.sequences` sequences; sequence `i` depends only on `(seed, i)`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<Sequence>> {
    cfg.validate()?;
    Ok((0..cfg.sequences)
        .map(|i| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(sequence_seed(cfg.seed, i));
            gen_sequence(cfg, i, &mut rng)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// PCF1

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";

pub fn encode_pcf(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(PCF_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for v in p.to_array() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Rounds every point to the single precision PCF stores, so in-memory data
/// matches what a write/read cycle yields.
pub fn quantize_to_pcf(seqs: &mut [Sequence]) {
    for f in seqs.iter_mut().flat_map(|s| s.frames.iter_mut()) {
        for p in f.cloud.points.iter_mut() {
            *p = Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64);
        }
    }
}

fn f32_at(bytes: &[u8], off: usize) -> f64 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64
}

pub fn decode_pcf(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 8 {
        if bytes.len() >= 4 && &bytes[..4] != PCF_MAGIC {
            return Err(bad_magic(&bytes[..4]));
        }
        return Err(Error::Truncated {
            expected: 8,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != PCF_MAGIC {
        return Err(bad_magic(&bytes[..4]));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let expected = 8 + count * 12;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::CountMismatch {
            header: count,
            payload: (bytes.len() - 8) / 12,
        });
    }
    Ok(PointCloud::new(
        (0..count)
            .map(|i| {
                let o = 8 + i * 12;
                Vec3::new(f32_at(bytes, o), f32_at(bytes, o + 4), f32_at(bytes, o + 8))
            })
            .collect(),
    ))
}

fn bad_magic(found: &[u8]) -> Error {
    Error::BadMagic {
        expected: "PCF1".into(),
        found: String::from_utf8_lossy(found).into_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxMeta {
    pub track_id: u32,
    pub category: String,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub frame_id: u32,
    pub boxes: Vec<BoxMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub category: String,
    pub frames: Vec<FrameMeta>,
}

impl From<&Annotation> for BoxMeta {
    fn from(a: &Annotation) -> Self {
        let b = a.bbox;
        Self {
            track_id: a.track_id,
            category: a.category.clone(),
            cx: b.center.x,
            cy: b.center.y,
            cz: b.center.z,
            w: b.w,
            h: b.h,
            l: b.l,
            yaw: b.yaw,
        }
    }
}

impl BoxMeta {
    fn annotation(&self) -> Result<Annotation> {
        Ok(Annotation {
            track_id: self.track_id,
            category: self.category.clone(),
            bbox: BBox3D::from_params(self.cx, self.cy, self.cz, self.w, self.h, self.l, self.yaw)?,
        })
    }
}

pub fn sequence_meta(seq: &Sequence) -> SequenceMeta {
    SequenceMeta {
        sequence_id: seq.sequence_id.clone(),
        category: seq.category.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| FrameMeta {
                frame_id: f.frame_id,
                boxes: f.boxes.iter().map(BoxMeta::from).collect(),
            })
            .collect(),
    }
}

fn frame_file(dir: &Path, frame_id: u32) -> PathBuf {
    dir.join(format!("frame_{frame_id:06}.pcf"))
}

pub fn write_pcf(seq: &Sequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    fs::create_dir_all(dir)?;
    for f in &seq.frames {
        write_atomic(&frame_file(dir, f.frame_id), &encode_pcf(&f.cloud))?;
    }
    let meta = serde_json::to_vec_pretty(&sequence_meta(seq))?;
    write_atomic(&dir.join("meta.json"), &meta)
}

pub fn read_pcf(dir: &Path) -> Result<Sequence> {
    let meta: SequenceMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let frames = meta
        .frames
        .iter()
        .map(|fm| {
            Ok(FrameRecord {
                frame_id: fm.frame_id,
                cloud: decode_pcf(&fs::read(frame_file(dir, fm.frame_id))?)?,
                boxes: fm
                    .boxes
                    .iter()
                    .map(BoxMeta::annotation)
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = Sequence {
        sequence_id: meta.sequence_id,
        category: meta.category,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// Writes each sequence to `root/seq_<id>`.
pub fn write_dataset(seqs: &[Sequence], root: &Path) -> Result<()> {
    for s in seqs {
        write_pcf(s, &root.join(format!("seq_{}", s.sequence_id)))?;
    }
    Ok(())
}

/// Reads every `seq_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seq_"))
        })
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_pcf(d)).collect()
}

// ---------------------------------------------------------------------------
// KITTI

pub fn kitti_decode_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::VelodyneLength(bytes.len()));
    }
    Ok(PointCloud::new(
        bytes
            .chunks_exact(16)
            .map(|c| Vec3::new(f32_at(c, 0), f32_at(c, 4), f32_at(c, 8)))
            .collect(),
    ))
}

pub fn kitti_read_velodyne(path: &Path) -> Result<PointCloud> {
    kitti_decode_velodyne(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub frame: u32,
    pub track_id: i64,
    pub category: String,
    pub bbox: BBox3D,
}

/// Parses one tracking label row; `Ok(None)` for `DontCare`.
///
/// Camera coordinates (x right, y down, z forward, location at the bottom
/// face center) map to the z-up frame as `(z, -x, -y + h/2)` and
/// `yaw = -rotation_y - pi/2`.
pub fn kitti_parse_label_line(line: &str) -> Result<Option<KittiLabel>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let field = |i: usize| -> Result<&str> {
        fields.get(i).copied().ok_or_else(|| Error::LabelParse {
            column: i,
            message: format!("missing field, line has {} of 17", fields.len()),
        })
    };
    let num = |i: usize| -> Result<f64> {
        let s = field(i)?;
        s.parse::<f64>().map_err(|e| Error::LabelParse {
            column: i,
            message: format!("`{s}`: {e}"),
        })
    };
    let frame_s = field(0)?;
    let frame = frame_s.parse::<u32>().map_err(|e| Error::LabelParse {
        column: 0,
        message: format!("`{frame_s}`: {e}"),
    })?;
    let track_s = field(1)?;
    let track_id = track_s.parse::<i64>().map_err(|e| Error::LabelParse {
        column: 1,
        message: format!("`{track_s}`: {e}"),
    })?;
    let category = field(2)?.to_string();
    if category == "DontCare" {
        return Ok(None);
    }
    let mut v = [0.0; 17];
    for (i, slot) in v.iter_mut().enumerate().skip(3) {
        *slot = num(i)?;
    }
    let (h, w, l) = (v[10], v[11], v[12]);
    let (x, y, z, ry) = (v[13], v[14], v[15], v[16]);
    let center = Vec3::new(z, -x, -y + h / 2.0);
    let bbox = BBox3D::new(center, w, h, l, -ry - PI / 2.0).map_err(|e| Error::LabelParse {
        column: 10,
        message: e.to_string(),
    })?;
    Ok(Some(KittiLabel {
        frame,
        track_id,
        category,
        bbox,
    }))
}

/// Parses a whole label file, skipping blank and `DontCare` rows.
pub fn kitti_parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(l) = kitti_parse_label_line(line)? {
            out.push(l);
        }
    }
    Ok(out)
}

/// Assembles one tracklet of a KITTI sequence into a [`Sequence`]; `scans[i]`
/// is the cloud of frame `i`. The chosen track becomes the target.
pub fn kitti_tracklet(
    id: &str,
    labels: &[KittiLabel],
    scans: &[PointCloud],
    track_id: i64,
) -> Result<Sequence> {
    let target: Vec<&KittiLabel> = labels.iter().filter(|l| l.track_id == track_id).collect();
    let first = target
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("track {track_id} not present")))?;
    let mut frames = Vec::new();
    for t in &target {
        let cloud = scans
            .get(t.frame as usize)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no scan for frame {}", t.frame)))?;
        let mut boxes = vec![Annotation {
            track_id: TARGET_TRACK,
            category: t.category.clone(),
            bbox: t.bbox,
        }];
        // other tracks keep a stable id that never collides with the target's 0
        let others = labels
            .iter()
            .filter(|l| l.frame == t.frame && l.track_id != track_id && l.track_id >= 0);
        boxes.extend(others.map(|l| Annotation {
            track_id: l.track_id as u32 + 1,
            category: l.category.clone(),
            bbox: l.bbox,
        }));
        frames.push(FrameRecord {
            frame_id: t.frame,
            cloud,
            boxes,
        });
    }
    let seq = Sequence {
        sequence_id: id.to_string(),
        category: first.category.clone(),
        frames,
    };
    seq.validate()?;
    Ok(seq)
}
