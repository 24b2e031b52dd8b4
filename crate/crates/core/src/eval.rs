//! One-pass-evaluation metrics, frame-weighted aggregation and dataset statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::datasets::Sequence;
use crate::error::{Error, Result};
use crate::geometry::{center_distance, normalize_angle, rotated_iou_3d, BBox3D, PointCloud, Vec3};
use crate::io_util::write_atomic;
use crate::trackers::{StepInput, TrackerModel};
use crate::unify::{make_fixed_margin_region, make_search_region, FIXED_MARGIN_M};

/// Upper end of the center-distance threshold sweep, meters.
pub const PRECISION_CAP_M: f64 = 2.0;
/// BEV radius within which another object counts as a distractor, meters.
pub const DISTRACTOR_RADIUS_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub iou: f64,
    pub center_dist: f64,
}

impl FrameResult {
    pub fn compare(pred: &BBox3D, gt: &BBox3D) -> Self {
        Self {
            iou: rotated_iou_3d(pred, gt).clamp(0.0, 1.0),
            center_dist: center_distance(pred, gt),
        }
    }
}

/// Area under the overlap-threshold curve, which is the mean IoU, in percent.
pub fn success_metric(results: &[FrameResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("success over zero frames"));
    }
    Ok(100.0 * results.iter().map(|r| r.iou).sum::<f64>() / results.len() as f64)
}

/// Area under the center-distance curve over `[0, cap]`, normalized by `cap`,
/// in percent. A frame at distance `d` contributes `max(0, 1 - d / cap)`.
pub fn precision_metric_capped(results: &[FrameResult], cap: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("precision over zero frames"));
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "precision cap must be > 0, got {cap}"
        )));
    }
    let sum: f64 = results
        .iter()
        .map(|r| (1.0 - r.center_dist / cap).max(0.0))
        .sum();
    Ok(100.0 * sum / results.len() as f64)
}

pub fn precision_metric(results: &[FrameResult]) -> Result<f64> {
    precision_metric_capped(results, PRECISION_CAP_M)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

impl CategoryResult {
    pub fn from_frames(category: &str, results: &[FrameResult]) -> Result<Self> {
        Ok(Self {
            category: category.to_string(),
            frames: results.len(),
            success: success_metric(results)?,
            precision: precision_metric(results)?,
        })
    }
}

/// Frame-count-weighted mean of every row, labelled `Mean`.
pub fn aggregate_weighted_mean(rows: &[CategoryResult]) -> Result<CategoryResult> {
    let frames: usize = rows.iter().map(|r| r.frames).sum();
    if rows.is_empty() || frames == 0 {
        return Err(Error::Empty("aggregation over zero frames"));
    }
    let w = |f: fn(&CategoryResult) -> f64| {
        rows.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / frames as f64
    };
    Ok(CategoryResult {
        category: "Mean".into(),
        frames,
        success: w(|r| r.success),
        precision: w(|r| r.precision),
    })
}

/// Per-frame results of one tracked sequence; frame 0 is included, as in the
/// usual one-pass toolkits.
pub fn evaluate_sequence(pred: &[BBox3D], gt: &[BBox3D]) -> Result<Vec<FrameResult>> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| FrameResult::compare(p, g))
        .collect())
}

/// Per-category rows (sorted by name) followed by the weighted mean.
pub fn category_table(per_sequence: &[(String, Vec<FrameResult>)]) -> Result<Vec<CategoryResult>> {
    let mut by_cat: BTreeMap<&str, Vec<FrameResult>> = BTreeMap::new();
    for (cat, frames) in per_sequence {
        by_cat
            .entry(cat)
            .or_default()
            .extend(frames.iter().copied());
    }
    let mut rows = by_cat
        .iter()
        .map(|(c, f)| CategoryResult::from_frames(c, f))
        .collect::<Result<Vec<_>>>()?;
    let mean = aggregate_weighted_mean(&rows)?;
    rows.push(mean);
    Ok(rows)
}

pub fn metrics_csv(rows: &[CategoryResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "frames", "success", "precision"])?;
    for r in rows {
        w.write_record([
            r.category.clone(),
            r.frames.to_string(),
            format!("{:.4}", r.success),
            format!("{:.4}", r.precision),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_metrics_csv(path: &Path, rows: &[CategoryResult]) -> Result<()> {
    write_atomic(path, &metrics_csv(rows)?)
}

// ---------------------------------------------------------------------------
// Dataset statistics

/// Fixed-width histogram; out-of-range values land in the edge bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            width: (hi - lo) / bins as f64,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let i = ((v - self.lo) / self.width).floor();
        let i = i.clamp(0.0, (self.counts.len() - 1) as f64) as usize;
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<(f64, f64, u64)> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let lo = self.lo + i as f64 * self.width;
                (lo, lo + self.width, c)
            })
            .collect()
    }

    /// Index of the bin holding `v`.
    pub fn bin_of(&self, v: f64) -> usize {
        (((v - self.lo) / self.width).floor().max(0.0) as usize).min(self.counts.len() - 1)
    }
}

/// Extent, motion and distractor statistics of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    pub length: Histogram,
    pub width: Histogram,
    pub height: Histogram,
    /// Inter-frame displacement in the previous box frame, then yaw change.
    pub dx: Histogram,
    pub dy: Histogram,
    pub dz: Histogram,
    pub dtheta: Histogram,
    /// Frames with 0, 1, 2 and >= 3 distractors.
    pub distractors: [u64; 4],
}

impl CategoryStats {
    fn new() -> Self {
        // motion bins are centered on zero
        Self {
            length: Histogram::new(0.0, 8.0, 32),
            width: Histogram::new(0.0, 4.0, 32),
            height: Histogram::new(0.0, 4.0, 32),
            dx: Histogram::new(-3.05, 3.05, 61),
            dy: Histogram::new(-3.05, 3.05, 61),
            dz: Histogram::new(-1.025, 1.025, 41),
            dtheta: Histogram::new(-0.51, 0.51, 51),
            distractors: [0; 4],
        }
    }

    pub fn histograms(&self) -> [(&'static str, &Histogram); 7] {
        [
            ("length", &self.length),
            ("width", &self.width),
            ("height", &self.height),
            ("dx", &self.dx),
            ("dy", &self.dy),
            ("dz", &self.dz),
            ("dtheta", &self.dtheta),
        ]
    }
}

/// Statistics per target category; every annotated frame counts once.
pub fn category_stats(seqs: &[Sequence], radius: f64) -> Result<BTreeMap<String, CategoryStats>> {
    let mut out: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for seq in seqs {
        let boxes = seq.target_boxes()?;
        let st = out
            .entry(seq.category.clone())
            .or_insert_with(CategoryStats::new);
        for (i, frame) in seq.frames.iter().enumerate() {
            let b = boxes[i];
            st.length.add(b.l);
            st.width.add(b.w);
            st.height.add(b.h);
            let near = frame
                .boxes
                .iter()
                .filter(|a| a.track_id != crate::datasets::TARGET_TRACK)
                .filter(|a| {
                    let d = a.bbox.center - b.center;
                    Vec3::new(d.x, d.y, 0.0).norm() < radius
                })
                .count();
            st.distractors[near.min(3)] += 1;
            if i > 0 {
                let prev = boxes[i - 1];
                let d = prev.to_local(b.center);
                st.dx.add(d.x);
                st.dy.add(d.y);
                st.dz.add(d.z);
                st.dtheta.add(normalize_angle(b.yaw - prev.yaw));
            }
        }
    }
    Ok(out)
}

fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (lo, hi, c) in h.rows() {
        w.write_record([format!("{lo:.4}"), format!("{hi:.4}"), c.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn distractor_csv(counts: &[u64; 4]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (i, c) in counts.iter().enumerate() {
        let hi = if i == 3 {
            "inf".to_string()
        } else {
            (i + 1).to_string()
        };
        w.write_record([i.to_string(), hi, c.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One CSV per histogram, `<category>_<quantity>.csv`, under `dir`.
pub fn write_stats(dir: &Path, stats: &BTreeMap<String, CategoryStats>) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (cat, st) in stats {
        for (name, h) in st.histograms() {
            let f = format!("{cat}_{name}.csv");
            write_atomic(&dir.join(&f), &histogram_csv(h)?)?;
            files.push(f);
        }
        let f = format!("{cat}_distractors.csv");
        write_atomic(&dir.join(&f), &distractor_csv(&st.distractors)?)?;
        files.push(f);
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// Latency

/// Mean and standard deviation of per-run wall times, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Timing {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean_ms: mean,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub points: usize,
    pub runs: usize,
    pub preprocess: Timing,
    pub forward: Timing,
    pub postprocess: Timing,
}

pub fn latency_csv(rows: &[LatencyRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "points",
        "runs",
        "preprocess_mean_ms",
        "preprocess_std_ms",
        "forward_mean_ms",
        "forward_std_ms",
        "postprocess_mean_ms",
        "postprocess_std_ms",
    ])?;
    for r in rows {
        let mut rec = vec![r.points.to_string(), r.runs.to_string()];
        for t in [r.preprocess, r.forward, r.postprocess] {
            rec.push(format!("{:.6}", t.mean_ms));
            rec.push(format!("{:.6}", t.std_ms));
        }
        w.write_record(rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Times `runs` tracking steps per cloud size after `warmup` untimed ones.
///
/// Each size is fed to the network as-is: the model is cloned with
/// `n_s = size` and `n_t = size / 2`, and both clouds hold exactly that many
/// points inside the search region, so resampling is the identity.
pub fn latency_bench(
    model: &TrackerModel,
    sizes: &[usize],
    runs: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<LatencyRow>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    let target = BBox3D::from_params(0.0, 0.0, 0.8, 1.8, 1.6, 4.2, 0.0)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut m = model.clone();
        m.cfg.n_s = size;
        m.cfg.n_t = (size / 2).max(1);
        m.cfg.validate()?;
        let region = if m.cfg.ablation.unified_inputs {
            make_search_region(&target, m.cfg.alpha)?
        } else {
            make_fixed_margin_region(&target, FIXED_MARGIN_M)?
        };
        // stay strictly inside the region so every point survives the crop
        let half = region.bbox.axis_extents() * 0.499;
        let mut cloud = |n: usize| {
            let pts = (0..n)
                .map(|_| {
                    let local = Vec3::new(
                        rng.random_range(-half.x..half.x),
                        rng.random_range(-half.y..half.y),
                        rng.random_range(-half.z..half.z),
                    );
                    region.bbox.from_local(local)
                })
                .collect();
            PointCloud::new(pts)
        };
        let prev = cloud(m.cfg.n_t);
        let cur = cloud(size);
        let step = StepInput {
            index: 1,
            init_cloud: &prev,
            init_box: &target,
            prev_cloud: &prev,
            prev_box: target,
            cur_cloud: &cur,
            seed,
        };
        for _ in 0..warmup {
            m.predict_timed(&step)?;
        }
        let (mut pre, mut fwd, mut post) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..runs {
            let (_, t) = m.predict_timed(&step)?;
            pre.push(t.preprocess.as_secs_f64() * 1e3);
            fwd.push(t.forward.as_secs_f64() * 1e3);
            post.push(t.postprocess.as_secs_f64() * 1e3);
        }
        rows.push(LatencyRow {
            points: size,
            runs,
            preprocess: Timing::from_samples(&pre),
            forward: Timing::from_samples(&fwd),
            postprocess: Timing::from_samples(&post),
        });
    }
    Ok(rows)
}
