//! Library side of the `cutrack` binary: configuration, commands and the
//! on-disk result formats.

pub mod config;
pub mod error;

use std::collections::BTreeMap;
use std::path::Path;

use cutrack_core::datasets::{
    gen_synthetic, quantize_to_pcf, read_dataset, write_dataset, Sequence,
};
use cutrack_core::eval::{
    category_stats, latency_bench, latency_csv, metrics_csv, write_stats, CategoryResult,
};
use cutrack_core::experiment::{evaluate_tracks, run_on, track_all};
use cutrack_core::geometry::BBox3D;
use cutrack_core::io_util::write_atomic;
use cutrack_core::trackers::{train, TrackOutput, TrackerModel};
use cutrack_core::verify::{full_suite, CheckRow};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    require(path)?;
    Ok(std::fs::read_to_string(path)?)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    require(dir)?;
    Ok(read_dataset(dir)?)
}

fn load_model(path: &Path) -> Result<TrackerModel> {
    require(path)?;
    Ok(TrackerModel::load(path)?)
}

// ---------------------------------------------------------------------------
// results.json

pub const RESULTS_FORMAT: &str = "cutrack-results";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub yaw: f64,
}

impl From<&BBox3D> for BoxRecord {
    fn from(b: &BBox3D) -> Self {
        Self {
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

impl BoxRecord {
    pub fn to_box(&self) -> Result<BBox3D> {
        Ok(BBox3D::from_params(
            self.cx, self.cy, self.cz, self.w, self.h, self.l, self.yaw,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagRecord {
    pub empty_region: bool,
    pub empty_reference: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceResult {
    pub sequence_id: String,
    pub category: String,
    pub frame_ids: Vec<u32>,
    /// Predicted trajectory; entry 0 is the given first-frame box.
    pub boxes: Vec<BoxRecord>,
    pub diagnostics: Vec<DiagRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackResults {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub sequences: Vec<SequenceResult>,
}

impl TrackResults {
    pub fn new(seqs: &[Sequence], outs: &[TrackOutput], seed: u64) -> Self {
        let sequences = seqs
            .iter()
            .zip(outs)
            .map(|(s, o)| SequenceResult {
                sequence_id: s.sequence_id.clone(),
                category: s.category.clone(),
                frame_ids: s.frames.iter().map(|f| f.frame_id).collect(),
                boxes: o.boxes.iter().map(BoxRecord::from).collect(),
                diagnostics: o
                    .diags
                    .iter()
                    .map(|d| DiagRecord {
                        empty_region: d.empty_region,
                        empty_reference: d.empty_reference,
                        fallback: d.fallback,
                    })
                    .collect(),
            })
            .collect();
        Self {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            seed,
            sequences,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&read_text(path)?)?;
        if r.format != RESULTS_FORMAT || r.version != RESULTS_VERSION {
            return Err(CliError::Usage(format!(
                "{} is not a {RESULTS_FORMAT} v{RESULTS_VERSION} file",
                path.display()
            )));
        }
        Ok(r)
    }

    /// Trajectories aligned with `seqs` by sequence id.
    pub fn trajectories_for(&self, seqs: &[Sequence]) -> Result<Vec<Vec<BBox3D>>> {
        let by_id: BTreeMap<&str, &SequenceResult> = self
            .sequences
            .iter()
            .map(|s| (s.sequence_id.as_str(), s))
            .collect();
        seqs.iter()
            .map(|s| {
                let r = by_id.get(s.sequence_id.as_str()).ok_or_else(|| {
                    CliError::Usage(format!(
                        "results hold no trajectory for sequence {}",
                        s.sequence_id
                    ))
                })?;
                r.boxes.iter().map(BoxRecord::to_box).collect()
            })
            .collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

pub fn cmd_gen(config: &Path, out: &Path, split: Split) -> Result<usize> {
    let cfg = RunConfig::load(config)?;
    let synth = match split {
        Split::Train => &cfg.data,
        Split::Eval => &cfg.eval_data,
    };
    let seqs = gen_synthetic(synth)?;
    write_dataset(&seqs, out)?;
    Ok(seqs.len())
}

pub fn cmd_train(config: &Path, data: &Path, out: &Path, log: Option<&Path>) -> Result<f64> {
    let cfg = RunConfig::load(config)?;
    let seqs = load_dataset(data)?;
    let mut model = TrackerModel::new(cfg.model_config(), cfg.seed)?;
    let report = train(&mut model, &seqs, &cfg.train_config())?;
    model.save(out)?;
    if let Some(log) = log {
        report.write_csv(log)?;
    }
    Ok(report.losses.last().map(|r| r.total).unwrap_or(f64::NAN))
}

pub fn cmd_track(
    model: &Path,
    data: &Path,
    out: &Path,
    seed: u64,
    jobs: usize,
) -> Result<TrackResults> {
    let model = load_model(model)?;
    let seqs = load_dataset(data)?;
    let outs = track_all(&model, &seqs, seed, jobs)?;
    let results = TrackResults::new(&seqs, &outs, seed);
    write_json(out, &results)?;
    Ok(results)
}

pub fn cmd_eval(results: &Path, data: &Path, out: &Path) -> Result<Vec<CategoryResult>> {
    let res = TrackResults::read(results)?;
    let seqs = load_dataset(data)?;
    let rows = evaluate_tracks(&seqs, &res.trajectories_for(&seqs)?)?;
    write_atomic(out, &metrics_csv(&rows)?)?;
    Ok(rows)
}

pub fn cmd_stats(data: &Path, out: &Path, radius: f64) -> Result<Vec<String>> {
    if !(radius > 0.0) {
        return Err(CliError::Usage(format!(
            "--radius must be > 0, got {radius}"
        )));
    }
    let seqs = load_dataset(data)?;
    let stats = category_stats(&seqs, radius)?;
    Ok(write_stats(out, &stats)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seeds: usize,
    pub success: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunRow {
    param: String,
    value: f64,
    seed: u64,
    success: f64,
    precision: f64,
}

/// Seed-averaged category rows; every run evaluates the same sequences.
pub fn average_rows(runs: &[Vec<CategoryResult>]) -> Result<Vec<CategoryResult>> {
    let first = runs
        .first()
        .ok_or_else(|| CliError::Usage("no runs to average".into()))?;
    let n = runs.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            for other in &runs[1..] {
                let o = other
                    .get(i)
                    .filter(|o| o.category == r.category && o.frames == r.frames);
                let o =
                    o.ok_or_else(|| CliError::Usage("runs evaluated different sequences".into()))?;
                row.success += o.success;
                row.precision += o.precision;
            }
            row.success /= n;
            row.precision /= n;
            Ok(row)
        })
        .collect()
}

/// Generated data is rounded as if written by `gen`, so a sweep value sees
/// exactly what the separate gen/train/track/eval commands would.
fn datasets_for(cfg: &RunConfig) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    let load = |path: &Option<std::path::PathBuf>, synth| -> Result<Vec<Sequence>> {
        match path {
            Some(p) => load_dataset(p),
            None => {
                let mut seqs = gen_synthetic(synth)?;
                quantize_to_pcf(&mut seqs);
                Ok(seqs)
            }
        }
    };
    let train_data = load(&cfg.paths.train_data, &cfg.data)?;
    let eval_data = load(&cfg.paths.eval_data, &cfg.eval_data)?;
    Ok((train_data, eval_data))
}

/// End-to-end train/track/evaluate per value (and per seed), writing
/// `<param>_<value>/metrics.csv`, per-seed logs, `runs.csv` and `summary.csv`.
pub fn cmd_sweep(
    config: &Path,
    param: SweepParam,
    values: &[String],
    seeds: Option<&[u64]>,
    out: &Path,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let base = RunConfig::load(config)?;
    if values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    let parsed = values
        .iter()
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| CliError::Config {
                path: param.name().into(),
                message: format!("sweep value {v:?} is not a number"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = seeds
        .map(<[u64]>::to_vec)
        .unwrap_or_else(|| vec![base.seed]);
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let mut configs = Vec::new();
    for &v in &parsed {
        let mut cfg = base.clone();
        match param {
            SweepParam::Alpha => cfg.alpha = v,
            SweepParam::Beta => cfg.beta = v,
        }
        cfg.validate()?;
        configs.push(cfg);
    }
    let (train_data, eval_data) = datasets_for(&base)?;
    std::fs::create_dir_all(out)?;
    let mut summary = Vec::new();
    let mut runs = Vec::new();
    for ((raw, &value), cfg) in values.iter().zip(&parsed).zip(&configs) {
        let dir = out.join(format!("{}_{}", param.name(), raw.trim()));
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let res = run_on(&c.experiment(), &train_data, &eval_data, jobs)?;
            let seed_dir = dir.join(format!("seed_{seed}"));
            res.train.write_csv(&seed_dir.join("losses.csv"))?;
            write_atomic(&seed_dir.join("metrics.csv"), &metrics_csv(&res.rows)?)?;
            let mean = res.mean();
            runs.push(RunRow {
                param: param.name().into(),
                value,
                seed,
                success: mean.success,
                precision: mean.precision,
            });
            per_seed.push(res.rows);
        }
        let rows = average_rows(&per_seed)?;
        write_atomic(&dir.join("metrics.csv"), &metrics_csv(&rows)?)?;
        let mean = rows.last().expect("mean row");
        summary.push(SweepRow {
            param: param.name().into(),
            value,
            seeds: seeds.len(),
            success: mean.success,
            precision: mean.precision,
        });
    }
    write_atomic(&out.join("runs.csv"), &to_csv(&runs)?)?;
    write_atomic(&out.join("summary.csv"), &to_csv(&summary)?)?;
    Ok(summary)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

pub struct GradcheckOutcome {
    pub rows: Vec<CheckRow>,
    /// Multiplier applied to every tolerance.
    pub tol_factor: f64,
}

impl GradcheckOutcome {
    pub fn passed(&self, row: &CheckRow) -> bool {
        row.max_rel_error < row.tolerance * self.tol_factor && row.unresolved == 0
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| !self.passed(r)).collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "check",
            "max_rel_error",
            "tolerance",
            "reduced",
            "unresolved",
            "passed",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:e}", r.max_rel_error),
                format!("{:e}", r.tolerance * self.tol_factor),
                r.reduced.to_string(),
                r.unresolved.to_string(),
                self.passed(r).to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }
}

pub fn cmd_gradcheck(seeds: u64, tol_factor: f64, out: Option<&Path>) -> Result<GradcheckOutcome> {
    if seeds == 0 || !(tol_factor > 0.0) {
        return Err(CliError::Usage(
            "--seeds must be >= 1 and --tol-factor > 0".into(),
        ));
    }
    let outcome = GradcheckOutcome {
        rows: full_suite(seeds)?,
        tol_factor,
    };
    if let Some(out) = out {
        write_atomic(out, &outcome.to_csv()?)?;
    }
    Ok(outcome)
}

pub fn cmd_bench(
    model: &Path,
    sizes: &[usize],
    runs: usize,
    warmup: usize,
    out: &Path,
) -> Result<()> {
    if sizes.is_empty() {
        return Err(CliError::Usage("--sizes needs at least one size".into()));
    }
    let model = load_model(model)?;
    let rows = latency_bench(&model, sizes, runs, warmup, 0)?;
    Ok(write_atomic(out, &latency_csv(&rows)?)?)
}
