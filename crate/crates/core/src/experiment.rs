//! Generate → train → track → evaluate, shared by the command-line tool and
//! the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::datasets::{gen_synthetic, Sequence, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{category_table, evaluate_sequence, CategoryResult};
use crate::trackers::{
    train, ModelConfig, Paradigm, Predictor, TrackInput, TrackOutput, TrackerModel, TrainConfig,
    TrainOutput,
};

/// Held-out sequences with constant velocity and low noise.
pub fn easy_benchmark(sequences: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        sequences,
        frames: 20,
        motion_noise: 0.0,
        yaw_rate_std: 0.0,
        point_noise: 0.01,
        seed,
        ..SynthConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_data: SynthConfig,
    pub eval_data: SynthConfig,
    /// Parameter initialization seed.
    pub model_seed: u64,
    /// Seed for per-frame resampling during tracking.
    pub track_seed: u64,
}

impl ExperimentConfig {
    /// Small motion-centric setup: 200 training sequences, 10 easy held-out ones.
    pub fn desk(paradigm: Paradigm, seed: u64) -> Self {
        Self {
            model: ModelConfig::small(paradigm),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            train_data: SynthConfig {
                sequences: 200,
                frames: 20,
                seed: 1000 + seed,
                ..SynthConfig::default()
            },
            eval_data: easy_benchmark(10, 99),
            model_seed: seed,
            track_seed: 0,
        }
    }
}

/// Tracks every sequence, splitting them over at most `jobs` threads.
/// Output order matches input order regardless of `jobs`.
pub fn track_all<P: Predictor + Sync + ?Sized>(
    predictor: &P,
    seqs: &[Sequence],
    seed: u64,
    jobs: usize,
) -> Result<Vec<TrackOutput>> {
    let inputs = seqs
        .iter()
        .map(TrackInput::from_sequence)
        .collect::<Result<Vec<_>>>()?;
    let jobs = jobs.clamp(1, inputs.len().max(1));
    if jobs == 1 {
        return inputs
            .iter()
            .map(|i| crate::trackers::track_sequence(predictor, i, seed))
            .collect();
    }
    let chunk = inputs.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|i| crate::trackers::track_sequence(predictor, i, seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for h in handles {
            out.extend(h.join().expect("tracking worker panicked")?);
        }
        Ok(out)
    })
}

/// Per-category rows plus the frame-weighted `Mean` row, from predicted trajectories.
pub fn evaluate_tracks(
    seqs: &[Sequence],
    tracks: &[Vec<crate::geometry::BBox3D>],
) -> Result<Vec<CategoryResult>> {
    if seqs.len() != tracks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sequences but {} trajectories",
            seqs.len(),
            tracks.len()
        )));
    }
    let per = seqs
        .iter()
        .zip(tracks)
        .map(|(s, t)| {
            Ok((
                s.category.clone(),
                evaluate_sequence(t, &s.target_boxes()?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    category_table(&per)
}

pub struct ExperimentResult {
    pub model: TrackerModel,
    pub train: TrainOutput,
    pub tracks: Vec<TrackOutput>,
    pub rows: Vec<CategoryResult>,
}

impl ExperimentResult {
    /// The frame-weighted mean over all categories.
    pub fn mean(&self) -> &CategoryResult {
        self.rows
            .last()
            .expect("category table always ends with the mean row")
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    let train_data = gen_synthetic(&cfg.train_data)?;
    let eval_data = gen_synthetic(&cfg.eval_data)?;
    run_on(cfg, &train_data, &eval_data, jobs)
}

/// Like [`run_experiment`] but on already-materialized datasets.
pub fn run_on(
    cfg: &ExperimentConfig,
    train_data: &[Sequence],
    eval_data: &[Sequence],
    jobs: usize,
) -> Result<ExperimentResult> {
    let mut model = TrackerModel::new(cfg.model.clone(), cfg.model_seed)?;
    let train_out = train(&mut model, train_data, &cfg.train)?;
    let tracks = track_all(&model, eval_data, cfg.track_seed, jobs)?;
    let boxes: Vec<_> = tracks.iter().map(|t| t.boxes.clone()).collect();
    let rows = evaluate_tracks(eval_data, &boxes)?;
    Ok(ExperimentResult {
        model,
        train: train_out,
        tracks,
        rows,
    })
}
