//! End-to-end runs: generate data, train, score. Shared by the CLI and the
//! acceptance suite.

use crate::autodiff::Tensor;
use crate::config::ExperimentConfig;
use crate::data::{self, manifold_distance, Dataset};
use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::scoring::{self, Label, RocResult, ScoredSample};
use crate::training::{self, rng_stream, TrainReport};

/// Stream for sampling latent codes when drawing from a trained model.
const STREAM_MODEL_SAMPLES: u64 = 20;

pub struct Trained {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub report: TrainReport,
}

pub fn train_on(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Trained> {
    let (mut generator, mut discriminator) = training::build_models(&cfg.model, cfg.train.seed)?;
    let report = training::train(&mut generator, &mut discriminator, &ds.train, &ds.valid, &cfg.train)?;
    Ok(Trained {
        generator,
        discriminator,
        report,
    })
}

/// Scores the configured normal split, plus anomalies when it is `test`.
pub fn score_on(cfg: &ExperimentConfig, gen: &Generator, ds: &Dataset) -> Result<Vec<ScoredSample>> {
    let (mode, p) = (cfg.score.mode, cfg.score.top_percent);
    let normal = ds.split(if cfg.score.split == "test" { "test_normal" } else { &cfg.score.split })?;
    let mut out = scoring::score_samples(gen, normal, Label::Normal, mode, p)?;
    if cfg.score.split == "test" {
        out.extend(scoring::score_samples(gen, &ds.test_anomaly, Label::Anomaly, mode, p)?);
    }
    Ok(out)
}

pub fn roc_of(samples: &[ScoredSample]) -> Result<RocResult> {
    let pairs: Vec<(f64, Label)> = samples.iter().map(|s| (s.aggregate, s.label)).collect();
    scoring::auroc(&pairs)
}

pub struct Outcome {
    pub dataset: Dataset,
    pub trained: Trained,
    pub samples: Vec<ScoredSample>,
    pub roc: RocResult,
}

/// Generate, train and evaluate.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dataset = data::generate(&cfg.data)?;
    let trained = train_on(cfg, &dataset)?;
    let samples = score_on(cfg, &trained.generator, &dataset)?;
    let roc = roc_of(&samples)?;
    Ok(Outcome {
        dataset,
        trained,
        samples,
        roc,
    })
}

/// Hypothesis means decoded from `n` prior latent draws, all heads stacked:
/// `(H·n, D)` ordered head-major.
pub fn prior_samples(gen: &Generator, n: usize, seed: u64) -> Result<Tensor> {
    let z = standard_normal(&[n, gen.config.latent_dim], &mut rng_stream(seed, STREAM_MODEL_SAMPLES));
    let h = gen.decode_latent(&z)?;
    let d = gen.config.data_dim;
    let data: Vec<f64> = h.mu.iter().flat_map(|m| m.data().iter().copied()).collect();
    Ok(Tensor::new(vec![h.mu.len() * n, d], data)?)
}

/// Share of 2-D points farther than `threshold` from the half-moon arcs.
pub fn off_manifold_fraction(points: &Tensor, threshold: f64) -> Result<f64> {
    if points.rank() != 2 || points.shape()[1] != 2 {
        return Err(Error::Config(format!("expected (n, 2) points, got {:?}", points.shape())));
    }
    let n = points.shape()[0];
    let far = (0..n)
        .filter(|&r| {
            let p = points.row(r);
            manifold_distance([p[0], p[1]]) > threshold
        })
        .count();
    Ok(far as f64 / n as f64)
}
