//! Training loops: plain (single objective) and adversarial (alternating
//! discriminator and generator epochs), both with early stopping on the
//! validation WTA loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AutodiffError, Tape, Tensor, Var};
use crate::distributions::{self, standard_normal};
use crate::error::{Error, Result};
use crate::losses::{self, GeneratorNoise, LossConfig};
use crate::models::{DiscInput, Discriminator, Generator, ModelConfig};

/// Independent random streams derived from one seed. Keeping them apart
/// makes the generator trajectory independent of discriminator sampling.
pub mod streams {
    pub const GENERATOR_INIT: u64 = 0;
    pub const DISCRIMINATOR_INIT: u64 = 1;
    pub const GENERATOR_STEPS: u64 = 2;
    pub const DISCRIMINATOR_STEPS: u64 = 3;
    pub const ADVERSARIAL_PRIOR: u64 = 4;
}

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Freshly initialized generator and discriminator for `seed`.
pub fn build_models(config: &ModelConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    let g = Generator::new(config, &mut rng_stream(seed, streams::GENERATOR_INIT))?;
    let d = Discriminator::new(config, &mut rng_stream(seed, streams::DISCRIMINATOR_INIT))?;
    Ok((g, d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Upper bound on generator epochs per discriminator epoch.
    pub gen_epochs_per_disc: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 200,
            batch_size: 32,
            lr: 0.001,
            gen_epochs_per_disc: 5,
            patience: 20,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.batch_size", self.batch_size),
            ("train.gen_epochs_per_disc", self.gen_epochs_per_disc),
            ("train.patience", self.patience),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("train.lr must be a finite positive value".into()));
        }
        if self.epochs_max > 0 && self.patience > self.epochs_max {
            return Err(Error::Config(format!(
                "train.patience ({}) exceeds train.epochs_max ({})",
                self.patience, self.epochs_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// One block of the alternation schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Discriminator { updates: usize },
    Generator { epoch: usize, updates: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Generator epochs, in order; its length is the stopping epoch.
    pub epochs: Vec<EpochRecord>,
    /// Validation WTA loss of the model before any update.
    pub initial_val_loss: f64,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub schedule: Vec<Phase>,
    pub wall_seconds: f64,
}

impl TrainReport {
    fn new(initial_val_loss: f64) -> Self {
        Self {
            epochs: Vec::new(),
            initial_val_loss,
            best_epoch: 0,
            best_val_loss: initial_val_loss,
            schedule: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn stopping_epoch(&self) -> usize {
        self.epochs.len()
    }

    pub fn generator_updates(&self) -> usize {
        self.schedule
            .iter()
            .map(|p| match p {
                Phase::Generator { updates, .. } => *updates,
                Phase::Discriminator { .. } => 0,
            })
            .sum()
    }

    pub fn discriminator_updates(&self) -> usize {
        self.schedule
            .iter()
            .map(|p| match p {
                Phase::Discriminator { updates } => *updates,
                Phase::Generator { .. } => 0,
            })
            .sum()
    }

    /// `epoch,train_loss,val_loss`. Timing lives in [`Self::timing_text`]
    /// so that this file depends only on (config, seed, data).
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
        }
        s
    }

    /// Wall-clock seconds per epoch, `epoch seconds` per line. Not a CSV
    /// on purpose: every CSV output is reproducible, this is not.
    pub fn timing_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(s, "{} {:.6}", e.epoch, e.seconds);
        }
        let _ = writeln!(s, "total {:.6}", self.wall_seconds);
        s
    }

    /// `train_report.csv` plus the non-reproducible `timing.txt`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let curve = dir.join("train_report.csv");
        fs::write(&curve, self.curve_csv()).map_err(|e| Error::io(&curve, e))?;
        let timing = dir.join("timing.txt");
        fs::write(&timing, self.timing_text()).map_err(|e| Error::io(&timing, e))
    }
}

/// Batch-mean WTA loss at the posterior-mean latent.
pub fn validation_loss(gen: &Generator, x: &Tensor, loss: &LossConfig) -> Result<f64> {
    let mut t = Tape::new();
    let vars = gen.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let post = vars.encode(&mut t, xv)?;
    let hyps = vars.decode(&mut t, post.mu)?;
    let l = losses::wta_loss(&mut t, xv, &hyps, loss.granularity)?;
    Ok(t.value(l).item())
}

fn check_split(name: &str, x: &Tensor, data_dim: usize) -> Result<()> {
    if x.rank() != 2 || x.shape()[0] == 0 {
        return Err(Error::Data(format!("{name} split is empty")));
    }
    if x.shape()[1] != data_dim {
        return Err(Error::Config(format!(
            "{name} split has dimension {}, model expects {data_dim}",
            x.shape()[1]
        )));
    }
    Ok(())
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn numerical(epoch: usize, batch: usize, what: impl std::fmt::Display) -> Error {
    Error::Numerical(format!("epoch {epoch}, batch {batch}: {what}"))
}

fn step(
    adam: &mut Adam,
    params: &mut [&mut Tensor],
    t: &Tape,
    root: Var,
    vars: &[Var],
    epoch: usize,
    batch: usize,
) -> Result<()> {
    let value = t.value(root).item();
    if !value.is_finite() {
        return Err(numerical(epoch, batch, format_args!("loss is {value}")));
    }
    let grads = t.backward(root)?;
    let g: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get_or_zeros(v, t.shape(v)))
        .collect();
    adam.step(params, &g).map_err(|e| match e {
        AutodiffError::NonFiniteGradient { .. } => numerical(epoch, batch, e),
        other => Error::from(other),
    })
}

struct GenState {
    adam: Adam,
    rng: ChaCha8Rng,
    prior_rng: ChaCha8Rng,
}

/// One pass over `train` updating only the generator. Returns the mean
/// batch loss and the number of updates.
fn generator_epoch(
    gen: &mut Generator,
    disc: Option<&Discriminator>,
    train: &Tensor,
    cfg: &TrainConfig,
    state: &mut GenState,
    epoch: usize,
) -> Result<(f64, usize)> {
    let adversarial = disc.is_some() && cfg.loss.kind.is_adversarial() && cfg.loss.adv_weight != 0.0;
    let latent = gen.config.latent_dim;
    let batches = shuffled_batches(train.shape()[0], cfg.batch_size, &mut state.rng);
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let xb = train.select_rows(idx);
        let noise = GeneratorNoise {
            eps: standard_normal(&[idx.len(), latent], &mut state.rng),
            prior_z: adversarial.then(|| standard_normal(&[idx.len(), latent], &mut state.prior_rng)),
        };
        let mut t = Tape::new();
        let gv = gen.bind(&mut t, true);
        let dv = if adversarial { disc.map(|d| d.bind(&mut t, false)) } else { None };
        let xv = t.constant(xb);
        let l = losses::generator_loss(&mut t, xv, &gv, dv.as_ref(), &cfg.loss, &noise)?;
        total += t.value(l.total).item();
        step(&mut state.adam, &mut gen.params_mut(), &t, l.total, &gv.vars(), epoch, b + 1)?;
    }
    Ok((total / batches.len() as f64, batches.len()))
}

/// One pass over `train` updating only the discriminator.
fn discriminator_epoch(
    gen: &Generator,
    disc: &mut Discriminator,
    train: &Tensor,
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<usize> {
    let latent = gen.config.latent_dim;
    let batches = shuffled_batches(train.shape()[0], cfg.batch_size, rng);
    for (b, idx) in batches.iter().enumerate() {
        let xb = train.select_rows(idx);
        let eps = standard_normal(&[idx.len(), latent], rng);
        let zp = standard_normal(&[idx.len(), latent], rng);
        let mut t = Tape::new();
        let gv = gen.bind(&mut t, false);
        let dv = disc.bind(&mut t, true);
        let xv = t.constant(xb);
        let post = gv.encode(&mut t, xv)?;
        let z = distributions::reparam_with_noise(&mut t, &post, eps)?;
        let recon = gv.decode(&mut t, z)?;
        let zp = t.constant(zp);
        let prior = gv.decode(&mut t, zp)?;
        let real = dv.discriminate(&mut t, DiscInput::Samples(xv))?;
        let fakes = losses::fake_logits(&mut t, &dv, xv, &recon, &prior)?;
        let l = losses::discriminator_loss(&mut t, real, &fakes)?;
        step(adam, &mut disc.params_mut(), &t, l, &dv.vars(), epoch, b + 1)?;
    }
    Ok(batches.len())
}

struct EarlyStop {
    best: Generator,
    since_best: usize,
    patience: usize,
}

impl EarlyStop {
    /// Records an epoch; returns `true` when patience is exhausted.
    fn observe(&mut self, report: &mut TrainReport, gen: &Generator, rec: EpochRecord) -> Result<bool> {
        if !rec.val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "epoch {}: validation loss is {}",
                rec.epoch, rec.val_loss
            )));
        }
        if rec.val_loss < report.best_val_loss {
            report.best_val_loss = rec.val_loss;
            report.best_epoch = rec.epoch;
            self.best = gen.clone();
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        report.epochs.push(rec);
        Ok(self.since_best >= self.patience)
    }
}

fn start(gen: &Generator, train: &Tensor, valid: &Tensor, cfg: &TrainConfig) -> Result<(TrainReport, EarlyStop)> {
    cfg.validate()?;
    cfg.loss.validate(gen.hypotheses(), gen.decoder.mixing.is_some())?;
    check_split("train", train, gen.config.data_dim)?;
    check_split("valid", valid, gen.config.data_dim)?;
    let initial = validation_loss(gen, valid, &cfg.loss)?;
    if !initial.is_finite() {
        return Err(Error::Numerical(format!("initial validation loss is {initial}")));
    }
    let stop = EarlyStop {
        best: gen.clone(),
        since_best: 0,
        patience: cfg.patience,
    };
    Ok((TrainReport::new(initial), stop))
}

/// Trains `gen` on its own objective. On return `gen` holds the parameters
/// with the lowest validation loss seen (possibly the initial ones).
pub fn train_plain(gen: &mut Generator, train: &Tensor, valid: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
    let clock = Instant::now();
    let (mut report, mut stop) = start(gen, train, valid, cfg)?;
    let mut state = GenState {
        adam: Adam::new(cfg.lr),
        rng: rng_stream(cfg.seed, streams::GENERATOR_STEPS),
        prior_rng: rng_stream(cfg.seed, streams::ADVERSARIAL_PRIOR),
    };
    for epoch in 1..=cfg.epochs_max {
        let (train_loss, updates) = generator_epoch(gen, None, train, cfg, &mut state, epoch)?;
        report.schedule.push(Phase::Generator { epoch, updates });
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss: validation_loss(gen, valid, &cfg.loss)?,
            seconds: clock.elapsed().as_secs_f64(),
        };
        if stop.observe(&mut report, gen, rec)? {
            break;
        }
    }
    *gen = stop.best;
    report.wall_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Alternates one discriminator epoch with up to `gen_epochs_per_disc`
/// generator epochs. A generator round ends early as soon as its validation
/// loss fails to improve on the previous epoch. `epochs_max` and `patience`
/// count generator epochs.
pub fn train_adversarial(
    gen: &mut Generator,
    disc: &mut Discriminator,
    train: &Tensor,
    valid: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if !cfg.loss.kind.is_adversarial() {
        return Err(Error::Config(format!(
            "adversarial training needs loss.kind conad or mdn_gan, got {}",
            cfg.loss.kind
        )));
    }
    let clock = Instant::now();
    let (mut report, mut stop) = start(gen, train, valid, cfg)?;
    let mut state = GenState {
        adam: Adam::new(cfg.lr),
        rng: rng_stream(cfg.seed, streams::GENERATOR_STEPS),
        prior_rng: rng_stream(cfg.seed, streams::ADVERSARIAL_PRIOR),
    };
    let mut disc_adam = Adam::new(cfg.lr);
    let mut disc_rng = rng_stream(cfg.seed, streams::DISCRIMINATOR_STEPS);
    let mut epoch = 0;
    let mut prev_val = report.initial_val_loss;
    'rounds: while epoch < cfg.epochs_max {
        let updates = discriminator_epoch(gen, disc, train, cfg, &mut disc_adam, &mut disc_rng, epoch + 1)?;
        report.schedule.push(Phase::Discriminator { updates });
        for _ in 0..cfg.gen_epochs_per_disc {
            if epoch == cfg.epochs_max {
                break 'rounds;
            }
            epoch += 1;
            let (train_loss, updates) = generator_epoch(gen, Some(disc), train, cfg, &mut state, epoch)?;
            report.schedule.push(Phase::Generator { epoch, updates });
            let val_loss = validation_loss(gen, valid, &cfg.loss)?;
            let rec = EpochRecord {
                epoch,
                train_loss,
                val_loss,
                seconds: clock.elapsed().as_secs_f64(),
            };
            if stop.observe(&mut report, gen, rec)? {
                break 'rounds;
            }
            let improved = val_loss < prev_val;
            prev_val = val_loss;
            if !improved {
                break;
            }
        }
    }
    *gen = stop.best;
    report.wall_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Balanced accuracy of `disc` on real rows of `x` versus prior-decoded
/// hypothesis means (fake), thresholding logits at zero.
pub fn discriminator_accuracy(gen: &Generator, disc: &Discriminator, x: &Tensor, seed: u64) -> Result<f64> {
    let n = x.shape()[0];
    let z = standard_normal(&[n, gen.config.latent_dim], &mut rng_stream(seed, streams::ADVERSARIAL_PRIOR));
    let mut t = Tape::new();
    let gv = gen.bind(&mut t, false);
    let dv = disc.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let zv = t.constant(z);
    let prior = gv.decode(&mut t, zv)?;
    let means = prior.means();
    let real = dv.discriminate(&mut t, DiscInput::Samples(xv))?;
    let fake = dv.discriminate(&mut t, DiscInput::Hypotheses(&means))?;
    let frac = |v: &[f64], real: bool| v.iter().filter(|&&l| (l > 0.0) == real).count() as f64 / v.len() as f64;
    Ok(0.5 * (frac(t.value(real).data(), true) + frac(t.value(fake).data(), false)))
}

/// Dispatches to [`train_adversarial`] or [`train_plain`] by loss kind.
pub fn train(
    gen: &mut Generator,
    disc: &mut Discriminator,
    train_x: &Tensor,
    valid: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.loss.kind.is_adversarial() {
        train_adversarial(gen, disc, train_x, valid, cfg)
    } else {
        train_plain(gen, train_x, valid, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{Granularity, LossKind};
    use rand::Rng;

    fn two_modes(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = (0..n)
            .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 } + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        Tensor::matrix(n, 1, d).unwrap()
    }

    fn small_model(h: usize) -> ModelConfig {
        let mut m = ModelConfig::new(1, h);
        m.latent_dim = 2;
        m.encoder_hidden = vec![8];
        m.decoder_hidden = vec![8];
        m.disc_hidden = vec![8];
        m.disc_features = 4;
        m
    }

    fn cfg(kind: LossKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs_max: epochs,
            batch_size: 16,
            patience: epochs.max(1),
            seed: 7,
            loss: LossConfig {
                kind,
                granularity: Granularity::Sample,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (mut g, _) = build_models(&small_model(2), 1).unwrap();
        let before = g.clone();
        let x = two_modes(20, 1);
        let r = train_plain(&mut g, &x, &x, &cfg(LossKind::Wta, 0)).unwrap();
        assert_eq!(g, before);
        assert_eq!(r.stopping_epoch(), 0);
    }

    #[test]
    fn two_mode_smoke_and_determinism() {
        let x = two_modes(64, 2);
        let v = two_modes(32, 3);
        let c = cfg(LossKind::Wta, 200);
        let (mut g, _) = build_models(&small_model(2), 4).unwrap();
        let r = train_plain(&mut g, &x, &v, &c).unwrap();
        assert!(r.best_val_loss < r.initial_val_loss);
        let (mut g2, _) = build_models(&small_model(2), 4).unwrap();
        let r2 = train_plain(&mut g2, &x, &v, &c).unwrap();
        assert_eq!(r.curve_csv(), r2.curve_csv());
        assert_eq!(g, g2);
        // retained model is the best one, exactly
        assert_eq!(validation_loss(&g, &v, &c.loss).unwrap(), r.best_val_loss);
        let min = r.epochs.iter().map(|e| e.val_loss).fold(r.initial_val_loss, f64::min);
        assert_eq!(min, r.best_val_loss);
    }

    #[test]
    fn one_to_one_alternation() {
        let x = two_modes(40, 5);
        let mut c = cfg(LossKind::Conad, 6);
        c.gen_epochs_per_disc = 1;
        let (mut g, mut d) = build_models(&small_model(2), 6).unwrap();
        let r = train_adversarial(&mut g, &mut d, &x, &x, &c).unwrap();
        let batches = 3; // ceil(40 / 16)
        assert_eq!(r.schedule.len(), 2 * r.stopping_epoch());
        for (i, p) in r.schedule.iter().enumerate() {
            match (i % 2, p) {
                (0, Phase::Discriminator { updates }) => assert_eq!(*updates, batches),
                (1, Phase::Generator { updates, .. }) => assert_eq!(*updates, batches),
                _ => panic!("schedule out of order: {:?}", r.schedule),
            }
        }
        assert_eq!(r.generator_updates(), r.discriminator_updates());
    }

    #[test]
    fn zero_adversarial_weight_matches_plain_training() {
        let x = two_modes(48, 8);
        let v = two_modes(16, 9);
        let mut c = cfg(LossKind::Conad, 15);
        c.loss.adv_weight = 0.0;
        let (mut ga, mut da) = build_models(&small_model(2), 10).unwrap();
        let ra = train_adversarial(&mut ga, &mut da, &x, &v, &c).unwrap();
        let mut cp = c.clone();
        cp.loss.kind = LossKind::Wta;
        let (mut gp, _) = build_models(&small_model(2), 10).unwrap();
        let rp = train_plain(&mut gp, &x, &v, &cp).unwrap();
        assert_eq!(ra.curve_csv(), rp.curve_csv());
        assert_eq!(ga, gp);
        assert!(ra.discriminator_updates() > 0);
    }

    #[test]
    fn nan_data_is_numerical() {
        let mut x = two_modes(20, 11);
        x.data_mut()[3] = f64::NAN;
        let v = two_modes(8, 12);
        let (mut g, _) = build_models(&small_model(1), 1).unwrap();
        let err = train_plain(&mut g, &x, &v, &cfg(LossKind::Wta, 3)).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("epoch 1")), "{err}");
    }

    #[test]
    fn config_errors() {
        let x = two_modes(8, 1);
        let empty = Tensor::zeros(&[1, 1]).select_rows(&[]);
        let (mut g, _) = build_models(&small_model(1), 1).unwrap();
        assert!(matches!(
            train_plain(&mut g, &empty, &x, &cfg(LossKind::Wta, 1)),
            Err(Error::Data(_))
        ));
        let mut c = cfg(LossKind::Wta, 5);
        c.patience = 6;
        assert!(matches!(train_plain(&mut g, &x, &x, &c), Err(Error::Config(_))));
        let (mut g2, mut d2) = build_models(&small_model(2), 1).unwrap();
        assert!(train_adversarial(&mut g2, &mut d2, &x, &x, &cfg(LossKind::Wta, 1)).is_err());
    }
}
