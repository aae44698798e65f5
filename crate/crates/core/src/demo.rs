//! Scripted demonstrations: the two WTA lemmas checked numerically, and
//! two figures built from trained models.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::distributions::{DiagGaussian, LOG_SIGMA_MIN};
use crate::error::{Error, Result};
use crate::experiments::{self, off_manifold_fraction, prior_samples};
use crate::losses::{self, Granularity};
use crate::models::{nll_value, pixel_winners, HypothesisSet, Linear};
use crate::scoring::{self, Label, LofModel, ScoreMode};
use crate::svg::{self, Bounds, Panel, Series};
use crate::training::{self, rng_stream};

const STREAM_DEMO: u64 = 30;
pub const TOLERANCE: f64 = 1e-12;
const TRUE_COLOR: &str = "#1f77b4";
const MODEL_COLOR: &str = "#d62728";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoKind {
    Lemma41,
    Lemma42,
    HalfmoonFigure,
    StrategyFigure,
}

impl FromStr for DemoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma41" => Ok(DemoKind::Lemma41),
            "lemma42" => Ok(DemoKind::Lemma42),
            "halfmoon_figure" => Ok(DemoKind::HalfmoonFigure),
            "strategy_figure" => Ok(DemoKind::StrategyFigure),
            _ => Err(Error::Config(format!(
                "unknown demo {s:?}; expected lemma41, lemma42, halfmoon_figure or strategy_figure"
            ))),
        }
    }
}

/// A named number, optionally checked against a bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    pub name: String,
    pub value: f64,
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct DemoReport {
    pub measures: Vec<Measure>,
    /// `(file name, contents)` to write next to the report.
    pub files: Vec<(String, String)>,
}

impl DemoReport {
    fn info(&mut self, name: &str, value: f64) {
        self.measures.push(Measure {
            name: name.into(),
            value,
            pass: None,
        });
    }

    fn check(&mut self, name: &str, value: f64, pass: bool) {
        self.measures.push(Measure {
            name: name.into(),
            value,
            pass: Some(pass),
        });
    }

    pub fn passed(&self) -> bool {
        self.measures.iter().all(|m| m.pass != Some(false))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.measures.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// `name = value [PASS|FAIL]` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.measures {
            let tag = match m.pass {
                Some(true) => " PASS",
                Some(false) => " FAIL",
                None => "",
            };
            let _ = writeln!(s, "{} = {:e}{tag}", m.name, m.value);
        }
        s
    }
}

pub fn run(kind: DemoKind, cfg: &ExperimentConfig) -> Result<DemoReport> {
    match kind {
        DemoKind::Lemma41 => lemma41(cfg),
        DemoKind::Lemma42 => lemma42(cfg),
        DemoKind::HalfmoonFigure => halfmoon_figure(cfg),
        DemoKind::StrategyFigure => strategy_figure(cfg),
    }
}

/// Appending heads that lose on every pixel of every sample leaves the WTA
/// loss unchanged.
pub fn lemma41(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let ds = data::generate(&cfg.data)?;
    let x = first_rows(&ds.train, 64);
    let (mut gen, _) = training::build_models(&cfg.model, cfg.train.seed)?;
    let loss_at = |g: &crate::models::Generator, gran: Granularity| {
        let mut l = cfg.train.loss.clone();
        l.granularity = gran;
        training::validation_loss(g, &x, &l)
    };
    let before = [loss_at(&gen, Granularity::Pixel)?, loss_at(&gen, Granularity::Sample)?];

    let h = gen.hypotheses();
    let top = gen.decoder.trunk.widths().last().copied().unwrap();
    let d = gen.config.data_dim;
    for i in 0..h {
        // zero weights: a constant prediction far from any data, with the
        // narrowest allowed spread
        let mut bias = vec![1e6 * (i + 1) as f64; d];
        bias.extend(std::iter::repeat_n(LOG_SIGMA_MIN, d));
        gen.push_head(Linear {
            weight: Tensor::zeros(&[top, 2 * d]),
            bias: Tensor::vector(bias),
        })?;
    }
    let after = [loss_at(&gen, Granularity::Pixel)?, loss_at(&gen, Granularity::Sample)?];

    let hv = gen.infer(&x)?;
    let winners = pixel_winners(&x, &hv.mu, &hv.log_sigma);
    let new_wins = winners.iter().filter(|&&w| w >= h).count();

    let mut r = DemoReport::default();
    r.info("hypotheses_before", h as f64);
    r.info("hypotheses_after", gen.hypotheses() as f64);
    r.info("wta_pixel_before", before[0]);
    r.info("wta_pixel_after", after[0]);
    r.check("delta_wta_pixel", (after[0] - before[0]).abs(), (after[0] - before[0]).abs() < TOLERANCE);
    r.check("delta_wta_sample", (after[1] - before[1]).abs(), (after[1] - before[1]).abs() < TOLERANCE);
    r.check("pixels_won_by_appended_heads", new_wins as f64, new_wins == 0);
    Ok(r)
}

/// Soft-WTA at both ends of its ε range, against WTA and against the
/// plain hypothesis average.
pub fn lemma42(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let h = cfg.model.hypotheses;
    let d = cfg.model.data_dim.min(16);
    let mut rng = rng_stream(cfg.train.seed, STREAM_DEMO);
    let mut r = DemoReport::default();
    let mut worst = [0.0f64; 2];
    for _ in 0..20 {
        let b = 8;
        let rand = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
            Tensor::matrix(b, d, (0..b * d).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
        };
        let x = rand(&mut rng, -2.0, 2.0);
        let mus: Vec<Tensor> = (0..h).map(|_| rand(&mut rng, -2.0, 2.0)).collect();
        let lss: Vec<Tensor> = (0..h).map(|_| rand(&mut rng, -1.0, 1.0)).collect();

        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let set = HypothesisSet {
            hypotheses: mus
                .iter()
                .zip(&lss)
                .map(|(m, l)| DiagGaussian {
                    mu: t.constant(m.clone()),
                    log_sigma: t.constant(l.clone()),
                })
                .collect(),
            mix_logits: None,
        };
        let wta = losses::wta_loss(&mut t, xv, &set, Granularity::Sample)?;
        let soft0 = losses::soft_wta_loss(&mut t, xv, &set, 0.0, Granularity::Sample)?;
        let eps_max = (h as f64 - 1.0) / h as f64;
        let soft_max = losses::soft_wta_loss(&mut t, xv, &set, eps_max, Granularity::Sample)?;

        // plain average over hypotheses of each sample's summed NLL
        let mut mean = 0.0;
        for row in 0..b {
            let mut acc = 0.0;
            for k in 0..h {
                let s: f64 = (0..d)
                    .map(|c| {
                        let i = row * d + c;
                        nll_value(x.data()[i], mus[k].data()[i], lss[k].data()[i])
                    })
                    .sum();
                acc += s;
            }
            mean += acc / h as f64;
        }
        mean /= b as f64;
        worst[0] = worst[0].max((t.value(soft0).item() - t.value(wta).item()).abs());
        worst[1] = worst[1].max((t.value(soft_max).item() - mean).abs());
    }
    r.info("hypotheses", h as f64);
    r.info("instances", 20.0);
    r.check("max_gap_eps0_vs_wta", worst[0], worst[0] < TOLERANCE);
    r.check("max_gap_epsmax_vs_mean", worst[1], worst[1] < TOLERANCE);
    Ok(r)
}

fn first_rows(x: &Tensor, n: usize) -> Tensor {
    let idx: Vec<usize> = (0..n.min(x.shape()[0])).collect();
    x.select_rows(&idx)
}

fn points_of(x: &Tensor) -> Vec<[f64; 2]> {
    (0..x.shape()[0]).map(|r| [x.row(r)[0], x.row(r)[1]]).collect()
}

/// Trains the configured model on the flipped half moon and plots prior
/// samples from all heads against data.
pub fn halfmoon_figure(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let cfg = cfg.with(&[("data.generator", "half_moon")])?;
    let ds = data::generate(&cfg.data)?;
    let trained = experiments::train_on(&cfg, &ds)?;
    let model = prior_samples(&trained.generator, 500, cfg.train.seed)?;
    let truth = &ds.train;
    let mut r = DemoReport::default();
    r.info("hypotheses", cfg.model.hypotheses as f64);
    r.info("epochs", trained.report.stopping_epoch() as f64);
    r.info("data_off_manifold_fraction", off_manifold_fraction(truth, 0.1)?);
    r.info("model_off_manifold_fraction", off_manifold_fraction(&model, 0.1)?);
    let title = format!("{} H={}: data vs prior samples", cfg.train.loss.kind, cfg.model.hypotheses);
    let bounds = Bounds { x0: -1.6, x1: 1.6, y0: -1.2, y1: 1.2 };
    let plot = svg::scatter(
        &title,
        &[
            Series { label: "data", color: TRUE_COLOR, points: points_of(truth) },
            Series { label: "model samples", color: MODEL_COLOR, points: points_of(&model) },
        ],
        Some(bounds),
    );
    r.files.push(("halfmoon.svg".into(), plot));
    Ok(r)
}

/// Score landscapes of four detection strategies on 2-D data: single
/// reconstruction, multiple hypotheses (local), mixture (global), LOF.
pub fn strategy_figure(cfg: &ExperimentConfig) -> Result<DemoReport> {
    if cfg.data.kind.side().is_some() {
        return Err(Error::Config("strategy_figure needs 2-D point data".into()));
    }
    let ds = data::generate(&cfg.data)?;
    let h = cfg.model.hypotheses.max(2).to_string();
    let variants: [(&str, Vec<(&str, &str)>, ScoreMode); 3] = [
        ("single hypothesis", vec![("loss.kind", "vae"), ("model.hypotheses", "1")], ScoreMode::WtaLocal),
        ("multiple hypotheses, local", vec![("loss.kind", "wta"), ("model.hypotheses", &h)], ScoreMode::WtaLocal),
        ("mixture, global", vec![("loss.kind", "mdn"), ("model.hypotheses", &h)], ScoreMode::MdnGlobal),
    ];
    let bounds = strategy_bounds(&ds);
    let grid = grid_points(&bounds, GRID);
    let train_pts = points_of(&ds.train);
    let mut r = DemoReport::default();
    let mut panels = Vec::new();
    for (title, pairs, mode) in variants {
        let c = cfg.with(&pairs)?;
        let trained = experiments::train_on(&c, &ds)?;
        let g = &trained.generator;
        let test = test_scores(&ds, |x| Ok(sum_rows(&scoring::pixel_scores(g, x, mode)?)))?;
        r.info(&format!("auroc[{title}]"), test);
        let grid_scores = sum_rows(&scoring::pixel_scores(g, &grid, mode)?);
        panels.push(panel(title, grid_scores, &train_pts));
    }
    let refs: Vec<Vec<f64>> = (0..ds.train.shape()[0]).map(|i| ds.train.row(i).to_vec()).collect();
    let lof = LofModel::fit(&refs, LOF_K)?;
    let lof_rows = |x: &Tensor| (0..x.shape()[0]).map(|i| lof.score(x.row(i))).collect::<Vec<_>>();
    r.info("auroc[local outlier factor]", test_scores(&ds, |x| Ok(lof_rows(x)))?);
    panels.push(panel("local outlier factor", lof_rows(&grid), &train_pts));
    let plot = svg::panels("anomaly score landscapes (dark = anomalous)", bounds, &panels);
    r.files.push(("strategies.svg".into(), plot));
    Ok(r)
}

const GRID: usize = 40;
const LOF_K: usize = 10;

fn strategy_bounds(ds: &Dataset) -> Bounds {
    match ds.params.kind {
        data::DataKind::ImbalancedModes { .. } => Bounds { x0: -4.0, x1: 4.0, y0: -4.0, y1: 4.0 },
        _ => Bounds { x0: -1.6, x1: 1.6, y0: -1.2, y1: 1.2 },
    }
}

/// Cell centres, row-major with the first row at the top of the plot.
fn grid_points(b: &Bounds, n: usize) -> Tensor {
    let mut v = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        let y = b.y1 - (r as f64 + 0.5) / n as f64 * (b.y1 - b.y0);
        for c in 0..n {
            v.push(b.x0 + (c as f64 + 0.5) / n as f64 * (b.x1 - b.x0));
            v.push(y);
        }
    }
    Tensor::matrix(n * n, 2, v).unwrap()
}

fn sum_rows(t: &Tensor) -> Vec<f64> {
    (0..t.shape()[0]).map(|r| t.row(r).iter().sum()).collect()
}

fn test_scores(ds: &Dataset, score: impl Fn(&Tensor) -> Result<Vec<f64>>) -> Result<f64> {
    let mut pairs: Vec<(f64, Label)> = score(&ds.test_normal)?.into_iter().map(|s| (s, Label::Normal)).collect();
    pairs.extend(score(&ds.test_anomaly)?.into_iter().map(|s| (s, Label::Anomaly)));
    Ok(scoring::auroc(&pairs)?.auroc)
}

fn panel<'a>(title: &str, values: Vec<f64>, train: &[[f64; 2]]) -> Panel<'a> {
    Panel {
        title: title.into(),
        values,
        rows: GRID,
        cols: GRID,
        overlay: vec![Series {
            label: "train",
            color: TRUE_COLOR,
            points: train.to_vec(),
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_pairs(&[
            ("data.n", "200"),
            ("model.hypotheses", "3"),
            ("loss.kind", "wta"),
            ("train.epochs_max", "3"),
            ("train.patience", "3"),
        ])
        .unwrap()
    }

    #[test]
    fn lemma_demos_pass() {
        let a = lemma41(&small()).unwrap();
        assert!(a.passed(), "{}", a.to_text());
        assert_eq!(a.get("hypotheses_after"), Some(6.0));
        let b = lemma42(&small()).unwrap();
        assert!(b.passed(), "{}", b.to_text());
        assert!(b.to_text().contains("PASS"));
    }

    #[test]
    fn lemma41_on_images() {
        let c = small().with(&[("data.generator", "texture"), ("data.side", "8")]).unwrap();
        assert!(lemma41(&c).unwrap().passed());
    }

    #[test]
    fn figures_emit_svg() {
        let h = halfmoon_figure(&small()).unwrap();
        let svg = &h.files[0].1;
        assert!(svg.contains(TRUE_COLOR) && svg.contains(MODEL_COLOR));
        let s = strategy_figure(&small()).unwrap();
        assert_eq!(s.files[0].1.matches("local outlier factor").count(), 1);
        assert!(strategy_figure(&small().with(&[("data.generator", "texture")]).unwrap()).is_err());
    }

    #[test]
    fn unknown_demo_is_config_error() {
        assert!(matches!("lemma43".parse::<DemoKind>(), Err(Error::Config(_))));
    }
}
