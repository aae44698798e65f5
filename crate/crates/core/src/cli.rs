//! Subcommand bodies behind the `conad` binary. Each writes its outputs
//! and the resolved configuration into the output directory.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::demo::{self, DemoKind, DemoReport};
use crate::error::{Error, Result};
use crate::experiments::{self, Trained};
use crate::models::{read_checkpoint, write_checkpoint, Generator};
use crate::scoring::{self, min_max_normalize, Label, RocResult};
use crate::svg::{self, Series};
use crate::training::{self, TrainReport};

pub const CONFIG_ECHO: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SCORES_FILE: &str = "scores.csv";
pub const ROC_FILE: &str = "roc.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_ECHO), cfg.to_text())
}

fn load_data(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Dataset> {
    let ds = match path {
        Some(p) => data::read_dataset(p)?,
        None => data::generate(&cfg.data)?,
    };
    if ds.dim() != cfg.model.data_dim {
        return Err(Error::Config(format!(
            "dataset has dimension {}, configuration expects {}",
            ds.dim(),
            cfg.model.data_dim
        )));
    }
    Ok(ds)
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    prepare(out, cfg)?;
    let ds = data::generate(&cfg.data)?;
    data::write_dataset(out, &ds)?;
    Ok(ds)
}

/// Trains on `data` (or freshly generated data) and writes the checkpoint,
/// `train_report.csv` and `timing.txt`.
pub fn cmd_train(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<TrainReport> {
    prepare(out, cfg)?;
    let ds = load_data(cfg, data)?;
    let Trained {
        generator,
        discriminator,
        report,
    } = experiments::train_on(cfg, &ds)?;
    let mut tensors = generator.named_params();
    tensors.extend(discriminator.named_params());
    write_checkpoint(&out.join(CHECKPOINT_FILE), &tensors)?;
    report.write_csv(out)?;
    Ok(report)
}

/// Generator configured by `cfg` with parameters from `checkpoint`.
pub fn load_generator(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Generator> {
    let tensors: HashMap<String, Tensor> = read_checkpoint(checkpoint)?.into_iter().collect();
    let (mut gen, _) = training::build_models(&cfg.model, cfg.train.seed)?;
    let expected: BTreeSet<String> = gen.named_params().into_iter().map(|(n, _)| n).collect();
    let stored: BTreeSet<String> = tensors
        .keys()
        .filter(|k| k.starts_with("enc.") || k.starts_with("dec."))
        .cloned()
        .collect();
    if expected != stored {
        let extra: Vec<_> = stored.difference(&expected).collect();
        let missing: Vec<_> = expected.difference(&stored).collect();
        return Err(Error::Config(format!(
            "checkpoint does not match the configured model (unexpected {extra:?}, missing {missing:?})"
        )));
    }
    gen.load_named(&tensors)?;
    Ok(gen)
}

/// Scores, ROC curve and figures for a trained checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<RocResult> {
    prepare(out, cfg)?;
    let ds = load_data(cfg, data)?;
    let gen = load_generator(cfg, checkpoint)?;
    let samples = experiments::score_on(cfg, &gen, &ds)?;
    let roc = experiments::roc_of(&samples)?;
    write(&out.join(SCORES_FILE), scoring::scores_csv(&samples, &roc))?;
    let mut curve = String::from("threshold,tpr,fpr\n");
    for ((t, tp), fp) in roc.thresholds.iter().zip(&roc.tpr).zip(&roc.fpr) {
        curve.push_str(&format!("{t},{tp},{fp}\n"));
    }
    write(&out.join(ROC_FILE), curve)?;

    match ds.side() {
        Some(side) => {
            let dir = out.join("heatmaps");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, s) in samples.iter().enumerate() {
                let title = format!("sample {i} ({}), score {:.3}", s.label, s.aggregate);
                write(&dir.join(format!("{i:05}_{}.svg", s.label)), svg::heatmap(&title, &s.pixel_nll, side))?;
            }
        }
        None => {
            let normal = ds.split(if cfg.score.split == "test" { "test_normal" } else { &cfg.score.split })?;
            let pts = |x: &Tensor| (0..x.shape()[0]).map(|r| [x.row(r)[0], x.row(r)[1]]).collect::<Vec<_>>();
            let mut all = pts(normal);
            if cfg.score.split == "test" {
                all.extend(pts(&ds.test_anomaly));
            }
            let norm = min_max_normalize(&samples.iter().map(|s| s.aggregate).collect::<Vec<_>>());
            let high: Vec<[f64; 2]> = all.iter().zip(&norm).filter(|(_, v)| **v >= 0.5).map(|(p, _)| *p).collect();
            let labelled = |l: Label| {
                all.iter()
                    .zip(&samples)
                    .filter(|(_, s)| s.label == l)
                    .map(|(p, _)| *p)
                    .collect::<Vec<_>>()
            };
            let plot = svg::scatter(
                &format!("test scores, AUROC {:.4}", roc.auroc),
                &[
                    Series { label: "normal", color: "#1f77b4", points: labelled(Label::Normal) },
                    Series { label: "anomaly", color: "#ff7f0e", points: labelled(Label::Anomaly) },
                    Series { label: "normalized score >= 0.5", color: "#000000", points: high },
                ],
                None,
            );
            write(&out.join("scatter.svg"), plot)?;
        }
    }
    Ok(roc)
}

pub fn cmd_demo(kind: DemoKind, cfg: &ExperimentConfig, out: &Path) -> Result<DemoReport> {
    prepare(out, cfg)?;
    let report = demo::run(kind, cfg)?;
    write(&out.join("report.txt"), report.to_text())?;
    for (name, contents) in &report.files {
        write(&out.join(name), contents)?;
    }
    Ok(report)
}
