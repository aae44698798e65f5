//! Training-loop contracts checked through the public API.

use conad::autodiff::Tape;
use conad::config::ExperimentConfig;
use conad::data;
use conad::distributions::standard_normal;
use conad::losses::{self, GeneratorNoise, LossKind};
use conad::models::DiscInput;
use conad::training::{self, build_models, rng_stream};

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    ExperimentConfig::from_pairs(pairs).unwrap()
}

#[test]
fn retained_generator_has_the_best_validation_loss_exactly() {
    let cfg = config(&[
        ("data.generator", "half_moon"),
        ("data.n", "300"),
        ("loss.kind", "conad"),
        ("model.hypotheses", "3"),
        ("train.epochs_max", "12"),
        ("train.patience", "4"),
        ("train.gen_epochs_per_disc", "2"),
    ]);
    let ds = data::generate(&cfg.data).unwrap();
    let (mut gen, mut disc) = build_models(&cfg.model, cfg.train.seed).unwrap();
    let report = training::train(&mut gen, &mut disc, &ds.train, &ds.valid, &cfg.train).unwrap();
    let observed = report
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(report.initial_val_loss, f64::min);
    assert_eq!(report.best_val_loss, observed);
    let again = training::validation_loss(&gen, &ds.valid, &cfg.train.loss).unwrap();
    assert_eq!(again, report.best_val_loss);
    assert!(report.epochs.len() <= 12);
}

#[test]
fn discriminator_beats_chance_after_one_epoch_on_textures() {
    let cfg = config(&[
        ("data.generator", "texture"),
        ("data.n", "300"),
        ("loss.kind", "conad"),
        ("model.hypotheses", "2"),
        ("train.epochs_max", "1"),
        ("train.patience", "1"),
    ]);
    let ds = data::generate(&cfg.data).unwrap();
    let (mut gen, mut disc) = build_models(&cfg.model, cfg.train.seed).unwrap();
    let before = training::discriminator_accuracy(&gen, &disc, &ds.valid, 1).unwrap();
    training::train_adversarial(&mut gen, &mut disc, &ds.train, &ds.valid, &cfg.train).unwrap();
    let after = training::discriminator_accuracy(&gen, &disc, &ds.valid, 1).unwrap();
    assert!(after > 0.5, "accuracy {after} (untrained {before})");
}

#[test]
fn each_objective_reaches_only_its_own_player() {
    let cfg = config(&[("loss.kind", "conad"), ("model.hypotheses", "3")]);
    let ds = data::generate(&cfg.data).unwrap();
    let (gen, disc) = build_models(&cfg.model, 5).unwrap();
    let x = ds.train.select_rows(&(0..16).collect::<Vec<_>>());
    let latent = cfg.model.latent_dim;
    let mut rng = rng_stream(5, 99);
    let noise = GeneratorNoise {
        eps: standard_normal(&[16, latent], &mut rng),
        prior_z: Some(standard_normal(&[16, latent], &mut rng)),
    };

    // generator step: critic frozen
    let mut t = Tape::new();
    let gv = gen.bind(&mut t, true);
    let dv = disc.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let l = losses::generator_loss(&mut t, xv, &gv, Some(&dv), &cfg.train.loss, &noise).unwrap();
    assert!(l.adversarial.is_some());
    let g = t.backward(l.total).unwrap();
    assert!(dv.vars().iter().all(|&v| g.get(v).is_none()));
    assert!(gv.vars().iter().any(|&v| g.get(v).is_some_and(|t| t.data().iter().any(|&e| e != 0.0))));

    // critic step: generator frozen
    let mut t = Tape::new();
    let gv = gen.bind(&mut t, false);
    let dv = disc.bind(&mut t, true);
    let xv = t.constant(x);
    let post = gv.encode(&mut t, xv).unwrap();
    let recon = gv.decode(&mut t, post.mu).unwrap();
    let zp = t.constant(noise.prior_z.unwrap());
    let prior = gv.decode(&mut t, zp).unwrap();
    let real = dv.discriminate(&mut t, DiscInput::Samples(xv)).unwrap();
    let fakes = losses::fake_logits(&mut t, &dv, xv, &recon, &prior).unwrap();
    let l = losses::discriminator_loss(&mut t, real, &fakes).unwrap();
    let g = t.backward(l).unwrap();
    assert!(gv.vars().iter().all(|&v| g.get(v).is_none()));
    assert!(dv.vars().iter().all(|&v| g.get(v).is_some()));
}

#[test]
fn mdn_gan_trains_and_keeps_its_mixing_head() {
    let cfg = config(&[
        ("data.generator", "imbalanced_modes"),
        ("data.n", "200"),
        ("loss.kind", "mdn_gan"),
        ("model.hypotheses", "2"),
        ("train.epochs_max", "3"),
        ("train.patience", "3"),
    ]);
    assert_eq!(cfg.train.loss.kind, LossKind::MdnGan);
    assert!(cfg.model.mixture);
    let ds = data::generate(&cfg.data).unwrap();
    let (mut gen, mut disc) = build_models(&cfg.model, 0).unwrap();
    let r = training::train(&mut gen, &mut disc, &ds.train, &ds.valid, &cfg.train).unwrap();
    assert!(r.discriminator_updates() > 0 && r.generator_updates() > 0);
    assert!(gen.decoder.mixing.is_some() && gen.is_finite());
}
