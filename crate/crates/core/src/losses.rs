//! Training objectives: winner-takes-all, its ε-softened variant, the
//! mixture-density NLL, and the adversarial discriminator/generator pair.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::distributions::{self, gaussian_nll, LatentPosterior, MixtureParams};
use crate::error::{Error, Result};
use crate::models::{best_guess_on_tape, DiscInput, DiscriminatorVars, GeneratorVars, HypothesisSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Single-head VAE: WTA with `H = 1`.
    Vae,
    Wta,
    SoftWta,
    Mdn,
    /// WTA plus discriminator critic.
    Conad,
    /// MDN plus discriminator critic.
    MdnGan,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Vae,
        LossKind::Wta,
        LossKind::SoftWta,
        LossKind::Mdn,
        LossKind::Conad,
        LossKind::MdnGan,
    ];

    pub fn is_adversarial(self) -> bool {
        matches!(self, LossKind::Conad | LossKind::MdnGan)
    }

    pub fn needs_mixture(self) -> bool {
        matches!(self, LossKind::Mdn | LossKind::MdnGan)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Vae => "vae",
            LossKind::Wta => "wta",
            LossKind::SoftWta => "soft_wta",
            LossKind::Mdn => "mdn",
            LossKind::Conad => "conad",
            LossKind::MdnGan => "mdn_gan",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown loss kind {s:?}; expected one of vae, wta, soft_wta, mdn, conad, mdn_gan"
                ))
            })
    }
}

/// Where the winner is chosen: per output element or per whole sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Pixel,
    Sample,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Pixel => "pixel",
            Granularity::Sample => "sample",
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Granularity::Pixel),
            "sample" => Ok(Granularity::Sample),
            _ => Err(Error::Config(format!(
                "unknown granularity {s:?}; expected pixel or sample"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Share of the signal given to non-winning hypotheses (soft-WTA only).
    pub epsilon: f64,
    pub granularity: Granularity,
    pub adv_weight: f64,
    pub kl_weight: f64,
    pub symmetric_kl: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Wta,
            epsilon: 0.0,
            granularity: Granularity::Pixel,
            adv_weight: 1.0,
            kl_weight: 1.0,
            symmetric_kl: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, hypotheses: usize, mixture: bool) -> Result<()> {
        if self.kind == LossKind::Vae && hypotheses != 1 {
            return Err(Error::Config(format!(
                "loss.kind=vae needs model.hypotheses=1, got {hypotheses}"
            )));
        }
        if self.kind.needs_mixture() && !mixture {
            return Err(Error::Config(format!(
                "loss.kind={} needs the mixing head",
                self.kind
            )));
        }
        check_epsilon(self.epsilon, hypotheses)?;
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::Config("loss.kl_weight must be a finite value >= 0".into()));
        }
        if !(self.adv_weight >= 0.0) || !self.adv_weight.is_finite() {
            return Err(Error::Config("loss.adv_weight must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

fn check_epsilon(eps: f64, hypotheses: usize) -> Result<()> {
    let max = (hypotheses as f64 - 1.0) / hypotheses as f64;
    if !(0.0..=max + 1e-12).contains(&eps) {
        return Err(Error::Config(format!(
            "epsilon {eps} outside [0, {max}] for {hypotheses} hypotheses"
        )));
    }
    Ok(())
}

/// Per-element NLL of every hypothesis, stacked to `(batch, H, D)`.
pub fn nll_stack(t: &mut Tape, x: Var, h: &HypothesisSet) -> Result<Var> {
    if h.is_empty() {
        return Err(Error::Config("empty hypothesis set".into()));
    }
    let (b, d) = (t.shape(x)[0], t.shape(x)[1]);
    let parts = h
        .hypotheses
        .iter()
        .map(|g| {
            let nll = gaussian_nll(t, x, g)?;
            t.reshape(nll, &[b, 1, d])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(t.concat(&parts, 1)?)
}

/// Winner-takes-all NLL, averaged over the batch.
///
/// Sample granularity: `min_h Σ_d nll`. Pixel granularity: `Σ_d min_h nll`.
pub fn wta_loss(t: &mut Tape, x: Var, h: &HypothesisSet, granularity: Granularity) -> Result<Var> {
    let stack = nll_stack(t, x, h)?;
    let per_sample = match granularity {
        Granularity::Sample => {
            let s = t.sum_axis(stack, 2)?;
            t.min_axis(s, 1)?
        }
        Granularity::Pixel => {
            let m = t.min_axis(stack, 1)?;
            t.sum_axis(m, 1)?
        }
    };
    Ok(t.mean(per_sample))
}

/// Relaxed WTA: the winner is weighted `1 − ε`, every other hypothesis
/// `ε / (H − 1)`.
pub fn soft_wta_loss(
    t: &mut Tape,
    x: Var,
    h: &HypothesisSet,
    epsilon: f64,
    granularity: Granularity,
) -> Result<Var> {
    let n_h = h.len();
    check_epsilon(epsilon, n_h)?;
    let stack = nll_stack(t, x, h)?;
    let scores = match granularity {
        Granularity::Sample => t.sum_axis(stack, 2)?,
        Granularity::Pixel => stack,
    };
    let weights = winner_weights(t.value(scores), epsilon);
    let w = t.constant(weights);
    let weighted = t.mul(scores, w)?;
    let per_sample = match granularity {
        Granularity::Sample => t.sum_axis(weighted, 1)?,
        Granularity::Pixel => {
            let s = t.sum_axis(weighted, 1)?;
            t.sum_axis(s, 1)?
        }
    };
    Ok(t.mean(per_sample))
}

/// Weights over axis 1 of `scores` (`(B, H)` or `(B, H, D)`): `1 − ε` on
/// the lowest score (first on ties), `ε / (H − 1)` elsewhere.
fn winner_weights(scores: &Tensor, epsilon: f64) -> Tensor {
    let shape = scores.shape();
    let (b, n_h) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let other = if n_h > 1 { epsilon / (n_h - 1) as f64 } else { 0.0 };
    let mut w = vec![other; scores.len()];
    let s = scores.data();
    for o in 0..b {
        for i in 0..inner {
            let at = |k: usize| (o * n_h + k) * inner + i;
            let mut best = 0;
            for k in 1..n_h {
                if s[at(k)] < s[at(best)] {
                    best = k;
                }
            }
            w[at(best)] = 1.0 - epsilon;
        }
    }
    Tensor::new(shape.to_vec(), w).expect("same shape as scores")
}

/// Batch mean of the mixture NLL over whole samples.
pub fn mdn_loss(t: &mut Tape, x: Var, h: &HypothesisSet) -> Result<Var> {
    let log_alpha = h
        .mix_logits
        .ok_or_else(|| Error::Config("mdn loss needs mixing logits".into()))?;
    let m = MixtureParams {
        components: h.hypotheses.clone(),
        log_alpha,
    };
    let nll = distributions::gmm_nll(t, x, &m)?;
    Ok(t.mean(nll))
}

/// The data term selected by `cfg.kind`.
pub fn reconstruction_loss(t: &mut Tape, x: Var, h: &HypothesisSet, cfg: &LossConfig) -> Result<Var> {
    match cfg.kind {
        LossKind::Vae | LossKind::Wta | LossKind::Conad => wta_loss(t, x, h, cfg.granularity),
        LossKind::SoftWta => soft_wta_loss(t, x, h, cfg.epsilon, cfg.granularity),
        LossKind::Mdn | LossKind::MdnGan => mdn_loss(t, x, h),
    }
}

/// Batch mean of the latent KL.
pub fn kl_loss(t: &mut Tape, post: &LatentPosterior, symmetrized: bool) -> Result<Var> {
    let kl = distributions::kl_to_standard_normal(t, post, symmetrized)?;
    Ok(t.mean(kl))
}

/// Discriminator logits for the three fake sources, in the order
/// prior-decoded samples, per-hypothesis reconstructions, best guess.
pub fn fake_logits(
    t: &mut Tape,
    disc: &DiscriminatorVars,
    x: Var,
    recon: &HypothesisSet,
    prior: &HypothesisSet,
) -> Result<[Var; 3]> {
    let prior_means = prior.means();
    let from_prior = disc.discriminate(t, DiscInput::Hypotheses(&prior_means))?;
    let recon_means = recon.means();
    let from_recon = disc.discriminate(t, DiscInput::Hypotheses(&recon_means))?;
    let best = best_guess_on_tape(t, x, recon)?;
    let from_best = disc.discriminate(t, DiscInput::Samples(best))?;
    Ok([from_prior, from_recon, from_best])
}

/// Binary cross-entropy with label 1 on real logits and label 0 on each fake
/// source; the fake sources are averaged with equal weight.
pub fn discriminator_loss(t: &mut Tape, real: Var, fakes: &[Var]) -> Result<Var> {
    if fakes.len() != 3 {
        return Err(Error::Config(format!(
            "discriminator loss needs 3 fake sources, got {}",
            fakes.len()
        )));
    }
    let neg = t.neg(real);
    let sp = t.softplus(neg);
    let real_term = t.mean(sp);
    let mut fake_sum: Option<Var> = None;
    for &f in fakes {
        let sp = t.softplus(f);
        let m = t.mean(sp);
        fake_sum = Some(match fake_sum {
            None => m,
            Some(s) => t.add(s, m)?,
        });
    }
    let fake_term = t.scale(fake_sum.unwrap(), 1.0 / 3.0);
    Ok(t.add(real_term, fake_term)?)
}

/// Non-saturating generator objective `−log D(fake)`, averaged over sources.
pub fn adversarial_generator_loss(t: &mut Tape, fakes: &[Var]) -> Result<Var> {
    let mut sum: Option<Var> = None;
    for &f in fakes {
        let neg = t.neg(f);
        let sp = t.softplus(neg);
        let m = t.mean(sp);
        sum = Some(match sum {
            None => m,
            Some(s) => t.add(s, m)?,
        });
    }
    let sum = sum.ok_or_else(|| Error::Config("no fake sources".into()))?;
    Ok(t.scale(sum, 1.0 / fakes.len() as f64))
}

/// Random inputs for one generator step.
#[derive(Clone, Debug)]
pub struct GeneratorNoise {
    /// Reparameterization noise, `(batch, d)`.
    pub eps: Tensor,
    /// Latent codes for the prior-decoded fake source, `(batch, d)`.
    pub prior_z: Option<Tensor>,
}

/// Terms of the generator objective, all scalars on the tape.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub adversarial: Option<Var>,
}

/// `L_G = reconstruction + kl_weight · KL + adv_weight · adversarial`.
///
/// The adversarial term is skipped entirely when `adv_weight` is zero or
/// the loss kind has no critic.
pub fn generator_loss(
    t: &mut Tape,
    x: Var,
    gen: &GeneratorVars,
    disc: Option<&DiscriminatorVars>,
    cfg: &LossConfig,
    noise: &GeneratorNoise,
) -> Result<GeneratorLoss> {
    let post = gen.encode(t, x)?;
    let z = distributions::reparam_with_noise(t, &post, noise.eps.clone())?;
    let hyps = gen.decode(t, z)?;
    let reconstruction = reconstruction_loss(t, x, &hyps, cfg)?;
    let kl = kl_loss(t, &post, cfg.symmetric_kl)?;
    let weighted_kl = t.scale(kl, cfg.kl_weight);
    let mut total = t.add(reconstruction, weighted_kl)?;

    let mut adversarial = None;
    if cfg.kind.is_adversarial() && cfg.adv_weight != 0.0 {
        let disc = disc.ok_or_else(|| Error::Config("adversarial loss needs a discriminator".into()))?;
        let prior_z = noise
            .prior_z
            .as_ref()
            .ok_or_else(|| Error::Config("adversarial loss needs prior samples".into()))?;
        let zp = t.constant(prior_z.clone());
        let prior = gen.decode(t, zp)?;
        let fakes = fake_logits(t, disc, x, &hyps, &prior)?;
        let adv = adversarial_generator_loss(t, &fakes)?;
        let weighted = t.scale(adv, cfg.adv_weight);
        total = t.add(total, weighted)?;
        adversarial = Some(adv);
    }
    Ok(GeneratorLoss {
        total,
        reconstruction,
        kl,
        adversarial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiagGaussian, HALF_LN_2PI};

    fn hyps(t: &mut Tape, mus: &[&[f64]], ls: &[&[f64]], rows: usize) -> HypothesisSet {
        let hypotheses = mus
            .iter()
            .zip(ls)
            .map(|(m, l)| {
                let cols = m.len() / rows;
                DiagGaussian {
                    mu: t.param(Tensor::matrix(rows, cols, m.to_vec()).unwrap()),
                    log_sigma: t.param(Tensor::matrix(rows, cols, l.to_vec()).unwrap()),
                }
            })
            .collect();
        HypothesisSet {
            hypotheses,
            mix_logits: None,
        }
    }

    #[test]
    fn wta_hand_case() {
        let mut t = Tape::new();
        let h = hyps(&mut t, &[&[-1.0], &[0.1]], &[&[0.0], &[0.0]], 1);
        let x = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let l = wta_loss(&mut t, x, &h, Granularity::Sample).unwrap();
        assert!((t.value(l).item() - (HALF_LN_2PI + 0.005)).abs() < 1e-12);
        assert!((t.value(l).item() - 0.923939).abs() < 1e-6);
    }

    #[test]
    fn pixel_never_exceeds_sample() {
        let mut t = Tape::new();
        let h = hyps(
            &mut t,
            &[&[0.0, 2.0, 1.0, -1.0], &[2.0, 0.0, 0.5, 0.5]],
            &[&[0.1, -0.2, 0.0, 0.3], &[0.0, 0.0, -0.1, 0.2]],
            2,
        );
        let x = t.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let p = wta_loss(&mut t, x, &h, Granularity::Pixel).unwrap();
        let s = wta_loss(&mut t, x, &h, Granularity::Sample).unwrap();
        assert!(t.value(p).item() <= t.value(s).item());
    }

    #[test]
    fn soft_wta_quarter_epsilon() {
        let mut t = Tape::new();
        let h = hyps(&mut t, &[&[-1.0], &[0.1]], &[&[0.0], &[0.0]], 1);
        let x = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let l = soft_wta_loss(&mut t, x, &h, 0.25, Granularity::Sample).unwrap();
        let winner = HALF_LN_2PI + 0.005;
        let loser = HALF_LN_2PI + 0.5;
        assert!((t.value(l).item() - (0.75 * winner + 0.25 * loser)).abs() < 1e-12);
    }

    #[test]
    fn soft_wta_rejects_out_of_range_epsilon() {
        let mut t = Tape::new();
        let h = hyps(&mut t, &[&[-1.0], &[0.1]], &[&[0.0], &[0.0]], 1);
        let x = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        assert!(soft_wta_loss(&mut t, x, &h, 0.6, Granularity::Sample).is_err());
        assert!(soft_wta_loss(&mut t, x, &h, -0.1, Granularity::Sample).is_err());
    }

    #[test]
    fn mdn_needs_logits() {
        let mut t = Tape::new();
        let h = hyps(&mut t, &[&[0.0]], &[&[0.0]], 1);
        let x = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        assert!(matches!(mdn_loss(&mut t, x, &h), Err(Error::Config(_))));
    }

    #[test]
    fn mdn_single_head_is_plain_nll() {
        let mut t = Tape::new();
        let mut h = hyps(&mut t, &[&[0.3, -0.2]], &[&[0.1, 0.4]], 1);
        h.mix_logits = Some(t.constant(Tensor::matrix(1, 1, vec![1.5]).unwrap()));
        let x = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.5]).unwrap());
        let m = mdn_loss(&mut t, x, &h).unwrap();
        let w = wta_loss(&mut t, x, &h, Granularity::Sample).unwrap();
        assert!((t.value(m).item() - t.value(w).item()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_limits() {
        let mut t = Tape::new();
        let zero = |t: &mut Tape| t.constant(Tensor::zeros(&[4]));
        let real = zero(&mut t);
        let fakes = [zero(&mut t), zero(&mut t), zero(&mut t)];
        let l = discriminator_loss(&mut t, real, &fakes).unwrap();
        assert!((t.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-15);

        let real = t.constant(Tensor::full(&[4], 30.0));
        let f = t.constant(Tensor::full(&[4], -30.0));
        let l = discriminator_loss(&mut t, real, &[f, f, f]).unwrap();
        assert!(t.value(l).item() < 1e-12);

        assert!(discriminator_loss(&mut t, real, &[f, f]).is_err());
    }

    #[test]
    fn loss_config_validation() {
        let mut c = LossConfig {
            kind: LossKind::Vae,
            ..LossConfig::default()
        };
        assert!(c.validate(2, false).is_err());
        assert!(c.validate(1, false).is_ok());
        c.kind = LossKind::Mdn;
        assert!(c.validate(2, false).is_err());
        assert!(c.validate(2, true).is_ok());
        c.kind = LossKind::SoftWta;
        c.epsilon = 0.75;
        assert!(c.validate(4, false).is_ok());
        assert!(c.validate(2, false).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("gan".parse::<LossKind>().is_err());
    }
}
