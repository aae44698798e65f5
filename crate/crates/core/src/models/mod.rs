//! Encoder, multi-head decoder and discriminator, built from dense layers.
//!
//! All heads of the decoder share the encoder, the latent code and the
//! decoder trunk; only the last layer differs per hypothesis. Each head
//! emits a mean and a log-σ for every output dimension.

mod checkpoint;
mod discriminator;
mod layers;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use discriminator::{DiscInput, Discriminator, DiscriminatorVars};
pub use layers::{Linear, LinearVars, Mlp, MlpVars};

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::distributions::{DiagGaussian, LatentPosterior, HALF_LN_2PI, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::error::{Error, Result};

/// Architecture description shared by generator and discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hypotheses: usize,
    /// Adds a mixing-logit head (MDN mode).
    pub mixture: bool,
    /// Feed pairwise hypothesis distances to the discriminator.
    pub hyp_discrimination: bool,
    pub leaky_slope: f64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub disc_features: usize,
}

impl ModelConfig {
    pub fn new(data_dim: usize, hypotheses: usize) -> Self {
        Self {
            data_dim,
            latent_dim: 8,
            hypotheses,
            mixture: false,
            hyp_discrimination: true,
            leaky_slope: 0.2,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            disc_hidden: vec![64, 32],
            disc_features: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hypotheses == 0 {
            return Err(Error::Config("model.hypotheses must be at least 1".into()));
        }
        if self.data_dim == 0 || self.latent_dim == 0 || self.disc_features == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let widths = [&self.encoder_hidden, &self.decoder_hidden, &self.disc_hidden];
        if widths.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-input set of `H` diagonal Gaussians, optionally with mixing logits.
#[derive(Clone, Debug)]
pub struct HypothesisSet {
    pub hypotheses: Vec<DiagGaussian>,
    /// `(batch, H)` logits, present in MDN mode.
    pub mix_logits: Option<Var>,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn means(&self) -> Vec<Var> {
        self.hypotheses.iter().map(|h| h.mu).collect()
    }

    /// Copies the hypothesis parameters off the tape.
    pub fn values(&self, t: &Tape) -> HypothesisValues {
        HypothesisValues {
            mu: self.hypotheses.iter().map(|h| t.value(h.mu).clone()).collect(),
            log_sigma: self.hypotheses.iter().map(|h| t.value(h.log_sigma).clone()).collect(),
            mix_logits: self.mix_logits.map(|v| t.value(v).clone()),
        }
    }
}

/// Plain-value counterpart of [`HypothesisSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisValues {
    pub mu: Vec<Tensor>,
    pub log_sigma: Vec<Tensor>,
    pub mix_logits: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub net: Mlp,
    pub latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadDecoder {
    pub trunk: Mlp,
    pub heads: Vec<Linear>,
    pub mixing: Option<Linear>,
    pub data_dim: usize,
}

/// Encoder plus multi-head decoder: everything the generator loss updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: MultiHeadDecoder,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let slope = config.leaky_slope;
        let (d, z) = (config.data_dim, config.latent_dim);

        let mut enc_w = vec![d];
        enc_w.extend(&config.encoder_hidden);
        enc_w.push(2 * z);
        let encoder = Encoder {
            net: Mlp::init(&enc_w, slope, false, rng),
            latent_dim: z,
        };

        let mut trunk_w = vec![z];
        trunk_w.extend(&config.decoder_hidden);
        let trunk = Mlp::init(&trunk_w, slope, true, rng);
        let top = *trunk_w.last().unwrap();
        let heads = (0..config.hypotheses).map(|_| Linear::init(top, 2 * d, rng)).collect();
        let mixing = config
            .mixture
            .then(|| Linear::init(top, config.hypotheses, rng));

        Ok(Self {
            config: config.clone(),
            encoder,
            decoder: MultiHeadDecoder {
                trunk,
                heads,
                mixing,
                data_dim: d,
            },
        })
    }

    pub fn hypotheses(&self) -> usize {
        self.decoder.heads.len()
    }

    /// Appends a decoder head; mixing logits, if any, get a zero-initialized column.
    pub fn push_head(&mut self, head: Linear) -> Result<()> {
        let top = self.decoder.trunk.widths().last().copied().unwrap();
        if head.fan_in() != top || head.fan_out() != 2 * self.config.data_dim {
            return Err(Error::Config(format!(
                "head must map {top} -> {}, got {} -> {}",
                2 * self.config.data_dim,
                head.fan_in(),
                head.fan_out()
            )));
        }
        self.decoder.heads.push(head);
        if let Some(mix) = &mut self.decoder.mixing {
            let h = mix.fan_out();
            let mut w = Vec::with_capacity(top * (h + 1));
            for r in 0..top {
                w.extend_from_slice(&mix.weight.data()[r * h..(r + 1) * h]);
                w.push(0.0);
            }
            mix.weight = Tensor::matrix(top, h + 1, w)?;
            let mut b = mix.bias.data().to_vec();
            b.push(0.0);
            mix.bias = Tensor::vector(b);
        }
        self.config.hypotheses += 1;
        Ok(())
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> GeneratorVars {
        GeneratorVars {
            encoder: self.encoder.net.bind(t, trainable),
            trunk: self.decoder.trunk.bind(t, trainable),
            heads: self.decoder.heads.iter().map(|h| h.bind(t, trainable)).collect(),
            mixing: self.decoder.mixing.as_ref().map(|m| m.bind(t, trainable)),
            latent_dim: self.encoder.latent_dim,
            data_dim: self.decoder.data_dim,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.encoder.net.named("enc", &mut out);
        self.decoder.trunk.named("dec.trunk", &mut out);
        for (i, h) in self.decoder.heads.iter().enumerate() {
            h.named(&format!("dec.head.{i}"), &mut out);
        }
        if let Some(m) = &self.decoder.mixing {
            m.named("dec.mix", &mut out);
        }
        out
    }

    /// Same order as [`Generator::named_params`] and [`GeneratorVars::vars`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.encoder.net.params_mut(&mut out);
        self.decoder.trunk.params_mut(&mut out);
        for h in &mut self.decoder.heads {
            h.params_mut(&mut out);
        }
        if let Some(m) = &mut self.decoder.mixing {
            m.params_mut(&mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }

    /// Overwrites parameters from a name → tensor map; names and shapes must match.
    pub fn load_named(&mut self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        load_into(self.named_params().into_iter().map(|(n, _)| n).collect(), self.params_mut(), tensors)
    }

    /// Decodes with `z` set to the posterior mean.
    pub fn infer(&self, x: &Tensor) -> Result<HypothesisValues> {
        let mut t = Tape::new();
        let vars = self.bind(&mut t, false);
        let xv = t.constant(x.clone());
        let post = vars.encode(&mut t, xv)?;
        let hyps = vars.decode(&mut t, post.mu)?;
        Ok(hyps.values(&t))
    }

    /// Decodes arbitrary latent codes, shape `(n, latent_dim)`.
    pub fn decode_latent(&self, z: &Tensor) -> Result<HypothesisValues> {
        let mut t = Tape::new();
        let vars = self.bind(&mut t, false);
        let zv = t.constant(z.clone());
        let hyps = vars.decode(&mut t, zv)?;
        Ok(hyps.values(&t))
    }
}

pub(crate) fn load_into(
    names: Vec<String>,
    params: Vec<&mut Tensor>,
    tensors: &HashMap<String, Tensor>,
) -> Result<()> {
    for (name, p) in names.into_iter().zip(params) {
        let src = tensors
            .get(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name}")))?;
        if src.shape() != p.shape() {
            return Err(Error::Config(format!(
                "tensor {name}: checkpoint shape {:?}, model expects {:?}",
                src.shape(),
                p.shape()
            )));
        }
        *p = src.clone();
    }
    Ok(())
}

/// Generator parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub encoder: MlpVars,
    pub trunk: MlpVars,
    pub heads: Vec<LinearVars>,
    pub mixing: Option<LinearVars>,
    latent_dim: usize,
    data_dim: usize,
}

impl GeneratorVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.encoder.vars(&mut out);
        self.trunk.vars(&mut out);
        for h in &self.heads {
            h.vars(&mut out);
        }
        if let Some(m) = &self.mixing {
            m.vars(&mut out);
        }
        out
    }

    /// `x` of shape `(batch, D)` to the latent posterior `(batch, d)`.
    pub fn encode(&self, t: &mut Tape, x: Var) -> Result<LatentPosterior> {
        let s = t.shape(x);
        if s.len() != 2 || s[1] != self.data_dim {
            return Err(Error::Config(format!(
                "encoder expects (batch, {}), got {:?}",
                self.data_dim, s
            )));
        }
        let out = self.encoder.forward(t, x)?;
        let d = self.latent_dim;
        Ok(LatentPosterior {
            mu: t.slice(out, 1, 0, d)?,
            log_sigma: t.slice(out, 1, d, d)?,
        })
    }

    /// `z` of shape `(batch, d)` to `H` hypotheses over `(batch, D)`.
    pub fn decode(&self, t: &mut Tape, z: Var) -> Result<HypothesisSet> {
        if self.heads.is_empty() {
            return Err(Error::Config("decoder has no heads".into()));
        }
        let s = t.shape(z);
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Config(format!(
                "decoder expects (batch, {}), got {:?}",
                self.latent_dim, s
            )));
        }
        let h = self.trunk.forward(t, z)?;
        let d = self.data_dim;
        let mut hypotheses = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let out = head.forward(t, h)?;
            let mu = t.slice(out, 1, 0, d)?;
            let raw = t.slice(out, 1, d, d)?;
            let log_sigma = t.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            hypotheses.push(DiagGaussian { mu, log_sigma });
        }
        let mix_logits = match &self.mixing {
            Some(m) => Some(m.forward(t, h)?),
            None => None,
        };
        Ok(HypothesisSet {
            hypotheses,
            mix_logits,
        })
    }
}

/// Per-dimension Gaussian NLL on plain values, same operation order as
/// [`crate::distributions::gaussian_nll`].
#[inline]
pub(crate) fn nll_value(x: f64, mu: f64, log_sigma: f64) -> f64 {
    let d = x - mu;
    0.5 * (d * d * (-2.0 * log_sigma).exp()) + log_sigma + HALF_LN_2PI
}

/// Index of the best hypothesis for every element of `x`; lowest index on ties.
pub fn pixel_winners(x: &Tensor, mu: &[Tensor], log_sigma: &[Tensor]) -> Vec<usize> {
    let mut best = vec![f64::INFINITY; x.len()];
    let mut arg = vec![0usize; x.len()];
    for (h, (m, ls)) in mu.iter().zip(log_sigma).enumerate() {
        for (i, &xi) in x.data().iter().enumerate() {
            let v = nll_value(xi, m.data()[i], ls.data()[i]);
            if h == 0 || v < best[i] {
                best[i] = v;
                arg[i] = h;
            }
        }
    }
    arg
}

/// Pixel-wise mosaic of the winning hypotheses' means.
pub fn best_guess_assembly(x: &Tensor, h: &HypothesisValues) -> Result<Tensor> {
    for m in &h.mu {
        if m.shape() != x.shape() {
            return Err(Error::Config(format!(
                "best-guess: hypothesis shape {:?} vs input {:?}",
                m.shape(),
                x.shape()
            )));
        }
    }
    let win = pixel_winners(x, &h.mu, &h.log_sigma);
    let data = win.iter().enumerate().map(|(i, &w)| h.mu[w].data()[i]).collect();
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}

/// Taped best-guess assembly: winners are fixed from current values and the
/// gradient flows into each winning mean.
pub fn best_guess_on_tape(t: &mut Tape, x: Var, h: &HypothesisSet) -> Result<Var> {
    let mu: Vec<Tensor> = h.hypotheses.iter().map(|g| t.value(g.mu).clone()).collect();
    let ls: Vec<Tensor> = h.hypotheses.iter().map(|g| t.value(g.log_sigma).clone()).collect();
    let xs = t.value(x).clone();
    for m in &mu {
        if m.shape() != xs.shape() {
            return Err(Error::Config("best-guess: shape mismatch".into()));
        }
    }
    let win = pixel_winners(&xs, &mu, &ls);
    let mut acc: Option<Var> = None;
    for (k, g) in h.hypotheses.iter().enumerate() {
        let mask: Vec<f64> = win.iter().map(|&w| if w == k { 1.0 } else { 0.0 }).collect();
        let mask = t.constant(Tensor::new(xs.shape().to_vec(), mask)?);
        let part = t.mul(mask, g.mu)?;
        acc = Some(match acc {
            None => part,
            Some(a) => t.add(a, part)?,
        });
    }
    acc.ok_or_else(|| Error::Config("best-guess: empty hypothesis set".into()))
}
