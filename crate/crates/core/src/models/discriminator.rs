use std::collections::HashMap;

use rand::Rng;

use super::layers::{Linear, LinearVars, Mlp, MlpVars};
use super::{load_into, ModelConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Offset inside the distance square root; subtracted back out so that
/// identical rows give exactly zero with a finite gradient.
const DIST_EPS: f64 = 1e-24;

/// What the discriminator is asked to judge.
#[derive(Clone, Copy, Debug)]
pub enum DiscInput<'a> {
    /// A plain batch `(n, D)`. For hypothesis discrimination each row is
    /// grouped with the next `H − 1` rows (cyclically).
    Samples(Var),
    /// `H` tensors `(n, D)`: row `i` of every tensor belongs to input `i`.
    Hypotheses(&'a [Var]),
}

/// Dense critic producing one real-vs-fake logit per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub features: Mlp,
    pub output: Linear,
    pub hyp_discrimination: bool,
    /// Group size used for plain batches (the generator's `H`).
    pub group: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.data_dim];
        widths.extend(&config.disc_hidden);
        widths.push(config.disc_features);
        let features = Mlp::init(&widths, config.leaky_slope, true, rng);
        let extra = if config.hyp_discrimination { 2 } else { 0 };
        Ok(Self {
            features,
            output: Linear::init(config.disc_features + extra, 1, rng),
            hyp_discrimination: config.hyp_discrimination,
            group: config.hypotheses,
        })
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            features: self.features.bind(t, trainable),
            output: self.output.bind(t, trainable),
            hyp_discrimination: self.hyp_discrimination,
            group: self.group,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.features.named("disc.feat", &mut out);
        self.output.named("disc.out", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.features.params_mut(&mut out);
        self.output.params_mut(&mut out);
        out
    }

    pub fn load_named(&mut self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let names = self.named_params().into_iter().map(|(n, _)| n).collect();
        load_into(names, self.params_mut(), tensors)
    }

    /// Logits for a batch of samples, off-tape.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let vars = self.bind(&mut t, false);
        let xv = t.constant(x.clone());
        let l = vars.discriminate(&mut t, DiscInput::Samples(xv))?;
        Ok(t.value(l).data().to_vec())
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorVars {
    pub features: MlpVars,
    pub output: LinearVars,
    hyp_discrimination: bool,
    group: usize,
}

impl DiscriminatorVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.features.vars(&mut out);
        self.output.vars(&mut out);
        out
    }

    /// One logit per sample. For [`DiscInput::Hypotheses`] the logits are
    /// ordered hypothesis-major: all rows of hypothesis 0, then 1, ...
    pub fn discriminate(&self, t: &mut Tape, input: DiscInput<'_>) -> Result<Var> {
        let (x, members) = match input {
            DiscInput::Samples(x) => (x, None),
            DiscInput::Hypotheses(hs) => {
                let first = hs
                    .first()
                    .ok_or_else(|| Error::Config("discriminator: empty hypothesis batch".into()))?;
                let shape = t.shape(*first).to_vec();
                if hs.iter().any(|h| t.shape(*h) != shape.as_slice()) {
                    return Err(Error::Config(
                        "discriminator: hypotheses disagree in shape across the batch".into(),
                    ));
                }
                (t.concat(hs, 0)?, Some(hs))
            }
        };
        let feats = self.features.forward(t, x)?;
        let feats = if self.hyp_discrimination {
            let stats = match members {
                Some(hs) => {
                    let s = distance_stats(t, hs)?;
                    let copies = vec![s; hs.len()];
                    t.concat(&copies, 0)?
                }
                None => {
                    let groups = cyclic_groups(t, x, self.group)?;
                    distance_stats(t, &groups)?
                }
            };
            t.concat(&[feats, stats], 1)?
        } else {
            feats
        };
        let logit = self.output.forward(t, feats)?;
        let n = t.shape(logit)[0];
        Ok(t.reshape(logit, &[n])?)
    }
}

/// Row-rotations of `x` standing in for `k` hypotheses of the same input.
fn cyclic_groups(t: &mut Tape, x: Var, k: usize) -> Result<Vec<Var>> {
    let n = t.shape(x)[0];
    let k = k.min(n);
    let mut out = vec![x];
    for s in 1..k {
        let tail = t.slice(x, 0, s, n - s)?;
        let head = t.slice(x, 0, 0, s)?;
        out.push(t.concat(&[tail, head], 0)?);
    }
    Ok(out)
}

/// `(n, 2)`: mean and minimum pairwise L2 distance among the group members
/// of each row. Zero when a group has a single member.
pub(crate) fn distance_stats(t: &mut Tape, members: &[Var]) -> Result<Var> {
    let n = t.shape(members[0])[0];
    if members.len() < 2 {
        return Ok(t.constant(Tensor::zeros(&[n, 2])));
    }
    let mut cols = Vec::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let diff = t.sub(members[a], members[b])?;
            let sq = t.square(diff);
            let ss = t.sum_axis(sq, 1)?;
            let ss = t.add_scalar(ss, DIST_EPS);
            let d = t.sqrt(ss)?;
            let d = t.add_scalar(d, -DIST_EPS.sqrt());
            cols.push(t.reshape(d, &[n, 1])?);
        }
    }
    let p = cols.len() as f64;
    let all = t.concat(&cols, 1)?;
    let total = t.sum_axis(all, 1)?;
    let mean = t.scale(total, 1.0 / p);
    let min = t.min_axis(all, 1)?;
    let mean = t.reshape(mean, &[n, 1])?;
    let min = t.reshape(min, &[n, 1])?;
    Ok(t.concat(&[mean, min], 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let d = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, d).unwrap()
    }

    fn config() -> ModelConfig {
        let mut c = ModelConfig::new(4, 3);
        c.disc_hidden = vec![6];
        c.disc_features = 5;
        c
    }

    #[test]
    fn duplicated_hypotheses_have_zero_distance_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let m = t.constant(rand_matrix(5, 4, &mut rng));
        let s = distance_stats(&mut t, &[m, m, m]).unwrap();
        assert!(t.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_features_ignore_hypothesis_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let hs: Vec<Var> = (0..4).map(|_| t.constant(rand_matrix(3, 4, &mut rng))).collect();
        let a = distance_stats(&mut t, &hs).unwrap();
        let permuted = [hs[2], hs[0], hs[3], hs[1]];
        let b = distance_stats(&mut t, &permuted).unwrap();
        for (u, v) in t.value(a).data().iter().zip(t.value(b).data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_features_hand_case() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let b = t.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let c = t.constant(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
        let s = distance_stats(&mut t, &[a, b, c]).unwrap();
        // pairs: 5, 1, √18
        let want_mean = (5.0 + 1.0 + 18f64.sqrt()) / 3.0;
        let got = t.value(s).data();
        assert!((got[0] - want_mean).abs() < 1e-9);
        assert!((got[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logits_are_finite_and_one_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(&config(), &mut rng).unwrap();
        let x = rand_matrix(7, 4, &mut rng);
        let l = d.logits(&x).unwrap();
        assert_eq!(l.len(), 7);
        assert!(l.iter().all(|v| v.is_finite()));

        let mut t = Tape::new();
        let vars = d.bind(&mut t, false);
        let hs: Vec<Var> = (0..3).map(|_| t.constant(rand_matrix(5, 4, &mut rng))).collect();
        let l = vars.discriminate(&mut t, DiscInput::Hypotheses(&hs)).unwrap();
        assert_eq!(t.shape(l), &[15]);
    }

    #[test]
    fn inconsistent_hypothesis_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Discriminator::new(&config(), &mut rng).unwrap();
        let mut t = Tape::new();
        let vars = d.bind(&mut t, false);
        let a = t.constant(rand_matrix(5, 4, &mut rng));
        let b = t.constant(rand_matrix(4, 4, &mut rng));
        assert!(vars.discriminate(&mut t, DiscInput::Hypotheses(&[a, b])).is_err());
    }

    #[test]
    fn single_row_batch_has_zero_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Discriminator::new(&config(), &mut rng).unwrap();
        let x = rand_matrix(1, 4, &mut rng);
        assert!(d.logits(&x).unwrap()[0].is_finite());
    }
}
