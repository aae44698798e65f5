use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// Affine map `x·W + b` with `W` of shape `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w).expect("positive layer widths"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> LinearVars {
        let leaf = |t: &mut Tape, v: &Tensor| {
            if trainable {
                t.param(v.clone())
            } else {
                t.constant(v.clone())
            }
        };
        LinearVars {
            weight: leaf(t, &self.weight),
            bias: leaf(t, &self.bias),
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.weight));
        out.push((format!("{prefix}.b"), &self.bias));
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let xw = t.matmul(x, self.weight)?;
        t.add(xw, self.bias)
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

/// Stack of dense layers with leaky-ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
    /// Apply the activation after the final layer as well.
    pub activate_last: bool,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(widths: &[usize], slope: f64, activate_last: bool, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            slope,
            activate_last,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(t, trainable)).collect(),
            slope: self.slope,
            activate_last: self.activate_last,
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.named(&format!("{prefix}.{i}"), out);
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in &mut self.layers {
            l.params_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
    slope: f64,
    activate_last: bool,
}

impl MlpVars {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let n = self.layers.len();
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(t, h)?;
            if i + 1 < n || self.activate_last {
                h = t.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        for l in &self.layers {
            l.vars(out);
        }
    }
}
