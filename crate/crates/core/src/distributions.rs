//! Diagonal Gaussians, Gaussian mixtures and latent KL terms, all recorded
//! on a [`Tape`] so every quantity is differentiable.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// `0.5 · ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Decoder log-σ is clamped into this range before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;

/// Per-dimension Gaussian with `σ = exp(log_sigma)`.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Mixture of diagonal Gaussians with unnormalized mixing logits.
#[derive(Clone, Debug)]
pub struct MixtureParams {
    pub components: Vec<DiagGaussian>,
    /// Shape `(batch, H)`; normalized with a log-softmax.
    pub log_alpha: Var,
}

/// Encoder output `q(z|x)`.
#[derive(Clone, Copy, Debug)]
pub struct LatentPosterior {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Elementwise negative log-density, same shape as `x`:
/// `½ln(2π) + log σ + (x − μ)² / (2σ²)`.
pub fn gaussian_nll(t: &mut Tape, x: Var, g: &DiagGaussian) -> Result<Var, AutodiffError> {
    if t.shape(x) != t.shape(g.mu) || t.shape(g.mu) != t.shape(g.log_sigma) {
        return Err(AutodiffError::Shape {
            op: "gaussian_nll",
            lhs: t.shape(x).to_vec(),
            rhs: t.shape(g.mu).to_vec(),
        });
    }
    let diff = t.sub(x, g.mu)?;
    let sq = t.square(diff);
    let neg2ls = t.scale(g.log_sigma, -2.0);
    let inv_var = t.exp(neg2ls);
    let quad = t.mul(sq, inv_var)?;
    let quad = t.scale(quad, 0.5);
    let nll = t.add(quad, g.log_sigma)?;
    Ok(t.add_scalar(nll, HALF_LN_2PI))
}

/// Sum of [`gaussian_nll`] over the last axis: one value per batch row.
pub fn gaussian_nll_rows(t: &mut Tape, x: Var, g: &DiagGaussian) -> Result<Var, AutodiffError> {
    let nll = gaussian_nll(t, x, g)?;
    let last = t.shape(nll).len() - 1;
    t.sum_axis(nll, last)
}

/// `−log Σ_h α_h N(x; μ_h, σ_h)` per batch row, stabilized by log-sum-exp.
/// `x` is `(batch, D)`; the result has shape `(batch)`.
pub fn gmm_nll(t: &mut Tape, x: Var, m: &MixtureParams) -> Result<Var, AutodiffError> {
    if m.components.is_empty() {
        return Err(AutodiffError::InvalidTensor("mixture has no components".into()));
    }
    let batch = t.shape(x)[0];
    let h = m.components.len();
    if t.shape(m.log_alpha) != [batch, h] {
        return Err(AutodiffError::Shape {
            op: "gmm_nll",
            lhs: vec![batch, h],
            rhs: t.shape(m.log_alpha).to_vec(),
        });
    }
    let cols = m
        .components
        .iter()
        .map(|c| {
            let s = gaussian_nll_rows(t, x, c)?;
            t.reshape(s, &[batch, 1])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let nll = t.concat(&cols, 1)?;
    let log_alpha = t.log_softmax(m.log_alpha)?;
    let joint = t.sub(log_alpha, nll)?;
    let lse = t.logsumexp_axis(joint, 1)?;
    Ok(t.neg(lse))
}

/// KL from `q(z|x)` to `N(0, I)`, summed over latent dimensions, one value
/// per batch row.
///
/// With `symmetrized` the result is `½[KL(q‖p) + KL(p‖q)]`.
pub fn kl_to_standard_normal(
    t: &mut Tape,
    p: &LatentPosterior,
    symmetrized: bool,
) -> Result<Var, AutodiffError> {
    let mu2 = t.square(p.mu);
    let two_ls = t.scale(p.log_sigma, 2.0);
    let var = t.exp(two_ls);
    let per_dim = if symmetrized {
        // ½[(σ² + μ²)/2 + (1 + μ²)/(2σ²) − 1]
        let a = t.add(var, mu2)?;
        let a = t.scale(a, 0.5);
        let one_mu2 = t.add_scalar(mu2, 1.0);
        let neg_two_ls = t.scale(p.log_sigma, -2.0);
        let inv_var = t.exp(neg_two_ls);
        let b = t.mul(one_mu2, inv_var)?;
        let b = t.scale(b, 0.5);
        let s = t.add(a, b)?;
        let s = t.add_scalar(s, -1.0);
        t.scale(s, 0.5)
    } else {
        // ½(μ² + σ² − 1 − log σ²)
        let s = t.add(mu2, var)?;
        let s = t.sub(s, two_ls)?;
        let s = t.add_scalar(s, -1.0);
        t.scale(s, 0.5)
    };
    let last = t.shape(per_dim).len() - 1;
    t.sum_axis(per_dim, last)
}

/// Draws `z = μ + σ ⊙ ε` with `ε ~ N(0, I)` held constant on the tape.
pub fn reparam_sample<R: Rng + ?Sized>(
    t: &mut Tape,
    p: &LatentPosterior,
    rng: &mut R,
) -> Result<Var, AutodiffError> {
    let shape = t.shape(p.mu).to_vec();
    let eps = standard_normal(&shape, rng);
    reparam_with_noise(t, p, eps)
}

/// Reparameterized sample with caller-supplied noise.
pub fn reparam_with_noise(t: &mut Tape, p: &LatentPosterior, eps: Tensor) -> Result<Var, AutodiffError> {
    let eps = t.constant(eps);
    let sigma = t.exp(p.log_sigma);
    let noise = t.mul(sigma, eps)?;
    t.add(p.mu, noise)
}

pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape has positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(t: &mut Tape, mu: &[f64], ls: &[f64]) -> DiagGaussian {
        let n = mu.len();
        DiagGaussian {
            mu: t.param(Tensor::matrix(1, n, mu.to_vec()).unwrap()),
            log_sigma: t.param(Tensor::matrix(1, n, ls.to_vec()).unwrap()),
        }
    }

    fn row(t: &mut Tape, v: &[f64]) -> Var {
        t.constant(Tensor::matrix(1, v.len(), v.to_vec()).unwrap())
    }

    #[test]
    fn nll_zero_residual_unit_sigma() {
        let mut t = Tape::new();
        let g = gauss(&mut t, &[0.5, -1.0], &[0.0, 0.0]);
        let x = row(&mut t, &[0.5, -1.0]);
        let nll = gaussian_nll(&mut t, x, &g).unwrap();
        for v in t.value(nll).data() {
            assert!((v - 0.918939).abs() < 1e-6);
        }
    }

    #[test]
    fn nll_unit_residual() {
        let mut t = Tape::new();
        let g = gauss(&mut t, &[0.0], &[0.0]);
        let x = row(&mut t, &[1.0]);
        let nll = gaussian_nll(&mut t, x, &g).unwrap();
        assert!((t.value(nll).item() - (HALF_LN_2PI + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn doubling_sigma_adds_log_two() {
        let mut t = Tape::new();
        let g1 = gauss(&mut t, &[0.3, 0.1], &[0.2, -0.4]);
        let g2 = gauss(&mut t, &[0.3, 0.1], &[0.2 + 2f64.ln(), -0.4 + 2f64.ln()]);
        let x = row(&mut t, &[0.3, 0.1]);
        let a = gaussian_nll(&mut t, x, &g1).unwrap();
        let b = gaussian_nll(&mut t, x, &g2).unwrap();
        for (u, v) in t.value(a).data().iter().zip(t.value(b).data()) {
            assert!((v - u - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_shape_mismatch() {
        let mut t = Tape::new();
        let g = gauss(&mut t, &[0.0, 0.0], &[0.0, 0.0]);
        let x = row(&mut t, &[1.0]);
        assert!(gaussian_nll(&mut t, x, &g).is_err());
    }

    #[test]
    fn gmm_two_symmetric_components() {
        let mut t = Tape::new();
        let a = gauss(&mut t, &[-1.0], &[0.0]);
        let b = gauss(&mut t, &[1.0], &[0.0]);
        let log_alpha = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let x = row(&mut t, &[0.0]);
        let m = MixtureParams {
            components: vec![a, b],
            log_alpha,
        };
        let nll = gmm_nll(&mut t, x, &m).unwrap();
        // 0.5·φ(1) + 0.5·φ(1) = φ(1)
        assert!((t.value(nll).item() - 1.418939).abs() < 1e-6);
    }

    #[test]
    fn gmm_single_component_matches_gaussian() {
        let mut t = Tape::new();
        let a = gauss(&mut t, &[0.2, -0.7, 1.1], &[0.1, -0.3, 0.4]);
        let log_alpha = t.constant(Tensor::matrix(1, 1, vec![3.7]).unwrap());
        let x = row(&mut t, &[0.0, 0.5, -0.2]);
        let m = MixtureParams {
            components: vec![a],
            log_alpha,
        };
        let mix = gmm_nll(&mut t, x, &m).unwrap();
        let single = gaussian_nll_rows(&mut t, x, &a).unwrap();
        assert!((t.value(mix).item() - t.value(single).item()).abs() < 1e-12);
    }

    #[test]
    fn gmm_duplicate_components_match_single() {
        let mut t = Tape::new();
        let a = gauss(&mut t, &[0.4, 0.9], &[-0.2, 0.3]);
        let log_alpha = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let x = row(&mut t, &[1.0, 0.0]);
        let m = MixtureParams {
            components: vec![a, a],
            log_alpha,
        };
        let mix = gmm_nll(&mut t, x, &m).unwrap();
        let single = gaussian_nll_rows(&mut t, x, &a).unwrap();
        assert!((t.value(mix).item() - t.value(single).item()).abs() < 1e-12);
    }

    #[test]
    fn gmm_survives_tiny_mixing_weights() {
        let mut t = Tape::new();
        let a = gauss(&mut t, &[0.0], &[0.0]);
        let b = gauss(&mut t, &[5.0], &[0.0]);
        let log_alpha = t.constant(Tensor::matrix(1, 2, vec![-700.0, 0.0]).unwrap());
        let x = row(&mut t, &[0.0]);
        let m = MixtureParams {
            components: vec![a, b],
            log_alpha,
        };
        let nll = gmm_nll(&mut t, x, &m).unwrap();
        assert!(t.value(nll).item().is_finite());
    }

    #[test]
    fn gmm_empty_mixture_errors() {
        let mut t = Tape::new();
        let log_alpha = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let x = row(&mut t, &[0.0]);
        let m = MixtureParams {
            components: vec![],
            log_alpha,
        };
        assert!(gmm_nll(&mut t, x, &m).is_err());
    }

    fn kl(mu: &[f64], ls: &[f64], sym: bool) -> f64 {
        let mut t = Tape::new();
        let p = LatentPosterior {
            mu: t.constant(Tensor::matrix(1, mu.len(), mu.to_vec()).unwrap()),
            log_sigma: t.constant(Tensor::matrix(1, ls.len(), ls.to_vec()).unwrap()),
        };
        let k = kl_to_standard_normal(&mut t, &p, sym).unwrap();
        t.value(k).item()
    }

    #[test]
    fn kl_hand_cases() {
        assert_eq!(kl(&[0.0, 0.0], &[0.0, 0.0], false), 0.0);
        assert_eq!(kl(&[0.0, 0.0], &[0.0, 0.0], true), 0.0);
        assert!((kl(&[1.0], &[0.0], false) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetrized_kl_is_average_of_directions() {
        // KL(N(μ,σ²)‖N(0,1)) and KL(N(0,1)‖N(μ,σ²)) in closed form
        let (mu, s) = (0.7f64, 1.6f64);
        let fwd = 0.5 * (mu * mu + s * s - 1.0 - (s * s).ln());
        let rev = s.ln() + (1.0 + mu * mu) / (2.0 * s * s) - 0.5;
        let got = kl(&[mu], &[s.ln()], true);
        assert!((got - 0.5 * (fwd + rev)).abs() < 1e-12);
    }

    #[test]
    fn reparam_degenerate_noise() {
        let mut t = Tape::new();
        let p = LatentPosterior {
            mu: t.constant(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap()),
            log_sigma: t.constant(Tensor::matrix(1, 3, vec![-800.0; 3]).unwrap()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = reparam_sample(&mut t, &p, &mut rng).unwrap();
        assert_eq!(t.value(z).data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn reparam_sample_mean() {
        let n = 100_000;
        let (mu, sigma) = (0.8, 1.5f64);
        let mut t = Tape::new();
        let p = LatentPosterior {
            mu: t.constant(Tensor::full(&[n, 1], mu)),
            log_sigma: t.constant(Tensor::full(&[n, 1], sigma.ln())),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = reparam_sample(&mut t, &p, &mut rng).unwrap();
        let mean = t.value(z).data().iter().sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn reparam_gradient_wrt_mean_is_one() {
        let eps = Tensor::matrix(1, 2, vec![0.3, -1.1]).unwrap();
        let f = |m0: f64| {
            let mut t = Tape::new();
            let p = LatentPosterior {
                mu: t.param(Tensor::matrix(1, 2, vec![m0, 0.2]).unwrap()),
                log_sigma: t.param(Tensor::matrix(1, 2, vec![0.1, -0.3]).unwrap()),
            };
            let z = reparam_with_noise(&mut t, &p, eps.clone()).unwrap();
            let s = t.sum(z);
            let g = t.backward(s).unwrap();
            (t.value(s).item(), g.get(p.mu).unwrap().data()[0])
        };
        let h = 1e-6;
        let fd = (f(0.5 + h).0 - f(0.5 - h).0) / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-8);
        assert_eq!(f(0.5).1, 1.0);
    }
}
