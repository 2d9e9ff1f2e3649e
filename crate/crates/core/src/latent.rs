//! Gaussian posterior over the initial latent state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{softplus, Tape, Var};
use crate::tensor::Tensor;

/// Lower bound added to every posterior standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Affine maps from the context vector to `mu` and to the pre-softplus sigma.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEncoder {
    /// `[q, P]`.
    pub mu_w: Tensor,
    /// `[q, 1]`.
    pub mu_b: Tensor,
    pub sigma_w: Tensor,
    pub sigma_b: Tensor,
}

pub const ENCODER_NAMES: [&str; 4] = ["mu_w", "mu_b", "sigma_w", "sigma_b"];

impl PosteriorEncoder {
    pub fn zeros(vars: usize, latent: usize) -> Self {
        Self {
            mu_w: Tensor::zeros(&[latent, vars]),
            mu_b: Tensor::zeros(&[latent, 1]),
            sigma_w: Tensor::zeros(&[latent, vars]),
            sigma_b: Tensor::zeros(&[latent, 1]),
        }
    }

    pub fn init<R: Rng>(vars: usize, latent: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vars, latent);
        let bound = 1.0 / (vars as f64).sqrt();
        for t in [&mut p.mu_w, &mut p.sigma_w] {
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn latent(&self) -> usize {
        self.mu_w.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.mu_w, &self.mu_b, &self.sigma_w, &self.sigma_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.mu_w, &mut self.mu_b, &mut self.sigma_w, &mut self.sigma_b]
    }

    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let [mu_w, mu_b, sigma_w, sigma_b]: [Tensor; 4] = ts
            .try_into()
            .map_err(|_| Error::contract("posterior encoder needs exactly four tensors"))?;
        if mu_w.rank() != 2 {
            return Err(Error::shape("encoder mu_w", mu_w.shape(), &[0, 0]));
        }
        let (q, p) = (mu_w.shape()[0], mu_w.shape()[1]);
        for (t, want) in [(&mu_b, vec![q, 1]), (&sigma_w, vec![q, p]), (&sigma_b, vec![q, 1])] {
            if t.shape() != want.as_slice() {
                return Err(Error::shape("encoder params", t.shape(), &want));
            }
        }
        Ok(Self {
            mu_w,
            mu_b,
            sigma_w,
            sigma_b,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| tape.param((*t).clone())).collect();
        EncoderVars::from_slice(&v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub mu_w: Var,
    pub mu_b: Var,
    pub sigma_w: Var,
    pub sigma_b: Var,
}

impl EncoderVars {
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 4);
        Self {
            mu_w: v[0],
            mu_b: v[1],
            sigma_w: v[2],
            sigma_b: v[3],
        }
    }

    pub fn all(&self) -> [Var; 4] {
        [self.mu_w, self.mu_b, self.sigma_w, self.sigma_b]
    }

    /// `(mu, sigma)`, both `[q, 1]`; `context` is `[P, 1]`.
    pub fn encode(&self, tape: &mut Tape, context: Var) -> Result<(Var, Var)> {
        let mu = tape.affine(self.mu_w, context, self.mu_b)?;
        let pre = tape.affine(self.sigma_w, context, self.sigma_b)?;
        let sp = tape.softplus(pre)?;
        let sigma = tape.shift(sp, SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }
}

/// Reparameterized draw `mu + sigma ⊙ noise`.
pub fn sample_on_tape(tape: &mut Tape, mu: Var, sigma: Var, noise: &[f64]) -> Result<Var> {
    let eps = tape.constant(Tensor::column(noise));
    let spread = tape.mul(sigma, eps)?;
    tape.add(mu, spread)
}

/// `KL(N(mu, diag sigma²) ‖ N(0, I)) = ½ Σ (mu² + sigma² − 1 − ln sigma²)`.
pub fn kl_on_tape(tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
    let q = tape.value(mu).numel() as f64;
    let mu2 = tape.square(mu)?;
    let mu2 = tape.sum(mu2)?;
    let s2 = tape.square(sigma)?;
    let s2 = tape.sum(s2)?;
    let ls = tape.log(sigma)?;
    let ls = tape.sum(ls)?;
    let quad = tape.add(mu2, s2)?;
    let half = tape.scale(quad, 0.5)?;
    let half = tape.shift(half, -0.5 * q)?;
    tape.sub(half, ls)
}

/// Posterior parameters for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Evaluates the encoder on a context vector.
pub fn encode_posterior(enc: &PosteriorEncoder, context: &[f64]) -> Result<Posterior> {
    let p = enc.mu_w.shape()[1];
    if context.len() != p {
        return Err(Error::shape("encode_posterior", &[context.len()], &[p]));
    }
    let affine = |w: &Tensor, b: &Tensor| -> Vec<f64> {
        w.data()
            .chunks(p)
            .zip(b.data())
            .map(|(row, bias)| row.iter().zip(context).map(|(a, c)| a * c).sum::<f64>() + bias)
            .collect()
    };
    Ok(Posterior {
        mu: affine(&enc.mu_w, &enc.mu_b),
        sigma: affine(&enc.sigma_w, &enc.sigma_b)
            .into_iter()
            .map(|v| softplus(v) + SIGMA_FLOOR)
            .collect(),
    })
}

pub fn sample_latent(post: &Posterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != post.mu.len() {
        return Err(Error::shape("sample_latent", &[noise.len()], &[post.mu.len()]));
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.sigma)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

pub fn kl_divergence(post: &Posterior) -> Result<f64> {
    if let Some(s) = post.sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::contract(format!("posterior sigma must be positive, got {s}")));
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_encoder_gives_prior_mean_and_ln2_sigma() {
        let post = encode_posterior(&PosteriorEncoder::zeros(3, 4), &[1.0, -2.0, 0.5]).unwrap();
        assert!(post.mu.iter().all(|&m| m == 0.0));
        for s in &post.sigma {
            assert!((s - (std::f64::consts::LN_2 + 1e-3)).abs() < 1e-15);
            assert!((s - 0.694147).abs() < 1e-6);
        }
    }

    #[test]
    fn sigma_positive_for_extreme_weights() {
        let mut enc = PosteriorEncoder::zeros(2, 2);
        enc.sigma_b = Tensor::column(&[-1e4, -800.0]);
        let post = encode_posterior(&enc, &[0.0, 0.0]).unwrap();
        assert!(post.sigma.iter().all(|&s| s >= SIGMA_FLOOR));
    }

    #[test]
    fn sampling_is_affine_in_noise() {
        let post = Posterior {
            mu: vec![0.3, -1.0],
            sigma: vec![SIGMA_FLOOR, 2.0],
        };
        assert_eq!(sample_latent(&post, &[0.0, 0.0]).unwrap(), post.mu);
        let z = sample_latent(&post, &[1.0, 1.0]).unwrap();
        assert!((z[0] - (0.3 + 1e-3)).abs() < 1e-15);
        assert_eq!(z[1], 1.0);
    }

    #[test]
    fn kl_closed_form_values() {
        let kl = |mu: f64, sigma: f64| {
            kl_divergence(&Posterior {
                mu: vec![mu],
                sigma: vec![sigma],
            })
            .unwrap()
        };
        assert_eq!(kl(0.0, 1.0), 0.0);
        assert_eq!(kl(1.0, 1.0), 0.5);
        let e = std::f64::consts::E;
        assert!((kl(0.0, e) - 0.5 * (e * e - 3.0)).abs() < 1e-14);
        assert!((kl(0.0, e) - 2.194528).abs() < 1e-6);
        assert!(kl_divergence(&Posterior {
            mu: vec![0.0],
            sigma: vec![0.0]
        })
        .is_err());
    }

    #[test]
    fn monte_carlo_mean_of_samples() {
        let post = Posterior {
            mu: vec![0.7, -0.2],
            sigma: vec![0.5, 1.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let noise: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = sample_latent(&post, &noise).unwrap();
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for j in 0..2 {
            let se = post.sigma[j] / (n as f64).sqrt();
            assert!((sums[j] / n as f64 - post.mu[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn tape_kl_matches_closed_form() {
        let post = Posterior {
            mu: vec![0.4, -1.1, 0.0],
            sigma: vec![0.3, 1.0, 2.5],
        };
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::column(&post.mu));
        let sigma = tape.constant(Tensor::column(&post.sigma));
        let kl = kl_on_tape(&mut tape, mu, sigma).unwrap();
        assert!((tape.value(kl).item() - kl_divergence(&post).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn encoder_and_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = PosteriorEncoder::init(3, 2, &mut rng);
        let mut params: Vec<Tensor> = enc.tensors().iter().map(|t| (*t).clone()).collect();
        for t in &mut params {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let context = [0.4, -0.9, 1.3];
        let noise = [0.7, -1.2];
        let err = grad_check(
            |tape, v| {
                let vars = EncoderVars::from_slice(v);
                let c = tape.constant(Tensor::column(&context));
                let (mu, sigma) = vars.encode(tape, c)?;
                let kl = kl_on_tape(tape, mu, sigma)?;
                let z = sample_on_tape(tape, mu, sigma, &noise)?;
                let zs = tape.square(z)?;
                let zs = tape.sum(zs)?;
                tape.add(kl, zs)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
