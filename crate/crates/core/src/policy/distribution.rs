use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Result};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;
/// Inward clip applied to squashed actions before `atanh`.
pub const SQUASH_EPS: f64 = 1e-6;

/// Diagonal Gaussian over actions; with `squashed`, samples pass through tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub squashed: bool,
}

/// Gradients of a scalar with respect to a distribution's mean and log-std.
#[derive(Clone, Debug, PartialEq)]
pub struct DistGrad {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

#[inline]
pub(crate) fn unsquash(a: f64) -> f64 {
    a.clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS).atanh()
}

impl ActionDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Exact log density, including the tanh change-of-variables term when
    /// squashed.
    pub fn log_prob(&self, a: &[f64]) -> Result<f64> {
        Ok(self.log_prob_with_grad(a)?.0)
    }

    pub fn log_prob_with_grad(&self, a: &[f64]) -> Result<(f64, DistGrad)> {
        check_dim(self.dim(), a.len(), "action")?;
        let mut lp = 0.0;
        let mut grad = DistGrad {
            mean: vec![0.0; self.dim()],
            log_std: vec![0.0; self.dim()],
        };
        for j in 0..self.dim() {
            let (u, correction) = if self.squashed {
                let a_c = a[j].clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS);
                (a_c.atanh(), -(1.0 - a_c * a_c).ln())
            } else {
                (a[j], 0.0)
            };
            let (term, d_mean, d_log_std) = gaussian_log_density(u, self.mean[j], self.log_std[j]);
            lp += term + correction;
            grad.mean[j] = d_mean;
            grad.log_std[j] = d_log_std;
        }
        Ok((lp, grad))
    }

    /// Reparameterized sample `mean + std * eps` (then tanh if squashed).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with_noise(&eps)
    }

    pub fn sample_with_noise(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, l), e)| {
                let u = m + l.exp() * e;
                if self.squashed {
                    u.tanh()
                } else {
                    u
                }
            })
            .collect()
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|l| l + 0.5 * (1.0 + LOG_2PI))
            .sum()
    }
}

/// `log N(u; mean, exp(log_std)^2)` with its derivatives in mean and log-std.
#[inline]
pub fn gaussian_log_density(u: f64, mean: f64, log_std: f64) -> (f64, f64, f64) {
    let inv_std = (-log_std).exp();
    let z = (u - mean) * inv_std;
    let lp = -0.5 * z * z - log_std - 0.5 * LOG_2PI;
    (lp, z * inv_std, z * z - 1.0)
}

/// Closed-form `KL(N(mp, sp^2) || N(mq, sq^2))` for diagonal Gaussians given
/// as (mean, std) pairs. Returns the divergence and its gradient in the first
/// argument's (mean, log-std).
pub fn diag_gaussian_kl(
    mean_p: &[f64],
    std_p: &[f64],
    mean_q: &[f64],
    std_q: &[f64],
) -> (f64, DistGrad) {
    let d = mean_p.len();
    let mut kl = 0.0;
    let mut grad = DistGrad {
        mean: vec![0.0; d],
        log_std: vec![0.0; d],
    };
    for j in 0..d {
        let vp = std_p[j] * std_p[j];
        let vq = std_q[j] * std_q[j];
        let diff = mean_p[j] - mean_q[j];
        kl += std_q[j].ln() - std_p[j].ln() + (vp + diff * diff) / (2.0 * vq) - 0.5;
        grad.mean[j] = diff / vq;
        grad.log_std[j] = vp / vq - 1.0;
    }
    (kl, grad)
}

/// Batch softmax of `q / tau` with max subtraction.
pub fn soft_q_weights(q_values: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "tau must be positive");
    let max = q_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = q_values.iter().map(|q| ((q - max) / tau).exp()).collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    w
}
