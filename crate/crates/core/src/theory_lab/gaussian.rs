use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BoundReport, Tally};
use crate::error::{BoomError, Result};
use crate::policy::LOG_2PI;

/// Gaussian with diagonal covariance diag(std^2).
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(BoomError::InvalidSpec(format!(
                "gaussian with {} means and {} stds",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(BoomError::InvalidSpec("negative or non-finite std".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Largest covariance eigenvalue.
    pub fn max_var(&self) -> f64 {
        self.std.iter().fold(0.0f64, |m, s| m.max(s * s))
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((xi, m), s) in x.iter().zip(&self.mean).zip(&self.std) {
            let z = (xi - m) / s;
            lp -= 0.5 * z * z + s.ln() + 0.5 * LOG_2PI;
        }
        lp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect()
    }

    /// Closed-form KL(self || other).
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(BoomError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
                context: "gaussian kl",
            });
        }
        if self.std.iter().chain(&other.std).any(|&s| s <= 0.0) {
            return Err(BoomError::InvalidSpec("kl needs positive stds".into()));
        }
        let mut kl = 0.0;
        for i in 0..self.dim() {
            let vp = self.std[i] * self.std[i];
            let vq = other.std[i] * other.std[i];
            let dm = self.mean[i] - other.mean[i];
            kl += 0.5 * (vp / vq - 1.0 + (vq / vp).ln() + dm * dm / vq);
        }
        Ok(kl)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Coverage of ||a - mu|| <= sqrt(2 Lambda ln(1/delta)) for a ~ N(mu, diag(std^2)).
/// Asserted at d = 1 only, with three standard errors of Monte-Carlo slack.
pub fn gaussian_concentration_check<R: Rng + ?Sized>(
    std: &[f64],
    delta: f64,
    num_samples: usize,
    scale: f64,
    rng: &mut R,
) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) || num_samples == 0 {
        return Err(BoomError::InvalidSpec(format!(
            "concentration check needs delta in (0, 1) and samples, got {delta}, {num_samples}"
        )));
    }
    let g = DiagGaussian::new(vec![0.0; std.len()], std.to_vec())?;
    let radius = scale * (2.0 * g.max_var() * (1.0 / delta).ln()).sqrt();
    let mut outside = 0;
    for _ in 0..num_samples {
        let a = g.sample(rng);
        if distance(&a, &g.mean) > radius {
            outside += 1;
        }
    }
    let coverage = 1.0 - outside as f64 / num_samples as f64;
    let target = 1.0 - delta;
    let se = (delta * (1.0 - delta) / num_samples as f64).sqrt();
    Ok(BoundReport {
        check: format!(
            "gaussian_concentration_d{}_lambda{}_delta{delta}",
            std.len(),
            g.max_var()
        ),
        asserted: std.len() == 1,
        passed: coverage >= target - 3.0 * se,
        trials: num_samples,
        violations: outside,
        empirical: coverage,
        bound: target,
        epsilon: radius,
        delta,
    })
}

/// ||mu_p - mu_q|| <= sqrt(2 KL(p || q) Lambda(Sigma_q)).
pub fn gaussian_kl_mean_bound_check(p: &DiagGaussian, q: &DiagGaussian) -> Result<BoundReport> {
    let kl = p.kl(q)?;
    let mut t = Tally::new("gaussian_kl_mean", 1.0, 1e-12);
    t.record(distance(&p.mean, &q.mean), (2.0 * kl * q.max_var()).sqrt());
    Ok(t.finish(kl, 0.0))
}

pub fn gaussian_kl_mean_sweep(trials: usize, seed: u64, scale: f64) -> BoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("gaussian_kl_mean_sweep", scale, 1e-12);
    for _ in 0..trials {
        let d = rng.random_range(1..=4);
        let draw = |rng: &mut ChaCha8Rng| {
            let mean = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let std = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
            DiagGaussian::new(mean, std).expect("valid draw")
        };
        let p = draw(&mut rng);
        let mut q = draw(&mut rng);
        if rng.random_bool(0.2) {
            q.std = p.std.clone();
        }
        let kl = p.kl(&q).expect("matching dims");
        t.record(distance(&p.mean, &q.mean), (2.0 * kl * q.max_var()).sqrt());
    }
    t.finish(0.0, 0.0)
}
