use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::discrete::dirichlet;
use super::gaussian::DiagGaussian;
use super::BoundReport;
use crate::error::{BoomError, Result};

/// Allowed shortfall of empirical coverage below 1 - delta.
pub const COVERAGE_SLACK: f64 = 0.02;
/// Fraction of instances that must meet the coverage target.
const INSTANCE_PASS_RATE: f64 = 0.95;
const ACTION_BOUND: f64 = 1.0;

/// Mixture of diagonal Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub components: Vec<DiagGaussian>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(BoomError::InvalidSpec(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(BoomError::InvalidSpec("mixture weights are not normalised".into()));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(BoomError::InvalidSpec("components differ in dimension".into()));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.num_components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// Quadrature refinement difference, or Monte-Carlo standard error.
    pub error: f64,
}

fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

fn integration_box(beta: &GmmSpec, axis: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &beta.components {
        lo = lo.min(c.mean[axis] - 12.0 * c.std[axis]);
        hi = hi.max(c.mean[axis] + 12.0 * c.std[axis]);
    }
    (lo, hi)
}

fn kl_integrand(beta: &GmmSpec, pi: &DiagGaussian, x: &[f64]) -> f64 {
    let lb = beta.log_density(x);
    if lb < -700.0 {
        return 0.0;
    }
    lb.exp() * (lb - pi.log_density(x))
}

fn simpson_kl(beta: &GmmSpec, pi: &DiagGaussian, n: usize) -> f64 {
    let d = beta.dim();
    let axes: Vec<(f64, f64, Vec<f64>)> = (0..d)
        .map(|k| {
            let (lo, hi) = integration_box(beta, k);
            let h = (hi - lo) / n as f64;
            (lo, h, simpson_weights(n, h))
        })
        .collect();
    match d {
        1 => {
            let (lo, h, w) = &axes[0];
            (0..=n)
                .map(|i| w[i] * kl_integrand(beta, pi, &[lo + i as f64 * h]))
                .sum()
        }
        2 => {
            let ((lo0, h0, w0), (lo1, h1, w1)) = (&axes[0], &axes[1]);
            let mut total = 0.0;
            for i in 0..=n {
                let x0 = lo0 + i as f64 * h0;
                for j in 0..=n {
                    total += w0[i] * w1[j] * kl_integrand(beta, pi, &[x0, lo1 + j as f64 * h1]);
                }
            }
            total
        }
        _ => unreachable!("quadrature is only used in one or two dimensions"),
    }
}

/// Monte-Carlo KL(beta || pi) with its standard error.
pub fn kl_gmm_gaussian_mc<R: Rng + ?Sized>(
    beta: &GmmSpec,
    pi: &DiagGaussian,
    samples: usize,
    rng: &mut R,
) -> KlEstimate {
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..samples {
        let x = beta.sample(rng);
        let v = beta.log_density(&x) - pi.log_density(&x);
        sum += v;
        sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    KlEstimate {
        value: mean,
        error: (var / n).sqrt(),
    }
}

/// KL(beta || pi): composite Simpson quadrature in one or two dimensions,
/// 10^6-sample Monte Carlo above that.
pub fn kl_gmm_gaussian(beta: &GmmSpec, pi: &DiagGaussian) -> Result<KlEstimate> {
    if beta.dim() != pi.dim() {
        return Err(BoomError::DimensionMismatch {
            expected: beta.dim(),
            got: pi.dim(),
            context: "gmm kl",
        });
    }
    let positive = |g: &DiagGaussian| g.std.iter().all(|&s| s > 0.0);
    if !positive(pi) || !beta.components.iter().all(positive) {
        return Err(BoomError::InvalidSpec("kl needs positive stds".into()));
    }
    let est = match beta.dim() {
        1 => {
            let coarse = simpson_kl(beta, pi, 2000);
            let fine = simpson_kl(beta, pi, 4000);
            KlEstimate {
                value: fine,
                error: (fine - coarse).abs(),
            }
        }
        2 => {
            let coarse = simpson_kl(beta, pi, 200);
            let fine = simpson_kl(beta, pi, 400);
            KlEstimate {
                value: fine,
                error: (fine - coarse).abs(),
            }
        }
        _ => kl_gmm_gaussian_mc(beta, pi, 1_000_000, &mut ChaCha8Rng::seed_from_u64(0)),
    };
    if !est.value.is_finite() {
        return Err(BoomError::Divergence("kl estimate is not finite".into()));
    }
    Ok(est)
}

/// Action-distance bound before the 2 sqrt(d) cap.
pub fn d_epsilon_uncapped(beta: &GmmSpec, pi: &DiagGaussian, epsilon: f64, delta: f64) -> f64 {
    let k = beta.num_components() as f64;
    let lam_pi = pi.max_var();
    let per_component = beta
        .weights
        .iter()
        .zip(&beta.components)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| (2.0 * c.max_var() * (k / delta).ln()).sqrt() + (2.0 * epsilon * lam_pi / w).sqrt())
        .fold(0.0f64, f64::max);
    per_component + (2.0 * lam_pi * (1.0 / delta).ln()).sqrt()
}

pub fn d_epsilon(beta: &GmmSpec, pi: &DiagGaussian, epsilon: f64, delta: f64) -> f64 {
    let cap = 2.0 * ACTION_BOUND * (beta.dim() as f64).sqrt();
    cap.min(d_epsilon_uncapped(beta, pi, epsilon, delta))
}

fn clamp_action(mut a: Vec<f64>) -> Vec<f64> {
    a.iter_mut().for_each(|v| *v = v.clamp(-ACTION_BOUND, ACTION_BOUND));
    a
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Coverage of |Q(a_beta) - Q(a_pi)| <= L_Q D(epsilon) with Q(a) = L_Q ||a||
/// over independent clamped sample pairs.
#[allow(clippy::too_many_arguments)]
pub fn q_gap_bound_check<R: Rng + ?Sized>(
    beta: &GmmSpec,
    pi: &DiagGaussian,
    l_q: f64,
    delta: f64,
    epsilon: f64,
    num_samples: usize,
    scale: f64,
    rng: &mut R,
) -> Result<BoundReport> {
    if beta.dim() != pi.dim() || num_samples == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(BoomError::InvalidSpec(
            "q-gap check needs matching dims, samples and delta in (0, 1)".into(),
        ));
    }
    let bound = l_q * d_epsilon(beta, pi, epsilon, delta) * scale;
    let mut outside = 0;
    for _ in 0..num_samples {
        let ab = clamp_action(beta.sample(rng));
        let ap = clamp_action(pi.sample(rng));
        let gap = (l_q * norm(&ab) - l_q * norm(&ap)).abs();
        if gap > bound + 1e-12 {
            outside += 1;
        }
    }
    let coverage = 1.0 - outside as f64 / num_samples as f64;
    Ok(BoundReport {
        check: "q_gap".into(),
        asserted: true,
        passed: coverage >= 1.0 - delta - COVERAGE_SLACK,
        trials: num_samples,
        violations: outside,
        empirical: coverage,
        bound: 1.0 - delta,
        epsilon,
        delta,
    })
}

/// Random planner mixture in one or two dimensions with a nearby Gaussian
/// policy; epsilon is the verified KL plus its error estimate.
fn random_instance(rng: &mut ChaCha8Rng) -> Result<(GmmSpec, DiagGaussian, f64)> {
    let d = rng.random_range(1..=2);
    let k = rng.random_range(1..=3);
    let weights = dirichlet(k, 2.0, rng);
    let components = (0..k)
        .map(|_| {
            DiagGaussian::new(
                (0..d).map(|_| rng.random_range(-0.6..0.6)).collect(),
                (0..d).map(|_| rng.random_range(0.05..0.4)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let beta = GmmSpec::new(weights, components)?;
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for (w, c) in beta.weights.iter().zip(&beta.components) {
        for j in 0..d {
            mean[j] += w * c.mean[j];
            second[j] += w * (c.std[j] * c.std[j] + c.mean[j] * c.mean[j]);
        }
    }
    let pi = DiagGaussian::new(
        mean.iter().map(|m| m + rng.random_range(-0.1..0.1)).collect(),
        (0..d)
            .map(|j| (second[j] - mean[j] * mean[j]).sqrt() * rng.random_range(0.8..1.25))
            .collect(),
    )?;
    let kl = kl_gmm_gaussian(&beta, &pi)?;
    Ok((beta, pi, kl.value + kl.error + 1e-12))
}

/// Instances pass when their coverage meets 1 - delta - slack; the sweep
/// passes when at least 95% of instances do.
pub fn q_gap_sweep(
    instances: usize,
    num_samples: usize,
    delta: f64,
    seed: u64,
    scale: f64,
) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failing = 0;
    let mut eps_sum = 0.0;
    for _ in 0..instances {
        let (beta, pi, eps) = random_instance(&mut rng)?;
        eps_sum += eps;
        let r = q_gap_bound_check(&beta, &pi, 1.0, delta, eps, num_samples, scale, &mut rng)?;
        if !r.passed {
            failing += 1;
        }
    }
    let passing = instances - failing;
    let pass_rate = if instances == 0 {
        1.0
    } else {
        passing as f64 / instances as f64
    };
    Ok(BoundReport {
        check: "q_gap_sweep".into(),
        asserted: true,
        passed: pass_rate >= INSTANCE_PASS_RATE,
        trials: instances,
        violations: failing,
        empirical: pass_rate,
        bound: INSTANCE_PASS_RATE,
        epsilon: eps_sum / instances.max(1) as f64,
        delta,
    })
}
