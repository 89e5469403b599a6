use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{BoundReport, Tally};
use crate::error::{BoomError, Result};

const TOL: f64 = 1e-12;

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(BoomError::SupportMismatch(format!(
            "supports of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if d.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(BoomError::SupportMismatch(format!(
                "{name} is not a probability vector"
            )));
        }
    }
    Ok(())
}

/// KL(p || q) in nats.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(BoomError::SupportMismatch(format!(
                    "q[{i}] = 0 where p[{i}] = {pi}"
                )));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV(p, q) <= sqrt(KL(p || q) / 2).
pub fn pinsker_check(p: &[f64], q: &[f64]) -> Result<BoundReport> {
    let kl = kl_discrete(p, q)?;
    let tv = tv_distance(p, q)?;
    let mut t = Tally::new("pinsker", 1.0, TOL);
    t.record(tv, (kl / 2.0).sqrt());
    Ok(t.finish(kl, 0.0))
}

/// |E_p f - E_q f| <= 2 ||f||_inf TV(p, q).
pub fn tv_expectation_check(p: &[f64], q: &[f64], f: &[f64]) -> Result<BoundReport> {
    let tv = tv_distance(p, q)?;
    if f.len() != p.len() {
        return Err(BoomError::SupportMismatch(format!(
            "f has {} entries for a support of {}",
            f.len(),
            p.len()
        )));
    }
    let (gap, bound) = expectation_gap(p, q, f, tv);
    let mut t = Tally::new("tv_expectation", 1.0, TOL);
    t.record(gap, bound);
    Ok(t.finish(0.0, 0.0))
}

fn expectation_gap(p: &[f64], q: &[f64], f: &[f64], tv: f64) -> (f64, f64) {
    let ep: f64 = p.iter().zip(f).map(|(a, b)| a * b).sum();
    let eq: f64 = q.iter().zip(f).map(|(a, b)| a * b).sum();
    let f_inf = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ((ep - eq).abs(), 2.0 * f_inf * tv)
}

/// Dirichlet(alpha, ..., alpha) sample of length `k`.
pub fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let x: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = x.iter().sum();
        if s > 0.0 && s.is_finite() {
            return x.into_iter().map(|v| v / s).collect();
        }
    }
}

/// Random pair with q strictly positive; p is sometimes sparse.
fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let k = rng.random_range(2..=10);
    let alpha = [0.2, 1.0, 5.0][rng.random_range(0..3)];
    let mut p = dirichlet(k, alpha, rng);
    if rng.random_bool(0.2) {
        let zero = rng.random_range(0..k);
        let mass = p[zero];
        p[zero] = 0.0;
        let rest = 1.0 - mass;
        if rest > 0.0 {
            p.iter_mut().for_each(|v| *v /= rest);
        } else {
            p = vec![1.0 / k as f64; k];
        }
    }
    let q = dirichlet(k, alpha, rng)
        .into_iter()
        .map(|v| v.max(1e-12))
        .collect::<Vec<_>>();
    let s: f64 = q.iter().sum();
    (p, q.into_iter().map(|v| v / s).collect())
}

pub fn pinsker_sweep(trials: usize, seed: u64, scale: f64) -> BoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("pinsker_sweep", scale, TOL);
    for _ in 0..trials {
        let (p, q) = random_pair(&mut rng);
        let kl = kl_discrete(&p, &q).expect("valid pair");
        let tv = tv_distance(&p, &q).expect("valid pair");
        t.record(tv, (kl / 2.0).sqrt());
    }
    t.finish(0.0, 0.0)
}

pub fn tv_expectation_sweep(trials: usize, seed: u64, scale: f64) -> BoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("tv_expectation_sweep", scale, TOL);
    for _ in 0..trials {
        let (p, q) = random_pair(&mut rng);
        let amp = rng.random_range(0.1..10.0);
        let f: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-amp..amp)).collect();
        let tv = tv_distance(&p, &q).expect("valid pair");
        let (gap, bound) = expectation_gap(&p, &q, &f, tv);
        t.record(gap, bound);
    }
    t.finish(0.0, 0.0)
}
