use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::discrete::{dirichlet, kl_discrete};
use super::{BoundReport, Tally};
use crate::error::{BoomError, Result};

pub const MAX_STATES: usize = 20;
pub const MAX_ACTIONS: usize = 5;

/// Tabular discounted MDP. `transitions[(s * A + a) * S + s2]` and
/// `rewards[s * A + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

impl FiniteMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(BoomError::InvalidSpec(m));
        if !(1..=MAX_STATES).contains(&num_states) || !(1..=MAX_ACTIONS).contains(&num_actions) {
            return bad(format!("{num_states} states, {num_actions} actions"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return bad(format!("gamma {gamma} outside [0, 1)"));
        }
        let (s, a) = (num_states, num_actions);
        if transitions.len() != s * a * s || rewards.len() != s * a || initial.len() != s {
            return bad("table sizes do not match the state and action counts".into());
        }
        for row in transitions.chunks(s).chain(std::iter::once(&initial[..])) {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("distribution row is not stochastic".into());
            }
        }
        if rewards.iter().any(|r| !(r.abs() <= r_max)) {
            return bad(format!("reward exceeds r_max {r_max}"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            initial,
            gamma,
            r_max,
        })
    }

    /// Dirichlet(1) transition rows and initial distribution, rewards
    /// uniform in [-r_max, r_max].
    pub fn random<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        r_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (s, a) = (num_states, num_actions);
        let mut transitions = Vec::with_capacity(s * a * s);
        for _ in 0..s * a {
            transitions.extend(dirichlet(s, 1.0, rng));
        }
        let rewards = (0..s * a).map(|_| rng.random_range(-r_max..=r_max)).collect();
        let initial = dirichlet(s, 1.0, rng);
        Self::new(s, a, transitions, rewards, initial, gamma, r_max)
    }

    /// Stochastic policy as `num_states` rows of action probabilities.
    fn check_policy(&self, policy: &[f64]) -> Result<()> {
        if policy.len() != self.num_states * self.num_actions {
            return Err(BoomError::DimensionMismatch {
                expected: self.num_states * self.num_actions,
                got: policy.len(),
                context: "tabular policy",
            });
        }
        Ok(())
    }

    /// Exact discounted return from the initial distribution, by solving
    /// (I - gamma P_pi) V = r_pi.
    pub fn policy_return(&self, policy: &[f64]) -> Result<f64> {
        self.check_policy(policy)?;
        let (ns, na) = (self.num_states, self.num_actions);
        let mut m = DMatrix::<f64>::identity(ns, ns);
        let mut r = DVector::<f64>::zeros(ns);
        for s in 0..ns {
            for a in 0..na {
                let pa = policy[s * na + a];
                r[s] += pa * self.rewards[s * na + a];
                let row = &self.transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
                for (s2, p) in row.iter().enumerate() {
                    m[(s, s2)] -= self.gamma * pa * p;
                }
            }
        }
        let v = m
            .lu()
            .solve(&r)
            .ok_or_else(|| BoomError::InvalidSpec("singular evaluation system".into()))?;
        Ok(self.initial.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn bound(&self, epsilon: f64) -> f64 {
        self.r_max * (2.0 * epsilon).sqrt() / (1.0 - self.gamma)
    }

    pub fn to_text(&self) -> String {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut s = format!(
            "num_states={ns}\nnum_actions={na}\ngamma={}\nr_max={}\ninitial={}\n",
            self.gamma,
            self.r_max,
            join(&self.initial)
        );
        for st in 0..ns {
            for a in 0..na {
                let i = st * na + a;
                let _ = writeln!(
                    s,
                    "s={st} a={a} r={} p={}",
                    self.rewards[i],
                    join(&self.transitions[i * ns..(i + 1) * ns])
                );
            }
        }
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Largest t in [0, 1] with KL((1-t) pi + t u || pi) <= epsilon, by
/// bisection. The KL is convex in t and zero at t = 0.
pub fn mix_within_kl(pi: &[f64], u: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let mix = |t: f64| -> Vec<f64> { pi.iter().zip(u).map(|(p, q)| (1.0 - t) * p + t * q).collect() };
    let kl = |t: f64| kl_discrete(&mix(t), pi);
    if epsilon <= 0.0 {
        kl_discrete(pi, pi)?;
        return Ok(pi.to_vec());
    }
    if kl(1.0)? <= epsilon {
        return Ok(mix(1.0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kl(mid)? <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mix(lo))
}

/// Bound violation found by the sweep, dumped verbatim.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub epsilon: f64,
    pub mdp: FiniteMdp,
    pub pi: Vec<f64>,
    pub beta: Vec<f64>,
    pub gap: f64,
    pub bound: f64,
}

impl Counterexample {
    pub fn to_text(&self) -> String {
        format!(
            "epsilon={}\ngap={}\nbound={}\n{}pi={}\nbeta={}\n",
            self.epsilon,
            self.gap,
            self.bound,
            self.mdp.to_text(),
            join(&self.pi),
            join(&self.beta)
        )
    }
}

struct PairOutcome {
    gap: f64,
    pi: Vec<f64>,
    beta: Vec<f64>,
}

fn random_pair<R: Rng + ?Sized>(mdp: &FiniteMdp, epsilon: f64, rng: &mut R) -> Result<PairOutcome> {
    let na = mdp.num_actions;
    let mut pi = Vec::with_capacity(mdp.num_states * na);
    let mut beta = Vec::with_capacity(mdp.num_states * na);
    for _ in 0..mdp.num_states {
        let p = dirichlet(na, 1.0, rng);
        let u = dirichlet(na, 1.0, rng);
        beta.extend(mix_within_kl(&p, &u, epsilon)?);
        pi.extend(p);
    }
    let gap = (mdp.policy_return(&beta)? - mdp.policy_return(&pi)?).abs();
    Ok(PairOutcome { gap, pi, beta })
}

/// `trials` random policy pairs on one MDP, each with per-state
/// KL(beta(.|s) || pi(.|s)) <= epsilon.
pub fn return_gap_bound_check<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    epsilon: f64,
    trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let mut t = Tally::new("return_gap", 1.0, 1e-10);
    for _ in 0..trials {
        let o = random_pair(mdp, epsilon, rng)?;
        t.record(o.gap, mdp.bound(epsilon));
    }
    Ok(t.finish(epsilon, 0.0))
}

/// One random MDP and policy pair per trial, for each epsilon.
pub fn return_gap_sweep(
    num_mdps: usize,
    epsilons: &[f64],
    gamma: f64,
    r_max: f64,
    seed: u64,
    scale: f64,
) -> Result<(Vec<BoundReport>, Vec<Counterexample>)> {
    let mut reports = Vec::new();
    let mut found = Vec::new();
    for (k, &eps) in epsilons.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 * k as u64));
        let mut t = Tally::new(format!("return_gap_eps{eps}"), scale, 1e-10);
        for _ in 0..num_mdps {
            let ns = rng.random_range(2..=MAX_STATES);
            let na = rng.random_range(2..=MAX_ACTIONS);
            let mdp = FiniteMdp::random(ns, na, gamma, r_max, &mut rng)?;
            let o = random_pair(&mdp, eps, &mut rng)?;
            let bound = mdp.bound(eps);
            if t.record(o.gap, bound) {
                found.push(Counterexample {
                    epsilon: eps,
                    gap: o.gap,
                    bound: bound * scale,
                    mdp,
                    pi: o.pi,
                    beta: o.beta,
                });
            }
        }
        reports.push(t.finish(eps, 0.0));
    }
    Ok((reports, found))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(r0: f64, r1: f64, gamma: f64) -> FiniteMdp {
        FiniteMdp::new(1, 2, vec![1.0, 1.0], vec![r0, r1], vec![1.0], gamma, 1.0).unwrap()
    }

    #[test]
    fn single_state_closed_form() {
        let gamma = 0.9;
        let mdp = single_state(1.0, -0.5, gamma);
        let (p, q) = (0.7, 0.6);
        let jp = mdp.policy_return(&[p, 1.0 - p]).unwrap();
        let jq = mdp.policy_return(&[q, 1.0 - q]).unwrap();
        assert!((jp - (p * 1.0 + (1.0 - p) * -0.5) / (1.0 - gamma)).abs() < 1e-12);
        let gap = (jp - jq).abs();
        assert!((gap - (p - q) * 1.5 / (1.0 - gamma)).abs() < 1e-12);
        let eps = kl_discrete(&[q, 1.0 - q], &[p, 1.0 - p]).unwrap();
        assert!(gap <= mdp.bound(eps));
    }

    #[test]
    fn zero_epsilon_gives_identical_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = FiniteMdp::random(6, 3, 0.9, 1.0, &mut rng).unwrap();
        let r = return_gap_bound_check(&mdp, 0.0, 20, &mut rng).unwrap();
        assert_eq!(r.empirical, 0.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn mixing_respects_kl_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for eps in [0.0, 0.001, 0.02, 0.5] {
            let p = dirichlet(5, 1.0, &mut rng);
            let u = dirichlet(5, 1.0, &mut rng);
            let b = mix_within_kl(&p, &u, eps).unwrap();
            let kl = kl_discrete(&b, &p).unwrap();
            assert!(kl <= eps);
            if eps > 0.0 && kl_discrete(&u, &p).unwrap() > eps {
                assert!(kl > 0.99 * eps);
            }
        }
    }

    #[test]
    fn value_matches_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = FiniteMdp::random(4, 2, 0.8, 1.0, &mut rng).unwrap();
        let pi: Vec<f64> = (0..4).flat_map(|_| dirichlet(2, 1.0, &mut rng)).collect();
        let mut v = vec![0.0; 4];
        for _ in 0..400 {
            v = (0..4)
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            let i = s * 2 + a;
                            let next: f64 = (0..4).map(|s2| mdp.transitions[i * 4 + s2] * v[s2]).sum();
                            pi[i] * (mdp.rewards[i] + 0.8 * next)
                        })
                        .sum::<f64>()
                })
                .collect();
        }
        let j: f64 = mdp.initial.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((mdp.policy_return(&pi).unwrap() - j).abs() < 1e-10);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(FiniteMdp::new(1, 2, vec![1.0, 0.5], vec![0.0, 0.0], vec![1.0], 0.9, 1.0).is_err());
        assert!(FiniteMdp::new(1, 2, vec![1.0, 1.0], vec![2.0, 0.0], vec![1.0], 0.9, 1.0).is_err());
        assert!(FiniteMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0], 1.0, 1.0).is_err());
        assert!(FiniteMdp::new(21, 2, vec![], vec![], vec![], 0.9, 1.0).is_err());
    }

    #[test]
    fn sweep_reports_each_epsilon() {
        let (reports, _) = return_gap_sweep(20, &[0.0, 0.02], 0.9, 1.0, 4, 1.0).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].empirical, 0.0);
        assert!(reports.iter().all(|r| r.trials == 20));
    }

    #[test]
    fn counterexamples_are_dumped() {
        let (reports, found) = return_gap_sweep(50, &[0.08], 0.9, 1.0, 4, 1e-3).unwrap();
        assert_eq!(found.len(), reports[0].violations);
        assert!(!found.is_empty());
        let text = found[0].to_text();
        assert!(text.contains("num_states=") && text.contains("beta="));
    }
}
