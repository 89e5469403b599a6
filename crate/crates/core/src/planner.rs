//! MPPI planning in latent space with policy-prior candidates.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, BoomError, Result};
use crate::policy::Policy;
use crate::world_model::{LatentState, WorldModel};

/// Batched latent model interface used for scoring candidates.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>>;
    fn reward_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>>;
    /// Terminal value estimate `Q(z, a)`.
    fn value_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>>;
}

/// Source of prior actions: one action per latent row.
pub trait ActionPrior {
    fn sample_actions(&self, z: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;
}

impl LatentModel for WorldModel {
    fn latent_dim(&self) -> usize {
        WorldModel::latent_dim(self)
    }
    fn action_dim(&self) -> usize {
        WorldModel::action_dim(self)
    }
    fn step_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        WorldModel::step_batch(self, z, a)
    }
    fn reward_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        WorldModel::reward_batch(self, z, a)
    }
    fn value_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        self.q_mean_batch(z, a)
    }
}

impl ActionPrior for Policy {
    fn sample_actions(&self, z: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        self.sample_batch(z, rng)
    }
}

/// Uniform actions on `[-1, 1]^A`.
pub struct UniformPrior {
    pub action_dim: usize,
}

impl ActionPrior for UniformPrior {
    fn sample_actions(&self, z: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_simple_fn((z.nrows(), self.action_dim), || {
            rng.random_range(-1.0..=1.0)
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub population: usize,
    pub num_elites: usize,
    pub policy_prior_samples: usize,
    pub std_min: f64,
    pub std_max: f64,
    pub temperature: f64,
    /// `Some(gamma)` weights step `t` by `gamma^t`; `None` sums undiscounted.
    pub discount: Option<f64>,
    pub train_mode_noise: bool,
}

impl PlanConfig {
    pub fn new(action_dim: usize) -> Self {
        Self {
            horizon: 3,
            iterations: if action_dim > 20 { 8 } else { 6 },
            population: 512,
            num_elites: 64,
            policy_prior_samples: 24,
            std_min: 0.05,
            std_max: 2.0,
            temperature: 1.0,
            discount: None,
            train_mode_noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.iterations >= 1
            && self.num_elites >= 1
            && self.num_elites <= self.population
            && self.policy_prior_samples <= self.population
            && self.std_min > 0.0
            && self.std_min <= self.std_max
            && self.temperature > 0.0;
        if !ok {
            return Err(BoomError::InvalidSpec(format!("invalid planner config {self:?}")));
        }
        Ok(())
    }
}

/// Factorized Gaussian over `H x A` action sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDistribution {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

impl TrajectoryDistribution {
    pub fn initial(horizon: usize, action_dim: usize, std_max: f64) -> Self {
        Self {
            mu: Array2::zeros((horizon, action_dim)),
            sigma: Array2::from_elem((horizon, action_dim), std_max),
        }
    }

    pub fn horizon(&self) -> usize {
        self.mu.nrows()
    }

    /// Receding-horizon warm start: drop step 0, append `(0, std_max)`.
    pub fn shifted(&self, std_max: f64) -> Self {
        let mut out = Self::initial(self.horizon(), self.mu.ncols(), std_max);
        for t in 1..self.horizon() {
            out.mu.row_mut(t - 1).assign(&self.mu.row(t));
            out.sigma.row_mut(t - 1).assign(&self.sigma.row(t));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub action: Vec<f64>,
    pub final_dist: TrajectoryDistribution,
    /// Returns of every candidate in the last iteration.
    pub candidate_returns: Vec<f64>,
    pub elite_weights: Vec<f64>,
    /// Returns of the elites, aligned with `elite_weights`.
    pub elite_returns: Vec<f64>,
    /// Best elite return after each iteration.
    pub best_returns: Vec<f64>,
    /// Softmax-weighted elite return after each iteration.
    pub elite_means: Vec<f64>,
}

impl PlanResult {
    /// Weighted mean of the final elite returns.
    pub fn elite_return_mean(&self) -> f64 {
        self.elite_weights
            .iter()
            .zip(&self.elite_returns)
            .map(|(w, g)| w * g)
            .sum()
    }

    /// One structured text record for the plan trace file.
    pub fn trace_record(&self, step: u64) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "[plan step={step}]");
        let _ = writeln!(s, "action={}", join(&mut self.action.iter().copied()));
        let _ = writeln!(s, "returns={}", join(&mut self.candidate_returns.iter().copied()));
        let _ = writeln!(s, "elite_weights={}", join(&mut self.elite_weights.iter().copied()));
        let _ = writeln!(s, "mu={}", join(&mut self.final_dist.mu.iter().copied()));
        let _ = writeln!(s, "sigma={}", join(&mut self.final_dist.sigma.iter().copied()));
        s
    }
}

/// Max-subtracted softmax of `returns / temperature`.
pub fn softmax_weights(returns: &[f64], temperature: f64) -> Vec<f64> {
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = returns
        .iter()
        .map(|g| ((g - max) / temperature).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Returns of `N` candidate sequences (time-major, `H` arrays of `N x A`)
/// from the shared start latent `z0`. The terminal action is drawn from
/// `prior`.
pub fn rollout_returns<M: LatentModel, P: ActionPrior>(
    model: &M,
    prior: &P,
    z0: &LatentState,
    actions: &[Array2<f64>],
    discount: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    check_dim(model.latent_dim(), z0.dim(), "planner latent")?;
    let n = actions.first().map_or(0, |a| a.nrows());
    let mut z = z0.to_row().broadcast((n, z0.dim())).expect("broadcast").to_owned();
    let mut g = vec![0.0; n];
    let mut weight = 1.0;
    for a in actions {
        check_dim(model.action_dim(), a.ncols(), "planner action")?;
        let r = model.reward_batch(&z, a)?;
        for (gi, ri) in g.iter_mut().zip(&r) {
            *gi += weight * ri;
        }
        z = model.step_batch(&z, a)?;
        if let Some(d) = discount {
            weight *= d;
        }
    }
    let a_term = prior.sample_actions(&z, rng)?;
    let v = model.value_batch(&z, &a_term)?;
    for (gi, vi) in g.iter_mut().zip(&v) {
        *gi += weight * vi;
    }
    Ok(g)
}

/// Single-sequence return `sum r_t + v_H` for an `H x A` action matrix.
pub fn rollout_return<M: LatentModel, P: ActionPrior>(
    model: &M,
    prior: &P,
    z0: &LatentState,
    actions: &Array2<f64>,
    discount: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let steps: Vec<Array2<f64>> = actions
        .rows()
        .into_iter()
        .map(|r| r.insert_axis(Axis(0)).to_owned())
        .collect();
    Ok(rollout_returns(model, prior, z0, &steps, discount, rng)?[0])
}

/// Elite indices (best first, ties broken by lower index) and their softmax
/// weights, plus the refit distribution.
pub fn refit(
    candidates: &[Array2<f64>],
    returns: &[f64],
    cfg: &PlanConfig,
) -> (TrajectoryDistribution, Vec<usize>, Vec<f64>) {
    let n = returns.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    order.truncate(cfg.num_elites.min(n));
    let elite_returns: Vec<f64> = order.iter().map(|&i| returns[i]).collect();
    let w = softmax_weights(&elite_returns, cfg.temperature);
    let h = candidates.len();
    let a_dim = candidates.first().map_or(0, |c| c.ncols());
    let mut mu = Array2::zeros((h, a_dim));
    let mut sigma = Array2::zeros((h, a_dim));
    for t in 0..h {
        let mut m = Array1::<f64>::zeros(a_dim);
        for (&i, &wi) in order.iter().zip(&w) {
            m.scaled_add(wi, &candidates[t].row(i));
        }
        let mut var = Array1::<f64>::zeros(a_dim);
        for (&i, &wi) in order.iter().zip(&w) {
            let d = &candidates[t].row(i) - &m;
            var.scaled_add(wi, &(&d * &d));
        }
        mu.row_mut(t).assign(&m.mapv(|v| v.clamp(-1.0, 1.0)));
        sigma
            .row_mut(t)
            .assign(&var.mapv(|v| v.sqrt().clamp(cfg.std_min, cfg.std_max)));
    }
    (TrajectoryDistribution { mu, sigma }, order, w)
}

struct Iteration {
    dist: TrajectoryDistribution,
    returns: Vec<f64>,
    weights: Vec<f64>,
    elite_returns: Vec<f64>,
}

fn iterate<M: LatentModel, P: ActionPrior>(
    model: &M,
    prior: &P,
    z0: &LatentState,
    dist: &TrajectoryDistribution,
    cfg: &PlanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Iteration> {
    let h = dist.horizon();
    let a_dim = dist.mu.ncols();
    let n_prior = cfg.policy_prior_samples;
    let n_gauss = cfg.population - n_prior;
    let mut candidates: Vec<Array2<f64>> = (0..h)
        .map(|_| Array2::zeros((cfg.population, a_dim)))
        .collect();
    for t in 0..h {
        for i in 0..n_gauss {
            for j in 0..a_dim {
                let e: f64 = StandardNormal.sample(rng);
                candidates[t][[i, j]] =
                    (dist.mu[[t, j]] + dist.sigma[[t, j]] * e).clamp(-1.0, 1.0);
            }
        }
    }
    if n_prior > 0 {
        let mut z = z0
            .to_row()
            .broadcast((n_prior, z0.dim()))
            .expect("broadcast")
            .to_owned();
        for cand in candidates.iter_mut() {
            let a = prior.sample_actions(&z, rng)?.mapv(|v| v.clamp(-1.0, 1.0));
            z = model.step_batch(&z, &a)?;
            for (i, row) in a.rows().into_iter().enumerate() {
                cand.row_mut(n_gauss + i).assign(&row);
            }
        }
    }
    let returns = rollout_returns(model, prior, z0, &candidates, cfg.discount, rng)?;
    if returns.iter().any(|g| !g.is_finite()) {
        return Err(BoomError::Divergence("non-finite planner return".into()));
    }
    let (dist, elites, weights) = refit(&candidates, &returns, cfg);
    let elite_returns = elites.iter().map(|&i| returns[i]).collect();
    Ok(Iteration {
        dist,
        returns,
        weights,
        elite_returns,
    })
}

/// One sample-score-refit round.
pub fn mppi_iterate<M: LatentModel, P: ActionPrior>(
    model: &M,
    prior: &P,
    z0: &LatentState,
    dist: &TrajectoryDistribution,
    cfg: &PlanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryDistribution> {
    Ok(iterate(model, prior, z0, dist, cfg, rng)?.dist)
}

/// Full plan from `z0`. Without a warm start the search begins at
/// `(0, std_max)`. The executed action is `mu_0`, perturbed by `sigma_0`
/// noise when `train_mode_noise` is set.
pub fn plan<M: LatentModel, P: ActionPrior>(
    model: &M,
    prior: &P,
    z0: &LatentState,
    warm_start: Option<&TrajectoryDistribution>,
    cfg: &PlanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult> {
    cfg.validate()?;
    let mut dist = match warm_start {
        Some(d) => {
            check_dim(cfg.horizon, d.horizon(), "warm start horizon")?;
            d.clone()
        }
        None => TrajectoryDistribution::initial(cfg.horizon, model.action_dim(), cfg.std_max),
    };
    let mut best_returns = Vec::with_capacity(cfg.iterations);
    let mut elite_means = Vec::with_capacity(cfg.iterations);
    let mut last = None;
    for _ in 0..cfg.iterations {
        let it = iterate(model, prior, z0, &dist, cfg, rng)?;
        best_returns.push(it.elite_returns[0]);
        elite_means.push(it.weights.iter().zip(&it.elite_returns).map(|(w, g)| w * g).sum());
        dist = it.dist.clone();
        last = Some(it);
    }
    let last = last.expect("at least one iteration");
    let action: Vec<f64> = (0..dist.mu.ncols())
        .map(|j| {
            let m = dist.mu[[0, j]];
            if cfg.train_mode_noise {
                let e: f64 = StandardNormal.sample(rng);
                (m + dist.sigma[[0, j]] * e).clamp(-1.0, 1.0)
            } else {
                m
            }
        })
        .collect();
    Ok(PlanResult {
        action,
        final_dist: dist,
        candidate_returns: last.returns,
        elite_weights: last.weights,
        elite_returns: last.elite_returns,
        best_returns,
        elite_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Reward `-||a - target||^2`, identity latent, zero value.
    struct Quadratic {
        target: Vec<f64>,
    }

    impl LatentModel for Quadratic {
        fn latent_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            self.target.len()
        }
        fn step_batch(&self, z: &Array2<f64>, _: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(z.clone())
        }
        fn reward_batch(&self, _: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
            Ok(a.rows()
                .into_iter()
                .map(|r| -r.iter().zip(&self.target).map(|(x, t)| (x - t).powi(2)).sum::<f64>())
                .collect())
        }
        fn value_batch(&self, z: &Array2<f64>, _: &Array2<f64>) -> Result<Vec<f64>> {
            Ok(vec![0.0; z.nrows()])
        }
    }

    fn cfg() -> PlanConfig {
        let mut c = PlanConfig::new(2);
        c.train_mode_noise = false;
        c.policy_prior_samples = 0;
        c
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_weights(&[3.0], 1.0), vec![1.0]);
        let w = softmax_weights(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4);
        let a = softmax_weights(&[2.0, -1.0, 0.5], 0.7);
        let b = softmax_weights(&[102.0, 99.0, 100.5], 0.7);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_return_is_analytic() {
        let m = Quadratic {
            target: vec![0.3, -0.4],
        };
        let prior = UniformPrior { action_dim: 2 };
        let a = Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 0.3, -0.4, 1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = rollout_return(&m, &prior, &LatentState(vec![0.0]), &a, None, &mut rng).unwrap();
        let expected = -(0.09 + 0.16) - 0.0 - (0.49 + 1.96);
        assert!((g - expected).abs() < 1e-12);
    }

    #[test]
    fn two_elite_weighted_mean() {
        let c = PlanConfig {
            num_elites: 2,
            ..cfg()
        };
        let cands = vec![Array2::from_shape_vec((3, 1), vec![0.2, -0.6, 0.9]).unwrap()];
        let (d, idx, w) = refit(&cands, &[1.0, 0.0, -5.0], &c);
        assert_eq!(idx, vec![0, 1]);
        let e = std::f64::consts::E;
        let expected = 0.2 * e / (1.0 + e) - 0.6 / (1.0 + e);
        assert!((d.mu[[0, 0]] - expected).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_candidates_collapse_sigma() {
        let c = cfg();
        let cands = vec![Array2::from_elem((100, 2), 0.25); 3];
        let (d, _, _) = refit(&cands, &vec![0.0; 100], &c);
        assert!(d.mu.iter().all(|&m| (m - 0.25).abs() < 1e-15));
        assert!(d.sigma.iter().all(|&s| s == c.std_min));
    }

    #[test]
    fn dominant_candidate_takes_all_weight() {
        let c = cfg();
        let mut cands = vec![Array2::zeros((80, 2)); 3];
        for t in 0..3 {
            cands[t].row_mut(17).fill(0.5 - 0.1 * t as f64);
        }
        let mut returns = vec![0.0; 80];
        returns[17] = 1e6;
        let (d, _, _) = refit(&cands, &returns, &c);
        for t in 0..3 {
            assert!((d.mu[[t, 0]] - (0.5 - 0.1 * t as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_shift() {
        let mut d = TrajectoryDistribution::initial(3, 1, 2.0);
        d.mu.column_mut(0).assign(&ndarray::arr1(&[0.1, 0.2, 0.3]));
        d.sigma.column_mut(0).assign(&ndarray::arr1(&[0.5, 0.6, 0.7]));
        let s = d.shifted(2.0);
        assert_eq!(s.mu.column(0).to_vec(), vec![0.2, 0.3, 0.0]);
        assert_eq!(s.sigma.column(0).to_vec(), vec![0.6, 0.7, 2.0]);
    }

    #[test]
    fn plan_finds_quadratic_optimum_and_is_deterministic() {
        let m = Quadratic {
            target: vec![0.3, -0.4],
        };
        let prior = UniformPrior { action_dim: 2 };
        let z = LatentState(vec![0.0]);
        let r1 = plan(&m, &prior, &z, None, &cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let r2 = plan(&m, &prior, &z, None, &cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(r1.action, r2.action);
        assert!((r1.action[0] - 0.3).abs() <= 0.05 && (r1.action[1] + 0.4).abs() <= 0.05);
        assert!((r1.elite_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
