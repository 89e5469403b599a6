#![allow(dead_code)]

use boom_core::approximator::{init_params, Activation, MlpSpec, Mode, ParamSet};
use boom_core::policy::{bootstrapped_policy_loss, AlignmentConfig, Policy, PolicyConfig, PolicyInputs};
use boom_core::replay::{SequenceBatch, Transition};
use boom_core::world_model::{
    compute_targets, model_loss_with_targets, BinSpec, BinTransform, ModelLossConfig, WorldModel,
    WorldModelConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 3e-5;
/// Gradient entries smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

/// Max relative error of `grad` against five-point central differences of `eval`,
/// where `eval(i, delta)` returns the loss with parameter `i` shifted by
/// `delta` (and must restore it).
pub fn fd_max_rel(grad: &[f64], mut eval: impl FnMut(usize, f64) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, &g) in grad.iter().enumerate() {
        let h = FD_STEP;
        let fd = (8.0 * (eval(i, h) - eval(i, -h)) - (eval(i, 2.0 * h) - eval(i, -2.0 * h))) / (12.0 * h);
        worst = worst.max(rel_err(g, fd));
    }
    worst
}

pub fn randomize(p: &mut ParamSet, scale: f64, rng: &mut ChaCha8Rng) {
    for v in p.values.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += scale * e;
    }
}

pub fn tiny_model_config() -> WorldModelConfig {
    let mut c = WorldModelConfig::new(3, 2);
    c.latent_dim = 4;
    c.encoder_hidden = vec![5];
    c.hidden = vec![6];
    c.num_q = 3;
    c.bins = BinSpec::new(11, -2.0, 2.0, BinTransform::SymLog).unwrap();
    c
}

/// Tiny model with every parameter (including the zero-initialised output
/// layers) perturbed so no gradient is trivially zero.
pub fn tiny_model(seed: u64) -> WorldModel {
    let mut m = WorldModel::new(tiny_model_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    randomize(&mut m.params.encoder, 0.2, &mut rng);
    randomize(&mut m.params.dynamics, 0.2, &mut rng);
    randomize(&mut m.params.reward_head, 0.3, &mut rng);
    for q in m.params.q_ensemble.iter_mut() {
        randomize(q, 0.3, &mut rng);
    }
    for q in m.params.q_target_ensemble.iter_mut() {
        randomize(q, 0.3, &mut rng);
    }
    m
}

pub fn tiny_policy(seed: u64) -> Policy {
    let mut p = Policy::new(PolicyConfig::new(4, 2, vec![6]), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    randomize(&mut p.params, 0.05, &mut rng);
    p
}

pub fn random_batch(b: usize, horizon: usize, obs_dim: usize, act_dim: usize, seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec = |n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    };
    let seqs: Vec<Vec<Transition>> = (0..b)
        .map(|_| {
            let mut obs = vec(obs_dim, -1.0, 1.0, &mut rng);
            (0..=horizon)
                .map(|_| {
                    let next = vec(obs_dim, -1.0, 1.0, &mut rng);
                    let t = Transition {
                        obs: obs.clone(),
                        action: vec(act_dim, -0.95, 0.95, &mut rng),
                        reward: rng.random_range(-1.0..1.0),
                        next_obs: next.clone(),
                        done: false,
                        plan_mean: vec(act_dim, -0.8, 0.8, &mut rng),
                        plan_std: vec(act_dim, 0.1, 1.0, &mut rng),
                    };
                    obs = next;
                    t
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[Transition]> = seqs.iter().map(|s| s.as_slice()).collect();
    SequenceBatch::from_sequences(&refs, (0..b as u64).map(|i| (i, 0)).collect())
}

/// Spec of each world-model and policy network, as built for the tiny configs.
pub fn network_specs() -> Vec<(&'static str, MlpSpec)> {
    let c = tiny_model_config();
    vec![
        ("encoder", c.encoder_spec()),
        ("dynamics", c.dynamics_spec()),
        ("reward", c.reward_spec()),
        ("q", c.q_spec()),
        ("policy", PolicyConfig::new(4, 2, vec![6]).spec()),
        (
            "plain_two_layer",
            MlpSpec::new(3, vec![7, 5], 2)
                .with_activation(Activation::Mish)
                .with_layer_norm(false),
        ),
    ]
}

/// Max relative error of `MlpSpec::loss_and_grad` under a quadratic loss.
pub fn network_grad_error(spec: &MlpSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(spec, seed);
    randomize(&mut params, 0.3, &mut rng);
    let x = Array2::from_shape_fn((4, spec.input_dim), |_| rng.random_range(-1.5..1.5));
    let target = Array2::from_shape_fn((4, spec.output_dim), |_| rng.random_range(-1.0..1.0));
    let loss_fn = |out: &Array2<f64>| {
        let d = out - &target;
        (0.5 * d.mapv(|v| v * v).sum(), d)
    };
    let (_, grad) = spec.loss_and_grad(&params, x.clone(), Mode::Eval, loss_fn).unwrap();
    fd_max_rel(&grad, |i, delta| {
        let orig = params.values[i];
        params.values[i] = orig + delta;
        let out = spec.forward_batch(&params, x.clone(), Mode::Eval).unwrap();
        params.values[i] = orig;
        let d = &out - &target;
        0.5 * d.mapv(|v| v * v).sum()
    })
}

/// Max relative error of the full model loss gradient over every online
/// network, with TD and consistency targets held fixed.
pub fn model_loss_grad_error(seed: u64) -> f64 {
    let mut model = tiny_model(seed);
    let policy = tiny_policy(seed + 1);
    let batch = random_batch(3, 2, 3, 2, seed + 2);
    let cfg = ModelLossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let targets = compute_targets(&model, &policy, &batch, cfg.gamma, &mut rng).unwrap();
    let base = model_loss_with_targets(&model, &batch, &targets, &cfg, None).unwrap();
    let mut worst = 0.0f64;
    let num_q = model.params.q_ensemble.len();
    for net in 0..3 + num_q {
        let grad = match net {
            0 => base.grads.encoder.clone(),
            1 => base.grads.dynamics.clone(),
            2 => base.grads.reward.clone(),
            k => base.grads.q[k - 3].clone(),
        };
        let e = fd_max_rel(&grad, |i, delta| {
            let p = match net {
                0 => &mut model.params.encoder,
                1 => &mut model.params.dynamics,
                2 => &mut model.params.reward_head,
                k => &mut model.params.q_ensemble[k - 3],
            };
            let orig = p.values[i];
            p.values[i] = orig + delta;
            let l = model_loss_with_targets(&model, &batch, &targets, &cfg, None)
                .unwrap()
                .loss;
            let p = match net {
                0 => &mut model.params.encoder,
                1 => &mut model.params.dynamics,
                2 => &mut model.params.reward_head,
                k => &mut model.params.q_ensemble[k - 3],
            };
            p.values[i] = orig;
            l
        });
        worst = worst.max(e);
    }
    worst
}

/// Max relative error of the policy objective gradient, with the
/// reparameterisation noise fixed by reseeding.
pub fn policy_loss_grad_error(seed: u64, cfg: &AlignmentConfig) -> f64 {
    let model = tiny_model(seed);
    let mut policy = tiny_policy(seed + 1);
    let batch = random_batch(3, 2, 3, 2, seed + 2);
    let mut inputs = PolicyInputs::from_batch(&model, &batch).unwrap();
    // stored actions near the policy, as planner actions are in training
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    inputs.actions = policy.sample_batch(&inputs.latents, &mut rng).unwrap();
    let eval = |policy: &Policy| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
        bootstrapped_policy_loss(policy, &model, &inputs, cfg, 1.7, &mut rng).unwrap()
    };
    let grad = eval(&policy).grad;
    fd_max_rel(&grad, |i, delta| {
        let orig = policy.params.values[i];
        policy.params.values[i] = orig + delta;
        let l = eval(&policy).loss;
        policy.params.values[i] = orig;
        l
    })
}

/// Oracle latent model: identity latent, reward `-||a - target||^2`, zero value.
pub struct QuadraticOracle {
    pub target: Vec<f64>,
}

impl boom_core::planner::LatentModel for QuadraticOracle {
    fn latent_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        self.target.len()
    }
    fn step_batch(&self, z: &Array2<f64>, _: &Array2<f64>) -> boom_core::Result<Array2<f64>> {
        Ok(z.clone())
    }
    fn reward_batch(&self, _: &Array2<f64>, a: &Array2<f64>) -> boom_core::Result<Vec<f64>> {
        Ok(a.rows()
            .into_iter()
            .map(|r| -r.iter().zip(&self.target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>())
            .collect())
    }
    fn value_batch(&self, z: &Array2<f64>, _: &Array2<f64>) -> boom_core::Result<Vec<f64>> {
        Ok(vec![0.0; z.nrows()])
    }
}

/// Distance of the planned first-step mean from `target` after the default
/// number of iterations with a uniform prior (dim 2, H = 3).
pub fn planner_oracle_error(seed: u64) -> f64 {
    use boom_core::planner::{plan, PlanConfig, UniformPrior};
    use boom_core::world_model::LatentState;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target: Vec<f64> = (0..2).map(|_| rng.random_range(-0.8..0.8)).collect();
    let model = QuadraticOracle { target: target.clone() };
    let mut cfg = PlanConfig::new(2);
    cfg.horizon = 3;
    cfg.train_mode_noise = false;
    let r = plan(&model, &UniformPrior { action_dim: 2 }, &LatentState(vec![0.0]), None, &cfg, &mut rng).unwrap();
    r.final_dist
        .mu
        .row(0)
        .iter()
        .zip(&target)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        .sqrt()
}
