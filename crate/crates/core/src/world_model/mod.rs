//! Latent world model: encoder `h`, latent dynamics `f`, reward head `R` and
//! a Q-ensemble with EMA targets, all regressing onto two-hot bins.

mod bins;
mod checkpoint;
mod loss;

pub use bins::{soft_cross_entropy, BinSpec, BinTransform};
pub use loss::{
    compute_targets, model_loss, model_loss_with_targets, model_update, ModelGrads, ModelLoss,
    ModelLossConfig, ModelMetrics, ModelTargets, WorldModelOptimizer,
};

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::approximator::{init_params, Activation, BlockKind, MlpSpec, Mode, ParamSet};
use crate::error::{check_dim, Result};
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState(pub Vec<f64>);

impl LatentState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, self.0.len()), self.0.clone()).expect("row shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub hidden: Vec<usize>,
    pub num_q: usize,
    pub bins: BinSpec,
    pub q_dropout: f64,
    pub layer_norm: bool,
    pub activation: Activation,
}

impl WorldModelConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            latent_dim: 64,
            encoder_hidden: vec![64],
            hidden: vec![64],
            num_q: 5,
            bins: BinSpec::default(),
            q_dropout: 0.01,
            layer_norm: true,
            activation: Activation::Mish,
        }
    }

    fn mlp(&self, input: usize, hidden: &[usize], output: usize) -> MlpSpec {
        MlpSpec::new(input, hidden.to_vec(), output)
            .with_activation(self.activation)
            .with_layer_norm(self.layer_norm)
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        self.mlp(self.obs_dim, &self.encoder_hidden, self.latent_dim)
    }

    pub fn dynamics_spec(&self) -> MlpSpec {
        self.mlp(self.latent_dim + self.action_dim, &self.hidden, self.latent_dim)
    }

    pub fn reward_spec(&self) -> MlpSpec {
        self.mlp(self.latent_dim + self.action_dim, &self.hidden, self.bins.num_bins)
    }

    pub fn q_spec(&self) -> MlpSpec {
        self.mlp(self.latent_dim + self.action_dim, &self.hidden, self.bins.num_bins)
            .with_dropout(self.q_dropout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelParams {
    pub encoder: ParamSet,
    pub dynamics: ParamSet,
    pub reward_head: ParamSet,
    pub q_ensemble: Vec<ParamSet>,
    pub q_target_ensemble: Vec<ParamSet>,
}

impl WorldModelParams {
    /// Online networks in a fixed order: encoder, dynamics, reward, Q heads.
    pub fn online(&self) -> Vec<&ParamSet> {
        let mut v = vec![&self.encoder, &self.dynamics, &self.reward_head];
        v.extend(self.q_ensemble.iter());
        v
    }
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    pub encoder_spec: MlpSpec,
    pub dynamics_spec: MlpSpec,
    pub reward_spec: MlpSpec,
    pub q_spec: MlpSpec,
    pub params: WorldModelParams,
}

fn zero_output_layer(params: &mut ParamSet) {
    let n = params.layout.len();
    debug_assert_eq!(params.layout[n - 2].kind, BlockKind::Weight);
    params.block_mut(n - 2).fill(0.0);
}

pub(crate) fn concat_za(z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), *z, *a]
}

impl WorldModel {
    /// Reward and Q output layers start at zero so initial predictions sit
    /// at the bin-range center.
    pub fn new(config: WorldModelConfig, seed: u64) -> Result<Self> {
        config.bins.validate()?;
        let encoder_spec = config.encoder_spec();
        let dynamics_spec = config.dynamics_spec();
        let reward_spec = config.reward_spec();
        let q_spec = config.q_spec();
        for s in [&encoder_spec, &dynamics_spec, &reward_spec, &q_spec] {
            s.validate()?;
        }
        let encoder = init_params(&encoder_spec, seed.wrapping_mul(31).wrapping_add(1));
        let dynamics = init_params(&dynamics_spec, seed.wrapping_mul(31).wrapping_add(2));
        let mut reward_head = init_params(&reward_spec, seed.wrapping_mul(31).wrapping_add(3));
        zero_output_layer(&mut reward_head);
        let q_ensemble: Vec<ParamSet> = (0..config.num_q)
            .map(|k| {
                let mut p = init_params(&q_spec, seed.wrapping_mul(31).wrapping_add(10 + k as u64));
                zero_output_layer(&mut p);
                p
            })
            .collect();
        let q_target_ensemble = q_ensemble.clone();
        Ok(Self {
            config,
            encoder_spec,
            dynamics_spec,
            reward_spec,
            q_spec,
            params: WorldModelParams {
                encoder,
                dynamics,
                reward_head,
                q_ensemble,
                q_target_ensemble,
            },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    pub fn bins(&self) -> &BinSpec {
        &self.config.bins
    }

    pub fn encode(&self, s: &[f64]) -> Result<LatentState> {
        check_dim(self.config.obs_dim, s.len(), "observation")?;
        Ok(LatentState(
            self.encoder_spec
                .forward(&self.params.encoder, s, Mode::Eval)?,
        ))
    }

    pub fn latent_step(&self, z: &LatentState, a: &[f64]) -> Result<LatentState> {
        check_dim(self.config.latent_dim, z.dim(), "latent")?;
        check_dim(self.config.action_dim, a.len(), "action")?;
        let mut za = z.0.clone();
        za.extend_from_slice(a);
        Ok(LatentState(
            self.dynamics_spec
                .forward(&self.params.dynamics, &za, Mode::Eval)?,
        ))
    }

    pub fn encode_batch(&self, obs: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder_spec
            .forward_batch(&self.params.encoder, obs.clone(), Mode::Eval)
    }

    pub fn step_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        self.dynamics_spec
            .forward_batch(&self.params.dynamics, concat_za(z, a), Mode::Eval)
    }

    pub fn decode_rows(&self, logits: &Array2<f64>) -> Vec<f64> {
        logits
            .rows()
            .into_iter()
            .map(|r| self.config.bins.decode(r.as_slice().expect("contiguous row")))
            .collect()
    }

    /// Decoded predicted reward per row.
    pub fn reward_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        let logits =
            self.reward_spec
                .forward_batch(&self.params.reward_head, concat_za(z, a), Mode::Eval)?;
        Ok(self.decode_rows(&logits))
    }

    /// Decoded value of one Q head (online or target parameters) per row.
    pub fn q_head_values(&self, head: &ParamSet, za: &Array2<f64>) -> Result<Vec<f64>> {
        let logits = self.q_spec.forward_batch(head, za.clone(), Mode::Eval)?;
        Ok(self.decode_rows(&logits))
    }

    /// Mean over the online ensemble of decoded Q values.
    pub fn q_mean_batch(&self, z: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        let za = concat_za(z, a);
        let k = self.params.q_ensemble.len() as f64;
        let mut mean = vec![0.0; za.nrows()];
        for head in &self.params.q_ensemble {
            for (m, v) in mean.iter_mut().zip(self.q_head_values(head, &za)?) {
                *m += v / k;
            }
        }
        Ok(mean)
    }

    /// Pick two distinct target heads uniformly (one head if the ensemble has
    /// a single member).
    pub fn sample_head_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let n = self.params.q_target_ensemble.len();
        if n == 1 {
            return (0, 0);
        }
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }

    /// Min over a sampled pair of target heads at `(z, a)`.
    pub fn target_value(
        &self,
        za: &Array2<f64>,
        pair: (usize, usize),
    ) -> Result<Vec<f64>> {
        let heads = &self.params.q_target_ensemble;
        let v1 = self.q_head_values(&heads[pair.0], za)?;
        if pair.0 == pair.1 {
            return Ok(v1);
        }
        let v2 = self.q_head_values(&heads[pair.1], za)?;
        Ok(v1.iter().zip(&v2).map(|(a, b)| a.min(*b)).collect())
    }

    /// `r + gamma * min-pair target Q(z', a' ~ pi(z'))` for every row.
    pub fn td_targets(
        &self,
        rewards: &[f64],
        z_next: &Array2<f64>,
        policy: &Policy,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        check_dim(z_next.nrows(), rewards.len(), "td target rewards")?;
        let a_next = policy.sample_batch(z_next, rng)?;
        let pair = self.sample_head_pair(rng);
        let v = self.target_value(&concat_za(z_next, &a_next), pair)?;
        Ok(rewards.iter().zip(&v).map(|(r, v)| r + gamma * v).collect())
    }
}

/// Single-transition TD target.
pub fn td_target(
    model: &WorldModel,
    reward: f64,
    z_next: &LatentState,
    policy: &Policy,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    Ok(model.td_targets(&[reward], &z_next.to_row(), policy, gamma, rng)?[0])
}
