use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::distribution::ActionDistribution;
use crate::approximator::{init_params, Activation, MlpSpec, Mode, ParamSet, Trace};
use crate::error::{check_dim, Result};
use crate::world_model::LatentState;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub latent_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub squash: bool,
    pub layer_norm: bool,
    pub activation: Activation,
}

impl PolicyConfig {
    pub fn new(latent_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            latent_dim,
            action_dim,
            hidden,
            log_std_min: -10.0,
            log_std_max: 2.0,
            squash: true,
            layer_norm: true,
            activation: Activation::Mish,
        }
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec::new(self.latent_dim, self.hidden.clone(), 2 * self.action_dim)
            .with_activation(self.activation)
            .with_layer_norm(self.layer_norm)
    }
}

/// Gaussian policy head: the network emits `[mean, raw_log_std]` and the raw
/// log-std is mapped smoothly into `[log_std_min, log_std_max]`.
#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
    pub spec: MlpSpec,
    pub params: ParamSet,
}

/// Batched policy output with the forward trace needed for backprop.
pub struct PolicyBatch {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    raw_log_std: Array2<f64>,
    pub(crate) trace: Trace,
}

impl PolicyBatch {
    pub fn row(&self, i: usize, squashed: bool) -> ActionDistribution {
        ActionDistribution {
            mean: self.mean.row(i).to_vec(),
            log_std: self.log_std.row(i).to_vec(),
            squashed,
        }
    }
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        let spec = config.spec();
        let params = init_params(&spec, seed);
        Self {
            config,
            spec,
            params,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn squash_log_std(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        lo + 0.5 * (hi - lo) * (raw.tanh() + 1.0)
    }

    pub fn forward(&self, z: &LatentState) -> Result<ActionDistribution> {
        check_dim(self.config.latent_dim, z.0.len(), "policy latent")?;
        let batch = self.forward_batch(&z.to_row())?;
        Ok(batch.row(0, self.config.squash))
    }

    pub fn forward_batch(&self, z: &Array2<f64>) -> Result<PolicyBatch> {
        let trace = self.spec.forward_trace(&self.params, z.clone(), Mode::Eval)?;
        let a = self.config.action_dim;
        let mean = trace.output.slice(s![.., ..a]).to_owned();
        let raw_log_std = trace.output.slice(s![.., a..]).to_owned();
        let log_std = raw_log_std.mapv(|r| self.squash_log_std(r));
        Ok(PolicyBatch {
            mean,
            log_std,
            raw_log_std,
            trace,
        })
    }

    /// Backpropagates gradients with respect to mean and log-std into the
    /// parameter gradient `grad`.
    pub fn backward(
        &self,
        batch: &PolicyBatch,
        d_mean: &Array2<f64>,
        d_log_std: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let a = self.config.action_dim;
        let half_range = 0.5 * (self.config.log_std_max - self.config.log_std_min);
        let mut d_out = Array2::zeros(batch.trace.output.raw_dim());
        d_out.slice_mut(s![.., ..a]).assign(d_mean);
        let d_raw = ndarray::Zip::from(d_log_std)
            .and(&batch.raw_log_std)
            .map_collect(|&g, &r| {
                let t = r.tanh();
                g * half_range * (1.0 - t * t)
            });
        d_out.slice_mut(s![.., a..]).assign(&d_raw);
        self.spec
            .backward(&self.params, &batch.trace, &d_out, Some(grad));
    }

    /// One reparameterized action per latent row.
    pub fn sample_batch(&self, z: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let batch = self.forward_batch(z)?;
        let eps = standard_normal(batch.mean.dim(), rng);
        Ok(self.actions_from_noise(&batch, &eps))
    }

    pub fn actions_from_noise(&self, batch: &PolicyBatch, eps: &Array2<f64>) -> Array2<f64> {
        let squash = self.config.squash;
        ndarray::Zip::from(&batch.mean)
            .and(&batch.log_std)
            .and(eps)
            .map_collect(|&m, &l, &e| {
                let u = m + l.exp() * e;
                if squash {
                    u.tanh()
                } else {
                    u
                }
            })
    }
}

pub(crate) fn standard_normal(dim: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}
