use ndarray::{s, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::distribution::{diag_gaussian_kl, gaussian_log_density, soft_q_weights, unsquash, SQUASH_EPS};
use super::network::{standard_normal, Policy, PolicyBatch};
use crate::approximator::{clipped_step, Mode, OptimizerState};
use crate::error::{check_dim, BoomError, Result};
use crate::replay::SequenceBatch;
use crate::world_model::{concat_za, WorldModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    SoftQ,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMetric {
    ForwardKL,
    ReverseKLSurrogate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentConfig {
    pub lambda_align: f64,
    pub tau: f64,
    pub entropy_coeff: f64,
    pub weight_mode: WeightMode,
    pub metric: AlignMetric,
}

impl AlignmentConfig {
    pub fn new(action_dim: usize) -> Self {
        Self {
            lambda_align: action_dim as f64 / 1000.0,
            tau: 1.0,
            entropy_coeff: 1e-4,
            weight_mode: WeightMode::SoftQ,
            metric: AlignMetric::ForwardKL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.lambda_align >= 0.0) || !(self.entropy_coeff >= 0.0) {
            return Err(BoomError::InvalidSpec(format!(
                "alignment needs tau > 0 and non-negative coefficients, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Value and gradient of a per-row loss with respect to the policy outputs.
struct HeadGrad {
    loss: f64,
    d_mean: Array2<f64>,
    d_log_std: Array2<f64>,
}

fn weighted_nll(out: &PolicyBatch, actions: &Array2<f64>, weights: &[f64], squashed: bool) -> HeadGrad {
    let mut d_mean = Array2::zeros(out.mean.raw_dim());
    let mut d_log_std = Array2::zeros(out.mean.raw_dim());
    let mut loss = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let mut nll = 0.0;
        for j in 0..out.mean.ncols() {
            let a = actions[[i, j]];
            let (u, correction) = if squashed {
                let a_c = a.clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS);
                (a_c.atanh(), -(1.0 - a_c * a_c).ln())
            } else {
                (a, 0.0)
            };
            let (lp, dm, dl) = gaussian_log_density(u, out.mean[[i, j]], out.log_std[[i, j]]);
            nll -= lp + correction;
            d_mean[[i, j]] = -w * dm;
            d_log_std[[i, j]] = -w * dl;
        }
        loss += w * nll;
    }
    HeadGrad {
        loss,
        d_mean,
        d_log_std,
    }
}

/// Weights for the flattened batch: softmax of `q / tau` or uniform.
pub fn alignment_weights(q_values: &[f64], cfg: &AlignmentConfig) -> Vec<f64> {
    match cfg.weight_mode {
        WeightMode::SoftQ => soft_q_weights(q_values, cfg.tau),
        WeightMode::Uniform => vec![1.0 / q_values.len() as f64; q_values.len()],
    }
}

/// `sum_i w_i * (-log pi(a_i | z_i))` and its parameter gradient.
pub fn alignment_loss(
    policy: &Policy,
    latents: &Array2<f64>,
    actions: &Array2<f64>,
    q_values: &[f64],
    cfg: &AlignmentConfig,
) -> Result<(f64, Vec<f64>)> {
    check_dim(latents.nrows(), actions.nrows(), "alignment actions")?;
    check_dim(latents.nrows(), q_values.len(), "alignment q values")?;
    let out = policy.forward_batch(latents)?;
    let w = alignment_weights(q_values, cfg);
    let h = weighted_nll(&out, actions, &w, policy.config.squash);
    let mut grad = vec![0.0; policy.params.len()];
    policy.backward(&out, &h.d_mean, &h.d_log_std, &mut grad);
    Ok((h.loss, grad))
}

/// Planner statistics in action space mapped to the pre-squash space:
/// `atanh` for the mean and the first-order delta method for the std.
fn surrogate_in_pre_squash(mean: f64, std: f64, squashed: bool) -> (f64, f64) {
    if !squashed {
        return (mean, std.max(1e-6));
    }
    let m = mean.clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS);
    (unsquash(m), (std / (1.0 - m * m)).max(1e-6))
}

fn reverse_kl_terms(
    out: &PolicyBatch,
    plan_mean: &Array2<f64>,
    plan_std: &Array2<f64>,
    squashed: bool,
) -> HeadGrad {
    let n = out.mean.nrows();
    let d = out.mean.ncols();
    let mut d_mean = Array2::zeros(out.mean.raw_dim());
    let mut d_log_std = Array2::zeros(out.mean.raw_dim());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let mut mq = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for j in 0..d {
            (mq[j], sq[j]) = surrogate_in_pre_squash(plan_mean[[i, j]], plan_std[[i, j]], squashed);
        }
        let mp = out.mean.row(i).to_vec();
        let sp: Vec<f64> = out.log_std.row(i).iter().map(|l| l.exp()).collect();
        let (kl, g) = diag_gaussian_kl(&mp, &sp, &mq, &sq);
        loss += inv_n * kl;
        for j in 0..d {
            d_mean[[i, j]] = inv_n * g.mean[j];
            d_log_std[[i, j]] = inv_n * g.log_std[j];
        }
    }
    HeadGrad {
        loss,
        d_mean,
        d_log_std,
    }
}

/// Mean over rows of `KL(pi(z_i) || N(plan_mean_i, plan_std_i^2))`.
pub fn reverse_kl_surrogate_loss(
    policy: &Policy,
    latents: &Array2<f64>,
    plan_mean: &Array2<f64>,
    plan_std: &Array2<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_dim(latents.nrows(), plan_mean.nrows(), "surrogate mean")?;
    check_dim(latents.nrows(), plan_std.nrows(), "surrogate std")?;
    let out = policy.forward_batch(latents)?;
    let h = reverse_kl_terms(&out, plan_mean, plan_std, policy.config.squash);
    let mut grad = vec![0.0; policy.params.len()];
    policy.backward(&out, &h.d_mean, &h.d_log_std, &mut grad);
    Ok((h.loss, grad))
}

/// Flattened `(B * (H + 1))` policy-training inputs: latents rolled through
/// the dynamics from `h(s_0)` along the stored actions.
#[derive(Clone, Debug)]
pub struct PolicyInputs {
    pub latents: Array2<f64>,
    pub actions: Array2<f64>,
    pub plan_mean: Array2<f64>,
    pub plan_std: Array2<f64>,
}

impl PolicyInputs {
    pub fn from_batch(model: &WorldModel, batch: &SequenceBatch) -> Result<Self> {
        let mut z = model.encode_batch(&batch.obs[0])?;
        let mut latents = Vec::with_capacity(batch.num_steps());
        for t in 0..batch.num_steps() {
            let next = if t + 1 < batch.num_steps() {
                Some(model.step_batch(&z, &batch.actions[t])?)
            } else {
                None
            };
            latents.push(z);
            match next {
                Some(n) => z = n,
                None => break,
            }
        }
        let stack = |v: &[Array2<f64>]| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("consistent widths")
        };
        Ok(Self {
            latents: stack(&latents),
            actions: stack(&batch.actions),
            plan_mean: stack(&batch.plan_mean),
            plan_std: stack(&batch.plan_std),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    /// `-mean Q(z, a ~ pi) / q_scale`.
    pub max_q: f64,
    pub alignment: f64,
    /// Mean pre-squash entropy.
    pub entropy: f64,
    pub grad: Vec<f64>,
    /// Unscaled ensemble-mean Q of the sampled policy actions.
    pub q_values: Vec<f64>,
}

/// `-mean Q(z, pi(z)) / q_scale - alpha * entropy + lambda * L_align`.
pub fn bootstrapped_policy_loss(
    policy: &Policy,
    model: &WorldModel,
    inputs: &PolicyInputs,
    cfg: &AlignmentConfig,
    q_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyLoss> {
    let z = &inputs.latents;
    let n = z.nrows();
    let inv_n = 1.0 / n as f64;
    let a_dim = policy.action_dim();
    let d_z = model.latent_dim();
    let out = policy.forward_batch(z)?;
    let eps = standard_normal(out.mean.dim(), rng);
    let actions = policy.actions_from_noise(&out, &eps);

    // max-Q term: d(-mean Qbar / q_scale)/d action through every online head
    let za = concat_za(z, &actions);
    let heads = &model.params.q_ensemble;
    let k = heads.len() as f64;
    let bins = model.bins();
    let mut q_values = vec![0.0; n];
    let mut d_action = Array2::<f64>::zeros((n, a_dim));
    let coef = -inv_n / (k * q_scale);
    for head in heads {
        let trace = model.q_spec.forward_trace(head, za.clone(), Mode::Eval)?;
        let mut d_logits = Array2::zeros(trace.output.raw_dim());
        for i in 0..n {
            let mut g = vec![0.0; bins.num_bins];
            let row = trace.output.row(i);
            q_values[i] += bins.decode_with_grad(row.as_slice().expect("contiguous"), &mut g) / k;
            for (d, gk) in d_logits.row_mut(i).iter_mut().zip(&g) {
                *d = coef * gk;
            }
        }
        let d_za = model.q_spec.backward(head, &trace, &d_logits, None);
        d_action += &d_za.slice(s![.., d_z..]);
    }
    let max_q = -q_values.iter().sum::<f64>() * inv_n / q_scale;

    let squash = policy.config.squash;
    let mut d_mean = Array2::zeros(out.mean.raw_dim());
    let mut d_log_std = Array2::zeros(out.mean.raw_dim());
    let mut entropy = 0.0;
    for i in 0..n {
        for j in 0..a_dim {
            let da_du = if squash {
                let a = actions[[i, j]];
                1.0 - a * a
            } else {
                1.0
            };
            let std = out.log_std[[i, j]].exp();
            let g = d_action[[i, j]] * da_du;
            d_mean[[i, j]] = g;
            d_log_std[[i, j]] = g * std * eps[[i, j]] - cfg.entropy_coeff * inv_n;
            entropy += out.log_std[[i, j]] + 0.5 * (1.0 + super::distribution::LOG_2PI);
        }
    }
    entropy *= inv_n;

    let align = match cfg.metric {
        AlignMetric::ForwardKL => {
            let q_beta = model.q_mean_batch(z, &inputs.actions)?;
            let w = alignment_weights(&q_beta, cfg);
            weighted_nll(&out, &inputs.actions, &w, squash)
        }
        AlignMetric::ReverseKLSurrogate => {
            reverse_kl_terms(&out, &inputs.plan_mean, &inputs.plan_std, squash)
        }
    };
    d_mean.scaled_add(cfg.lambda_align, &align.d_mean);
    d_log_std.scaled_add(cfg.lambda_align, &align.d_log_std);

    let loss = (max_q - cfg.entropy_coeff * entropy) + cfg.lambda_align * align.loss;
    if !loss.is_finite() {
        return Err(BoomError::NonFiniteLoss {
            stage: "policy_loss",
            value: loss,
        });
    }
    let mut grad = vec![0.0; policy.params.len()];
    policy.backward(&out, &d_mean, &d_log_std, &mut grad);
    Ok(PolicyLoss {
        loss,
        max_q,
        alignment: align.loss,
        entropy,
        grad,
        q_values,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyMetrics {
    pub loss: f64,
    pub max_q: f64,
    pub alignment: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// One clipped Adam step on the policy; the world model is read only.
pub fn policy_update(
    policy: &mut Policy,
    opt: &mut OptimizerState,
    model: &WorldModel,
    inputs: &PolicyInputs,
    cfg: &AlignmentConfig,
    q_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyMetrics, Vec<f64>)> {
    let out = bootstrapped_policy_loss(policy, model, inputs, cfg, q_scale, rng)?;
    let grad_norm = clipped_step(opt, &mut policy.params, &out.grad)?;
    Ok((
        PolicyMetrics {
            loss: out.loss,
            max_q: out.max_q,
            alignment: out.alignment,
            entropy: out.entropy,
            grad_norm,
        },
        out.q_values,
    ))
}
