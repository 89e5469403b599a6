use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;

use super::{concat_za, WorldModel};
use crate::approximator::{adam_step_in_place, ema_update_in_place, Mode, OptimizerState};
use crate::error::{check_dim, BoomError, Result};
use crate::policy::Policy;
use crate::replay::SequenceBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelLossConfig {
    /// TD discount.
    pub gamma: f64,
    /// Base of the per-step weight `base^t`.
    pub step_decay: f64,
    pub consistency_coef: f64,
    pub reward_coef: f64,
    pub value_coef: f64,
    pub target_update_rate: f64,
    pub grad_clip: f64,
}

impl Default for ModelLossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            step_decay: 0.99,
            consistency_coef: 20.0,
            reward_coef: 0.1,
            value_coef: 0.1,
            target_update_rate: 0.5,
            grad_clip: 20.0,
        }
    }
}

/// Gradient-stopped regression targets for one sequence batch.
#[derive(Clone, Debug)]
pub struct ModelTargets {
    /// `h(s_{t+1})` for `t = 0..=H`.
    pub next_latents: Vec<Array2<f64>>,
    /// `q_t` for `t = 0..=H`.
    pub td: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<f64>,
    pub dynamics: Vec<f64>,
    pub reward: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.parts() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn parts(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.encoder, &self.dynamics, &self.reward];
        v.extend(self.q.iter());
        v
    }

    fn parts_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![&mut self.encoder, &mut self.dynamics, &mut self.reward];
        v.extend(self.q.iter_mut());
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts().into_iter().flatten().copied().collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.parts_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelLoss {
    pub loss: f64,
    pub consistency: f64,
    pub reward_ce: f64,
    pub value_ce: f64,
    pub grads: ModelGrads,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModelMetrics {
    pub loss: f64,
    pub consistency: f64,
    pub reward_ce: f64,
    pub value_ce: f64,
    /// Joint gradient norm before and after clipping.
    pub grad_norm_raw: f64,
    pub grad_norm: f64,
}

pub fn compute_targets(
    model: &WorldModel,
    policy: &Policy,
    batch: &SequenceBatch,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ModelTargets> {
    let steps = batch.num_steps();
    let mut next_latents = Vec::with_capacity(steps);
    let mut td = Vec::with_capacity(steps);
    for t in 0..steps {
        let z_next = model.encode_batch(&batch.obs[t + 1])?;
        td.push(model.td_targets(&batch.rewards[t], &z_next, policy, gamma, rng)?);
        next_latents.push(z_next);
    }
    Ok(ModelTargets { next_latents, td })
}

fn ce_rows(
    model: &WorldModel,
    logits: &Array2<f64>,
    values: &[f64],
    weight: f64,
    d_logits: &mut Array2<f64>,
) -> f64 {
    let bins = model.bins();
    let mut target = vec![0.0; bins.num_bins];
    let mut g = vec![0.0; bins.num_bins];
    let mut total = 0.0;
    for (i, v) in values.iter().enumerate() {
        bins.two_hot_into(*v, &mut target);
        let row = logits.row(i);
        total += super::soft_cross_entropy(row.as_slice().expect("contiguous"), &target, Some(&mut g));
        for (d, gk) in d_logits.row_mut(i).iter_mut().zip(&g) {
            *d = weight * gk;
        }
    }
    total
}

/// Loss and exact gradient with targets held fixed. `dropout` enables the Q
/// dropout masks; `None` evaluates deterministically.
pub fn model_loss_with_targets(
    model: &WorldModel,
    batch: &SequenceBatch,
    targets: &ModelTargets,
    config: &ModelLossConfig,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<ModelLoss> {
    let steps = batch.num_steps();
    let b = batch.batch_size();
    check_dim(steps, targets.next_latents.len(), "model targets")?;
    check_dim(steps, targets.td.len(), "td targets")?;
    let inv_b = 1.0 / b as f64;
    let d_z = model.latent_dim();
    let p = &model.params;
    let n_q = p.q_ensemble.len();

    let mut grads = ModelGrads {
        encoder: vec![0.0; p.encoder.len()],
        dynamics: vec![0.0; p.dynamics.len()],
        reward: vec![0.0; p.reward_head.len()],
        q: p.q_ensemble.iter().map(|q| vec![0.0; q.len()]).collect(),
    };

    let enc_trace = model
        .encoder_spec
        .forward_trace(&p.encoder, batch.obs[0].clone(), Mode::Eval)?;
    let mut latents = vec![enc_trace.output.clone()];
    let mut dyn_traces = Vec::with_capacity(steps);
    let mut rew_traces = Vec::with_capacity(steps);
    let mut q_traces = Vec::with_capacity(steps);
    for t in 0..steps {
        let za = concat_za(&latents[t], &batch.actions[t]);
        let dt = model
            .dynamics_spec
            .forward_trace(&p.dynamics, za.clone(), Mode::Eval)?;
        let rt = model
            .reward_spec
            .forward_trace(&p.reward_head, za.clone(), Mode::Eval)?;
        let mut qs = Vec::with_capacity(n_q);
        for head in &p.q_ensemble {
            let mode = match dropout.as_deref_mut() {
                Some(rng) => Mode::Train(rng),
                None => Mode::Eval,
            };
            qs.push(model.q_spec.forward_trace(head, za.clone(), mode)?);
        }
        latents.push(dt.output.clone());
        dyn_traces.push(dt);
        rew_traces.push(rt);
        q_traces.push(qs);
    }

    let (mut consistency, mut reward_ce, mut value_ce) = (0.0, 0.0, 0.0);
    // gradient w.r.t. z_{t+1} flowing back from step t+1
    let mut carry: Array2<f64> = Array2::zeros((b, d_z));
    for t in (0..steps).rev() {
        let w = config.step_decay.powi(t as i32) * inv_b;
        let diff = &latents[t + 1] - &targets.next_latents[t];
        consistency += config.step_decay.powi(t as i32) * inv_b * diff.iter().map(|v| v * v).sum::<f64>();
        let d_next = carry + diff * (2.0 * config.consistency_coef * w);
        let mut d_za = model
            .dynamics_spec
            .backward(&p.dynamics, &dyn_traces[t], &d_next, Some(&mut grads.dynamics));

        let mut d_logits = Array2::zeros(rew_traces[t].output.raw_dim());
        let ce = ce_rows(model, &rew_traces[t].output, &batch.rewards[t], config.reward_coef * w, &mut d_logits);
        reward_ce += config.step_decay.powi(t as i32) * inv_b * ce;
        d_za += &model
            .reward_spec
            .backward(&p.reward_head, &rew_traces[t], &d_logits, Some(&mut grads.reward));

        let qw = config.value_coef * w / n_q as f64;
        for (k, trace) in q_traces[t].iter().enumerate() {
            let ce = ce_rows(model, &trace.output, &targets.td[t], qw, &mut d_logits);
            value_ce += config.step_decay.powi(t as i32) * inv_b * ce / n_q as f64;
            d_za += &model
                .q_spec
                .backward(&p.q_ensemble[k], trace, &d_logits, Some(&mut grads.q[k]));
        }
        carry = d_za.slice(s![.., ..d_z]).to_owned();
    }
    model
        .encoder_spec
        .backward(&p.encoder, &enc_trace, &carry, Some(&mut grads.encoder));

    let loss = config.consistency_coef * consistency
        + config.reward_coef * reward_ce
        + config.value_coef * value_ce;
    if !loss.is_finite() {
        return Err(BoomError::NonFiniteLoss {
            stage: "model_loss",
            value: loss,
        });
    }
    Ok(ModelLoss {
        loss,
        consistency,
        reward_ce,
        value_ce,
        grads,
    })
}

/// Targets from the current model and policy, then the loss.
pub fn model_loss(
    model: &WorldModel,
    batch: &SequenceBatch,
    policy: &Policy,
    config: &ModelLossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelLoss> {
    let targets = compute_targets(model, policy, batch, config.gamma, rng)?;
    model_loss_with_targets(model, batch, &targets, config, Some(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelOptimizer {
    pub encoder: OptimizerState,
    pub dynamics: OptimizerState,
    pub reward: OptimizerState,
    pub q: Vec<OptimizerState>,
}

impl WorldModelOptimizer {
    pub fn new(model: &WorldModel, learning_rate: f64, encoder_learning_rate: f64) -> Self {
        let p = &model.params;
        Self {
            encoder: OptimizerState::for_params(&p.encoder, encoder_learning_rate, f64::INFINITY),
            dynamics: OptimizerState::for_params(&p.dynamics, learning_rate, f64::INFINITY),
            reward: OptimizerState::for_params(&p.reward_head, learning_rate, f64::INFINITY),
            q: p
                .q_ensemble
                .iter()
                .map(|q| OptimizerState::for_params(q, learning_rate, f64::INFINITY))
                .collect(),
        }
    }
}

/// One update: gradients divided by `loss_scale`, clipped jointly to
/// `grad_clip`, one Adam step per network, then the target EMA.
pub fn model_update(
    model: &mut WorldModel,
    opt: &mut WorldModelOptimizer,
    batch: &SequenceBatch,
    policy: &Policy,
    config: &ModelLossConfig,
    loss_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ModelMetrics> {
    let mut out = model_loss(model, batch, policy, config, rng)?;
    out.grads.scale(1.0 / loss_scale.max(f64::MIN_POSITIVE));
    let raw = out.grads.norm();
    if raw > config.grad_clip {
        out.grads.scale(config.grad_clip / raw);
    }
    let grad_norm = out.grads.norm();
    let p = &mut model.params;
    adam_step_in_place(&mut opt.encoder, &mut p.encoder, &out.grads.encoder)?;
    adam_step_in_place(&mut opt.dynamics, &mut p.dynamics, &out.grads.dynamics)?;
    adam_step_in_place(&mut opt.reward, &mut p.reward_head, &out.grads.reward)?;
    for ((state, head), g) in opt.q.iter_mut().zip(p.q_ensemble.iter_mut()).zip(&out.grads.q) {
        adam_step_in_place(state, head, g)?;
    }
    for (target, online) in p.q_target_ensemble.iter_mut().zip(&p.q_ensemble) {
        ema_update_in_place(target, online, config.target_update_rate)?;
    }
    Ok(ModelMetrics {
        loss: out.loss,
        consistency: out.consistency,
        reward_ce: out.reward_ce,
        value_ce: out.value_ce,
        grad_norm_raw: raw,
        grad_norm,
    })
}
