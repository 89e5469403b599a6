//! Warmup, planner-driven collection and interleaved model/policy updates.

mod checkpoint;
mod config;
mod metrics;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::{LossNorm, TrainConfig, CONFIG_KEYS};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};

use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::OptimizerState;
use crate::envs::{make_env, Env};
use crate::error::{BoomError, Result};
use crate::planner::{plan, PlanConfig, TrajectoryDistribution};
use crate::policy::{policy_update, AlignmentConfig, Policy, PolicyConfig, PolicyInputs};
use crate::replay::{ReplayBuffer, Transition};
use crate::world_model::{model_update, ModelLossConfig, WorldModel, WorldModelConfig, WorldModelOptimizer};

/// Linear-interpolation percentile of unsorted `values`, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `max(p95 - p5, 1)` of the history.
pub fn loss_scale(history: &[f64]) -> f64 {
    if history.is_empty() {
        return 1.0;
    }
    (percentile(history, 0.95) - percentile(history, 0.05)).max(1.0)
}

/// `value / max(p95 - p5, 1)` over `history`.
pub fn normalize_loss(history: &[f64], value: f64) -> f64 {
    value / loss_scale(history)
}

/// Bounded window of recent raw values.
#[derive(Clone, Debug)]
pub struct MovingPercentile {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingPercentile {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            values: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn scale(&self) -> f64 {
        let (a, b) = self.values.as_slices();
        loss_scale(&[a, b].concat())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub model_loss: f64,
    pub policy_loss: f64,
    pub alignment_loss: f64,
    pub q_mean: f64,
    pub model_grad_norm: f64,
    pub policy_grad_norm: f64,
    pub model_loss_scale: f64,
    pub q_scale: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunPaths {
    pub metrics: Option<PathBuf>,
    pub timing: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub plan_trace: Option<PathBuf>,
}

impl RunPaths {
    pub fn in_dir(dir: &std::path::Path) -> Self {
        Self {
            metrics: Some(dir.join("metrics.csv")),
            timing: Some(dir.join("timing.csv")),
            checkpoint: Some(dir.join("checkpoint.bin")),
            plan_trace: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub final_eval_return: f64,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sum: IterationMetrics,
    elite_sum: f64,
    elite_n: usize,
    episode_returns: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, m: &IterationMetrics) {
        self.n += 1;
        let s = &mut self.sum;
        s.model_loss += m.model_loss;
        s.policy_loss += m.policy_loss;
        s.alignment_loss += m.alignment_loss;
        s.q_mean += m.q_mean;
        s.model_grad_norm += m.model_grad_norm;
        s.policy_grad_norm += m.policy_grad_norm;
        s.model_loss_scale = m.model_loss_scale;
        s.q_scale = m.q_scale;
    }

    fn mean(&self, v: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            v / self.n as f64
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: WorldModel,
    pub policy: Policy,
    pub buffer: ReplayBuffer,
    env: Box<dyn Env>,
    model_opt: WorldModelOptimizer,
    policy_opt: OptimizerState,
    loss_cfg: ModelLossConfig,
    align_cfg: AlignmentConfig,
    plan_cfg: PlanConfig,
    update_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    model_norm: MovingPercentile,
    q_norm: MovingPercentile,
    warm: Option<TrajectoryDistribution>,
    obs: Vec<f64>,
    episode_return: f64,
    episode_index: u64,
    env_step: usize,
    last_episode_return: f64,
    trace: Option<std::fs::File>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env)?;
        let (obs_dim, act_dim) = (env.obs_dim(), env.action_dim());
        let mut wm = WorldModelConfig::new(obs_dim, act_dim);
        wm.latent_dim = cfg.latent_dim;
        wm.encoder_hidden = vec![cfg.hidden_dim; cfg.hidden_layers];
        wm.hidden = vec![cfg.hidden_dim; cfg.hidden_layers];
        wm.num_q = cfg.num_q;
        wm.bins = cfg.bins()?;
        wm.q_dropout = cfg.q_dropout;
        let model = WorldModel::new(wm, cfg.seed.wrapping_mul(7919).wrapping_add(1))?;
        let policy = Policy::new(
            PolicyConfig::new(cfg.latent_dim, act_dim, vec![cfg.hidden_dim; cfg.hidden_layers]),
            cfg.seed.wrapping_mul(7919).wrapping_add(2),
        );
        let model_opt = WorldModelOptimizer::new(&model, cfg.lr, cfg.encoder_lr);
        let policy_opt = OptimizerState::for_params(&policy.params, cfg.lr, cfg.grad_clip);
        let mut plan_cfg = cfg.plan(act_dim);
        plan_cfg.train_mode_noise = true;
        let mut env = env;
        let obs = env.reset(episode_seed(cfg.seed, 0));
        Ok(Self {
            loss_cfg: cfg.model_loss(),
            align_cfg: cfg.alignment(act_dim),
            plan_cfg,
            update_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(7919).wrapping_add(3)),
            act_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(7919).wrapping_add(4)),
            model_norm: MovingPercentile::new(cfg.loss_norm_window),
            q_norm: MovingPercentile::new(cfg.loss_norm_window),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            model,
            policy,
            env,
            model_opt,
            policy_opt,
            warm: None,
            obs,
            episode_return: 0.0,
            episode_index: 0,
            env_step: 0,
            last_episode_return: 0.0,
            trace: None,
            cfg,
        })
    }

    pub fn env_step(&self) -> usize {
        self.env_step
    }

    pub fn alignment_config(&self) -> &AlignmentConfig {
        &self.align_cfg
    }

    fn record(&mut self, action: Vec<f64>, plan_mean: Vec<f64>, plan_std: Vec<f64>) -> Result<Transition> {
        let step = self.env.step(&action)?;
        let t = Transition {
            obs: std::mem::replace(&mut self.obs, step.observation.clone()),
            action,
            reward: step.reward,
            next_obs: step.observation,
            done: step.done,
            plan_mean,
            plan_std,
        };
        self.buffer.push(t.clone());
        self.env_step += 1;
        self.episode_return += step.reward;
        if step.done {
            self.last_episode_return = self.episode_return;
            self.episode_return = 0.0;
            self.episode_index += 1;
            self.warm = None;
            self.obs = self.env.reset(episode_seed(self.cfg.seed, self.episode_index));
        }
        Ok(t)
    }

    /// Random-action collection followed by model-only pretraining.
    pub fn warmup(&mut self) -> Result<()> {
        let a_dim = self.env.action_dim();
        let uniform_std = (1.0f64 / 3.0).sqrt();
        for _ in 0..self.cfg.warmup_steps {
            let a: Vec<f64> = (0..a_dim).map(|_| self.act_rng.random_range(-1.0..=1.0)).collect();
            self.record(a, vec![0.0; a_dim], vec![uniform_std; a_dim])?;
        }
        if self.buffer.num_valid_starts(self.cfg.horizon) == 0 {
            return Ok(());
        }
        for _ in 0..self.cfg.pretrain_updates {
            self.model_step()?;
        }
        Ok(())
    }

    /// Plan from the current observation, step the env and store the result.
    pub fn collect_step(&mut self) -> Result<(Transition, f64)> {
        let z = self.model.encode(&self.obs)?;
        let res = plan(
            &self.model,
            &self.policy,
            &z,
            self.warm.as_ref(),
            &self.plan_cfg,
            &mut self.act_rng,
        )?;
        if let Some(f) = self.trace.as_mut() {
            f.write_all(res.trace_record(self.env_step as u64).as_bytes())?;
        }
        let elite = res.elite_return_mean();
        self.warm = Some(res.final_dist.shifted(self.plan_cfg.std_max));
        let mu0 = res.final_dist.mu.row(0).to_vec();
        let sigma0 = res.final_dist.sigma.row(0).to_vec();
        let t = self.record(res.action, mu0, sigma0)?;
        Ok((t, elite))
    }

    fn model_step(&mut self) -> Result<()> {
        let batch = self
            .buffer
            .sample_sequences(self.cfg.batch_size, self.cfg.horizon, &mut self.update_rng)?;
        let scale = match self.cfg.loss_norm {
            LossNorm::MovingPercentile => self.model_norm.scale(),
            LossNorm::None => 1.0,
        };
        let m = model_update(
            &mut self.model,
            &mut self.model_opt,
            &batch,
            &self.policy,
            &self.loss_cfg,
            scale,
            &mut self.update_rng,
        )?;
        self.model_norm.push(m.loss);
        Ok(())
    }

    /// One model update followed by one policy update on the same batch.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let batch = self
            .buffer
            .sample_sequences(self.cfg.batch_size, self.cfg.horizon, &mut self.update_rng)?;
        let model_scale = match self.cfg.loss_norm {
            LossNorm::MovingPercentile => self.model_norm.scale(),
            LossNorm::None => 1.0,
        };
        let mm = model_update(
            &mut self.model,
            &mut self.model_opt,
            &batch,
            &self.policy,
            &self.loss_cfg,
            model_scale,
            &mut self.update_rng,
        )?;
        self.model_norm.push(mm.loss);
        let inputs = PolicyInputs::from_batch(&self.model, &batch)?;
        let q_scale = match self.cfg.loss_norm {
            LossNorm::MovingPercentile => self.q_norm.scale(),
            LossNorm::None => 1.0,
        };
        let (pm, q_values) = policy_update(
            &mut self.policy,
            &mut self.policy_opt,
            &self.model,
            &inputs,
            &self.align_cfg,
            q_scale,
            &mut self.update_rng,
        )?;
        for q in &q_values {
            self.q_norm.push(*q);
        }
        Ok(IterationMetrics {
            model_loss: mm.loss,
            policy_loss: pm.loss,
            alignment_loss: pm.alignment,
            q_mean: q_values.iter().sum::<f64>() / q_values.len() as f64,
            model_grad_norm: mm.grad_norm_raw,
            policy_grad_norm: pm.grad_norm,
            model_loss_scale: model_scale,
            q_scale,
        })
    }

    /// Mean return of noise-free planner episodes on a separate env. Uses
    /// its own seeds, so training state is untouched.
    pub fn evaluate(&self, episodes: usize) -> Result<f64> {
        let mut env = make_env(&self.cfg.env)?;
        let mut cfg = self.plan_cfg.clone();
        cfg.train_mode_noise = false;
        let mut total = 0.0;
        for e in 0..episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.cfg.seed ^ ((self.env_step as u64) << 20) ^ (e as u64).wrapping_mul(0x9e37_79b9),
            );
            let mut obs = env.reset(eval_seed(self.cfg.seed, e));
            let mut warm: Option<TrajectoryDistribution> = None;
            loop {
                let z = self.model.encode(&obs)?;
                let res = plan(&self.model, &self.policy, &z, warm.as_ref(), &cfg, &mut rng)?;
                warm = Some(res.final_dist.shifted(cfg.std_max));
                let step = env.step(&res.action)?;
                total += step.reward;
                obs = step.observation;
                if step.done {
                    break;
                }
            }
        }
        Ok(total / episodes.max(1) as f64)
    }

    /// Warmup, then collection and training until `total_steps`, logging a
    /// metrics row every `eval_interval` steps and at the end.
    pub fn run(&mut self, paths: &RunPaths) -> Result<RunSummary> {
        let start = Instant::now();
        let mut writer = MetricsWriter::create(paths.metrics.as_deref(), paths.timing.as_deref())?;
        if let Some(p) = &paths.plan_trace {
            self.trace = Some(std::fs::File::create(p)?);
        }
        self.warmup()?;
        let mut rows = Vec::new();
        let mut acc = Accumulator::default();
        let mut completed = self.episode_index;
        while self.env_step < self.cfg.total_steps {
            let result = (|| -> Result<()> {
                let (_, elite) = self.collect_step()?;
                acc.elite_sum += elite;
                acc.elite_n += 1;
                for _ in 0..self.cfg.updates_per_env_step {
                    let m = self.train_iteration()?;
                    acc.add(&m);
                }
                Ok(())
            })();
            if let Err(e) = result {
                let row = MetricsRow::diagnostic(self.env_step);
                writer.write(&row, start.elapsed().as_secs_f64())?;
                return Err(e);
            }
            if self.episode_index > completed {
                acc.episode_returns.push(self.last_episode_return);
                completed = self.episode_index;
            }
            if self.env_step % self.cfg.eval_interval == 0 || self.env_step == self.cfg.total_steps {
                let eval_return = self.evaluate(self.cfg.eval_episodes)?;
                let episode_return = if acc.episode_returns.is_empty() {
                    self.last_episode_return
                } else {
                    acc.episode_returns.iter().sum::<f64>() / acc.episode_returns.len() as f64
                };
                let s = acc.sum;
                let row = MetricsRow {
                    env_step: self.env_step,
                    episode_return,
                    eval_return,
                    model_loss: acc.mean(s.model_loss),
                    policy_loss: acc.mean(s.policy_loss),
                    alignment_loss: acc.mean(s.alignment_loss),
                    q_mean: acc.mean(s.q_mean),
                    planner_elite_return_mean: if acc.elite_n == 0 {
                        0.0
                    } else {
                        acc.elite_sum / acc.elite_n as f64
                    },
                    model_grad_norm: acc.mean(s.model_grad_norm),
                    policy_grad_norm: acc.mean(s.policy_grad_norm),
                    model_loss_scale: s.model_loss_scale,
                    q_scale: s.q_scale,
                };
                if !row.is_finite() {
                    writer.write(&row, start.elapsed().as_secs_f64())?;
                    return Err(BoomError::Divergence(format!(
                        "non-finite metrics at step {}",
                        self.env_step
                    )));
                }
                writer.write(&row, start.elapsed().as_secs_f64())?;
                rows.push(row);
                acc = Accumulator::default();
            }
        }
        if rows.is_empty() {
            // total_steps == warmup_steps: still report one evaluation
            let row = MetricsRow {
                env_step: self.env_step,
                eval_return: self.evaluate(self.cfg.eval_episodes)?,
                episode_return: self.last_episode_return,
                ..MetricsRow::default()
            };
            writer.write(&row, start.elapsed().as_secs_f64())?;
            rows.push(row);
        }
        if let Some(p) = &paths.checkpoint {
            save_checkpoint(p, &self.model, &self.policy, &self.cfg.to_text())?;
        }
        let final_eval_return = rows.last().map_or(0.0, |r| r.eval_return);
        Ok(RunSummary {
            rows,
            final_eval_return,
        })
    }
}

fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode)
}

/// Evaluation episodes use a seed stream disjoint from training episodes.
pub fn eval_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(1 << 40).wrapping_add(episode as u64)
}

/// Build a trainer from `cfg` and run it.
pub fn run(cfg: TrainConfig, paths: &RunPaths) -> Result<RunSummary> {
    Trainer::new(cfg)?.run(paths)
}
