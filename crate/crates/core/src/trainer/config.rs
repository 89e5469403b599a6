use std::fmt::Write as _;
use std::path::Path;

use crate::error::{BoomError, Result};
use crate::planner::PlanConfig;
use crate::policy::{AlignMetric, AlignmentConfig, WeightMode};
use crate::world_model::{BinSpec, BinTransform, ModelLossConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossNorm {
    None,
    MovingPercentile,
}

/// Flat training configuration. Every field maps to one `key=value` entry.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub pretrain_updates: usize,
    pub updates_per_env_step: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub lr: f64,
    pub encoder_lr: f64,
    pub grad_clip: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub num_q: usize,
    pub num_bins: usize,
    pub bin_min: f64,
    pub bin_max: f64,
    pub bin_transform: BinTransform,
    pub q_dropout: f64,
    pub consistency_coef: f64,
    pub reward_coef: f64,
    pub value_coef: f64,
    pub target_update_rate: f64,
    /// `None` resolves to `dim(A) / 1000`.
    pub lambda_align: Option<f64>,
    pub lambda_scale: f64,
    pub tau: f64,
    pub entropy_coeff: f64,
    pub weight_mode: WeightMode,
    pub align_metric: AlignMetric,
    /// `None` resolves to 6, or 8 when `dim(A) > 20`.
    pub plan_iterations: Option<usize>,
    pub plan_population: usize,
    pub plan_elites: usize,
    pub plan_prior_samples: usize,
    pub plan_std_min: f64,
    pub plan_std_max: f64,
    pub plan_temperature: f64,
    pub plan_discount: Option<f64>,
    pub loss_norm: LossNorm,
    pub loss_norm_window: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            seed: 0,
            total_steps: 20_000,
            warmup_steps: 1000,
            pretrain_updates: 1000,
            updates_per_env_step: 1,
            batch_size: 64,
            horizon: 3,
            gamma: 0.99,
            lr: 3e-4,
            encoder_lr: 1e-4,
            grad_clip: 20.0,
            latent_dim: 64,
            hidden_dim: 64,
            hidden_layers: 1,
            num_q: 5,
            num_bins: 101,
            bin_min: -10.0,
            bin_max: 10.0,
            bin_transform: BinTransform::SymLog,
            q_dropout: 0.01,
            consistency_coef: 20.0,
            reward_coef: 0.1,
            value_coef: 0.1,
            target_update_rate: 0.5,
            lambda_align: None,
            lambda_scale: 1.0,
            tau: 1.0,
            entropy_coeff: 1e-4,
            weight_mode: WeightMode::SoftQ,
            align_metric: AlignMetric::ForwardKL,
            plan_iterations: None,
            plan_population: 512,
            plan_elites: 64,
            plan_prior_samples: 24,
            plan_std_min: 0.05,
            plan_std_max: 2.0,
            plan_temperature: 1.0,
            plan_discount: None,
            loss_norm: LossNorm::MovingPercentile,
            loss_norm_window: 1000,
            eval_interval: 1000,
            eval_episodes: 5,
            buffer_capacity: 100_000,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "env",
    "seed",
    "total_steps",
    "warmup_steps",
    "pretrain_updates",
    "updates_per_env_step",
    "batch_size",
    "horizon",
    "gamma",
    "lr",
    "encoder_lr",
    "grad_clip",
    "latent_dim",
    "hidden_dim",
    "hidden_layers",
    "num_q",
    "num_bins",
    "bin_min",
    "bin_max",
    "bin_transform",
    "q_dropout",
    "consistency_coef",
    "reward_coef",
    "value_coef",
    "target_update_rate",
    "lambda_align",
    "lambda_scale",
    "tau",
    "entropy_coeff",
    "weight_mode",
    "align_metric",
    "plan_iterations",
    "plan_population",
    "plan_elites",
    "plan_prior_samples",
    "plan_std_min",
    "plan_std_max",
    "plan_temperature",
    "plan_discount",
    "loss_norm",
    "loss_norm_window",
    "eval_interval",
    "eval_episodes",
    "buffer_capacity",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| BoomError::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".into(), |x| x.to_string())
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "env" => self.env = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "pretrain_updates" => self.pretrain_updates = parse(key, v)?,
            "updates_per_env_step" => self.updates_per_env_step = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "encoder_lr" => self.encoder_lr = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "hidden_layers" => self.hidden_layers = parse(key, v)?,
            "num_q" => self.num_q = parse(key, v)?,
            "num_bins" => self.num_bins = parse(key, v)?,
            "bin_min" => self.bin_min = parse(key, v)?,
            "bin_max" => self.bin_max = parse(key, v)?,
            "bin_transform" => {
                self.bin_transform = match v {
                    "linear" => BinTransform::Linear,
                    "symlog" => BinTransform::SymLog,
                    _ => return Err(BoomError::Config(format!("bin_transform: '{v}'"))),
                }
            }
            "q_dropout" => self.q_dropout = parse(key, v)?,
            "consistency_coef" => self.consistency_coef = parse(key, v)?,
            "reward_coef" => self.reward_coef = parse(key, v)?,
            "value_coef" => self.value_coef = parse(key, v)?,
            "target_update_rate" => self.target_update_rate = parse(key, v)?,
            "lambda_align" => self.lambda_align = parse_auto(key, v)?,
            "lambda_scale" => self.lambda_scale = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "entropy_coeff" => self.entropy_coeff = parse(key, v)?,
            "weight_mode" => {
                self.weight_mode = match v {
                    "softq" => WeightMode::SoftQ,
                    "uniform" => WeightMode::Uniform,
                    _ => return Err(BoomError::Config(format!("weight_mode: '{v}'"))),
                }
            }
            "align_metric" => {
                self.align_metric = match v {
                    "forward_kl" => AlignMetric::ForwardKL,
                    "reverse_kl" => AlignMetric::ReverseKLSurrogate,
                    _ => return Err(BoomError::Config(format!("align_metric: '{v}'"))),
                }
            }
            "plan_iterations" => self.plan_iterations = parse_auto(key, v)?,
            "plan_population" => self.plan_population = parse(key, v)?,
            "plan_elites" => self.plan_elites = parse(key, v)?,
            "plan_prior_samples" => self.plan_prior_samples = parse(key, v)?,
            "plan_std_min" => self.plan_std_min = parse(key, v)?,
            "plan_std_max" => self.plan_std_max = parse(key, v)?,
            "plan_temperature" => self.plan_temperature = parse(key, v)?,
            "plan_discount" => {
                self.plan_discount = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "loss_norm" => {
                self.loss_norm = match v {
                    "none" => LossNorm::None,
                    "moving_percentile" => LossNorm::MovingPercentile,
                    _ => return Err(BoomError::Config(format!("loss_norm: '{v}'"))),
                }
            }
            "loss_norm_window" => self.loss_norm_window = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, v)?,
            other => return Err(BoomError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "env" => self.env.clone(),
            "seed" => self.seed.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "pretrain_updates" => self.pretrain_updates.to_string(),
            "updates_per_env_step" => self.updates_per_env_step.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "horizon" => self.horizon.to_string(),
            "gamma" => self.gamma.to_string(),
            "lr" => self.lr.to_string(),
            "encoder_lr" => self.encoder_lr.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "num_q" => self.num_q.to_string(),
            "num_bins" => self.num_bins.to_string(),
            "bin_min" => self.bin_min.to_string(),
            "bin_max" => self.bin_max.to_string(),
            "bin_transform" => match self.bin_transform {
                BinTransform::Linear => "linear".into(),
                BinTransform::SymLog => "symlog".into(),
            },
            "q_dropout" => self.q_dropout.to_string(),
            "consistency_coef" => self.consistency_coef.to_string(),
            "reward_coef" => self.reward_coef.to_string(),
            "value_coef" => self.value_coef.to_string(),
            "target_update_rate" => self.target_update_rate.to_string(),
            "lambda_align" => auto_str(&self.lambda_align),
            "lambda_scale" => self.lambda_scale.to_string(),
            "tau" => self.tau.to_string(),
            "entropy_coeff" => self.entropy_coeff.to_string(),
            "weight_mode" => match self.weight_mode {
                WeightMode::SoftQ => "softq".into(),
                WeightMode::Uniform => "uniform".into(),
            },
            "align_metric" => match self.align_metric {
                AlignMetric::ForwardKL => "forward_kl".into(),
                AlignMetric::ReverseKLSurrogate => "reverse_kl".into(),
            },
            "plan_iterations" => auto_str(&self.plan_iterations),
            "plan_population" => self.plan_population.to_string(),
            "plan_elites" => self.plan_elites.to_string(),
            "plan_prior_samples" => self.plan_prior_samples.to_string(),
            "plan_std_min" => self.plan_std_min.to_string(),
            "plan_std_max" => self.plan_std_max.to_string(),
            "plan_temperature" => self.plan_temperature.to_string(),
            "plan_discount" => self
                .plan_discount
                .map_or("none".into(), |d| d.to_string()),
            "loss_norm" => match self.loss_norm {
                LossNorm::None => "none".into(),
                LossNorm::MovingPercentile => "moving_percentile".into(),
            },
            "loss_norm_window" => self.loss_norm_window.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "buffer_capacity" => self.buffer_capacity.to_string(),
            _ => return None,
        })
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                BoomError::Config(format!("line {}: expected key=value, got '{line}'", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Every key in canonical order; `parse_text` of this is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(BoomError::Config(m.to_string()));
        if self.warmup_steps > self.total_steps {
            return fail("warmup_steps must not exceed total_steps");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.horizon == 0 || self.eval_interval == 0 {
            return fail("batch_size, horizon and eval_interval must be positive");
        }
        if self.updates_per_env_step == 0 || self.loss_norm_window == 0 {
            return fail("updates_per_env_step and loss_norm_window must be positive");
        }
        self.bins()?;
        self.alignment(1).validate()?;
        self.plan(1).validate()
    }

    pub fn bins(&self) -> Result<BinSpec> {
        BinSpec::new(self.num_bins, self.bin_min, self.bin_max, self.bin_transform)
    }

    pub fn alignment(&self, action_dim: usize) -> AlignmentConfig {
        let mut a = AlignmentConfig::new(action_dim);
        a.lambda_align = self.lambda_align.unwrap_or(a.lambda_align) * self.lambda_scale;
        a.tau = self.tau;
        a.entropy_coeff = self.entropy_coeff;
        a.weight_mode = self.weight_mode;
        a.metric = self.align_metric;
        a
    }

    pub fn plan(&self, action_dim: usize) -> PlanConfig {
        let mut p = PlanConfig::new(action_dim);
        p.horizon = self.horizon;
        if let Some(it) = self.plan_iterations {
            p.iterations = it;
        }
        p.population = self.plan_population;
        p.num_elites = self.plan_elites;
        p.policy_prior_samples = self.plan_prior_samples;
        p.std_min = self.plan_std_min;
        p.std_max = self.plan_std_max;
        p.temperature = self.plan_temperature;
        p.discount = self.plan_discount;
        p
    }

    pub fn model_loss(&self) -> ModelLossConfig {
        ModelLossConfig {
            gamma: self.gamma,
            step_decay: self.gamma,
            consistency_coef: self.consistency_coef,
            reward_coef: self.reward_coef,
            value_coef: self.value_coef,
            target_update_rate: self.target_update_rate,
            grad_clip: self.grad_clip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::default();
        c.set("lambda_align", "0.25").unwrap();
        c.set("weight_mode", "uniform").unwrap();
        c.set("plan_discount", "0.9").unwrap();
        assert_eq!(TrainConfig::parse_text(&c.to_text()).unwrap(), c);
        assert_eq!(
            TrainConfig::parse_text(&TrainConfig::default().to_text()).unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = TrainConfig::parse_text("# header\nseed = 7  # trailing\n\nenv=pointmass\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.env, "pointmass");
        assert!(TrainConfig::parse_text("sede=7").is_err());
        assert!(TrainConfig::parse_text("seed").is_err());
        assert!(TrainConfig::parse_text("seed=x").is_err());
    }

    #[test]
    fn every_key_is_gettable() {
        let c = TrainConfig::default();
        for k in CONFIG_KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn resolved_defaults() {
        let c = TrainConfig::default();
        assert!((c.alignment(1).lambda_align - 0.001).abs() < 1e-15);
        assert_eq!(c.plan(1).iterations, 6);
        assert_eq!(c.plan(21).iterations, 8);
        let mut bad = c.clone();
        bad.warmup_steps = c.total_steps + 1;
        assert!(bad.validate().is_err());
    }
}
