//! Small deterministic control tasks with rewards in `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, BoomError, Result};

pub const EPISODE_LIMIT: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Actions are clamped to `[-1, 1]`.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn step_count(&self) -> usize;
    fn observation(&self) -> Vec<f64>;
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pointmass" => Ok(Box::new(PointMassReach::new())),
        "pendulum" => Ok(Box::new(PendulumSwingup::new())),
        other => Err(BoomError::Config(format!(
            "unknown env '{other}' (expected pointmass or pendulum)"
        ))),
    }
}

fn clamp_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// 2-d point mass driven by acceleration toward the origin.
#[derive(Clone, Debug)]
pub struct PointMassReach {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    pub dt: f64,
    pub damping: f64,
    steps: usize,
}

impl PointMassReach {
    pub fn new() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            dt: 0.05,
            damping: 0.95,
            steps: 0,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.steps = 0;
    }

    pub fn reward(&self) -> f64 {
        let d2: f64 = (0..2).map(|i| (self.pos[i] - self.goal[i]).powi(2)).sum();
        (-d2).exp()
    }
}

impl Default for PointMassReach {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMassReach {
    fn name(&self) -> &'static str {
        "pointmass"
    }
    fn obs_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.set_state(pos, [0.0; 2]);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_dim(2, action.len(), "pointmass action")?;
        if self.steps >= EPISODE_LIMIT {
            return Err(BoomError::EpisodeFinished);
        }
        let a = clamp_action(action);
        for i in 0..2 {
            self.vel[i] = self.damping * (self.vel[i] + self.dt * a[i]);
            self.pos[i] += self.dt * self.vel[i];
        }
        self.steps += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward: self.reward(),
            done: self.steps >= EPISODE_LIMIT,
        })
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

/// Torque-limited pendulum; `theta = 0` is upright. The torque limit is
/// below gravity, so reaching the top needs a swing.
#[derive(Clone, Debug)]
pub struct PendulumSwingup {
    pub theta: f64,
    pub theta_dot: f64,
    pub gravity: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub substeps: usize,
    steps: usize,
}

impl PendulumSwingup {
    pub fn new() -> Self {
        Self {
            theta: std::f64::consts::PI,
            theta_dot: 0.0,
            gravity: 10.0,
            damping: 0.1,
            max_torque: 4.0,
            dt: 0.05,
            substeps: 4,
            steps: 0,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
    }

    pub fn reward(&self) -> f64 {
        0.5 * (1.0 + self.theta.cos()) * (-0.01 * self.theta_dot * self.theta_dot).exp()
    }

    /// `0.5 * theta_dot^2 + g * cos(theta)`, conserved without torque and
    /// damping.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + self.gravity * self.theta.cos()
    }

    fn accel(&self, theta: f64, theta_dot: f64, torque: f64) -> f64 {
        self.gravity * theta.sin() - self.damping * theta_dot + torque
    }

    fn rk4(&mut self, torque: f64, h: f64) {
        let (x, v) = (self.theta, self.theta_dot);
        let k1x = v;
        let k1v = self.accel(x, v, torque);
        let k2x = v + 0.5 * h * k1v;
        let k2v = self.accel(x + 0.5 * h * k1x, k2x, torque);
        let k3x = v + 0.5 * h * k2v;
        let k3v = self.accel(x + 0.5 * h * k2x, k3x, torque);
        let k4x = v + h * k3v;
        let k4v = self.accel(x + h * k3x, k4x, torque);
        self.theta = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        self.theta_dot = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
}

impl Default for PendulumSwingup {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PendulumSwingup {
    fn name(&self) -> &'static str {
        "pendulum"
    }
    fn obs_dim(&self) -> usize {
        3
    }
    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = std::f64::consts::PI + rng.random_range(-0.1..0.1);
        let theta_dot = rng.random_range(-0.1..0.1);
        self.set_state(theta, theta_dot);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_dim(1, action.len(), "pendulum action")?;
        if self.steps >= EPISODE_LIMIT {
            return Err(BoomError::EpisodeFinished);
        }
        let torque = self.max_torque * action[0].clamp(-1.0, 1.0);
        let h = self.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            self.rk4(torque, h);
        }
        // keep theta in (-pi, pi]
        self.theta = (self.theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        self.steps += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward: self.reward(),
            done: self.steps >= EPISODE_LIMIT,
        })
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// Mean undiscounted return of uniform random actions over `episodes`
/// episodes seeded `seed, seed + 1, ...`.
pub fn random_policy_return(name: &str, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = make_env(name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a4d);
    let mut total = 0.0;
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64));
        loop {
            let a: Vec<f64> = (0..env.action_dim())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let r = env.step(&a)?;
            total += r.reward;
            if r.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}
