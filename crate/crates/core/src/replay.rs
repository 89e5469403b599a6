//! Episode-structured replay with uniform sampling of contiguous subsequences.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BoomError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// The executed (planner) action, in `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// First-step mean and std of the planner's final trajectory
    /// distribution; used only by the reverse-KL surrogate.
    pub plan_mean: Vec<f64>,
    pub plan_std: Vec<f64>,
}

/// `B` sequences of `H + 1` consecutive transitions, stored time-major.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub horizon: usize,
    /// `H + 2` arrays of shape `B x obs_dim`: `s_0 .. s_{H+1}`.
    pub obs: Vec<Array2<f64>>,
    /// `H + 1` arrays of shape `B x action_dim`.
    pub actions: Vec<Array2<f64>>,
    /// `H + 1` vectors of length `B`.
    pub rewards: Vec<Vec<f64>>,
    pub plan_mean: Vec<Array2<f64>>,
    pub plan_std: Vec<Array2<f64>>,
    /// `(episode serial, start index)` of every sequence.
    pub origins: Vec<(u64, usize)>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn num_steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn from_sequences(sequences: &[&[Transition]], origins: Vec<(u64, usize)>) -> Self {
        let b = sequences.len();
        let steps = sequences[0].len();
        let obs_dim = sequences[0][0].obs.len();
        let act_dim = sequences[0][0].action.len();
        let mut obs = vec![Array2::zeros((b, obs_dim)); steps + 1];
        let mut actions = vec![Array2::zeros((b, act_dim)); steps];
        let mut plan_mean = vec![Array2::zeros((b, act_dim)); steps];
        let mut plan_std = vec![Array2::zeros((b, act_dim)); steps];
        let mut rewards = vec![vec![0.0; b]; steps];
        for (i, seq) in sequences.iter().enumerate() {
            debug_assert_eq!(seq.len(), steps);
            for (t, tr) in seq.iter().enumerate() {
                obs[t].row_mut(i).assign(&ndarray::aview1(&tr.obs));
                actions[t].row_mut(i).assign(&ndarray::aview1(&tr.action));
                plan_mean[t].row_mut(i).assign(&ndarray::aview1(&tr.plan_mean));
                plan_std[t].row_mut(i).assign(&ndarray::aview1(&tr.plan_std));
                rewards[t][i] = tr.reward;
            }
            obs[steps]
                .row_mut(i)
                .assign(&ndarray::aview1(&seq[steps - 1].next_obs));
        }
        Self {
            horizon: steps - 1,
            obs,
            actions,
            rewards,
            plan_mean,
            plan_std,
            origins,
        }
    }
}

struct Episode {
    serial: u64,
    transitions: Vec<Transition>,
    /// Index of `transitions[0]` within the original episode (non-zero only
    /// after front-trimming a single oversized episode).
    first_index: usize,
    closed: bool,
}

/// Capacity is counted in transitions; whole oldest episodes are evicted.
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    len: usize,
    next_serial: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::new(),
            len: 0,
            next_serial: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_lengths(&self) -> Vec<usize> {
        self.episodes.iter().map(|e| e.transitions.len()).collect()
    }

    pub fn push(&mut self, t: Transition) {
        let start_new = self.episodes.back().is_none_or(|e| e.closed);
        if start_new {
            self.episodes.push_back(Episode {
                serial: self.next_serial,
                transitions: Vec::new(),
                first_index: 0,
                closed: false,
            });
            self.next_serial += 1;
        }
        let done = t.done;
        let ep = self.episodes.back_mut().expect("episode exists");
        ep.transitions.push(t);
        ep.closed = done;
        self.len += 1;
        self.evict();
    }

    fn evict(&mut self) {
        while self.len > self.capacity && self.episodes.len() > 1 {
            let ep = self.episodes.pop_front().expect("non-empty");
            self.len -= ep.transitions.len();
        }
        if self.len > self.capacity {
            let ep = self.episodes.front_mut().expect("non-empty");
            let excess = self.len - self.capacity;
            ep.transitions.drain(..excess);
            ep.first_index += excess;
            self.len -= excess;
        }
    }

    /// Number of distinct start positions for sequences of `horizon + 1`.
    pub fn num_valid_starts(&self, horizon: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| e.transitions.len().saturating_sub(horizon))
            .sum()
    }

    /// `batch_size` sequences of `horizon + 1` transitions, start positions
    /// uniform over all valid positions in all episodes.
    pub fn sample_sequences(
        &self,
        batch_size: usize,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SequenceBatch> {
        let counts: Vec<usize> = self
            .episodes
            .iter()
            .map(|e| e.transitions.len().saturating_sub(horizon))
            .collect();
        let total: usize = counts.iter().sum();
        if total == 0 || batch_size == 0 {
            return Err(BoomError::InsufficientData(format!(
                "no episode holds {} consecutive transitions",
                horizon + 1
            )));
        }
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            acc += c;
            cumulative.push(acc);
        }
        let mut seqs = Vec::with_capacity(batch_size);
        let mut origins = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u = rng.random_range(0..total);
            let e = cumulative.partition_point(|&c| c <= u);
            let before = if e == 0 { 0 } else { cumulative[e - 1] };
            let start = u - before;
            let ep = &self.episodes[e];
            seqs.push(&ep.transitions[start..start + horizon + 1]);
            origins.push((ep.serial, ep.first_index + start));
        }
        Ok(SequenceBatch::from_sequences(&seqs, origins))
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}
