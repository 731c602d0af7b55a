//! Episodic replay with single-step and within-episode sequence sampling.

mod dump;
mod normalizer;

pub use dump::{read_buffer, write_buffer};
pub use normalizer::{NormStats, Normalizer};

use std::collections::VecDeque;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The episode ended by its termination predicate.
    pub done: bool,
    /// The episode ended by the time limit.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Uniformly sampled single-step transitions, one row per draw.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub done: Tensor,
    pub truncated: Tensor,
    /// Position of each draw in buffer order (oldest transition first).
    pub indices: Vec<usize>,
}

/// `len` consecutive transitions per row, all from one episode.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// `x_1 ..= x_{len+1}`, each `[batch, m]`.
    pub states: Vec<Tensor>,
    /// `u_1 ..= u_len`, each `[batch, n]`.
    pub actions: Vec<Tensor>,
    /// Rewards per step, each `[batch, 1]`.
    pub rewards: Vec<Tensor>,
    /// `(episode id, start offset)` per row.
    pub origins: Vec<(u64, usize)>,
}

/// Transitions grouped by episode with whole-episode FIFO eviction.
///
/// Transitions are appended to the open episode; one with `done` or
/// `truncated` set closes it, and the next push opens a new episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    episodes: VecDeque<Episode>,
    len: usize,
    next_id: u64,
    open: bool,
}

impl EpisodeBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || state_dim == 0 || action_dim == 0 {
            return Err(Error::Replay("capacity and dimensions must be positive".into()));
        }
        Ok(EpisodeBuffer {
            state_dim,
            action_dim,
            capacity,
            episodes: VecDeque::new(),
            len: 0,
            next_id: 0,
            open: false,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Whether the newest episode still accepts transitions.
    pub fn is_open(&self) -> bool {
        self.open
    }

    /// Id the next opened episode will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim || t.action.len() != self.action_dim {
            return Err(Error::Replay(format!(
                "transition dims ({}, {}, {}) do not match buffer ({}, {})",
                t.state.len(),
                t.action.len(),
                t.next_state.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        if t.done && t.truncated {
            return Err(Error::Replay("transition is both done and truncated".into()));
        }
        if self.open {
            let prev = self.episodes.back().and_then(|e| e.transitions.last()).expect("open episode is non-empty");
            if prev.next_state != t.state {
                return Err(Error::Replay("transition does not continue the open episode".into()));
            }
        } else {
            self.episodes.push_back(Episode {
                id: self.next_id,
                transitions: Vec::new(),
            });
            self.next_id += 1;
            self.open = true;
        }
        self.open = !(t.done || t.truncated);
        self.episodes.back_mut().unwrap().transitions.push(t);
        self.len += 1;
        self.evict();
        Ok(())
    }

    /// Closes the open episode without a terminal flag, e.g. when a rollout
    /// is abandoned. The next push starts a new episode.
    pub fn end_episode(&mut self) {
        self.open = false;
    }

    fn evict(&mut self) {
        while self.len > self.capacity {
            if self.episodes.len() > 1 {
                let old = self.episodes.pop_front().unwrap();
                self.len -= old.len();
            } else {
                // A single episode longer than the buffer keeps its most recent suffix.
                let only = self.episodes.front_mut().unwrap();
                let excess = self.len - self.capacity;
                only.transitions.drain(..excess);
                self.len -= excess;
            }
        }
    }

    /// Checks the within-episode chaining invariant `x'_t = x_{t+1}`.
    pub fn is_chained(&self) -> bool {
        self.episodes
            .iter()
            .all(|e| e.transitions.windows(2).all(|w| w[0].next_state == w[1].state))
    }

    /// Uniform draws with replacement over every stored transition.
    pub fn sample_steps<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<StepBatch> {
        if self.is_empty() {
            return Err(Error::Replay("cannot sample from an empty buffer".into()));
        }
        if batch == 0 {
            return Err(Error::Replay("batch size must be positive".into()));
        }
        let indices: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len)).collect();
        let ends: Vec<usize> = self
            .episodes
            .iter()
            .scan(0, |acc, e| {
                *acc += e.len();
                Some(*acc)
            })
            .collect();
        let picked: Vec<&Transition> = indices
            .iter()
            .map(|&i| {
                let k = ends.partition_point(|&end| end <= i);
                let start = if k == 0 { 0 } else { ends[k - 1] };
                &self.episodes[k].transitions[i - start]
            })
            .collect();
        let (m, n) = (self.state_dim, self.action_dim);
        let gather = |width: usize, f: &dyn Fn(&Transition) -> &[f64]| {
            let data = picked.iter().flat_map(|t| f(t).iter().copied()).collect();
            Tensor::new([batch, width], data).expect("consistent widths")
        };
        let scalar = |f: &dyn Fn(&Transition) -> f64| {
            Tensor::new([batch, 1], picked.iter().map(|t| f(t)).collect()).expect("batch rows")
        };
        Ok(StepBatch {
            states: gather(m, &|t| &t.state),
            actions: gather(n, &|t| &t.action),
            rewards: scalar(&|t| t.reward),
            next_states: gather(m, &|t| &t.next_state),
            done: scalar(&|t| f64::from(u8::from(t.done))),
            truncated: scalar(&|t| f64::from(u8::from(t.truncated))),
            indices,
        })
    }

    /// Number of valid start offsets for sequences of `len` transitions.
    pub fn sequence_starts(&self, len: usize) -> usize {
        self.episodes.iter().map(|e| (e.len() + 1).saturating_sub(len)).sum()
    }

    /// Uniform draws over every start offset whose `len` transitions fit in
    /// one episode.
    pub fn sample_sequences<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<SequenceBatch> {
        if len == 0 || batch == 0 {
            return Err(Error::Replay("sequence length and batch size must be positive".into()));
        }
        let total = self.sequence_starts(len);
        if total == 0 {
            return Err(Error::Replay(format!("no episode holds {len} transitions")));
        }
        let mut origins = Vec::with_capacity(batch);
        let mut rows = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut k = rng.random_range(0..total);
            for e in &self.episodes {
                let starts = (e.len() + 1).saturating_sub(len);
                if k < starts {
                    origins.push((e.id, k));
                    rows.push(&e.transitions[k..k + len]);
                    break;
                }
                k -= starts;
            }
        }
        let (m, n) = (self.state_dim, self.action_dim);
        let mut states = Vec::with_capacity(len + 1);
        let mut actions = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        for t in 0..=len {
            let data = rows
                .iter()
                .flat_map(|r| if t < len { r[t].state.iter() } else { r[len - 1].next_state.iter() }.copied())
                .collect();
            states.push(Tensor::new([batch, m], data)?);
            if t < len {
                actions.push(Tensor::new([batch, n], rows.iter().flat_map(|r| r[t].action.iter().copied()).collect())?);
                rewards.push(Tensor::new([batch, 1], rows.iter().map(|r| r[t].reward).collect())?);
            }
        }
        Ok(SequenceBatch {
            states,
            actions,
            rewards,
            origins,
        })
    }

    /// Counts rows of `batch` that do not reproduce `len` consecutive
    /// transitions of a single stored episode.
    pub fn audit_sequences(&self, batch: &SequenceBatch) -> usize {
        let len = batch.actions.len();
        batch
            .origins
            .iter()
            .enumerate()
            .filter(|&(row, &(id, start))| {
                let Some(e) = self.episodes.iter().find(|e| e.id == id) else {
                    return true;
                };
                if start + len > e.len() {
                    return true;
                }
                let seq = &e.transitions[start..start + len];
                let chained = seq.windows(2).all(|w| w[0].next_state == w[1].state);
                let matches = (0..len).all(|t| {
                    batch.states[t].row(row) == seq[t].state.as_slice()
                        && batch.actions[t].row(row) == seq[t].action.as_slice()
                        && batch.states[t + 1].row(row) == seq[t].next_state.as_slice()
                });
                !(chained && matches)
            })
            .count()
    }
}

#[cfg(test)]
mod tests;
