//! Replay storage with n-step return assembly.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::diffmath::{RealMat, RealVec};
use crate::{Error, Result};

/// An assembled n-step transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: RealVec,
    pub a: RealVec,
    /// `Σₖ γᵏ rₖ` over the window.
    pub r_sum: f64,
    /// `γⁿ`, or 0 when the episode ended inside the window.
    pub disc: f64,
    /// State `n` steps ahead (or the final state of the episode).
    pub s_n: RealVec,
    /// State one step ahead, used for the adjacent-view auxiliary loss.
    pub s_next: RealVec,
}

#[derive(Clone, Debug)]
struct RawStep {
    s: RealVec,
    a: RealVec,
    r: f64,
    s_next: RealVec,
}

/// Turns a stream of single steps into n-step transitions.
#[derive(Clone, Debug)]
pub struct NStepAssembler {
    n: usize,
    gamma: f64,
    window: VecDeque<RawStep>,
}

impl NStepAssembler {
    pub fn new(n: usize, gamma: f64) -> Self {
        assert!(n >= 1, "n-step must be >= 1");
        Self { n, gamma, window: VecDeque::with_capacity(n) }
    }

    /// Adds one environment step; returns every transition that became complete.
    pub fn push(&mut self, s: RealVec, a: RealVec, r: f64, s_next: RealVec, episode_end: bool) -> Vec<Transition> {
        self.window.push_back(RawStep { s, a, r, s_next });
        let mut out = Vec::new();
        if self.window.len() == self.n {
            out.push(self.emit(episode_end));
            self.window.pop_front();
        }
        if episode_end {
            while !self.window.is_empty() {
                out.push(self.emit(true));
                self.window.pop_front();
            }
        }
        out
    }

    fn emit(&self, ended: bool) -> Transition {
        let first = &self.window[0];
        let last = &self.window[self.window.len() - 1];
        let mut r_sum = 0.0;
        let mut g = 1.0;
        for step in &self.window {
            r_sum += g * step.r;
            g *= self.gamma;
        }
        Transition {
            s: first.s.clone(),
            a: first.a.clone(),
            r_sum,
            disc: if ended { 0.0 } else { self.gamma.powi(self.n as i32) },
            s_n: last.s_next.clone(),
            s_next: first.s_next.clone(),
        }
    }
}

/// A sampled minibatch, one row per transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: RealMat,
    pub a: RealMat,
    pub r_sum: RealVec,
    pub disc: RealVec,
    pub s_n: RealMat,
    pub s_next: RealMat,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.r_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_sum.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let obs = ts.first().map_or(0, |t| t.s.len());
        let act = ts.first().map_or(0, |t| t.a.len());
        let mut b = Batch {
            s: Array2::zeros((ts.len(), obs)),
            a: Array2::zeros((ts.len(), act)),
            r_sum: Array1::zeros(ts.len()),
            disc: Array1::zeros(ts.len()),
            s_n: Array2::zeros((ts.len(), obs)),
            s_next: Array2::zeros((ts.len(), obs)),
        };
        for (i, t) in ts.iter().enumerate() {
            b.s.row_mut(i).assign(&t.s);
            b.a.row_mut(i).assign(&t.a);
            b.r_sum[i] = t.r_sum;
            b.disc[i] = t.disc;
            b.s_n.row_mut(i).assign(&t.s_n);
            b.s_next.row_mut(i).assign(&t.s_next);
        }
        b
    }
}

/// Fixed-capacity ring of assembled transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    assembler: NStepAssembler,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_step: usize, gamma: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        Self { capacity, items: Vec::new(), next: 0, assembler: NStepAssembler::new(n_step, gamma) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records a raw environment step.
    pub fn push_step(&mut self, s: RealVec, a: RealVec, r: f64, s_next: RealVec, episode_end: bool) {
        for t in self.assembler.push(s, a, r, s_next, episode_end) {
            self.insert(t);
        }
    }

    /// Inserts an already assembled transition.
    pub fn insert(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform sample of `batch` distinct slot indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch > self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {batch} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        let ts: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Ok(Batch::from_transitions(&ts))
    }
}
