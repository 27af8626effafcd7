use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::RwLock;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: usize,
    /// Reward, or the discounted n-step reward sum.
    pub r: f64,
    pub s_next: Vec<f32>,
    pub done: bool,
    /// Behaviour log-probability (PPO).
    pub logp_old: f64,
    /// Value estimate at collection time (PPO).
    pub v_old: f64,
    /// Env steps between `s` and `s_next`.
    pub horizon: u32,
}

impl Transition {
    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if !self.r.is_finite() {
            return Err(Error::Usage(format!("non-finite reward {}", self.r)));
        }
        if self.a >= num_actions {
            return Err(Error::Usage(format!("action {} out of range", self.a)));
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, len: usize, batch: usize) -> Result<Vec<usize>> {
    if batch == 0 || batch > len {
        return Err(Error::Usage(format!(
            "cannot draw {batch} of {len} transitions"
        )));
    }
    Ok(index::sample(rng, len, batch).into_vec())
}

/// Ring buffer with uniform sampling, without replacement inside a batch.
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        draw(&mut self.rng, self.storage.len(), batch)
    }

    pub fn sample(&mut self, batch: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(batch)?;
        Ok(idx.into_iter().map(|i| &self.storage[i]).collect())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }
}

/// Replay storage for one writer and many concurrent readers. The size is readable
/// without taking the lock.
pub struct SharedReplayBuffer {
    capacity: usize,
    slots: RwLock<Vec<Transition>>,
    len: AtomicUsize,
    writes: AtomicU64,
}

impl SharedReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            slots: RwLock::new(Vec::with_capacity(capacity)),
            len: AtomicUsize::new(0),
            writes: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total pushes so far, including overwritten ones.
    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::Acquire)
    }

    pub fn push(&self, t: Transition) {
        let mut slots = self.slots.write().expect("replay lock poisoned");
        let n = self.writes.load(Ordering::Relaxed);
        if slots.len() < self.capacity {
            slots.push(t);
        } else {
            slots[(n % self.capacity as u64) as usize] = t;
        }
        self.len.store(slots.len(), Ordering::Release);
        self.writes.store(n + 1, Ordering::Release);
    }

    /// Copies a uniform batch out under a read lock.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<Transition>> {
        let slots = self.slots.read().expect("replay lock poisoned");
        let idx = draw(rng, slots.len(), batch)?;
        Ok(idx.into_iter().map(|i| slots[i].clone()).collect())
    }
}
