//! Proportional prioritized replay.
//!
//! Entries live in a ring of `capacity` slots. A sum tree over `p^α` gives
//! `O(log capacity)` insert, draw and priority update. Every slot carries a
//! generation counter so a priority update aimed at an entry that has since
//! been evicted can be recognized and dropped.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LineStateVector;

/// One joint step. The observation is shared by all agents, so it is
/// stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: LineStateVector,
    pub actions: Vec<usize>,
    pub next_state: LineStateVector,
    pub rewards: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionPriority {
    /// `|δ| + ε` from a forward pass at storage time.
    #[default]
    Computed,
    /// Largest priority seen so far.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta_step: f64,
    pub epsilon: f64,
    pub insertion: InsertionPriority,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 15_000,
            alpha: 0.6,
            beta: 0.4,
            beta_step: 0.001,
            epsilon: 1e-6,
            insertion: InsertionPriority::Computed,
        }
    }
}

impl ReplayConfig {
    pub fn check(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Domain("replay capacity must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.beta_step >= 0.0) {
            return Err(Error::Domain("replay exponents must be nonnegative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("priority floor must be positive".into()));
        }
        Ok(())
    }
}

/// Handle to a sampled entry, valid until the slot is overwritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleIndex {
    pub slot: usize,
    generation: u64,
}

#[derive(Debug, Clone)]
pub struct Batch<'a, T> {
    pub items: Vec<&'a T>,
    pub indices: Vec<SampleIndex>,
    /// Importance-sampling weights, summing to 1 over the batch.
    pub weights: Vec<f64>,
    /// Draw probabilities `P_g`.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, slot: usize) -> f64 {
        self.nodes[self.leaves + slot]
    }

    fn set(&mut self, slot: usize, value: f64) {
        let mut i = self.leaves + slot;
        self.nodes[i] = value;
        // Recompute parents from their children so rounding never accumulates.
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`.
    fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if mass < left || self.nodes[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    config: ReplayConfig,
    beta: f64,
    items: Vec<T>,
    priorities: Vec<f64>,
    generations: Vec<u64>,
    tree: SumTree,
    next: usize,
    max_priority: f64,
    stale_updates: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.check()?;
        Ok(Self {
            beta: config.beta,
            items: Vec::with_capacity(config.capacity.min(1 << 16)),
            priorities: Vec::new(),
            generations: vec![0; config.capacity],
            tree: SumTree::new(config.capacity),
            next: 0,
            max_priority: 1.0,
            stale_updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    /// Fill count `χ`.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Raw priority `p` of every live entry, in slot order.
    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    /// Oldest live slot.
    pub fn oldest_slot(&self) -> usize {
        if self.items.len() < self.config.capacity {
            0
        } else {
            self.next
        }
    }

    pub fn insert(&mut self, item: T, priority: f64) -> Result<SampleIndex> {
        if !(priority > 0.0 && priority.is_finite()) {
            return Err(Error::Domain(format!("priority must be positive, got {priority}")));
        }
        let slot = self.next;
        if slot < self.items.len() {
            self.items[slot] = item;
            self.priorities[slot] = priority;
            self.generations[slot] += 1;
        } else {
            self.items.push(item);
            self.priorities.push(priority);
        }
        self.tree.set(slot, priority.powf(self.config.alpha));
        self.max_priority = self.max_priority.max(priority);
        self.next = (slot + 1) % self.config.capacity;
        Ok(SampleIndex {
            slot,
            generation: self.generations[slot],
        })
    }

    /// Probability `P_g = p_g^α / Σ p^α` of drawing `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        self.tree.get(slot) / self.tree.total()
    }

    /// `size` independent draws with replacement.
    pub fn sample(&self, size: usize, rng: &mut impl Rng) -> Result<Batch<'_, T>> {
        if self.items.len() < size || size == 0 {
            return Err(Error::State(format!(
                "cannot sample {size} from a buffer holding {}",
                self.items.len()
            )));
        }
        let total = self.tree.total();
        let live = self.items.len();
        let mut batch = Batch {
            items: Vec::with_capacity(size),
            indices: Vec::with_capacity(size),
            weights: Vec::with_capacity(size),
            probabilities: Vec::with_capacity(size),
        };
        for _ in 0..size {
            let mass = rng.random::<f64>() * total;
            let slot = self.tree.find(mass).min(live - 1);
            let p = self.tree.get(slot) / total;
            batch.items.push(&self.items[slot]);
            batch.indices.push(SampleIndex {
                slot,
                generation: self.generations[slot],
            });
            batch.probabilities.push(p);
            batch
                .weights
                .push((self.config.capacity as f64 * p).powf(-self.beta));
        }
        let sum: f64 = batch.weights.iter().sum();
        batch.weights.iter_mut().for_each(|w| *w /= sum);
        Ok(batch)
    }

    /// Sets `p ← |δ| + ε` for every live index; stale ones are counted and
    /// skipped. Returns the number applied.
    pub fn update_priorities(&mut self, indices: &[SampleIndex], td_errors: &[f64]) -> Result<usize> {
        crate::error::check_len("priority updates", indices.len(), td_errors.len())?;
        let mut applied = 0;
        for (idx, delta) in indices.iter().zip(td_errors) {
            if !delta.is_finite() {
                return Err(Error::Numeric("non-finite TD error".into()));
            }
            if idx.slot >= self.items.len() || self.generations[idx.slot] != idx.generation {
                self.stale_updates += 1;
                continue;
            }
            let p = delta.abs() + self.config.epsilon;
            self.priorities[idx.slot] = p;
            self.tree.set(idx.slot, p.powf(self.config.alpha));
            self.max_priority = self.max_priority.max(p);
            applied += 1;
        }
        Ok(applied)
    }

    /// Advances `β` by one step, capped at 1.
    pub fn anneal_beta(&mut self) {
        self.beta = (self.beta + self.config.beta_step).min(1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buffer(capacity: usize, alpha: f64, beta: f64) -> ReplayBuffer<usize> {
        ReplayBuffer::new(ReplayConfig {
            capacity,
            alpha,
            beta,
            ..ReplayConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ring_eviction() {
        let mut b = buffer(3, 0.6, 0.4);
        b.insert(10, 1.0).unwrap();
        assert_eq!(b.len(), 1);
        for v in 11..14 {
            b.insert(v, 1.0).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0), Some(&13));
        assert!(!(0..3).any(|s| b.get(s) == Some(&10)));
    }

    #[test]
    fn nonpositive_priority_rejected() {
        let mut b = buffer(3, 0.6, 0.4);
        assert!(b.insert(0, 0.0).is_err());
        assert!(b.insert(0, -1.0).is_err());
        assert!(b.insert(0, f64::NAN).is_err());
    }

    #[test]
    fn beta_zero_gives_flat_weights() {
        let mut b = buffer(10, 0.6, 0.0);
        for i in 0..10 {
            b.insert(i, (i + 1) as f64).unwrap();
        }
        let batch = b.sample(5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(batch.weights.iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn underfilled_sample_is_state_error() {
        let mut b = buffer(10, 0.6, 0.4);
        b.insert(1, 1.0).unwrap();
        assert!(matches!(
            b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn update_floor_and_formula() {
        let mut b = buffer(4, 0.6, 0.4);
        let i0 = b.insert(0, 5.0).unwrap();
        let i1 = b.insert(1, 5.0).unwrap();
        b.update_priorities(&[i0, i1], &[0.0, 1.0]).unwrap();
        assert_eq!(b.priorities()[0], 1e-6);
        assert_eq!(b.priorities()[1], 1.000001);
        assert!(b.probability(0) > 0.0);
    }

    #[test]
    fn stale_update_is_counted() {
        let mut b = buffer(2, 0.6, 0.4);
        let first = b.insert(0, 1.0).unwrap();
        b.insert(1, 1.0).unwrap();
        b.insert(2, 1.0).unwrap();
        assert_eq!(b.update_priorities(&[first], &[3.0]).unwrap(), 0);
        assert_eq!(b.stale_updates(), 1);
        assert_eq!(b.priorities()[0], 1.0);
    }

    #[test]
    fn beta_anneals_to_one() {
        let mut b = buffer(2, 0.6, 0.4);
        for _ in 0..599 {
            b.anneal_beta();
        }
        assert!(b.beta() < 1.0);
        b.anneal_beta();
        b.anneal_beta();
        assert_eq!(b.beta(), 1.0);
    }

    #[test]
    fn same_seed_same_draws() {
        let mut b = buffer(50, 0.6, 0.4);
        for i in 0..50 {
            b.insert(i, 1.0 + i as f64 * 0.1).unwrap();
        }
        let a = b.sample(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().indices;
        let c = b.sample(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().indices;
        assert_eq!(a, c);
    }
}
