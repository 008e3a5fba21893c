use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::mdp::MdpState;

/// `(s, a, r, s')`; `next = None` marks a terminal transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: MdpState,
    pub action: usize,
    pub reward: f64,
    pub next: Option<MdpState>,
}

/// Fixed-capacity FIFO experience store.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Up to `n` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}
