use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::model::SeverityTag;

/// Priority of a waiting call: urgency class, then triage tag (both most
/// severe first), then arrival time, then call id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueKey {
    pub tag: SeverityTag,
    pub arrival: f64,
    pub call_id: u64,
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .tag
            .urgency()
            .rank()
            .cmp(&self.tag.urgency().rank())
            .then_with(|| other.tag.cmp(&self.tag))
            .then_with(|| self.arrival.total_cmp(&other.arrival))
            .then_with(|| self.call_id.cmp(&other.call_id))
    }
}

impl QueueKey {
    /// Strictly higher priority, ignoring arrival order.
    pub fn outranks(&self, other: &QueueKey) -> bool {
        (self.tag.urgency().rank(), self.tag) > (other.tag.urgency().rank(), other.tag)
    }
}

/// Calls waiting for an ambulance, iterated in priority order.
#[derive(Debug, Default, Clone)]
pub struct DispatchQueue {
    set: BTreeSet<QueueKey>,
}

impl DispatchQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: QueueKey) -> bool {
        self.set.insert(key)
    }

    pub fn remove(&mut self, key: &QueueKey) -> bool {
        self.set.remove(key)
    }

    pub fn contains(&self, key: &QueueKey) -> bool {
        self.set.contains(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueKey> {
        self.set.iter()
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}
