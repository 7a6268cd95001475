//! Discrete-event machinery: the time-ordered event queue, entity
//! addresses and link kinds, and delay policies.
//!
//! The simulator core is strictly single-threaded: one event loop, entities
//! invoked sequentially. Two runs from the same seed produce identical
//! traces; all iteration is over ordered containers and all randomness goes
//! through one seeded generator.

pub mod net;
pub mod trace;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ActorId, SimTime, ValidatorId};

/// Where an event lands: a per-validator entity or an external client.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Address {
    Entity { validator: ValidatorId, actor: ActorId },
    Client { user: String },
}

impl Address {
    pub fn entity(validator: ValidatorId, actor: ActorId) -> Self {
        Address::Entity { validator, actor }
    }

    pub fn validator(&self) -> Option<ValidatorId> {
        match self {
            Address::Entity { validator, .. } => Some(*validator),
            Address::Client { .. } => None,
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Entity { validator, actor } => {
                let tag = if actor.is_user() { "A" } else { "X" };
                write!(f, "v{validator}.{tag}:{actor}")
            }
            Address::Client { user } => write!(f, "client:{user}"),
        }
    }
}

/// Message channel classes. Outer links cross validators and cost one
/// communication step; inner links stay within a validator at zero latency;
/// local is self-delivery of a broadcast, also free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Outer,
    Inner,
    Local,
}

impl LinkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkKind::Outer => "outer",
            LinkKind::Inner => "inner",
            LinkKind::Local => "local",
        }
    }
}

/// Key of a scheduled event: fire time plus an enqueue tie-breaker, so
/// processing order is total and deterministic.
pub type EventKey = (SimTime, u64);

#[derive(Debug, Clone)]
pub struct EventQueue<T> {
    map: BTreeMap<EventKey, T>,
    next_seq: u64,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue { map: BTreeMap::new(), next_seq: 0 }
    }

    pub fn push(&mut self, time: SimTime, item: T) -> EventKey {
        let key = (time, self.next_seq);
        self.next_seq += 1;
        self.map.insert(key, item);
        key
    }

    pub fn pop_first(&mut self) -> Option<(EventKey, T)> {
        let key = *self.map.keys().next()?;
        let item = self.map.remove(&key)?;
        Some((key, item))
    }

    pub fn remove(&mut self, key: &EventKey) -> Option<T> {
        self.map.remove(key)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &EventKey> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventKey, &T)> {
        self.map.iter()
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        q.push(5, "b");
        q.push(3, "a");
        q.push(5, "c");
        let order: Vec<&str> = std::iter::from_fn(|| q.pop_first().map(|(_, v)| v)).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn same_time_preserves_enqueue_order() {
        let mut q = EventQueue::new();
        q.push(1, 1);
        q.push(1, 2);
        q.push(1, 3);
        let order: Vec<i32> = std::iter::from_fn(|| q.pop_first().map(|(_, v)| v)).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }
}
