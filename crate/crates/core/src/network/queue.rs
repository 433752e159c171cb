use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::Packet;

pub const DEFAULT_QUEUE_CAPACITY: usize = 32;

/// Application priority level. Lower number is more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Priority {
    High = 1,
    Normal = 2,
    Low = 3,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::High, Priority::Normal, Priority::Low];

    fn index(self) -> usize {
        self as usize - 1
    }
}

impl TryFrom<u8> for Priority {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Priority::High),
            2 => Ok(Priority::Normal),
            3 => Ok(Priority::Low),
            other => Err(format!("priority must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Priority> for u8 {
    fn from(p: Priority) -> u8 {
        p as u8
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Three strict-priority FIFO queues with tail drop.
#[derive(Debug, Clone)]
pub struct PriorityQueues {
    queues: [VecDeque<Packet>; 3],
    capacity: usize,
}

impl PriorityQueues {
    pub fn new(capacity: usize) -> Self {
        PriorityQueues {
            queues: Default::default(),
            capacity,
        }
    }

    /// Enqueues at the tail; hands the packet back if that queue is full.
    pub fn push(&mut self, p: Packet, priority: Priority) -> Result<(), Packet> {
        let q = &mut self.queues[priority.index()];
        if q.len() >= self.capacity {
            return Err(p);
        }
        q.push_back(p);
        Ok(())
    }

    /// Head of the most urgent non-empty queue.
    pub fn pop(&mut self) -> Option<(Packet, Priority)> {
        Priority::ALL
            .into_iter()
            .find_map(|prio| self.queues[prio.index()].pop_front().map(|p| (p, prio)))
    }

    pub fn len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn len_of(&self, priority: Priority) -> usize {
        self.queues[priority.index()].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }
}

impl Default for PriorityQueues {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}
