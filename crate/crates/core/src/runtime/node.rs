//! One simulated node: its block store, inbound mailbox and counters.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::block::DenseBlock;
use crate::dag::{BlockKey, TaskId};
use crate::error::{Error, Result};
use crate::grid::NodeCoord;
use crate::metrics::MetricCounters;

/// A block in flight between two nodes. Owns a copy of the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: NodeCoord,
    pub dst: NodeCoord,
    pub key: BlockKey,
    pub payload: DenseBlock,
    pub sent_at_us: f64,
}

impl Message {
    pub fn bytes(&self) -> u64 {
        self.payload.bytes()
    }
}

#[derive(Debug)]
pub struct SimNode {
    coords: NodeCoord,
    store: HashMap<BlockKey, Arc<DenseBlock>>,
    // every key ever stored; keys are single-use
    seen: HashSet<BlockKey>,
    consumers: HashMap<BlockKey, usize>,
    expecting: HashMap<BlockKey, TaskId>,
    missing: HashMap<TaskId, usize>,
    pub(crate) mailbox: VecDeque<Message>,
    pub(crate) counters: MetricCounters,
}

impl SimNode {
    pub fn new(coords: NodeCoord) -> Self {
        Self {
            coords,
            store: HashMap::new(),
            seen: HashSet::new(),
            consumers: HashMap::new(),
            expecting: HashMap::new(),
            missing: HashMap::new(),
            mailbox: VecDeque::new(),
            counters: MetricCounters::default(),
        }
    }

    pub fn coords(&self) -> NodeCoord {
        self.coords
    }

    pub fn counters(&self) -> &MetricCounters {
        &self.counters
    }

    /// Registers one more local task that reads `key`.
    pub fn add_consumer(&mut self, key: BlockKey) {
        *self.consumers.entry(key).or_default() += 1;
    }

    pub fn consumers(&self, key: BlockKey) -> usize {
        self.consumers.get(&key).copied().unwrap_or(0)
    }

    pub fn block(&self, key: BlockKey) -> Option<&Arc<DenseBlock>> {
        self.store.get(&key)
    }

    pub fn live_blocks(&self) -> usize {
        self.store.len()
    }

    /// Posts `recv` as the destination of `keys`.
    pub fn expect(&mut self, recv: TaskId, keys: &[BlockKey]) -> Result<()> {
        for &key in keys {
            if self.seen.contains(&key) || self.expecting.insert(key, recv).is_some() {
                return Err(Error::Protocol(format!("{} already expects or holds {key:?}", self.coords)));
            }
        }
        self.missing.insert(recv, keys.len());
        Ok(())
    }

    /// The posted receive waiting for `key`, if any.
    pub fn expected_by(&self, key: BlockKey) -> Option<TaskId> {
        self.expecting.get(&key).copied()
    }

    /// Stores a block this node already owns, without a message.
    pub fn insert_local(&mut self, key: BlockKey, block: DenseBlock) -> Result<()> {
        self.insert(key, block)
    }

    fn insert(&mut self, key: BlockKey, block: DenseBlock) -> Result<()> {
        if !self.seen.insert(key) {
            return Err(Error::Protocol(format!("{key:?} delivered twice to {}", self.coords)));
        }
        self.counters.alloc(block.bytes());
        self.store.insert(key, Arc::new(block));
        Ok(())
    }

    /// Stores an inbound block. Returns the receive task once all of its
    /// blocks have arrived.
    pub fn deliver(&mut self, msg: Message) -> Result<Option<TaskId>> {
        if msg.dst != self.coords {
            return Err(Error::Protocol(format!(
                "message for {} delivered to {}",
                msg.dst, self.coords
            )));
        }
        if self.seen.contains(&msg.key) {
            return Err(Error::Protocol(format!("{:?} delivered twice to {}", msg.key, self.coords)));
        }
        let Some(recv) = self.expecting.remove(&msg.key) else {
            return Err(Error::Protocol(format!("{} got unexpected {:?}", self.coords, msg.key)));
        };
        self.counters.bytes_received += msg.bytes();
        self.counters.messages_received += 1;
        self.insert(msg.key, msg.payload)?;
        let left = self.missing.get_mut(&recv).expect("posted receive");
        *left -= 1;
        if *left == 0 {
            self.missing.remove(&recv);
            Ok(Some(recv))
        } else {
            Ok(None)
        }
    }

    /// One reader of `key` is done; the block is freed after the last.
    pub fn consume(&mut self, key: BlockKey) -> Result<()> {
        let n = self.consumers.get_mut(&key).filter(|n| **n > 0).ok_or_else(|| {
            Error::SchedulerBug(format!("{key:?} on {} consumed more often than registered", self.coords))
        })?;
        *n -= 1;
        if *n == 0 {
            self.release_block(key)?;
        }
        Ok(())
    }

    /// Frees a block nobody reads any more.
    pub fn release_block(&mut self, key: BlockKey) -> Result<()> {
        if self.consumers(key) > 0 {
            return Err(Error::SchedulerBug(format!(
                "{key:?} on {} released with {} readers left",
                self.coords,
                self.consumers(key)
            )));
        }
        let block = self
            .store
            .remove(&key)
            .ok_or_else(|| Error::SchedulerBug(format!("{key:?} not held by {}", self.coords)))?;
        self.consumers.remove(&key);
        self.counters.free(block.bytes());
        Ok(())
    }

    /// Frees `key` right away if no local task reads it.
    pub(crate) fn release_if_unread(&mut self, key: BlockKey) -> Result<()> {
        if self.consumers(key) == 0 && self.store.contains_key(&key) {
            self.release_block(key)?;
        }
        Ok(())
    }
}
