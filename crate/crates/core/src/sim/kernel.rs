//! Event queue and simulated time source shared by the deployment runners.

use crate::sim::NANOS_PER_TICK;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub(crate) struct Kernel<E> {
    queue: BTreeMap<(u64, u64), E>,
    vnow: u64,
    enqueue_seq: u64,
    /// Executed-event counter; the source of recorded instants and HLC
    /// physical components. Starts at 1 so the initial transaction owns 0.
    instant: u64,
    pub rng: ChaCha8Rng,
}

impl<E> Kernel<E> {
    pub fn new(seed: u64) -> Kernel<E> {
        Kernel {
            queue: BTreeMap::new(),
            vnow: 0,
            enqueue_seq: 0,
            instant: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Schedule `ev` after `delay` virtual ticks. Ties break by enqueue
    /// order.
    pub fn at(&mut self, delay: u64, ev: E) {
        self.enqueue_seq += 1;
        self.queue.insert((self.vnow + delay, self.enqueue_seq), ev);
    }

    /// Schedule no earlier than `floor` (per-channel FIFO enforcement);
    /// returns the delivery time.
    pub fn at_least(&mut self, delay: u64, floor: u64, ev: E) -> u64 {
        let t = (self.vnow + delay).max(floor);
        self.enqueue_seq += 1;
        self.queue.insert((t, self.enqueue_seq), ev);
        t
    }

    pub fn pop(&mut self) -> Option<E> {
        let (&key, _) = self.queue.iter().next()?;
        let ev = self.queue.remove(&key).unwrap();
        self.vnow = key.0;
        self.instant += 1;
        Some(ev)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// The current executed-event instant (unique per event).
    pub fn instant(&self) -> u64 {
        self.instant
    }

    pub fn nanos(&self) -> i64 {
        self.instant as i64 * NANOS_PER_TICK
    }

    pub fn think_delay(&mut self, max: u64) -> u64 {
        self.rng.gen_range(0..=max)
    }

    pub fn service_delay(&mut self, max: u64) -> u64 {
        self.rng.gen_range(1..=max.max(1))
    }
}
