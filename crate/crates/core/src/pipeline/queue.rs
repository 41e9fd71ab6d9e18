use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

/// Counter snapshot of a [`StageQueue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    pub capacity: usize,
    pub pushed: u64,
    pub popped: u64,
    pub dropped: u64,
    pub depth: usize,
    pub max_depth: usize,
}

impl QueueStats {
    /// `pushed == popped + dropped + depth`.
    pub fn is_balanced(&self) -> bool {
        self.pushed == self.popped + self.dropped + self.depth as u64
    }
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
    stats: QueueStats,
}

/// Bounded FIFO between two pipeline stages. A push into a full queue
/// discards the oldest item instead of blocking.
#[derive(Debug)]
pub struct StageQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

impl<T> StageQueue<T> {
    /// Capacity 0 is treated as 1.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        StageQueue {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity.min(1024)),
                closed: false,
                stats: QueueStats {
                    capacity,
                    ..QueueStats::default()
                },
            }),
            ready: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner<T>> {
        // a panicking stage poisons the lock; the counters are still usable
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Enqueues `item`, returning the evicted item if the queue was full.
    /// Pushing into a closed queue drops the item and counts it.
    pub fn push(&self, item: T) -> Option<T> {
        let mut g = self.lock();
        g.stats.pushed += 1;
        if g.closed {
            g.stats.dropped += 1;
            return Some(item);
        }
        let evicted = if g.items.len() >= g.stats.capacity {
            g.stats.dropped += 1;
            g.items.pop_front()
        } else {
            None
        };
        g.items.push_back(item);
        g.stats.depth = g.items.len();
        g.stats.max_depth = g.stats.max_depth.max(g.stats.depth);
        drop(g);
        self.ready.notify_one();
        evicted
    }

    /// Blocks until an item is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut g = self.lock();
        loop {
            if let Some(item) = g.items.pop_front() {
                g.stats.popped += 1;
                g.stats.depth = g.items.len();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.ready.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        let mut g = self.lock();
        let item = g.items.pop_front()?;
        g.stats.popped += 1;
        g.stats.depth = g.items.len();
        Some(item)
    }

    /// No more pushes will be accepted; blocked consumers drain and stop.
    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    /// Closes and discards whatever is queued, counting it as dropped.
    pub fn abandon(&self) {
        let mut g = self.lock();
        g.closed = true;
        let n = g.items.len() as u64;
        g.items.clear();
        g.stats.dropped += n;
        g.stats.depth = 0;
        drop(g);
        self.ready.notify_all();
    }

    pub fn stats(&self) -> QueueStats {
        self.lock().stats
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn drops_oldest_when_full() {
        let q = StageQueue::new(2);
        assert_eq!(q.push(1), None);
        assert_eq!(q.push(2), None);
        assert_eq!(q.push(3), Some(1));
        q.close();
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.pop(), Some(3));
        assert_eq!(q.pop(), None);
        let s = q.stats();
        assert_eq!((s.pushed, s.popped, s.dropped, s.max_depth), (3, 2, 1, 2));
        assert!(s.is_balanced());
    }

    #[test]
    fn consumer_wakes_on_close() {
        let q = Arc::new(StageQueue::<u32>::new(1));
        let c = {
            let q = Arc::clone(&q);
            thread::spawn(move || q.pop())
        };
        q.close();
        assert_eq!(c.join().unwrap(), None);
    }

    #[test]
    fn push_after_close_counts_as_drop() {
        let q = StageQueue::new(4);
        q.close();
        assert_eq!(q.push(7), Some(7));
        assert!(q.stats().is_balanced());
    }
}
