use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

pub const FRAME_QUEUE_CAPACITY: usize = 4;

/// What a full queue does with a new item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    /// Wait for room. File replay uses this so every frame is processed.
    Block,
    /// Discard the oldest queued item and count it.
    DropOldest,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

/// Bounded hand-off between the frame reader and the vision loop.
#[derive(Debug)]
pub struct FrameQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
    room: Condvar,
    capacity: usize,
    overflow: Overflow,
}

impl<T> FrameQueue<T> {
    pub fn new(capacity: usize, overflow: Overflow) -> Self {
        assert!(capacity > 0);
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            room: Condvar::new(),
            capacity,
            overflow,
        }
    }

    /// Returns false once the queue is closed.
    pub fn push(&self, item: T) -> bool {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if g.closed {
                return false;
            }
            if g.items.len() < self.capacity {
                break;
            }
            match self.overflow {
                Overflow::Block => g = self.room.wait(g).unwrap_or_else(|e| e.into_inner()),
                Overflow::DropOldest => {
                    g.items.pop_front();
                    g.dropped += 1;
                }
            }
        }
        g.items.push_back(item);
        self.ready.notify_one();
        true
    }

    /// Blocks until an item arrives; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(item) = g.items.pop_front() {
                self.room.notify_one();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.ready.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn close(&self) {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        g.closed = true;
        self.ready.notify_all();
        self.room.notify_all();
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).dropped
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn drop_oldest_keeps_newest() {
        let q = FrameQueue::new(4, Overflow::DropOldest);
        for i in 0..10 {
            assert!(q.push(i));
        }
        assert_eq!(q.dropped(), 6);
        q.close();
        let got: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(got, vec![6, 7, 8, 9]);
        assert!(!q.push(11));
    }

    #[test]
    fn blocking_queue_delivers_everything_in_order() {
        let q = Arc::new(FrameQueue::new(4, Overflow::Block));
        let producer = {
            let q = q.clone();
            std::thread::spawn(move || {
                for i in 0..1000 {
                    q.push(i);
                }
                q.close();
            })
        };
        let got: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        producer.join().unwrap();
        assert_eq!(got, (0..1000).collect::<Vec<_>>());
        assert_eq!(q.dropped(), 0);
    }
}
