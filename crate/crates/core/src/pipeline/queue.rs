use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

/// Producer side of a bounded queue that evicts its oldest item instead of
/// blocking when full.
#[derive(Debug)]
pub struct DropOldest<T> {
    tx: Sender<T>,
    evict: Receiver<T>,
    dropped: Arc<AtomicU64>,
}

impl<T> Clone for DropOldest<T> {
    fn clone(&self) -> Self {
        Self {
            tx: self.tx.clone(),
            evict: self.evict.clone(),
            dropped: self.dropped.clone(),
        }
    }
}

/// The consumer sees disconnection once every producer is dropped.
pub fn drop_oldest<T>(capacity: usize) -> (DropOldest<T>, Receiver<T>) {
    let (tx, rx) = bounded(capacity.max(1));
    (
        DropOldest {
            tx,
            evict: rx.clone(),
            dropped: Arc::new(AtomicU64::new(0)),
        },
        rx,
    )
}

impl<T> DropOldest<T> {
    /// Enqueues `item`; returns how many queued items were evicted for it.
    pub fn push(&self, mut item: T) -> u64 {
        let mut evicted = 0;
        loop {
            match self.tx.try_send(item) {
                Ok(()) => break,
                Err(TrySendError::Full(back)) => {
                    if self.evict.try_recv().is_ok() {
                        evicted += 1;
                    }
                    item = back;
                }
                Err(TrySendError::Disconnected(_)) => break,
            }
        }
        if evicted > 0 {
            self.dropped.fetch_add(evicted, Ordering::Relaxed);
        }
        evicted
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.tx.capacity().expect("bounded")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest() {
        let (q, rx) = drop_oldest(3);
        for i in 0..10 {
            q.push(i);
            assert!(q.len() <= 3);
        }
        assert_eq!(q.dropped(), 7);
        assert_eq!(rx.try_iter().collect::<Vec<_>>(), vec![7, 8, 9]);
    }

    #[test]
    fn consumer_sees_disconnect() {
        let (q, rx) = drop_oldest::<u8>(2);
        q.push(1);
        drop(q);
        assert_eq!(rx.recv(), Ok(1));
        assert!(rx.recv().is_err());
    }
}
