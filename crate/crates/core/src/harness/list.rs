//! A doubly linked list shared by many threads, with the three list
//! operations serialized in independent domains.
//!
//! Each node's links sit behind their own mutex. An operation takes its
//! domain lock, then the node locks it needs in head-to-tail order: the
//! first one blocking, the rest with `try_lock`, releasing everything and
//! retrying on failure. No thread ever blocks while holding a node lock.

use std::hint::spin_loop;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use parking_lot::{Mutex, MutexGuard};

const NIL: u32 = u32::MAX;
const HEAD: u32 = 0;
const TAIL: u32 = 1;
const SENTINELS: u32 = 2;

#[derive(Debug)]
struct Links {
    prev: u32,
    next: u32,
    linked: bool,
}

/// Nodes are addressed by slot `0..capacity`.
#[derive(Debug)]
pub struct ConcurrentList {
    links: Vec<Mutex<Links>>,
    keys: Vec<AtomicU64>,
    bits: Vec<AtomicBool>,
    delink_domain: Mutex<()>,
    head_domain: Mutex<()>,
    tail_domain: Mutex<()>,
}

/// Items a CLOCK eviction may inspect; the last is evicted regardless.
const CLOCK_SCAN_LIMIT: usize = 4;

impl ConcurrentList {
    /// An empty list with `slots` unlinked nodes.
    pub fn new(slots: usize) -> Self {
        let total = slots + SENTINELS as usize;
        let links = (0..total)
            .map(|i| {
                let (prev, next, linked) = match i as u32 {
                    HEAD => (NIL, TAIL, true),
                    TAIL => (HEAD, NIL, true),
                    _ => (NIL, NIL, false),
                };
                Mutex::new(Links { prev, next, linked })
            })
            .collect();
        ConcurrentList {
            links,
            keys: (0..slots).map(|_| AtomicU64::new(0)).collect(),
            bits: (0..slots).map(|_| AtomicBool::new(false)).collect(),
            delink_domain: Mutex::new(()),
            head_domain: Mutex::new(()),
            tail_domain: Mutex::new(()),
        }
    }

    pub fn slots(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, slot: u32) -> u64 {
        self.keys[slot as usize].load(Ordering::Acquire)
    }

    pub fn set_key(&self, slot: u32, key: u64) {
        self.keys[slot as usize].store(key, Ordering::Release);
    }

    pub fn bit(&self, slot: u32) -> bool {
        self.bits[slot as usize].load(Ordering::Relaxed)
    }

    pub fn set_bit(&self, slot: u32, value: bool) {
        self.bits[slot as usize].store(value, Ordering::Relaxed);
    }

    fn lock(&self, node: u32) -> MutexGuard<'_, Links> {
        self.links[node as usize].lock()
    }

    fn try_lock(&self, node: u32) -> Option<MutexGuard<'_, Links>> {
        self.links[node as usize].try_lock()
    }

    /// Head update: link an unlinked slot at the head.
    pub fn push_head(&self, slot: u32) {
        let _d = self.head_domain.lock();
        self.link_after_head(slot + SENTINELS);
    }

    fn link_after_head(&self, i: u32) {
        loop {
            let mut head = self.lock(HEAD);
            let first = head.next;
            let Some(mut node) = self.try_lock(i) else {
                drop(head);
                spin_loop();
                continue;
            };
            debug_assert!(!node.linked, "pushing a linked node");
            let Some(mut f) = self.try_lock(first) else {
                drop(node);
                drop(head);
                spin_loop();
                continue;
            };
            node.prev = HEAD;
            node.next = first;
            node.linked = true;
            f.prev = i;
            head.next = i;
            return;
        }
    }

    /// Delink: remove `slot` from wherever it sits. Returns `false` if it
    /// was no longer linked (evicted or delinked by another thread).
    pub fn delink(&self, slot: u32) -> bool {
        let _d = self.delink_domain.lock();
        self.unlink(slot + SENTINELS)
    }

    fn unlink(&self, i: u32) -> bool {
        loop {
            let p = {
                let g = self.lock(i);
                if !g.linked {
                    return false;
                }
                g.prev
            };
            let mut gp = self.lock(p);
            if gp.next != i {
                drop(gp);
                spin_loop();
                continue;
            }
            let Some(mut gi) = self.try_lock(i) else {
                drop(gp);
                spin_loop();
                continue;
            };
            if !gi.linked {
                return false;
            }
            if gi.prev != p {
                continue;
            }
            let n = gi.next;
            let Some(mut gn) = self.try_lock(n) else {
                drop(gi);
                drop(gp);
                spin_loop();
                continue;
            };
            gp.next = n;
            gn.prev = p;
            gi.prev = NIL;
            gi.next = NIL;
            gi.linked = false;
            return true;
        }
    }

    /// Tail update: unlink and return the tail slot, `None` if empty.
    pub fn pop_tail(&self) -> Option<u32> {
        let _d = self.tail_domain.lock();
        loop {
            let last = self.lock(TAIL).prev;
            if last == HEAD {
                return None;
            }
            if self.unlink(last) {
                return Some(last - SENTINELS);
            }
        }
    }

    /// CLOCK tail update: inspect the tail and up to two predecessors,
    /// evicting the first with a clear bit and clearing the bits passed; if
    /// all are set, evict the fourth from the tail. Returns the slot and the
    /// number of bits inspected.
    pub fn clock_evict(&self) -> Option<(u32, usize)> {
        let _d = self.tail_domain.lock();
        'retry: loop {
            let mut cand = self.lock(TAIL).prev;
            if cand == HEAD {
                return None;
            }
            let mut inspected = 0;
            let victim = loop {
                inspected += 1;
                let prev = self.lock(cand).prev;
                if prev == NIL {
                    // moved while we looked; start over
                    continue 'retry;
                }
                let slot = cand - SENTINELS;
                if !self.bit(slot) || inspected == CLOCK_SCAN_LIMIT || prev == HEAD {
                    break cand;
                }
                self.set_bit(slot, false);
                cand = prev;
            };
            if self.unlink(victim) {
                return Some((victim - SENTINELS, inspected));
            }
        }
    }

    /// Slots from head to tail. Only meaningful while no thread mutates the
    /// list.
    pub fn snapshot(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut i = self.lock(HEAD).next;
        while i != TAIL && i != NIL && out.len() <= self.slots() {
            out.push(i - SENTINELS);
            i = self.lock(i).next;
        }
        out
    }

    /// Whether `slot` is currently linked.
    pub fn is_linked(&self, slot: u32) -> bool {
        self.lock(slot + SENTINELS).linked
    }

    /// Checks prev/next symmetry over the whole list; quiescent use only.
    pub fn links_consistent(&self) -> bool {
        let mut prev = HEAD;
        let mut i = self.lock(HEAD).next;
        let mut steps = 0;
        while i != TAIL {
            if i == NIL || steps > self.slots() {
                return false;
            }
            let g = self.lock(i);
            if g.prev != prev || !g.linked {
                return false;
            }
            prev = i;
            i = g.next;
            steps += 1;
        }
        self.lock(TAIL).prev == prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn sequential_ops() {
        let l = ConcurrentList::new(4);
        for s in 0..4 {
            l.push_head(s);
        }
        assert_eq!(l.snapshot(), vec![3, 2, 1, 0]);
        assert!(l.delink(2));
        assert!(!l.delink(2));
        assert_eq!(l.pop_tail(), Some(0));
        l.push_head(2);
        assert_eq!(l.snapshot(), vec![2, 3, 1]);
        assert!(l.links_consistent());
    }

    #[test]
    fn clock_rule() {
        let l = ConcurrentList::new(5);
        for s in 0..5 {
            l.push_head(s);
        }
        // tail order 0,1,2,3; set bits on 0,1,2
        for s in 0..3 {
            l.set_bit(s, true);
        }
        assert_eq!(l.clock_evict(), Some((3, 4)));
        assert!((0..3).all(|s| !l.bit(s)));
        assert_eq!(l.clock_evict(), Some((0, 1)));
    }

    #[test]
    fn empty_list() {
        let l = ConcurrentList::new(1);
        assert_eq!(l.pop_tail(), None);
        assert_eq!(l.clock_evict(), None);
    }

    #[test]
    fn concurrent_mixed_ops_keep_list_consistent() {
        let n = 64u32;
        let l = Arc::new(ConcurrentList::new(n as usize));
        for s in 0..n {
            l.push_head(s);
        }
        let handles: Vec<_> = (0..4u32)
            .map(|t| {
                let l = Arc::clone(&l);
                thread::spawn(move || {
                    for r in 0..5_000u32 {
                        let s = (r * 7 + t * 13) % n;
                        match (r + t) % 3 {
                            0 => {
                                if l.delink(s) {
                                    l.push_head(s);
                                }
                            }
                            1 => {
                                if let Some(v) = l.pop_tail() {
                                    l.push_head(v);
                                }
                            }
                            _ => {
                                if let Some((v, _)) = l.clock_evict() {
                                    l.push_head(v);
                                }
                            }
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let snap = l.snapshot();
        assert_eq!(snap.len(), n as usize);
        let mut sorted = snap.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), n as usize);
        assert!(l.links_consistent());
    }
}
