//! Slab-backed doubly linked lists shared by the trace caches.
//!
//! Heads hold the most recently inserted item, tails the oldest.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

pub(crate) const NIL: u32 = u32::MAX;

/// Mixes a `u64` key; integer keys need no cryptographic hashing.
#[derive(Default)]
pub(crate) struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(self.0 ^ u64::from(b));
        }
    }

    fn write_u64(&mut self, k: u64) {
        let mut x = k ^ (k >> 33);
        x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
        x ^= x >> 33;
        self.0 = x;
    }
}

pub(crate) type KeyMap<V> = HashMap<u64, V, BuildHasherDefault<KeyHasher>>;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub key: u64,
    pub prev: u32,
    pub next: u32,
    pub bit: bool,
    pub list: u8,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct List {
    pub head: u32,
    pub tail: u32,
    pub len: usize,
}

impl Default for List {
    fn default() -> Self {
        List {
            head: NIL,
            tail: NIL,
            len: 0,
        }
    }
}

/// Up to `L` lists over one node slab, plus the key index.
#[derive(Debug)]
pub(crate) struct Arena<const L: usize> {
    nodes: Vec<Node>,
    free: Vec<u32>,
    pub lists: [List; L],
    pub index: KeyMap<u32>,
}

impl<const L: usize> Arena<L> {
    pub fn with_capacity(capacity: usize) -> Self {
        let mut index = KeyMap::default();
        index.reserve(capacity + 1);
        Arena {
            nodes: Vec::with_capacity(capacity + 1),
            free: Vec::new(),
            lists: [List::default(); L],
            index,
        }
    }

    #[inline]
    pub fn node(&self, i: u32) -> &Node {
        &self.nodes[i as usize]
    }

    #[inline]
    pub fn node_mut(&mut self, i: u32) -> &mut Node {
        &mut self.nodes[i as usize]
    }

    #[inline]
    pub fn get(&self, key: u64) -> Option<u32> {
        self.index.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    /// New indexed node pushed at the head of list `l` with a clear bit.
    pub fn insert(&mut self, l: usize, key: u64) -> u32 {
        let node = Node {
            key,
            prev: NIL,
            next: NIL,
            bit: false,
            list: l as u8,
        };
        let i = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.index.insert(key, i);
        self.link_head(l, i);
        i
    }

    /// Unlink and unindex node `i`; returns its key.
    pub fn remove(&mut self, i: u32) -> u64 {
        self.unlink(i);
        let key = self.nodes[i as usize].key;
        self.index.remove(&key);
        self.free.push(i);
        key
    }

    pub fn link_head(&mut self, l: usize, i: u32) {
        let old = self.lists[l].head;
        {
            let n = &mut self.nodes[i as usize];
            n.prev = NIL;
            n.next = old;
            n.list = l as u8;
        }
        if old == NIL {
            self.lists[l].tail = i;
        } else {
            self.nodes[old as usize].prev = i;
        }
        self.lists[l].head = i;
        self.lists[l].len += 1;
    }

    pub fn unlink(&mut self, i: u32) {
        let (prev, next, l) = {
            let n = &self.nodes[i as usize];
            (n.prev, n.next, n.list as usize)
        };
        if prev == NIL {
            self.lists[l].head = next;
        } else {
            self.nodes[prev as usize].next = next;
        }
        if next == NIL {
            self.lists[l].tail = prev;
        } else {
            self.nodes[next as usize].prev = prev;
        }
        self.lists[l].len -= 1;
        let n = &mut self.nodes[i as usize];
        n.prev = NIL;
        n.next = NIL;
    }

    pub fn move_to_head(&mut self, l: usize, i: u32) {
        self.unlink(i);
        self.link_head(l, i);
    }

    #[inline]
    pub fn tail(&self, l: usize) -> Option<u32> {
        let t = self.lists[l].tail;
        (t != NIL).then_some(t)
    }

    #[inline]
    pub fn list_len(&self, l: usize) -> usize {
        self.lists[l].len
    }

    /// Keys of list `l` from head to tail.
    pub fn keys(&self, l: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.lists[l].len);
        let mut i = self.lists[l].head;
        while i != NIL {
            out.push(self.nodes[i as usize].key);
            i = self.nodes[i as usize].next;
        }
        out
    }
}
