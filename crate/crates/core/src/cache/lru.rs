use std::collections::HashMap;

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    prev: usize,
    next: usize,
}

/// Recency order over `u64` ids: an intrusive doubly-linked list stored in a
/// slab, with a hash index for O(1) touch, insert and removal.
#[derive(Debug, Clone, Default)]
pub struct LruOrder {
    slots: Vec<Node>,
    free: Vec<usize>,
    index: HashMap<u64, usize>,
    // Most recently used.
    head: Option<usize>,
    // Least recently used.
    tail: Option<usize>,
}

impl LruOrder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    /// Inserts `id` as most recent, or moves it there if already tracked.
    pub fn push(&mut self, id: u64) {
        if let Some(&slot) = self.index.get(&id) {
            self.unlink(slot);
            self.link_front(slot);
            return;
        }
        let node = Node { id, prev: NIL, next: NIL };
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s] = node;
                s
            }
            None => {
                self.slots.push(node);
                self.slots.len() - 1
            }
        };
        self.index.insert(id, slot);
        self.link_front(slot);
    }

    /// Marks `id` as most recently used. Returns false if untracked.
    pub fn touch(&mut self, id: u64) -> bool {
        match self.index.get(&id) {
            Some(&slot) => {
                self.unlink(slot);
                self.link_front(slot);
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, id: u64) -> bool {
        match self.index.remove(&id) {
            Some(slot) => {
                self.unlink(slot);
                self.free.push(slot);
                true
            }
            None => false,
        }
    }

    pub fn peek_lru(&self) -> Option<u64> {
        self.tail.map(|s| self.slots[s].id)
    }

    pub fn pop_lru(&mut self) -> Option<u64> {
        let id = self.peek_lru()?;
        self.remove(id);
        Some(id)
    }

    /// Ids from most to least recently used.
    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        let mut cur = self.head.unwrap_or(NIL);
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let node = &self.slots[cur];
            cur = node.next;
            Some(node.id)
        })
    }

    fn unlink(&mut self, slot: usize) {
        let Node { prev, next, .. } = self.slots[slot];
        if prev == NIL {
            self.head = (next != NIL).then_some(next);
        } else {
            self.slots[prev].next = next;
        }
        if next == NIL {
            self.tail = (prev != NIL).then_some(prev);
        } else {
            self.slots[next].prev = prev;
        }
        self.slots[slot].prev = NIL;
        self.slots[slot].next = NIL;
    }

    fn link_front(&mut self, slot: usize) {
        let old_head = self.head.unwrap_or(NIL);
        self.slots[slot].prev = NIL;
        self.slots[slot].next = old_head;
        if old_head != NIL {
            self.slots[old_head].prev = slot;
        }
        self.head = Some(slot);
        if self.tail.is_none() {
            self.tail = Some(slot);
        }
    }
}
