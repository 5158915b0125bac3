use std::collections::VecDeque;

/// Streaming FIFO with a fixed depth and an occupancy highwater mark.
///
/// Producers must check [`BoundedFifo::has_space`] first; pushing into a
/// full FIFO is a simulator bug and panics.
#[derive(Debug, Clone)]
pub struct BoundedFifo<T> {
    items: VecDeque<T>,
    depth: usize,
    highwater: usize,
}

impl<T> BoundedFifo<T> {
    pub fn new(depth: usize) -> Self {
        assert!(depth >= 1, "FIFO depth must be at least 1");
        BoundedFifo { items: VecDeque::with_capacity(depth), depth, highwater: 0 }
    }

    pub fn has_space(&self) -> bool {
        self.items.len() < self.depth
    }

    pub fn push(&mut self, item: T) {
        assert!(self.has_space(), "FIFO overflow: depth {} exceeded", self.depth);
        self.items.push_back(item);
        self.highwater = self.highwater.max(self.items.len());
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn highwater(&self) -> usize {
        self.highwater
    }
}
