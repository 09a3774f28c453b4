//! Fixed-capacity history of past multichannel STFT frames for one bin.

use crate::scalar::{czero, Real, C};

#[derive(Debug, Clone)]
pub struct FrameRing<T> {
    n_mics: usize,
    capacity: usize,
    data: Vec<C<T>>,
    head: usize,
    len: usize,
}

impl<T: Real> FrameRing<T> {
    pub fn new(n_mics: usize, capacity: usize) -> Self {
        Self { n_mics, capacity, data: vec![czero(); n_mics * capacity], head: 0, len: 0 }
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Frame `lag` steps back (`lag = 1` is the most recently pushed frame).
    pub fn lagged(&self, lag: usize) -> Option<&[C<T>]> {
        if lag == 0 || lag > self.len {
            return None;
        }
        let slot = (self.head + self.capacity - lag) % self.capacity;
        Some(&self.data[slot * self.n_mics..(slot + 1) * self.n_mics])
    }

    pub fn push(&mut self, frame: &[C<T>]) {
        debug_assert_eq!(frame.len(), self.n_mics);
        if self.capacity == 0 {
            return;
        }
        let m = self.n_mics;
        self.data[self.head * m..(self.head + 1) * m].copy_from_slice(frame);
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Writes frames at lags `first..=last` consecutively into `out`,
    /// zero-filling lags not yet available.
    pub fn stack_lags(&self, first: usize, last: usize, out: &mut [C<T>]) {
        let m = self.n_mics;
        debug_assert_eq!(out.len(), m * (last + 1).saturating_sub(first));
        for (i, lag) in (first..=last).enumerate() {
            let dst = &mut out[i * m..(i + 1) * m];
            match self.lagged(lag) {
                Some(src) => dst.copy_from_slice(src),
                None => dst.fill(czero()),
            }
        }
    }
}
