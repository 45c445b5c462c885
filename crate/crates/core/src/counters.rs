//! Per-thread multiply-add counters.
//!
//! Hot loops report the number of multiply-adds they perform so the cost
//! model of each attention mechanism can be asserted exactly. Counters are
//! thread-local, so concurrent tests do not interfere with each other.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counter {
    /// Dense matrix products (linear layers, projections).
    Dense = 0,
    /// Axial kernel construction `w * Q~ K~^T`.
    KernelBuild = 1,
    /// Mode products of the factorized contraction chain.
    ModeProduct = 2,
    /// The `K~^T V` and `Q~ (K~^T V)` products of linear attention.
    LinearCore = 3,
    /// Evaluation of the full `N x N` kernel.
    FullKernel = 4,
}

const N_COUNTERS: usize = 5;

thread_local! {
    static COUNTS: [Cell<u64>; N_COUNTERS] = const { [const { Cell::new(0) }; N_COUNTERS] };
}

#[inline]
pub fn add(counter: Counter, n: u64) {
    COUNTS.with(|c| {
        let cell = &c[counter as usize];
        cell.set(cell.get().wrapping_add(n));
    });
}

pub fn read(counter: Counter) -> u64 {
    COUNTS.with(|c| c[counter as usize].get())
}

pub fn reset() {
    COUNTS.with(|c| c.iter().for_each(|cell| cell.set(0)));
}

/// Snapshot of all counters on the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts([u64; N_COUNTERS]);

impl Counts {
    pub fn now() -> Self {
        Counts(COUNTS.with(|c| std::array::from_fn(|i| c[i].get())))
    }

    pub fn get(&self, counter: Counter) -> u64 {
        self.0[counter as usize]
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &Counts) -> Counts {
        Counts(std::array::from_fn(|i| self.0[i].wrapping_sub(earlier.0[i])))
    }
}
