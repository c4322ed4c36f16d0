//! Reproducible randomness and the ordered open set.
//!
//! All randomized paths draw from xoshiro256** seeded through SplitMix64
//! expansion of a single `u64`, with bounded indices produced by modulo
//! rejection on raw 64-bit output. Both pieces are pinned so runs replay
//! bit-identically across platforms and crate versions.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Human-readable PRNG identifier echoed into JSON reports.
pub const ALGORITHM: &str = "xoshiro256** (splitmix64 seed expansion, rejection-sampled indices)";

#[derive(Debug, Clone)]
pub struct ProcessRng {
    inner: Xoshiro256StarStar,
}

impl ProcessRng {
    pub fn new(seed: u64) -> Self {
        ProcessRng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `0..bound` by rejection: raw draws above the largest
    /// multiple of `bound` are discarded, the rest reduced mod `bound`.
    pub fn uniform_index(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty sampling range");
        let residue = (u64::MAX % bound + 1) % bound; // 2^64 mod bound
        let cap = u64::MAX - residue;
        loop {
            let x = self.inner.next_u64();
            if x <= cap {
                return x % bound;
            }
        }
    }
}

/// The open elements, kept in ascending order behind a Fenwick tree so the
/// `k`-th open element can be selected in `O(log m)`. Selection by sorted
/// index is what lets the generic engine replay specialized runs exactly.
#[derive(Debug, Clone)]
pub struct OpenSet {
    tree: Vec<u32>,
    member: Vec<bool>,
    len: u64,
}

impl OpenSet {
    pub fn new(capacity: usize) -> Self {
        OpenSet {
            tree: vec![0; capacity + 1],
            member: vec![false; capacity],
            len: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, v: usize) -> bool {
        self.member[v]
    }

    fn bump(&mut self, v: usize, delta: i64) {
        let mut i = v + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta) as u32;
            i += i & i.wrapping_neg();
        }
    }

    pub fn insert(&mut self, v: usize) {
        if !self.member[v] {
            self.member[v] = true;
            self.len += 1;
            self.bump(v, 1);
        }
    }

    pub fn remove(&mut self, v: usize) {
        if self.member[v] {
            self.member[v] = false;
            self.len -= 1;
            self.bump(v, -1);
        }
    }

    /// `k`-th smallest member, `0 <= k < len`.
    pub fn select(&self, k: u64) -> usize {
        debug_assert!(k < self.len);
        let mut remaining = k + 1; // rank, 1-based
        let mut pos = 0usize;
        let mut step = (self.tree.len() - 1).next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && (self.tree[next] as u64) < remaining {
                remaining -= self.tree[next] as u64;
                pos = next;
            }
            step >>= 1;
        }
        debug_assert!(self.member[pos]);
        pos
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter_map(|(v, &open)| open.then_some(v))
    }
}
