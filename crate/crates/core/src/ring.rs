//! Equation classes of `a + b = c` in `Z_m`.
//!
//! A class is an unordered left pair `{a, b}` together with its right side
//! `c = a + b mod m`. There are exactly `m(m+1)/2` classes. The vertex set of
//! a class is `{a, b, c}` with duplicates removed; a set `S` is sum-free
//! exactly when it contains no class vertex set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum RingError {
    #[error("modulus must be at least 3, got {0}")]
    InvalidModulus(u64),
}

/// The ambient ring `Z_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingContext {
    m: u64,
}

impl RingContext {
    pub fn new(m: u64) -> Result<Self, RingError> {
        if m < 3 {
            return Err(RingError::InvalidModulus(m));
        }
        Ok(RingContext { m })
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    /// `n` with `m = 2n`, when the modulus is even.
    pub fn half(&self) -> Option<u64> {
        if self.m.is_multiple_of(2) {
            Some(self.m / 2)
        } else {
            None
        }
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.m && b < self.m);
        let s = a + b;
        if s >= self.m {
            s - self.m
        } else {
            s
        }
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.m && b < self.m);
        if a >= b {
            a - b
        } else {
            a + self.m - b
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = u64> {
        0..self.m
    }
}

/// Additive inverse of `v` in `Z_m`.
pub fn negate(v: u64, ctx: &RingContext) -> u64 {
    debug_assert!(v < ctx.m);
    if v == 0 {
        0
    } else {
        ctx.m - v
    }
}

/// Which side of `a + b = c` a vertex sits on. A vertex can hold both roles,
/// but only in classes whose left pair contains 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roles {
    pub left: bool,
    pub right: bool,
}

/// One equation class: unordered left pair `(a, b)` with `a <= b`, and
/// `c = a + b mod m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EquationClass {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

impl EquationClass {
    /// Distinct vertices `{a, b, c}`, sorted ascending. Length 1, 2 or 3.
    pub fn vertex_set(&self) -> Vec<u64> {
        let mut vs = vec![self.a, self.b, self.c];
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn contains(&self, v: u64) -> bool {
        self.a == v || self.b == v || self.c == v
    }

    pub fn roles_of(&self, v: u64) -> Roles {
        Roles {
            left: self.a == v || self.b == v,
            right: self.c == v,
        }
    }
}

/// The class of the (unordered) left pair `{a, b}`.
pub fn canonical_class(a: u64, b: u64, ctx: &RingContext) -> EquationClass {
    debug_assert!(a < ctx.m && b < ctx.m);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    EquationClass {
        a: lo,
        b: hi,
        c: ctx.add(lo, hi),
    }
}

/// All `m(m+1)/2` classes, ordered by `(a, b)`.
pub fn enumerate_classes(ctx: &RingContext) -> Vec<EquationClass> {
    let m = ctx.m;
    let mut out = Vec::with_capacity((m * (m + 1) / 2) as usize);
    for a in 0..m {
        for b in a..m {
            out.push(canonical_class(a, b, ctx));
        }
    }
    out
}

/// Classes whose vertex set contains `v`, each listed once with the role set
/// `v` holds in it. Order matches `enumerate_classes`.
pub fn classes_through(v: u64, ctx: &RingContext) -> Vec<(EquationClass, Roles)> {
    debug_assert!(v < ctx.m);
    let mut out = Vec::new();
    for_each_class_through(v, ctx, |cls| out.push((cls, cls.roles_of(v))));
    out.sort_by_key(|(cls, _)| (cls.a, cls.b));
    out
}

/// Visits every class containing `v` exactly once: the `m` classes with `v`
/// in the left pair, then the right-side classes `{a, v-a} -> v` that do not
/// also contain `v` on the left.
pub(crate) fn for_each_class_through<F: FnMut(EquationClass)>(v: u64, ctx: &RingContext, mut f: F) {
    let m = ctx.m;
    for b in 0..m {
        f(canonical_class(v, b, ctx));
    }
    for a in 0..m {
        let b = ctx.sub(v, a);
        if a > b {
            continue; // unordered pair seen already
        }
        if a == v || b == v {
            continue; // counted among the left classes above
        }
        f(EquationClass { a, b, c: v });
    }
}

/// `S` is sum-free iff no `a, b` in `S` (allowing `a = b`) have `a + b` in `S`.
pub fn is_sum_free(set: &[u64], ctx: &RingContext) -> bool {
    let mut member = vec![false; ctx.m as usize];
    for &v in set {
        debug_assert!(v < ctx.m);
        member[v as usize] = true;
    }
    for &a in set {
        for &b in set {
            if b > a {
                continue;
            }
            if member[ctx.add(a, b) as usize] {
                return false;
            }
        }
    }
    true
}
