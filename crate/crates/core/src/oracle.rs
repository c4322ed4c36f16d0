//! Brute-force ground truth for the process.
//!
//! Everything here is recomputed from first principles: statuses are derived
//! from the chosen set alone (an element is closed exactly when adding it
//! would break sum-freeness), counters are rebuilt by scanning equation
//! classes, and tiny moduli get exact rational expectations by exhausting the
//! uniform-choice tree. Deliberately re-implemented rather than shared with
//! the engine so the two can check each other.

use crate::engine::{BandExtremes, Ledger, RunRecord, TrajectorySnapshot};
use crate::ring::{self, RingContext};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("set is not sum-free")]
    NotSumFree,
    #[error("decision tree exceeds node budget {budget}")]
    BudgetExceeded { budget: u64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(&'static str),
}

const OPEN: u8 = 0;
const CHOSEN: u8 = 1;
const CLOSED: u8 = 2;

pub fn is_sum_free(s: &[u64], ctx: &RingContext) -> bool {
    ring::is_sum_free(s, ctx)
}

/// Sum-free and no further element of `Z_m \ {0}` can be added.
pub fn maximality(s: &[u64], ctx: &RingContext) -> bool {
    if !ring::is_sum_free(s, ctx) {
        return false;
    }
    let mut set = s.to_vec();
    set.sort_unstable();
    set.dedup();
    for v in 1..ctx.modulus() {
        if set.binary_search(&v).is_ok() {
            continue;
        }
        let mut trial = set.clone();
        trial.push(v);
        if ring::is_sum_free(&trial, ctx) {
            return false;
        }
    }
    true
}

/// Statuses implied by a chosen set: 0 and everything that would break
/// sum-freeness are closed, the rest is open.
fn statuses_from_set(s: &[u64], ctx: &RingContext) -> Result<Vec<u8>, OracleError> {
    let m = ctx.modulus();
    for &v in s {
        if v >= m {
            return Err(OracleError::PreconditionViolated("element out of range"));
        }
        if v == 0 {
            return Err(OracleError::PreconditionViolated("0 is never eligible"));
        }
    }
    let mut set = s.to_vec();
    set.sort_unstable();
    set.dedup();
    if !ring::is_sum_free(&set, ctx) {
        return Err(OracleError::NotSumFree);
    }
    let mut kinds = vec![OPEN; m as usize];
    kinds[0] = CLOSED;
    for &v in &set {
        kinds[v as usize] = CHOSEN;
    }
    let mut trial = set.clone();
    for q in 1..m {
        if kinds[q as usize] != OPEN {
            continue;
        }
        trial.push(q);
        if !ring::is_sum_free(&trial, ctx) {
            kinds[q as usize] = CLOSED;
        }
        trial.pop();
    }
    Ok(kinds)
}

fn ledger_from_statuses(kinds: &[u8], ctx: &RingContext) -> Ledger {
    let m = ctx.modulus();
    let mut led = Ledger {
        e2: 0,
        e3: 0,
        d3l: vec![0; m as usize],
        d3r: vec![0; m as usize],
        d2l: vec![0; m as usize],
        d2r: vec![0; m as usize],
        d1l: vec![0; m as usize],
        d1r: vec![0; m as usize],
    };
    for cls in ring::enumerate_classes(ctx) {
        let vs = cls.vertex_set();
        if vs == [0] {
            continue;
        }
        let mut any_closed = false;
        let mut open_cnt = 0;
        for &u in &vs {
            match kinds[u as usize] {
                CLOSED => any_closed = true,
                OPEN => open_cnt += 1,
                _ => {}
            }
        }
        if !any_closed {
            if open_cnt == 2 {
                led.e2 += 1;
            } else if open_cnt == 3 {
                led.e3 += 1;
            }
        }
    }
    for v in 0..m {
        if kinds[v as usize] == CHOSEN {
            continue;
        }
        for (cls, roles) in ring::classes_through(v, ctx) {
            let vs = cls.vertex_set();
            if vs == [0] {
                continue;
            }
            let mut others_closed = false;
            let mut others_open = 0usize;
            for &u in &vs {
                if u == v {
                    continue;
                }
                match kinds[u as usize] {
                    CLOSED => others_closed = true,
                    OPEN => others_open += 1,
                    _ => {}
                }
            }
            if others_closed {
                continue;
            }
            let k = 1 + others_open;
            let (dl, dr) = match k {
                1 => (&mut led.d1l, &mut led.d1r),
                2 => (&mut led.d2l, &mut led.d2r),
                _ => (&mut led.d3l, &mut led.d3r),
            };
            if roles.left {
                dl[v as usize] += 1;
            }
            if roles.right {
                dr[v as usize] += 1;
            }
        }
    }
    led
}

/// Rebuild the full ledger implied by chosen set `s`. Chosen vertices get
/// zero rows here; the engine freezes theirs at choice time instead, so
/// comparisons must go through [`ledger_discrepancy`].
pub fn recompute_ledger(s: &[u64], ctx: &RingContext) -> Result<Ledger, OracleError> {
    Ok(ledger_from_statuses(&statuses_from_set(s, ctx)?, ctx))
}

/// First difference between an engine ledger and a from-scratch truth,
/// skipping the per-vertex rows of chosen elements: their engine values are
/// frozen at choice time and depend on the choice order, which a set-based
/// recomputation cannot see.
pub fn ledger_discrepancy(engine: &Ledger, truth: &Ledger, chosen: &[u64]) -> Option<String> {
    if engine.e2 != truth.e2 {
        return Some(format!("e2: engine {} vs recompute {}", engine.e2, truth.e2));
    }
    if engine.e3 != truth.e3 {
        return Some(format!("e3: engine {} vs recompute {}", engine.e3, truth.e3));
    }
    let rows: [(&str, &[i64], &[i64]); 6] = [
        ("d3l", &engine.d3l, &truth.d3l),
        ("d3r", &engine.d3r, &truth.d3r),
        ("d2l", &engine.d2l, &truth.d2l),
        ("d2r", &engine.d2r, &truth.d2r),
        ("d1l", &engine.d1l, &truth.d1l),
        ("d1r", &engine.d1r, &truth.d1r),
    ];
    for (name, a, b) in rows {
        for v in 0..a.len() {
            if chosen.contains(&(v as u64)) {
                continue;
            }
            if a[v] != b[v] {
                return Some(format!(
                    "{name}[{v}]: engine {} vs recompute {}",
                    a[v], b[v]
                ));
            }
        }
    }
    None
}

fn snapshot_from_statuses(kinds: &[u8], ctx: &RingContext, step: u64) -> TrajectorySnapshot {
    let m = ctx.modulus();
    let led = ledger_from_statuses(kinds, ctx);
    let q = kinds.iter().filter(|&&k| k == OPEN).count() as u64;
    let mut pairs = 0u64;
    for v in 1..m {
        if kinds[v as usize] != CHOSEN {
            continue;
        }
        let neg = ring::negate(v, ctx);
        if neg != v && kinds[neg as usize] == CHOSEN && v < neg {
            pairs += 1;
        }
    }
    let mut max_d1 = 0i64;
    let mut ext = BandExtremes::default();
    let upd = |slot: &mut Option<(i64, i64)>, x: i64| {
        *slot = Some(match *slot {
            None => (x, x),
            Some((lo, hi)) => (lo.min(x), hi.max(x)),
        });
    };
    for v in 1..m as usize {
        if kinds[v] == CHOSEN {
            continue;
        }
        max_d1 = max_d1.max(led.d1l[v]).max(led.d1r[v]);
        upd(&mut ext.d3r, led.d3r[v]);
        let neg = ring::negate(v as u64, ctx) as usize;
        if kinds[neg] != CHOSEN {
            upd(&mut ext.d3l, led.d3l[v]);
            upd(&mut ext.d2l, led.d2l[v]);
            upd(&mut ext.d2r, led.d2r[v]);
        }
    }
    TrajectorySnapshot {
        step,
        t: step as f64 / (m as f64 / 2.0).sqrt(),
        q,
        e2: Some(led.e2),
        e3: Some(led.e3),
        d2r0: Some(led.d2r[0]),
        d3r0: Some(led.d3r[0]),
        d1r0: led.d1r[0] as u64,
        pairs_distinct: pairs,
        max_d1_nonzero: Some(max_d1),
        extremes: Some(ext),
        vertex_sample: Vec::new(),
    }
}

/// Full snapshot implied by chosen set `s`, with `step = |s|`.
pub fn recompute_snapshot(s: &[u64], ctx: &RingContext) -> Result<TrajectorySnapshot, OracleError> {
    let kinds = statuses_from_set(s, ctx)?;
    let mut set = s.to_vec();
    set.sort_unstable();
    set.dedup();
    Ok(snapshot_from_statuses(&kinds, ctx, set.len() as u64))
}

/// The set of open elements a choice of `v` would close, from the sum-free
/// definition rather than equation classes.
pub fn d2_set(s: &[u64], v: u64, ctx: &RingContext) -> Result<Vec<u64>, OracleError> {
    let kinds = statuses_from_set(s, ctx)?;
    if v >= ctx.modulus() || kinds[v as usize] != OPEN {
        return Err(OracleError::PreconditionViolated("vertex is not open"));
    }
    let mut with_v = s.to_vec();
    with_v.push(v);
    with_v.sort_unstable();
    with_v.dedup();
    let mut out = Vec::new();
    let mut trial = with_v.clone();
    for q in 1..ctx.modulus() {
        if q == v || kinds[q as usize] != OPEN {
            continue;
        }
        trial.push(q);
        if !ring::is_sum_free(&trial, ctx) {
            out.push(q);
        }
        trial.pop();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OverlapAudit {
    pub v: u64,
    pub d2_size: i64,
    pub d2l: i64,
    pub d2r: i64,
    /// `d2l + d2r - d2_size`: multiple coverage of closure candidates.
    pub overlap: i64,
    pub d1r_2v: i64,
    pub d1r_0: i64,
}

/// Decomposition audit of `|D_2(v)| = D2L[v] + D2R[v] - overlap` for an open
/// `v` with `-v` not chosen.
pub fn decomposition_audit(s: &[u64], v: u64, ctx: &RingContext) -> Result<OverlapAudit, OracleError> {
    let kinds = statuses_from_set(s, ctx)?;
    if v >= ctx.modulus() || kinds[v as usize] != OPEN {
        return Err(OracleError::PreconditionViolated("vertex is not open"));
    }
    if kinds[ring::negate(v, ctx) as usize] == CHOSEN {
        return Err(OracleError::PreconditionViolated("-v is chosen"));
    }
    let led = ledger_from_statuses(&kinds, ctx);
    let d2_size = d2_set(s, v, ctx)?.len() as i64;
    let (d2l, d2r) = (led.d2l[v as usize], led.d2r[v as usize]);
    Ok(OverlapAudit {
        v,
        d2_size,
        d2l,
        d2r,
        overlap: d2l + d2r - d2_size,
        d1r_2v: led.d1r[ctx.add(v, v) as usize],
        d1r_0: led.d1r[0],
    })
}

pub fn d2_intersection_size(
    s: &[u64],
    v1: u64,
    v2: u64,
    ctx: &RingContext,
) -> Result<u64, OracleError> {
    if v1 == v2 || v1 == ring::negate(v2, ctx) || v1 == 0 || v2 == 0 {
        return Err(OracleError::PreconditionViolated("need v1 != ±v2, both nonzero"));
    }
    let a = d2_set(s, v1, ctx)?;
    let b = d2_set(s, v2, ctx)?;
    Ok(a.iter().filter(|q| b.binary_search(q).is_ok()).count() as u64)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Discrepancy {
    pub step: u64,
    pub what: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerifyReport {
    pub checked_steps: u64,
    pub checked_snapshots: u64,
    pub first_discrepancy: Option<Discrepancy>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.first_discrepancy.is_none()
    }
}

/// Replay a recorded run from scratch and audit it: chosen elements must be
/// open, each step must close exactly the set forced by sum-freeness, every
/// recorded snapshot must match a from-scratch recomputation, and the
/// recomputed ledger must satisfy the degree/edge count identities.
pub fn verify_run(run: &RunRecord) -> VerifyReport {
    let mut report = VerifyReport {
        checked_steps: 0,
        checked_snapshots: 0,
        first_discrepancy: None,
    };
    let fail = |report: &mut VerifyReport, step: u64, what: String| {
        if report.first_discrepancy.is_none() {
            report.first_discrepancy = Some(Discrepancy { step, what });
        }
    };
    let ctx = match RingContext::new(run.m) {
        Ok(c) => c,
        Err(_) => {
            fail(&mut report, 0, "invalid modulus".into());
            return report;
        }
    };
    if run.closed_per_step.len() != run.chosen_sequence.len() {
        fail(&mut report, 0, "closure record length mismatch".into());
        return report;
    }

    let mut chosen: Vec<u64> = Vec::new();
    let mut snaps = run.snapshots.iter().peekable();
    for step in 0..=run.chosen_sequence.len() as u64 {
        // audit snapshots recorded at this step
        while let Some(snap) = snaps.peek() {
            if snap.step != step {
                break;
            }
            let snap = snaps.next().unwrap();
            report.checked_snapshots += 1;
            match recompute_snapshot(&chosen, &ctx) {
                Err(e) => {
                    fail(&mut report, step, format!("recompute failed: {e}"));
                    return report;
                }
                Ok(truth) => {
                    let mut diff = |name: &str, bad: bool| {
                        if bad {
                            fail(&mut report, step, format!("snapshot field {name} mismatch"));
                        }
                    };
                    diff("q", snap.q != truth.q);
                    diff("d1r0", snap.d1r0 != truth.d1r0);
                    diff("pairs_distinct", snap.pairs_distinct != truth.pairs_distinct);
                    diff("t", snap.t != truth.t);
                    if snap.e2.is_some() {
                        diff("e2", snap.e2 != truth.e2);
                    }
                    if snap.e3.is_some() {
                        diff("e3", snap.e3 != truth.e3);
                    }
                    if snap.d2r0.is_some() {
                        diff("d2r0", snap.d2r0 != truth.d2r0);
                    }
                    if snap.d3r0.is_some() {
                        diff("d3r0", snap.d3r0 != truth.d3r0);
                    }
                    if snap.max_d1_nonzero.is_some() {
                        diff("max_d1_nonzero", snap.max_d1_nonzero != truth.max_d1_nonzero);
                    }
                    if snap.extremes.is_some() {
                        diff("extremes", snap.extremes != truth.extremes);
                    }
                }
            }
            // count identities on the recomputed ledger
            if let Ok(led) = recompute_ledger(&chosen, &ctx) {
                let kinds = statuses_from_set(&chosen, &ctx).unwrap();
                let (mut s3, mut s2) = (0i64, 0i64);
                for (v, &kind) in kinds.iter().enumerate() {
                    if kind == OPEN {
                        s3 += led.d3l[v] + led.d3r[v];
                        s2 += led.d2l[v] + led.d2r[v];
                    }
                }
                if s3 != 3 * led.e3 {
                    fail(&mut report, step, "degree identity sum(D3) = 3 E3 fails".into());
                }
                if s2 != 2 * led.e2 {
                    fail(&mut report, step, "degree identity sum(D2) = 2 E2 fails".into());
                }
            }
        }
        if step == run.chosen_sequence.len() as u64 {
            break;
        }

        // replay one step
        let s = run.chosen_sequence[step as usize];
        let kinds = match statuses_from_set(&chosen, &ctx) {
            Ok(k) => k,
            Err(e) => {
                fail(&mut report, step, format!("state rebuild failed: {e}"));
                return report;
            }
        };
        if s >= run.m || kinds[s as usize] != OPEN {
            fail(&mut report, step, format!("chosen element {s} is not open"));
            return report;
        }
        let forced = match d2_set(&chosen, s, &ctx) {
            Ok(f) => f,
            Err(e) => {
                fail(&mut report, step, format!("closure recompute failed: {e}"));
                return report;
            }
        };
        if forced != run.closed_per_step[step as usize] {
            fail(&mut report, step, "closure-exactness violated".into());
        }
        chosen.push(s);
        report.checked_steps += 1;
    }
    if snaps.next().is_some() {
        fail(
            &mut report,
            run.chosen_sequence.len() as u64,
            "snapshot recorded beyond final step".into(),
        );
    }
    if run.final_size != run.chosen_sequence.len() as u64 {
        fail(&mut report, run.chosen_sequence.len() as u64, "final size mismatch".into());
    }
    if run.termination_step.is_some()
        && report.first_discrepancy.is_none()
        && !maximality(&chosen, &ctx)
    {
        fail(
            &mut report,
            run.chosen_sequence.len() as u64,
            "terminated run is not maximal".into(),
        );
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeResult {
    pub expected_final_size: BigRational,
    pub final_size_distribution: BTreeMap<u64, BigRational>,
    pub expected_pairs: BigRational,
}

#[derive(Clone)]
struct TreeNode {
    dist: BTreeMap<u64, BigRational>,
    pairs: BigRational,
}

fn mask_pairs(mask: u64, ctx: &RingContext) -> u64 {
    let mut pairs = 0;
    for v in 1..ctx.modulus() {
        if mask >> v & 1 == 1 {
            let neg = ring::negate(v, ctx);
            if neg > v && mask >> neg & 1 == 1 {
                pairs += 1;
            }
        }
    }
    pairs
}

fn mask_open(mask: u64, ctx: &RingContext) -> Vec<u64> {
    let m = ctx.modulus();
    let mut set: Vec<u64> = (1..m).filter(|&v| mask >> v & 1 == 1).collect();
    let mut open = Vec::new();
    for q in 1..m {
        if mask >> q & 1 == 1 {
            continue;
        }
        set.push(q);
        if ring::is_sum_free(&set, ctx) {
            open.push(q);
        }
        set.pop();
    }
    open
}

fn explore(
    mask: u64,
    ctx: &RingContext,
    memo: &mut HashMap<u64, TreeNode>,
    visited: &mut u64,
    budget: u64,
) -> Result<TreeNode, OracleError> {
    if let Some(node) = memo.get(&mask) {
        return Ok(node.clone());
    }
    *visited += 1;
    if *visited > budget {
        return Err(OracleError::BudgetExceeded { budget });
    }
    let open = mask_open(mask, ctx);
    let node = if open.is_empty() {
        let size = mask.count_ones() as u64;
        let mut dist = BTreeMap::new();
        dist.insert(size, BigRational::one());
        TreeNode {
            dist,
            pairs: BigRational::from_integer(BigInt::from(mask_pairs(mask, ctx))),
        }
    } else {
        let weight = BigRational::new(BigInt::one(), BigInt::from(open.len() as u64));
        let mut dist: BTreeMap<u64, BigRational> = BTreeMap::new();
        let mut pairs = BigRational::zero();
        for &q in &open {
            let child = explore(mask | 1 << q, ctx, memo, visited, budget)?;
            for (size, p) in child.dist {
                *dist.entry(size).or_insert_with(BigRational::zero) += p * &weight;
            }
            pairs += child.pairs * &weight;
        }
        TreeNode { dist, pairs }
    };
    memo.insert(mask, node.clone());
    Ok(node)
}

/// Exact distribution of the final size and expected distinct pair count by
/// exhausting the uniform-choice tree. Memoizes on the chosen set: the
/// residual process depends only on which elements are chosen, not the order.
pub fn exact_expectation_tree(ctx: &RingContext, node_budget: u64) -> Result<TreeResult, OracleError> {
    if ctx.modulus() > 64 {
        return Err(OracleError::PreconditionViolated("modulus exceeds mask width 64"));
    }
    let mut memo = HashMap::new();
    let mut visited = 0;
    let root = explore(0, ctx, &mut memo, &mut visited, node_budget)?;
    let mut expected = BigRational::zero();
    for (&size, p) in &root.dist {
        expected += BigRational::from_integer(BigInt::from(size)) * p;
    }
    Ok(TreeResult {
        expected_final_size: expected,
        final_size_distribution: root.dist,
        expected_pairs: root.pairs,
    })
}

/// Pinned constant for the first-order ratio estimate remainder. Within the
/// precondition region the remainder is `(x ey^2 - y ex ey) / (y^2 (y+ey))`
/// and `|y + ey| >= |y|/2`, so 2 works and is attained as `ey -> -y/2`.
pub const RATIO_REMAINDER_CONSTANT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub delta: f64,
    pub first_order: f64,
    pub remainder_bound: f64,
}

/// First-order estimate of `(x+ex)/(y+ey) - x/y` with a certified remainder:
/// `|delta - first_order| <= remainder_bound` whenever `|ex| <= |x|/2` and
/// `|ey| <= |y|/2`.
pub fn lemma_ratio_estimate(x: f64, y: f64, ex: f64, ey: f64) -> Result<RatioEstimate, OracleError> {
    if x == 0.0 || y == 0.0 {
        return Err(OracleError::PreconditionViolated("x and y must be nonzero"));
    }
    if !(ex.abs() <= x.abs() / 2.0 && ey.abs() <= y.abs() / 2.0) {
        return Err(OracleError::PreconditionViolated("relative errors must be at most 1/2"));
    }
    let delta = (x + ex) / (y + ey) - x / y;
    let first_order = (y * ex - x * ey) / (y * y);
    let remainder_bound =
        RATIO_REMAINDER_CONSTANT * ((y * ex * ey).abs() + (x * ey * ey).abs()) / y.abs().powi(3);
    Ok(RatioEstimate {
        delta,
        first_order,
        remainder_bound,
    })
}

/// For sequences within `delta` of `x` and `eps` of `y`, the sum of products
/// deviates from `(sum xs)(sum ys)/|I|` by at most `2 |I| delta eps`.
pub fn lemma_sum_product(
    xs: &[f64],
    ys: &[f64],
    x: f64,
    y: f64,
    delta: f64,
    eps: f64,
) -> Result<(f64, f64), OracleError> {
    if xs.len() != ys.len() {
        return Err(OracleError::PreconditionViolated("sequences differ in length"));
    }
    if xs.is_empty() {
        return Err(OracleError::PreconditionViolated("sequences must be nonempty"));
    }
    if delta < 0.0 || eps < 0.0 {
        return Err(OracleError::PreconditionViolated("bands must be nonnegative"));
    }
    if xs.iter().any(|&v| (v - x).abs() > delta) || ys.iter().any(|&v| (v - y).abs() > eps) {
        return Err(OracleError::PreconditionViolated("sequence leaves its band"));
    }
    let n = xs.len() as f64;
    let sum_xy: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
    let sum_x: f64 = xs.iter().sum();
    let sum_y: f64 = ys.iter().sum();
    let lhs = (sum_xy - sum_x * sum_y / n).abs();
    Ok((lhs, 2.0 * n * delta * eps))
}
