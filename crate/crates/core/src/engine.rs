//! The random greedy sum-free process on `Z_m`.
//!
//! Starting from the empty set, each step chooses a uniformly random open
//! element `s`, adds it to `S`, and closes every open element that can no
//! longer be added without completing an equation `a + b = c` inside
//! `S ∪ {that element}`. Element 0 is closed from the start (`0 + 0 = 0`).
//!
//! Tracked quantities follow the equation-class conventions of [`crate::ring`]:
//! for a non-chosen vertex `v` and `k` in `1..=3`, `Dk,LEFT[v]` (resp.
//! `Dk,RIGHT[v]`) counts classes with `v` in the left pair (resp. right side),
//! no closed vertex besides possibly `v` itself, and exactly `k - 1` open
//! vertices besides `v`. `E2`/`E3` count classes with no closed vertex and
//! exactly 2/3 open vertices. The degenerate class `{0,0}->0` is excluded
//! from the degree counters; its only effect is closing 0 at initialization.
//! Under these conventions `D1,RIGHT[0]` equals the number of pairs
//! `{v, -v} ⊆ S` plus `[n ∈ S]` for even `m = 2n`.
//!
//! Two modes:
//! * [`Mode::Full`]: every counter is maintained exactly at every step via an
//!   incremental update costing `O(m)` per chosen or closed element.
//! * [`Mode::Lean`]: only statuses, the open count and the pair statistics are
//!   maintained (`O(|S|)` per step); other counters are scanned on demand at
//!   snapshot times or reported as absent.
//!
//! Replay: selection draws an index into the ascending list of open elements
//! via rejection-sampled xoshiro256**, so any engine that maintains the same
//! open set and consumes the same generator reproduces runs bit for bit.

use crate::ring::{self, RingContext, RingError};
use crate::rng::{OpenSet, ProcessRng};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EngineError {
    #[error("modulus must be at least 3, got {0}")]
    InvalidModulus(u64),
    #[error("process has terminated: no open element remains")]
    ProcessTerminated,
    #[error("element {0} is not open")]
    NotOpen(u64),
    #[error("operation requires full-ledger mode: {0}")]
    ModeUnsupported(&'static str),
}

impl From<RingError> for EngineError {
    fn from(e: RingError) -> Self {
        match e {
            RingError::InvalidModulus(m) => EngineError::InvalidModulus(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Lean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Open,
    Chosen { step: u64 },
    Closed { step: u64 },
}

const OPEN: u8 = 0;
const CHOSEN: u8 = 1;
const CLOSED: u8 = 2;

/// Exact counters of full-ledger mode. Indexed by vertex; `k` in names is the
/// number of open vertices in the class counting `v` itself as open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub e2: i64,
    pub e3: i64,
    pub d3l: Vec<i64>,
    pub d3r: Vec<i64>,
    pub d2l: Vec<i64>,
    pub d2r: Vec<i64>,
    pub d1l: Vec<i64>,
    pub d1r: Vec<i64>,
}

impl Ledger {
    fn new(m: u64) -> Self {
        let z = vec![0i64; m as usize];
        Ledger {
            e2: 0,
            e3: 0,
            d3l: z.clone(),
            d3r: z.clone(),
            d2l: z.clone(),
            d2r: z.clone(),
            d1l: z.clone(),
            d1r: z,
        }
    }

    fn dl(&mut self, k: usize) -> &mut [i64] {
        match k {
            1 => &mut self.d1l,
            2 => &mut self.d2l,
            3 => &mut self.d3l,
            _ => unreachable!("degree index out of range"),
        }
    }

    fn dr(&mut self, k: usize) -> &mut [i64] {
        match k {
            1 => &mut self.d1r,
            2 => &mut self.d2r,
            3 => &mut self.d3r,
            _ => unreachable!("degree index out of range"),
        }
    }
}

/// Definitional contribution of one class to the ledger, used to seed the
/// initial state (and by tests on arbitrary status vectors). The incremental
/// path in `full_transition` must stay equivalent to this rule.
fn add_class_contribution(kinds: &[u8], a: u64, b: u64, c: u64, led: &mut Ledger) {
    if a == 0 && b == 0 {
        return; // degenerate {0}: closes 0, carries no counters
    }
    let mut vs = [a, b, c];
    vs.sort_unstable();
    let len = if vs[0] == vs[1] && vs[1] == vs[2] {
        1
    } else if vs[0] == vs[1] || vs[1] == vs[2] {
        if vs[0] == vs[1] {
            vs[1] = vs[2];
        }
        2
    } else {
        3
    };
    let vs = &vs[..len];

    let mut any_closed = false;
    let mut open_cnt = 0;
    for &v in vs {
        match kinds[v as usize] {
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

    for &v in vs {
        if kinds[v as usize] == CHOSEN {
            continue;
        }
        let mut others_closed = false;
        let mut others_open = 0usize;
        for &u in vs {
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
        if v == a || v == b {
            led.dl(k)[v as usize] += 1;
        }
        if v == c {
            led.dr(k)[v as usize] += 1;
        }
    }
}

/// Per-vertex counters reported in snapshots for sampled vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexCounters {
    pub v: u64,
    pub d3l: i64,
    pub d3r: i64,
    pub d2l: i64,
    pub d2r: i64,
    pub d1l: i64,
    pub d1r: i64,
}

/// Min/max of the per-vertex counters over their tracking domains:
/// `d3l`, `d2l`, `d2r` over `v ∉ ±S ∪ {0}`, `d3r` over non-chosen `v ≠ 0`.
/// `None` when the domain is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BandExtremes {
    pub d3l: Option<(i64, i64)>,
    pub d3r: Option<(i64, i64)>,
    pub d2l: Option<(i64, i64)>,
    pub d2r: Option<(i64, i64)>,
}

/// Point-in-time view of the tracked variables. Lean mode leaves fields it
/// does not compute as `None`; they are never reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySnapshot {
    pub step: u64,
    pub t: f64,
    pub q: u64,
    pub e2: Option<i64>,
    pub e3: Option<i64>,
    pub d2r0: Option<i64>,
    pub d3r0: Option<i64>,
    pub d1r0: u64,
    pub pairs_distinct: u64,
    /// max over non-chosen `v != 0` of `max(D1,LEFT[v], D1,RIGHT[v])`.
    pub max_d1_nonzero: Option<i64>,
    pub extremes: Option<BandExtremes>,
    pub vertex_sample: Vec<VertexCounters>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDeltas {
    pub q: i64,
    pub d1r0: i64,
    pub pairs_distinct: i64,
    pub e2: Option<i64>,
    pub e3: Option<i64>,
    pub d2r0: Option<i64>,
    pub d3r0: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 0-based index of the step that was just taken.
    pub step: u64,
    pub chosen: u64,
    /// Elements that left the open set because of this choice, ascending.
    pub newly_closed: Vec<u64>,
    pub deltas: LedgerDeltas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chosen: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub m: u64,
    pub seed: u64,
    pub mode: Mode,
    pub cadence: u64,
    pub snapshots: Vec<TrajectorySnapshot>,
    pub chosen_sequence: Vec<u64>,
    /// Closed elements per step, parallel to `chosen_sequence`.
    pub closed_per_step: Vec<Vec<u64>>,
    pub termination_step: Option<u64>,
    pub final_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop after this many steps (or earlier termination).
    Horizon(u64),
    Termination,
}

/// Variables supported by `expected_one_step_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarId {
    Q,
    E2,
    E3,
    D2R0,
    D3R0,
    D1R0,
    PairsDistinct,
}

/// Snapshot cadence used by the harness when none is given: every step for
/// small moduli, every 16 steps once full snapshots start costing.
pub fn default_cadence(m: u64) -> u64 {
    if m <= (1 << 12) {
        1
    } else {
        16
    }
}

/// `(Q, D1R0, pairs_distinct, (E2, E3, D2R0, D3R0) when the ledger tracks them)`.
type TrackedCounts = (i64, i64, i64, Option<(i64, i64, i64, i64)>);

#[derive(Debug, Clone)]
pub struct ProcessState {
    ctx: RingContext,
    mode: Mode,
    seed: u64,
    rng: ProcessRng,
    steps_taken: u64,
    kinds: Vec<u8>,
    mark: Vec<u64>,
    open: OpenSet,
    chosen: Vec<u64>,
    pairs_distinct: u64,
    n_in_s: bool,
    ledger: Option<Ledger>,
    vertex_sample: Vec<u64>,
}

impl ProcessState {
    pub fn new(m: u64, seed: u64, mode: Mode) -> Result<Self, EngineError> {
        let ctx = RingContext::new(m)?;
        let mu = m as usize;
        let mut kinds = vec![OPEN; mu];
        kinds[0] = CLOSED;
        let mut open = OpenSet::new(mu);
        for v in 1..mu {
            open.insert(v);
        }
        let ledger = match mode {
            Mode::Full => {
                let mut led = Ledger::new(m);
                for a in 0..m {
                    for b in a..m {
                        add_class_contribution(&kinds, a, b, ctx.add(a, b), &mut led);
                    }
                }
                Some(led)
            }
            Mode::Lean => None,
        };
        Ok(ProcessState {
            ctx,
            mode,
            seed,
            rng: ProcessRng::new(seed),
            steps_taken: 0,
            kinds,
            mark: vec![0; mu],
            open,
            chosen: Vec::new(),
            pairs_distinct: 0,
            n_in_s: false,
            ledger,
            vertex_sample: Vec::new(),
        })
    }

    pub fn ctx(&self) -> &RingContext {
        &self.ctx
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> u64 {
        self.steps_taken
    }

    pub fn open_count(&self) -> u64 {
        self.open.len()
    }

    pub fn is_terminated(&self) -> bool {
        self.open.is_empty()
    }

    pub fn chosen(&self) -> &[u64] {
        &self.chosen
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        self.ledger.as_ref()
    }

    pub fn status(&self, v: u64) -> Status {
        match self.kinds[v as usize] {
            OPEN => Status::Open,
            CHOSEN => Status::Chosen {
                step: self.mark[v as usize],
            },
            _ => Status::Closed {
                step: self.mark[v as usize],
            },
        }
    }

    pub fn open_elements(&self) -> Vec<u64> {
        self.open.iter().map(|v| v as u64).collect()
    }

    /// Process time `t = i / sqrt(n)` with `n = m/2` (continuously for odd m).
    pub fn t(&self) -> f64 {
        self.steps_taken as f64 / (self.ctx.modulus() as f64 / 2.0).sqrt()
    }

    /// `(D1,RIGHT[0], distinct pairs {v,-v} ⊆ S)`; the first is the second
    /// plus `[n ∈ S]` for even m.
    pub fn pair_count(&self) -> (u64, u64) {
        (self.pairs_distinct + self.n_in_s as u64, self.pairs_distinct)
    }

    pub fn set_vertex_sample(&mut self, sample: Vec<u64>) {
        self.vertex_sample = sample;
    }

    /// Open elements that would be closed by choosing `v` now: the open
    /// vertices of classes through `v` whose other vertices are all chosen.
    pub fn d2_neighborhood(&self, v: u64) -> Result<Vec<u64>, EngineError> {
        if v >= self.ctx.modulus() || self.kinds[v as usize] != OPEN {
            return Err(EngineError::NotOpen(v));
        }
        let mut out = Vec::new();
        ring::for_each_class_through(v, &self.ctx, |cls| {
            if cls.a == 0 && cls.b == 0 {
                return;
            }
            let mut open_other = None;
            let mut open_cnt = 0;
            let mut closed_any = false;
            for u in cls.vertex_set() {
                if u == v {
                    continue;
                }
                match self.kinds[u as usize] {
                    OPEN => {
                        open_cnt += 1;
                        open_other = Some(u);
                    }
                    CLOSED => closed_any = true,
                    _ => {}
                }
            }
            if !closed_any && open_cnt == 1 {
                out.push(open_other.unwrap());
            }
        });
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Candidates for closure when `s` is chosen: an open `q` closes exactly
    /// when some class contains `q` and `s` with everything else already
    /// chosen, i.e. `q = s + s'`, `q = s - s'`, `q = s' - s` for some
    /// `s' ∈ S ∪ {s}`, or `q + q = s`.
    fn closure_set(&self, s: u64) -> Vec<u64> {
        let ctx = &self.ctx;
        let m = ctx.modulus();
        let mut out = Vec::new();
        let mut push = |q: u64, kinds: &[u8]| {
            debug_assert_ne!(q, s);
            if kinds[q as usize] == OPEN {
                out.push(q);
            }
        };
        for i in 0..=self.chosen.len() {
            let sp = if i == self.chosen.len() {
                s
            } else {
                self.chosen[i]
            };
            push(ctx.add(s, sp), &self.kinds);
            push(ctx.sub(s, sp), &self.kinds);
            push(ctx.sub(sp, s), &self.kinds);
        }
        // halving solutions of 2q = s
        if !m.is_multiple_of(2) {
            let q = if s.is_multiple_of(2) { s / 2 } else { (s + m) / 2 };
            push(q, &self.kinds);
        } else if s.is_multiple_of(2) {
            push(s / 2, &self.kinds);
            push(s / 2 + m / 2, &self.kinds);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn step(&mut self) -> Result<StepReport, EngineError> {
        if self.open.is_empty() {
            return Err(EngineError::ProcessTerminated);
        }
        let j = self.rng.uniform_index(self.open.len());
        let s = self.open.select(j) as u64;
        Ok(self.apply_choice(s))
    }

    /// Deterministic variant for analysis and tests; consumes no randomness.
    pub fn step_forced(&mut self, s: u64) -> Result<StepReport, EngineError> {
        if s >= self.ctx.modulus() || self.kinds[s as usize] != OPEN {
            return Err(EngineError::NotOpen(s));
        }
        Ok(self.apply_choice(s))
    }

    fn tracked(&self) -> TrackedCounts {
        let led = self.ledger.as_ref();
        (
            self.open.len() as i64,
            (self.pairs_distinct + self.n_in_s as u64) as i64,
            self.pairs_distinct as i64,
            led.map(|l| (l.e2, l.e3, l.d2r[0], l.d3r[0])),
        )
    }

    fn apply_choice(&mut self, s: u64) -> StepReport {
        debug_assert_eq!(self.kinds[s as usize], OPEN);
        let i = self.steps_taken;
        let before = self.tracked();
        let newly_closed = self.closure_set(s);

        if self.mode == Mode::Full {
            self.full_transition(s, true);
        }
        self.kinds[s as usize] = CHOSEN;
        self.mark[s as usize] = i;
        self.open.remove(s as usize);
        self.chosen.push(s);
        let neg = ring::negate(s, &self.ctx);
        if neg == s {
            self.n_in_s = true; // s = n, the self-inverse element
        } else if self.kinds[neg as usize] == CHOSEN {
            self.pairs_distinct += 1;
        }

        for &q in &newly_closed {
            if self.mode == Mode::Full {
                self.full_transition(q, false);
            }
            self.kinds[q as usize] = CLOSED;
            self.mark[q as usize] = i;
            self.open.remove(q as usize);
        }
        self.steps_taken = i + 1;

        let after = self.tracked();
        #[cfg(debug_assertions)]
        if let Some(led) = self.ledger.as_ref() {
            debug_assert_eq!(
                led.d1r[0] as u64,
                self.pairs_distinct + self.n_in_s as u64
            );
        }
        StepReport {
            step: i,
            chosen: s,
            newly_closed,
            deltas: LedgerDeltas {
                q: after.0 - before.0,
                d1r0: after.1 - before.1,
                pairs_distinct: after.2 - before.2,
                e2: after.3.zip(before.3).map(|(a, b)| a.0 - b.0),
                e3: after.3.zip(before.3).map(|(a, b)| a.1 - b.1),
                d2r0: after.3.zip(before.3).map(|(a, b)| a.2 - b.2),
                d3r0: after.3.zip(before.3).map(|(a, b)| a.3 - b.3),
            },
        }
    }

    /// Incremental ledger update for `x` leaving the open set. One pass over
    /// the `~3m/2` classes through `x`; every other vertex's counters and the
    /// edge counts are adjusted, `x`'s own per-vertex counters are untouched
    /// (unchanged on close, frozen on choose).
    fn full_transition(&mut self, x: u64, to_chosen: bool) {
        let m = self.ctx.modulus();
        debug_assert!(x != 0 && x < m);
        debug_assert_eq!(self.kinds[x as usize], OPEN);
        let led = self.ledger.as_mut().expect("full mode");
        let kinds = &self.kinds;

        // Left classes {x, b} -> c for b != x; c walks x, x+1, ...
        let mut c = x;
        for b in 0..m {
            let cc = c;
            c += 1;
            if c == m {
                c = 0;
            }
            if b == x {
                continue;
            }
            if b == 0 {
                // {0, x} -> x: only v = 0 is live (others = {x})
                led.d2l[0] -= 1;
                if to_chosen {
                    led.d1l[0] += 1;
                }
                continue;
            }
            if cc == 0 {
                // {x, -x} -> 0: v = 0 right role, others = {x, -x}
                let kb = kinds[b as usize];
                if kb != CLOSED {
                    let k = 2 + (kb == OPEN) as usize;
                    led.dr(k)[0] -= 1;
                    if to_chosen {
                        led.dr(k - 1)[0] += 1;
                    }
                }
                continue;
            }
            // general {x, b, cc}, all distinct and nonzero
            let kb = kinds[b as usize];
            let kc = kinds[cc as usize];
            if kb != CLOSED && kc != CLOSED {
                let k = 1 + (kb == OPEN) as usize + (kc == OPEN) as usize;
                if k == 3 {
                    led.e3 -= 1;
                    if to_chosen {
                        led.e2 += 1;
                    }
                } else if k == 2 {
                    led.e2 -= 1;
                }
            }
            if kb != CHOSEN && kc != CLOSED {
                let k = 2 + (kc == OPEN) as usize;
                led.dl(k)[b as usize] -= 1;
                if to_chosen {
                    led.dl(k - 1)[b as usize] += 1;
                }
            }
            if kc != CHOSEN && kb != CLOSED {
                let k = 2 + (kb == OPEN) as usize;
                led.dr(k)[cc as usize] -= 1;
                if to_chosen {
                    led.dr(k - 1)[cc as usize] += 1;
                }
            }
        }

        // The doubled class {x, x} -> 2x.
        let c2 = self.ctx.add(x, x);
        if c2 == 0 {
            // x = n: {n, n} -> 0, v = 0 right role, others = {n}
            led.d2r[0] -= 1;
            if to_chosen {
                led.d1r[0] += 1;
            }
        } else {
            let kc = kinds[c2 as usize];
            if kc == OPEN {
                led.e2 -= 1;
            }
            if kc != CHOSEN {
                led.d2r[c2 as usize] -= 1;
                if to_chosen {
                    led.d1r[c2 as usize] += 1;
                }
            }
        }

        // Right classes {a, x-a} -> x with x not in the left pair.
        for a in 1..m {
            let b2 = self.ctx.sub(x, a);
            if a > b2 {
                continue;
            }
            debug_assert!(b2 != 0 && a != x && b2 != x);
            if a == b2 {
                // {a, a} -> x, v = a left role, others = {x}
                let ka = kinds[a as usize];
                if ka == OPEN {
                    led.e2 -= 1;
                }
                if ka != CHOSEN {
                    led.d2l[a as usize] -= 1;
                    if to_chosen {
                        led.d1l[a as usize] += 1;
                    }
                }
                continue;
            }
            let ka = kinds[a as usize];
            let kb = kinds[b2 as usize];
            if ka != CLOSED && kb != CLOSED {
                let k = 1 + (ka == OPEN) as usize + (kb == OPEN) as usize;
                if k == 3 {
                    led.e3 -= 1;
                    if to_chosen {
                        led.e2 += 1;
                    }
                } else if k == 2 {
                    led.e2 -= 1;
                }
            }
            if ka != CHOSEN && kb != CLOSED {
                let k = 2 + (kb == OPEN) as usize;
                led.dl(k)[a as usize] -= 1;
                if to_chosen {
                    led.dl(k - 1)[a as usize] += 1;
                }
            }
            if kb != CHOSEN && ka != CLOSED {
                let k = 2 + (ka == OPEN) as usize;
                led.dl(k)[b2 as usize] -= 1;
                if to_chosen {
                    led.dl(k - 1)[b2 as usize] += 1;
                }
            }
        }
    }

    /// All six degree counters of a non-chosen vertex by direct scan; `O(m)`.
    pub fn vertex_counters_scan(&self, v: u64) -> VertexCounters {
        let mut out = VertexCounters {
            v,
            d3l: 0,
            d3r: 0,
            d2l: 0,
            d2r: 0,
            d1l: 0,
            d1r: 0,
        };
        ring::for_each_class_through(v, &self.ctx, |cls| {
            if cls.a == 0 && cls.b == 0 {
                return;
            }
            let mut closed_any = false;
            let mut open_cnt = 0usize;
            for u in cls.vertex_set() {
                if u == v {
                    continue;
                }
                match self.kinds[u as usize] {
                    CLOSED => closed_any = true,
                    OPEN => open_cnt += 1,
                    _ => {}
                }
            }
            if closed_any {
                return;
            }
            let roles = cls.roles_of(v);
            match (1 + open_cnt, roles.left, roles.right) {
                (1, l, r) => {
                    out.d1l += l as i64;
                    out.d1r += r as i64;
                }
                (2, l, r) => {
                    out.d2l += l as i64;
                    out.d2r += r as i64;
                }
                (3, l, r) => {
                    out.d3l += l as i64;
                    out.d3r += r as i64;
                }
                _ => unreachable!(),
            }
        });
        out
    }

    /// `(d3r0, d2r0)` by scanning the pair classes `{a, -a} -> 0`; `O(m)`.
    fn scan_right_zero(&self) -> (i64, i64) {
        let m = self.ctx.modulus();
        let (mut d3, mut d2) = (0i64, 0i64);
        let top = m / 2;
        for a in 1..=top {
            let b = m - a;
            if a == b {
                // {n, n} -> 0
                if self.kinds[a as usize] == OPEN {
                    d2 += 1;
                }
                continue;
            }
            let (ka, kb) = (self.kinds[a as usize], self.kinds[b as usize]);
            if ka == CLOSED || kb == CLOSED {
                continue;
            }
            match (ka == OPEN) as u8 + (kb == OPEN) as u8 {
                2 => d3 += 1,
                1 => d2 += 1,
                _ => {}
            }
        }
        (d3, d2)
    }

    pub fn snapshot(&self) -> TrajectorySnapshot {
        let m = self.ctx.modulus();
        let d1r0 = self.pairs_distinct + self.n_in_s as u64;
        let mut snap = TrajectorySnapshot {
            step: self.steps_taken,
            t: self.t(),
            q: self.open.len(),
            e2: None,
            e3: None,
            d2r0: None,
            d3r0: None,
            d1r0,
            pairs_distinct: self.pairs_distinct,
            max_d1_nonzero: None,
            extremes: None,
            vertex_sample: Vec::new(),
        };
        match self.mode {
            Mode::Full => {
                let led = self.ledger.as_ref().unwrap();
                snap.e2 = Some(led.e2);
                snap.e3 = Some(led.e3);
                snap.d2r0 = Some(led.d2r[0]);
                snap.d3r0 = Some(led.d3r[0]);
                let mut max_d1 = 0i64;
                let mut ext = BandExtremes::default();
                let upd = |slot: &mut Option<(i64, i64)>, x: i64| {
                    *slot = Some(match *slot {
                        None => (x, x),
                        Some((lo, hi)) => (lo.min(x), hi.max(x)),
                    });
                };
                for v in 1..m as usize {
                    if self.kinds[v] == CHOSEN {
                        continue;
                    }
                    max_d1 = max_d1.max(led.d1l[v]).max(led.d1r[v]);
                    upd(&mut ext.d3r, led.d3r[v]);
                    let neg = ring::negate(v as u64, &self.ctx) as usize;
                    if self.kinds[neg] != CHOSEN {
                        upd(&mut ext.d3l, led.d3l[v]);
                        upd(&mut ext.d2l, led.d2l[v]);
                        upd(&mut ext.d2r, led.d2r[v]);
                    }
                }
                snap.max_d1_nonzero = Some(max_d1);
                snap.extremes = Some(ext);
                for &v in &self.vertex_sample {
                    if self.kinds[v as usize] == CHOSEN {
                        continue;
                    }
                    snap.vertex_sample.push(VertexCounters {
                        v,
                        d3l: led.d3l[v as usize],
                        d3r: led.d3r[v as usize],
                        d2l: led.d2l[v as usize],
                        d2r: led.d2r[v as usize],
                        d1l: led.d1l[v as usize],
                        d1r: led.d1r[v as usize],
                    });
                }
            }
            Mode::Lean => {
                let (d3r0, d2r0) = self.scan_right_zero();
                snap.d2r0 = Some(d2r0);
                snap.d3r0 = Some(d3r0);
                for &v in &self.vertex_sample {
                    if self.kinds[v as usize] == CHOSEN {
                        continue;
                    }
                    snap.vertex_sample.push(self.vertex_counters_scan(v));
                }
            }
        }
        snap
    }

    pub fn run(&mut self, stop: StopRule, cadence: u64) -> RunRecord {
        let cadence = cadence.max(1);
        let mut snapshots = vec![self.snapshot()];
        let mut chosen_sequence = Vec::new();
        let mut closed_per_step = Vec::new();
        loop {
            if let StopRule::Horizon(h) = stop {
                if self.steps_taken >= h {
                    break;
                }
            }
            if self.open.is_empty() {
                break;
            }
            let rep = self.step().expect("open set is nonempty");
            chosen_sequence.push(rep.chosen);
            closed_per_step.push(rep.newly_closed);
            if self.steps_taken.is_multiple_of(cadence) {
                snapshots.push(self.snapshot());
            }
        }
        if snapshots.last().map(|s| s.step) != Some(self.steps_taken) {
            snapshots.push(self.snapshot());
        }
        RunRecord {
            m: self.ctx.modulus(),
            seed: self.seed,
            mode: self.mode,
            cadence,
            snapshots,
            chosen_sequence,
            closed_per_step,
            termination_step: self.open.is_empty().then_some(self.steps_taken),
            final_size: self.chosen.len() as u64,
        }
    }

    pub fn value(&self, var: VarId) -> Result<i64, EngineError> {
        match var {
            VarId::Q => Ok(self.open.len() as i64),
            VarId::D1R0 => Ok((self.pairs_distinct + self.n_in_s as u64) as i64),
            VarId::PairsDistinct => Ok(self.pairs_distinct as i64),
            VarId::E2 | VarId::E3 | VarId::D2R0 | VarId::D3R0 => {
                let led = self
                    .ledger
                    .as_ref()
                    .ok_or(EngineError::ModeUnsupported("edge and degree counters"))?;
                Ok(match var {
                    VarId::E2 => led.e2,
                    VarId::E3 => led.e3,
                    VarId::D2R0 => led.d2r[0],
                    VarId::D3R0 => led.d3r[0],
                    _ => unreachable!(),
                })
            }
        }
    }

    /// Exact conditional expectation of the one-step change of `var`, by
    /// brute force over all possible choices. Full mode only.
    pub fn expected_one_step_delta(&self, var: VarId) -> Result<Ratio<i64>, EngineError> {
        if self.mode != Mode::Full {
            return Err(EngineError::ModeUnsupported("expected_one_step_delta"));
        }
        if self.open.is_empty() {
            return Err(EngineError::ProcessTerminated);
        }
        let before = self.value(var)?;
        let q = self.open.len();
        let mut sum = 0i64;
        for k in 0..q {
            let s = self.open.select(k) as u64;
            let mut probe = self.clone();
            probe.step_forced(s).expect("open");
            sum += probe.value(var)? - before;
        }
        Ok(Ratio::new(sum, q as i64))
    }

    /// Closed form `E[ΔQ] = -1 - (1/Q) Σ_{q open} |D_2(q)|`.
    pub fn expected_delta_q_closed_form(&self) -> Result<Ratio<i64>, EngineError> {
        if self.open.is_empty() {
            return Err(EngineError::ProcessTerminated);
        }
        let mut total = 0i64;
        for v in self.open.iter() {
            total += self.d2_neighborhood(v as u64)?.len() as i64;
        }
        Ok(-Ratio::from_integer(1) - Ratio::new(total, self.open.len() as i64))
    }

    /// Closed form `E[ΔD1,RIGHT[0]] = D2,RIGHT[0] / Q`.
    pub fn expected_delta_d1r0_closed_form(&self) -> Result<Ratio<i64>, EngineError> {
        if self.open.is_empty() {
            return Err(EngineError::ProcessTerminated);
        }
        let (_, d2r0) = self.scan_right_zero();
        Ok(Ratio::new(d2r0, self.open.len() as i64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(m: u64, seed: u64) -> ProcessState {
        ProcessState::new(m, seed, Mode::Full).unwrap()
    }

    #[test]
    fn rejects_tiny_modulus() {
        assert_eq!(
            ProcessState::new(2, 0, Mode::Full).err(),
            Some(EngineError::InvalidModulus(2))
        );
    }

    #[test]
    fn initial_state_m8() {
        let st = full(8, 0);
        assert_eq!(st.open_count(), 7);
        assert!(matches!(st.status(0), Status::Closed { step: 0 }));
        let led = st.ledger().unwrap();
        assert_eq!(led.d3r[0], 3);
        assert_eq!(led.d2r[0], 1);
        assert_eq!(led.d1r[0], 0);
        assert_eq!(led.d3l[1], 5);
        assert_eq!(led.d2l[1], 1);
        assert_eq!(led.d2r[1], 0);
        // edge counts at init: all-open classes avoiding 0
        assert_eq!(led.e2, 6);
        let snap = st.snapshot();
        assert_eq!(snap.q, 7);
        assert_eq!(snap.e2, Some(6));
        assert_eq!(snap.d3r0, Some(3));
    }

    #[test]
    fn d2_neighborhood_examples() {
        let st = full(8, 0);
        assert_eq!(st.d2_neighborhood(1).unwrap(), vec![2]);
        assert_eq!(st.d2_neighborhood(2).unwrap(), vec![1, 4, 5]);
        assert_eq!(st.d2_neighborhood(0), Err(EngineError::NotOpen(0)));
        assert_eq!(st.d2_neighborhood(9), Err(EngineError::NotOpen(9)));
    }

    #[test]
    fn forced_steps_m8() {
        let mut st = full(8, 0);
        let rep = st.step_forced(1).unwrap();
        assert_eq!(rep.newly_closed, vec![2]);
        assert_eq!(st.open_count(), 5);
        assert_eq!(rep.deltas.q, -2);

        let mut st = full(8, 0);
        let rep = st.step_forced(2).unwrap();
        assert_eq!(rep.newly_closed, vec![1, 4, 5]);
        assert_eq!(st.open_count(), 3);
        assert_eq!(st.status(4), Status::Closed { step: 0 });
        assert_eq!(st.status(2), Status::Chosen { step: 0 });
    }

    #[test]
    fn closure_matches_d2_neighborhood_along_runs() {
        for m in [7, 8, 9, 16, 33] {
            let mut st = full(m, 42);
            loop {
                if st.is_terminated() {
                    break;
                }
                let expected: Vec<Vec<u64>> = st
                    .open_elements()
                    .iter()
                    .map(|&v| st.d2_neighborhood(v).unwrap())
                    .collect();
                let open = st.open_elements();
                let rep = st.step().unwrap();
                let idx = open.iter().position(|&v| v == rep.chosen).unwrap();
                assert_eq!(rep.newly_closed, expected[idx], "m={m}");
            }
        }
    }

    #[test]
    fn tiny_modulus_terminal_sets() {
        // m = 4 has exactly two reachable maximal sets: {1,3} and {2}
        let mut st = full(4, 0);
        st.step_forced(1).unwrap();
        assert_eq!(st.open_elements(), vec![3]);
        st.step_forced(3).unwrap();
        assert!(st.is_terminated());
        assert_eq!(st.chosen(), &[1, 3]);
        assert_eq!(st.pair_count(), (1, 1));

        let mut st = full(4, 0);
        let rep = st.step_forced(2).unwrap();
        assert_eq!(rep.newly_closed, vec![1, 3]);
        assert!(st.is_terminated());
        assert_eq!(st.pair_count(), (1, 0)); // n = 2 in S, no distinct pair
        assert_eq!(st.step().err(), Some(EngineError::ProcessTerminated));

        let mut both = std::collections::HashSet::new();
        for seed in 0..20 {
            let mut st = full(4, seed);
            let rec = st.run(StopRule::Termination, 1);
            let mut s = rec.chosen_sequence.clone();
            s.sort_unstable();
            assert!(s == vec![1, 3] || s == vec![2]);
            both.insert(s);
        }
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn pair_count_examples_m8() {
        let mut st = full(8, 0);
        st.step_forced(3).unwrap();
        st.step_forced(5).unwrap();
        assert_eq!(st.pair_count(), (1, 1));

        let mut st = full(8, 0);
        st.step_forced(4).unwrap();
        assert_eq!(st.pair_count(), (1, 0));
        let led = st.ledger().unwrap();
        assert_eq!(led.d1r[0], 1);
    }

    #[test]
    fn expected_deltas_at_init_m8() {
        let st = full(8, 0);
        let brute_q = st.expected_one_step_delta(VarId::Q).unwrap();
        assert_eq!(brute_q, Ratio::new(-19, 7));
        assert_eq!(st.expected_delta_q_closed_form().unwrap(), brute_q);

        let brute_pairs = st.expected_one_step_delta(VarId::D1R0).unwrap();
        assert_eq!(brute_pairs, Ratio::new(1, 7));
        assert_eq!(st.expected_delta_d1r0_closed_form().unwrap(), brute_pairs);

        let lean = ProcessState::new(8, 0, Mode::Lean).unwrap();
        assert!(matches!(
            lean.expected_one_step_delta(VarId::Q),
            Err(EngineError::ModeUnsupported(_))
        ));
    }

    #[test]
    fn d2r0_empty_expectation() {
        // after choosing 4 at m = 8, no class {v,-v}->0 has exactly one open
        // element, so the pair statistic cannot move on the next step
        let mut st = full(8, 0);
        st.step_forced(4).unwrap();
        let led = st.ledger().unwrap();
        assert_eq!(led.d2r[0], 0);
        assert_eq!(
            st.expected_one_step_delta(VarId::D1R0).unwrap(),
            Ratio::new(0, 1)
        );
    }

    #[test]
    fn modes_replay_identically() {
        for m in [9, 32, 63, 64] {
            for seed in [0, 1, 7] {
                let mut a = ProcessState::new(m, seed, Mode::Full).unwrap();
                let mut b = ProcessState::new(m, seed, Mode::Lean).unwrap();
                let ra = a.run(StopRule::Termination, 4);
                let rb = b.run(StopRule::Termination, 4);
                assert_eq!(ra.chosen_sequence, rb.chosen_sequence, "m={m} seed={seed}");
                assert_eq!(ra.closed_per_step, rb.closed_per_step);
                assert_eq!(ra.final_size, rb.final_size);
                // reruns replay too
                let mut c = ProcessState::new(m, seed, Mode::Full).unwrap();
                assert_eq!(c.run(StopRule::Termination, 4).chosen_sequence, ra.chosen_sequence);
            }
        }
    }

    #[test]
    fn lean_snapshot_field_presence() {
        let mut st = ProcessState::new(64, 3, Mode::Lean).unwrap();
        st.run(StopRule::Horizon(4), 1);
        let snap = st.snapshot();
        assert!(snap.e2.is_none() && snap.e3.is_none());
        assert!(snap.d2r0.is_some() && snap.d3r0.is_some());
        assert!(snap.max_d1_nonzero.is_none() && snap.extremes.is_none());

        let mut full_twin = ProcessState::new(64, 3, Mode::Full).unwrap();
        full_twin.run(StopRule::Horizon(4), 1);
        let fs = full_twin.snapshot();
        assert_eq!(snap.d2r0, fs.d2r0);
        assert_eq!(snap.d3r0, fs.d3r0);
        assert_eq!(snap.q, fs.q);
    }

    #[test]
    fn lean_vertex_sample_matches_full_ledger() {
        let mut a = ProcessState::new(48, 9, Mode::Full).unwrap();
        let mut b = ProcessState::new(48, 9, Mode::Lean).unwrap();
        a.set_vertex_sample((0..48).collect());
        b.set_vertex_sample((0..48).collect());
        a.run(StopRule::Horizon(6), 1);
        b.run(StopRule::Horizon(6), 1);
        assert_eq!(a.snapshot().vertex_sample, b.snapshot().vertex_sample);
    }

    #[test]
    fn zero_horizon_yields_single_snapshot() {
        let mut st = full(16, 5);
        let rec = st.run(StopRule::Horizon(0), 1);
        assert_eq!(rec.snapshots.len(), 1);
        assert_eq!(rec.snapshots[0].step, 0);
        assert!(rec.termination_step.is_none());
        assert_eq!(rec.final_size, 0);
    }

    #[test]
    fn run_records_termination() {
        let mut st = full(12, 2);
        let rec = st.run(StopRule::Termination, 1);
        assert_eq!(rec.termination_step, Some(st.step_index()));
        assert_eq!(rec.final_size as usize, st.chosen().len());
        assert_eq!(rec.snapshots.last().unwrap().q, 0);
        // every element accounted for: chosen + closed = m
        let closed: usize = rec.closed_per_step.iter().map(|c| c.len()).sum();
        assert_eq!(closed + rec.chosen_sequence.len() + 1, 12); // +1 for element 0
    }

    #[test]
    fn counter_identities_along_run() {
        // sum over open v of D3 counters = 3 E3, of D2 counters = 2 E2
        let mut st = full(24, 11);
        loop {
            let led = st.ledger().unwrap().clone();
            let (mut s3, mut s2) = (0i64, 0i64);
            for v in st.open_elements() {
                s3 += led.d3l[v as usize] + led.d3r[v as usize];
                s2 += led.d2l[v as usize] + led.d2r[v as usize];
            }
            assert_eq!(s3, 3 * led.e3);
            assert_eq!(s2, 2 * led.e2);
            if st.step().is_err() {
                break;
            }
        }
    }

    #[test]
    fn chosen_counters_freeze() {
        let mut st = full(32, 4);
        let rep = st.step().unwrap();
        let v = rep.chosen as usize;
        let frozen = {
            let led = st.ledger().unwrap();
            (led.d3l[v], led.d2l[v], led.d1l[v], led.d3r[v])
        };
        while st.step().is_ok() {}
        let led = st.ledger().unwrap();
        assert_eq!(
            (led.d3l[v], led.d2l[v], led.d1l[v], led.d3r[v]),
            frozen
        );
    }

    #[test]
    fn snapshot_time_scale() {
        let mut st = full(8, 0);
        st.step_forced(1).unwrap();
        let snap = st.snapshot();
        assert_eq!(snap.step, 1);
        assert!((snap.t - 0.5).abs() < 1e-15); // 1/sqrt(4)
    }
}
