//! Random greedy independent sets on explicit hypergraphs.
//!
//! This is the desk-scale cross-validation engine: it stores edge lists
//! explicitly and runs one greedy step in time proportional to the chosen
//! vertex's degree via an inverted index. The specialized ring engine exists
//! precisely because its edge family is implicit; on the ring family built by
//! [`build_schur`] both engines replay the same seed to the same run.
//!
//! The module also carries the regularity diagnostics (`delta_a`, `gamma_b`,
//! [`check_thm1_hypotheses`]) and configuration counting ([`count_xg`]) used
//! to probe which classical hypotheses the ring family breaks. The headline
//! diagnostic: the codegree of a vertex and its negation grows linearly,
//! because every equation `v + b = c` pairs with `-v + c = b`, so the
//! codegree bound fails on this family no matter the scale.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{enumerate_classes, RingContext};
use crate::rng::{OpenSet, ProcessRng};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenericError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

fn invalid(msg: impl Into<String>) -> GenericError {
    GenericError::InvalidParams(msg.into())
}

/// Explicit hypergraph; edges are kept sorted and deduplicated as sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub num_vertices: u64,
    pub edges: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Hypergraph {
    /// Canonicalizes: sorts each edge, sorts the edge list, drops duplicate
    /// sets. Rejects empty edges, repeated vertices inside an edge, and
    /// out-of-range vertices.
    pub fn new(num_vertices: u64, edges: Vec<Vec<u64>>) -> Result<Self, GenericError> {
        let mut canon: Vec<Vec<u64>> = Vec::with_capacity(edges.len());
        for mut e in edges {
            if e.is_empty() {
                return Err(invalid("edges must have at least one vertex"));
            }
            e.sort_unstable();
            if e.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid(format!("edge {e:?} repeats a vertex")));
            }
            if let Some(&v) = e.last() {
                if v >= num_vertices {
                    return Err(invalid(format!(
                        "vertex {v} out of range for {num_vertices} vertices"
                    )));
                }
            }
            canon.push(e);
        }
        canon.sort();
        canon.dedup();
        Ok(Hypergraph {
            num_vertices,
            edges: canon,
            label: None,
        })
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    /// Parses the document format `{"num_vertices": N, "edges": [[...], ...]}`
    /// and validates it.
    pub fn from_json(text: &str) -> Result<Self, GenericError> {
        let raw: Hypergraph =
            serde_json::from_str(text).map_err(|e| invalid(format!("bad hypergraph JSON: {e}")))?;
        let label = raw.label.clone();
        let mut h = Hypergraph::new(raw.num_vertices, raw.edges)?;
        h.label = label;
        Ok(h)
    }

    /// Edge ids through each vertex.
    fn incidence(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.num_vertices as usize];
        for (ei, e) in self.edges.iter().enumerate() {
            for &v in e {
                inc[v as usize].push(ei as u32);
            }
        }
        inc
    }
}

/// Schur family of the ring `Z_m`: the deduplicated vertex sets of all
/// equation classes `{a, b} -> a+b`. Distinct classes can share a vertex set,
/// so the edge count is below the class count.
pub fn build_schur(m: u64) -> Result<Hypergraph, GenericError> {
    let ctx = RingContext::new(m).map_err(|e| invalid(e.to_string()))?;
    let edges = enumerate_classes(&ctx)
        .iter()
        .map(|class| class.vertex_set())
        .collect();
    Ok(Hypergraph::new(m, edges)?.with_label("schur"))
}

/// All k-term arithmetic progressions of `Z_n` with nonzero common
/// difference, as sets. Wrapping can collapse a progression onto fewer than
/// `k` distinct elements; the collapsed set is kept.
pub fn build_kap(n: u64, k: u64) -> Result<Hypergraph, GenericError> {
    if k < 2 {
        return Err(invalid(format!("progression length {k} is below 2")));
    }
    if k > n {
        return Err(invalid(format!(
            "progression length {k} exceeds modulus {n}"
        )));
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for d in 1..n {
            let mut e: Vec<u64> = (0..k).map(|j| (a + j * d) % n).collect();
            e.sort_unstable();
            e.dedup();
            edges.push(e);
        }
    }
    Ok(Hypergraph::new(n, edges)?.with_label("kap"))
}

const OPEN: u8 = 0;
const CHOSEN: u8 = 1;
const CLOSED: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyRun {
    pub seed: u64,
    pub chosen_sequence: Vec<u64>,
    /// Vertices of size-1 edges, closed before the first draw.
    pub closed_at_init: Vec<u64>,
    /// Ascending per step, parallel to `chosen_sequence`.
    pub closed_per_step: Vec<Vec<u64>>,
    /// Sorted maximal independent set.
    pub final_set: Vec<u64>,
}

/// Runs the greedy process to termination. Selection is by index into the
/// canonically ordered open list with the shared process generator, so a run
/// on [`build_schur`]`(m)` consumes randomness identically to the ring engine
/// and reproduces its choices.
pub fn greedy_run(h: &Hypergraph, seed: u64) -> GreedyRun {
    let n = h.num_vertices as usize;
    let incidence = h.incidence();
    // Non-chosen vertices remaining per edge; a vertex closes exactly when
    // some incident edge has it as the last non-chosen vertex.
    let mut missing: Vec<u32> = h.edges.iter().map(|e| e.len() as u32).collect();
    let mut status = vec![OPEN; n];
    let mut open = OpenSet::new(n);
    for v in 0..n {
        open.insert(v);
    }

    let mut closed_at_init = Vec::new();
    for (ei, e) in h.edges.iter().enumerate() {
        if missing[ei] == 1 {
            let v = e[0] as usize;
            if status[v] == OPEN {
                status[v] = CLOSED;
                open.remove(v);
                closed_at_init.push(v as u64);
            }
        }
    }
    closed_at_init.sort_unstable();

    let mut rng = ProcessRng::new(seed);
    let mut chosen_sequence = Vec::new();
    let mut closed_per_step = Vec::new();
    while !open.is_empty() {
        let j = rng.uniform_index(open.len());
        let x = open.select(j);
        status[x] = CHOSEN;
        open.remove(x);
        chosen_sequence.push(x as u64);

        let mut newly: Vec<u64> = Vec::new();
        for &ei in &incidence[x] {
            missing[ei as usize] -= 1;
            if missing[ei as usize] == 1 {
                let last = h.edges[ei as usize]
                    .iter()
                    .copied()
                    .find(|&v| status[v as usize] != CHOSEN)
                    .expect("an edge with one non-chosen vertex has that vertex");
                if status[last as usize] == OPEN {
                    status[last as usize] = CLOSED;
                    open.remove(last as usize);
                    newly.push(last);
                }
            }
        }
        newly.sort_unstable();
        closed_per_step.push(newly);
    }

    let mut final_set = chosen_sequence.clone();
    final_set.sort_unstable();
    GreedyRun {
        seed,
        chosen_sequence,
        closed_at_init,
        closed_per_step,
        final_set,
    }
}

pub fn is_independent(h: &Hypergraph, set: &[u64]) -> bool {
    let s: HashSet<u64> = set.iter().copied().collect();
    !h.edges.iter().any(|e| e.iter().all(|v| s.contains(v)))
}

/// Independent, and every outside vertex would complete an edge (a size-1
/// edge counts as completing on its own).
pub fn is_maximal_independent(h: &Hypergraph, set: &[u64]) -> bool {
    if !is_independent(h, set) {
        return false;
    }
    let s: HashSet<u64> = set.iter().copied().collect();
    (0..h.num_vertices).filter(|v| !s.contains(v)).all(|v| {
        h.edges
            .iter()
            .any(|e| e.contains(&v) && e.iter().all(|&u| u == v || s.contains(&u)))
    })
}

fn for_each_subset(items: &[u64], size: usize, f: &mut impl FnMut(&[u64])) {
    fn rec(items: &[u64], size: usize, start: usize, acc: &mut Vec<u64>, f: &mut impl FnMut(&[u64])) {
        if acc.len() == size {
            f(acc);
            return;
        }
        let needed = size - acc.len();
        for i in start..=items.len().saturating_sub(needed) {
            acc.push(items[i]);
            rec(items, size, i + 1, acc, f);
            acc.pop();
        }
    }
    if size <= items.len() {
        rec(items, size, 0, &mut Vec::with_capacity(size), f);
    }
}

/// Maximum number of edges containing a common `a`-subset. Only subsets of
/// edges can have positive degree, so the scan ranges over those.
pub fn delta_a(h: &Hypergraph, a: usize) -> u64 {
    assert!(a >= 1, "subset size must be positive");
    let mut counts: HashMap<Vec<u64>, u64> = HashMap::new();
    for e in &h.edges {
        for_each_subset(e, a, &mut |sub| {
            *counts.entry(sub.to_vec()).or_insert(0) += 1;
        });
    }
    counts.into_values().max().unwrap_or(0)
}

/// Number of ordered edge pairs `(e, e')` with `v` only in `e`, `v'` only in
/// `e'`, and intersection size exactly `b`.
pub fn codegree_b(h: &Hypergraph, v: u64, v_prime: u64, b: usize) -> u64 {
    assert_ne!(v, v_prime, "codegree is defined for distinct vertices");
    let incidence = h.incidence();
    let (ev, ew) = (
        &incidence[v as usize],
        &incidence[v_prime as usize],
    );
    let mut count = 0;
    for &i in ev {
        let e = &h.edges[i as usize];
        if e.binary_search(&v_prime).is_ok() {
            continue;
        }
        for &j in ew {
            let e_prime = &h.edges[j as usize];
            if e_prime.binary_search(&v).is_ok() {
                continue;
            }
            if intersection_size(e, e_prime) == b {
                count += 1;
            }
        }
    }
    count
}

fn intersection_size(a: &[u64], b: &[u64]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Maximum `b`-codegree over all ordered vertex pairs, by a scan over ordered
/// edge pairs. Quadratic in the edge count; intended for desk scales.
pub fn gamma_b(h: &Hypergraph, b: usize) -> u64 {
    let mut counts: HashMap<(u64, u64), u64> = HashMap::new();
    for (i, e) in h.edges.iter().enumerate() {
        if e.len() <= b {
            continue;
        }
        for (j, e_prime) in h.edges.iter().enumerate() {
            if i == j || e_prime.len() <= b || intersection_size(e, e_prime) != b {
                continue;
            }
            for &v in e.iter().filter(|v| e_prime.binary_search(v).is_err()) {
                for &w in e_prime.iter().filter(|w| e.binary_search(w).is_err()) {
                    *counts.entry((v, w)).or_insert(0) += 1;
                }
            }
        }
    }
    counts.into_values().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCheck {
    pub ell: usize,
    pub delta: u64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaCheck {
    pub b: usize,
    pub gamma: u64,
    pub bound: f64,
    pub pass: bool,
}

/// Measured shape of a hypergraph against the classical subset-degree and
/// codegree hypotheses at a given slack `eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thm1Report {
    pub eps: f64,
    pub num_vertices: u64,
    pub num_edges: usize,
    /// Dominant edge size; the family need not be uniform, so the size
    /// distribution is reported alongside.
    pub r: usize,
    pub edge_size_counts: Vec<(usize, usize)>,
    pub uniform: bool,
    pub d_mean: f64,
    pub d_min: u64,
    pub d_max: u64,
    pub regular: bool,
    /// Subset-degree checks `delta_ell < d_mean^{(r-ell)/(r-1) - eps}` for
    /// `ell` in `2..r`.
    pub delta_checks: Vec<DeltaCheck>,
    /// Codegree check `gamma_{r-1} < d_mean^{1 - eps}`.
    pub gamma_check: Option<GammaCheck>,
}

/// Measures a family's degree shape and evaluates both greedy-analysis
/// hypotheses. On the ring family the codegree check fails at every scale:
/// a vertex and its negation share linearly many equations.
pub fn check_thm1_hypotheses(h: &Hypergraph, eps: f64) -> Thm1Report {
    let mut size_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &h.edges {
        *size_counts.entry(e.len()).or_insert(0) += 1;
    }
    let r = size_counts
        .iter()
        .max_by_key(|(size, count)| (**count, **size))
        .map(|(size, _)| *size)
        .unwrap_or(0);
    let uniform = size_counts.len() == 1;

    let mut degree = vec![0u64; h.num_vertices as usize];
    for e in &h.edges {
        for &v in e {
            degree[v as usize] += 1;
        }
    }
    let d_min = degree.iter().copied().min().unwrap_or(0);
    let d_max = degree.iter().copied().max().unwrap_or(0);
    let d_mean = if degree.is_empty() {
        0.0
    } else {
        degree.iter().sum::<u64>() as f64 / degree.len() as f64
    };

    let mut delta_checks = Vec::new();
    if r >= 2 {
        for ell in 2..r {
            let delta = delta_a(h, ell);
            let exponent = (r - ell) as f64 / (r - 1) as f64 - eps;
            let bound = d_mean.powf(exponent);
            delta_checks.push(DeltaCheck {
                ell,
                delta,
                bound,
                pass: (delta as f64) < bound,
            });
        }
    }
    let gamma_check = if r >= 2 {
        let b = r - 1;
        let gamma = gamma_b(h, b);
        let bound = d_mean.powf(1.0 - eps);
        Some(GammaCheck {
            b,
            gamma,
            bound,
            pass: (gamma as f64) < bound,
        })
    } else {
        None
    };

    Thm1Report {
        eps,
        num_vertices: h.num_vertices,
        num_edges: h.edges.len(),
        r,
        edge_size_counts: size_counts.into_iter().collect(),
        uniform,
        d_mean,
        d_min,
        d_max,
        regular: d_min == d_max,
        delta_checks,
        gamma_check,
    }
}

/// Fixed-size configurations to count inside produced sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFamily {
    pub s: usize,
    pub members: Vec<Vec<u64>>,
}

/// Number of family members fully inside `set`.
pub fn count_xg(family: &ConfigFamily, set: &[u64]) -> u64 {
    let s: HashSet<u64> = set.iter().copied().collect();
    family
        .members
        .iter()
        .filter(|member| member.iter().all(|v| s.contains(v)))
        .count() as u64
}

/// The negation-pair family `{v, -v}` of the hypergraph's vertex ring,
/// excluding self-paired vertices and members that contain an edge (the
/// configuration count must see only patterns independence allows).
pub fn pm_pair_family(h: &Hypergraph) -> ConfigFamily {
    let m = h.num_vertices;
    let incidence = h.incidence();
    let mut members = Vec::new();
    for v in 1..m {
        let neg = m - v;
        if v >= neg {
            continue;
        }
        let member = [v, neg];
        let contains_edge = incidence[v as usize].iter().any(|&ei| {
            h.edges[ei as usize]
                .iter()
                .all(|u| member.contains(u))
        });
        if !contains_edge {
            members.push(member.to_vec());
        }
    }
    ConfigFamily { s: 2, members }
}
