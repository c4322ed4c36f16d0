//! Deterministic trajectory model for the greedy process.
//!
//! Everything in this module is closed-form; the stochastic side lives in
//! [`crate::engine`]. The process is viewed on the rescaled clock
//! `t = i / sqrt(n)` where `n = m / 2` and `i` counts steps. On that clock the
//! open count tracks `2np` with `p(t) = exp(-3t^2/4)`, and every other tracked
//! variable has a prediction expressed in `n`, `t` and `p`.
//!
//! Around each prediction sits an error envelope `f` and an inner threshold
//! `g`: the critical interval for an upper excursion is
//! `[pred + g, pred + f]`, so a variable is only "in danger" once it drifts
//! past `g`, and the envelope is breached once it passes `f`. The envelopes
//! are self-consistent in the sense of eight variation inequalities: each says
//! that once a variable sits at the edge of its critical interval, its
//! expected one-step drift pushes it back by at least the stated margin. The
//! inequalities collapse, after factoring out a common `n`/`log n`/`p`
//! prefactor, to a polynomial in `t` bounded by a negative constant;
//! [`check_variation`] performs the collapse symbolically and certifies the
//! bound on a grid.
//!
//! Derivatives in `t` are computed analytically from the term algebra in
//! [`sym`]; finite differences appear only in tests as a cross-check.

use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::engine::{Mode, RunRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("parameter {name} = {value} is outside the model domain")]
    Domain { name: &'static str, value: f64 },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    /// The corrected horizon formula only makes sense once the log-log
    /// correction factor drops below 1.
    #[error("asymptotic horizon undefined at n = {0}: log-log correction is not below 1")]
    AsymptoticHorizonUndefined(f64),
    #[error("{0}")]
    ModeUnsupported(&'static str),
}

fn check_n(n: f64) -> Result<(), TrajectoryError> {
    if n > 1.0 && n.is_finite() {
        Ok(())
    } else {
        Err(TrajectoryError::Domain { name: "n", value: n })
    }
}

/// Survival proxy `p(t) = exp(-3t^2/4)`.
pub fn p_of_t(t: f64) -> Result<f64, TrajectoryError> {
    if t >= 0.0 {
        Ok((-0.75 * t * t).exp())
    } else {
        // also rejects NaN
        Err(TrajectoryError::Domain { name: "t", value: t })
    }
}

/// Rescaled clock for step `i` at scale `n`.
pub fn t_of_step(i: u64, n: f64) -> f64 {
    i as f64 / n.sqrt()
}

/// Upper end of the time range the envelopes are designed for.
pub fn t_max(n: f64) -> Result<f64, TrajectoryError> {
    check_n(n)?;
    Ok((n.ln() / 3.0).sqrt())
}

/// Symbolic terms of the form `n^a (log n)^b p(t)^c q(t)` with `q` a
/// polynomial, closed under the operations the variation inequalities need:
/// scaling, multiplication by `t`, products, exponent shifts and `d/dt`.
pub mod sym {
    use num_rational::Ratio;

    /// Exact rational exponent; the tables use quarters and thirds.
    pub type Exp = Ratio<i32>;

    pub fn ex(num: i32, den: i32) -> Exp {
        Ratio::new(num, den)
    }

    fn exf(e: Exp) -> f64 {
        *e.numer() as f64 / *e.denom() as f64
    }

    /// Polynomial in `t`; index is the power.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Poly(pub Vec<f64>);

    impl Poly {
        pub fn new(coeffs: &[f64]) -> Self {
            Poly(coeffs.to_vec())
        }

        pub fn eval(&self, t: f64) -> f64 {
            self.0.iter().rev().fold(0.0, |acc, &c| acc * t + c)
        }

        pub fn deriv(&self) -> Poly {
            if self.0.len() <= 1 {
                return Poly(vec![0.0]);
            }
            Poly(
                self.0[1..]
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| (k as f64 + 1.0) * c)
                    .collect(),
            )
        }

        pub fn mul_t(&self) -> Poly {
            let mut c = vec![0.0];
            c.extend_from_slice(&self.0);
            Poly(c)
        }

        pub fn scale(&self, k: f64) -> Poly {
            Poly(self.0.iter().map(|&c| k * c).collect())
        }

        pub fn add(&self, other: &Poly) -> Poly {
            let mut out = vec![0.0; self.0.len().max(other.0.len())];
            for (i, &c) in self.0.iter().enumerate() {
                out[i] += c;
            }
            for (i, &c) in other.0.iter().enumerate() {
                out[i] += c;
            }
            Poly(out)
        }

        pub fn mul(&self, other: &Poly) -> Poly {
            let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
            for (i, &a) in self.0.iter().enumerate() {
                for (j, &b) in other.0.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            Poly(out)
        }

        /// Coefficients with trailing zeros removed (constant 0 stays `[0]`).
        pub fn trimmed(&self) -> Vec<f64> {
            let mut c = self.0.clone();
            while c.len() > 1 && c.last() == Some(&0.0) {
                c.pop();
            }
            c
        }
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Term {
        pub n_exp: Exp,
        pub log_exp: i32,
        pub p_exp: Exp,
        pub poly: Poly,
    }

    impl Term {
        pub fn key(&self) -> (Exp, i32, Exp) {
            (self.n_exp, self.log_exp, self.p_exp)
        }

        /// Assumes `n > 1` so `log n > 0`.
        pub fn eval(&self, n: f64, t: f64) -> f64 {
            let p = (-0.75 * t * t).exp();
            n.powf(exf(self.n_exp))
                * n.ln().powi(self.log_exp)
                * p.powf(exf(self.p_exp))
                * self.poly.eval(t)
        }

        pub fn prefactor(&self, n: f64, t: f64) -> f64 {
            let p = (-0.75 * t * t).exp();
            n.powf(exf(self.n_exp)) * n.ln().powi(self.log_exp) * p.powf(exf(self.p_exp))
        }

        /// Analytic `d/dt`. Since `(p^c)' = -(3/2) c t p^c`, the derivative
        /// keeps the prefactor and maps `q` to `q' - (3/2) c t q`.
        pub fn d_dt(&self) -> Term {
            let chain = self.poly.mul_t().scale(-1.5 * exf(self.p_exp));
            Term {
                poly: self.poly.deriv().add(&chain),
                ..self.clone()
            }
        }

        pub fn scaled(&self, k: f64) -> Term {
            Term {
                poly: self.poly.scale(k),
                ..self.clone()
            }
        }

        pub fn times_t(&self) -> Term {
            Term {
                poly: self.poly.mul_t(),
                ..self.clone()
            }
        }

        /// Multiply by `n^dn (log n)^dlog p^dp`.
        pub fn shifted(&self, dn: Exp, dlog: i32, dp: Exp) -> Term {
            Term {
                n_exp: self.n_exp + dn,
                log_exp: self.log_exp + dlog,
                p_exp: self.p_exp + dp,
                poly: self.poly.clone(),
            }
        }

        pub fn mul(&self, other: &Term) -> Term {
            Term {
                n_exp: self.n_exp + other.n_exp,
                log_exp: self.log_exp + other.log_exp,
                p_exp: self.p_exp + other.p_exp,
                poly: self.poly.mul(&other.poly),
            }
        }
    }

    /// Sum of terms.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Expr(pub Vec<Term>);

    impl Expr {
        pub fn eval(&self, n: f64, t: f64) -> f64 {
            self.0.iter().map(|term| term.eval(n, t)).sum()
        }

        /// Collapse to a single term. Fails if the terms do not all share one
        /// `(n, log, p)` exponent triple.
        pub fn reduce(&self) -> Result<Term, &'static str> {
            let mut groups: Vec<Term> = Vec::new();
            for term in &self.0 {
                match groups.iter_mut().find(|g| g.key() == term.key()) {
                    Some(g) => g.poly = g.poly.add(&term.poly),
                    None => groups.push(term.clone()),
                }
            }
            match groups.len() {
                0 => Err("empty expression"),
                1 => Ok(groups.pop().unwrap()),
                _ => Err("prefactors do not collapse to a single term"),
            }
        }
    }
}

use sym::{ex, Expr, Poly, Term};

fn term(n_num: i32, n_den: i32, log_exp: i32, p_num: i32, p_den: i32, coeffs: &[f64]) -> Term {
    Term {
        n_exp: ex(n_num, n_den),
        log_exp,
        p_exp: ex(p_num, p_den),
        poly: Poly::new(coeffs),
    }
}

/// Variables with a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PredictVar {
    Q,
    E2,
    E3,
    D3L,
    D3R,
    D2L,
    D2R,
    D3R0,
    D2R0,
    D1R0,
}

impl PredictVar {
    pub const ALL: [PredictVar; 10] = [
        PredictVar::Q,
        PredictVar::E2,
        PredictVar::E3,
        PredictVar::D3L,
        PredictVar::D3R,
        PredictVar::D2L,
        PredictVar::D2R,
        PredictVar::D3R0,
        PredictVar::D2R0,
        PredictVar::D1R0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictVar::Q => "Q",
            PredictVar::E2 => "E2",
            PredictVar::E3 => "E3",
            PredictVar::D3L => "D3L",
            PredictVar::D3R => "D3R",
            PredictVar::D2L => "D2L",
            PredictVar::D2R => "D2R",
            PredictVar::D3R0 => "D3R0",
            PredictVar::D2R0 => "D2R0",
            PredictVar::D1R0 => "D1R0",
        }
    }
}

impl FromStr for PredictVar {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PredictVar::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrajectoryError::UnknownVariable(s.to_string()))
    }
}

impl fmt::Display for PredictVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Predicted value at scale `n` and rescaled time `t`.
///
/// The zero-vertex predictions are the continuum forms; at desk scales they
/// can differ from the exact initial counts (at `n = 4`, `D3R0` starts at 3
/// while the prediction gives `n p^{4/3} = 4`).
pub fn predict(var: PredictVar, n: f64, t: f64) -> Result<f64, TrajectoryError> {
    check_n(n)?;
    let p = p_of_t(t)?;
    Ok(match var {
        PredictVar::Q => 2.0 * n * p,
        PredictVar::E2 => 3.0 * n.powf(1.5) * t * p * p,
        PredictVar::E3 => 2.0 * n * n * p.powi(3),
        PredictVar::D3L => 2.0 * n * p * p,
        PredictVar::D3R => n * p * p,
        PredictVar::D2L => 2.0 * n.sqrt() * t * p,
        PredictVar::D2R => n.sqrt() * t * p,
        PredictVar::D3R0 => n * p.powf(4.0 / 3.0),
        PredictVar::D2R0 => n.sqrt() * t * p.powf(1.0 / 3.0),
        PredictVar::D1R0 => 0.5 * (p.powf(-2.0 / 3.0) - 1.0),
    })
}

/// Error-envelope families. Trajectory variables map onto these via
/// [`envelope_of`]; the `L` variants reuse the same family with multiplier 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnvelopeVar {
    D2,
    D2Zero,
    D3,
    D3Zero,
    E2,
    E3,
    Q,
    D1Zero,
}

impl EnvelopeVar {
    pub const ALL: [EnvelopeVar; 8] = [
        EnvelopeVar::D2,
        EnvelopeVar::D2Zero,
        EnvelopeVar::D3,
        EnvelopeVar::D3Zero,
        EnvelopeVar::E2,
        EnvelopeVar::E3,
        EnvelopeVar::Q,
        EnvelopeVar::D1Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvelopeVar::D2 => "d2",
            EnvelopeVar::D2Zero => "d2_0",
            EnvelopeVar::D3 => "d3",
            EnvelopeVar::D3Zero => "d3_0",
            EnvelopeVar::E2 => "e2",
            EnvelopeVar::E3 => "e3",
            EnvelopeVar::Q => "q",
            EnvelopeVar::D1Zero => "d1_0",
        }
    }
}

impl FromStr for EnvelopeVar {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvelopeVar::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrajectoryError::UnknownVariable(s.to_string()))
    }
}

impl fmt::Display for EnvelopeVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Single-term envelopes; `D1Zero` is the one two-term case and is handled
/// separately.
fn f_single(v: EnvelopeVar) -> Term {
    match v {
        EnvelopeVar::D2 => term(1, 4, 3, 0, 1, &[1.0, 3.0, 2.0, 3.0]),
        EnvelopeVar::D2Zero => term(1, 4, 3, -2, 3, &[1.0, 2.0, 2.0, 2.0]),
        EnvelopeVar::D3 => term(3, 4, 3, 1, 1, &[1.0, 4.0, 7.0]),
        EnvelopeVar::D3Zero => term(3, 4, 3, 1, 3, &[1.0, 3.0, 5.0]),
        EnvelopeVar::E2 => term(1, 1, 6, 0, 1, &[1.0, 20.0, 70.0, 130.0, 100.0, 120.0]),
        EnvelopeVar::E3 => term(3, 2, 6, 1, 1, &[1.0, 20.0, 70.0, 160.0, 150.0]),
        EnvelopeVar::Q => term(1, 2, 6, -1, 1, &[1.0, 2.0, 10.0, 35.0, 40.0]),
        EnvelopeVar::D1Zero => unreachable!("d1_0 envelope is not a single term"),
    }
}

/// `g = f` minus the leading prefactor unit; the difference is the critical
/// interval width.
fn g_single(v: EnvelopeVar) -> Term {
    let mut t = f_single(v);
    t.poly.0[0] = 0.0;
    t
}

/// Interval-width term `f - g` (poly is the constant 1).
fn width_single(v: EnvelopeVar) -> Term {
    let mut t = f_single(v);
    t.poly = Poly::new(&[1.0]);
    t
}

/// Drift-compensation envelope for the zero-vertex pair counter.
fn h_term() -> Term {
    term(-1, 4, 3, -5, 3, &[2.0, 2.0, 2.0])
}

pub fn h_d1_zero(n: f64, t: f64) -> Result<f64, TrajectoryError> {
    check_n(n)?;
    p_of_t(t)?;
    Ok(h_term().eval(n, t))
}

/// `(f, g)` for an envelope family. For `d1_0` the returned pair is
/// `(h + p^{-1/3} log n, h)`, so the width is `p^{-1/3} log n`.
pub fn envelope(var: EnvelopeVar, n: f64, t: f64) -> Result<(f64, f64), TrajectoryError> {
    check_n(n)?;
    p_of_t(t)?;
    Ok(match var {
        EnvelopeVar::D1Zero => {
            let h = h_term().eval(n, t);
            let extra = term(0, 1, 1, -1, 3, &[1.0]).eval(n, t);
            (h + extra, h)
        }
        v => (f_single(v).eval(n, t), g_single(v).eval(n, t)),
    })
}

/// Envelope family and multiplier backing each trajectory variable.
pub fn envelope_of(var: PredictVar) -> (EnvelopeVar, f64) {
    match var {
        PredictVar::Q => (EnvelopeVar::Q, 1.0),
        PredictVar::E2 => (EnvelopeVar::E2, 1.0),
        PredictVar::E3 => (EnvelopeVar::E3, 1.0),
        PredictVar::D3L => (EnvelopeVar::D3, 2.0),
        PredictVar::D3R => (EnvelopeVar::D3, 1.0),
        PredictVar::D2L => (EnvelopeVar::D2, 2.0),
        PredictVar::D2R => (EnvelopeVar::D2, 1.0),
        PredictVar::D3R0 => (EnvelopeVar::D3Zero, 1.0),
        PredictVar::D2R0 => (EnvelopeVar::D2Zero, 1.0),
        PredictVar::D1R0 => (EnvelopeVar::D1Zero, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

impl FromStr for Side {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "upper" => Ok(Side::Upper),
            "lower" => Ok(Side::Lower),
            other => Err(TrajectoryError::UnknownVariable(other.to_string())),
        }
    }
}

/// Band center. `E2` and `E3` track the open count rather than its
/// prediction, so their centers take the observed `Q`; with
/// `observed_q = None` the predicted `Q = 2np` is substituted, which recovers
/// the plain predictions exactly.
pub fn band_center(
    var: PredictVar,
    n: f64,
    t: f64,
    observed_q: Option<f64>,
) -> Result<f64, TrajectoryError> {
    check_n(n)?;
    p_of_t(t)?;
    match var {
        PredictVar::E2 => {
            let q = match observed_q {
                Some(q) => q,
                None => predict(PredictVar::Q, n, t)?,
            };
            Ok(0.75 * q * q * t / n.sqrt())
        }
        PredictVar::E3 => {
            let q = match observed_q {
                Some(q) => q,
                None => predict(PredictVar::Q, n, t)?,
            };
            Ok(q * q * q / (4.0 * n))
        }
        v => predict(v, n, t),
    }
}

/// Critical interval for one side of a variable's band: the variable is
/// "in play" once it enters the interval and breaches the envelope at the far
/// end. Upper side is `[center + mult*g, center + mult*f]`; the lower side
/// mirrors it.
pub fn critical_interval(
    var: PredictVar,
    side: Side,
    n: f64,
    t: f64,
    observed_q: Option<f64>,
) -> Result<(f64, f64), TrajectoryError> {
    let center = band_center(var, n, t, observed_q)?;
    let (family, mult) = envelope_of(var);
    let (f, g) = envelope(family, n, t)?;
    Ok(match side {
        Side::Upper => (center + mult * g, center + mult * f),
        Side::Lower => (center - mult * f, center - mult * g),
    })
}

/// Normalized deviation of the open count from its trajectory.
pub fn dev_q(q: f64, n: f64, t: f64) -> Result<f64, TrajectoryError> {
    let pred = predict(PredictVar::Q, n, t)?;
    let (f, _) = envelope(EnvelopeVar::Q, n, t)?;
    Ok((q - pred) / f)
}

/// Normalized deviation of `E2` from its open-count-relative center.
pub fn dev_e2(e2: f64, q: f64, n: f64, t: f64) -> Result<f64, TrajectoryError> {
    let center = band_center(PredictVar::E2, n, t, Some(q))?;
    let (f, _) = envelope(EnvelopeVar::E2, n, t)?;
    Ok((e2 - center) / f)
}

/// Normalized deviation of `E3` from its open-count-relative center.
pub fn dev_e3(e3: f64, q: f64, n: f64, t: f64) -> Result<f64, TrajectoryError> {
    let center = band_center(PredictVar::E3, n, t, Some(q))?;
    let (f, _) = envelope(EnvelopeVar::E3, n, t)?;
    Ok((e3 - center) / f)
}

/// Step horizon `round(c * sqrt(n) * sqrt(log n))`.
pub fn horizon(n: f64, c: f64) -> Result<u64, TrajectoryError> {
    check_n(n)?;
    if c.is_nan() || c < 0.0 {
        return Err(TrajectoryError::Domain { name: "c", value: c });
    }
    Ok((c * n.sqrt() * n.ln().sqrt()).round() as u64)
}

/// Horizon with the log-log correction,
/// `(1/sqrt(3)) (1 - 20 loglog n / log n) sqrt(n log n)`.
///
/// Only meaningful once the correction factor is positive; for every `n` with
/// `20 loglog n >= log n` (which includes all practical scales, e.g. `n = 1e6`)
/// this returns [`TrajectoryError::AsymptoticHorizonUndefined`].
pub fn i0_asymptotic(n: f64) -> Result<f64, TrajectoryError> {
    check_n(n)?;
    let l = n.ln();
    let ll = l.ln();
    if 20.0 * ll >= l {
        return Err(TrajectoryError::AsymptoticHorizonUndefined(n));
    }
    Ok((1.0 / 3f64.sqrt()) * (1.0 - 20.0 * ll / l) * n.sqrt() * l.sqrt())
}

/// The eight drift-dominance certificates, one per envelope family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VariationId {
    #[serde(rename = "VE_d2")]
    VeD2,
    #[serde(rename = "VE_d2r")]
    VeD2r,
    #[serde(rename = "VE_d3")]
    VeD3,
    #[serde(rename = "VE_d3r")]
    VeD3r,
    #[serde(rename = "VE_e2")]
    VeE2,
    #[serde(rename = "VE_e3")]
    VeE3,
    #[serde(rename = "VE_q")]
    VeQ,
    #[serde(rename = "VE_c0")]
    VeC0,
}

impl VariationId {
    pub const ALL: [VariationId; 8] = [
        VariationId::VeD2,
        VariationId::VeD2r,
        VariationId::VeD3,
        VariationId::VeD3r,
        VariationId::VeE2,
        VariationId::VeE3,
        VariationId::VeQ,
        VariationId::VeC0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariationId::VeD2 => "VE_d2",
            VariationId::VeD2r => "VE_d2r",
            VariationId::VeD3 => "VE_d3",
            VariationId::VeD3r => "VE_d3r",
            VariationId::VeE2 => "VE_e2",
            VariationId::VeE3 => "VE_e3",
            VariationId::VeQ => "VE_q",
            VariationId::VeC0 => "VE_c0",
        }
    }
}

impl FromStr for VariationId {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariationId::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrajectoryError::UnknownVariable(s.to_string()))
    }
}

impl fmt::Display for VariationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Left-hand side (worst-case drift at the upper critical edge) and
/// right-hand side (required restoring margin) of one variation inequality.
/// Both sides share one prefactor, which is what `reduce` exploits.
fn variation_parts(id: VariationId) -> (Expr, Term) {
    use EnvelopeVar::*;
    let m12 = ex(-1, 2); // n^{-1/2}
    let zero = ex(0, 1);
    match id {
        // 2 n^{-1} p^{-1} f_d3 + 3 n^{-1/2} t (f_d2 - g_d2) - 2 n^{-1/2} f_d2'
        VariationId::VeD2 => {
            let lhs = Expr(vec![
                f_single(D3).shifted(ex(-1, 1), 0, ex(-1, 1)).scaled(2.0),
                width_single(D2).times_t().shifted(m12, 0, zero).scaled(3.0),
                f_single(D2).d_dt().shifted(m12, 0, zero).scaled(-2.0),
            ]);
            (lhs, term(-1, 4, 3, 0, 1, &[-1.0]))
        }
        // -1/2 n^{-1/2} t g_d2_0 + n^{-1} p^{-1} f_d3_0
        //   + 1/2 n^{-1/2} t p^{-2/3} f_d2 - n^{-1/2} f_d2_0'
        VariationId::VeD2r => {
            let lhs = Expr(vec![
                g_single(D2Zero).times_t().shifted(m12, 0, zero).scaled(-0.5),
                f_single(D3Zero).shifted(ex(-1, 1), 0, ex(-1, 1)),
                f_single(D2).times_t().shifted(m12, 0, ex(-2, 3)).scaled(0.5),
                f_single(D2Zero).d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(-1, 4, 3, -2, 3, &[-1.0]))
        }
        // -6 n^{-1/2} t g_d3 + 6 p f_d2 - 2 n^{-1/2} f_d3'
        VariationId::VeD3 => {
            let lhs = Expr(vec![
                g_single(D3).times_t().shifted(m12, 0, zero).scaled(-6.0),
                f_single(D2).shifted(zero, 0, ex(1, 1)).scaled(6.0),
                f_single(D3).d_dt().shifted(m12, 0, zero).scaled(-2.0),
            ]);
            (lhs, term(1, 4, 3, 1, 1, &[-2.0]))
        }
        // -2 n^{-1/2} t g_d3_0 + 2 p^{1/3} f_d2 - n^{-1/2} f_d3_0'
        VariationId::VeD3r => {
            let lhs = Expr(vec![
                g_single(D3Zero).times_t().shifted(m12, 0, zero).scaled(-2.0),
                f_single(D2).shifted(zero, 0, ex(1, 3)).scaled(2.0),
                f_single(D3Zero).d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(1, 4, 3, 1, 3, &[-1.0]))
        }
        // 3/2 n^{-1} p^{-1} f_e3 - 3 n^{-1/2} t g_e2 + 18 f_d2^2 - n^{-1/2} f_e2'
        VariationId::VeE2 => {
            let fd2 = f_single(D2);
            let lhs = Expr(vec![
                f_single(E3).shifted(ex(-1, 1), 0, ex(-1, 1)).scaled(1.5),
                g_single(E2).times_t().shifted(m12, 0, zero).scaled(-3.0),
                fd2.mul(&fd2).scaled(18.0),
                f_single(E2).d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(1, 2, 6, 0, 1, &[-0.5]))
        }
        // -9/2 n^{-1/2} t g_e3 + 18 f_d2 f_d3 - n^{-1/2} f_e3'
        VariationId::VeE3 => {
            let lhs = Expr(vec![
                g_single(E3).times_t().shifted(m12, 0, zero).scaled(-4.5),
                f_single(D2).mul(&f_single(D3)).scaled(18.0),
                f_single(E3).d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(1, 1, 6, 1, 1, &[-2.0]))
        }
        // n^{-1} p^{-1} f_e2 - 3/2 n^{-1/2} t g_q - n^{-1/2} f_q'
        VariationId::VeQ => {
            let lhs = Expr(vec![
                f_single(E2).shifted(ex(-1, 1), 0, ex(-1, 1)),
                g_single(Q).times_t().shifted(m12, 0, zero).scaled(-1.5),
                f_single(Q).d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(0, 1, 6, -1, 1, &[-1.0]))
        }
        // 1/2 n^{-1} p^{-1} f_d2_0 - n^{-1/2} h'
        VariationId::VeC0 => {
            let lhs = Expr(vec![
                f_single(D2Zero).shifted(ex(-1, 1), 0, ex(-1, 1)).scaled(0.5),
                h_term().d_dt().shifted(m12, 0, zero).scaled(-1.0),
            ]);
            (lhs, term(-3, 4, 3, -5, 3, &[-1.5]))
        }
    }
}

/// Shared prefactor of a reduced inequality, reported as exact exponent pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prefactor {
    pub n_exp: (i32, i32),
    pub log_exp: i32,
    pub p_exp: (i32, i32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationReport {
    pub id: VariationId,
    pub n: f64,
    pub holds: bool,
    /// Minimum over the grid of `rhs - reduced_poly(t)`; the inequality holds
    /// iff this stays nonnegative (up to float tolerance).
    pub margin_min: f64,
    pub argmin_t: f64,
    /// Coefficients of the collapsed left side, constant term first.
    pub reduced_polynomial: Vec<f64>,
    pub rhs_constant: f64,
    pub prefactor: Prefactor,
    /// Smallest `n` from a fixed ladder at which the inequality holds over its
    /// whole design range `[0, t_max(n)]`.
    pub min_valid_n: Option<f64>,
    /// Worst relative disagreement between term-wise evaluation and
    /// prefactor-times-polynomial across the grid.
    pub grid_max_rel_err: f64,
}

const VARIATION_TOL: f64 = 1e-9;

/// Uniform grid `0, step, 2*step, ..., t_max(n)` (endpoint included).
pub fn t_grid(n: f64, step: f64) -> Result<Vec<f64>, TrajectoryError> {
    if step.is_nan() || step <= 0.0 {
        return Err(TrajectoryError::Domain {
            name: "step",
            value: step,
        });
    }
    let tm = t_max(n)?;
    let mut grid = Vec::with_capacity((tm / step) as usize + 2);
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t >= tm {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(tm);
    Ok(grid)
}

fn reduced_holds_over(poly: &Poly, rhs: f64, n: f64, step: f64) -> bool {
    let Ok(grid) = t_grid(n, step) else {
        return false;
    };
    let tol = VARIATION_TOL * (1.0 + rhs.abs());
    grid.iter().all(|&t| poly.eval(t) <= rhs + tol)
}

/// Collapse one variation inequality and certify it on a grid.
pub fn check_variation(
    id: VariationId,
    n: f64,
    grid: &[f64],
) -> Result<VariationReport, TrajectoryError> {
    check_n(n)?;
    if grid.is_empty() {
        return Err(TrajectoryError::Domain {
            name: "grid",
            value: 0.0,
        });
    }
    let (lhs, rhs) = variation_parts(id);
    let reduced = lhs
        .reduce()
        .expect("every variation inequality collapses to one prefactor");
    assert_eq!(
        reduced.key(),
        rhs.key(),
        "both sides of a variation inequality share the prefactor"
    );
    let rhs_constant = rhs.poly.0[0];

    let mut margin_min = f64::INFINITY;
    let mut argmin_t = 0.0;
    let mut grid_max_rel_err = 0.0f64;
    for &t in grid {
        p_of_t(t)?;
        let margin = rhs_constant - reduced.poly.eval(t);
        if margin < margin_min {
            margin_min = margin;
            argmin_t = t;
        }
        let term_wise = lhs.eval(n, t);
        let collapsed = reduced.prefactor(n, t) * reduced.poly.eval(t);
        let rel = (term_wise - collapsed).abs() / (1.0 + collapsed.abs());
        grid_max_rel_err = grid_max_rel_err.max(rel);
    }
    let holds = margin_min >= -VARIATION_TOL * (1.0 + rhs_constant.abs());

    let ladder = [3.0, 4.0, 8.0, 16.0, 32.0, 100.0, 1e3, 1e4, 1e6, 1e8];
    let min_valid_n = ladder
        .into_iter()
        .filter(|&cand| cand <= n.max(1e8))
        .find(|&cand| reduced_holds_over(&reduced.poly, rhs_constant, cand, 1e-3));

    Ok(VariationReport {
        id,
        n,
        holds,
        margin_min,
        argmin_t,
        reduced_polynomial: reduced.poly.trimmed(),
        rhs_constant,
        prefactor: Prefactor {
            n_exp: (*reduced.n_exp.numer(), *reduced.n_exp.denom()),
            log_exp: reduced.log_exp,
            p_exp: (*reduced.p_exp.numer(), *reduced.p_exp.denom()),
        },
        min_valid_n,
        grid_max_rel_err,
    })
}

/// All eight certificates on the default grid (step 1e-3).
pub fn check_all_variations(n: f64) -> Result<Vec<VariationReport>, TrajectoryError> {
    let grid = t_grid(n, 1e-3)?;
    VariationId::ALL
        .into_iter()
        .map(|id| check_variation(id, n, &grid))
        .collect()
}

/// First recorded step at which any tracked variable leaves its band, or
/// `None` if the whole record stays inside. Bands whose inputs a snapshot
/// does not carry are skipped; lean runs are rejected outright since they
/// do not carry the ledger the band set is about.
///
/// `n` is taken explicitly rather than from `run.m` so the audit can be
/// pointed at synthetic records; for engine output pass `run.m as f64 / 2.0`.
pub fn stopping_time_t(run: &RunRecord, n: f64) -> Result<Option<u64>, TrajectoryError> {
    check_n(n)?;
    if run.mode == Mode::Lean {
        return Err(TrajectoryError::ModeUnsupported(
            "stopping-time audit requires full-ledger snapshots",
        ));
    }
    let sqrt_n = n.sqrt();
    let log_sq = n.ln() * n.ln();
    for snap in &run.snapshots {
        let t = snap.step as f64 / sqrt_n;
        let p = p_of_t(t)?;
        let q = snap.q as f64;

        let (f_q, _) = envelope(EnvelopeVar::Q, n, t)?;
        if (q - 2.0 * n * p).abs() > f_q {
            return Ok(Some(snap.step));
        }

        if let Some(e2) = snap.e2 {
            let (f_e2, _) = envelope(EnvelopeVar::E2, n, t)?;
            let center = band_center(PredictVar::E2, n, t, Some(q))?;
            if (e2 as f64 - center).abs() > f_e2 {
                return Ok(Some(snap.step));
            }
        }
        if let Some(e3) = snap.e3 {
            let (f_e3, _) = envelope(EnvelopeVar::E3, n, t)?;
            let center = band_center(PredictVar::E3, n, t, Some(q))?;
            if (e3 as f64 - center).abs() > f_e3 {
                return Ok(Some(snap.step));
            }
        }
        if let Some(d3r0) = snap.d3r0 {
            let (f, _) = envelope(EnvelopeVar::D3Zero, n, t)?;
            if (d3r0 as f64 - predict(PredictVar::D3R0, n, t)?).abs() > f {
                return Ok(Some(snap.step));
            }
        }
        if let Some(d2r0) = snap.d2r0 {
            let (f, _) = envelope(EnvelopeVar::D2Zero, n, t)?;
            if (d2r0 as f64 - predict(PredictVar::D2R0, n, t)?).abs() > f {
                return Ok(Some(snap.step));
            }
        }
        {
            let (f, _) = envelope(EnvelopeVar::D1Zero, n, t)?;
            if (snap.d1r0 as f64 - predict(PredictVar::D1R0, n, t)?).abs() > f {
                return Ok(Some(snap.step));
            }
        }
        if let Some(max_d1) = snap.max_d1_nonzero {
            if max_d1 as f64 > log_sq {
                return Ok(Some(snap.step));
            }
        }
        if let Some(ext) = &snap.extremes {
            let (f_d3, _) = envelope(EnvelopeVar::D3, n, t)?;
            let (f_d2, _) = envelope(EnvelopeVar::D2, n, t)?;
            let bands = [
                (ext.d3l, predict(PredictVar::D3L, n, t)?, 2.0 * f_d3),
                (ext.d3r, predict(PredictVar::D3R, n, t)?, f_d3),
                (ext.d2l, predict(PredictVar::D2L, n, t)?, 2.0 * f_d2),
                (ext.d2r, predict(PredictVar::D2R, n, t)?, f_d2),
            ];
            for (range, center, width) in bands {
                if let Some((lo, hi)) = range {
                    if (lo as f64) < center - width || (hi as f64) > center + width {
                        return Ok(Some(snap.step));
                    }
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Mode, ProcessState, StopRule, TrajectorySnapshot};

    fn assert_close(a: f64, b: f64, rel: f64) {
        assert!(
            (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs())),
            "{a} vs {b}"
        );
    }

    #[test]
    fn p_examples() {
        assert_eq!(p_of_t(0.0).unwrap(), 1.0);
        assert_close(p_of_t(2.0).unwrap(), (-3.0f64).exp(), 1e-15);
        assert!(matches!(
            p_of_t(-0.1),
            Err(TrajectoryError::Domain { name: "t", .. })
        ));
        assert!(p_of_t(f64::NAN).is_err());
    }

    #[test]
    fn p_at_corrected_horizon_matches_identity() {
        // p(t(i0)) = n^{-1/4} (log n)^10 exp(-100 (loglog n)^2 / log n)
        for l in [100.0f64, 50.0 * 3.0] {
            let n = l.exp();
            let i0 = i0_asymptotic(n).unwrap();
            let p = p_of_t(i0 / n.sqrt()).unwrap();
            let ll = l.ln();
            let identity = n.powf(-0.25) * l.powi(10) * (-100.0 * ll * ll / l).exp();
            assert_close(p, identity, 1e-10);
        }
    }

    #[test]
    fn predictions_at_time_zero() {
        let n = 100.0;
        assert_eq!(predict(PredictVar::Q, n, 0.0).unwrap(), 200.0);
        assert_eq!(predict(PredictVar::E2, n, 0.0).unwrap(), 0.0);
        assert_eq!(predict(PredictVar::E3, n, 0.0).unwrap(), 20000.0);
        assert_eq!(predict(PredictVar::D1R0, n, 0.0).unwrap(), 0.0);
        // Continuum form, one off the exact initial count of 3 at this scale.
        assert_eq!(predict(PredictVar::D3R0, 4.0, 0.0).unwrap(), 4.0);
    }

    #[test]
    fn open_count_relative_centers_match_predictions() {
        // Substituting Q = 2np into the E2/E3 centers recovers the plain
        // predictions exactly.
        for &(n, t) in &[(1e6, 0.3), (1e6, 1.0), (250.0, 0.8)] {
            for var in [PredictVar::E2, PredictVar::E3] {
                let with_default_q = band_center(var, n, t, None).unwrap();
                assert_close(with_default_q, predict(var, n, t).unwrap(), 1e-12);
            }
        }
    }

    #[test]
    fn envelope_examples() {
        let n = 1e4f64;
        let l3 = n.ln().powi(3);
        let (f, g) = envelope(EnvelopeVar::D2, n, 0.0).unwrap();
        assert_close(f, n.powf(0.25) * l3, 1e-12);
        assert_eq!(g, 0.0);

        let (f_q, g_q) = envelope(EnvelopeVar::Q, n, 0.0).unwrap();
        assert_close(f_q, n.sqrt() * n.ln().powi(6), 1e-12);
        assert_eq!(g_q, 0.0);

        // d1_0: width is p^{-1/3} log n, inner edge is h.
        let t = 0.7;
        let (f0, g0) = envelope(EnvelopeVar::D1Zero, n, t).unwrap();
        let h = h_d1_zero(n, t).unwrap();
        let p = p_of_t(t).unwrap();
        assert_eq!(g0, h);
        assert_close(f0 - g0, p.powf(-1.0 / 3.0) * n.ln(), 1e-12);
        assert_close(
            h,
            n.powf(-0.25) * l3 * (2.0 + 2.0 * t + 2.0 * t * t) * p.powf(-5.0 / 3.0),
            1e-12,
        );
    }

    #[test]
    fn unknown_variable_names_are_rejected() {
        assert!(matches!(
            "bogus".parse::<PredictVar>(),
            Err(TrajectoryError::UnknownVariable(_))
        ));
        assert!(matches!(
            "d4".parse::<EnvelopeVar>(),
            Err(TrajectoryError::UnknownVariable(_))
        ));
        assert_eq!("VE_q".parse::<VariationId>().unwrap(), VariationId::VeQ);
        assert_eq!("d2_0".parse::<EnvelopeVar>().unwrap(), EnvelopeVar::D2Zero);
        assert_eq!("D1R0".parse::<PredictVar>().unwrap(), PredictVar::D1R0);
    }

    #[test]
    fn critical_interval_shapes() {
        let (n, t) = (1e4, 0.5);
        let p = p_of_t(t).unwrap();

        // D2L carries multiplier 2 on the shared d2 envelope.
        let (lo, hi) = critical_interval(PredictVar::D2L, Side::Upper, n, t, None).unwrap();
        let center = 2.0 * n.sqrt() * t * p;
        let (f, g) = envelope(EnvelopeVar::D2, n, t).unwrap();
        assert_close(lo, center + 2.0 * g, 1e-12);
        assert_close(hi, center + 2.0 * f, 1e-12);

        // D2R shares the envelope at multiplier 1 and mirrors on the lower side.
        let (lo_r, hi_r) = critical_interval(PredictVar::D2R, Side::Lower, n, t, None).unwrap();
        let center_r = n.sqrt() * t * p;
        assert_close(lo_r, center_r - f, 1e-12);
        assert_close(hi_r, center_r - g, 1e-12);

        // E3 tracks the observed open count.
        let q = 1.9 * n;
        let (lo3, hi3) = critical_interval(PredictVar::E3, Side::Upper, n, t, Some(q)).unwrap();
        let (f3, g3) = envelope(EnvelopeVar::E3, n, t).unwrap();
        assert_close(lo3, q * q * q / (4.0 * n) + g3, 1e-12);
        assert_close(hi3, q * q * q / (4.0 * n) + f3, 1e-12);
    }

    #[test]
    fn horizon_pins() {
        let c = 1.0 / 3f64.sqrt();
        assert_eq!(horizon(1e4, c).unwrap(), 175);
        assert_eq!(horizon(4096.0, c).unwrap(), 107);
        assert_eq!(horizon(1e4, (2.0f64 / 3.0).sqrt()).unwrap(), 248);
        assert_eq!(horizon(4.0, c).unwrap(), 1);
        assert!(horizon(0.5, c).is_err());
    }

    #[test]
    fn corrected_horizon_domain() {
        assert!(matches!(
            i0_asymptotic(1e6),
            Err(TrajectoryError::AsymptoticHorizonUndefined(_))
        ));
        assert!(matches!(
            i0_asymptotic(3.0),
            Err(TrajectoryError::AsymptoticHorizonUndefined(_))
        ));
        let n = 100.0f64.exp();
        let i0 = i0_asymptotic(n).unwrap();
        assert!(i0 > 0.0 && i0.is_finite());
        // Correction factor stays below the uncorrected horizon.
        assert!(i0 < n.sqrt() * n.ln().sqrt() / 3f64.sqrt());
    }

    #[test]
    fn t_max_examples() {
        assert_close(t_max(3.0f64.exp()).unwrap(), 1.0, 1e-12);
        assert!(t_max(1.0).is_err());
    }

    #[test]
    fn reduced_polynomials_are_pinned() {
        let grid = t_grid(1e4, 1e-2).unwrap();
        let expect: [(VariationId, &[f64], f64, Prefactor); 8] = [
            (
                VariationId::VeD2,
                &[-4.0, 3.0, -4.0],
                -1.0,
                Prefactor { n_exp: (-1, 4), log_exp: 3, p_exp: (0, 1) },
            ),
            (
                VariationId::VeD2r,
                &[-1.0, -1.5, -2.5, -2.0, -1.5],
                -1.0,
                Prefactor { n_exp: (-1, 4), log_exp: 3, p_exp: (-2, 3) },
            ),
            (
                VariationId::VeD3,
                &[-2.0, -7.0, 0.0, -3.0],
                -2.0,
                Prefactor { n_exp: (1, 4), log_exp: 3, p_exp: (1, 1) },
            ),
            (
                VariationId::VeD3r,
                &[-1.0, -3.5, -0.5, -1.5],
                -1.0,
                Prefactor { n_exp: (1, 4), log_exp: 3, p_exp: (1, 3) },
            ),
            (
                VariationId::VeE2,
                &[-0.5, -2.0, -111.0, -46.0, -369.0, -84.0, -198.0],
                -0.5,
                Prefactor { n_exp: (1, 2), log_exp: 6, p_exp: (0, 1) },
            ),
            (
                VariationId::VeE3,
                &[-2.0, -12.5, -162.0, -234.0, -12.0, -72.0],
                -2.0,
                Prefactor { n_exp: (1, 1), log_exp: 6, p_exp: (1, 1) },
            ),
            (
                VariationId::VeQ,
                &[-1.0, -1.5, -41.0, -60.0, -5.0],
                -1.0,
                Prefactor { n_exp: (0, 1), log_exp: 6, p_exp: (-1, 1) },
            ),
            (
                VariationId::VeC0,
                &[-1.5, -8.0, -4.0, -4.0],
                -1.5,
                Prefactor { n_exp: (-3, 4), log_exp: 3, p_exp: (-5, 3) },
            ),
        ];
        for (id, poly, rhs, prefactor) in expect {
            let report = check_variation(id, 1e4, &grid).unwrap();
            assert_eq!(report.reduced_polynomial, poly, "{id}");
            assert_eq!(report.rhs_constant, rhs, "{id}");
            assert_eq!(report.prefactor, prefactor, "{id}");
            assert!(report.holds, "{id}");
        }
    }

    #[test]
    fn d2_inequality_has_a_positive_linear_coefficient() {
        // The collapsed polynomial is -4 + 3t - 4t^2: not coefficient-wise
        // negative, so the certificate must bound the true maximum, which is
        // -55/16 at t = 3/8.
        let grid = t_grid(1e4, 1e-3).unwrap();
        let report = check_variation(VariationId::VeD2, 1e4, &grid).unwrap();
        assert!(report.holds);
        assert_close(report.margin_min, -1.0 + 55.0 / 16.0, 1e-9);
        assert!((report.argmin_t - 0.375).abs() < 1e-3);
    }

    #[test]
    fn d3_inequality_is_tight_at_time_zero() {
        let grid = t_grid(1e8, 1e-3).unwrap();
        let report = check_variation(VariationId::VeD3, 1e8, &grid).unwrap();
        assert!(report.holds);
        assert!(report.margin_min.abs() < 1e-12);
        assert_eq!(report.argmin_t, 0.0);
        // Pinned pointwise values of the collapsed polynomial.
        let poly = Poly::new(&report.reduced_polynomial);
        for &t in &[0.0, 0.25, 0.5, 1.0, 2.0] {
            let direct = -2.0 - 7.0 * t - 3.0 * t * t * t;
            assert_close(poly.eval(t), direct, 1e-9);
        }
    }

    #[test]
    fn all_variations_hold_at_large_scale() {
        for report in check_all_variations(1e8).unwrap() {
            assert!(report.holds, "{}", report.id);
            assert!(report.grid_max_rel_err < 1e-9, "{}", report.id);
            // The collapsed inequality is scale-free, so it already holds at
            // the bottom of the ladder.
            assert_eq!(report.min_valid_n, Some(3.0), "{}", report.id);
        }
    }

    #[test]
    fn term_wise_and_collapsed_agree_at_small_scale() {
        let grid = t_grid(100.0, 1e-2).unwrap();
        for id in VariationId::ALL {
            let report = check_variation(id, 100.0, &grid).unwrap();
            assert!(report.grid_max_rel_err < 1e-9, "{}", report.id);
        }
    }

    #[test]
    fn analytic_derivative_matches_finite_differences() {
        let n = 1e4;
        let h = 1e-5;
        let terms = [
            f_single(EnvelopeVar::D2Zero),
            f_single(EnvelopeVar::E3),
            f_single(EnvelopeVar::Q),
            h_term(),
        ];
        for term in terms {
            let deriv = term.d_dt();
            for &t in &[0.1, 0.7, 1.3] {
                let fd = (term.eval(n, t + h) - term.eval(n, t - h)) / (2.0 * h);
                assert_close(deriv.eval(n, t), fd, 1e-6);
            }
        }
    }

    #[test]
    fn expression_reduce_rejects_mixed_prefactors() {
        let mixed = Expr(vec![
            f_single(EnvelopeVar::D2),
            f_single(EnvelopeVar::D3),
        ]);
        assert!(mixed.reduce().is_err());
    }

    #[test]
    fn stopping_audit_passes_short_full_run() {
        let steps = horizon(4.0, 1.0 / 3f64.sqrt()).unwrap();
        let mut state = ProcessState::new(8, 11, Mode::Full).unwrap();
        let record = state.run(StopRule::Horizon(steps), 1);
        assert_eq!(stopping_time_t(&record, 4.0).unwrap(), None);
    }

    #[test]
    fn stopping_audit_rejects_lean_runs() {
        let mut state = ProcessState::new(16, 3, Mode::Lean).unwrap();
        let record = state.run(StopRule::Horizon(2), 1);
        assert!(matches!(
            stopping_time_t(&record, 8.0),
            Err(TrajectoryError::ModeUnsupported(_))
        ));
    }

    fn bare_snapshot(step: u64, q: u64) -> TrajectorySnapshot {
        TrajectorySnapshot {
            step,
            t: 0.0,
            q,
            e2: None,
            e3: None,
            d2r0: None,
            d3r0: None,
            d1r0: 0,
            pairs_distinct: 0,
            max_d1_nonzero: None,
            extremes: None,
            vertex_sample: Vec::new(),
        }
    }

    fn synthetic_run(snapshots: Vec<TrajectorySnapshot>) -> RunRecord {
        RunRecord {
            m: 8,
            seed: 0,
            mode: Mode::Full,
            cadence: 1,
            snapshots,
            chosen_sequence: Vec::new(),
            closed_per_step: Vec::new(),
            termination_step: None,
            final_size: 0,
        }
    }

    #[test]
    fn stopping_audit_flags_collapsed_open_count() {
        // At a scale where 2np dwarfs f_q, an open count of zero cannot sit
        // inside the band.
        let n = 50.0f64.exp();
        let run = synthetic_run(vec![bare_snapshot(1, 0)]);
        assert_eq!(stopping_time_t(&run, n).unwrap(), Some(1));
        // The same snapshot at desk scale is inside the band: there the
        // envelope dwarfs the prediction itself.
        let run_ok = synthetic_run(vec![bare_snapshot(1, 0)]);
        assert_eq!(stopping_time_t(&run_ok, 1e6).unwrap(), None);
    }

    #[test]
    fn stopping_audit_empty_run_is_clean() {
        let run = synthetic_run(Vec::new());
        assert_eq!(stopping_time_t(&run, 4.0).unwrap(), None);
    }

    #[test]
    fn stopping_audit_checks_pair_band() {
        let n = 50.0f64.exp();
        let mut snap = bare_snapshot(1, (2.0 * n) as u64);
        snap.d1r0 = u64::MAX;
        let run = synthetic_run(vec![snap]);
        assert_eq!(stopping_time_t(&run, n).unwrap(), Some(1));
    }

    #[test]
    fn deviations_normalize_to_unit_envelope() {
        let (n, t) = (4096.0, 0.6);
        let q = predict(PredictVar::Q, n, t).unwrap();
        assert_close(dev_q(q, n, t).unwrap(), 0.0, 1e-12);
        let (f_q, _) = envelope(EnvelopeVar::Q, n, t).unwrap();
        assert_close(dev_q(q + f_q, n, t).unwrap(), 1.0, 1e-12);

        let center = band_center(PredictVar::E3, n, t, Some(q)).unwrap();
        let (f_e3, _) = envelope(EnvelopeVar::E3, n, t).unwrap();
        assert_close(dev_e3(center + f_e3, q, n, t).unwrap(), 1.0, 1e-12);
        assert_close(dev_e2(band_center(PredictVar::E2, n, t, Some(q)).unwrap(), q, n, t).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn grid_covers_range_inclusively() {
        let grid = t_grid(1e8, 1e-3).unwrap();
        let tm = t_max(1e8).unwrap();
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), tm);
        assert!(grid.len() as f64 >= tm / 1e-3);
        assert!(t_grid(1e4, 0.0).is_err());
    }
}
