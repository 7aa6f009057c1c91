// SPDX-License-Identifier: Apache-2.0
//! Exponent regions: sufficient and necessary smoothness conditions, and the
//! interpolation sets `R_B`, `Q(s)`, `S_B(s)`, `S_B^{l₀}(s)`. Smoothness is
//! normalized by the dimension, so `s` below stands for `s/n`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Sub};

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Margins within this band of zero are reported as boundary cases.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Field operations needed to evaluate the conditions exactly or in floating point.
pub trait Scalar:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn from_int(v: i64) -> Self;
    fn to_f64(self) -> f64;
    /// Margins at most this far from zero are not classified.
    fn tolerance() -> Self;
}

impl Scalar for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn tolerance() -> Self {
        BOUNDARY_TOL
    }
}

impl Scalar for Rational64 {
    fn from_int(v: i64) -> Self {
        Rational64::from_integer(v)
    }
    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
    fn tolerance() -> Self {
        Rational64::from_integer(0)
    }
}

/// Subset of `{1, …, l}` as a bit mask; bit `i` stands for index `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subset(pub u32);

impl Subset {
    pub fn from_indices(one_based: &[usize]) -> Self {
        Subset(one_based.iter().fold(0, |m, &i| m | 1 << (i - 1)))
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Zero-based members.
    pub fn members(self, l: usize) -> impl Iterator<Item = usize> {
        (0..l).filter(move |&i| self.contains(i))
    }

    pub fn complement(self, l: usize) -> Subset {
        Subset(!self.0 & ((1u32 << l) - 1))
    }

    pub fn all(l: usize) -> impl Iterator<Item = Subset> {
        (0..1u32 << l).map(Subset)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = (0..32).filter(|&i| self.contains(i)).map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// `(l, d, u, s⃗, 1/p⃗)` with `s_j` already divided by `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentPoint<T = f64> {
    pub l: usize,
    pub d: usize,
    pub u: T,
    pub s: Vec<T>,
    pub p_inv: Vec<T>,
}

pub type ExactPoint = ExponentPoint<Rational64>;

impl<T: Scalar> ExponentPoint<T> {
    pub fn new(u: T, s: Vec<T>, p_inv: Vec<T>) -> Result<Self> {
        let (zero, one) = (T::from_int(0), T::from_int(1));
        if p_inv.is_empty() || p_inv.len() > 16 {
            return Err(param("need between 1 and 16 exponents 1/p_i"));
        }
        if s.is_empty() {
            return Err(param("need at least one smoothness index"));
        }
        if !(u > one) {
            return Err(param(format!("u must exceed 1, got {}", u.to_f64())));
        }
        if p_inv.iter().any(|&x| !(x > zero && x < one)) {
            return Err(param("each 1/p_i must lie in (0, 1)"));
        }
        if s.iter().any(|&x| !(x > zero)) {
            return Err(param("smoothness indices must be positive"));
        }
        Ok(ExponentPoint {
            l: p_inv.len(),
            d: s.len(),
            u,
            s,
            p_inv,
        })
    }

    /// `1/p = Σ 1/p_i`.
    pub fn p(&self) -> T {
        sum(self.p_inv.iter().copied())
    }

    fn u_inv(&self) -> T {
        T::from_int(1) / self.u
    }

    fn u_conj_inv(&self) -> T {
        T::from_int(1) - self.u_inv()
    }

    fn s_min(&self) -> T {
        self.s.iter().copied().fold(self.s[0], |a, b| if b < a { b } else { a })
    }

    /// `1/p − 1/u′ − Σ_I (1/p_i − 1/u)`.
    fn u_threshold(&self, set: Subset) -> T {
        let c = self.u_inv();
        self.p() - self.u_conj_inv() - sum(set.members(self.l).map(|i| self.p_inv[i] - c))
    }

    /// `1/p − 1/2 − Σ_I (1/p_i − 1/2)`.
    fn two_threshold(&self, set: Subset) -> T {
        let half = T::from_int(1) / T::from_int(2);
        self.p() - half - sum(set.members(self.l).map(|i| self.p_inv[i] - half))
    }
}

fn sum<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    it.fold(T::from_int(0), |a, b| a + b)
}

/// One evaluated inequality; `margin = lhs − rhs`, nonnegative (or positive when strict) when it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// Subset `I`, one-based, when the condition ranges over subsets.
    pub subset: Option<Vec<usize>>,
    /// Smoothness index `j`, one-based, when the condition is per parameter.
    pub param: Option<usize>,
    pub margin: f64,
    pub strict: bool,
    /// Margin inside the tolerance band: the point is not classified by this condition.
    pub boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub admissible: bool,
    /// Failed conditions, boundary cases included.
    pub violated: Vec<Condition>,
}

impl RegionVerdict {
    pub fn on_boundary(&self) -> bool {
        self.violated.iter().any(|c| c.boundary)
    }
}

struct Raw<T> {
    name: &'static str,
    subset: Option<Subset>,
    param: Option<usize>,
    margin: T,
    strict: bool,
    /// Whether the tolerance band applies; parameter-range conditions are compared exactly.
    banded: bool,
}

fn classify<T: Scalar>(l: usize, raw: Vec<Raw<T>>) -> RegionVerdict {
    let tol = T::tolerance();
    let zero = T::from_int(0);
    let violated: Vec<Condition> = raw
        .into_iter()
        .filter_map(|r| {
            let tol = if r.banded { tol } else { zero };
            let neg_tol = zero - tol;
            let boundary = r.banded && r.margin <= tol && r.margin >= neg_tol;
            let holds = if r.strict { r.margin > tol } else { r.margin > tol || (tol == zero && r.margin >= zero) };
            if holds {
                return None;
            }
            Some(Condition {
                name: r.name.to_string(),
                subset: r.subset.map(|b| b.members(l).map(|i| i + 1).collect()),
                param: r.param.map(|j| j + 1),
                margin: r.margin.to_f64(),
                strict: r.strict,
                boundary,
            })
        })
        .collect();
    RegionVerdict {
        admissible: violated.is_empty(),
        violated,
    }
}

/// The sufficient conditions, for every `j` and every `I ⊆ J_l`:
/// `s_j > l/u` and `1/p − 1/u′ < s_j + Σ_I (1/p_i − 1/u)`, valid for `1 < u ≤ 2`.
pub fn sufficiency_check<T: Scalar>(pt: &ExponentPoint<T>) -> RegionVerdict {
    let l_over_u = T::from_int(pt.l as i64) * pt.u_inv();
    let mut raw = vec![Raw {
        name: "u_range",
        subset: None,
        param: None,
        margin: T::from_int(2) - pt.u,
        strict: false,
        banded: false,
    }];
    for (j, &s) in pt.s.iter().enumerate() {
        raw.push(Raw {
            name: "smoothness",
            subset: None,
            param: Some(j),
            margin: s - l_over_u,
            strict: true,
            banded: true,
        });
        for set in Subset::all(pt.l) {
            raw.push(Raw {
                name: "index",
                subset: Some(set),
                param: Some(j),
                margin: s - pt.u_threshold(set),
                strict: true,
                banded: true,
            });
        }
    }
    classify(pt.l, raw)
}

/// The necessary conditions on `min_j s_j`: `≥` both maxima over `I`, and
/// `> max{l/u, 1/p − 1/u′}`.
pub fn necessity_check<T: Scalar>(pt: &ExponentPoint<T>) -> RegionVerdict {
    let s = pt.s_min();
    let mut raw = Vec::new();
    for set in Subset::all(pt.l) {
        raw.push(Raw {
            name: "l2_branch",
            subset: Some(set),
            param: None,
            margin: s - pt.two_threshold(set),
            strict: false,
            banded: true,
        });
        raw.push(Raw {
            name: "lu_branch",
            subset: Some(set),
            param: None,
            margin: s - pt.u_threshold(set),
            strict: false,
            banded: true,
        });
    }
    raw.push(Raw {
        name: "smoothness",
        subset: None,
        param: None,
        margin: s - T::from_int(pt.l as i64) * pt.u_inv(),
        strict: true,
        banded: true,
    });
    raw.push(Raw {
        name: "index",
        subset: None,
        param: None,
        margin: s - (pt.p() - pt.u_conj_inv()),
        strict: true,
        banded: true,
    });
    classify(pt.l, raw)
}

/// Subset `I` with the largest `u`-threshold, the first in enumeration order on ties.
pub fn binding_subset<T: Scalar>(pt: &ExponentPoint<T>) -> (Subset, f64) {
    let mut best = (Subset(0), pt.u_threshold(Subset(0)));
    for set in Subset::all(pt.l).skip(1) {
        let v = pt.u_threshold(set);
        if v > best.1 {
            best = (set, v);
        }
    }
    (best.0, best.1.to_f64())
}

/// Parses `a/b`, integers and finite decimals exactly.
pub fn parse_rational(text: &str) -> Option<Rational64> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once('/') {
        let (a, b): (i64, i64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (b != 0).then(|| Rational64::new(a, b));
    }
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 15 {
        return None;
    }
    let den = 10i64.checked_pow(frac.len() as u32)?;
    let digits: i64 = format!("{int}{frac}").trim_start_matches('0').parse().unwrap_or(0);
    let v = Rational64::new(digits, den);
    Some(if neg { -v } else { v })
}

// ---------------------------------------------------------------------------
// Interpolation sets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub in_rb: bool,
    pub in_qs: bool,
    pub in_sb: bool,
    /// `S_B^{l₀}(s)` for each `l₀ ∈ B^c`, one-based.
    pub in_sb_l0: BTreeMap<usize, bool>,
}

fn in_rb(x: &[f64], b: Subset, u: f64) -> bool {
    let c = 1.0 / u;
    x.iter()
        .enumerate()
        .all(|(i, &xi)| if b.contains(i) { xi > 0.0 && xi <= c } else { xi > c && xi < 1.0 })
}

fn q_condition(x: &[f64], set: Subset, s: f64, u: f64) -> bool {
    let total: f64 = x.iter().sum();
    let shift: f64 = set.members(x.len()).map(|i| x[i] - 1.0 / u).sum();
    total - (1.0 - 1.0 / u) < s + shift
}

fn in_sb_l0(x: &[f64], b: Subset, l0: usize, s: f64, u: f64) -> bool {
    let l = x.len();
    let rest: f64 = b.complement(l).members(l).filter(|&i| i != l0).map(|i| x[i]).sum();
    in_rb(x, b, u) && s > (b.len() as f64 + 1.0) / u + rest
}

/// Evaluates the four set predicates literally from their definitions.
pub fn sb_membership(x: &[f64], b: Subset, s: f64, u: f64) -> Membership {
    let l = x.len();
    let rb = in_rb(x, b, u);
    let in_unit = x.iter().all(|&xi| xi > 0.0 && xi < 1.0);
    let qs = in_unit && Subset::all(l).all(|set| q_condition(x, set, s, u));
    let sb = rb && q_condition(x, b, s, u);
    let in_sb_l0 = b
        .complement(l)
        .members(l)
        .map(|l0| (l0 + 1, in_sb_l0(x, b, l0, s, u)))
        .collect();
    Membership {
        in_rb: rb,
        in_qs: qs,
        in_sb: sb,
        in_sb_l0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullReport {
    /// Points drawn from the pieces `S_B^{l₀}(s)` and checked to lie in `S_B(s)`.
    pub containment_samples: usize,
    /// Points drawn from `S_B(s)` and decomposed into points of the pieces.
    pub hull_samples: usize,
    /// Points already inside one piece.
    pub direct: usize,
    pub via_pair: usize,
    pub via_barycentric: usize,
    pub failures: Vec<Vec<f64>>,
}

fn check_hull_args(l: usize, b: Subset, s: f64, u: f64) -> Result<()> {
    if l == 0 || l > 16 {
        return Err(param("need 1 ≤ l ≤ 16"));
    }
    if b.0 >> l != 0 {
        return Err(param(format!("subset {b} is not inside {{1..{l}}}")));
    }
    if b.complement(l).is_empty() {
        return Err(param("B must be a proper subset"));
    }
    if !(u > 1.0 && u.is_finite()) {
        return Err(param("u must lie in (1, ∞)"));
    }
    if s <= l as f64 / u {
        return Err(param(format!("need s > l/u = {}", l as f64 / u)));
    }
    Ok(())
}

/// Draws from `R_B` until `keep` accepts, with a bounded number of attempts.
fn draw(rng: &mut ChaCha8Rng, l: usize, b: Subset, u: f64, keep: impl Fn(&[f64]) -> bool) -> Option<Vec<f64>> {
    let c = 1.0 / u;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..l)
            .map(|i| if b.contains(i) { c * (1.0 - rng.gen::<f64>()) } else { c + (1.0 - c) * rng.gen_range(1e-12..1.0) })
            .collect();
        if keep(&x) {
            return Some(x);
        }
    }
    None
}

/// Checks that the convex hull of `∪_{l₀∈B^c} S_B^{l₀}(s)` is `S_B(s)` on
/// random points. Containment is checked literally. For the reverse inclusion
/// every sample of `S_B(s)` is written as an explicit convex combination of
/// piece points: first by a two-point move along `e_a − e_b`, otherwise by a
/// barycentric construction with one point per `l₀`.
pub fn hull_identity_check(b: Subset, s: f64, u: f64, l: usize, samples: usize, seed: u64) -> Result<HullReport> {
    check_hull_args(l, b, s, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comp: Vec<usize> = b.complement(l).members(l).collect();
    let mut report = HullReport {
        containment_samples: 0,
        hull_samples: 0,
        direct: 0,
        via_pair: 0,
        via_barycentric: 0,
        failures: Vec::new(),
    };
    for t in 0..samples {
        let l0 = comp[t % comp.len()];
        if let Some(x) = draw(&mut rng, l, b, u, |x| in_sb_l0(x, b, l0, s, u)) {
            report.containment_samples += 1;
            if !sb_membership(&x, b, s, u).in_sb {
                report.failures.push(x);
            }
        }
    }
    let c = 1.0 / u;
    for _ in 0..samples {
        let Some(x) = draw(&mut rng, l, b, u, |x| sb_membership(x, b, s, u).in_sb) else {
            continue;
        };
        report.hull_samples += 1;
        if comp.iter().any(|&l0| in_sb_l0(&x, b, l0, s, u)) {
            report.direct += 1;
            continue;
        }
        let in_piece = |p: &[f64], l0: usize| in_sb_l0(p, b, l0, s, u);
        let reproduces = |pts: &[(f64, Vec<f64>)]| {
            let weight: f64 = pts.iter().map(|(w, _)| w).sum();
            (weight - 1.0).abs() < 1e-12
                && pts.iter().all(|(w, _)| *w >= 0.0)
                && (0..l).all(|i| (pts.iter().map(|(w, p)| w * p[i]).sum::<f64>() - x[i]).abs() < 1e-12)
        };
        if let Some(pts) = pair_decomposition(&x, &comp, s, l, c) {
            if pts.iter().all(|(_, p, l0)| in_piece(p, *l0)) && reproduces(&strip(&pts)) {
                report.via_pair += 1;
                continue;
            }
        }
        match barycentric_decomposition(&x, &comp, s, l, c) {
            Some(pts) if pts.iter().all(|(_, p, l0)| in_piece(p, *l0)) && reproduces(&strip(&pts)) => {
                report.via_barycentric += 1
            }
            _ => report.failures.push(x),
        }
    }
    Ok(report)
}

fn strip(pts: &[(f64, Vec<f64>, usize)]) -> Vec<(f64, Vec<f64>)> {
    pts.iter().map(|(w, p, _)| (*w, p.clone())).collect()
}

/// In the shifted coordinates `y_i = x_i − 1/u` (`i ∈ B^c`) the pieces read
/// `Σ_{i≠l₀} y_i < β` with `β = s − l/u`, and the whole set `Σ y_i < β + 1/u′`.
fn shifted(x: &[f64], comp: &[usize], c: f64) -> Vec<f64> {
    comp.iter().map(|&i| x[i] - c).collect()
}

fn unshift(x: &[f64], comp: &[usize], y: &[f64], c: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    for (k, &i) in comp.iter().enumerate() {
        p[i] = y[k] + c;
    }
    p
}

/// Splits `y` between the pieces of its two largest coordinates `a`, `b`,
/// moving along `e_a − e_b` so that the total stays fixed.
fn pair_decomposition(x: &[f64], comp: &[usize], s: f64, l: usize, c: f64) -> Option<Vec<(f64, Vec<f64>, usize)>> {
    if comp.len() < 2 {
        return None;
    }
    let y = shifted(x, comp, c);
    let beta = s - l as f64 * c;
    let cap = 1.0 - c;
    let total: f64 = y.iter().sum();
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&i, &j| y[j].total_cmp(&y[i]));
    let (a, bb) = (order[0], order[1]);
    let lo = (total - beta).max(y[a]);
    let hi = cap.min(y[a] + y[bb]);
    if lo >= hi {
        return None;
    }
    let top = 0.5 * (lo + hi);
    let rest = y[a] + y[bb] - top;
    let mut p = y.clone();
    p[a] = top;
    p[bb] = rest;
    let mut q = y.clone();
    q[a] = rest;
    q[bb] = top;
    // y_a = λ·top + (1 − λ)·rest
    let lambda = if top == rest { 0.5 } else { (y[a] - rest) / (top - rest) };
    Some(vec![
        (lambda, unshift(x, comp, &p, c), comp[a]),
        (1.0 - lambda, unshift(x, comp, &q, c), comp[bb]),
    ])
}

/// Points `y + τ_k (Y e_k − y)` with weights `λ_k ∝ y_k/τ_k`, one per piece,
/// where `Y = Σ y` and each `τ_k` sits mid-way in its feasible interval.
fn barycentric_decomposition(x: &[f64], comp: &[usize], s: f64, l: usize, c: f64) -> Option<Vec<(f64, Vec<f64>, usize)>> {
    let y = shifted(x, comp, c);
    let beta = s - l as f64 * c;
    let cap = 1.0 - c;
    let total: f64 = y.iter().sum();
    let mut pts = Vec::with_capacity(y.len());
    let mut norm = 0.0;
    for k in 0..y.len() {
        let rest = total - y[k];
        if rest <= 0.0 {
            return None;
        }
        // 1 − τ in ((Y − 1/u′)/rest, β/rest) ∩ (0, 1).
        let lo = ((total - cap) / rest).max(0.0);
        let hi = (beta / rest).min(1.0);
        if lo >= hi {
            return None;
        }
        let tau = 1.0 - 0.5 * (lo + hi);
        let p: Vec<f64> = (0..y.len())
            .map(|i| y[i] + tau * (if i == k { total } else { 0.0 } - y[i]))
            .collect();
        let w = y[k] / tau;
        norm += w;
        pts.push((w, unshift(x, comp, &p, c), comp[k]));
    }
    for p in &mut pts {
        p.0 /= norm;
    }
    Some(pts)
}

/// Outcome of a paired sufficiency/necessity scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub samples: usize,
    pub sufficient: usize,
    pub necessary: usize,
    /// Sufficient but not necessary, away from every boundary.
    pub failures: Vec<ExponentPoint>,
    /// Pairs skipped because a margin fell inside the tolerance band.
    pub boundary: usize,
    /// Points with `u < 2` whose largest 2-based threshold exceeds every `u`-based one.
    pub two_branch_binding: usize,
}

/// Whether the 2-based family of necessary thresholds is strictly the larger at `pt`.
pub fn two_branch_binds(pt: &ExponentPoint) -> bool {
    let max = |f: &dyn Fn(Subset) -> f64| Subset::all(pt.l).map(f).fold(f64::NEG_INFINITY, f64::max);
    let two = max(&|set| pt.two_threshold(set));
    let u = max(&|set| pt.u_threshold(set));
    two > u + BOUNDARY_TOL
}

/// Random points with `1/p_i ∈ (0,1)`, `u ∈ (1, u_max)` and `s_j ∈ (0, s_max)`.
pub fn consistency_scan(l: usize, d: usize, u_max: f64, s_max: f64, samples: usize, seed: u64) -> Result<ConsistencyReport> {
    if !(u_max > 1.0 && s_max > 0.0) || l == 0 || d == 0 {
        return Err(param("need l, d ≥ 1, u_max > 1 and s_max > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConsistencyReport {
        samples,
        sufficient: 0,
        necessary: 0,
        failures: Vec::new(),
        boundary: 0,
        two_branch_binding: 0,
    };
    for _ in 0..samples {
        let u = 1.0 + (u_max - 1.0) * (1.0 - rng.gen::<f64>());
        let s = (0..d).map(|_| s_max * (1.0 - rng.gen::<f64>())).collect();
        let p_inv = (0..l).map(|_| rng.gen_range(1e-9..1.0)).collect();
        let pt = ExponentPoint::new(u, s, p_inv)?;
        let (suf, nec) = (sufficiency_check(&pt), necessity_check(&pt));
        report.two_branch_binding += (pt.u < 2.0 && two_branch_binds(&pt)) as usize;
        report.sufficient += suf.admissible as usize;
        report.necessary += nec.admissible as usize;
        if suf.on_boundary() || nec.on_boundary() {
            report.boundary += 1;
            continue;
        }
        if suf.admissible && !nec.admissible {
            report.failures.push(pt);
        }
    }
    Ok(report)
}
