//! Exact geometry of the set of full distributions compatible with one
//! top-K observation.
//!
//! Every member has the form `p_v = (1 - t) * alpha_v` on revealed tokens and
//! an arbitrary tail allocation of total mass `t` on the `M` censored tokens,
//! subject to the per-token cap `p_u <= (1 - t) * U / (M * (1 - U))` that the
//! logit ceiling `z_u <= tau` induces. The set's total-variation diameter is
//!
//! ```text
//! U = M * exp(tau) / (Z_A + M * exp(tau)) = sigmoid(log M + tau - log Z_A)
//! ```
//!
//! and it is attained by the zero-tail point and the maximal uniform tail.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::math::{exp, fabs, log, neumaier_sum, sigmoid};
use crate::observation::LogSummary;
use crate::policy::NumericPolicy;

/// Largest vocabulary the brute-force oracles accept (2^V subsets are scanned).
pub const ORACLE_MAX_VOCAB: usize = 12;
/// Largest number of grid points the brute-force oracles enumerate.
pub const ORACLE_MAX_POINTS: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetError {
    #[error("no censored tokens: the identified set is a single point")]
    Degenerate,
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("tail entry on revealed token {0}")]
    RevealedTokenInTail(u32),
    #[error("tail entry on token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("oracle refused: vocabulary {vocab_size} exceeds {max}")]
    VocabTooLarge { vocab_size: usize, max: usize },
    #[error("oracle refused: {points} grid points exceed {max}")]
    GridTooLarge { points: f64, max: usize },
    #[error("grid resolution must be at least 2, got {0}")]
    InvalidResolution(usize),
}

/// Diameter and log-odds of the identified set for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SetGeometry {
    summary: LogSummary,
    diameter: f64,
    complement: f64,
    log_odds: f64,
}

pub fn geometry(summary: &LogSummary) -> SetGeometry {
    SetGeometry::new(summary.clone())
}

impl SetGeometry {
    pub fn new(summary: LogSummary) -> Self {
        let log_odds =
            if summary.m == 0 { f64::NEG_INFINITY } else { log(summary.m as f64) + summary.tau - summary.log_za };
        SetGeometry { diameter: sigmoid(log_odds), complement: sigmoid(-log_odds), log_odds, summary }
    }

    /// `U_K`, the total-variation diameter.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// `1 - U_K` at full relative precision.
    pub fn complement(&self) -> f64 {
        self.complement
    }

    /// `log(U_K / (1 - U_K)) = log M + tau - log Z_A`.
    pub fn log_odds(&self) -> f64 {
        self.log_odds
    }

    pub fn censored_count(&self) -> usize {
        self.summary.m
    }

    pub fn vocab_size(&self) -> usize {
        self.summary.vocab_size
    }

    pub fn summary(&self) -> &LogSummary {
        &self.summary
    }

    /// `lambda(t) = U (1 - t) / ((1 - U) t)`: the cap on the tail conditional,
    /// in units of the uniform weight `1/M`.
    pub fn cap_ratio(&self, t: f64) -> f64 {
        exp(self.log_odds) * (1.0 - t) / t
    }

    fn cap_unchecked(&self, t: f64) -> f64 {
        exp(self.log_odds) * (1.0 - t) / self.summary.m as f64
    }
}

/// How a feasible point spreads its tail mass over the censored tokens.
///
/// `Uniform` and `Capped` are symbolic so the large-vocabulary extremes never
/// need materializing. `Capped` places `per_token` on the first `count`
/// censored tokens (ascending id) and `residual` on the next one.
#[derive(Debug, Clone, PartialEq)]
pub enum TailAllocation {
    Empty,
    Uniform { per_token: f64 },
    Capped { count: usize, per_token: f64, residual: f64 },
    Sparse(BTreeMap<u32, f64>),
}

/// A member (or candidate member) of the identified set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint {
    /// Total tail mass.
    pub t: f64,
    pub tail: TailAllocation,
}

impl FeasiblePoint {
    pub fn zero_tail() -> Self {
        FeasiblePoint { t: 0.0, tail: TailAllocation::Empty }
    }

    /// Tail mass `t` spread evenly over all `m` censored tokens.
    pub fn uniform(t: f64, m: usize) -> Self {
        if m == 0 {
            return Self::zero_tail();
        }
        FeasiblePoint { t, tail: TailAllocation::Uniform { per_token: t / m as f64 } }
    }

    /// Explicit tail; `t` is the entry total.
    pub fn sparse(tail: BTreeMap<u32, f64>) -> Self {
        let t = neumaier_sum(tail.values().copied());
        FeasiblePoint { t, tail: TailAllocation::Sparse(tail) }
    }

    /// Tail probability on the censored token with the given ascending rank.
    pub fn tail_value(&self, rank: usize, token: u32) -> f64 {
        match &self.tail {
            TailAllocation::Empty => 0.0,
            TailAllocation::Uniform { per_token } => *per_token,
            TailAllocation::Capped { count, per_token, residual } => {
                if rank < *count {
                    *per_token
                } else if rank == *count {
                    *residual
                } else {
                    0.0
                }
            }
            TailAllocation::Sparse(map) => map.get(&token).copied().unwrap_or(0.0),
        }
    }

    /// Dense distribution over the whole vocabulary.
    pub fn to_distribution(&self, geom: &SetGeometry) -> Vec<f64> {
        let s = geom.summary();
        let mut p = vec![0.0; s.vocab_size];
        for (tok, a) in s.tokens.iter().zip(&s.alpha) {
            p[*tok as usize] = (1.0 - self.t) * a;
        }
        for (rank, tok) in s.censored_tokens().enumerate() {
            p[tok as usize] = self.tail_value(rank, tok);
        }
        p
    }
}

/// Largest probability any one censored token may carry at tail mass `t`.
pub fn per_token_cap(geom: &SetGeometry, t: f64) -> Result<f64, SetError> {
    if geom.censored_count() == 0 {
        return Err(SetError::Degenerate);
    }
    let tol = NumericPolicy::current().membership_tol;
    if !(t >= -tol && t <= geom.diameter() + tol) {
        return Err(SetError::Domain { what: "tail mass", value: t });
    }
    Ok(geom.cap_unchecked(t.max(0.0)))
}

/// The zero-tail point and the maximal uniform-tail point; their TV is `U_K`.
pub fn extremal_pair(geom: &SetGeometry) -> Result<(FeasiblePoint, FeasiblePoint), SetError> {
    let m = geom.censored_count();
    if m == 0 {
        return Err(SetError::Degenerate);
    }
    Ok((FeasiblePoint::zero_tail(), FeasiblePoint::uniform(geom.diameter(), m)))
}

/// Total variation between two points of the same identified set, computed
/// without materializing symbolic tails.
pub fn point_tv(geom: &SetGeometry, p: &FeasiblePoint, q: &FeasiblePoint) -> f64 {
    let s = geom.summary();
    let alpha_total = neumaier_sum(s.alpha.iter().copied());
    let head = fabs(p.t - q.t) * alpha_total;
    let tail = match (&p.tail, &q.tail) {
        (TailAllocation::Empty, TailAllocation::Empty) => 0.0,
        (TailAllocation::Empty, _) => q.t,
        (_, TailAllocation::Empty) => p.t,
        _ => neumaier_sum(
            s.censored_tokens().enumerate().map(|(rank, tok)| fabs(p.tail_value(rank, tok) - q.tail_value(rank, tok))),
        ),
    };
    0.5 * (head + tail)
}

/// One failed membership constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeTailMass { t: f64 },
    TailMassExceedsDiameter { t: f64, diameter: f64 },
    TailSumMismatch { sum: f64, t: f64 },
    NegativeEntry { token: Option<u32>, value: f64 },
    CapExceeded { token: Option<u32>, value: f64, cap: f64 },
    TooManyTokens { needed: usize, available: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeTailMass { t } => write!(f, "negative tail mass {t}"),
            Violation::TailMassExceedsDiameter { t, diameter } => {
                write!(f, "tail mass exceeds U_K ({t} > {diameter})")
            }
            Violation::TailSumMismatch { sum, t } => write!(f, "tail entries sum to {sum}, not t = {t}"),
            Violation::NegativeEntry { token, value } => write!(f, "negative tail entry {value} on {token:?}"),
            Violation::CapExceeded { token, value, cap } => {
                write!(f, "tail entry {value} on {token:?} exceeds per-token cap {cap}")
            }
            Violation::TooManyTokens { needed, available } => {
                write!(f, "tail needs {needed} censored tokens, only {available} exist")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub member: bool,
    pub violations: Vec<Violation>,
}

/// Check a point against the (closed) identified set.
pub fn membership(geom: &SetGeometry, point: &FeasiblePoint) -> Result<MembershipReport, SetError> {
    let s = geom.summary();
    let m = s.m;
    if let TailAllocation::Sparse(map) = &point.tail {
        for &tok in map.keys() {
            if tok as usize >= s.vocab_size {
                return Err(SetError::TokenOutOfRange { token: tok, vocab_size: s.vocab_size });
            }
            if s.is_revealed(tok) {
                return Err(SetError::RevealedTokenInTail(tok));
            }
        }
    }

    let tol = NumericPolicy::current().membership_tol;
    let mut violations = Vec::new();
    let t = point.t;
    if t < -tol {
        violations.push(Violation::NegativeTailMass { t });
    }
    if t > geom.diameter() + tol {
        violations.push(Violation::TailMassExceedsDiameter { t, diameter: geom.diameter() });
    }

    let cap = if m == 0 { 0.0 } else { geom.cap_unchecked(t.clamp(0.0, 1.0)) };
    let check_entry = |token: Option<u32>, value: f64, violations: &mut Vec<Violation>| {
        if value < -tol {
            violations.push(Violation::NegativeEntry { token, value });
        } else if value > cap * (1.0 + tol) + f64::MIN_POSITIVE {
            violations.push(Violation::CapExceeded { token, value, cap });
        }
    };

    let (sum, needed) = match &point.tail {
        TailAllocation::Empty => (0.0, 0),
        TailAllocation::Uniform { per_token } => {
            check_entry(None, *per_token, &mut violations);
            (*per_token * m as f64, m)
        }
        TailAllocation::Capped { count, per_token, residual } => {
            if *count > 0 {
                check_entry(None, *per_token, &mut violations);
            }
            check_entry(None, *residual, &mut violations);
            let needed = count + usize::from(*residual > 0.0);
            (*per_token * *count as f64 + *residual, needed)
        }
        TailAllocation::Sparse(map) => {
            for (&tok, &v) in map {
                check_entry(Some(tok), v, &mut violations);
            }
            (neumaier_sum(map.values().copied()), 0)
        }
    };
    if needed > m {
        violations.push(Violation::TooManyTokens { needed, available: m });
    }
    if fabs(sum - t) > tol {
        violations.push(Violation::TailSumMismatch { sum, t });
    }
    Ok(MembershipReport { member: violations.is_empty(), violations })
}

/// Result of a brute-force diameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDiameter {
    /// Largest pairwise TV over the sampled points.
    pub diameter: f64,
    /// A pair attaining it.
    pub witness: (Vec<f64>, Vec<f64>),
    pub grid_points: usize,
}

/// Brute-force diameter of `{ (head, y) / (Σhead + Σy) : 0 <= y_j <= bounds_j }`.
///
/// Each tail weight is gridded at `resolution` evenly spaced levels including
/// both box ends. Over the resulting finite sample the exact largest pairwise
/// TV is found through `TV(p, q) = max_S p(S) - q(S)`, scanning all `2^V`
/// subsets `S`. Returned distributions are laid out head first, then tail.
pub fn box_diameter_oracle(head: &[f64], bounds: &[f64], resolution: usize) -> Result<OracleDiameter, SetError> {
    let v = head.len() + bounds.len();
    if v > ORACLE_MAX_VOCAB {
        return Err(SetError::VocabTooLarge { vocab_size: v, max: ORACLE_MAX_VOCAB });
    }
    if resolution < 2 {
        return Err(SetError::InvalidResolution(resolution));
    }
    let m = bounds.len();
    let points = libm::pow(resolution as f64, m as f64);
    if points > ORACLE_MAX_POINTS as f64 {
        return Err(SetError::GridTooLarge { points, max: ORACLE_MAX_POINTS });
    }
    let points = points as usize;
    let head_total = neumaier_sum(head.iter().copied());
    let subsets = 1usize << v;

    let mut best_hi = vec![f64::NEG_INFINITY; subsets];
    let mut best_lo = vec![f64::INFINITY; subsets];
    let mut arg_hi = vec![0usize; subsets];
    let mut arg_lo = vec![0usize; subsets];
    let mut sums = vec![0.0f64; subsets];
    let mut digits = vec![0usize; m];
    let mut dist = vec![0.0f64; v];
    let step = 1.0 / (resolution - 1) as f64;

    for idx in 0..points {
        fill_grid_point(head, bounds, head_total, &digits, step, &mut dist);
        for set in 1..subsets {
            let low = set.trailing_zeros() as usize;
            sums[set] = sums[set & (set - 1)] + dist[low];
            if sums[set] > best_hi[set] {
                best_hi[set] = sums[set];
                arg_hi[set] = idx;
            }
            if sums[set] < best_lo[set] {
                best_lo[set] = sums[set];
                arg_lo[set] = idx;
            }
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < resolution {
                break;
            }
            *d = 0;
        }
    }

    let mut best = (0.0, 1usize);
    for set in 1..subsets {
        let gap = best_hi[set] - best_lo[set];
        if gap > best.0 {
            best = (gap, set);
        }
    }
    let witness_at = |idx: usize| {
        let mut digits = vec![0usize; m];
        let mut rest = idx;
        for d in digits.iter_mut() {
            *d = rest % resolution;
            rest /= resolution;
        }
        let mut out = vec![0.0; v];
        fill_grid_point(head, bounds, head_total, &digits, step, &mut out);
        out
    };
    Ok(OracleDiameter {
        diameter: best.0,
        witness: (witness_at(arg_hi[best.1]), witness_at(arg_lo[best.1])),
        grid_points: points,
    })
}

fn fill_grid_point(head: &[f64], bounds: &[f64], head_total: f64, digits: &[usize], step: f64, out: &mut [f64]) {
    let k = head.len();
    let mut tail_total = 0.0;
    for (j, (&b, &d)) in bounds.iter().zip(digits).enumerate() {
        let y = b * (d as f64 * step).min(1.0);
        out[k + j] = y;
        tail_total += y;
    }
    let total = head_total + tail_total;
    for (o, h) in out.iter_mut().zip(head) {
        *o = h / total;
    }
    for o in out[k..].iter_mut() {
        *o /= total;
    }
}

/// Brute-force TV diameter of the identified set, for small vocabularies.
///
/// Grids the unnormalized censored weights `y_u in [0, exp(tau)]` (scaled by
/// `1/Z_A`); the witness pair is returned in token-id layout.
pub fn brute_diameter_oracle(geom: &SetGeometry, resolution: usize) -> Result<OracleDiameter, SetError> {
    let s = geom.summary();
    if s.vocab_size > ORACLE_MAX_VOCAB {
        return Err(SetError::VocabTooLarge { vocab_size: s.vocab_size, max: ORACLE_MAX_VOCAB });
    }
    if s.m == 0 {
        let p = FeasiblePoint::zero_tail().to_distribution(geom);
        return Ok(OracleDiameter { diameter: 0.0, witness: (p.clone(), p), grid_points: 1 });
    }
    let bound = exp(s.tau - s.log_za);
    let bounds = vec![bound; s.m];
    let raw = box_diameter_oracle(&s.alpha, &bounds, resolution)?;
    Ok(OracleDiameter {
        diameter: raw.diameter,
        witness: (to_token_layout(s, &raw.witness.0), to_token_layout(s, &raw.witness.1)),
        grid_points: raw.grid_points,
    })
}

/// Map a head-then-tail vector onto token ids.
pub(crate) fn to_token_layout(s: &LogSummary, packed: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.vocab_size];
    for (tok, v) in s.tokens.iter().zip(packed) {
        out[*tok as usize] = *v;
    }
    for (tok, v) in s.censored_tokens().zip(&packed[s.k()..]) {
        out[tok as usize] = *v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::tv;
    use crate::observation::{summarize, AccessMode, TopKObservation};

    fn geom(v: usize, pairs: Vec<(u32, f64)>) -> SetGeometry {
        let obs = TopKObservation::new(v, pairs, AccessMode::UnnormalizedLogits, "g").unwrap();
        geometry(&summarize(&obs))
    }

    fn v4() -> SetGeometry {
        geom(4, vec![(2, 1.0), (0, 0.0)])
    }

    const E: f64 = core::f64::consts::E;

    #[test]
    fn full_access_has_zero_diameter() {
        let g = geom(3, vec![(0, 0.1), (1, 0.5), (2, -1.0)]);
        assert_eq!(g.diameter(), 0.0);
        assert_eq!(g.complement(), 1.0);
        assert_eq!(per_token_cap(&g, 0.0), Err(SetError::Degenerate));
        assert_eq!(extremal_pair(&g), Err(SetError::Degenerate));
        assert_eq!(brute_diameter_oracle(&g, 20).unwrap().diameter, 0.0);
    }

    #[test]
    fn symmetric_two_token_case() {
        let g = geom(2, vec![(0, 0.0)]);
        assert_eq!(g.diameter(), 0.5);
        let (a, b) = extremal_pair(&g).unwrap();
        assert_eq!(b.t, 0.5);
        assert_eq!(point_tv(&g, &a, &b), 0.5);
        let oracle = brute_diameter_oracle(&g, 50).unwrap();
        assert!((oracle.diameter - 0.5).abs() < 1e-6);
    }

    #[test]
    fn four_token_example() {
        let g = v4();
        let u = 2.0 / (E + 3.0);
        assert!((g.diameter() - u).abs() < 1e-15);
        assert!((g.diameter() - 0.349_755).abs() < 1e-6);
        let oracle = brute_diameter_oracle(&g, 50).unwrap();
        assert!(oracle.diameter <= g.diameter() + 1e-12);
        assert!(oracle.diameter >= g.diameter() - 1e-3);
        assert!((tv(&oracle.witness.0, &oracle.witness.1).unwrap() - oracle.diameter).abs() < 1e-12);
    }

    #[test]
    fn cap_endpoints() {
        let g = v4();
        let u = g.diameter();
        let at_u = per_token_cap(&g, u).unwrap();
        assert!((at_u - u / 2.0).abs() < 1e-15);
        // cap(0) = exp(tau) / Z_A = 1 / (e + 1).
        let at_0 = per_token_cap(&g, 0.0).unwrap();
        assert!((at_0 - 1.0 / (E + 1.0)).abs() < 1e-15);
        assert!((at_0 - 0.268_94).abs() < 1e-5);
    }

    #[test]
    fn cap_at_interior_tail_mass_matches_weight_construction() {
        // With Σy = Z_A t / (1 - t) and y_u <= exp(tau), the largest single
        // probability is exp(tau) / (Z_A + Σy).
        let g = v4();
        let t = 0.2;
        let za = E + 1.0;
        let y_total = za * t / (1.0 - t);
        let direct = 1.0 / (za + y_total);
        let cap = per_token_cap(&g, t).unwrap();
        assert!((cap - direct).abs() < 1e-15);
        assert!((cap - 0.215_15).abs() < 1e-4);
    }

    #[test]
    fn cap_domain_errors() {
        let g = v4();
        assert!(matches!(per_token_cap(&g, -0.1), Err(SetError::Domain { .. })));
        assert!(matches!(per_token_cap(&g, g.diameter() + 1e-6), Err(SetError::Domain { .. })));
        assert!(per_token_cap(&g, g.diameter() + 1e-13).is_ok());
    }

    #[test]
    fn extremal_pair_tv_equals_diameter_both_ways() {
        let g = v4();
        let (a, b) = extremal_pair(&g).unwrap();
        let dense = tv(&a.to_distribution(&g), &b.to_distribution(&g)).unwrap();
        assert!((dense - g.diameter()).abs() < 1e-12);
        assert!((point_tv(&g, &a, &b) - g.diameter()).abs() < 1e-12);
        assert!(membership(&g, &a).unwrap().member);
        assert!(membership(&g, &b).unwrap().member);
    }

    #[test]
    fn membership_boundary() {
        let g = v4();
        let u = g.diameter();
        assert!(membership(&g, &FeasiblePoint::uniform(u, 2)).unwrap().member);
        let over = membership(&g, &FeasiblePoint::uniform(u + 0.01, 2)).unwrap();
        assert!(!over.member);
        assert!(over.violations.iter().any(|v| alloc::format!("{v}").contains("tail mass exceeds U_K")));
    }

    #[test]
    fn single_token_fixed_point() {
        // Bisection oracle for t = cap(t) with all mass on one censored token.
        let g = v4();
        let cap = |t: f64| per_token_cap(&g, t.min(g.diameter())).unwrap();
        let (mut lo, mut hi) = (0.0f64, g.diameter());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid < cap(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = lo;
        let point = |mass: f64| FeasiblePoint::sparse(BTreeMap::from([(1u32, mass)]));
        assert!(membership(&g, &point(t)).unwrap().member);
        assert!(!membership(&g, &point(t + 1e-6)).unwrap().member);
    }

    #[test]
    fn membership_structural_errors() {
        let g = v4();
        let on_head = FeasiblePoint::sparse(BTreeMap::from([(2u32, 0.01)]));
        assert_eq!(membership(&g, &on_head), Err(SetError::RevealedTokenInTail(2)));
        let outside = FeasiblePoint::sparse(BTreeMap::from([(9u32, 0.01)]));
        assert!(matches!(membership(&g, &outside), Err(SetError::TokenOutOfRange { .. })));
    }

    #[test]
    fn membership_reports_each_violation() {
        let g = v4();
        let bad = FeasiblePoint { t: 0.1, tail: TailAllocation::Sparse(BTreeMap::from([(1u32, 0.3), (3, -0.2)])) };
        let r = membership(&g, &bad).unwrap();
        assert!(!r.member);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::CapExceeded { token: Some(1), .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::NegativeEntry { token: Some(3), .. })));
        let capped = FeasiblePoint { t: 0.3, tail: TailAllocation::Capped { count: 3, per_token: 0.1, residual: 0.0 } };
        let r = membership(&g, &capped).unwrap();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::TooManyTokens { needed: 3, available: 2 })));
    }

    #[test]
    fn oracle_refusals() {
        let g = geom(14, vec![(0, 0.0)]);
        assert!(matches!(brute_diameter_oracle(&g, 20), Err(SetError::VocabTooLarge { .. })));
        let g = geom(12, vec![(0, 0.0)]);
        assert!(matches!(brute_diameter_oracle(&g, 20), Err(SetError::GridTooLarge { .. })));
        assert!(matches!(brute_diameter_oracle(&v4(), 1), Err(SetError::InvalidResolution(1))));
    }

    #[test]
    fn large_vocabulary_extremes_stay_symbolic() {
        let g = geom(151_936, vec![(0, 5.0), (1, 3.0), (2, 2.5)]);
        let (a, b) = extremal_pair(&g).unwrap();
        assert!(matches!(b.tail, TailAllocation::Uniform { .. }));
        assert!((point_tv(&g, &a, &b) - g.diameter()).abs() < 1e-12);
        assert!(g.diameter() > 0.99);
        // The complement keeps its digits where 1 - U would cancel.
        let direct = 1.0 / (1.0 + (151_933.0 * exp(2.5)) / (exp(5.0) + exp(3.0) + exp(2.5)));
        assert!(((g.complement() - direct) / direct).abs() < 1e-12);
    }
}
