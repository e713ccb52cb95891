//! Normalized log-probability access.
//!
//! When the API returns true log-probabilities the head is pinned and the
//! hidden tail mass `t*` is observed exactly. What remains free is how `t*`
//! is spread over the `M` censored tokens, each capped by `c`, the smallest
//! revealed probability. Two allocations on disjoint supports reach TV `t*`
//! once `M >= 2 ceil(t* / c)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::identified_set::{FeasiblePoint, TailAllocation, ORACLE_MAX_POINTS};
use crate::math::{ceil, exp, fabs, neumaier_sum};
use crate::observation::{hidden_tail_mass, summarize, LogSummary, ObservationError, TopKObservation};
use crate::policy::NumericPolicy;

/// Largest censored count the allocation oracle accepts.
pub const ALLOCATION_ORACLE_MAX_M: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizedError {
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error("hidden tail mass {t_star} cannot fit under {m} caps of {c}")]
    Infeasible { t_star: f64, c: f64, m: usize },
    #[error("allocation oracle refused: M = {m} exceeds {max}")]
    TooManyCensored { m: usize, max: usize },
    #[error("allocation oracle refused: {points} grid points exceed {max}")]
    GridTooLarge { points: f64, max: usize },
    #[error("grid must be at least 1, got {0}")]
    InvalidGrid(usize),
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizedCondition {
    /// `M >= 2 ceil(t*/c)`: the diameter equals `t*`.
    DisjointSupports,
    /// `M <= 1` or `t* = 0`: the set is a single point.
    SinglePoint,
    /// `2 <= M < 2 ceil(t*/c)`: only a bracket is certified.
    Indeterminate,
}

impl NormalizedCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            NormalizedCondition::DisjointSupports => "disjoint_supports",
            NormalizedCondition::SinglePoint => "single_point",
            NormalizedCondition::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGeometry {
    pub t_star: f64,
    /// Per-token cap, the smallest revealed probability.
    pub c: f64,
    pub m: usize,
    /// Certified diameter; the lower end of `bracket` when indeterminate.
    pub diameter: f64,
    pub condition: NormalizedCondition,
    /// `[lower, upper]` enclosing the true diameter.
    pub bracket: (f64, f64),
}

pub fn normalized_geometry(obs: &TopKObservation) -> Result<NormalizedGeometry, NormalizedError> {
    let t_star = hidden_tail_mass(obs)?.value;
    let c = exp(obs.tau());
    let m = obs.censored_count();
    let tol = NumericPolicy::current().infeasibility_tol;
    if t_star > m as f64 * c + tol {
        return Err(NormalizedError::Infeasible { t_star, c, m });
    }
    let point = |condition| NormalizedGeometry { t_star, c, m, diameter: 0.0, condition, bracket: (0.0, 0.0) };
    if m <= 1 || t_star == 0.0 {
        return Ok(point(NormalizedCondition::SinglePoint));
    }
    if m >= required_censored(t_star, c) {
        return Ok(NormalizedGeometry {
            diameter: t_star,
            condition: NormalizedCondition::DisjointSupports,
            bracket: (t_star, t_star),
            ..point(NormalizedCondition::DisjointSupports)
        });
    }
    let lower = front_back_tv(t_star, c, m);
    Ok(NormalizedGeometry {
        diameter: lower,
        condition: NormalizedCondition::Indeterminate,
        bracket: (lower, t_star),
        ..point(NormalizedCondition::Indeterminate)
    })
}

/// `2 ceil(t* / c)`.
pub fn required_censored(t_star: f64, c: f64) -> usize {
    2 * ceil(t_star / c) as usize
}

/// `t*` filled greedily at the cap from rank `start` upward.
fn greedy_fill(t_star: f64, c: f64, ranks: impl Iterator<Item = usize>) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    let mut left = t_star;
    for r in ranks {
        if left <= 0.0 {
            break;
        }
        let v = if left > c { c } else { left };
        out.insert(r, v);
        left -= v;
    }
    out
}

/// TV between the front-filled and back-filled allocations.
fn front_back_tv(t_star: f64, c: f64, m: usize) -> f64 {
    let front = greedy_fill(t_star, c, 0..m);
    let back = greedy_fill(t_star, c, (0..m).rev());
    let diff = (0..m).map(|r| {
        let a = front.get(&r).copied().unwrap_or(0.0);
        let b = back.get(&r).copied().unwrap_or(0.0);
        fabs(a - b)
    });
    0.5 * neumaier_sum(diff)
}

/// Two feasible tails on disjoint censored supports, each with mass `t*`.
///
/// Returns `None` unless the disjoint-supports condition holds.
pub fn disjoint_witness(ng: &NormalizedGeometry, summary: &LogSummary) -> Option<(FeasiblePoint, FeasiblePoint)> {
    if ng.condition != NormalizedCondition::DisjointSupports {
        return None;
    }
    let n = ceil(ng.t_star / ng.c) as usize;
    let tokens: Vec<u32> = summary.censored_tokens().collect();
    let to_point = |by_rank: BTreeMap<usize, f64>| FeasiblePoint {
        t: ng.t_star,
        tail: TailAllocation::Sparse(by_rank.into_iter().map(|(r, v)| (tokens[r], v)).collect()),
    };
    let first = greedy_fill(ng.t_star, ng.c, 0..n);
    let second = greedy_fill(ng.t_star, ng.c, n..2 * n);
    Some((to_point(first), to_point(second)))
}

/// Tail entries within `[0, c (1 + tol)]`, summing to `t*` within `tol`, and
/// only on censored tokens.
pub fn within_normalized_caps(ng: &NormalizedGeometry, summary: &LogSummary, point: &FeasiblePoint, tol: f64) -> bool {
    if fabs(point.t - ng.t_star) > tol {
        return false;
    }
    let values: Vec<f64> = summary.censored_tokens().enumerate().map(|(r, tok)| point.tail_value(r, tok)).collect();
    if let TailAllocation::Sparse(map) = &point.tail {
        if map.keys().any(|tok| summary.is_revealed(*tok) || *tok as usize >= summary.vocab_size) {
            return false;
        }
    }
    values.iter().all(|v| *v >= 0.0 && *v <= ng.c * (1.0 + tol))
        && fabs(neumaier_sum(values.iter().copied()) - ng.t_star) <= tol
}

/// Convenience wrapper returning the summary alongside the geometry.
pub fn analyze_normalized(obs: &TopKObservation) -> Result<(LogSummary, NormalizedGeometry), NormalizedError> {
    Ok((summarize(obs), normalized_geometry(obs)?))
}

/// Result of the allocation oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOracle {
    pub diameter: f64,
    pub allocations: usize,
}

/// Brute-force diameter of `{ x in [0, c]^M : Σ x = t* }`.
///
/// The first `M - 1` entries range over `grid + 1` evenly spaced levels in
/// `[0, c]` and the last entry takes the remainder; allocations whose
/// remainder leaves `[0, c]` are skipped. The set is permutation invariant, so
/// only non-increasing prefixes are enumerated, and the largest pairwise TV
/// over the sample is `max_k (max top-k sum - min bottom-k sum)`.
pub fn allocation_diameter_oracle(
    t_star: f64,
    c: f64,
    m: usize,
    grid: usize,
) -> Result<AllocationOracle, NormalizedError> {
    if m > ALLOCATION_ORACLE_MAX_M {
        return Err(NormalizedError::TooManyCensored { m, max: ALLOCATION_ORACLE_MAX_M });
    }
    if grid == 0 {
        return Err(NormalizedError::InvalidGrid(grid));
    }
    if !(0.0..=1.0).contains(&t_star) {
        return Err(NormalizedError::Domain { what: "t*", value: t_star });
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(NormalizedError::Domain { what: "c", value: c });
    }
    let tol = NumericPolicy::current().infeasibility_tol;
    if t_star > m as f64 * c + tol {
        return Err(NormalizedError::Infeasible { t_star, c, m });
    }
    if m <= 1 {
        return Ok(AllocationOracle { diameter: 0.0, allocations: 1 });
    }
    // Non-increasing sequences of length M - 1 over grid + 1 levels.
    let points = binomial(grid + m - 1, m - 1);
    if points > ORACLE_MAX_POINTS as f64 {
        return Err(NormalizedError::GridTooLarge { points, max: ORACLE_MAX_POINTS });
    }
    let mut search = AllocationSearch {
        t_star,
        c,
        m,
        step: c / grid as f64,
        slack: tol,
        prefix: Vec::with_capacity(m),
        top: vec![f64::NEG_INFINITY; m + 1],
        bottom: vec![f64::INFINITY; m + 1],
        count: 0,
        scratch: vec![0.0; m],
    };
    search.descend(grid, 0.0);
    let diameter = (1..m).map(|k| search.top[k] - search.bottom[k]).fold(0.0, f64::max);
    Ok(AllocationOracle { diameter, allocations: search.count })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

struct AllocationSearch {
    t_star: f64,
    c: f64,
    m: usize,
    step: f64,
    slack: f64,
    prefix: Vec<usize>,
    top: Vec<f64>,
    bottom: Vec<f64>,
    count: usize,
    scratch: Vec<f64>,
}

impl AllocationSearch {
    fn descend(&mut self, max_level: usize, sum: f64) {
        if self.prefix.len() == self.m - 1 {
            self.visit(sum);
            return;
        }
        let remaining_slots = (self.m - 1 - self.prefix.len()) as f64;
        for level in (0..=max_level).rev() {
            let v = (level as f64 * self.step).min(self.c);
            if sum + v > self.t_star + self.slack {
                continue;
            }
            // Even saturating every later slot cannot reach t*.
            if sum + v * remaining_slots + self.c < self.t_star - self.slack {
                break;
            }
            self.prefix.push(level);
            self.descend(level, sum + v);
            self.prefix.pop();
        }
    }

    fn visit(&mut self, sum: f64) {
        let last = self.t_star - sum;
        if last < -self.slack || last > self.c + self.slack {
            return;
        }
        self.count += 1;
        for (slot, level) in self.scratch.iter_mut().zip(&self.prefix) {
            *slot = (*level as f64 * self.step).min(self.c);
        }
        self.scratch[self.m - 1] = last.clamp(0.0, self.c);
        self.scratch.sort_by(|a, b| b.total_cmp(a));
        let (mut hi, mut lo) = (0.0, 0.0);
        for k in 1..=self.m {
            hi += self.scratch[k - 1];
            lo += self.scratch[self.m - k];
            if hi > self.top[k] {
                self.top[k] = hi;
            }
            if lo < self.bottom[k] {
                self.bottom[k] = lo;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identified_set::{geometry, point_tv};
    use crate::observation::AccessMode;

    fn normalized(v: usize, probs: &[f64]) -> TopKObservation {
        let pairs = probs.iter().enumerate().map(|(i, p)| (i as u32, libm::log(*p))).collect();
        TopKObservation::new(v, pairs, AccessMode::NormalizedLogProbs, "n").unwrap()
    }

    #[test]
    fn full_head_is_a_point() {
        let obs = normalized(3, &[0.5, 0.3, 0.2]);
        let ng = normalized_geometry(&obs).unwrap();
        assert_eq!(ng.diameter, 0.0);
        assert_eq!(ng.condition, NormalizedCondition::SinglePoint);
    }

    #[test]
    fn single_censored_token_is_a_point() {
        let obs = normalized(3, &[0.6, 0.3]);
        let ng = normalized_geometry(&obs).unwrap();
        assert_eq!(ng.m, 1);
        assert_eq!(ng.diameter, 0.0);
        assert_eq!(ng.condition, NormalizedCondition::SinglePoint);
    }

    #[test]
    fn disjoint_supports_example() {
        // Head 0.7 + 0.1, t* = 0.2, c = 0.1, M = 10.
        let obs = normalized(12, &[0.7, 0.1]);
        let (s, ng) = analyze_normalized(&obs).unwrap();
        assert!((ng.t_star - 0.2).abs() < 1e-12);
        assert!((ng.c - 0.1).abs() < 1e-12);
        assert_eq!(ng.condition, NormalizedCondition::DisjointSupports);
        assert_eq!(ng.diameter, ng.t_star);
        let (p, q) = disjoint_witness(&ng, &s).unwrap();
        let g = geometry(&s);
        assert!(fabs(point_tv(&g, &p, &q) - ng.t_star) < 1e-15);
        assert!(within_normalized_caps(&ng, &s, &p, 1e-12));
        assert!(within_normalized_caps(&ng, &s, &q, 1e-12));
        let oracle = allocation_diameter_oracle(ng.t_star, ng.c, ng.m, 4).unwrap();
        assert!((oracle.diameter - 0.2).abs() < 1e-3);
    }

    #[test]
    fn indeterminate_bracket() {
        // t* = 0.2 over M = 2 tokens capped at 0.15 needs 4.
        let oracle = allocation_diameter_oracle(0.2, 0.15, 2, 30).unwrap();
        assert!((oracle.diameter - 0.1).abs() < 1e-9);
        assert!((front_back_tv(0.2, 0.15, 2) - 0.1).abs() < 1e-12);

        let obs = normalized(5, &[0.35, 0.3, 0.15]);
        let ng = normalized_geometry(&obs).unwrap();
        assert_eq!(ng.condition, NormalizedCondition::Indeterminate);
        assert!(ng.bracket.0 < ng.bracket.1);
        assert!((ng.bracket.1 - 0.2).abs() < 1e-12);
        assert!((ng.bracket.0 - 0.1).abs() < 1e-12);
        assert!(disjoint_witness(&ng, &summarize(&obs)).is_none());
    }

    #[test]
    fn infeasible_tail_is_rejected() {
        // t* = 0.5 but two censored tokens can hold at most 0.2.
        let obs = normalized(4, &[0.4, 0.1]);
        assert!(matches!(normalized_geometry(&obs), Err(NormalizedError::Infeasible { .. })));
        assert!(allocation_diameter_oracle(0.5, 0.1, 2, 10).is_err());
    }

    #[test]
    fn oracle_limits() {
        assert_eq!(allocation_diameter_oracle(0.05, 0.1, 1, 10).unwrap().diameter, 0.0);
        assert!(allocation_diameter_oracle(0.1, 0.1, 13, 10).is_err());
        assert!(matches!(allocation_diameter_oracle(0.5, 0.1, 12, 200), Err(NormalizedError::GridTooLarge { .. })));
    }
}
