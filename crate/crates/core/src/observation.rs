//! Top-K observations and the log-domain summary every other module consumes.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::math::{exp, expm1, logsumexp};
use crate::policy::NumericPolicy;

/// What the revealed scores mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessMode {
    /// Raw logits: log-probabilities up to an unknown additive shift.
    UnnormalizedLogits,
    /// Calibrated log-probabilities; the head mass is observed exactly.
    NormalizedLogProbs,
}

impl AccessMode {
    /// Wire name used by the JSONL format (`"logits"` / `"logprobs"`).
    pub fn as_str(self) -> &'static str {
        match self {
            AccessMode::UnnormalizedLogits => "logits",
            AccessMode::NormalizedLogProbs => "logprobs",
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for AccessMode {
    type Err = ObservationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logits" => Ok(AccessMode::UnnormalizedLogits),
            "logprobs" => Ok(AccessMode::NormalizedLogProbs),
            other => Err(ObservationError::UnknownMode(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservationError {
    #[error("vocabulary size must be positive")]
    ZeroVocab,
    #[error("observation reveals no tokens")]
    EmptyHead,
    #[error("{k} revealed tokens exceed vocabulary size {vocab_size}")]
    TooManyRevealed { k: usize, vocab_size: usize },
    #[error("token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("token {token} revealed more than once")]
    DuplicateToken { token: u32 },
    #[error("score for token {token} is not finite")]
    NonFiniteScore { token: u32 },
    #[error("log-probability {score} for token {token} is positive")]
    PositiveLogProb { token: u32, score: f64 },
    #[error("normalized head mass {mass} exceeds 1")]
    HeadMassExceedsOne { mass: f64 },
    #[error("unknown access mode {0:?}, expected \"logits\" or \"logprobs\"")]
    UnknownMode(String),
    #[error("hidden tail mass is only identified for normalized log-probabilities")]
    ModeMismatch,
}

/// One revealed `(token, score)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevealedToken {
    pub token: u32,
    pub score: f64,
}

/// A validated top-K observation at one prompt position.
///
/// Revealed entries are kept sorted by non-increasing score (stable, so ties
/// keep their received order); the received order is remembered for
/// reporting and re-serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKObservation {
    vocab_size: usize,
    revealed: Vec<RevealedToken>,
    received_rank: Vec<usize>,
    mode: AccessMode,
    position_id: String,
}

impl TopKObservation {
    pub fn new(
        vocab_size: usize,
        revealed: Vec<(u32, f64)>,
        mode: AccessMode,
        position_id: impl Into<String>,
    ) -> Result<Self, ObservationError> {
        if vocab_size == 0 {
            return Err(ObservationError::ZeroVocab);
        }
        if revealed.is_empty() {
            return Err(ObservationError::EmptyHead);
        }
        if revealed.len() > vocab_size {
            return Err(ObservationError::TooManyRevealed { k: revealed.len(), vocab_size });
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for &(token, score) in &revealed {
            if token as usize >= vocab_size {
                return Err(ObservationError::TokenOutOfRange { token, vocab_size });
            }
            if !seen.insert(token) {
                return Err(ObservationError::DuplicateToken { token });
            }
            if !score.is_finite() {
                return Err(ObservationError::NonFiniteScore { token });
            }
            if mode == AccessMode::NormalizedLogProbs && score > 0.0 {
                return Err(ObservationError::PositiveLogProb { token, score });
            }
        }

        let mut order: Vec<usize> = (0..revealed.len()).collect();
        order.sort_by(|&a, &b| revealed[b].1.total_cmp(&revealed[a].1));
        let mut received_rank = alloc::vec![0; revealed.len()];
        for (rank, &idx) in order.iter().enumerate() {
            received_rank[idx] = rank;
        }
        let sorted: Vec<RevealedToken> =
            order.iter().map(|&i| RevealedToken { token: revealed[i].0, score: revealed[i].1 }).collect();

        if mode == AccessMode::NormalizedLogProbs {
            let scores: Vec<f64> = sorted.iter().map(|r| r.score).collect();
            let mass = exp(logsumexp(&scores));
            if mass > 1.0 + NumericPolicy::current().head_mass_tol {
                return Err(ObservationError::HeadMassExceedsOne { mass });
            }
        }

        Ok(TopKObservation { vocab_size, revealed: sorted, received_rank, mode, position_id: position_id.into() })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of revealed tokens, `K`.
    pub fn k(&self) -> usize {
        self.revealed.len()
    }

    /// Number of censored tokens, `M = V - K`.
    pub fn censored_count(&self) -> usize {
        self.vocab_size - self.revealed.len()
    }

    pub fn mode(&self) -> AccessMode {
        self.mode
    }

    pub fn position_id(&self) -> &str {
        &self.position_id
    }

    /// Revealed entries, sorted by non-increasing score.
    pub fn revealed(&self) -> &[RevealedToken] {
        &self.revealed
    }

    /// Revealed entries in the order they were received.
    pub fn revealed_as_received(&self) -> impl Iterator<Item = RevealedToken> + '_ {
        self.received_rank.iter().map(move |&r| self.revealed[r])
    }

    /// Censoring threshold: the smallest revealed score.
    pub fn tau(&self) -> f64 {
        self.revealed[self.revealed.len() - 1].score
    }

    pub fn is_revealed(&self, token: u32) -> bool {
        self.revealed.iter().any(|r| r.token == token)
    }
}

/// Log-domain quantities shared by all downstream computations.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub vocab_size: usize,
    /// Revealed token ids, in the same order as `alpha`.
    pub tokens: Vec<u32>,
    /// `log Z_A`, the log-sum-exp of the revealed scores.
    pub log_za: f64,
    /// Smallest revealed score.
    pub tau: f64,
    /// Censored token count `V - K`.
    pub m: usize,
    /// Head conditional distribution `exp(z_v - log Z_A)`.
    pub alpha: Vec<f64>,
}

impl LogSummary {
    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_revealed(&self, token: u32) -> bool {
        self.tokens.contains(&token)
    }

    /// Censored token ids in ascending order.
    pub fn censored_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        let mut revealed: Vec<u32> = self.tokens.clone();
        revealed.sort_unstable();
        let mut next = 0usize;
        (0..self.vocab_size as u32).filter(move |tok| {
            while next < revealed.len() && revealed[next] < *tok {
                next += 1;
            }
            !(next < revealed.len() && revealed[next] == *tok)
        })
    }
}

pub fn summarize(obs: &TopKObservation) -> LogSummary {
    let scores: Vec<f64> = obs.revealed.iter().map(|r| r.score).collect();
    let log_za = logsumexp(&scores);
    LogSummary {
        vocab_size: obs.vocab_size,
        tokens: obs.revealed.iter().map(|r| r.token).collect(),
        log_za,
        tau: obs.tau(),
        m: obs.censored_count(),
        alpha: scores.iter().map(|&z| exp(z - log_za)).collect(),
    }
}

/// Hidden tail mass `t* = 1 - sum exp(score)` of a normalized observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMass {
    /// Clamped to `[0, 1]`.
    pub value: f64,
    pub raw: f64,
    /// Raw value fell below `-tail_clamp_tol`.
    pub clamped: bool,
}

pub fn hidden_tail_mass(obs: &TopKObservation) -> Result<TailMass, ObservationError> {
    if obs.mode != AccessMode::NormalizedLogProbs {
        return Err(ObservationError::ModeMismatch);
    }
    let scores: Vec<f64> = obs.revealed.iter().map(|r| r.score).collect();
    let raw = -expm1(logsumexp(&scores));
    let tol = NumericPolicy::current().tail_clamp_tol;
    Ok(TailMass { value: raw.clamp(0.0, 1.0), raw, clamped: raw < -tol })
}
