//! Line-delimited observation and reference-dump formats.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use censet_core::observation::{AccessMode, TopKObservation};
use censet_core::reference::ReferenceLogits;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error("read failed at line {line}: {source}")]
    Read { line: usize, source: std::io::Error },
    #[error("no reference record for position {0}")]
    MissingReference(String),
    #[error("{observations} observations but {references} reference records and no position ids to match on")]
    ReferenceCount { observations: usize, references: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: u32,
    pub score: f64,
}

/// One line of an observation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub vocab_size: usize,
    pub mode: String,
    pub topk: Vec<TokenScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_id: Option<String>,
}

impl ObservationRecord {
    pub fn into_observation(self) -> Result<TopKObservation, String> {
        let mode: AccessMode = self.mode.parse().map_err(|e| format!("{e}"))?;
        let pairs = self.topk.into_iter().map(|t| (t.token, t.score)).collect();
        TopKObservation::new(self.vocab_size, pairs, mode, self.position_id.as_deref().unwrap_or(""))
            .map_err(|e| e.to_string())
    }

    /// Inverse of [`into_observation`](Self::into_observation): scores in the
    /// order they were received.
    pub fn from_observation(obs: &TopKObservation) -> Self {
        ObservationRecord {
            vocab_size: obs.vocab_size(),
            mode: obs.mode().as_str().to_string(),
            topk: obs.revealed_as_received().map(|r| TokenScore { token: r.token, score: r.score }).collect(),
            position_id: (!obs.position_id().is_empty()).then(|| obs.position_id().to_string()),
        }
    }
}

/// Label used in reports: the record's id, or its line number.
pub fn position_label(obs: &TopKObservation, line: usize) -> String {
    if obs.position_id().is_empty() {
        format!("line{line}")
    } else {
        obs.position_id().to_string()
    }
}

/// A parsed observation and the line it came from.
#[derive(Debug, Clone)]
pub struct Located {
    pub line: usize,
    pub label: String,
    pub obs: TopKObservation,
}

pub fn parse_observations<R: BufRead>(reader: R) -> Result<Vec<Located>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| FormatError::Read { line: n, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObservationRecord =
            serde_json::from_str(&line).map_err(|e| FormatError::Line { line: n, message: e.to_string() })?;
        let id = record.position_id.clone();
        let obs = record.into_observation().map_err(|message| FormatError::Line {
            line: n,
            message: match &id {
                Some(id) => format!("position {id}: {message}"),
                None => message,
            },
        })?;
        out.push(Located { line: n, label: position_label(&obs, n), obs });
    }
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Vec<Located>, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Open { path: path.display().to_string(), source })?;
    parse_observations(BufReader::new(file))
}

pub fn write_observations<W: Write>(mut w: W, observations: &[TopKObservation]) -> std::io::Result<()> {
    for obs in observations {
        serde_json::to_writer(&mut w, &ObservationRecord::from_observation(obs))?;
        writeln!(w)?;
    }
    Ok(())
}

/// A logit that may be written as the string `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LogitValue {
    Number(f64),
    Text(NegInf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum NegInf {
    #[serde(rename = "-inf")]
    NegInf,
}

impl LogitValue {
    fn value(self) -> f64 {
        match self {
            LogitValue::Number(x) => x,
            LogitValue::Text(NegInf::NegInf) => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ReferenceEntry {
    token: u32,
    logit: LogitValue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ReferenceRecord {
    Dense {
        #[serde(default)]
        position_id: Option<String>,
        dense: Vec<LogitValue>,
    },
    Sparse {
        #[serde(default)]
        position_id: Option<String>,
        #[serde(default)]
        default: Option<LogitValue>,
        entries: Vec<ReferenceEntry>,
    },
}

#[derive(Debug, Clone)]
pub struct ReferenceDump {
    pub position_id: Option<String>,
    pub logits: ReferenceLogits,
}

pub fn parse_references<R: BufRead>(reader: R) -> Result<Vec<ReferenceDump>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| FormatError::Read { line: n, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReferenceRecord = serde_json::from_str(&line).map_err(|e| FormatError::Line {
            line: n,
            message: format!("expected {{position_id, dense}} or {{position_id, default, entries}}: {e}"),
        })?;
        out.push(match record {
            ReferenceRecord::Dense { position_id, dense } => ReferenceDump {
                position_id,
                logits: ReferenceLogits::Dense(dense.into_iter().map(LogitValue::value).collect()),
            },
            ReferenceRecord::Sparse { position_id, default, entries } => {
                let mut map = BTreeMap::new();
                for e in entries {
                    if map.insert(e.token, e.logit.value()).is_some() {
                        return Err(FormatError::Line { line: n, message: format!("duplicate token {}", e.token) });
                    }
                }
                ReferenceDump {
                    position_id,
                    logits: ReferenceLogits::Sparse { entries: map, default: default.map(LogitValue::value) },
                }
            }
        });
    }
    Ok(out)
}

pub fn read_references(path: &Path) -> Result<Vec<ReferenceDump>, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Open { path: path.display().to_string(), source })?;
    parse_references(BufReader::new(file))
}

/// Pair each observation with its reference: by position id when every
/// observation has one, otherwise by order.
pub fn match_references<'a>(
    observations: &[Located],
    references: &'a [ReferenceDump],
) -> Result<Vec<&'a ReferenceLogits>, FormatError> {
    let by_id = observations.iter().all(|o| !o.obs.position_id().is_empty());
    if by_id {
        let index: HashMap<&str, &ReferenceLogits> =
            references.iter().filter_map(|r| r.position_id.as_deref().map(|id| (id, &r.logits))).collect();
        return observations
            .iter()
            .map(|o| {
                index.get(o.obs.position_id()).copied().ok_or_else(|| FormatError::MissingReference(o.label.clone()))
            })
            .collect();
    }
    if observations.len() != references.len() {
        return Err(FormatError::ReferenceCount { observations: observations.len(), references: references.len() });
    }
    Ok(references.iter().map(|r| &r.logits).collect())
}

/// Full logit vector from a `K = V` dump, indexed by token id.
pub fn full_logits(obs: &TopKObservation) -> Option<Vec<f64>> {
    if obs.censored_count() != 0 {
        return None;
    }
    let mut z = vec![0.0; obs.vocab_size()];
    for r in obs.revealed() {
        z[r.token as usize] = r.score;
    }
    Some(z)
}
