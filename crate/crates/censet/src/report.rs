//! Report records and their JSON, CSV and table renderings.
//!
//! Field names are part of the output contract. All divergences are in nats
//! unless `units` says `bits`.

use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const R_BIN_FOOTNOTE: &str =
    "r_bin is a certified lower bound on the minimax KL risk (binary endpoint restriction), not the minimax value";

/// JSON has no NaN or infinity: NaN is written as `null`, the infinities as
/// `"inf"` / `"-inf"`, and all three read back.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_nan() {
            s.serialize_none()
        } else if x.is_infinite() {
            s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(f64::NAN),
            Some(Repr::Num(x)) => Ok(x),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, null, \"inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    pub fn from_bits_flag(bits: bool) -> Self {
        if bits {
            Units::Bits
        } else {
            Units::Nats
        }
    }

    /// Convert a divergence computed in nats.
    pub fn kl(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub t_star: f64,
    pub c: f64,
    pub diameter: f64,
    pub condition: String,
    pub bracket_lower: f64,
    pub bracket_upper: f64,
    pub tail_mass_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRow {
    pub position_id: String,
    pub mode: String,
    pub vocab_size: usize,
    pub k: usize,
    pub m: usize,
    pub exactly_identified: bool,
    pub u_k: f64,
    #[serde(with = "nonfinite")]
    pub log_odds: f64,
    pub cap_at_zero: f64,
    pub cap_at_u_k: f64,
    pub r_bin: f64,
    pub s_star: f64,
    pub g_max: f64,
    pub g_argmax: f64,
    pub first_order: f64,
    pub normalized: Option<NormalizedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub footnote: String,
    pub positions: Vec<AnalyzeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    #[serde(with = "nonfinite")]
    pub uk_mean: f64,
    #[serde(with = "nonfinite")]
    pub uk_sd: f64,
    #[serde(with = "nonfinite")]
    pub rbin_mean: f64,
    #[serde(with = "nonfinite")]
    pub tail_mass_mean: f64,
    pub n: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub source: String,
    pub seed: Option<u64>,
    pub footnote: String,
    pub rows: Vec<SweepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub position_id: String,
    pub k: usize,
    pub u_k: f64,
    pub r_bin: f64,
    pub verdict: String,
    pub at_threshold: bool,
    pub within_first_order: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub delta: f64,
    pub threshold_band: f64,
    pub impossible_count: usize,
    pub footnote: String,
    pub verdicts: Vec<VerdictRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub position_id: String,
    pub u_k: f64,
    pub u_r: f64,
    #[serde(with = "nonfinite")]
    pub log_c_r: f64,
    pub reserve: f64,
    pub sup_kl: f64,
    /// The inner adversary was exact; otherwise `sup_kl` is a lower bound.
    pub sup_kl_exact: bool,
    pub g_max_u_r: f64,
    pub max_perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub rho: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub n_positions: usize,
    pub anchored: bool,
    pub median_max_perturbation: f64,
    pub compliance: Vec<Compliance>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub rho: f64,
    pub positions: Vec<ReferenceRow>,
    pub calibration: Option<CalibrationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub k: usize,
    pub n: usize,
    pub uk_mean: f64,
    pub uk_sd: f64,
    pub rbin_mean: f64,
    pub sup_kl_mean: f64,
    pub g_max_mean: f64,
    pub tail_mass_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub seed: u64,
    pub teacher: String,
    pub footnote: String,
    pub rows: Vec<SimulateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRow {
    pub position_id: String,
    pub u_k: f64,
    pub r_bin: f64,
    pub sup_kl: f64,
    pub argmax_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeReport {
    pub schema_version: u32,
    pub command: String,
    pub units: Units,
    pub average_lower: f64,
    pub average_upper: f64,
    pub joint_grid_sup: f64,
    pub factored_grid_sum: f64,
    pub joint_grid_points: usize,
    pub footnote: String,
    pub positions: Vec<ComposeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<OracleCheck>,
}

/// Rows of strings plus trailing notes.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&self.header, &mut out);
        for row in &self.rows {
            line(row, &mut out);
        }
        for note in &self.notes {
            let _ = writeln!(out, "* {note}");
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn fix(x: f64) -> String {
    format!("{x:.6}")
}

fn full(x: f64) -> String {
    format!("{x}")
}

/// A report that can be emitted in every supported format.
pub trait Render: Serialize {
    /// Rows for the text table and, when `csv` is true, for CSV output
    /// (full precision).
    fn rows(&self, csv: bool) -> Option<Table>;

    fn emit<W: Write>(&self, format: Format, mut w: W) -> Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, self)?;
                writeln!(w)?;
            }
            Format::Csv => match self.rows(true) {
                Some(t) => t.write_csv(w)?,
                None => bail!("csv output is not available for this command"),
            },
            Format::Table => match self.rows(false) {
                Some(t) => w.write_all(t.to_text().as_bytes())?,
                None => {
                    serde_json::to_writer_pretty(&mut w, self)?;
                    writeln!(w)?;
                }
            },
        }
        Ok(())
    }
}

fn num(csv: bool) -> fn(f64) -> String {
    if csv {
        full
    } else {
        fix
    }
}

impl Render for AnalyzeReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t = Table::new(&[
            "position_id",
            "mode",
            "V",
            "K",
            "M",
            "u_k",
            "r_bin",
            "s_star",
            "g_max",
            "cap_at_zero",
            "t_star",
            "normalized",
        ]);
        for r in &self.positions {
            let (t_star, cond) = match &r.normalized {
                Some(n) => (f(n.t_star), n.condition.clone()),
                None => (String::new(), String::new()),
            };
            let cond = if r.exactly_identified { "exactly identified".to_string() } else { cond };
            t.rows.push(vec![
                r.position_id.clone(),
                r.mode.clone(),
                r.vocab_size.to_string(),
                r.k.to_string(),
                r.m.to_string(),
                f(r.u_k),
                f(r.r_bin),
                f(r.s_star),
                f(r.g_max),
                f(r.cap_at_zero),
                t_star,
                cond,
            ]);
        }
        t.notes.push(format!("divergences in {}", units_name(self.units)));
        t.notes.push(self.footnote.clone());
        Some(t)
    }
}

fn units_name(u: Units) -> &'static str {
    match u {
        Units::Nats => "nats",
        Units::Bits => "bits",
    }
}

impl Render for SweepReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t = Table::new(&["K", "uk_mean", "uk_sd", "rbin_mean", "tail_mass_mean", "n"]);
        for r in &self.rows {
            t.rows.push(vec![
                r.k.to_string(),
                f(r.uk_mean),
                f(r.uk_sd),
                f(r.rbin_mean),
                f(r.tail_mass_mean),
                r.n.to_string(),
            ]);
            if let Some(w) = &r.warning {
                t.notes.push(format!("K={}: {w}", r.k));
            }
        }
        t.notes.push(self.footnote.clone());
        Some(t)
    }
}

impl Render for CertifyReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t = Table::new(&["position_id", "K", "u_k", "r_bin", "verdict", "at_threshold", "within_first_order"]);
        for r in &self.verdicts {
            t.rows.push(vec![
                r.position_id.clone(),
                r.k.to_string(),
                f(r.u_k),
                f(r.r_bin),
                r.verdict.clone(),
                r.at_threshold.to_string(),
                r.within_first_order.to_string(),
            ]);
        }
        t.notes.push(format!("delta = {} {}", self.delta, units_name(self.units)));
        t.notes.push(self.footnote.clone());
        Some(t)
    }
}

impl Render for ReferenceReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t = Table::new(&["position_id", "u_k", "u_r", "reserve", "sup_kl", "sup_kl_exact", "g_max_u_r"]);
        for r in &self.positions {
            t.rows.push(vec![
                r.position_id.clone(),
                f(r.u_k),
                f(r.u_r),
                f(r.reserve),
                f(r.sup_kl),
                r.sup_kl_exact.to_string(),
                f(r.g_max_u_r),
            ]);
        }
        if let Some(c) = &self.calibration {
            t.notes.push(format!(
                "median max perturbation {:.4} over {} positions",
                c.median_max_perturbation, c.n_positions
            ));
            for comp in &c.compliance {
                t.notes.push(format!("rho={} violated at {:.1}% of positions", comp.rho, 100.0 * comp.violation_rate));
            }
            t.notes.push(c.label.clone());
        }
        Some(t)
    }
}

impl Render for SimulateReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t =
            Table::new(&["K", "n", "uk_mean", "uk_sd", "rbin_mean", "sup_kl_mean", "g_max_mean", "tail_mass_mean"]);
        for r in &self.rows {
            t.rows.push(vec![
                r.k.to_string(),
                r.n.to_string(),
                f(r.uk_mean),
                f(r.uk_sd),
                f(r.rbin_mean),
                f(r.sup_kl_mean),
                f(r.g_max_mean),
                f(r.tail_mass_mean),
            ]);
        }
        t.notes.push(format!("seed {} ({})", self.seed, self.teacher));
        t.notes.push(self.footnote.clone());
        Some(t)
    }
}

impl Render for ComposeReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        let f = num(csv);
        let mut t = Table::new(&["position_id", "u_k", "r_bin", "sup_kl", "argmax_t"]);
        for r in &self.positions {
            t.rows.push(vec![r.position_id.clone(), f(r.u_k), f(r.r_bin), f(r.sup_kl), f(r.argmax_t)]);
        }
        if !csv {
            t.notes.push(format!(
                "average bracket [{:.6}, {:.6}]; joint grid sup {:.9} vs factored {:.9} over {} points",
                self.average_lower,
                self.average_upper,
                self.joint_grid_sup,
                self.factored_grid_sum,
                self.joint_grid_points
            ));
            t.notes.push(self.footnote.clone());
        }
        Some(t)
    }
}

impl Render for OracleReport {
    fn rows(&self, csv: bool) -> Option<Table> {
        if csv {
            return None;
        }
        let mut t = Table::new(&["check", "result", "cases", "max_error", "tolerance"]);
        for c in &self.checks {
            t.rows.push(vec![
                c.name.clone(),
                if c.passed { "PASS" } else { "FAIL" }.to_string(),
                c.cases.to_string(),
                format!("{:.3e}", c.max_error),
                format!("{:.0e}", c.tolerance),
            ]);
        }
        t.notes.push(format!("seed {}", self.seed));
        Some(t)
    }
}
