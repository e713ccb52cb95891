//! One function per subcommand, each returning a report.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use censet_core::composition::{
    aggregate_sweep, censor, check_k_list, compose_nonadaptive, position_stats, teacher_position, LogitLaw,
    SyntheticTeacherConfig, JOINT_GRID_MAX_POINTS,
};
use censet_core::identified_set::{per_token_cap, SetGeometry};
use censet_core::minimax::{critical_k, g_max, symmetric_estimator, worst_case_risk, MinimaxCertificate, Verdict};
use censet_core::normalized::normalized_geometry;
use censet_core::observation::{hidden_tail_mass, summarize, AccessMode};
use censet_core::reference::{calibrate_positions, reference_estimator, reference_geometry, reference_worst_case_risk};
use censet_core::NumericPolicy;
use rayon::prelude::*;

use crate::cli::{ComposeArgs, GlobalArgs, Law, ModeArg, ReferenceArgs, SweepArgs, TeacherArgs};
use crate::io::{full_logits, match_references, read_observations, read_references, Located};
use crate::report::*;

pub const DEFAULT_K_LIST: [usize; 6] = [1, 5, 10, 20, 50, 100];

fn require_input(g: &GlobalArgs) -> Result<&Path> {
    g.input.as_deref().ok_or_else(|| anyhow!("--input is required for this command"))
}

fn load(g: &GlobalArgs) -> Result<Vec<Located>> {
    let path = require_input(g)?;
    let obs = read_observations(path)?;
    if obs.is_empty() {
        bail!("{} contains no observations", path.display());
    }
    Ok(obs)
}

fn geometry_of(l: &Located) -> SetGeometry {
    SetGeometry::new(summarize(&l.obs))
}

pub fn analyze(g: &GlobalArgs) -> Result<AnalyzeReport> {
    let observations = load(g)?;
    let units = Units::from_bits_flag(g.bits);
    let positions = observations
        .par_iter()
        .map(|l| analyze_one(l, units).with_context(|| format!("position {}", l.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalyzeReport {
        schema_version: SCHEMA_VERSION,
        command: "analyze".into(),
        units,
        footnote: R_BIN_FOOTNOTE.into(),
        positions,
    })
}

fn analyze_one(l: &Located, units: Units) -> Result<AnalyzeRow> {
    let geom = geometry_of(l);
    let m = geom.censored_count();
    let u = geom.diameter();
    let cert = MinimaxCertificate::new(u)?;
    let (cap_at_zero, cap_at_u_k) =
        if m == 0 { (0.0, 0.0) } else { (per_token_cap(&geom, 0.0)?, per_token_cap(&geom, u)?) };
    let normalized = if l.obs.mode() == AccessMode::NormalizedLogProbs {
        let ng = normalized_geometry(&l.obs)?;
        Some(NormalizedRow {
            t_star: ng.t_star,
            c: ng.c,
            diameter: ng.diameter,
            condition: ng.condition.as_str().into(),
            bracket_lower: ng.bracket.0,
            bracket_upper: ng.bracket.1,
            tail_mass_clamped: hidden_tail_mass(&l.obs)?.clamped,
        })
    } else {
        None
    };
    Ok(AnalyzeRow {
        position_id: l.label.clone(),
        mode: l.obs.mode().as_str().into(),
        vocab_size: l.obs.vocab_size(),
        k: l.obs.k(),
        m,
        exactly_identified: m == 0,
        u_k: u,
        log_odds: geom.log_odds(),
        cap_at_zero,
        cap_at_u_k,
        r_bin: units.kl(cert.r_bin),
        s_star: cert.s_star,
        g_max: units.kl(cert.g_max),
        g_argmax: cert.g_argmax,
        first_order: units.kl(cert.first_order),
        normalized,
    })
}

fn k_list(g: &GlobalArgs) -> Result<Vec<usize>> {
    let ks = g.k.clone().unwrap_or_else(|| DEFAULT_K_LIST.to_vec());
    check_k_list(&ks)?;
    Ok(ks)
}

pub fn teacher_config(t: &TeacherArgs, seed: u64) -> SyntheticTeacherConfig {
    let law = match t.law {
        Law::Gaussian => LogitLaw::GaussianIid { mean: t.mean, sd: t.sd },
        Law::Dirichlet => LogitLaw::DirichletSoftmax { concentration: t.concentration },
        Law::Peaked => LogitLaw::PeakedHead { head_size: t.head_size, gap: t.gap },
    };
    SyntheticTeacherConfig { vocab_size: t.vocab, law, temperature: t.temperature, seed }
}

fn describe(c: &SyntheticTeacherConfig, positions: usize) -> String {
    format!("{:?}, V={}, temperature={}, positions={}", c.law, c.vocab_size, c.temperature, positions)
}

fn synthetic_positions(c: &SyntheticTeacherConfig, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        bail!("--positions must be at least 1");
    }
    Ok((0..n as u64).into_par_iter().map(|i| teacher_position(c, i)).collect::<Result<Vec<_>, _>>()?)
}

fn mode_of(m: ModeArg) -> AccessMode {
    match m {
        ModeArg::Logits => AccessMode::UnnormalizedLogits,
        ModeArg::Logprobs => AccessMode::NormalizedLogProbs,
    }
}

pub fn ksweep(g: &GlobalArgs, a: &SweepArgs) -> Result<SweepReport> {
    let ks = k_list(g)?;
    let (positions, source, seed) = match &g.input {
        Some(_) => {
            let dumps = load(g)?;
            let logits = dumps
                .iter()
                .map(|l| {
                    full_logits(&l.obs).ok_or_else(|| {
                        anyhow!("position {}: ksweep needs full dumps with K = V, got K = {}", l.label, l.obs.k())
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (logits, "dump".to_string(), None)
        }
        None => {
            let c = teacher_config(&a.teacher, g.seed);
            (
                synthetic_positions(&c, a.teacher.positions)?,
                format!("synthetic: {}", describe(&c, a.teacher.positions)),
                Some(g.seed),
            )
        }
    };
    let mode = mode_of(a.mode);
    let stats = positions.par_iter().map(|z| position_stats(z, &ks, mode)).collect::<Result<Vec<_>, _>>()?;
    let units = Units::from_bits_flag(g.bits);
    let rows = aggregate_sweep(&ks, &stats)
        .into_iter()
        .map(|r| SweepRecord {
            k: r.k,
            uk_mean: r.uk_mean,
            uk_sd: r.uk_sd,
            rbin_mean: units.kl(r.rbin_mean),
            tail_mass_mean: r.tail_mass_mean,
            n: r.n_positions,
            warning: r.warning,
        })
        .collect();
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        command: "ksweep".into(),
        units,
        source,
        seed,
        footnote: R_BIN_FOOTNOTE.into(),
        rows,
    })
}

pub fn certify(g: &GlobalArgs) -> Result<CertifyReport> {
    let delta = g.delta.ok_or_else(|| anyhow!("--delta is required for certify"))?;
    let observations = load(g)?;
    let units = Units::from_bits_flag(g.bits);
    // Delta is given in the display units.
    let delta_nats = match units {
        Units::Nats => delta,
        Units::Bits => delta * std::f64::consts::LN_2,
    };
    let geoms: Vec<SetGeometry> = observations.iter().map(geometry_of).collect();
    let verdicts = critical_k(&geoms, delta_nats)?;
    let rows: Vec<VerdictRow> = observations
        .iter()
        .zip(&verdicts)
        .map(|(l, v)| VerdictRow {
            position_id: l.label.clone(),
            k: v.k,
            u_k: v.u,
            r_bin: units.kl(v.r_bin),
            verdict: match v.verdict {
                Verdict::Impossible => "IMPOSSIBLE".into(),
                Verdict::Open => "OPEN".into(),
            },
            at_threshold: v.at_threshold,
            within_first_order: v.within_first_order,
        })
        .collect();
    Ok(CertifyReport {
        schema_version: SCHEMA_VERSION,
        command: "certify".into(),
        units,
        delta,
        threshold_band: NumericPolicy::current().threshold_band,
        impossible_count: rows.iter().filter(|r| r.verdict == "IMPOSSIBLE").count(),
        footnote: R_BIN_FOOTNOTE.into(),
        verdicts: rows,
    })
}

pub fn reference(g: &GlobalArgs, a: &ReferenceArgs) -> Result<ReferenceReport> {
    let rho = g.rho.ok_or_else(|| anyhow!("--rho is required for reference"))?;
    let ref_path = g.reference.as_deref().ok_or_else(|| anyhow!("--reference is required for reference"))?;
    let observations = load(g)?;
    let dumps = read_references(ref_path)?;
    let refs = match_references(&observations, &dumps)?;
    let units = Units::from_bits_flag(g.bits);

    let mut rows = Vec::with_capacity(observations.len());
    let mut pair_sets = Vec::new();
    for (l, r) in observations.iter().zip(&refs) {
        let geom = geometry_of(l);
        let rb = reference_geometry(&geom, r, rho).with_context(|| format!("position {}", l.label))?;
        let est = reference_estimator(&geom, &rb, None)?;
        let risk = reference_worst_case_risk(&geom, &rb, &est, a.t_grid)?;
        let g_max_u_r = if rb.u_r > 0.0 && rb.u_r < 1.0 { g_max(rb.u_r)?.g_max } else { 0.0 };
        let pairs: Vec<(f64, f64)> = l
            .obs
            .revealed()
            .iter()
            .filter_map(|t| r.logit_at(t.token).filter(|z| z.is_finite()).map(|z| (t.score, z)))
            .collect();
        let max_perturbation = if pairs.len() >= 2 {
            let anchor = a.anchor_top.then_some(0);
            let d = censet_core::reference::calibrate_rho(&pairs, &[], anchor)?;
            pair_sets.push(pairs);
            Some(d.max)
        } else {
            None
        };
        rows.push(ReferenceRow {
            position_id: l.label.clone(),
            u_k: geom.diameter(),
            u_r: rb.u_r,
            log_c_r: rb.log_cr,
            reserve: est.reserve,
            sup_kl: units.kl(risk.sup_kl),
            sup_kl_exact: risk.exact_inner,
            g_max_u_r: units.kl(g_max_u_r),
            max_perturbation,
        });
    }
    let mut candidates = a.rho_candidates.clone();
    if !candidates.contains(&rho) {
        candidates.push(rho);
    }
    candidates.sort_by(f64::total_cmp);
    let calibration = if pair_sets.is_empty() {
        None
    } else {
        let c = calibrate_positions(&pair_sets, &candidates, a.anchor_top.then_some(0))?;
        Some(CalibrationSummary {
            n_positions: c.n_positions,
            anchored: a.anchor_top,
            median_max_perturbation: c.median_max_perturbation,
            compliance: c
                .violation_rate
                .into_iter()
                .map(|(rho, violation_rate)| Compliance { rho, violation_rate })
                .collect(),
            label: c.label.into(),
        })
    };
    Ok(ReferenceReport {
        schema_version: SCHEMA_VERSION,
        command: "reference".into(),
        units,
        rho,
        positions: rows,
        calibration,
    })
}

struct SimPoint {
    u: f64,
    r_bin: f64,
    sup_kl: f64,
    g_max: f64,
    tail_mass: f64,
}

fn simulate_position(z: &[f64], ks: &[usize], t_grid: usize) -> Result<Vec<Option<SimPoint>>> {
    let stats = position_stats(z, ks, AccessMode::UnnormalizedLogits)?;
    ks.iter()
        .zip(stats)
        .map(|(&k, stat)| {
            let Some(stat) = stat else { return Ok(None) };
            let obs = censor(z, k, AccessMode::UnnormalizedLogits, "")?;
            let geom = SetGeometry::new(summarize(&obs));
            let est = symmetric_estimator(&geom, None)?;
            let sup = worst_case_risk(&geom, &est, t_grid)?;
            let cert = MinimaxCertificate::new(stat.u)?;
            Ok(Some(SimPoint {
                u: stat.u,
                r_bin: stat.r_bin,
                sup_kl: sup.sup_kl,
                g_max: cert.g_max,
                tail_mass: stat.tail_mass,
            }))
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn simulate(g: &GlobalArgs, t: &TeacherArgs) -> Result<SimulateReport> {
    let ks = k_list(g)?;
    let config = teacher_config(t, g.seed);
    let positions = synthetic_positions(&config, t.positions)?;
    let per_position = positions.par_iter().map(|z| simulate_position(z, &ks, t.t_grid)).collect::<Result<Vec<_>>>()?;
    let units = Units::from_bits_flag(g.bits);
    let rows = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let col: Vec<&SimPoint> = per_position.iter().filter_map(|p| p[j].as_ref()).collect();
            let pick = |f: fn(&SimPoint) -> f64| col.iter().map(|p| f(p)).collect::<Vec<f64>>();
            let u = pick(|p| p.u);
            let (uk_mean, uk_sd) = if u.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mu = mean(&u);
                (mu, (u.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / u.len() as f64).sqrt())
            };
            let avg = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { mean(&v) };
            SimulateRow {
                k,
                n: col.len(),
                uk_mean,
                uk_sd,
                rbin_mean: units.kl(avg(pick(|p| p.r_bin))),
                sup_kl_mean: units.kl(avg(pick(|p| p.sup_kl))),
                g_max_mean: units.kl(avg(pick(|p| p.g_max))),
                tail_mass_mean: avg(pick(|p| p.tail_mass)),
            }
        })
        .collect();
    Ok(SimulateReport {
        schema_version: SCHEMA_VERSION,
        command: "simulate".into(),
        units,
        seed: g.seed,
        teacher: describe(&config, t.positions),
        footnote: R_BIN_FOOTNOTE.into(),
        rows,
    })
}

/// Largest per-position grid whose product stays within the joint budget.
pub fn auto_joint_grid(m: usize) -> Option<usize> {
    let per_axis = (JOINT_GRID_MAX_POINTS as f64).powf(1.0 / m as f64).floor() as usize;
    let mut grid = per_axis.saturating_sub(1).min(200);
    while grid >= 1 && ((grid + 1) as f64).powi(m as i32) > JOINT_GRID_MAX_POINTS as f64 {
        grid -= 1;
    }
    (grid >= 1).then_some(grid)
}

pub fn compose(g: &GlobalArgs, a: &ComposeArgs) -> Result<ComposeReport> {
    let observations = load(g)?;
    let geoms: Vec<SetGeometry> = observations.iter().map(geometry_of).collect();
    let ests = geoms.iter().map(|geom| symmetric_estimator(geom, None)).collect::<Result<Vec<_>, _>>()?;
    let joint_grid = match a.joint_grid {
        Some(j) => j,
        None => auto_joint_grid(geoms.len()).ok_or_else(|| {
            anyhow!("{} positions are too many for the joint-grid check; split the input", geoms.len())
        })?,
    };
    let c = compose_nonadaptive(&geoms, &ests, a.t_grid, joint_grid)?;
    let units = Units::from_bits_flag(g.bits);
    Ok(ComposeReport {
        schema_version: SCHEMA_VERSION,
        command: "compose".into(),
        units,
        average_lower: units.kl(c.average_lower),
        average_upper: units.kl(c.average_upper),
        joint_grid_sup: units.kl(c.joint_grid_sup),
        factored_grid_sum: units.kl(c.factored_grid_sum),
        joint_grid_points: c.joint_grid_points,
        footnote: R_BIN_FOOTNOTE.into(),
        positions: observations
            .iter()
            .zip(&c.per_position)
            .map(|(l, p)| ComposeRow {
                position_id: l.label.clone(),
                u_k: p.u,
                r_bin: units.kl(p.r_bin),
                sup_kl: units.kl(p.sup_kl),
                argmax_t: p.argmax_t,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_grid_budget() {
        assert_eq!(auto_joint_grid(1), Some(200));
        assert_eq!(auto_joint_grid(3), Some(157));
        let g = auto_joint_grid(10).unwrap();
        assert!(((g + 1) as f64).powi(10) <= JOINT_GRID_MAX_POINTS as f64);
        assert_eq!(auto_joint_grid(30), None);
    }
}
