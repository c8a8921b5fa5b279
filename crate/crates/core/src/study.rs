//! Replication harness: generate, fit and summarize many synthetic trials,
//! then aggregate estimator quality per parameter class.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{FlpsModel, ItemSource, ParamRole, PriorConfig};
use crate::rng::{derive_seed, Domain};
use crate::sampler::{run_chains, summarize, SamplerConfig};
use crate::simgen::{generate_dataset, ScenarioConfig};

pub const DEFAULT_RHAT_THRESHOLD: f64 = 1.1;

fn default_rhat_threshold() -> f64 {
    DEFAULT_RHAT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDesign {
    pub cells: Vec<ScenarioConfig>,
    pub replications: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Master seed. Replication `r` of every cell whose `seed` field is `s`
    /// uses the same derived seed, so cells with equal `s` share random
    /// streams.
    #[serde(default)]
    pub seed: u64,
    /// A replication counts as converged when every parameter's split
    /// R-hat is below this value.
    #[serde(default = "default_rhat_threshold")]
    pub rhat_threshold: f64,
}

impl StudyDesign {
    /// The desk-scale default: Rasch and 2PL cells at N=500, J=50.
    pub fn desk(replications: usize, seed: u64) -> Self {
        Self {
            cells: vec![
                ScenarioConfig::new(crate::ModelKind::Rasch, 500, 50),
                ScenarioConfig::new(crate::ModelKind::TwoPl, 500, 50),
            ],
            replications,
            sampler: SamplerConfig::default(),
            prior: PriorConfig::default(),
            seed,
            rhat_threshold: DEFAULT_RHAT_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("study design has no cells".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.rhat_threshold > 1.0) {
            return Err(Error::Config(format!(
                "rhat_threshold must exceed 1, got {}",
                self.rhat_threshold
            )));
        }
        for (c, cell) in self.cells.iter().enumerate() {
            cell.validate()
                .map_err(|e| Error::Config(format!("cell {}: {e}", c + 1)))?;
        }
        self.sampler.validate()?;
        self.prior.validate()
    }

    /// Seed of replication `r` of cell `cell`.
    pub fn replication_seed(&self, cell: usize, r: usize) -> u64 {
        let base = derive_seed(self.seed, Domain::Replication, self.cells[cell].seed);
        derive_seed(base, Domain::Replication, r as u64)
    }
}

/// Parameter classes reported per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Tau0,
    Tau1,
    Omega,
    Beta,
    Gamma,
    A,
    D,
    EtaTreated,
    EtaControl,
}

impl ParamClass {
    pub const ALL: [ParamClass; 9] = [
        ParamClass::Tau0,
        ParamClass::Tau1,
        ParamClass::Omega,
        ParamClass::Beta,
        ParamClass::Gamma,
        ParamClass::A,
        ParamClass::D,
        ParamClass::EtaTreated,
        ParamClass::EtaControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Tau0 => "tau0",
            ParamClass::Tau1 => "tau1",
            ParamClass::Omega => "omega",
            ParamClass::Beta => "beta",
            ParamClass::Gamma => "gamma",
            ParamClass::A => "a",
            ParamClass::D => "d",
            ParamClass::EtaTreated => "eta_treated",
            ParamClass::EtaControl => "eta_control",
        }
    }

    /// Class of a sampled coordinate; `None` for `beta0`, `gamma0` and the
    /// two scales.
    fn of(role: ParamRole, treated: &[bool]) -> Option<Self> {
        Some(match role {
            ParamRole::Tau0 => ParamClass::Tau0,
            ParamRole::Tau1 => ParamClass::Tau1,
            ParamRole::Omega => ParamClass::Omega,
            ParamRole::Beta(_) => ParamClass::Beta,
            ParamRole::Gamma(_) => ParamClass::Gamma,
            ParamRole::Slope { .. } => ParamClass::A,
            ParamRole::Intercept { .. } => ParamClass::D,
            ParamRole::Eta(i) if treated[i] => ParamClass::EtaTreated,
            ParamRole::Eta(_) => ParamClass::EtaControl,
            _ => return None,
        })
    }
}

/// Posterior summary of one sampled parameter next to its generating value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamRecord {
    pub name: String,
    pub class: Option<ParamClass>,
    pub truth: f64,
    pub mean: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub rhat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationFit {
    pub params: Vec<ParamRecord>,
    pub max_rhat: f64,
    pub converged: bool,
    pub divergences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    /// `Err` holds the failure message of a replication that could not be fitted.
    pub outcome: std::result::Result<ReplicationFit, String>,
    /// Wall-clock seconds; never written to report files.
    pub elapsed: f64,
}

impl ReplicationRecord {
    pub fn fit(&self) -> Option<&ReplicationFit> {
        self.outcome.as_ref().ok()
    }
}

fn run_replication(design: &StudyDesign, cell: usize, r: usize) -> ReplicationRecord {
    let start = Instant::now();
    let seed = design.replication_seed(cell, r);
    let outcome = fit_replication(design, cell, seed).map_err(|e| e.to_string());
    ReplicationRecord {
        cell,
        replication: r,
        seed,
        outcome,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

fn fit_replication(design: &StudyDesign, cell: usize, seed: u64) -> Result<ReplicationFit> {
    let scenario = design.cells[cell].clone().with_seed(seed);
    let (data, truth) = generate_dataset(&scenario)?;
    let treated = data.z().to_vec();
    let model = FlpsModel::new(data, design.prior.clone(), ItemSource::Estimated)?;
    let cfg = SamplerConfig {
        seed: derive_seed(seed, Domain::Fit, 0),
        ..design.sampler.clone()
    };
    let draws = run_chains(&model, &cfg)?;
    let summaries = summarize(&draws);
    let mut max_rhat = f64::NEG_INFINITY;
    let mut converged = true;
    let params = model
        .roles()
        .iter()
        .zip(summaries)
        .map(|(role, s)| {
            if !(s.rhat < design.rhat_threshold) {
                converged = false;
            }
            max_rhat = if s.rhat.is_nan() || max_rhat.is_nan() {
                f64::NAN
            } else {
                max_rhat.max(s.rhat)
            };
            ParamRecord {
                class: ParamClass::of(*role, &treated),
                truth: role.value_in(&truth.params),
                name: s.name,
                mean: s.mean,
                q2_5: s.q2_5,
                q97_5: s.q97_5,
                rhat: s.rhat,
            }
        })
        .collect();
    Ok(ReplicationFit {
        params,
        max_rhat,
        converged,
        divergences: draws.divergences(),
    })
}

pub fn bias(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(estimates.len(), truths.len())?;
    let n = estimates.len() as f64;
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| e - t)
        .sum::<f64>()
        / n)
}

pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(estimates.len(), truths.len())?;
    let n = estimates.len() as f64;
    Ok((estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        / n)
        .sqrt())
}

/// Fraction of closed intervals `[lo, hi]` containing their truth.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    check_pairs(intervals.len(), truths.len())?;
    if let Some(k) = intervals.iter().position(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::Config(format!(
            "interval {} has lower bound {} above upper bound {}",
            k + 1,
            intervals[k].0,
            intervals[k].1
        )));
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|&(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim("truths", a, b));
    }
    if a == 0 {
        return Err(Error::Config("no estimates to aggregate".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub cell: usize,
    pub model: String,
    pub n: usize,
    pub j: usize,
    pub class: ParamClass,
    /// Parameter instances pooled over fitted replications.
    pub instances: usize,
    pub replications: usize,
    pub fitted: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    /// Share of all replications (failed ones included) with every R-hat
    /// below the threshold.
    pub convergence_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn row(&self, cell: usize, class: ParamClass) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.class == class)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cell,model,n,j,class,instances,replications,fitted,bias,rmse,coverage,convergence_rate\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?}",
                r.cell + 1,
                r.model,
                r.n,
                r.j,
                r.class.name(),
                r.instances,
                r.replications,
                r.fitted,
                r.bias,
                r.rmse,
                r.coverage,
                r.convergence_rate
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = [
            "cell",
            "model",
            "N",
            "J",
            "class",
            "count",
            "R",
            "fitted",
            "bias",
            "rmse",
            "coverage",
            "converged",
        ];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            table.push(vec![
                (r.cell + 1).to_string(),
                r.model.clone(),
                r.n.to_string(),
                r.j.to_string(),
                r.class.name().to_string(),
                r.instances.to_string(),
                r.replications.to_string(),
                r.fitted.to_string(),
                fmt4(r.bias),
                fmt4(r.rmse),
                fmt4(r.coverage),
                fmt4(r.convergence_rate),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, row) in table.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 1 || c == 4 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if k == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

fn fmt4(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.4}")
    }
}

/// Aggregates replication records into per-cell, per-class rows. Records
/// may arrive in any order and may be a subset of the design's replications.
pub fn aggregate(design: &StudyDesign, records: &[ReplicationRecord]) -> Result<StudyReport> {
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.cell, r.replication));
    let mut rows = Vec::with_capacity(design.cells.len() * ParamClass::ALL.len());
    for (c, cell) in design.cells.iter().enumerate() {
        let in_cell: Vec<&ReplicationRecord> =
            sorted.iter().copied().filter(|r| r.cell == c).collect();
        let fits: Vec<&ReplicationFit> = in_cell.iter().filter_map(|r| r.fit()).collect();
        if !in_cell.is_empty() && fits.is_empty() {
            return Err(Error::CellFailed(format!(
                "{} ({} N={} J={}): {}",
                c + 1,
                cell.kind.name(),
                cell.n,
                cell.j,
                in_cell[0].outcome.as_ref().err().map_or("", |s| s.as_str())
            )));
        }
        let converged = fits.iter().filter(|f| f.converged).count();
        let convergence_rate = if in_cell.is_empty() {
            f64::NAN
        } else {
            converged as f64 / in_cell.len() as f64
        };
        for class in ParamClass::ALL {
            let (mut est, mut tru, mut iv) = (Vec::new(), Vec::new(), Vec::new());
            for f in &fits {
                for p in f.params.iter().filter(|p| p.class == Some(class)) {
                    est.push(p.mean);
                    tru.push(p.truth);
                    iv.push((p.q2_5, p.q97_5));
                }
            }
            let (b, e, cov) = if est.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (bias(&est, &tru)?, rmse(&est, &tru)?, coverage(&iv, &tru)?)
            };
            rows.push(ReportRow {
                cell: c,
                model: cell.kind.name().to_string(),
                n: cell.n,
                j: cell.j,
                class,
                instances: est.len(),
                replications: in_cell.len(),
                fitted: fits.len(),
                bias: b,
                rmse: e,
                coverage: cov,
                convergence_rate,
            });
        }
    }
    Ok(StudyReport { rows })
}

/// Runs every replication of every cell, calling `progress` as each one
/// finishes (in completion order). Returns records sorted by cell and
/// replication.
pub fn run_replications(
    design: &StudyDesign,
    progress: &(dyn Fn(&ReplicationRecord) + Sync),
) -> Result<Vec<ReplicationRecord>> {
    design.validate()?;
    let jobs: Vec<(usize, usize)> = (0..design.cells.len())
        .flat_map(|c| (0..design.replications).map(move |r| (c, r)))
        .collect();
    let mut records: Vec<ReplicationRecord> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let rec = run_replication(design, c, r);
            progress(&rec);
            rec
        })
        .collect();
    records.sort_by_key(|r| (r.cell, r.replication));
    Ok(records)
}

pub fn run_study(design: &StudyDesign) -> Result<(StudyReport, Vec<ReplicationRecord>)> {
    let records = run_replications(design, &|_| {})?;
    let report = aggregate(design, &records)?;
    Ok((report, records))
}

/// One line per replication for the run directory: seeds, convergence
/// flags and failure messages, without timings.
pub fn replications_csv(records: &[ReplicationRecord]) -> String {
    let mut out =
        String::from("cell,replication,seed,status,max_rhat,converged,divergences,message\n");
    for r in records {
        match &r.outcome {
            Ok(f) => {
                let _ = writeln!(
                    out,
                    "{},{},{},ok,{:?},{},{},",
                    r.cell + 1,
                    r.replication + 1,
                    r.seed,
                    f.max_rhat,
                    f.converged,
                    f.divergences
                );
            }
            Err(msg) => {
                let msg = msg.replace('"', "\"\"");
                let _ = writeln!(
                    out,
                    "{},{},{},failed,,false,,\"{msg}\"",
                    r.cell + 1,
                    r.replication + 1,
                    r.seed
                );
            }
        }
    }
    out
}
