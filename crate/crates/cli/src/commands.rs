use std::fmt::Write as _;
use std::path::Path;

use flps::io::{self, output_path};
use flps::posterior::{
    Constraint, MeasurementSpec, OracleCheckConfig, OracleCheckReport, PriorConfig,
};
use flps::sampler::{run_chains, summarize, ParamSummary, SamplerConfig};
use flps::simgen::{generate_dataset, MissingMode, ScenarioConfig};
use flps::study::{aggregate, replications_csv, run_replications, StudyDesign};
use flps::{FlpsModel, ItemSource, ModelKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::manifest::{digest, now, InputDigest, RunManifest};
use crate::{
    Cli, CliError, Command, FitArgs, OracleCheckArgs, SimulateArgs, StudyArgs, SummarizeArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Model configuration consumed by `fit` and written by `simulate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Categories>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Categories {
    Uniform(usize),
    PerItem(Vec<usize>),
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(a, workers),
        Command::Fit(a) => fit(a, workers),
        Command::Study(a) => study(a, workers),
        Command::OracleCheck(a) => oracle_check(a, workers),
        Command::Summarize(a) => summarize_cmd(a),
    })
}

/// Parses a snake_case enum value the way the JSON configs spell it.
fn parse_enum<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(Value::String(value.to_string()))
        .map_err(|_| CliError::Validation(format!("--{flag}: unrecognized value `{value}`")))
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, InputDigest)> {
    let d = digest(path)?;
    Ok((io::read_json(path)?, d))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("config serializes");
    s.push('\n');
    s
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    io::atomic_write(&output_path(dir, name)?, to_json(v).as_bytes())?;
    Ok(())
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn replay(args: &[&str]) -> Vec<String> {
    std::iter::once("flps")
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn simulate(a: SimulateArgs, workers: Option<usize>) -> Result<()> {
    let started = now();
    let mut inputs = Vec::new();
    let mut cfg = match &a.config {
        Some(p) => {
            let (c, d) = load::<ScenarioConfig>(p)?;
            inputs.push(d);
            c
        }
        None => ScenarioConfig::default(),
    };
    if let Some(m) = &a.model {
        cfg.kind = parse_enum("model", m)?;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(j) = a.j {
        cfg.j = j;
    }
    if let Some(c) = a.categories {
        cfg.categories = c;
    }
    if let Some(f) = a.missing_fraction {
        cfg.missing_fraction = f;
    }
    if let Some(m) = &a.missing_mode {
        cfg.missing_mode = parse_enum::<MissingMode>("missing-mode", m)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let (data, truth) = generate_dataset(&cfg)?;
    let spec = data.spec();
    let model = FitConfig {
        kind: spec.kind,
        categories: Some(Categories::Uniform(cfg.n_categories())),
        constraint: Some(spec.constraint),
        prior: PriorConfig::default(),
        sampler: SamplerConfig::default(),
    };

    io::write_dataset(&data, &output_path(&a.out, "dataset.csv")?)?;
    io::write_truth(&truth.params, &a.out.join("truth.json"))?;
    write_json(&a.out, "model.json", &model)?;
    write_json(&a.out, "scenario.json", &cfg)?;

    eprintln!(
        "simulated {} subjects ({} treated), {} items, into {}",
        data.n_subjects(),
        data.n_treated(),
        spec.n_items(),
        a.out.display()
    );
    RunManifest {
        tool: "flps",
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate".into(),
        argv: argv(),
        replay: replay(&["simulate", "--config", "scenario.json", "--out", "."]),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: cfg.seed,
        workers,
        started,
        finished: now(),
        inputs,
        outputs: ["dataset.csv", "truth.json", "model.json", "scenario.json"]
            .map(String::from)
            .to_vec(),
    }
    .write(&a.out)
}

fn fit(a: FitArgs, workers: Option<usize>) -> Result<()> {
    let started = now();
    let mut inputs = vec![digest(&a.data)?];
    let mut cfg = match &a.config {
        Some(p) => {
            let (c, d) = load::<FitConfig>(p)?;
            inputs.push(d);
            c
        }
        None => {
            let kind = a.model.as_deref().ok_or_else(|| {
                CliError::Validation("either --config or --model is required".into())
            })?;
            FitConfig {
                kind: parse_enum("model", kind)?,
                categories: None,
                constraint: None,
                prior: PriorConfig::default(),
                sampler: SamplerConfig::default(),
            }
        }
    };
    if a.config.is_some() {
        if let Some(m) = &a.model {
            cfg.kind = parse_enum("model", m)?;
        }
    }
    if let Some(c) = a.categories {
        cfg.categories = Some(Categories::Uniform(c));
    }
    if let Some(c) = &a.constraint {
        cfg.constraint = Some(parse_enum("constraint", c)?);
    }
    if let Some(c) = a.chains {
        cfg.sampler.chains = c;
    }
    if let Some(i) = a.iter {
        cfg.sampler.iterations = i;
    }
    if let Some(w) = a.warmup {
        cfg.sampler.warmup = w;
    }
    if let Some(s) = a.seed {
        cfg.sampler.seed = s;
    }
    cfg.sampler.validate()?;
    cfg.prior.validate()?;

    let n_items = io::count_item_columns(&a.data)?;
    let spec = build_spec(&cfg, n_items)?;
    cfg.categories = Some(Categories::PerItem(spec.categories.clone()));
    cfg.constraint = Some(spec.constraint);

    let data = io::read_dataset(&a.data, &spec)?;
    let model = FlpsModel::new(data, cfg.prior.clone(), ItemSource::Estimated)?;
    let draws = run_chains(&model, &cfg.sampler)?;
    let summaries = summarize(&draws);

    io::write_draws(&draws, &output_path(&a.out, "draws.csv")?)?;
    io::write_summary(&summaries, &a.out.join("summary.csv"))?;
    write_json(&a.out, "config.json", &cfg)?;

    let shown: Vec<ParamSummary> = summaries
        .iter()
        .filter(|s| !s.name.starts_with("eta["))
        .cloned()
        .collect();
    print!("{}", summary_table(&shown));
    eprintln!(
        "{} chains x {} draws, {} divergent transitions",
        draws.n_chains(),
        cfg.sampler.kept(),
        draws.divergences()
    );

    // Absolute, so the replay works from inside the run directory.
    let data_arg = std::fs::canonicalize(&a.data)
        .unwrap_or_else(|_| a.data.clone())
        .display()
        .to_string();
    RunManifest {
        tool: "flps",
        version: env!("CARGO_PKG_VERSION"),
        command: "fit".into(),
        argv: argv(),
        replay: replay(&[
            "fit",
            "--data",
            &data_arg,
            "--config",
            "config.json",
            "--out",
            ".",
        ]),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: cfg.sampler.seed,
        workers,
        started,
        finished: now(),
        inputs,
        outputs: ["draws.csv", "summary.csv", "config.json"]
            .map(String::from)
            .to_vec(),
    }
    .write(&a.out)
}

fn build_spec(cfg: &FitConfig, n_items: usize) -> Result<MeasurementSpec> {
    let categories = match &cfg.categories {
        Some(Categories::PerItem(v)) => {
            if v.len() != n_items {
                return Err(CliError::Validation(format!(
                    "config lists categories for {} items but the dataset has {n_items}",
                    v.len()
                )));
            }
            v.clone()
        }
        Some(Categories::Uniform(k)) => vec![*k; n_items],
        None if cfg.kind.is_binary() => vec![2; n_items],
        None => {
            return Err(CliError::Validation(format!(
                "{} items need a category count (--categories or `categories` in the config)",
                cfg.kind
            )))
        }
    };
    if cfg.kind.is_binary() && categories.iter().any(|&k| k != 2) {
        return Err(CliError::Validation(format!(
            "{} items are binary",
            cfg.kind
        )));
    }
    let mut spec = MeasurementSpec::new(cfg.kind, n_items, 2)?;
    spec.categories = categories;
    if let Some(c) = cfg.constraint {
        spec.constraint = c;
    }
    spec.validate()?;
    Ok(spec)
}

fn study(a: StudyArgs, workers: Option<usize>) -> Result<()> {
    let started = now();
    let (mut design, d) = load::<StudyDesign>(&a.design)?;
    if let Some(s) = a.seed {
        design.seed = s;
    }
    if let Some(r) = a.replications {
        design.replications = r;
    }
    design.validate()?;
    write_json(&a.out, "design.json", &design)?;

    let total = design.cells.len() * design.replications;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let quiet = a.quiet;
    let records = run_replications(&design, &|rec| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if !quiet {
            let status = match &rec.outcome {
                Ok(f) if f.converged => "converged".to_string(),
                Ok(f) => format!("not converged (max R-hat {:.3})", f.max_rhat),
                Err(e) => format!("failed: {e}"),
            };
            eprintln!(
                "[{k}/{total}] cell {} replication {}: {status} in {:.1}s",
                rec.cell + 1,
                rec.replication + 1,
                rec.elapsed
            );
        }
    })?;
    io::atomic_write(
        &a.out.join("replications.csv"),
        replications_csv(&records).as_bytes(),
    )?;
    let report = aggregate(&design, &records)?;
    io::atomic_write(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    let text = report.to_text();
    io::atomic_write(&a.out.join("report.txt"), text.as_bytes())?;
    print!("{text}");

    RunManifest {
        tool: "flps",
        version: env!("CARGO_PKG_VERSION"),
        command: "study".into(),
        argv: argv(),
        replay: replay(&["study", "--design", "design.json", "--out", "."]),
        config: serde_json::to_value(&design).expect("design serializes"),
        seed: design.seed,
        workers,
        started,
        finished: now(),
        inputs: vec![d],
        outputs: [
            "design.json",
            "replications.csv",
            "report.csv",
            "report.txt",
        ]
        .map(String::from)
        .to_vec(),
    }
    .write(&a.out)
}

fn oracle_check(a: OracleCheckArgs, workers: Option<usize>) -> Result<()> {
    let started = now();
    let mut inputs = Vec::new();
    let mut cfg = match &a.config {
        Some(p) => {
            let (c, d) = load::<OracleCheckConfig>(p)?;
            inputs.push(d);
            c
        }
        None => OracleCheckConfig::default(),
    };
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(j) = a.j {
        cfg.j = j;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(i) = a.iter {
        cfg.sampler.iterations = i;
    }
    if let Some(w) = a.warmup {
        cfg.sampler.warmup = w;
    }
    if let Some(i) = a.oracle_iter {
        cfg.oracle.iterations = i;
    }
    if let Some(n) = a.nodes {
        cfg.oracle.nodes = n;
    }
    let report = flps::posterior::oracle_check(&cfg)?;
    print!("{}", oracle_table(&report));

    if let Some(out) = &a.out {
        write_json(out, "oracle_config.json", &cfg)?;
        write_json(out, "oracle_check.json", &report)?;
        RunManifest {
            tool: "flps",
            version: env!("CARGO_PKG_VERSION"),
            command: "oracle-check".into(),
            argv: argv(),
            replay: replay(&[
                "oracle-check",
                "--config",
                "oracle_config.json",
                "--out",
                ".",
            ]),
            config: serde_json::to_value(&cfg).expect("config serializes"),
            seed: cfg.seed,
            workers,
            started,
            finished: now(),
            inputs,
            outputs: ["oracle_config.json", "oracle_check.json"]
                .map(String::from)
                .to_vec(),
        }
        .write(out)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Runtime(
            "sampler and reference posterior disagree".into(),
        ))
    }
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    digest(&a.draws)?;
    let draws = io::read_draws(&a.draws)?;
    let summaries = summarize(&draws);
    print!("{}", summary_table(&summaries));
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        io::write_summary(&summaries, out)?;
    }
    Ok(())
}

fn summary_table(rows: &[ParamSummary]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>8}",
        "name", "mean", "sd", "q2.5", "median", "q97.5", "rhat", "ess"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.3} {:>8.0}",
            r.name, r.mean, r.sd, r.q2_5, r.median, r.q97_5, r.rhat, r.ess
        );
    }
    s
}

fn oracle_table(r: &OracleCheckReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>10} {:>8} {:>10} {:>8} {:>7}  result",
        "param", "sampler", "mcse", "reference", "mcse", "z"
    );
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>10.4} {:>8.4} {:>10.4} {:>8.4} {:>7.2}  {}",
            row.name,
            row.sampler_mean,
            row.sampler_mcse,
            row.oracle_mean,
            row.oracle_mcse,
            row.z,
            if row.pass { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(
        s,
        "quadrature refinement change {:.2e} ({}), integration error {:.2e}, {} divergent transitions",
        r.refinement_change,
        if r.refinement_pass { "PASS" } else { "FAIL" },
        r.integration_error,
        r.divergences
    );
    s
}
