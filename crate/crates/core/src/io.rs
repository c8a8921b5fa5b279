//! File formats: dataset, ground truth, draws and summary CSV, plus atomic
//! writes. The layouts are described in `docs/formats.md`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::measurement::ResponseMatrix;
use crate::posterior::{MeasurementSpec, ParameterSet, TrialDataset};
use crate::sampler::{ParamSummary, PosteriorDraws};

pub const NA: &str = "NA";
pub const COVARIATE_PREFIX: &str = "x_";
pub const ITEM_PREFIX: &str = "item_";

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: u64, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_f64(path: &Path, line: u64, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(path, line, field, format!("`{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            line,
            field,
            format!("`{raw}` is not finite"),
        ));
    }
    Ok(v)
}

fn header_error(path: &Path, field: &str, message: impl Into<String>) -> Error {
    parse_err(path, 1, field, message)
}

/// Reads a dataset whose items follow `spec`. Item columns are matched to
/// the spec by position.
pub fn read_dataset(path: &Path, spec: &MeasurementSpec) -> Result<TrialDataset> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    for (k, want) in ["id", "z", "y"].iter().enumerate() {
        if cols.get(k) != Some(want) {
            return Err(header_error(
                path,
                cols.get(k).copied().unwrap_or(""),
                format!("column {} must be `{want}`", k + 1),
            ));
        }
    }
    let rest = &cols[3..];
    let n_cov = rest
        .iter()
        .take_while(|c| c.starts_with(COVARIATE_PREFIX))
        .count();
    let covariate_names: Vec<String> = rest[..n_cov].iter().map(|s| s.to_string()).collect();
    let item_cols = &rest[n_cov..];
    if let Some(bad) = item_cols.iter().find(|c| !c.starts_with(ITEM_PREFIX)) {
        return Err(header_error(
            path,
            bad,
            format!("expected covariates `{COVARIATE_PREFIX}*` followed by items `{ITEM_PREFIX}*`"),
        ));
    }
    if item_cols.len() != spec.n_items() {
        return Err(header_error(
            path,
            item_cols.last().copied().unwrap_or("item_*"),
            format!(
                "the model declares {} items but the file has {}",
                spec.n_items(),
                item_cols.len()
            ),
        ));
    }

    let (mut ids, mut z, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut rows: Vec<Vec<Option<u8>>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(
                path,
                line,
                "",
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "id", "empty subject id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(
                path,
                line,
                "id",
                format!("duplicate subject id `{id}`"),
            ));
        }
        let treated = match &rec[1] {
            "1" => true,
            "0" => false,
            other => {
                return Err(parse_err(
                    path,
                    line,
                    "z",
                    format!("`{other}` is not 0 or 1"),
                ))
            }
        };
        y.push(parse_f64(path, line, "y", &rec[2])?);
        for (k, name) in covariate_names.iter().enumerate() {
            x.push(parse_f64(path, line, name, &rec[3 + k])?);
        }
        let mut row = Vec::with_capacity(item_cols.len());
        for (j, name) in item_cols.iter().enumerate() {
            let raw = &rec[3 + n_cov + j];
            if raw == NA {
                row.push(None);
                continue;
            }
            if !treated {
                return Err(parse_err(
                    path,
                    line,
                    name,
                    "control subject (z=0) has a recorded response; responses are undefined off treatment and must be NA",
                ));
            }
            let m: u8 = raw.parse().map_err(|_| {
                parse_err(path, line, name, format!("`{raw}` is not a category or NA"))
            })?;
            let k = spec.categories[j];
            if m as usize >= k {
                return Err(parse_err(
                    path,
                    line,
                    name,
                    format!("category {m} outside 0..={} declared for this item", k - 1),
                ));
            }
            row.push(Some(m));
        }
        if treated {
            rows.push(row);
        }
        ids.push(id);
        z.push(treated);
    }
    let responses = ResponseMatrix::from_rows(&rows, spec.categories.clone())
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    TrialDataset::new(ids, z, y, x, covariate_names, responses, spec.clone())
}

/// Number of `item_*` columns in a dataset header, for building a
/// measurement spec before the full read.
pub fn count_item_columns(path: &Path) -> Result<usize> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?;
    Ok(header.iter().filter(|c| c.starts_with(ITEM_PREFIX)).count())
}

/// Serializes a dataset in the layout read by [`read_dataset`].
pub fn dataset_csv(data: &TrialDataset) -> Result<String> {
    if let Some(bad) = data
        .covariate_names()
        .iter()
        .find(|c| !c.starts_with(COVARIATE_PREFIX))
    {
        return Err(Error::Dataset(format!(
            "covariate `{bad}` needs the `{COVARIATE_PREFIX}` prefix to be written"
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "z".into(), "y".into()];
    header.extend(data.covariate_names().iter().cloned());
    header.extend((1..=data.spec().n_items()).map(|j| format!("{ITEM_PREFIX}{j}")));
    let to_csv = |e: csv::Error| Error::Dataset(e.to_string());
    w.write_record(&header).map_err(to_csv)?;
    let n_items = data.spec().n_items();
    for i in 0..data.n_subjects() {
        let mut rec = vec![
            data.ids()[i].clone(),
            if data.z()[i] { "1".into() } else { "0".into() },
            data.y()[i].to_string(),
        ];
        rec.extend(data.covariates(i).iter().map(|v| v.to_string()));
        match data.response_row(i) {
            Some(r) => rec.extend(
                data.responses()
                    .row(r)
                    .iter()
                    .map(|c| c.map_or(NA.to_string(), |m| m.to_string())),
            ),
            None => rec.extend(std::iter::repeat_n(NA.to_string(), n_items)),
        }
        w.write_record(&rec).map_err(to_csv)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_dataset(data: &TrialDataset, path: &Path) -> Result<()> {
    atomic_write(path, dataset_csv(data)?.as_bytes())
}

/// Ground truth as a JSON object keyed by parameter name.
pub fn truth_json(params: &ParameterSet) -> String {
    let map: Map<String, Value> = params
        .entries()
        .into_iter()
        .map(|(k, v)| (k, Value::from(v)))
        .collect();
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("finite values serialize");
    s.push('\n');
    s
}

pub fn write_truth(params: &ParameterSet, path: &Path) -> Result<()> {
    atomic_write(path, truth_json(params).as_bytes())
}

pub fn read_truth(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = read_to_string(path)?;
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    let value: Value = serde_json::from_str(&text).map_err(json_err)?;
    let Value::Object(map) = value else {
        return Err(parse_err(path, 1, "", "truth file must be a JSON object"));
    };
    map.into_iter()
        .map(|(k, v)| match v.as_f64() {
            Some(x) => Ok((k, x)),
            None => Err(parse_err(path, 1, &k, "value is not a number")),
        })
        .collect()
}

/// Reads a JSON config, rejecting unknown keys through the target's serde
/// attributes.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn draws_csv(draws: &PosteriorDraws) -> String {
    let mut out = String::from("chain,iter");
    for name in &draws.names {
        out.push(',');
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    let p = draws.n_params();
    for (c, chain) in draws.draws.iter().enumerate() {
        for t in 0..draws.n_draws {
            out.push_str(&format!("{},{}", c + 1, t + 1));
            for v in &chain[t * p..(t + 1) * p] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_draws(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    atomic_write(path, draws_csv(draws).as_bytes())
}

/// Reads a draws file. Chains must be numbered 1, 2, ... with iterations
/// 1, 2, ... in order; sampler statistics are not stored and come back empty.
pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("chain") || header.get(1) != Some("iter") {
        return Err(header_error(
            path,
            header.get(0).unwrap_or(""),
            "columns must start with `chain,iter`",
        ));
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    if names.is_empty() {
        return Err(header_error(path, "", "no parameter columns"));
    }
    let mut draws: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                "",
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let chain: usize = rec[0].parse().map_err(|_| {
            parse_err(
                path,
                line,
                "chain",
                format!("`{}` is not a chain number", &rec[0]),
            )
        })?;
        let iter: usize = rec[1].parse().map_err(|_| {
            parse_err(
                path,
                line,
                "iter",
                format!("`{}` is not an iteration number", &rec[1]),
            )
        })?;
        if chain == draws.len() + 1 {
            draws.push(Vec::new());
            counts.push(0);
        } else if chain != draws.len() || chain == 0 {
            return Err(parse_err(
                path,
                line,
                "chain",
                "chains must be numbered 1, 2, ... in contiguous blocks",
            ));
        }
        let c = chain - 1;
        if iter != counts[c] + 1 {
            return Err(parse_err(
                path,
                line,
                "iter",
                format!("expected iteration {}", counts[c] + 1),
            ));
        }
        counts[c] += 1;
        for (k, name) in names.iter().enumerate() {
            let raw = &rec[2 + k];
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, line, name, format!("`{raw}` is not a number")))?;
            draws[c].push(v);
        }
    }
    if draws.is_empty() {
        return Err(parse_err(path, 2, "", "no draws"));
    }
    if counts.iter().any(|&n| n != counts[0]) {
        return Err(parse_err(path, 0, "iter", "chains have different lengths"));
    }
    Ok(PosteriorDraws {
        names,
        draws,
        n_draws: counts[0],
        stats: Vec::new(),
    })
}

pub fn summary_csv(summaries: &[ParamSummary]) -> String {
    let mut out = String::from("name,mean,sd,q2.5,median,q97.5,rhat,ess\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&s.name),
            s.mean,
            s.sd,
            s.q2_5,
            s.median,
            s.q97_5,
            s.rhat,
            s.ess
        ));
    }
    out
}

pub fn write_summary(summaries: &[ParamSummary], path: &Path) -> Result<()> {
    atomic_write(path, summary_csv(summaries).as_bytes())
}

/// `dir/name`, creating `dir` when needed.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.join(name))
}
