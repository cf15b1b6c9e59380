//! CSV and JSON ingestion and report emission.
//!
//! Datasets use a long format: one row per observation with the cluster labels,
//! the response and optional covariates. Floats are written with the shortest
//! representation that parses back to the same bits.

use std::cmp::Ordering;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};

use crate::baseline::AnovaVariant;
use crate::design::{BalancedDataset, Design, GibbsConfig, OneWayDesign, Regressors, TwoWayNestedDesign};
use crate::error::{Error, Result};
use crate::gibbs::{PosteriorChains, PosteriorSummary};
use crate::simstudy::{
    full_grid, lower_bound_condition, table1_grid, Condition, Estimator, Generator, StudyConfig,
    StudyReport, StudyRow,
};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown format `{other}` (expected csv or json)"
            ))),
        }
    }
}

/// Column names of a long-format dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub cluster_a: String,
    pub cluster_b: Option<String>,
    pub y: String,
    /// Covariate columns; when non-empty an intercept column is prepended.
    pub covariates: Vec<String>,
    /// 0/1 column flagging heteroscedastic observations.
    pub indicator: Option<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            cluster_a: "cluster_a".into(),
            cluster_b: None,
            y: "y".into(),
            covariates: Vec::new(),
            indicator: None,
        }
    }
}

impl DatasetSchema {
    pub fn twoway() -> Self {
        Self {
            cluster_b: Some("cluster_b".into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: BalancedDataset,
    pub indicator: Option<Vec<bool>>,
    /// A-cluster labels in storage order.
    pub cluster_a_labels: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => match line {
            Some(line) => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
            None => Error::Format {
                path: path.to_path_buf(),
                message: format!("{kind:?}"),
            },
        },
    }
}

// Numeric labels sort numerically, everything else lexicographically after them.
fn label_cmp(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

struct Row {
    a: String,
    b: String,
    y: f64,
    x: Vec<f64>,
    z: bool,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column `{column}`: value must be finite"),
        });
    }
    Ok(v)
}

/// Group sizes of consecutive equal labels.
fn runs<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<(&'a str, usize)> {
    let mut out: Vec<(&str, usize)> = Vec::new();
    for l in labels {
        match out.last_mut() {
            Some((prev, count)) if *prev == l => *count += 1,
            _ => out.push((l, 1)),
        }
    }
    out
}

fn check_equal_sizes(groups: &[(&str, usize)], what: &str) -> Result<usize> {
    let size = groups[0].1;
    if let Some((label, s)) = groups.iter().find(|(_, s)| *s != size) {
        return Err(Error::UnbalancedDesign(format!(
            "{what} `{label}` has {s} rows, expected {size} like `{}`",
            groups[0].0
        )));
    }
    Ok(size)
}

pub fn read_dataset_csv(path: &Path, schema: &DatasetSchema) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let ia = column(&headers, &schema.cluster_a)?;
    let ib = schema.cluster_b.as_deref().map(|c| column(&headers, c)).transpose()?;
    let iy = column(&headers, &schema.y)?;
    let ix: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;
    let iz = schema.indicator.as_deref().map(|c| column(&headers, c)).transpose()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let z = match iz {
            None => false,
            Some(i) => match field(i) {
                "0" | "false" => false,
                "1" | "true" => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("indicator `{other}` must be 0 or 1"),
                    })
                }
            },
        };
        rows.push(Row {
            a: field(ia).to_string(),
            b: ib.map(|i| field(i).to_string()).unwrap_or_default(),
            y: parse_f64(field(iy), &schema.y, line)?,
            x: ix
                .iter()
                .zip(&schema.covariates)
                .map(|(&i, name)| parse_f64(field(i), name, line))
                .collect::<Result<_>>()?,
            z,
        });
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    rows.sort_by(|l, r| label_cmp(&l.a, &r.a).then_with(|| label_cmp(&l.b, &r.b)));

    let a_groups = runs(rows.iter().map(|r| r.a.as_str()));
    let a_size = check_equal_sizes(&a_groups, "cluster")?;
    let design: Design = if ib.is_some() {
        let mut b_count = None;
        let mut n = None;
        let mut start = 0;
        for (label, size) in &a_groups {
            let b_groups = runs(rows[start..start + size].iter().map(|r| r.b.as_str()));
            let bn = check_equal_sizes(&b_groups, &format!("sub-cluster of `{label}`"))?;
            if *b_count.get_or_insert(b_groups.len()) != b_groups.len() {
                return Err(Error::UnbalancedDesign(format!(
                    "cluster `{label}` has {} sub-clusters, expected {}",
                    b_groups.len(),
                    b_count.unwrap()
                )));
            }
            if *n.get_or_insert(bn) != bn {
                return Err(Error::UnbalancedDesign(format!(
                    "sub-clusters of `{label}` have {bn} rows, expected {}",
                    n.unwrap()
                )));
            }
            start += size;
        }
        TwoWayNestedDesign::new(a_groups.len(), b_count.unwrap(), n.unwrap())?.into()
    } else {
        OneWayDesign::new(a_groups.len(), a_size)?.into()
    };

    let regressors = if schema.covariates.is_empty() {
        None
    } else {
        let p = schema.covariates.len() + 1;
        let matrix = DMatrix::from_fn(rows.len(), p, |i, j| if j == 0 { 1.0 } else { rows[i].x[j - 1] });
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(schema.covariates.iter().cloned());
        Some(Regressors::new(names, matrix)?)
    };
    let indicator = iz.map(|_| rows.iter().map(|r| r.z).collect());
    let cluster_a_labels = a_groups.iter().map(|(l, _)| l.to_string()).collect();
    let values = rows.iter().map(|r| r.y).collect();
    Ok(LoadedDataset {
        data: BalancedDataset::new(design, values, regressors)?,
        indicator,
        cluster_a_labels,
    })
}

/// Writes `cluster_a, [cluster_b], y, covariates..., [z]` with 0-based integer labels.
/// An `intercept` regressor column is implied and not written.
pub fn write_dataset_csv(path: &Path, data: &BalancedDataset, indicator: Option<&[bool]>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset_csv_to(file, data, indicator).map_err(|e| csv_err(path, e))
}

pub fn write_dataset_csv_to<W: Write>(
    out: W,
    data: &BalancedDataset,
    indicator: Option<&[bool]>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let design = data.design();
    let covariates: Vec<(usize, &String)> = data
        .regressors()
        .map(|r| r.names().iter().enumerate().filter(|(_, n)| *n != INTERCEPT).collect())
        .unwrap_or_default();
    let mut header = vec!["cluster_a".to_string()];
    if let Design::TwoWay(_) = design {
        header.push("cluster_b".into());
    }
    header.push("y".into());
    header.extend(covariates.iter().map(|(_, n)| (*n).clone()));
    if indicator.is_some() {
        header.push("z".into());
    }
    w.write_record(&header)?;
    for (idx, y) in data.values().iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        match design {
            Design::OneWay(d) => rec.push(d.coords(idx).0.to_string()),
            Design::TwoWay(d) => {
                let (i, j, _) = d.coords(idx);
                rec.push(i.to_string());
                rec.push(j.to_string());
            }
        }
        rec.push(y.to_string());
        if let Some(r) = data.regressors() {
            rec.extend(covariates.iter().map(|(c, _)| r.matrix()[(idx, *c)].to_string()));
        }
        if let Some(z) = indicator {
            rec.push(if z[idx] { "1" } else { "0" }.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json_to<W: Write, T: Serialize>(mut out: W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_csv_rows_to<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes CSV rows or JSON to any sink; `label` names the sink in errors.
fn emit<W: Write, T: Serialize, J: Serialize>(
    out: W,
    label: &Path,
    format: Format,
    header: &[&str],
    rows: &[T],
    json: &J,
) -> Result<()> {
    match format {
        Format::Csv => write_csv_rows_to(out, header, rows).map_err(|e| csv_err(label, e)),
        Format::Json => write_json_to(out, json).map_err(io_err(label)),
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(io_err(path))
}

pub const STUDY_COLUMNS: [&str; 10] = [
    "estimator", "sigma2", "tau", "a", "n", "reps", "rmse", "bias", "coverage", "failures",
];

pub fn write_study_report(path: &Path, report: &StudyReport, format: Format) -> Result<()> {
    emit(create(path)?, path, format, &STUDY_COLUMNS, &report.rows, report)
}

pub fn write_study_report_to<W: Write>(out: W, report: &StudyReport, format: Format) -> Result<()> {
    emit(out, Path::new("<stdout>"), format, &STUDY_COLUMNS, &report.rows, report)
}

pub fn read_study_report(path: &Path, format: Format) -> Result<StudyReport> {
    match format {
        Format::Json => read_json(path),
        Format::Csv => {
            let file = File::open(path).map_err(io_err(path))?;
            let mut r = csv::Reader::from_reader(file);
            let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
            for c in STUDY_COLUMNS {
                column(&headers, c)?;
            }
            let rows = r
                .deserialize::<StudyRow>()
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| csv_err(path, e))?;
            Ok(StudyReport { rows })
        }
    }
}

/// Concatenates reports, keeping the first row for each repeated
/// `(estimator, sigma2, tau, a, n)` cell.
pub fn merge_reports(reports: &[StudyReport]) -> StudyReport {
    let mut seen: IndexMap<(Estimator, u64, u64, usize, usize), StudyRow> = IndexMap::new();
    for row in reports.iter().flat_map(|r| &r.rows) {
        let key = (row.estimator, row.sigma2.to_bits(), row.tau.to_bits(), row.a, row.n);
        seen.entry(key).or_insert_with(|| row.clone());
    }
    StudyReport {
        rows: seen.into_values().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub parameter: String,
    pub median: f64,
    pub mean: f64,
    pub trimmed_mean_10: f64,
    pub sd: f64,
    pub hpd_lo: f64,
    pub hpd_hi: f64,
    pub eti_lo: f64,
    pub eti_hi: f64,
    pub ess: f64,
}

impl FitRow {
    pub fn new(parameter: &str, s: &PosteriorSummary) -> Self {
        Self {
            parameter: parameter.to_string(),
            median: s.median,
            mean: s.mean,
            trimmed_mean_10: s.trimmed_mean_10,
            sd: s.sd,
            hpd_lo: s.hpd_95.0,
            hpd_hi: s.hpd_95.1,
            eti_lo: s.eti_95.0,
            eti_hi: s.eti_95.1,
            ess: s.ess,
        }
    }
}

pub const FIT_COLUMNS: [&str; 10] = [
    "parameter", "median", "mean", "trimmed_mean_10", "sd", "hpd_lo", "hpd_hi", "eti_lo", "eti_hi", "ess",
];

pub fn write_fit_summary(path: &Path, rows: &[FitRow], format: Format) -> Result<()> {
    emit(create(path)?, path, format, &FIT_COLUMNS, rows, &rows)
}

pub fn write_fit_summary_to<W: Write>(out: W, rows: &[FitRow], format: Format) -> Result<()> {
    emit(out, Path::new("<stdout>"), format, &FIT_COLUMNS, rows, &rows)
}

pub fn read_fit_summary(path: &Path, format: Format) -> Result<Vec<FitRow>> {
    match format {
        Format::Json => read_json(path),
        Format::Csv => {
            let file = File::open(path).map_err(io_err(path))?;
            csv::Reader::from_reader(file)
                .deserialize()
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| csv_err(path, e))
        }
    }
}

/// One `<parameter>.csv` per chain with columns `iteration, value, burn_in`.
pub fn write_chains(dir: &Path, chains: &PosteriorChains) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for name in chains.names() {
        let path = dir.join(format!("{name}.csv"));
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["iteration", "value", "burn_in"]).map_err(|e| csv_err(&path, e))?;
        for (i, v) in chains.get(name).unwrap_or_default().iter().enumerate() {
            let burn = if i < chains.burn_in() { "1" } else { "0" };
            w.write_record([i.to_string(), v.to_string(), burn.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// `τ` in a config file: a number, or `"lb"` for the near-boundary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub sigma2: f64,
    pub tau: TauSpec,
    pub a: usize,
    pub n: usize,
    /// Defaults to conditional for `τ ≥ 0` and marginal otherwise.
    #[serde(default)]
    pub generator: Option<Generator>,
}

impl ConditionSpec {
    pub fn resolve(&self) -> Result<Condition> {
        let tau = match &self.tau {
            TauSpec::Value(v) => *v,
            TauSpec::Named(s) if s.eq_ignore_ascii_case("lb") => lower_bound_condition(self.sigma2, self.n),
            TauSpec::Named(s) => {
                return Err(Error::InvalidConfig(format!(
                    "tau must be a number or \"lb\", got \"{s}\""
                )))
            }
        };
        let generator = self.generator.unwrap_or(if tau >= 0.0 {
            Generator::Conditional
        } else {
            Generator::Marginal
        });
        Condition::new(self.sigma2, tau, self.a, self.n, generator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Table1,
    Full,
}

/// Partial Gibbs settings; missing fields fall back to the protocol defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSpec {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub prior_g1: Option<f64>,
    pub prior_g2: Option<f64>,
    pub tau_a_shape: Option<crate::design::TauAShape>,
}

/// JSON study configuration. Every field is optional; command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfigFile {
    pub preset: Option<GridPreset>,
    pub grid: Option<Vec<ConditionSpec>>,
    pub reps: Option<usize>,
    pub estimators: Option<Vec<Estimator>>,
    pub seed: Option<u64>,
    pub gibbs: Option<GibbsSpec>,
    pub anova_variant: Option<AnovaVariant>,
}

pub fn read_study_config(path: &Path) -> Result<StudyConfigFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

impl StudyConfigFile {
    /// Resolves to a full configuration. `full` selects the 1,000-replication,
    /// 10,000/5,000 protocol as the base instead of the desk-scale one.
    pub fn resolve(&self, full: bool) -> Result<StudyConfig> {
        let grid = match (&self.grid, self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "give either `grid` or `preset`, not both".into(),
                ))
            }
            (Some(specs), None) => specs.iter().map(ConditionSpec::resolve).collect::<Result<_>>()?,
            (None, Some(GridPreset::Full)) => full_grid(),
            (None, Some(GridPreset::Table1)) | (None, None) => table1_grid(),
        };
        let seed = self.seed.unwrap_or(0);
        let base = if full {
            StudyConfig::full(grid, seed)
        } else {
            StudyConfig::desk(grid, seed)
        };
        let g = self.gibbs.clone().unwrap_or_default();
        let gibbs = GibbsConfig {
            iterations: g.iterations.unwrap_or(base.gibbs.iterations),
            burn_in: g.burn_in.unwrap_or(base.gibbs.burn_in),
            prior_g1: g.prior_g1.unwrap_or(base.gibbs.prior_g1),
            prior_g2: g.prior_g2.unwrap_or(base.gibbs.prior_g2),
            seed,
            tau_a_shape: g.tau_a_shape.unwrap_or_default(),
        };
        let cfg = StudyConfig {
            reps: self.reps.unwrap_or(base.reps),
            estimators: self.estimators.clone().unwrap_or(base.estimators.clone()),
            anova_variant: self.anova_variant.unwrap_or_default(),
            gibbs,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Serde helper: JSON has no NaN, so `null` reads back as NaN.
pub fn f64_or_nan<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}
