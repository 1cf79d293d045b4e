use std::path::Path;

use anyhow::{bail, Context, Result};
use djmc_core::experiments::stats::{mean, percentile_interval};
use djmc_core::experiments::{bootstrap_means, histogram, unpaired_t_test, HistogramBin};
use serde::Serialize;

use crate::cli::{BootstrapArgs, ColumnArgs, TtestArgs};

fn parse_filter(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=')
        .with_context(|| format!("filter `{spec}` must look like COLUMN=VALUE"))
}

/// Reads one numeric column from a CSV file with a header row, keeping only
/// rows that match every filter.
pub fn read_column(path: &Path, column: Option<&str>, filters: &[String]) -> Result<(String, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        bail!("{}: no columns", path.display());
    }
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no column `{name}`", path.display()))
    };
    let col = match column {
        Some(name) => position(name)?,
        None => headers.len() - 1,
    };
    let filters = filters
        .iter()
        .map(|f| {
            let (k, v) = parse_filter(f)?;
            Ok((position(k)?, v.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if filters.iter().any(|(k, v)| record.get(*k) != Some(v.as_str())) {
            continue;
        }
        let field = record.get(col).unwrap_or("");
        let value: f64 = field
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: `{field}` is not a number", path.display(), i + 2))?;
        values.push(value);
    }
    Ok((headers[col].to_string(), values))
}

#[derive(Debug, Serialize)]
pub struct BootstrapOutput {
    pub input: String,
    pub column: String,
    pub n_samples: usize,
    pub subset_size: usize,
    pub n_resamples: usize,
    pub seed: u64,
    pub sample_mean: f64,
    pub bootstrap_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub histogram: Vec<HistogramBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
}

pub fn bootstrap(args: &BootstrapArgs) -> Result<BootstrapOutput> {
    let ColumnArgs { column, filters } = &args.column;
    let (column, samples) = read_column(&args.input, column.as_deref(), filters)?;
    if samples.is_empty() {
        bail!("no rows selected from {}", args.input.display());
    }
    let means = bootstrap_means(&samples, args.subset, args.resamples, args.seed)?;
    let (ci_low, ci_high) = percentile_interval(&means, 25, 975).unwrap_or((f64::NAN, f64::NAN));
    Ok(BootstrapOutput {
        input: args.input.display().to_string(),
        column,
        n_samples: samples.len(),
        subset_size: args.subset,
        n_resamples: args.resamples,
        seed: args.seed,
        sample_mean: mean(&samples),
        bootstrap_mean: if means.is_empty() { f64::NAN } else { mean(&means) },
        ci_low,
        ci_high,
        histogram: histogram(&means, args.bins),
        means: args.emit_means.then_some(means),
    })
}

#[derive(Debug, Serialize)]
pub struct TtestOutput {
    pub a: String,
    pub b: String,
    pub column: String,
    pub n_a: usize,
    pub n_b: usize,
    pub offset: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn ttest(args: &TtestArgs) -> Result<TtestOutput> {
    let ColumnArgs { column, filters } = &args.column;
    let with = |extra: &[String]| filters.iter().chain(extra).cloned().collect::<Vec<_>>();
    let (col, x) = read_column(&args.a, column.as_deref(), &with(&args.filters_a))?;
    let (_, y) = read_column(&args.b, column.as_deref(), &with(&args.filters_b))?;
    let r = unpaired_t_test(&x, &y, args.offset)?;
    Ok(TtestOutput {
        a: args.a.display().to_string(),
        b: args.b.display().to_string(),
        column: col,
        n_a: x.len(),
        n_b: y.len(),
        offset: args.offset,
        mean_a: mean(&x),
        mean_b: mean(&y),
        t: r.t,
        df: r.df,
        p: r.p_value,
    })
}
