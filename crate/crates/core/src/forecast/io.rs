use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::Deserialize;

use super::{ForecastResult, MetricReport};
use crate::data::{format_timestamp, parse_timestamp, TimeSeriesDataset};
use crate::error::{Error, Result};

pub const FORECAST_HEADER: [&str; 7] = ["item_id", "step", "timestamp", "mean", "p10", "p50", "p90"];

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Write one row per (series, step) with the mean and the 0.1/0.5/0.9
/// quantiles. Steps are numbered from 1.
pub fn write_forecast_csv(results: &[ForecastResult], path: impl AsRef<Path>) -> Result<()> {
    let mut w = crate::error::csv_writer(path.as_ref())?;
    w.write_record(FORECAST_HEADER)?;
    for r in results {
        let q = |level: f64| {
            r.quantile(level)
                .ok_or_else(|| Error::invalid(format!("forecast for {:?} lacks the {level} quantile", r.series_id)))
        };
        let (p10, p50, p90) = (q(0.1)?, q(0.5)?, q(0.9)?);
        for t in 0..r.horizon {
            w.write_record([
                r.series_id.clone(),
                (t + 1).to_string(),
                format_timestamp(&r.timestamp(t)),
                format_sig(r.mean[t], 6),
                format_sig(p10[t], 6),
                format_sig(p50[t], 6),
                format_sig(p90[t], 6),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRow {
    pub item_id: String,
    pub step: usize,
    pub timestamp: NaiveDateTime,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Deserialize)]
struct RawRow {
    item_id: String,
    step: usize,
    timestamp: String,
    mean: f64,
    p10: f64,
    p50: f64,
    p90: f64,
}

pub fn read_forecast_csv(path: impl AsRef<Path>) -> Result<Vec<ForecastRow>> {
    let mut reader = crate::error::csv_reader(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).ne(FORECAST_HEADER) {
        return Err(Error::Data(format!(
            "expected header {}, found {}",
            FORECAST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize::<RawRow>()
        .enumerate()
        .map(|(k, rec)| {
            let line = k + 2;
            let r = rec.map_err(|e| Error::Data(format!("line {line}: malformed forecast row: {e}")))?;
            Ok(ForecastRow {
                timestamp: parse_timestamp(&r.timestamp).map_err(|e| Error::Data(format!("line {line}: {e}")))?,
                item_id: r.item_id,
                step: r.step,
                mean: r.mean,
                p10: r.p10,
                p50: r.p50,
                p90: r.p90,
            })
        })
        .collect()
}

/// Score forecast rows against actual observations, joined on
/// `(item_id, timestamp)`. Every forecast row needs a matching actual.
pub fn evaluate_rows(rows: &[ForecastRow], actuals: &TimeSeriesDataset) -> Result<MetricReport> {
    let mut lookup: HashMap<(&str, NaiveDateTime), f64> = HashMap::new();
    for s in actuals.series() {
        for (t, v) in s.target.iter().enumerate() {
            lookup.insert((s.id.as_str(), s.timestamp(t)), *v);
        }
    }
    let mut sorted: Vec<&ForecastRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (a.item_id.as_str(), a.timestamp).cmp(&(b.item_id.as_str(), b.timestamp)));
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    let (mut z, mut p50, mut p90, mut mean) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in sorted {
        if !seen.insert((r.item_id.as_str(), r.timestamp)) {
            return Err(Error::Data(format!(
                "duplicate forecast row for ({}, {})",
                r.item_id,
                format_timestamp(&r.timestamp)
            )));
        }
        match lookup.get(&(r.item_id.as_str(), r.timestamp)) {
            Some(v) => {
                z.push(*v);
                p50.push(r.p50);
                p90.push(r.p90);
                mean.push(r.mean);
            }
            None => missing.push(format!("({}, {})", r.item_id, format_timestamp(&r.timestamp))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} forecast rows have no matching actual: {}",
            missing.len(),
            missing.join(" ")
        )));
    }
    MetricReport::compute(&z, &p50, &p90, &mean)
}
