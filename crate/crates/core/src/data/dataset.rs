use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Number of calendar feature rows produced by [`TimeFeatures`].
pub const TIME_FEATURE_DIM: usize = 4;

/// Parse an ISO-8601 timestamp. Offsets are converted to UTC; naive values
/// are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_utc());
    }
    let trimmed = s.strip_suffix('Z').unwrap_or(s);
    for fmt in [TIMESTAMP_FORMAT, "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(trimmed, fmt) {
            return Ok(t);
        }
    }
    Err(Error::Data(format!("invalid ISO-8601 timestamp {s:?}")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Hour-of-day and day-of-week phases, each as a (sin, cos) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeFeatures {
    pub hour_sin: f64,
    pub hour_cos: f64,
    pub dow_sin: f64,
    pub dow_cos: f64,
}

impl TimeFeatures {
    pub fn at(t: &NaiveDateTime) -> Self {
        let hour = 2.0 * PI * t.hour() as f64 / 24.0;
        let dow = 2.0 * PI * t.weekday().num_days_from_monday() as f64 / 7.0;
        Self {
            hour_sin: hour.sin(),
            hour_cos: hour.cos(),
            dow_sin: dow.sin(),
            dow_cos: dow.cos(),
        }
    }

    pub fn to_array(self) -> [f64; TIME_FEATURE_DIM] {
        [self.hour_sin, self.hour_cos, self.dow_sin, self.dow_cos]
    }

    /// Feature columns (`4 x len`) for `len` hourly steps from `start`.
    pub fn matrix(start: &NaiveDateTime, len: usize) -> Matrix {
        let mut m = Matrix::zeros(TIME_FEATURE_DIM, len);
        for t in 0..len {
            let f = Self::at(&(*start + Duration::hours(t as i64))).to_array();
            for (k, v) in f.iter().enumerate() {
                m[(k, t)] = *v;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub id: String,
    pub start: NaiveDateTime,
    pub target: Vec<f64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::hours(step as i64)
    }

    pub fn covariates(&self) -> Matrix {
        TimeFeatures::matrix(&self.start, self.len())
    }
}

/// Hourly panel of target series with calendar covariates derived on demand.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeriesDataset {
    series: Vec<Series>,
}

impl TimeSeriesDataset {
    pub fn new(series: Vec<Series>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &series {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate series id {:?}", s.id)));
            }
            if s.is_empty() {
                return Err(Error::Data(format!("series {:?} has no observations", s.id)));
            }
            if let Some(t) = s.target.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("series {:?} has a non-finite target at step {t}", s.id)));
            }
        }
        Ok(Self { series })
    }

    pub fn series(&self) -> &[Series] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&Series> {
        self.series
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    /// Shared start and length when every series covers the same hours.
    pub fn aligned_span(&self) -> Result<(NaiveDateTime, usize)> {
        let first = self.series.first().ok_or_else(|| Error::Data("empty dataset".into()))?;
        for s in &self.series {
            if s.start != first.start || s.len() != first.len() {
                return Err(Error::Data(format!(
                    "series {:?} is not aligned with {:?} (start {} length {} vs start {} length {})",
                    s.id,
                    first.id,
                    format_timestamp(&s.start),
                    s.len(),
                    format_timestamp(&first.start),
                    first.len()
                )));
            }
        }
        Ok((first.start, first.len()))
    }

    /// First `len` steps of every series.
    pub fn head(&self, len: usize) -> Result<Self> {
        self.window(0, len)
    }

    /// Steps `from..from + len` of every series.
    pub fn window(&self, from: usize, len: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(self.series.len());
        for s in &self.series {
            if from + len > s.len() {
                return Err(Error::Data(format!(
                    "series {:?} has {} steps, window {}..{} requested",
                    s.id,
                    s.len(),
                    from,
                    from + len
                )));
            }
            out.push(Series {
                id: s.id.clone(),
                start: s.timestamp(from),
                target: s.target[from..from + len].to_vec(),
            });
        }
        Self::new(out)
    }

    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let series = ids.iter().map(|id| self.get(id).cloned()).collect::<Result<Vec<_>>>()?;
        Self::new(series)
    }
}

#[derive(Deserialize)]
struct Row {
    item_id: String,
    timestamp: String,
    target: String,
}

/// Read the `item_id,timestamp,target` schema. Rows must be grouped by id and
/// hourly without gaps.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let mut reader = crate::error::csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["item_id", "timestamp", "target"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Data(format!(
            "{}: expected header item_id,timestamp,target, found {}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut series: Vec<Series> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (k, record) in reader.deserialize::<Row>().enumerate() {
        let line = k + 2;
        let row = record.map_err(|e| Error::Data(format!("line {line}: malformed row: {e}")))?;
        let ts = parse_timestamp(&row.timestamp).map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let value: f64 = row
            .target
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: invalid target {:?}", row.target)))?;
        if !value.is_finite() {
            return Err(Error::Data(format!("line {line}: non-finite target")));
        }
        match series.last_mut() {
            Some(cur) if cur.id == row.item_id => {
                let expected = cur.timestamp(cur.len());
                if ts != expected {
                    let offset = ts - cur.start;
                    let what = if ts > expected {
                        "missing timestamp"
                    } else if offset >= Duration::zero() && offset.num_seconds() % 3600 == 0 {
                        "duplicate timestamp"
                    } else {
                        "non-monotone timestamp"
                    };
                    return Err(Error::Data(format!(
                        "line {line}: {what} in series {:?}: expected {}, found {}",
                        cur.id,
                        format_timestamp(&expected),
                        format_timestamp(&ts)
                    )));
                }
                cur.target.push(value);
            }
            _ => {
                if let Some(prev) = series.last() {
                    finished.insert(prev.id.clone());
                }
                if finished.contains(&row.item_id) {
                    return Err(Error::Data(format!(
                        "line {line}: rows for series {:?} are not contiguous",
                        row.item_id
                    )));
                }
                series.push(Series {
                    id: row.item_id,
                    start: ts,
                    target: vec![value],
                });
            }
        }
    }
    TimeSeriesDataset::new(series)
}

pub fn write_csv(dataset: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = crate::error::csv_writer(path.as_ref())?;
    w.write_record(["item_id", "timestamp", "target"])?;
    for s in dataset.series() {
        for (t, v) in s.target.iter().enumerate() {
            w.write_record([s.id.clone(), format_timestamp(&s.timestamp(t)), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_iso_forms() {
        let a = parse_timestamp("2021-03-04T05:00:00").unwrap();
        assert_eq!(parse_timestamp("2021-03-04T05:00:00Z").unwrap(), a);
        assert_eq!(parse_timestamp("2021-03-04 05:00:00").unwrap(), a);
        assert_eq!(parse_timestamp("2021-03-04T06:00:00+01:00").unwrap(), a);
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn features_lie_on_unit_circle_and_repeat_daily() {
        let t0 = parse_timestamp("2020-01-01T07:00:00").unwrap();
        let a = TimeFeatures::at(&t0);
        let b = TimeFeatures::at(&(t0 + Duration::hours(24)));
        assert!((a.hour_sin.powi(2) + a.hour_cos.powi(2) - 1.0).abs() < 1e-12);
        assert!((a.dow_sin.powi(2) + a.dow_cos.powi(2) - 1.0).abs() < 1e-12);
        assert_eq!((a.hour_sin, a.hour_cos), (b.hour_sin, b.hour_cos));
        assert_ne!(a.dow_sin, b.dow_sin);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let t = parse_timestamp("2020-01-01T00:00:00").unwrap();
        let s = Series {
            id: "a".into(),
            start: t,
            target: vec![1.0],
        };
        assert!(TimeSeriesDataset::new(vec![s.clone(), s]).is_err());
    }
}
