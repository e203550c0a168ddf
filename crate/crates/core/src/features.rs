//! Market-series loading and feature construction: daily closing series in,
//! a three-feature-plus-intercept input matrix out, with trailing-window
//! z-score normalization and next-day-return targets.

use std::io::BufRead;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// A named daily closing series with strictly increasing dates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
}

impl MarketSeries {
    pub fn new(name: &str, mut rows: Vec<(NaiveDate, f64)>, path: &str) -> Result<Self> {
        rows.sort_by_key(|(d, _)| *d);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateDate {
                    date: pair[0].0.to_string(),
                    path: path.to_string(),
                });
            }
        }
        for (date, close) in &rows {
            if !close.is_finite() || *close <= 0.0 {
                return Err(Error::InvalidValue {
                    field: format!("{name} close at {date}"),
                    reason: format!("must be a positive real, got {close}"),
                });
            }
        }
        Ok(MarketSeries {
            name: name.to_string(),
            dates: rows.iter().map(|(d, _)| *d).collect(),
            closes: rows.iter().map(|(_, c)| *c).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Parses a two-column `date,close` CSV with ISO-8601 dates. An optional
/// header line is skipped. Rows are sorted ascending; duplicate dates and
/// non-positive closes are rejected.
pub fn load_series_csv(path: &Path) -> Result<MarketSeries> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path_str.clone());
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path_str.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.splitn(2, ',');
        let date_field = parts.next().unwrap_or("").trim();
        let close_field = parts.next().unwrap_or("").trim();
        let date = match NaiveDate::parse_from_str(date_field, "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) if idx == 0 => continue, // header line
            Err(e) => {
                return Err(Error::CsvParse {
                    path: path_str,
                    line: idx + 1,
                    reason: format!("bad date '{date_field}': {e}"),
                })
            }
        };
        let close: f64 = close_field.parse().map_err(|e| Error::CsvParse {
            path: path_str.clone(),
            line: idx + 1,
            reason: format!("bad close '{close_field}': {e}"),
        })?;
        rows.push((date, close));
    }
    MarketSeries::new(&name, rows, &path_str)
}

/// Whether price changes are simple or log returns. The pipeline default is
/// simple returns; log returns are a config switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    #[default]
    Simple,
    Log,
}

fn change(kind: ReturnKind, from: f64, to: f64) -> f64 {
    match kind {
        ReturnKind::Simple => to / from - 1.0,
        ReturnKind::Log => (to / from).ln(),
    }
}

/// Aligned feature rows [spx_1d_z, agg_5d_z, jpy_vol_diff, 1] with next-day
/// S&P return z-scores as targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub window: usize,
    /// Number of z-scores that hit a zero trailing std and were mapped to 0.
    pub zero_std_count: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

/// Sample standard deviation (divisor m - 1).
fn sample_std(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (m - 1) as f64).sqrt()
}

/// Trailing z-score of `values[i]` over the `window` values strictly before
/// it. Zero trailing std maps to 0 (counted by the caller).
fn trailing_z(values: &[f64], i: usize, window: usize, zero_std: &mut usize) -> f64 {
    let slice = &values[i - window..i];
    let mean = slice.iter().sum::<f64>() / window as f64;
    let std = sample_std(slice);
    if std == 0.0 {
        *zero_std += 1;
        return 0.0;
    }
    (values[i] - mean) / std
}

/// Builds the feature matrix on the tradable-date intersection of the three
/// series. The S&P 1-day and AGG 5-day changes are z-scored over the trailing
/// `window` observations (the current value excluded from the mean/std); the
/// JPY/USD feature is the raw difference between the 5-day and `window`-day
/// standard deviations of its daily changes. The target for row t is the
/// z-score of the next-day S&P return.
pub fn build_features(
    spx: &MarketSeries,
    agg: &MarketSeries,
    jpy: &MarketSeries,
    window: usize,
    returns: ReturnKind,
) -> Result<FeatureMatrix> {
    // date intersection, ascending
    let agg_set: std::collections::BTreeMap<NaiveDate, f64> =
        agg.dates.iter().cloned().zip(agg.closes.iter().cloned()).collect();
    let jpy_set: std::collections::BTreeMap<NaiveDate, f64> =
        jpy.dates.iter().cloned().zip(jpy.closes.iter().cloned()).collect();
    let mut dates = Vec::new();
    let mut spx_c = Vec::new();
    let mut agg_c = Vec::new();
    let mut jpy_c = Vec::new();
    for (date, close) in spx.dates.iter().zip(&spx.closes) {
        if let (Some(&a), Some(&j)) = (agg_set.get(date), jpy_set.get(date)) {
            dates.push(*date);
            spx_c.push(*close);
            agg_c.push(a);
            jpy_c.push(j);
        }
    }
    let len = dates.len();
    if len < window + 6 {
        return Err(Error::InsufficientOverlap {
            available: len,
            required: window + 6,
        });
    }

    // raw changes, indexed like the intersection (NaN where undefined)
    let mut spx_1d = vec![f64::NAN; len];
    let mut agg_5d = vec![f64::NAN; len];
    let mut jpy_1d = vec![f64::NAN; len];
    for i in 1..len {
        spx_1d[i] = change(returns, spx_c[i - 1], spx_c[i]);
        jpy_1d[i] = change(returns, jpy_c[i - 1], jpy_c[i]);
    }
    for i in 5..len {
        agg_5d[i] = change(returns, agg_c[i - 5], agg_c[i]);
    }

    let mut zero_std = 0usize;
    // first row where every trailing window is fully populated; last row
    // needs the next day's return as its target
    let start = window + 5;
    let mut out_dates = Vec::new();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in start..len - 1 {
        let spx_z = trailing_z(&spx_1d, i, window, &mut zero_std);
        let agg_z = trailing_z(&agg_5d, i, window, &mut zero_std);
        let vol_5 = sample_std(&jpy_1d[i - 4..=i]);
        let vol_w = sample_std(&jpy_1d[i + 1 - window..=i]);
        let y_z = trailing_z(&spx_1d, i + 1, window, &mut zero_std);
        out_dates.push(dates[i]);
        rows.push([spx_z, agg_z, vol_5 - vol_w, 1.0]);
        targets.push(y_z);
    }
    let x = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
    Ok(FeatureMatrix {
        dates: out_dates,
        x,
        y: DVector::from_vec(targets),
        window,
        zero_std_count: zero_std,
    })
}
