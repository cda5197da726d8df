use std::path::Path;

use chrono::NaiveDateTime;

use super::{is_peak, maape, percentile, r_squared, EvalError};
use crate::io::{self, IoError};

/// Scores of one dataset. Pooled metrics flatten every (sample, station)
/// pair into one vector; per-station vectors follow `station_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub dataset: String,
    pub station_ids: Vec<String>,
    /// Scored (sample, station) pairs.
    pub n: usize,
    /// `None` when the actual values have zero variance.
    pub r_squared: Option<f64>,
    pub maape: f64,
    pub peak_n: usize,
    pub non_peak_n: usize,
    pub peak_maape: Option<f64>,
    pub non_peak_maape: Option<f64>,
    pub station_r_squared: Vec<Option<f64>>,
    pub station_maape: Vec<f64>,
    pub station_peak_maape: Vec<Option<f64>>,
    pub station_non_peak_maape: Vec<Option<f64>>,
}

fn defined(r: Result<f64, EvalError>) -> Result<Option<f64>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

fn optional_maape(y: &[f64], y_hat: &[f64]) -> Result<Option<f64>, EvalError> {
    if y.is_empty() {
        Ok(None)
    } else {
        maape(y, y_hat).map(Some)
    }
}

/// Scores unscaled `predicted` against `actual`, one row per sample.
pub fn score(
    dataset: &str,
    station_ids: &[String],
    times: &[NaiveDateTime],
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
) -> Result<ScoreReport, EvalError> {
    let n_s = station_ids.len();
    if actual.len() != predicted.len() || actual.len() != times.len() || actual.is_empty() {
        return Err(EvalError::Length(format!(
            "{} times, {} actual rows, {} predicted rows",
            times.len(),
            actual.len(),
            predicted.len()
        )));
    }
    if actual.iter().chain(predicted).any(|r| r.len() != n_s) {
        return Err(EvalError::Length(format!("every row needs {n_s} station values")));
    }

    let flat = |rows: &[Vec<f64>], keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        rows.iter().enumerate().filter(|(i, _)| keep(*i)).flat_map(|(_, r)| r.iter().copied()).collect()
    };
    let column = |rows: &[Vec<f64>], s: usize, keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        rows.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, r)| r[s]).collect()
    };
    let all = |_: usize| true;
    let peak = |i: usize| is_peak(times[i]);
    let off_peak = |i: usize| !is_peak(times[i]);

    let (y, y_hat) = (flat(actual, &all), flat(predicted, &all));
    let peak_rows = times.iter().filter(|&&t| is_peak(t)).count();

    let mut station_r_squared = Vec::with_capacity(n_s);
    let mut station_maape = Vec::with_capacity(n_s);
    let mut station_peak_maape = Vec::with_capacity(n_s);
    let mut station_non_peak_maape = Vec::with_capacity(n_s);
    for s in 0..n_s {
        let (ys, ps) = (column(actual, s, &all), column(predicted, s, &all));
        station_r_squared.push(if ys.len() < 2 { None } else { defined(r_squared(&ys, &ps))? });
        station_maape.push(maape(&ys, &ps)?);
        station_peak_maape.push(optional_maape(&column(actual, s, &peak), &column(predicted, s, &peak))?);
        station_non_peak_maape
            .push(optional_maape(&column(actual, s, &off_peak), &column(predicted, s, &off_peak))?);
    }

    Ok(ScoreReport {
        dataset: dataset.to_string(),
        station_ids: station_ids.to_vec(),
        n: y.len(),
        r_squared: if y.len() < 2 { None } else { defined(r_squared(&y, &y_hat))? },
        maape: maape(&y, &y_hat)?,
        peak_n: peak_rows * n_s,
        non_peak_n: (times.len() - peak_rows) * n_s,
        peak_maape: optional_maape(&flat(actual, &peak), &flat(predicted, &peak))?,
        non_peak_maape: optional_maape(&flat(actual, &off_peak), &flat(predicted, &off_peak))?,
        station_r_squared,
        station_maape,
        station_peak_maape,
        station_non_peak_maape,
    })
}

impl ScoreReport {
    /// Sample-weighted mean of peak and non-peak MAAPE.
    pub fn recombined_maape(&self) -> f64 {
        let part = |m: Option<f64>, n: usize| m.map_or(0.0, |v| v * n as f64);
        (part(self.peak_maape, self.peak_n) + part(self.non_peak_maape, self.non_peak_n)) / self.n as f64
    }

    /// `(metric, scope, station, value)` rows; undefined values are omitted.
    pub fn rows(&self) -> Vec<(&'static str, &'static str, String, f64)> {
        let all = || "ALL".to_string();
        let mut out = vec![
            ("n", "pooled", all(), self.n as f64),
            ("n", "peak", all(), self.peak_n as f64),
            ("n", "non_peak", all(), self.non_peak_n as f64),
            ("maape", "pooled", all(), self.maape),
        ];
        if let Some(v) = self.r_squared {
            out.push(("r2", "pooled", all(), v));
        }
        if let Some(v) = self.peak_maape {
            out.push(("maape", "peak", all(), v));
        }
        if let Some(v) = self.non_peak_maape {
            out.push(("maape", "non_peak", all(), v));
        }
        for (s, id) in self.station_ids.iter().enumerate() {
            out.push(("maape", "station", id.clone(), self.station_maape[s]));
            if let Some(v) = self.station_r_squared[s] {
                out.push(("r2", "station", id.clone(), v));
            }
            if let Some(v) = self.station_peak_maape[s] {
                out.push(("maape", "station_peak", id.clone(), v));
            }
            if let Some(v) = self.station_non_peak_maape[s] {
                out.push(("maape", "station_non_peak", id.clone(), v));
            }
        }
        out
    }
}

/// CSV `dataset,metric,scope,station_id_or_ALL,value`.
pub fn write_report(path: &Path, reports: &[ScoreReport], comment: Option<&str>) -> Result<(), EvalError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| EvalError::Io(IoError::csv(path, e));
    w.write_record(["dataset", "metric", "scope", "station_id_or_ALL", "value"]).map_err(err)?;
    for r in reports {
        for (metric, scope, station, value) in r.rows() {
            w.write_record([r.dataset.as_str(), metric, scope, &station, &value.to_string()]).map_err(err)?;
        }
    }
    Ok(io::finish(path, w)?)
}

/// Five-number summary with linear-interpolation quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    Some(Quartiles {
        min: percentile(values, 0.0),
        q1: percentile(values, 25.0),
        median: percentile(values, 50.0),
        q3: percentile(values, 75.0),
        max: percentile(values, 100.0),
    })
}

/// Per-station score distributions: `dataset,metric,min,q1,median,q3,max`.
pub fn write_quartiles(path: &Path, reports: &[ScoreReport], comment: Option<&str>) -> Result<(), EvalError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| EvalError::Io(IoError::csv(path, e));
    w.write_record(["dataset", "metric", "min", "q1", "median", "q3", "max"]).map_err(err)?;
    for r in reports {
        let r2: Vec<f64> = r.station_r_squared.iter().flatten().copied().collect();
        for (metric, values) in [("maape", r.station_maape.as_slice()), ("r2", r2.as_slice())] {
            if let Some(q) = quartiles(values) {
                let cells = [q.min, q.q1, q.median, q.q3, q.max].map(|v| v.to_string());
                let mut rec = vec![r.dataset.clone(), metric.to_string()];
                rec.extend(cells);
                w.write_record(&rec).map_err(err)?;
            }
        }
    }
    Ok(io::finish(path, w)?)
}
