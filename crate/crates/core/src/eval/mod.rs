//! Forecast metrics on unscaled counts, peak segmentation, per-station score
//! distributions and the persistence baseline.

mod report;


pub use report::{quartiles, score, write_quartiles, write_report, Quartiles, ScoreReport};

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::{RidershipGrid, SampleWindow, ScalerParams};
use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch or too few values: {0}")]
    Length(String),
    #[error("actual values have zero variance, R^2 is undefined")]
    ZeroVariance,
    #[error("lag-1 MAAPE is zero, the lag ratio is undefined")]
    UndefinedRatio,
    #[error("lag {0} is missing from the lag scores")]
    MissingLag(usize),
    #[error("need at least 5 stations, got {0}")]
    TooFewStations(usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn check_lengths(y: &[f64], y_hat: &[f64], min: usize) -> Result<(), EvalError> {
    if y.len() != y_hat.len() || y.len() < min {
        return Err(EvalError::Length(format!("{} actual vs {} predicted, need at least {min}", y.len(), y_hat.len())));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`; may be negative.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, y_hat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One arctangent absolute percentage error term. `y = y_hat = 0` scores 0
/// and `y = 0 != y_hat` scores `pi/2`.
pub fn aape(y: f64, y_hat: f64) -> f64 {
    if y == 0.0 {
        if y_hat == 0.0 {
            0.0
        } else {
            FRAC_PI_2
        }
    } else {
        ((y - y_hat) / y).abs().atan()
    }
}

/// Mean arctangent absolute percentage error, in `[0, pi/2]`.
pub fn maape(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, y_hat, 1)?;
    Ok(y.iter().zip(y_hat).map(|(&a, &p)| aape(a, p)).sum::<f64>() / y.len() as f64)
}

/// Morning `[06:00, 10:00)` or evening `[17:00, 21:00)` peak.
pub fn is_peak(t: NaiveDateTime) -> bool {
    matches!(t.hour(), 6..=9 | 17..=20)
}

pub fn peak_mask(times: &[NaiveDateTime]) -> Vec<bool> {
    times.iter().map(|&t| is_peak(t)).collect()
}

/// `MAAPE(lag 12) / MAAPE(lag 1)`.
pub fn maape_ratio(per_lag: &BTreeMap<usize, f64>) -> Result<f64, EvalError> {
    let first = *per_lag.get(&1).ok_or(EvalError::MissingLag(1))?;
    let last = *per_lag.get(&12).ok_or(EvalError::MissingLag(12))?;
    if first == 0.0 {
        return Err(EvalError::UndefinedRatio);
    }
    Ok(last / first)
}

/// Percentile `p` in `[0, 100]` with linear interpolation between order
/// statistics at rank `p/100 * (n - 1)`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Stations whose R^2 lies strictly below the 20th percentile, in input order.
pub fn challenge_stations(ids: &[String], r2: &[f64]) -> Result<Vec<String>, EvalError> {
    if ids.len() != r2.len() {
        return Err(EvalError::Length(format!("{} ids vs {} scores", ids.len(), r2.len())));
    }
    if ids.len() < 5 {
        return Err(EvalError::TooFewStations(ids.len()));
    }
    let cut = percentile(r2, 20.0);
    Ok(ids.iter().zip(r2).filter(|(_, &v)| v < cut).map(|(id, _)| id.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persistence {
    /// Last recent value.
    Last,
    /// Value one week before the target.
    Historical,
}

/// Naive predictions in the samples' own (scaled) space.
pub fn persistence_baseline(samples: &[SampleWindow], kind: Persistence) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let block = match kind {
                Persistence::Last => &s.recent,
                Persistence::Historical => &s.historical,
            };
            let last = block.cols() - 1;
            (0..block.rows()).map(|r| block.get(r, last)).collect()
        })
        .collect()
}

/// Scaled predictions back to counts, clamped at zero.
pub fn unscale_predictions(scaler: &ScalerParams, scaled: &[Vec<f64>]) -> Vec<Vec<f64>> {
    scaled.iter().map(|row| row.iter().enumerate().map(|(s, &v)| scaler.invert_value(s, v).max(0.0)).collect()).collect()
}

/// Observed counts at each sample's target row.
pub fn observed_counts(raw: &RidershipGrid, samples: &[SampleWindow]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| raw.row(s.target_row).to_vec()).collect()
}
