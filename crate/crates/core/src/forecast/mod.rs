//! Iterative multi-step forecasting with a one-step model: each prediction
//! is appended to the recent window and the oldest column dropped, while the
//! week-ago inputs come from stored history.


use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::autodiff::Tensor;
use crate::data::{block, format_timestamp, historical_block, RidershipGrid, SampleWindow, ScalerParams};
use crate::eval::{maape, r_squared, EvalError};
use crate::graph::TransitGraph;
use crate::io::{self, IoError};
use crate::model::{ModelError, ModelParams};
use crate::train::{predict_all, IndexCache, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("historical coverage allows a horizon of at most {max}, requested {requested}")]
    HorizonTruncated { requested: usize, max: usize },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<TrainError> for ForecastError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => ForecastError::Model(m),
            other => ForecastError::Contract(other.to_string()),
        }
    }
}

/// Anything that maps aligned windows to one scaled value per station.
pub trait OneStepModel {
    fn recent_len(&self) -> usize;
    fn hist_len(&self) -> usize;
    fn predict_batch(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>, ForecastError>;
}

/// A trained network bound to its graph.
pub struct GraphModel<'a> {
    pub params: &'a ModelParams,
    pub graph: &'a TransitGraph,
}

impl OneStepModel for GraphModel<'_> {
    fn recent_len(&self) -> usize {
        self.params.config.recent_len
    }

    fn hist_len(&self) -> usize {
        self.params.config.hist_len
    }

    fn predict_batch(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>, ForecastError> {
        let cache = IndexCache::for_prediction(self.graph, windows.len())?;
        Ok(predict_all(self.params, windows, &cache)?)
    }
}

/// Rolling input state of one forecast origin, in scaled space.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBuffer {
    /// `N_s x I`, oldest column first.
    pub recent: Tensor,
    /// Predictions made so far, in order.
    pub generated: Vec<Vec<f64>>,
    /// Grid row of the next target. May run past the end of the grid.
    pub cursor: usize,
    origin: usize,
}

impl ForecastBuffer {
    /// Buffer whose first target is `target_row`, filled with the `I`
    /// observed rows before it.
    pub fn new(grid: &RidershipGrid, target_row: usize, recent_len: usize) -> Result<Self, ForecastError> {
        if recent_len == 0 || target_row < recent_len || target_row > grid.rows() {
            return Err(ForecastError::Contract(format!(
                "target row {target_row} needs {recent_len} observed rows before it inside a {}-row grid",
                grid.rows()
            )));
        }
        Ok(Self {
            recent: block(grid, target_row - recent_len, recent_len),
            generated: Vec::new(),
            cursor: target_row,
            origin: target_row,
        })
    }

    /// First target row.
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Drops the oldest recent column and appends `prediction`.
    pub fn push(&mut self, prediction: Vec<f64>) {
        let (n, len) = (self.recent.rows(), self.recent.cols());
        let mut next = Tensor::zeros(n, len);
        for s in 0..n {
            for k in 1..len {
                next.set(s, k - 1, self.recent.get(s, k));
            }
            next.set(s, len - 1, prediction[s]);
        }
        self.recent = next;
        self.generated.push(prediction);
        self.cursor += 1;
    }
}

/// Largest horizon whose week-ago inputs are all stored, from `cursor`.
pub fn max_horizon(grid: &RidershipGrid, cursor: usize, hist_len: usize) -> usize {
    let week = grid.week_rows();
    if cursor + 1 < week + hist_len.max(1) {
        return 0;
    }
    (grid.rows() + week).saturating_sub(cursor)
}

/// One forecast step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastStep {
    pub lag: usize,
    pub target_row: usize,
    pub target_time: NaiveDateTime,
    /// Scaled predictions, one per station.
    pub values: Vec<f64>,
}

/// Advances every buffer `horizon` steps, batching the model calls across
/// buffers. Returns the new steps per buffer.
pub fn iterative_forecast_many(
    model: &dyn OneStepModel,
    buffers: &mut [ForecastBuffer],
    grid: &RidershipGrid,
    horizon: usize,
) -> Result<Vec<Vec<ForecastStep>>, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::Contract("horizon must be at least 1".into()));
    }
    for b in buffers.iter() {
        if b.recent.cols() != model.recent_len() || b.recent.rows() != grid.stations() {
            return Err(ForecastError::Contract(format!(
                "buffer is {}x{}, model expects {}x{}",
                b.recent.rows(),
                b.recent.cols(),
                grid.stations(),
                model.recent_len()
            )));
        }
        let max = max_horizon(grid, b.cursor, model.hist_len());
        if horizon > max {
            return Err(ForecastError::HorizonTruncated { requested: horizon, max });
        }
    }
    let mut steps = vec![Vec::with_capacity(horizon); buffers.len()];
    for _ in 0..horizon {
        let windows: Vec<SampleWindow> = buffers
            .iter()
            .map(|b| SampleWindow {
                recent: b.recent.clone(),
                historical: historical_block(grid, b.cursor, model.hist_len()).expect("coverage checked above"),
                target: vec![0.0; grid.stations()],
                target_time: grid.time_of_row(b.cursor),
                target_row: b.cursor,
            })
            .collect();
        let predictions = model.predict_batch(&windows)?;
        if predictions.len() != buffers.len() || predictions.iter().any(|p| p.len() != grid.stations()) {
            return Err(ForecastError::Contract("model returned the wrong prediction shape".into()));
        }
        for ((b, p), out) in buffers.iter_mut().zip(predictions).zip(steps.iter_mut()) {
            out.push(ForecastStep {
                lag: b.cursor - b.origin + 1,
                target_row: b.cursor,
                target_time: grid.time_of_row(b.cursor),
                values: p.clone(),
            });
            b.push(p);
        }
    }
    Ok(steps)
}

/// `horizon` further predictions from one buffer.
pub fn iterative_forecast(
    model: &dyn OneStepModel,
    buffer: &mut ForecastBuffer,
    grid: &RidershipGrid,
    horizon: usize,
) -> Result<Vec<ForecastStep>, ForecastError> {
    let mut out = iterative_forecast_many(model, std::slice::from_mut(buffer), grid, horizon)?;
    Ok(out.pop().unwrap_or_default())
}

/// Pooled scores at one lag.
#[derive(Debug, Clone, PartialEq)]
pub struct LagScore {
    pub lag: usize,
    pub maape: f64,
    /// `None` when the observations have zero variance.
    pub r_squared: Option<f64>,
    /// Scored (origin, station) pairs.
    pub n: usize,
}

/// Scores lags `1..=max_lag` over every origin in `targets` whose whole
/// horizon stays inside `targets` and has observations. `raw` holds counts;
/// the model runs on `scaler`-scaled values and predictions are unscaled and
/// clamped at zero before scoring.
pub fn lagged_forecast_errors(
    model: &dyn OneStepModel,
    raw: &RidershipGrid,
    scaler: &ScalerParams,
    targets: Range<usize>,
    max_lag: usize,
) -> Result<Vec<LagScore>, ForecastError> {
    if max_lag == 0 {
        return Err(ForecastError::Contract("need at least one lag".into()));
    }
    let scaled = scaler.apply(raw);
    let end = targets.end.min(raw.rows());
    let origins: Vec<usize> = (targets.start..(end + 1).saturating_sub(max_lag))
        .filter(|&t| t >= model.recent_len() && max_horizon(&scaled, t, model.hist_len()) >= max_lag)
        .collect();
    if origins.is_empty() {
        return Err(ForecastError::Contract(format!("no origin in rows {targets:?} supports {max_lag} lags")));
    }
    let mut buffers =
        origins.iter().map(|&t| ForecastBuffer::new(&scaled, t, model.recent_len())).collect::<Result<Vec<_>, _>>()?;
    let steps = iterative_forecast_many(model, &mut buffers, &scaled, max_lag)?;

    let mut by_lag: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for run in &steps {
        for step in run {
            let entry = by_lag.entry(step.lag).or_default();
            for (s, &v) in step.values.iter().enumerate() {
                entry.0.push(raw.value(step.target_row, s));
                entry.1.push(scaler.invert_value(s, v).max(0.0));
            }
        }
    }
    by_lag
        .into_iter()
        .map(|(lag, (y, y_hat))| {
            let r2 = match r_squared(&y, &y_hat) {
                Ok(v) => Some(v),
                Err(EvalError::ZeroVariance | EvalError::Length(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(LagScore { lag, maape: maape(&y, &y_hat)?, r_squared: r2, n: y.len() })
        })
        .collect()
}

/// CSV `target_time,station_id,prediction,lag` with unscaled, clamped values.
pub fn write_forecast(
    path: &Path,
    steps: &[ForecastStep],
    station_ids: &[String],
    scaler: &ScalerParams,
    comment: Option<&str>,
) -> Result<(), ForecastError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| ForecastError::Io(IoError::csv(path, e));
    w.write_record(["target_time", "station_id", "prediction", "lag"]).map_err(err)?;
    for step in steps {
        let time = format_timestamp(step.target_time);
        for (s, id) in station_ids.iter().enumerate() {
            let v = scaler.invert_value(s, step.values[s]).max(0.0);
            w.write_record([time.as_str(), id, &v.to_string(), &step.lag.to_string()]).map_err(err)?;
        }
    }
    Ok(io::finish(path, w)?)
}

/// CSV `lag,maape,r2,n`.
pub fn write_lag_curve(path: &Path, scores: &[LagScore], comment: Option<&str>) -> Result<(), ForecastError> {
    let mut w = io::csv_writer(path, comment)?;
    let err = |e| ForecastError::Io(IoError::csv(path, e));
    w.write_record(["lag", "maape", "r2", "n"]).map_err(err)?;
    for s in scores {
        let r2 = s.r_squared.map_or_else(String::new, |v| v.to_string());
        w.write_record([s.lag.to_string(), s.maape.to_string(), r2, s.n.to_string()]).map_err(err)?;
    }
    Ok(io::finish(path, w)?)
}
