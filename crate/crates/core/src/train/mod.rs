//! Loss, optimizer and the mini-batch training loop.

mod adam;


pub use adam::{clip_global_norm, global_norm, Adam};

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::SampleWindow;
use crate::graph::TransitGraph;
use crate::layers::EdgeIndex;
use crate::model::{forward, Checkpoint, ModelError, ModelInput, ModelParams, TrainingMeta};

/// Samples per independent forward/backward pass. Gradients of a batch are
/// the in-order sum over its chunks, so results do not depend on the thread
/// count.
const CHUNK: usize = 8;
const PREDICT_CHUNK: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, checkpoint: Box<Checkpoint> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            patience: 10,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("epsilon", self.epsilon), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(TrainError::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Losses of the starting parameters.
    pub initial_train_mse: f64,
    pub initial_val_mse: Option<f64>,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 means the starting parameters.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// `epoch,train_mse,val_mse,seconds` lines, epoch 0 being the starting point.
    pub fn log_lines(&self) -> Vec<String> {
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.9e}"));
        let mut out = vec![format!("0,{:.9e},{},0", self.initial_train_mse, fmt(self.initial_val_mse))];
        out.extend(
            self.epochs
                .iter()
                .map(|e| format!("{},{:.9e},{},{:.3}", e.epoch, e.train_mse, fmt(e.val_mse), e.seconds)),
        );
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Mean squared error over all entries.
pub fn mse_loss(tape: &mut Tape, prediction: Var, target: Var) -> Result<Var, AutodiffError> {
    let (p, t) = (tape.value(prediction).shape(), tape.value(target).shape());
    if p != t {
        return Err(AutodiffError::Shape { op: "mse", detail: format!("{p:?} vs {t:?}") });
    }
    let d = tape.sub(prediction, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// [`mse_loss`] on plain slices.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return Err(TrainError::Contract(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            prediction.len(),
            target.len()
        )));
    }
    Ok(prediction.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / prediction.len() as f64)
}

/// Edge indices per stacked batch size.
pub struct IndexCache<'g> {
    graph: &'g TransitGraph,
    by_size: HashMap<usize, EdgeIndex>,
}

impl<'g> IndexCache<'g> {
    pub fn new(graph: &'g TransitGraph) -> Self {
        Self { graph, by_size: HashMap::new() }
    }

    pub fn prepare(&mut self, sizes: impl IntoIterator<Item = usize>) -> Result<(), TrainError> {
        for s in sizes {
            if !self.by_size.contains_key(&s) {
                let index = EdgeIndex::new(self.graph, s).map_err(ModelError::from)?;
                self.by_size.insert(s, index);
            }
        }
        Ok(())
    }

    /// Prepares the chunk sizes [`predict_all`] uses for `samples` inputs.
    pub fn for_prediction(graph: &'g TransitGraph, samples: usize) -> Result<Self, TrainError> {
        let mut cache = Self::new(graph);
        cache.prepare([PREDICT_CHUNK, samples % PREDICT_CHUNK].into_iter().filter(|&s| s > 0))?;
        Ok(cache)
    }

    pub fn get(&self, size: usize) -> &EdgeIndex {
        &self.by_size[&size]
    }
}

/// Sum of squared errors of one chunk, scaled by `1 / denom`, with gradients
/// for every parameter in entry order.
fn chunk_gradient(
    params: &ModelParams,
    samples: &[&SampleWindow],
    index: &EdgeIndex,
    denom: f64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, true);
    let input = ModelInput::from_samples(samples);
    let (x_o, x_h, y) = (tape.constant(input.recent), tape.constant(input.historical), tape.constant(input.target));
    let out = forward(&mut tape, &params.config, &w, x_o, x_h, index)?;
    let d = tape.sub(out, y)?;
    let sq = tape.mul(d, d)?;
    let sse = tape.sum(sq);
    let scale = tape.constant(Tensor::scalar(1.0 / denom));
    let loss = tape.mul(sse, scale)?;
    let mut grads = tape.backward(loss)?;
    let vars: Vec<Var> = w.entries().into_iter().map(|(_, v)| *v).collect();
    let g = vars.into_iter().map(|v| grads.take(v).expect("parameter gradient")).collect();
    Ok((tape.value(loss).data()[0], g))
}

/// Loss and summed gradient of a batch.
fn batch_gradient(
    params: &ModelParams,
    batch: &[&SampleWindow],
    cache: &IndexCache,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let denom = (batch.len() * params.config.stations) as f64;
    let parts: Vec<Result<(f64, Vec<Tensor>), TrainError>> =
        batch.par_chunks(CHUNK).map(|c| chunk_gradient(params, c, cache.get(c.len()), denom)).collect();
    let mut loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    Ok((loss, total.expect("non-empty batch")))
}

/// Predictions for every sample, in order.
pub fn predict_all(
    params: &ModelParams,
    samples: &[SampleWindow],
    cache: &IndexCache,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let refs: Vec<&SampleWindow> = samples.iter().collect();
    let parts: Vec<Result<Vec<Vec<f64>>, ModelError>> =
        refs.par_chunks(PREDICT_CHUNK).map(|c| params.predict(cache.get(c.len()), c)).collect();
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean squared error over every station of every sample.
pub fn evaluate_mse(params: &ModelParams, samples: &[SampleWindow], cache: &IndexCache) -> Result<f64, TrainError> {
    let preds = predict_all(params, samples, cache)?;
    let p: Vec<f64> = preds.into_iter().flatten().collect();
    let t: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
    mse(&p, &t)
}

fn check_samples(params: &ModelParams, graph: &TransitGraph, samples: &[SampleWindow]) -> Result<(), TrainError> {
    let c = &params.config;
    if graph.len() != c.stations {
        return Err(TrainError::Contract(format!("graph has {} stations, model {}", graph.len(), c.stations)));
    }
    for s in samples {
        if s.recent.dims() != Some((c.stations, c.recent_len)) || s.historical.dims() != Some((c.stations, c.hist_len)) {
            return Err(TrainError::Contract(format!(
                "sample at row {} has shapes {:?}/{:?}, model expects {}x{} and {}x{}",
                s.target_row,
                s.recent.shape(),
                s.historical.shape(),
                c.stations,
                c.recent_len,
                c.stations,
                c.hist_len
            )));
        }
    }
    Ok(())
}

/// Trains from `params` and returns the parameters with the best validation
/// loss (training loss when no validation samples are given). The starting
/// parameters are a candidate too.
pub fn train(
    params: ModelParams,
    samples: &[SampleWindow],
    graph: &TransitGraph,
    config: &TrainConfig,
    validation: &[SampleWindow],
) -> Result<TrainOutcome, TrainError> {
    let meta = TrainingMeta { seed: params.config.seed, ..TrainingMeta::default() };
    run(Checkpoint { params, meta, scaler: None }, samples, graph, config, validation, "train")
}

/// Continues training from a checkpoint and appends to its lineage.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    samples: &[SampleWindow],
    graph: &TransitGraph,
    config: &TrainConfig,
    validation: &[SampleWindow],
) -> Result<TrainOutcome, TrainError> {
    checkpoint.params.validate()?;
    if graph.len() != checkpoint.params.config.stations {
        return Err(TrainError::Contract(format!(
            "checkpoint was trained for {} stations, graph has {}",
            checkpoint.params.config.stations,
            graph.len()
        )));
    }
    run(checkpoint.clone(), samples, graph, config, validation, "fine-tune")
}

fn run(
    start: Checkpoint,
    samples: &[SampleWindow],
    graph: &TransitGraph,
    config: &TrainConfig,
    validation: &[SampleWindow],
    kind: &str,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Contract("no training samples".into()));
    }
    let mut params = start.params.clone();
    check_samples(&params, graph, samples)?;
    check_samples(&params, graph, validation)?;

    let batch = config.batch_size.min(samples.len());
    let mut cache = IndexCache::new(graph);
    let mut sizes: Vec<usize> = vec![CHUNK.min(batch), batch % CHUNK, (samples.len() % batch) % CHUNK, PREDICT_CHUNK];
    sizes.extend([samples.len(), validation.len()].map(|n| n % PREDICT_CHUNK));
    cache.prepare(sizes.into_iter().filter(|&s| s > 0))?;

    let val_loss = |p: &ModelParams| -> Result<Option<f64>, TrainError> {
        if validation.is_empty() {
            Ok(None)
        } else {
            evaluate_mse(p, validation, &cache).map(Some)
        }
    };
    let mut history = TrainHistory {
        initial_train_mse: evaluate_mse(&params, samples, &cache)?,
        initial_val_mse: val_loss(&params)?,
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let selection = |train: f64, val: Option<f64>| val.unwrap_or(train);
    let mut best_loss = selection(history.initial_train_mse, history.initial_val_mse);
    let mut best = params.clone();
    let mut bad_epochs = 0;

    let mut adam = Adam::new(&params, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let names: Vec<String> = params.weights.entries().into_iter().map(|(n, _)| n).collect();

    let finish = |params: ModelParams, history: &TrainHistory, start: &Checkpoint| -> Checkpoint {
        let mut meta = start.meta.clone();
        meta.epochs += history.epochs.len();
        meta.final_train_loss = history.epochs.last().map(|e| e.train_mse).or(Some(history.initial_train_mse));
        meta.best_val_loss = history
            .epochs
            .iter()
            .find(|e| e.epoch == history.best_epoch)
            .and_then(|e| e.val_mse)
            .or(if history.best_epoch == 0 { history.initial_val_mse } else { None });
        meta.lineage.push(format!(
            "{kind}: epochs={} samples={} best_epoch={} lr={} batch={} shuffle_seed={}",
            history.epochs.len(),
            samples.len(),
            history.best_epoch,
            config.learning_rate,
            config.batch_size,
            config.shuffle_seed
        ));
        Checkpoint { params, meta, scaler: start.scaler.clone() }
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for ids in order.chunks(batch) {
            let refs: Vec<&SampleWindow> = ids.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grads) = batch_gradient(&params, &refs, &cache)?;
            let diverged = |reason: String, history: &TrainHistory| TrainError::Diverged {
                epoch,
                reason,
                checkpoint: Box::new(finish(best.clone(), history, &start)),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("batch loss {loss}"), &history));
            }
            if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
                return Err(diverged(format!("non-finite gradient for {}", names[k]), &history));
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(&mut params, &grads)?;
            weighted += loss * ids.len() as f64;
        }
        let train_mse = weighted / samples.len() as f64;
        let val_mse = val_loss(&params)?;
        if !train_mse.is_finite() || val_mse.is_some_and(|v| !v.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!("epoch losses {train_mse} / {val_mse:?}"),
                checkpoint: Box::new(finish(best, &history, &start)),
            });
        }
        history.epochs.push(EpochStats { epoch, train_mse, val_mse, seconds: started.elapsed().as_secs_f64() });

        let current = selection(train_mse, val_mse);
        if current < best_loss {
            best_loss = current;
            best = params.clone();
            history.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.patience {
                break;
            }
        }
    }
    let checkpoint = finish(best, &history, &start);
    Ok(TrainOutcome { checkpoint, history })
}
