//! The two forecaster variants, their parameters, and checkpoints.
//!
//! V1 encodes each of the four series (recent, historical, trend, residual)
//! with its own GRU stack, aggregates the encodings over the attention
//! weighted graph, and maps the concatenation to one value per station.
//! V2 aggregates the raw series first and runs one shared GRU stack over the
//! four aggregated blocks.

mod checkpoint;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Axis, Tape, Tensor, Var};
use crate::data::SampleWindow;
use crate::io::IoError;
use crate::layers::{
    decompose, ffnn_forward, gat_edge_weights, gru_sequence, kgnn_aggregate, Activation, DecompositionConfig,
    EdgeIndex, FfnnParams, GatParams, GruParams, KgnnParams, LayerError,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

/// Series fed to the branches, in branch order.
pub const SERIES: [&str; 4] = ["recent", "historical", "trend", "residual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stations: usize,
    pub recent_len: usize,
    pub hist_len: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub gru_layers: usize,
    /// FFNN widths including the input width; `None` picks the variant default.
    pub ffnn_layers: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::V1,
            stations: 1,
            recent_len: 20,
            hist_len: 20,
            hidden: 64,
            kernel: 5,
            gru_layers: 1,
            ffnn_layers: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the feature vector entering the FFNN.
    pub fn feature_width(&self) -> usize {
        match self.variant {
            Variant::V1 => 4 * self.hidden,
            Variant::V2 => self.hidden,
        }
    }

    pub fn ffnn_widths(&self) -> Vec<usize> {
        self.ffnn_layers.clone().unwrap_or_else(|| match self.variant {
            Variant::V1 => vec![4 * self.hidden, 2 * self.hidden, 1],
            Variant::V2 => vec![self.hidden, self.hidden, 1],
        })
    }

    pub fn decomposition(&self) -> DecompositionConfig {
        DecompositionConfig { kernel: self.kernel }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("stations", self.stations),
            ("recent_len", self.recent_len),
            ("hist_len", self.hist_len),
            ("hidden", self.hidden),
            ("gru_layers", self.gru_layers),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        self.decomposition().validate()?;
        if self.variant == Variant::V2 && self.recent_len != self.hist_len {
            return Err(ModelError::Config(format!(
                "V2 stacks the four series as one sequence and needs recent_len == hist_len, got {} and {}",
                self.recent_len, self.hist_len
            )));
        }
        let widths = self.ffnn_widths();
        if widths.len() < 2 || widths.contains(&0) {
            return Err(ModelError::Config(format!("ffnn widths {widths:?} need at least two positive entries")));
        }
        if widths[0] != self.feature_width() || *widths.last().unwrap() != 1 {
            return Err(ModelError::Config(format!(
                "ffnn widths {widths:?} must start at the feature width {} and end at 1",
                self.feature_width()
            )));
        }
        Ok(())
    }
}

/// Per-series encoder: a GRU stack (V1 only) followed by graph aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T = Tensor> {
    pub gru: Vec<GruParams<T>>,
    pub kgnn: KgnnParams<T>,
}

/// Every trainable tensor of a model, generic so the same layout holds
/// plain values or tape handles.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T = Tensor> {
    pub gat: GatParams<T>,
    pub branches: Vec<Branch<T>>,
    /// V2's GRU stack over the aggregated blocks; empty for V1.
    pub shared_gru: Vec<GruParams<T>>,
    pub ffnn: FfnnParams<T>,
}

impl<T> Weights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            gat: self.gat.map(&mut f),
            branches: self
                .branches
                .iter()
                .map(|b| Branch { gru: b.gru.iter().map(|g| g.map(&mut f)).collect(), kgnn: b.kgnn.map(&mut f) })
                .collect(),
            shared_gru: self.shared_gru.iter().map(|g| g.map(&mut f)).collect(),
            ffnn: self.ffnn.map(&mut f),
        }
    }

    /// `(name, value)` for every tensor in a fixed order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out: Vec<(String, &T)> = Vec::new();
        for (n, t) in GatParams::<T>::NAMES.iter().zip(self.gat.parts()) {
            out.push((format!("gat.{n}"), t));
        }
        fn gru<'a, T>(out: &mut Vec<(String, &'a T)>, prefix: &str, g: &'a GruParams<T>) {
            for (n, t) in GruParams::<T>::NAMES.iter().zip(g.parts()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        for (series, b) in SERIES.iter().zip(&self.branches) {
            for (l, g) in b.gru.iter().enumerate() {
                gru(&mut out, &format!("{series}.gru{l}"), g);
            }
            for (n, t) in KgnnParams::<T>::NAMES.iter().zip(b.kgnn.parts()) {
                out.push((format!("{series}.kgnn.{n}"), t));
            }
        }
        for (l, g) in self.shared_gru.iter().enumerate() {
            gru(&mut out, &format!("shared.gru{l}"), g);
        }
        for (k, (w, b)) in self.ffnn.weights.iter().zip(&self.ffnn.biases).enumerate() {
            out.push((format!("ffnn{k}.w"), w));
            out.push((format!("ffnn{k}.b"), b));
        }
        out
    }
}

impl Weights<Tensor> {
    /// Mutable tensors in [`Weights::entries`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.gat.w, &mut self.gat.a];
        fn gru<'a>(out: &mut Vec<&'a mut Tensor>, g: &'a mut GruParams) {
            out.extend([
                &mut g.w_z, &mut g.u_z, &mut g.b_z, &mut g.w_r, &mut g.u_r, &mut g.b_r, &mut g.w_h, &mut g.u_h,
                &mut g.b_h,
            ]);
        }
        for b in &mut self.branches {
            for g in &mut b.gru {
                gru(&mut out, g);
            }
            out.push(&mut b.kgnn.w1);
            out.push(&mut b.kgnn.w2);
        }
        for g in &mut self.shared_gru {
            gru(&mut out, g);
        }
        for (w, b) in self.ffnn.weights.iter_mut().zip(self.ffnn.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
}

/// Draws weights uniformly in `+-1/sqrt(fan_in)` with zero biases,
/// deterministically from `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.hidden;
    let gat = GatParams::init(&mut rng, config.hist_len, h);
    let stack = |rng: &mut ChaCha8Rng, input: usize| -> Vec<GruParams> {
        (0..config.gru_layers).map(|l| GruParams::init(rng, if l == 0 { input } else { h }, h)).collect()
    };
    let (branches, shared_gru) = match config.variant {
        Variant::V1 => {
            let branches = (0..4)
                .map(|_| Branch { gru: stack(&mut rng, 1), kgnn: KgnnParams::init(&mut rng, h, Activation::Identity) })
                .collect();
            (branches, Vec::new())
        }
        Variant::V2 => {
            let len = config.recent_len;
            let branches =
                (0..4).map(|_| Branch { gru: Vec::new(), kgnn: KgnnParams::init(&mut rng, len, Activation::Tanh) }).collect();
            (branches, stack(&mut rng, len))
        }
    };
    let ffnn = FfnnParams::init(&mut rng, &config.ffnn_widths())?;
    Ok(ModelParams { config: config.clone(), weights: Weights { gat, branches, shared_gru, ffnn } })
}

impl ModelParams {
    pub fn parameter_count(&self) -> usize {
        self.weights.entries().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks every tensor against the shapes `init_params` would produce
    /// and rejects non-finite values.
    pub fn validate(&self) -> Result<(), ModelError> {
        let reference = init_params(&self.config)?;
        let want = reference.weights.entries();
        let got = self.weights.entries();
        if want.len() != got.len() {
            return Err(ModelError::Config(format!("expected {} tensors, got {}", want.len(), got.len())));
        }
        for ((name, w), (_, g)) in want.iter().zip(&got) {
            if w.shape() != g.shape() {
                return Err(ModelError::Config(format!("{name}: expected {:?}, got {:?}", w.shape(), g.shape())));
            }
            if !g.all_finite() {
                return Err(ModelError::Config(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Weights<Var> {
        self.weights.map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
    }

    /// Predictions (scaled space) for each sample, one value per station.
    pub fn predict(&self, index: &EdgeIndex, samples: &[&SampleWindow]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, false);
        let batch = ModelInput::from_samples(samples);
        let (x_o, x_h) = (tape.constant(batch.recent), tape.constant(batch.historical));
        let out = forward(&mut tape, &self.config, &w, x_o, x_h, index)?;
        let n = self.config.stations;
        Ok(tape.value(out).data().chunks(n).map(<[f64]>::to_vec).collect())
    }
}

/// Stacked inputs of a batch of samples: `B * N_s` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub recent: Tensor,
    pub historical: Tensor,
    /// `B * N_s x 1`
    pub target: Tensor,
    pub samples: usize,
}

impl ModelInput {
    pub fn from_samples(samples: &[&SampleWindow]) -> Self {
        let recent: Vec<&Tensor> = samples.iter().map(|s| &s.recent).collect();
        let historical: Vec<&Tensor> = samples.iter().map(|s| &s.historical).collect();
        let target = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
        Self {
            recent: Tensor::vstack(&recent),
            historical: Tensor::vstack(&historical),
            target: Tensor::column(target),
            samples: samples.len(),
        }
    }
}

fn time_steps(tape: &mut Tape, x: Var) -> Result<Vec<Var>, ModelError> {
    let len = tape.value(x).cols();
    (0..len).map(|t| Ok(tape.gather(x, Axis::Cols, vec![t].into())?)).collect()
}

/// Forward pass for `B` stacked samples: `x_o` is `B*N x I`, `x_h` is
/// `B*N x N_h`. Returns `B*N x 1` predictions.
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    w: &Weights<Var>,
    x_o: Var,
    x_h: Var,
    index: &EdgeIndex,
) -> Result<Var, ModelError> {
    let rows = index.nodes();
    for (name, v, cols) in [("recent", x_o, config.recent_len), ("historical", x_h, config.hist_len)] {
        if tape.value(v).dims() != Some((rows, cols)) {
            return Err(ModelError::Config(format!(
                "{name} input must be {rows}x{cols}, got {:?}",
                tape.value(v).shape()
            )));
        }
    }
    if index.stations() != config.stations {
        return Err(ModelError::Config(format!(
            "graph has {} stations, model expects {}",
            index.stations(),
            config.stations
        )));
    }
    let (x_t, x_r) = decompose(tape, x_o, config.decomposition())?;
    let edge_weights = gat_edge_weights(tape, x_h, index, &w.gat)?;
    let series = [x_o, x_h, x_t, x_r];
    let features = match config.variant {
        Variant::V1 => {
            let mut encoded = Vec::with_capacity(4);
            for (s, branch) in series.into_iter().zip(&w.branches) {
                let steps = time_steps(tape, s)?;
                let h = gru_sequence(tape, &steps, &branch.gru)?;
                encoded.push(kgnn_aggregate(tape, h, index, edge_weights, &branch.kgnn)?);
            }
            tape.concat(&encoded, Axis::Cols)?
        }
        Variant::V2 => {
            let mut blocks = Vec::with_capacity(4);
            for (s, branch) in series.into_iter().zip(&w.branches) {
                blocks.push(kgnn_aggregate(tape, s, index, edge_weights, &branch.kgnn)?);
            }
            gru_sequence(tape, &blocks, &w.shared_gru)?
        }
    };
    Ok(ffnn_forward(tape, features, &w.ffnn)?)
}
