//! Building blocks of the forecaster, written against the autodiff tape.
//!
//! Every layer works on a batch of node rows: `B` samples of an `N`-station
//! network are stacked into `B * N` rows, and graph operations use an
//! [`EdgeIndex`] replicated per sample.

mod ffnn;
mod gat;
mod gru;

#[cfg(test)]
mod tests;

pub use ffnn::{ffnn_forward, FfnnParams};
pub use gat::{gat_edge_weights, kgnn_aggregate, Activation, EdgeIndex, GatParams, KgnnParams, LEAKY_SLOPE};
pub use gru::{gru_sequence, gru_step, GruParams};

use rand::Rng;
use rand_distr::Uniform;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("node {0} has an empty neighborhood")]
    DegenerateNeighborhood(usize),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Moving-average width for the trend/residual split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecompositionConfig {
    pub kernel: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { kernel: 5 }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<(), LayerError> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(LayerError::Config(format!("decomposition kernel must be odd and positive, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Splits each row of `x` into an edge-padded moving-average trend and the
/// residual `x - trend`.
pub fn decompose(tape: &mut Tape, x: Var, config: DecompositionConfig) -> Result<(Var, Var), LayerError> {
    config.validate()?;
    let trend = tape.avg_pool1d(x, config.kernel)?;
    let residual = tape.sub(x, trend)?;
    Ok((trend, residual))
}

/// [`decompose`] on plain values.
pub fn decompose_values(x: &Tensor, config: DecompositionConfig) -> Result<(Tensor, Tensor), LayerError> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let (t, r) = decompose(&mut tape, v, config)?;
    Ok((tape.value(t).clone(), tape.value(r).clone()))
}

/// Weight matrix drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(dist)).collect())
}

fn check_cols(tape: &Tape, v: Var, cols: usize, what: &str) -> Result<usize, LayerError> {
    let (r, c) = tape.value(v).dims().unwrap_or((0, 0));
    if c != cols {
        return Err(LayerError::Contract(format!("{what}: expected {cols} columns, got {r}x{c}")));
    }
    Ok(r)
}
