use rand::Rng;

use super::{check_cols, uniform_init, LayerError, LEAKY_SLOPE};
use crate::autodiff::{Tape, Tensor, Var};

/// Dense stack: `weights[k]` is `widths[k] x widths[k + 1]`, `biases[k]` is
/// `1 x widths[k + 1]`. Hidden layers use LeakyReLU, the last is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnParams<T = Tensor> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T> FfnnParams<T> {
    /// Visits layers in order, each weight before its bias.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FfnnParams<U> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(f(w));
            biases.push(f(b));
        }
        FfnnParams { weights, biases }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

impl FfnnParams<Tensor> {
    pub fn init(rng: &mut impl Rng, widths: &[usize]) -> Result<Self, LayerError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(LayerError::Config(format!("ffnn needs at least two positive widths, got {widths:?}")));
        }
        let weights = widths.windows(2).map(|w| uniform_init(rng, w[0], w[1], w[0])).collect();
        let biases = widths[1..].iter().map(|&w| Tensor::zeros(1, w)).collect();
        Ok(Self { weights, biases })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(Tensor::rows).collect();
        w.extend(self.weights.last().map(Tensor::cols));
        w
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(LayerError::Config("ffnn weight and bias counts differ".into()));
        }
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if b.dims() != Some((1, w.cols())) {
                return Err(LayerError::Config(format!("ffnn layer {k}: bias {:?} for weight {:?}", b.shape(), w.shape())));
            }
            if k > 0 && self.weights[k - 1].cols() != w.rows() {
                return Err(LayerError::Config(format!("ffnn layer {k}: widths do not chain")));
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> FfnnParams<Var> {
        self.map(|t| tape.param(t.clone()))
    }
}

/// Applies the stack to a batch of row vectors `x` (`B x widths[0]`).
pub fn ffnn_forward(tape: &mut Tape, x: Var, p: &FfnnParams<Var>) -> Result<Var, LayerError> {
    let Some(&first) = p.weights.first() else {
        return Err(LayerError::Config("empty ffnn".into()));
    };
    check_cols(tape, x, tape.value(first).rows(), "ffnn input")?;
    let mut out = x;
    for (k, (&w, &b)) in p.weights.iter().zip(&p.biases).enumerate() {
        let y = tape.matmul(out, w)?;
        out = tape.add(y, b)?;
        if k + 1 < p.weights.len() {
            out = tape.leaky_relu(out, LEAKY_SLOPE);
        }
    }
    Ok(out)
}
