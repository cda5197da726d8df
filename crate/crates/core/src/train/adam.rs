use super::{TrainConfig, TrainError};
use crate::autodiff::Tensor;
use crate::model::ModelParams;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        let shapes: Vec<(usize, usize)> =
            params.weights.entries().iter().map(|(_, t)| t.dims().expect("rank-2 parameter")).collect();
        Self::with_shapes(&shapes, config)
    }

    pub fn with_shapes(shapes: &[(usize, usize)], config: &TrainConfig) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect::<Vec<_>>();
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update to `params` in entry order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<(), TrainError> {
        let names: Vec<String> = params.weights.entries().into_iter().map(|(n, _)| n).collect();
        let mut tensors = params.weights.tensors_mut();
        self.update(&mut tensors, grads, &names)
    }

    /// Updates raw tensors; `names` label errors.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TrainError::Contract(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(TrainError::Contract(format!("{}: gradient shape {:?} for {:?}", names[k], g.shape(), p.shape())));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient(names[k].clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[k].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
