use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_cols, uniform_init, LayerError};
use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::graph::TransitGraph;

/// Negative slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Directed message edges `sender -> receiver` for `batch` stacked copies of
/// a graph, grouped by receiver so each neighborhood is a contiguous segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    nodes: usize,
    stations: usize,
    receivers: Arc<[usize]>,
    senders: Arc<[usize]>,
    offsets: Arc<[usize]>,
    incidence: Tensor,
}

impl EdgeIndex {
    pub fn new(graph: &TransitGraph, batch: usize) -> Result<Self, LayerError> {
        let n = graph.len();
        let mut receivers = Vec::new();
        let mut senders = Vec::new();
        let mut offsets = vec![0];
        for b in 0..batch {
            for i in 0..n {
                let nbrs = graph.neighbors(i);
                if nbrs.is_empty() {
                    return Err(LayerError::DegenerateNeighborhood(i));
                }
                for j in nbrs {
                    receivers.push(b * n + i);
                    senders.push(b * n + j);
                }
                offsets.push(receivers.len());
            }
        }
        let nodes = batch * n;
        let mut incidence = Tensor::zeros(nodes, receivers.len());
        for (e, &i) in receivers.iter().enumerate() {
            incidence.set(i, e, 1.0);
        }
        Ok(Self {
            nodes,
            stations: n,
            receivers: receivers.into(),
            senders: senders.into(),
            offsets: offsets.into(),
            incidence,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn edge_count(&self) -> usize {
        self.receivers.len()
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    /// Edge range of node `i`'s neighborhood.
    pub fn segment(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `(receiver, sender) -> weight` for an `E x 1` weight column.
    pub fn weight_map(&self, weights: &Tensor) -> BTreeMap<(usize, usize), f64> {
        self.receivers.iter().zip(self.senders.iter()).zip(weights.data()).map(|((&i, &j), &w)| ((i, j), w)).collect()
    }
}

/// Single-head attention: `w` projects historical features to `d`
/// dimensions and `a` (`2d x 1`) scores `[z_i || z_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams<T = Tensor> {
    pub w: T,
    pub a: T,
    pub alpha: f64,
}

impl<T> GatParams<T> {
    pub const NAMES: [&'static str; 2] = ["w", "a"];

    pub fn parts(&self) -> [&T; 2] {
        [&self.w, &self.a]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> GatParams<U> {
        GatParams { w: f(&self.w), a: f(&self.a), alpha: self.alpha }
    }
}

impl GatParams<Tensor> {
    pub fn init(rng: &mut impl Rng, input: usize, dim: usize) -> Self {
        let w = uniform_init(rng, input, dim, input);
        let a = uniform_init(rng, 2 * dim, 1, 2 * dim);
        Self { w, a, alpha: LEAKY_SLOPE }
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let d = self.w.cols();
        if self.a.dims() != Some((2 * d, 1)) {
            return Err(LayerError::Config(format!("attention vector must be {}x1, got {:?}", 2 * d, self.a.shape())));
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GatParams<Var> {
        self.map(|t| tape.param(t.clone()))
    }
}

/// Attention weight of every edge, softmax-normalized over each receiver's
/// neighborhood. Returns an `E x 1` column aligned with `index`.
pub fn gat_edge_weights(
    tape: &mut Tape,
    x_h: Var,
    index: &EdgeIndex,
    p: &GatParams<Var>,
) -> Result<Var, LayerError> {
    let input = tape.value(p.w).rows();
    let d = tape.value(p.w).cols();
    let rows = check_cols(tape, x_h, input, "attention input")?;
    if rows != index.nodes() {
        return Err(LayerError::Contract(format!("attention input has {rows} rows, edge index {}", index.nodes())));
    }
    let z = tape.matmul(x_h, p.w)?;
    let a_self = tape.gather(p.a, Axis::Rows, (0..d).collect())?;
    let a_nbr = tape.gather(p.a, Axis::Rows, (d..2 * d).collect())?;
    let s_self = tape.matmul(z, a_self)?;
    let s_nbr = tape.matmul(z, a_nbr)?;
    let e_self = tape.gather(s_self, Axis::Rows, index.receivers.clone())?;
    let e_nbr = tape.gather(s_nbr, Axis::Rows, index.senders.clone())?;
    let e = tape.add(e_self, e_nbr)?;
    let e = tape.leaky_relu(e, p.alpha);
    Ok(tape.segment_softmax(e, index.offsets.clone())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Self transform `w1` and neighbor transform `w2`, both square.
#[derive(Debug, Clone, PartialEq)]
pub struct KgnnParams<T = Tensor> {
    pub w1: T,
    pub w2: T,
    pub activation: Activation,
}

impl<T> KgnnParams<T> {
    pub const NAMES: [&'static str; 2] = ["w1", "w2"];

    pub fn parts(&self) -> [&T; 2] {
        [&self.w1, &self.w2]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> KgnnParams<U> {
        KgnnParams { w1: f(&self.w1), w2: f(&self.w2), activation: self.activation }
    }
}

impl KgnnParams<Tensor> {
    pub fn init(rng: &mut impl Rng, dim: usize, activation: Activation) -> Self {
        let w1 = uniform_init(rng, dim, dim, dim);
        let w2 = uniform_init(rng, dim, dim, dim);
        Self { w1, w2, activation }
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let d = self.w1.rows();
        if self.w1.dims() != Some((d, d)) || self.w2.dims() != Some((d, d)) {
            return Err(LayerError::Config(format!(
                "k-gnn weights must be square and equal, got {:?} and {:?}",
                self.w1.shape(),
                self.w2.shape()
            )));
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> KgnnParams<Var> {
        self.map(|t| tape.param(t.clone()))
    }
}

/// `act(H W1 + (sum_j w_ij H_j) W2)` for every node `i`, with `w_ij` the
/// edge weights from [`gat_edge_weights`].
pub fn kgnn_aggregate(
    tape: &mut Tape,
    h: Var,
    index: &EdgeIndex,
    weights: Var,
    p: &KgnnParams<Var>,
) -> Result<Var, LayerError> {
    let d = tape.value(p.w1).rows();
    let rows = check_cols(tape, h, d, "k-gnn input")?;
    if rows != index.nodes() {
        return Err(LayerError::Contract(format!("k-gnn input has {rows} rows, edge index {}", index.nodes())));
    }
    if tape.value(weights).dims() != Some((index.edge_count(), 1)) {
        return Err(LayerError::Contract(format!(
            "edge weights must cover all {} edges, got {:?}",
            index.edge_count(),
            tape.value(weights).shape()
        )));
    }
    let from = tape.gather(h, Axis::Rows, index.senders.clone())?;
    let weighted = tape.mul(from, weights)?;
    let incidence = tape.constant(index.incidence.clone());
    let neighbor_sum = tape.matmul(incidence, weighted)?;
    let own = tape.matmul(h, p.w1)?;
    let nbr = tape.matmul(neighbor_sum, p.w2)?;
    let out = tape.add(own, nbr)?;
    Ok(match p.activation {
        Activation::Tanh => tape.tanh(out),
        Activation::Identity => out,
    })
}
