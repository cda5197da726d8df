use rand::Rng;

use super::{check_cols, uniform_init, LayerError};
use crate::autodiff::{Tape, Tensor, Var};

/// Gated recurrent unit weights. Input maps are stored `input x hidden` and
/// recurrent maps `hidden x hidden`, so a batch of row vectors multiplies
/// from the left; biases are `1 x hidden` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T = Tensor> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

impl<T> GruParams<T> {
    pub const NAMES: [&'static str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

    pub fn parts(&self) -> [&T; 9] {
        [&self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> GruParams<U> {
        GruParams {
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }

    /// Rebuilds from values in [`Self::NAMES`] order.
    pub fn from_parts(parts: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = parts.into_iter();
        Some(Self {
            w_z: it.next()?,
            u_z: it.next()?,
            b_z: it.next()?,
            w_r: it.next()?,
            u_r: it.next()?,
            b_r: it.next()?,
            w_h: it.next()?,
            u_h: it.next()?,
            b_h: it.next()?,
        })
    }
}

impl GruParams<Tensor> {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let mut w = || uniform_init(rng, input, hidden, input);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u = || uniform_init(rng, hidden, hidden, hidden);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let b = || Tensor::zeros(1, hidden);
        Self { w_z, u_z, b_z: b(), w_r, u_r, b_r: b(), w_h, u_h, b_h: b() }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(input, hidden);
        let u = || Tensor::zeros(hidden, hidden);
        let b = || Tensor::zeros(1, hidden);
        Self { w_z: w(), u_z: u(), b_z: b(), w_r: w(), u_r: u(), b_r: b(), w_h: w(), u_h: u(), b_h: b() }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.rows()
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let (i, h) = (self.input_size(), self.hidden_size());
        let expected = [(i, h), (h, h), (1, h)];
        for (k, (name, t)) in Self::NAMES.iter().zip(self.parts()).enumerate() {
            if t.dims() != Some(expected[k % 3]) {
                return Err(LayerError::Config(format!(
                    "gru {name}: expected {:?}, got {:?}",
                    expected[k % 3],
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GruParams<Var> {
        self.map(|t| tape.param(t.clone()))
    }
}

/// One step for a batch of rows: `x` is `B x input`, `h_prev` is `B x hidden`.
pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruParams<Var>) -> Result<Var, LayerError> {
    let input = tape.value(p.w_z).rows();
    let hidden = tape.value(p.u_z).rows();
    let bx = check_cols(tape, x, input, "gru input")?;
    let bh = check_cols(tape, h_prev, hidden, "gru state")?;
    if bx != bh {
        return Err(LayerError::Contract(format!("gru input has {bx} rows, state has {bh}")));
    }

    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| -> Result<Var, LayerError> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h_prev, u)?;
        let s = tape.add(xw, hu)?;
        let s = tape.add(s, b)?;
        Ok(tape.sigmoid(s))
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z)?;
    let r = gate(tape, p.w_r, p.u_r, p.b_r)?;

    let xw = tape.matmul(x, p.w_h)?;
    let hu = tape.matmul(h_prev, p.u_h)?;
    let rhu = tape.mul(r, hu)?;
    let s = tape.add(xw, rhu)?;
    let s = tape.add(s, p.b_h)?;
    let candidate = tape.tanh(s);

    let one = tape.constant(Tensor::scalar(1.0));
    let keep = tape.sub(one, z)?;
    let old = tape.mul(keep, h_prev)?;
    let new = tape.mul(z, candidate)?;
    Ok(tape.add(old, new)?)
}

/// Runs a stack of GRU layers over `inputs` (one `B x input` tensor per time
/// step) from a zero state and returns the top layer's final hidden state.
pub fn gru_sequence(tape: &mut Tape, inputs: &[Var], layers: &[GruParams<Var>]) -> Result<Var, LayerError> {
    let Some(&first) = inputs.first() else {
        return Err(LayerError::Contract("gru sequence needs at least one step".into()));
    };
    if layers.is_empty() {
        return Err(LayerError::Contract("gru stack needs at least one layer".into()));
    }
    let batch = tape.value(first).rows();
    let mut seq = inputs.to_vec();
    for p in layers {
        let hidden = tape.value(p.u_z).rows();
        let mut h = tape.constant(Tensor::zeros(batch, hidden));
        for x in seq.iter_mut() {
            h = gru_step(tape, *x, h, p)?;
            *x = h;
        }
    }
    Ok(*seq.last().unwrap())
}
