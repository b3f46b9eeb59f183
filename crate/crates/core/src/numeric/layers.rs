use rand::Rng;

use super::{Graph, NumericError, ParamId, ParamStore, Tensor, Var};

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `y = x W + b`
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let w = Tensor::uniform(&[input, output], glorot_bound(input, output), rng);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[1, output]))?) } else { None };
        Ok(Linear { weight, bias, input, output })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Lookup table of `[vocab, dim]` rows.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Result<Self, NumericError> {
        let t = Tensor::uniform(&[vocab, dim], (3.0 / dim as f64).sqrt(), rng);
        Self::from_tensor(store, name, t)
    }

    pub fn from_tensor(store: &mut ParamStore, name: &str, table: Tensor) -> Result<Self, NumericError> {
        let (vocab, dim) = (table.rows(), table.cols());
        let table = store.add(format!("{name}.table"), table)?;
        Ok(Embedding { table, vocab, dim })
    }

    /// `[ids.len(), dim]` rows in order.
    pub fn lookup(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM cell with gates ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self, NumericError> {
        let w_input = store.add(format!("{name}.w_input"), Tensor::uniform(&[input, 4 * hidden], glorot_bound(input, hidden), rng))?;
        let w_hidden = store.add(format!("{name}.w_hidden"), Tensor::uniform(&[hidden, 4 * hidden], glorot_bound(hidden, hidden), rng))?;
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let bias = store.add(format!("{name}.bias"), b)?;
        Ok(LstmCell { w_input, w_hidden, bias, input, hidden })
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        let h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let c = g.constant(Tensor::zeros(&[1, self.hidden]));
        LstmState { h, c }
    }

    /// `x W_input` for every row of `x` at once, `[rows, 4 * hidden]`.
    pub fn project(&self, g: &mut Graph, x: Var) -> Var {
        let wi = g.param(self.w_input);
        g.matmul(x, wi)
    }

    pub fn step(&self, g: &mut Graph, x: Var, state: LstmState) -> LstmState {
        let xw = self.project(g, x);
        self.step_projected(g, xw, state)
    }

    /// One step given the already projected input row.
    pub fn step_projected(&self, g: &mut Graph, xw: Var, state: LstmState) -> LstmState {
        let n = self.hidden;
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let hh = g.matmul(state.h, wh);
        let z = g.add(xw, hh);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, 2 * n);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * n, 3 * n);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * n, 4 * n);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}
