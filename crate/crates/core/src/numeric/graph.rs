//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse, which is a reverse topological order by
//! construction.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{NumericError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Log(Var, f64),
    SoftmaxRows(Var),
    Min(Var, Var),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Pick(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::ScaleBy(..) => "scale_by",
            Op::Scale(..) => "scale",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Elu(_) => "elu",
            Op::Log(..) => "log",
            Op::SoftmaxRows(_) => "softmax",
            Op::Min(..) => "min",
            Op::MaxRows(..) => "max_pool",
            Op::MeanRows(_) => "mean_pool",
            Op::Sum(_) => "sum",
            Op::Pick(..) => "pick",
            Op::Dropout(..) => "dropout",
        }
    }
}

/// A differentiable computation over a borrowed parameter store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    values: Vec<Option<Tensor>>,
    ops: Vec<Op>,
    param_vars: HashMap<ParamId, Var>,
    non_finite: Option<&'static str>,
    clamped: usize,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, values: Vec::new(), ops: Vec::new(), param_vars: HashMap::new(), non_finite: None, clamped: 0, dropout_rng: None }
    }

    /// Enables dropout masks drawn from `rng`.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Number of log arguments that fell below their floor.
    pub fn clamp_events(&self) -> usize {
        self.clamped
    }

    /// Fails when any op produced a non-finite value.
    pub fn check(&self) -> Result<(), NumericError> {
        match self.non_finite {
            Some(op) => Err(NumericError::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match (&self.values[v.0], &self.ops[v.0]) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("value without storage"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.values.push(Some(value));
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.values.push(None);
        self.ops.push(Op::Param(id));
        let v = Var(self.ops.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.dims(a);
        let (k2, c) = self.dims(b);
        assert_eq!(k, k2, "matmul inner extents {} vs {}", k, k2);
        let mut out = vec![0.0; r * c];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        self.push(Tensor::matrix(r, c, out), Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shapes");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_with(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    /// Adds the `[1, c]` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(b), (1, c), "add_row bias shape");
        let bias = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += bias[j];
            }
        }
        self.push(Tensor::matrix(r, c, out), Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_with(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    /// Multiplies every entry of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let t = self.map(x, |v| v * k);
        self.push(t, Op::ScaleBy(x, s))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.map(x, |v| v * k);
        self.push(t, Op::Scale(x, k))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.dims(p);
                assert_eq!(pr, r, "concat_cols row counts");
                pc
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::matrix(r, c, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(self.dims(p).1, c, "concat_rows column counts");
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        self.push(Tensor::matrix(r, c, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start < end && end <= c, "slice_cols {}..{} of {}", start, end, c);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        self.push(Tensor::matrix(r, end - start, out), Op::SliceCols(x, start, end))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start < end && end <= r, "slice_rows {}..{} of {}", start, end, r);
        let out = self.value(x).data()[start * c..end * c].to_vec();
        self.push(Tensor::matrix(end - start, c, out), Op::SliceRows(x, start))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        self.slice_rows(x, i, i + 1)
    }

    /// Rows of `x` at `indices`, in that order.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(i < r, "gather row {} of {}", i, r);
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(Tensor::matrix(indices.len(), c, out), Op::GatherRows(x, indices.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape.to_vec()).expect("reshape preserves size");
        self.push(t, Op::Reshape(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x).transpose();
        self.push(t, Op::Transpose(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| 1.0 / (1.0 + (-v).exp()));
        self.push(t, Op::Sigmoid(x))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| if v > 0.0 { v } else { v.exp_m1() });
        self.push(t, Op::Elu(x))
    }

    /// Natural log of `max(x, floor)`; arguments below the floor get no
    /// gradient and are counted.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let below = self.value(x).data().iter().filter(|&&v| v < floor).count();
        self.clamped += below;
        let t = self.map(x, |v| v.max(floor).ln());
        self.push(t, Op::Log(x, floor))
    }

    /// Softmax along the last axis of every row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(super::tensor::softmax(&src[i * c..(i + 1) * c]));
        }
        self.push(Tensor::matrix(r, c, out), Op::SoftmaxRows(x))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_with(a, b, f64::min);
        self.push(t, Op::Min(a, b))
    }

    /// Column-wise maximum over rows, `[r, c] -> [1, c]`.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut arg = vec![0usize; c];
        let mut out = src[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                if src[i * c + j] > out[j] {
                    out[j] = src[i * c + j];
                    arg[j] = i;
                }
            }
        }
        self.push(Tensor::row(out), Op::MaxRows(x, arg))
    }

    /// Column-wise mean over rows, `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        self.push(Tensor::row(out), Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Entries of `x` at flat `indices`, as a `[1, k]` row.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Var {
        let src = self.value(x).data();
        let out = indices.iter().map(|&i| src[i]).collect();
        self.push(Tensor::row(out), Op::Pick(x, indices.to_vec()))
    }

    /// Inverted dropout; identity when the graph is not training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Dropout(x, mask))
    }

    /// Gradients of the scalar `loss` with respect to every parameter it
    /// depends on.
    pub fn backward(&self, loss: Var) -> Result<Grads, NumericError> {
        self.check()?;
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Grads::for_store(self.store);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let gd = g.data();
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (r, k) = self.dims(*a);
                    let c = self.dims(*b).1;
                    let bv = self.value(*b).data();
                    let av = self.value(*a).data();
                    matmul_bt_into(gd, bv, self.acc(&mut grads, *a), r, k, c);
                    matmul_at_into(av, gd, self.acc(&mut grads, *b), r, k, c);
                }
                Op::Add(a, b) => {
                    add_into(self.acc(&mut grads, *a), gd);
                    add_into(self.acc(&mut grads, *b), gd);
                }
                Op::AddRow(a, b) => {
                    add_into(self.acc(&mut grads, *a), gd);
                    let c = self.dims(*b).1;
                    let db = self.acc(&mut grads, *b);
                    for (k, v) in gd.iter().enumerate() {
                        db[k % c] += v;
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = self.acc(&mut grads, *a);
                    for k in 0..gd.len() {
                        da[k] += gd[k] * bv[k];
                    }
                    let db = self.acc(&mut grads, *b);
                    for k in 0..gd.len() {
                        db[k] += gd[k] * av[k];
                    }
                }
                Op::ScaleBy(x, s) => {
                    let k = self.scalar(*s);
                    let xv = self.value(*x).data();
                    let dot: f64 = gd.iter().zip(xv).map(|(a, b)| a * b).sum();
                    let dx = self.acc(&mut grads, *x);
                    for (d, v) in dx.iter_mut().zip(gd) {
                        *d += v * k;
                    }
                    self.acc(&mut grads, *s)[0] += dot;
                }
                Op::Scale(x, k) => {
                    let dx = self.acc(&mut grads, *x);
                    for (d, v) in dx.iter_mut().zip(gd) {
                        *d += v * k;
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = g.rows();
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        let dp = self.acc(&mut grads, p);
                        for row in 0..r {
                            for j in 0..w {
                                dp[row * w + j] += gd[row * c + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(self.acc(&mut grads, p), &gd[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let c = self.dims(*x).1;
                    let w = end - start;
                    let dx = self.acc(&mut grads, *x);
                    for row in 0..g.rows() {
                        for j in 0..w {
                            dx[row * c + start + j] += gd[row * w + j];
                        }
                    }
                }
                Op::SliceRows(x, start) => {
                    let c = self.dims(*x).1;
                    let dx = self.acc(&mut grads, *x);
                    add_into(&mut dx[start * c..start * c + gd.len()], gd);
                }
                Op::GatherRows(x, indices) => {
                    let c = self.dims(*x).1;
                    let dx = self.acc(&mut grads, *x);
                    for (row, &src) in indices.iter().enumerate() {
                        add_into(&mut dx[src * c..(src + 1) * c], &gd[row * c..(row + 1) * c]);
                    }
                }
                Op::Reshape(x) => add_into(self.acc(&mut grads, *x), gd),
                Op::Transpose(x) => {
                    let gt = g.transpose();
                    add_into(self.acc(&mut grads, *x), gt.data());
                }
                Op::Tanh(x) => {
                    let y = self.values[i].as_ref().expect("owned").data();
                    let dx = self.acc(&mut grads, *x);
                    for k in 0..gd.len() {
                        dx[k] += gd[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = self.values[i].as_ref().expect("owned").data();
                    let dx = self.acc(&mut grads, *x);
                    for k in 0..gd.len() {
                        dx[k] += gd[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Elu(x) => {
                    let y = self.values[i].as_ref().expect("owned").data();
                    let xv = self.value(*x).data();
                    let dx = self.acc(&mut grads, *x);
                    for k in 0..gd.len() {
                        dx[k] += gd[k] * if xv[k] > 0.0 { 1.0 } else { y[k] + 1.0 };
                    }
                }
                Op::Log(x, floor) => {
                    let xv = self.value(*x).data();
                    let dx = self.acc(&mut grads, *x);
                    for k in 0..gd.len() {
                        if xv[k] >= *floor {
                            dx[k] += gd[k] / xv[k];
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let y = self.values[i].as_ref().expect("owned");
                    let (r, c) = (y.rows(), y.cols());
                    let yv = y.data();
                    let dx = self.acc(&mut grads, *x);
                    for row in 0..r {
                        let s = row * c;
                        let dot: f64 = (0..c).map(|j| gd[s + j] * yv[s + j]).sum();
                        for j in 0..c {
                            dx[s + j] += yv[s + j] * (gd[s + j] - dot);
                        }
                    }
                }
                Op::Min(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let take_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                    let da = self.acc(&mut grads, *a);
                    for k in 0..gd.len() {
                        if take_a[k] {
                            da[k] += gd[k];
                        }
                    }
                    let db = self.acc(&mut grads, *b);
                    for k in 0..gd.len() {
                        if !take_a[k] {
                            db[k] += gd[k];
                        }
                    }
                }
                Op::MaxRows(x, arg) => {
                    let c = self.dims(*x).1;
                    let dx = self.acc(&mut grads, *x);
                    for j in 0..c {
                        dx[arg[j] * c + j] += gd[j];
                    }
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.dims(*x);
                    let dx = self.acc(&mut grads, *x);
                    for row in 0..r {
                        for j in 0..c {
                            dx[row * c + j] += gd[j] / r as f64;
                        }
                    }
                }
                Op::Sum(x) => {
                    let dx = self.acc(&mut grads, *x);
                    for d in dx.iter_mut() {
                        *d += gd[0];
                    }
                }
                Op::Pick(x, indices) => {
                    let dx = self.acc(&mut grads, *x);
                    for (k, &src) in indices.iter().enumerate() {
                        dx[src] += gd[k];
                    }
                }
                Op::Dropout(x, mask) => {
                    let dx = self.acc(&mut grads, *x);
                    for k in 0..gd.len() {
                        dx[k] += gd[k] * mask[k];
                    }
                }
            }
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut [f64] {
        let shape = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
