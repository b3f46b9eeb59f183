use super::{Graph, ParamId, ParamStore, Var};

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat offset of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares tape gradients against central finite differences.
///
/// `loss` builds the scalar loss on a fresh graph. At most `per_param`
/// evenly spaced entries of each parameter are probed. The relative error
/// of an entry is `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, per_param: usize, loss: F) -> GradCheck
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l).expect("finite loss")
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.scalar(l)
    };

    let mut probe = store.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numeric::{LstmCell, Tensor};

    fn store_with(shapes: &[(&str, [usize; 2])], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            s.add(*name, Tensor::uniform(shape, 1.0, &mut rng)).unwrap();
        }
        s
    }

    fn assert_close(store: &ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let r = check_gradients(store, 1e-5, 64, f);
        assert!(r.checked > 0);
        assert!(r.max_rel_error < 1e-5, "{:?}", r);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::row(vec![1.0, -2.0, 0.5])).unwrap();
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let sq = g.mul(x, x);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(0.0)).unwrap();
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let y = g.tanh(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(id).unwrap().item(), 1.0);
    }

    #[test]
    fn params_are_leaves_shared_within_a_graph() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new(&s);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let y = g.mul(a, b);
        assert_eq!(g.backward(y).unwrap().get(id).unwrap().item(), 6.0);
    }

    #[test]
    fn matmul_and_bias() {
        let s = store_with(&[("a", [3, 4]), ("b", [4, 2]), ("c", [1, 2])], 1);
        assert_close(&s, |g| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let c = g.param(ParamId(2));
            let y = g.matmul(a, b);
            let y = g.add_row(y, c);
            let y = g.tanh(y);
            g.sum(y)
        });
    }

    #[test]
    fn elementwise_ops() {
        let s = store_with(&[("a", [2, 3]), ("b", [2, 3]), ("k", [1, 1])], 2);
        assert_close(&s, |g| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let k = g.param(ParamId(2));
            let x = g.mul(a, b);
            let y = g.sigmoid(b);
            let z = g.elu(a);
            let w = g.min(y, z);
            let v = g.add(x, w);
            let v = g.scale_by(v, k);
            let v = g.scale(v, 0.7);
            let sq = g.mul(v, v);
            g.sum(sq)
        });
    }

    #[test]
    fn shape_ops() {
        let s = store_with(&[("a", [3, 4]), ("b", [2, 4])], 3);
        assert_close(&s, |g| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let rows = g.concat_rows(&[a, b]);
            let t = g.transpose(rows);
            let left = g.slice_cols(t, 1, 4);
            let right = g.slice_rows(t, 0, 4);
            let right = g.slice_cols(right, 0, 3);
            let cat = g.concat_cols(&[left, right]);
            let r = g.reshape(cat, &[6, 4]);
            let picked = g.gather_rows(r, &[5, 0, 0, 2]);
            let tanh = g.tanh(picked);
            let p = g.pick(tanh, &[0, 3, 7, 9, 15]);
            let sq = g.mul(p, p);
            g.sum(sq)
        });
    }

    #[test]
    fn softmax_log_and_pooling() {
        let s = store_with(&[("a", [3, 5])], 4);
        assert_close(&s, |g| {
            let a = g.param(ParamId(0));
            let p = g.softmax_rows(a);
            let l = g.log_clamped(p, 1e-12);
            let picked = g.pick(l, &[1, 7, 13]);
            let nll = g.sum(picked);
            let mx = g.max_rows(a);
            let mn = g.mean_rows(a);
            let pooled = g.mul(mx, mn);
            let pooled = g.sum(pooled);
            g.add(nll, pooled)
        });
    }

    #[test]
    fn lstm_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let cell = LstmCell::new(&mut s, "cell", 3, 4, &mut rng).unwrap();
        let x = s.add("x", Tensor::uniform(&[3, 3], 1.0, &mut rng)).unwrap();
        assert_close(&s, |g| {
            let xs = g.param(x);
            let mut state = cell.zero_state(g);
            for t in 0..3 {
                let xt = g.row(xs, t);
                state = cell.step(g, xt, state);
            }
            let sq = g.mul(state.h, state.c);
            g.sum(sq)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = store_with(&[("a", [4, 6])], 6);
        let mut g = Graph::new(&s);
        let a = g.param(ParamId(0));
        let p = g.softmax_rows(a);
        for r in 0..4 {
            let total: f64 = g.value(p).row_slice(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_below_floor_is_counted() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![0.0, 0.5]));
        let y = g.log_clamped(x, 1e-12);
        assert_eq!(g.clamp_events(), 1);
        assert!(g.value(y).is_finite());
        assert!(g.check().is_ok());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![f64::INFINITY]));
        let y = g.scale(x, 0.0);
        let l = g.sum(y);
        assert!(g.backward(l).is_err());
    }

    #[test]
    fn dropout_is_identity_without_training() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert_eq!(g.dropout(x, 0.5), x);

        let mut g = Graph::new(&s).with_dropout(ChaCha8Rng::seed_from_u64(0));
        let x = g.constant(Tensor::row(vec![1.0; 200]));
        let y = g.dropout(x, 0.5);
        let v = g.value(y).data();
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        assert!(v.contains(&0.0));
    }
}
