//! Deep biaffine scoring of edge existence and edge labels.

use rand::Rng;

use crate::numeric::{glorot_bound, softmax, Graph, Linear, NumericError, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Biaffine {
    pub edge_head: Linear,
    pub edge_dep: Linear,
    pub label_head: Linear,
    pub label_dep: Linear,
    /// Learned state of the dummy root, `[1, input]`.
    pub root: ParamId,
    pub edge_u: ParamId,
    pub edge_w_head: ParamId,
    pub edge_w_dep: ParamId,
    pub edge_b: ParamId,
    /// `[label_dim, labels * label_dim]`: block `l` holds `U_l`.
    pub label_u: ParamId,
    pub label_b: ParamId,
    pub labels: usize,
    pub label_dim: usize,
}

/// Tape nodes of one sentence's edge scores.
#[derive(Clone, Copy, Debug)]
pub struct EdgeVars {
    /// `[m + 1, m]`: row = head (0 is the dummy root), column = dependent.
    pub edge: Var,
    pub label_head: Var,
    pub label_dep: Var,
    pub m: usize,
}

impl Biaffine {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        edge_dim: usize,
        label_dim: usize,
        labels: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let mut mat = |store: &mut ParamStore, n: &str, r: usize, c: usize, bound: f64| {
            store.add(format!("{name}.{n}"), Tensor::uniform(&[r, c], bound, rng))
        };
        let root = mat(store, "root", 1, input, 0.1)?;
        let edge_u = mat(store, "edge_u", edge_dim, edge_dim, glorot_bound(edge_dim, edge_dim))?;
        let edge_w_head = mat(store, "edge_w_head", edge_dim, 1, glorot_bound(edge_dim, 1))?;
        let edge_w_dep = mat(store, "edge_w_dep", edge_dim, 1, glorot_bound(edge_dim, 1))?;
        let label_u = mat(store, "label_u", label_dim, labels * label_dim, glorot_bound(label_dim, label_dim))?;
        let edge_b = store.add(format!("{name}.edge_b"), Tensor::zeros(&[1, 1]))?;
        let label_b = store.add(format!("{name}.label_b"), Tensor::zeros(&[1, labels]))?;
        Ok(Biaffine {
            edge_head: Linear::new(store, &format!("{name}.edge_head"), input, edge_dim, true, rng)?,
            edge_dep: Linear::new(store, &format!("{name}.edge_dep"), input, edge_dim, true, rng)?,
            label_head: Linear::new(store, &format!("{name}.label_head"), input, label_dim, true, rng)?,
            label_dep: Linear::new(store, &format!("{name}.label_dep"), input, label_dim, true, rng)?,
            root,
            edge_u,
            edge_w_head,
            edge_w_dep,
            edge_b,
            label_u,
            label_b,
            labels,
            label_dim,
        })
    }

    fn mlp(g: &mut Graph, layer: &Linear, x: Var, dropout: f64) -> Var {
        let y = layer.forward(g, x);
        let y = g.elu(y);
        g.dropout(y, dropout)
    }

    /// Edge scores for the `[m, input]` decoder states.
    pub fn forward(&self, g: &mut Graph, states: Var, dropout: f64) -> EdgeVars {
        let m = g.value(states).rows();
        let root = g.param(self.root);
        let heads = g.concat_rows(&[root, states]);

        let eh = Self::mlp(g, &self.edge_head, heads, dropout);
        let ed = Self::mlp(g, &self.edge_dep, states, dropout);
        let u = g.param(self.edge_u);
        let hu = g.matmul(eh, u);
        let edt = g.transpose(ed);
        let bilinear = g.matmul(hu, edt);

        let wh = g.param(self.edge_w_head);
        let head_term = g.matmul(eh, wh);
        let b = g.param(self.edge_b);
        let head_term = g.add_row(head_term, b);
        let ones_dep = g.constant(Tensor::filled(&[1, m], 1.0));
        let head_term = g.matmul(head_term, ones_dep);

        let wd = g.param(self.edge_w_dep);
        let dep_term = g.matmul(ed, wd);
        let dep_term = g.transpose(dep_term);
        let edge = g.add_row(bilinear, dep_term);
        let edge = g.add(edge, head_term);

        let label_head = Self::mlp(g, &self.label_head, heads, dropout);
        let label_dep = Self::mlp(g, &self.label_dep, states, dropout);
        EdgeVars { edge, label_head, label_dep, m }
    }

    /// `[m, m + 1]`: row `t - 1` is the head distribution of node `t`.
    pub fn head_probs(&self, g: &mut Graph, e: &EdgeVars) -> Var {
        let t = g.transpose(e.edge);
        g.softmax_rows(t)
    }

    /// `[pairs.len(), labels]` label scores for `(head, dependent)` pairs,
    /// heads in `0..=m` and dependents in `1..=m`.
    pub fn label_scores(&self, g: &mut Graph, e: &EdgeVars, pairs: &[(usize, usize)]) -> Var {
        let heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let deps: Vec<usize> = pairs.iter().map(|p| p.1 - 1).collect();
        let h = g.gather_rows(e.label_head, &heads);
        let d = g.gather_rows(e.label_dep, &deps);
        let u = g.param(self.label_u);
        let hu = g.matmul(h, u);
        let tiled = g.concat_cols(&vec![d; self.labels]);
        let prod = g.mul(hu, tiled);
        let k = self.label_dim;
        let mut blocks = vec![0.0; self.labels * k * self.labels];
        for l in 0..self.labels {
            for i in 0..k {
                blocks[(l * k + i) * self.labels + l] = 1.0;
            }
        }
        let sum = g.constant(Tensor::matrix(self.labels * k, self.labels, blocks));
        let scores = g.matmul(prod, sum);
        let b = g.param(self.label_b);
        g.add_row(scores, b)
    }
}

/// Plain edge and label scores of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScores {
    /// `[m + 1, m]`
    pub edge: Tensor,
    /// `[(m + 1) * m, labels]`, row `k * m + (t - 1)` for head `k`, dependent `t`.
    pub label: Tensor,
    pub m: usize,
}

impl EdgeScores {
    pub fn compute(model: &Biaffine, g: &mut Graph, e: &EdgeVars) -> Self {
        let m = e.m;
        let pairs: Vec<(usize, usize)> = (0..=m).flat_map(|k| (1..=m).map(move |t| (k, t))).collect();
        let label = model.label_scores(g, e, &pairs);
        EdgeScores { edge: g.value(e.edge).clone(), label: g.value(label).clone(), m }
    }

    pub fn edge_score(&self, head: usize, dep: usize) -> f64 {
        self.edge.get(head, dep - 1)
    }

    pub fn label_row(&self, head: usize, dep: usize) -> &[f64] {
        self.label.row_slice(head * self.m + dep - 1)
    }
}

/// Softmax over heads `0..=m` for dependent `t` (1-based).
pub fn head_distribution(scores: &EdgeScores, t: usize) -> Vec<f64> {
    assert!(t >= 1 && t <= scores.m, "dependent {} out of 1..={}", t, scores.m);
    let column: Vec<f64> = (0..=scores.m).map(|k| scores.edge_score(k, t)).collect();
    softmax(&column)
}

/// Softmax over labels for the edge `head -> dep`.
pub fn label_distribution(scores: &EdgeScores, head: usize, dep: usize) -> Vec<f64> {
    softmax(scores.label_row(head, dep))
}

/// `x1^T U x2 + W [x1; x2] + b` on plain vectors.
pub fn biaffine_value(x1: &[f64], x2: &[f64], u: &Tensor, w: &[f64], b: f64) -> f64 {
    let n = x1.len();
    let mut s = b;
    for i in 0..n {
        for j in 0..x2.len() {
            s += x1[i] * u.get(i, j) * x2[j];
        }
    }
    s + x1.iter().chain(x2).zip(w).map(|(x, y)| x * y).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn setup(input: usize, dim: usize, labels: usize, seed: u64) -> (ParamStore, Biaffine) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = Biaffine::new(&mut store, "bi", input, dim, dim, labels, &mut rng).unwrap();
        (store, b)
    }

    fn elu(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            v.exp_m1()
        }
    }

    fn mlp_value(store: &ParamStore, layer: &Linear, x: &[f64]) -> Vec<f64> {
        let w = store.get(layer.weight);
        let b = store.get(layer.bias.unwrap());
        (0..layer.output).map(|j| elu(b.data()[j] + x.iter().enumerate().map(|(i, v)| v * w.get(i, j)).sum::<f64>())).collect()
    }

    #[test]
    fn constant_bias_only() {
        let (mut store, b) = setup(3, 4, 2, 1);
        *store.get_mut(b.edge_u) = Tensor::zeros(&[4, 4]);
        *store.get_mut(b.edge_w_head) = Tensor::zeros(&[4, 1]);
        *store.get_mut(b.edge_w_dep) = Tensor::zeros(&[4, 1]);
        *store.get_mut(b.edge_b) = Tensor::scalar(2.5);
        let mut g = Graph::new(&store);
        let s = g.constant(Tensor::uniform(&[3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
        let e = b.forward(&mut g, s, 0.0);
        assert!(g.value(e.edge).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn identity_u_is_dot_product() {
        let mut u = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            u.data_mut()[i * 4] = 1.0;
        }
        let x1 = [0.5, -1.0, 2.0];
        let x2 = [1.0, 3.0, 0.25];
        assert_eq!(biaffine_value(&x1, &x2, &u, &[0.0; 6], 0.0), 0.5 - 3.0 + 0.5);
    }

    #[test]
    fn edge_and_label_scores_match_matrix_oracle() {
        let (store, b) = setup(4, 4, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let mut g = Graph::new(&store);
        let s = g.constant(states.clone());
        let e = b.forward(&mut g, s, 0.0);
        let scores = EdgeScores::compute(&b, &mut g, &e);

        let mut heads = vec![store.get(b.root).data().to_vec()];
        heads.extend((0..3).map(|r| states.row_slice(r).to_vec()));
        let mut w = store.get(b.edge_w_head).data().to_vec();
        w.extend_from_slice(store.get(b.edge_w_dep).data());
        let bias = store.get(b.edge_b).item();
        let lu = store.get(b.label_u);
        for k in 0..=3 {
            let xh = mlp_value(&store, &b.edge_head, &heads[k]);
            let lh = mlp_value(&store, &b.label_head, &heads[k]);
            for t in 1..=3 {
                let xd = mlp_value(&store, &b.edge_dep, states.row_slice(t - 1));
                let expected = biaffine_value(&xh, &xd, store.get(b.edge_u), &w, bias);
                assert!((scores.edge_score(k, t) - expected).abs() < 1e-12);

                let ld = mlp_value(&store, &b.label_dep, states.row_slice(t - 1));
                for l in 0..3 {
                    let ul = Tensor::from_rows(&(0..4).map(|i| (0..4).map(|j| lu.get(i, l * 4 + j)).collect()).collect::<Vec<_>>());
                    let expected = biaffine_value(&lh, &ld, &ul, &[0.0; 8], store.get(b.label_b).data()[l]);
                    assert!((scores.label_row(k, t)[l] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn head_distributions() {
        let m = 3;
        let mut edge = Tensor::zeros(&[m + 1, m]);
        let flat = EdgeScores { edge: edge.clone(), label: Tensor::zeros(&[(m + 1) * m, 1]), m };
        for p in head_distribution(&flat, 2) {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(label_distribution(&flat, 1, 2), vec![1.0]);
        edge.data_mut()[2 * m] = 50.0;
        let peaked = EdgeScores { edge, ..flat };
        assert!(head_distribution(&peaked, 1)[2] > 1.0 - 1e-9);
    }

    #[test]
    fn head_probs_rows_are_distributions() {
        let (store, b) = setup(4, 5, 2, 9);
        let mut g = Graph::new(&store);
        let s = g.constant(Tensor::uniform(&[5, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let e = b.forward(&mut g, s, 0.0);
        let p = b.head_probs(&mut g, &e);
        let t = g.value(p);
        assert_eq!(t.shape(), &[5, 6]);
        for r in 0..5 {
            assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
