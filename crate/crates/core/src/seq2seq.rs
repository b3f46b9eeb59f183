//! BiLSTM encoder, input-feeding decoder with source and target attention,
//! and the three-way switch over generation and copying.

use std::collections::HashMap;

use rand::Rng;

use crate::embed::{Vocabulary, BOS, PAD};
use crate::numeric::{Graph, Linear, LstmCell, LstmState, NumericError, ParamId, ParamStore, Tensor, Var};
use crate::transduce::SourceTokens;

/// Stacked bidirectional LSTM.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
    pub hidden: usize,
}

/// Encoder outputs: top-layer states `[n, 2 * hidden]` and the final
/// forward/backward states of every layer.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub outputs: Var,
    pub finals: Vec<(LstmState, LstmState)>,
    pub len: usize,
}

impl Encoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for l in 0..layers {
            let width = if l == 0 { input } else { 2 * hidden };
            forward.push(LstmCell::new(store, &format!("{name}.l{l}.fwd"), width, hidden, rng)?);
            backward.push(LstmCell::new(store, &format!("{name}.l{l}.bwd"), width, hidden, rng)?);
        }
        Ok(Encoder { forward, backward, hidden })
    }

    /// Runs every layer over the `[n, input]` rows of `x`; `dropout` is
    /// applied to the outputs of each layer.
    pub fn encode(&self, g: &mut Graph, x: Var, dropout: f64) -> EncoderState {
        let n = g.value(x).rows();
        assert!(n > 0, "cannot encode an empty sequence");
        let mut input = x;
        let mut finals = Vec::with_capacity(self.forward.len());
        for (fwd, bwd) in self.forward.iter().zip(&self.backward) {
            let (f_rows, f_last) = run_direction(g, fwd, input, n, false);
            let (b_rows, b_last) = run_direction(g, bwd, input, n, true);
            let f = g.concat_rows(&f_rows);
            let b = g.concat_rows(&b_rows);
            let out = g.concat_cols(&[f, b]);
            input = g.dropout(out, dropout);
            finals.push((f_last, b_last));
        }
        EncoderState { outputs: input, finals, len: n }
    }
}

/// Hidden rows in original position order, plus the state after the last
/// processed position.
fn run_direction(g: &mut Graph, cell: &LstmCell, x: Var, n: usize, reverse: bool) -> (Vec<Var>, LstmState) {
    let xw = cell.project(g, x);
    let mut state = cell.zero_state(g);
    let mut rows = vec![state.h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for i in order {
        let xi = g.row(xw, i);
        state = cell.step_projected(g, xi, state);
        rows[i] = state.h;
    }
    (rows, state)
}

/// `e_i = v^T tanh(W k_i + U q + b)`
#[derive(Clone, Copy, Debug)]
pub struct Additive {
    pub key: Linear,
    pub query: Linear,
    pub v: ParamId,
}

impl Additive {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        key_dim: usize,
        query_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let key = Linear::new(store, &format!("{name}.key"), key_dim, hidden, false, rng)?;
        let query = Linear::new(store, &format!("{name}.query"), query_dim, hidden, true, rng)?;
        let v = store.add(format!("{name}.v"), Tensor::uniform(&[hidden, 1], crate::numeric::glorot_bound(hidden, 1), rng))?;
        Ok(Additive { key, query, v })
    }

    /// Projects key rows once so later steps only add the query.
    pub fn keys(&self, g: &mut Graph, keys: Var) -> Var {
        self.key.forward(g, keys)
    }

    /// Attention distribution `[1, rows]` over projected keys.
    pub fn attend(&self, g: &mut Graph, projected: Var, query: Var) -> Var {
        let q = self.query.forward(g, query);
        let z = g.add_row(projected, q);
        let z = g.tanh(z);
        let v = g.param(self.v);
        let e = g.matmul(z, v);
        let e = g.transpose(e);
        g.softmax_rows(e)
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    /// Attentional vector of the previous step.
    pub attentional: Var,
    /// Projected target-attention keys of all previous steps.
    pub target_keys: Vec<Var>,
    /// Attentional vectors of all previous steps.
    pub history: Vec<Var>,
}

/// Everything one decoder step produces.
#[derive(Clone, Debug)]
pub struct DecoderStep {
    pub state: DecoderState,
    /// Top-layer LSTM output.
    pub hidden: Var,
    pub attentional: Var,
    pub a_src: Var,
    pub a_tgt: Option<Var>,
    pub p_src: Option<Var>,
    pub p_tgt: Option<Var>,
    pub p_gen: Var,
    pub p_vocab: Var,
}

/// Precomputed per-sentence encoder context.
#[derive(Clone, Copy, Debug)]
pub struct SourceContext {
    pub states: Var,
    pub projected: Var,
    pub len: usize,
}

/// Which copy channels the switch may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channels {
    pub source_copy: bool,
    pub target_copy: bool,
}

impl Default for Channels {
    fn default() -> Self {
        Channels { source_copy: true, target_copy: true }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub cells: Vec<LstmCell>,
    pub source_attention: Additive,
    pub target_attention: Additive,
    pub combine: Linear,
    pub vocab: Linear,
    pub switch: Linear,
    pub hidden: usize,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        embed_dim: usize,
        source_dim: usize,
        hidden: usize,
        layers: usize,
        attention_hidden: usize,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let mut cells = Vec::new();
        for l in 0..layers {
            let width = if l == 0 { embed_dim + hidden } else { hidden };
            cells.push(LstmCell::new(store, &format!("{name}.l{l}"), width, hidden, rng)?);
        }
        Ok(Decoder {
            cells,
            source_attention: Additive::new(store, &format!("{name}.src_attn"), source_dim, hidden, attention_hidden, rng)?,
            target_attention: Additive::new(store, &format!("{name}.tgt_attn"), hidden, hidden, attention_hidden, rng)?,
            combine: Linear::new(store, &format!("{name}.combine"), source_dim + hidden, hidden, true, rng)?,
            vocab: Linear::new(store, &format!("{name}.vocab"), hidden, vocab_size, true, rng)?,
            switch: Linear::new(store, &format!("{name}.switch"), hidden, 3, true, rng)?,
            hidden,
        })
    }

    pub fn source_context(&self, g: &mut Graph, enc: &EncoderState) -> SourceContext {
        let projected = self.source_attention.keys(g, enc.outputs);
        SourceContext { states: enc.outputs, projected, len: enc.len }
    }

    /// Initial state: each layer starts from the concatenated final
    /// forward and backward encoder states of the same layer.
    pub fn initial_state(&self, g: &mut Graph, enc: &EncoderState) -> DecoderState {
        assert_eq!(enc.finals.len(), self.cells.len(), "encoder and decoder depth differ");
        let layers = enc
            .finals
            .iter()
            .map(|(f, b)| {
                let h = g.concat_cols(&[f.h, b.h]);
                let c = g.concat_cols(&[f.c, b.c]);
                assert_eq!(g.value(h).cols(), self.hidden, "decoder hidden must be twice the encoder's");
                LstmState { h, c }
            })
            .collect();
        let attentional = g.constant(Tensor::zeros(&[1, self.hidden]));
        DecoderState { layers, attentional, target_keys: Vec::new(), history: Vec::new() }
    }

    /// One input-feeding step on the `[1, embed_dim]` embedding of the
    /// previous node.
    pub fn step(
        &self,
        g: &mut Graph,
        input: Var,
        prev: &DecoderState,
        src: &SourceContext,
        channels: Channels,
        dropout: f64,
    ) -> DecoderStep {
        let mut x = g.concat_cols(&[input, prev.attentional]);
        let mut layers = Vec::with_capacity(self.cells.len());
        for (cell, state) in self.cells.iter().zip(&prev.layers) {
            let next = cell.step(g, x, *state);
            layers.push(next);
            x = next.h;
        }
        let hidden = g.dropout(x, dropout);

        let a_src = self.source_attention.attend(g, src.projected, hidden);
        let context = g.matmul(a_src, src.states);
        let both = g.concat_cols(&[context, hidden]);
        let attentional = self.combine.forward(g, both);
        let attentional = g.tanh(attentional);
        let attentional = g.dropout(attentional, dropout);

        let a_tgt = if prev.target_keys.is_empty() {
            None
        } else {
            let keys = g.concat_rows(&prev.target_keys);
            Some(self.target_attention.attend(g, keys, attentional))
        };

        let logits = self.vocab.forward(g, attentional);
        let p_vocab = g.softmax_rows(logits);

        let switch = self.switch.forward(g, attentional);
        let use_src = channels.source_copy;
        let use_tgt = channels.target_copy && a_tgt.is_some();
        let mut parts = Vec::with_capacity(3);
        if use_src {
            parts.push(g.slice_cols(switch, 0, 1));
        }
        if use_tgt {
            parts.push(g.slice_cols(switch, 1, 2));
        }
        parts.push(g.slice_cols(switch, 2, 3));
        let kept = g.concat_cols(&parts);
        let probs = g.softmax_rows(kept);
        let mut col = 0;
        let mut take = |g: &mut Graph, on: bool| {
            if on {
                col += 1;
                Some(g.slice_cols(probs, col - 1, col))
            } else {
                None
            }
        };
        let p_src = take(g, use_src);
        let p_tgt = take(g, use_tgt);
        let p_gen = take(g, true).expect("generation is always available");

        let key = self.target_attention.keys(g, attentional);
        let mut target_keys = prev.target_keys.clone();
        target_keys.push(key);
        let mut history = prev.history.clone();
        history.push(attentional);
        DecoderStep {
            state: DecoderState { layers, attentional, target_keys, history },
            hidden,
            attentional,
            a_src,
            a_tgt,
            p_src,
            p_tgt,
            p_gen,
            p_vocab,
        }
    }
}

/// Plain values of one step's distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProbs {
    pub p_src: f64,
    pub p_tgt: f64,
    pub p_gen: f64,
    pub a_src: Vec<f64>,
    pub a_tgt: Vec<f64>,
    pub p_vocab: Vec<f64>,
}

impl StepProbs {
    pub fn from_step(g: &Graph, step: &DecoderStep) -> Self {
        let scalar = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        StepProbs {
            p_src: scalar(step.p_src),
            p_tgt: scalar(step.p_tgt),
            p_gen: g.scalar(step.p_gen),
            a_src: g.value(step.a_src).data().to_vec(),
            a_tgt: step.a_tgt.map_or_else(Vec::new, |a| g.value(a).data().to_vec()),
            p_vocab: g.value(step.p_vocab).data().to_vec(),
        }
    }

    /// Sum over every individual outcome: vocabulary ids, source
    /// positions and antecedents.
    pub fn total_mass(&self) -> f64 {
        self.p_gen * self.p_vocab.iter().sum::<f64>()
            + self.p_src * self.a_src.iter().sum::<f64>()
            + self.p_tgt * self.a_tgt.iter().sum::<f64>()
    }
}

/// A collapsed decoding outcome.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeOutcome {
    /// A node with a fresh index.
    New(String),
    /// A copy of the earlier node at this 1-based position.
    Copy { concept: String, antecedent: usize },
}

impl NodeOutcome {
    pub fn concept(&self) -> &str {
        match self {
            NodeOutcome::New(c) => c,
            NodeOutcome::Copy { concept, .. } => concept,
        }
    }
}

/// Outcomes with their probabilities, in a fixed deterministic order:
/// vocabulary ids, then source-only forms by position, then copies by
/// first antecedent.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDistribution {
    pub outcomes: Vec<(NodeOutcome, f64)>,
}

impl NodeDistribution {
    pub fn total(&self) -> f64 {
        self.outcomes.iter().map(|(_, p)| p).sum()
    }

    pub fn probability(&self, outcome: &NodeOutcome) -> f64 {
        self.outcomes.iter().find(|(o, _)| o == outcome).map_or(0.0, |(_, p)| *p)
    }
}

/// Collapses a step's channels into per-node probabilities.
///
/// A new node `u` gets `p_gen * P_vocab(u) + p_src * sum of a_src over
/// source positions whose copy form is u`. A copy of concept `u` gets
/// `p_tgt * sum of a_tgt over earlier nodes labeled u` and points at the
/// antecedent with the largest attention, the earliest on ties.
pub fn node_distribution(probs: &StepProbs, vocab: &Vocabulary, source: SourceTokens<'_>, prior: &[String]) -> NodeDistribution {
    let mut outcomes: Vec<(NodeOutcome, f64)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (id, p) in probs.p_vocab.iter().enumerate() {
        let concept = vocab.token(id).to_string();
        slot.insert(concept.clone(), outcomes.len());
        outcomes.push((NodeOutcome::New(concept), probs.p_gen * p));
    }
    for (i, a) in probs.a_src.iter().enumerate() {
        let form = source.copy_form(i);
        match slot.get(&form) {
            Some(&k) => outcomes[k].1 += probs.p_src * a,
            None => {
                slot.insert(form.clone(), outcomes.len());
                outcomes.push((NodeOutcome::New(form), probs.p_src * a));
            }
        }
    }
    let mut copies: Vec<(String, usize, f64, f64)> = Vec::new();
    for (j, a) in probs.a_tgt.iter().enumerate() {
        let concept = &prior[j];
        match copies.iter_mut().find(|c| &c.0 == concept) {
            Some(c) => {
                c.2 += a;
                if *a > c.3 {
                    c.1 = j + 1;
                    c.3 = *a;
                }
            }
            None => copies.push((concept.clone(), j + 1, *a, *a)),
        }
    }
    for (concept, antecedent, mass, _) in copies {
        outcomes.push((NodeOutcome::Copy { concept, antecedent }, probs.p_tgt * mass));
    }
    NodeDistribution { outcomes }
}

/// Outcomes a decoder may never emit.
pub fn is_forbidden(outcome: &NodeOutcome) -> bool {
    matches!(outcome, NodeOutcome::New(c) if c == crate::embed::RESERVED[PAD] || c == crate::embed::RESERVED[BOS])
}

/// Per-step `sum_i min(a^t[i], cov^t[i])` with `cov^t` the sum of all
/// earlier attention rows.
pub fn coverage_loss(history: &[Vec<f64>]) -> Vec<f64> {
    let n = history.first().map_or(0, Vec::len);
    let mut cov = vec![0.0; n];
    history
        .iter()
        .map(|a| {
            let loss = a.iter().zip(&cov).map(|(x, c)| x.min(*c)).sum();
            for (c, x) in cov.iter_mut().zip(a) {
                *c += x;
            }
            loss
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_loss(&[vec![0.6, 0.4]])[0], 0.0);
        let repeated = coverage_loss(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(repeated[1], 1.0);
        let hand = coverage_loss(&[vec![0.6, 0.4], vec![0.3, 0.7]]);
        assert!((hand[1] - 0.7).abs() < 1e-15);
        let disjoint = coverage_loss(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(disjoint, vec![0.0, 0.0]);
    }

    fn tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn mixed_new_node_probability() {
        let vocab = Vocabulary::from_tokens(tokens(&["run", "dog"]));
        let mut p_vocab = vec![0.0; vocab.len()];
        p_vocab[vocab.id("run")] = 0.05;
        p_vocab[vocab.id("dog")] = 0.95;
        let probs = StepProbs { p_src: 0.2, p_tgt: 0.3, p_gen: 0.5, a_src: vec![0.1, 0.2, 0.3, 0.4], a_tgt: vec![1.0], p_vocab };
        let src = tokens(&["Run", "far", "away", "run"]);
        let prior = tokens(&["dog"]);
        let d = node_distribution(&probs, &vocab, SourceTokens::new(&src, None), &prior);
        let p = d.probability(&NodeOutcome::New("run".into()));
        assert!((p - 0.125).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!((probs.total_mass() - 1.0).abs() < 1e-12);
        let copy = NodeOutcome::Copy { concept: "dog".into(), antecedent: 1 };
        assert!((d.probability(&copy) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn degenerate_switches() {
        let vocab = Vocabulary::from_tokens(tokens(&["a", "b"]));
        let p_vocab = vec![0.0, 0.1, 0.0, 0.0, 0.3, 0.6];
        let probs = StepProbs { p_src: 0.0, p_tgt: 0.0, p_gen: 1.0, a_src: vec![1.0], a_tgt: vec![], p_vocab: p_vocab.clone() };
        let src = tokens(&["z"]);
        let d = node_distribution(&probs, &vocab, SourceTokens::new(&src, None), &[]);
        for (id, p) in p_vocab.iter().enumerate() {
            assert_eq!(d.probability(&NodeOutcome::New(vocab.token(id).into())), *p);
        }

        let probs = StepProbs { p_src: 0.0, p_tgt: 1.0, p_gen: 0.0, a_src: vec![1.0], a_tgt: vec![0.0, 1.0, 0.0], p_vocab };
        let prior = tokens(&["a", "b", "a"]);
        let d = node_distribution(&probs, &vocab, SourceTokens::new(&src, None), &prior);
        let copy_b = NodeOutcome::Copy { concept: "b".into(), antecedent: 2 };
        assert_eq!(d.probability(&copy_b), 1.0);
    }

    #[test]
    fn copy_points_at_heaviest_antecedent() {
        let vocab = Vocabulary::default();
        let probs = StepProbs { p_src: 0.0, p_tgt: 1.0, p_gen: 0.0, a_src: vec![1.0], a_tgt: vec![0.2, 0.5, 0.3], p_vocab: vec![0.25; 4] };
        let src = tokens(&["q"]);
        let prior = tokens(&["x", "x", "y"]);
        let d = node_distribution(&probs, &vocab, SourceTokens::new(&src, None), &prior);
        let x = NodeOutcome::Copy { concept: "x".into(), antecedent: 2 };
        assert!((d.probability(&x) - 0.7).abs() < 1e-12);
    }

    fn small_model(store: &mut ParamStore) -> (Encoder, Decoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::new(store, "enc", 3, 2, 2, &mut rng).unwrap();
        let dec = Decoder::new(store, "dec", 3, 4, 4, 2, 5, 7, &mut rng).unwrap();
        (enc, dec)
    }

    #[test]
    fn single_token_encoding_concatenates_directions() {
        let mut store = ParamStore::new();
        let (enc, _) = small_model(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![0.3, -0.2, 0.9]));
        let s = enc.encode(&mut g, x, 0.0);
        let out = g.value(s.outputs).data().to_vec();
        let (f, b) = s.finals[1];
        let mut expected = g.value(f.h).data().to_vec();
        expected.extend_from_slice(g.value(b.h).data());
        assert_eq!(out, expected);
    }

    #[test]
    fn reversed_input_swaps_directions() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = LstmCell::new(&mut store, "c", 3, 2, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let xr = Tensor::from_rows(&(0..4).rev().map(|i| x.row_slice(i).to_vec()).collect::<Vec<_>>());
        let mut g = Graph::new(&store);
        let xv = g.constant(x);
        let xrv = g.constant(xr);
        let (bwd, _) = run_direction(&mut g, &cell, xv, 4, true);
        let (fwd_rev, _) = run_direction(&mut g, &cell, xrv, 4, false);
        for i in 0..4 {
            let a = g.value(bwd[i]).data().to_vec();
            let b = g.value(fwd_rev[3 - i]).data().to_vec();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_step_has_no_target_channel() {
        let mut store = ParamStore::new();
        let (enc, dec) = small_model(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.4, 0.5, 0.0]]));
        let s = enc.encode(&mut g, x, 0.0);
        let ctx = dec.source_context(&mut g, &s);
        let st = dec.initial_state(&mut g, &s);
        let input = g.constant(Tensor::row(vec![0.5, 0.5, 0.5]));
        let step = dec.step(&mut g, input, &st, &ctx, Channels::default(), 0.0);
        assert!(step.a_tgt.is_none() && step.p_tgt.is_none());
        let p = StepProbs::from_step(&g, &step);
        assert!((p.p_src + p.p_gen - 1.0).abs() < 1e-12);
        let step2 = dec.step(&mut g, input, &step.state, &ctx, Channels::default(), 0.0);
        let p2 = StepProbs::from_step(&g, &step2);
        assert_eq!(p2.a_tgt.len(), 1);
        assert!((p2.p_src + p2.p_tgt + p2.p_gen - 1.0).abs() < 1e-12);
        assert!((p2.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_keys_give_uniform_attention() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let att = Additive::new(&mut store, "a", 2, 2, 3, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let keys = g.constant(Tensor::from_rows(&vec![vec![0.7, -0.1]; 5]));
        let pk = att.keys(&mut g, keys);
        let q = g.constant(Tensor::row(vec![0.2, 0.9]));
        let a = att.attend(&mut g, pk, q);
        for v in g.value(a).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn additive_attention_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let att = Additive::new(&mut store, "a", 2, 2, 2, &mut rng).unwrap();
        *store.get_mut(att.key.weight) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        *store.get_mut(att.query.weight) = Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]);
        *store.get_mut(att.query.bias.unwrap()) = Tensor::row(vec![0.1, -0.1]);
        *store.get_mut(att.v) = Tensor::matrix(2, 1, vec![1.0, -1.0]);
        let h = [[0.2, 0.4], [-0.3, 0.1]];
        let s = [0.6, -0.2];
        let logit = |k: &[f64; 2]| {
            let z0 = (k[0] + 0.5 * s[0] + 0.1).tanh();
            let z1 = (2.0 * k[1] + 0.5 * s[1] - 0.1).tanh();
            z0 - z1
        };
        let (e0, e1) = (logit(&h[0]), logit(&h[1]));
        let expected0 = e0.exp() / (e0.exp() + e1.exp());

        let mut g = Graph::new(&store);
        let keys = g.constant(Tensor::from_rows(&[h[0].to_vec(), h[1].to_vec()]));
        let pk = att.keys(&mut g, keys);
        let q = g.constant(Tensor::row(s.to_vec()));
        let a = att.attend(&mut g, pk, q);
        assert!((g.value(a).data()[0] - expected0).abs() < 1e-14);
    }
}
