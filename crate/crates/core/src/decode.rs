//! Node-sequence search, index-constrained maximum spanning arborescence,
//! and the full parse pipeline.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::amr::{AmrGraph, Record};
use crate::biaffine::EdgeScores;
use crate::embed::{EOS, RESERVED};
use crate::evalkit::{corpus_smatch, SmatchCounts, DEFAULT_RESTARTS};
use crate::model::{prepare_sentence, Example, Model, ModelError, Sentence};
use crate::numeric::{Graph, Tensor, Var};
use crate::par::{self, Execution};
use crate::prepost::{add_polarity, deanonymize, demote_constants, normalize_inverse, restore_senses, wikify, Linker, EMPTY_CONCEPT};
use crate::seq2seq::{is_forbidden, node_distribution, DecoderState, NodeDistribution, NodeOutcome, SourceContext, StepProbs};
use crate::transduce::{tree_to_graph, CopySource, IndexedTree, TransduceError, TreeEdge, TreeNode, ROOT_LABEL};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transduce(#[from] TransduceError),
}

/// A partial or complete node sequence.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub concepts: Vec<String>,
    pub indices: Vec<usize>,
    pub sources: Vec<CopySource>,
    /// Chosen outcome position at every step, EOS included.
    pub outcomes: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    pub state: DecoderState,
    /// Decoder output of the step that emitted each node.
    pub hidden: Vec<Var>,
    /// Summed source attention over emitted nodes.
    pub coverage: Vec<f64>,
}

impl Hypothesis {
    fn initial(state: DecoderState, source_len: usize) -> Self {
        Hypothesis {
            concepts: Vec::new(),
            indices: Vec::new(),
            sources: Vec::new(),
            outcomes: Vec::new(),
            log_prob: 0.0,
            finished: false,
            state,
            hidden: Vec::new(),
            coverage: vec![0.0; source_len],
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Ranking used by both searches: higher log-probability first, then the
/// lexicographically smaller concept sequence, then the earlier outcomes.
fn rank(a: (f64, &[String], &[usize]), b: (f64, &[String], &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(b.2))
}

struct Expansion {
    step: crate::seq2seq::DecoderStep,
    probs: StepProbs,
    dist: NodeDistribution,
}

type Observer<'a> = &'a mut dyn FnMut(&StepProbs, &NodeDistribution);

fn expand(model: &Model, g: &mut Graph, s: &Sentence, ctx: &SourceContext, hyp: &Hypothesis) -> Result<Expansion, DecodeError> {
    let feat = match hyp.concepts.len() {
        0 => model.bos_features(),
        n => model.node_features(s, &hyp.concepts[n - 1], hyp.indices[n - 1], &hyp.sources[n - 1], &hyp.sources[..n - 1]),
    };
    let x = model.embed_targets(g, &[feat], 0.0)?;
    let step = model.net.decoder.step(g, x, &hyp.state, ctx, model.channels(), 0.0);
    let probs = StepProbs::from_step(g, &step);
    let dist = node_distribution(&probs, &model.vocabs.target, s.source(), &hyp.concepts);
    Ok(Expansion { step, probs, dist })
}

fn is_eos(outcome: &NodeOutcome) -> bool {
    matches!(outcome, NodeOutcome::New(c) if c == RESERVED[EOS])
}

/// EOS adds no concept, so it sorts before any continuation.
fn tie_key(outcome: &NodeOutcome) -> &str {
    if is_eos(outcome) {
        ""
    } else {
        outcome.concept()
    }
}

fn extend(s: &Sentence, hyp: &Hypothesis, e: &Expansion, k: usize) -> Hypothesis {
    let (outcome, p) = &e.dist.outcomes[k];
    let mut next = Hypothesis {
        concepts: hyp.concepts.clone(),
        indices: hyp.indices.clone(),
        sources: hyp.sources.clone(),
        outcomes: hyp.outcomes.clone(),
        log_prob: hyp.log_prob + p.ln(),
        finished: false,
        state: e.step.state.clone(),
        hidden: hyp.hidden.clone(),
        coverage: hyp.coverage.clone(),
    };
    next.outcomes.push(k);
    if is_eos(outcome) {
        next.finished = true;
        return next;
    }
    let t = hyp.len() + 1;
    match outcome {
        NodeOutcome::New(c) => {
            next.indices.push(t);
            next.sources.push(match s.source().positions(c).first() {
                Some(&i) => CopySource::Source(i),
                None => CopySource::Vocab,
            });
        }
        NodeOutcome::Copy { antecedent, .. } => {
            next.indices.push(hyp.indices[antecedent - 1]);
            next.sources.push(CopySource::Target(*antecedent));
        }
    }
    next.concepts.push(outcome.concept().to_string());
    next.hidden.push(e.step.hidden);
    for (c, a) in next.coverage.iter_mut().zip(&e.probs.a_src) {
        *c += a;
    }
    next
}

fn allowed(outcome: &NodeOutcome, p: f64) -> bool {
    p > 0.0 && !is_forbidden(outcome)
}

/// Argmax over the collapsed outcome space at every step until EOS or
/// `max_len` nodes.
pub fn greedy_decode(
    model: &Model,
    g: &mut Graph,
    s: &Sentence,
    max_len: usize,
    mut observe: Option<Observer<'_>>,
) -> Result<Hypothesis, DecodeError> {
    let enc = model.encode(g, s, 0.0)?;
    let mut hyp = Hypothesis::initial(enc.state, s.tokens.len());
    while hyp.len() < max_len {
        let e = expand(model, g, s, &enc.context, &hyp)?;
        if let Some(f) = observe.as_mut() {
            f(&e.probs, &e.dist);
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, (outcome, p)) in e.dist.outcomes.iter().enumerate() {
            if !allowed(outcome, *p) {
                continue;
            }
            let score = hyp.log_prob + p.ln();
            let better = match best {
                None => true,
                Some((b, bs)) => score > bs || (score == bs && tie_key(outcome) < tie_key(&e.dist.outcomes[b].0)),
            };
            if better {
                best = Some((k, score));
            }
        }
        let Some((k, _)) = best else { break };
        hyp = extend(s, &hyp, &e, k);
        if hyp.finished {
            break;
        }
    }
    Ok(hyp)
}

/// Log-prob, concepts, outcome positions, parent hypothesis and outcome.
type Candidate = (f64, Vec<String>, Vec<usize>, usize, usize);

/// Beam search over the collapsed outcome space. Finished hypotheses
/// occupy beam slots; the search stops once no live hypothesis can beat
/// the best finished one.
pub fn beam_decode(model: &Model, g: &mut Graph, s: &Sentence, beam: usize, max_len: usize) -> Result<Hypothesis, DecodeError> {
    let beam = beam.max(1);
    let enc = model.encode(g, s, 0.0)?;
    let mut live = vec![Hypothesis::initial(enc.state, s.tokens.len())];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut expansions = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let e = expand(model, g, s, &enc.context, hyp)?;
            for (k, (outcome, p)) in e.dist.outcomes.iter().enumerate() {
                if allowed(outcome, *p) {
                    let mut concepts = hyp.concepts.clone();
                    if !is_eos(outcome) {
                        concepts.push(outcome.concept().to_string());
                    }
                    let mut outcomes = hyp.outcomes.clone();
                    outcomes.push(k);
                    candidates.push((hyp.log_prob + p.ln(), concepts, outcomes, h, k));
                }
            }
            expansions.push(e);
        }
        candidates.sort_by(|a, b| rank((a.0, &a.1, &a.2), (b.0, &b.1, &b.2)));
        candidates.truncate(beam);
        let mut next = Vec::new();
        for (_, _, _, h, k) in candidates {
            let hyp = extend(s, &live[h], &expansions[h], k);
            if hyp.finished {
                done.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        let best_done = done.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_done >= best_live {
            break;
        }
    }
    done.extend(live);
    done.sort_by(|a, b| rank((a.log_prob, &a.concepts, &a.outcomes), (b.log_prob, &b.concepts, &b.outcomes)));
    Ok(done.into_iter().next().expect("the beam always holds a hypothesis"))
}

/// Maximum spanning arborescence rooted at node 0 of the dense
/// `scores[head][dep]` matrix; `-inf` marks a missing edge. `None` when
/// some node has no feasible head.
pub fn chu_liu_edmonds(scores: &[Vec<f64>]) -> Option<Vec<usize>> {
    let n = scores.len();
    let mut head = vec![0usize; n];
    for v in 1..n {
        let mut best: Option<usize> = None;
        for h in 0..n {
            if h != v && scores[h][v] > f64::NEG_INFINITY && best.is_none_or(|b| scores[h][v] > scores[b][v]) {
                best = Some(h);
            }
        }
        head[v] = best?;
    }

    let Some(cycle) = find_cycle(&head) else {
        return Some(head);
    };
    let in_cycle: HashSet<usize> = cycle.iter().copied().collect();
    let mut map = vec![usize::MAX; n];
    let mut back = Vec::new();
    for v in 0..n {
        if !in_cycle.contains(&v) {
            map[v] = back.len();
            back.push(v);
        }
    }
    let c = back.len();
    for &v in &cycle {
        map[v] = c;
    }
    let k = c + 1;
    let mut contracted = vec![vec![f64::NEG_INFINITY; k]; k];
    let mut enter = vec![usize::MAX; k];
    let mut leave = vec![usize::MAX; k];
    for u in 0..n {
        for v in 1..n {
            if u == v || scores[u][v] == f64::NEG_INFINITY {
                continue;
            }
            let (cu, cv) = (in_cycle.contains(&u), in_cycle.contains(&v));
            match (cu, cv) {
                (false, true) => {
                    let val = scores[u][v] - scores[head[v]][v];
                    if val > contracted[map[u]][c] || enter[map[u]] == usize::MAX {
                        contracted[map[u]][c] = val;
                        enter[map[u]] = v;
                    }
                }
                (true, false) => {
                    if scores[u][v] > contracted[c][map[v]] {
                        contracted[c][map[v]] = scores[u][v];
                        leave[map[v]] = u;
                    }
                }
                (false, false) => contracted[map[u]][map[v]] = scores[u][v],
                (true, true) => {}
            }
        }
    }
    let sub = chu_liu_edmonds(&contracted)?;
    let mut result = head;
    for (nv, &v) in back.iter().enumerate().skip(1) {
        result[v] = if sub[nv] == c { leave[nv] } else { back[sub[nv]] };
    }
    let from = sub[c];
    result[enter[from]] = back[from];
    Some(result)
}

fn find_cycle(head: &[usize]) -> Option<Vec<usize>> {
    let n = head.len();
    let mut color = vec![0u8; n];
    color[0] = 2;
    for start in 1..n {
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = head[v];
        }
        if color[v] == 1 {
            let pos = path.iter().position(|&x| x == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            color[p] = 2;
        }
    }
    None
}

/// Dense score matrix over the dummy root and nodes `1..=m`, with edges
/// between same-index nodes removed.
pub fn constrained_scores(edge: impl Fn(usize, usize) -> f64, indices: &[usize]) -> Vec<Vec<f64>> {
    let m = indices.len();
    let index = |i: usize| if i == 0 { 0 } else { indices[i - 1] };
    let mut s = vec![vec![f64::NEG_INFINITY; m + 1]; m + 1];
    for h in 0..=m {
        for d in 1..=m {
            if h != d && index(h) != index(d) {
                s[h][d] = edge(h, d);
            }
        }
    }
    s
}

/// Sum of `score(head[t], t)` over `t` in `1..=m`.
pub fn tree_score(edge: impl Fn(usize, usize) -> f64, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(t, &h)| edge(h, t + 1)).sum()
}

/// Index-constrained maximum spanning arborescence. Returns the head of
/// every node `1..=m` (0 is the dummy root); several nodes may attach to
/// the root.
pub fn constrained_mst(edge: impl Fn(usize, usize) -> f64, indices: &[usize]) -> Vec<usize> {
    let s = constrained_scores(edge, indices);
    // Root edges exist for every node, so the search is always feasible.
    chu_liu_edmonds(&s).expect("root reaches every node")[1..].to_vec()
}

/// Like [`constrained_mst`] but with exactly one node attached to the
/// root: the best tree over every choice of root child, earliest on ties.
/// Falls back to the unrestricted tree when no single-root tree exists.
pub fn constrained_mst_single_root(edge: impl Fn(usize, usize) -> f64, indices: &[usize]) -> Vec<usize> {
    let full = constrained_scores(&edge, indices);
    let m = indices.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=m {
        let mut s = full.clone();
        for (d, cell) in s[0].iter_mut().enumerate().skip(1) {
            if d != r {
                *cell = f64::NEG_INFINITY;
            }
        }
        if let Some(heads) = chu_liu_edmonds(&s) {
            let heads = heads[1..].to_vec();
            let score = tree_score(&edge, &heads);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, heads));
            }
        }
    }
    match best {
        Some((_, heads)) => heads,
        None => chu_liu_edmonds(&full).expect("root reaches every node")[1..].to_vec(),
    }
}

/// Nodes, heads and labels of one parsed sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub concepts: Vec<String>,
    pub indices: Vec<usize>,
    pub sources: Vec<CopySource>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    pub log_prob: f64,
}

impl Prediction {
    pub fn tree(&self) -> IndexedTree {
        let mut tree = IndexedTree {
            nodes: self
                .concepts
                .iter()
                .zip(&self.indices)
                .map(|(c, &index)| TreeNode { concept: c.clone(), index, attributes: Vec::new() })
                .collect(),
            edges: Vec::new(),
            root: 0,
        };
        for (t, &h) in self.heads.iter().enumerate() {
            if h == 0 {
                tree.root = t;
            } else {
                tree.edges.push(TreeEdge { parent: h - 1, label: self.labels[t].clone(), child: t });
            }
        }
        tree
    }
}

fn best_label(model: &Model, row: &[f64]) -> String {
    let root = model.vocabs.labels.get(ROOT_LABEL);
    let mut best: Option<usize> = None;
    for (id, &score) in row.iter().enumerate().skip(RESERVED.len()) {
        if Some(id) != root && best.is_none_or(|b| score > row[b]) {
            best = Some(id);
        }
    }
    best.map_or_else(|| "ARG1".to_string(), |id| model.vocabs.labels.token(id).to_string())
}

/// Heads from the single-root constrained tree, labels by per-edge argmax.
pub fn predict_edges(model: &Model, g: &mut Graph, hyp: &Hypothesis) -> (Vec<usize>, Vec<String>) {
    let states = g.concat_rows(&hyp.hidden);
    let e = model.net.biaffine.forward(g, states, 0.0);
    let scores = EdgeScores::compute(&model.net.biaffine, g, &e);
    let heads = constrained_mst_single_root(|h, d| scores.edge_score(h, d), &hyp.indices);
    let labels = heads
        .iter()
        .enumerate()
        .map(|(t, &h)| if h == 0 { ROOT_LABEL.to_string() } else { best_label(model, scores.label_row(h, t + 1)) })
        .collect();
    (heads, labels)
}

/// Decodes nodes (greedy when `beam` is 1) and predicts edges. `None` for
/// an empty sentence or an empty node sequence.
pub fn predict(model: &Model, s: &Sentence, beam: usize) -> Result<Option<Prediction>, DecodeError> {
    if s.is_empty() {
        return Ok(None);
    }
    let mut g = Graph::new(&model.store);
    let max_len = model.config.max_len;
    let mut hyp = if beam <= 1 { greedy_decode(model, &mut g, s, max_len, None)? } else { beam_decode(model, &mut g, s, beam, max_len)? };
    if hyp.is_empty() {
        return Ok(None);
    }
    // Copies of a single node can only be one node.
    if hyp.indices.iter().all(|&d| d == hyp.indices[0]) {
        hyp.concepts.truncate(1);
        hyp.indices.truncate(1);
        hyp.sources.truncate(1);
        hyp.hidden.truncate(1);
    }
    let (heads, labels) = predict_edges(model, &mut g, &hyp);
    Ok(Some(Prediction { concepts: hyp.concepts, indices: hyp.indices, sources: hyp.sources, heads, labels, log_prob: hyp.log_prob }))
}

/// Single-node graph used when nothing could be parsed.
pub fn empty_graph() -> AmrGraph {
    let mut g = AmrGraph::new("n1");
    g.add_node("n1", EMPTY_CONCEPT);
    g
}

/// Postprocessing of a predicted tree: merge copies, restore inverse
/// roles, constants, entities and senses, then add polarity.
pub fn postprocess(model: &Model, s: &Sentence, tree: &IndexedTree, linker: Option<&dyn Linker>) -> Result<AmrGraph, DecodeError> {
    let g = tree_to_graph(tree)?;
    let g = demote_constants(&normalize_inverse(&g));
    let (g, _) = deanonymize(&g, &s.map, &model.entities);
    let g = restore_senses(&g, &model.senses);
    let (g, _) = add_polarity(&s.tokens, Some(&s.lemmas), &g);
    Ok(match linker {
        Some(l) => wikify(&g, l),
        None => g,
    })
}

/// One parse result.
#[derive(Clone, Debug)]
pub struct Parsed {
    pub graph: AmrGraph,
    pub prediction: Option<Prediction>,
    /// True when the empty fallback graph was produced.
    pub fallback: bool,
}

/// Full pipeline on a preprocessed sentence. Never fails: anything that
/// cannot be turned into a valid graph yields the flagged empty graph.
pub fn parse_sentence(model: &Model, s: &Sentence, beam: usize) -> Parsed {
    let prediction = predict(model, s, beam).ok().flatten();
    let graph =
        prediction.as_ref().and_then(|p| postprocess(model, s, &p.tree(), None).ok()).filter(|g| crate::amr::validate_graph(g).is_empty());
    match graph {
        Some(graph) => Parsed { graph, prediction, fallback: false },
        None => Parsed { graph: empty_graph(), prediction, fallback: true },
    }
}

/// Preprocesses and parses raw records, in input order.
pub fn parse_records(
    model: &Model,
    records: &[Record],
    contextual: Option<&HashMap<String, Tensor>>,
    beam: usize,
    mode: Execution,
) -> Result<Vec<(Sentence, Parsed)>, DecodeError> {
    let sentences =
        records.iter().map(|r| prepare_sentence(r, &model.entities, contextual, &model.config)).collect::<Result<Vec<_>, _>>()?;
    let parsed = par::map(mode, &sentences, |_, s| parse_sentence(model, s, beam));
    Ok(sentences.into_iter().zip(parsed).collect())
}

/// Corpus Smatch of parsed examples against their references.
pub fn evaluate(model: &Model, examples: &[Example], beam: usize, mode: Execution) -> SmatchCounts {
    let system = par::map(mode, examples, |_, e| parse_sentence(model, &e.sentence, beam).graph);
    let reference: Vec<AmrGraph> = examples.iter().map(|e| e.reference.clone()).collect();
    corpus_smatch(&system, &reference, DEFAULT_RESTARTS, model.config.seed, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(edge: &dyn Fn(usize, usize) -> f64, indices: &[usize]) -> f64 {
        let m = indices.len();
        let mut heads = vec![0usize; m];
        let mut best = f64::NEG_INFINITY;
        loop {
            let ok = (0..m).all(|t| {
                let h = heads[t];
                h != t + 1 && (h == 0 || indices[h - 1] != indices[t])
            }) && (0..m).all(|t| {
                let mut v = t + 1;
                for _ in 0..=m {
                    if v == 0 {
                        return true;
                    }
                    v = heads[v - 1];
                }
                false
            });
            if ok {
                best = best.max(tree_score(edge, &heads));
            }
            let mut k = 0;
            while k < m && heads[k] == m {
                heads[k] = 0;
                k += 1;
            }
            if k == m {
                return best;
            }
            heads[k] += 1;
        }
    }

    #[test]
    fn single_node_attaches_to_root() {
        assert_eq!(constrained_mst(|_, _| 1.0, &[1]), vec![0]);
    }

    #[test]
    fn same_index_nodes_are_never_joined() {
        // Node 3 copies node 1; the only strong edges join them.
        let edge = |h: usize, d: usize| match (h, d) {
            (1, 3) | (3, 1) => 10.0,
            (0, 1) => 1.0,
            _ => 0.0,
        };
        let heads = constrained_mst(edge, &[1, 2, 1]);
        assert_ne!(heads[2], 1);
        assert_ne!(heads[0], 3);
    }

    #[test]
    fn contraction_matches_brute_force() {
        let table = [[0.0, 5.0, 1.0, 1.0], [0.0, 0.0, 11.0, 4.0], [0.0, 10.0, 0.0, 5.0], [0.0, 9.0, 8.0, 0.0]];
        let edge = |h: usize, d: usize| table[h][d];
        let heads = constrained_mst(edge, &[1, 2, 3]);
        assert_eq!(tree_score(edge, &heads), 21.0);
        assert_eq!(brute_force(&edge, &[1, 2, 3]), 21.0);
    }

    #[test]
    fn single_root_tree_has_one_root_child() {
        let edge = |h: usize, _d: usize| if h == 0 { 5.0 } else { 1.0 };
        let heads = constrained_mst_single_root(edge, &[1, 2, 3]);
        assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
        assert_eq!(constrained_mst(edge, &[1, 2, 3]), vec![0, 0, 0]);
    }
}
