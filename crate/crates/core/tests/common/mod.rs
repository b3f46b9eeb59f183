//! Fixture loading and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use s2g::amr::{read_corpus, AmrGraph, Record};
use s2g::config::Config;
use s2g::model::{learn_entities, prepare_training, Example, Model};
use s2g::par::Execution;
use s2g::train::{fit, FitOutcome};

pub fn data(name: &str) -> String {
    let path = format!("{}/tests/data/{}", env!("CARGO_MANIFEST_DIR"), name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {}", path, e))
}

pub fn records(name: &str) -> Vec<Record> {
    read_corpus(&data(name)).expect("fixture parses")
}

pub fn graphs(name: &str) -> Vec<AmrGraph> {
    records(name).into_iter().map(|r| r.graph.expect("fixture graph")).collect()
}

/// Small dimensions for fast tests; `extra` lines override.
pub fn tiny_config(extra: &str) -> Config {
    Config::from_text(&format!(
        "glove.dim = 8\npos.dim = 4\nanonymization.dim = 2\nindex.dim = 4\nindex.max = 30\n\
         charcnn.char_dim = 4\ncharcnn.num_filters = 6\nencoder.hidden_size = 8\ndecoder.hidden_size = 16\n\
         encoder.num_layers = 1\ndecoder.num_layers = 1\nbiaffine.edge_hidden_size = 8\n\
         biaffine.label_hidden_size = 4\ndecoder.max_len = 12\n{}",
        extra
    ))
    .expect("valid config")
}

/// Default training settings with hidden size 64 and small embeddings.
pub fn overfit_config(extra: &str) -> Config {
    Config::from_text(&format!(
        "glove.dim = 32\npos.dim = 8\nanonymization.dim = 4\nindex.dim = 8\nindex.max = 30\n\
         charcnn.char_dim = 8\ncharcnn.num_filters = 16\nencoder.hidden_size = 32\ndecoder.hidden_size = 64\n\
         encoder.num_layers = 1\ndecoder.num_layers = 1\nbiaffine.edge_hidden_size = 32\n\
         biaffine.label_hidden_size = 16\nepochs = 300\npatience = 0\ndecoder.max_len = 20\n{}",
        extra
    ))
    .expect("valid config")
}

pub fn build_model(records: &[Record], config: Config) -> (Model, Vec<Example>) {
    let prepared = prepare_training(records, None, &config).expect("preprocessing");
    assert!(prepared.skipped.is_empty(), "skipped {:?}", prepared.skipped);
    let model = Model::new(config, &prepared.examples, None, learn_entities(records)).expect("model");
    (model, prepared.examples)
}

/// Trains on `records` with the training set as dev set.
pub fn train_on(records: &[Record], config: Config) -> (FitOutcome, Vec<Example>) {
    let (model, examples) = build_model(records, config);
    let out = fit(model, &examples, &examples, Execution::Sequential, &mut |_| {}).expect("training");
    (out, examples)
}

/// Exhaustive index-respecting arborescence search over `heads[t]` in
/// `0..=m`; returns the best total score.
pub fn brute_force_mst(edge: &dyn Fn(usize, usize) -> f64, indices: &[usize]) -> f64 {
    let m = indices.len();
    let mut heads = vec![0usize; m];
    let mut best = f64::NEG_INFINITY;
    loop {
        if is_arborescence(&heads, indices) {
            let total: f64 = heads.iter().enumerate().map(|(t, &h)| edge(h, t + 1)).sum();
            best = best.max(total);
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

/// Every node reaches the root, no self heads, no same-index edges.
pub fn is_arborescence(heads: &[usize], indices: &[usize]) -> bool {
    let m = heads.len();
    for t in 1..=m {
        let h = heads[t - 1];
        if h == t || (h > 0 && indices[h - 1] == indices[t - 1]) {
            return false;
        }
        let mut v = t;
        let mut steps = 0;
        while v != 0 {
            v = heads[v - 1];
            steps += 1;
            if steps > m {
                return false;
            }
        }
    }
    true
}

/// Index sequence obeying the copy rule: each position either starts a
/// new index (its own position) or repeats an earlier one.
pub fn random_indices<R: Rng>(rng: &mut R, m: usize, copy_rate: f64) -> Vec<usize> {
    let mut d = Vec::with_capacity(m);
    for t in 1..=m {
        if t > 1 && rng.gen::<f64>() < copy_rate {
            let j = rng.gen_range(0..t - 1);
            d.push(d[j]);
        } else {
            d.push(t);
        }
    }
    d
}

/// Smatch triples: lowercased instances, relations and attributes plus
/// `(TOP, root, concept)`, quotes stripped, duplicates removed.
pub fn triples(g: &AmrGraph) -> (Vec<String>, HashSet<(String, String, String)>) {
    let vars: Vec<String> = g.nodes.iter().map(|n| n.var.clone()).collect();
    let mut set = HashSet::new();
    for n in &g.nodes {
        set.insert(("instance".to_string(), n.var.clone(), n.concept.to_lowercase()));
    }
    for e in &g.edges {
        set.insert((e.label.to_lowercase(), e.source.clone(), format!("@{}", e.target)));
    }
    if let Some(c) = g.concept(&g.root) {
        set.insert(("TOP".to_string(), g.root.clone(), c.to_lowercase()));
    }
    for a in &g.attributes {
        set.insert((a.label.to_lowercase(), a.var.clone(), a.value.trim_matches('"').to_string()));
    }
    (vars, set)
}

/// Best matched-triple count over every injective variable mapping.
pub fn exhaustive_matches(g1: &AmrGraph, g2: &AmrGraph) -> usize {
    let (v1, t1) = triples(g1);
    let (v2, t2) = triples(g2);
    let mut best = 0;
    let mut map: Vec<Option<usize>> = vec![None; v1.len()];
    let mut used = vec![false; v2.len()];
    search(0, &v1, &v2, &t1, &t2, &mut map, &mut used, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn search(
    i: usize,
    v1: &[String],
    v2: &[String],
    t1: &HashSet<(String, String, String)>,
    t2: &HashSet<(String, String, String)>,
    map: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    best: &mut usize,
) {
    if i == v1.len() {
        let rename = |v: &str| -> Option<String> {
            let k = v1.iter().position(|x| x == v)?;
            map[k].map(|j| v2[j].clone())
        };
        let count = t1
            .iter()
            .filter(|(rel, a, b)| {
                let Some(a2) = rename(a) else { return false };
                let b2 = match b.strip_prefix('@') {
                    Some(var) => match rename(var) {
                        Some(x) => format!("@{}", x),
                        None => return false,
                    },
                    None => b.clone(),
                };
                t2.contains(&(rel.clone(), a2, b2))
            })
            .count();
        *best = (*best).max(count);
        return;
    }
    map[i] = None;
    search(i + 1, v1, v2, t1, t2, map, used, best);
    for j in 0..v2.len() {
        if !used[j] {
            used[j] = true;
            map[i] = Some(j);
            search(i + 1, v1, v2, t1, t2, map, used, best);
            used[j] = false;
        }
    }
    map[i] = None;
}

/// Random rooted DAG with up to `max_vars` variables over a small concept
/// and label pool, so that many mappings compete.
pub fn random_graph<R: Rng>(rng: &mut R, max_vars: usize, prefix: &str) -> AmrGraph {
    const CONCEPTS: [&str; 4] = ["want-01", "boy", "girl", "go-02"];
    const LABELS: [&str; 3] = ["ARG0", "ARG1", "mod"];
    let n = rng.gen_range(1..=max_vars);
    let var = |i: usize| format!("{}{}", prefix, i);
    let mut g = AmrGraph::new(var(0));
    for i in 0..n {
        g.add_node(var(i), CONCEPTS[rng.gen_range(0..CONCEPTS.len())]);
    }
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        g.add_edge(var(parent), LABELS[rng.gen_range(0..LABELS.len())], var(i));
    }
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (from, to) = (var(a.min(b)), var(a.max(b)));
        if a != b && !g.edges.iter().any(|e| e.source == from && e.target == to) {
            g.add_edge(from, LABELS[rng.gen_range(0..LABELS.len())], to);
        }
    }
    if rng.gen_bool(0.5) {
        g.add_attribute(var(rng.gen_range(0..n)), "polarity", "-");
    }
    g
}
