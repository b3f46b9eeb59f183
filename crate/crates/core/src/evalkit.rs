//! Smatch scoring and node-source diagnostics.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::amr::AmrGraph;
use crate::par::{self, Execution};
use crate::transduce::SourceKind;

/// Restarts used when none are given.
pub const DEFAULT_RESTARTS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("exact matching needs at most {limit} variables on the smaller side, got {got}")]
    TooLarge { limit: usize, got: usize },
    #[error("exact matching would enumerate {0} mappings")]
    TooManyMappings(u128),
}

/// Instance, relation, and attribute triples of a graph.
///
/// Variables are numbered by node order. The root contributes an
/// attribute triple `(TOP, root, concept)`; quotes are stripped from
/// constants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleSet {
    pub vars: Vec<String>,
    pub instances: Vec<(usize, String)>,
    pub relations: Vec<(String, usize, usize)>,
    pub attributes: Vec<(String, usize, String)>,
}

impl TripleSet {
    pub fn from_graph(g: &AmrGraph) -> Self {
        let vars: Vec<String> = g.nodes.iter().map(|n| n.var.clone()).collect();
        let id: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let mut instances = Vec::new();
        let mut seen = HashSet::new();
        for (i, n) in g.nodes.iter().enumerate() {
            if seen.insert((i, n.concept.to_lowercase())) {
                instances.push((i, n.concept.to_lowercase()));
            }
        }
        let mut relations = Vec::new();
        let mut seen = HashSet::new();
        for e in &g.edges {
            let (Some(&s), Some(&t)) = (id.get(e.source.as_str()), id.get(e.target.as_str())) else {
                continue;
            };
            let key = (e.label.to_lowercase(), s, t);
            if seen.insert(key.clone()) {
                relations.push(key);
            }
        }
        let mut attributes = Vec::new();
        let mut seen = HashSet::new();
        if let (Some(&r), Some(c)) = (id.get(g.root.as_str()), g.concept(&g.root)) {
            seen.insert(("TOP".to_string(), r, c.to_lowercase()));
            attributes.push(("TOP".to_string(), r, c.to_lowercase()));
        }
        for a in &g.attributes {
            let Some(&v) = id.get(a.var.as_str()) else {
                continue;
            };
            let value = a.value.trim_matches('"').to_string();
            let key = (a.label.to_lowercase(), v, value);
            if seen.insert(key.clone()) {
                attributes.push(key);
            }
        }
        TripleSet { vars, instances, relations, attributes }
    }

    pub fn len(&self) -> usize {
        self.instances.len() + self.relations.len() + self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Same-label relation endpoints (j, k) in the second graph.
type PairSet = HashSet<(usize, usize)>;

/// Precomputed match tables between two triple sets.
struct Matcher {
    n1: usize,
    n2: usize,
    /// unary[i * n2 + j]: instance and attribute triples of var i in the
    /// first graph matched when i maps to j.
    unary: Vec<u32>,
    /// For each relation of the first graph, the (j, k) pairs of same-label
    /// relations in the second.
    relations: Vec<(usize, usize, PairSet)>,
    total1: usize,
    total2: usize,
}

impl Matcher {
    fn new(a: &TripleSet, b: &TripleSet) -> Self {
        let (n1, n2) = (a.vars.len(), b.vars.len());
        let mut unary = vec![0u32; n1 * n2];
        let mut inst_b: HashMap<&str, Vec<usize>> = HashMap::new();
        for (j, c) in &b.instances {
            inst_b.entry(c).or_default().push(*j);
        }
        for (i, c) in &a.instances {
            for &j in inst_b.get(c.as_str()).into_iter().flatten() {
                unary[i * n2 + j] += 1;
            }
        }
        let mut attr_b: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
        for (l, j, v) in &b.attributes {
            attr_b.entry((l, v)).or_default().push(*j);
        }
        for (l, i, v) in &a.attributes {
            for &j in attr_b.get(&(l.as_str(), v.as_str())).into_iter().flatten() {
                unary[i * n2 + j] += 1;
            }
        }
        let mut rel_b: HashMap<&str, HashSet<(usize, usize)>> = HashMap::new();
        for (l, j, k) in &b.relations {
            rel_b.entry(l).or_default().insert((*j, *k));
        }
        let relations = a.relations.iter().map(|(l, s, t)| (*s, *t, rel_b.get(l.as_str()).cloned().unwrap_or_default())).collect();
        Matcher { n1, n2, unary, relations, total1: a.len(), total2: b.len() }
    }

    fn score(&self, mapping: &[Option<usize>]) -> usize {
        let mut s = 0usize;
        for (i, m) in mapping.iter().enumerate() {
            if let Some(j) = m {
                s += self.unary[i * self.n2 + j] as usize;
            }
        }
        for (a, b, pairs) in &self.relations {
            if let (Some(j), Some(k)) = (mapping[*a], mapping[*b]) {
                if pairs.contains(&(j, k)) {
                    s += 1;
                }
            }
        }
        s
    }

    fn greedy_start(&self) -> Vec<Option<usize>> {
        let mut used = vec![false; self.n2];
        (0..self.n1)
            .map(|i| {
                let best = (0..self.n2)
                    .filter(|&j| !used[j] && self.unary[i * self.n2 + j] > 0)
                    .max_by_key(|&j| (self.unary[i * self.n2 + j], std::cmp::Reverse(j)));
                if let Some(j) = best {
                    used[j] = true;
                }
                best
            })
            .collect()
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut targets: Vec<Option<usize>> = (0..self.n2).map(Some).collect();
        while targets.len() < self.n1 {
            targets.push(None);
        }
        targets.shuffle(rng);
        targets.truncate(self.n1);
        targets
    }

    /// Reassignments of one variable to a free target and swaps of two.
    fn neighbours(&self, mapping: &[Option<usize>]) -> Vec<Vec<Option<usize>>> {
        let mut free = vec![true; self.n2];
        for j in mapping.iter().flatten() {
            free[*j] = false;
        }
        let mut out = Vec::new();
        for i in 0..self.n1 {
            for j in (0..self.n2).filter(|&j| free[j]) {
                let mut cand = mapping.to_vec();
                cand[i] = Some(j);
                out.push(cand);
            }
            for k in (i + 1)..self.n1 {
                if mapping[i] != mapping[k] {
                    let mut cand = mapping.to_vec();
                    cand.swap(i, k);
                    out.push(cand);
                }
            }
        }
        out
    }

    /// Steepest ascent over reassignments and swaps. On a plateau it takes
    /// up to `n1 + n2` sideways steps to unvisited neighbours of equal score.
    fn climb(&self, mut mapping: Vec<Option<usize>>, rng: &mut ChaCha8Rng) -> (usize, Vec<Option<usize>>) {
        let mut score = self.score(&mapping);
        let mut best = (score, mapping.clone());
        let mut visited: HashSet<Vec<Option<usize>>> = HashSet::from([mapping.clone()]);
        let mut sideways = self.n1 + self.n2;
        loop {
            let scored: Vec<(usize, Vec<Option<usize>>)> = self.neighbours(&mapping).into_iter().map(|c| (self.score(&c), c)).collect();
            let top = scored.iter().map(|(s, _)| *s).max().unwrap_or(0);
            if top > score {
                let (s, m) = scored.into_iter().find(|(s, _)| *s == top).unwrap();
                score = s;
                mapping = m;
            } else if top == score && sideways > 0 {
                let level: Vec<Vec<Option<usize>>> =
                    scored.into_iter().filter(|(s, c)| *s == score && !visited.contains(c)).map(|(_, c)| c).collect();
                let Some(next) = level.choose(rng) else { break };
                mapping = next.clone();
                sideways -= 1;
            } else {
                break;
            }
            visited.insert(mapping.clone());
            if score > best.0 {
                best = (score, mapping.clone());
            }
        }
        best
    }
}

/// Matched-triple counts for one pair or a whole corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SmatchCounts {
    pub matched: usize,
    /// Triples in the first (system) graph.
    pub test: usize,
    /// Triples in the second (reference) graph.
    pub gold: usize,
}

impl SmatchCounts {
    pub fn precision(&self) -> f64 {
        if self.test == 0 {
            0.0
        } else {
            self.matched as f64 / self.test as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.matched as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: SmatchCounts) {
        self.matched += other.matched;
        self.test += other.test;
        self.gold += other.gold;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmatchResult {
    pub counts: SmatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Variable pairs of the best mapping found.
    pub mapping: Vec<(String, String)>,
}

/// Smatch by hill climbing from a concept-match start plus `restarts`
/// random starts. `g1` is the system graph, `g2` the reference.
pub fn smatch(g1: &AmrGraph, g2: &AmrGraph, restarts: usize, seed: u64) -> SmatchResult {
    let (a, b) = (TripleSet::from_graph(g1), TripleSet::from_graph(g2));
    let m = Matcher::new(&a, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = m.climb(m.greedy_start(), &mut rng);
    for _ in 0..restarts {
        if best.0 == m.total1.min(m.total2) {
            break;
        }
        let start = m.random_start(&mut rng);
        let cand = m.climb(start, &mut rng);
        if cand.0 > best.0 {
            best = cand;
        }
    }
    let counts = SmatchCounts { matched: best.0, test: m.total1, gold: m.total2 };
    SmatchResult {
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        mapping: best.1.iter().enumerate().filter_map(|(i, j)| j.map(|j| (a.vars[i].clone(), b.vars[j].clone()))).collect(),
    }
}

/// Upper bound on the smaller variable count for exhaustive matching.
pub const EXACT_VAR_LIMIT: usize = 8;
const EXACT_MAPPING_LIMIT: u128 = 20_000_000;

/// Exhaustive Smatch over all injective variable mappings.
pub fn smatch_exact_oracle(g1: &AmrGraph, g2: &AmrGraph) -> Result<SmatchCounts, EvalError> {
    let (a, b) = (TripleSet::from_graph(g1), TripleSet::from_graph(g2));
    // Enumerate injections from the smaller side.
    let (small, large, flipped) = if a.vars.len() <= b.vars.len() { (&a, &b, false) } else { (&b, &a, true) };
    if small.vars.len() > EXACT_VAR_LIMIT {
        return Err(EvalError::TooLarge { limit: EXACT_VAR_LIMIT, got: small.vars.len() });
    }
    let count: u128 = (0..small.vars.len()).map(|k| (large.vars.len() - k) as u128).product();
    if count > EXACT_MAPPING_LIMIT {
        return Err(EvalError::TooManyMappings(count));
    }
    let m = Matcher::new(small, large);
    let mut best = 0;
    let mut mapping = vec![None; small.vars.len()];
    let mut used = vec![false; large.vars.len()];
    enumerate(&m, 0, &mut mapping, &mut used, &mut best);
    let (test, gold) = if flipped { (m.total2, m.total1) } else { (m.total1, m.total2) };
    Ok(SmatchCounts { matched: best, test, gold })
}

fn enumerate(m: &Matcher, i: usize, mapping: &mut Vec<Option<usize>>, used: &mut Vec<bool>, best: &mut usize) {
    if i == mapping.len() {
        *best = (*best).max(m.score(mapping));
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            mapping[i] = Some(j);
            enumerate(m, i + 1, mapping, used, best);
            used[j] = false;
        }
    }
    mapping[i] = None;
}

/// Corpus-level Smatch: triple counts summed over aligned pairs.
pub fn corpus_smatch(system: &[AmrGraph], reference: &[AmrGraph], restarts: usize, seed: u64, mode: Execution) -> SmatchCounts {
    assert_eq!(system.len(), reference.len(), "corpora must be aligned");
    let pairs: Vec<(&AmrGraph, &AmrGraph)> = system.iter().zip(reference).collect();
    let per_pair = par::map(mode, &pairs, |i, (s, r)| smatch(s, r, restarts, seed.wrapping_add(i as u64)).counts);
    let mut total = SmatchCounts::default();
    for c in per_pair {
        total.add(c);
    }
    total
}

/// Frequency, precision, and recall of nodes from one source.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SourceStats {
    pub reference: usize,
    pub system: usize,
    pub correct: usize,
    pub frequency: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Per-sentence nodes tagged by source, as concept strings.
pub type TaggedNodes = Vec<(String, SourceKind)>;

/// Node-source frequency, precision, and recall.
///
/// Within each sentence and source, system nodes are matched to
/// reference nodes as multisets of concept strings.
pub fn node_source_stats(references: &[TaggedNodes], systems: &[TaggedNodes]) -> HashMap<SourceKind, SourceStats> {
    let mut counts: HashMap<SourceKind, (usize, usize, usize)> = SourceKind::ALL.iter().map(|&k| (k, (0, 0, 0))).collect();
    for (r, s) in references.iter().zip(systems) {
        for kind in SourceKind::ALL {
            let mut ref_bag: HashMap<&str, usize> = HashMap::new();
            for (c, k) in r {
                if *k == kind {
                    *ref_bag.entry(c).or_default() += 1;
                }
            }
            let mut sys_bag: HashMap<&str, usize> = HashMap::new();
            for (c, k) in s {
                if *k == kind {
                    *sys_bag.entry(c).or_default() += 1;
                }
            }
            let entry = counts.get_mut(&kind).expect("all kinds present");
            entry.0 += ref_bag.values().sum::<usize>();
            entry.1 += sys_bag.values().sum::<usize>();
            entry.2 += ref_bag.iter().map(|(c, n)| (*n).min(sys_bag.get(c).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    stats_from_counts(&counts)
}

/// Applies the three ratio formulas to (reference, system, correct) counts.
pub fn stats_from_counts(counts: &HashMap<SourceKind, (usize, usize, usize)>) -> HashMap<SourceKind, SourceStats> {
    let total_ref: usize = counts.values().map(|c| c.0).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    counts
        .iter()
        .map(|(&k, &(reference, system, correct))| {
            (
                k,
                SourceStats {
                    reference,
                    system,
                    correct,
                    frequency: ratio(reference, total_ref),
                    precision: ratio(correct, system),
                    recall: ratio(correct, reference),
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::penman_decode;

    fn g(s: &str) -> AmrGraph {
        penman_decode(s).unwrap()
    }

    #[test]
    fn identical_graphs_score_one() {
        let a = g("(p / possible-01 :ARG1 (h / help-01 :ARG0 (v / victim) :ARG1 v))");
        let r = smatch(&a, &a.renamed("z"), 4, 1);
        assert_eq!(r.f1, 1.0);
        assert_eq!(smatch_exact_oracle(&a, &a).unwrap().f1(), 1.0);
    }

    #[test]
    fn disjoint_concepts_score_zero() {
        let a = g("(a / alpha)");
        let b = g("(b / beta)");
        assert_eq!(smatch(&a, &b, 4, 1).f1, 0.0);
        assert_eq!(smatch_exact_oracle(&a, &b).unwrap().f1(), 0.0);
    }

    #[test]
    fn one_relabeled_edge_of_four_triples() {
        // instance a, instance b, TOP, relation: 4 triples each.
        let a = g("(a / alpha :ARG0 (b / beta))");
        let b = g("(a / alpha :ARG1 (b / beta))");
        let exact = smatch_exact_oracle(&a, &b).unwrap();
        assert_eq!((exact.matched, exact.test, exact.gold), (3, 4, 4));
        assert!((exact.f1() - 0.75).abs() < 1e-12);
        assert_eq!(smatch(&a, &b, 4, 7).counts, exact);
    }

    #[test]
    fn identical_three_var_graphs() {
        let a = g("(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma :polarity -))");
        assert_eq!(smatch_exact_oracle(&a, &a).unwrap().f1(), 1.0);
    }

    #[test]
    fn quoted_and_bare_constants_match() {
        let a = g(r#"(n / name :op1 "Route" :op2 "66")"#);
        let b = g(r#"(n / name :op1 "Route" :op2 66)"#);
        assert_eq!(smatch(&a, &b, 0, 0).f1, 1.0);
    }

    #[test]
    fn oracle_guard() {
        let big = (0..10).map(|i| format!(":op{} (x{} / c{})", i + 1, i, i)).collect::<Vec<_>>().join(" ");
        let a = g(&format!("(r / root {})", big));
        assert!(matches!(smatch_exact_oracle(&a, &a), Err(EvalError::TooLarge { .. })));
    }

    #[test]
    fn symmetric_f1() {
        let a = g("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))");
        let b = g("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 (g2 / girl)))");
        assert_eq!(smatch(&a, &b, 4, 3).f1, smatch(&b, &a, 4, 3).f1);
    }

    #[test]
    fn hand_fixture_source_stats() {
        use SourceKind::*;
        let counts: HashMap<SourceKind, (usize, usize, usize)> =
            [(Vocab, (4, 4, 3)), (SourceCopy, (4, 5, 4)), (TargetCopy, (2, 1, 1))].into_iter().collect();
        let s = stats_from_counts(&counts);
        assert_eq!(s[&Vocab].precision, 0.75);
        assert_eq!(s[&SourceCopy].precision, 0.8);
        assert_eq!(s[&TargetCopy].precision, 1.0);
        assert_eq!(s[&Vocab].recall, 0.75);
        assert_eq!(s[&SourceCopy].recall, 1.0);
        assert_eq!(s[&TargetCopy].recall, 0.5);
        assert_eq!(s[&Vocab].frequency, 0.4);
        assert_eq!(s[&SourceCopy].frequency, 0.4);
        assert_eq!(s[&TargetCopy].frequency, 0.2);
    }

    #[test]
    fn stats_from_tagged_nodes() {
        use SourceKind::*;
        let r = vec![vec![("go".to_string(), Vocab), ("boy".to_string(), SourceCopy)]];
        assert_eq!(node_source_stats(&r, &r)[&SourceCopy].precision, 1.0);
        let all_vocab = vec![vec![("go".to_string(), Vocab), ("run".to_string(), Vocab)]];
        let s = node_source_stats(&all_vocab, &all_vocab);
        assert_eq!(s[&Vocab].frequency, 1.0);
        assert_eq!(s[&SourceCopy].frequency, 0.0);
        assert_eq!(s[&TargetCopy].frequency, 0.0);
    }
}
