//! Reentrant graphs as indexed trees, and trees as linear node targets.
//!
//! A node with `k` incoming edges becomes one original tree node plus
//! `k - 1` leaf copies sharing its index. Merging same-index nodes
//! recovers the graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write};

use thiserror::Error;

use crate::amr::{penman_decode, validate_graph, AmrGraph, PenmanError, Violation};
use crate::prepost::orient_from_root;

/// Relation label carried by the edge from the dummy root.
pub const ROOT_LABEL: &str = "root";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransduceError {
    #[error("graph is cyclic")]
    Cyclic,
    #[error("invalid graph: {0:?}")]
    InvalidGraph(Vec<Violation>),
    #[error("node {0} is not reachable from the root along edge direction")]
    NotReachable(String),
    #[error("index {index} carries concepts {first} and {second}")]
    ConceptMismatch { index: usize, first: String, second: String },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Penman(#[from] PenmanError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub concept: String,
    pub index: usize,
    /// Constant attributes; only original nodes carry them.
    pub attributes: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEdge {
    pub parent: usize,
    pub label: String,
    pub child: usize,
}

/// Tree of concept nodes where duplicated reentrant nodes share an index.
///
/// Node ids are positions in `nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
    pub root: usize,
}

impl IndexedTree {
    /// Children of `node`, ordered by relation label then concept, with
    /// insertion order breaking remaining ties.
    pub fn sorted_children(&self, node: usize) -> Vec<&TreeEdge> {
        let mut children: Vec<&TreeEdge> = self.edges.iter().filter(|e| e.parent == node).collect();
        children.sort_by(|a, b| child_order(&a.label, &self.nodes[a.child].concept, &b.label, &self.nodes[b.child].concept));
        children
    }

    pub fn validate(&self) -> Result<(), TransduceError> {
        let n = self.nodes.len();
        if n == 0 || self.root >= n {
            return Err(TransduceError::InvalidTree("missing root".into()));
        }
        let mut parent = vec![None; n];
        for e in &self.edges {
            if e.parent >= n || e.child >= n {
                return Err(TransduceError::InvalidTree(format!("edge {} -> {} out of range", e.parent, e.child)));
            }
            if parent[e.child].replace(e.parent).is_some() {
                return Err(TransduceError::InvalidTree(format!("node {} has two parents", e.child)));
            }
        }
        if parent[self.root].is_some() {
            return Err(TransduceError::InvalidTree("root has a parent".into()));
        }
        let mut seen = 0;
        let mut stack = vec![self.root];
        let mut visited = vec![false; n];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut visited[v], true) {
                return Err(TransduceError::InvalidTree("cycle".into()));
            }
            seen += 1;
            stack.extend(self.edges.iter().filter(|e| e.parent == v).map(|e| e.child));
        }
        if seen != n {
            return Err(TransduceError::InvalidTree("disconnected".into()));
        }
        let mut concepts: HashMap<usize, &str> = HashMap::new();
        for node in &self.nodes {
            if node.index == 0 {
                return Err(TransduceError::InvalidTree("index 0".into()));
            }
            if let Some(first) = concepts.insert(node.index, &node.concept) {
                if first != node.concept {
                    return Err(TransduceError::ConceptMismatch {
                        index: node.index,
                        first: first.to_string(),
                        second: node.concept.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Node ids in pre-order with sorted children.
    pub fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for e in self.sorted_children(v).into_iter().rev() {
                stack.push(e.child);
            }
        }
        order
    }
}

fn child_order(label_a: &str, concept_a: &str, label_b: &str, concept_b: &str) -> Ordering {
    label_a.as_bytes().cmp(label_b.as_bytes()).then_with(|| concept_a.as_bytes().cmp(concept_b.as_bytes()))
}

/// Duplicates reentrant nodes so every node has one parent.
///
/// The original of a reentrant node is the occurrence reached first in
/// pre-order; indices are the pre-order positions of originals.
pub fn graph_to_tree(g: &AmrGraph) -> Result<IndexedTree, TransduceError> {
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(TransduceError::InvalidGraph(violations));
    }
    if g.has_cycle() {
        return Err(TransduceError::Cyclic);
    }

    let mut out_edges: HashMap<&str, Vec<(usize, &str, &str)>> = HashMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        out_edges.entry(e.source.as_str()).or_default().push((i, e.label.as_str(), e.target.as_str()));
    }
    for list in out_edges.values_mut() {
        list.sort_by(|a, b| child_order(a.1, g.concept(a.2).unwrap_or(""), b.1, g.concept(b.2).unwrap_or("")).then(a.0.cmp(&b.0)));
    }

    let mut tree = IndexedTree { nodes: Vec::new(), edges: Vec::new(), root: 0 };
    let mut index_of: HashMap<&str, usize> = HashMap::new();
    // (var, parent tree node, label)
    let mut stack: Vec<(&str, Option<(usize, &str)>)> = vec![(g.root.as_str(), None)];
    while let Some((var, parent)) = stack.pop() {
        let id = tree.nodes.len();
        let concept = g.concept(var).unwrap_or("").to_string();
        let original = !index_of.contains_key(var);
        let index = *index_of.entry(var).or_insert(id + 1);
        let attributes = if original { g.attributes_of(var).map(|a| (a.label.clone(), a.value.clone())).collect() } else { Vec::new() };
        tree.nodes.push(TreeNode { concept, index, attributes });
        if let Some((p, label)) = parent {
            tree.edges.push(TreeEdge { parent: p, label: label.to_string(), child: id });
        }
        if original {
            if let Some(children) = out_edges.get(var) {
                for &(_, label, target) in children.iter().rev() {
                    stack.push((target, Some((id, label))));
                }
            }
        }
    }
    for n in &g.nodes {
        if !index_of.contains_key(n.var.as_str()) {
            return Err(TransduceError::NotReachable(n.var.clone()));
        }
    }
    Ok(tree)
}

/// Merges same-index nodes and unions their edges and attributes.
pub fn tree_to_graph(t: &IndexedTree) -> Result<AmrGraph, TransduceError> {
    t.validate()?;
    let var = |index: usize| format!("n{}", index);
    let mut g = AmrGraph::new(var(t.nodes[t.root].index));
    let mut seen_index = HashSet::new();
    for id in t.preorder() {
        let node = &t.nodes[id];
        if seen_index.insert(node.index) {
            g.add_node(var(node.index), node.concept.clone());
        }
    }
    let mut seen_edges = HashSet::new();
    let mut seen_attrs = HashSet::new();
    for id in t.preorder() {
        let node = &t.nodes[id];
        for e in t.sorted_children(id) {
            let key = (node.index, e.label.clone(), t.nodes[e.child].index);
            if seen_edges.insert(key) {
                g.add_edge(var(node.index), e.label.clone(), var(t.nodes[e.child].index));
            }
        }
        for (label, value) in &node.attributes {
            if seen_attrs.insert((node.index, label.clone(), value.clone())) {
                g.add_attribute(var(node.index), label.clone(), value.clone());
            }
        }
    }
    let violations = validate_graph(&g);
    if !violations.is_empty() {
        return Err(TransduceError::InvalidGraph(violations));
    }
    Ok(g)
}

/// Where a target node can come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CopySource {
    /// Generated from the node vocabulary.
    Vocab,
    /// Copied from the source token at this 0-based position.
    Source(usize),
    /// Copy of the earlier node at this 1-based position.
    Target(usize),
}

impl CopySource {
    /// Coarse category name used by node-source statistics.
    pub fn kind(&self) -> SourceKind {
        match self {
            CopySource::Vocab => SourceKind::Vocab,
            CopySource::Source(_) => SourceKind::SourceCopy,
            CopySource::Target(_) => SourceKind::TargetCopy,
        }
    }
}

impl fmt::Display for CopySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopySource::Vocab => write!(f, "vocab"),
            CopySource::Source(i) => write!(f, "src:{}", i),
            CopySource::Target(j) => write!(f, "tgt:{}", j),
        }
    }
}

impl std::str::FromStr for CopySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "vocab" {
            return Ok(CopySource::Vocab);
        }
        let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("{}: {}", s, e));
        match s.split_once(':') {
            Some(("src", v)) => Ok(CopySource::Source(parse(v)?)),
            Some(("tgt", v)) => Ok(CopySource::Target(parse(v)?)),
            _ => Err(format!("unknown source tag {}", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceKind {
    Vocab,
    SourceCopy,
    TargetCopy,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Vocab, SourceKind::SourceCopy, SourceKind::TargetCopy];

    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Vocab => "vocab",
            SourceKind::SourceCopy => "source-copy",
            SourceKind::TargetCopy => "target-copy",
        }
    }
}

/// Source-side token forms a concept may be copied from.
#[derive(Clone, Copy, Debug)]
pub struct SourceTokens<'a> {
    pub tokens: &'a [String],
    pub lemmas: Option<&'a [String]>,
}

impl<'a> SourceTokens<'a> {
    pub fn new(tokens: &'a [String], lemmas: Option<&'a [String]>) -> Self {
        SourceTokens { tokens, lemmas }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The concept emitted when copying token `i`: its lemma when one is
    /// available, the lowercased token otherwise.
    pub fn copy_form(&self, i: usize) -> String {
        match self.lemmas {
            Some(l) => l[i].clone(),
            None => self.tokens[i].to_lowercase(),
        }
    }

    /// Positions whose lowercased token or lemma equals `concept`.
    pub fn positions(&self, concept: &str) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&i| self.tokens[i].to_lowercase() == concept || self.lemmas.is_some_and(|l| l[i] == concept))
            .collect()
    }
}

/// Ordered node list with indices, heads, labels, and copy provenance.
///
/// Positions are 1-based; head 0 is the dummy root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearizedTarget {
    pub concepts: Vec<String>,
    pub indices: Vec<usize>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    pub copy_sources: Vec<CopySource>,
}

impl LinearizedTarget {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// Checks column lengths, the index rule and the head ordering.
    pub fn validate(&self) -> Result<(), TransduceError> {
        let m = self.concepts.len();
        if [self.indices.len(), self.heads.len(), self.labels.len(), self.copy_sources.len()].iter().any(|&l| l != m) {
            return Err(TransduceError::InvalidTarget("column lengths differ".into()));
        }
        for t in 0..m {
            let pos = t + 1;
            let d = self.indices[t];
            if d != pos {
                let Some(j) = (0..t).find(|&j| self.indices[j] == d) else {
                    return Err(TransduceError::InvalidTarget(format!("position {} has index {} without antecedent", pos, d)));
                };
                if self.concepts[j] != self.concepts[t] {
                    return Err(TransduceError::InvalidTarget(format!("copy at {} differs from antecedent {}", pos, j + 1)));
                }
            }
            if self.heads[t] >= pos {
                return Err(TransduceError::InvalidTarget(format!("head {} of position {} does not precede it", self.heads[t], pos)));
            }
        }
        if self.heads.iter().filter(|&&h| h == 0).count() != usize::from(m > 0) {
            return Err(TransduceError::InvalidTarget("expected exactly one root".into()));
        }
        Ok(())
    }

    /// Tab-separated rows: position, concept, index, head, label, source tag.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.len() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                t + 1,
                self.concepts[t],
                self.indices[t],
                self.heads[t],
                self.labels[t],
                self.copy_sources[t]
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, TransduceError> {
        let mut target =
            LinearizedTarget { concepts: Vec::new(), indices: Vec::new(), heads: Vec::new(), labels: Vec::new(), copy_sources: Vec::new() };
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| TransduceError::InvalidTarget(format!("row {}: {}", i + 1, what));
            if cols.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            if cols[0].parse::<usize>().ok() != Some(i + 1) {
                return Err(bad("position out of sequence"));
            }
            target.concepts.push(cols[1].to_string());
            target.indices.push(cols[2].parse().map_err(|_| bad("bad index"))?);
            target.heads.push(cols[3].parse().map_err(|_| bad("bad head"))?);
            target.labels.push(cols[4].to_string());
            target.copy_sources.push(cols[5].parse().map_err(|e: String| bad(&e))?);
        }
        target.validate()?;
        Ok(target)
    }
}

/// Assigns the provenance of each node: a copy of an earlier same-index
/// node, else a source-token copy when the concept matches a token,
/// else vocabulary generation.
pub fn copy_sources(concepts: &[String], indices: &[usize], source: Option<SourceTokens<'_>>) -> Vec<CopySource> {
    (0..concepts.len())
        .map(|t| {
            if let Some(j) = (0..t).find(|&j| indices[j] == indices[t]) {
                return CopySource::Target(j + 1);
            }
            match source.and_then(|s| s.positions(&concepts[t]).first().copied()) {
                Some(i) => CopySource::Source(i),
                None => CopySource::Vocab,
            }
        })
        .collect()
}

/// Pre-order linearization with children sorted by (label, concept).
pub fn linearize(t: &IndexedTree, source: Option<SourceTokens<'_>>) -> LinearizedTarget {
    let order = t.preorder();
    let mut position = vec![0usize; t.nodes.len()];
    for (p, &id) in order.iter().enumerate() {
        position[id] = p + 1;
    }
    let mut parent: Vec<Option<(usize, &str)>> = vec![None; t.nodes.len()];
    for e in &t.edges {
        parent[e.child] = Some((e.parent, &e.label));
    }

    let mut first_pos_of_index: HashMap<usize, usize> = HashMap::new();
    let mut concepts = Vec::with_capacity(order.len());
    let mut indices = Vec::with_capacity(order.len());
    let mut heads = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    for (p, &id) in order.iter().enumerate() {
        let node = &t.nodes[id];
        concepts.push(node.concept.clone());
        indices.push(*first_pos_of_index.entry(node.index).or_insert(p + 1));
        match parent[id] {
            Some((pid, label)) => {
                heads.push(position[pid]);
                labels.push(label.to_string());
            }
            None => {
                heads.push(0);
                labels.push(ROOT_LABEL.to_string());
            }
        }
    }
    let copy_sources = copy_sources(&concepts, &indices, source);
    LinearizedTarget { concepts, indices, heads, labels, copy_sources }
}

/// Rebuilds the indexed tree from heads and labels.
pub fn delinearize(target: &LinearizedTarget) -> Result<IndexedTree, TransduceError> {
    target.validate()?;
    if target.is_empty() {
        return Err(TransduceError::InvalidTarget("empty target".into()));
    }
    let mut tree = IndexedTree {
        nodes: target
            .concepts
            .iter()
            .zip(&target.indices)
            .map(|(c, &index)| TreeNode { concept: c.clone(), index, attributes: Vec::new() })
            .collect(),
        edges: Vec::new(),
        root: 0,
    };
    for t in 0..target.len() {
        if target.heads[t] == 0 {
            tree.root = t;
        } else {
            tree.edges.push(TreeEdge { parent: target.heads[t] - 1, label: target.labels[t].clone(), child: t });
        }
    }
    tree.validate()?;
    Ok(tree)
}

/// Writes a tree as PENMAN: originals are `i<index>`, copies
/// `i<index>_<k>` for the k-th occurrence.
pub fn tree_to_penman(t: &IndexedTree) -> String {
    let mut occurrences: BTreeMap<usize, usize> = BTreeMap::new();
    let mut names = vec![String::new(); t.nodes.len()];
    for id in t.preorder() {
        let k = occurrences.entry(t.nodes[id].index).or_insert(0);
        *k += 1;
        names[id] = if *k == 1 { format!("i{}", t.nodes[id].index) } else { format!("i{}_{}", t.nodes[id].index, k) };
    }
    let mut out = String::new();
    write_tree_node(t, t.root, &names, 0, &mut out);
    out
}

fn write_tree_node(t: &IndexedTree, id: usize, names: &[String], depth: usize, out: &mut String) {
    let _ = write!(out, "({} / {}", names[id], t.nodes[id].concept);
    let indent = " ".repeat(4 * (depth + 1));
    for e in t.sorted_children(id) {
        let _ = write!(out, "\n{}:{} ", indent, e.label);
        write_tree_node(t, e.child, names, depth + 1, out);
    }
    for (label, value) in &t.nodes[id].attributes {
        let _ = write!(out, "\n{}:{} {}", indent, label, value);
    }
    out.push(')');
}

/// Reads the format written by [`tree_to_penman`].
pub fn tree_from_penman(text: &str) -> Result<IndexedTree, TransduceError> {
    let g = orient_from_root(&penman_decode(text)?);
    let mut id_of: HashMap<&str, usize> = HashMap::new();
    let mut tree = IndexedTree { nodes: Vec::new(), edges: Vec::new(), root: 0 };
    for n in &g.nodes {
        let index = n
            .var
            .strip_prefix('i')
            .and_then(|rest| rest.split('_').next())
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| TransduceError::InvalidTree(format!("variable {} carries no index", n.var)))?;
        id_of.insert(&n.var, tree.nodes.len());
        tree.nodes.push(TreeNode {
            concept: n.concept.clone(),
            index,
            attributes: g.attributes_of(&n.var).map(|a| (a.label.clone(), a.value.clone())).collect(),
        });
    }
    tree.root = id_of[g.root.as_str()];
    for e in &g.edges {
        tree.edges.push(TreeEdge { parent: id_of[e.source.as_str()], label: e.label.clone(), child: id_of[e.target.as_str()] });
    }
    tree.validate()?;
    Ok(tree)
}
