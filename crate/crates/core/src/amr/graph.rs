use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

/// A concept node identified by its variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub var: String,
    pub concept: String,
}

/// A labeled relation between two variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: String,
    pub label: String,
    pub target: String,
}

/// A constant-valued attribute such as `:polarity -` or `:op1 "Route"`.
///
/// Constants keep their surface form, including surrounding quotes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Attribute {
    pub var: String,
    pub label: String,
    pub value: String,
}

/// Rooted, directed, labeled concept graph.
///
/// Reentrancy is represented by several edges sharing a target.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AmrGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub attributes: Vec<Attribute>,
    pub root: String,
}

/// A broken graph invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    MissingRoot(String),
    DuplicateVariable(String),
    DanglingEdgeSource(Edge),
    DanglingEdgeTarget(Edge),
    DanglingAttribute(Attribute),
    SelfLoop(Edge),
    Unreachable(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "graph has no nodes"),
            Violation::MissingRoot(v) => write!(f, "root variable {} is not a node", v),
            Violation::DuplicateVariable(v) => write!(f, "duplicate variable {}", v),
            Violation::DanglingEdgeSource(e) => write!(f, "dangling edge source {} in ({} :{} {})", e.source, e.source, e.label, e.target),
            Violation::DanglingEdgeTarget(e) => write!(f, "dangling edge target {} in ({} :{} {})", e.target, e.source, e.label, e.target),
            Violation::DanglingAttribute(a) => write!(f, "dangling attribute owner {} in ({} :{} {})", a.var, a.var, a.label, a.value),
            Violation::SelfLoop(e) => write!(f, "self-loop on {} via :{}", e.source, e.label),
            Violation::Unreachable(v) => write!(f, "unreachable from root: {}", v),
        }
    }
}

impl AmrGraph {
    pub fn new(root: impl Into<String>) -> Self {
        AmrGraph { root: root.into(), ..Default::default() }
    }

    pub fn add_node(&mut self, var: impl Into<String>, concept: impl Into<String>) {
        self.nodes.push(Node { var: var.into(), concept: concept.into() });
    }

    pub fn add_edge(&mut self, source: impl Into<String>, label: impl Into<String>, target: impl Into<String>) {
        self.edges.push(Edge { source: source.into(), label: label.into(), target: target.into() });
    }

    pub fn add_attribute(&mut self, var: impl Into<String>, label: impl Into<String>, value: impl Into<String>) {
        self.attributes.push(Attribute { var: var.into(), label: label.into(), value: value.into() });
    }

    pub fn node(&self, var: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.var == var)
    }

    pub fn concept(&self, var: &str) -> Option<&str> {
        self.node(var).map(|n| n.concept.as_str())
    }

    pub fn outgoing<'a>(&'a self, var: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.source == var)
    }

    pub fn attributes_of<'a>(&'a self, var: &'a str) -> impl Iterator<Item = &'a Attribute> + 'a {
        self.attributes.iter().filter(move |a| a.var == var)
    }

    /// Number of incoming edges per variable.
    pub fn in_degrees(&self) -> HashMap<&str, usize> {
        let mut degrees: HashMap<&str, usize> = self.nodes.iter().map(|n| (n.var.as_str(), 0)).collect();
        for e in &self.edges {
            *degrees.entry(e.target.as_str()).or_default() += 1;
        }
        degrees
    }

    /// Total number of extra incoming edges over all nodes.
    pub fn reentrancies(&self) -> usize {
        self.in_degrees().values().map(|&d| d.saturating_sub(1)).sum()
    }

    /// Returns true when some directed cycle exists.
    pub fn has_cycle(&self) -> bool {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.var.as_str(), i)).collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut children = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if let (Some(&s), Some(&t)) = (index.get(e.source.as_str()), index.get(e.target.as_str())) {
                children[s].push(t);
                indegree[t] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop_front() {
            seen += 1;
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        seen != self.nodes.len()
    }

    /// Renames variables to `prefix0`, `prefix1`, ... in node order.
    pub fn renamed(&self, prefix: &str) -> AmrGraph {
        let map: HashMap<&str, String> = self.nodes.iter().enumerate().map(|(i, n)| (n.var.as_str(), format!("{}{}", prefix, i))).collect();
        let rename = |v: &str| map.get(v).cloned().unwrap_or_else(|| v.to_string());
        AmrGraph {
            nodes: self.nodes.iter().map(|n| Node { var: rename(&n.var), concept: n.concept.clone() }).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge { source: rename(&e.source), label: e.label.clone(), target: rename(&e.target) })
                .collect(),
            attributes: self
                .attributes
                .iter()
                .map(|a| Attribute { var: rename(&a.var), label: a.label.clone(), value: a.value.clone() })
                .collect(),
            root: rename(&self.root),
        }
    }
}

/// Checks every graph invariant and lists the violations found.
pub fn validate_graph(g: &AmrGraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    if g.nodes.is_empty() {
        violations.push(Violation::Empty);
        return violations;
    }

    let mut vars = HashSet::new();
    for n in &g.nodes {
        if !vars.insert(n.var.as_str()) {
            violations.push(Violation::DuplicateVariable(n.var.clone()));
        }
    }
    if !vars.contains(g.root.as_str()) {
        violations.push(Violation::MissingRoot(g.root.clone()));
    }

    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in &g.edges {
        let source_ok = vars.contains(e.source.as_str());
        let target_ok = vars.contains(e.target.as_str());
        if !source_ok {
            violations.push(Violation::DanglingEdgeSource(e.clone()));
        }
        if !target_ok {
            violations.push(Violation::DanglingEdgeTarget(e.clone()));
        }
        if e.source == e.target {
            violations.push(Violation::SelfLoop(e.clone()));
        }
        if source_ok && target_ok {
            adjacency.entry(&e.source).or_default().push(&e.target);
            adjacency.entry(&e.target).or_default().push(&e.source);
        }
    }
    for a in &g.attributes {
        if !vars.contains(a.var.as_str()) {
            violations.push(Violation::DanglingAttribute(a.clone()));
        }
    }

    if vars.contains(g.root.as_str()) {
        let mut reached = HashSet::new();
        let mut stack = vec![g.root.as_str()];
        while let Some(v) = stack.pop() {
            if reached.insert(v) {
                if let Some(next) = adjacency.get(v) {
                    stack.extend(next.iter().copied());
                }
            }
        }
        let mut seen = HashSet::new();
        for n in &g.nodes {
            if !reached.contains(n.var.as_str()) && seen.insert(n.var.as_str()) {
                violations.push(Violation::Unreachable(n.var.clone()));
            }
        }
    }
    violations
}
