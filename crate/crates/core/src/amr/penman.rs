//! PENMAN reader and writer.

use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use thiserror::Error;

use super::graph::{validate_graph, AmrGraph, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenmanError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("duplicate variable {var} at {line}:{col}")]
    DuplicateVariable { var: String, line: usize, col: usize },
    #[error("undefined variable {var} at {line}:{col}")]
    UndefinedVariable { var: String, line: usize, col: usize },
    #[error("invalid graph: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Symbol(String),
    Quoted(String),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<(Vec<Spanned>, (usize, usize)), PenmanError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    let advance = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            advance(c, &mut line, &mut col);
            i += 1;
            continue;
        }
        match c {
            '(' | ')' | '/' => {
                let tok = match c {
                    '(' => Tok::Open,
                    ')' => Tok::Close,
                    _ => Tok::Slash,
                };
                out.push(Spanned { tok, line: l0, col: c0 });
                advance(c, &mut line, &mut col);
                i += 1;
            }
            '"' => {
                let mut s = String::from('"');
                advance(c, &mut line, &mut col);
                i += 1;
                let mut closed = false;
                while i < chars.len() {
                    let d = chars[i];
                    s.push(d);
                    advance(d, &mut line, &mut col);
                    i += 1;
                    if d == '\\' && i < chars.len() {
                        s.push(chars[i]);
                        advance(chars[i], &mut line, &mut col);
                        i += 1;
                    } else if d == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(PenmanError::Syntax { line: l0, col: c0, message: "unterminated string".into() });
                }
                out.push(Spanned { tok: Tok::Quoted(s), line: l0, col: c0 });
            }
            _ => {
                let mut s = String::new();
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_whitespace() || matches!(d, '(' | ')' | '"' | '/') {
                        break;
                    }
                    s.push(d);
                    advance(d, &mut line, &mut col);
                    i += 1;
                }
                let tok = match s.strip_prefix(':') {
                    Some(role) if !role.is_empty() => Tok::Role(role.to_string()),
                    Some(_) => return Err(PenmanError::Syntax { line: l0, col: c0, message: "empty role".into() }),
                    None => Tok::Symbol(s),
                };
                out.push(Spanned { tok, line: l0, col: c0 });
            }
        }
    }
    Ok((out, (line, col)))
}

/// Symbols of this shape must name a variable when used as a role value.
fn looks_like_variable(s: &str) -> bool {
    let letters = s.chars().take_while(|c| c.is_ascii_lowercase()).count();
    (1..=2).contains(&letters) && s[letters..].chars().all(|c| c.is_ascii_digit())
}

struct PendingRef {
    source: String,
    label: String,
    symbol: String,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
    graph: AmrGraph,
    defined: HashSet<String>,
    pending: Vec<PendingRef>,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn err_here(&self, message: impl Into<String>) -> PenmanError {
        let (line, col) = self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end);
        PenmanError::Syntax { line, col, message: message.into() }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned, PenmanError> {
        match self.peek() {
            Some(t) if &t.tok == want => {
                let t = t.clone();
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.err_here(format!("expected {}", what))),
        }
    }

    fn node(&mut self) -> Result<String, PenmanError> {
        self.expect(&Tok::Open, "'('")?;
        let var = match self.peek() {
            Some(Spanned { tok: Tok::Symbol(s), line, col }) => {
                let (s, line, col) = (s.clone(), *line, *col);
                if !self.defined.insert(s.clone()) {
                    return Err(PenmanError::DuplicateVariable { var: s, line, col });
                }
                self.pos += 1;
                s
            }
            _ => return Err(self.err_here("expected variable")),
        };
        self.expect(&Tok::Slash, "'/'")?;
        let concept = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Symbol(s)) | Some(Tok::Quoted(s)) => {
                self.pos += 1;
                s
            }
            _ => return Err(self.err_here("expected concept")),
        };
        self.graph.add_node(var.clone(), concept);

        loop {
            let t = match self.peek() {
                Some(t) => t.clone(),
                None => return Err(self.err_here("unexpected end of input")),
            };
            match t.tok {
                Tok::Close => {
                    self.pos += 1;
                    return Ok(var);
                }
                Tok::Role(label) => {
                    self.pos += 1;
                    let value = match self.peek() {
                        Some(v) => v.clone(),
                        None => return Err(self.err_here("expected role value")),
                    };
                    match value.tok {
                        Tok::Open => {
                            let child = self.node()?;
                            match inverse_role(&label) {
                                Some(base) => self.graph.add_edge(child, base, var.clone()),
                                None => self.graph.add_edge(var.clone(), label, child),
                            }
                        }
                        Tok::Quoted(s) => {
                            self.pos += 1;
                            self.graph.add_attribute(var.clone(), label, s);
                        }
                        Tok::Symbol(s) => {
                            self.pos += 1;
                            self.pending.push(PendingRef { source: var.clone(), label, symbol: s, line: value.line, col: value.col });
                        }
                        _ => return Err(self.err_here("expected role value")),
                    }
                }
                _ => return Err(self.err_here("expected role or ')'")),
            }
        }
    }
}

/// Roles ending in `-of` that are not inverses themselves.
const NON_INVERSE_ROLES: [&str; 3] = ["consist-of", "prep-out-of", "prep-on-behalf-of"];

/// The canonical role of an inverse role such as `ARG0-of`.
pub fn inverse_role(label: &str) -> Option<&str> {
    if NON_INVERSE_ROLES.contains(&label) {
        return None;
    }
    label.strip_suffix("-of")
}

/// Parses one PENMAN expression.
///
/// Inverse roles are stored in their canonical direction.
///
/// Bare symbols naming a defined variable become reentrant edges; other
/// symbols and quoted strings become attributes. A variable-shaped symbol
/// that names no variable is an error.
pub fn penman_decode(text: &str) -> Result<AmrGraph, PenmanError> {
    let (toks, end) = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, end, graph: AmrGraph::default(), defined: HashSet::new(), pending: Vec::new() };
    let root = p.node()?;
    if p.pos < p.toks.len() {
        return Err(p.err_here("trailing input after expression"));
    }
    let mut g = p.graph;
    g.root = root;
    for r in p.pending {
        if p.defined.contains(&r.symbol) {
            match inverse_role(&r.label) {
                Some(base) => g.add_edge(r.symbol, base, r.source),
                None => g.add_edge(r.source, r.label, r.symbol),
            }
        } else if looks_like_variable(&r.symbol) {
            return Err(PenmanError::UndefinedVariable { var: r.symbol, line: r.line, col: r.col });
        } else {
            g.add_attribute(r.source, r.label, r.symbol);
        }
    }
    let violations = validate_graph(&g);
    if !violations.is_empty() {
        return Err(PenmanError::Invalid(violations));
    }
    Ok(g)
}

fn variable_stem(concept: &str) -> char {
    concept.chars().find(|c| c.is_ascii_alphabetic()).map(|c| c.to_ascii_lowercase()).unwrap_or('x')
}

/// Serializes a graph in indented PENMAN.
///
/// Variables are renamed to the first letter of their concept plus a
/// counter. Relations follow the graph's edge order; a node reached a
/// second time is written as its bare variable. Nodes only reachable
/// against edge direction are written through an inverted `-of` role.
pub fn penman_encode(g: &AmrGraph) -> Result<String, PenmanError> {
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(PenmanError::Invalid(violations));
    }

    let mut names: HashMap<&str, String> = HashMap::new();
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let reachable = forward_reachable(g);
    plan_names(g, &g.root, &reachable, &mut visited, &mut order);
    for var in &order {
        let concept = g.concept(var).unwrap_or("");
        let stem = variable_stem(concept);
        let n = counts.entry(stem).or_insert(0);
        *n += 1;
        let name = if *n == 1 { stem.to_string() } else { format!("{}{}", stem, n) };
        names.insert(var, name);
    }

    let mut writer = Writer { g, reachable, names: &names, written: HashSet::new(), emitted: HashSet::new(), out: String::new() };
    writer.node(&g.root, 0);
    Ok(writer.out)
}

/// Variables reachable from the root along edge direction.
fn forward_reachable(g: &AmrGraph) -> HashSet<&str> {
    let mut seen = HashSet::new();
    let mut stack = vec![g.root.as_str()];
    while let Some(v) = stack.pop() {
        if seen.insert(v) {
            stack.extend(g.outgoing(v).map(|e| e.target.as_str()));
        }
    }
    seen
}

/// Incident relations of a node in output order: outgoing edges first,
/// then incoming edges from nodes the root cannot reach, written inverted.
fn incident<'a>(g: &'a AmrGraph, var: &str, reachable: &HashSet<&str>) -> Vec<(usize, String, &'a str)> {
    let mut out: Vec<(usize, String, &str)> =
        g.edges.iter().enumerate().filter(|(_, e)| e.source == var).map(|(i, e)| (i, e.label.clone(), e.target.as_str())).collect();
    for (i, e) in g.edges.iter().enumerate().filter(|(_, e)| e.target == var && !reachable.contains(e.source.as_str())) {
        let label = match e.label.strip_suffix("-of") {
            Some(base) => base.to_string(),
            None => format!("{}-of", e.label),
        };
        out.push((i, label, e.source.as_str()));
    }
    out
}

fn plan_names<'a>(g: &'a AmrGraph, var: &'a str, reachable: &HashSet<&str>, visited: &mut HashSet<&'a str>, order: &mut Vec<&'a str>) {
    if !visited.insert(var) {
        return;
    }
    order.push(var);
    for (_, _, next) in incident(g, var, reachable) {
        plan_names(g, next, reachable, visited, order);
    }
}

struct Writer<'a, 'n> {
    g: &'a AmrGraph,
    reachable: HashSet<&'a str>,
    names: &'n HashMap<&'a str, String>,
    written: HashSet<&'a str>,
    emitted: HashSet<usize>,
    out: String,
}

impl<'a> Writer<'a, '_> {
    fn node(&mut self, var: &'a str, depth: usize) {
        self.written.insert(var);
        let _ = write!(self.out, "({} / {}", self.names[var], self.g.concept(var).unwrap_or(""));
        let indent = " ".repeat(4 * (depth + 1));
        for (edge, label, other) in incident(self.g, var, &self.reachable) {
            if !self.emitted.insert(edge) {
                continue;
            }
            let _ = write!(self.out, "\n{}:{} ", indent, label);
            if self.written.contains(other) {
                self.out.push_str(&self.names[other]);
            } else {
                self.node(other, depth + 1);
            }
        }
        for a in self.g.attributes_of(var) {
            let _ = write!(self.out, "\n{}:{} {}", indent, a.label, a.value);
        }
        self.out.push(')');
    }
}
