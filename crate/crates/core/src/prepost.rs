//! Corpus preprocessing and parse postprocessing: sense removal and
//! restoration, entity anonymization, polarity rules, the wikification
//! hook, and the constant/node conversions around the transducer.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write;

use thiserror::Error;

use crate::amr::{inverse_role, AmrGraph, Attribute, Edge, Node};

#[derive(Debug, Error, PartialEq)]
pub enum PrepostError {
    #[error("anonymization sidecar line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error("table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// Splits a `-NN` sense suffix off a concept.
pub fn split_sense(concept: &str) -> (&str, Option<&str>) {
    let b = concept.as_bytes();
    let n = b.len();
    if n > 3 && b[n - 3] == b'-' && b[n - 2].is_ascii_digit() && b[n - 1].is_ascii_digit() {
        (&concept[..n - 3], Some(&concept[n - 3..]))
    } else {
        (concept, None)
    }
}

pub fn strip_senses(g: &AmrGraph) -> AmrGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.concept = split_sense(&n.concept).0.to_string();
    }
    out
}

fn is_number(s: &str) -> bool {
    !s.is_empty() && s.parse::<f64>().is_ok()
}

/// Placeholder tokens look like `TYPE_3`.
pub fn is_placeholder(s: &str) -> bool {
    match s.rsplit_once('_') {
        Some((ty, i)) => {
            !ty.is_empty()
                && !i.is_empty()
                && i.bytes().all(|b| b.is_ascii_digit())
                && ty.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
        }
        None => false,
    }
}

/// Majority sense per sense-stripped concept, counted on training graphs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenseTable {
    pub senses: BTreeMap<String, String>,
    /// Concepts seen without a sense and never with one.
    pub plain: HashSet<String>,
}

impl SenseTable {
    pub fn build<'a, I: IntoIterator<Item = &'a AmrGraph>>(graphs: I) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut plain = HashSet::new();
        for g in graphs {
            for n in &g.nodes {
                match split_sense(&n.concept) {
                    (stem, Some(sense)) => *counts.entry(stem.to_string()).or_default().entry(sense.to_string()).or_default() += 1,
                    (stem, None) => {
                        plain.insert(stem.to_string());
                    }
                }
            }
        }
        let senses: BTreeMap<String, String> = counts
            .into_iter()
            .map(|(stem, c)| {
                let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| s.clone()).expect("nonempty counts");
                (stem, best)
            })
            .collect();
        plain.retain(|p| !senses.contains_key(p));
        SenseTable { senses, plain }
    }

    /// The restored form of a sense-stripped concept.
    pub fn restore(&self, concept: &str) -> String {
        if let Some(s) = self.senses.get(concept) {
            return format!("{}{}", concept, s);
        }
        if self.plain.contains(concept) || !restorable(concept) {
            return concept.to_string();
        }
        format!("{}-01", concept)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.senses {
            let _ = writeln!(out, "sense\t{}\t{}", k, v);
        }
        let mut plain: Vec<&String> = self.plain.iter().collect();
        plain.sort();
        for p in plain {
            let _ = writeln!(out, "plain\t{}", p);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PrepostError> {
        let mut t = SenseTable::default();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                ["sense", k, v] => {
                    t.senses.insert(k.to_string(), v.to_string());
                }
                ["plain", k] => {
                    t.plain.insert(k.to_string());
                }
                [""] => {}
                _ => return Err(PrepostError::Table { line: i + 1, message: line.to_string() }),
            }
        }
        Ok(t)
    }
}

/// Concepts that never take a sense: constants, placeholders, reserved
/// markers and already-sensed concepts.
fn restorable(concept: &str) -> bool {
    !(concept.is_empty()
        || concept.starts_with('"')
        || concept.starts_with('<')
        || concept == "-"
        || concept == "+"
        || concept == EMPTY_CONCEPT
        || is_number(concept)
        || is_placeholder(concept)
        || split_sense(concept).1.is_some()
        || !concept.chars().next().is_some_and(|c| c.is_ascii_lowercase()))
}

/// Concept of the fallback graph for an empty prediction.
pub const EMPTY_CONCEPT: &str = "amr-empty";

pub fn restore_senses(g: &AmrGraph, table: &SenseTable) -> AmrGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.concept = table.restore(&n.concept);
    }
    out
}

/// Flips edges as needed so every node is reachable from the root along
/// edge direction; flipped labels gain or lose `-of`.
pub fn orient_from_root(g: &AmrGraph) -> AmrGraph {
    let mut out = g.clone();
    let mut seen: HashSet<String> = HashSet::from([g.root.clone()]);
    let mut queue = VecDeque::from([g.root.clone()]);
    let mut done = vec![false; g.edges.len()];
    while let Some(v) = queue.pop_front() {
        for (i, e) in out.edges.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            if e.source == v {
                done[i] = true;
                if seen.insert(e.target.clone()) {
                    queue.push_back(e.target.clone());
                }
            } else if e.target == v {
                done[i] = true;
                if seen.insert(e.source.clone()) {
                    std::mem::swap(&mut e.source, &mut e.target);
                    e.label = invert_label(&e.label);
                    queue.push_back(e.target.clone());
                }
            }
        }
    }
    out
}

fn invert_label(label: &str) -> String {
    match inverse_role(label) {
        Some(base) => base.to_string(),
        None => format!("{}-of", label),
    }
}

/// Rewrites inverse `-of` edges into their canonical direction.
pub fn normalize_inverse(g: &AmrGraph) -> AmrGraph {
    let mut out = g.clone();
    for e in &mut out.edges {
        if inverse_role(&e.label).is_some() {
            std::mem::swap(&mut e.source, &mut e.target);
            e.label = invert_label(&e.label);
        }
    }
    out
}

/// Turns every attribute into a leaf node whose concept is the constant.
pub fn promote_attributes(g: &AmrGraph) -> AmrGraph {
    let mut out = AmrGraph { nodes: g.nodes.clone(), edges: g.edges.clone(), attributes: Vec::new(), root: g.root.clone() };
    let taken: HashSet<&str> = g.nodes.iter().map(|n| n.var.as_str()).collect();
    let mut k = 0;
    for a in &g.attributes {
        let var = loop {
            let v = format!("{}_c{}", a.var, k);
            k += 1;
            if !taken.contains(v.as_str()) {
                break v;
            }
        };
        out.nodes.push(Node { var: var.clone(), concept: a.value.clone() });
        out.edges.push(Edge { source: a.var.clone(), label: a.label.clone(), target: var });
    }
    out
}

fn is_constant(concept: &str, label: &str) -> bool {
    concept.starts_with('"') || concept == "-" || concept == "+" || is_number(concept) || matches!(label, "polarity" | "mode")
}

/// Inverse of [`promote_attributes`]: leaves with one parent whose concept
/// is a constant become attributes of that parent.
pub fn demote_constants(g: &AmrGraph) -> AmrGraph {
    let mut incoming: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut has_out: HashSet<&str> = HashSet::new();
    for (i, e) in g.edges.iter().enumerate() {
        incoming.entry(e.target.as_str()).or_default().push(i);
        has_out.insert(e.source.as_str());
    }
    let mut demoted: HashMap<&str, usize> = HashMap::new();
    for n in &g.nodes {
        if n.var == g.root || has_out.contains(n.var.as_str()) || g.attributes_of(&n.var).next().is_some() {
            continue;
        }
        if let Some([e]) = incoming.get(n.var.as_str()).map(Vec::as_slice) {
            if is_constant(&n.concept, &g.edges[*e].label) {
                demoted.insert(n.var.as_str(), *e);
            }
        }
    }
    let mut out = AmrGraph::new(g.root.clone());
    for n in &g.nodes {
        if !demoted.contains_key(n.var.as_str()) {
            out.nodes.push(n.clone());
        }
    }
    let demoted_edges: HashSet<usize> = demoted.values().copied().collect();
    for (i, e) in g.edges.iter().enumerate() {
        if demoted_edges.contains(&i) {
            out.attributes.push(Attribute {
                var: e.source.clone(),
                label: e.label.clone(),
                value: g.concept(&e.target).unwrap_or_default().to_string(),
            });
        } else {
            out.edges.push(e.clone());
        }
    }
    out.attributes.extend(g.attributes.iter().cloned());
    out
}

/// Pluggable entity linker for the `:wiki` slot.
pub trait Linker {
    /// Wiki title for a named entity, or `None` for `-`.
    fn link(&self, concept: &str, name: &[String]) -> Option<String>;
}

/// Links nothing.
pub struct NoLinker;

impl Linker for NoLinker {
    fn link(&self, _concept: &str, _name: &[String]) -> Option<String> {
        None
    }
}

/// Adds a `:wiki` attribute to every named entity lacking one.
pub fn wikify(g: &AmrGraph, linker: &dyn Linker) -> AmrGraph {
    let mut out = g.clone();
    for n in &g.nodes {
        let Some(name) = g.outgoing(&n.var).find(|e| e.label == "name") else {
            continue;
        };
        if g.attributes_of(&n.var).any(|a| a.label == "wiki") {
            continue;
        }
        let parts = name_parts(g, &name.target);
        let value = match linker.link(&n.concept, &parts) {
            Some(title) => format!("\"{}\"", title),
            None => "-".to_string(),
        };
        out.add_attribute(n.var.clone(), "wiki", value);
    }
    out
}

fn name_parts(g: &AmrGraph, name_var: &str) -> Vec<String> {
    let mut ops: Vec<(usize, String)> = g
        .attributes_of(name_var)
        .filter_map(|a| {
            let k = a.label.strip_prefix("op")?.parse::<usize>().ok()?;
            Some((k, a.value.trim_matches('"').to_string()))
        })
        .collect();
    ops.sort();
    ops.into_iter().map(|(_, v)| v).collect()
}

pub const NEGATION_WORDS: &[&str] = &["not", "n't", "never", "no", "without", "none", "nobody", "nothing", "neither", "nor", "cannot"];

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "do", "does", "did", "is", "are", "was", "were", "be", "been", "being", "am", "will", "would", "can", "could",
    "should", "shall", "may", "might", "must", "to", "have", "has", "had", "it", "that", "this", "of",
];

pub fn is_negation(token: &str) -> bool {
    NEGATION_WORDS.contains(&token.to_lowercase().as_str())
}

fn is_content(token: &str) -> bool {
    let lower = token.to_lowercase();
    !is_negation(&lower) && !FUNCTION_WORDS.contains(&lower.as_str()) && token.chars().any(|c| c.is_alphanumeric())
}

/// The word a negation at `i` modifies: nearest following content word,
/// else nearest preceding one.
pub fn modified_word(tokens: &[String], i: usize) -> Option<usize> {
    (i + 1..tokens.len()).find(|&j| is_content(&tokens[j])).or_else(|| (0..i).rev().find(|&j| is_content(&tokens[j])))
}

/// The node a word maps to: concept equal to its lemma, else a concept
/// whose sense-stripped form equals it.
pub fn mapped_node<'g>(g: &'g AmrGraph, lemma: &str) -> Option<&'g Node> {
    g.nodes.iter().find(|n| n.concept == lemma).or_else(|| g.nodes.iter().find(|n| split_sense(&n.concept).0 == lemma))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PolarityReport {
    pub added: usize,
    /// Negations whose modified word mapped to no node.
    pub unmapped: usize,
}

/// Attaches `:polarity -` to the node each negation word modifies.
pub fn add_polarity(tokens: &[String], lemmas: Option<&[String]>, g: &AmrGraph) -> (AmrGraph, PolarityReport) {
    let mut out = g.clone();
    let mut report = PolarityReport::default();
    for i in 0..tokens.len() {
        if !is_negation(&tokens[i]) {
            continue;
        }
        let Some(w) = modified_word(tokens, i) else {
            report.unmapped += 1;
            continue;
        };
        let lemma = lemmas.map_or_else(|| tokens[w].to_lowercase(), |l| l[w].clone());
        let Some(node) = mapped_node(&out, &lemma) else {
            report.unmapped += 1;
            continue;
        };
        let var = node.var.clone();
        if !out.attributes_of(&var).any(|a| a.label == "polarity" && a.value == "-") {
            out.add_attribute(var, "polarity", "-");
            report.added += 1;
        }
    }
    (out, report)
}

const MONTHS: [&str; 12] =
    ["january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november", "december"];

fn month_number(token: &str) -> Option<u32> {
    let lower = token.to_lowercase();
    let lower = lower.trim_end_matches('.');
    MONTHS.iter().position(|m| *m == lower || (lower.len() >= 3 && m.starts_with(lower))).map(|i| i as u32 + 1)
}

/// Placeholder type of an entity concept: uppercase, `-` to `_`, with a
/// trailing `-entity` dropped.
pub fn entity_type(concept: &str) -> String {
    concept.strip_suffix("-entity").unwrap_or(concept).to_uppercase().replace('-', "_")
}

/// One anonymized span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placeholder {
    pub token: String,
    /// Half-open token span in the original sentence.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnonymizationMap {
    pub entries: Vec<Placeholder>,
}

impl AnonymizationMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Placeholder> {
        self.entries.iter().find(|p| p.token == token)
    }

    /// Tab-separated `placeholder start end text` lines.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for p in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.token, p.start, p.end, p.text);
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self, PrepostError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| PrepostError::Sidecar { line: i + 1, message: message.to_string() };
            let cols: Vec<&str> = line.splitn(4, '\t').collect();
            let [token, start, end, text] = cols.as_slice() else {
                return Err(err("expected 4 columns"));
            };
            entries.push(Placeholder {
                token: token.to_string(),
                start: start.parse().map_err(|_| err("bad start"))?,
                end: end.parse().map_err(|_| err("bad end"))?,
                text: text.to_string(),
            });
        }
        Ok(AnonymizationMap { entries })
    }
}

/// Result of anonymizing one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Anonymized {
    pub tokens: Vec<String>,
    /// 1 on placeholder tokens.
    pub flags: Vec<usize>,
    /// For each new token, the original span it covers.
    pub spans: Vec<(usize, usize)>,
    pub graph: Option<AmrGraph>,
    pub map: AnonymizationMap,
    /// Spans dropped because they overlapped an earlier one.
    pub overlaps: usize,
}

impl Anonymized {
    /// Projects a token-aligned column onto the anonymized tokens; a
    /// placeholder takes `fill` applied to its first original value.
    pub fn project<F: Fn(&str) -> String>(&self, column: &[String], fill: F) -> Vec<String> {
        self.spans.iter().zip(&self.flags).map(|(&(s, _), &f)| if f == 1 { fill(&column[s]) } else { column[s].clone() }).collect()
    }
}

struct Candidate {
    start: usize,
    end: usize,
    ty: String,
    /// Entity head variable in training mode.
    var: Option<String>,
}

/// Learned tables for anonymizing and restoring entities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityTable {
    /// Placeholder type to AMR concept.
    pub concepts: BTreeMap<String, String>,
    /// NER tag to placeholder type.
    pub ner: BTreeMap<String, String>,
    /// Lowercased span text to placeholder type.
    pub gazetteer: BTreeMap<String, String>,
}

impl EntityTable {
    /// Learns the tables from training pairs.
    pub fn build<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [String], Option<&'a [String]>, &'a AmrGraph)>,
    {
        let mut concepts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut ner: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut gazetteer: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (tokens, tags, g) in pairs {
            for (c, var) in training_candidates(tokens, g) {
                let concept = g.concept(var.as_deref().unwrap_or_default()).unwrap_or_default();
                *concepts.entry(c.ty.clone()).or_default().entry(concept.to_string()).or_default() += 1;
                let text = tokens[c.start..c.end].join(" ").to_lowercase();
                *gazetteer.entry(text).or_default().entry(c.ty.clone()).or_default() += 1;
                if let Some(tags) = tags {
                    let tag = strip_bio(&tags[c.start]);
                    if tag != "O" {
                        *ner.entry(tag.to_string()).or_default().entry(c.ty.clone()).or_default() += 1;
                    }
                }
            }
        }
        let majority = |m: BTreeMap<String, BTreeMap<String, usize>>| -> BTreeMap<String, String> {
            m.into_iter()
                .map(|(k, c)| {
                    let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(v, _)| v.clone()).expect("nonempty");
                    (k, best)
                })
                .collect()
        };
        EntityTable { concepts: majority(concepts), ner: majority(ner), gazetteer: majority(gazetteer) }
    }

    pub fn concept_for(&self, ty: &str) -> String {
        self.concepts.get(ty).cloned().unwrap_or_else(|| ty.to_lowercase().replace('_', "-"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, map) in [("concept", &self.concepts), ("ner", &self.ner), ("gazetteer", &self.gazetteer)] {
            for (k, v) in map {
                let _ = writeln!(out, "{}\t{}\t{}", section, k, v);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PrepostError> {
        let mut t = EntityTable::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let (map, k, v) = match cols.as_slice() {
                ["concept", k, v] => (&mut t.concepts, k, v),
                ["ner", k, v] => (&mut t.ner, k, v),
                ["gazetteer", k, v] => (&mut t.gazetteer, k, v),
                _ => return Err(PrepostError::Table { line: i + 1, message: line.to_string() }),
            };
            map.insert(k.to_string(), v.to_string());
        }
        Ok(t)
    }
}

fn strip_bio(tag: &str) -> &str {
    tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).unwrap_or(tag)
}

/// Leftmost occurrence of `needle` in `tokens` not overlapping `used`.
fn find_span(tokens: &[String], needle: &[String], used: &[(usize, usize)]) -> Option<(usize, usize)> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    let free = |s: usize, e: usize| used.iter().all(|&(a, b)| e <= a || b <= s);
    let exact = (0..=tokens.len() - needle.len()).find(|&s| tokens[s..s + needle.len()] == *needle && free(s, s + needle.len()));
    let s = exact.or_else(|| {
        (0..=tokens.len() - needle.len())
            .find(|&s| tokens[s..s + needle.len()].iter().zip(needle).all(|(a, b)| a.eq_ignore_ascii_case(b)) && free(s, s + needle.len()))
    })?;
    Some((s, s + needle.len()))
}

/// Token forms an entity attribute value may appear as.
fn value_forms(label: &str, value: &str) -> Vec<String> {
    let v = value.trim_matches('"').to_string();
    let mut forms = vec![v.clone()];
    if label == "month" {
        if let Ok(m) = v.parse::<usize>() {
            if (1..=12).contains(&m) {
                forms.push(MONTHS[m - 1].to_string());
                forms.push(MONTHS[m - 1][..3].to_string());
            }
        }
    }
    if label == "day" {
        for suffix in ["st", "nd", "rd", "th"] {
            forms.push(format!("{}{}", v, suffix));
        }
    }
    forms
}

/// Smallest window of tokens covering one form of every attribute value,
/// with only commas, "of" and "the" in between.
fn find_attribute_span(tokens: &[String], attrs: &[(String, String)], used: &[(usize, usize)]) -> Option<(usize, usize)> {
    let forms: Vec<Vec<String>> = attrs.iter().map(|(l, v)| value_forms(l, v)).collect();
    let matches = |tok: &str| -> Vec<usize> {
        forms.iter().enumerate().filter(|(_, f)| f.iter().any(|x| x.eq_ignore_ascii_case(tok))).map(|(k, _)| k).collect()
    };
    let filler = |tok: &str| matches!(tok.to_lowercase().as_str(), "," | "of" | "the");
    let free = |s: usize, e: usize| used.iter().all(|&(a, b)| e <= a || b <= s);
    let mut best: Option<(usize, usize)> = None;
    for s in 0..tokens.len() {
        if matches(&tokens[s]).is_empty() {
            continue;
        }
        let mut window: Vec<Vec<usize>> = Vec::new();
        for e in s..tokens.len() {
            let m = matches(&tokens[e]);
            if m.is_empty() && !filler(&tokens[e]) {
                break;
            }
            window.push(m);
            if distinct_cover(&window, &mut vec![false; attrs.len()], 0) {
                if free(s, e + 1) && best.is_none_or(|(bs, be)| e + 1 - s < be - bs) {
                    best = Some((s, e + 1));
                }
                break;
            }
        }
    }
    best
}

/// True when every attribute can be matched by its own token, the tokens
/// from `from` on being still unassigned.
fn distinct_cover(window: &[Vec<usize>], taken: &mut Vec<bool>, from: usize) -> bool {
    if taken.iter().all(|&t| t) {
        return true;
    }
    if from == window.len() {
        return false;
    }
    for &k in &window[from] {
        if !taken[k] {
            taken[k] = true;
            let ok = distinct_cover(window, taken, from + 1);
            taken[k] = false;
            if ok {
                return true;
            }
        }
    }
    distinct_cover(window, taken, from + 1)
}

fn training_candidates(tokens: &[String], g: &AmrGraph) -> Vec<(Candidate, Option<String>)> {
    let mut incoming: HashMap<&str, usize> = HashMap::new();
    for e in &g.edges {
        *incoming.entry(e.target.as_str()).or_default() += 1;
    }
    let mut used: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for n in &g.nodes {
        let name = g.outgoing(&n.var).find(|e| e.label == "name").map(|e| e.target.clone());
        let span = if let Some(name_var) = &name {
            if incoming.get(name_var.as_str()) != Some(&1) || g.outgoing(name_var).next().is_some() {
                continue;
            }
            let parts = name_parts(g, name_var);
            find_span(tokens, &parts, &used)
        } else if n.concept.ends_with("-entity") && g.outgoing(&n.var).next().is_none() {
            let attrs: Vec<(String, String)> = g.attributes_of(&n.var).map(|a| (a.label.clone(), a.value.clone())).collect();
            if attrs.is_empty() {
                continue;
            }
            find_attribute_span(tokens, &attrs, &used)
        } else {
            continue;
        };
        if let Some((start, end)) = span {
            used.push((start, end));
            out.push((Candidate { start, end, ty: entity_type(&n.concept), var: Some(n.var.clone()) }, Some(n.var.clone())));
        }
    }
    out
}

/// Replaces entity sub-graphs and their spans with `TYPE_i` placeholders.
pub fn anonymize_pair(tokens: &[String], g: &AmrGraph) -> Anonymized {
    let candidates = training_candidates(tokens, g).into_iter().map(|(c, _)| c).collect();
    let mut a = replace_spans(tokens, candidates, 0);
    let mut graph = g.clone();
    let mut removed: HashSet<String> = HashSet::new();
    // Rewrite each anonymized head: concept becomes the placeholder, its
    // attributes and name sub-graph go away.
    for (var, token) in a.heads.drain(..) {
        if let Some(name) = g.outgoing(&var).find(|e| e.label == "name") {
            removed.insert(name.target.clone());
        }
        for n in &mut graph.nodes {
            if n.var == var {
                n.concept = token.clone();
            }
        }
        graph.attributes.retain(|at| at.var != var);
    }
    graph.nodes.retain(|n| !removed.contains(&n.var));
    graph.edges.retain(|e| !removed.contains(&e.target) && !removed.contains(&e.source));
    graph.attributes.retain(|at| !removed.contains(&at.var));
    Anonymized { tokens: a.tokens, flags: a.flags, spans: a.spans, graph: Some(graph), map: a.map, overlaps: a.overlaps }
}

struct Replaced {
    tokens: Vec<String>,
    flags: Vec<usize>,
    spans: Vec<(usize, usize)>,
    map: AnonymizationMap,
    heads: Vec<(String, String)>,
    overlaps: usize,
}

/// Keeps leftmost-longest non-overlapping candidates and rewrites tokens.
fn replace_spans(tokens: &[String], mut candidates: Vec<Candidate>, mut overlaps: usize) -> Replaced {
    candidates.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        if kept.last().is_some_and(|k| c.start < k.end) {
            overlaps += 1;
            continue;
        }
        kept.push(c);
    }
    let mut counters: HashMap<String, usize> = HashMap::new();
    let mut out = Replaced {
        tokens: Vec::new(),
        flags: Vec::new(),
        spans: Vec::new(),
        map: AnonymizationMap::default(),
        heads: Vec::new(),
        overlaps,
    };
    let mut i = 0;
    let mut next = kept.into_iter().peekable();
    while i < tokens.len() {
        if let Some(c) = next.next_if(|c| c.start == i) {
            let text = tokens[c.start..c.end].join(" ");
            let existing = out
                .map
                .entries
                .iter()
                .find(|p| p.text == text && p.token.rsplit_once('_').map(|x| x.0) == Some(c.ty.as_str()))
                .map(|p| p.token.clone());
            let token = existing.unwrap_or_else(|| {
                let k = counters.entry(c.ty.clone()).or_default();
                let t = format!("{}_{}", c.ty, k);
                *k += 1;
                out.map.entries.push(Placeholder { token: t.clone(), start: c.start, end: c.end, text: text.clone() });
                t
            });
            if let Some(var) = c.var {
                out.heads.push((var, token.clone()));
            }
            out.tokens.push(token);
            out.flags.push(1);
            out.spans.push((c.start, c.end));
            i = c.end;
        } else {
            out.tokens.push(tokens[i].clone());
            out.flags.push(0);
            out.spans.push((i, i + 1));
            i += 1;
        }
    }
    out
}

/// Anonymizes a sentence without a graph using the gazetteer, NER tag runs
/// and a date matcher.
pub fn anonymize_sentence(tokens: &[String], ner: Option<&[String]>, table: &EntityTable) -> Anonymized {
    let mut candidates = Vec::new();
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let max_len = table.gazetteer.keys().map(|k| k.split(' ').count()).max().unwrap_or(0);
    for s in 0..tokens.len() {
        for len in (1..=max_len.min(tokens.len() - s)).rev() {
            if let Some(ty) = table.gazetteer.get(&lower[s..s + len].join(" ")) {
                candidates.push(Candidate { start: s, end: s + len, ty: ty.clone(), var: None });
                break;
            }
        }
    }
    if let Some(tags) = ner {
        let mut s = 0;
        while s < tags.len() {
            let tag = strip_bio(&tags[s]);
            if tag == "O" {
                s += 1;
                continue;
            }
            let mut e = s + 1;
            while e < tags.len() && strip_bio(&tags[e]) == tag && !tags[e].starts_with("B-") {
                e += 1;
            }
            let ty = table.ner.get(tag).cloned().unwrap_or_else(|| tag.to_uppercase());
            candidates.push(Candidate { start: s, end: e, ty, var: None });
            s = e;
        }
    }
    for (s, e) in date_spans(tokens) {
        candidates.push(Candidate { start: s, end: e, ty: "DATE".into(), var: None });
    }
    let r = replace_spans(tokens, candidates, 0);
    Anonymized { tokens: r.tokens, flags: r.flags, spans: r.spans, graph: None, map: r.map, overlaps: r.overlaps }
}

/// Spans like "May 3 , 2019", "3 May 2019" or "May 2019".
fn date_spans(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut s = 0;
    while s < tokens.len() {
        let mut e = s;
        let mut month = false;
        let mut parts = 0;
        while e < tokens.len() {
            let t = &tokens[e];
            if month_number(t).is_some() && t.len() >= 3 && t.chars().next().is_some_and(char::is_uppercase) {
                month = true;
                parts += 1;
            } else if parse_day(t).is_some() || parse_year(t).is_some() {
                parts += 1;
            } else if !(t == "," && parts > 0) {
                break;
            }
            e += 1;
        }
        while e > s && tokens[e - 1] == "," {
            e -= 1;
        }
        if month && parts >= 2 {
            out.push((s, e));
            s = e;
        } else {
            s += 1;
        }
    }
    out
}

fn parse_year(t: &str) -> Option<u32> {
    (t.len() == 4 && t.bytes().all(|b| b.is_ascii_digit())).then(|| t.parse().ok()).flatten()
}

fn parse_day(t: &str) -> Option<u32> {
    let digits = t.trim_end_matches(|c: char| c.is_ascii_alphabetic());
    let suffix = &t[digits.len()..];
    if !matches!(suffix, "" | "st" | "nd" | "rd" | "th") {
        return None;
    }
    match digits.parse::<u32>() {
        Ok(d) if (1..=31).contains(&d) && digits.len() <= 2 => Some(d),
        _ => None,
    }
}

/// Date attributes read off a span, in year, month, day order.
fn date_attributes(text: &str) -> Vec<(String, String)> {
    let mut year = None;
    let mut month = None;
    let mut day = None;
    let mut numbers = Vec::new();
    for t in text.split(' ') {
        if let Some(y) = parse_year(t) {
            year = Some(y);
        } else if let Some(m) = month_number(t).filter(|_| t.len() >= 3) {
            month = Some(m);
        } else if let Some(d) = parse_day(t) {
            numbers.push(d);
        }
    }
    if month.is_none() && numbers.len() >= 2 {
        month = Some(numbers.remove(0));
    }
    if let Some(&d) = numbers.first() {
        day = Some(d);
    }
    let mut out = Vec::new();
    for (label, v) in [("year", year), ("month", month), ("day", day)] {
        if let Some(v) = v {
            out.push((label.to_string(), v.to_string()));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DeanonymizeReport {
    pub restored: usize,
    /// Placeholders without a map entry.
    pub unresolved: usize,
}

/// Regenerates entity sub-graphs from the recorded spans.
pub fn deanonymize(g: &AmrGraph, map: &AnonymizationMap, table: &EntityTable) -> (AmrGraph, DeanonymizeReport) {
    let mut out = g.clone();
    let mut report = DeanonymizeReport::default();
    let taken: HashSet<String> = g.nodes.iter().map(|n| n.var.clone()).collect();
    let mut fresh = 0;
    let mut new_var = |base: &str| loop {
        let v = format!("{}_n{}", base, fresh);
        fresh += 1;
        if !taken.contains(&v) {
            break v;
        }
    };
    for i in 0..g.nodes.len() {
        let concept = g.nodes[i].concept.clone();
        if !is_placeholder(&concept) {
            continue;
        }
        let var = g.nodes[i].var.clone();
        let ty = concept.rsplit_once('_').map(|x| x.0).unwrap_or_default();
        let Some(p) = map.get(&concept) else {
            report.unresolved += 1;
            out.nodes[i].concept = "name".into();
            out.add_attribute(var, "op1", format!("\"{}\"", concept));
            continue;
        };
        report.restored += 1;
        let head = table.concept_for(ty);
        out.nodes[i].concept = head.clone();
        if head.ends_with("-entity") {
            let attrs = date_attributes(&p.text);
            if attrs.is_empty() {
                out.add_attribute(var.clone(), "value", format!("\"{}\"", p.text));
            }
            for (label, value) in attrs {
                out.add_attribute(var.clone(), label, value);
            }
        } else {
            let name = new_var(&var);
            out.add_node(name.clone(), "name");
            out.add_edge(var, "name", name.clone());
            for (k, part) in p.text.split(' ').enumerate() {
                out.add_attribute(name.clone(), format!("op{}", k + 1), format!("\"{}\"", part));
            }
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::penman_decode;
    use crate::evalkit::smatch;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn sense_round_trip() {
        let g = penman_decode("(h / help-01 :ARG0 (b / boy) :ARG1 (w / want-02 :ARG0 b))").unwrap();
        let s = strip_senses(&g);
        assert_eq!(s.concept("h"), Some("help"));
        let table = SenseTable::build([&g]);
        assert_eq!(table.restore("help"), "help-01");
        assert_eq!(table.restore("want"), "want-02");
        assert_eq!(table.restore("boy"), "boy");
        assert_eq!(table.restore("frobnicate"), "frobnicate-01");
        assert_eq!(table.restore("PERSON_0"), "PERSON_0");
        assert_eq!(table.restore("42"), "42");
        assert_eq!(restore_senses(&s, &table), g);
        assert_eq!(SenseTable::from_text(&table.to_text()).unwrap(), table);
    }

    #[test]
    fn majority_sense_wins() {
        let a = penman_decode("(r / run-02)").unwrap();
        let b = penman_decode("(r / run-01)").unwrap();
        let table = SenseTable::build([&a, &b, &a]);
        assert_eq!(table.restore("run"), "run-02");
    }

    #[test]
    fn polarity_rules() {
        let g = penman_decode("(h / help-01 :ARG0 (b / boy))").unwrap();
        let tokens = toks("the boy did not help");
        let (out, r) = add_polarity(&tokens, None, &g);
        assert!(out.attributes.iter().any(|a| a.var == "h" && a.label == "polarity" && a.value == "-"));
        assert_eq!(r.added, 1);
        let (again, r2) = add_polarity(&tokens, None, &out);
        assert_eq!(again, out);
        assert_eq!(r2.added, 0);

        let (same, _) = add_polarity(&toks("the boy helped"), None, &g);
        assert_eq!(same, g);
        let (same, r) = add_polarity(&toks("not everyone"), None, &g);
        assert_eq!(same, g);
        assert_eq!(r.unmapped, 1);
    }

    #[test]
    fn constants_round_trip() {
        let g = penman_decode("(h / help-01 :polarity - :quant 3 :ARG0 (n / name :op1 \"Route\"))").unwrap();
        let p = promote_attributes(&g);
        assert!(p.attributes.is_empty());
        assert_eq!(p.nodes.len(), 5);
        let back = demote_constants(&p);
        assert_eq!(smatch(&back, &g, 4, 0).f1, 1.0);
    }

    #[test]
    fn inverse_edges_are_oriented_and_restored() {
        let g = penman_decode("(p / person :ARG0-of (t / teach-01 :ARG1 (m / math)))").unwrap();
        assert!(g.edges.iter().any(|e| e.source == "t" && e.target == "p"));
        let o = orient_from_root(&g);
        assert!(o.edges.iter().any(|e| e.source == "p" && e.label == "ARG0-of"));
        assert_eq!(normalize_inverse(&o), g);
    }

    #[test]
    fn highway_and_date_anonymization() {
        let tokens = toks("They drove Route 66 on May 3 , 2019 .");
        let g = penman_decode(
            "(d / drive-01 :ARG0 (t / they) :path (h / highway :name (n / name :op1 \"Route\" :op2 \"66\")) \
             :time (d2 / date-entity :year 2019 :month 5 :day 3))",
        )
        .unwrap();
        let a = anonymize_pair(&tokens, &g);
        assert_eq!(a.tokens, toks("They drove HIGHWAY_0 on DATE_0 ."));
        assert_eq!(a.flags, vec![0, 0, 1, 0, 1, 0]);
        let ag = a.graph.clone().unwrap();
        assert_eq!(ag.concept("h"), Some("HIGHWAY_0"));
        assert_eq!(ag.concept("d2"), Some("DATE_0"));
        assert!(ag.node("n").is_none());

        let table = EntityTable::build([(tokens.as_slice(), None, &g)]);
        assert_eq!(table.concept_for("DATE"), "date-entity");
        let (back, r) = deanonymize(&ag, &a.map, &table);
        assert_eq!(r.unresolved, 0);
        assert_eq!(smatch(&back, &g, 4, 0).f1, 1.0);

        let side = a.map.to_sidecar();
        assert_eq!(AnonymizationMap::from_sidecar(&side).unwrap(), a.map);

        let pred = anonymize_sentence(&tokens, None, &table);
        assert_eq!(pred.tokens, a.tokens);
        assert_eq!(pred.map, a.map);
    }

    #[test]
    fn no_entities_is_identity() {
        let tokens = toks("the boy runs");
        let g = penman_decode("(r / run-01 :ARG0 (b / boy))").unwrap();
        let a = anonymize_pair(&tokens, &g);
        assert_eq!(a.tokens, tokens);
        assert!(a.map.is_empty());
        assert_eq!(a.graph.unwrap(), g);
        let (same, _) = deanonymize(&g, &a.map, &EntityTable::default());
        assert_eq!(same, g);
    }

    #[test]
    fn ner_runs_and_unseen_tags() {
        let tokens = toks("Ann met Bob Smith");
        let tags = toks("B-PER O B-PER I-PER");
        let a = anonymize_sentence(&tokens, Some(&tags), &EntityTable::default());
        assert_eq!(a.tokens, toks("PER_0 met PER_1"));
        assert_eq!(a.project(&tags, |_| "NNP".into()), toks("NNP O NNP"));
    }

    #[test]
    fn wiki_hook_defaults_to_dash() {
        let g = penman_decode("(c / city :name (n / name :op1 \"Paris\"))").unwrap();
        let w = wikify(&g, &NoLinker);
        assert!(w.attributes.iter().any(|a| a.var == "c" && a.label == "wiki" && a.value == "-"));
        assert_eq!(wikify(&w, &NoLinker), w);
    }
}
