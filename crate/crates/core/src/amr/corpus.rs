//! Blank-line separated corpus records with `# ::key value` metadata.

use std::fmt::Write;

use thiserror::Error;

use super::graph::AmrGraph;
use super::penman::{penman_decode, penman_encode, PenmanError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {record} (line {line}): {source}")]
    Penman {
        record: usize,
        line: usize,
        #[source]
        source: PenmanError,
    },
    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
}

/// One corpus record: sentence metadata and an optional graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    pub id: Option<String>,
    pub snt: Option<String>,
    pub tokens: Vec<String>,
    pub pos: Option<Vec<String>>,
    pub lemmas: Option<Vec<String>>,
    pub ner: Option<Vec<String>>,
    /// Metadata keys not interpreted by the reader, in input order.
    pub extra: Vec<(String, String)>,
    pub graph: Option<AmrGraph>,
}

impl Record {
    pub fn new(tokens: Vec<String>, graph: Option<AmrGraph>) -> Self {
        Record { snt: Some(tokens.join(" ")), tokens, graph, ..Default::default() }
    }
}

fn split_columns(value: &str) -> Vec<String> {
    value.split_whitespace().map(str::to_string).collect()
}

/// Reads every record of a corpus text.
pub fn read_corpus(text: &str) -> Result<Vec<Record>, CorpusError> {
    let mut records = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                records.push(parse_record(&block, records.len() + 1)?);
                block.clear();
            }
        } else {
            block.push((lineno + 1, line));
        }
    }
    if !block.is_empty() {
        records.push(parse_record(&block, records.len() + 1)?);
    }
    Ok(records)
}

fn parse_record(lines: &[(usize, &str)], record: usize) -> Result<Record, CorpusError> {
    let mut r = Record::default();
    let mut graph_text = String::new();
    let mut graph_line = 0;
    for &(lineno, line) in lines {
        let trimmed = line.trim_start();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if graph_line != 0 {
                return Err(CorpusError::Malformed { record, message: format!("comment after graph at line {}", lineno) });
            }
            let comment = comment.trim();
            let Some(meta) = comment.strip_prefix("::") else {
                continue;
            };
            let (key, value) = match meta.split_once(char::is_whitespace) {
                Some((k, v)) => (k, v.trim()),
                None => (meta, ""),
            };
            match key {
                "id" => r.id = Some(value.to_string()),
                "snt" => r.snt = Some(value.to_string()),
                "tok" => r.tokens = split_columns(value),
                "pos" => r.pos = Some(split_columns(value)),
                "lemma" | "lemmas" => r.lemmas = Some(split_columns(value)),
                "ner" => r.ner = Some(split_columns(value)),
                _ => r.extra.push((key.to_string(), value.to_string())),
            }
        } else {
            if graph_line == 0 {
                graph_line = lineno;
            }
            graph_text.push_str(line);
            graph_text.push('\n');
        }
    }
    if r.tokens.is_empty() {
        if let Some(snt) = &r.snt {
            r.tokens = split_columns(snt);
        }
    }
    for (name, column) in [("pos", &r.pos), ("lemma", &r.lemmas), ("ner", &r.ner)] {
        if let Some(c) = column {
            if c.len() != r.tokens.len() {
                return Err(CorpusError::Malformed {
                    record,
                    message: format!("{} column has {} entries for {} tokens", name, c.len(), r.tokens.len()),
                });
            }
        }
    }
    if !graph_text.is_empty() {
        let g = penman_decode(&graph_text).map_err(|source| {
            let offset = match &source {
                PenmanError::Syntax { line, .. }
                | PenmanError::DuplicateVariable { line, .. }
                | PenmanError::UndefinedVariable { line, .. } => line - 1,
                PenmanError::Invalid(_) => 0,
            };
            CorpusError::Penman { record, line: graph_line + offset, source }
        })?;
        r.graph = Some(g);
    }
    Ok(r)
}

/// Writes records in corpus format; graphs are PENMAN-encoded.
pub fn write_corpus(records: &[Record]) -> Result<String, PenmanError> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if let Some(id) = &r.id {
            let _ = writeln!(out, "# ::id {}", id);
        }
        if let Some(snt) = &r.snt {
            let _ = writeln!(out, "# ::snt {}", snt);
        }
        if !r.tokens.is_empty() {
            let _ = writeln!(out, "# ::tok {}", r.tokens.join(" "));
        }
        if let Some(pos) = &r.pos {
            let _ = writeln!(out, "# ::pos {}", pos.join(" "));
        }
        if let Some(lemmas) = &r.lemmas {
            let _ = writeln!(out, "# ::lemma {}", lemmas.join(" "));
        }
        if let Some(ner) = &r.ner {
            let _ = writeln!(out, "# ::ner {}", ner.join(" "));
        }
        for (k, v) in &r.extra {
            let _ = writeln!(out, "# ::{} {}", k, v);
        }
        if let Some(g) = &r.graph {
            out.push_str(&penman_encode(g)?);
            out.push('\n');
        }
    }
    Ok(out)
}
