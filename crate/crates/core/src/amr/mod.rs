//! Concept graphs, the PENMAN codec, and corpus files.

mod corpus;
mod graph;
mod penman;

pub use corpus::{read_corpus, write_corpus, CorpusError, Record};
pub use graph::{validate_graph, AmrGraph, Attribute, Edge, Node, Violation};
pub use penman::{inverse_role, penman_decode, penman_encode, PenmanError};
