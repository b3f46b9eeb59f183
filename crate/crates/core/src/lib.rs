//! Sequence-to-graph transduction for AMR parsing.

#![allow(clippy::needless_range_loop)]

pub mod amr;
pub mod biaffine;
pub mod config;
pub mod decode;
pub mod embed;
pub mod evalkit;
pub mod model;
pub mod numeric;
pub mod par;
pub mod prepost;
pub mod seq2seq;
pub mod train;
pub mod transduce;
