//! Token vocabularies and the encoder/decoder embedding layers.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::numeric::{Embedding, Graph, Linear, NumericError, ParamStore, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{table} id {id} out of range for size {size}")]
    IdOutOfRange { table: &'static str, id: usize, size: usize },
    #[error("empty subword span for word {0}")]
    EmptySpan(usize),
    #[error("subword spans do not partition {rows} rows")]
    BadSpans { rows: usize },
    #[error("vectors line {line}: {message}")]
    Vectors { line: usize, message: String },
    #[error("contextual vectors for {id}: expected {expected} rows of width {dim}, got {got}")]
    ContextualShape { id: String, expected: usize, dim: usize, got: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Token table with the four reserved entries at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::new())
    }
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, most frequent first,
    /// ties broken by token, truncated to `max_size` entries in total.
    pub fn build<'a, I>(tokens: I, min_count: usize, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(t, c)| *c >= min_count && !RESERVED.contains(t)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        kept.truncate(max_size.saturating_sub(RESERVED.len()));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    /// A vocabulary over `tokens` after the reserved entries; reserved names
    /// and duplicates in `tokens` are skipped.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), ids: HashMap::new() };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens) {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

/// Character vocabulary over every character of `words`.
pub fn char_vocabulary<'a, I: IntoIterator<Item = &'a str>>(words: I) -> Vocabulary {
    let chars = words.into_iter().flat_map(|w| w.chars()).map(String::from).collect::<Vec<_>>();
    Vocabulary::build(chars.iter().map(String::as_str), 1, usize::MAX)
}

pub fn char_ids(vocab: &Vocabulary, word: &str) -> Vec<usize> {
    let ids: Vec<usize> = word.chars().map(|c| vocab.id(c.encode_utf8(&mut [0; 4]))).collect();
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

/// Suffix-rule part-of-speech guess used when no tags are supplied.
pub fn suffix_pos(token: &str) -> &'static str {
    let lower = token.to_lowercase();
    if token.chars().all(|c| c.is_ascii_punctuation()) {
        return ".";
    }
    if token.chars().any(|c| c.is_ascii_digit()) {
        return "CD";
    }
    if matches!(lower.as_str(), "the" | "a" | "an" | "this" | "that" | "these" | "those") {
        return "DT";
    }
    if matches!(lower.as_str(), "not" | "n't" | "never") {
        return "RB";
    }
    if token.chars().next().is_some_and(char::is_uppercase) {
        return "NNP";
    }
    let ends = |s: &[&str]| s.iter().any(|x| lower.len() > x.len() + 1 && lower.ends_with(x));
    if ends(&["ly"]) {
        "RB"
    } else if ends(&["ing"]) {
        "VBG"
    } else if ends(&["ed"]) {
        "VBD"
    } else if ends(&["tion", "ment", "ness", "ity", "er"]) {
        "NN"
    } else if ends(&["able", "ous", "ful", "ive", "al"]) {
        "JJ"
    } else if ends(&["s"]) {
        "NNS"
    } else {
        "<unk>"
    }
}

/// Reads whitespace text vectors, one `token v1 .. vD` per line.
pub fn read_vectors(text: &str, dim: usize) -> Result<HashMap<String, Vec<f64>>, EmbedError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EmbedError::Vectors { line: i + 1, message: e.to_string() })?;
        if values.len() != dim {
            return Err(EmbedError::Vectors { line: i + 1, message: format!("expected {} values, got {}", dim, values.len()) });
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

/// Embedding table for `vocab`: pretrained rows where available, uniform
/// in [-0.1, 0.1] elsewhere.
pub fn init_table<R: Rng>(vocab: &Vocabulary, dim: usize, vectors: Option<&HashMap<String, Vec<f64>>>, rng: &mut R) -> Tensor {
    let mut t = Tensor::uniform(&[vocab.len(), dim], 0.1, rng);
    if let Some(vectors) = vectors {
        for (id, token) in vocab.tokens.iter().enumerate() {
            if let Some(v) = vectors.get(token) {
                t.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(v);
            }
        }
    }
    t
}

/// Reads per-sentence contextual vectors: `# ::id <id>` followed by one
/// line of floats per word.
pub fn read_contextual(text: &str, dim: usize) -> Result<HashMap<String, Tensor>, EmbedError> {
    let mut out = HashMap::new();
    let mut current: Option<(String, Vec<f64>)> = None;
    let finish = |cur: Option<(String, Vec<f64>)>, out: &mut HashMap<String, Tensor>| {
        if let Some((id, data)) = cur {
            let rows = data.len() / dim.max(1);
            out.insert(id, Tensor::matrix(rows, dim, data));
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(id) = line.strip_prefix("# ::id") {
            finish(current.take(), &mut out);
            current = Some((id.trim().to_string(), Vec::new()));
        } else if !line.is_empty() {
            let Some((_, data)) = current.as_mut() else {
                return Err(EmbedError::Vectors { line: i + 1, message: "values before any id".into() });
            };
            let row = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::Vectors { line: i + 1, message: e.to_string() })?;
            if row.len() != dim {
                return Err(EmbedError::Vectors { line: i + 1, message: format!("expected {} values, got {}", dim, row.len()) });
            }
            data.extend(row);
        }
    }
    finish(current, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Average,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" | "mean" => Ok(Pooling::Average),
            "max" => Ok(Pooling::Max),
            _ => Err(format!("unknown pooling {}", s)),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Average => "average",
            Pooling::Max => "max",
        })
    }
}

/// Collapses subword rows to word rows. `spans` are half-open row ranges
/// that must cover the rows in order.
pub fn pool_subwords(states: &Tensor, spans: &[(usize, usize)], mode: Pooling) -> Result<Tensor, EmbedError> {
    let (rows, cols) = (states.rows(), states.cols());
    let mut next = 0;
    let mut out = Vec::with_capacity(spans.len() * cols);
    for (w, &(start, end)) in spans.iter().enumerate() {
        if end <= start {
            return Err(EmbedError::EmptySpan(w));
        }
        if start != next || end > rows {
            return Err(EmbedError::BadSpans { rows });
        }
        next = end;
        for j in 0..cols {
            let column = (start..end).map(|r| states.get(r, j));
            out.push(match mode {
                Pooling::Average => column.sum::<f64>() / (end - start) as f64,
                Pooling::Max => column.fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    if next != rows {
        return Err(EmbedError::BadSpans { rows });
    }
    Ok(Tensor::matrix(spans.len(), cols, out))
}

/// Width-`width` convolution over character embeddings, max-pooled over
/// positions, then tanh.
#[derive(Clone, Copy, Debug)]
pub struct CharCnn {
    pub chars: Embedding,
    pub conv: Linear,
    pub width: usize,
}

impl CharCnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        num_chars: usize,
        char_dim: usize,
        filters: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let chars = Embedding::new(store, &format!("{name}.chars"), num_chars, char_dim, rng)?;
        let conv = Linear::new(store, &format!("{name}.conv"), width * char_dim, filters, true, rng)?;
        Ok(CharCnn { chars, conv, width })
    }

    pub fn dim(&self) -> usize {
        self.conv.output
    }

    /// One `[1, filters]` row per word.
    pub fn forward(&self, g: &mut Graph, words: &[Vec<usize>]) -> Result<Var, EmbedError> {
        let mut window_rows: Vec<Vec<usize>> = vec![Vec::new(); self.width];
        let mut spans = Vec::with_capacity(words.len());
        for word in words {
            let mut ids = word.clone();
            if ids.is_empty() {
                ids.push(UNK);
            }
            while ids.len() < self.width {
                ids.push(PAD);
            }
            if let Some(&bad) = ids.iter().find(|&&c| c >= self.chars.vocab) {
                return Err(EmbedError::IdOutOfRange { table: "char", id: bad, size: self.chars.vocab });
            }
            let start = window_rows[0].len();
            for s in 0..=ids.len() - self.width {
                for (k, col) in window_rows.iter_mut().enumerate() {
                    col.push(ids[s + k]);
                }
            }
            spans.push((start, window_rows[0].len()));
        }
        let shifted: Vec<Var> = window_rows.iter().map(|ids| self.chars.lookup(g, ids)).collect();
        let windows = g.concat_cols(&shifted);
        let conv = self.conv.forward(g, windows);
        let pooled: Vec<Var> = spans
            .iter()
            .map(|&(s, e)| {
                let rows = g.slice_rows(conv, s, e);
                g.max_rows(rows)
            })
            .collect();
        let out = g.concat_rows(&pooled);
        Ok(g.tanh(out))
    }
}

/// Dimensions of one side's embedding layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedDims {
    pub word: usize,
    pub pos: usize,
    /// Anonymization flag width on the encoder, index width on the decoder.
    pub extra: usize,
    pub char_dim: usize,
    pub filters: usize,
    pub width: usize,
    /// Contextual vector width; zero disables the slot.
    pub contextual: usize,
}

impl EmbedDims {
    pub fn total(&self) -> usize {
        self.word + self.pos + self.extra + self.filters + self.contextual
    }
}

/// Per-token ids for one embedding row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenFeatures {
    pub word: usize,
    pub pos: usize,
    /// Anonymization flag (encoder) or node index (decoder).
    pub extra: usize,
    pub chars: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// Concatenated word, POS, flag-or-index, CharCNN and optional contextual
/// embeddings.
#[derive(Clone, Copy, Debug)]
pub struct Embedder {
    pub side: Side,
    pub dims: EmbedDims,
    pub words: Embedding,
    pub pos: Embedding,
    pub extra: Embedding,
    pub chars: CharCnn,
}

/// Sizes of the tables an [`Embedder`] indexes into.
#[derive(Clone, Copy, Debug)]
pub struct TableSizes {
    pub words: usize,
    pub pos: usize,
    pub extra: usize,
    pub chars: usize,
}

impl Embedder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        side: Side,
        dims: EmbedDims,
        sizes: TableSizes,
        word_table: Tensor,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        debug_assert_eq!(word_table.shape(), &[sizes.words, dims.word]);
        let words = Embedding::from_tensor(store, &format!("{name}.words"), word_table)?;
        let pos = Embedding::new(store, &format!("{name}.pos"), sizes.pos, dims.pos, rng)?;
        let extra = Embedding::new(store, &format!("{name}.extra"), sizes.extra, dims.extra, rng)?;
        let chars = CharCnn::new(store, &format!("{name}.charcnn"), sizes.chars, dims.char_dim, dims.filters, dims.width, rng)?;
        Ok(Embedder { side, dims, words, pos, extra, chars })
    }

    pub fn dim(&self) -> usize {
        self.dims.total()
    }

    fn check(&self, table: &'static str, e: &Embedding, ids: &[usize]) -> Result<(), EmbedError> {
        match ids.iter().find(|&&i| i >= e.vocab) {
            Some(&id) => Err(EmbedError::IdOutOfRange { table, id, size: e.vocab }),
            None => Ok(()),
        }
    }

    /// `[features.len(), dim]` embedding rows. `contextual` must have one
    /// row per token of the configured width when the slot is enabled.
    pub fn forward(&self, g: &mut Graph, features: &[TokenFeatures], contextual: Option<&Tensor>) -> Result<Var, EmbedError> {
        let words: Vec<usize> = features.iter().map(|f| f.word).collect();
        let pos: Vec<usize> = features.iter().map(|f| f.pos).collect();
        let extra: Vec<usize> = features.iter().map(|f| f.extra).collect();
        self.check("word", &self.words, &words)?;
        self.check("pos", &self.pos, &pos)?;
        self.check(
            match self.side {
                Side::Encoder => "anonymization",
                Side::Decoder => "index",
            },
            &self.extra,
            &extra,
        )?;
        let chars: Vec<Vec<usize>> = features.iter().map(|f| f.chars.clone()).collect();

        let mut parts =
            vec![self.words.lookup(g, &words), self.pos.lookup(g, &pos), self.extra.lookup(g, &extra), self.chars.forward(g, &chars)?];
        if self.dims.contextual > 0 && self.side == Side::Encoder {
            let t = match contextual {
                Some(t) if t.rows() == features.len() && t.cols() == self.dims.contextual => t.clone(),
                Some(t) => {
                    return Err(EmbedError::ContextualShape {
                        id: String::new(),
                        expected: features.len(),
                        dim: self.dims.contextual,
                        got: format!("{:?}", t.shape()),
                    })
                }
                None => Tensor::zeros(&[features.len(), self.dims.contextual]),
            };
            parts.push(g.constant(t));
        }
        Ok(g.concat_cols(&parts))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numeric::check_gradients;

    #[test]
    fn vocabulary_orders_by_count_then_token() {
        let v = Vocabulary::build(["b", "a", "b", "c", "a", "b"], 2, 100);
        assert_eq!(v.entries(), &["b".to_string(), "a".to_string()]);
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.token(BOS), "<bos>");
        let round = Vocabulary::from_tokens(v.entries().to_vec());
        assert_eq!(round, v);
    }

    #[test]
    fn pooling_average_and_max() {
        let s = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0], vec![7.0, 2.0]]);
        let avg = pool_subwords(&s, &[(0, 2), (2, 3)], Pooling::Average).unwrap();
        assert_eq!(avg.data(), &[2.0, 2.0, 7.0, 2.0]);
        let max = pool_subwords(&s, &[(0, 2), (2, 3)], Pooling::Max).unwrap();
        assert_eq!(max.data(), &[3.0, 5.0, 7.0, 2.0]);
        assert!(pool_subwords(&s, &[(0, 0), (0, 3)], Pooling::Max).is_err());
        assert!(pool_subwords(&s, &[(0, 2)], Pooling::Max).is_err());
    }

    #[test]
    fn pooling_matches_direct_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Tensor::uniform(&[7, 5], 1.0, &mut rng);
        let spans = [(0, 1), (1, 4), (4, 5), (5, 7)];
        let max = pool_subwords(&s, &spans, Pooling::Max).unwrap();
        let avg = pool_subwords(&s, &spans, Pooling::Average).unwrap();
        for (w, &(a, b)) in spans.iter().enumerate() {
            for j in 0..5 {
                let col: Vec<f64> = (a..b).map(|r| s.get(r, j)).collect();
                assert_eq!(max.get(w, j), col.iter().cloned().fold(f64::MIN, f64::max));
                if b - a == 1 {
                    assert_eq!(avg.get(w, j), max.get(w, j));
                }
            }
        }
    }

    #[test]
    fn suffix_tagger_rules() {
        assert_eq!(suffix_pos("quickly"), "RB");
        assert_eq!(suffix_pos("running"), "VBG");
        assert_eq!(suffix_pos("Paris"), "NNP");
        assert_eq!(suffix_pos("42"), "CD");
        assert_eq!(suffix_pos("."), ".");
        assert_eq!(suffix_pos("cat"), "<unk>");
    }

    #[test]
    fn vectors_and_contextual_readers() {
        let v = read_vectors("cat 0.5 1\ndog 2 3\n", 2).unwrap();
        assert_eq!(v["dog"], vec![2.0, 3.0]);
        assert!(read_vectors("cat 1\n", 2).is_err());
        let c = read_contextual("# ::id s1\n1 2\n3 4\n\n# ::id s2\n5 6\n", 2).unwrap();
        assert_eq!(c["s1"].shape(), &[2, 2]);
        assert_eq!(c["s2"].data(), &[5.0, 6.0]);
    }

    fn embedder(store: &mut ParamStore, dims: EmbedDims) -> Embedder {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sizes = TableSizes { words: 10, pos: 5, extra: 2, chars: 8 };
        let table = init_table(&Vocabulary::from_tokens((0..6).map(|i| i.to_string()).collect()), dims.word, None, &mut rng);
        Embedder::new(store, "enc", Side::Encoder, dims, sizes, table, &mut rng).unwrap()
    }

    fn feat(word: usize, chars: Vec<usize>) -> TokenFeatures {
        TokenFeatures { word, pos: 1, extra: 0, chars }
    }

    #[test]
    fn encoder_row_width_matches_table_dims() {
        let dims = EmbedDims { word: 300, pos: 100, extra: 50, char_dim: 16, filters: 100, width: 3, contextual: 0 };
        assert_eq!(dims.total(), 550);
        let mut store = ParamStore::new();
        let e = embedder(&mut store, dims);
        let mut g = Graph::new(&store);
        let out = e.forward(&mut g, &[feat(4, vec![4]), feat(UNK, vec![5, 6, 7, 4]), feat(4, vec![4])], None).unwrap();
        let t = g.value(out);
        assert_eq!(t.shape(), &[3, 550]);
        assert_eq!(t.row_slice(0), t.row_slice(2));
        assert!(t.is_finite());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let dims = EmbedDims { word: 4, pos: 2, extra: 2, char_dim: 3, filters: 4, width: 3, contextual: 0 };
        let mut store = ParamStore::new();
        let e = embedder(&mut store, dims);
        let mut g = Graph::new(&store);
        assert!(e.forward(&mut g, &[feat(99, vec![4])], None).is_err());
        assert!(e.forward(&mut g, &[feat(4, vec![99])], None).is_err());
    }

    #[test]
    fn char_cnn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cnn = CharCnn::new(&mut store, "cnn", 6, 3, 4, 3, &mut rng).unwrap();
        let r = check_gradients(&store, 1e-5, 32, |g| {
            let out = cnn.forward(g, &[vec![4], vec![2, 3, 4, 5, 1]]).unwrap();
            let sq = g.mul(out, out);
            g.sum(sq)
        });
        assert!(r.max_rel_error < 1e-5, "{:?}", r);
    }
}
