//! The full parser network, its inputs, and the checkpoint format.

use std::collections::{HashMap, HashSet};
use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::amr::{AmrGraph, Record};
use crate::biaffine::Biaffine;
use crate::config::{Config, ConfigError};
use crate::embed::{
    char_ids, char_vocabulary, init_table, pool_subwords, suffix_pos, EmbedDims, EmbedError, Embedder, Side, TableSizes, TokenFeatures,
    Vocabulary, BOS, UNK,
};
use crate::numeric::{Graph, NumericError, ParamStore, Tensor, Var};
use crate::prepost::{
    anonymize_pair, anonymize_sentence, orient_from_root, promote_attributes, strip_senses, AnonymizationMap, Anonymized, EntityTable,
    PrepostError, SenseTable,
};
use crate::seq2seq::{Channels, Decoder, DecoderState, Encoder, SourceContext};
use crate::transduce::{graph_to_tree, linearize, CopySource, LinearizedTarget, SourceTokens, TransduceError};

const MAGIC: &[u8; 4] = b"S2G1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prepost(#[from] PrepostError),
    #[error(transparent)]
    Transduce(#[from] TransduceError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("record {0} has no graph")]
    MissingGraph(usize),
}

/// One sentence as the network sees it: anonymized tokens and their
/// token-aligned columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: Option<String>,
    pub tokens: Vec<String>,
    /// Lemma per token; placeholders are their own lemma.
    pub lemmas: Vec<String>,
    pub pos: Vec<String>,
    pub flags: Vec<usize>,
    pub map: AnonymizationMap,
    /// One row per anonymized token when contextual vectors are in use.
    pub contextual: Option<Tensor>,
}

impl Sentence {
    pub fn source(&self) -> SourceTokens<'_> {
        SourceTokens::new(&self.tokens, Some(&self.lemmas))
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A training pair after preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sentence: Sentence,
    pub target: LinearizedTarget,
    /// The unprocessed reference graph.
    pub reference: AmrGraph,
}

/// Outcome of preprocessing a corpus.
#[derive(Clone, Debug, Default)]
pub struct Prepared {
    pub examples: Vec<Example>,
    /// Records skipped because their graph could not become a tree.
    pub skipped: Vec<(usize, String)>,
    /// Total anonymization overlaps dropped.
    pub overlaps: usize,
}

fn build_sentence(
    record: &Record,
    a: &Anonymized,
    contextual: Option<&HashMap<String, Tensor>>,
    config: &Config,
) -> Result<Sentence, ModelError> {
    let lemmas_src: Vec<String> = match &record.lemmas {
        Some(l) => l.clone(),
        None => record.tokens.iter().map(|t| t.to_lowercase()).collect(),
    };
    let pos_src: Vec<String> = match &record.pos {
        Some(p) => p.clone(),
        None => record.tokens.iter().map(|t| suffix_pos(t).to_string()).collect(),
    };
    let mut lemmas = a.project(&lemmas_src, str::to_string);
    for (i, &f) in a.flags.iter().enumerate() {
        if f == 1 {
            lemmas[i] = a.tokens[i].clone();
        }
    }
    let pos = a.project(&pos_src, str::to_string);
    let contextual = if config.bert_dim > 0 {
        match (contextual, &record.id) {
            (Some(table), Some(id)) => match table.get(id) {
                Some(t) => Some(pool_subwords(t, &a.spans, config.pooling)?),
                None => None,
            },
            _ => None,
        }
    } else {
        None
    };
    Ok(Sentence { id: record.id.clone(), tokens: a.tokens.clone(), lemmas, pos, flags: a.flags.clone(), map: a.map.clone(), contextual })
}

/// Graph-side preprocessing of an anonymized graph into the target
/// sequence.
pub fn target_of(graph: &AmrGraph, sentence: &Sentence) -> Result<LinearizedTarget, TransduceError> {
    let mut g = strip_senses(graph);
    g.attributes.retain(|a| a.label != "wiki");
    let g = orient_from_root(&promote_attributes(&g));
    let tree = graph_to_tree(&g)?;
    Ok(linearize(&tree, Some(sentence.source())))
}

/// Preprocesses training records. Records without graphs are an error;
/// graphs that cannot be converted to trees are skipped and reported.
pub fn prepare_training(records: &[Record], contextual: Option<&HashMap<String, Tensor>>, config: &Config) -> Result<Prepared, ModelError> {
    let mut out = Prepared::default();
    for (i, r) in records.iter().enumerate() {
        let graph = r.graph.as_ref().ok_or(ModelError::MissingGraph(i + 1))?;
        let a = anonymize_pair(&r.tokens, graph);
        out.overlaps += a.overlaps;
        let sentence = build_sentence(r, &a, contextual, config)?;
        let anon = a.graph.as_ref().expect("training anonymization keeps the graph");
        match target_of(anon, &sentence) {
            Ok(target) => out.examples.push(Example { sentence, target, reference: graph.clone() }),
            Err(e) => out.skipped.push((i + 1, e.to_string())),
        }
    }
    Ok(out)
}

/// Entity tables learned from the records that carry graphs.
pub fn learn_entities(records: &[Record]) -> EntityTable {
    EntityTable::build(records.iter().filter_map(|r| r.graph.as_ref().map(|g| (r.tokens.as_slice(), r.ner.as_deref(), g))))
}

/// Held-out examples: sentences are preprocessed as at parse time, with
/// the learned entity table rather than the gold graph, so evaluating
/// them measures the whole pipeline.
pub fn prepare_evaluation(
    records: &[Record],
    entities: &EntityTable,
    contextual: Option<&HashMap<String, Tensor>>,
    config: &Config,
) -> Result<Prepared, ModelError> {
    let mut out = prepare_training(records, contextual, config)?;
    let skipped: HashSet<usize> = out.skipped.iter().map(|(i, _)| *i).collect();
    let kept = records.iter().enumerate().filter(|(i, _)| !skipped.contains(&(i + 1)));
    for (ex, (_, r)) in out.examples.iter_mut().zip(kept) {
        ex.sentence = prepare_sentence(r, entities, contextual, config)?;
    }
    Ok(out)
}

/// Preprocesses a sentence for parsing with the learned entity table.
pub fn prepare_sentence(
    record: &Record,
    entities: &EntityTable,
    contextual: Option<&HashMap<String, Tensor>>,
    config: &Config,
) -> Result<Sentence, ModelError> {
    let a = anonymize_sentence(&record.tokens, record.ner.as_deref(), entities);
    build_sentence(record, &a, contextual, config)
}

/// Token tables of a model.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabs {
    pub source: Vocabulary,
    pub target: Vocabulary,
    pub pos: Vocabulary,
    pub chars: Vocabulary,
    pub labels: Vocabulary,
}

impl Vocabs {
    /// Builds every table from training examples only.
    pub fn build(examples: &[Example], config: &Config) -> Self {
        let words: Vec<String> = examples.iter().flat_map(|e| e.sentence.tokens.iter().map(|t| t.to_lowercase())).collect();
        let concepts = examples.iter().flat_map(|e| e.target.concepts.iter().map(String::as_str));
        let pos = examples.iter().flat_map(|e| e.sentence.pos.iter().map(String::as_str));
        let labels = examples.iter().flat_map(|e| e.target.labels.iter().map(String::as_str));
        let char_words = examples.iter().flat_map(|e| e.sentence.tokens.iter().chain(&e.target.concepts).map(String::as_str));
        Vocabs {
            source: Vocabulary::build(words.iter().map(String::as_str), config.min_count, config.encoder_vocab_size),
            target: Vocabulary::build(concepts, config.min_count, config.decoder_vocab_size),
            pos: Vocabulary::build(pos, 1, usize::MAX),
            chars: char_vocabulary(char_words),
            labels: Vocabulary::build(labels, 1, usize::MAX),
        }
    }
}

/// Every layer of the parser.
#[derive(Clone, Debug)]
pub struct Network {
    pub source_embed: Embedder,
    pub target_embed: Embedder,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub biaffine: Biaffine,
}

/// Parameters, vocabularies and learned pre/post-processing tables.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub vocabs: Vocabs,
    pub senses: SenseTable,
    pub entities: EntityTable,
    pub store: ParamStore,
    pub net: Network,
}

/// Encoder output ready for decoding.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub context: SourceContext,
    pub state: DecoderState,
}

fn assemble(
    config: &Config,
    vocabs: &Vocabs,
    word_vectors: Option<&HashMap<String, Vec<f64>>>,
) -> Result<(ParamStore, Network), ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let source_dims = EmbedDims {
        word: config.glove_dim,
        pos: config.pos_dim,
        extra: config.anonymization_dim,
        char_dim: config.char_dim,
        filters: config.num_filters,
        width: config.ngram_filter_size,
        contextual: config.bert_dim,
    };
    let target_dims = EmbedDims { extra: config.index_dim, contextual: 0, ..source_dims };
    let source_table = init_table(&vocabs.source, config.glove_dim, word_vectors, &mut rng);
    let target_table = init_table(&vocabs.target, config.glove_dim, word_vectors, &mut rng);
    let source_embed = Embedder::new(
        &mut store,
        "src_embed",
        Side::Encoder,
        source_dims,
        TableSizes { words: vocabs.source.len(), pos: vocabs.pos.len(), extra: 2, chars: vocabs.chars.len() },
        source_table,
        &mut rng,
    )?;
    let target_embed = Embedder::new(
        &mut store,
        "tgt_embed",
        Side::Decoder,
        target_dims,
        TableSizes { words: vocabs.target.len(), pos: vocabs.pos.len(), extra: config.index_max + 1, chars: vocabs.chars.len() },
        target_table,
        &mut rng,
    )?;
    let encoder = Encoder::new(&mut store, "encoder", source_embed.dim(), config.encoder_hidden, config.encoder_layers, &mut rng)?;
    let decoder = Decoder::new(
        &mut store,
        "decoder",
        target_embed.dim(),
        2 * config.encoder_hidden,
        config.decoder_hidden,
        config.decoder_layers,
        config.attention_size(),
        vocabs.target.len(),
        &mut rng,
    )?;
    let biaffine = Biaffine::new(
        &mut store,
        "biaffine",
        config.decoder_hidden,
        config.edge_hidden,
        config.label_hidden,
        vocabs.labels.len(),
        &mut rng,
    )?;
    Ok((store, Network { source_embed, target_embed, encoder, decoder, biaffine }))
}

impl Model {
    /// A freshly initialized model over the training examples.
    pub fn new(
        config: Config,
        examples: &[Example],
        word_vectors: Option<&HashMap<String, Vec<f64>>>,
        entities: EntityTable,
    ) -> Result<Self, ModelError> {
        let vocabs = Vocabs::build(examples, &config);
        let senses = SenseTable::build(examples.iter().map(|e| &e.reference));
        let (store, net) = assemble(&config, &vocabs, word_vectors)?;
        Ok(Model { config, vocabs, senses, entities, store, net })
    }

    pub fn channels(&self) -> Channels {
        Channels { source_copy: self.config.source_copy, target_copy: self.config.target_copy }
    }

    pub fn source_features(&self, s: &Sentence) -> Vec<TokenFeatures> {
        (0..s.tokens.len())
            .map(|i| TokenFeatures {
                word: self.vocabs.source.id(&s.tokens[i].to_lowercase()),
                pos: self.vocabs.pos.id(&s.pos[i]),
                extra: s.flags[i],
                chars: char_ids(&self.vocabs.chars, &s.tokens[i]),
            })
            .collect()
    }

    /// Decoder input for the first step.
    pub fn bos_features(&self) -> TokenFeatures {
        TokenFeatures { word: BOS, pos: BOS, extra: 0, chars: vec![BOS] }
    }

    /// Decoder input for an emitted node. Its POS is the copied source
    /// word's, the antecedent's for a target copy, UNK otherwise.
    pub fn node_features(&self, s: &Sentence, concept: &str, index: usize, source: &CopySource, prior: &[CopySource]) -> TokenFeatures {
        let mut src = source;
        while let CopySource::Target(j) = src {
            src = &prior[j - 1];
        }
        let pos = match src {
            CopySource::Source(i) => self.vocabs.pos.id(&s.pos[*i]),
            _ => UNK,
        };
        TokenFeatures {
            word: self.vocabs.target.id(concept),
            pos,
            extra: index.min(self.config.index_max),
            chars: char_ids(&self.vocabs.chars, concept),
        }
    }

    /// Decoder inputs for teacher forcing: BOS then every reference node.
    pub fn target_features(&self, s: &Sentence, t: &LinearizedTarget) -> Vec<TokenFeatures> {
        let mut out = Vec::with_capacity(t.len() + 1);
        out.push(self.bos_features());
        for k in 0..t.len() {
            out.push(self.node_features(s, &t.concepts[k], t.indices[k], &t.copy_sources[k], &t.copy_sources[..k]));
        }
        out
    }

    /// Embeds and encodes a nonempty sentence.
    pub fn encode(&self, g: &mut Graph, s: &Sentence, dropout: f64) -> Result<Encoded, ModelError> {
        let feats = self.source_features(s);
        let x = self.net.source_embed.forward(g, &feats, s.contextual.as_ref())?;
        let x = g.dropout(x, dropout);
        let enc = self.net.encoder.encode(g, x, dropout);
        let context = self.net.decoder.source_context(g, &enc);
        let state = self.net.decoder.initial_state(g, &enc);
        Ok(Encoded { context, state })
    }

    /// `[features.len(), dim]` decoder input rows.
    pub fn embed_targets(&self, g: &mut Graph, feats: &[TokenFeatures], dropout: f64) -> Result<Var, ModelError> {
        let x = self.net.target_embed.forward(g, feats, None)?;
        Ok(g.dropout(x, dropout))
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.config.to_text())?;
        for v in self.vocab_list() {
            write_u64(w, v.entries().len() as u64)?;
            for t in v.entries() {
                write_str(w, t)?;
            }
        }
        write_str(w, &self.senses.to_text())?;
        write_str(w, &self.entities.to_text())?;
        write_u64(w, self.store.len() as u64)?;
        for (_, name, t) in self.store.iter() {
            write_str(w, name)?;
            write_u64(w, t.shape().len() as u64)?;
            for &d in t.shape() {
                write_u64(w, d as u64)?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Checkpoint("wrong magic".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", version)));
        }
        let config = Config::from_text(&read_str(r)?)?;
        let mut lists = Vec::new();
        for _ in 0..5 {
            let n = read_u64(r)?;
            let mut tokens = Vec::new();
            for _ in 0..n {
                tokens.push(read_str(r)?);
            }
            lists.push(Vocabulary::from_tokens(tokens));
        }
        let mut lists = lists.into_iter();
        let mut next = || lists.next().expect("five vocabularies");
        let vocabs = Vocabs { source: next(), target: next(), pos: next(), chars: next(), labels: next() };
        let senses = SenseTable::from_text(&read_str(r)?)?;
        let entities = EntityTable::from_text(&read_str(r)?)?;
        let (mut store, net) = assemble(&config, &vocabs, None)?;
        let n = read_u64(r)? as usize;
        if n != store.len() {
            return Err(ModelError::Checkpoint(format!("expected {} parameter tensors, found {}", store.len(), n)));
        }
        for _ in 0..n {
            let name = read_str(r)?;
            let rank = read_u64(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let id = store.id(&name).ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {}", name)))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    name,
                    shape,
                    store.get(id).shape()
                )));
            }
            let mut buf = [0u8; 8];
            for x in store.get_mut(id).data_mut() {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
        }
        Ok(Model { config, vocabs, senses, entities, store, net })
    }

    fn vocab_list(&self) -> [&Vocabulary; 5] {
        [&self.vocabs.source, &self.vocabs.target, &self.vocabs.pos, &self.vocabs.chars, &self.vocabs.labels]
    }
}

fn write_u64<W: Write>(w: &mut W, x: u64) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, ModelError> {
    let n = read_u64(r)? as usize;
    if n > 1 << 30 {
        return Err(ModelError::Checkpoint("string length out of range".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ModelError::Checkpoint("invalid utf-8".into()))
}
