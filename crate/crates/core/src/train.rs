//! Copy supervision, the joint objective, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decode::evaluate;
use crate::embed::{Vocabulary, EOS, UNK};
use crate::model::{Example, Model, ModelError};
use crate::numeric::{clip_grad_norm, Adam, AdamConfig, Grads, Graph, NumericError, Var};
use crate::par::{self, Execution};
use crate::seq2seq::{Channels, DecoderStep};
use crate::transduce::{LinearizedTarget, SourceTokens};

/// Probability floor inside the log of every reference outcome.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("example has an empty sentence or target")]
    EmptyExample,
    #[error("position {position} copies antecedent {antecedent} with a different concept")]
    AntecedentMismatch { position: usize, antecedent: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
}

/// Admissible outcomes for one reference node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Copy of an earlier node: mass of the 1-based antecedents that carry
    /// the same concept.
    TargetCopy { antecedents: Vec<usize> },
    /// New node: vocabulary id (None when out of vocabulary but copyable)
    /// plus the matching source positions.
    Generate { vocab: Option<usize>, source: Vec<usize> },
}

impl Supervision {
    /// Neither in the vocabulary nor in the source: only UNK can cover it.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, Supervision::Generate { vocab: Some(UNK), source } if source.is_empty())
    }
}

/// Per-step supervision. A step is a target copy exactly when its index
/// repeats an earlier one; disabled channels fall back to generation.
pub fn copy_supervision_targets(
    t: &LinearizedTarget,
    source: SourceTokens<'_>,
    vocab: &Vocabulary,
    channels: Channels,
) -> Result<Vec<Supervision>, TrainError> {
    (0..t.len())
        .map(|k| {
            let concept = &t.concepts[k];
            if let Some(j) = (0..k).find(|&j| t.indices[j] == t.indices[k]) {
                if t.concepts[j] != *concept {
                    return Err(TrainError::AntecedentMismatch { position: k + 1, antecedent: j + 1 });
                }
                if channels.target_copy {
                    let antecedents = (0..k).filter(|&j| t.concepts[j] == *concept).map(|j| j + 1).collect();
                    return Ok(Supervision::TargetCopy { antecedents });
                }
            }
            let source = if channels.source_copy { source.positions(concept) } else { Vec::new() };
            let vocab = match vocab.get(concept) {
                Some(id) => Some(id),
                None if source.is_empty() => Some(UNK),
                None => None,
            };
            Ok(Supervision::Generate { vocab, source })
        })
        .collect()
}

/// The loss of one example and its parts as plain values.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub node: f64,
    pub head: f64,
    pub label: f64,
    pub coverage: f64,
}

fn node_probability(g: &mut Graph, step: &DecoderStep, sup: &Supervision) -> Var {
    let mut terms = Vec::new();
    match sup {
        Supervision::TargetCopy { antecedents } => {
            let (Some(a), Some(p)) = (step.a_tgt, step.p_tgt) else {
                unreachable!("target copies follow at least one node");
            };
            let idx: Vec<usize> = antecedents.iter().map(|j| j - 1).collect();
            let picked = g.pick(a, &idx);
            let mass = g.sum(picked);
            terms.push(g.scale_by(mass, p));
        }
        Supervision::Generate { vocab, source } => {
            if let Some(id) = vocab {
                let pv = g.pick(step.p_vocab, &[*id]);
                terms.push(g.scale_by(pv, step.p_gen));
            }
            if let (false, Some(p)) = (source.is_empty(), step.p_src) {
                let picked = g.pick(step.a_src, source);
                let mass = g.sum(picked);
                terms.push(g.scale_by(mass, p));
            }
        }
    }
    match terms.len() {
        0 => g.constant(crate::numeric::Tensor::scalar(0.0)),
        1 => terms[0],
        _ => {
            let both = g.concat_cols(&terms);
            g.sum(both)
        }
    }
}

/// `-sum_t [log P(node) + log P(head) + log P(label)] + lambda * sum_t covloss_t`
/// under teacher forcing, plus the final EOS step's node term.
pub fn joint_loss(model: &Model, g: &mut Graph, ex: &Example, lambda: f64, dropout: f64) -> Result<LossTerms, TrainError> {
    let s = &ex.sentence;
    let t = &ex.target;
    let m = t.len();
    if s.is_empty() || m == 0 {
        return Err(TrainError::EmptyExample);
    }
    let channels = model.channels();
    let sup = copy_supervision_targets(t, s.source(), &model.vocabs.target, channels)?;
    let enc = model.encode(g, s, dropout)?;
    let feats = model.target_features(s, t);
    let inputs = model.embed_targets(g, &feats, dropout)?;

    let mut state = enc.state;
    let mut node_logs = Vec::with_capacity(m + 1);
    let mut hidden = Vec::with_capacity(m);
    let mut cov_terms = Vec::new();
    let mut cov: Option<Var> = None;
    for k in 0..=m {
        let x = g.row(inputs, k);
        let step = model.net.decoder.step(g, x, &state, &enc.context, channels, dropout);
        let p = if k < m {
            node_probability(g, &step, &sup[k])
        } else {
            let pv = g.pick(step.p_vocab, &[EOS]);
            g.scale_by(pv, step.p_gen)
        };
        node_logs.push(g.log_clamped(p, LOG_FLOOR));
        if k < m {
            hidden.push(step.hidden);
            cov = Some(match cov {
                None => step.a_src,
                Some(c) => {
                    let overlap = g.min(step.a_src, c);
                    cov_terms.push(g.sum(overlap));
                    g.add(c, step.a_src)
                }
            });
        }
        state = step.state;
    }
    let all = g.concat_cols(&node_logs);
    let node = g.sum(all);

    let states = g.concat_rows(&hidden);
    let e = model.net.biaffine.forward(g, states, dropout);
    let head_probs = model.net.biaffine.head_probs(g, &e);
    let flat: Vec<usize> = (0..m).map(|k| k * (m + 1) + t.heads[k]).collect();
    let picked = g.pick(head_probs, &flat);
    let logs = g.log_clamped(picked, LOG_FLOOR);
    let head = g.sum(logs);

    let pairs: Vec<(usize, usize)> = (0..m).map(|k| (t.heads[k], k + 1)).collect();
    let scores = model.net.biaffine.label_scores(g, &e, &pairs);
    let label_probs = g.softmax_rows(scores);
    let labels = model.vocabs.labels.len();
    let flat: Vec<usize> = (0..m).map(|k| k * labels + model.vocabs.labels.id(&t.labels[k])).collect();
    let picked = g.pick(label_probs, &flat);
    let logs = g.log_clamped(picked, LOG_FLOOR);
    let label = g.sum(logs);

    let coverage = if cov_terms.is_empty() {
        g.constant(crate::numeric::Tensor::scalar(0.0))
    } else {
        let all = g.concat_cols(&cov_terms);
        g.sum(all)
    };

    let log_lik = g.concat_cols(&[node, head, label]);
    let log_lik = g.sum(log_lik);
    let nll = g.scale(log_lik, -1.0);
    let weighted = g.scale(coverage, lambda);
    let total = g.add(nll, weighted);
    Ok(LossTerms { total, node: -g.scalar(node), head: -g.scalar(head), label: -g.scalar(label), coverage: g.scalar(coverage) })
}

/// Summed loss parts over a set of examples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub total: f64,
    pub node: f64,
    pub head: f64,
    pub label: f64,
    pub coverage: f64,
    /// Reference outcomes whose probability fell below the log floor.
    pub clamps: usize,
    pub examples: usize,
}

impl LossSums {
    fn add(&mut self, o: &LossSums) {
        self.total += o.total;
        self.node += o.node;
        self.head += o.head;
        self.label += o.label;
        self.coverage += o.coverage;
        self.clamps += o.clamps;
        self.examples += o.examples;
    }
}

/// Deterministic per-example seed.
pub fn derive_seed(seed: u64, epoch: u64, item: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ item.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gradient and loss of one example; dropout masks come from `seed`.
pub fn example_gradients(model: &Model, ex: &Example, seed: u64) -> Result<(Grads, LossSums), TrainError> {
    let dropout = model.config.dropout;
    let mut g = Graph::new(&model.store);
    if dropout > 0.0 {
        g = g.with_dropout(ChaCha8Rng::seed_from_u64(seed));
    }
    let terms = joint_loss(model, &mut g, ex, model.config.coverage_weight, dropout)?;
    g.check()?;
    let grads = g.backward(terms.total)?;
    Ok((
        grads,
        LossSums {
            total: g.scalar(terms.total),
            node: terms.node,
            head: terms.head,
            label: terms.label,
            coverage: terms.coverage,
            clamps: g.clamp_events(),
            examples: 1,
        },
    ))
}

/// Batch-mean gradient; examples run independently under `mode` and are
/// reduced in input order.
pub fn batch_gradients(model: &Model, batch: &[&Example], seeds: &[u64], mode: Execution) -> Result<(Grads, LossSums), TrainError> {
    let items: Vec<(&Example, u64)> = batch.iter().copied().zip(seeds.iter().copied()).collect();
    let results = par::map(mode, &items, |_, (ex, seed)| example_gradients(model, ex, *seed));
    let mut grads = Grads::for_store(&model.store);
    let mut sums = LossSums::default();
    for r in results {
        let (g, s) = r?;
        grads.merge(&g);
        sums.add(&s);
    }
    if !batch.is_empty() {
        grads.scale(1.0 / batch.len() as f64);
    }
    Ok((grads, sums))
}

/// Metrics of one epoch; loss parts are means over examples.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub node: f64,
    pub head: f64,
    pub label: f64,
    pub coverage: f64,
    pub clamps: usize,
    /// Largest pre-clipping gradient norm seen.
    pub grad_norm: f64,
    pub dev_smatch: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// The model with the best dev Smatch, or the last one without dev data.
    pub model: Model,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_smatch: Option<f64>,
}

/// Teacher-forced training with ADAM and gradient clipping. Dev Smatch
/// (greedy decoding) is measured after every epoch; the best model is
/// kept and training stops after `patience` epochs without improvement.
pub fn fit(
    mut model: Model,
    train: &[Example],
    dev: &[Example],
    mode: Execution,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<FitOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let config = model.config.clone();
    let mut adam = Adam::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() }, &model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut sums = LossSums::default();
        let mut grad_norm: f64 = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| derive_seed(config.seed, epoch as u64, i as u64)).collect();
            let (mut grads, s) = batch_gradients(&model, &batch, &seeds, mode).map_err(|e| match e {
                TrainError::Numeric(n) => TrainError::Diverged { epoch, batch: b + 1, detail: n.to_string() },
                other => other,
            })?;
            if !s.total.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b + 1, detail: format!("loss {}", s.total) });
            }
            grad_norm = grad_norm.max(grads.global_norm());
            clip_grad_norm(&mut grads, config.max_grad_norm);
            adam.step(&mut model.store, &grads);
            sums.add(&s);
        }
        let n = sums.examples.max(1) as f64;
        let dev_smatch = (!dev.is_empty()).then(|| evaluate(&model, dev, 1, mode).f1());
        let metrics = EpochMetrics {
            epoch,
            loss: sums.total / n,
            node: sums.node / n,
            head: sums.head / n,
            label: sums.label / n,
            coverage: sums.coverage / n,
            clamps: sums.clamps,
            grad_norm,
            dev_smatch,
        };
        on_epoch(&metrics);
        epochs.push(metrics);

        let score = dev_smatch.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) || dev_smatch.is_none() {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if dev_smatch.is_some_and(|f| f >= config.target_smatch) {
            break;
        }
        if config.patience > 0 && since_best >= config.patience {
            break;
        }
    }
    let (score, best_epoch, model) = best.expect("at least one epoch");
    Ok(FitOutcome { model, epochs, best_epoch, best_smatch: score.is_finite().then_some(score) })
}
