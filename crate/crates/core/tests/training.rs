mod common;

use s2g::amr::{penman_decode, Record};
use s2g::decode::{beam_decode, greedy_decode, parse_sentence};
use s2g::model::Model;
use s2g::numeric::Graph;
use s2g::par::Execution;
use s2g::train::{batch_gradients, derive_seed, fit, joint_loss};

use common::*;

fn one_record(tokens: &[&str], graph: &str) -> Record {
    Record::new(tokens.iter().map(|t| t.to_string()).collect(), Some(penman_decode(graph).unwrap()))
}

fn params(model: &Model) -> Vec<Vec<f64>> {
    model.store.ids().map(|id| model.store.get(id).data().to_vec()).collect()
}

#[test]
fn zero_parameters_give_uniform_loss() {
    let records = vec![one_record(&["hello", "."], "(d / dog)")];
    let (mut model, examples) = build_model(&records, tiny_config("dropout = 0.0\n"));
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new(&model.store);
    let terms = joint_loss(&model, &mut g, &examples[0], 0.0, 0.0).unwrap();
    let v = model.vocabs.target.len() as f64;
    let l = model.vocabs.labels.len() as f64;
    // Node step: two open channels; EOS step: three; head: root or self.
    let expected = (2.0 * v).ln() + (3.0 * v).ln() + 2f64.ln() + l.ln();
    assert!((g.scalar(terms.total) - expected).abs() < 1e-12, "{} vs {}", g.scalar(terms.total), expected);
    assert!((terms.node - ((2.0 * v).ln() + (3.0 * v).ln())).abs() < 1e-12);
    assert!((terms.head - 2f64.ln()).abs() < 1e-12);
    assert!((terms.label - l.ln()).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let records = records("overfit32.amr");
    let (model, examples) = build_model(&records[..8], tiny_config("optimizer.learning_rate = 0.0\nepochs = 1\n"));
    let before = params(&model);
    let out = fit(model, &examples, &[], Execution::Sequential, &mut |_| {}).unwrap();
    assert_eq!(out.epochs.len(), 1);
    assert_eq!(params(&out.model), before);
}

#[test]
fn training_is_deterministic_across_runs_and_modes() {
    let records = records("overfit32.amr");
    let config = tiny_config("epochs = 3\nbatch_size = 4\n");
    let run = |mode| {
        let (model, examples) = build_model(&records[..12], config.clone());
        let out = fit(model, &examples, &examples[..4], mode, &mut |_| {}).unwrap();
        (out.epochs, params(&out.model))
    };
    let first = run(Execution::Sequential);
    assert_eq!(first.0.len(), 3);
    assert!(first.0.iter().all(|m| m.loss.is_finite()));
    assert_eq!(run(Execution::Sequential), first);
    assert_eq!(run(Execution::Parallel), first);
}

#[test]
fn batch_gradients_match_across_modes() {
    let records = records("graphs50.amr");
    let (model, examples) = build_model(&records[..10], tiny_config(""));
    let batch: Vec<_> = examples.iter().collect();
    let seeds: Vec<u64> = (0..batch.len() as u64).map(|i| derive_seed(1, 0, i)).collect();
    let (a, sa) = batch_gradients(&model, &batch, &seeds, Execution::Sequential).unwrap();
    let (b, sb) = batch_gradients(&model, &batch, &seeds, Execution::Parallel).unwrap();
    assert_eq!(sa, sb);
    for id in model.store.ids() {
        assert_eq!(a.get(id).map(|t| t.data().to_vec()), b.get(id).map(|t| t.data().to_vec()));
    }
}

#[test]
fn loss_falls_on_the_overfit_corpus() {
    let records = records("overfit32.amr");
    let (model, examples) = build_model(&records, tiny_config("epochs = 15\nbatch_size = 4\ndropout = 0.0\n"));
    let out = fit(model, &examples, &[], Execution::Sequential, &mut |_| {}).unwrap();
    let first = out.epochs.first().unwrap().loss;
    let last = out.epochs.last().unwrap().loss;
    assert!(last < 0.5 * first, "loss {} -> {}", first, last);
}

#[test]
fn max_len_bounds_decoding() {
    let records = records("graphs50.amr");
    let (model, examples) = build_model(&records[..5], tiny_config(""));
    for ex in &examples {
        let mut g = Graph::new(&model.store);
        assert!(greedy_decode(&model, &mut g, &ex.sentence, 1, None).unwrap().len() <= 1);
        assert!(beam_decode(&model, &mut g, &ex.sentence, 5, 1).unwrap().len() <= 1);
        let a = greedy_decode(&model, &mut g, &ex.sentence, 8, None).unwrap();
        let b = greedy_decode(&model, &mut g, &ex.sentence, 8, None).unwrap();
        assert_eq!((a.concepts, a.indices, a.log_prob), (b.concepts, b.indices, b.log_prob));
    }
}

#[test]
fn untrained_parses_are_valid_graphs() {
    let records = records("graphs50.amr");
    let (model, examples) = build_model(&records, tiny_config(""));
    for ex in &examples {
        let parsed = parse_sentence(&model, &ex.sentence, 3);
        assert!(s2g::amr::validate_graph(&parsed.graph).is_empty());
    }
}
