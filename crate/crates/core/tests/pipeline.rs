mod common;

use s2g::amr::{read_corpus, write_corpus};
use s2g::decode::{evaluate, parse_records, postprocess};
use s2g::evalkit::smatch;
use s2g::model::Model;
use s2g::par::Execution;
use s2g::transduce::delinearize;

use common::*;

#[test]
fn corpus_text_round_trips() {
    for file in ["graphs50.amr", "anonymization.amr", "negation10.amr", "toy20.txt"] {
        let records = records(file);
        let again = read_corpus(&write_corpus(&records).unwrap()).unwrap();
        assert_eq!(again.len(), records.len(), "{}", file);
        for (a, b) in records.iter().zip(&again) {
            assert_eq!((&a.id, &a.tokens, &a.lemmas, &a.extra), (&b.id, &b.tokens, &b.lemmas, &b.extra));
            if let (Some(ga), Some(gb)) = (&a.graph, &b.graph) {
                assert_eq!(smatch(ga, gb, 4, 0).f1, 1.0, "{}", file);
            }
        }
    }
}

#[test]
fn gold_targets_survive_postprocessing() {
    for file in ["anonymization.amr", "graphs50.amr"] {
        let records = records(file);
        let (model, examples) = build_model(&records, tiny_config(""));
        for ex in &examples {
            let tree = delinearize(&ex.target).unwrap();
            let g = postprocess(&model, &ex.sentence, &tree, None).unwrap();
            let f1 = smatch(&g, &ex.reference, 4, 0).f1;
            assert_eq!(f1, 1.0, "{} {:?}: {:?}", file, ex.sentence.id, ex.sentence.tokens);
        }
    }
}

#[test]
fn checkpoint_reload_parses_identically() {
    let records = records("overfit32.amr");
    let (out, examples) = train_on(&records[..8], tiny_config("epochs = 5\nbatch_size = 4\ndropout = 0.0\n"));
    let mut bytes = Vec::new();
    out.model.save(&mut bytes).unwrap();
    let loaded = Model::load(&mut bytes.as_slice()).unwrap();
    let toy = common::records("toy20.txt");
    let a = parse_records(&out.model, &toy, None, 3, Execution::Sequential).unwrap();
    let b = parse_records(&loaded, &toy, None, 3, Execution::Parallel).unwrap();
    for ((_, pa), (_, pb)) in a.iter().zip(&b) {
        assert_eq!(pa.graph, pb.graph);
    }
    assert_eq!(evaluate(&out.model, &examples, 1, Execution::Sequential), evaluate(&loaded, &examples, 1, Execution::Parallel));
}
