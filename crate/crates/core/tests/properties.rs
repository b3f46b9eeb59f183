mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2g::amr::{penman_decode, penman_encode, AmrGraph};
use s2g::decode::{constrained_mst, constrained_mst_single_root, tree_score};
use s2g::evalkit::{smatch, smatch_exact_oracle};
use s2g::numeric::softmax;
use s2g::seq2seq::coverage_loss;
use s2g::transduce::{delinearize, graph_to_tree, linearize, tree_to_graph};

use common::*;

fn graph(seed: u64, prefix: &str) -> AmrGraph {
    random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 6, prefix)
}

fn same_triples(a: &AmrGraph, b: &AmrGraph) -> bool {
    let (na, nb) = (triples(a).1.len(), triples(b).1.len());
    na == nb && exhaustive_matches(a, b) == na
}

fn distribution(weights: Vec<f64>) -> Vec<f64> {
    let z: f64 = weights.iter().sum();
    weights.iter().map(|w| w / z).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penman_round_trip(seed in any::<u64>()) {
        let g = graph(seed, "v");
        let text = penman_encode(&g).unwrap();
        let back = penman_decode(&text).unwrap();
        prop_assert!(same_triples(&g, &back), "{}", text);
    }

    #[test]
    fn tree_round_trip(seed in any::<u64>()) {
        let g = graph(seed, "v");
        let tree = graph_to_tree(&g).unwrap();
        prop_assert_eq!(tree.nodes.len(), g.edges.len() + 1);
        prop_assert!(same_triples(&g, &tree_to_graph(&tree).unwrap()));
    }

    #[test]
    fn linearization_is_valid_and_invertible(seed in any::<u64>()) {
        let tree = graph_to_tree(&graph(seed, "v")).unwrap();
        let t = linearize(&tree, None);
        t.validate().unwrap();
        prop_assert!(t.heads.iter().enumerate().all(|(i, &h)| h <= i));
        let mut direct = tree_to_graph(&tree).unwrap();
        direct.attributes.clear();
        let back = tree_to_graph(&delinearize(&t).unwrap()).unwrap();
        prop_assert!(same_triples(&direct, &back));
    }

    #[test]
    fn mst_matches_brute_force(
        m in 1usize..=5,
        seed in any::<u64>(),
        raw in prop::collection::vec(-5.0f64..5.0, 36),
    ) {
        let indices = random_indices(&mut ChaCha8Rng::seed_from_u64(seed), m, 0.4);
        let edge = |h: usize, d: usize| raw[h * 6 + d];
        let heads = constrained_mst(edge, &indices);
        prop_assert!(is_arborescence(&heads, &indices));
        let best = brute_force_mst(&edge, &indices);
        prop_assert!((tree_score(edge, &heads) - best).abs() < 1e-9);

        let single = constrained_mst_single_root(edge, &indices);
        prop_assert!(is_arborescence(&single, &indices));
        prop_assert!(tree_score(edge, &single) <= best + 1e-9);
    }

    #[test]
    fn smatch_is_symmetric_and_bounded(a in any::<u64>(), b in any::<u64>()) {
        let (g1, g2) = (graph(a, "a"), graph(b, "b"));
        let forward = smatch_exact_oracle(&g1, &g2).unwrap();
        let backward = smatch_exact_oracle(&g2, &g1).unwrap();
        prop_assert_eq!(forward.matched, backward.matched);
        prop_assert_eq!((forward.test, forward.gold), (backward.gold, backward.test));
        prop_assert!((forward.f1() - backward.f1()).abs() < 1e-15);
        let climbed = smatch(&g1, &g2, 4, a ^ b);
        prop_assert!(climbed.counts.matched <= forward.matched);
        prop_assert!((0.0..=1.0).contains(&climbed.f1));
    }

    #[test]
    fn coverage_loss_is_a_fraction(
        rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..6),
    ) {
        let history: Vec<Vec<f64>> = rows.into_iter().map(distribution).collect();
        let losses = coverage_loss(&history);
        prop_assert_eq!(losses[0], 0.0);
        for l in losses {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&l));
        }
    }

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&xs);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }
}
