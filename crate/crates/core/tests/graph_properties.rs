#![allow(clippy::needless_range_loop)]

mod support;

use gap_core::kg::{component_index, Component, KnowledgeGraph, SlotBudget};
use gap_core::linearize::{build_vocab, linearize, tokenize, H_SEP, R_SEP, T_SEP};
use gap_core::topology::{build_mask, build_type_matrix, MaskScheme};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{all_schemes, oracle_components, oracle_mask, oracle_type, oracle_types, random_graph, Comp};

const M: usize = 24;

fn graph(seed: u64) -> KnowledgeGraph {
    random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_graphs_validate(seed in any::<u64>()) {
        prop_assert!(graph(seed).validate(SlotBudget::default()).is_ok());
    }

    #[test]
    fn component_order_matches_oracle(seed in any::<u64>()) {
        let kg = graph(seed);
        let table = component_index(&kg);
        let expected: Vec<Component> = oracle_components(&kg)
            .into_iter()
            .map(|c| match c {
                Comp::Entity(e) => Component::Entity(e),
                Comp::Edge(t) => Component::Relation {
                    relation: kg.relation_index(&kg.triples[t].relation).unwrap(),
                    triple: t,
                },
            })
            .collect();
        prop_assert_eq!(table.components, expected);
    }

    #[test]
    fn neighbors_match_brute_force(seed in any::<u64>()) {
        let kg = graph(seed);
        let table = component_index(&kg);
        let comps = oracle_components(&kg);
        for i in 0..table.len() {
            let nb = table.neighbors(i).unwrap();
            for j in 0..table.len() {
                let linked = oracle_type(&kg, &comps, i, j) != 0;
                let listed = nb.entities.contains(&j) || nb.relations.contains(&j);
                prop_assert_eq!(linked, listed, "({}, {})", i, j);
                prop_assert!(!nb.entities.contains(&j) || table.is_entity(j));
                prop_assert!(!nb.relations.contains(&j) || !table.is_entity(j));
            }
            prop_assert!(!nb.entities.contains(&i) && !nb.relations.contains(&i));
        }
        prop_assert!(table.neighbors(table.len()).is_err());
    }

    #[test]
    fn neighbor_symmetry_and_incidence_duality(seed in any::<u64>()) {
        let table = component_index(&graph(seed));
        let n = table.len();
        let nb: Vec<_> = (0..n).map(|i| table.neighbors(i).unwrap()).collect();
        for a in 0..n {
            for b in 0..n {
                let (ea, eb) = (table.is_entity(a), table.is_entity(b));
                if ea && eb {
                    prop_assert_eq!(nb[a].entities.contains(&b), nb[b].entities.contains(&a));
                }
                if !ea && !eb {
                    prop_assert_eq!(nb[a].relations.contains(&b), nb[b].relations.contains(&a));
                }
                if ea && !eb {
                    prop_assert_eq!(nb[a].relations.contains(&b), nb[b].entities.contains(&a));
                }
            }
        }
    }

    #[test]
    fn masks_and_types_match_brute_force(seed in any::<u64>()) {
        let kg = graph(seed);
        let table = component_index(&kg);
        for scheme in all_schemes() {
            let mask = build_mask(&table, scheme, M).unwrap();
            let oracle = oracle_mask(&kg, scheme, M);
            for i in 0..M {
                for j in 0..M {
                    prop_assert_eq!(mask.is_open(i, j), oracle[i][j], "{} ({}, {})", scheme.name(), i, j);
                }
            }
            for i in 0..table.len() {
                prop_assert_eq!(mask.isolated[i], !oracle[i][i]);
            }
        }
        let types = build_type_matrix(&table, M).unwrap();
        let oracle = oracle_types(&kg, M);
        for i in 0..M {
            for j in 0..M {
                prop_assert_eq!(types.get(i, j), oracle[i][j]);
            }
        }
    }

    #[test]
    fn type_duality_and_symmetry(seed in any::<u64>()) {
        let types = build_type_matrix(&component_index(&graph(seed)), M).unwrap();
        for i in 0..M {
            prop_assert_eq!(types.get(i, i), 0);
            for j in 0..M {
                let (a, b) = (types.get(i, j), types.get(j, i));
                prop_assert_eq!(a == 2, b == 3);
                if a == 1 || a == 4 {
                    prop_assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn scheme_nesting(seed in any::<u64>()) {
        let table = component_index(&graph(seed));
        for small in all_schemes() {
            for big in all_schemes().into_iter().filter(|b| small.is_subset(b)) {
                let (ms, mb) = (build_mask(&table, small, M).unwrap(), build_mask(&table, big, M).unwrap());
                for i in 0..M {
                    for j in (0..M).filter(|&j| j != i) {
                        prop_assert!(!ms.is_open(i, j) || mb.is_open(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn full_scheme_consistent_with_types(seed in any::<u64>()) {
        let table = component_index(&graph(seed));
        let mask = build_mask(&table, MaskScheme::ER_ER, M).unwrap();
        let types = build_type_matrix(&table, M).unwrap();
        for i in 0..M {
            for j in (0..M).filter(|&j| j != i) {
                prop_assert_eq!(mask.is_open(i, j), types.get(i, j) != 0);
            }
        }
    }

    #[test]
    fn permutation_equivariance(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let kg = graph(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        let mut order: Vec<usize> = (0..kg.triples.len()).collect();
        order.shuffle(&mut rng);
        let mut perm = kg.clone();
        perm.entities.shuffle(&mut rng);
        perm.relations.shuffle(&mut rng);
        perm.triples = order.iter().map(|&t| kg.triples[t].clone()).collect();

        // component i of `kg` -> component of `perm` with the same identity
        let (ca, cb) = (oracle_components(&kg), oracle_components(&perm));
        let pi: Vec<usize> = ca
            .iter()
            .map(|c| match *c {
                Comp::Entity(e) => cb
                    .iter()
                    .position(|d| matches!(*d, Comp::Entity(f) if perm.entities[f].id == kg.entities[e].id))
                    .unwrap(),
                Comp::Edge(t) => cb.iter().position(|d| matches!(*d, Comp::Edge(u) if order[u] == t)).unwrap(),
            })
            .collect();
        let (ta, tb) = (component_index(&kg), component_index(&perm));
        for scheme in MaskScheme::NAMED {
            let (ma, mb) = (build_mask(&ta, scheme, M).unwrap(), build_mask(&tb, scheme, M).unwrap());
            for i in 0..ca.len() {
                for j in 0..ca.len() {
                    prop_assert_eq!(ma.is_open(i, j), mb.is_open(pi[i], pi[j]));
                }
            }
        }
        let (ya, yb) = (build_type_matrix(&ta, M).unwrap(), build_type_matrix(&tb, M).unwrap());
        for i in 0..ca.len() {
            for j in 0..ca.len() {
                prop_assert_eq!(ya.get(i, j), yb.get(pi[i], pi[j]));
            }
        }
    }

    #[test]
    fn linearization_spans_cover_labels(seed in any::<u64>()) {
        let kg = graph(seed);
        let vocab = build_vocab([(&kg, std::iter::empty::<&str>())], 1).unwrap();
        let (lin, table) = linearize(&kg, &vocab).unwrap();
        prop_assert_eq!(&lin, &linearize(&kg, &vocab).unwrap().0);
        prop_assert!(lin.num_components() < lin.n());
        let mut covered = vec![false; lin.n()];
        for (c, spans) in lin.spans.iter().enumerate() {
            prop_assert!(!spans.is_empty());
            let words = tokenize(table.label(&kg, c));
            for &(s, e) in spans {
                prop_assert_eq!(vocab.decode(&lin.token_ids[s..e]), words.join(" "));
                for k in s..e {
                    prop_assert!(!covered[k]);
                    covered[k] = true;
                }
            }
        }
        for (k, &tok) in lin.token_ids.iter().enumerate() {
            prop_assert_eq!(covered[k], ![H_SEP, R_SEP, T_SEP].contains(&tok));
        }
    }

    #[test]
    fn vocab_ignores_corpus_order(seeds in proptest::collection::vec(any::<u64>(), 1..6)) {
        let graphs: Vec<KnowledgeGraph> = seeds.iter().map(|&s| graph(s)).collect();
        let texts: Vec<String> = seeds.iter().map(|s| format!("text {} and more {}", s % 7, s % 3)).collect();
        let fwd = build_vocab(graphs.iter().zip(&texts).map(|(g, t)| (g, [t.as_str()])), 1).unwrap();
        let rev = build_vocab(graphs.iter().zip(&texts).rev().map(|(g, t)| (g, [t.as_str()])), 1).unwrap();
        prop_assert_eq!(fwd.to_text(), rev.to_text());
    }
}

#[test]
fn figure_graph_component_order() {
    let kg = KnowledgeGraph::from_label_triples(&[("E1", "R1", "E2"), ("E1", "R2", "E3")]);
    let t = component_index(&kg);
    let labels: Vec<&str> = (0..t.len()).map(|i| t.label(&kg, i)).collect();
    assert_eq!(labels, ["E1", "E2", "E3", "R1", "R2"]);
}
