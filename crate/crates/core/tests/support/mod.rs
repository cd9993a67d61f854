//! Random graphs and brute-force oracles shared by integration tests.
//!
//! The oracles work from the raw triple list only; they never call the
//! component table, neighbor queries or mask builders under test.

#![allow(dead_code, clippy::needless_range_loop)]

use gap_core::kg::{Entity, KnowledgeGraph, Relation, Triple};
use gap_core::topology::MaskScheme;
use rand::seq::SliceRandom;
use rand::Rng;

/// A valid graph with 1..=max_triples triples over a small entity pool, so
/// shared endpoints, repeated relations and self-loops all occur.
pub fn random_graph(rng: &mut impl Rng, max_triples: usize) -> KnowledgeGraph {
    let n_triples = rng.gen_range(1..=max_triples);
    let n_ent = rng.gen_range(1..=(n_triples + 1).min(5));
    let n_rel = rng.gen_range(1..=n_triples.min(3));
    let mut triples = Vec::new();
    for _ in 0..n_triples {
        triples.push((rng.gen_range(0..n_ent), rng.gen_range(0..n_rel), rng.gen_range(0..n_ent)));
    }
    // declare only what is used, in a shuffled order
    let mut ents: Vec<usize> = triples.iter().flat_map(|&(h, _, t)| [h, t]).collect();
    ents.sort_unstable();
    ents.dedup();
    ents.shuffle(rng);
    let mut rels: Vec<usize> = triples.iter().map(|&(_, r, _)| r).collect();
    rels.sort_unstable();
    rels.dedup();
    rels.shuffle(rng);
    const WORDS: [&str; 6] = ["north", "river", "stone", "blue", "old", "city"];
    KnowledgeGraph::new(
        ents.iter()
            .map(|&e| Entity {
                id: format!("E{e}"),
                label: format!("{} {e}", WORDS[e % WORDS.len()]),
            })
            .collect(),
        rels.iter()
            .map(|&r| Relation {
                id: format!("R{r}"),
                label: format!("rel {r}"),
            })
            .collect(),
        triples
            .iter()
            .map(|&(h, r, t)| Triple::new(format!("E{h}"), format!("R{r}"), format!("E{t}")))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comp {
    Entity(usize),
    /// Triple index of the edge occurrence.
    Edge(usize),
}

/// Component order: entities in declaration order, then one component per
/// triple, grouped by relation declaration order, triples in input order.
pub fn oracle_components(kg: &KnowledgeGraph) -> Vec<Comp> {
    let mut out: Vec<Comp> = (0..kg.entities.len()).map(Comp::Entity).collect();
    for rel in &kg.relations {
        for (t, tr) in kg.triples.iter().enumerate() {
            if tr.relation == rel.id {
                out.push(Comp::Edge(t));
            }
        }
    }
    out
}

fn endpoints(kg: &KnowledgeGraph, t: usize) -> [String; 2] {
    [kg.triples[t].head.clone(), kg.triples[t].tail.clone()]
}

/// Connection type between two distinct components, straight from the
/// triple list: 1 entity-entity, 2 entity-edge, 3 edge-entity, 4 edge-edge.
pub fn oracle_type(kg: &KnowledgeGraph, comps: &[Comp], i: usize, j: usize) -> u8 {
    if i == j {
        return 0;
    }
    let eid = |e: usize| kg.entities[e].id.clone();
    match (comps[i], comps[j]) {
        (Comp::Entity(a), Comp::Entity(b)) => {
            let (a, b) = (eid(a), eid(b));
            let linked = kg
                .triples
                .iter()
                .any(|t| (t.head == a && t.tail == b) || (t.head == b && t.tail == a));
            if linked {
                1
            } else {
                0
            }
        }
        (Comp::Entity(a), Comp::Edge(t)) => {
            if endpoints(kg, t).contains(&eid(a)) {
                2
            } else {
                0
            }
        }
        (Comp::Edge(t), Comp::Entity(b)) => {
            if endpoints(kg, t).contains(&eid(b)) {
                3
            } else {
                0
            }
        }
        (Comp::Edge(s), Comp::Edge(t)) => {
            let (es, et) = (endpoints(kg, s), endpoints(kg, t));
            if es.iter().any(|e| et.contains(e)) {
                4
            } else {
                0
            }
        }
    }
}

/// Whether key `j` is allowed for query `i` under `scheme`, ignoring self.
pub fn oracle_allowed(kg: &KnowledgeGraph, comps: &[Comp], scheme: MaskScheme, i: usize, j: usize) -> bool {
    if i == j {
        return false;
    }
    let keys = match comps[i] {
        Comp::Entity(_) => scheme.entity_keys,
        Comp::Edge(_) => scheme.relation_keys,
    };
    let ty = oracle_type(kg, comps, i, j);
    ty != 0
        && match comps[j] {
            Comp::Entity(_) => keys.entities,
            Comp::Edge(_) => keys.relations,
        }
}

/// Open/blocked grid over `m_slots`, self opened only for rows with at
/// least one allowed key.
pub fn oracle_mask(kg: &KnowledgeGraph, scheme: MaskScheme, m_slots: usize) -> Vec<Vec<bool>> {
    let comps = oracle_components(kg);
    let n = comps.len();
    let mut grid = vec![vec![false; m_slots]; m_slots];
    for i in 0..n {
        let mut any = false;
        for j in 0..n {
            if oracle_allowed(kg, &comps, scheme, i, j) {
                grid[i][j] = true;
                any = true;
            }
        }
        grid[i][i] = any;
    }
    grid
}

pub fn oracle_types(kg: &KnowledgeGraph, m_slots: usize) -> Vec<Vec<u8>> {
    let comps = oracle_components(kg);
    let mut grid = vec![vec![0u8; m_slots]; m_slots];
    for i in 0..comps.len() {
        for j in 0..comps.len() {
            grid[i][j] = oracle_type(kg, &comps, i, j);
        }
    }
    grid
}

/// Every scheme whose key sets are drawn from {∅, e, r, er}.
pub fn all_schemes() -> Vec<MaskScheme> {
    let sets = [
        gap_core::topology::KeySet::NONE,
        gap_core::topology::KeySet::E,
        gap_core::topology::KeySet::R,
        gap_core::topology::KeySet::ER,
    ];
    sets.iter()
        .flat_map(|&a| sets.iter().map(move |&b| MaskScheme::new(a, b)))
        .collect()
}
