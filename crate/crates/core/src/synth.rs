//! Small templated corpus for smoke tests and demos.
//!
//! Graphs grow from a root entity by attaching typed relations (a book has
//! an author, an author a birthplace, a city a country, ...). Each triple is
//! verbalized by a fixed sentence template, in triple order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Pair;
use crate::kg::{Entity, KnowledgeGraph, Relation, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Book,
    Person,
    City,
    Country,
    Company,
    Genre,
    Language,
}

const BOOKS: &[&str] = &[
    "aenir",
    "the silent tower",
    "castle of dust",
    "river song",
    "the glass garden",
    "north wind",
    "a grey morning",
    "the last harbor",
    "iron hill",
    "paper moons",
    "the red lantern",
    "winter bridge",
];
const PEOPLE: &[&str] = &[
    "garth nix",
    "mara lind",
    "tomas brandt",
    "elena ruiz",
    "ola berg",
    "kenji sato",
    "ada moss",
    "lucas ferro",
    "nina holt",
    "piet de vries",
];
const CITIES: &[&str] = &[
    "sydney", "oslo", "lyon", "porto", "kyoto", "leeds", "graz", "utrecht", "bergen", "turin",
];
const COUNTRIES: &[&str] = &["australia", "norway", "france", "portugal", "japan", "england", "austria", "netherlands", "italy"];
const COMPANIES: &[&str] = &["harper press", "blue owl books", "north star media", "vela publishing", "penrose house"];
const GENRES: &[&str] = &["fantasy", "mystery", "science fiction", "poetry", "historical fiction"];
const LANGUAGES: &[&str] = &["english", "norwegian", "french", "portuguese", "japanese", "german", "dutch", "italian"];

fn pool(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Book => BOOKS,
        Kind::Person => PEOPLE,
        Kind::City => CITIES,
        Kind::Country => COUNTRIES,
        Kind::Company => COMPANIES,
        Kind::Genre => GENRES,
        Kind::Language => LANGUAGES,
    }
}

struct RelationKind {
    id: &'static str,
    label: &'static str,
    head: Kind,
    tail: Kind,
    /// `{h}` and `{t}` are replaced by the entity labels.
    template: &'static str,
}

const RELATIONS: &[RelationKind] = &[
    RelationKind {
        id: "author",
        label: "author",
        head: Kind::Book,
        tail: Kind::Person,
        template: "{h} was written by {t} .",
    },
    RelationKind {
        id: "publisher",
        label: "publisher",
        head: Kind::Book,
        tail: Kind::Company,
        template: "{h} was published by {t} .",
    },
    RelationKind {
        id: "genre",
        label: "literary genre",
        head: Kind::Book,
        tail: Kind::Genre,
        template: "{h} is a work of {t} .",
    },
    RelationKind {
        id: "birth_place",
        label: "birth place",
        head: Kind::Person,
        tail: Kind::City,
        template: "{h} was born in {t} .",
    },
    RelationKind {
        id: "nationality",
        label: "nationality",
        head: Kind::Person,
        tail: Kind::Country,
        template: "{h} is a citizen of {t} .",
    },
    RelationKind {
        id: "headquarters",
        label: "headquarters",
        head: Kind::Company,
        tail: Kind::City,
        template: "{h} is based in {t} .",
    },
    RelationKind {
        id: "country",
        label: "country",
        head: Kind::City,
        tail: Kind::Country,
        template: "{h} is a city in {t} .",
    },
    RelationKind {
        id: "language",
        label: "official language",
        head: Kind::Country,
        tail: Kind::Language,
        template: "the language of {h} is {t} .",
    },
];

/// One graph with about `size` triples (fewer when the root cannot grow
/// further) and its templated reference.
pub fn synthetic_pair(id: impl Into<String>, size: usize, rng: &mut impl Rng) -> Pair {
    let root_kind = *[Kind::Book, Kind::Book, Kind::Person, Kind::Company].choose(rng).unwrap();
    let mut nodes: Vec<(String, Kind)> = vec![(pick_label(root_kind, &[], rng), root_kind)];
    let mut used: Vec<(usize, &'static str)> = Vec::new();
    let mut triples: Vec<(usize, usize, usize)> = Vec::new();

    while triples.len() < size {
        let options: Vec<(usize, usize)> = nodes
            .iter()
            .enumerate()
            .flat_map(|(n, &(_, kind))| {
                RELATIONS
                    .iter()
                    .enumerate()
                    .filter(move |(_, r)| r.head == kind)
                    .map(move |(ri, _)| (n, ri))
            })
            .filter(|&(n, ri)| !used.contains(&(n, RELATIONS[ri].id)))
            .collect();
        let Some(&(head, ri)) = options.choose(rng) else { break };
        let rel = &RELATIONS[ri];
        let taken: Vec<&str> = nodes.iter().map(|(l, _)| l.as_str()).collect();
        let label = pick_label(rel.tail, &taken, rng);
        nodes.push((label, rel.tail));
        used.push((head, rel.id));
        triples.push((head, ri, nodes.len() - 1));
    }

    let mut rel_order: Vec<usize> = Vec::new();
    for &(_, ri, _) in &triples {
        if !rel_order.contains(&ri) {
            rel_order.push(ri);
        }
    }
    let kg = KnowledgeGraph::new(
        nodes
            .iter()
            .enumerate()
            .map(|(i, (label, _))| Entity {
                id: format!("e{i}"),
                label: label.clone(),
            })
            .collect(),
        rel_order
            .iter()
            .map(|&ri| Relation {
                id: RELATIONS[ri].id.to_string(),
                label: RELATIONS[ri].label.to_string(),
            })
            .collect(),
        triples
            .iter()
            .map(|&(h, ri, t)| Triple::new(format!("e{h}"), RELATIONS[ri].id, format!("e{t}")))
            .collect(),
    );
    let text = triples
        .iter()
        .map(|&(h, ri, t)| {
            RELATIONS[ri]
                .template
                .replace("{h}", &nodes[h].0)
                .replace("{t}", &nodes[t].0)
        })
        .collect::<Vec<_>>()
        .join(" ");
    Pair {
        id: id.into(),
        kg,
        references: vec![text],
    }
}

fn pick_label(kind: Kind, taken: &[&str], rng: &mut impl Rng) -> String {
    let free: Vec<&&str> = pool(kind).iter().filter(|l| !taken.contains(l)).collect();
    free.choose(rng).map_or_else(|| pool(kind)[0].to_string(), |l| l.to_string())
}

/// `n` pairs with graph sizes cycling through 1..=8 triples, weighted toward
/// small graphs.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Pair> {
    const SIZES: [usize; 10] = [1, 2, 3, 1, 2, 3, 4, 5, 6, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synthetic_pair(format!("synth-{i:03}"), SIZES[i % SIZES.len()], &mut rng))
        .collect()
}
