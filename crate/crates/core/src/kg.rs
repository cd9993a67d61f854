//! Knowledge graphs: entities, relations and directed labeled triples.
//!
//! A validated graph is indexed into a [`ComponentTable`] whose rows are the
//! graph components used by the graph-aware attention: every entity once,
//! followed by one component per relation *occurrence* (edge). Relation
//! components are ordered by the relation's declaration index and then by
//! triple order, so a relation used by a single triple keeps its declaration
//! position.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub label: String,
}

/// A directed labeled edge `(head, relation, tail)` given by ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub triples: Vec<Triple>,
}

/// Fixed slot budgets for entity and relation components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBudget {
    pub num_nodes: usize,
    pub num_relations: usize,
}

impl SlotBudget {
    pub fn new(num_nodes: usize, num_relations: usize) -> Self {
        Self {
            num_nodes,
            num_relations,
        }
    }

    /// Total component slots `m`.
    pub fn m_slots(&self) -> usize {
        self.num_nodes + self.num_relations
    }
}

impl Default for SlotBudget {
    fn default() -> Self {
        Self::new(50, 60)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("triple {triple} references undeclared {kind} `{id}`")]
    DanglingReference {
        triple: usize,
        kind: &'static str,
        id: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} `{id}` is not used by any triple")]
    Unreferenced { kind: &'static str, id: String },
    #[error("{kind} `{id}` has an empty label")]
    EmptyLabel { kind: &'static str, id: String },
    #[error("{kind} count {count} exceeds slot budget {budget}")]
    SlotOverflow {
        kind: &'static str,
        count: usize,
        budget: usize,
    },
    #[error("component index {index} out of range (graph has {len} components)")]
    IndexOutOfRange { index: usize, len: usize },
}

impl KnowledgeGraph {
    pub fn new(entities: Vec<Entity>, relations: Vec<Relation>, triples: Vec<Triple>) -> Self {
        Self {
            entities,
            relations,
            triples,
        }
    }

    /// Builds a graph from `(head, relation, tail)` label triples, using each
    /// label as its own id. Entities and relations are declared in first-seen
    /// order.
    pub fn from_label_triples<S: AsRef<str>>(triples: &[(S, S, S)]) -> Self {
        let mut kg = KnowledgeGraph::default();
        let mut seen_e = HashSet::new();
        let mut seen_r = HashSet::new();
        for (h, r, t) in triples {
            let (h, r, t) = (h.as_ref(), r.as_ref(), t.as_ref());
            for e in [h, t] {
                if seen_e.insert(e.to_string()) {
                    kg.entities.push(Entity {
                        id: e.to_string(),
                        label: e.to_string(),
                    });
                }
            }
            if seen_r.insert(r.to_string()) {
                kg.relations.push(Relation {
                    id: r.to_string(),
                    label: r.to_string(),
                });
            }
            kg.triples.push(Triple::new(h, r, t));
        }
        kg
    }

    /// Checks every graph invariant and returns the graph unchanged on success.
    pub fn validate(self, budget: SlotBudget) -> Result<Self, GraphError> {
        validate_graph(self, budget)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    pub fn relation_index(&self, id: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.id == id)
    }
}

fn is_blank(label: &str) -> bool {
    label.split_whitespace().next().is_none()
}

pub fn validate_graph(kg: KnowledgeGraph, budget: SlotBudget) -> Result<KnowledgeGraph, GraphError> {
    if kg.triples.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let mut entity_ids = HashSet::new();
    for e in &kg.entities {
        if !entity_ids.insert(e.id.as_str()) {
            return Err(GraphError::DuplicateId {
                kind: "entity",
                id: e.id.clone(),
            });
        }
        if is_blank(&e.label) {
            return Err(GraphError::EmptyLabel {
                kind: "entity",
                id: e.id.clone(),
            });
        }
    }
    let mut relation_ids = HashSet::new();
    for r in &kg.relations {
        if !relation_ids.insert(r.id.as_str()) {
            return Err(GraphError::DuplicateId {
                kind: "relation",
                id: r.id.clone(),
            });
        }
        if is_blank(&r.label) {
            return Err(GraphError::EmptyLabel {
                kind: "relation",
                id: r.id.clone(),
            });
        }
    }
    let mut used_entities = HashSet::new();
    let mut used_relations = HashSet::new();
    for (i, t) in kg.triples.iter().enumerate() {
        for (kind, id, ids) in [
            ("entity", &t.head, &entity_ids),
            ("relation", &t.relation, &relation_ids),
            ("entity", &t.tail, &entity_ids),
        ] {
            if !ids.contains(id.as_str()) {
                return Err(GraphError::DanglingReference {
                    triple: i,
                    kind,
                    id: id.clone(),
                });
            }
        }
        used_entities.insert(t.head.as_str());
        used_entities.insert(t.tail.as_str());
        used_relations.insert(t.relation.as_str());
    }
    if let Some(e) = kg.entities.iter().find(|e| !used_entities.contains(e.id.as_str())) {
        return Err(GraphError::Unreferenced {
            kind: "entity",
            id: e.id.clone(),
        });
    }
    if let Some(r) = kg.relations.iter().find(|r| !used_relations.contains(r.id.as_str())) {
        return Err(GraphError::Unreferenced {
            kind: "relation",
            id: r.id.clone(),
        });
    }
    if kg.entities.len() > budget.num_nodes {
        return Err(GraphError::SlotOverflow {
            kind: "entity",
            count: kg.entities.len(),
            budget: budget.num_nodes,
        });
    }
    // one relation component per edge occurrence
    if kg.triples.len() > budget.num_relations {
        return Err(GraphError::SlotOverflow {
            kind: "relation",
            count: kg.triples.len(),
            budget: budget.num_relations,
        });
    }
    Ok(kg)
}

/// What a component row stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// Index into `KnowledgeGraph::entities`.
    Entity(usize),
    /// One occurrence of a relation: the relation's declaration index and the
    /// triple that carries it.
    Relation { relation: usize, triple: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentTable {
    pub components: Vec<Component>,
    pub num_entities: usize,
    pub num_relations: usize,
    /// Head and tail component index of each triple.
    endpoints: Vec<(usize, usize)>,
    /// Relation component index of each triple.
    triple_relation: Vec<usize>,
}

impl ComponentTable {
    /// `E + R`, the number of live component rows.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_entity(&self, index: usize) -> bool {
        index < self.num_entities
    }

    pub fn triple_endpoints(&self, triple: usize) -> (usize, usize) {
        self.endpoints[triple]
    }

    /// Component index of the relation occurrence carried by `triple`.
    pub fn relation_component(&self, triple: usize) -> usize {
        self.triple_relation[triple]
    }

    pub fn label<'a>(&self, kg: &'a KnowledgeGraph, index: usize) -> &'a str {
        match self.components[index] {
            Component::Entity(e) => &kg.entities[e].label,
            Component::Relation { relation, .. } => &kg.relations[relation].label,
        }
    }

    /// Entity and relation neighbors of component `index`; see [`neighbors`].
    pub fn neighbors(&self, index: usize) -> Result<Neighbors, GraphError> {
        if index >= self.len() {
            return Err(GraphError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut out = Neighbors::default();
        if self.is_entity(index) {
            for (t, &(h, tl)) in self.endpoints.iter().enumerate() {
                if h == index || tl == index {
                    out.relations.insert(self.triple_relation[t]);
                    for other in [h, tl] {
                        if other != index {
                            out.entities.insert(other);
                        }
                    }
                }
            }
        } else {
            let triple = match self.components[index] {
                Component::Relation { triple, .. } => triple,
                Component::Entity(_) => unreachable!(),
            };
            let (h, tl) = self.endpoints[triple];
            out.entities.insert(h);
            out.entities.insert(tl);
            for (t, &(oh, ot)) in self.endpoints.iter().enumerate() {
                if t == triple {
                    continue;
                }
                if oh == h || oh == tl || ot == h || ot == tl {
                    out.relations.insert(self.triple_relation[t]);
                }
            }
        }
        Ok(out)
    }
}

/// Builds the component table of a validated graph.
pub fn component_index(kg: &KnowledgeGraph) -> ComponentTable {
    let entity_pos: HashMap<&str, usize> = kg
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let relation_pos: HashMap<&str, usize> = kg
        .relations
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    let num_entities = kg.entities.len();
    let mut components: Vec<Component> = (0..num_entities).map(Component::Entity).collect();

    let mut occurrences: Vec<(usize, usize)> = kg
        .triples
        .iter()
        .enumerate()
        .map(|(t, triple)| (relation_pos[triple.relation.as_str()], t))
        .collect();
    occurrences.sort_unstable();

    let mut triple_relation = vec![0; kg.triples.len()];
    for (k, &(relation, triple)) in occurrences.iter().enumerate() {
        triple_relation[triple] = num_entities + k;
        components.push(Component::Relation { relation, triple });
    }
    let endpoints = kg
        .triples
        .iter()
        .map(|t| (entity_pos[t.head.as_str()], entity_pos[t.tail.as_str()]))
        .collect();

    ComponentTable {
        components,
        num_entities,
        num_relations: kg.triples.len(),
        endpoints,
        triple_relation,
    }
}

/// Neighbor sets of one component. Never contains the component itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Neighbors {
    pub entities: BTreeSet<usize>,
    pub relations: BTreeSet<usize>,
}

/// For an entity: entities sharing a triple with it and the relation
/// occurrences incident to it. For a relation occurrence: the endpoints of its
/// triple and the other relation occurrences sharing an endpoint entity.
pub fn neighbors(table: &ComponentTable, index: usize) -> Result<Neighbors, GraphError> {
    table.neighbors(index)
}
