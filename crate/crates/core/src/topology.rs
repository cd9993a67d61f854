//! Topology mask `M` and connection-type matrix `T` over the fixed `m`-slot
//! component layout.
//!
//! Slots `0..active` hold live components (see [`ComponentTable`]); the rest
//! are padding, blocked in both directions and typed 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::ComponentTable;

/// Additive sentinel used in place of `-inf` for blocked attention.
pub const BLOCKED: f64 = -1e9;

/// Any bias at or below this is treated as a blocked key.
pub const BLOCKED_THRESHOLD: f64 = BLOCKED / 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("{active} live components do not fit into {m_slots} slots")]
    SlotOverflow { active: usize, m_slots: usize },
    #[error("unknown mask scheme `{0}` (expected er_er, er_e, er_none or e_e)")]
    UnknownScheme(String),
    #[error("grid parse error on row {row}: {msg}")]
    Grid { row: usize, msg: String },
}

/// Which neighbor kinds a query may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeySet {
    pub entities: bool,
    pub relations: bool,
}

impl KeySet {
    pub const NONE: KeySet = KeySet {
        entities: false,
        relations: false,
    };
    pub const E: KeySet = KeySet {
        entities: true,
        relations: false,
    };
    pub const R: KeySet = KeySet {
        entities: false,
        relations: true,
    };
    pub const ER: KeySet = KeySet {
        entities: true,
        relations: true,
    };

    pub fn is_subset(&self, other: &KeySet) -> bool {
        (!self.entities || other.entities) && (!self.relations || other.relations)
    }

    fn notation(&self) -> &'static str {
        match (self.entities, self.relations) {
            (true, true) => "e,r",
            (true, false) => "e",
            (false, true) => "r",
            (false, false) => "",
        }
    }
}

/// Masking scheme `M^{entity_keys}_{relation_keys}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskScheme {
    pub entity_keys: KeySet,
    pub relation_keys: KeySet,
}

impl MaskScheme {
    pub const ER_ER: MaskScheme = MaskScheme::new(KeySet::ER, KeySet::ER);
    pub const ER_E: MaskScheme = MaskScheme::new(KeySet::ER, KeySet::E);
    pub const ER_NONE: MaskScheme = MaskScheme::new(KeySet::ER, KeySet::NONE);
    pub const E_E: MaskScheme = MaskScheme::new(KeySet::E, KeySet::E);

    /// The four named schemes of the ablation grid, in table order.
    pub const NAMED: [MaskScheme; 4] = [Self::ER_ER, Self::ER_E, Self::ER_NONE, Self::E_E];

    pub const fn new(entity_keys: KeySet, relation_keys: KeySet) -> Self {
        Self {
            entity_keys,
            relation_keys,
        }
    }

    pub fn is_subset(&self, other: &MaskScheme) -> bool {
        self.entity_keys.is_subset(&other.entity_keys) && self.relation_keys.is_subset(&other.relation_keys)
    }

    /// Short name (`er_er`, `er_e`, `er_none`, `e_e`, ...).
    pub fn name(&self) -> String {
        let part = |k: &KeySet| match (k.entities, k.relations) {
            (true, true) => "er",
            (true, false) => "e",
            (false, true) => "r",
            (false, false) => "none",
        };
        format!("{}_{}", part(&self.entity_keys), part(&self.relation_keys))
    }

    /// Superscript/subscript notation, e.g. `M^{e,r}_{e}`.
    pub fn notation(&self) -> String {
        format!("M^{{{}}}_{{{}}}", self.entity_keys.notation(), self.relation_keys.notation())
    }
}

impl fmt::Display for MaskScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MaskScheme {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let keys = |p: &str| match p {
            "er" => Some(KeySet::ER),
            "e" => Some(KeySet::E),
            "r" => Some(KeySet::R),
            "none" => Some(KeySet::NONE),
            _ => None,
        };
        let (a, b) = s.split_once('_').ok_or_else(|| TopologyError::UnknownScheme(s.into()))?;
        match (keys(a), keys(b)) {
            (Some(e), Some(r)) => Ok(MaskScheme::new(e, r)),
            _ => Err(TopologyError::UnknownScheme(s.into())),
        }
    }
}

/// Square `m_slots x m_slots` additive mask with entries `0` or [`BLOCKED`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub m_slots: usize,
    pub active: usize,
    pub values: Vec<f64>,
    /// Live rows with no allowed key at all (not even self).
    pub isolated: Vec<bool>,
}

impl MaskMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m_slots + j]
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == 0.0
    }

    pub fn row_blocked(&self, i: usize) -> bool {
        (0..self.m_slots).all(|j| !self.is_open(i, j))
    }

    /// A mask of the same shape with every entry blocked.
    pub fn fully_blocked(m_slots: usize, active: usize) -> Self {
        Self {
            m_slots,
            active,
            values: vec![BLOCKED; m_slots * m_slots],
            isolated: vec![true; active],
        }
    }

    /// Grid of `1` (open) / `0` (blocked), one row per line, space separated.
    pub fn to_grid(&self) -> String {
        grid(self.m_slots, |i, j| u8::from(self.is_open(i, j)))
    }

    pub fn from_grid(text: &str, active: usize) -> Result<Self, TopologyError> {
        let cells = parse_grid(text)?;
        let m = cells.len();
        let values = cells
            .iter()
            .flatten()
            .map(|&c| if c == 1 { 0.0 } else { BLOCKED })
            .collect();
        let mut mask = Self {
            m_slots: m,
            active,
            values,
            isolated: Vec::new(),
        };
        mask.isolated = (0..active).map(|i| mask.row_blocked(i)).collect();
        Ok(mask)
    }
}

/// Square `m_slots x m_slots` connection-type matrix with entries in `0..=4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMatrix {
    pub m_slots: usize,
    pub values: Vec<u8>,
}

impl TypeMatrix {
    pub const NONE: u8 = 0;
    pub const ENTITY_ENTITY: u8 = 1;
    pub const ENTITY_RELATION: u8 = 2;
    pub const RELATION_ENTITY: u8 = 3;
    pub const RELATION_RELATION: u8 = 4;

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.m_slots + j]
    }

    pub fn to_grid(&self) -> String {
        grid(self.m_slots, |i, j| self.get(i, j))
    }

    pub fn from_grid(text: &str) -> Result<Self, TopologyError> {
        let cells = parse_grid(text)?;
        Ok(Self {
            m_slots: cells.len(),
            values: cells.into_iter().flatten().collect(),
        })
    }
}

fn grid(m: usize, cell: impl Fn(usize, usize) -> u8) -> String {
    let mut out = String::with_capacity(m * m * 2);
    for i in 0..m {
        for j in 0..m {
            if j > 0 {
                out.push(' ');
            }
            out.push(char::from(b'0' + cell(i, j)));
        }
        out.push('\n');
    }
    out
}

fn parse_grid(text: &str) -> Result<Vec<Vec<u8>>, TopologyError> {
    let rows: Vec<Vec<u8>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, line)| {
            line.split_whitespace()
                .map(|c| {
                    c.parse::<u8>().map_err(|e| TopologyError::Grid {
                        row: row + 1,
                        msg: e.to_string(),
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let m = rows.len();
    if let Some(row) = rows.iter().position(|r| r.len() != m) {
        return Err(TopologyError::Grid {
            row: row + 1,
            msg: format!("expected {m} cells"),
        });
    }
    Ok(rows)
}

fn check_slots(table: &ComponentTable, m_slots: usize) -> Result<(), TopologyError> {
    if table.len() > m_slots {
        return Err(TopologyError::SlotOverflow {
            active: table.len(),
            m_slots,
        });
    }
    Ok(())
}

/// Builds `M` for `scheme`. A live row opens its diagonal only when it has at
/// least one allowed neighbor key; rows without any are left fully blocked and
/// flagged in [`MaskMatrix::isolated`].
pub fn build_mask(table: &ComponentTable, scheme: MaskScheme, m_slots: usize) -> Result<MaskMatrix, TopologyError> {
    check_slots(table, m_slots)?;
    let active = table.len();
    let mut mask = MaskMatrix::fully_blocked(m_slots, active);
    for i in 0..active {
        let keys = if table.is_entity(i) {
            scheme.entity_keys
        } else {
            scheme.relation_keys
        };
        let nb = table.neighbors(i).expect("index within table");
        let mut open: Vec<usize> = Vec::new();
        if keys.entities {
            open.extend(&nb.entities);
        }
        if keys.relations {
            open.extend(&nb.relations);
        }
        if open.is_empty() {
            continue;
        }
        open.push(i);
        for j in open {
            mask.values[i * m_slots + j] = 0.0;
        }
        mask.isolated[i] = false;
    }
    Ok(mask)
}

/// Builds `T`: 1 entity-entity, 2 entity->incident relation, 3 relation->endpoint
/// entity, 4 adjacent relations, 0 otherwise (including the diagonal).
pub fn build_type_matrix(table: &ComponentTable, m_slots: usize) -> Result<TypeMatrix, TopologyError> {
    check_slots(table, m_slots)?;
    let mut values = vec![0u8; m_slots * m_slots];
    for i in 0..table.len() {
        let nb = table.neighbors(i).expect("index within table");
        let (to_entity, to_relation) = if table.is_entity(i) {
            (TypeMatrix::ENTITY_ENTITY, TypeMatrix::ENTITY_RELATION)
        } else {
            (TypeMatrix::RELATION_ENTITY, TypeMatrix::RELATION_RELATION)
        };
        for &j in &nb.entities {
            values[i * m_slots + j] = to_entity;
        }
        for &j in &nb.relations {
            values[i * m_slots + j] = to_relation;
        }
    }
    Ok(TypeMatrix { m_slots, values })
}
