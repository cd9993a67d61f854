//! Line-delimited JSON corpus format.
//!
//! One record per line:
//!
//! ```json
//! {"id":"ex1","entities":[{"id":"a","label":"Aenir"},{"id":"g","label":"Garth Nix"}],
//!  "relations":[{"id":"r","label":"author"}],"triples":[["a","r","g"]],
//!  "references":["Aenir was written by Garth Nix."]}
//! ```
//!
//! Blank lines are skipped. Line numbers in errors are 1-based.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{Entity, GraphError, KnowledgeGraph, Relation, SlotBudget, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub triples: Vec<[String; 3]>,
    pub references: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Validation { line: usize, source: GraphError },
    #[error("line {line}: record has no reference text")]
    NoReference { line: usize },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DatasetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Parse { line, .. }
            | DatasetError::Validation { line, .. }
            | DatasetError::NoReference { line }
            | DatasetError::DuplicateId { line, .. } => Some(*line),
            DatasetError::Io(_) => None,
        }
    }
}

/// A validated graph with its reference texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub id: String,
    pub kg: KnowledgeGraph,
    pub references: Vec<String>,
}

impl DatasetRecord {
    pub fn graph(&self) -> KnowledgeGraph {
        KnowledgeGraph::new(
            self.entities.clone(),
            self.relations.clone(),
            self.triples.iter().map(|[h, r, t]| Triple::new(h, r, t)).collect(),
        )
    }

    pub fn from_pair(pair: &Pair) -> Self {
        Self {
            id: pair.id.clone(),
            entities: pair.kg.entities.clone(),
            relations: pair.kg.relations.clone(),
            triples: pair
                .kg
                .triples
                .iter()
                .map(|t| [t.head.clone(), t.relation.clone(), t.tail.clone()])
                .collect(),
            references: pair.references.clone(),
        }
    }
}

pub fn read_dataset(reader: impl BufRead, budget: SlotBudget) -> Result<Vec<Pair>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.references.iter().all(|r| r.trim().is_empty()) {
            return Err(DatasetError::NoReference { line: line_no });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id: rec.id });
        }
        let kg = rec
            .graph()
            .validate(budget)
            .map_err(|source| DatasetError::Validation { line: line_no, source })?;
        out.push(Pair {
            id: rec.id,
            kg,
            references: rec.references,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, budget: SlotBudget) -> Result<Vec<Pair>, DatasetError> {
    read_dataset(BufReader::new(fs::File::open(path)?), budget)
}

pub fn write_records(mut w: impl Write, pairs: &[Pair]) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, &DatasetRecord::from_pair(p))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, pairs: &[Pair]) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write_records(&mut f, pairs)?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"id":"x","entities":[{"id":"A","label":"A"},{"id":"B","label":"B"}],"relations":[{"id":"r","label":"r"}],"triples":[["A","r","B"]],"references":["a r b"]}"#;

    #[test]
    fn single_record() {
        let pairs = read_dataset(ONE.as_bytes(), SlotBudget::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].kg.triples[0], Triple::new("A", "r", "B"));
        assert_eq!(pairs[0].references, vec!["a r b"]);
    }

    #[test]
    fn dangling_id_reports_its_line() {
        let bad = ONE.replace(r#"["A","r","B"]"#, r#"["A","r","C"]"#).replace("\"x\"", "\"y\"");
        let text = format!("{ONE}\n\n{bad}\n");
        let err = read_dataset(text.as_bytes(), SlotBudget::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Validation { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_json_reports_its_line() {
        let text = format!("{ONE}\n{{not json\n");
        let err = read_dataset(text.as_bytes(), SlotBudget::default()).unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(matches!(err, DatasetError::Parse { .. }));
    }

    #[test]
    fn missing_reference_and_duplicate_id() {
        let none = ONE.replace(r#"["a r b"]"#, "[]");
        assert!(matches!(
            read_dataset(none.as_bytes(), SlotBudget::default()),
            Err(DatasetError::NoReference { line: 1 })
        ));
        let twice = format!("{ONE}\n{ONE}");
        assert!(matches!(
            read_dataset(twice.as_bytes(), SlotBudget::default()),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_read_is_lossless() {
        let pairs = read_dataset(ONE.as_bytes(), SlotBudget::default()).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &pairs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().trim_end(), ONE);
        assert_eq!(read_dataset(&buf[..], SlotBudget::default()).unwrap(), pairs);
    }
}
