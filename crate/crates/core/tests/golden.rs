//! Golden files for every on-disk format. Regenerate with `UPDATE_GOLDEN=1`.

use std::fs;
use std::path::PathBuf;

use gap_core::checkpoint;
use gap_core::dataset::{read_dataset, write_records};
use gap_core::kg::{component_index, KnowledgeGraph, SlotBudget};
use gap_core::linearize::{build_vocab, Vocabulary};
use gap_core::model::{Model, ModelConfig};
use gap_core::topology::{build_mask, build_type_matrix, MaskMatrix, MaskScheme, TypeMatrix};
use gap_core::trace::{render_heatmap, HeatmapFormat, TraceExport};
use gap_core::train::MetricRecord;

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn figure_graph() -> KnowledgeGraph {
    KnowledgeGraph::from_label_triples(&[("E1", "R1", "E2"), ("E1", "R2", "E3")])
}

#[test]
fn mask_grids() {
    let table = component_index(&figure_graph());
    for scheme in MaskScheme::NAMED {
        let mask = build_mask(&table, scheme, 7).unwrap();
        let grid = mask.to_grid();
        check(&format!("figure_{}.mask.txt", scheme.name()), &grid);
        assert_eq!(MaskMatrix::from_grid(&grid, table.len()).unwrap(), mask);
    }
}

#[test]
fn type_grid() {
    let types = build_type_matrix(&component_index(&figure_graph()), 7).unwrap();
    let grid = types.to_grid();
    check("figure.types.txt", &grid);
    assert_eq!(TypeMatrix::from_grid(&grid).unwrap(), types);
}

const RECORD: &str = r#"{"id":"aenir","entities":[{"id":"a","label":"Aenir"},{"id":"g","label":"Garth Nix"},{"id":"au","label":"Australians"}],"relations":[{"id":"author","label":"author"},{"id":"nat","label":"nationality"}],"triples":[["a","author","g"],["g","nat","au"]],"references":["Aenir was written by Garth Nix , who is Australian .","Garth Nix wrote Aenir ."]}"#;

#[test]
fn dataset_and_vocab() {
    let pairs = read_dataset(RECORD.as_bytes(), SlotBudget::default()).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, &pairs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    check("record.jsonl", &text);
    assert_eq!(text.trim_end(), RECORD);

    let vocab = build_vocab(
        pairs.iter().map(|p| (&p.kg, p.references.iter().map(String::as_str))),
        1,
    )
    .unwrap();
    check("vocab.txt", &vocab.to_text());
    assert_eq!(Vocabulary::read_from(vocab.to_text().as_bytes()).unwrap(), vocab);
}

#[test]
fn metric_log_lines() {
    let lines = [
        MetricRecord {
            step: 100,
            split: "train".into(),
            bleu: None,
            loss: Some(2.5),
        },
        MetricRecord {
            step: 100,
            split: "valid".into(),
            bleu: Some(41.25),
            loss: Some(2.75),
        },
    ]
    .iter()
    .map(|r| r.to_json_line() + "\n")
    .collect::<String>();
    check("metrics.jsonl", &lines);
}

fn sample_trace() -> TraceExport {
    TraceExport {
        scheme: "er_none".into(),
        notation: MaskScheme::ER_NONE.notation(),
        type_encoding: true,
        labels: vec!["aenir".into(), "garth nix".into(), "author".into()],
        blocked_rows: vec![2],
        layers: vec![vec![
            vec![0.25, 0.5, 0.25],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 0.0],
        ]],
    }
}

#[test]
fn trace_and_heatmaps() {
    let t = sample_trace();
    check("trace.json", &t.to_json());
    let back: TraceExport = serde_json::from_str(&t.to_json()).unwrap();
    assert_eq!(back, t);
    check("trace.txt", &render_heatmap(&t, 0, HeatmapFormat::Text).unwrap());
    check("trace.svg", &render_heatmap(&t, 0, HeatmapFormat::Svg).unwrap());
}

#[test]
fn checkpoint_header() {
    let mut cfg = ModelConfig::new(10).with_dims(4, 2, 1);
    cfg.max_positions = 8;
    let bytes = checkpoint::to_bytes(&Model::new(cfg, 1).unwrap());
    assert_eq!(&bytes[..8], checkpoint::MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), checkpoint::VERSION);
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let config = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
    let count = u32::from_le_bytes(bytes[16 + len..20 + len].try_into().unwrap());
    check("checkpoint_header.txt", &format!("{config}\ntensors {count}\n"));
}
