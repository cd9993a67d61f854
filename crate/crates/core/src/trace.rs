//! Graph-attention trace export and heatmap rendering.
//!
//! A trace file is JSON:
//!
//! ```json
//! {"scheme":"er_e","notation":"M^{e,r}_{e}","type_encoding":false,
//!  "labels":["aenir","garth nix","author"],
//!  "blocked_rows":[],
//!  "layers":[[[0.5,0.5,0.0],[0.5,0.5,0.0],[0.5,0.5,0.0]]]}
//! ```
//!
//! `layers[l][i][j]` is the head-averaged weight of component `i` attending
//! to component `j` in encoder layer `l`, restricted to the live components.
//! Blocked rows are all zero.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kg::KnowledgeGraph;
use crate::linearize::Vocabulary;
use crate::model::{AttentionTrace, Model, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceExport {
    pub scheme: String,
    pub notation: String,
    pub type_encoding: bool,
    pub labels: Vec<String>,
    /// Indices (into `labels`) of rows with every key blocked.
    pub blocked_rows: Vec<usize>,
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl TraceExport {
    pub fn from_trace(trace: &AttentionTrace) -> Self {
        Self {
            scheme: trace.scheme.name(),
            notation: trace.scheme.notation(),
            type_encoding: trace.type_encoding,
            labels: trace.labels.clone(),
            blocked_rows: trace.blocked_rows.iter().copied().filter(|&r| r < trace.active).collect(),
            layers: (0..trace.layers.len()).map(|l| trace.active_block(l)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }
}

/// Encodes `kg` and returns its graph-attention weights.
pub fn export_trace(model: &Model, vocab: &Vocabulary, kg: &KnowledgeGraph) -> Result<TraceExport, ModelError> {
    let graph = model.prepare(kg, vocab)?;
    let (_, trace) = model.encode(&graph)?;
    Ok(TraceExport::from_trace(&trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Text,
    Svg,
}

impl FromStr for HeatmapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(HeatmapFormat::Text),
            "svg" => Ok(HeatmapFormat::Svg),
            _ => Err(format!("unknown heatmap format `{s}` (expected text or svg)")),
        }
    }
}

pub fn render_heatmap(trace: &TraceExport, layer: usize, format: HeatmapFormat) -> Result<String, String> {
    let Some(weights) = trace.layers.get(layer) else {
        return Err(format!("layer {layer} out of range ({} layers)", trace.layers.len()));
    };
    Ok(match format {
        HeatmapFormat::Text => render_text(trace, layer, weights),
        HeatmapFormat::Svg => render_svg(trace, layer, weights),
    })
}

const MAX_LABEL: usize = 18;

fn short(label: &str) -> String {
    if label.chars().count() <= MAX_LABEL {
        label.to_string()
    } else {
        let mut s: String = label.chars().take(MAX_LABEL - 1).collect();
        s.push('~');
        s
    }
}

fn render_text(trace: &TraceExport, layer: usize, w: &[Vec<f64>]) -> String {
    let labels: Vec<String> = trace.labels.iter().map(|l| short(l)).collect();
    let width = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    let typed = if trace.type_encoding { " +type" } else { "" };
    writeln!(s, "layer {layer}  {} {}{typed}", trace.scheme, trace.notation).unwrap();
    write!(s, "{:>w$}  ", "", w = width + 4).unwrap();
    for j in 0..labels.len() {
        write!(s, "{j:>5}").unwrap();
    }
    s.push('\n');
    for (i, row) in w.iter().enumerate() {
        write!(s, "{i:>3} {:<width$}  ", labels[i]).unwrap();
        for v in row {
            write!(s, "{v:>5.2}").unwrap();
        }
        if trace.blocked_rows.contains(&i) {
            s.push_str("  (blocked)");
        }
        s.push('\n');
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn render_svg(trace: &TraceExport, layer: usize, w: &[Vec<f64>]) -> String {
    const CELL: usize = 24;
    const CHAR: usize = 7;
    let n = trace.labels.len();
    let labels: Vec<String> = trace.labels.iter().map(|l| escape(&short(l))).collect();
    let margin = 10 + CHAR * trace.labels.iter().map(|l| short(l).chars().count()).max().unwrap_or(0);
    let top = margin + 20;
    let (width, height) = (margin + n * CELL + 10, top + n * CELL + 10);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="4" y="14">layer {layer} {} {}</text>"#,
        trace.scheme,
        escape(&trace.notation)
    )
    .unwrap();
    for (i, label) in labels.iter().enumerate() {
        let y = top + i * CELL + CELL / 2 + 4;
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{label}</text>"#, margin - 4).unwrap();
        let x = margin + i * CELL + CELL / 2;
        writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-60 {x} {})">{label}</text>"#,
            top - 4,
            top - 4
        )
        .unwrap();
    }
    for (i, row) in w.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{shade:02x}{shade:02x}ff" stroke="#cccccc"><title>{:.4}</title></rect>"##,
                margin + j * CELL,
                top + i * CELL,
                v
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
