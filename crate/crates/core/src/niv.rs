//! Node importance visualization: the local subgraph around a node, with
//! node size encoding contribution magnitude and fill color encoding the
//! predicted class. Emitted as Graphviz DOT or JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, SparseGraph};
use crate::nam::AttributionResult;
use crate::scalar::Scalar;

/// Class colors, cycled when there are more classes than entries.
pub const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NivError {
    #[error("attribution covers {covered} hops but {requested} were requested")]
    HopsExceedResult { covered: usize, requested: usize },
    #[error("no prediction for node {0}")]
    MissingPrediction(usize),
    #[error("size range [{min}, {max}] is empty or not positive")]
    BadSizeRange { min: f64, max: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NivStyle {
    /// Node diameter range in inches.
    pub size_min: f64,
    pub size_max: f64,
}

impl Default for NivStyle {
    fn default() -> Self {
        Self {
            size_min: 0.3,
            size_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NivNode<T> {
    pub id: usize,
    pub contribution: T,
    pub predicted_class: usize,
    pub size: f64,
    pub hop_distance: usize,
    pub central: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NivDocument<T> {
    pub central_node: usize,
    pub hops: usize,
    pub nodes: Vec<NivNode<T>>,
    pub edges: Vec<(usize, usize)>,
    pub palette: BTreeMap<usize, String>,
}

/// Builds the document for the `hops`-hop subgraph around the query node.
/// `predictions` holds the predicted class of every graph node.
///
/// Sizes map `|contribution|` linearly onto `[size_min, size_max]`; when
/// every magnitude is equal all nodes get the midpoint.
pub fn build_niv<T: Scalar>(
    result: &AttributionResult<T>,
    predictions: &[usize],
    graph: &SparseGraph,
    hops: usize,
    style: NivStyle,
) -> Result<NivDocument<T>, NivError> {
    if hops > result.query.hops {
        return Err(NivError::HopsExceedResult {
            covered: result.query.hops,
            requested: hops,
        });
    }
    if !(style.size_min > 0.0 && style.size_max >= style.size_min && style.size_max.is_finite()) {
        return Err(NivError::BadSizeRange {
            min: style.size_min,
            max: style.size_max,
        });
    }
    let center = result.query.node;
    let members = graph.hop_distances(center, hops)?;
    let magnitudes: Vec<f64> = members
        .iter()
        .map(|&(n, _)| result.contribution(n).as_f64().abs())
        .collect();
    let lo = magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = magnitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let size = |m: f64| {
        if span > 0.0 {
            style.size_min + (style.size_max - style.size_min) * (m - lo) / span
        } else {
            (style.size_min + style.size_max) / 2.0
        }
    };

    let mut nodes = Vec::with_capacity(members.len());
    for (&(id, hop_distance), &m) in members.iter().zip(&magnitudes) {
        let predicted_class = *predictions.get(id).ok_or(NivError::MissingPrediction(id))?;
        nodes.push(NivNode {
            id,
            contribution: result.contribution(id),
            predicted_class,
            size: size(m),
            hop_distance,
            central: id == center,
        });
    }
    let ids: BTreeSet<usize> = members.iter().map(|&(n, _)| n).collect();
    let edges = graph
        .edges()
        .filter(|(u, v)| ids.contains(u) && ids.contains(v))
        .collect();
    // Sized from every prediction so documents of one model share colors.
    let num_colors = predictions.iter().max().map_or(0, |&c| c + 1);
    let palette = (0..num_colors)
        .map(|c| (c, PALETTE[c % PALETTE.len()].to_string()))
        .collect();
    Ok(NivDocument {
        central_node: center,
        hops,
        nodes,
        edges,
        palette,
    })
}

/// Graphviz rendering. Nodes appear in ascending id order; the central
/// node is double-bordered, negative contributions get a dashed border.
pub fn emit_dot<T: Scalar>(doc: &NivDocument<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph niv_{} {{", doc.central_node);
    out.push_str("  graph [overlap=false, splines=true];\n");
    out.push_str("  node [shape=circle, fixedsize=true, fontsize=10, fontname=\"Helvetica\"];\n");
    for n in &doc.nodes {
        let border = if n.contribution < T::zero() { "dashed" } else { "solid" };
        let color = doc
            .palette
            .get(&n.predicted_class)
            .map(String::as_str)
            .unwrap_or("#ffffff");
        let _ = write!(
            out,
            "  {} [label=\"{}\", width={:.4}, height={:.4}, style=\"filled,{}\", fillcolor=\"{}\", tooltip=\"contribution={:.6e} class={} hop={}\"",
            n.id,
            n.id,
            n.size,
            n.size,
            border,
            color,
            n.contribution.as_f64(),
            n.predicted_class,
            n.hop_distance
        );
        if n.central {
            out.push_str(", peripheries=2, penwidth=2");
        }
        out.push_str("];\n");
    }
    for (u, v) in &doc.edges {
        let _ = writeln!(out, "  {u} -- {v};");
    }
    out.push_str("}\n");
    out
}

pub fn emit_json<T: Scalar>(doc: &NivDocument<T>) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serializes");
    s.push('\n');
    s
}

pub fn parse_json<T: Scalar>(text: &str) -> Result<NivDocument<T>, serde_json::Error> {
    serde_json::from_str(text)
}

/// `(id, width)` pairs read back from [`emit_dot`] output.
pub fn dot_node_sizes(dot: &str) -> Vec<(usize, f64)> {
    dot.lines()
        .filter_map(|line| {
            let line = line.trim();
            let (id, rest) = line.split_once(" [label=")?;
            let id: usize = id.parse().ok()?;
            let width = rest.split("width=").nth(1)?.split(',').next()?.parse().ok()?;
            Some((id, width))
        })
        .collect()
}
