//! Cluster-level view of a fitted model.
//!
//! Every `(h, k, layer)` block that holds at least one edge becomes a typed
//! edge between cluster `h` of the top side and cluster `k` of the bottom
//! side, carrying the raw event count, the number of distinct node pairs,
//! the fitted rate and the most active pairs behind it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MultiplexBipartiteGraph, Side};
use crate::inference::FitResult;

pub const DEFAULT_TOP_PAIRS: usize = 10;
pub const DEFAULT_MEMBER_SAMPLE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub index: usize,
    pub size: usize,
    /// The first members in node order.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub top: String,
    pub bottom: String,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEdge {
    pub h: usize,
    pub k: usize,
    pub layer_label: String,
    pub event_count: u64,
    pub distinct_edge_count: u64,
    pub rate: f64,
    /// Most active node pairs, by event count, ties in node order.
    pub top_pairs: Vec<PairCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraphSummary {
    pub top_clusters: Vec<ClusterInfo>,
    pub bottom_clusters: Vec<ClusterInfo>,
    pub edges: Vec<ClusterEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryOptions {
    pub top_pairs: usize,
    pub member_sample: usize,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            top_pairs: DEFAULT_TOP_PAIRS,
            member_sample: DEFAULT_MEMBER_SAMPLE,
        }
    }
}

pub fn aggregate(graph: &MultiplexBipartiteGraph, fit: &FitResult) -> Result<ClusterGraphSummary> {
    aggregate_with(graph, fit, SummaryOptions::default())
}

#[derive(Default)]
struct Block {
    events: u64,
    distinct: u64,
    pairs: Vec<(u64, u32, u32)>,
}

pub fn aggregate_with(
    graph: &MultiplexBipartiteGraph,
    fit: &FitResult,
    options: SummaryOptions,
) -> Result<ClusterGraphSummary> {
    let stats = graph.stats();
    let p = &fit.params;
    if fit.top.len() != stats.top_nodes
        || fit.bottom.len() != stats.bottom_nodes
        || p.n_layers() != stats.layers
        || fit.top.clusters != p.n_top_clusters()
        || fit.bottom.clusters != p.n_bottom_clusters()
    {
        return Err(Error::DimensionMismatch(format!(
            "fit is {}x{} nodes, {} layers, {}x{} clusters; graph is {}x{} nodes, {} layers",
            fit.top.len(),
            fit.bottom.len(),
            p.n_layers(),
            p.n_top_clusters(),
            p.n_bottom_clusters(),
            stats.top_nodes,
            stats.bottom_nodes,
            stats.layers
        )));
    }

    let clusters = |side: Side| {
        let (partition, catalog) = match side {
            Side::Top => (&fit.top, graph.top()),
            Side::Bottom => (&fit.bottom, graph.bottom()),
        };
        let mut infos: Vec<ClusterInfo> = partition
            .sizes()
            .into_iter()
            .enumerate()
            .map(|(index, size)| ClusterInfo { index, size, members: Vec::new() })
            .collect();
        for (node, &c) in partition.assignment.iter().enumerate() {
            if infos[c].members.len() < options.member_sample {
                infos[c].members.push(catalog.name(node).to_owned());
            }
        }
        infos
    };

    let mut blocks: BTreeMap<(usize, usize, usize), Block> = BTreeMap::new();
    for ((i, j, l), count) in graph.edges() {
        let h = fit.top.assignment[i as usize];
        let k = fit.bottom.assignment[j as usize];
        let block = blocks.entry((h, k, l as usize)).or_default();
        block.events += count;
        block.distinct += 1;
        block.pairs.push((count, i, j));
    }

    let mut edges: Vec<ClusterEdge> = blocks
        .into_iter()
        .map(|((h, k, l), mut block)| {
            block.pairs.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            block.pairs.truncate(options.top_pairs);
            ClusterEdge {
                h,
                k,
                layer_label: graph.layers().label(l).to_owned(),
                event_count: block.events,
                distinct_edge_count: block.distinct,
                rate: p.theta[[l, h, k]],
                top_pairs: block
                    .pairs
                    .into_iter()
                    .map(|(events, i, j)| PairCount {
                        top: graph.top().name(i as usize).to_owned(),
                        bottom: graph.bottom().name(j as usize).to_owned(),
                        events,
                    })
                    .collect(),
            }
        })
        .collect();
    sort_edges(&mut edges);

    Ok(ClusterGraphSummary {
        top_clusters: clusters(Side::Top),
        bottom_clusters: clusters(Side::Bottom),
        edges,
    })
}

fn sort_edges(edges: &mut [ClusterEdge]) {
    edges.sort_by(|a, b| (a.h, a.k, &a.layer_label).cmp(&(b.h, b.k, &b.layer_label)));
}

impl ClusterGraphSummary {
    pub fn total_events(&self) -> u64 {
        self.edges.iter().map(|e| e.event_count).sum()
    }

    pub fn total_distinct_edges(&self) -> u64 {
        self.edges.iter().map(|e| e.distinct_edge_count).sum()
    }
}

/// Keeps edges carrying at least `threshold` events.
pub fn filter_by_events(summary: &ClusterGraphSummary, threshold: u64) -> ClusterGraphSummary {
    ClusterGraphSummary {
        edges: summary.edges.iter().filter(|e| e.event_count >= threshold).cloned().collect(),
        ..summary.clone()
    }
}

/// Keeps edges whose fitted rate is at least `min_rate`.
pub fn filter_by_rate(summary: &ClusterGraphSummary, min_rate: f64) -> Result<ClusterGraphSummary> {
    if !(min_rate >= 0.0) {
        return Err(Error::InvalidParameter(format!("min_rate must be >= 0, got {min_rate}")));
    }
    Ok(ClusterGraphSummary {
        edges: summary.edges.iter().filter(|e| e.rate >= min_rate).cloned().collect(),
        ..summary.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotOptions {
    /// Node width per unit of `ln(1 + size)`.
    pub node_scale: f64,
    /// Edge pen width per unit of `ln(1 + events)`.
    pub edge_scale: f64,
}

impl Default for DotOptions {
    fn default() -> Self {
        Self { node_scale: 0.4, edge_scale: 0.5 }
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders the summary as a Graphviz digraph: one node per cluster, one
/// edge per retained typed block.
pub fn to_dot(summary: &ClusterGraphSummary, options: &DotOptions) -> String {
    let mut out = String::new();
    out.push_str("digraph clusters {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [fixedsize=true];\n");
    let node = |prefix: &str, c: &ClusterInfo, shape: &str, out: &mut String| {
        let width = options.node_scale * (c.size as f64).ln_1p();
        let _ = writeln!(
            out,
            "  {prefix}{} [shape={shape}, label={}, width={width:.4}, height={width:.4}];",
            c.index,
            quote(&format!("{prefix}{} ({})", c.index, c.size)),
        );
    };
    for c in &summary.top_clusters {
        node("T", c, "box", &mut out);
    }
    for c in &summary.bottom_clusters {
        node("B", c, "ellipse", &mut out);
    }
    for e in &summary.edges {
        let penwidth = options.edge_scale * (e.event_count as f64).ln_1p();
        let label = format!(
            "{}\n{} events, {} edges, rate {:.3}",
            e.layer_label, e.event_count, e.distinct_edge_count, e.rate
        );
        let _ = writeln!(
            out,
            "  T{} -> B{} [label={}, penwidth={penwidth:.4}];",
            e.h,
            e.k,
            quote(&label).replace('\n', "\\n"),
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Side;
    use crate::model::{HardPartition, ModelParams, SoftAssignments};
    use ndarray::Array3;

    fn fixture() -> (MultiplexBipartiteGraph, FitResult) {
        let mut g = MultiplexBipartiteGraph::new();
        g.add_events("a", "x", "L0", 5).unwrap();
        g.add_events("a", "y", "L0", 1).unwrap();
        g.add_events("b", "x", "L0", 2).unwrap();
        g.add_events("b", "x", "L1", 7).unwrap();
        g.add_events("c", "z", "L1", 3).unwrap();
        g.add_events("c", "y", "L0", 4).unwrap();
        let top = HardPartition::new(Side::Top, 2, vec![0, 0, 1]).unwrap();
        let bottom = HardPartition::new(Side::Bottom, 2, vec![0, 0, 1]).unwrap();
        let mut theta = Array3::zeros((2, 2, 2));
        theta[[0, 0, 0]] = 0.9;
        theta[[1, 1, 1]] = 0.8;
        let params = ModelParams {
            pi: vec![0.5, 0.5],
            rho: vec![0.5, 0.5],
            mu: vec![1.0; 3],
            nu: vec![1.0; 3],
            theta,
        };
        let soft = SoftAssignments::from_partitions(&top, &bottom);
        let fit = FitResult {
            params,
            top,
            bottom,
            soft,
            criterion_trajectory: vec![],
            final_complete_ll: 0.0,
            iterations: 0,
            restart_index: 0,
            converged: true,
            degenerate_blocks: vec![],
        };
        (g, fit)
    }

    #[test]
    fn hand_aggregation() {
        let (g, fit) = fixture();
        let s = aggregate(&g, &fit).unwrap();
        let got: Vec<_> = s
            .edges
            .iter()
            .map(|e| (e.h, e.k, e.layer_label.as_str(), e.event_count, e.distinct_edge_count))
            .collect();
        assert_eq!(
            got,
            [
                (0, 0, "L0", 8, 3),
                (0, 0, "L1", 7, 1),
                (1, 0, "L0", 4, 1),
                (1, 1, "L1", 3, 1),
            ]
        );
        assert_eq!(s.total_events(), 22);
        assert_eq!(s.total_distinct_edges(), 6);
        assert_eq!(s.edges[0].rate, 0.9);
        assert_eq!(s.edges[0].top_pairs[0], PairCount { top: "a".into(), bottom: "x".into(), events: 5 });
        assert_eq!(s.top_clusters[0].members, ["a", "b"]);
        assert_eq!(s.bottom_clusters[1].size, 1);
    }

    #[test]
    fn filters() {
        let (g, fit) = fixture();
        let s = aggregate(&g, &fit).unwrap();
        assert_eq!(filter_by_events(&s, 0), s);
        assert_eq!(filter_by_events(&s, 5).edges.len(), 2);
        assert!(filter_by_events(&s, 100).edges.is_empty());
        assert_eq!(filter_by_rate(&s, 0.0).unwrap(), s);
        assert_eq!(filter_by_rate(&s, 0.85).unwrap().edges.len(), 1);
        assert!(filter_by_rate(&s, 1.0).unwrap().edges.is_empty());
        assert!(filter_by_rate(&s, -1.0).is_err());
        let a = filter_by_rate(&filter_by_events(&s, 4), 0.5).unwrap();
        let b = filter_by_events(&filter_by_rate(&s, 0.5).unwrap(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch() {
        let (mut g, fit) = fixture();
        g.add_event("d", "x", "L0").unwrap();
        assert!(matches!(aggregate(&g, &fit), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn dot_single_cluster_single_edge() {
        let s = ClusterGraphSummary {
            top_clusters: vec![ClusterInfo { index: 0, size: 3, members: vec![] }],
            bottom_clusters: vec![ClusterInfo { index: 0, size: 2, members: vec![] }],
            edges: vec![ClusterEdge {
                h: 0,
                k: 0,
                layer_label: "TCP/\"80\"/in".into(),
                event_count: 10,
                distinct_edge_count: 4,
                rate: 0.5,
                top_pairs: vec![],
            }],
        };
        let dot = to_dot(&s, &DotOptions::default());
        assert_eq!(dot.lines().filter(|l| l.contains("shape=")).count(), 2);
        assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 1);
        assert!(dot.contains(r#"TCP/\"80\"/in\n10 events"#), "{dot}");
        assert!(dot.contains(&format!("penwidth={:.4}", 0.5 * 11f64.ln())));
        assert_eq!(dot, to_dot(&s, &DotOptions::default()));
    }
}
