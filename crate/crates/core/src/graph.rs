//! Bipartite multiplex graphs built from events.
//!
//! Every event is a `(top entity, bottom entity, layer)` triple. Repeated
//! triples collapse into a single edge whose multiplicity counts the
//! underlying events; the model only sees the 0/1 structure (or, on request,
//! the counts) through [`LayeredBiadjacency`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRAPH_HEADER: &str = "#mlbm-graph v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Bottom,
}

fn check_name(kind: &str, name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::RejectedInput(format!("empty {kind} name")));
    }
    if name.contains(['\t', '\n', '\r']) {
        return Err(Error::RejectedInput(format!(
            "{kind} name {name:?} contains a tab or line break"
        )));
    }
    Ok(())
}

/// Interning table mapping names to contiguous indices in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&idx) = self.index.get(name) {
            return idx;
        }
        let idx = u32::try_from(self.names.len()).expect("catalog exceeds u32 indices");
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), idx);
        idx
    }
}

/// Ordered set of entity names on one side of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityCatalog {
    side: Side,
    inner: Interner,
}

impl EntityCatalog {
    pub fn new(side: Side) -> Self {
        Self {
            side,
            inner: Interner::default(),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.inner.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.inner.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.inner.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.inner.index.get(name).map(|&i| i as usize)
    }

    pub fn get_or_insert(&mut self, name: &str) -> Result<u32> {
        check_name("entity", name)?;
        Ok(self.inner.get_or_insert(name))
    }
}

/// Ordered set of edge-type labels such as `TCP/80/outbound`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerCatalog {
    inner: Interner,
}

impl LayerCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.names.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.inner.names
    }

    pub fn label(&self, index: usize) -> &str {
        &self.inner.names[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.inner.index.get(label).map(|&i| i as usize)
    }

    pub fn get_or_insert(&mut self, label: &str) -> Result<u32> {
        check_name("layer", label)?;
        Ok(self.inner.get_or_insert(label))
    }
}

/// `(I, J, L, M, N)`: top nodes, bottom nodes, layers, distinct edges and events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphStats {
    pub top_nodes: usize,
    pub bottom_nodes: usize,
    pub layers: usize,
    pub distinct_edges: usize,
    pub events: u64,
}

impl GraphStats {
    pub fn as_tuple(&self) -> (usize, usize, usize, usize, u64) {
        (
            self.top_nodes,
            self.bottom_nodes,
            self.layers,
            self.distinct_edges,
            self.events,
        )
    }
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "I={} J={} L={} M={} N={}",
            self.top_nodes, self.bottom_nodes, self.layers, self.distinct_edges, self.events
        )
    }
}

pub type EdgeKey = (u32, u32, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplexBipartiteGraph {
    top: EntityCatalog,
    bottom: EntityCatalog,
    layers: LayerCatalog,
    edges: IndexMap<EdgeKey, u64>,
}

impl Default for MultiplexBipartiteGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl MultiplexBipartiteGraph {
    pub fn new() -> Self {
        Self {
            top: EntityCatalog::new(Side::Top),
            bottom: EntityCatalog::new(Side::Bottom),
            layers: LayerCatalog::new(),
            edges: IndexMap::new(),
        }
    }

    pub fn top(&self) -> &EntityCatalog {
        &self.top
    }

    pub fn bottom(&self) -> &EntityCatalog {
        &self.bottom
    }

    pub fn layers(&self) -> &LayerCatalog {
        &self.layers
    }

    /// Records one event.
    pub fn add_event(&mut self, top: &str, bottom: &str, layer: &str) -> Result<()> {
        self.add_events(top, bottom, layer, 1)
    }

    /// Records `count` identical events. A zero count registers the names only.
    pub fn add_events(&mut self, top: &str, bottom: &str, layer: &str, count: u64) -> Result<()> {
        // validate everything before touching any catalog
        check_name("entity", top)?;
        check_name("entity", bottom)?;
        check_name("layer", layer)?;
        let i = self.top.get_or_insert(top)?;
        let j = self.bottom.get_or_insert(bottom)?;
        let l = self.layers.get_or_insert(layer)?;
        if count > 0 {
            *self.edges.entry((i, j, l)).or_insert(0) += count;
        }
        Ok(())
    }

    /// Registers a top entity without any edge.
    pub fn ensure_top(&mut self, name: &str) -> Result<usize> {
        self.top.get_or_insert(name).map(|i| i as usize)
    }

    pub fn ensure_bottom(&mut self, name: &str) -> Result<usize> {
        self.bottom.get_or_insert(name).map(|i| i as usize)
    }

    pub fn ensure_layer(&mut self, label: &str) -> Result<usize> {
        self.layers.get_or_insert(label).map(|i| i as usize)
    }

    /// Adds `count` events on an edge addressed by catalog indices.
    pub fn add_events_by_index(&mut self, i: usize, j: usize, l: usize, count: u64) -> Result<()> {
        if i >= self.top.len() || j >= self.bottom.len() || l >= self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "edge ({i}, {j}, {l}) outside catalogs of size ({}, {}, {})",
                self.top.len(),
                self.bottom.len(),
                self.layers.len()
            )));
        }
        if count > 0 {
            *self.edges.entry((i as u32, j as u32, l as u32)).or_insert(0) += count;
        }
        Ok(())
    }

    /// Edges with their multiplicities, in insertion order.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (EdgeKey, u64)> + '_ {
        self.edges.iter().map(|(&k, &c)| (k, c))
    }

    pub fn multiplicity(&self, i: usize, j: usize, l: usize) -> u64 {
        self.edges
            .get(&(i as u32, j as u32, l as u32))
            .copied()
            .unwrap_or(0)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            top_nodes: self.top.len(),
            bottom_nodes: self.bottom.len(),
            layers: self.layers.len(),
            distinct_edges: self.edges.len(),
            events: self.edges.values().sum(),
        }
    }

    /// Sparse 0/1 biadjacency matrices, one per layer.
    pub fn binary_view(&self) -> LayeredBiadjacency {
        LayeredBiadjacency::build(self, |_| 1.0)
    }

    /// Same sparsity pattern as [`binary_view`](Self::binary_view) but
    /// weighted by event multiplicities.
    pub fn count_view(&self) -> LayeredBiadjacency {
        LayeredBiadjacency::build(self, |c| c as f64)
    }

    pub fn view(&self, use_counts: bool) -> LayeredBiadjacency {
        if use_counts {
            self.count_view()
        } else {
            self.binary_view()
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{GRAPH_HEADER}")?;
        for (marker, names) in [
            ("#top", self.top.names()),
            ("#bottom", self.bottom.names()),
            ("#layers", self.layers.labels()),
        ] {
            writeln!(out, "{marker}")?;
            for name in names {
                if name.starts_with('#') || name.starts_with('\\') {
                    writeln!(out, "\\{name}")?;
                } else {
                    writeln!(out, "{name}")?;
                }
            }
        }
        writeln!(out, "#edges")?;
        for (&(i, j, l), &count) in &self.edges {
            writeln!(out, "{i}\t{j}\t{l}\t{count}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            Start,
            Top,
            Bottom,
            Layers,
            Edges,
        }
        let mut graph = Self::new();
        let mut section = Section::Start;
        let mut saw_header = false;
        for (lineno, line) in input.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if lineno == 1 {
                if line != GRAPH_HEADER {
                    return Err(Error::parse(lineno, format!("expected {GRAPH_HEADER:?}")));
                }
                saw_header = true;
                continue;
            }
            let expected_next = match section {
                Section::Start => Some(("#top", Section::Top)),
                Section::Top => Some(("#bottom", Section::Bottom)),
                Section::Bottom => Some(("#layers", Section::Layers)),
                Section::Layers => Some(("#edges", Section::Edges)),
                Section::Edges => None,
            };
            if let Some((marker, next)) = expected_next {
                if line == marker {
                    section = next;
                    continue;
                }
            }
            let unescape = |s: &str| -> String {
                s.strip_prefix('\\').map(str::to_owned).unwrap_or_else(|| s.to_owned())
            };
            match section {
                Section::Start => {
                    return Err(Error::parse(lineno, "expected #top section"));
                }
                Section::Top => {
                    let name = unescape(line);
                    let before = graph.top.len();
                    graph
                        .top
                        .get_or_insert(&name)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                    if graph.top.len() == before {
                        return Err(Error::parse(lineno, format!("duplicate top name {name:?}")));
                    }
                }
                Section::Bottom => {
                    let name = unescape(line);
                    let before = graph.bottom.len();
                    graph
                        .bottom
                        .get_or_insert(&name)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                    if graph.bottom.len() == before {
                        return Err(Error::parse(lineno, format!("duplicate bottom name {name:?}")));
                    }
                }
                Section::Layers => {
                    let name = unescape(line);
                    let before = graph.layers.len();
                    graph
                        .layers
                        .get_or_insert(&name)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                    if graph.layers.len() == before {
                        return Err(Error::parse(lineno, format!("duplicate layer {name:?}")));
                    }
                }
                Section::Edges => {
                    if line.is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = line.split('\t').collect();
                    if fields.len() != 4 {
                        return Err(Error::parse(lineno, "expected 4 tab-separated fields"));
                    }
                    let parse = |s: &str| -> Result<u64> {
                        s.parse::<u64>()
                            .map_err(|e| Error::parse(lineno, format!("{s:?}: {e}")))
                    };
                    let (i, j, l, count) = (
                        parse(fields[0])? as usize,
                        parse(fields[1])? as usize,
                        parse(fields[2])? as usize,
                        parse(fields[3])?,
                    );
                    if count == 0 {
                        return Err(Error::parse(lineno, "zero multiplicity"));
                    }
                    let key = (i as u32, j as u32, l as u32);
                    if graph.edges.contains_key(&key) {
                        return Err(Error::parse(lineno, "duplicate edge"));
                    }
                    graph
                        .add_events_by_index(i, j, l, count)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                }
            }
        }
        if !saw_header || section != Section::Edges {
            return Err(Error::parse(0, "truncated graph file"));
        }
        Ok(graph)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file))
    }
}

/// One stored nonzero: the opposite endpoint, its layer and its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub other: u32,
    pub layer: u32,
    pub weight: f64,
}

/// Compressed sparse storage of `B^(1..L)` indexed from both sides.
#[derive(Debug, Clone)]
pub struct LayeredBiadjacency {
    n_top: usize,
    n_bottom: usize,
    n_layers: usize,
    top_offsets: Vec<usize>,
    top_entries: Vec<Incidence>,
    bottom_offsets: Vec<usize>,
    bottom_entries: Vec<Incidence>,
}

fn build_csr(n: usize, mut triples: Vec<(u32, u32, u32, f64)>) -> (Vec<usize>, Vec<Incidence>) {
    triples.sort_unstable_by_key(|&(a, b, l, _)| (a, b, l));
    let mut offsets = vec![0usize; n + 1];
    for &(a, ..) in &triples {
        offsets[a as usize + 1] += 1;
    }
    for idx in 0..n {
        offsets[idx + 1] += offsets[idx];
    }
    let entries = triples
        .into_iter()
        .map(|(_, other, layer, weight)| Incidence {
            other,
            layer,
            weight,
        })
        .collect();
    (offsets, entries)
}

impl LayeredBiadjacency {
    fn build(graph: &MultiplexBipartiteGraph, weight: impl Fn(u64) -> f64) -> Self {
        let triples: Vec<(u32, u32, u32, f64)> = graph
            .edges
            .iter()
            .map(|(&(i, j, l), &c)| (i, j, l, weight(c)))
            .collect();
        Self::from_triples(
            graph.top.len(),
            graph.bottom.len(),
            graph.layers.len(),
            triples,
        )
    }

    /// Builds the structure from `(i, j, layer, weight)` triples. Triples
    /// must be distinct; zero weights are dropped.
    pub fn from_triples(
        n_top: usize,
        n_bottom: usize,
        n_layers: usize,
        triples: Vec<(u32, u32, u32, f64)>,
    ) -> Self {
        let triples: Vec<_> = triples.into_iter().filter(|t| t.3 != 0.0).collect();
        debug_assert!(triples
            .iter()
            .all(|&(i, j, l, _)| (i as usize) < n_top && (j as usize) < n_bottom && (l as usize) < n_layers));
        let transposed = triples.iter().map(|&(i, j, l, w)| (j, i, l, w)).collect();
        let (top_offsets, top_entries) = build_csr(n_top, triples);
        let (bottom_offsets, bottom_entries) = build_csr(n_bottom, transposed);
        Self {
            n_top,
            n_bottom,
            n_layers,
            top_offsets,
            top_entries,
            bottom_offsets,
            bottom_entries,
        }
    }

    pub fn n_top(&self) -> usize {
        self.n_top
    }

    pub fn n_bottom(&self) -> usize {
        self.n_bottom
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// Number of stored nonzeros across all layers.
    pub fn nnz(&self) -> usize {
        self.top_entries.len()
    }

    /// Nonzeros of top node `i`, sorted by `(j, layer)`.
    pub fn top_row(&self, i: usize) -> &[Incidence] {
        &self.top_entries[self.top_offsets[i]..self.top_offsets[i + 1]]
    }

    /// Nonzeros of bottom node `j`, sorted by `(i, layer)`.
    pub fn bottom_row(&self, j: usize) -> &[Incidence] {
        &self.bottom_entries[self.bottom_offsets[j]..self.bottom_offsets[j + 1]]
    }

    /// All nonzeros as `(i, j, layer, weight)` in row-major order.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.n_top).flat_map(move |i| {
            self.top_row(i)
                .iter()
                .map(move |e| (i, e.other as usize, e.layer as usize, e.weight))
        })
    }

    /// Nonzero `(i, j)` positions of one layer.
    pub fn layer_nonzeros(&self, layer: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nonzeros()
            .filter(move |&(_, _, l, _)| l == layer)
            .map(|(i, j, _, _)| (i, j))
    }

    /// `sum_l sum_j b_ij`.
    pub fn top_degree(&self, i: usize) -> f64 {
        self.top_row(i).iter().map(|e| e.weight).sum()
    }

    /// `sum_l sum_i b_ij`.
    pub fn bottom_degree(&self, j: usize) -> f64 {
        self.bottom_row(j).iter().map(|e| e.weight).sum()
    }

    /// Total mass `M = sum b_ij^(l)`.
    pub fn total_mass(&self) -> f64 {
        self.top_entries.iter().map(|e| e.weight).sum()
    }

    /// Per-layer mass `M_l`.
    pub fn layer_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_layers];
        for e in &self.top_entries {
            mass[e.layer as usize] += e.weight;
        }
        mass
    }

    /// Same matrices with the roles of the two node sets exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            n_top: self.n_bottom,
            n_bottom: self.n_top,
            n_layers: self.n_layers,
            top_offsets: self.bottom_offsets.clone(),
            top_entries: self.bottom_entries.clone(),
            bottom_offsets: self.top_offsets.clone(),
            bottom_entries: self.top_entries.clone(),
        }
    }
}
