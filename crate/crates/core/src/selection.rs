//! ICL-based choice of the cluster counts `(H, K)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{LayeredBiadjacency, MultiplexBipartiteGraph};
use crate::inference::{fit_multi_restart_view, FitConfig, FitResult};
use crate::model::complete_log_likelihood;
use crate::numeric::fmt_f64;

/// `((H-1)/2) ln I + ((K-1)/2) ln J + (L H K / 2) ln(L I J)`.
pub fn icl_penalty(
    top_clusters: usize,
    bottom_clusters: usize,
    n_layers: usize,
    n_top: usize,
    n_bottom: usize,
) -> Result<f64> {
    if n_top == 0 || n_bottom == 0 || n_layers == 0 {
        return Err(Error::InvalidParameter(format!(
            "ICL needs I, J, L > 0 (got {n_top}, {n_bottom}, {n_layers})"
        )));
    }
    let (h, k, l) = (top_clusters as f64, bottom_clusters as f64, n_layers as f64);
    let (i, j) = (n_top as f64, n_bottom as f64);
    Ok((h - 1.0) / 2.0 * i.ln() + (k - 1.0) / 2.0 * j.ln() + l * h * k / 2.0 * (l * i * j).ln())
}

/// Integrated completed likelihood of a fit, with `L_C` re-evaluated at the
/// fit's hard partitions.
pub fn icl(
    fit: &FitResult,
    adj: &LayeredBiadjacency,
    top_clusters: usize,
    bottom_clusters: usize,
) -> Result<f64> {
    if fit.params.n_top_clusters() != top_clusters
        || fit.params.n_bottom_clusters() != bottom_clusters
    {
        return Err(Error::DimensionMismatch(format!(
            "fit has {}x{} clusters, ICL requested for {top_clusters}x{bottom_clusters}",
            fit.params.n_top_clusters(),
            fit.params.n_bottom_clusters()
        )));
    }
    let penalty = icl_penalty(
        top_clusters,
        bottom_clusters,
        adj.n_layers(),
        adj.n_top(),
        adj.n_bottom(),
    )?;
    let lc = complete_log_likelihood(&fit.params, &fit.top, &fit.bottom, adj)?;
    Ok(lc - penalty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub top_values: Vec<usize>,
    pub bottom_values: Vec<usize>,
    /// Per-cell configuration; the cluster counts are overwritten per cell.
    pub template: FitConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            top_values: (2..=16).collect(),
            bottom_values: (2..=16).collect(),
            template: FitConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn new(top_values: Vec<usize>, bottom_values: Vec<usize>, template: FitConfig) -> Self {
        let mut spec = Self {
            top_values,
            bottom_values,
            template,
        };
        spec.top_values.sort_unstable();
        spec.top_values.dedup();
        spec.bottom_values.sort_unstable();
        spec.bottom_values.dedup();
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_values.is_empty() || self.bottom_values.is_empty() {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if self.top_values.contains(&0) || self.bottom_values.contains(&0) {
            return Err(Error::InvalidParameter("grid values must be >= 1".into()));
        }
        Ok(())
    }

    /// Cells in row-major `(H, K)` order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.top_values
            .iter()
            .flat_map(|&h| self.bottom_values.iter().map(move |&k| (h, k)))
            .collect()
    }

    fn config_for(&self, h: usize, k: usize) -> FitConfig {
        FitConfig {
            top_clusters: h,
            bottom_clusters: k,
            ..self.template.clone()
        }
    }
}

/// One line of the selection report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub top_clusters: usize,
    pub bottom_clusters: usize,
    pub icl: f64,
    pub complete_ll: f64,
    pub converged: bool,
    pub seconds: f64,
    /// Set when every restart of the cell failed.
    pub failed: bool,
}

impl CellRecord {
    pub fn key(&self) -> (usize, usize) {
        (self.top_clusters, self.bottom_clusters)
    }
}

pub const REPORT_HEADER: &str = "H\tK\tICL\tL_C\tconverged\tseconds";

pub fn format_record(r: &CellRecord) -> String {
    let mut line = format!("{}\t{}\t", r.top_clusters, r.bottom_clusters);
    if r.failed {
        line.push_str("NA\tNA\tfailed");
    } else {
        let _ = write!(line, "{}\t{}\t{}", fmt_f64(r.icl), fmt_f64(r.complete_ll), r.converged);
    }
    let _ = write!(line, "\t{:.3}", r.seconds);
    line
}

/// Parses a report. Malformed trailing lines (an interrupted write) are
/// ignored; malformed lines elsewhere are errors.
pub fn parse_report(text: &str) -> Result<Vec<CellRecord>> {
    let mut lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    if lines[0] != REPORT_HEADER {
        return Err(Error::MalformedHeader(format!(
            "report header {:?}, expected {REPORT_HEADER:?}",
            lines[0]
        )));
    }
    lines.remove(0);
    let complete = text.ends_with('\n');
    let mut records = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        let is_last = idx + 1 == lines.len();
        match parse_record(line) {
            Some(r) if !(is_last && !complete) => records.push(r),
            Some(_) => {}
            None if is_last => {}
            None => return Err(Error::parse(idx + 2, format!("bad report line {line:?}"))),
        }
    }
    Ok(records)
}

fn parse_record(line: &str) -> Option<CellRecord> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 6 {
        return None;
    }
    let top_clusters = f[0].parse().ok()?;
    let bottom_clusters = f[1].parse().ok()?;
    let seconds = f[5].parse().ok()?;
    if f[4] == "failed" {
        return Some(CellRecord {
            top_clusters,
            bottom_clusters,
            icl: f64::NAN,
            complete_ll: f64::NAN,
            converged: false,
            seconds,
            failed: true,
        });
    }
    Some(CellRecord {
        top_clusters,
        bottom_clusters,
        icl: f[2].parse().ok()?,
        complete_ll: f[3].parse().ok()?,
        converged: f[4].parse().ok()?,
        seconds,
        failed: false,
    })
}

#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub cells: BTreeMap<(usize, usize), CellRecord>,
    pub best: (usize, usize),
    pub best_fit: FitResult,
}

impl SelectionReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in self.cells.values() {
            out.push_str(&format_record(r));
            out.push('\n');
        }
        out
    }
}

/// `a` beats `b`: higher ICL, then smaller H, then smaller K.
fn outranks(a: &CellRecord, b: &CellRecord) -> bool {
    a.icl > b.icl || (a.icl == b.icl && a.key() < b.key())
}

/// Fits every cell of the grid and keeps the best ICL.
pub fn grid_search(graph: &MultiplexBipartiteGraph, grid: &GridSpec) -> Result<SelectionReport> {
    let adj = graph.view(grid.template.use_counts);
    grid_search_resumable(&adj, grid, &BTreeMap::new(), &|_| {})
}

/// Grid search that skips cells already present in `completed` and hands
/// every newly finished cell to `sink` as soon as it is done. Cells are
/// independent and may run concurrently; the result does not depend on
/// completion order.
pub fn grid_search_resumable(
    adj: &LayeredBiadjacency,
    grid: &GridSpec,
    completed: &BTreeMap<(usize, usize), CellRecord>,
    sink: &(dyn Fn(&CellRecord) + Sync),
) -> Result<SelectionReport> {
    grid.validate()?;
    let cells = grid.cells();
    let best: Mutex<Option<(CellRecord, FitResult)>> = Mutex::new(None);

    let fresh: Vec<CellRecord> = cells
        .par_iter()
        .filter(|key| !completed.contains_key(key))
        .map(|&(h, k)| {
            let config = grid.config_for(h, k);
            let start = Instant::now();
            let outcome = fit_multi_restart_view(adj, &config)
                .and_then(|fit| icl(&fit, adj, h, k).map(|score| (fit, score)));
            let seconds = start.elapsed().as_secs_f64();
            let record = match outcome {
                Ok((fit, score)) => {
                    let record = CellRecord {
                        top_clusters: h,
                        bottom_clusters: k,
                        icl: score,
                        complete_ll: fit.final_complete_ll,
                        converged: fit.converged,
                        seconds,
                        failed: false,
                    };
                    let mut guard = best.lock().expect("poisoned");
                    let replace = match guard.as_ref() {
                        None => true,
                        Some((incumbent, _)) => outranks(&record, incumbent),
                    };
                    if replace {
                        *guard = Some((record.clone(), fit));
                    }
                    record
                }
                Err(err) => {
                    log::warn!("cell H={h} K={k} failed: {err}");
                    CellRecord {
                        top_clusters: h,
                        bottom_clusters: k,
                        icl: f64::NAN,
                        complete_ll: f64::NAN,
                        converged: false,
                        seconds,
                        failed: true,
                    }
                }
            };
            log::info!(
                "cell H={h} K={k}: ICL={} converged={} ({seconds:.1}s)",
                record.icl,
                record.converged
            );
            sink(&record);
            record
        })
        .collect();

    let mut all: BTreeMap<(usize, usize), CellRecord> = BTreeMap::new();
    for key in &cells {
        if let Some(r) = completed.get(key) {
            all.insert(*key, r.clone());
        }
    }
    for r in fresh {
        all.insert(r.key(), r);
    }

    let winner = all
        .values()
        .filter(|r| !r.failed && !r.icl.is_nan())
        .fold(None::<&CellRecord>, |acc, r| match acc {
            Some(b) if !outranks(r, b) => Some(b),
            _ => Some(r),
        })
        .cloned()
        .ok_or(Error::AllCellsFailed { count: all.len() })?;

    let fresh_best = best.into_inner().expect("poisoned");
    let best_fit = match fresh_best {
        Some((record, fit)) if record.key() == winner.key() => fit,
        _ => {
            // winner came from a previous run: refit it with the same seeds
            let (h, k) = winner.key();
            fit_multi_restart_view(adj, &grid.config_for(h, k))?
        }
    };
    Ok(SelectionReport {
        cells: all,
        best: winner.key(),
        best_fit,
    })
}
