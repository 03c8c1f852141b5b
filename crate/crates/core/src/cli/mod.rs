//! The `mlbm` command line: one subcommand per pipeline stage.
//!
//! Every subcommand writes its artifacts into `--out-dir` through a
//! temporary file and a rename, and finishes with a `<command>.run.json`
//! record holding the command line, seed, worker count, version and the
//! SHA-256 digest of every input.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::MultiplexBipartiteGraph;
use crate::inference::{
    fit_multi_restart, FitConfig, FitDocument, DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS,
    DEFAULT_RESTARTS,
};
use crate::ingest::{self, IngestReport, IngestSpec};
use crate::metrics::adjusted_rand_index;
use crate::model::{sample_with_names, ParamsDocument};
use crate::numeric::{fmt_f64, to_json_17};
use crate::selection::{
    format_record, grid_search_resumable, parse_report, CellRecord, GridSpec, REPORT_HEADER,
};
use crate::summary::{self, DotOptions, SummaryOptions};

pub const GRAPH_FILE: &str = "graph.mlbm";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const FIT_FILE: &str = "fit.json";
pub const REPORT_FILE: &str = "report.tsv";
pub const BEST_FIT_FILE: &str = "best_fit.json";
pub const PLANTED_FILE: &str = "planted.json";
pub const DOT_FILE: &str = "summary.dot";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "mlbm", version, about = "Multilayer Poisson latent block models for event-log graphs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, env = "MLBM_WORKERS")]
    pub workers: Option<usize>,
    /// Directory receiving every artifact of the run.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a graph file from raw log files.
    Ingest(IngestArgs),
    /// Fit one (H, K) model with multiple restarts.
    Fit(FitArgs),
    /// Grid search over (H, K) by ICL.
    Select(SelectArgs),
    /// Draw a synthetic graph from a parameter file.
    Sample(SampleArgs),
    /// Aggregate a fit into a cluster graph (DOT and JSON).
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input files, plain or gzip-compressed.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Built-in preset: vast-nf or lanl-auth.
    #[arg(long, conflicts_with = "preset_file", required_unless_present = "preset_file")]
    pub preset: Option<String>,
    /// Preset TOML file.
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
    /// Internal network range, replacing the preset's (netflow only).
    #[arg(long = "internal-cidr")]
    pub internal_cidrs: Vec<String>,
    /// Internal host name, replacing the preset's (netflow only).
    #[arg(long = "internal-host")]
    pub internal_hosts: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct EmArgs {
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    /// Use event counts instead of binary adjacency.
    #[arg(long)]
    pub counts: bool,
    /// Keep the soft-EM parameters instead of refitting at the hard partitions.
    #[arg(long)]
    pub no_refit: bool,
}

impl EmArgs {
    fn config(&self, h: usize, k: usize, seed: u64) -> FitConfig {
        FitConfig {
            top_clusters: h,
            bottom_clusters: k,
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            restarts: self.restarts,
            seed,
            use_counts: self.counts,
            hard_refit: !self.no_refit,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Number of top clusters.
    #[arg(short = 'H', long = "top-clusters")]
    pub top_clusters: usize,
    /// Number of bottom clusters.
    #[arg(short = 'K', long = "bottom-clusters")]
    pub bottom_clusters: usize,
    #[command(flatten)]
    pub em: EmArgs,
    /// Planted labels (from `sample`) to score the fit against.
    #[arg(long)]
    pub planted: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Top cluster counts: a range `2..16` or a list `2,3,5`.
    #[arg(long, default_value = "2..16")]
    pub top_range: String,
    /// Bottom cluster counts: a range `2..16` or a list `2,3,5`.
    #[arg(long, default_value = "2..16")]
    pub bottom_range: String,
    #[command(flatten)]
    pub em: EmArgs,
    /// Discard an existing report instead of resuming it.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Parameter document (JSON).
    #[arg(long)]
    pub params: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub fit: PathBuf,
    /// Take filter defaults from this built-in preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Keep edges with at least this many events.
    #[arg(long)]
    pub min_events: Option<u64>,
    /// Keep edges whose fitted rate is at least this.
    #[arg(long)]
    pub min_rate: Option<f64>,
    /// Node pairs listed per edge in the JSON export.
    #[arg(long, default_value_t = summary::DEFAULT_TOP_PAIRS)]
    pub top_pairs: usize,
}

/// Parses `a..b` (inclusive), `a-b` or `a,b,c`.
pub fn parse_cluster_range(s: &str) -> anyhow::Result<Vec<usize>> {
    let s = s.trim();
    let bounds = s.split_once("..").or_else(|| s.split_once('-'));
    let values: Vec<usize> = match bounds {
        Some((lo, hi)) => {
            let lo: usize = lo.trim().parse().with_context(|| format!("bad range {s:?}"))?;
            let hi: usize = hi
                .trim()
                .trim_start_matches('=')
                .parse()
                .with_context(|| format!("bad range {s:?}"))?;
            if lo > hi {
                bail!("empty range {s:?}");
            }
            (lo..=hi).collect()
        }
        None => s
            .split(',')
            .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad value in {s:?}")))
            .collect::<anyhow::Result<_>>()?,
    };
    if values.is_empty() || values.contains(&0) {
        bail!("cluster counts must be positive in {s:?}");
    }
    Ok(values)
}

/// Provenance record written next to the artifacts of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub arguments: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    /// Input path to SHA-256 digest.
    pub inputs: IndexMap<String, String>,
    pub outputs: Vec<String>,
    /// Command-specific results.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub results: IndexMap<String, serde_json::Value>,
}

/// Planted labels written by `sample`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDocument {
    pub seed: u64,
    pub assignment_top: IndexMap<String, usize>,
    pub assignment_bottom: IndexMap<String, usize>,
}

/// Writes `contents` to `dir/name` via a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

struct HashingReader<R> {
    inner: R,
    hasher: Rc<RefCell<Sha256>>,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.borrow_mut().update(&buf[..n]);
        Ok(n)
    }
}

struct Run {
    command: &'static str,
    out_dir: PathBuf,
    seed: u64,
    workers: usize,
    inputs: IndexMap<String, String>,
    outputs: Vec<String>,
    results: IndexMap<String, serde_json::Value>,
}

impl Run {
    fn new(command: &'static str, global: &GlobalArgs, workers: usize) -> anyhow::Result<Self> {
        fs::create_dir_all(&global.out_dir)
            .with_context(|| format!("creating {}", global.out_dir.display()))?;
        Ok(Self {
            command,
            out_dir: global.out_dir.clone(),
            seed: global.seed,
            workers,
            inputs: IndexMap::new(),
            outputs: Vec::new(),
            results: IndexMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = sha256_file(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.out_dir, name, contents)
            .with_context(|| format!("writing {}", self.out_dir.join(name).display()))?;
        self.outputs.push(name.to_owned());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let text = to_json_17(value)?;
        self.write(name, text.as_bytes())
    }

    fn result(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.results.insert(key.to_owned(), value.into());
    }

    fn finish(self, arguments: Vec<String>) -> anyhow::Result<()> {
        let name = format!("{}.run.json", self.command);
        let meta = RunMetadata {
            command: self.command.to_owned(),
            arguments,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.seed,
            workers: self.workers,
            inputs: self.inputs,
            outputs: self.outputs,
            results: self.results,
        };
        let text = to_json_17(&meta)?;
        write_atomic(&self.out_dir, &name, text.as_bytes())
            .with_context(|| format!("writing {name}"))?;
        Ok(())
    }
}

fn load_graph(run: &mut Run, path: &Path) -> anyhow::Result<MultiplexBipartiteGraph> {
    run.input(path)?;
    MultiplexBipartiteGraph::load(path).with_context(|| format!("loading graph {}", path.display()))
}

fn load_json<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> anyhow::Result<T> {
    run.input(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs a parsed command line. `arguments` is echoed into the run record.
pub fn run(cli: Cli, arguments: Vec<String>) -> anyhow::Result<()> {
    let workers = match cli.global.workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    pool.install(|| {
        let global = &cli.global;
        match &cli.command {
            Command::Ingest(a) => cmd_ingest(global, workers, a, arguments),
            Command::Fit(a) => cmd_fit(global, workers, a, arguments),
            Command::Select(a) => cmd_select(global, workers, a, arguments),
            Command::Sample(a) => cmd_sample(global, workers, a, arguments),
            Command::Summarize(a) => cmd_summarize(global, workers, a, arguments),
        }
    })
}

fn cmd_ingest(global: &GlobalArgs, workers: usize, a: &IngestArgs, arguments: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new("ingest", global, workers)?;
    let mut spec = match (&a.preset, &a.preset_file) {
        (Some(name), _) => IngestSpec::preset(name)?,
        (None, Some(path)) => {
            run.input(path)?;
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading preset {}", path.display()))?;
            IngestSpec::from_toml(&text)?
        }
        (None, None) => bail!("either --preset or --preset-file is required"),
    };
    if !a.internal_cidrs.is_empty() || !a.internal_hosts.is_empty() {
        let nf = spec
            .netflow
            .as_mut()
            .context("--internal-cidr/--internal-host only apply to netflow presets")?;
        nf.internal.cidrs = a.internal_cidrs.clone();
        nf.internal.hosts = a.internal_hosts.clone();
        spec.validate()?;
    }

    let mut graph = MultiplexBipartiteGraph::new();
    let mut report = IngestReport::default();
    for path in &a.inputs {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let hasher = Rc::new(RefCell::new(Sha256::new()));
        let reader = ingest::maybe_gunzip(HashingReader { inner: file, hasher: Rc::clone(&hasher) })?;
        ingest::ingest_reader(reader, &spec, &mut graph, &mut report)
            .with_context(|| format!("ingesting {}", path.display()))?;
        let digest = hex::encode(hasher.take().finalize());
        run.inputs.insert(path.display().to_string(), digest);
    }
    if report.records_read == 0 {
        log::warn!("no records read");
        eprintln!("warning: no records read");
    }
    if report.records_skipped > 0 {
        eprintln!("warning: skipped {} malformed records", report.records_skipped);
    }

    let mut buf = Vec::new();
    graph.write_to(&mut buf)?;
    run.write(GRAPH_FILE, &buf)?;
    run.write_json(INGEST_REPORT_FILE, &report)?;
    println!("{}", report.stats);
    run.finish(arguments)
}

fn ari_against(planted: &IndexMap<String, usize>, names: &[String], assignment: &[usize]) -> anyhow::Result<f64> {
    let truth = names
        .iter()
        .map(|n| planted.get(n).copied().with_context(|| format!("{n:?} missing from planted labels")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(adjusted_rand_index(&truth, assignment))
}

fn cmd_fit(global: &GlobalArgs, workers: usize, a: &FitArgs, arguments: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new("fit", global, workers)?;
    let graph = load_graph(&mut run, &a.graph)?;
    let config = a.em.config(a.top_clusters, a.bottom_clusters, global.seed);
    let fit = fit_multi_restart(&graph, &config)?;

    let traj = &fit.criterion_trajectory;
    println!(
        "G: {} -> {} over {} iterations (restart {}), converged={}",
        traj.first().map_or("NA".into(), |g| fmt_f64(*g)),
        traj.last().map_or("NA".into(), |g| fmt_f64(*g)),
        fit.iterations,
        fit.restart_index,
        fit.converged
    );
    println!("L_C: {}", fmt_f64(fit.final_complete_ll));
    if !fit.converged {
        eprintln!("warning: best restart stopped at the iteration cap without converging");
    }
    run.result("converged", fit.converged);
    run.result("final_L_C", fit.final_complete_ll);

    if let Some(path) = &a.planted {
        let planted: PlantedDocument = load_json(&mut run, path)?;
        let ari_top = ari_against(&planted.assignment_top, graph.top().names(), &fit.top.assignment)?;
        let ari_bottom = ari_against(&planted.assignment_bottom, graph.bottom().names(), &fit.bottom.assignment)?;
        println!("ARI top: {}", fmt_f64(ari_top));
        println!("ARI bottom: {}", fmt_f64(ari_bottom));
        run.result("ari_top", ari_top);
        run.result("ari_bottom", ari_bottom);
    }

    run.write_json(FIT_FILE, &FitDocument::from_fit(&fit, &graph))?;
    run.finish(arguments)
}

/// Settings that must match for a report to be resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeKey {
    graph_sha256: String,
    seed: u64,
    restarts: usize,
    epsilon: f64,
    max_iterations: usize,
    counts: bool,
    refit: bool,
}

const RESUME_FILE: &str = ".select.resume.json";

fn cmd_select(global: &GlobalArgs, workers: usize, a: &SelectArgs, arguments: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new("select", global, workers)?;
    let graph = load_graph(&mut run, &a.graph)?;
    let top_values = parse_cluster_range(&a.top_range)?;
    let bottom_values = parse_cluster_range(&a.bottom_range)?;
    let template = a.em.config(1, 1, global.seed);
    template.validate()?;
    let grid = GridSpec::new(top_values, bottom_values, template);
    println!("grid: {} cells", grid.cells().len());

    let key = ResumeKey {
        graph_sha256: run.inputs[&a.graph.display().to_string()].clone(),
        seed: global.seed,
        restarts: a.em.restarts,
        epsilon: a.em.epsilon,
        max_iterations: a.em.max_iterations,
        counts: a.em.counts,
        refit: !a.em.no_refit,
    };
    let report_path = run.out_dir.join(REPORT_FILE);
    let resume_path = run.out_dir.join(RESUME_FILE);
    let mut completed = BTreeMap::new();
    if !a.fresh && report_path.exists() {
        let previous: Option<ResumeKey> = fs::read_to_string(&resume_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        if previous.as_ref() != Some(&key) {
            bail!(
                "{} was produced with different inputs or settings; pass --fresh to discard it",
                report_path.display()
            );
        }
        let text = fs::read_to_string(&report_path)?;
        let cells = grid.cells();
        for r in parse_report(&text)? {
            if cells.contains(&r.key()) && !r.failed {
                completed.insert(r.key(), r);
            }
        }
        println!("resuming: {} cells already done", completed.len());
    }
    write_atomic(&run.out_dir, RESUME_FILE, serde_json::to_string(&key)?.as_bytes())?;

    // the working report is append-only; it is rewritten in grid order at the end
    let mut initial = String::from(REPORT_HEADER);
    initial.push('\n');
    for r in completed.values() {
        initial.push_str(&format_record(r));
        initial.push('\n');
    }
    write_atomic(&run.out_dir, REPORT_FILE, initial.as_bytes())?;
    let journal = Mutex::new(OpenOptions::new().append(true).open(&report_path)?);
    let sink = |r: &CellRecord| {
        let mut f = journal.lock().expect("poisoned");
        let line = format!("{}\n", format_record(r));
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.sync_data()) {
            log::error!("appending to report: {e}");
        }
    };

    let report = grid_search_resumable(&graph.view(a.em.counts), &grid, &completed, &sink)?;
    drop(journal);
    let (h, k) = report.best;
    println!("best: H={h} K={k} ICL={}", fmt_f64(report.cells[&report.best].icl));
    run.result("best_H", h);
    run.result("best_K", k);

    run.write(REPORT_FILE, report.to_tsv().as_bytes())?;
    run.write_json(BEST_FIT_FILE, &FitDocument::from_fit(&report.best_fit, &graph))?;
    run.finish(arguments)
}

fn cmd_sample(global: &GlobalArgs, workers: usize, a: &SampleArgs, arguments: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new("sample", global, workers)?;
    let doc: ParamsDocument = load_json(&mut run, &a.params)?;
    let params = doc.to_params()?;
    let names = doc.sample_names()?;
    let sampled = sample_with_names(&params, &names, global.seed)?;

    let labels = |names: &[String], assignment: &[usize]| -> IndexMap<String, usize> {
        names.iter().cloned().zip(assignment.iter().copied()).collect()
    };
    let planted = PlantedDocument {
        seed: global.seed,
        assignment_top: labels(sampled.graph.top().names(), &sampled.top.assignment),
        assignment_bottom: labels(sampled.graph.bottom().names(), &sampled.bottom.assignment),
    };
    let mut buf = Vec::new();
    sampled.graph.write_to(&mut buf)?;
    run.write(GRAPH_FILE, &buf)?;
    run.write_json(PLANTED_FILE, &planted)?;
    println!("{}", sampled.graph.stats());
    run.finish(arguments)
}

fn cmd_summarize(global: &GlobalArgs, workers: usize, a: &SummarizeArgs, arguments: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new("summarize", global, workers)?;
    let graph = load_graph(&mut run, &a.graph)?;
    let doc: FitDocument = load_json(&mut run, &a.fit)?;
    let fit = doc.to_fit(&graph)?;
    let preset = a.preset.as_deref().map(IngestSpec::preset).transpose()?;
    let min_events = a.min_events.or(preset.as_ref().and_then(|p| p.min_events));
    let min_rate = a.min_rate.or(preset.as_ref().and_then(|p| p.min_rate));

    let options = SummaryOptions { top_pairs: a.top_pairs, ..SummaryOptions::default() };
    let mut s = summary::aggregate_with(&graph, &fit, options)?;
    if let Some(t) = min_events {
        s = summary::filter_by_events(&s, t);
    }
    if let Some(r) = min_rate {
        s = summary::filter_by_rate(&s, r)?;
    }
    if s.edges.is_empty() {
        eprintln!("warning: no cluster edges pass the filters");
    }
    println!("{} cluster edges", s.edges.len());
    run.write(DOT_FILE, summary::to_dot(&s, &DotOptions::default()).as_bytes())?;
    run.write_json(SUMMARY_FILE, &s)?;
    run.finish(arguments)
}
