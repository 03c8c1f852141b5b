//! Block expectation-maximization for the multilayer latent block model.
//!
//! One fit alternates an E-step over the top soft assignments, an E-step
//! over the bottom ones and an M-step over `(pi, rho, Theta)`; each update
//! maximizes the fuzzy criterion over its own block, so `G` never decreases.
//! Degree factors are fixed once from the observed degrees. Iteration stops
//! when `|1 - G_new / G_old| <= epsilon`.
//!
//! All sums over nonzeros run in fixed-size row chunks that are combined in
//! a fixed order, and rows of the soft matrices are independent, so results
//! are bit-identical for any worker count.

use indexmap::IndexMap;
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Incidence, LayeredBiadjacency, MultiplexBipartiteGraph, Side};
use crate::model::{
    complete_log_likelihood, fuzzy_criterion, weighted_column_sums, HardPartition, ModelParams,
    ParamsDocument, SoftAssignments,
};
use crate::numeric::{par_chunked_reduce, softmax_in_place, PROPORTION_FLOOR};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
pub const DEFAULT_RESTARTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of top clusters `H`.
    pub top_clusters: usize,
    /// Number of bottom clusters `K`.
    pub bottom_clusters: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Fit event multiplicities instead of the 0/1 matrices.
    pub use_counts: bool,
    /// Recompute `(pi, rho, Theta)` at the rounded partitions before scoring.
    pub hard_refit: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            top_clusters: 2,
            bottom_clusters: 2,
            epsilon: DEFAULT_EPSILON,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            use_counts: false,
            hard_refit: true,
        }
    }
}

impl FitConfig {
    pub fn new(top_clusters: usize, bottom_clusters: usize) -> Self {
        Self {
            top_clusters,
            bottom_clusters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_clusters == 0 || self.bottom_clusters == 0 {
            return Err(Error::InvalidParameter("cluster counts must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub top: HardPartition,
    pub bottom: HardPartition,
    pub soft: SoftAssignments,
    /// `G` before the first iteration and after every iteration.
    pub criterion_trajectory: Vec<f64>,
    pub final_complete_ll: f64,
    pub iterations: usize,
    pub restart_index: usize,
    pub converged: bool,
    /// `(layer, h, k)` blocks whose rate denominator vanished in the last M-step.
    pub degenerate_blocks: Vec<(usize, usize, usize)>,
}

impl FitResult {
    pub fn empty_top_clusters(&self) -> Vec<usize> {
        self.top.empty_clusters()
    }

    pub fn empty_bottom_clusters(&self) -> Vec<usize> {
        self.bottom.empty_clusters()
    }
}

/// `mu_i = deg(i) / sqrt(M)`, `nu_j = deg(j) / sqrt(M)`.
pub fn init_degree_factors(adj: &LayeredBiadjacency) -> Result<(Vec<f64>, Vec<f64>)> {
    let mass = adj.total_mass();
    if mass <= 0.0 {
        return Err(Error::CannotFit("graph has no edges".into()));
    }
    let scale = mass.sqrt();
    let mu = (0..adj.n_top()).map(|i| adj.top_degree(i) / scale).collect();
    let nu = (0..adj.n_bottom())
        .map(|j| adj.bottom_degree(j) / scale)
        .collect();
    Ok((mu, nu))
}

fn dirichlet_ones<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    for x in &mut draws {
        *x /= total;
    }
    draws
}

fn dirichlet_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for mut row in m.outer_iter_mut() {
        for (dst, x) in row.iter_mut().zip(dirichlet_ones(rng, cols)) {
            *dst = x;
        }
    }
    m
}

/// Random starting point for one restart.
///
/// Proportions and soft rows are symmetric Dirichlet(1) draws; each rate
/// is uniform on `[0.5 c_l, 1.5 c_l]` with `c_l` the layer's share of the
/// total mass.
pub fn random_init(
    config: &FitConfig,
    adj: &LayeredBiadjacency,
    seed: u64,
) -> Result<(ModelParams, SoftAssignments)> {
    config.validate()?;
    let (mu, nu) = init_degree_factors(adj)?;
    let (h, k) = (config.top_clusters, config.bottom_clusters);
    let mass = adj.total_mass();
    let shares: Vec<f64> = adj.layer_mass().iter().map(|m| m / mass).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = dirichlet_ones(&mut rng, h);
    let rho = dirichlet_ones(&mut rng, k);
    let mut theta = Array3::zeros((adj.n_layers(), h, k));
    for ((l, _, _), t) in theta.indexed_iter_mut() {
        *t = shares[l] * rng.random_range(0.5..1.5);
    }
    let u = dirichlet_rows(&mut rng, adj.n_top(), h);
    let v = dirichlet_rows(&mut rng, adj.n_bottom(), k);
    Ok((
        ModelParams {
            pi,
            rho,
            mu,
            nu,
            theta,
        },
        SoftAssignments { u, v },
    ))
}

const ROW_MIN_LEN: usize = 64;

/// Shared E-step kernel. `ln_theta` and `theta_sum` are indexed
/// `[layer, row cluster, other cluster]` and `[row cluster, other cluster]`.
#[allow(clippy::too_many_arguments)]
fn e_step_rows<'a, F>(
    n_rows: usize,
    row: F,
    ln_prop: &[f64],
    row_factors: &[f64],
    ln_theta: &Array3<f64>,
    theta_sum: &Array2<f64>,
    other_soft: &Array2<f64>,
    other_factors: &[f64],
) -> Result<Array2<f64>>
where
    F: Fn(usize) -> &'a [Incidence] + Sync,
{
    let n_clusters = ln_prop.len();
    let n_other = other_soft.ncols();
    // C_h = sum_k T_hk * sum_j v_jk nu_j
    let other_mass = weighted_column_sums(other_soft, other_factors);
    let penalty: Vec<f64> = (0..n_clusters)
        .map(|h| (0..n_other).map(|k| theta_sum[[h, k]] * other_mass[k]).sum())
        .collect();

    let mut out = Array2::zeros((n_rows, n_clusters));
    let failure = out
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n_clusters)
        .with_min_len(ROW_MIN_LEN)
        .enumerate()
        .map(|(i, scores)| {
            for h in 0..n_clusters {
                scores[h] = ln_prop[h] - row_factors[i] * penalty[h];
            }
            for e in row(i) {
                let vj = other_soft.row(e.other as usize);
                let lt = ln_theta.index_axis(Axis(0), e.layer as usize);
                for (h, s) in scores.iter_mut().enumerate() {
                    let mut inner = 0.0;
                    for k in 0..n_other {
                        inner += vj[k] * lt[[h, k]];
                    }
                    *s += e.weight * inner;
                }
            }
            if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
                return Some(format!("row {i} has non-finite score {bad}"));
            }
            softmax_in_place(scores);
            None
        })
        .find_first(Option::is_some)
        .flatten();
    match failure {
        Some(detail) => Err(Error::Numerical {
            iteration: 0,
            detail,
        }),
        None => Ok(out),
    }
}

/// Updates `U` with everything else fixed.
pub fn e_step_top(
    params: &ModelParams,
    v: &Array2<f64>,
    adj: &LayeredBiadjacency,
) -> Result<Array2<f64>> {
    let ln_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    e_step_rows(
        adj.n_top(),
        |i| adj.top_row(i),
        &ln_pi,
        &params.mu,
        &params.ln_theta(),
        &params.theta_layer_sum(),
        v,
        &params.nu,
    )
}

/// Updates `V` with everything else fixed.
pub fn e_step_bottom(
    params: &ModelParams,
    u: &Array2<f64>,
    adj: &LayeredBiadjacency,
) -> Result<Array2<f64>> {
    let ln_rho: Vec<f64> = params.rho.iter().map(|p| p.ln()).collect();
    let ln_theta_t = params.ln_theta().permuted_axes([0, 2, 1]).as_standard_layout().to_owned();
    let theta_sum_t = params.theta_layer_sum().t().as_standard_layout().to_owned();
    e_step_rows(
        adj.n_bottom(),
        |j| adj.bottom_row(j),
        &ln_rho,
        &params.nu,
        &ln_theta_t,
        &theta_sum_t,
        u,
        &params.mu,
    )
}

/// Output of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta: Array3<f64>,
    pub degenerate_blocks: Vec<(usize, usize, usize)>,
}

fn mean_proportions(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    let ones = vec![1.0; m.nrows()];
    let mut p: Vec<f64> = weighted_column_sums(m, &ones)
        .into_iter()
        .map(|s| (s / n).max(PROPORTION_FLOOR))
        .collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

/// Updates `(pi, rho, Theta)` with the soft assignments and degree factors fixed.
pub fn m_step(
    soft: &SoftAssignments,
    adj: &LayeredBiadjacency,
    mu: &[f64],
    nu: &[f64],
) -> MStep {
    let (u, v) = (&soft.u, &soft.v);
    let (h_count, k_count) = (u.ncols(), v.ncols());
    let n_layers = adj.n_layers();

    let numerator = par_chunked_reduce(
        adj.n_top(),
        Array3::<f64>::zeros((n_layers, h_count, k_count)),
        |rows| {
            let mut acc = Array3::<f64>::zeros((n_layers, h_count, k_count));
            for i in rows {
                let ui = u.row(i);
                for e in adj.top_row(i) {
                    let vj = v.row(e.other as usize);
                    let mut block = acc.index_axis_mut(Axis(0), e.layer as usize);
                    for h in 0..h_count {
                        let w = e.weight * ui[h];
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..k_count {
                            block[[h, k]] += w * vj[k];
                        }
                    }
                }
            }
            acc
        },
        |acc, part| *acc += &part,
    );

    let top_mass = weighted_column_sums(u, mu);
    let bottom_mass = weighted_column_sums(v, nu);
    let mut degenerate_blocks = Vec::new();
    let mut theta = numerator;
    for ((l, h, k), t) in theta.indexed_iter_mut() {
        let denom = top_mass[h] * bottom_mass[k];
        if denom > 0.0 {
            *t /= denom;
        } else {
            *t = 0.0;
            degenerate_blocks.push((l, h, k));
        }
    }
    MStep {
        pi: mean_proportions(u),
        rho: mean_proportions(v),
        theta,
        degenerate_blocks,
    }
}

fn with_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::Numerical { detail, .. } => Error::Numerical { iteration, detail },
        other => other,
    }
}

/// Single restart seeded with `seed`, on a prepared view of the graph.
pub fn fit_view(
    adj: &LayeredBiadjacency,
    config: &FitConfig,
    seed: u64,
    restart_index: usize,
) -> Result<FitResult> {
    config.validate()?;
    let (mut params, mut soft) = random_init(config, adj, seed)?;
    let (h, k) = (config.top_clusters, config.bottom_clusters);
    if h > adj.n_top() || k > adj.n_bottom() {
        log::warn!(
            "more clusters than nodes: H={h} for I={}, K={k} for J={}",
            adj.n_top(),
            adj.n_bottom()
        );
    }

    let mut g_old = fuzzy_criterion(&params, &soft, adj)?;
    if !g_old.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            detail: format!("initial criterion is {g_old}"),
        });
    }
    let mut trajectory = vec![g_old];
    let mut converged = false;
    let mut iterations = 0;
    let mut degenerate_blocks = Vec::new();

    while iterations < config.max_iterations {
        iterations += 1;
        soft.u = e_step_top(&params, &soft.v, adj).map_err(|e| with_iteration(e, iterations))?;
        soft.v = e_step_bottom(&params, &soft.u, adj).map_err(|e| with_iteration(e, iterations))?;
        let step = m_step(&soft, adj, &params.mu, &params.nu);
        params.pi = step.pi;
        params.rho = step.rho;
        params.theta = step.theta;
        degenerate_blocks = step.degenerate_blocks;

        let g_new = fuzzy_criterion(&params, &soft, adj)?;
        if !g_new.is_finite() {
            return Err(Error::Numerical {
                iteration: iterations,
                detail: format!("criterion is {g_new}"),
            });
        }
        trajectory.push(g_new);
        let delta = if g_old == 0.0 {
            if g_new == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (1.0 - g_new / g_old).abs()
        };
        g_old = g_new;
        if delta <= config.epsilon {
            converged = true;
            break;
        }
    }

    let (top, bottom) = soft.round();
    if config.hard_refit {
        let hard = SoftAssignments::from_partitions(&top, &bottom);
        let step = m_step(&hard, adj, &params.mu, &params.nu);
        params.pi = step.pi;
        params.rho = step.rho;
        params.theta = step.theta;
        degenerate_blocks = step.degenerate_blocks;
    }
    let final_complete_ll = complete_log_likelihood(&params, &top, &bottom, adj)?;
    if !converged {
        log::warn!("restart {restart_index} (seed {seed}) hit max_iterations without converging");
    }
    Ok(FitResult {
        params,
        top,
        bottom,
        soft,
        criterion_trajectory: trajectory,
        final_complete_ll,
        iterations,
        restart_index,
        converged,
        degenerate_blocks,
    })
}

/// Single restart using `config.seed`.
pub fn fit(graph: &MultiplexBipartiteGraph, config: &FitConfig) -> Result<FitResult> {
    let adj = graph.view(config.use_counts);
    fit_view(&adj, config, config.seed, 0)
}

struct RestartOutcome {
    best: Option<FitResult>,
    failures: usize,
    first_error: Option<(usize, Error)>,
}

impl RestartOutcome {
    fn from_result(index: usize, result: Result<FitResult>) -> Self {
        match result {
            Ok(fit) => Self {
                best: Some(fit),
                failures: 0,
                first_error: None,
            },
            Err(err) => Self {
                best: None,
                failures: 1,
                first_error: Some((index, err)),
            },
        }
    }

    fn empty() -> Self {
        Self {
            best: None,
            failures: 0,
            first_error: None,
        }
    }

    /// Associative and commutative: highest `L_C`, ties to the lowest restart.
    fn merge(self, other: Self) -> Self {
        let best = match (self.best, other.best) {
            (Some(a), Some(b)) => Some(if better_fit(&b, &a) { b } else { a }),
            (a, b) => a.or(b),
        };
        let first_error = match (self.first_error, other.first_error) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        };
        Self {
            best,
            failures: self.failures + other.failures,
            first_error,
        }
    }
}

fn better_fit(candidate: &FitResult, incumbent: &FitResult) -> bool {
    let (c, i) = (candidate.final_complete_ll, incumbent.final_complete_ll);
    c > i || (c == i && candidate.restart_index < incumbent.restart_index) || (i.is_nan() && !c.is_nan())
}

/// Runs `restarts` fits on a prepared view and keeps the one with the
/// highest complete-data log-likelihood. Restart `r` uses seed `seed + r`.
pub fn fit_multi_restart_view(adj: &LayeredBiadjacency, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if adj.total_mass() <= 0.0 {
        return Err(Error::CannotFit("graph has no edges".into()));
    }
    let outcome = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r as u64);
            let result = fit_view(adj, config, seed, r);
            if let Ok(fit) = &result {
                log::debug!(
                    "H={} K={} restart {r}: L_C={} after {} iterations",
                    config.top_clusters,
                    config.bottom_clusters,
                    fit.final_complete_ll,
                    fit.iterations
                );
            }
            RestartOutcome::from_result(r, result)
        })
        .reduce(RestartOutcome::empty, RestartOutcome::merge);
    match outcome.best {
        Some(best) => {
            if outcome.failures > 0 {
                log::warn!("{} of {} restarts failed", outcome.failures, config.restarts);
            }
            Ok(best)
        }
        None => Err(Error::AllRestartsFailed {
            count: outcome.failures,
            first: Box::new(
                outcome
                    .first_error
                    .map(|(_, e)| e)
                    .unwrap_or_else(|| Error::CannotFit("no restarts ran".into())),
            ),
        }),
    }
}

pub fn fit_multi_restart(graph: &MultiplexBipartiteGraph, config: &FitConfig) -> Result<FitResult> {
    let adj = graph.view(config.use_counts);
    fit_multi_restart_view(&adj, config)
}

/// Serialized [`FitResult`]: the parameter document plus partitions and
/// convergence diagnostics. Soft assignments are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    #[serde(flatten)]
    pub params: ParamsDocument,
    pub assignment_top: IndexMap<String, usize>,
    pub assignment_bottom: IndexMap<String, usize>,
    pub criterion_trajectory: Vec<f64>,
    #[serde(rename = "final_L_C")]
    pub final_complete_ll: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart_index: usize,
    #[serde(default)]
    pub empty_top_clusters: Vec<usize>,
    #[serde(default)]
    pub empty_bottom_clusters: Vec<usize>,
    #[serde(default)]
    pub degenerate_blocks: Vec<(usize, usize, usize)>,
}

impl FitDocument {
    pub fn from_fit(fit: &FitResult, graph: &MultiplexBipartiteGraph) -> Self {
        let names = |catalog: &crate::graph::EntityCatalog, p: &HardPartition| {
            catalog
                .names()
                .iter()
                .cloned()
                .zip(p.assignment.iter().copied())
                .collect()
        };
        Self {
            params: ParamsDocument::from_params(&fit.params, Some(graph)),
            assignment_top: names(graph.top(), &fit.top),
            assignment_bottom: names(graph.bottom(), &fit.bottom),
            criterion_trajectory: fit.criterion_trajectory.clone(),
            final_complete_ll: fit.final_complete_ll,
            converged: fit.converged,
            iterations: fit.iterations,
            restart_index: fit.restart_index,
            empty_top_clusters: fit.empty_top_clusters(),
            empty_bottom_clusters: fit.empty_bottom_clusters(),
            degenerate_blocks: fit.degenerate_blocks.clone(),
        }
    }

    /// Rebuilds a [`FitResult`] aligned with `graph` by name. The soft
    /// assignments are the one-hot encodings of the stored partitions.
    pub fn to_fit(&self, graph: &MultiplexBipartiteGraph) -> Result<FitResult> {
        let params = self.params.to_params()?;
        let (h, k) = (params.n_top_clusters(), params.n_bottom_clusters());
        let align = |catalog: &crate::graph::EntityCatalog,
                     map: &IndexMap<String, usize>,
                     side: Side,
                     clusters: usize|
         -> Result<HardPartition> {
            if map.len() != catalog.len() {
                return Err(Error::DimensionMismatch(format!(
                    "fit assigns {} {side:?} nodes, graph has {}",
                    map.len(),
                    catalog.len()
                )));
            }
            let assignment = catalog
                .names()
                .iter()
                .map(|name| {
                    map.get(name).copied().ok_or_else(|| {
                        Error::DimensionMismatch(format!("node {name:?} missing from fit"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            HardPartition::new(side, clusters, assignment)
        };
        let top = align(graph.top(), &self.assignment_top, Side::Top, h)?;
        let bottom = align(graph.bottom(), &self.assignment_bottom, Side::Bottom, k)?;
        if params.n_top() != graph.top().len()
            || params.n_bottom() != graph.bottom().len()
            || params.n_layers() != graph.layers().len()
        {
            return Err(Error::DimensionMismatch(
                "fit parameters do not match the graph dimensions".into(),
            ));
        }
        // degree factors and rates follow the document's own name order
        let params = self.params_in_graph_order(params, graph)?;
        Ok(FitResult {
            soft: SoftAssignments::from_partitions(&top, &bottom),
            params,
            top,
            bottom,
            criterion_trajectory: self.criterion_trajectory.clone(),
            final_complete_ll: self.final_complete_ll,
            iterations: self.iterations,
            restart_index: self.restart_index,
            converged: self.converged,
            degenerate_blocks: self.degenerate_blocks.clone(),
        })
    }

    fn params_in_graph_order(
        &self,
        mut params: ModelParams,
        graph: &MultiplexBipartiteGraph,
    ) -> Result<ModelParams> {
        let doc = &self.params;
        if !doc.top_names.is_empty() {
            let mut mu = vec![0.0; params.mu.len()];
            for (src, name) in doc.top_names.iter().enumerate() {
                let dst = graph.top().index_of(name).ok_or_else(|| {
                    Error::DimensionMismatch(format!("top node {name:?} not in graph"))
                })?;
                mu[dst] = params.mu[src];
            }
            params.mu = mu;
        }
        if !doc.bottom_names.is_empty() {
            let mut nu = vec![0.0; params.nu.len()];
            for (src, name) in doc.bottom_names.iter().enumerate() {
                let dst = graph.bottom().index_of(name).ok_or_else(|| {
                    Error::DimensionMismatch(format!("bottom node {name:?} not in graph"))
                })?;
                nu[dst] = params.nu[src];
            }
            params.nu = nu;
        }
        if !doc.layer_labels.is_empty() {
            let mut theta = params.theta.clone();
            for (src, label) in doc.layer_labels.iter().enumerate() {
                let dst = graph.layers().index_of(label).ok_or_else(|| {
                    Error::DimensionMismatch(format!("layer {label:?} not in graph"))
                })?;
                theta
                    .index_axis_mut(Axis(0), dst)
                    .assign(&params.theta.index_axis(Axis(0), src));
            }
            params.theta = theta;
        }
        Ok(params)
    }
}
