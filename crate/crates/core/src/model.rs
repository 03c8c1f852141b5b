//! Multilayer Poisson latent block model.
//!
//! Top node `i` belongs to cluster `U_i ~ Multinomial(pi)`, bottom node `j`
//! to `V_j ~ Multinomial(rho)`, and every cell of every layer is drawn as
//! `b_ij^(l) ~ Poisson(mu_i nu_j theta^(l)_{U_i V_j})`.
//!
//! The observed matrices are usually binary, so the Poisson likelihood is a
//! convenient misspecification rather than a faithful description of the
//! data; the scoring functions accept whatever weights the
//! [`LayeredBiadjacency`] carries.

use ndarray::{Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayeredBiadjacency, MultiplexBipartiteGraph, Side};
use crate::numeric::{floored_ln, kahan_sum, par_chunked_sum, x_ln_x, KahanSum};

const SUM_TOLERANCE: f64 = 1e-9;

/// Full parameter set `{pi, rho, mu, nu, Theta}`.
///
/// `theta` has shape `(L, H, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub theta: Array3<f64>,
}

fn check_simplex(name: &str, p: &[f64], strict: bool) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} is empty")));
    }
    if let Some(bad) = p
        .iter()
        .find(|&&x| !x.is_finite() || x < 0.0 || (strict && x == 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "{name} has an invalid entry {bad}"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidParameter(format!("{name} sums to {total}")));
    }
    Ok(())
}

fn check_nonnegative(name: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for x in values {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} has an invalid entry {x}"
            )));
        }
    }
    Ok(())
}

impl ModelParams {
    pub fn n_top_clusters(&self) -> usize {
        self.pi.len()
    }

    pub fn n_bottom_clusters(&self) -> usize {
        self.rho.len()
    }

    pub fn n_layers(&self) -> usize {
        self.theta.dim().0
    }

    pub fn n_top(&self) -> usize {
        self.mu.len()
    }

    pub fn n_bottom(&self) -> usize {
        self.nu.len()
    }

    /// Checks the invariants: proportions on the simplex and strictly
    /// positive, degree factors and rates finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(true)
    }

    fn validate_inner(&self, strict: bool) -> Result<()> {
        check_simplex("pi", &self.pi, strict)?;
        check_simplex("rho", &self.rho, strict)?;
        check_nonnegative("mu", self.mu.iter().copied())?;
        check_nonnegative("nu", self.nu.iter().copied())?;
        check_nonnegative("theta", self.theta.iter().copied())?;
        let (_, h, k) = self.theta.dim();
        if h != self.pi.len() || k != self.rho.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta blocks are {h}x{k} but pi/rho have lengths {}/{}",
                self.pi.len(),
                self.rho.len()
            )));
        }
        Ok(())
    }

    fn check_against(&self, adj: &LayeredBiadjacency) -> Result<()> {
        if self.mu.len() != adj.n_top()
            || self.nu.len() != adj.n_bottom()
            || self.n_layers() != adj.n_layers()
        {
            return Err(Error::DimensionMismatch(format!(
                "parameters cover {}x{}x{} but the graph is {}x{}x{}",
                self.mu.len(),
                self.nu.len(),
                self.n_layers(),
                adj.n_top(),
                adj.n_bottom(),
                adj.n_layers()
            )));
        }
        let (_, h, k) = self.theta.dim();
        if h != self.pi.len() || k != self.rho.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta blocks are {h}x{k} but pi/rho have lengths {}/{}",
                self.pi.len(),
                self.rho.len()
            )));
        }
        Ok(())
    }

    /// `ln max(theta, floor)` for every rate.
    pub fn ln_theta(&self) -> Array3<f64> {
        self.theta.mapv(floored_ln)
    }

    /// `sum_l theta^(l)`, shape `(H, K)`.
    pub fn theta_layer_sum(&self) -> Array2<f64> {
        self.theta.sum_axis(ndarray::Axis(0))
    }
}

/// Hard cluster labels for one side of the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardPartition {
    pub side: Side,
    pub clusters: usize,
    pub assignment: Vec<usize>,
}

impl HardPartition {
    pub fn new(side: Side, clusters: usize, assignment: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&c| c >= clusters) {
            return Err(Error::InvalidParameter(format!(
                "cluster label {bad} out of range for {clusters} clusters"
            )));
        }
        Ok(Self {
            side,
            clusters,
            assignment,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.clusters];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn empty_clusters(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// One-hot encoding as an `n x clusters` matrix.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.assignment.len(), self.clusters));
        for (row, &c) in self.assignment.iter().enumerate() {
            m[[row, c]] = 1.0;
        }
        m
    }
}

/// Row-stochastic soft assignments `U` (`I x H`) and `V` (`J x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignments {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

fn check_row_stochastic(name: &str, m: &Array2<f64>) -> Result<()> {
    for (r, row) in m.outer_iter().enumerate() {
        if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParameter(format!(
                "{name} row {r} has entries outside [0, 1]"
            )));
        }
        let total: f64 = row.sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "{name} row {r} sums to {total}"
            )));
        }
    }
    Ok(())
}

impl SoftAssignments {
    pub fn validate(&self) -> Result<()> {
        check_row_stochastic("U", &self.u)?;
        check_row_stochastic("V", &self.v)
    }

    pub fn from_partitions(top: &HardPartition, bottom: &HardPartition) -> Self {
        Self {
            u: top.one_hot(),
            v: bottom.one_hot(),
        }
    }

    /// Row-argmax rounding; ties go to the lowest cluster index.
    pub fn round(&self) -> (HardPartition, HardPartition) {
        let round = |side, m: &Array2<f64>| HardPartition {
            side,
            clusters: m.ncols(),
            assignment: m
                .outer_iter()
                .map(|row| crate::numeric::argmax(row.as_slice().expect("standard layout")))
                .collect(),
        };
        (round(Side::Top, &self.u), round(Side::Bottom, &self.v))
    }

    /// `-sum u ln u` for one matrix, with `0 ln 0 = 0`.
    pub fn entropy(m: &Array2<f64>) -> f64 {
        -kahan_sum(m.iter().map(|&x| x_ln_x(x)))
    }
}

/// A graph drawn from the model together with the planted labels.
#[derive(Debug, Clone)]
pub struct SampledGraph {
    pub graph: MultiplexBipartiteGraph,
    pub top: HardPartition,
    pub bottom: HardPartition,
}

/// Entity and layer names used when materializing a sample.
#[derive(Debug, Clone, Default)]
pub struct SampleNames {
    pub top: Vec<String>,
    pub bottom: Vec<String>,
    pub layers: Vec<String>,
}

impl SampleNames {
    pub fn generated(n_top: usize, n_bottom: usize, n_layers: usize) -> Self {
        Self {
            top: (0..n_top).map(|i| format!("t{i}")).collect(),
            bottom: (0..n_bottom).map(|j| format!("b{j}")).collect(),
            layers: (0..n_layers).map(|l| format!("layer{l}")).collect(),
        }
    }
}

/// Draws a graph from the generative model with generated names.
pub fn sample(params: &ModelParams, seed: u64) -> Result<SampledGraph> {
    let names = SampleNames::generated(params.n_top(), params.n_bottom(), params.n_layers());
    sample_with_names(params, &names, seed)
}

/// Draws a graph from the generative model. Every entity and layer is
/// registered even when it receives no edge; multiplicities hold the
/// Poisson counts.
pub fn sample_with_names(params: &ModelParams, names: &SampleNames, seed: u64) -> Result<SampledGraph> {
    // zero proportions are allowed here: a degenerate multinomial is a valid sampler input
    params.validate_inner(false)?;
    if names.top.len() != params.n_top()
        || names.bottom.len() != params.n_bottom()
        || names.layers.len() != params.n_layers()
    {
        return Err(Error::DimensionMismatch(
            "name lists do not match parameter dimensions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top_dist = WeightedIndex::new(&params.pi)
        .map_err(|e| Error::InvalidParameter(format!("pi: {e}")))?;
    let bottom_dist = WeightedIndex::new(&params.rho)
        .map_err(|e| Error::InvalidParameter(format!("rho: {e}")))?;
    let top: Vec<usize> = (0..params.n_top()).map(|_| top_dist.sample(&mut rng)).collect();
    let bottom: Vec<usize> = (0..params.n_bottom())
        .map(|_| bottom_dist.sample(&mut rng))
        .collect();

    let mut graph = MultiplexBipartiteGraph::new();
    for name in &names.top {
        graph.ensure_top(name)?;
    }
    for name in &names.bottom {
        graph.ensure_bottom(name)?;
    }
    for label in &names.layers {
        graph.ensure_layer(label)?;
    }
    for (i, &h) in top.iter().enumerate() {
        for (j, &k) in bottom.iter().enumerate() {
            let scale = params.mu[i] * params.nu[j];
            for l in 0..params.n_layers() {
                let rate = scale * params.theta[[l, h, k]];
                if rate <= 0.0 {
                    continue;
                }
                let draw: f64 = Poisson::new(rate)
                    .map_err(|e| Error::InvalidParameter(format!("poisson rate {rate}: {e}")))?
                    .sample(&mut rng);
                graph.add_events_by_index(i, j, l, draw as u64)?;
            }
        }
    }
    Ok(SampledGraph {
        graph,
        top: HardPartition::new(Side::Top, params.n_top_clusters(), top)?,
        bottom: HardPartition::new(Side::Bottom, params.n_bottom_clusters(), bottom)?,
    })
}

fn check_partition(p: &HardPartition, n: usize, clusters: usize, what: &str) -> Result<()> {
    if p.len() != n || p.clusters != clusters {
        return Err(Error::DimensionMismatch(format!(
            "{what} partition has {} nodes / {} clusters, expected {n} / {clusters}",
            p.len(),
            p.clusters
        )));
    }
    if p.assignment.iter().any(|&c| c >= clusters) {
        return Err(Error::DimensionMismatch(format!(
            "{what} partition has out-of-range labels"
        )));
    }
    Ok(())
}

/// Complete-data log-likelihood `L_C` at hard partitions.
///
/// The zero cells only contribute `-mu_i nu_j theta`, which is summed in
/// block-aggregated form; rates are floored inside the logarithm.
pub fn complete_log_likelihood(
    params: &ModelParams,
    top: &HardPartition,
    bottom: &HardPartition,
    adj: &LayeredBiadjacency,
) -> Result<f64> {
    params.check_against(adj)?;
    let (n_layers, h_count, k_count) = params.theta.dim();
    check_partition(top, adj.n_top(), h_count, "top")?;
    check_partition(bottom, adj.n_bottom(), k_count, "bottom")?;

    let mut total = KahanSum::new();
    total.add(kahan_sum(top.assignment.iter().map(|&h| params.pi[h].ln())));
    total.add(kahan_sum(bottom.assignment.iter().map(|&k| params.rho[k].ln())));

    let ln_theta = params.ln_theta();
    let edge_term = par_chunked_sum(adj.n_top(), |rows| {
        let mut acc = KahanSum::new();
        for i in rows {
            let h = top.assignment[i];
            let ln_mu = params.mu[i].ln();
            for e in adj.top_row(i) {
                let j = e.other as usize;
                let k = bottom.assignment[j];
                acc.add(
                    e.weight
                        * (ln_mu + params.nu[j].ln() + ln_theta[[e.layer as usize, h, k]]),
                );
            }
        }
        acc.value()
    });
    total.add(edge_term);

    let mut mu_by_cluster = vec![0.0; h_count];
    for (i, &h) in top.assignment.iter().enumerate() {
        mu_by_cluster[h] += params.mu[i];
    }
    let mut nu_by_cluster = vec![0.0; k_count];
    for (j, &k) in bottom.assignment.iter().enumerate() {
        nu_by_cluster[k] += params.nu[j];
    }
    for l in 0..n_layers {
        for h in 0..h_count {
            for k in 0..k_count {
                total.add(-params.theta[[l, h, k]] * mu_by_cluster[h] * nu_by_cluster[k]);
            }
        }
    }
    Ok(total.value())
}

/// `sum_i u_ih w_i` for every cluster `h`.
pub fn weighted_column_sums(m: &Array2<f64>, weights: &[f64]) -> Vec<f64> {
    let mut sums = vec![KahanSum::new(); m.ncols()];
    for (row, &w) in m.outer_iter().zip(weights) {
        for (acc, &x) in sums.iter_mut().zip(row.iter()) {
            acc.add(x * w);
        }
    }
    sums.iter().map(KahanSum::value).collect()
}

/// Components of the fuzzy criterion, exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyCriterion {
    pub fuzzy_likelihood: f64,
    pub entropy_top: f64,
    pub entropy_bottom: f64,
}

impl FuzzyCriterion {
    pub fn value(&self) -> f64 {
        self.fuzzy_likelihood + self.entropy_top + self.entropy_bottom
    }
}

fn check_soft(soft: &SoftAssignments, params: &ModelParams, adj: &LayeredBiadjacency) -> Result<()> {
    let (_, h, k) = params.theta.dim();
    if soft.u.dim() != (adj.n_top(), h) || soft.v.dim() != (adj.n_bottom(), k) {
        return Err(Error::DimensionMismatch(format!(
            "soft assignments are {:?}/{:?}, expected ({}, {h})/({}, {k})",
            soft.u.dim(),
            soft.v.dim(),
            adj.n_top(),
            adj.n_bottom()
        )));
    }
    Ok(())
}

/// Fuzzy criterion `G = L_S + H(U) + H(V)` with its components.
pub fn fuzzy_criterion_parts(
    params: &ModelParams,
    soft: &SoftAssignments,
    adj: &LayeredBiadjacency,
) -> Result<FuzzyCriterion> {
    params.check_against(adj)?;
    check_soft(soft, params, adj)?;
    let (_, h_count, k_count) = params.theta.dim();
    let u = &soft.u;
    let v = &soft.v;

    let mut ls = KahanSum::new();
    let ln_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let ln_rho: Vec<f64> = params.rho.iter().map(|p| p.ln()).collect();
    let weighted_logs = |m: &Array2<f64>, logs: &[f64]| {
        kahan_sum(m.outer_iter().map(|row| {
            row.iter()
                .zip(logs)
                .map(|(&x, &lp)| if x > 0.0 { x * lp } else { 0.0 })
                .sum::<f64>()
        }))
    };
    ls.add(weighted_logs(u, &ln_pi));
    ls.add(weighted_logs(v, &ln_rho));

    let ln_theta = params.ln_theta();
    let edge_term = par_chunked_sum(adj.n_top(), |rows| {
        let mut acc = KahanSum::new();
        for i in rows {
            let ui = u.row(i);
            for e in adj.top_row(i) {
                let vj = v.row(e.other as usize);
                let lt = ln_theta.index_axis(ndarray::Axis(0), e.layer as usize);
                let mut cell = 0.0;
                for h in 0..h_count {
                    let uih = ui[h];
                    if uih == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for k in 0..k_count {
                        inner += vj[k] * lt[[h, k]];
                    }
                    cell += uih * inner;
                }
                acc.add(e.weight * cell);
            }
        }
        acc.value()
    });
    ls.add(edge_term);

    let a = weighted_column_sums(u, &params.mu);
    let b = weighted_column_sums(v, &params.nu);
    let t = params.theta_layer_sum();
    for h in 0..h_count {
        for k in 0..k_count {
            ls.add(-t[[h, k]] * a[h] * b[k]);
        }
    }

    Ok(FuzzyCriterion {
        fuzzy_likelihood: ls.value(),
        entropy_top: SoftAssignments::entropy(u),
        entropy_bottom: SoftAssignments::entropy(v),
    })
}

/// Fuzzy criterion `G = L_S + H(U) + H(V)`.
pub fn fuzzy_criterion(
    params: &ModelParams,
    soft: &SoftAssignments,
    adj: &LayeredBiadjacency,
) -> Result<f64> {
    fuzzy_criterion_parts(params, soft, adj).map(|p| p.value())
}

/// `sum b_ij^(l) ln(mu_i nu_j)`: the gap between `L_C` and `G` at one-hot
/// assignments.
pub fn degree_log_mass(params: &ModelParams, adj: &LayeredBiadjacency) -> f64 {
    kahan_sum(
        adj.nonzeros()
            .map(|(i, j, _, w)| w * (params.mu[i] * params.nu[j]).ln()),
    )
}

/// Serialized form of [`ModelParams`] with name echoes for alignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// `L` row-major `H x K` matrices.
    pub theta: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub layer_labels: Vec<String>,
    #[serde(default)]
    pub top_names: Vec<String>,
    #[serde(default)]
    pub bottom_names: Vec<String>,
}

impl ParamsDocument {
    pub fn from_params(params: &ModelParams, graph: Option<&MultiplexBipartiteGraph>) -> Self {
        let theta = params
            .theta
            .outer_iter()
            .map(|m| m.outer_iter().map(|row| row.to_vec()).collect())
            .collect();
        let (layer_labels, top_names, bottom_names) = match graph {
            Some(g) => (
                g.layers().labels().to_vec(),
                g.top().names().to_vec(),
                g.bottom().names().to_vec(),
            ),
            None => Default::default(),
        };
        Self {
            pi: params.pi.clone(),
            rho: params.rho.clone(),
            mu: params.mu.clone(),
            nu: params.nu.clone(),
            theta,
            layer_labels,
            top_names,
            bottom_names,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let h = self.pi.len();
        let k = self.rho.len();
        let l = self.theta.len();
        let mut theta = Array3::zeros((l, h, k));
        for (li, m) in self.theta.iter().enumerate() {
            if m.len() != h || m.iter().any(|row| row.len() != k) {
                return Err(Error::DimensionMismatch(format!(
                    "theta layer {li} is not {h}x{k}"
                )));
            }
            for (hi, row) in m.iter().enumerate() {
                for (ki, &x) in row.iter().enumerate() {
                    theta[[li, hi, ki]] = x;
                }
            }
        }
        Ok(ModelParams {
            pi: self.pi.clone(),
            rho: self.rho.clone(),
            mu: self.mu.clone(),
            nu: self.nu.clone(),
            theta,
        })
    }

    /// Names for sampling: echoes when present, generated otherwise.
    pub fn sample_names(&self) -> Result<SampleNames> {
        let mut names = SampleNames::generated(self.mu.len(), self.nu.len(), self.theta.len());
        for (given, target, what) in [
            (&self.top_names, &mut names.top, "top_names"),
            (&self.bottom_names, &mut names.bottom, "bottom_names"),
            (&self.layer_labels, &mut names.layers, "layer_labels"),
        ] {
            if !given.is_empty() {
                if given.len() != target.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{what} has {} entries, expected {}",
                        given.len(),
                        target.len()
                    )));
                }
                *target = given.clone();
            }
        }
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_cell(weight: Option<f64>, theta: f64) -> (ModelParams, LayeredBiadjacency) {
        let params = ModelParams {
            pi: vec![1.0],
            rho: vec![1.0],
            mu: vec![1.0],
            nu: vec![1.0],
            theta: Array3::from_elem((1, 1, 1), theta),
        };
        let triples = weight.map(|w| vec![(0, 0, 0, w)]).unwrap_or_default();
        (params, LayeredBiadjacency::from_triples(1, 1, 1, triples))
    }

    fn trivial_partitions() -> (HardPartition, HardPartition) {
        (
            HardPartition::new(Side::Top, 1, vec![0]).unwrap(),
            HardPartition::new(Side::Bottom, 1, vec![0]).unwrap(),
        )
    }

    #[test]
    fn single_cell_closed_forms() {
        let (t, b) = trivial_partitions();
        let (p, adj) = single_cell(Some(1.0), 1.0);
        assert_eq!(complete_log_likelihood(&p, &t, &b, &adj).unwrap(), -1.0);
        let (p, adj) = single_cell(None, 1.0);
        assert_eq!(complete_log_likelihood(&p, &t, &b, &adj).unwrap(), -1.0);
        let (p, adj) = single_cell(None, 0.0);
        assert_eq!(complete_log_likelihood(&p, &t, &b, &adj).unwrap(), 0.0);
    }

    #[test]
    fn zero_rate_with_an_edge_is_floored_not_infinite() {
        let (t, b) = trivial_partitions();
        let (p, adj) = single_cell(Some(1.0), 0.0);
        let lc = complete_log_likelihood(&p, &t, &b, &adj).unwrap();
        assert_eq!(lc, crate::numeric::THETA_FLOOR.ln());
    }

    #[test]
    fn uniform_rows_have_log2_entropy() {
        let u = Array2::from_elem((7, 2), 0.5);
        assert!((SoftAssignments::entropy(&u) - 7.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(SoftAssignments::entropy(&array![[1.0, 0.0]]), 0.0);
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let (p, adj) = single_cell(Some(1.0), 1.0);
        let bad = HardPartition::new(Side::Top, 1, vec![0, 0]).unwrap();
        let (_, b) = trivial_partitions();
        assert!(matches!(
            complete_log_likelihood(&p, &bad, &b, &adj),
            Err(Error::DimensionMismatch(_))
        ));
        let soft = SoftAssignments {
            u: Array2::from_elem((2, 1), 1.0),
            v: Array2::from_elem((1, 1), 1.0),
        };
        assert!(fuzzy_criterion(&p, &soft, &adj).is_err());
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let (mut p, _) = single_cell(None, 1.0);
        assert!(p.validate().is_ok());
        p.pi = vec![0.7];
        assert!(p.validate().is_err());
        p.pi = vec![];
        assert!(matches!(sample(&p, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn rounding_breaks_ties_towards_lowest_index() {
        let soft = SoftAssignments {
            u: array![[0.5, 0.5], [0.2, 0.8]],
            v: array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
        };
        let (t, b) = soft.round();
        assert_eq!(t.assignment, vec![0, 1]);
        assert_eq!(b.assignment, vec![0]);
    }

    #[test]
    fn zero_rates_sample_no_edges() {
        let params = ModelParams {
            pi: vec![0.5, 0.5],
            rho: vec![1.0],
            mu: vec![1.0; 5],
            nu: vec![2.0; 4],
            theta: Array3::zeros((3, 2, 1)),
        };
        let s = sample(&params, 3).unwrap();
        assert_eq!(s.graph.stats().as_tuple(), (5, 4, 3, 0, 0));
    }

    #[test]
    fn degenerate_proportions_give_a_single_cluster() {
        let params = ModelParams {
            pi: vec![1.0, 0.0, 0.0],
            rho: vec![1.0],
            mu: vec![1.0; 50],
            nu: vec![1.0; 2],
            theta: Array3::from_elem((1, 3, 1), 0.5),
        };
        let s = sample(&params, 11).unwrap();
        assert!(s.top.assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn sample_mean_matches_poisson_rate() {
        let lambda = 0.8;
        let n = 1000;
        let params = ModelParams {
            pi: vec![1.0],
            rho: vec![1.0],
            mu: vec![1.0; n],
            nu: vec![1.0; n],
            theta: Array3::from_elem((1, 1, 1), lambda),
        };
        let s = sample(&params, 2024).unwrap();
        let cells = (n * n) as f64;
        let mean = s.graph.stats().events as f64 / cells;
        let sigma = (lambda / cells).sqrt();
        assert!((mean - lambda).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let params = ModelParams {
            pi: vec![0.3, 0.7],
            rho: vec![0.5, 0.5],
            mu: vec![1.0; 10],
            nu: vec![1.0; 8],
            theta: Array3::from_elem((2, 2, 2), 0.4),
        };
        let a = sample(&params, 5).unwrap();
        let b = sample(&params, 5).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.top, b.top);
    }

    #[test]
    fn document_round_trip() {
        let params = ModelParams {
            pi: vec![0.25, 0.75],
            rho: vec![1.0],
            mu: vec![0.1, 0.2],
            nu: vec![3.0],
            theta: Array3::from_shape_vec((2, 2, 1), vec![0.1, 0.2, 0.3, 1.0 / 3.0]).unwrap(),
        };
        let doc = ParamsDocument::from_params(&params, None);
        let text = crate::numeric::to_json_17(&doc).unwrap();
        let back: ParamsDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_params().unwrap(), params);
        assert_eq!(doc.theta[1], vec![vec![0.3], vec![1.0 / 3.0]]);
    }
}
