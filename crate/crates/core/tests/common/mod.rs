//! Independent reference implementations used by the integration tests.
//!
//! Everything here works on dense `[layer][i][j]` cubes with plain loops and
//! never calls into the fitting code paths it is used to check.

#![allow(dead_code, clippy::needless_range_loop)]

use mlbm::graph::MultiplexBipartiteGraph;
use mlbm::model::{HardPartition, ModelParams, SoftAssignments};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Cube = Vec<Vec<Vec<f64>>>;

pub fn dense_cube(g: &MultiplexBipartiteGraph, use_counts: bool) -> Cube {
    let (i, j, l) = (g.top().len(), g.bottom().len(), g.layers().len());
    let mut b = vec![vec![vec![0.0; j]; i]; l];
    for ((ti, bj, ll), c) in g.edges() {
        b[ll as usize][ti as usize][bj as usize] = if use_counts { c as f64 } else { 1.0 };
    }
    b
}

pub fn dims(b: &Cube) -> (usize, usize, usize) {
    (b.len(), b[0].len(), b[0][0].len())
}

pub fn naive_degree_factors(b: &Cube) -> (Vec<f64>, Vec<f64>) {
    let (l, i, j) = dims(b);
    let mut m = 0.0;
    let mut mu = vec![0.0; i];
    let mut nu = vec![0.0; j];
    for ll in 0..l {
        for ii in 0..i {
            for jj in 0..j {
                m += b[ll][ii][jj];
                mu[ii] += b[ll][ii][jj];
                nu[jj] += b[ll][ii][jj];
            }
        }
    }
    let s = f64::sqrt(m);
    (mu.iter().map(|x| x / s).collect(), nu.iter().map(|x| x / s).collect())
}

fn ln_floor(t: f64) -> f64 {
    t.max(1e-10).ln()
}

/// Dense triple-loop complete-data log-likelihood.
pub fn naive_complete_ll(p: &ModelParams, top: &[usize], bottom: &[usize], b: &Cube) -> f64 {
    let (l, i, j) = dims(b);
    let mut total = 0.0;
    for ii in 0..i {
        total += p.pi[top[ii]].ln();
    }
    for jj in 0..j {
        total += p.rho[bottom[jj]].ln();
    }
    for ii in 0..i {
        for jj in 0..j {
            for ll in 0..l {
                let theta = p.theta[[ll, top[ii], bottom[jj]]];
                let rate = p.mu[ii] * p.nu[jj] * theta;
                let bij = b[ll][ii][jj];
                if bij != 0.0 {
                    total += bij * (p.mu[ii] * p.nu[jj]).ln() + bij * ln_floor(theta);
                }
                total -= rate;
            }
        }
    }
    total
}

/// Dense five-fold-loop fuzzy criterion.
pub fn naive_fuzzy(p: &ModelParams, soft: &SoftAssignments, b: &Cube) -> f64 {
    let (l, i, j) = dims(b);
    let (h_n, k_n) = (p.pi.len(), p.rho.len());
    let mut total = 0.0;
    for ii in 0..i {
        for h in 0..h_n {
            let u = soft.u[[ii, h]];
            total += u * p.pi[h].ln();
            if u > 0.0 {
                total -= u * u.ln();
            }
        }
    }
    for jj in 0..j {
        for k in 0..k_n {
            let v = soft.v[[jj, k]];
            total += v * p.rho[k].ln();
            if v > 0.0 {
                total -= v * v.ln();
            }
        }
    }
    for h in 0..h_n {
        for k in 0..k_n {
            for ii in 0..i {
                for jj in 0..j {
                    let w = soft.u[[ii, h]] * soft.v[[jj, k]];
                    for ll in 0..l {
                        let theta = p.theta[[ll, h, k]];
                        total += w * (b[ll][ii][jj] * ln_floor(theta) - p.mu[ii] * p.nu[jj] * theta);
                    }
                }
            }
        }
    }
    total
}

/// Closed-form maximizer of `L_C` over `(pi, rho, Theta)` for fixed hard
/// partitions, scored with the dense formula. Empty clusters contribute
/// nothing.
pub fn profile_complete_ll(b: &Cube, top: &[usize], bottom: &[usize], h_n: usize, k_n: usize) -> f64 {
    let (l, i, j) = dims(b);
    let (mu, nu) = naive_degree_factors(b);
    let mut n_top = vec![0.0; h_n];
    let mut n_bottom = vec![0.0; k_n];
    let mut mu_sum = vec![0.0; h_n];
    let mut nu_sum = vec![0.0; k_n];
    for ii in 0..i {
        n_top[top[ii]] += 1.0;
        mu_sum[top[ii]] += mu[ii];
    }
    for jj in 0..j {
        n_bottom[bottom[jj]] += 1.0;
        nu_sum[bottom[jj]] += nu[jj];
    }
    let mut mass = vec![vec![vec![0.0; k_n]; h_n]; l];
    for ll in 0..l {
        for ii in 0..i {
            for jj in 0..j {
                mass[ll][top[ii]][bottom[jj]] += b[ll][ii][jj];
            }
        }
    }
    let mut total = 0.0;
    for ii in 0..i {
        total += (n_top[top[ii]] / i as f64).ln();
    }
    for jj in 0..j {
        total += (n_bottom[bottom[jj]] / j as f64).ln();
    }
    for ll in 0..l {
        for ii in 0..i {
            for jj in 0..j {
                let (h, k) = (top[ii], bottom[jj]);
                let denom = mu_sum[h] * nu_sum[k];
                let theta = if denom > 0.0 { mass[ll][h][k] / denom } else { 0.0 };
                let bij = b[ll][ii][jj];
                if bij != 0.0 {
                    total += bij * (mu[ii] * nu[jj] * theta).ln();
                }
                total -= mu[ii] * nu[jj] * theta;
            }
        }
    }
    total
}

fn labelings(n: usize, clusters: usize) -> Vec<Vec<usize>> {
    let count = clusters.pow(n as u32);
    (0..count)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let c = code % clusters;
                    code /= clusters;
                    c
                })
                .collect()
        })
        .collect()
}

/// Global maximum of `L_C` by enumerating every pair of hard partitions.
pub fn enumerate_global_max(b: &Cube, h_n: usize, k_n: usize) -> f64 {
    let (_, i, j) = dims(b);
    let tops = labelings(i, h_n);
    let bottoms = labelings(j, k_n);
    let mut best = f64::NEG_INFINITY;
    for t in &tops {
        for bt in &bottoms {
            best = best.max(profile_complete_ll(b, t, bt, h_n, k_n));
        }
    }
    best
}

/// Random tiny graph with a loose two-by-two block structure and at least
/// one edge.
pub fn random_tiny_graph(seed: u64, max_top: usize, max_bottom: usize, max_layers: usize) -> MultiplexBipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let i = rng.random_range(3..=max_top);
        let j = rng.random_range(3..=max_bottom);
        let l = rng.random_range(1..=max_layers);
        let top: Vec<usize> = (0..i).map(|_| rng.random_range(0..2)).collect();
        let bottom: Vec<usize> = (0..j).map(|_| rng.random_range(0..2)).collect();
        let mut probs = vec![[[0.0; 2]; 2]; l];
        for layer in probs.iter_mut() {
            for row in layer.iter_mut() {
                for p in row.iter_mut() {
                    *p = rng.random_range(0.05..0.95);
                }
            }
        }
        let mut g = MultiplexBipartiteGraph::new();
        for ii in 0..i {
            g.ensure_top(&format!("t{ii}")).unwrap();
        }
        for jj in 0..j {
            g.ensure_bottom(&format!("b{jj}")).unwrap();
        }
        for ll in 0..l {
            g.ensure_layer(&format!("l{ll}")).unwrap();
        }
        for ii in 0..i {
            for jj in 0..j {
                for ll in 0..l {
                    if rng.random_bool(probs[ll][top[ii]][bottom[jj]]) {
                        g.add_events_by_index(ii, jj, ll, 1).unwrap();
                    }
                }
            }
        }
        if g.stats().distinct_edges > 0 {
            return g;
        }
    }
}

pub fn hard(p: &HardPartition) -> Vec<usize> {
    p.assignment.clone()
}

/// Block-diagonal planted parameters: `inside` on the diagonal blocks,
/// `outside` elsewhere, uniform proportions and unit degree factors.
pub fn planted_params(h: usize, k: usize, i: usize, j: usize, l: usize, inside: f64, outside: f64) -> ModelParams {
    let mut theta = ndarray::Array3::zeros((l, h, k));
    for ((_, a, b), t) in theta.indexed_iter_mut() {
        *t = if a == b { inside } else { outside };
    }
    ModelParams {
        pi: vec![1.0 / h as f64; h],
        rho: vec![1.0 / k as f64; k],
        mu: vec![1.0; i],
        nu: vec![1.0; j],
        theta,
    }
}

/// Random parameters with degree factors taken from `b` and a few exact
/// zero rates.
pub fn random_params(rng: &mut ChaCha8Rng, b: &Cube, h_n: usize, k_n: usize) -> ModelParams {
    let (l, _, _) = dims(b);
    let (mu, nu) = naive_degree_factors(b);
    let simplex = |rng: &mut ChaCha8Rng, n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let pi = simplex(rng, h_n);
    let rho = simplex(rng, k_n);
    let mut theta = ndarray::Array3::zeros((l, h_n, k_n));
    for t in theta.iter_mut() {
        *t = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..3.0) };
    }
    ModelParams { pi, rho, mu, nu, theta }
}

pub fn random_soft(rng: &mut ChaCha8Rng, n: usize, clusters: usize) -> ndarray::Array2<f64> {
    let mut m = ndarray::Array2::zeros((n, clusters));
    for mut row in m.rows_mut() {
        for x in row.iter_mut() {
            *x = rng.random_range(0.01..1.0);
        }
        let s = row.sum();
        row /= s;
    }
    m
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, clusters: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..clusters)).collect()
}
