mod common;

use common::planted_params;
use mlbm::inference::{fit_multi_restart, FitConfig};
use mlbm::model::sample;
use mlbm::summary::{aggregate, filter_by_events, filter_by_rate, to_dot, DotOptions};
use proptest::prelude::*;

#[test]
fn single_cluster_single_layer_collects_everything() {
    let mut params = planted_params(1, 1, 8, 6, 1, 0.7, 0.7);
    params.mu[0] = 3.0;
    let s = sample(&params, 1).unwrap();
    let fit = fit_multi_restart(&s.graph, &FitConfig { restarts: 1, ..FitConfig::new(1, 1) }).unwrap();
    let summary = aggregate(&s.graph, &fit).unwrap();
    assert_eq!(summary.edges.len(), 1);
    assert_eq!(summary.edges[0].event_count, s.graph.stats().events);
    assert_eq!(summary.top_clusters[0].size, 8);
}

#[test]
fn planted_block_diagonal_has_no_off_diagonal_mass() {
    let s = sample(&planted_params(2, 2, 40, 30, 2, 0.5, 0.0), 3).unwrap();
    let fit = fit_multi_restart(&s.graph, &FitConfig { restarts: 10, ..FitConfig::new(2, 2) }).unwrap();
    let summary = aggregate(&s.graph, &fit).unwrap();
    let diagonal: Vec<_> = summary.edges.iter().map(|e| (e.h, e.k)).collect();
    // clusters may be relabelled, but each top cluster talks to one bottom cluster
    for e in &summary.edges {
        assert!(diagonal.iter().all(|&(h, k)| h != e.h || k == e.k), "{diagonal:?}");
    }
}

#[test]
fn planted_three_by_three_dot() {
    let s = sample(&planted_params(3, 3, 90, 60, 2, 0.4, 0.02), 9).unwrap();
    let fit = fit_multi_restart(&s.graph, &FitConfig { restarts: 10, ..FitConfig::new(3, 3) }).unwrap();
    let summary = filter_by_events(&aggregate(&s.graph, &fit).unwrap(), 40);
    let dot = to_dot(&summary, &DotOptions::default());
    assert_eq!(dot.lines().filter(|l| l.contains("shape=")).count(), 6);
    // one strong block per layer and top cluster
    assert_eq!(dot.matches("->").count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn totals_and_filter_algebra(seed in 0u64..1000, h in 1usize..4, k in 1usize..4, t in 0u64..6, r in 0.0f64..2.0) {
        let s = sample(&planted_params(2, 3, 15, 12, 3, 0.8, 0.1), seed).unwrap();
        prop_assume!(s.graph.stats().distinct_edges > 0);
        let fit = fit_multi_restart(&s.graph, &FitConfig { restarts: 2, seed, ..FitConfig::new(h, k) }).unwrap();
        let summary = aggregate(&s.graph, &fit).unwrap();
        let stats = s.graph.stats();
        prop_assert_eq!(summary.total_events(), stats.events);
        prop_assert_eq!(summary.total_distinct_edges(), stats.distinct_edges as u64);
        prop_assert_eq!(summary.top_clusters.iter().map(|c| c.size).sum::<usize>(), stats.top_nodes);
        prop_assert_eq!(summary.bottom_clusters.iter().map(|c| c.size).sum::<usize>(), stats.bottom_nodes);
        for e in &summary.edges {
            prop_assert!(e.event_count >= e.distinct_edge_count && e.distinct_edge_count >= 1);
        }
        let by_events = filter_by_events(&summary, t);
        prop_assert_eq!(&filter_by_events(&by_events, t), &by_events);
        let a = filter_by_rate(&by_events, r).unwrap();
        let b = filter_by_events(&filter_by_rate(&summary, r).unwrap(), t);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(to_dot(&a, &DotOptions::default()), to_dot(&b, &DotOptions::default()));
    }
}
