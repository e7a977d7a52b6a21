mod common;

use common::naive_stats;
use graphopt::datasets::{gen_barabasi_albert, gen_erdos_renyi, parse_edge_list};
use graphopt::graph::{compute_stats, percent_deviation, Deviation, Graph, StatKind, StatsReport};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        proptest::collection::vec(any::<bool>(), pairs).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n {
                for v in u + 1..n {
                    if bits[k] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            Graph::from_edges(n, edges).unwrap()
        })
    })
}

fn assert_matches_oracle(g: &Graph) {
    let s = compute_stats(g);
    let o = naive_stats(g);
    assert_eq!(s.triangle_count, o.triangles);
    assert_eq!(s.largest_cc, o.largest_cc);
    assert_eq!(s.max_degree, o.max_degree);
    assert!((s.avg_clustering - o.avg_clustering).abs() <= 1e-9);
    match (s.assortativity, o.assortativity) {
        (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9, "assortativity {a} vs {b}"),
        (None, None) => {}
        other => panic!("assortativity definedness differs: {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stats_match_brute_force(g in graph_strategy(14)) {
        assert_matches_oracle(&g);
    }

    #[test]
    fn stats_ignore_node_names(g in graph_strategy(12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = compute_stats(&g);
        let b = compute_stats(&g.relabel(&perm).unwrap());
        prop_assert_eq!(a.triangle_count, b.triangle_count);
        prop_assert_eq!(a.largest_cc, b.largest_cc);
        prop_assert_eq!(a.max_degree, b.max_degree);
        prop_assert!((a.avg_clustering - b.avg_clustering).abs() < 1e-12);
        prop_assert_eq!(a.assortativity.is_some(), b.assortativity.is_some());
        if let (Some(x), Some(y)) = (a.assortativity, b.assortativity) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clustering_and_assortativity_stay_in_range(g in graph_strategy(16)) {
        let s = compute_stats(&g);
        prop_assert!((0.0..=1.0).contains(&s.avg_clustering));
        if let Some(r) = s.assortativity {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
        prop_assert!(s.largest_cc >= 1 && s.largest_cc <= g.node_count());
    }

    #[test]
    fn deviation_against_itself_is_zero(g in graph_strategy(12)) {
        let s = compute_stats(&g);
        for (kind, dev) in percent_deviation(&s, &s).entries {
            match dev {
                Deviation::Percent(p) => prop_assert_eq!(p, 0.0, "{}", kind.name()),
                Deviation::NotComparable => prop_assert_eq!(s.get(kind), Some(0.0)),
                Deviation::Undefined => prop_assert!(s.assortativity.is_none()),
            }
        }
    }

    #[test]
    fn stats_record_round_trips(g in graph_strategy(12)) {
        let s = compute_stats(&g);
        prop_assert_eq!(StatsReport::from_record(&s.to_record()).unwrap(), s);
    }

    #[test]
    fn edge_list_text_round_trips(g in graph_strategy(12)) {
        let text: String = g.edges().iter().map(|(u, v)| format!("{v}\t{u}\n")).collect();
        let back = parse_edge_list(&text, Some(g.node_count()), false).unwrap().graph;
        prop_assert_eq!(back.edges(), g.edges());
        prop_assert_eq!(back.node_count(), g.node_count());
    }
}

#[test]
fn er_samples_match_brute_force() {
    for seed in 0..40 {
        let n = 1 + (seed as usize * 7) % 20;
        let p = [0.1, 0.3, 0.5, 0.8][seed as usize % 4];
        assert_matches_oracle(&gen_erdos_renyi(n, p, seed).unwrap());
    }
}

#[test]
fn percent_deviation_hand_case() {
    let observed = StatsReport {
        triangle_count: 504,
        avg_clustering: 0.147,
        largest_cc: 100,
        assortativity: Some(-0.096),
        max_degree: 33,
    };
    let generated = StatsReport {
        triangle_count: 252,
        max_degree: 66,
        ..observed
    };
    let d = percent_deviation(&observed, &generated);
    assert_eq!(d.get(StatKind::TriangleCount), Deviation::Percent(50.0));
    assert_eq!(d.get(StatKind::MaxDegree), Deviation::Percent(100.0));
    assert_eq!(d.get(StatKind::AvgClustering), Deviation::Percent(0.0));
}

#[test]
fn barabasi_albert_edge_count() {
    for (n, m) in [(100, 4), (200, 4), (30, 2), (5, 4)] {
        let g = gen_barabasi_albert(n, m, 9).unwrap();
        assert_eq!(g.edge_count(), m * (n - m));
        assert_matches_oracle(&g);
    }
}
