//! Invariants checked over generated inputs.

mod common;

use std::collections::HashSet;

use ndarray::Array2;
use proptest::prelude::*;

use smn::backbone::{self_attention_pool, GraphOperators};
use smn::corpus::{normalize_popularity, split, Event, PopularityScale, SplitPart, SplitRatios};
use smn::diffcore::Tape;
use smn::excitation::{mask_cardinality, mutual_excitation, refresh_mask};
use smn::graph::{build_graph, GraphOptions};
use smn::metrics::{map_at, ndcg_at, order_loss, RankedResult};
use smn::sparse::CsrMatrix;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("e{i:03}")).collect()
}

fn scores_and_truth() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..40, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn corpus() -> impl Strategy<Value = Vec<Event>> {
    let pool = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
    prop::collection::vec(prop::collection::vec(prop::sample::select(pool.to_vec()), 1..8), 1..7).prop_map(|docs| {
        docs.iter()
            .enumerate()
            .map(|(i, toks)| common::event(&format!("d{i}"), toks, i as f64))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Integer scores pushed through x³ + x/2 − 7 stay exact, so the map is
    /// strictly monotone in floating point as well.
    #[test]
    fn ordering_metrics_ignore_monotone_transforms((pred, truth) in scores_and_truth()) {
        let n = pred.len();
        let warped: Vec<f64> = pred.iter().map(|x| x * x * x + 0.5 * x - 7.0).collect();
        let a = RankedResult::new(ids(n), truth.clone(), pred).unwrap();
        let b = RankedResult::new(ids(n), truth, warped).unwrap();
        prop_assert_eq!(&a.pred_order, &b.pred_order);
        for k in 1..=n {
            prop_assert_eq!(order_loss(&a, k).unwrap(), order_loss(&b, k).unwrap());
            prop_assert_eq!(map_at(&a, k).unwrap(), map_at(&b, k).unwrap());
            prop_assert_eq!(ndcg_at(&a, k).unwrap(), ndcg_at(&b, k).unwrap());
        }
    }

    #[test]
    fn metric_ranges((pred, truth) in scores_and_truth()) {
        let n = pred.len();
        let r = RankedResult::new(ids(n), truth.clone(), pred).unwrap();
        for k in 1..=n {
            let ol = order_loss(&r, k).unwrap();
            let same_prefix = (0..k).all(|i| truth[r.true_order[i]] == truth[r.pred_order[i]]);
            prop_assert!(ol >= 0.0);
            prop_assert_eq!(ol == 0.0, same_prefix);
            let map = map_at(&r, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&map), "mAP@{} = {}", k, map);
            let ndcg = ndcg_at(&r, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg), "NDCG@{} = {}", k, ndcg);
        }
    }

    #[test]
    fn rankings_are_permutations((pred, truth) in scores_and_truth()) {
        let n = pred.len();
        let r = RankedResult::new(ids(n), truth, pred.clone()).unwrap();
        let mut seen = r.pred_order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for w in r.pred_order.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(pred[a] > pred[b] || (pred[a] == pred[b] && r.ids[a] < r.ids[b]));
        }
    }

    #[test]
    fn mutual_excitation_ignores_word_order(
        (x, perm) in (2usize..7).prop_flat_map(|m| (matrix(m, 4), Just((0..m).collect::<Vec<_>>()).prop_shuffle())),
        w_eta in matrix(4, 1),
        w_gamma in matrix(4, 1),
    ) {
        let run = |rows: &Array2<f64>| {
            let mut tape = Tape::new();
            let excited = tape.constant(rows.mapv(f64::abs));
            let mean = tape.mean_rows(excited).unwrap();
            let eta = tape.param(w_eta.clone());
            let gamma = tape.param(w_gamma.clone());
            let out = mutual_excitation(&mut tape, excited, mean, eta, gamma, false).unwrap().unwrap();
            let gram = tape.value(out.gram).unwrap().clone();
            (tape.scalar(out.value).unwrap(), gram)
        };
        let permuted = Array2::from_shape_fn(x.dim(), |(r, c)| x[[perm[r], c]]);
        let (a, gram) = run(&x);
        let (b, _) = run(&permuted);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{} vs {}", a, b);
        prop_assert_eq!(gram.clone(), gram.t().to_owned());
    }

    #[test]
    fn pooling_is_permutation_equivariant(
        (n, edges, h, perm) in (2usize..14).prop_flat_map(|n| (
            Just(n),
            prop::collection::vec((0..n, 0..n, 0.1f64..2.0), 0..2 * n),
            matrix(n, 3),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )),
        theta in matrix(3, 3),
        k10 in 1usize..=10,
    ) {
        let mut triplets = Vec::new();
        let mut seen = HashSet::new();
        for (i, j, w) in edges {
            if i != j && seen.insert((i.min(j), i.max(j))) {
                triplets.push((i, j, w));
                triplets.push((j, i, w));
            }
        }
        // New node perm[i] is old node i.
        let moved: Vec<_> = triplets.iter().map(|&(i, j, w)| (perm[i], perm[j], w)).collect();
        let mut h_moved = Array2::zeros(h.dim());
        for (i, &p) in perm.iter().enumerate() {
            h_moved.row_mut(p).assign(&h.row(i));
        }
        let pool = |t: &[(usize, usize, f64)], hv: &Array2<f64>| {
            let ops = GraphOperators::new(&CsrMatrix::from_triplets(n, n, t));
            let mut tape = Tape::new();
            let hv = tape.constant(hv.clone());
            let th = tape.param(theta.clone());
            let out = self_attention_pool(&mut tape, hv, &ops.normalized, th, k10 as f64 / 10.0, None).unwrap();
            (tape.value(out.scores).unwrap().clone(), out.idx)
        };
        let (s, idx) = pool(&triplets, &h);
        let (s_moved, idx_moved) = pool(&moved, &h_moved);
        for i in 0..n {
            for c in 0..3 {
                prop_assert!((s[[i, c]] - s_moved[[perm[i], c]]).abs() < 1e-12);
            }
        }
        prop_assert_eq!(idx.len(), (k10 * n).div_ceil(10));
        prop_assert_eq!(idx_moved.len(), idx.len());

        // Away from near-ties the retained sets correspond as well.
        let mut keys: Vec<f64> = s.rows().into_iter().map(|r| r.sum()).collect();
        keys.sort_by(|a, b| b.total_cmp(a));
        let gap = if idx.len() < n { keys[idx.len() - 1] - keys[idx.len()] } else { 1.0 };
        if gap > 1e-9 {
            let mut mapped: Vec<usize> = idx.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, idx_moved);
        }
    }

    #[test]
    fn mask_keeps_the_ceiling_count(w in prop::collection::vec(-1.0f64..1.0, 1..120), delta in 0.5f64..100.0) {
        let exact = delta * w.len() as f64 / 100.0;
        prop_assume!((exact - exact.round()).abs() > 1e-6);
        let len = w.len();
        let mask = refresh_mask(&Array2::from_shape_vec((len, 1), w).unwrap(), delta).unwrap();
        let ones = mask.iter().filter(|&&m| m == 1.0).count();
        prop_assert_eq!(ones, exact.ceil() as usize);
        prop_assert_eq!(ones, mask_cardinality(delta, len));
        prop_assert!(mask.iter().all(|&m| m == 0.0 || m == 1.0));
    }

    #[test]
    fn graph_invariants(events in corpus()) {
        let emb = common::embeddings_for(&events, 3, 1);
        let g = build_graph(&events, &emb, GraphOptions::default()).unwrap();
        let again = build_graph(&events, &emb, GraphOptions::default()).unwrap();
        prop_assert_eq!(&g, &again);

        let n = g.n_nodes();
        let mut co = HashSet::new();
        for e in &events {
            let nodes = g.vocab.event_nodes(e).unwrap();
            for &i in &nodes {
                for &j in &nodes {
                    if i < j {
                        co.insert((i, j));
                    }
                }
            }
        }
        prop_assert!(g.adjacency.nnz() <= 2 * co.len());
        for i in 0..n {
            prop_assert_eq!(g.adjacency.get(i, i), 0.0);
            for j in 0..n {
                let a = g.adjacency.get(i, j);
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a.to_bits(), g.adjacency.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn normalization_is_idempotent(raw in prop::collection::vec(0.0f64..1e4, 2..40)) {
        let events: Vec<Event> = raw.iter().enumerate().map(|(i, &r)| common::event(&format!("e{i}"), &["x"], r)).collect();
        prop_assume!(raw.iter().any(|&r| r != raw[0]));
        let (normalized, _) = normalize_popularity(&events).unwrap();
        let unit = PopularityScale { min: 0.0, max: 1.0 };
        for e in &normalized {
            prop_assert!((0.0..=1.0).contains(&e.popularity));
            prop_assert_eq!(unit.apply(e.popularity), e.popularity);
        }
    }

    #[test]
    fn splits_partition_and_repeat(n in 1usize..80, seed in any::<u64>()) {
        let events: Vec<Event> = (0..n).map(|i| common::event(&format!("e{i}"), &["x"], 0.0)).collect();
        let a = split(&events, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(&a, &split(&events, SplitRatios::default(), seed).unwrap());
        let mut all: Vec<&String> = [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .iter()
            .flat_map(|&p| a.ids(p))
            .collect();
        prop_assert_eq!(all.len(), n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }
}
