mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{dyadic_similarity, min_spanning_tree_weight, rng, Dsu};
use spcrf::graph::mst_topk;
use spcrf::Matrix;

fn continuous_similarity(rng: &mut impl Rng, n: usize) -> Matrix {
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in i + 1..n {
            let v = rng.random_range(0.0..1.0);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

fn pair_set(edges: impl IntoIterator<Item = (usize, usize)>) -> BTreeSet<(usize, usize)> {
    edges.into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn full_tree_weight_matches_exhaustive_search(seed in any::<u64>(), denom in prop::sample::select(vec![4u32, 8, 1024])) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..=6);
        let s = dyadic_similarity(&mut rng, n, denom);
        let tree = mst_topk(&s, n - 1).unwrap();
        prop_assert_eq!(tree.edges.len(), n - 1);
        let weight: f64 = tree.edges.iter().map(|e| 1.0 - s.get(e.i, e.j)).sum();
        prop_assert_eq!(weight, min_spanning_tree_weight(&s));
    }

    #[test]
    fn top_k_edges_form_a_forest(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..=40);
        let k = rng.random_range(1..=n + 3);
        let s = dyadic_similarity(&mut rng, n, 16);
        let edges = mst_topk(&s, k).unwrap();
        prop_assert_eq!(edges.edges.len(), k.min(n - 1));
        let mut dsu = Dsu::new(n);
        for e in &edges.edges {
            prop_assert!(e.i < e.j);
            prop_assert!(dsu.union(e.i, e.j), "cycle through ({}, {})", e.i, e.j);
        }
    }

    #[test]
    fn large_k_keeps_the_whole_tree(seed in any::<u64>(), extra in 0usize..5) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..=20);
        let s = continuous_similarity(&mut rng, n);
        let full = mst_topk(&s, n - 1).unwrap();
        let more = mst_topk(&s, n - 1 + extra).unwrap();
        prop_assert_eq!(full, more);
    }

    #[test]
    fn relabeling_permutes_the_edges(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..=15);
        let k = rng.random_range(1..=n);
        let s = continuous_similarity(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // node i of the original graph becomes node perm[i]
        let mut t = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                t.set(perm[i], perm[j], s.get(i, j));
            }
        }
        let original = mst_topk(&s, k).unwrap();
        let permuted = mst_topk(&t, k).unwrap();
        prop_assert_eq!(
            pair_set(original.edges.iter().map(|e| (perm[e.i], perm[e.j]))),
            pair_set(permuted.edges.iter().map(|e| (e.i, e.j)))
        );
    }
}

#[test]
fn keeps_the_most_similar_tree_edges() {
    let s = Matrix::from_rows(&[
        vec![1.0, 0.9, 0.1, 0.2],
        vec![0.9, 1.0, 0.8, 0.3],
        vec![0.1, 0.8, 1.0, 0.7],
        vec![0.2, 0.3, 0.7, 1.0],
    ])
    .unwrap();
    let one = mst_topk(&s, 1).unwrap();
    assert_eq!(pair_set(one.edges.iter().map(|e| (e.i, e.j))), pair_set([(0, 1)]));
    let all = mst_topk(&s, 3).unwrap();
    assert_eq!(pair_set(all.edges.iter().map(|e| (e.i, e.j))), pair_set([(0, 1), (1, 2), (2, 3)]));
}
