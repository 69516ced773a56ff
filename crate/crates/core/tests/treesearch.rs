use ndarray::Array2;
use policylearn::policies::TreeNode;
use policylearn::scores::{ScoreMatrix, ScoreMethod};
use policylearn::treesearch::{
    candidate_thresholds, exact_search, hybrid_search, tree_score, SearchConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain recursive enumeration: every split on every global candidate,
/// every leaf arm, sums taken directly from the rows.
fn brute_force(
    x: &Array2<f64>,
    g: &Array2<f64>,
    rows: &[usize],
    depth: usize,
    cands: &[Vec<f64>],
    min_node: usize,
) -> f64 {
    let mut best = (0..g.ncols())
        .map(|a| rows.iter().map(|&i| g[[i, a]]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    if depth == 0 {
        return best;
    }
    for (j, ts) in cands.iter().enumerate() {
        for &t in ts {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, j]] <= t);
            if l.len() < min_node || r.len() < min_node {
                continue;
            }
            let v = brute_force(x, g, &l, depth - 1, cands, min_node)
                + brute_force(x, g, &r, depth - 1, cands, min_node);
            best = best.max(v);
        }
    }
    best
}

struct Instance {
    x: Array2<f64>,
    g: Array2<f64>,
}

/// Integer features with many ties and scores on a quarter grid, so every
/// sum is exact in floating point.
fn dyadic_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, d: usize) -> Instance {
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(0..6) as f64);
    let g = Array2::from_shape_fn((n, d), |_| rng.random_range(-8..=8) as f64 / 4.0);
    Instance { x, g }
}

fn scores(g: &Array2<f64>) -> ScoreMatrix {
    ScoreMatrix::new(g.clone(), ScoreMethod::Aipw).unwrap()
}

fn oracle(inst: &Instance, cfg: &SearchConfig) -> f64 {
    let cands: Vec<Vec<f64>> = (0..inst.x.ncols())
        .map(|j| candidate_thresholds(&inst.x.column(j).to_vec(), cfg.split_step))
        .collect();
    let rows: Vec<usize> = (0..inst.x.nrows()).collect();
    brute_force(&inst.x, &inst.g, &rows, cfg.depth, &cands, cfg.min_node_size)
}

fn leaf_sizes(root: &TreeNode, x: &Array2<f64>) -> Vec<usize> {
    let mut sizes = vec![0; root.num_leaves()];
    for r in x.rows() {
        sizes[root.leaf_index(r)] += 1;
    }
    sizes
}

#[test]
fn matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let n = rng.random_range(1..=20);
        let p = rng.random_range(1..=3);
        let depth = rng.random_range(0..=2);
        let mut cfg = SearchConfig::exact(depth);
        cfg.min_node_size = if case % 3 == 0 { rng.random_range(1..=3) } else { 1 };
        cfg.split_step = if case % 5 == 0 { 2 } else { 1 };
        let inst = dyadic_instance(&mut rng, n, p, 3);
        let res = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        assert_eq!(res.total_score, oracle(&inst, &cfg), "case {case}");
        assert_eq!(res.total_score, tree_score(&res.root, inst.x.view(), &scores(&inst.g)));
        assert!(leaf_sizes(&res.root, &inst.x).iter().all(|&s| s >= cfg.min_node_size.min(n)));
    }
}

#[test]
fn matches_brute_force_at_depth_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..60 {
        let n = rng.random_range(4..=14);
        let inst = dyadic_instance(&mut rng, n, 2, 3);
        let cfg = SearchConfig::exact(3);
        let res = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        assert_eq!(res.total_score, oracle(&inst, &cfg), "case {case}");
    }
}

#[test]
fn matches_brute_force_with_continuous_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let g = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() - 0.5);
        let inst = Instance { x, g };
        let cfg = SearchConfig::exact(2);
        let res = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        assert!((res.total_score - oracle(&inst, &cfg)).abs() < 1e-9);
    }
}

#[test]
fn deeper_never_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let inst = dyadic_instance(&mut rng, 30, 3, 3);
        let s = scores(&inst.g);
        let mut last = f64::NEG_INFINITY;
        for depth in 0..=3 {
            let v = exact_search(inst.x.view(), &s, &SearchConfig::exact(depth)).unwrap().total_score;
            assert!(v >= last);
            last = v;
        }
    }
}

#[test]
fn constant_shift_moves_score_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let inst = dyadic_instance(&mut rng, 25, 3, 3);
        let cfg = SearchConfig::exact(2);
        let a = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        let shifted = inst.g.mapv(|v| v + 1.25);
        let b = exact_search(inst.x.view(), &scores(&shifted), &cfg).unwrap();
        assert_eq!(a.root, b.root);
        assert_eq!(b.total_score - a.total_score, 25.0 * 1.25);
    }
}

#[test]
fn row_shifts_keep_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let inst = dyadic_instance(&mut rng, 25, 3, 3);
        let shifts: Vec<f64> = (0..25).map(|_| rng.random_range(-4..=4) as f64 / 2.0).collect();
        let mut g2 = inst.g.clone();
        for (i, mut r) in g2.rows_mut().into_iter().enumerate() {
            r.mapv_inplace(|v| v + shifts[i]);
        }
        let cfg = SearchConfig::exact(2);
        let a = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        let b = exact_search(inst.x.view(), &scores(&g2), &cfg).unwrap();
        assert_eq!(a.root, b.root);
        assert_eq!(b.total_score - a.total_score, shifts.iter().sum::<f64>());
    }
}

#[test]
fn row_permutation_invariance() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let inst = dyadic_instance(&mut rng, 20, 3, 3);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let xp = inst.x.select(ndarray::Axis(0), &perm);
        let gp = inst.g.select(ndarray::Axis(0), &perm);
        let cfg = SearchConfig::exact(2);
        let a = exact_search(inst.x.view(), &scores(&inst.g), &cfg).unwrap();
        let b = exact_search(xp.view(), &scores(&gp), &cfg).unwrap();
        assert_eq!(a.total_score, b.total_score);
        assert_eq!(a.root, b.root);
    }
}

#[test]
fn hybrid_bounded_by_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let inst = dyadic_instance(&mut rng, n, 3, 3);
        let s = scores(&inst.g);
        let exact = exact_search(inst.x.view(), &s, &SearchConfig::exact(2)).unwrap();
        let hybrid = hybrid_search(inst.x.view(), &s, &SearchConfig::hybrid(2, 1)).unwrap();
        assert!(hybrid.total_score <= exact.total_score);
        let same = hybrid_search(inst.x.view(), &s, &SearchConfig::hybrid(2, 2)).unwrap();
        assert_eq!(same.root, exact.root);
        assert_eq!(same.total_score, exact.total_score);
    }
}

#[test]
fn hybrid_equals_exact_when_separable() {
    // Arm 1 is best exactly when x0 > 2, regardless of x1.
    let n = 40;
    let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { (i % 5) as f64 } else { (i % 7) as f64 });
    let g = Array2::from_shape_fn((n, 2), |(i, a)| {
        let high = x[[i, 0]] > 2.0;
        if (a == 1) == high { 1.0 } else { 0.0 }
    });
    let s = scores(&g);
    let exact = exact_search(x.view(), &s, &SearchConfig::exact(2)).unwrap();
    let hybrid = hybrid_search(x.view(), &s, &SearchConfig::hybrid(2, 1)).unwrap();
    assert_eq!(hybrid.total_score, exact.total_score);
    assert_eq!(exact.total_score, n as f64);
}

#[test]
fn hybrid_depth_four_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let n = 5000;
    let x = Array2::from_shape_fn((n, 5), |(_, j)| {
        if j < 2 { rng.random_range(18..70) as f64 } else { rng.random_range(0..2) as f64 }
    });
    let g = Array2::from_shape_fn((n, 4), |_| rng.random::<f64>() - 0.5);
    let s = scores(&g);
    let res = hybrid_search(x.view(), &s, &SearchConfig::hybrid(4, 2)).unwrap();
    assert!(policylearn::policies::tree_depth(&res.root) <= 4);
    assert!((tree_score(&res.root, x.view(), &s) - res.total_score).abs() < 1e-9);
    assert!(res.nodes_evaluated > 0);
}
