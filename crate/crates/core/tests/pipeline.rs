use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use policylearn::data::{known_propensities, Dataset};
use policylearn::nuisance::{fit_nuisance, ForestParams, NuisanceConfig, NuisanceFit};
use policylearn::policies::{assign, Policy};
use policylearn::scores::{aipw_scores, group_effects, policy_reward, ScoreMatrix, ScoreMethod};
use policylearn::seeding;
use policylearn::simulate::{draw_outcomes, run_two_phase, Dgp, DgpConfig, Modifier, Phase, TwoPhaseConfig};
use policylearn::treesearch::{exact_search, tree_score, SearchConfig};

fn small_forest() -> NuisanceConfig {
    NuisanceConfig { forest: ForestParams { num_trees: 15, ..ForestParams::default() }, folds: 5, ..Default::default() }
}

fn experiment(n: usize, seed: u64) -> Dataset {
    let dgp = Dgp::new(DgpConfig::default()).unwrap();
    let pop = dgp.population(n, seed).unwrap();
    let mut rng = seeding::rng_at(seed, &[9]);
    let actions = (0..n).map(|_| rng.random_range(0..4)).collect();
    pop.realize(actions, seeding::derive(seed, &[10])).unwrap()
}

#[test]
fn nuisance_fit_ignores_thread_count() {
    let ds = experiment(400, 3);
    let fit_on = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit_nuisance(&ds, &small_forest(), 77).unwrap())
    };
    let a = fit_on(1);
    let b = fit_on(3);
    assert_eq!(a.mu_hat, b.mu_hat);
    assert_eq!(a.e_hat, b.e_hat);
}

#[test]
fn estimated_propensities_are_clipped_rows() {
    let ds = experiment(300, 4);
    let fit = fit_nuisance(&ds, &small_forest(), 5).unwrap();
    for row in fit.e_hat.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| p >= 0.01 - 1e-12));
    }
    let known = known_propensities(&ds, &[0.25; 4]).unwrap();
    let fit = fit_nuisance(&known, &small_forest(), 5).unwrap();
    assert!(fit.e_hat.iter().all(|&p| p == 0.25));
}

/// Arm 2 helps women only; the truth comes from the oracle means.
#[test]
fn group_contrasts_recover_truth() {
    let mut cfg = DgpConfig::default();
    cfg.heterogeneity = vec![Modifier::new(Some(2), "female", 0.10).equals(1.0)];
    let dgp = Dgp::new(cfg).unwrap();
    let n = 8000;
    let x = dgp.sample_x(n, 21);
    let (oracle, _) = dgp.oracle(&x);
    let mut rng = seeding::rng(22);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let y = draw_outcomes(&oracle.mu, &actions, 23);
    let ds = Dataset::new(x.clone(), dgp.feature_names().to_vec(), actions, y, (0..n).collect(), 4).unwrap();
    let fit = NuisanceFit::injected(oracle.mu.clone(), Array2::from_elem((n, 4), 0.25)).unwrap();
    let scores = aipw_scores(&ds, &fit).unwrap();
    let labels: Vec<&str> = x.column(1).iter().map(|&f| if f == 1.0 { "f" } else { "m" }).collect();
    let effects = group_effects(&scores, &labels, 0).unwrap();
    assert_eq!(effects.len(), 6);
    for e in &effects {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == e.group_label).collect();
        let truth = rows.iter().map(|&i| oracle.mu[[i, e.arm]] - oracle.mu[[i, 0]]).sum::<f64>() / rows.len() as f64;
        assert!((e.estimate - truth).abs() <= 3.0 * e.std_error, "{e:?} vs {truth}");
    }
}

#[test]
fn two_phase_bookkeeping() {
    let mut cfg = TwoPhaseConfig::default();
    cfg.dgp.n = 900;
    cfg.nuisance = small_forest();
    cfg.tree_depth = 2;
    let r = run_two_phase(&cfg, 8).unwrap();
    let sizes = r.phase_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), 900);
    assert_eq!(r.wave2_rows.len(), sizes[1] + sizes[2]);
    // First-wave treated rows got a letter; everyone else got nothing.
    for i in 0..900 {
        let a = r.wave1.actions()[i];
        assert_eq!(a != 0, r.phase[i] == Phase::A);
    }
    // Tree rows receive the tree's arm.
    for (k, &i) in r.wave2_rows.iter().enumerate() {
        if r.phase[i] == Phase::B1 {
            assert_eq!(r.wave2_actions[k], r.tree.root.arm_for(r.wave1.features().row(i)));
        } else {
            assert!(r.wave2_actions[k] >= 1);
        }
    }
    // Households are never split across phases.
    let c = r.wave1.clusters();
    for i in 0..900 {
        for j in i + 1..(i + 5).min(900) {
            if c[i] == c[j] {
                assert_eq!(r.phase[i], r.phase[j]);
            }
        }
    }
    let sample = r.eval_sample();
    assert_eq!(sample.y.len(), 900 + r.wave2_rows.len());
    sample.check().unwrap();

    let again = run_two_phase(&cfg, 8).unwrap();
    assert_eq!(again.wave2_actions, r.wave2_actions);
    assert_eq!(again.wave2_outcomes, r.wave2_outcomes);
}

fn score_matrix(n: usize, d: usize, vals: &[i32]) -> ScoreMatrix {
    let g = Array2::from_shape_fn((n, d), |(i, a)| vals[(i * d + a) % vals.len()] as f64 / 4.0);
    ScoreMatrix::new(g, ScoreMethod::Aipw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_tree_beats_every_constant(
        n in 2usize..40,
        xs in prop::collection::vec(0u8..8, 80),
        vals in prop::collection::vec(-8i32..8, 1..60),
        depth in 0usize..3,
    ) {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| xs[(2 * i + j) % xs.len()] as f64);
        let s = score_matrix(n, 3, &vals);
        let fit = exact_search(x.view(), &s, &SearchConfig::exact(depth)).unwrap();
        prop_assert_eq!(fit.total_score, tree_score(&fit.root, x.view(), &s));
        let assigned = assign(&Policy::Tree(fit.root.clone()), x.view(), 0).unwrap();
        let mean = policy_reward(&s, &assigned).unwrap().value;
        prop_assert!((mean * n as f64 - fit.total_score).abs() < 1e-9);
        for a in 0..3 {
            let c = policy_reward(&s, &vec![a; n]).unwrap().value * n as f64;
            prop_assert!(fit.total_score >= c - 1e-9);
        }
    }

    #[test]
    fn deeper_search_never_scores_less(
        n in 2usize..30,
        xs in prop::collection::vec(0u8..6, 60),
        vals in prop::collection::vec(-8i32..8, 1..40),
    ) {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| xs[(2 * i + j) % xs.len()] as f64);
        let s = score_matrix(n, 3, &vals);
        let mut last = f64::NEG_INFINITY;
        for depth in 0..4 {
            let v = exact_search(x.view(), &s, &SearchConfig::exact(depth)).unwrap().total_score;
            prop_assert!(v >= last);
            last = v;
        }
    }
}
