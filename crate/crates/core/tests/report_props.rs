//! Invariants of the posterior summaries on hand-built draws.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use servecurve::model::{apply_sum_to_zero, sigmoid, HyperParams, ServerParams};
use servecurve::posterior::ChainDraws;
use servecurve::report::{
    curve_summary, default_grid, predict_new_server, rank_rally_ability, serve_advantage, Interval,
};
use servecurve::{ChainConfig, Court, Dataset, ModelConfig, Params, PosteriorDraws, SplineSpec, Variant};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("P{j}")).collect()
}

fn draws_of(config: &ModelConfig, n_players: usize, states: &[Params]) -> PosteriorDraws {
    PosteriorDraws {
        model: config.clone(),
        chain: ChainConfig::default(),
        players: names(n_players),
        servers: (0..states[0].servers.len()).collect(),
        dataset_hash: "test".into(),
        chains: vec![ChainDraws {
            seed: 0,
            draws: states.iter().map(Params::to_vec).collect(),
            acceptance: BTreeMap::new(),
        }],
    }
}

fn state(config: &ModelConfig, free: Vec<f64>, eps: Vec<f64>, alpha: Vec<f64>) -> Params {
    let mut h = HyperParams::prior_means(config.n_free());
    h.r_eps = 1.0;
    h.s_eps = 1.0;
    Params {
        servers: vec![ServerParams { free_beta: free, eps }],
        alpha,
        hyper: h,
    }
}

fn sum_to_zero(mut a: Vec<f64>) -> Vec<f64> {
    apply_sum_to_zero(&mut a).unwrap();
    a
}

fn partial() -> ModelConfig {
    ModelConfig::new(SplineSpec::tennis_default(), Variant::Partial, false)
}

prop_compose! {
    fn partial_state()(
        free in prop::collection::vec(-2.0f64..2.0, 3),
        eps in prop::collection::vec(0.01f64..1.0, 6),
        alpha in prop::collection::vec(-1.0f64..1.0, 3),
    ) -> Params {
        state(&partial(), free, eps, sum_to_zero(alpha))
    }
}

proptest! {
    #[test]
    fn band_brackets_mean(states in prop::collection::vec(partial_state(), 1..12)) {
        let config = partial();
        let d = draws_of(&config, 3, &states);
        let grid = default_grid(&d, 0.5);
        let c = curve_summary(&d, "P0", &grid, None).unwrap();
        for k in 0..grid.len() {
            prop_assert!(c.lower[k] <= c.mean[k] && c.mean[k] <= c.upper[k]);
            prop_assert!(c.lower[k] > 0.0 && c.upper[k] < 1.0);
        }
    }

    #[test]
    fn single_draw_band_is_degenerate(s in partial_state()) {
        let config = partial();
        let d = draws_of(&config, 3, &[s.clone()]);
        let grid = default_grid(&d, 1.0);
        let c = curve_summary(&d, "P0", &grid, None).unwrap();
        let gap = s.alpha[0] - (s.alpha[1] + s.alpha[2]) / 2.0;
        let coeffs = s.servers[0].coeffs();
        for (k, &x) in grid.iter().enumerate() {
            let want = sigmoid(config.spline.spline_eval(&coeffs, x).unwrap() + gap);
            prop_assert!((c.mean[k] - want).abs() < 1e-12);
            prop_assert_eq!(c.lower[k], c.mean[k]);
            prop_assert_eq!(c.upper[k], c.mean[k]);
        }
    }

    #[test]
    fn curves_and_ranks_ignore_common_ability_shift(
        states in prop::collection::vec(partial_state(), 2..8),
        shift in -3.0f64..3.0,
    ) {
        let config = partial();
        let d = draws_of(&config, 3, &states);
        let shifted: Vec<Params> = states
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.alpha.iter_mut().for_each(|a| *a += shift);
                s
            })
            .collect();
        let ds = draws_of(&config, 3, &shifted);
        let grid = default_grid(&d, 1.0);
        let a = curve_summary(&d, "P0", &grid, None).unwrap();
        let b = curve_summary(&ds, "P0", &grid, None).unwrap();
        for k in 0..grid.len() {
            prop_assert!((a.mean[k] - b.mean[k]).abs() < 1e-9);
        }
        let ra: Vec<String> = rank_rally_ability(&d, None).unwrap().into_iter().map(|r| r.player).collect();
        let rb: Vec<String> = rank_rally_ability(&ds, None).unwrap().into_iter().map(|r| r.player).collect();
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn full_curve_peaks_at_shortest_rally(
        b in -2.0f64..2.0,
        eps in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let config = ModelConfig::new(SplineSpec::tennis_default(), Variant::Full, false);
        let s = state(&config, vec![b], eps, vec![0.0, 0.0]);
        let d = draws_of(&config, 2, &[s]);
        let grid = default_grid(&d, 0.25);
        let c = curve_summary(&d, "P0", &grid, None).unwrap();
        for v in &c.mean {
            prop_assert!(*v <= c.mean[0] + 1e-12);
        }
        prop_assert!(serve_advantage(&d, "P0").unwrap().median >= -1e-12);
    }
}

#[test]
fn equal_abilities_give_the_bare_curve() {
    let config = partial();
    let s = state(&config, vec![0.2, 1.0, 0.7], vec![0.1; 6], vec![0.0; 3]);
    let d = draws_of(&config, 3, &[s.clone(), s.clone()]);
    let c = curve_summary(&d, "P0", &[1.0, 4.0, 15.0], None).unwrap();
    let coeffs = s.servers[0].coeffs();
    for (k, x) in [1.0, 4.0, 15.0].into_iter().enumerate() {
        let want = sigmoid(config.spline.spline_eval(&coeffs, x).unwrap());
        assert!((c.mean[k] - want).abs() < 1e-12);
    }
    let adv = serve_advantage(&d, "P0").unwrap();
    assert!((adv.median - (coeffs[0] - coeffs[8])).abs() < 1e-12);
}

#[test]
fn ranking_breaks_ties_by_name() {
    let config = partial();
    let mut s = state(&config, vec![0.0; 3], vec![0.1; 6], vec![0.5, -1.0, 0.5]);
    s.alpha = vec![0.5, -1.0, 0.5];
    let d = draws_of(&config, 3, &[s]);
    let rows = rank_rally_ability(&d, None).unwrap();
    let order: Vec<(&str, usize)> = rows.iter().map(|r| (r.player.as_str(), r.rank)).collect();
    assert_eq!(order, [("P0", 1), ("P2", 2), ("P1", 3)]);
    assert!(rank_rally_ability(&d, Some(Court::Clay)).is_err());
}

#[test]
fn court_gap_uses_the_requested_court() {
    let config = ModelConfig::new(SplineSpec::tennis_default(), Variant::Partial, true);
    // player 0 strong on grass only
    let alpha = sum_to_zero(vec![0.0, 1.0, 0.0, 0.0, -0.5, 0.0]);
    let s = state(&config, vec![0.0; 3], vec![0.1; 6], alpha);
    let d = draws_of(&config, 2, &[s]);
    let grass = curve_summary(&d, "P0", &[5.0], Some(Court::Grass)).unwrap().mean[0];
    let clay = curve_summary(&d, "P0", &[5.0], Some(Court::Clay)).unwrap().mean[0];
    let avg = curve_summary(&d, "P0", &[5.0], None).unwrap().mean[0];
    assert!(grass > avg && avg > clay);
    let rank = rank_rally_ability(&d, Some(Court::Grass)).unwrap();
    assert_eq!(rank[0].player, "P0");
}

#[test]
fn predicted_curve_concentrates_on_population_mean() {
    let config = partial();
    let mut s = state(&config, vec![0.0; 3], vec![0.1; 6], vec![0.3, -0.3]);
    let h = &mut s.hyper;
    h.beta_mean = vec![0.4, 1.2, 0.9];
    h.tau2 = vec![1e10; 3];
    h.r_eps = 0.2;
    h.s_eps = 1e-12;
    h.alpha0 = 0.25;
    h.prec_alpha = 1e12;
    let d = draws_of(&config, 2, &[s.clone(), s]);
    let test = Dataset::from_parts(vec!["P0".into(), "Q".into()], vec![0, 1], vec![]).unwrap();
    let grid = [1.0, 3.0, 8.0, 15.0];
    let out = predict_new_server(&d, &test, &grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(out.len(), 2);
    let mut coeffs = vec![0.4, 1.2, 0.9];
    for k in 0..6 {
        coeffs.push(coeffs[2 + k] - 0.2);
    }
    for c in &out {
        let gap = if c.player == "P0" { 0.6 } else { 0.25 };
        for (k, &x) in grid.iter().enumerate() {
            let want = sigmoid(config.spline.spline_eval(&coeffs, x).unwrap() + gap);
            assert!((c.mean[k] - want).abs() < 1e-4, "{} at {x}: {} vs {want}", c.player, c.mean[k]);
        }
    }

    let empty = Dataset::from_parts(vec!["Q".into()], vec![], vec![]).unwrap();
    assert!(predict_new_server(&d, &empty, &grid, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .is_empty());
}

#[test]
fn interval_quantiles() {
    let iv = Interval::from_samples((0..=100).map(f64::from).collect());
    assert_eq!((iv.lower, iv.median, iv.upper), (2.5, 50.0, 97.5));
    assert!(iv.excludes_zero());
}
