//! Sampler conditionals checked against their analytic forms.

mod common;

use common::{chi_square_pvalue, ks_pvalue, mean, var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use servecurve::model::{self, HyperParams, ServerParams};
use servecurve::sampler::{init_state, update_conjugate_hypers, Block, BlockKind, Chain};
use servecurve::simulate::{simulate, SyntheticConfig};
use servecurve::{run_chain, CellTable, ChainConfig, Dataset, ModelConfig, Params};
use statrs::distribution::{ContinuousCDF, Normal};

fn fixed_state() -> (ModelConfig, Params) {
    let config = ModelConfig::tennis_default();
    let servers = (0..5)
        .map(|i| ServerParams {
            free_beta: vec![0.2 * i as f64, 1.0 - 0.1 * i as f64, 0.5],
            eps: vec![0.3; 6],
        })
        .collect();
    let mut hyper = HyperParams::prior_means(3);
    hyper.tau2 = vec![2.0, 0.5, 8.0];
    hyper.prec_beta0 = 1.5;
    hyper.prec_alpha = 3.0;
    let mut alpha = vec![0.4, -0.1, 0.25, 0.0];
    model::apply_sum_to_zero(&mut alpha).unwrap();
    (config, Params { servers, alpha, hyper })
}

#[test]
fn collapsed_beta0_matches_analytic_conditional() {
    let (config, state) = fixed_state();
    let h = &state.hyper;
    let ns = 5.0;
    let (mut sw, mut swy) = (0.0, 0.0);
    for m in 0..3 {
        let ybar: f64 = state.servers.iter().map(|s| s.free_beta[m]).sum::<f64>() / ns;
        let w = 1.0 / (1.0 / h.prec_beta0 + 1.0 / (ns * h.tau2[m]));
        sw += w;
        swy += w * ybar;
    }
    let prec = 0.01 + sw;
    let oracle = Normal::new(swy / prec, 1.0 / prec.sqrt()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            let mut p = state.clone();
            update_conjugate_hypers(&config, &mut p, &mut rng);
            p.hyper.beta0
        })
        .collect();
    let p = chi_square_pvalue(&draws, |x| oracle.cdf(x), 20);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn alpha0_matches_analytic_conditional() {
    let (config, state) = fixed_state();
    let free = &state.alpha[..3];
    let prec = 0.01 + 3.0 * state.hyper.prec_alpha;
    let oracle = Normal::new(state.hyper.prec_alpha * free.iter().sum::<f64>() / prec, 1.0 / prec.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            let mut p = state.clone();
            update_conjugate_hypers(&config, &mut p, &mut rng);
            p.hyper.alpha0
        })
        .collect();
    let p = chi_square_pvalue(&draws, |x| oracle.cdf(x), 20);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn single_server_beta_mean_is_precision_weighted() {
    // one server: beta_m | beta0 ~ N((t0 beta0 + t b) / (t0 + t), 1 / (t0 + t))
    let config = ModelConfig::tennis_default();
    let mut state = init_state(&config, 1, 2, &mut ChaCha8Rng::seed_from_u64(3));
    state.servers[0].free_beta = vec![1.5, -0.5, 0.7];
    state.hyper.tau2 = vec![4.0, 1.0, 0.25];
    state.hyper.prec_beta0 = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut resid = vec![Vec::new(); 3];
    for _ in 0..20_000 {
        let mut p = state.clone();
        update_conjugate_hypers(&config, &mut p, &mut rng);
        for m in 0..3 {
            let (t0, t, b) = (2.0, state.hyper.tau2[m], state.servers[0].free_beta[m]);
            let cond_mean = (t0 * p.hyper.beta0 + t * b) / (t0 + t);
            resid[m].push((p.hyper.beta_mean[m] - cond_mean) * (t0 + t).sqrt());
        }
    }
    for r in &resid {
        assert!(mean(r).abs() < 0.03, "mean {}", mean(r));
        assert!((var(r) - 1.0).abs() < 0.04, "var {}", var(r));
    }
}

#[test]
fn alpha_block_recovers_prior_without_data() {
    let config = ModelConfig::tennis_default();
    let players: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    let d = Dataset::from_parts(players, vec![], vec![]).unwrap();
    let cells = CellTable::new(&config, &d);
    let mut chain = Chain::new(&config, &cells, 0, 4, 7, 0.44).unwrap();
    let mut p = chain.params().clone();
    p.hyper.alpha0 = 0.3;
    p.hyper.prec_alpha = 4.0;
    chain.set_params(p);
    let sweep = |chain: &mut Chain| {
        for k in 0..3 {
            chain.update_mh_block(Block::Alpha(k));
        }
    };
    for t in 0..2_000 {
        chain.set_adaptation(Some(t));
        sweep(&mut chain);
    }
    chain.set_adaptation(None);
    let mut draws = Vec::new();
    for t in 0..50_000 {
        sweep(&mut chain);
        if t % 10 == 9 {
            draws.push(chain.params().alpha[1]);
        }
    }
    assert_eq!(draws.len(), 5_000);
    let prior = Normal::new(0.3, 0.5).unwrap();
    let p = ks_pvalue(&draws, |x| prior.cdf(x));
    assert!(p > 0.01, "KS p = {p}");
    let rate = chain.acceptance()[BlockKind::Alpha.name()];
    assert!((0.3..0.6).contains(&rate), "acceptance {rate}");
}

#[test]
fn empty_data_beta0_is_prior() {
    let d = Dataset::from_parts(vec![], vec![], vec![]).unwrap();
    let cfg = ChainConfig {
        n_iter: 6_000,
        burn_in: 1_000,
        thin: 5,
        ..ChainConfig::default()
    };
    let draws = run_chain(&cfg, &d, &ModelConfig::tennis_default()).unwrap();
    let idx = draws.names().iter().position(|n| n == "beta0").unwrap();
    let b0: Vec<f64> = draws.column(idx).concat();
    assert_eq!(b0.len(), 1_000);
    assert!(mean(&b0).abs() < 1.0, "mean {}", mean(&b0));
    assert!((var(&b0) - 100.0).abs() < 20.0, "var {}", var(&b0));
}

#[test]
fn acceptance_rates_after_adaptation() {
    let config = ModelConfig::tennis_default();
    let sim = simulate(
        &config,
        &SyntheticConfig {
            n_points: 20_000,
            seed: 3,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let cfg = ChainConfig {
        n_iter: 1_500,
        burn_in: 500,
        thin: 10,
        adapt_window: 500,
        ..ChainConfig::default()
    };
    let draws = run_chain(&cfg, &sim.dataset, &config).unwrap();
    let acc = draws.acceptance();
    assert_eq!(acc.len(), 5);
    for (block, rate) in acc {
        assert!((0.1..=0.7).contains(&rate), "{block}: {rate}");
    }
}
