//! Shared fixtures for the benchmarks.

use servecurve::simulate::{simulate, SyntheticConfig};
use servecurve::{ChainConfig, Dataset, ModelConfig, PosteriorDraws};

/// Synthetic data from the default partial model.
pub fn synthetic(n_players: usize, n_points: usize) -> (ModelConfig, Dataset) {
    let model = ModelConfig::tennis_default();
    let sim = simulate(
        &model,
        &SyntheticConfig {
            n_players,
            n_points,
            ..SyntheticConfig::default()
        },
    )
    .expect("default synthetic configuration is valid");
    (model, sim.dataset)
}

/// A short fit, enough to exercise the criteria code.
pub fn short_fit(model: &ModelConfig, dataset: &Dataset, draws: usize) -> PosteriorDraws {
    let cfg = ChainConfig {
        n_iter: 200 + draws,
        burn_in: 200,
        thin: 1,
        adapt_window: 200,
        ..ChainConfig::default()
    };
    servecurve::run_chain(&cfg, dataset, model).expect("synthetic fit")
}
