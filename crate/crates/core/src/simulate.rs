//! Synthetic serve data drawn from the model with known parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{AggregatedPoint, Court, Dataset, N_BUCKETS};
use crate::error::{Error, Result};
use crate::model::{self, decompose_coeffs, HyperParams, ModelConfig, Params, ServerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_players: usize,
    pub n_points: usize,
    /// Curve shared by every server before per-server jitter.
    pub base_coeffs: Vec<f64>,
    /// Standard deviation of the per-server shift of each free coefficient.
    pub free_sd: f64,
    /// Standard deviation of the decrements. Every decrement is drawn from one
    /// mean-variance Gamma whose mean is the average decrement of `base_coeffs`.
    pub eps_sd: f64,
    /// Abilities are evenly spaced on `[-alpha_spread, alpha_spread]`.
    pub alpha_spread: f64,
    /// Standard deviation of the per-court deviation when the model has a court effect.
    pub court_sd: f64,
    /// Bucket `x` is drawn with weight `bucket_decay^(x - 1)`.
    pub bucket_decay: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_players: 20,
            n_points: 50_000,
            // rises over the first buckets, then decreases from the third knot on
            base_coeffs: vec![0.3, 1.4, 1.1, 0.8, 0.5, 0.3, 0.15, 0.05, 0.0],
            free_sd: 0.15,
            eps_sd: 0.06,
            alpha_spread: 0.5,
            court_sd: 0.2,
            bucket_decay: 0.8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// True per-server coefficients and abilities; hypers hold prior means.
    pub truth: Params,
}

impl Synthetic {
    /// True coefficient vector of a server slot.
    pub fn coeffs(&self, slot: usize) -> Vec<f64> {
        self.truth.servers[slot].coeffs()
    }
}

/// Every player serves; receivers are drawn uniformly among the others.
pub fn simulate(config: &ModelConfig, sim: &SyntheticConfig) -> Result<Synthetic> {
    if sim.n_players < 2 {
        return Err(Error::InvalidParameter("need at least two players".into()));
    }
    if sim.base_coeffs.len() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            got: sim.base_coeffs.len(),
        });
    }
    let nf = config.n_free();
    let (base_free, base_eps) = decompose_coeffs(&sim.base_coeffs, nf);
    if base_eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter(
            "base coefficients must strictly decrease over the constrained range".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let jitter = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()));
    let free_jit = jitter(sim.free_sd)?;
    let eps_mean = base_eps.iter().sum::<f64>() / base_eps.len().max(1) as f64;
    let eps_dist = if base_eps.is_empty() {
        None
    } else {
        let (shape, rate) = model::gamma_mean_var(eps_mean, sim.eps_sd * sim.eps_sd)?;
        Some(Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    };
    let court_jit = jitter(sim.court_sd)?;

    let n = sim.n_players;
    let players: Vec<String> = (0..n).map(|j| format!("P{j:03}")).collect();
    let servers = (0..n)
        .map(|_| ServerParams {
            free_beta: base_free.iter().map(|b| b + free_jit.sample(&mut rng)).collect(),
            eps: match &eps_dist {
                Some(g) => (0..base_eps.len())
                    .map(|_| g.sample(&mut rng).max(f64::MIN_POSITIVE))
                    .collect(),
                None => Vec::new(),
            },
        })
        .collect::<Vec<_>>();
    let mut base_alpha: Vec<f64> = (0..n)
        .map(|j| sim.alpha_spread * (2.0 * j as f64 / (n - 1) as f64 - 1.0))
        .collect();
    base_alpha.shuffle(&mut rng);
    let mut alpha: Vec<f64> = if config.court_effect {
        base_alpha
            .iter()
            .flat_map(|&a| [0; 3].map(|_| a + court_jit.sample(&mut rng)))
            .collect()
    } else {
        base_alpha
    };
    let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
    alpha.iter_mut().for_each(|a| *a -= mean);
    model::apply_sum_to_zero(&mut alpha)?;

    let truth = Params {
        servers,
        alpha,
        hyper: HyperParams::prior_means(nf),
    };
    let coeffs: Vec<Vec<f64>> = truth.servers.iter().map(ServerParams::coeffs).collect();
    let basis = config.bucket_basis();
    let m = config.dim();
    let curve = |slot: usize, x: usize| -> f64 {
        basis[(x - 1) * m..x * m].iter().zip(&coeffs[slot]).map(|(b, c)| b * c).sum()
    };
    let buckets = WeightedIndex::new((0..N_BUCKETS).map(|i| sim.bucket_decay.powi(i as i32)))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let points = (0..sim.n_points)
        .map(|_| {
            let server = rng.random_range(0..n);
            let mut receiver = rng.random_range(0..n - 1);
            if receiver >= server {
                receiver += 1;
            }
            let x = buckets.sample(&mut rng) + 1;
            let court = Court::ALL[rng.random_range(0..3)];
            let (ai, aj) = if config.court_effect {
                (truth.alpha[3 * server + court.index()], truth.alpha[3 * receiver + court.index()])
            } else {
                (truth.alpha[server], truth.alpha[receiver])
            };
            let p = model::sigmoid(curve(server, x) + ai - aj);
            AggregatedPoint {
                server,
                receiver,
                x: x as u8,
                y: rng.random::<f64>() < p,
                court,
            }
        })
        .collect();
    let dataset = Dataset::from_parts(players, (0..n).collect(), points)?;
    Ok(Synthetic { dataset, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::splines::SplineSpec;

    #[test]
    fn shapes_and_constraints() {
        let config = ModelConfig::tennis_default();
        let sim = SyntheticConfig {
            n_points: 3000,
            ..SyntheticConfig::default()
        };
        let s = simulate(&config, &sim).unwrap();
        assert_eq!(s.dataset.points().len(), 3000);
        assert_eq!(s.dataset.n_servers(), 20);
        assert!(s.truth.alpha.iter().sum::<f64>().abs() < 1e-12);
        for slot in 0..20 {
            assert!(config.spline.is_nonincreasing_on(&s.coeffs(slot)).unwrap());
        }
        assert!(s.dataset.points().iter().all(|p| p.server != p.receiver));
        let again = simulate(&config, &sim).unwrap();
        assert_eq!(again.dataset.content_hash(), s.dataset.content_hash());

        let full = ModelConfig::new(SplineSpec::tennis_default(), Variant::Full, false);
        assert!(simulate(&full, &sim).is_err());
    }
}
