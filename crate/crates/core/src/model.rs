//! Parameter containers and the reference evaluation of the model:
//! logit of the serve-win probability, Bernoulli log-likelihood and the
//! hierarchical log-prior.
//!
//! ```text
//! logit p_ij(x) = f_i(x) + (alpha_i - alpha_j)      (or alpha_{i,c} - alpha_{j,c})
//! f_i(s)        = sum_m beta_im b_m(s)
//! beta_im       = beta_i(m-1) - eps_im               for constrained m
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Court, Dataset, N_BUCKETS};
use crate::error::{Error, Result};
use crate::splines::SplineSpec;

/// Variance of the N(0, 100) top-level priors on `beta0` and `alpha0`.
pub const TOP_VARIANCE: f64 = 100.0;
/// Shape and rate of the Gamma priors on the top-level precisions.
pub const TOP_PREC_SHAPE: f64 = 0.1;
pub const TOP_PREC_RATE: f64 = 0.1;
/// Upper end of the uniform priors on the Gamma mean/variance parameters.
pub const UNIFORM_UPPER: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Where the order constraint on the spline coefficients starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every coefficient free.
    Unconstrained,
    /// Non-increasing from the spline's `l0` onward.
    Partial,
    /// Non-increasing over the whole domain.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Unconstrained, Variant::Partial, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unconstrained => "unconstrained",
            Variant::Partial => "partial",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Variant::Unconstrained),
            "partial" => Ok(Variant::Partial),
            "full" => Ok(Variant::Full),
            other => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spline: SplineSpec,
    pub court_effect: bool,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(spline: SplineSpec, variant: Variant, court_effect: bool) -> Self {
        ModelConfig {
            spline,
            court_effect,
            variant,
        }
    }

    /// Default knots, partial constraint from 3, no court effect.
    pub fn tennis_default() -> Self {
        ModelConfig::new(SplineSpec::tennis_default(), Variant::Partial, false)
    }

    pub fn dim(&self) -> usize {
        self.spline.dim()
    }

    /// Number of free (normally distributed) coefficients per server.
    pub fn n_free(&self) -> usize {
        match self.variant {
            Variant::Unconstrained => self.spline.dim(),
            Variant::Partial => self.spline.first_constrained_index(),
            Variant::Full => 1,
        }
    }

    /// Number of positive decrements per server.
    pub fn n_eps(&self) -> usize {
        self.dim() - self.n_free()
    }

    /// Length of the rally-ability vector for `n_players` players.
    pub fn n_alpha(&self, n_players: usize) -> usize {
        if self.court_effect {
            3 * n_players
        } else {
            n_players
        }
    }

    pub fn alpha_index(&self, player: usize, court: Option<Court>) -> Result<usize> {
        match (self.court_effect, court) {
            (false, _) => Ok(player),
            (true, Some(c)) => Ok(3 * player + c.index()),
            (true, None) => Err(Error::InvalidParameter(
                "court required when the court effect is enabled".into(),
            )),
        }
    }

    /// `b_m(x)` for every bucket `x = 1..=15`, flattened row-major as
    /// `[(x - 1) * M + m]`. Buckets outside the spline domain are clamped.
    pub fn bucket_basis(&self) -> Vec<f64> {
        (1..=N_BUCKETS)
            .flat_map(|x| {
                self.spline
                    .basis_all((x as f64).clamp(self.spline.lower(), self.spline.upper()))
                    .expect("clamped into the domain")
            })
            .collect()
    }
}

/// Population-level parameters. Precisions are stored rather than variances:
/// `tau2[m] = 1 / sigma^2_{beta_m}`, `prec_beta0 = 1 / sigma^2_{beta0}`,
/// `prec_alpha = 1 / sigma^2_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub beta_mean: Vec<f64>,
    pub tau2: Vec<f64>,
    pub beta0: f64,
    pub prec_beta0: f64,
    pub r_tau: f64,
    pub s_tau: f64,
    pub r_eps: f64,
    pub s_eps: f64,
    pub alpha0: f64,
    pub prec_alpha: f64,
}

impl HyperParams {
    /// Prior means, with the uniform parameters at the middle of their range.
    pub fn prior_means(n_free: usize) -> Self {
        HyperParams {
            beta_mean: vec![0.0; n_free],
            tau2: vec![1.0; n_free],
            beta0: 0.0,
            prec_beta0: TOP_PREC_SHAPE / TOP_PREC_RATE,
            r_tau: 5.0,
            s_tau: 5.0,
            r_eps: 5.0,
            s_eps: 5.0,
            alpha0: 0.0,
            prec_alpha: TOP_PREC_SHAPE / TOP_PREC_RATE,
        }
    }
}

/// Free coefficients and decrements of one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerParams {
    pub free_beta: Vec<f64>,
    pub eps: Vec<f64>,
}

impl ServerParams {
    pub fn coeffs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.free_beta.len() + self.eps.len()];
        fill_coeffs(&self.free_beta, &self.eps, &mut out);
        out
    }
}

/// Full parameter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Indexed by server slot.
    pub servers: Vec<ServerParams>,
    /// Per player (`court_effect = false`) or per player and court at
    /// `3 * player + court.index()`; the last entry is derived.
    pub alpha: Vec<f64>,
    pub hyper: HyperParams,
}

impl Params {
    /// Flat parameter vector: per-server `[free_beta, eps]`, all alphas,
    /// then the hyperparameters.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for s in &self.servers {
            v.extend_from_slice(&s.free_beta);
            v.extend_from_slice(&s.eps);
        }
        v.extend_from_slice(&self.alpha);
        let h = &self.hyper;
        v.extend_from_slice(&h.beta_mean);
        v.extend_from_slice(&h.tau2);
        v.extend_from_slice(&[
            h.beta0,
            h.prec_beta0,
            h.r_tau,
            h.s_tau,
            h.r_eps,
            h.s_eps,
            h.alpha0,
            h.prec_alpha,
        ]);
        v
    }

    pub fn from_slice(
        config: &ModelConfig,
        n_servers: usize,
        n_players: usize,
        v: &[f64],
    ) -> Result<Params> {
        let (nf, ne) = (config.n_free(), config.n_eps());
        let na = config.n_alpha(n_players);
        let expected = n_servers * (nf + ne) + na + 2 * nf + 8;
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: v.len(),
            });
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let servers = (0..n_servers)
            .map(|_| ServerParams {
                free_beta: take(nf),
                eps: take(ne),
            })
            .collect();
        let alpha = take(na);
        let beta_mean = take(nf);
        let tau2 = take(nf);
        let t = take(8);
        Ok(Params {
            servers,
            alpha,
            hyper: HyperParams {
                beta_mean,
                tau2,
                beta0: t[0],
                prec_beta0: t[1],
                r_tau: t[2],
                s_tau: t[3],
                r_eps: t[4],
                s_eps: t[5],
                alpha0: t[6],
                prec_alpha: t[7],
            },
        })
    }

    /// Names matching [`Params::to_vec`]: `beta[i,m]`, `eps[i,m]`,
    /// `alpha[j]` or `alpha[j,c]`, `beta_mean[m]`, `tau2[m]`, then scalars.
    /// `i` is the server slot, `j` the player index, `m` the 1-based
    /// coefficient index and `c` the court code.
    pub fn names(config: &ModelConfig, n_servers: usize, n_players: usize) -> Vec<String> {
        let (nf, ne) = (config.n_free(), config.n_eps());
        let mut names = Vec::new();
        for i in 0..n_servers {
            names.extend((0..nf).map(|m| format!("beta[{i},{}]", m + 1)));
            names.extend((0..ne).map(|m| format!("eps[{i},{}]", nf + m + 1)));
        }
        for j in 0..n_players {
            if config.court_effect {
                names.extend(Court::ALL.iter().map(|c| format!("alpha[{j},{}]", c.code())));
            } else {
                names.push(format!("alpha[{j}]"));
            }
        }
        names.extend((0..nf).map(|m| format!("beta_mean[{}]", m + 1)));
        names.extend((0..nf).map(|m| format!("tau2[{}]", m + 1)));
        names.extend(
            [
                "beta0",
                "prec_beta0",
                "r_tau",
                "s_tau",
                "r_eps",
                "s_eps",
                "alpha0",
                "prec_alpha",
            ]
            .map(String::from),
        );
        names
    }

    /// Flat JSON object `{name: value}`; floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_json(&self, config: &ModelConfig, n_players: usize) -> Result<String> {
        let names = Params::names(config, self.servers.len(), n_players);
        let map: serde_json::Map<String, serde_json::Value> = names
            .into_iter()
            .zip(self.to_vec())
            .map(|(n, v)| (n, serde_json::Value::from(v)))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(
        config: &ModelConfig,
        n_servers: usize,
        n_players: usize,
        json: &str,
    ) -> Result<Params> {
        let map: BTreeMap<String, f64> = serde_json::from_str(json)?;
        let names = Params::names(config, n_servers, n_players);
        let v = names
            .iter()
            .map(|n| {
                map.get(n)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("missing parameter `{n}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Params::from_slice(config, n_servers, n_players, &v)
    }

    pub fn alpha_of(&self, config: &ModelConfig, player: usize, court: Option<Court>) -> Result<f64> {
        let i = config.alpha_index(player, court)?;
        self.alpha
            .get(i)
            .copied()
            .ok_or_else(|| Error::UnknownPlayer(format!("player index {player}")))
    }
}

pub(crate) fn fill_coeffs(free: &[f64], eps: &[f64], out: &mut [f64]) {
    let nf = free.len();
    out[..nf].copy_from_slice(free);
    for (m, e) in eps.iter().enumerate() {
        out[nf + m] = out[nf + m - 1] - e;
    }
}

/// `beta_m = free_m` for the free block, then `beta_m = beta_{m-1} - eps_m`.
pub fn reconstruct_coeffs(free_beta: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if free_beta.is_empty() {
        return Err(Error::InvalidParameter("at least one free coefficient is required".into()));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidParameter(format!("decrement {e} is not positive")));
    }
    let mut out = vec![0.0; free_beta.len() + eps.len()];
    fill_coeffs(free_beta, eps, &mut out);
    Ok(out)
}

/// Inverse of [`reconstruct_coeffs`]: split at `n_free` and difference the tail.
pub fn decompose_coeffs(coeffs: &[f64], n_free: usize) -> (Vec<f64>, Vec<f64>) {
    let free = coeffs[..n_free].to_vec();
    let eps = (n_free..coeffs.len())
        .map(|m| coeffs[m - 1] - coeffs[m])
        .collect();
    (free, eps)
}

/// Gamma `(shape, rate)` with the given mean and variance.
pub fn gamma_mean_var(mean: f64, variance: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma mean {mean} and variance {variance} must be positive"
        )));
    }
    Ok((mean * mean / variance, mean / variance))
}

/// Sets the last entry to minus the sum of the others.
pub fn apply_sum_to_zero(alpha: &mut [f64]) -> Result<()> {
    let n = alpha.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "sum-to-zero needs at least two entries".into(),
        ));
    }
    alpha[n - 1] = -alpha[..n - 1].iter().sum::<f64>();
    Ok(())
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log sigma(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood of `y` given the logit.
#[inline]
pub fn bernoulli_logpmf(y: bool, logit: f64) -> f64 {
    if y {
        log_sigmoid(logit)
    } else {
        log_sigmoid(-logit)
    }
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * d * d
}

/// Gamma log-density in the shape/rate parametrization; `-inf` off support.
#[inline]
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Gamma log-density with the given mean and variance.
#[inline]
pub fn gamma_mv_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    match gamma_mean_var(mean, variance) {
        Ok((a, b)) => gamma_logpdf(x, a, b),
        Err(_) => f64::NEG_INFINITY,
    }
}

#[inline]
pub fn uniform_logpdf(x: f64) -> f64 {
    if x > 0.0 && x < UNIFORM_UPPER {
        -UNIFORM_UPPER.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn check_shapes(config: &ModelConfig, dataset: &Dataset, params: &Params) -> Result<()> {
    if params.servers.len() != dataset.n_servers() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_servers(),
            got: params.servers.len(),
        });
    }
    let na = config.n_alpha(dataset.n_players());
    if params.alpha.len() != na {
        return Err(Error::DimensionMismatch {
            expected: na,
            got: params.alpha.len(),
        });
    }
    for s in &params.servers {
        if s.free_beta.len() != config.n_free() || s.eps.len() != config.n_eps() {
            return Err(Error::DimensionMismatch {
                expected: config.dim(),
                got: s.free_beta.len() + s.eps.len(),
            });
        }
    }
    Ok(())
}

/// `f_i(x) + alpha_server - alpha_receiver` for one server's parameters.
pub fn logit_p(
    config: &ModelConfig,
    params: &Params,
    dataset: &Dataset,
    server: usize,
    receiver: usize,
    x: u8,
    court: Option<Court>,
) -> Result<f64> {
    let slot = dataset
        .server_slot(server)
        .ok_or_else(|| Error::UnknownPlayer(format!("player index {server} does not serve")))?;
    let sp = params
        .servers
        .get(slot)
        .ok_or_else(|| Error::UnknownPlayer(format!("server slot {slot}")))?;
    let coeffs = sp.coeffs();
    let f = config.spline.spline_eval(&coeffs, x as f64)?;
    let ai = params.alpha_of(config, server, court)?;
    let aj = params.alpha_of(config, receiver, court)?;
    Ok(f + ai - aj)
}

/// Per-point log-likelihoods, in dataset order.
pub fn pointwise_log_likelihood(
    config: &ModelConfig,
    dataset: &Dataset,
    params: &Params,
) -> Result<Vec<f64>> {
    check_shapes(config, dataset, params)?;
    let coeffs: Vec<Vec<f64>> = params.servers.iter().map(ServerParams::coeffs).collect();
    dataset
        .points()
        .iter()
        .map(|p| {
            let slot = dataset.server_slot(p.server).expect("validated dataset");
            let f = config.spline.spline_eval(&coeffs[slot], p.x as f64)?;
            let court = config.court_effect.then_some(p.court);
            let eta = f + params.alpha_of(config, p.server, court)?
                - params.alpha_of(config, p.receiver, court)?;
            Ok(bernoulli_logpmf(p.y, eta))
        })
        .collect()
}

pub fn log_likelihood(config: &ModelConfig, dataset: &Dataset, params: &Params) -> Result<f64> {
    Ok(pointwise_log_likelihood(config, dataset, params)?.iter().sum())
}

/// Joint log-prior density; `-inf` outside the support.
pub fn log_prior(config: &ModelConfig, params: &Params) -> f64 {
    let h = &params.hyper;
    let nf = config.n_free();
    if h.beta_mean.len() != nf || h.tau2.len() != nf {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    for s in &params.servers {
        for m in 0..nf {
            lp += normal_logpdf(s.free_beta[m], h.beta_mean[m], h.tau2[m]);
        }
        for &e in &s.eps {
            lp += gamma_mv_logpdf(e, h.r_eps, h.s_eps);
        }
    }
    for m in 0..nf {
        lp += normal_logpdf(h.beta_mean[m], h.beta0, h.prec_beta0);
        lp += gamma_mv_logpdf(h.tau2[m], h.r_tau, h.s_tau);
    }
    lp += normal_logpdf(h.beta0, 0.0, 1.0 / TOP_VARIANCE);
    lp += gamma_logpdf(h.prec_beta0, TOP_PREC_SHAPE, TOP_PREC_RATE);
    lp += uniform_logpdf(h.r_tau) + uniform_logpdf(h.s_tau);
    lp += uniform_logpdf(h.r_eps) + uniform_logpdf(h.s_eps);
    if let Some((_, free)) = params.alpha.split_last() {
        for &a in free {
            lp += normal_logpdf(a, h.alpha0, h.prec_alpha);
        }
    }
    lp += normal_logpdf(h.alpha0, 0.0, 1.0 / TOP_VARIANCE);
    lp += gamma_logpdf(h.prec_alpha, TOP_PREC_SHAPE, TOP_PREC_RATE);
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}
