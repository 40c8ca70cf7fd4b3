//! Metropolis-within-Gibbs posterior simulation.
//!
//! Each sweep draws the Normal/Gamma hyper-layer exactly, then runs scalar
//! random-walk Metropolis updates in a fixed order: free coefficients per
//! server, log-decrements per server, free rally abilities, and finally the
//! mean/variance parameters of the two Gamma priors on a logit scale.
//!
//! Likelihood terms are cached per cell (see [`CellTable`]) so an update only
//! re-evaluates the cells it touches.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::CellTable;
use crate::data::{Dataset, N_BUCKETS};
use crate::error::{Error, Result};
use crate::model::{
    self, fill_coeffs, gamma_logpdf, gamma_mean_var, log_sigmoid, normal_logpdf, sigmoid,
    HyperParams, ModelConfig, Params, ServerParams, TOP_PREC_RATE, TOP_PREC_SHAPE, TOP_VARIANCE,
    UNIFORM_UPPER,
};
use crate::posterior::{ChainDraws, PosteriorDraws};

const INIT_RETRIES: usize = 100;
const INIT_BETA_SD: f64 = 0.5;
const LOG_STEP_BOUNDS: (f64, f64) = (-15.0, 4.0);
/// Metropolis steps per sweep for each Gamma mean/variance parameter. They
/// only touch the prior layer, so repeating them is cheap.
const MEAN_VAR_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Step sizes adapt during the first `min(adapt_window, burn_in)` sweeps.
    pub adapt_window: usize,
    pub target_accept: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 20_000,
            burn_in: 1_000,
            thin: 20,
            n_chains: 1,
            seed: 1,
            adapt_window: 1_000,
            target_accept: 0.44,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.n_chains == 0 {
            return Err(Error::InvalidParameter("thin and n_chains must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target acceptance {} outside (0, 1)",
                self.target_accept
            )));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn adapt_until(&self) -> usize {
        self.adapt_window.min(self.burn_in)
    }
}

/// One Metropolis update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    FreeBeta { slot: usize, m: usize },
    LogEps { slot: usize, m: usize },
    /// A free rally ability; the last entry is derived.
    Alpha(usize),
    RTau,
    STau,
    REps,
    SEps,
}

/// Groups of blocks sharing an acceptance tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockKind {
    FreeBeta,
    LogEps,
    Alpha,
    TauMeanVar,
    EpsMeanVar,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::FreeBeta,
        BlockKind::LogEps,
        BlockKind::Alpha,
        BlockKind::TauMeanVar,
        BlockKind::EpsMeanVar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::FreeBeta => "free_beta",
            BlockKind::LogEps => "log_eps",
            BlockKind::Alpha => "alpha",
            BlockKind::TauMeanVar => "r_s_tau",
            BlockKind::EpsMeanVar => "r_s_eps",
        }
    }
}

impl Block {
    pub fn kind(self) -> BlockKind {
        match self {
            Block::FreeBeta { .. } => BlockKind::FreeBeta,
            Block::LogEps { .. } => BlockKind::LogEps,
            Block::Alpha(_) => BlockKind::Alpha,
            Block::RTau | Block::STau => BlockKind::TauMeanVar,
            Block::REps | Block::SEps => BlockKind::EpsMeanVar,
        }
    }
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw in shape/rate form, floored so it stays in the support.
fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

/// Starting state: free coefficients from N(0, 0.5^2), decrements from the
/// mean-1 variance-1 Gamma, abilities at zero, hypers at their prior means.
pub fn init_state<R: Rng + ?Sized>(
    config: &ModelConfig,
    n_servers: usize,
    n_players: usize,
    rng: &mut R,
) -> Params {
    let (nf, ne) = (config.n_free(), config.n_eps());
    let mut hyper = HyperParams::prior_means(nf);
    hyper.r_eps = 1.0;
    hyper.s_eps = 1.0;
    let (a, b) = gamma_mean_var(hyper.r_eps, hyper.s_eps).expect("positive");
    let servers = (0..n_servers)
        .map(|_| ServerParams {
            free_beta: (0..nf).map(|_| INIT_BETA_SD * std_normal(rng)).collect(),
            eps: (0..ne).map(|_| gamma_draw(rng, a, b)).collect(),
        })
        .collect();
    Params {
        servers,
        alpha: vec![0.0; config.n_alpha(n_players)],
        hyper,
    }
}

/// Exact Gibbs draws of the Normal/Gamma hyper-layer given the free
/// coefficients, decrements and abilities.
///
/// `beta0` is drawn with the `beta_m` integrated out, then each `beta_m`
/// given `beta0`; this joint move mixes far better than alternating the two
/// when the `tau2` are large.
pub fn update_conjugate_hypers<R: Rng + ?Sized>(config: &ModelConfig, params: &mut Params, rng: &mut R) {
    let nf = config.n_free();
    let ns = params.servers.len() as f64;
    let h = &mut params.hyper;

    let sums: Vec<f64> = (0..nf)
        .map(|m| params.servers.iter().map(|s| s.free_beta[m]).sum())
        .collect();
    let (mut sw, mut swy) = (0.0, 0.0);
    if ns > 0.0 {
        for m in 0..nf {
            let w = 1.0 / (1.0 / h.prec_beta0 + 1.0 / (ns * h.tau2[m]));
            sw += w;
            swy += w * sums[m] / ns;
        }
    }
    let prec = 1.0 / TOP_VARIANCE + sw;
    h.beta0 = swy / prec + std_normal(rng) / prec.sqrt();

    for m in 0..nf {
        let prec = h.prec_beta0 + ns * h.tau2[m];
        let mean = (h.prec_beta0 * h.beta0 + h.tau2[m] * sums[m]) / prec;
        h.beta_mean[m] = mean + std_normal(rng) / prec.sqrt();
    }

    let (a_tau, b_tau) = gamma_mean_var(h.r_tau, h.s_tau).expect("uniform support is positive");
    for m in 0..nf {
        let ss: f64 = params
            .servers
            .iter()
            .map(|s| (s.free_beta[m] - h.beta_mean[m]).powi(2))
            .sum();
        h.tau2[m] = gamma_draw(rng, a_tau + 0.5 * ns, b_tau + 0.5 * ss);
    }

    let ss: f64 = h.beta_mean.iter().map(|b| (b - h.beta0).powi(2)).sum();
    h.prec_beta0 = gamma_draw(rng, TOP_PREC_SHAPE + 0.5 * nf as f64, TOP_PREC_RATE + 0.5 * ss);

    let free = params.alpha.split_last().map_or(&[][..], |(_, f)| f);
    let na = free.len() as f64;
    let prec = 1.0 / TOP_VARIANCE + na * h.prec_alpha;
    h.alpha0 = h.prec_alpha * free.iter().sum::<f64>() / prec + std_normal(rng) / prec.sqrt();
    let ss: f64 = free.iter().map(|a| (a - h.alpha0).powi(2)).sum();
    h.prec_alpha = gamma_draw(rng, TOP_PREC_SHAPE + 0.5 * na, TOP_PREC_RATE + 0.5 * ss);
}

/// Log-density of `n` Gamma variates with the given mean/variance, from
/// their sufficient statistics `sum ln x` and `sum x`.
fn gamma_mv_loglik(n: f64, sum_log: f64, sum: f64, mean: f64, var: f64) -> f64 {
    match gamma_mean_var(mean, var) {
        Ok((a, b)) if n > 0.0 => {
            n * (a * b.ln() - statrs::function::gamma::ln_gamma(a)) + (a - 1.0) * sum_log - b * sum
        }
        Ok(_) => 0.0,
        Err(_) => f64::NEG_INFINITY,
    }
}

fn logit10(x: f64) -> f64 {
    let u = x / UNIFORM_UPPER;
    (u / (1.0 - u)).ln()
}

/// A single chain: parameter state plus likelihood caches and step sizes.
pub struct Chain<'a> {
    config: &'a ModelConfig,
    cells: &'a CellTable,
    basis: Vec<f64>,
    params: Params,
    /// Spline value per server slot and bucket.
    f: Vec<f64>,
    cell_ll: Vec<f64>,
    log_steps: Vec<f64>,
    gain: f64,
    adapting: bool,
    target: f64,
    proposed: [u64; 5],
    accepted: [u64; 5],
    rng: ChaCha8Rng,
    free_buf: Vec<f64>,
    coeff_buf: Vec<f64>,
    f_buf: [f64; N_BUCKETS],
    ll_buf: Vec<f64>,
    touched: Vec<u32>,
}

impl<'a> Chain<'a> {
    /// Draws a starting state with a finite log posterior, retrying up to 100 times.
    pub fn new(
        config: &'a ModelConfig,
        cells: &'a CellTable,
        n_servers: usize,
        n_players: usize,
        seed: u64,
        target_accept: f64,
    ) -> Result<Chain<'a>> {
        if cells.slot_range.len() != n_servers || cells.by_alpha.len() != config.n_alpha(n_players) {
            return Err(Error::DimensionMismatch {
                expected: n_servers,
                got: cells.slot_range.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_state(config, n_servers, n_players, &mut rng);
        let mut chain = Chain {
            config,
            cells,
            basis: config.bucket_basis(),
            params,
            f: vec![0.0; n_servers * N_BUCKETS],
            cell_ll: vec![0.0; cells.len()],
            log_steps: Vec::new(),
            gain: 1.0,
            adapting: false,
            target: target_accept,
            proposed: [0; 5],
            accepted: [0; 5],
            rng,
            free_buf: vec![0.0; config.n_free()],
            coeff_buf: vec![0.0; config.dim()],
            f_buf: [0.0; N_BUCKETS],
            ll_buf: Vec::new(),
            touched: Vec::new(),
        };
        chain.init_steps();
        for attempt in 0..INIT_RETRIES {
            chain.refresh();
            if chain.log_posterior().is_finite() {
                return Ok(chain);
            }
            log::debug!("initial state {attempt} has a non-finite log posterior, redrawing");
            chain.params = init_state(config, n_servers, n_players, &mut chain.rng);
        }
        Err(Error::Sampler(format!(
            "no initial state with a finite log posterior after {INIT_RETRIES} attempts"
        )))
    }

    fn init_steps(&mut self) {
        let ns = self.params.servers.len();
        let (nf, ne) = (self.config.n_free(), self.config.n_eps());
        let na = self.params.alpha.len();
        let mut s = Vec::with_capacity(ns * (nf + ne) + na + 4);
        s.extend(std::iter::repeat_n((0.1f64).ln(), ns * nf));
        s.extend(std::iter::repeat_n((0.5f64).ln(), ns * ne));
        s.extend(std::iter::repeat_n((0.1f64).ln(), na));
        s.extend(std::iter::repeat_n((1.0f64).ln(), 4));
        self.log_steps = s;
    }

    fn step_index(&self, block: Block) -> usize {
        let ns = self.params.servers.len();
        let (nf, ne) = (self.config.n_free(), self.config.n_eps());
        let na = self.params.alpha.len();
        match block {
            Block::FreeBeta { slot, m } => slot * nf + m,
            Block::LogEps { slot, m } => ns * nf + slot * ne + m,
            Block::Alpha(k) => ns * (nf + ne) + k,
            Block::RTau => ns * (nf + ne) + na,
            Block::STau => ns * (nf + ne) + na + 1,
            Block::REps => ns * (nf + ne) + na + 2,
            Block::SEps => ns * (nf + ne) + na + 3,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Replaces the state and rebuilds the caches.
    pub fn set_params(&mut self, params: Params) {
        self.params = params;
        self.refresh();
    }

    /// `Some(t)` adapts step sizes with Robbins-Monro gain `(t + 1)^-0.6`,
    /// `None` freezes them. Acceptances are tallied only while frozen.
    pub fn set_adaptation(&mut self, sweep: Option<usize>) {
        self.adapting = sweep.is_some();
        if let Some(t) = sweep {
            self.gain = ((t + 1) as f64).powf(-0.6);
        }
    }

    /// Cached log-likelihood of the current state.
    pub fn log_likelihood(&self) -> f64 {
        self.cell_ll.iter().sum()
    }

    pub fn log_posterior(&self) -> f64 {
        let lp = model::log_prior(self.config, &self.params);
        let v = self.log_likelihood() + lp;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn eta(&self, cell: usize, alpha: &[f64]) -> f64 {
        let c = self.cells;
        self.f[c.slot[cell] as usize * N_BUCKETS + c.bucket[cell] as usize]
            + alpha[c.server_alpha[cell] as usize]
            - alpha[c.receiver_alpha[cell] as usize]
    }

    /// Recomputes spline values and cell log-likelihoods from the state.
    pub fn refresh(&mut self) {
        let m = self.config.dim();
        for (slot, sp) in self.params.servers.iter().enumerate() {
            fill_coeffs(&sp.free_beta, &sp.eps, &mut self.coeff_buf);
            for b in 0..N_BUCKETS {
                let row = &self.basis[b * m..(b + 1) * m];
                self.f[slot * N_BUCKETS + b] = row.iter().zip(&self.coeff_buf).map(|(x, y)| x * y).sum();
            }
        }
        for c in 0..self.cells.len() {
            let eta = self.eta(c, &self.params.alpha);
            self.cell_ll[c] = self.cells.loglik(c, eta);
        }
    }

    /// Per-block acceptance rates tallied while adaptation was off.
    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        BlockKind::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| self.proposed[*i] > 0)
            .map(|(i, k)| (k.name().to_string(), self.accepted[i] as f64 / self.proposed[i] as f64))
            .collect()
    }

    pub fn update_conjugate_hypers(&mut self) {
        update_conjugate_hypers(self.config, &mut self.params, &mut self.rng);
    }

    /// Spline values for `coeff_buf` into `f_buf`, and the log-likelihood
    /// change over the slot's cells with new values in `ll_buf`.
    fn slot_delta(&mut self, slot: usize) -> f64 {
        let m = self.config.dim();
        for b in 0..N_BUCKETS {
            let row = &self.basis[b * m..(b + 1) * m];
            self.f_buf[b] = row.iter().zip(&self.coeff_buf).map(|(x, y)| x * y).sum();
        }
        let range = self.cells.slot_range[slot].clone();
        self.ll_buf.clear();
        let alpha = &self.params.alpha;
        let c = self.cells;
        let mut delta = 0.0;
        for cell in range {
            let eta = self.f_buf[c.bucket[cell] as usize] + alpha[c.server_alpha[cell] as usize]
                - alpha[c.receiver_alpha[cell] as usize];
            let ll = c.loglik(cell, eta);
            delta += ll - self.cell_ll[cell];
            self.ll_buf.push(ll);
        }
        delta
    }

    fn commit_slot(&mut self, slot: usize) {
        self.f[slot * N_BUCKETS..(slot + 1) * N_BUCKETS].copy_from_slice(&self.f_buf);
        let start = self.cells.slot_range[slot].start;
        self.cell_ll[start..start + self.ll_buf.len()].copy_from_slice(&self.ll_buf);
    }

    /// Metropolis decision plus step-size adaptation and tallies.
    fn decide(&mut self, block: Block, log_ratio: f64) -> bool {
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        let accept = accept_prob >= 1.0 || self.rng.random::<f64>() < accept_prob;
        if self.adapting {
            let i = self.step_index(block);
            let s = self.log_steps[i] + self.gain * (accept_prob - self.target);
            self.log_steps[i] = s.clamp(LOG_STEP_BOUNDS.0, LOG_STEP_BOUNDS.1);
        } else {
            let k = block.kind() as usize;
            self.proposed[k] += 1;
            self.accepted[k] += accept as u64;
        }
        accept
    }

    /// One random-walk Metropolis update; returns whether it was accepted.
    pub fn update_mh_block(&mut self, block: Block) -> bool {
        let step = self.log_steps[self.step_index(block)].exp();
        let z = std_normal(&mut self.rng);
        match block {
            Block::FreeBeta { slot, m } => {
                let sp = &self.params.servers[slot];
                let cur = sp.free_beta[m];
                let prop = cur + step * z;
                let h = &self.params.hyper;
                let dprior = normal_logpdf(prop, h.beta_mean[m], h.tau2[m])
                    - normal_logpdf(cur, h.beta_mean[m], h.tau2[m]);
                self.free_buf.copy_from_slice(&sp.free_beta);
                self.free_buf[m] = prop;
                fill_coeffs(&self.free_buf, &sp.eps, &mut self.coeff_buf);
                let dll = self.slot_delta(slot);
                let ok = self.decide(block, dll + dprior);
                if ok {
                    self.params.servers[slot].free_beta[m] = prop;
                    self.commit_slot(slot);
                }
                ok
            }
            Block::LogEps { slot, m } => {
                let sp = &self.params.servers[slot];
                let cur = sp.eps[m];
                let (u, u_new) = (cur.ln(), cur.ln() + step * z);
                let prop = u_new.exp();
                let h = &self.params.hyper;
                let (a, b) = gamma_mean_var(h.r_eps, h.s_eps).expect("uniform support is positive");
                // density of log eps carries the Jacobian eps
                let dprior = gamma_logpdf(prop, a, b) - gamma_logpdf(cur, a, b) + (u_new - u);
                if !dprior.is_finite() {
                    return self.decide(block, f64::NEG_INFINITY);
                }
                fill_coeffs(&sp.free_beta, &sp.eps, &mut self.coeff_buf);
                // the decrement lowers every later coefficient
                let nf = self.config.n_free();
                for c in &mut self.coeff_buf[nf + m..] {
                    *c -= prop - cur;
                }
                let dll = self.slot_delta(slot);
                let ok = self.decide(block, dll + dprior);
                if ok {
                    self.params.servers[slot].eps[m] = prop;
                    self.commit_slot(slot);
                }
                ok
            }
            Block::Alpha(k) => self.update_alpha(k, step * z),
            Block::RTau | Block::STau | Block::REps | Block::SEps => self.update_mean_var(block, step * z),
        }
    }

    fn update_alpha(&mut self, k: usize, jump: f64) -> bool {
        let block = Block::Alpha(k);
        let na = self.params.alpha.len();
        let last = na - 1;
        debug_assert!(k < last);
        let cur = self.params.alpha[k];
        let prop = cur + jump;
        let h = &self.params.hyper;
        let dprior = normal_logpdf(prop, h.alpha0, h.prec_alpha) - normal_logpdf(cur, h.alpha0, h.prec_alpha);
        let free_sum: f64 = self.params.alpha[..last].iter().sum::<f64>() - cur + prop;
        let new_last = -free_sum;

        let c = self.cells;
        self.touched.clear();
        self.touched.extend_from_slice(&c.by_alpha[k]);
        let k32 = k as u32;
        self.touched.extend(
            c.by_alpha[last]
                .iter()
                .filter(|&&cell| c.server_alpha[cell as usize] != k32 && c.receiver_alpha[cell as usize] != k32),
        );
        let value = |i: usize, alpha: &[f64]| {
            if i == k {
                prop
            } else if i == last {
                new_last
            } else {
                alpha[i]
            }
        };
        self.ll_buf.clear();
        let mut dll = 0.0;
        for &cell in &self.touched {
            let cell = cell as usize;
            let eta = self.f[c.slot[cell] as usize * N_BUCKETS + c.bucket[cell] as usize]
                + value(c.server_alpha[cell] as usize, &self.params.alpha)
                - value(c.receiver_alpha[cell] as usize, &self.params.alpha);
            let ll = c.loglik(cell, eta);
            dll += ll - self.cell_ll[cell];
            self.ll_buf.push(ll);
        }
        let ok = self.decide(block, dll + dprior);
        if ok {
            self.params.alpha[k] = prop;
            self.params.alpha[last] = new_last;
            for (&cell, &ll) in self.touched.iter().zip(&self.ll_buf) {
                self.cell_ll[cell as usize] = ll;
            }
        }
        ok
    }

    /// Prior-only target for one of the Gamma mean/variance parameters.
    fn mean_var_target(&self, block: Block, r: f64, s: f64) -> f64 {
        let h = &self.params.hyper;
        match block {
            Block::RTau | Block::STau => h.tau2.iter().map(|&t| model::gamma_mv_logpdf(t, r, s)).sum(),
            _ => {
                let (mut n, mut sl, mut sx) = (0.0, 0.0, 0.0);
                for sp in &self.params.servers {
                    for &e in &sp.eps {
                        n += 1.0;
                        sl += e.ln();
                        sx += e;
                    }
                }
                gamma_mv_loglik(n, sl, sx, r, s)
            }
        }
    }

    fn update_mean_var(&mut self, block: Block, jump: f64) -> bool {
        let h = &self.params.hyper;
        let (r, s) = match block {
            Block::RTau | Block::STau => (h.r_tau, h.s_tau),
            _ => (h.r_eps, h.s_eps),
        };
        let moving_r = matches!(block, Block::RTau | Block::REps);
        let x = if moving_r { r } else { s };
        let v = logit10(x);
        let v_new = v + jump;
        let x_new = UNIFORM_UPPER * sigmoid(v_new);
        if !(x_new > 0.0 && x_new < UNIFORM_UPPER) {
            return self.decide(block, f64::NEG_INFINITY);
        }
        let (r_new, s_new) = if moving_r { (x_new, s) } else { (r, x_new) };
        let jac = |v: f64| log_sigmoid(v) + log_sigmoid(-v);
        let log_ratio = self.mean_var_target(block, r_new, s_new) - self.mean_var_target(block, r, s)
            + jac(v_new)
            - jac(v);
        let ok = self.decide(block, log_ratio);
        if ok {
            let h = &mut self.params.hyper;
            match block {
                Block::RTau => h.r_tau = x_new,
                Block::STau => h.s_tau = x_new,
                Block::REps => h.r_eps = x_new,
                Block::SEps => h.s_eps = x_new,
                _ => unreachable!(),
            }
        }
        ok
    }

    /// Conjugate hypers, then every Metropolis block in the fixed order.
    pub fn sweep(&mut self) {
        self.update_conjugate_hypers();
        let ns = self.params.servers.len();
        let (nf, ne) = (self.config.n_free(), self.config.n_eps());
        for slot in 0..ns {
            for m in 0..nf {
                self.update_mh_block(Block::FreeBeta { slot, m });
            }
        }
        for slot in 0..ns {
            for m in 0..ne {
                self.update_mh_block(Block::LogEps { slot, m });
            }
        }
        for k in 0..self.params.alpha.len().saturating_sub(1) {
            self.update_mh_block(Block::Alpha(k));
        }
        for _ in 0..MEAN_VAR_REPEATS {
            for b in [Block::RTau, Block::STau, Block::REps, Block::SEps] {
                self.update_mh_block(b);
            }
        }
    }
}

fn run_one(
    cfg: &ChainConfig,
    model: &ModelConfig,
    cells: &CellTable,
    n_servers: usize,
    n_players: usize,
    seed: u64,
) -> Result<ChainDraws> {
    let mut chain = Chain::new(model, cells, n_servers, n_players, seed, cfg.target_accept)?;
    let adapt_until = cfg.adapt_until();
    let mut draws = Vec::with_capacity(cfg.draws_per_chain());
    for t in 0..cfg.n_iter {
        chain.set_adaptation((t < adapt_until).then_some(t));
        chain.sweep();
        let done = t + 1;
        if done > cfg.burn_in && (done - cfg.burn_in) % cfg.thin == 0 {
            draws.push(chain.params().to_vec());
        }
    }
    Ok(ChainDraws {
        seed,
        draws,
        acceptance: chain.acceptance(),
    })
}

/// Runs `n_chains` chains in parallel with seeds `seed + chain_index`.
pub fn run_chain(cfg: &ChainConfig, dataset: &Dataset, model: &ModelConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let cells = CellTable::new(model, dataset);
    let (ns, np) = (dataset.n_servers(), dataset.n_players());
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_one(cfg, model, &cells, ns, np, cfg.seed.wrapping_add(c as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        model: model.clone(),
        chain: cfg.clone(),
        players: dataset.players().to_vec(),
        servers: dataset.servers().to_vec(),
        dataset_hash: dataset.content_hash(),
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AggregatedPoint, Court};
    use crate::model::Variant;
    use crate::splines::SplineSpec;
    use approx::assert_relative_eq;

    fn small_dataset() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let players: Vec<String> = ["ann", "bea", "cat", "dee"].map(String::from).to_vec();
        let courts = Court::ALL;
        let points = (0..600)
            .map(|i| {
                let server = i % 3;
                let receiver = (server + 1 + (i / 3) % 3) % 4;
                AggregatedPoint {
                    server,
                    receiver,
                    x: 1 + (i % 15) as u8,
                    y: rng.random::<f64>() < 0.6,
                    court: courts[i % 3],
                }
            })
            .collect();
        Dataset::from_parts(players, vec![0, 1, 2], points).unwrap()
    }

    #[test]
    fn cached_likelihood_matches_reference() {
        let d = small_dataset();
        for court in [false, true] {
            for variant in Variant::ALL {
                let config = ModelConfig::new(SplineSpec::tennis_default(), variant, court);
                let cells = CellTable::new(&config, &d);
                let mut chain = Chain::new(&config, &cells, 3, 4, 9, 0.44).unwrap();
                for _ in 0..30 {
                    chain.sweep();
                }
                let cached = chain.log_likelihood();
                let reference = model::log_likelihood(&config, &d, chain.params()).unwrap();
                assert_relative_eq!(cached, reference, max_relative = 1e-10);
                let mut fresh = chain.cell_ll.clone();
                chain.refresh();
                for (a, b) in fresh.drain(..).zip(&chain.cell_ll) {
                    assert_relative_eq!(a, *b, epsilon = 1e-9);
                }
                assert!(chain.params().alpha.iter().sum::<f64>().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_monotone() {
        let config = ModelConfig::tennis_default();
        for seed in 0..100 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let p = init_state(&config, 3, 4, &mut a);
            assert_eq!(p, init_state(&config, 3, 4, &mut b));
            for s in &p.servers {
                assert!(config.spline.is_nonincreasing_on(&s.coeffs()).unwrap());
            }
            assert!(model::log_prior(&config, &p).is_finite());
        }
    }

    #[test]
    fn draw_counts() {
        let cfg = ChainConfig::default();
        assert_eq!(cfg.draws_per_chain(), 950);
        let cfg = ChainConfig {
            n_iter: 37,
            burn_in: 0,
            thin: 1,
            ..ChainConfig::default()
        };
        let d = small_dataset();
        let draws = run_chain(&cfg, &d, &ModelConfig::tennis_default()).unwrap();
        assert_eq!(draws.chains[0].draws.len(), 37);
        let bad = ChainConfig {
            burn_in: 40,
            ..cfg
        };
        assert!(run_chain(&bad, &d, &ModelConfig::tennis_default()).is_err());
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let cfg = ChainConfig {
            n_iter: 60,
            burn_in: 20,
            thin: 2,
            n_chains: 2,
            seed: 11,
            adapt_window: 20,
            target_accept: 0.44,
        };
        let d = small_dataset();
        let config = ModelConfig::tennis_default();
        let a = run_chain(&cfg, &d, &config).unwrap();
        let b = run_chain(&cfg, &d, &config).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.chains[0].draws, a.chains[1].draws);
        assert_eq!(a.chains[1].seed, 12);
    }

    #[test]
    fn stored_states_respect_constraints() {
        let cfg = ChainConfig {
            n_iter: 200,
            burn_in: 100,
            thin: 5,
            ..ChainConfig::default()
        };
        let d = small_dataset();
        let config = ModelConfig::new(SplineSpec::tennis_default(), Variant::Full, true);
        let draws = run_chain(&cfg, &d, &config).unwrap();
        for p in draws.all_params().unwrap() {
            for s in &p.servers {
                assert!(s.eps.iter().all(|&e| e > 0.0));
                assert!(config.spline.is_nonincreasing_on(&s.coeffs()).unwrap());
            }
            assert!(p.alpha.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
