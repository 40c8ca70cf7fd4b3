//! Effective sample size and split R-hat.
//!
//! ESS follows Geyer's initial positive sequence on the multi-chain
//! autocorrelation estimate; autocovariances are computed by FFT.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::PosteriorDraws;

const MIN_DRAWS: usize = 4;

/// Biased autocovariance at every lag.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (len as f64 * n as f64)).collect()
}

fn check(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || n < MIN_DRAWS {
        return Err(Error::InsufficientDraws {
            needed: MIN_DRAWS,
            got: n,
        });
    }
    Ok(n)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Effective sample size across chains (truncated to a common length).
/// NaN when every draw is identical.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check(chains)?;
    let m = chains.len();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n])).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = w * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return Ok(f64::NAN);
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    Ok(total / tau)
}

/// Split R-hat: each chain is halved and the within/between variance ratio
/// taken over the halves. NaN (with a warning) for zero within-chain variance.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check(chains)?;
    let half = n / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    if !(w > 0.0) {
        log::warn!("split R-hat undefined for a chain with zero variance");
        return Ok(f64::NAN);
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let hf = half as f64;
    let b = hf * sample_var(&means);
    let var_hat = (hf - 1.0) / hf * w + b / hf;
    Ok((var_hat / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
}

impl Diagnostics {
    /// Smallest finite ESS.
    pub fn min_ess(&self) -> Option<f64> {
        self.ess.iter().copied().filter(|v| v.is_finite()).reduce(f64::min)
    }

    /// Largest finite R-hat.
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.iter().copied().filter(|v| v.is_finite()).reduce(f64::max)
    }
}

/// ESS and split R-hat for every stored parameter.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Diagnostics> {
    let names = draws.names();
    let mut ess_v = Vec::with_capacity(names.len());
    let mut rhat_v = Vec::with_capacity(names.len());
    for p in 0..names.len() {
        let col = draws.column(p);
        ess_v.push(ess(&col)?);
        rhat_v.push(split_rhat(&col)?);
    }
    Ok(Diagnostics {
        names,
        ess: ess_v,
        rhat: rhat_v,
    })
}
