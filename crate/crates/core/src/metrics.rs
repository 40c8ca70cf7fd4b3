//! Predictive criteria (LPML, WAIC, DIC, RMSE) and the fit report.
//!
//! The matrix functions take per-draw per-observation log-likelihoods. For a
//! fitted model the matrix is never materialized: [`fit_report`] streams over
//! likelihood cells, where every point in a cell shares one column per
//! outcome, weighted by the number of points with that outcome.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::CellTable;
use crate::data::{Dataset, N_BUCKETS};
use crate::diagnostics::diagnostics;
use crate::error::{Error, Result};
use crate::model::{self, fill_coeffs, log_sigmoid, sigmoid, Params, Variant};
use crate::posterior::PosteriorDraws;

const CELL_CHUNK: usize = 256;

/// Log-likelihoods stored observation-major, with optional column weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix {
    n_draws: usize,
    n_obs: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl LoglikMatrix {
    /// One row per draw.
    pub fn from_draw_rows(rows: &[Vec<f64>]) -> Result<LoglikMatrix> {
        let n_draws = rows.len();
        let n_obs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_obs) {
            return Err(Error::DimensionMismatch {
                expected: n_obs,
                got: rows.iter().map(Vec::len).find(|&l| l != n_obs).unwrap_or(0),
            });
        }
        let mut values = vec![0.0; n_draws * n_obs];
        for (d, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                values[j * n_draws + d] = *v;
            }
        }
        Ok(LoglikMatrix {
            n_draws,
            n_obs,
            values,
            weights: vec![1.0; n_obs],
        })
    }

    /// Each column counts `weights[j]` times.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<LoglikMatrix> {
        if weights.len() != self.n_obs {
            return Err(Error::DimensionMismatch {
                expected: self.n_obs,
                got: weights.len(),
            });
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_draws..(j + 1) * self.n_draws]
    }

    fn check(&self) -> Result<()> {
        if self.n_draws < 2 {
            return Err(Error::InsufficientDraws {
                needed: 2,
                got: self.n_draws,
            });
        }
        Ok(())
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Contributions of one observation's draws.
#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    log_cpo: f64,
    lppd: f64,
    p_waic: f64,
}

fn column_terms(ll: &[f64]) -> Terms {
    let s = ll.len() as f64;
    let ln_s = s.ln();
    let log_cpo = -(log_sum_exp(ll.iter().map(|v| -v)) - ln_s);
    let lppd = log_sum_exp(ll.iter().copied()) - ln_s;
    let mean = ll.iter().sum::<f64>() / s;
    let p_waic = ll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
    Terms { log_cpo, lppd, p_waic }
}

fn weighted_terms(m: &LoglikMatrix) -> Terms {
    let mut t = Terms::default();
    for j in 0..m.n_obs {
        let c = column_terms(m.column(j));
        let w = m.weights[j];
        t.log_cpo += w * c.log_cpo;
        t.lppd += w * c.lppd;
        t.p_waic += w * c.p_waic;
    }
    t
}

/// Sum of log conditional predictive ordinates (harmonic-mean estimate).
pub fn lpml(m: &LoglikMatrix) -> Result<f64> {
    m.check()?;
    Ok(weighted_terms(m).log_cpo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    /// `-2 (lppd - p_waic)`.
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

pub fn waic_parts(m: &LoglikMatrix) -> Result<Waic> {
    m.check()?;
    let t = weighted_terms(m);
    Ok(Waic {
        waic: -2.0 * (t.lppd - t.p_waic),
        lppd: t.lppd,
        p_waic: t.p_waic,
    })
}

/// WAIC on the deviance scale.
pub fn waic(m: &LoglikMatrix) -> Result<f64> {
    Ok(waic_parts(m)?.waic)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    /// Posterior mean deviance.
    pub d_bar: f64,
    /// Deviance at the plug-in state.
    pub d_hat: f64,
}

/// `D_bar + p_D` from per-draw total log-likelihoods and the log-likelihood
/// at the plug-in state.
pub fn dic(loglik_totals: &[f64], loglik_at_mean: f64) -> Result<Dic> {
    if loglik_totals.is_empty() {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    if !loglik_at_mean.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood {loglik_at_mean} at the plug-in state")));
    }
    let d_bar = -2.0 * loglik_totals.iter().sum::<f64>() / loglik_totals.len() as f64;
    let d_hat = -2.0 * loglik_at_mean;
    let p_d = d_bar - d_hat;
    Ok(Dic {
        dic: d_bar + p_d,
        p_d,
        d_bar,
        d_hat,
    })
}

/// Posterior mean on the unconstrained scale: free coefficients, log
/// decrements and free abilities are averaged, then mapped back.
pub fn posterior_mean_params(draws: &PosteriorDraws) -> Result<Params> {
    let all = draws.all_params()?;
    let first = all.first().ok_or(Error::InsufficientDraws { needed: 1, got: 0 })?;
    let s = all.len() as f64;
    let mut out = first.clone();
    for (slot, sp) in out.servers.iter_mut().enumerate() {
        for (m, b) in sp.free_beta.iter_mut().enumerate() {
            *b = all.iter().map(|p| p.servers[slot].free_beta[m]).sum::<f64>() / s;
        }
        for (m, e) in sp.eps.iter_mut().enumerate() {
            *e = (all.iter().map(|p| p.servers[slot].eps[m].ln()).sum::<f64>() / s).exp();
        }
    }
    let na = out.alpha.len();
    for k in 0..na.saturating_sub(1) {
        out.alpha[k] = all.iter().map(|p| p.alpha[k]).sum::<f64>() / s;
    }
    if na >= 2 {
        model::apply_sum_to_zero(&mut out.alpha)?;
    }
    let flat_mean = |f: &dyn Fn(&Params) -> f64| all.iter().map(f).sum::<f64>() / s;
    let h = &mut out.hyper;
    for m in 0..h.beta_mean.len() {
        h.beta_mean[m] = flat_mean(&|p| p.hyper.beta_mean[m]);
        h.tau2[m] = flat_mean(&|p| p.hyper.tau2[m]);
    }
    h.beta0 = flat_mean(&|p| p.hyper.beta0);
    h.prec_beta0 = flat_mean(&|p| p.hyper.prec_beta0);
    h.r_tau = flat_mean(&|p| p.hyper.r_tau);
    h.s_tau = flat_mean(&|p| p.hyper.s_tau);
    h.r_eps = flat_mean(&|p| p.hyper.r_eps);
    h.s_eps = flat_mean(&|p| p.hyper.s_eps);
    h.alpha0 = flat_mean(&|p| p.hyper.alpha0);
    h.prec_alpha = flat_mean(&|p| p.hyper.prec_alpha);
    Ok(out)
}

/// Everything the criteria need, accumulated over cells.
struct CellPass {
    terms: Terms,
    /// Total log-likelihood per draw.
    totals: Vec<f64>,
    /// Posterior mean win probability per cell.
    mean_p: Vec<f64>,
}

fn check_dataset(draws: &PosteriorDraws, dataset: &Dataset) -> Result<()> {
    if draws.players != dataset.players() || draws.servers != dataset.servers() {
        return Err(Error::DatasetMismatch(
            draws.dataset_hash.clone(),
            dataset.content_hash(),
        ));
    }
    Ok(())
}

fn cell_pass(draws: &PosteriorDraws, dataset: &Dataset, cells: &CellTable) -> Result<CellPass> {
    check_dataset(draws, dataset)?;
    let config = &draws.model;
    let (ns, nf, ne) = (draws.n_servers(), config.n_free(), config.n_eps());
    let dim = config.dim();
    let na = config.n_alpha(draws.n_players());
    let alpha_off = ns * (nf + ne);
    let basis = config.bucket_basis();
    let flat: Vec<&[f64]> = draws.flat().collect();
    let s = flat.len();
    if flat.iter().any(|v| v.len() != draws.n_params()) {
        return Err(Error::Format("ragged draws".into()));
    }

    // spline values per draw, server slot and bucket
    let mut f = vec![0.0; s * ns * N_BUCKETS];
    let mut coeffs = vec![0.0; dim];
    for (d, v) in flat.iter().enumerate() {
        for slot in 0..ns {
            let base = slot * (nf + ne);
            fill_coeffs(&v[base..base + nf], &v[base + nf..base + nf + ne], &mut coeffs);
            for b in 0..N_BUCKETS {
                f[(d * ns + slot) * N_BUCKETS + b] =
                    basis[b * dim..(b + 1) * dim].iter().zip(&coeffs).map(|(x, y)| x * y).sum();
            }
        }
    }

    let chunks: Vec<(Terms, Vec<f64>, Vec<f64>)> = (0..cells.len())
        .collect::<Vec<_>>()
        .par_chunks(CELL_CHUNK)
        .map(|chunk| {
            let mut terms = Terms::default();
            let mut totals = vec![0.0; s];
            let mut mean_p = Vec::with_capacity(chunk.len());
            let mut l1 = vec![0.0; s];
            let mut l0 = vec![0.0; s];
            for &c in chunk {
                let (slot, b) = (cells.slot[c] as usize, cells.bucket[c] as usize);
                let (sa, ra) = (cells.server_alpha[c] as usize, cells.receiver_alpha[c] as usize);
                let (w, n) = (cells.wins[c], cells.trials[c]);
                let mut psum = 0.0;
                for (d, v) in flat.iter().enumerate() {
                    let alpha = &v[alpha_off..alpha_off + na];
                    let eta = f[(d * ns + slot) * N_BUCKETS + b] + alpha[sa] - alpha[ra];
                    l1[d] = log_sigmoid(eta);
                    l0[d] = log_sigmoid(-eta);
                    totals[d] += w * l1[d] + (n - w) * l0[d];
                    psum += sigmoid(eta);
                }
                mean_p.push(psum / s as f64);
                for (ll, weight) in [(&l1, w), (&l0, n - w)] {
                    if weight > 0.0 {
                        let t = column_terms(ll);
                        terms.log_cpo += weight * t.log_cpo;
                        terms.lppd += weight * t.lppd;
                        terms.p_waic += weight * t.p_waic;
                    }
                }
            }
            (terms, totals, mean_p)
        })
        .collect();

    let mut pass = CellPass {
        terms: Terms::default(),
        totals: vec![0.0; s],
        mean_p: Vec::with_capacity(cells.len()),
    };
    for (t, tot, mp) in chunks {
        pass.terms.log_cpo += t.log_cpo;
        pass.terms.lppd += t.lppd;
        pass.terms.p_waic += t.p_waic;
        for (a, b) in pass.totals.iter_mut().zip(tot) {
            *a += b;
        }
        pass.mean_p.extend(mp);
    }
    Ok(pass)
}

/// Win-count RMSE over (server, bucket) pairs given the posterior mean win
/// probability of every point.
pub fn rmse_from_point_means(dataset: &Dataset, mean_p: &[f64]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("no points for RMSE".into()));
    }
    if mean_p.len() != dataset.points().len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.points().len(),
            got: mean_p.len(),
        });
    }
    let mut acc: BTreeMap<(usize, u8), (f64, f64)> = BTreeMap::new();
    for (p, &q) in dataset.points().iter().zip(mean_p) {
        let e = acc.entry((p.server, p.x)).or_insert((0.0, 0.0));
        e.0 += p.y as u8 as f64;
        e.1 += q;
    }
    Ok(rmse_of(acc.values()))
}

fn rmse_of<'a>(cells: impl Iterator<Item = &'a (f64, f64)>) -> f64 {
    let (mut sse, mut n) = (0.0, 0.0);
    for (obs, pred) in cells {
        sse += (obs - pred).powi(2);
        n += 1.0;
    }
    (sse / n).sqrt()
}

fn rmse_from_pass(cells: &CellTable, mean_p: &[f64], n_servers: usize) -> f64 {
    let mut acc = vec![(0.0, 0.0); n_servers * N_BUCKETS];
    let mut seen = vec![false; n_servers * N_BUCKETS];
    for c in 0..cells.len() {
        let k = cells.slot[c] as usize * N_BUCKETS + cells.bucket[c] as usize;
        acc[k].0 += cells.wins[c];
        acc[k].1 += cells.trials[c] * mean_p[c];
        seen[k] = true;
    }
    rmse_of(acc.iter().zip(&seen).filter(|(_, s)| **s).map(|(a, _)| a))
}

pub fn rmse(dataset: &Dataset, draws: &PosteriorDraws) -> Result<f64> {
    if dataset.is_empty() || draws.total_draws() == 0 {
        return Err(Error::EmptyInput("RMSE needs points and draws".into()));
    }
    let cells = CellTable::new(&draws.model, dataset);
    let pass = cell_pass(draws, dataset, &cells)?;
    Ok(rmse_from_pass(&cells, &pass.mean_p, dataset.n_servers()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: Variant,
    pub court_effect: bool,
    pub dataset_hash: String,
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub n_points: usize,
    pub lpml: f64,
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub dic: f64,
    pub p_d: f64,
    pub rmse: f64,
    pub acceptance: BTreeMap<String, f64>,
    pub min_ess: Option<f64>,
    pub max_rhat: Option<f64>,
    pub names: Vec<String>,
    /// `None` where the statistic is undefined (constant trace).
    pub ess: Vec<Option<f64>>,
    pub rhat: Vec<Option<f64>>,
}

impl FitReport {
    pub fn label(&self) -> String {
        let mut s = self.variant.name().to_string();
        if self.court_effect {
            s.push_str("+court");
        }
        s
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// All criteria and diagnostics for draws fitted to `dataset`.
pub fn fit_report(draws: &PosteriorDraws, dataset: &Dataset) -> Result<FitReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("fit report needs points".into()));
    }
    if draws.total_draws() < 2 {
        return Err(Error::InsufficientDraws {
            needed: 2,
            got: draws.total_draws(),
        });
    }
    let cells = CellTable::new(&draws.model, dataset);
    let pass = cell_pass(draws, dataset, &cells)?;
    let theta_bar = posterior_mean_params(draws)?;
    let ll_bar = model::log_likelihood(&draws.model, dataset, &theta_bar)?;
    let d = dic(&pass.totals, ll_bar)?;
    let diag = diagnostics(draws)?;
    Ok(FitReport {
        variant: draws.model.variant,
        court_effect: draws.model.court_effect,
        dataset_hash: draws.dataset_hash.clone(),
        n_chains: draws.n_chains(),
        draws_per_chain: draws.draws_per_chain(),
        n_points: dataset.points().len(),
        lpml: pass.terms.log_cpo,
        waic: -2.0 * (pass.terms.lppd - pass.terms.p_waic),
        lppd: pass.terms.lppd,
        p_waic: pass.terms.p_waic,
        dic: d.dic,
        p_d: d.p_d,
        rmse: rmse_from_pass(&cells, &pass.mean_p, dataset.n_servers()),
        acceptance: draws.acceptance(),
        min_ess: diag.min_ess(),
        max_rhat: diag.max_rhat(),
        names: diag.names,
        ess: diag.ess.into_iter().map(finite).collect(),
        rhat: diag.rhat.into_iter().map(finite).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    None,
    Best,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub lpml: f64,
    pub waic: f64,
    pub dic: f64,
    pub rmse: f64,
    /// Marks for LPML (max), WAIC, DIC and RMSE (min).
    pub marks: [Mark; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub dataset_hash: String,
    pub rows: Vec<CompareRow>,
}

/// One row per report; best values are marked, shared bests marked as ties.
pub fn compare(reports: &[FitReport]) -> Result<CompareTable> {
    if reports.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "comparison needs at least two reports, got {}",
            reports.len()
        )));
    }
    let hash = &reports[0].dataset_hash;
    if let Some(r) = reports.iter().find(|r| &r.dataset_hash != hash) {
        return Err(Error::DatasetMismatch(hash.clone(), r.dataset_hash.clone()));
    }
    let mut rows: Vec<CompareRow> = reports
        .iter()
        .map(|r| CompareRow {
            model: r.label(),
            lpml: r.lpml,
            waic: r.waic,
            dic: r.dic,
            rmse: r.rmse,
            marks: [Mark::None; 4],
        })
        .collect();
    let keys: [fn(&CompareRow) -> f64; 4] = [|r| -r.lpml, |r| r.waic, |r| r.dic, |r| r.rmse];
    for (k, key) in keys.iter().enumerate() {
        let best = rows.iter().map(key).fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..rows.len()).filter(|&i| key(&rows[i]) == best).collect();
        let mark = if winners.len() > 1 { Mark::Tie } else { Mark::Best };
        for i in winners {
            rows[i].marks[k] = mark;
        }
    }
    Ok(CompareTable {
        dataset_hash: hash.clone(),
        rows,
    })
}

impl CompareTable {
    /// Index of the unique LPML maximizer.
    pub fn selected_by_lpml(&self) -> Option<usize> {
        let best: Vec<usize> = (0..self.rows.len())
            .filter(|&i| self.rows[i].marks[0] == Mark::Best)
            .collect();
        (best.len() == 1).then(|| best[0])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "LPML", "WAIC", "DIC", "RMSE", "best"])?;
        const NAMES: [&str; 4] = ["LPML", "WAIC", "DIC", "RMSE"];
        for r in &self.rows {
            let best: Vec<String> = r
                .marks
                .iter()
                .zip(NAMES)
                .filter_map(|(m, n)| match m {
                    Mark::None => None,
                    Mark::Best => Some(n.to_string()),
                    Mark::Tie => Some(format!("{n}(tie)")),
                })
                .collect();
            out.write_record([
                r.model.clone(),
                r.lpml.to_string(),
                r.waic.to_string(),
                r.dic.to_string(),
                r.rmse.to_string(),
                best.join(" "),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
