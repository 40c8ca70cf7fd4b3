//! Posterior summaries: serve-win curves against an averaged opponent, serve
//! advantage, rally-ability rankings and curves for held-out servers.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Court, Dataset};
use crate::error::{Error, Result};
use crate::model::{gamma_mean_var, sigmoid, Params};
use crate::posterior::PosteriorDraws;

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_samples(mut xs: Vec<f64>) -> Interval {
        xs.sort_by(f64::total_cmp);
        Interval {
            median: quantile_sorted(&xs, 0.5),
            lower: quantile_sorted(&xs, 0.025),
            upper: quantile_sorted(&xs, 0.975),
        }
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub player: String,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Posterior median of `f(L) - f(U)`.
    pub serve_advantage: f64,
}

/// `1, 1 + step, ..., 15` clipped to the spline domain.
pub fn default_grid(draws: &PosteriorDraws, step: f64) -> Vec<f64> {
    let (lo, hi) = (draws.model.spline.lower(), draws.model.spline.upper());
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| (lo + i as f64 * step).min(hi)).collect()
}

fn player_index(draws: &PosteriorDraws, player: &str) -> Result<usize> {
    draws
        .player_index(player)
        .ok_or_else(|| Error::UnknownPlayer(player.to_string()))
}

fn server_slot(draws: &PosteriorDraws, player: &str) -> Result<usize> {
    let j = player_index(draws, player)?;
    draws
        .server_slot(j)
        .ok_or_else(|| Error::UnknownPlayer(format!("{player} has no serve curve")))
}

/// `alpha_i - mean_{j != i} alpha_j` for one draw; with a court effect and no
/// court given, the gap is averaged over courts.
fn alpha_gap(draws: &PosteriorDraws, p: &Params, player: usize, court: Option<Court>) -> f64 {
    let n = draws.n_players();
    let gap = |stride: usize, offset: usize| {
        let a = |j: usize| p.alpha[stride * j + offset];
        if n < 2 {
            return 0.0;
        }
        let others: f64 = (0..n).filter(|&j| j != player).map(a).sum::<f64>() / (n - 1) as f64;
        a(player) - others
    };
    match (draws.model.court_effect, court) {
        (false, _) => gap(1, 0),
        (true, Some(c)) => gap(3, c.index()),
        (true, None) => Court::ALL.iter().map(|c| gap(3, c.index())).sum::<f64>() / 3.0,
    }
}

fn summarize_curves(player: &str, grid: &[f64], per_draw: &[Vec<f64>], advantage: Vec<f64>) -> CurveSummary {
    let g = grid.len();
    let s = per_draw.len() as f64;
    let mut mean = vec![0.0; g];
    let mut lower = vec![0.0; g];
    let mut upper = vec![0.0; g];
    let mut col = Vec::with_capacity(per_draw.len());
    for k in 0..g {
        col.clear();
        col.extend(per_draw.iter().map(|c| c[k]));
        mean[k] = col.iter().sum::<f64>() / s;
        col.sort_by(f64::total_cmp);
        lower[k] = quantile_sorted(&col, 0.025).min(mean[k]);
        upper[k] = quantile_sorted(&col, 0.975).max(mean[k]);
    }
    CurveSummary {
        player: player.to_string(),
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
        serve_advantage: Interval::from_samples(advantage).median,
    }
}

fn curve_values(draws: &PosteriorDraws, coeffs: &[f64], gap: f64, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&s| Ok(sigmoid(draws.model.spline.spline_eval(coeffs, s)? + gap)))
        .collect()
}

fn advantage_of(draws: &PosteriorDraws, coeffs: &[f64]) -> Result<f64> {
    let sp = &draws.model.spline;
    Ok(sp.spline_eval(coeffs, sp.lower())? - sp.spline_eval(coeffs, sp.upper())?)
}

/// Win probability on serve against the averaged opponent, per grid point.
pub fn curve_summary(
    draws: &PosteriorDraws,
    player: &str,
    grid: &[f64],
    court: Option<Court>,
) -> Result<CurveSummary> {
    let slot = server_slot(draws, player)?;
    let j = player_index(draws, player)?;
    if draws.total_draws() == 0 {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    let mut curves = Vec::with_capacity(draws.total_draws());
    let mut adv = Vec::with_capacity(draws.total_draws());
    for v in draws.flat() {
        let p = draws.params(v)?;
        let coeffs = p.servers[slot].coeffs();
        curves.push(curve_values(draws, &coeffs, alpha_gap(draws, &p, j, court), grid)?);
        adv.push(advantage_of(draws, &coeffs)?);
    }
    Ok(summarize_curves(player, grid, &curves, adv))
}

/// Per-draw `f(L) - f(U)`: median and central 95% interval.
pub fn serve_advantage(draws: &PosteriorDraws, player: &str) -> Result<Interval> {
    let slot = server_slot(draws, player)?;
    let adv = draws
        .flat()
        .map(|v| advantage_of(draws, &draws.params(v)?.servers[slot].coeffs()))
        .collect::<Result<Vec<f64>>>()?;
    if adv.is_empty() {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    Ok(Interval::from_samples(adv))
}

fn alpha_samples(draws: &PosteriorDraws, player: usize, court: Option<Court>) -> Result<Vec<f64>> {
    draws
        .flat()
        .map(|v| {
            let p = draws.params(v)?;
            Ok(match (draws.model.court_effect, court) {
                (false, _) => p.alpha[player],
                (true, Some(c)) => p.alpha[3 * player + c.index()],
                (true, None) => (0..3).map(|c| p.alpha[3 * player + c]).sum::<f64>() / 3.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub player: String,
    pub alpha: Interval,
}

/// Players by decreasing posterior median ability, ties broken by name. With
/// a court effect and no court, the per-court abilities are averaged.
pub fn rank_rally_ability(draws: &PosteriorDraws, court: Option<Court>) -> Result<Vec<RankRow>> {
    if court.is_some() && !draws.model.court_effect {
        return Err(Error::InvalidParameter(
            "court ranking requested for a model without a court effect".into(),
        ));
    }
    let mut rows = (0..draws.n_players())
        .map(|j| {
            Ok(RankRow {
                rank: 0,
                player: draws.players[j].clone(),
                alpha: Interval::from_samples(alpha_samples(draws, j, court)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        b.alpha
            .median
            .partial_cmp(&a.alpha.median)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.player.cmp(&b.player))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

/// One row per player: baseline ability and, when court draws are given,
/// the clay, grass and hard abilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityRow {
    pub player: String,
    pub baseline: Interval,
    pub clay: Option<Interval>,
    pub grass: Option<Interval>,
    pub hard: Option<Interval>,
}

pub fn ability_table(baseline: &PosteriorDraws, courts: Option<&PosteriorDraws>) -> Result<Vec<AbilityRow>> {
    if baseline.model.court_effect {
        return Err(Error::InvalidParameter("baseline draws must come from a model without courts".into()));
    }
    if let Some(c) = courts {
        if !c.model.court_effect || c.players != baseline.players {
            return Err(Error::InvalidParameter(
                "court draws must have a court effect and the same players".into(),
            ));
        }
    }
    let rank = rank_rally_ability(baseline, None)?;
    rank.into_iter()
        .map(|r| {
            let j = baseline.player_index(&r.player).expect("ranked players exist");
            let court = |c: Court| -> Result<Option<Interval>> {
                courts
                    .map(|d| Ok(Interval::from_samples(alpha_samples(d, j, Some(c))?)))
                    .transpose()
            };
            Ok(AbilityRow {
                player: r.player,
                baseline: r.alpha,
                clay: court(Court::Clay)?,
                grass: court(Court::Grass)?,
                hard: court(Court::Hard)?,
            })
        })
        .collect()
}

/// Serve advantage against rally ability, one row per server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub player: String,
    pub alpha: Interval,
    pub advantage: Interval,
}

/// With `significant_only`, servers whose advantage or ability interval
/// contains zero are dropped.
pub fn scatter(draws: &PosteriorDraws, significant_only: bool) -> Result<Vec<ScatterRow>> {
    let mut rows = Vec::new();
    for &j in &draws.servers {
        let player = &draws.players[j];
        let row = ScatterRow {
            player: player.clone(),
            alpha: Interval::from_samples(alpha_samples(draws, j, None)?),
            advantage: serve_advantage(draws, player)?,
        };
        if !significant_only || (row.alpha.excludes_zero() && row.advantage.excludes_zero()) {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Predictive curves for the servers of `test`.
///
/// For every posterior draw a fresh server is drawn from the population
/// layer: free coefficients from their Normal priors and decrements from the
/// mean/variance Gamma. A test server seen in training keeps its trained
/// ability gap for that draw; an unseen one gets an ability from
/// N(alpha0, 1 / prec_alpha) against the (zero) mean training ability.
pub fn predict_new_server<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    test: &Dataset,
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<CurveSummary>> {
    if test.n_servers() == 0 {
        log::warn!("test set has no servers; nothing to predict");
        return Ok(Vec::new());
    }
    if draws.total_draws() == 0 {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    let all = draws.all_params()?;
    let (nf, ne) = (draws.model.n_free(), draws.model.n_eps());
    for p in &all {
        let h = &p.hyper;
        if h.beta_mean.len() != nf || h.tau2.len() != nf || !(h.r_eps > 0.0 && h.s_eps > 0.0) {
            return Err(Error::InvalidParameter("draws lack population-level parameters".into()));
        }
    }
    let mut out = Vec::with_capacity(test.n_servers());
    for name in test.server_names() {
        let trained = draws.player_index(name);
        let mut curves = Vec::with_capacity(all.len());
        let mut adv = Vec::with_capacity(all.len());
        for p in &all {
            let h = &p.hyper;
            let free: Vec<f64> = (0..nf)
                .map(|m| {
                    Normal::new(h.beta_mean[m], 1.0 / h.tau2[m].sqrt())
                        .map(|d| d.sample(rng))
                        .map_err(|e| Error::InvalidParameter(e.to_string()))
                })
                .collect::<Result<_>>()?;
            let (a, b) = gamma_mean_var(h.r_eps, h.s_eps)?;
            let gamma = Gamma::new(a, 1.0 / b).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let eps: Vec<f64> = (0..ne).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
            let coeffs = crate::model::reconstruct_coeffs(&free, &eps)?;
            let gap = match trained {
                Some(j) => alpha_gap(draws, p, j, None),
                None => Normal::new(h.alpha0, 1.0 / h.prec_alpha.sqrt())
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .sample(rng),
            };
            curves.push(curve_values(draws, &coeffs, gap, grid)?);
            adv.push(advantage_of(draws, &coeffs)?);
        }
        out.push(summarize_curves(name, grid, &curves, adv));
    }
    Ok(out)
}

pub fn write_curves_csv<W: Write>(curves: &[CurveSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["player", "s", "mean", "lower", "upper"])?;
    for c in curves {
        for k in 0..c.grid.len() {
            out.write_record([
                c.player.clone(),
                c.grid[k].to_string(),
                c.mean[k].to_string(),
                c.lower[k].to_string(),
                c.upper[k].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "player",
        "alpha_median",
        "alpha_lower",
        "alpha_upper",
        "advantage_median",
        "advantage_lower",
        "advantage_upper",
    ])?;
    for r in rows {
        out.write_record([
            r.player.clone(),
            r.alpha.median.to_string(),
            r.alpha.lower.to_string(),
            r.alpha.upper.to_string(),
            r.advantage.median.to_string(),
            r.advantage.lower.to_string(),
            r.advantage.upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn interval_cells(i: Option<Interval>) -> [String; 3] {
    match i {
        Some(i) => [i.median.to_string(), i.lower.to_string(), i.upper.to_string()],
        None => [String::new(), String::new(), String::new()],
    }
}

pub fn write_ranking_csv<W: Write>(rows: &[RankRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "player", "median", "lower", "upper"])?;
    for r in rows {
        let [m, l, u] = interval_cells(Some(r.alpha));
        out.write_record([r.rank.to_string(), r.player.clone(), m, l, u])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ability_csv<W: Write>(rows: &[AbilityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["player".to_string()];
    for col in ["alpha", "clay", "grass", "hard"] {
        for stat in ["median", "lower", "upper"] {
            header.push(format!("{col}_{stat}"));
        }
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.player.clone()];
        for i in [Some(r.baseline), r.clay, r.grass, r.hard] {
            rec.extend(interval_cells(i));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert!((quantile_sorted(&xs, 0.025) - 1.075).abs() < 1e-12);
        let i = Interval::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!(i.median, 2.0);
        assert!(i.excludes_zero());
    }
}
