//! Empirical tail diagnostics: Hill estimates, light-tail tests, moment and
//! MGF probes, tail-ratio curves, the moment-condition chain over channel
//! draws, and product/sum tail experiments.

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_capacity, sample_draws, CapacityParams, ChannelDraw, ChannelModel};
use crate::dependence::{norta, sample_copula, CopulaSpec};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::{self, logsumexp};

/// Geometric grid `2^-10, ..., 2^3` used to operationalize "for some theta > 0".
pub fn theta_grid() -> Vec<f64> {
    (-10..=3).map(|k| 2f64.powi(k)).collect()
}

/// Relative growth between the half-sample and full-sample estimate beyond which
/// an expectation is declared divergent.
pub const GROWTH_LIMIT: f64 = 0.25;
/// Share of the largest term in the full-sample sum beyond which an expectation
/// is declared divergent.
pub const MAX_TERM_SHARE: f64 = 0.05;

/// Sorted sample of a real random variable.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalTail {
    samples: Vec<f64>,
}

impl EmpiricalTail {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("empirical tail needs at least one sample"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::domain("samples contain NaN"));
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Empirical `P(X > x)`.
    pub fn sf(&self, x: f64) -> f64 {
        stats::count_above(&self.samples, x) as f64 / self.n() as f64
    }

    pub fn exceedances(&self, x: f64) -> usize {
        stats::count_above(&self.samples, x)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        stats::quantile_sorted(&self.samples, p)
    }

    /// Log-spaced grid from the 90% quantile up to the largest finite level that
    /// still has `min_exceedances` samples above it.
    pub fn auto_grid(&self, points: usize, min_exceedances: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if n <= min_exceedances + 1 {
            return Err(Error::contract(format!(
                "need more than {} samples for a tail grid, got {n}",
                min_exceedances + 1
            )));
        }
        let lo = self.quantile(0.9);
        let largest_finite = self
            .samples
            .iter()
            .rev()
            .find(|x| x.is_finite())
            .copied()
            .unwrap_or(f64::NAN);
        let hi = self.samples[n - min_exceedances - 1].min(largest_finite);
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::contract(format!(
                "degenerate tail range [{lo}, {hi}] for a log grid"
            )));
        }
        // Guard against ties at the top level reducing the exceedance count.
        let mut grid = stats::log_grid(lo, hi, points);
        while let Some(&last) = grid.last() {
            if self.exceedances(last) >= min_exceedances {
                break;
            }
            grid.pop();
        }
        if grid.len() < 4 {
            return Err(Error::contract("tail grid has fewer than 4 supported points"));
        }
        Ok(grid)
    }
}

/// Split-half stability of a sample mean of `exp(log_terms)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// `ln` of the full-sample mean.
    pub log_estimate: f64,
    pub growth: f64,
    pub max_share: f64,
    pub stable: bool,
}

/// The half sample takes every second index counted from the end, so on sorted
/// data it always leaves out the maximum.
pub fn stability(log_terms: &[f64]) -> Stability {
    let n = log_terms.len();
    let full = logsumexp(log_terms) - (n as f64).ln();
    let half_terms: Vec<f64> = log_terms
        .iter()
        .enumerate()
        .filter(|(i, _)| (n - 1 - i) % 2 == 1)
        .map(|(_, &v)| v)
        .collect();
    let half = if half_terms.is_empty() {
        full
    } else {
        logsumexp(&half_terms) - (half_terms.len() as f64).ln()
    };
    let growth = ((full - half).exp() - 1.0).abs();
    let max_term = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_share = (max_term - full - (n as f64).ln()).exp();
    let stable = full.is_finite()
        && half.is_finite()
        && growth.is_finite()
        && growth <= GROWTH_LIMIT
        && max_share <= MAX_TERM_SHARE;
    Stability {
        log_estimate: full,
        growth,
        max_share,
        stable,
    }
}

/// Monotone closure over an increasing theta grid: finiteness at a larger theta
/// implies finiteness at every smaller one, so divergence propagates upward.
fn close_upward(stable: &mut [bool]) {
    let mut ok = true;
    for s in stable.iter_mut() {
        ok &= *s;
        *s = ok;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentProbe {
    pub theta_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stable: Vec<bool>,
    pub growth: Vec<f64>,
    pub max_share: Vec<f64>,
}

impl MomentProbe {
    pub fn any_stable(&self) -> Option<f64> {
        self.theta_grid
            .iter()
            .zip(&self.stable)
            .filter(|(_, &s)| s)
            .map(|(&t, _)| t)
            .last()
    }
}

fn check_grid(theta_grid: &[f64]) -> Result<()> {
    if theta_grid.is_empty() || theta_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::domain("theta grid must be non-empty and positive"));
    }
    if theta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("theta grid must be strictly increasing"));
    }
    Ok(())
}

fn probe(theta_grid: &[f64], log_term: impl Fn(f64, f64) -> f64 + Sync, samples: &[f64]) -> MomentProbe {
    let rows: Vec<Stability> = theta_grid
        .par_iter()
        .map(|&theta| {
            let terms: Vec<f64> = samples.iter().map(|&x| log_term(theta, x)).collect();
            stability(&terms)
        })
        .collect();
    let mut stable: Vec<bool> = rows.iter().map(|r| r.stable).collect();
    close_upward(&mut stable);
    MomentProbe {
        theta_grid: theta_grid.to_vec(),
        estimates: rows.iter().map(|r| r.log_estimate.exp()).collect(),
        stable,
        growth: rows.iter().map(|r| r.growth).collect(),
        max_share: rows.iter().map(|r| r.max_share).collect(),
    }
}

/// `E[exp(theta X)]` over the grid with split-half stability flags.
pub fn mgf_probe(tail: &EmpiricalTail, theta_grid: &[f64]) -> Result<MomentProbe> {
    check_grid(theta_grid)?;
    Ok(probe(theta_grid, |t, x| t * x, tail.samples()))
}

/// `E[X^theta]` for non-negative samples.
pub fn moment_probe(tail: &EmpiricalTail, theta_grid: &[f64]) -> Result<MomentProbe> {
    check_grid(theta_grid)?;
    if tail.samples()[0] < 0.0 {
        return Err(Error::domain("moment probe needs non-negative samples"));
    }
    Ok(probe(theta_grid, |t, x| t * x.ln(), tail.samples()))
}

/// Hill estimate of the tail index from the top `k` order statistics.
pub fn hill(tail: &EmpiricalTail, k: usize) -> Result<f64> {
    let n = tail.n();
    if k < 10 || 2 * k >= n {
        return Err(Error::contract(format!("hill needs 10 <= k < n/2, got k={k}, n={n}")));
    }
    let s = tail.samples();
    let threshold = s[n - k - 1];
    if !(threshold > 0.0) {
        return Err(Error::domain("non-positive order statistic in the Hill window"));
    }
    let mut acc = stats::KahanSum::new();
    for &x in &s[n - k..] {
        acc.add((x / threshold).ln());
    }
    let total = acc.value();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::domain("Hill log-spacings are zero or non-finite"));
    }
    Ok(k as f64 / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightVerdict {
    Light,
    Heavy,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightTailReport {
    pub verdict: LightVerdict,
    pub slope_x: f64,
    pub r2_x: f64,
    pub slope_log_x: f64,
    pub r2_log_x: f64,
    /// Largest stable theta in the MGF grid.
    pub mgf_theta: Option<f64>,
    pub top_decade_points: usize,
}

/// Exponential-vs-polynomial tail fit over the top decade of probability mass.
pub fn light_tail_test(tail: &EmpiricalTail) -> Result<LightTailReport> {
    let n = tail.n();
    if n < 10_000 {
        return Err(Error::contract(format!("light-tail test needs n >= 10^4, got {n}")));
    }
    let q90 = tail.quantile(0.9);
    let top = tail.exceedances(q90);
    let mut report = LightTailReport {
        verdict: LightVerdict::Inconclusive,
        slope_x: f64::NAN,
        r2_x: f64::NAN,
        slope_log_x: f64::NAN,
        r2_log_x: f64::NAN,
        mgf_theta: None,
        top_decade_points: top,
    };
    if top < 100 {
        return Ok(report);
    }
    let p_min = 30.0 / n as f64;
    let levels = stats::log_grid(0.1, p_min, 40);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &p in &levels {
        let x = tail.quantile(1.0 - p);
        if xs.last().is_some_and(|&last| x <= last) {
            continue;
        }
        xs.push(x);
        ys.push(p.ln());
    }
    if xs.len() < 5 {
        return Ok(report);
    }
    let fit_x = stats::ols(&xs, &ys);
    report.slope_x = fit_x.slope;
    report.r2_x = fit_x.r2;
    if xs[0] > 0.0 {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let fit_l = stats::ols(&lx, &ys);
        report.slope_log_x = fit_l.slope;
        report.r2_log_x = fit_l.r2;
    } else {
        report.r2_log_x = 0.0;
    }
    report.mgf_theta = mgf_probe(tail, &theta_grid())?.any_stable();
    report.verdict = if report.r2_log_x > report.r2_x {
        LightVerdict::Heavy
    } else if fit_x.slope < 0.0 && report.mgf_theta.is_some() {
        LightVerdict::Light
    } else {
        LightVerdict::Inconclusive
    };
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Bounded,
    Vanishing,
    Diverging,
    Unit,
}

impl Trend {
    /// `limsup ratio < infinity`.
    pub fn is_o_bounded(self) -> bool {
        !matches!(self, Trend::Diverging)
    }
}

/// Thresholds for classifying ratio trends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub slope_threshold: f64,
    pub resamples: usize,
    pub level: f64,
    pub grid_points: usize,
    pub min_exceedances: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            slope_threshold: 0.1,
            resamples: 200,
            level: 0.95,
            grid_points: 20,
            min_exceedances: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub x_grid: Vec<f64>,
    pub ratio: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub trend: Trend,
    /// Slope of `ln ratio` against `ln x` over the top half of the grid.
    pub slope: f64,
    /// Mean ratio over the top half of the grid.
    pub asymptote: f64,
    pub asymptote_ci: (f64, f64),
}

/// Bootstrap replicates of exceedance counts at each grid level, drawn as a
/// multinomial over the bins the grid induces.
fn bootstrap_exceedances(
    tail: &EmpiricalTail,
    grid: &[f64],
    stream: &RandomStream,
    resamples: usize,
) -> Vec<Vec<f64>> {
    let n = tail.n();
    let counts: Vec<usize> = grid.iter().map(|&x| tail.exceedances(x)).collect();
    // bins[0] = below grid[0]; bins[i] = (grid[i-1], grid[i]]; last = above grid.
    let mut bins = Vec::with_capacity(grid.len() + 1);
    bins.push(n - counts[0]);
    for i in 1..grid.len() {
        bins.push(counts[i - 1] - counts[i]);
    }
    bins.push(counts[grid.len() - 1]);
    let base = stream.derive("bootstrap");
    (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = base.substream(b as u64);
            let mut remaining = n as u64;
            let mut mass_left = n as f64;
            let mut drawn = Vec::with_capacity(bins.len());
            for &c in &bins {
                let k = if remaining == 0 || c == 0 {
                    0
                } else if c as f64 >= mass_left {
                    remaining
                } else {
                    let p = (c as f64 / mass_left).clamp(0.0, 1.0);
                    Binomial::new(remaining, p).expect("valid binomial").sample(&mut rng)
                };
                drawn.push(k);
                remaining -= k;
                mass_left -= c as f64;
            }
            // Exceedance counts are tail sums of the bin counts.
            let mut out = vec![0.0; grid.len()];
            let mut acc = drawn[grid.len()];
            for i in (0..grid.len()).rev() {
                out[i] = acc as f64 / n as f64;
                acc += drawn[i];
            }
            out
        })
        .collect()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    stats::quantile_sorted(sorted, p)
}

/// Ratio of the empirical tail to a reference tail with bootstrap bands and a trend label.
pub fn ratio_probe(
    num: &EmpiricalTail,
    ref_tail: &dyn Fn(f64) -> f64,
    x_grid: &[f64],
    stream: &RandomStream,
    cfg: &TrendConfig,
) -> Result<RatioCurve> {
    if x_grid.len() < 2 {
        return Err(Error::contract("ratio grid needs at least two points"));
    }
    if x_grid.windows(2).any(|w| w[0] >= w[1]) || x_grid[0] <= 0.0 {
        return Err(Error::contract("ratio grid must be positive and strictly increasing"));
    }
    let top = *x_grid.last().expect("non-empty");
    if num.exceedances(top) < cfg.min_exceedances {
        return Err(Error::contract(format!(
            "only {} exceedances at the largest grid point {top}; need {}",
            num.exceedances(top),
            cfg.min_exceedances
        )));
    }
    let refs: Vec<f64> = x_grid.iter().map(|&x| ref_tail(x)).collect();
    let ratio: Vec<f64> = x_grid
        .iter()
        .zip(&refs)
        .map(|(&x, &r)| num.sf(x) / r)
        .collect();
    let reps = bootstrap_exceedances(num, x_grid, stream, cfg.resamples);
    let alpha = (1.0 - cfg.level) / 2.0;
    let m = x_grid.len();
    let half = m / 2;
    let mut ci_lo = Vec::with_capacity(m);
    let mut ci_hi = Vec::with_capacity(m);
    for i in 0..m {
        let col: Vec<f64> = stats::sorted(&reps.iter().map(|r| r[i] / refs[i]).collect::<Vec<_>>());
        ci_lo.push(percentile(&col, alpha));
        ci_hi.push(percentile(&col, 1.0 - alpha));
    }
    let ci_halfwidth = ci_lo.iter().zip(&ci_hi).map(|(l, h)| 0.5 * (h - l)).collect();

    // Weights follow the exceedance counts: the variance of ln(sf) is about 1/count.
    let weights: Vec<f64> = x_grid[half..].iter().map(|&x| num.exceedances(x) as f64).collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = x_grid[half..]
        .iter()
        .zip(&ratio[half..])
        .map(|(x, r)| (x.ln(), r.ln()))
        .unzip();
    let slope = if ly.iter().all(|v| v.is_finite()) {
        stats::wls(&lx, &ly, &weights).slope
    } else if ly.iter().any(|v| *v == f64::INFINITY) {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let asymptote = stats::mean(&ratio[half..]);
    let asym_reps = stats::sorted(
        &reps
            .iter()
            .map(|r| stats::mean(&(half..m).map(|i| r[i] / refs[i]).collect::<Vec<_>>()))
            .collect::<Vec<_>>(),
    );
    let asymptote_ci = (percentile(&asym_reps, alpha), percentile(&asym_reps, 1.0 - alpha));
    let trend = if slope > cfg.slope_threshold {
        Trend::Diverging
    } else if slope < -cfg.slope_threshold {
        Trend::Vanishing
    } else if asymptote_ci.0 <= 1.0 && 1.0 <= asymptote_ci.1 {
        Trend::Unit
    } else {
        Trend::Bounded
    };
    Ok(RatioCurve {
        x_grid: x_grid.to_vec(),
        ratio,
        ci_lo,
        ci_hi,
        ci_halfwidth,
        trend,
        slope,
        asymptote,
        asymptote_ci,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeftTail {
    ExpBounded,
    PolyBounded,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeftTailReport {
    pub exp_bounded: bool,
    pub poly_bounded: bool,
    pub verdict: LeftTail,
    pub slope_exp: f64,
    pub slope_poly: f64,
}

/// Trends of `P(X < 1/x) e^{theta x}` and `P(X < 1/x) x^theta` as `x` grows.
pub fn left_tail_probe(tail: &EmpiricalTail, theta: f64, cfg: &TrendConfig) -> Result<LeftTailReport> {
    let s = tail.samples();
    if s[0] <= 0.0 {
        return Err(Error::domain("left-tail probe needs strictly positive samples"));
    }
    let n = tail.n();
    let lo = 1.0 / tail.quantile(0.5);
    let kth = s[(cfg.min_exceedances.min(n) - 1).min(n - 1)];
    let hi = 1.0 / kth;
    let trivially = LeftTailReport {
        exp_bounded: true,
        poly_bounded: true,
        verdict: LeftTail::ExpBounded,
        slope_exp: f64::NEG_INFINITY,
        slope_poly: f64::NEG_INFINITY,
    };
    if !(hi > lo * (1.0 + 1e-9)) {
        // No mass below 1/x beyond the median level: probabilities vanish.
        return Ok(trivially);
    }
    let grid = stats::log_grid(lo, hi, cfg.grid_points);
    let mut pts = Vec::new();
    for &x in &grid {
        let p = stats::count_at_most(s, 1.0 / x) as f64 / n as f64;
        let p_strict = s.partition_point(|&v| v < 1.0 / x) as f64 / n as f64;
        if p_strict > 0.0 {
            pts.push((x, p_strict.min(p)));
        }
    }
    if pts.len() < 3 {
        return Ok(trivially);
    }
    let half = pts.len() / 2;
    let top = &pts[half..];
    let lx: Vec<f64> = top.iter().map(|(x, _)| x.ln()).collect();
    let le: Vec<f64> = top.iter().map(|(x, p)| p.ln() + theta * x).collect();
    let lp: Vec<f64> = top.iter().map(|(x, p)| p.ln() + theta * x.ln()).collect();
    let slope_exp = stats::ols(&lx, &le).slope;
    let slope_poly = stats::ols(&lx, &lp).slope;
    let exp_bounded = slope_exp <= cfg.slope_threshold;
    let poly_bounded = slope_poly <= cfg.slope_threshold;
    let verdict = if exp_bounded {
        LeftTail::ExpBounded
    } else if poly_bounded {
        LeftTail::PolyBounded
    } else {
        LeftTail::Neither
    };
    Ok(LeftTailReport {
        exp_bounded,
        poly_bounded,
        verdict,
        slope_exp,
        slope_poly,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finiteness {
    Finite,
    Divergent,
}

/// Implication edges between the numbered moment conditions.
pub const CONDITION_EDGES: [(u8, u8); 10] = [
    (5, 4),
    (4, 1),
    (1, 0),
    (0, 1),
    (3, 2),
    (2, 1),
    (0, 6),
    (6, 0),
    (4, 7),
    (7, 4),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: u8,
    pub theta: f64,
    pub log_estimate: f64,
    pub growth: f64,
    pub max_share: f64,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_values: BTreeMap<u8, Finiteness>,
    pub dag_consistent: bool,
    /// Largest stable theta per condition.
    pub theta_witness: BTreeMap<u8, Option<f64>>,
    pub violated_edges: Vec<(u8, u8)>,
    pub rows: Vec<ConditionRow>,
}

/// Log of the integrand of condition `id` at `theta` for one draw with effective power `p`.
fn condition_log_term(id: u8, theta: f64, p: f64, d: &ChannelDraw, dim: f64) -> f64 {
    match id {
        0 => theta * (p * d.lambda_max).ln_1p(),
        1 => theta * (p * d.trace).ln_1p(),
        2 => theta * (dim + p * d.trace).ln(),
        3 => {
            let v: Vec<f64> = d.eigs.iter().map(|l| p * l).collect();
            theta * logsumexp(&v)
        }
        4 => theta * p * d.lambda_max,
        5 => {
            let v: Vec<f64> = d.eigs.iter().map(|l| theta * p * l).collect();
            logsumexp(&v)
        }
        6 => theta * (p * d.lambda_max).ln(),
        7 => theta * p * d.trace,
        _ => unreachable!("conditions are numbered 0..=7"),
    }
}

/// Evaluates all eight conditions on pre-drawn coherence periods.
pub fn condition_chain_from_draws(draws: &[ChannelDraw], params: &CapacityParams) -> ConditionReport {
    let grid = theta_grid();
    let snr = params.rho / params.n_t as f64;
    let dim = draws.first().map(|d| d.eigs.len() as f64).unwrap_or(1.0);
    let cells: Vec<(u8, f64)> = (0u8..8)
        .flat_map(|id| grid.iter().map(move |&t| (id, t)))
        .collect();
    let results: Vec<Stability> = cells
        .par_iter()
        .map(|&(id, theta)| {
            let terms: Vec<f64> = draws
                .iter()
                .map(|d| condition_log_term(id, theta, snr * d.power, d, dim))
                .collect();
            stability(&terms)
        })
        .collect();
    let mut rows = Vec::with_capacity(cells.len());
    let mut values = BTreeMap::new();
    let mut witness = BTreeMap::new();
    for id in 0u8..8 {
        let mut stable: Vec<bool> = Vec::with_capacity(grid.len());
        let start = rows.len();
        for (k, &theta) in grid.iter().enumerate() {
            let r = results[id as usize * grid.len() + k];
            stable.push(r.stable);
            rows.push(ConditionRow {
                condition: id,
                theta,
                log_estimate: r.log_estimate,
                growth: r.growth,
                max_share: r.max_share,
                stable: r.stable,
            });
        }
        close_upward(&mut stable);
        for (k, s) in stable.iter().enumerate() {
            rows[start + k].stable = *s;
        }
        let best = grid.iter().zip(&stable).filter(|(_, &s)| s).map(|(&t, _)| t).last();
        values.insert(id, if best.is_some() { Finiteness::Finite } else { Finiteness::Divergent });
        witness.insert(id, best);
    }
    let violated_edges: Vec<(u8, u8)> = CONDITION_EDGES
        .iter()
        .copied()
        .filter(|(a, b)| values[a] == Finiteness::Finite && values[b] == Finiteness::Divergent)
        .collect();
    ConditionReport {
        condition_values: values,
        dag_consistent: violated_edges.is_empty(),
        theta_witness: witness,
        violated_edges,
        rows,
    }
}

/// Draws `n` coherence periods and evaluates the condition chain.
pub fn condition_chain_eval(
    model: &ChannelModel,
    power_law: &DistributionSpec,
    params: &CapacityParams,
    stream: &RandomStream,
    n: usize,
) -> Result<ConditionReport> {
    if n < 100_000 {
        return Err(Error::contract(format!("condition chain needs n >= 10^5, got {n}")));
    }
    params.validate()?;
    let draws = sample_draws(model, power_law, stream, n)?;
    Ok(condition_chain_from_draws(&draws, params))
}

/// Agreement of the capacity light-tail verdict with polynomial tail bounds on
/// the effective `p * lambda_max` and `p * Tr[HH*]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub capacity: LightTailReport,
    pub lambda_max_theta: Option<f64>,
    pub trace_theta: Option<f64>,
    pub agree: bool,
}

/// Exponents probed for polynomial tail bounds. Exponents below the trend
/// threshold cannot be told apart from zero, so the grid starts at 1/4.
pub fn polynomial_theta_grid() -> Vec<f64> {
    (-2..=3).map(|k| 2f64.powi(k)).collect()
}

fn polynomial_bound_theta(
    samples: Vec<f64>,
    stream: &RandomStream,
    cfg: &TrendConfig,
) -> Result<Option<f64>> {
    let tail = EmpiricalTail::new(samples)?;
    let grid = tail.auto_grid(cfg.grid_points, cfg.min_exceedances)?;
    let mut found = None;
    for (k, theta) in polynomial_theta_grid().into_iter().enumerate() {
        let curve = ratio_probe(&tail, &|x: f64| x.powf(-theta), &grid, &stream.substream(k as u64), cfg)?;
        if curve.trend.is_o_bounded() {
            found = Some(theta);
        }
    }
    Ok(found)
}

pub fn capacity_power_concordance(
    model: &ChannelModel,
    power_law: &DistributionSpec,
    params: &CapacityParams,
    stream: &RandomStream,
    n: usize,
) -> Result<ConcordanceReport> {
    let caps = sample_capacity(model, power_law, params, stream, n)?;
    let cfg = TrendConfig::default();
    let snr = params.rho / params.n_t as f64;
    let cap_tail = EmpiricalTail::new(caps.iter().map(|c| c.c).collect())?;
    let capacity = light_tail_test(&cap_tail)?;
    let lmax: Vec<f64> = caps.iter().map(|c| snr * c.power * c.lambda_max).collect();
    let tr: Vec<f64> = caps.iter().map(|c| snr * c.power * c.trace).collect();
    let lambda_max_theta = polynomial_bound_theta(lmax, &stream.derive("lmax"), &cfg)?;
    let trace_theta = polynomial_bound_theta(tr, &stream.derive("trace"), &cfg)?;
    let light = capacity.verdict == LightVerdict::Light;
    let agree = light == lambda_max_theta.is_some() && light == trace_theta.is_some();
    Ok(ConcordanceReport {
        capacity,
        lambda_max_theta,
        trace_theta,
        agree,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    Product,
    Sum,
}

/// Tail of `X1 * X2` or `X1 + X2` against the tail of `X1`, with the split of the
/// tail probability at `phi(x) = x^alpha` into the dominant and residual parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticReport {
    pub operation: Arithmetic,
    pub spec1: DistributionSpec,
    pub spec2: DistributionSpec,
    pub phi_alpha: f64,
    pub curve: RatioCurve,
    /// `E[F1(x / X2) 1{X2 <= x^alpha}]` (product) or `E[F1(x - X2) 1{X2 <= x^alpha}]` (sum).
    pub dominant_mass: Vec<f64>,
    /// `P(X2 > x^alpha)`.
    pub residual_mass: Vec<f64>,
    /// Residual mass relative to the empirical tail of the combination.
    pub residual_share: Vec<f64>,
}

/// Minimum sample size for product and sum experiments.
pub const ARITHMETIC_MIN_N: usize = 1_000_000;

fn arithmetic_experiment(
    op: Arithmetic,
    spec1: &DistributionSpec,
    spec2: &DistributionSpec,
    phi_alpha: f64,
    stream: &RandomStream,
    n: usize,
    cfg: &TrendConfig,
) -> Result<ArithmeticReport> {
    if !(phi_alpha > 0.0 && phi_alpha < 1.0) {
        return Err(Error::param(format!("phi exponent must lie in (0, 1), got {phi_alpha}")));
    }
    if n < ARITHMETIC_MIN_N {
        return Err(Error::contract(format!("tail arithmetic needs n >= 10^6, got {n}")));
    }
    let x1 = spec1.sample(&mut stream.derive("x1"), n)?;
    let x2 = spec2.sample(&mut stream.derive("x2"), n)?;
    let z: Vec<f64> = match op {
        Arithmetic::Product => x1.iter().zip(&x2).map(|(a, b)| a * b).collect(),
        Arithmetic::Sum => x1.iter().zip(&x2).map(|(a, b)| a + b).collect(),
    };
    let tail = EmpiricalTail::new(z)?;
    let grid = tail.auto_grid(cfg.grid_points, cfg.min_exceedances)?;
    let curve = ratio_probe(&tail, &|x| spec1.sf(x), &grid, &stream.derive("ratio"), cfg)?;
    let split: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&x| {
            let cut = x.powf(phi_alpha);
            let mut dom = stats::KahanSum::new();
            let mut above = 0usize;
            for &b in &x2 {
                if b > cut {
                    above += 1;
                } else {
                    let v = match op {
                        Arithmetic::Product => spec1.sf(x / b),
                        Arithmetic::Sum => spec1.sf(x - b),
                    };
                    dom.add(v);
                }
            }
            (dom.value() / n as f64, above as f64 / n as f64)
        })
        .collect();
    let dominant_mass: Vec<f64> = split.iter().map(|s| s.0).collect();
    let residual_mass: Vec<f64> = split.iter().map(|s| s.1).collect();
    let residual_share = residual_mass
        .iter()
        .zip(&grid)
        .map(|(r, &x)| r / tail.sf(x))
        .collect();
    Ok(ArithmeticReport {
        operation: op,
        spec1: spec1.clone(),
        spec2: spec2.clone(),
        phi_alpha,
        curve,
        dominant_mass,
        residual_mass,
        residual_share,
    })
}

pub fn product_tail_experiment(
    spec1: &DistributionSpec,
    spec2: &DistributionSpec,
    phi_alpha: f64,
    stream: &RandomStream,
    n: usize,
    cfg: &TrendConfig,
) -> Result<ArithmeticReport> {
    arithmetic_experiment(Arithmetic::Product, spec1, spec2, phi_alpha, stream, n, cfg)
}

pub fn sum_tail_experiment(
    spec1: &DistributionSpec,
    spec2: &DistributionSpec,
    phi_alpha: f64,
    stream: &RandomStream,
    n: usize,
    cfg: &TrendConfig,
) -> Result<ArithmeticReport> {
    arithmetic_experiment(Arithmetic::Sum, spec1, spec2, phi_alpha, stream, n, cfg)
}

/// Named representative pair for one case of the tail-composition table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionPreset {
    pub name: &'static str,
    pub operation: Arithmetic,
    pub spec1: DistributionSpec,
    pub spec2: DistributionSpec,
    pub expected: Trend,
}

pub const COMPOSITION_PRESETS: [&str; 8] =
    ["L2-1a", "L2-1b", "L2-2a", "L2-2b", "L2-3a", "L2-3b", "L2-4a", "L2-4b"];

pub fn composition_preset(name: &str) -> Option<CompositionPreset> {
    use DistributionSpec::*;
    let ln = Lognormal { mu: 0.0, sigma: 1.0 };
    let exp = Exponential { rate: 1.0 };
    let p = |alpha| ParetoI { alpha, xm: 1.0 };
    let (name, operation, spec1, spec2, expected) = match name {
        "L2-1a" => ("L2-1a", Arithmetic::Sum, ln, exp, Trend::Unit),
        "L2-1b" => ("L2-1b", Arithmetic::Sum, ln, p(8.0), Trend::Unit),
        "L2-2a" => ("L2-2a", Arithmetic::Product, LogPareto { alpha: 1.0, xm: 1.0 }, exp, Trend::Unit),
        "L2-2b" => ("L2-2b", Arithmetic::Sum, p(2.0), p(5.0), Trend::Unit),
        "L2-3a" => ("L2-3a", Arithmetic::Product, p(2.0), exp, Trend::Bounded),
        "L2-3b" => ("L2-3b", Arithmetic::Product, p(2.0), p(5.0), Trend::Bounded),
        "L2-4a" => ("L2-4a", Arithmetic::Product, exp.clone(), exp, Trend::Diverging),
        "L2-4b" => ("L2-4b", Arithmetic::Product, exp, p(3.0), Trend::Diverging),
        _ => return None,
    };
    Some(CompositionPreset {
        name,
        operation,
        spec1,
        spec2,
        expected,
    })
}

/// Empirical tail probabilities with a simultaneous (sup-t) bootstrap band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBand {
    pub x_grid: Vec<f64>,
    pub empirical: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub fn simultaneous_tail_band(
    tail: &EmpiricalTail,
    grid: &[f64],
    stream: &RandomStream,
    resamples: usize,
    level: f64,
) -> TailBand {
    let reps = bootstrap_exceedances(tail, grid, stream, resamples);
    let empirical: Vec<f64> = grid.iter().map(|&x| tail.sf(x)).collect();
    let sd: Vec<f64> = (0..grid.len())
        .map(|i| {
            let col: Vec<f64> = reps.iter().map(|r| r[i]).collect();
            stats::variance(&col).sqrt().max(f64::MIN_POSITIVE)
        })
        .collect();
    let sup: Vec<f64> = stats::sorted(
        &reps
            .iter()
            .map(|r| {
                (0..grid.len())
                    .map(|i| (r[i] - empirical[i]).abs() / sd[i])
                    .fold(0.0, f64::max)
            })
            .collect::<Vec<_>>(),
    );
    let c = stats::quantile_sorted(&sup, level);
    TailBand {
        x_grid: grid.to_vec(),
        lo: empirical.iter().zip(&sd).map(|(e, s)| e - c * s).collect(),
        hi: empirical.iter().zip(&sd).map(|(e, s)| e + c * s).collect(),
        empirical,
    }
}

/// Comonotone closure: for `N` comonotone copies of `X`, the sum has tail
/// `F(x / N)` and the product has tail `F(x^{1/N})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub sum: TailBand,
    pub sum_theory: Vec<f64>,
    pub sum_ok: bool,
    pub product: TailBand,
    pub product_theory: Vec<f64>,
    pub product_ok: bool,
}

pub fn comonotone_closure(
    spec: &DistributionSpec,
    copies: usize,
    stream: &RandomStream,
    n: usize,
    grid_points: usize,
) -> Result<ClosureReport> {
    if copies < 2 {
        return Err(Error::contract("comonotone closure needs at least two copies"));
    }
    let u = sample_copula(&CopulaSpec::Comonotone { dim: copies }, &stream.derive("copula"), n)?;
    let marginals = vec![spec.clone(); copies];
    let x = norta(&u, &marginals)?;
    let sums: Vec<f64> = x.rows().map(|r| r.iter().sum()).collect();
    let prods: Vec<f64> = x.rows().map(|r| r.iter().product()).collect();
    let nf = copies as f64;
    let check = |vals: Vec<f64>, theory: &dyn Fn(f64) -> f64, label: &str| -> Result<(TailBand, Vec<f64>, bool)> {
        let tail = EmpiricalTail::new(vals)?;
        let grid = tail.auto_grid(grid_points, 50)?;
        let band = simultaneous_tail_band(&tail, &grid, &stream.derive(label), 200, 0.95);
        let th: Vec<f64> = grid.iter().map(|&g| theory(g)).collect();
        let ok = th
            .iter()
            .zip(band.lo.iter().zip(&band.hi))
            .all(|(t, (l, h))| *l <= *t && *t <= *h);
        Ok((band, th, ok))
    };
    let (sum, sum_theory, sum_ok) = check(sums, &|g| spec.sf(g / nf), "sum")?;
    let (product, product_theory, product_ok) = check(prods, &|g| spec.sf(g.powf(1.0 / nf)), "product")?;
    Ok(ClosureReport {
        sum,
        sum_theory,
        sum_ok,
        product,
        product_theory,
        product_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Csit;
    use proptest::prelude::*;

    fn draws(spec: &DistributionSpec, label: &str, n: usize) -> EmpiricalTail {
        EmpiricalTail::new(spec.sample(&mut RandomStream::new(2024, label), n).unwrap()).unwrap()
    }

    /// `E[ln(1 + E/u)]` for `E ~ Exp(1)` by midpoint quadrature; the Hill estimate
    /// on exponential data converges to its reciprocal at threshold `u`.
    fn exp_hill_oracle(u: f64) -> f64 {
        let n = 400_000;
        let h = 60.0 / n as f64;
        let s: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (-t).exp() * (t / u).ln_1p()
            })
            .sum();
        1.0 / (s * h)
    }

    #[test]
    fn hill_pareto_and_mle_agree() {
        let tail = draws(&DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 }, "hill-p2", 100_000);
        let a = hill(&tail, 1000).unwrap();
        assert!((a - 2.0).abs() <= 0.15, "{a}");
        // Conditional Pareto MLE on the same window.
        let s = tail.samples();
        let thr = s[s.len() - 1001];
        let mle = 1000.0 / s[s.len() - 1000..].iter().map(|x| (x / thr).ln()).sum::<f64>();
        assert!((a - mle).abs() < 1e-12);
    }

    #[test]
    fn hill_exponential_is_large() {
        let oracle = exp_hill_oracle(100f64.ln());
        assert!(oracle > 5.0 && oracle < 6.0, "{oracle}");
        let tail = draws(&DistributionSpec::Exponential { rate: 1.0 }, "hill-exp", 100_000);
        let a = hill(&tail, 1000).unwrap();
        assert!(a > 5.0, "{a}");
        assert!((a - oracle).abs() < 4.0 * oracle / 1000f64.sqrt());
    }

    #[test]
    fn hill_constant_is_domain_error() {
        let tail = EmpiricalTail::new(vec![1.0; 1000]).unwrap();
        assert!(matches!(hill(&tail, 100), Err(Error::Domain(_))));
        assert!(matches!(hill(&tail, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn mgf_exponential_half() {
        let tail = draws(&DistributionSpec::Exponential { rate: 1.0 }, "mgf-exp", 1_000_000);
        let p = mgf_probe(&tail, &[0.5]).unwrap();
        assert!((p.estimates[0] - 2.0).abs() < 0.05, "{}", p.estimates[0]);
        assert!(p.stable[0]);
    }

    #[test]
    fn mgf_pareto_unstable_at_every_theta() {
        let tail = draws(&DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 }, "mgf-p", 1_000_000);
        let p = mgf_probe(&tail, &[0.25, 0.5, 1.0, 2.0]).unwrap();
        assert!(p.stable.iter().all(|s| !s), "{p:?}");
    }

    #[test]
    fn mgf_squared_normal_product_unstable() {
        let mut a = RandomStream::new(7, "z1");
        let mut b = RandomStream::new(7, "z2");
        let z = DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 };
        // ln of a lognormal(0,1) draw is a standard normal draw.
        let v: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let x = z.draw(&mut a).ln();
                let y = z.draw(&mut b).ln();
                (x * y).powi(2)
            })
            .collect();
        let p = mgf_probe(&EmpiricalTail::new(v).unwrap(), &[0.5]).unwrap();
        assert!(!p.stable[0]);
    }

    #[test]
    fn light_tail_verdicts() {
        let pareto = draws(&DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 }, "lt-p", 100_000);
        assert_eq!(light_tail_test(&pareto).unwrap().verdict, LightVerdict::Heavy);
        let exp = draws(&DistributionSpec::Exponential { rate: 1.0 }, "lt-e", 100_000);
        assert_eq!(light_tail_test(&exp).unwrap().verdict, LightVerdict::Light);
        let few = draws(&DistributionSpec::Exponential { rate: 1.0 }, "lt-f", 1000);
        assert!(matches!(light_tail_test(&few), Err(Error::Contract(_))));
        let ties = EmpiricalTail::new(vec![1.0; 20_000]).unwrap();
        assert_eq!(light_tail_test(&ties).unwrap().verdict, LightVerdict::Inconclusive);
    }

    #[test]
    fn capacity_light_for_rayleigh_and_lognormal() {
        let p = CapacityParams::new(1.0, 10.0, 2, Csit::Unknown);
        let m = ChannelModel::new(2, 2, DistributionSpec::Rayleigh { sigma: std::f64::consts::FRAC_1_SQRT_2 });
        let one = DistributionSpec::Constant { v: 1.0 };
        let c = sample_capacity(&m, &one, &p, &RandomStream::new(1, "cap-r"), 100_000).unwrap();
        let t = EmpiricalTail::new(c.iter().map(|s| s.c).collect()).unwrap();
        assert_eq!(light_tail_test(&t).unwrap().verdict, LightVerdict::Light);
        let p1 = CapacityParams::new(1.0, 10.0, 1, Csit::Unknown);
        let m1 = ChannelModel::new(1, 1, DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 });
        let c = sample_capacity(&m1, &one, &p1, &RandomStream::new(1, "cap-ln"), 100_000).unwrap();
        let t = EmpiricalTail::new(c.iter().map(|s| s.c).collect()).unwrap();
        assert_eq!(light_tail_test(&t).unwrap().verdict, LightVerdict::Light);
    }

    #[test]
    fn ratio_probe_examples() {
        let cfg = TrendConfig::default();
        let s = RandomStream::new(3, "ratio");
        let pareto = draws(&DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 }, "rp-p", 1_000_000);
        let grid = pareto.auto_grid(20, 50).unwrap();
        let c = ratio_probe(&pareto, &|x| x.powi(-2), &grid, &s, &cfg).unwrap();
        assert!(matches!(c.trend, Trend::Bounded | Trend::Unit), "{:?}", c.trend);
        let exp = draws(&DistributionSpec::Exponential { rate: 1.0 }, "rp-e", 1_000_000);
        let grid = exp.auto_grid(20, 50).unwrap();
        let c = ratio_probe(&exp, &|x| x.powi(-2), &grid, &s, &cfg).unwrap();
        assert_eq!(c.trend, Trend::Vanishing);
        // Too few exceedances at the top of the grid.
        let bad = [1.0, 10.0, 1e6];
        assert!(matches!(ratio_probe(&exp, &|x| x.powi(-2), &bad, &s, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn product_pareto_exponential_bounded_near_two() {
        let s = RandomStream::new(5, "prod");
        let r = product_tail_experiment(
            &DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 },
            &DistributionSpec::Exponential { rate: 1.0 },
            0.5,
            &s,
            1_000_000,
            &TrendConfig::default(),
        )
        .unwrap();
        assert_eq!(r.curve.trend, Trend::Bounded);
        assert!((r.curve.asymptote - 2.0).abs() < 0.4, "{}", r.curve.asymptote);
        // The residual part of the split is negligible at the top of the grid.
        assert!(*r.residual_share.last().unwrap() < 1e-3);
    }

    #[test]
    fn product_with_unit_constant_is_identity() {
        let s = RandomStream::new(6, "prod-c");
        let r = product_tail_experiment(
            &DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 },
            &DistributionSpec::Constant { v: 1.0 },
            0.5,
            &s,
            1_000_000,
            &TrendConfig::default(),
        )
        .unwrap();
        assert!(matches!(r.curve.trend, Trend::Unit | Trend::Bounded), "{:?}", r.curve);
        assert!((r.curve.asymptote - 1.0).abs() < 0.1);
    }

    #[test]
    fn sum_with_zero_constant_is_unit() {
        let s = RandomStream::new(8, "sum-0");
        let r = sum_tail_experiment(
            &DistributionSpec::Exponential { rate: 1.0 },
            &DistributionSpec::Constant { v: 0.0 },
            0.5,
            &s,
            1_000_000,
            &TrendConfig::default(),
        )
        .unwrap();
        assert_eq!(r.curve.trend, Trend::Unit);
    }

    #[test]
    fn arithmetic_rejects_bad_inputs() {
        let s = RandomStream::new(8, "bad");
        let e = DistributionSpec::Exponential { rate: 1.0 };
        let cfg = TrendConfig::default();
        assert!(matches!(
            product_tail_experiment(&e, &e, 1.5, &s, 1_000_000, &cfg),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(product_tail_experiment(&e, &e, 0.5, &s, 1000, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn composition_presets_resolve() {
        for name in COMPOSITION_PRESETS {
            let p = composition_preset(name).unwrap();
            assert_eq!(p.name, name);
            p.spec1.validate().unwrap();
            p.spec2.validate().unwrap();
        }
        assert!(composition_preset("L2-9z").is_none());
    }

    #[test]
    fn left_tail_examples() {
        let cfg = TrendConfig::default();
        let u = draws(&DistributionSpec::Uniform { a: 0.0, b: 1.0 }, "lt-u", 100_000);
        let r = left_tail_probe(&u, 1.0, &cfg).unwrap();
        assert_eq!(r.verdict, LeftTail::PolyBounded, "{r:?}");
        let ln = draws(&DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 }, "lt-ln", 100_000);
        // Local log-slope of Phi(-ln x) at the top of the grid is about -3.5,
        // so exponents up to 2 are resolvable at this sample size.
        for theta in [0.5, 1.0, 2.0] {
            assert!(left_tail_probe(&ln, theta, &cfg).unwrap().poly_bounded);
        }
        let c = EmpiricalTail::new(vec![1.0; 1000]).unwrap();
        let r = left_tail_probe(&c, 1.0, &cfg).unwrap();
        assert!(r.exp_bounded && r.poly_bounded);
        let neg = EmpiricalTail::new(vec![-1.0, 1.0]).unwrap();
        assert!(matches!(left_tail_probe(&neg, 1.0, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn condition_chain_rayleigh_and_constant() {
        let p = CapacityParams::new(1.0, 10.0, 2, Csit::Unknown);
        let m = ChannelModel::new(2, 2, DistributionSpec::Rayleigh { sigma: std::f64::consts::FRAC_1_SQRT_2 });
        let one = DistributionSpec::Constant { v: 1.0 };
        let r = condition_chain_eval(&m, &one, &p, &RandomStream::new(4, "chain"), 100_000).unwrap();
        for id in [0u8, 1, 2, 6] {
            assert_eq!(r.condition_values[&id], Finiteness::Finite, "condition {id}");
        }
        assert!(r.dag_consistent, "{:?}", r.violated_edges);

        let mc = ChannelModel::new(2, 2, DistributionSpec::Constant { v: 1.0 });
        let r = condition_chain_eval(&mc, &one, &p, &RandomStream::new(4, "chain-c"), 100_000).unwrap();
        assert!(r.rows.iter().all(|row| row.stable));
        assert!(r.dag_consistent);
        assert!(matches!(
            condition_chain_eval(&mc, &one, &p, &RandomStream::new(4, "x"), 10),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn comonotone_closure_pareto() {
        let r = comonotone_closure(
            &DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 },
            2,
            &RandomStream::new(12, "closure"),
            200_000,
            10,
        )
        .unwrap();
        assert!(r.sum_ok && r.product_ok, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn moment_divergence_is_monotone(alpha in 0.5f64..4.0, seed in any::<u64>()) {
            let tail = EmpiricalTail::new(
                DistributionSpec::ParetoI { alpha, xm: 1.0 }
                    .sample(&mut RandomStream::new(seed, "mono"), 20_000)
                    .unwrap(),
            )
            .unwrap();
            let p = moment_probe(&tail, &theta_grid()).unwrap();
            if let Some(first) = p.stable.iter().position(|s| !s) {
                prop_assert!(p.stable[first..].iter().all(|s| !s));
            }
        }
    }
}
