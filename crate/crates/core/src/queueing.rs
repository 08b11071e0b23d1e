//! Discrete-time Lindley queues fed by parameter processes or channel capacity,
//! backlog statistics and the power-for-dependence trade.
//!
//! Delay is the virtual first-passage time of the work present at slot `t`:
//! the smallest `d` such that everything that arrived by `t` has departed by
//! `t + d`. Departures are the service actually rendered, so idle capacity
//! before `t` does not count towards clearing later arrivals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{capacity_from_eigs, CapacityParams, ChannelModel};
use crate::dependence::{CopulaSpec, ProcessSpec};
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues_hermitian, gram, ComplexMatrix};
use crate::rng::RandomStream;
use crate::stats::{self, t975, KahanSum};

/// Fraction of slots discarded as warmup.
pub const WARMUP_FRACTION: f64 = 0.2;
/// Path groups used for batch-means confidence intervals.
pub const GROUPS: usize = 20;
pub const MIN_PATHS: usize = 200;

fn check_lengths(a: &[f64], s: &[f64]) -> Result<()> {
    if a.len() != s.len() {
        return Err(Error::contract(format!(
            "arrival path has {} slots but service path has {}",
            a.len(),
            s.len()
        )));
    }
    Ok(())
}

/// Backlog after each slot, starting from an empty queue.
pub fn lindley(a: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_lengths(a, s)?;
    let mut b = 0.0f64;
    Ok(a.iter()
        .zip(s)
        .map(|(x, y)| {
            b = (b + x - y).max(0.0);
            b
        })
        .collect())
}

/// `B_t = max(0, max_k sum_{j=k+1..t} (a_j - s_j))`, evaluated directly in `O(T^2)`.
pub fn lindley_max_plus(a: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_lengths(a, s)?;
    Ok((0..a.len())
        .map(|t| {
            let mut best = 0.0f64;
            let mut acc = 0.0;
            for j in (0..=t).rev() {
                acc += a[j] - s[j];
                best = best.max(acc);
            }
            best
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayPath {
    pub delays: Vec<u64>,
    /// Work present at `t` had not fully departed by the horizon; the delay is a lower bound.
    pub censored: Vec<bool>,
}

/// Virtual first-passage delay per slot.
pub fn delay_path(a: &[f64], s: &[f64]) -> Result<DelayPath> {
    let b = lindley(a, s)?;
    Ok(delays_from_backlog(a, &b))
}

fn delays_from_backlog(a: &[f64], b: &[f64]) -> DelayPath {
    let n = a.len();
    // cum[t] = arrivals in slots 0..t (exclusive).
    let mut cum = Vec::with_capacity(n + 1);
    let mut acc = KahanSum::new();
    cum.push(0.0);
    for &x in a {
        acc.add(x);
        cum.push(acc.value());
    }
    let mut delays = Vec::with_capacity(n);
    let mut censored = Vec::with_capacity(n);
    let mut j = 0usize;
    for t in 0..n {
        j = j.max(t);
        // Work at t has departed by j once the backlog at j is made of later arrivals only.
        while j < n {
            let later = cum[j + 1] - cum[t + 1];
            if b[j] <= later * (1.0 + 1e-12) {
                break;
            }
            j += 1;
        }
        if j < n {
            delays.push((j - t) as u64);
            censored.push(false);
        } else {
            delays.push((n - t) as u64);
            censored.push(true);
            j = n - 1;
        }
    }
    DelayPath { delays, censored }
}

/// Service driven by a fading channel: `s_t = slot_duration * C_t` with the
/// entry magnitudes of `H_t` correlated over slots through `temporal_copula`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelService {
    pub model: ChannelModel,
    pub params: CapacityParams,
    pub kappa: f64,
    pub slot_duration: f64,
    pub temporal_copula: CopulaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServiceSpec {
    Process { process: ProcessSpec },
    Channel(ChannelService),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    /// Single-coordinate arrival process in bits per slot.
    pub arrival: ProcessSpec,
    pub service: ServiceSpec,
    #[serde(alias = "T")]
    pub t: usize,
    pub paths: usize,
}

impl QueueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::param("queue horizon T must be at least 1"));
        }
        if self.arrival.coords != 1 || self.arrival.t != self.t {
            return Err(Error::contract("arrival process must have one coordinate and T slots"));
        }
        self.arrival.validate()?;
        match &self.service {
            ServiceSpec::Process { process } => {
                if process.coords != 1 || process.t != self.t {
                    return Err(Error::contract("service process must have one coordinate and T slots"));
                }
                process.validate()
            }
            ServiceSpec::Channel(c) => {
                c.model.validate()?;
                c.params.validate()?;
                c.temporal_copula.validate()?;
                if c.params.n_t != c.model.n_t {
                    return Err(Error::contract("capacity params and channel disagree on n_t"));
                }
                if !(c.kappa > 0.0 && c.kappa.is_finite()) || !(c.slot_duration > 0.0 && c.slot_duration.is_finite()) {
                    return Err(Error::param("kappa and slot_duration must be finite and > 0"));
                }
                if !c.temporal_copula.is_independence() && c.temporal_copula.dim() != self.t {
                    return Err(Error::contract("service copula dimension must equal T"));
                }
                Ok(())
            }
        }
    }
}

/// Per-path eigenvalues of every slot, reusable for any power scale.
struct ChannelPath {
    eigs: Vec<f64>,
    per_slot: usize,
}

fn channel_path(c: &ChannelService, t_len: usize, rng: &mut RandomStream) -> Result<ChannelPath> {
    let m = &c.model;
    let scale = m.entry_scale()?;
    let entries = m.n_r * m.n_t * m.subchannels;
    let copula = if c.temporal_copula.is_independence() {
        CopulaSpec::Independence { dim: t_len }
    } else {
        c.temporal_copula.clone()
    };
    // Magnitudes and phases entry by entry, each entry a copula path over slots.
    let mut mags = vec![0.0; entries * t_len];
    let mut phases = vec![0.0; entries * t_len];
    for e in 0..entries {
        copula.fill(rng, &mut mags[e * t_len..(e + 1) * t_len]);
        for p in &mut phases[e * t_len..(e + 1) * t_len] {
            *p = std::f64::consts::TAU * rng.open01();
        }
    }
    let per_block = m.n_r * m.n_t;
    let per_slot = m.n_r * m.subchannels;
    let mut eigs = Vec::with_capacity(per_slot * t_len);
    for t in 0..t_len {
        for blk in 0..m.subchannels {
            let data = (0..per_block)
                .map(|k| {
                    let e = blk * per_block + k;
                    let mag = m.entry_law.quantile(mags[e * t_len + t])? * scale;
                    Ok(num_complex::Complex64::from_polar(mag, phases[e * t_len + t]))
                })
                .collect::<Result<Vec<_>>>()?;
            let h = ComplexMatrix::new(m.n_r, m.n_t, data)?;
            eigs.extend(eigenvalues_hermitian(&gram(&h))?);
        }
    }
    Ok(ChannelPath { eigs, per_slot })
}

/// Sampled inputs of every path, with the service still parameterized by `kappa`.
struct Prepared {
    arrivals: Vec<Vec<f64>>,
    service: PreparedService,
    t: usize,
}

enum PreparedService {
    Fixed(Vec<Vec<f64>>),
    Channel { spec: ChannelService, paths: Vec<ChannelPath> },
}

impl Prepared {
    fn new(config: &QueueConfig, stream: &RandomStream) -> Result<Self> {
        config.validate()?;
        let arrival_base = stream.derive("arrival");
        let service_base = stream.derive("service");
        let arrivals = (0..config.paths)
            .into_par_iter()
            .map(|p| config.arrival.draw_path(&mut arrival_base.substream(p as u64)))
            .collect::<Result<Vec<_>>>()?;
        let service = match &config.service {
            ServiceSpec::Process { process } => PreparedService::Fixed(
                (0..config.paths)
                    .into_par_iter()
                    .map(|p| process.draw_path(&mut service_base.substream(p as u64)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            ServiceSpec::Channel(c) => PreparedService::Channel {
                spec: c.clone(),
                paths: (0..config.paths)
                    .into_par_iter()
                    .map(|p| channel_path(c, config.t, &mut service_base.substream(p as u64)))
                    .collect::<Result<Vec<_>>>()?,
            },
        };
        Ok(Self {
            arrivals,
            service,
            t: config.t,
        })
    }

    fn service_path(&self, p: usize, kappa_scale: f64) -> Vec<f64> {
        match &self.service {
            PreparedService::Fixed(s) => s[p].iter().map(|v| v * kappa_scale).collect(),
            PreparedService::Channel { spec, paths } => {
                let cp = &paths[p];
                let snr = spec.params.rho * spec.kappa * kappa_scale / spec.params.n_t as f64;
                cp.eigs
                    .chunks_exact(cp.per_slot)
                    .map(|e| {
                        spec.slot_duration
                            * capacity_from_eigs(e, snr, spec.params.n_t, spec.model.subchannels, spec.params.w, spec.params.csit)
                    })
                    .collect()
            }
        }
    }

    /// Backlog paths of the selected path indices with service scaled by `kappa_scale`.
    fn backlogs(&self, idx: &[usize], kappa_scale: f64) -> Vec<Vec<f64>> {
        idx.par_iter()
            .map(|&p| lindley(&self.arrivals[p], &self.service_path(p, kappa_scale)).expect("equal lengths"))
            .collect()
    }

    fn warmup(&self) -> usize {
        (WARMUP_FRACTION * self.t as f64).floor() as usize
    }

    /// Pooled stationary-window values of the given backlog paths.
    fn pooled(&self, backlogs: &[Vec<f64>]) -> Vec<f64> {
        let w = self.warmup();
        backlogs.iter().flat_map(|b| b[w..].iter().copied()).collect()
    }
}

fn quantile_unsorted(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let n = v.len();
    let (_, &mut a, rest) = v.select_nth_unstable_by(lo, |x, y| x.total_cmp(y));
    if lo + 1 >= n || h == lo as f64 {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + (h - lo as f64) * (b - a)
}

fn group_indices(paths: usize) -> Vec<Vec<usize>> {
    let g = GROUPS.min(paths);
    (0..g).map(|k| (k * paths / g..(k + 1) * paths / g).collect()).collect()
}

/// Point estimate with a batch-means confidence interval over path groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    fn from_groups(value: f64, groups: &[f64]) -> Self {
        let hw = if groups.len() > 1 {
            t975(groups.len() - 1) * stats::std_err(groups)
        } else {
            0.0
        };
        Self {
            value,
            ci_lo: value - hw,
            ci_hi: value + hw,
        }
    }

    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedancePoint {
    pub x: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacklogStats {
    pub per_slot_mean: Vec<f64>,
    pub mean: Estimate,
    pub q50: Estimate,
    pub q90: Estimate,
    pub q99: Estimate,
    pub exceedance: Vec<ExceedancePoint>,
    pub mean_delay: Estimate,
    pub censored_fraction: f64,
    /// Mean arrival over mean service.
    pub load: f64,
    /// Load at or above one, or a second-half mean significantly above the first half.
    pub nonstationary: bool,
}

pub const EXCEEDANCE_POINTS: usize = 41;

fn stats_from_backlogs(prep: &Prepared, backlogs: &[Vec<f64>], delays: &[DelayPath], load: f64) -> BacklogStats {
    let t_len = prep.t;
    let paths = backlogs.len();
    let w = prep.warmup();
    let per_slot_mean = (0..t_len)
        .map(|t| stats::sum(backlogs.iter().map(|b| b[t])) / paths as f64)
        .collect();
    let groups = group_indices(paths);
    let pooled = prep.pooled(backlogs);
    let group_pools: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().flat_map(|&p| backlogs[p][w..].iter().copied()).collect())
        .collect();

    let quant = |q: f64| {
        let gs: Vec<f64> = group_pools.iter().map(|g| quantile_unsorted(g.clone(), q)).collect();
        Estimate::from_groups(quantile_unsorted(pooled.clone(), q), &gs)
    };
    let mean = Estimate::from_groups(stats::mean(&pooled), &group_pools.iter().map(|g| stats::mean(g)).collect::<Vec<_>>());

    let top = quantile_unsorted(pooled.clone(), 0.999);
    let sorted = stats::sorted(&pooled);
    let exceedance = stats::linear_grid(0.0, top.max(0.0), EXCEEDANCE_POINTS)
        .into_iter()
        .map(|x| {
            let p = stats::count_above(&sorted, x) as f64 / sorted.len() as f64;
            let gs: Vec<f64> = group_pools
                .iter()
                .map(|g| g.iter().filter(|&&v| v > x).count() as f64 / g.len() as f64)
                .collect();
            let e = Estimate::from_groups(p, &gs);
            ExceedancePoint {
                x,
                p,
                ci_lo: e.ci_lo.max(0.0),
                ci_hi: e.ci_hi.min(1.0),
            }
        })
        .collect();

    let delay_of = |idx: &[usize]| -> f64 {
        let v: Vec<f64> = idx
            .iter()
            .flat_map(|&p| delays[p].delays[w..].iter().map(|&d| d as f64))
            .collect();
        stats::mean(&v)
    };
    let all: Vec<usize> = (0..paths).collect();
    let mean_delay = Estimate::from_groups(delay_of(&all), &groups.iter().map(|g| delay_of(g)).collect::<Vec<_>>());
    let censored = delays.iter().map(|d| d.censored[w..].iter().filter(|&&c| c).count()).sum::<usize>();
    let censored_fraction = censored as f64 / (paths * (t_len - w)).max(1) as f64;

    // First-half vs second-half mean of the stationary window, paired per path.
    let mid = w + (t_len - w) / 2;
    let diffs: Vec<f64> = backlogs
        .iter()
        .map(|b| stats::mean(&b[mid..]) - stats::mean(&b[w..mid.max(w + 1)]))
        .collect();
    let drift = stats::mean(&diffs);
    let drift_se = stats::std_err(&diffs);
    let nonstationary = load >= 1.0 || (drift_se > 0.0 && drift > 4.0 * drift_se);

    BacklogStats {
        per_slot_mean,
        mean,
        q50: quant(0.5),
        q90: quant(0.9),
        q99: quant(0.99),
        exceedance,
        mean_delay,
        censored_fraction,
        load,
        nonstationary,
    }
}

fn load_of(prep: &Prepared) -> f64 {
    let paths = prep.arrivals.len();
    let a = stats::sum(prep.arrivals.iter().flat_map(|p| p.iter().copied()));
    let s: f64 = (0..paths).map(|p| stats::sum(prep.service_path(p, 1.0))).sum();
    if s > 0.0 {
        a / s
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn backlog_stats(config: &QueueConfig, stream: &RandomStream) -> Result<BacklogStats> {
    if config.paths < MIN_PATHS {
        return Err(Error::contract(format!("backlog statistics need at least {MIN_PATHS} paths")));
    }
    let prep = Prepared::new(config, stream)?;
    let idx: Vec<usize> = (0..config.paths).collect();
    let backlogs = prep.backlogs(&idx, 1.0);
    let delays: Vec<DelayPath> = idx
        .par_iter()
        .map(|&p| delays_from_backlog(&prep.arrivals[p], &backlogs[p]))
        .collect();
    Ok(stats_from_backlogs(&prep, &backlogs, &delays, load_of(&prep)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTradeReport {
    pub q: f64,
    pub baseline_kappa: f64,
    pub matched_kappa: f64,
    /// `1 - matched_kappa / baseline_kappa`.
    pub saving: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub target_quantile: f64,
    pub matched_quantile: f64,
    /// The target was not reachable inside the power bracket.
    pub no_crossing: bool,
    pub group_savings: Vec<f64>,
}

/// Power bracket searched for the matched scale, relative to the baseline.
pub const KAPPA_BRACKET: (f64, f64) = (0.05, 1.95);

struct Match {
    scale: f64,
    quantile: f64,
    crossed: bool,
}

/// Smallest power scale at which the backlog quantile of `prep` reaches `target`.
fn match_scale(prep: &Prepared, idx: &[usize], q: f64, target: f64, tolerance: f64) -> Match {
    let quantile_at = |k: f64| quantile_unsorted(prep.pooled(&prep.backlogs(idx, k)), q);
    let tol = tolerance * target.abs().max(1e-9);
    let at_one = quantile_at(1.0);
    if (at_one - target).abs() <= tol {
        return Match { scale: 1.0, quantile: at_one, crossed: true };
    }
    let (mut lo, mut hi) = KAPPA_BRACKET;
    let q_hi = quantile_at(hi);
    if q_hi > target + tol {
        return Match { scale: hi, quantile: q_hi, crossed: false };
    }
    let q_lo = quantile_at(lo);
    if q_lo <= target + tol {
        return Match { scale: lo, quantile: q_lo, crossed: false };
    }
    let mut best = (hi, q_hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let qm = quantile_at(mid);
        best = (mid, qm);
        if (qm - target).abs() <= tol || hi - lo < 1e-9 {
            break;
        }
        // More power, less backlog.
        if qm > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Match { scale: best.0, quantile: best.1, crossed: true }
}

fn same_except_copula(a: &QueueConfig, b: &QueueConfig) -> Result<(ChannelService, ChannelService)> {
    let (ServiceSpec::Channel(ca), ServiceSpec::Channel(cb)) = (&a.service, &b.service) else {
        return Err(Error::contract("power trade needs channel-driven service in both configs"));
    };
    let mut cb_as_a = cb.clone();
    cb_as_a.temporal_copula = ca.temporal_copula.clone();
    if a.arrival != b.arrival || a.t != b.t || a.paths != b.paths || *ca != cb_as_a {
        return Err(Error::contract("configs must differ only in the service temporal copula"));
    }
    Ok((ca.clone(), cb.clone()))
}

/// Power scale at which the dependent-service queue matches the reference
/// queue's backlog `q`-quantile, with common random numbers across configs.
pub fn power_tradeoff(
    neg_config: &QueueConfig,
    ref_config: &QueueConfig,
    q: f64,
    tolerance: f64,
    stream: &RandomStream,
) -> Result<PowerTradeReport> {
    let (neg_service, _) = same_except_copula(neg_config, ref_config)?;
    if !(q > 0.0 && q < 1.0) || !(tolerance > 0.0) {
        return Err(Error::param("q must lie in (0, 1) and tolerance must be positive"));
    }
    if neg_config.paths < MIN_PATHS {
        return Err(Error::contract(format!("power trade needs at least {MIN_PATHS} paths")));
    }
    let neg = Prepared::new(neg_config, stream)?;
    let reference = Prepared::new(ref_config, stream)?;
    let all: Vec<usize> = (0..neg_config.paths).collect();
    let solve = |idx: &[usize]| {
        let target = quantile_unsorted(reference.pooled(&reference.backlogs(idx, 1.0)), q);
        (target, match_scale(&neg, idx, q, target, tolerance))
    };
    let (target, m) = solve(&all);
    let groups = group_indices(neg_config.paths);
    let group_savings: Vec<f64> = groups.par_iter().map(|g| 1.0 - solve(g).1.scale).collect();
    let saving = 1.0 - m.scale;
    let est = Estimate::from_groups(saving, &group_savings);
    let baseline = neg_service.kappa;
    Ok(PowerTradeReport {
        q,
        baseline_kappa: baseline,
        matched_kappa: baseline * m.scale,
        saving,
        ci_lo: est.ci_lo,
        ci_hi: est.ci_hi,
        target_quantile: target,
        matched_quantile: m.quantile,
        no_crossing: !m.crossed,
        group_savings,
    })
}
