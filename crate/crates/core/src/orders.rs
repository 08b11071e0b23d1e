//! Empirical stochastic-order tests and the partial-sum, marginal-strength,
//! dependence-bias and random-sum experiments built on them.
//!
//! Every test is one-sided with explicit standard errors. A relation holds when
//! no grid point violates it by more than [`HOLD_SE`] standard errors and fails
//! when some point violates it by more than [`FAIL_SE`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::{gen_process, sm_certified, CopulaSpec, MarginalMod, ProcessSpec, RealRows, SmPair};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::{self, normal_quantile};

pub const HOLD_SE: f64 = 2.0;
pub const FAIL_SE: f64 = 4.0;
/// Non-overlapping blocks used for batch-means standard errors.
pub const BLOCKS: usize = 1000;
pub const GRID_POINTS: usize = 41;
/// Minimum sample size for order tests.
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    St,
    Cx,
    Icx,
    Icv,
    UoLoWitness,
    DcxWitness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub relation: Relation,
    pub outcome: Outcome,
    /// Worst standardized violation over the grid.
    pub margin: f64,
    /// Standardized violation `(lhs - rhs) / se` per check.
    pub z: Vec<f64>,
}

impl OrderVerdict {
    fn from_z(relation: Relation, z: Vec<f64>, confidence: f64) -> Self {
        let (hold, fail) = thresholds(confidence);
        let margin = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let outcome = if margin <= hold {
            Outcome::Holds
        } else if margin > fail {
            Outcome::Fails
        } else {
            Outcome::Inconclusive
        };
        Self {
            relation,
            outcome,
            margin,
            z,
        }
    }

    pub fn holds(&self) -> bool {
        self.outcome == Outcome::Holds
    }
}

/// Hold/fail thresholds in standard errors; 2 and 4 at 95% confidence.
fn thresholds(confidence: f64) -> (f64, f64) {
    let scale = normal_quantile(0.5 + confidence / 2.0) / normal_quantile(0.975);
    (HOLD_SE * scale, FAIL_SE * scale)
}

fn check_confidence(confidence: f64) -> Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("confidence must lie in (0, 1), got {confidence}")))
    }
}

/// Standardized difference, with exact comparisons when the error is zero.
fn standardize(d: f64, se: f64, scale: f64) -> f64 {
    let tol = 1e-12 * (1.0 + scale.abs());
    if se > 0.0 {
        d / se
    } else if d > tol {
        f64::INFINITY
    } else if d < -tol {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopLossCurve {
    pub t_grid: Vec<f64>,
    /// `E[(S - t)+]`.
    pub pi: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub mean: f64,
    pub mean_se: f64,
    pub mean_ci: f64,
}

/// Per-block stop-loss means (`blocks x grid`) and block means.
struct BlockStats {
    pi: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

fn block_ranges(n: usize) -> Vec<(usize, usize)> {
    let b = BLOCKS.min(n);
    (0..b).map(|k| (k * n / b, (k + 1) * n / b)).collect()
}

fn block_stats(samples: &[f64], t_grid: &[f64]) -> BlockStats {
    let rows: Vec<(Vec<f64>, f64)> = block_ranges(samples.len())
        .par_iter()
        .map(|&(lo, hi)| {
            let chunk = &samples[lo..hi];
            let m = (hi - lo) as f64;
            let pi = t_grid
                .iter()
                .map(|&t| stats::sum(chunk.iter().map(|&s| (s - t).max(0.0))) / m)
                .collect();
            (pi, stats::mean(chunk))
        })
        .collect();
    let (pi, mean) = rows.into_iter().unzip();
    BlockStats { pi, mean }
}

/// Mean and batch-means standard error of per-block values.
fn batch(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    (stats::mean(&v), stats::std_err(&v))
}

fn curve_from_blocks(b: &BlockStats, t_grid: &[f64]) -> StopLossCurve {
    let z = normal_quantile(0.975);
    let (pi, se): (Vec<f64>, Vec<f64>) = (0..t_grid.len()).map(|i| batch(b.pi.iter().map(|r| r[i]))).unzip();
    let (mean, mean_se) = batch(b.mean.iter().copied());
    StopLossCurve {
        t_grid: t_grid.to_vec(),
        ci_halfwidth: se.iter().map(|s| z * s).collect(),
        pi,
        se,
        mean,
        mean_se,
        mean_ci: z * mean_se,
    }
}

/// Stop-loss transform with batch-means standard errors over contiguous blocks.
pub fn stop_loss(samples: &[f64], t_grid: &[f64]) -> Result<StopLossCurve> {
    if t_grid.is_empty() {
        return Err(Error::contract("stop-loss grid is empty"));
    }
    if samples.is_empty() {
        return Err(Error::contract("stop-loss needs samples"));
    }
    Ok(curve_from_blocks(&block_stats(samples, t_grid), t_grid))
}

/// 41 points spanning `[q05, q99.5]` of the pooled samples.
pub fn default_grid(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut pooled = Vec::with_capacity(a.len() + b.len());
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let s = stats::sorted(&pooled);
    let (lo, hi) = (stats::quantile_sorted(&s, 0.05), stats::quantile_sorted(&s, 0.995));
    if hi > lo {
        stats::linear_grid(lo, hi, GRID_POINTS)
    } else {
        vec![lo]
    }
}

fn check_sizes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(Error::contract(format!(
            "order tests need at least {MIN_SAMPLES} samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Standardized stop-loss excess of `a` over `b` per grid point and of the mean.
/// Equal-size inputs are treated as paired, which covers common random numbers.
fn stop_loss_excess(a: &[f64], b: &[f64], grid: &[f64]) -> (Vec<f64>, f64, StopLossCurve, StopLossCurve) {
    let ba = block_stats(a, grid);
    let bb = block_stats(b, grid);
    let ca = curve_from_blocks(&ba, grid);
    let cb = curve_from_blocks(&bb, grid);
    let paired = a.len() == b.len();
    let z: Vec<f64> = (0..grid.len())
        .map(|i| {
            let d = ca.pi[i] - cb.pi[i];
            let se = if paired {
                batch(ba.pi.iter().zip(&bb.pi).map(|(x, y)| x[i] - y[i])).1
            } else {
                ca.se[i].hypot(cb.se[i])
            };
            standardize(d, se, ca.pi[i].max(cb.pi[i]))
        })
        .collect();
    let dm = ca.mean - cb.mean;
    let se_m = if paired {
        batch(ba.mean.iter().zip(&bb.mean).map(|(x, y)| x - y)).1
    } else {
        ca.mean_se.hypot(cb.mean_se)
    };
    let zm = standardize(dm.abs(), se_m, ca.mean.abs().max(cb.mean.abs()));
    (z, zm, ca, cb)
}

/// `a <=icx b`: `E[(a - t)+] <= E[(b - t)+]` on the pooled grid.
pub fn icx_test(a: &[f64], b: &[f64], confidence: f64) -> Result<OrderVerdict> {
    check_confidence(confidence)?;
    check_sizes(a, b)?;
    let grid = default_grid(a, b);
    let (z, _, _, _) = stop_loss_excess(a, b, &grid);
    Ok(OrderVerdict::from_z(Relation::Icx, z, confidence))
}

/// `a <=cx b`: icx dominance plus equal means.
pub fn cx_test(a: &[f64], b: &[f64], confidence: f64) -> Result<OrderVerdict> {
    check_confidence(confidence)?;
    check_sizes(a, b)?;
    let grid = default_grid(a, b);
    let (mut z, zm, _, _) = stop_loss_excess(a, b, &grid);
    z.push(zm);
    Ok(OrderVerdict::from_z(Relation::Cx, z, confidence))
}

/// `a <=icv b`, i.e. `-b <=icx -a`.
pub fn icv_test(a: &[f64], b: &[f64], confidence: f64) -> Result<OrderVerdict> {
    let na: Vec<f64> = a.iter().map(|x| -x).collect();
    let nb: Vec<f64> = b.iter().map(|x| -x).collect();
    let mut v = icx_test(&nb, &na, confidence)?;
    v.relation = Relation::Icv;
    Ok(v)
}

/// DKW half-width for an ECDF of `n` points at level `alpha`.
pub fn dkw(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// `a <=st b`: `F_a(x) >= F_b(x)` everywhere up to the combined DKW band.
/// The margin is expressed so that the band itself corresponds to two standard errors.
pub fn st_test(a: &[f64], b: &[f64], confidence: f64) -> Result<OrderVerdict> {
    check_confidence(confidence)?;
    check_sizes(a, b)?;
    let sa = stats::sorted(a);
    let sb = stats::sorted(b);
    let alpha = 1.0 - confidence;
    let band = dkw(sa.len(), alpha) + dkw(sb.len(), alpha);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        worst = worst.max(j as f64 / nb - i as f64 / na);
    }
    let grid = default_grid(a, b);
    let mut z: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let fa = stats::count_at_most(&sa, x) as f64 / na;
            let fb = stats::count_at_most(&sb, x) as f64 / nb;
            (fb - fa) / (band / HOLD_SE)
        })
        .collect();
    z.push(worst / (band / HOLD_SE));
    // The band is fixed by `confidence`; compare on the 95% scale.
    Ok(OrderVerdict::from_z(Relation::St, z, 0.95))
}

/// Grid of orthant corners: products of pooled marginal quantiles at
/// 10/25/50/75/90%, or only the diagonal when the product is too large.
pub fn default_orthant_grid(a: &RealRows, b: &RealRows) -> Vec<Vec<f64>> {
    let levels = [0.1, 0.25, 0.5, 0.75, 0.9];
    let d = a.cols();
    let q: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut pooled = a.column(j);
            pooled.extend(b.column(j));
            let s = stats::sorted(&pooled);
            levels.iter().map(|&p| stats::quantile_sorted(&s, p)).collect()
        })
        .collect();
    if levels.len().pow(d as u32) > 625 {
        return (0..levels.len()).map(|k| (0..d).map(|j| q[j][k]).collect()).collect();
    }
    let mut grid = vec![Vec::new()];
    for qj in &q {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                qj.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

/// Upper- and lower-orthant comparisons, necessary for `a <=sm b`.
pub fn orthant_witness_test(a: &RealRows, b: &RealRows, c_grid: &[Vec<f64>], confidence: f64) -> Result<OrderVerdict> {
    check_confidence(confidence)?;
    if a.cols() != b.cols() {
        return Err(Error::contract("orthant test needs vectors of equal dimension"));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::contract("orthant test needs samples"));
    }
    for j in 0..a.cols() {
        let (ca, cb) = (stats::sorted(&a.column(j)), stats::sorted(&b.column(j)));
        if !stats::ks_two_sample_passes(&ca, &cb, 0.01) {
            return Err(Error::contract(format!("marginal {j} differs between the two samples")));
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let z: Vec<f64> = c_grid
        .par_iter()
        .flat_map_iter(|c| {
            let frac = |m: &RealRows, upper: bool| {
                m.rows()
                    .filter(|r| r.iter().zip(c).all(|(x, y)| if upper { x > y } else { x <= y }))
                    .count() as f64
                    / m.len() as f64
            };
            [true, false].map(|upper| {
                let (pa, pb) = (frac(a, upper), frac(b, upper));
                let se = (pa * (1.0 - pa) / na + pb * (1.0 - pb) / nb).sqrt();
                standardize(pa - pb, se, 1.0)
            })
        })
        .collect();
    Ok(OrderVerdict::from_z(Relation::UoLoWitness, z, confidence))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSumReport {
    pub verdict: OrderVerdict,
    pub lo: StopLossCurve,
    pub hi: StopLossCurve,
}

/// `sum a_j X_j <=cx sum a_j Y_j` for a certified pair, with common random numbers.
pub fn partial_sum_order_experiment(
    pair: &SmPair,
    weights: &[f64],
    stream: &RandomStream,
    paths: usize,
    confidence: f64,
) -> Result<PartialSumReport> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::contract("weights must be non-negative"));
    }
    let lo = gen_process(pair.lo(), stream, paths)?.weighted_sums(weights)?;
    let hi = gen_process(pair.hi(), stream, paths)?.weighted_sums(weights)?;
    let verdict = cx_test(&lo, &hi, confidence)?;
    let grid = default_grid(&lo, &hi);
    Ok(PartialSumReport {
        verdict,
        lo: stop_loss(&lo, &grid)?,
        hi: stop_loss(&hi, &grid)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthComparison {
    pub k: usize,
    pub k_prime: usize,
    pub verdict: OrderVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub relation: Relation,
    pub comparisons: Vec<StrengthComparison>,
    pub monotone: bool,
}

fn conditionally_increasing(c: &CopulaSpec) -> bool {
    match *c {
        CopulaSpec::Independence { .. } | CopulaSpec::Comonotone { .. } => true,
        CopulaSpec::GaussianExchangeable { rho, .. } | CopulaSpec::GaussianAr1 { rho, .. } => rho >= 0.0,
        _ => false,
    }
}

/// Applies the first `k` modifications of `schedule` for every `k = 0..=n` and
/// checks that each `k <= k'` pair stays ordered.
pub fn marginal_strength_experiment(
    base: &ProcessSpec,
    schedule: &[MarginalMod],
    weights: &[f64],
    stream: &RandomStream,
    paths: usize,
    confidence: f64,
) -> Result<StrengthReport> {
    if !conditionally_increasing(&base.temporal_copula) || !conditionally_increasing(&base.spatial_copula) {
        return Err(Error::contract(
            "marginal-strength experiments need a positively dependent (Gaussian rho >= 0) copula",
        ));
    }
    if schedule.iter().any(|m| m.shift < 0.0 || m.spread < 1.0) {
        return Err(Error::contract("modifications must be increasing shifts or spreads"));
    }
    let relation = if schedule.iter().all(|m| m.shift == 0.0) {
        Relation::Cx
    } else {
        Relation::Icx
    };
    let sums: Vec<Vec<f64>> = (0..=schedule.len())
        .map(|k| {
            let mut spec = base.clone();
            spec.modifiers.extend_from_slice(&schedule[..k]);
            gen_process(&spec, stream, paths)?.weighted_sums(weights)
        })
        .collect::<Result<_>>()?;
    let mut comparisons = Vec::new();
    for k in 0..sums.len() {
        for kp in k + 1..sums.len() {
            let verdict = match relation {
                Relation::Cx => cx_test(&sums[k], &sums[kp], confidence)?,
                _ => icx_test(&sums[k], &sums[kp], confidence)?,
            };
            comparisons.push(StrengthComparison { k, k_prime: kp, verdict });
        }
    }
    let monotone = comparisons.iter().all(|c| c.verdict.holds());
    Ok(StrengthReport {
        relation,
        comparisons,
        monotone,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub deltas: Vec<f64>,
    pub verdicts: Vec<OrderVerdict>,
    /// Largest grid boost up to which every comparison holds; 0 when none does.
    pub delta_star: f64,
    pub holds_at_zero: bool,
}

/// Default mean-boost grid for the bias experiment.
pub fn default_delta_grid() -> Vec<f64> {
    vec![0.0, 0.0025, 0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1]
}

/// Compares the dependent process with every marginal shifted by `delta` against
/// the same marginals under independence.
pub fn dependence_bias_experiment(
    dependent: &ProcessSpec,
    deltas: &[f64],
    stream: &RandomStream,
    paths: usize,
    confidence: f64,
) -> Result<BiasReport> {
    if deltas.is_empty() || deltas.windows(2).any(|w| w[0] >= w[1]) || deltas[0] < 0.0 {
        return Err(Error::contract("delta grid must be non-negative and strictly increasing"));
    }
    let mut indep = dependent.clone();
    indep.temporal_copula = CopulaSpec::Independence { dim: dependent.t };
    indep.spatial_copula = CopulaSpec::Independence { dim: dependent.coords };
    indep.allow_both_axes = false;
    let base = gen_process(&indep, stream, paths)?.weighted_sums(&[])?;
    let dep = gen_process(dependent, stream, paths)?.weighted_sums(&[])?;
    let cells = (dependent.t * dependent.coords) as f64;
    let verdicts: Vec<OrderVerdict> = deltas
        .iter()
        .map(|&d| {
            // A shift on every cell moves the unweighted sum by `cells * delta`.
            let boosted: Vec<f64> = dep.iter().map(|s| s + cells * d).collect();
            icx_test(&boosted, &base, confidence)
        })
        .collect::<Result<_>>()?;
    let holding = verdicts.iter().take_while(|v| v.holds()).count();
    Ok(BiasReport {
        deltas: deltas.to_vec(),
        delta_star: if holding == 0 { 0.0 } else { deltas[holding - 1] },
        holds_at_zero: holding > 0,
        verdicts,
    })
}

/// Law of a non-negative integer count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CountLaw {
    Poisson { lambda: f64 },
    Constant { k: u64 },
}

impl CountLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Poisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::param(format!("Poisson rate must be finite and > 0, got {lambda}")))
            }
            _ => Ok(()),
        }
    }

    pub fn quantile(&self, u: f64) -> u64 {
        match *self {
            Self::Constant { k } => k,
            Self::Poisson { lambda } => {
                let mut pmf = (-lambda).exp();
                let mut cdf = pmf;
                let mut k = 0u64;
                let cap = (lambda + 40.0 * lambda.sqrt() + 100.0) as u64;
                while cdf < u && k < cap {
                    k += 1;
                    pmf *= lambda / k as f64;
                    cdf += pmf;
                }
                k
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountVector {
    pub law: CountLaw,
    pub copula: CopulaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSumSpec {
    pub counts_lo: CountVector,
    pub counts_hi: CountVector,
    /// Increment law per coordinate.
    pub increments_lo: Vec<DistributionSpec>,
    pub increments_hi: Vec<DistributionSpec>,
    #[serde(default = "yes")]
    pub counts_independent_of_increments: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSumReport {
    pub verdict: OrderVerdict,
    pub components: Vec<OrderVerdict>,
    /// `(i, j, verdict)` for the sum of coordinates `i` and `j`.
    pub pairs: Vec<(usize, usize, OrderVerdict)>,
}

/// Coordinate-wise random sums for `n` paths, with increments coupled across
/// the two configurations through shared uniforms.
fn random_sums(counts: &CountVector, increments: &[DistributionSpec], stream: &RandomStream, n: usize) -> Result<RealRows> {
    let d = increments.len();
    let uc = crate::dependence::sample_copula(&counts.copula, &stream.derive("counts"), n)?;
    let inc = stream.derive("increments");
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|p| {
            let row = uc.row(p).to_vec();
            let inc = inc.clone();
            (0..d).map(move |i| {
                let mut rng = inc.substream((p * d + i) as u64);
                let k = counts.law.quantile(row[i]);
                let mut acc = 0.0;
                for _ in 0..k {
                    acc += increments[i].quantile(rng.open01())?;
                }
                Ok(acc)
            })
        })
        .collect::<Result<_>>()?;
    RealRows::new(d, data)
}

/// Directionally convex witnesses for random sums: componentwise and pairwise-sum stop-loss.
pub fn random_sum_experiment(spec: &RandomSumSpec, stream: &RandomStream, n: usize, confidence: f64) -> Result<RandomSumReport> {
    if !spec.counts_independent_of_increments {
        return Err(Error::contract("counts must be independent of the increments"));
    }
    spec.counts_lo.law.validate()?;
    spec.counts_hi.law.validate()?;
    let d = spec.increments_lo.len();
    if d == 0 || spec.increments_hi.len() != d || spec.counts_lo.copula.dim() != d || spec.counts_hi.copula.dim() != d {
        return Err(Error::contract("count and increment dimensions disagree"));
    }
    if spec.counts_lo.law != spec.counts_hi.law || !sm_certified(&spec.counts_lo.copula, &spec.counts_hi.copula, d) {
        return Err(Error::contract("count vectors are not certified comparable"));
    }
    for law in spec.increments_lo.iter().chain(&spec.increments_hi) {
        law.validate()?;
        if !law.strictly_positive() && law.cdf(-f64::MIN_POSITIVE) > 0.0 {
            return Err(Error::contract("increments must be non-negative"));
        }
    }
    let lo = random_sums(&spec.counts_lo, &spec.increments_lo, stream, n)?;
    let hi = random_sums(&spec.counts_hi, &spec.increments_hi, stream, n)?;
    let components = (0..d)
        .map(|i| icx_test(&lo.column(i), &hi.column(i), confidence))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let sl: Vec<f64> = lo.rows().map(|r| r[i] + r[j]).collect();
            let sh: Vec<f64> = hi.rows().map(|r| r[i] + r[j]).collect();
            pairs.push((i, j, icx_test(&sl, &sh, confidence)?));
        }
    }
    let z: Vec<f64> = components
        .iter()
        .chain(pairs.iter().map(|p| &p.2))
        .flat_map(|v| v.z.iter().copied())
        .collect();
    let verdict = OrderVerdict::from_z(Relation::DcxWitness, z, confidence);
    Ok(RandomSumReport {
        verdict,
        components,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::sample_copula;

    fn draw(spec: &DistributionSpec, label: &str, n: usize) -> Vec<f64> {
        spec.sample(&mut RandomStream::new(31, label), n).unwrap()
    }

    fn unif() -> DistributionSpec {
        DistributionSpec::Uniform { a: 0.0, b: 1.0 }
    }

    /// Standard normal truncated to [-3, 3], scaled by `scale`, via inverse CDF.
    fn truncated_normal(scale: f64, label: &str, n: usize) -> Vec<f64> {
        let (a, b) = (stats::normal_cdf(-3.0), stats::normal_cdf(3.0));
        let mut rng = RandomStream::new(31, label);
        (0..n)
            .map(|_| scale * normal_quantile(a + (b - a) * rng.open01()))
            .collect()
    }

    /// `E[(sZ - t)+]` for `Z` standard normal truncated to [-3, 3], by quadrature.
    fn truncated_stop_loss(scale: f64, t: f64) -> f64 {
        let m = 200_000;
        let h = 6.0 / m as f64;
        let mass = stats::normal_cdf(3.0) - stats::normal_cdf(-3.0);
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0..m)
            .map(|i| {
                let z = -3.0 + (i as f64 + 0.5) * h;
                (scale * z - t).max(0.0) * phi(z)
            })
            .sum::<f64>()
            * h
            / mass
    }

    #[test]
    fn stop_loss_examples() {
        let u = draw(&unif(), "sl", 100_000);
        let c = stop_loss(&u, &[0.0, 0.5]).unwrap();
        assert!((c.pi[0] - 0.5).abs() < 3.0 * c.ci_halfwidth[0]);
        assert!((c.pi[1] - 0.125).abs() < 3.0 * c.ci_halfwidth[1]);
        let k = vec![2.5; 100];
        let c = stop_loss(&k, &[0.0, 2.0, 2.5, 3.0]).unwrap();
        assert_eq!(c.pi, vec![2.5, 0.5, 0.0, 0.0]);
        assert!(matches!(stop_loss(&k, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn icx_examples() {
        let x = draw(&unif(), "icx", 100_000);
        let y: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        assert!(icx_test(&x, &y, 0.95).unwrap().holds());
        assert_eq!(icx_test(&y, &x, 0.95).unwrap().outcome, Outcome::Fails);

        // The oracle confirms the spread dominates on the grid before the test runs.
        for t in [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
            assert!(truncated_stop_loss(1.0, t) <= truncated_stop_loss(2.0, t) + 1e-12);
        }
        let a = truncated_normal(1.0, "tn", 100_000);
        let b = truncated_normal(2.0, "tn", 100_000);
        assert!(icx_test(&a, &b, 0.95).unwrap().holds());
        let c = stop_loss(&a, &[0.5]).unwrap();
        assert!((c.pi[0] - truncated_stop_loss(1.0, 0.5)).abs() < 3.0 * c.ci_halfwidth[0]);

        let x2 = draw(&unif(), "icx2", 100_000);
        assert!(icx_test(&x, &x2, 0.95).unwrap().holds());
        assert!(icx_test(&x2, &x, 0.95).unwrap().holds());
    }

    #[test]
    fn cx_examples() {
        let n = 100_000;
        let s = RandomStream::new(5, "cx");
        let sums = |c: CopulaSpec| -> Vec<f64> {
            sample_copula(&c, &s, n).unwrap().rows().map(|r| r[0] + r[1]).collect()
        };
        let ind = sums(CopulaSpec::Independence { dim: 2 });
        let co = sums(CopulaSpec::Comonotone { dim: 2 });
        let counter = sums(CopulaSpec::Countermonotone);
        assert!(cx_test(&ind, &co, 0.95).unwrap().holds());
        assert_eq!(cx_test(&co, &ind, 0.95).unwrap().outcome, Outcome::Fails);
        assert!(cx_test(&counter, &ind, 0.95).unwrap().holds());
        let e1 = draw(&DistributionSpec::Exponential { rate: 1.0 }, "e1", n);
        let e2 = draw(&DistributionSpec::Exponential { rate: 0.5 }, "e2", n);
        assert_eq!(cx_test(&e1, &e2, 0.95).unwrap().outcome, Outcome::Fails);
    }

    #[test]
    fn cx_implies_variance_order() {
        let a = truncated_normal(1.0, "va", 100_000);
        let b = truncated_normal(1.5, "va", 100_000);
        let v = cx_test(&a, &b, 0.95).unwrap();
        assert!(v.holds());
        // Batch-means standard error of the variance difference.
        let blocks: Vec<f64> = block_ranges(a.len())
            .iter()
            .map(|&(l, h)| stats::variance(&a[l..h]) - stats::variance(&b[l..h]))
            .collect();
        let se = stats::std_err(&blocks);
        assert!(stats::variance(&a) <= stats::variance(&b) + 4.0 * se);
    }

    #[test]
    fn icv_mirrors_icx() {
        let x = draw(&unif(), "icv", 100_000);
        let y: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        // Larger in st is larger in icv.
        assert!(icv_test(&x, &y, 0.95).unwrap().holds());
        assert_eq!(icv_test(&y, &x, 0.95).unwrap().outcome, Outcome::Fails);
    }

    #[test]
    fn st_examples() {
        let x = draw(&unif(), "st", 100_000);
        let y: Vec<f64> = draw(&unif(), "st2", 100_000).iter().map(|v| v + 0.2).collect();
        assert!(st_test(&x, &y, 0.95).unwrap().holds());
        assert_eq!(st_test(&y, &x, 0.95).unwrap().outcome, Outcome::Fails);
        let a = truncated_normal(1.0, "stn", 100_000);
        let b = truncated_normal(2.0, "stn2", 100_000);
        // The CDFs cross at 0: F_b > F_a below it.
        assert!((stats::normal_cdf(-0.5) - stats::normal_cdf(-1.0)) > 0.1);
        assert_eq!(st_test(&a, &b, 0.95).unwrap().outcome, Outcome::Fails);
        assert!(st_test(&x, &x, 0.95).unwrap().holds());
    }

    #[test]
    fn orthant_examples() {
        let n = 100_000;
        let s = RandomStream::new(8, "orth");
        let ind = sample_copula(&CopulaSpec::Independence { dim: 2 }, &s, n).unwrap();
        let co = sample_copula(&CopulaSpec::Comonotone { dim: 2 }, &s, n).unwrap();
        let c = vec![vec![0.5, 0.5]];
        let v = orthant_witness_test(&ind, &co, &c, 0.95).unwrap();
        assert!(v.holds());
        let both = |m: &RealRows| m.rows().filter(|r| r[0] > 0.5 && r[1] > 0.5).count() as f64 / n as f64;
        assert!((both(&ind) - 0.25).abs() < 0.01 && (both(&co) - 0.5).abs() < 0.01);
        assert_eq!(orthant_witness_test(&co, &ind, &c, 0.95).unwrap().outcome, Outcome::Fails);

        let gneg = sample_copula(&CopulaSpec::GaussianExchangeable { rho: -0.5, dim: 2 }, &s, n).unwrap();
        let gpos = sample_copula(&CopulaSpec::GaussianExchangeable { rho: 0.5, dim: 2 }, &s, n).unwrap();
        // Bivariate normal orthant probability: 1/4 + asin(rho) / (2 pi).
        let q = |rho: f64| 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        let grid = vec![vec![0.5, 0.5]];
        assert!((both(&gneg) - q(-0.5)).abs() < 0.01 && (both(&gpos) - q(0.5)).abs() < 0.01);
        assert!(orthant_witness_test(&gneg, &gpos, &grid, 0.95).unwrap().holds());
        let full = default_orthant_grid(&gneg, &gpos);
        assert_eq!(full.len(), 25);
        assert!(orthant_witness_test(&gneg, &gpos, &full, 0.95).unwrap().holds());

        let shifted = RealRows::new(2, ind.data().iter().map(|v| v * 2.0).collect()).unwrap();
        assert!(matches!(orthant_witness_test(&ind, &shifted, &c, 0.95), Err(Error::Contract(_))));
    }

    #[test]
    fn partial_sum_examples() {
        let s = RandomStream::new(9, "ps");
        let ind = ProcessSpec::temporal(4, unif(), CopulaSpec::Independence { dim: 4 });
        let co = ProcessSpec::temporal(4, unif(), CopulaSpec::Comonotone { dim: 4 });
        let pair = crate::dependence::sm_pair(&ind, &co).unwrap();
        let r = partial_sum_order_experiment(&pair, &[1.0; 4], &s, 100_000, 0.95).unwrap();
        assert!(r.verdict.holds());

        let e = DistributionSpec::Exponential { rate: 1.0 };
        // At T = 8 an exchangeable correlation must exceed -1/7, and AR(1) with
        // rho < 0 has positive even lags, so it is not below independence.
        let ar = |rho| ProcessSpec::temporal(8, e.clone(), CopulaSpec::GaussianAr1 { rho, dim: 8 });
        assert!(crate::dependence::sm_pair(&ar(-0.8), &ar(0.0)).is_err());
        let neg = ProcessSpec::temporal(8, e.clone(), CopulaSpec::GaussianExchangeable { rho: -0.12, dim: 8 });
        let zero = ProcessSpec::temporal(8, e.clone(), CopulaSpec::GaussianExchangeable { rho: 0.0, dim: 8 });
        let pair = crate::dependence::sm_pair(&neg, &zero).unwrap();
        let r = partial_sum_order_experiment(&pair, &[], &s, 100_000, 0.95).unwrap();
        assert!(r.verdict.holds());
        // Strictly positive gap at the central grid point.
        let mid = GRID_POINTS / 2;
        assert!(r.hi.pi[mid] - r.lo.pi[mid] > 4.0 * r.lo.se[mid].hypot(r.hi.se[mid]));

        let pair = crate::dependence::sm_pair(&ind, &ind).unwrap();
        let r = partial_sum_order_experiment(&pair, &[1.0; 4], &s, 20_000, 0.95).unwrap();
        assert!(r.verdict.holds() && r.verdict.margin.abs() < 1e-9);
        assert!(matches!(
            partial_sum_order_experiment(&pair, &[-1.0; 4], &s, 20_000, 0.95),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn marginal_strength_examples() {
        let s = RandomStream::new(10, "ms");
        let base = ProcessSpec::temporal(2, unif(), CopulaSpec::GaussianAr1 { rho: 0.5, dim: 2 });
        let sched = vec![
            MarginalMod::shift(Some(0), None, 0.1),
            MarginalMod::shift(Some(1), None, 0.1),
        ];
        let r = marginal_strength_experiment(&base, &sched, &[], &s, 100_000, 0.95).unwrap();
        assert_eq!(r.relation, Relation::Icx);
        assert!(r.monotone, "{r:?}");
        assert_eq!(r.comparisons.len(), 3);
        let r = marginal_strength_experiment(&base, &[], &[], &s, 10_000, 0.95).unwrap();
        assert!(r.comparisons.is_empty() && r.monotone);
        let neg = ProcessSpec::temporal(2, unif(), CopulaSpec::GaussianAr1 { rho: -0.5, dim: 2 });
        assert!(matches!(
            marginal_strength_experiment(&neg, &sched, &[], &s, 10_000, 0.95),
            Err(Error::Contract(_))
        ));
    }

    /// `E[(1 + 2d - t)+]` against `E[(T - t)+]` for `T` triangular on [0, 2].
    fn triangular_stop_loss(t: f64) -> f64 {
        if t <= 0.0 {
            1.0 - t
        } else if t <= 1.0 {
            1.0 - t + t.powi(3) / 6.0
        } else if t <= 2.0 {
            (2.0 - t).powi(3) / 6.0
        } else {
            0.0
        }
    }

    #[test]
    fn dependence_bias_examples() {
        let s = RandomStream::new(12, "bias");
        let counter = ProcessSpec::spatial(2, unif(), CopulaSpec::Countermonotone);
        let r = dependence_bias_experiment(&counter, &default_delta_grid(), &s, 100_000, 0.95).unwrap();
        assert!(r.holds_at_zero);
        assert!(r.verdicts[0].margin < -HOLD_SE);
        // Analytic slack of the constant sum on the pooled grid: the lowest grid
        // point sits near the 10% quantile of the triangular law.
        let t0 = 0.2f64.sqrt();
        let slack = triangular_stop_loss(t0) - (1.0 - t0);
        assert!(r.delta_star <= slack / 2.0 + 0.01, "{}", r.delta_star);

        let co = ProcessSpec::spatial(2, unif(), CopulaSpec::Comonotone { dim: 2 });
        let r = dependence_bias_experiment(&co, &default_delta_grid(), &s, 100_000, 0.95).unwrap();
        assert!(r.delta_star <= 0.005);
    }

    #[test]
    fn poisson_quantile_matches_cdf() {
        let law = CountLaw::Poisson { lambda: 5.0 };
        assert_eq!(law.quantile(1e-9), 0);
        // P(N <= 5) = 0.6160 for Poisson(5).
        assert_eq!(law.quantile(0.6), 5);
        assert_eq!(law.quantile(0.62), 6);
    }

    #[test]
    fn random_sum_examples() {
        let s = RandomStream::new(14, "rs");
        let e = DistributionSpec::Exponential { rate: 1.0 };
        let constant = |c: CopulaSpec| CountVector { law: CountLaw::Constant { k: 3 }, copula: c };
        let spec = RandomSumSpec {
            counts_lo: constant(CopulaSpec::Independence { dim: 2 }),
            counts_hi: constant(CopulaSpec::Independence { dim: 2 }),
            increments_lo: vec![e.clone(); 2],
            increments_hi: vec![e.clone(); 2],
            counts_independent_of_increments: true,
        };
        let r = random_sum_experiment(&spec, &s, 20_000, 0.95).unwrap();
        assert!(r.verdict.holds() && r.verdict.margin.abs() < 1e-9);

        let poisson = |c: CopulaSpec| CountVector { law: CountLaw::Poisson { lambda: 5.0 }, copula: c };
        let spec = RandomSumSpec {
            counts_lo: poisson(CopulaSpec::Independence { dim: 2 }),
            counts_hi: poisson(CopulaSpec::Comonotone { dim: 2 }),
            increments_lo: vec![e.clone(); 2],
            increments_hi: vec![e.clone(); 2],
            counts_independent_of_increments: true,
        };
        let r = random_sum_experiment(&spec, &s, 200_000, 0.95).unwrap();
        assert!(r.verdict.holds(), "{:?}", r.verdict.margin);
        // Compound Poisson: Var S = lambda E[Y^2] = 10; the comonotone pair sum
        // adds 2 Cov = 2 * Var(N) * E[Y]^2 = 10.
        let hi = random_sums(&spec.counts_hi, &spec.increments_hi, &s, 200_000).unwrap();
        let pair: Vec<f64> = hi.rows().map(|r| r[0] + r[1]).collect();
        assert!((stats::variance(&hi.column(0)) - 10.0).abs() < 0.3);
        assert!((stats::variance(&pair) - 30.0).abs() < 1.0);

        let spec_spread = RandomSumSpec {
            counts_lo: poisson(CopulaSpec::Comonotone { dim: 2 }),
            counts_hi: poisson(CopulaSpec::Comonotone { dim: 2 }),
            increments_lo: vec![DistributionSpec::Uniform { a: 0.0, b: 2.0 }; 2],
            increments_hi: vec![e.clone(); 2],
            counts_independent_of_increments: true,
        };
        assert!(random_sum_experiment(&spec_spread, &s, 200_000, 0.95).unwrap().verdict.holds());

        let mut bad = spec.clone();
        bad.counts_independent_of_increments = false;
        assert!(matches!(random_sum_experiment(&bad, &s, 1000, 0.95), Err(Error::Contract(_))));
    }

    #[test]
    fn disjoint_window_block_sums() {
        let s = RandomStream::new(15, "win");
        let lo = ProcessSpec::temporal(8, unif(), CopulaSpec::Independence { dim: 8 });
        let hi = ProcessSpec::temporal(8, unif(), CopulaSpec::GaussianAr1 { rho: 0.6, dim: 8 });
        let a = gen_process(&lo, &s, 100_000).unwrap();
        let b = gen_process(&hi, &s, 100_000).unwrap();
        for window in [0..4usize, 4..8] {
            let w: Vec<f64> = (0..8).map(|t| if window.contains(&t) { 1.0 } else { 0.0 }).collect();
            let sa = a.weighted_sums(&w).unwrap();
            let sb = b.weighted_sums(&w).unwrap();
            assert!(icx_test(&sa, &sb, 0.95).unwrap().holds());
        }
    }

    #[test]
    fn testers_are_reflexive() {
        let x = draw(&DistributionSpec::Lognormal { mu: 0.0, sigma: 0.5 }, "refl", 50_000);
        for v in [
            icx_test(&x, &x, 0.95).unwrap(),
            cx_test(&x, &x, 0.95).unwrap(),
            icv_test(&x, &x, 0.95).unwrap(),
            st_test(&x, &x, 0.95).unwrap(),
        ] {
            assert!(v.holds(), "{v:?}");
        }
    }

    #[test]
    fn stop_loss_curves_are_convex_and_above_mean_excess() {
        for (label, law) in [
            ("c1", DistributionSpec::Exponential { rate: 1.0 }),
            ("c2", DistributionSpec::Weibull { k: 0.8, lambda: 1.0 }),
            ("c3", DistributionSpec::Uniform { a: -1.0, b: 3.0 }),
        ] {
            let x = draw(&law, label, 100_000);
            let grid = default_grid(&x, &x);
            let c = stop_loss(&x, &grid).unwrap();
            for i in 0..grid.len() {
                assert!(c.pi[i] + 2.0 * c.se[i] >= (c.mean - grid[i]).max(0.0) - 2.0 * c.mean_se);
                if i > 0 {
                    assert!(c.pi[i] <= c.pi[i - 1] + 1e-15);
                }
                if i > 0 && i + 1 < grid.len() {
                    assert!(c.pi[i - 1] + c.pi[i + 1] - 2.0 * c.pi[i] >= -1e-12);
                }
            }
        }
    }
}
