//! MIMO channel draws and Shannon capacity with and without transmitter CSI.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues_hermitian, gram, ComplexMatrix};
use crate::rng::RandomStream;
use crate::stats::KahanSum;

/// Channel side information at the transmitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Csit {
    Known,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityParams {
    /// Bandwidth in Hz.
    #[serde(alias = "W")]
    pub w: f64,
    /// SNR `P / (N0 W)`.
    pub rho: f64,
    pub n_t: usize,
    pub csit: Csit,
}

impl CapacityParams {
    pub fn new(w: f64, rho: f64, n_t: usize, csit: Csit) -> Self {
        Self { w, rho, n_t, csit }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err(Error::param(format!("bandwidth must be > 0, got {}", self.w)));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::param(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.n_t == 0 {
            return Err(Error::param("n_t must be >= 1"));
        }
        Ok(())
    }
}

/// One coherence-period capacity realization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitySample {
    /// Bits per second.
    pub c: f64,
    pub lambda_max: f64,
    pub trace: f64,
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub n_r: usize,
    pub n_t: usize,
    /// Law of the entry magnitudes `|H_ij|`; phases are uniform and independent.
    pub entry_law: DistributionSpec,
    #[serde(default)]
    pub normalization: bool,
    #[serde(default = "one")]
    pub subchannels: usize,
}

fn one() -> usize {
    1
}

impl ChannelModel {
    pub fn new(n_r: usize, n_t: usize, entry_law: DistributionSpec) -> Self {
        Self {
            n_r,
            n_t,
            entry_law,
            normalization: false,
            subchannels: 1,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalization = true;
        self
    }

    pub fn with_subchannels(mut self, n: usize) -> Self {
        self.subchannels = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_t == 0 {
            return Err(Error::param("channel dimensions must be >= 1"));
        }
        if self.subchannels == 0 {
            return Err(Error::param("subchannels must be >= 1"));
        }
        self.entry_law.validate()
    }

    /// Factor applied to entry magnitudes so that `E|H_ij|^2 = 1` when normalizing.
    pub fn entry_scale(&self) -> Result<f64> {
        if !self.normalization {
            return Ok(1.0);
        }
        match self.entry_law.second_moment() {
            Some(m2) if m2 > 0.0 && m2.is_finite() => Ok(1.0 / m2.sqrt()),
            _ => Err(Error::param(format!(
                "cannot normalize {} entries: second moment is not finite and positive",
                self.entry_law.name()
            ))),
        }
    }

    /// Draws one block `H_i`.
    pub fn draw_matrix(&self, scale: f64, rng: &mut RandomStream) -> ComplexMatrix {
        let data = (0..self.n_r * self.n_t)
            .map(|_| {
                let mag = self.entry_law.draw(rng) * scale;
                let phase = std::f64::consts::TAU * rng.open01();
                Complex64::from_polar(mag, phase)
            })
            .collect();
        ComplexMatrix::new(self.n_r, self.n_t, data).expect("validated dimensions")
    }
}

/// Eigenmode power allocation `gamma` maximizing `sum log2(1 + snr * gamma_i * lambda_i)`
/// subject to `sum gamma = budget`, by bisection on the water level.
pub fn waterfill(eigs: &[f64], snr: f64, budget: f64) -> Vec<f64> {
    let floors: Vec<Option<f64>> = eigs
        .iter()
        .map(|&l| (l > 0.0).then(|| 1.0 / (snr * l)))
        .collect();
    let active: Vec<f64> = floors.iter().flatten().copied().collect();
    if active.is_empty() || budget <= 0.0 {
        return vec![0.0; eigs.len()];
    }
    let used = |mu: f64| -> f64 {
        let mut acc = KahanSum::new();
        for &a in &active {
            if mu > a {
                acc.add(mu - a);
            }
        }
        acc.value()
    };
    let min_floor = active.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = min_floor;
    let mut hi = min_floor + budget;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let u = used(mid);
        if (u - budget).abs() <= 1e-12 * budget {
            lo = mid;
            hi = mid;
            break;
        }
        if u < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Polish: with the active set fixed by bisection the level has a closed form.
    let bracket = 0.5 * (lo + hi);
    let mut level = KahanSum::new();
    level.add(budget);
    let mut count = 0usize;
    for &a in &active {
        if bracket > a {
            level.add(a);
            count += 1;
        }
    }
    let mu = if count > 0 {
        level.value() / count as f64
    } else {
        bracket
    };
    floors
        .iter()
        .map(|f| match f {
            Some(a) if mu > *a => mu - a,
            _ => 0.0,
        })
        .collect()
}

/// `sum_i log2(1 + snr * gamma_i * lambda_i)` for the given allocation.
pub fn allocation_rate(eigs: &[f64], snr: f64, gamma: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for (&l, &g) in eigs.iter().zip(gamma) {
        acc.add((snr * g * l.max(0.0)).ln_1p() / std::f64::consts::LN_2);
    }
    acc.value()
}

/// Capacity from the eigenvalues of all blocks' grams.
///
/// `snr` is `rho * p / n_t`; `blocks` divides the bandwidth.
pub fn capacity_from_eigs(eigs: &[f64], snr: f64, n_t: usize, blocks: usize, w: f64, csit: Csit) -> f64 {
    let rate = match csit {
        Csit::Unknown => {
            let mut acc = KahanSum::new();
            for &l in eigs {
                acc.add((snr * l.max(0.0)).ln_1p() / std::f64::consts::LN_2);
            }
            acc.value()
        }
        Csit::Known => {
            let budget = (n_t * blocks) as f64;
            let gamma = waterfill(eigs, snr, budget);
            allocation_rate(eigs, snr, &gamma)
        }
    };
    (w / blocks as f64 * rate).max(0.0)
}

/// Capacity of a flat channel `H` with unit power scale.
pub fn capacity_flat(h: &ComplexMatrix, params: &CapacityParams) -> Result<CapacitySample> {
    capacity_freq_selective(std::slice::from_ref(h), params)
}

/// Capacity of a frequency-selective channel given its `N` subchannel blocks.
pub fn capacity_freq_selective(blocks: &[ComplexMatrix], params: &CapacityParams) -> Result<CapacitySample> {
    params.validate()?;
    let draw = ChannelDraw::from_blocks(blocks, 1.0)?;
    Ok(draw.capacity(params, 1.0))
}

/// Spectral summary of one coherence period, reusable across power scalings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDraw {
    /// Eigenvalues of every block's gram, block after block.
    pub eigs: Vec<f64>,
    pub blocks: usize,
    pub lambda_max: f64,
    pub trace: f64,
    /// Realized power draw `p`.
    pub power: f64,
}

impl ChannelDraw {
    pub fn from_blocks(blocks: &[ComplexMatrix], power: f64) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::contract("capacity needs at least one block"))?;
        if blocks
            .iter()
            .any(|b| b.rows() != first.rows() || b.cols() != first.cols())
        {
            return Err(Error::contract("all blocks must share the same dimensions"));
        }
        let mut eigs = Vec::with_capacity(blocks.len() * first.rows());
        let mut trace = KahanSum::new();
        for b in blocks {
            let g = gram(b);
            trace.add(g.trace().re);
            eigs.extend(eigenvalues_hermitian(&g)?);
        }
        let lambda_max = eigs.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            eigs,
            blocks: blocks.len(),
            lambda_max,
            trace: trace.value(),
            power,
        })
    }

    /// Capacity with the transmit power additionally scaled by `kappa`.
    pub fn capacity(&self, params: &CapacityParams, kappa: f64) -> CapacitySample {
        let snr = params.rho * self.power * kappa / params.n_t as f64;
        CapacitySample {
            c: capacity_from_eigs(&self.eigs, snr, params.n_t, self.blocks, params.w, params.csit),
            lambda_max: self.lambda_max,
            trace: self.trace,
            power: self.power,
        }
    }

    /// Number of eigenvalues above `1e-9 * lambda_max`.
    pub fn rank(&self) -> usize {
        rank_of(&self.eigs)
    }
}

pub fn rank_of(eigs: &[f64]) -> usize {
    let lmax = eigs.iter().copied().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return 0;
    }
    eigs.iter().filter(|&&l| l > 1e-9 * lmax).count()
}

/// Residual of the truncated series `sum_k (-1)^(k+1)/k z^k Tr[L^k]` against `log det(I + zL)`.
pub fn logdet_series_check(eigenvalues: &[f64], z: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::contract("series order must be >= 1"));
    }
    let lmax = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    if !(z.abs() * lmax < 1.0) {
        return Err(Error::domain(format!(
            "series diverges: |z| * max|lambda| = {} >= 1",
            z.abs() * lmax
        )));
    }
    let mut exact = KahanSum::new();
    for &l in eigenvalues {
        exact.add((z * l).ln_1p());
    }
    let mut series = KahanSum::new();
    for &l in eigenvalues {
        let x = z * l;
        let mut pow = 1.0;
        for j in 1..=k {
            pow *= x;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            series.add(sign * pow / j as f64);
        }
    }
    Ok((exact.value() - series.value()).abs())
}

/// `Tr[exp(s X)]` for Hermitian `X` with the given eigenvalues.
pub fn trace_exp(eigenvalues: &[f64], s: f64) -> f64 {
    eigenvalues.iter().map(|l| (s * l).exp()).sum()
}

const MAX_POWER_REJECT_FRACTION: f64 = 0.001;
const MAX_TRIES_PER_DRAW: usize = 64;

/// `n` independent coherence periods, each with its own derived stream.
pub fn sample_draws(
    model: &ChannelModel,
    power_law: &DistributionSpec,
    stream: &RandomStream,
    n: usize,
) -> Result<Vec<ChannelDraw>> {
    model.validate()?;
    power_law.validate()?;
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let scale = model.entry_scale()?;
    let base = stream.derive("channel");
    let results: Vec<(ChannelDraw, usize)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = base.substream(j as u64);
            let blocks: Vec<ComplexMatrix> = (0..model.subchannels)
                .map(|_| model.draw_matrix(scale, &mut rng))
                .collect();
            let mut rejected = 0;
            let mut p = power_law.draw(&mut rng);
            while !(p > 0.0 && p.is_finite()) && rejected < MAX_TRIES_PER_DRAW {
                rejected += 1;
                p = power_law.draw(&mut rng);
            }
            if !(p > 0.0 && p.is_finite()) {
                p = f64::NAN;
            }
            let draw = ChannelDraw::from_blocks(&blocks, p).expect("equal block shapes");
            (draw, rejected)
        })
        .collect();
    let rejected: usize = results.iter().map(|r| r.1).sum();
    let unresolved = results.iter().any(|r| r.0.power.is_nan());
    if unresolved || rejected as f64 > MAX_POWER_REJECT_FRACTION * n as f64 {
        return Err(Error::ResamplePolicy {
            rejected,
            drawn: n + rejected,
        });
    }
    Ok(results.into_iter().map(|r| r.0).collect())
}

/// `n` i.i.d. capacity samples under random power.
pub fn sample_capacity(
    model: &ChannelModel,
    power_law: &DistributionSpec,
    params: &CapacityParams,
    stream: &RandomStream,
    n: usize,
) -> Result<Vec<CapacitySample>> {
    params.validate()?;
    if params.n_t != model.n_t {
        return Err(Error::contract(format!(
            "params.n_t = {} but the channel has {} transmit antennas",
            params.n_t, model.n_t
        )));
    }
    let draws = sample_draws(model, power_law, stream, n)?;
    Ok(draws.par_iter().map(|d| d.capacity(params, 1.0)).collect())
}
