//! Copula sampling, NORTA marginal transforms and multivariate parameter
//! processes with separately controlled temporal and spatial dependence.

use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::{normal_cdf, normal_sf};

/// Dependence structure of a random vector with uniform marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CopulaSpec {
    Independence { dim: usize },
    Comonotone { dim: usize },
    /// `(U, 1 - U)`; bivariate only.
    Countermonotone,
    GaussianExchangeable { rho: f64, dim: usize },
    GaussianAr1 { rho: f64, dim: usize },
    Clayton { theta: f64, dim: usize },
}

const U_MIN: f64 = f64::MIN_POSITIVE;
const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

fn clamp_u(u: f64) -> f64 {
    u.clamp(U_MIN, U_MAX)
}

impl CopulaSpec {
    pub fn dim(&self) -> usize {
        match *self {
            Self::Countermonotone => 2,
            Self::Independence { dim }
            | Self::Comonotone { dim }
            | Self::GaussianExchangeable { dim, .. }
            | Self::GaussianAr1 { dim, .. }
            | Self::Clayton { dim, .. } => dim,
        }
    }

    /// Same family with a different dimension (countermonotone stays bivariate).
    pub fn with_dim(&self, dim: usize) -> Self {
        match *self {
            Self::Independence { .. } => Self::Independence { dim },
            Self::Comonotone { .. } => Self::Comonotone { dim },
            Self::Countermonotone => Self::Countermonotone,
            Self::GaussianExchangeable { rho, .. } => Self::GaussianExchangeable { rho, dim },
            Self::GaussianAr1 { rho, .. } => Self::GaussianAr1 { rho, dim },
            Self::Clayton { theta, .. } => Self::Clayton { theta, dim },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::param("copula dimension must be at least 1"));
        }
        match *self {
            Self::GaussianExchangeable { rho, dim } => {
                let lower = if dim > 1 { -1.0 / (dim - 1) as f64 } else { -1.0 };
                if !(rho > lower && rho < 1.0) {
                    return Err(Error::param(format!(
                        "exchangeable correlation must lie in ({lower}, 1) for dim {dim}, got {rho}"
                    )));
                }
            }
            Self::GaussianAr1 { rho, .. } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::param(format!("AR(1) correlation must satisfy |rho| < 1, got {rho}")));
                }
            }
            Self::Clayton { theta, .. } => {
                if !(theta >= 0.0 && theta.is_finite()) {
                    return Err(Error::param(format!("Clayton theta must be finite and >= 0, got {theta}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_independence(&self) -> bool {
        match *self {
            Self::Independence { .. } => true,
            Self::GaussianExchangeable { rho, dim } => rho == 0.0 || dim == 1,
            Self::GaussianAr1 { rho, dim } => rho == 0.0 || dim == 1,
            Self::Clayton { theta, dim } => theta == 0.0 || dim == 1,
            Self::Comonotone { dim } => dim == 1,
            Self::Countermonotone => false,
        }
    }

    /// Correlation matrix (row-major) of the underlying Gaussian vector, when the
    /// copula is Gaussian. Independence counts as the identity.
    pub fn gaussian_correlation(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        let build = |f: &dyn Fn(usize, usize) -> f64| {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] = if i == j { 1.0 } else { f(i, j) };
                }
            }
            m
        };
        match *self {
            Self::Independence { .. } => Some(build(&|_, _| 0.0)),
            Self::GaussianExchangeable { rho, .. } => Some(build(&|_, _| rho)),
            Self::GaussianAr1 { rho, .. } => Some(build(&|i, j| rho.powi((i as i32 - j as i32).abs()))),
            _ => None,
        }
    }

    /// Fills `out` (length `dim`) with one uniform vector. Gaussian-type copulas
    /// always consume exactly `dim` standard normals so that configurations
    /// sharing a stream share innovations.
    pub fn fill(&self, rng: &mut RandomStream, out: &mut [f64]) {
        let d = out.len();
        match *self {
            Self::Clayton { theta, .. } if theta > 0.0 => {
                let v: f64 = Gamma::new(1.0 / theta, 1.0).expect("validated theta").sample(rng);
                for o in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    // (1 + E/V)^(-1/theta), computed in log space for small V.
                    *o = clamp_u((-(e / v).ln_1p() / theta).exp());
                }
            }
            Self::Countermonotone => {
                let z: f64 = StandardNormal.sample(rng);
                let _: f64 = StandardNormal.sample(rng);
                out[0] = clamp_u(normal_cdf(z));
                out[1] = clamp_u(normal_sf(z));
            }
            Self::Comonotone { .. } => {
                let z: f64 = StandardNormal.sample(rng);
                for _ in 1..d {
                    let _: f64 = StandardNormal.sample(rng);
                }
                out.fill(clamp_u(normal_cdf(z)));
            }
            Self::GaussianExchangeable { rho, .. } if rho != 0.0 => {
                // Symmetric square root of (1 - rho) I + rho 11'.
                let a = (1.0 - rho).sqrt();
                let c = ((1.0 - rho + rho * d as f64).sqrt() - a) / d as f64;
                let mut total = 0.0;
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = z;
                    total += z;
                }
                for o in out.iter_mut() {
                    *o = clamp_u(normal_cdf(a * *o + c * total));
                }
            }
            Self::GaussianAr1 { rho, .. } if rho != 0.0 => {
                let innov = (1.0 - rho * rho).sqrt();
                let mut prev = 0.0;
                for (t, o) in out.iter_mut().enumerate() {
                    let e: f64 = StandardNormal.sample(rng);
                    prev = if t == 0 { e } else { rho * prev + innov * e };
                    *o = clamp_u(normal_cdf(prev));
                }
            }
            _ => {
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = clamp_u(normal_cdf(z));
                }
            }
        }
    }
}

/// Row-major real matrix; rows are observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealRows {
    cols: usize,
    data: Vec<f64>,
}

impl RealRows {
    pub fn new(cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::contract(format!(
                "{} values do not form rows of width {cols}",
                data.len()
            )));
        }
        Ok(Self { cols, data })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

/// `n` uniform vectors; vector `i` is drawn from `stream.substream(i)`.
pub fn sample_copula(spec: &CopulaSpec, stream: &RandomStream, n: usize) -> Result<RealRows> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let d = spec.dim();
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut rng = stream.substream(i as u64);
        spec.fill(&mut rng, row);
    });
    RealRows::new(d, data)
}

/// Quantile transform of each coordinate through its marginal law.
pub fn norta(uniforms: &RealRows, marginals: &[DistributionSpec]) -> Result<RealRows> {
    if marginals.len() != uniforms.cols() {
        return Err(Error::contract(format!(
            "{} marginals for vectors of dimension {}",
            marginals.len(),
            uniforms.cols()
        )));
    }
    for m in marginals {
        m.validate()?;
    }
    let d = uniforms.cols();
    let data: Vec<f64> = uniforms
        .data()
        .par_iter()
        .enumerate()
        .map(|(k, &u)| marginals[k % d].quantile(u))
        .collect::<Result<_>>()?;
    RealRows::new(d, data)
}

/// Location/scale modification of a base marginal:
/// `x -> mean + spread * (x - mean) + shift`. `spread` keeps the mean, `shift`
/// moves it. `t`/`coord` restrict the cells it applies to; `None` means all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalMod {
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default)]
    pub coord: Option<usize>,
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "one")]
    pub spread: f64,
}

fn one() -> f64 {
    1.0
}

impl MarginalMod {
    pub fn shift(t: Option<usize>, coord: Option<usize>, shift: f64) -> Self {
        Self { t, coord, shift, spread: 1.0 }
    }

    pub fn spread(t: Option<usize>, coord: Option<usize>, spread: f64) -> Self {
        Self { t, coord, shift: 0.0, spread }
    }

    fn applies(&self, t: usize, c: usize) -> bool {
        self.t.is_none_or(|x| x == t) && self.coord.is_none_or(|x| x == c)
    }
}

/// A `T x coords` parameter process per path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(alias = "T")]
    pub t: usize,
    pub coords: usize,
    /// One law shared by all coordinates, or one per coordinate.
    pub marginals: Vec<DistributionSpec>,
    pub temporal_copula: CopulaSpec,
    pub spatial_copula: CopulaSpec,
    #[serde(default)]
    pub modifiers: Vec<MarginalMod>,
    /// Allows both axes to be dependent (Gaussian copulas only, Kronecker correlation).
    #[serde(default)]
    pub allow_both_axes: bool,
}

impl ProcessSpec {
    /// Single-coordinate process with a temporal copula.
    pub fn temporal(t: usize, marginal: DistributionSpec, copula: CopulaSpec) -> Self {
        Self {
            t,
            coords: 1,
            marginals: vec![marginal],
            temporal_copula: copula.with_dim(t),
            spatial_copula: CopulaSpec::Independence { dim: 1 },
            modifiers: Vec::new(),
            allow_both_axes: false,
        }
    }

    /// One time step of `coords` coordinates with a spatial copula.
    pub fn spatial(coords: usize, marginal: DistributionSpec, copula: CopulaSpec) -> Self {
        Self {
            t: 1,
            coords,
            marginals: vec![marginal],
            temporal_copula: CopulaSpec::Independence { dim: 1 },
            spatial_copula: copula.with_dim(coords),
            modifiers: Vec::new(),
            allow_both_axes: false,
        }
    }

    pub fn with_modifiers(mut self, modifiers: Vec<MarginalMod>) -> Self {
        self.modifiers = modifiers;
        self
    }

    pub fn marginal(&self, coord: usize) -> &DistributionSpec {
        if self.marginals.len() == 1 {
            &self.marginals[0]
        } else {
            &self.marginals[coord]
        }
    }

    fn temporal_dependent(&self) -> bool {
        !self.temporal_copula.is_independence()
    }

    fn spatial_dependent(&self) -> bool {
        !self.spatial_copula.is_independence()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.coords == 0 {
            return Err(Error::param("process needs T >= 1 and coords >= 1"));
        }
        if self.marginals.len() != 1 && self.marginals.len() != self.coords {
            return Err(Error::contract(format!(
                "{} marginals for {} coordinates",
                self.marginals.len(),
                self.coords
            )));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        self.temporal_copula.validate()?;
        self.spatial_copula.validate()?;
        if self.temporal_dependent() && self.temporal_copula.dim() != self.t {
            return Err(Error::contract(format!(
                "temporal copula has dimension {} but T = {}",
                self.temporal_copula.dim(),
                self.t
            )));
        }
        if self.spatial_dependent() && self.spatial_copula.dim() != self.coords {
            return Err(Error::contract(format!(
                "spatial copula has dimension {} but coords = {}",
                self.spatial_copula.dim(),
                self.coords
            )));
        }
        if self.temporal_dependent() && self.spatial_dependent() {
            if !self.allow_both_axes {
                return Err(Error::contract(
                    "both temporal and spatial copulas are dependent; set allow_both_axes to override",
                ));
            }
            if self.temporal_copula.gaussian_correlation().is_none()
                || self.spatial_copula.gaussian_correlation().is_none()
            {
                return Err(Error::contract("joint temporal-spatial dependence needs Gaussian copulas on both axes"));
            }
        }
        for m in &self.modifiers {
            if !(m.shift.is_finite() && m.spread.is_finite() && m.spread > 0.0) {
                return Err(Error::param("marginal modifiers need a finite shift and a positive spread"));
            }
            if m.t.is_some_and(|t| t >= self.t) || m.coord.is_some_and(|c| c >= self.coords) {
                return Err(Error::contract("marginal modifier targets a cell outside the process"));
            }
        }
        Ok(())
    }

    /// Uniform cell values of one path, indexed `t * coords + c`.
    fn fill_uniforms(&self, rng: &mut RandomStream, u: &mut [f64]) {
        let (t_len, n) = (self.t, self.coords);
        if self.temporal_dependent() && self.spatial_dependent() {
            let lt = cholesky(&self.temporal_copula.gaussian_correlation().expect("validated"), t_len);
            let ls = cholesky(&self.spatial_copula.gaussian_correlation().expect("validated"), n);
            let eps: Vec<f64> = (0..t_len * n).map(|_| StandardNormal.sample(rng)).collect();
            for t in 0..t_len {
                for c in 0..n {
                    let mut z = 0.0;
                    for t2 in 0..=t {
                        for c2 in 0..=c {
                            z += lt[t * t_len + t2] * ls[c * n + c2] * eps[t2 * n + c2];
                        }
                    }
                    u[t * n + c] = clamp_u(normal_cdf(z));
                }
            }
        } else if self.spatial_dependent() {
            let cop = &self.spatial_copula;
            for row in u.chunks_exact_mut(n) {
                cop.fill(rng, row);
            }
        } else {
            let cop = if self.temporal_dependent() {
                self.temporal_copula.clone()
            } else {
                CopulaSpec::Independence { dim: t_len }
            };
            let mut buf = vec![0.0; t_len];
            for c in 0..n {
                cop.fill(rng, &mut buf);
                for t in 0..t_len {
                    u[t * n + c] = buf[t];
                }
            }
        }
    }

    /// Cell transforms: base marginal quantile plus the affine modifier.
    fn cell_transforms(&self) -> Result<Vec<(usize, f64, f64)>> {
        let mut out = Vec::with_capacity(self.t * self.coords);
        for t in 0..self.t {
            for c in 0..self.coords {
                let marginal_index = if self.marginals.len() == 1 { 0 } else { c };
                let (mut spread, mut shift) = (1.0, 0.0);
                for m in self.modifiers.iter().filter(|m| m.applies(t, c)) {
                    spread *= m.spread;
                    shift += m.shift;
                }
                let mut offset = shift;
                if spread != 1.0 {
                    let mean = self.marginal(c).mean().ok_or_else(|| {
                        Error::param("spread modifiers need a marginal with finite mean")
                    })?;
                    offset += mean * (1.0 - spread);
                }
                out.push((marginal_index, spread, offset));
            }
        }
        Ok(out)
    }

    /// One path drawn from `rng`, indexed `t * coords + c`.
    pub fn draw_path(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        self.validate()?;
        let cells = self.cell_transforms()?;
        let mut u = vec![0.0; self.t * self.coords];
        self.fill_uniforms(rng, &mut u);
        transform_cells(&self.marginals, &cells, &mut u)?;
        Ok(u)
    }
}

fn transform_cells(marginals: &[DistributionSpec], cells: &[(usize, f64, f64)], u: &mut [f64]) -> Result<()> {
    for (v, &(m, spread, offset)) in u.iter_mut().zip(cells) {
        *v = marginals[m].quantile(*v)? * spread + offset;
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                l[i * n + i] = (a[i * n + i] - s).max(0.0).sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    l
}

/// Realized paths of a process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMatrix {
    pub t: usize,
    pub coords: usize,
    pub paths: usize,
    data: Vec<f64>,
}

impl PathMatrix {
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.t * self.coords;
        &self.data[p * w..(p + 1) * w]
    }

    pub fn value(&self, p: usize, t: usize, c: usize) -> f64 {
        self.path(p)[t * self.coords + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Series of one coordinate along one path.
    pub fn series(&self, p: usize, c: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.value(p, t, c)).collect()
    }

    /// Weighted sum of every path. `weights` has one entry per time step
    /// (applied to all coordinates) or one per cell; empty means all ones.
    pub fn weighted_sums(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let w = self.t * self.coords;
        if weights.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let cell_weight: Vec<f64> = if weights.is_empty() {
            vec![1.0; w]
        } else if weights.len() == w {
            weights.to_vec()
        } else if weights.len() == self.t {
            (0..w).map(|k| weights[k / self.coords]).collect()
        } else {
            return Err(Error::contract(format!(
                "{} weights for T = {} and {} coordinates",
                weights.len(),
                self.t,
                self.coords
            )));
        };
        Ok((0..self.paths)
            .map(|p| self.path(p).iter().zip(&cell_weight).map(|(x, a)| x * a).sum())
            .collect())
    }

    /// CSV dump with columns `path,t,coord,value`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "path,t,coord,value")?;
        for p in 0..self.paths {
            for t in 0..self.t {
                for c in 0..self.coords {
                    writeln!(out, "{p},{t},{c},{:.16e}", self.value(p, t, c))?;
                }
            }
        }
        Ok(())
    }
}

/// `paths` independent paths; path `p` uses `stream.substream(p)`.
pub fn gen_process(spec: &ProcessSpec, stream: &RandomStream, paths: usize) -> Result<PathMatrix> {
    spec.validate()?;
    if paths == 0 {
        return Err(Error::contract("need at least one path"));
    }
    let w = spec.t * spec.coords;
    let cells = spec.cell_transforms()?;
    let mut data = vec![0.0; paths * w];
    data.par_chunks_mut(w)
        .enumerate()
        .try_for_each(|(p, row)| {
            let mut rng = stream.substream(p as u64);
            spec.fill_uniforms(&mut rng, row);
            transform_cells(&spec.marginals, &cells, row)
        })?;
    Ok(PathMatrix {
        t: spec.t,
        coords: spec.coords,
        paths,
        data,
    })
}

/// Pair of processes certified supermodular-ordered (`lo <=sm hi`) by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmPair {
    lo: ProcessSpec,
    hi: ProcessSpec,
}

impl SmPair {
    pub fn lo(&self) -> &ProcessSpec {
        &self.lo
    }

    pub fn hi(&self) -> &ProcessSpec {
        &self.hi
    }
}

/// Whether `lo <=sm hi` is known on one axis of dimension `dim`.
pub fn sm_certified(lo: &CopulaSpec, hi: &CopulaSpec, dim: usize) -> bool {
    let lo = if lo.is_independence() { CopulaSpec::Independence { dim } } else { lo.clone() };
    let hi = if hi.is_independence() { CopulaSpec::Independence { dim } } else { hi.clone() };
    if lo == hi || matches!(hi, CopulaSpec::Comonotone { .. }) || matches!(lo, CopulaSpec::Countermonotone) {
        return true;
    }
    match (lo.gaussian_correlation(), hi.gaussian_correlation()) {
        (Some(a), Some(b)) if a.len() == b.len() => a.iter().zip(&b).all(|(x, y)| x <= y),
        _ => false,
    }
}

pub fn sm_pair(lo: &ProcessSpec, hi: &ProcessSpec) -> Result<SmPair> {
    lo.validate()?;
    hi.validate()?;
    if lo.t != hi.t || lo.coords != hi.coords {
        return Err(Error::contract("sm pair needs processes of equal shape"));
    }
    if lo.marginals != hi.marginals || lo.modifiers != hi.modifiers {
        return Err(Error::contract("sm pair needs identical marginals"));
    }
    if !sm_certified(&lo.temporal_copula, &hi.temporal_copula, lo.t)
        || !sm_certified(&lo.spatial_copula, &hi.spatial_copula, lo.coords)
    {
        return Err(Error::contract(format!(
            "no supermodular certificate for temporal {:?} vs {:?}, spatial {:?} vs {:?}",
            lo.temporal_copula, hi.temporal_copula, lo.spatial_copula, hi.spatial_copula
        )));
    }
    Ok(SmPair {
        lo: lo.clone(),
        hi: hi.clone(),
    })
}
