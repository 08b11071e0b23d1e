//! Parametric marginal laws with samplers, CDFs, quantiles and tail labels.

use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A marginal law. Serialized with a `family` tag, e.g.
/// `{"family":"pareto1","alpha":2.0,"xm":1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistributionSpec {
    Rayleigh { sigma: f64 },
    /// Rice with K-factor `k` and mean power `omega`.
    Rice { k: f64, omega: f64 },
    Nakagami { m: f64, omega: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Weibull { k: f64, lambda: f64 },
    #[serde(rename = "pareto1")]
    ParetoI { alpha: f64, xm: f64 },
    Exponential { rate: f64 },
    /// `exp(X)` with `X ~ ParetoI(alpha, xm)`; survival `(xm / ln x)^alpha`.
    LogPareto { alpha: f64, xm: f64 },
    Constant { v: f64 },
    Uniform { a: f64, b: f64 },
}

/// Ground-truth tail class of a law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum TailClassLabel {
    LightTailed,
    HeavySubexponentialAllMoments,
    RegularlyVarying { index: f64 },
    SlowlyVarying,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite, got {v}")))
    }
}

impl DistributionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rayleigh { .. } => "rayleigh",
            Self::Rice { .. } => "rice",
            Self::Nakagami { .. } => "nakagami",
            Self::Lognormal { .. } => "lognormal",
            Self::Weibull { .. } => "weibull",
            Self::ParetoI { .. } => "pareto1",
            Self::Exponential { .. } => "exponential",
            Self::LogPareto { .. } => "logpareto",
            Self::Constant { .. } => "constant",
            Self::Uniform { .. } => "uniform",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Rayleigh { sigma } => positive("sigma", sigma),
            Self::Rice { k, omega } => {
                finite("k", k)?;
                if k < 0.0 {
                    return Err(Error::param(format!("rice k must be >= 0, got {k}")));
                }
                positive("omega", omega)
            }
            Self::Nakagami { m, omega } => {
                finite("m", m)?;
                if m < 0.5 {
                    return Err(Error::param(format!("nakagami m must be >= 0.5, got {m}")));
                }
                positive("omega", omega)
            }
            Self::Lognormal { mu, sigma } => {
                finite("mu", mu)?;
                positive("sigma", sigma)
            }
            Self::Weibull { k, lambda } => {
                positive("k", k)?;
                positive("lambda", lambda)
            }
            Self::ParetoI { alpha, xm } | Self::LogPareto { alpha, xm } => {
                positive("alpha", alpha)?;
                positive("xm", xm)
            }
            Self::Exponential { rate } => positive("rate", rate),
            Self::Constant { v } => finite("v", v),
            Self::Uniform { a, b } => {
                finite("a", a)?;
                finite("b", b)?;
                if a < b {
                    Ok(())
                } else {
                    Err(Error::param(format!("uniform requires a < b, got a={a}, b={b}")))
                }
            }
        }
    }

    /// One draw. The spec must already be valid.
    pub fn draw(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            Self::Rayleigh { sigma } => sigma * (-2.0 * rng.open01().ln()).sqrt(),
            Self::Rice { k, omega } => {
                let (nu, s) = rice_nu_sigma(k, omega);
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                (nu + s * z1).hypot(s * z2)
            }
            Self::Nakagami { m, omega } => {
                let g = Gamma::new(m, omega / m).expect("validated nakagami");
                let v: f64 = g.sample(rng);
                v.sqrt()
            }
            Self::Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Self::Weibull { k, lambda } => lambda * (-rng.open01().ln()).powf(1.0 / k),
            Self::ParetoI { alpha, xm } => xm * rng.open01().powf(-1.0 / alpha),
            Self::Exponential { rate } => -rng.open01().ln() / rate,
            Self::LogPareto { alpha, xm } => (xm * rng.open01().powf(-1.0 / alpha)).exp(),
            Self::Constant { v } => v,
            Self::Uniform { a, b } => a + (b - a) * rng.open01(),
        }
    }

    /// `n` i.i.d. draws.
    pub fn sample(&self, stream: &mut RandomStream, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::contract("sample size must be at least 1"));
        }
        Ok((0..n).map(|_| self.draw(stream)).collect())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { v } => {
                if x >= v {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            _ => 1.0 - self.sf(x),
        }
    }

    /// Survival function `P(X > x)`, computed directly for accuracy in the tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Rayleigh { sigma } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x * x / (2.0 * sigma * sigma)).exp()
                }
            }
            Self::Rice { k, omega } => rice_sf(k, omega, x),
            Self::Nakagami { m, omega } => {
                if x <= 0.0 {
                    1.0
                } else if x.is_infinite() {
                    0.0
                } else {
                    gamma_ur(m, m * x * x / omega)
                }
            }
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    1.0
                } else {
                    crate::stats::normal_sf((x.ln() - mu) / sigma)
                }
            }
            Self::Weibull { k, lambda } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-(x / lambda).powf(k)).exp()
                }
            }
            Self::ParetoI { alpha, xm } => {
                if x <= xm {
                    1.0
                } else {
                    (xm / x).powf(alpha)
                }
            }
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            Self::LogPareto { alpha, xm } => {
                if x <= 0.0 || x.ln() <= xm {
                    1.0
                } else {
                    (xm / x.ln()).powf(alpha)
                }
            }
            Self::Constant { v } => {
                if x >= v {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Uniform { a, b } => ((b - x) / (b - a)).clamp(0.0, 1.0),
        }
    }

    /// Generalized inverse `inf{x : F(x) >= u}`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(format!("quantile level must lie in (0, 1), got {u}")));
        }
        self.validate()?;
        Ok(self.quantile_unchecked(u))
    }

    /// Quantile without validation; used on hot paths after a single validation.
    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Self::Rayleigh { sigma } => sigma * (-2.0 * (-u).ln_1p()).sqrt(),
            Self::Lognormal { mu, sigma } => {
                (mu + sigma * crate::stats::normal_quantile(u)).exp()
            }
            Self::Weibull { k, lambda } => lambda * (-(-u).ln_1p()).powf(1.0 / k),
            Self::ParetoI { alpha, xm } => xm * (1.0 - u).powf(-1.0 / alpha),
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::LogPareto { alpha, xm } => (xm * (1.0 - u).powf(-1.0 / alpha)).exp(),
            Self::Constant { v } => v,
            Self::Uniform { a, b } => a + (b - a) * u,
            Self::Rice { .. } | Self::Nakagami { .. } => self.quantile_bisect(u),
        }
    }

    fn quantile_bisect(&self, u: f64) -> f64 {
        // Work with the survival function in the upper half to keep precision.
        let upper = u > 0.5;
        let target = if upper { 1.0 - u } else { u };
        let below = |x: f64| {
            if upper {
                self.sf(x) > target
            } else {
                self.cdf(x) < target
            }
        };
        let mut lo = 0.0;
        let mut hi = self.second_moment().unwrap_or(1.0).sqrt().max(1e-300);
        while below(hi) {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-12 * hi.max(1e-300) {
                break;
            }
            if below(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `E[X]`, or `None` when infinite.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            Self::Rayleigh { sigma } => Some(sigma * (std::f64::consts::PI / 2.0).sqrt()),
            Self::Rice { .. } => Some(self.integrate_sf()),
            Self::Nakagami { m, omega } => {
                Some((ln_gamma(m + 0.5) - ln_gamma(m)).exp() * (omega / m).sqrt())
            }
            Self::Lognormal { mu, sigma } => Some((mu + 0.5 * sigma * sigma).exp()),
            Self::Weibull { k, lambda } => Some(lambda * ln_gamma(1.0 + 1.0 / k).exp()),
            Self::ParetoI { alpha, xm } => (alpha > 1.0).then(|| alpha * xm / (alpha - 1.0)),
            Self::Exponential { rate } => Some(1.0 / rate),
            Self::LogPareto { .. } => None,
            Self::Constant { v } => Some(v),
            Self::Uniform { a, b } => Some(0.5 * (a + b)),
        }
    }

    /// `E[X^2]`, or `None` when infinite.
    pub fn second_moment(&self) -> Option<f64> {
        match *self {
            Self::Rayleigh { sigma } => Some(2.0 * sigma * sigma),
            Self::Rice { omega, .. } | Self::Nakagami { omega, .. } => Some(omega),
            Self::Lognormal { mu, sigma } => Some((2.0 * mu + 2.0 * sigma * sigma).exp()),
            Self::Weibull { k, lambda } => Some(lambda * lambda * ln_gamma(1.0 + 2.0 / k).exp()),
            Self::ParetoI { alpha, xm } => {
                (alpha > 2.0).then(|| alpha * xm * xm / (alpha - 2.0))
            }
            Self::Exponential { rate } => Some(2.0 / (rate * rate)),
            Self::LogPareto { .. } => None,
            Self::Constant { v } => Some(v * v),
            Self::Uniform { a, b } => Some((a * a + a * b + b * b) / 3.0),
        }
    }

    pub fn variance(&self) -> Option<f64> {
        let m = self.mean()?;
        let m2 = self.second_moment()?;
        Some((m2 - m * m).max(0.0))
    }

    /// True when every draw is strictly positive.
    pub fn strictly_positive(&self) -> bool {
        match *self {
            Self::Constant { v } => v > 0.0,
            Self::Uniform { a, .. } => a >= 0.0,
            _ => true,
        }
    }

    pub fn ground_truth_tail(&self) -> Result<TailClassLabel> {
        self.validate()?;
        Ok(match *self {
            Self::Lognormal { .. } => TailClassLabel::HeavySubexponentialAllMoments,
            Self::Weibull { k, .. } if k < 1.0 => TailClassLabel::HeavySubexponentialAllMoments,
            Self::ParetoI { alpha, .. } => TailClassLabel::RegularlyVarying { index: alpha },
            Self::LogPareto { .. } => TailClassLabel::SlowlyVarying,
            _ => TailClassLabel::LightTailed,
        })
    }

    fn integrate_sf(&self) -> f64 {
        // Composite Simpson on [0, hi]; the survival beyond hi is below 1e-30.
        let mut hi = self.second_moment().unwrap_or(1.0).sqrt();
        while self.sf(hi) > 1e-30 {
            hi *= 1.5;
        }
        let n = 20_000;
        let h = hi / n as f64;
        let mut acc = crate::stats::KahanSum::new();
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc.add(w * self.sf(i as f64 * h));
        }
        acc.value() * h / 3.0
    }
}

fn rice_nu_sigma(k: f64, omega: f64) -> (f64, f64) {
    let nu = (k * omega / (k + 1.0)).sqrt();
    let s = (omega / (2.0 * (k + 1.0))).sqrt();
    (nu, s)
}

/// Rice survival as a Poisson(K) mixture of Gamma(j+1, 1) survivals at `x^2 / (2 sigma^2)`.
fn rice_sf(k: f64, omega: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let (_, s) = rice_nu_sigma(k, omega);
    let z = x * x / (2.0 * s * s);
    if k == 0.0 {
        return (-z).exp();
    }
    let jmax = (k + 40.0 * k.sqrt() + 60.0).ceil() as usize;
    let mut acc = crate::stats::KahanSum::new();
    for j in 0..=jmax {
        let jf = j as f64;
        let logw = -k + jf * k.ln() - ln_gamma(jf + 1.0);
        let w = logw.exp();
        if w == 0.0 {
            continue;
        }
        acc.add(w * gamma_ur(jf + 1.0, z));
    }
    acc.value().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    fn zoo() -> Vec<DistributionSpec> {
        use DistributionSpec::*;
        vec![
            Rayleigh { sigma: 1.3 },
            Rice { k: 3.0, omega: 1.0 },
            Rice { k: 0.0, omega: 2.0 },
            Nakagami { m: 2.0, omega: 1.0 },
            Nakagami { m: 0.7, omega: 3.0 },
            Lognormal { mu: 0.2, sigma: 0.8 },
            Weibull { k: 0.8, lambda: 1.0 },
            Weibull { k: 2.5, lambda: 2.0 },
            ParetoI { alpha: 2.5, xm: 1.0 },
            Exponential { rate: 2.0 },
            LogPareto { alpha: 1.5, xm: 1.0 },
            Constant { v: 3.5 },
            Uniform { a: -1.0, b: 2.0 },
        ]
    }

    #[test]
    fn json_shape() {
        let s: DistributionSpec =
            serde_json::from_str(r#"{"family":"pareto1","alpha":2.0,"xm":1.0}"#).unwrap();
        assert_eq!(s, DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 });
        for d in zoo() {
            let j = serde_json::to_string(&d).unwrap();
            assert!(j.contains(&format!("\"family\":\"{}\"", d.name())));
            let back: DistributionSpec = serde_json::from_str(&j).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn constant_samples() {
        let mut s = RandomStream::new(1, "c");
        let v = DistributionSpec::Constant { v: 3.5 }.sample(&mut s, 4).unwrap();
        assert_eq!(v, vec![3.5; 4]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        use DistributionSpec::*;
        let mut s = RandomStream::new(1, "bad");
        for d in [
            ParetoI { alpha: 0.0, xm: 1.0 },
            LogPareto { alpha: 1.0, xm: -1.0 },
            Uniform { a: 1.0, b: 1.0 },
            Rayleigh { sigma: f64::NAN },
            Exponential { rate: -1.0 },
        ] {
            assert!(matches!(d.sample(&mut s, 3), Err(Error::ParameterDomain(_))));
            assert!(d.ground_truth_tail().is_err());
        }
    }

    #[test]
    fn pareto_exceedance_at_ten() {
        let mut s = RandomStream::new(11, "pareto");
        let d = DistributionSpec::ParetoI { alpha: 1.0, xm: 1.0 };
        let v = d.sample(&mut s, 1_000_000).unwrap();
        let p = v.iter().filter(|&&x| x > 10.0).count() as f64 / v.len() as f64;
        assert!((p - 0.1).abs() < 0.001, "p = {p}");
    }

    #[test]
    fn lognormal_reciprocal_symmetry() {
        let d = DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 };
        let y = d.sample(&mut RandomStream::new(5, "y"), 100_000).unwrap();
        let z = d.sample(&mut RandomStream::new(5, "z"), 100_000).unwrap();
        let a = stats::sorted(&y);
        let b = stats::sorted(&z.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
        assert!(stats::ks_two_sample_passes(&a, &b, 0.01));
    }

    #[test]
    fn tail_labels() {
        use DistributionSpec::*;
        use TailClassLabel::*;
        assert_eq!(Rayleigh { sigma: 1.0 }.ground_truth_tail().unwrap(), LightTailed);
        assert_eq!(
            Lognormal { mu: 0.0, sigma: 1.0 }.ground_truth_tail().unwrap(),
            HeavySubexponentialAllMoments
        );
        assert_eq!(
            Weibull { k: 0.8, lambda: 1.0 }.ground_truth_tail().unwrap(),
            HeavySubexponentialAllMoments
        );
        assert_eq!(Weibull { k: 1.0, lambda: 1.0 }.ground_truth_tail().unwrap(), LightTailed);
        assert_eq!(
            ParetoI { alpha: 2.0, xm: 1.0 }.ground_truth_tail().unwrap(),
            RegularlyVarying { index: 2.0 }
        );
        assert_eq!(LogPareto { alpha: 1.0, xm: 1.0 }.ground_truth_tail().unwrap(), SlowlyVarying);
        for d in [
            Rice { k: 3.0, omega: 1.0 },
            Nakagami { m: 2.0, omega: 1.0 },
            Exponential { rate: 1.0 },
            Constant { v: 1.0 },
            Uniform { a: 0.0, b: 1.0 },
        ] {
            assert_eq!(d.ground_truth_tail().unwrap(), LightTailed);
        }
    }

    #[test]
    fn logpareto_tail_matches_density_integral() {
        // Integrate the density of X = exp(P) over [e^y, inf) after substituting t = ln x:
        // f_X(x) dx = alpha xm^alpha t^(-alpha-1) dt. A second substitution t = y / s maps
        // the tail onto s in (0, 1].
        let (alpha, xm) = (1.0, 1.0);
        let d = DistributionSpec::LogPareto { alpha, xm };
        for &y in &[1.5, 3.0, 10.0, 40.0] {
            let n = 200_000;
            let h = 1.0 / n as f64;
            let g = |s: f64| {
                let t = y / s;
                alpha * xm.powf(alpha) * t.powf(-alpha - 1.0) * y / (s * s)
            };
            let acc: f64 = (0..n).map(|i| g((i as f64 + 0.5) * h)).sum();
            let integral = acc * h;
            let sf = d.sf(y.exp());
            assert!((integral - sf).abs() < 1e-9, "y={y}: {integral} vs {sf}");
            assert!((sf - y.powf(-alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_examples() {
        use DistributionSpec::*;
        assert_eq!(Uniform { a: 0.0, b: 1.0 }.quantile(0.25).unwrap(), 0.25);
        let q = Exponential { rate: 1.0 }.quantile(1.0 - (-1.0f64).exp()).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        let q = ParetoI { alpha: 2.0, xm: 1.0 }.quantile(0.75).unwrap();
        assert!((q - 2.0).abs() < 1e-12);
        for u in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(Exponential { rate: 1.0 }.quantile(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn rice_zero_k_is_rayleigh() {
        let rice = DistributionSpec::Rice { k: 0.0, omega: 2.0 };
        let ray = DistributionSpec::Rayleigh { sigma: 1.0 };
        for &x in &[0.1, 0.5, 1.0, 2.0, 4.0] {
            assert!((rice.sf(x) - ray.sf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn rice_sf_matches_monte_carlo() {
        let d = DistributionSpec::Rice { k: 3.0, omega: 1.0 };
        let v = d.sample(&mut RandomStream::new(2, "rice"), 400_000).unwrap();
        for &x in &[0.5, 1.0, 1.5] {
            let p = v.iter().filter(|&&s| s > x).count() as f64 / v.len() as f64;
            let se = (p * (1.0 - p) / v.len() as f64).sqrt();
            assert!((p - d.sf(x)).abs() < 5.0 * se, "x={x}: {p} vs {}", d.sf(x));
        }
    }

    #[test]
    fn nakagami_lower_and_upper_agree() {
        let (m, omega) = (2.0, 1.0);
        let d = DistributionSpec::Nakagami { m, omega };
        for &x in &[0.2, 0.9, 1.7] {
            let lower = statrs::function::gamma::gamma_lr(m, m * x * x / omega);
            assert!((d.cdf(x) - lower).abs() < 1e-13);
        }
    }

    #[test]
    fn empirical_means_within_four_se() {
        for (i, d) in zoo().into_iter().enumerate() {
            let Some(mean) = d.mean() else { continue };
            let v = d.sample(&mut RandomStream::new(99, &format!("mean{i}")), 1_000_000).unwrap();
            let m = stats::mean(&v);
            let se = stats::std_err(&v);
            if se == 0.0 {
                assert_eq!(m, mean);
                continue;
            }
            assert!((m - mean).abs() <= 4.0 * se, "{d:?}: {m} vs {mean} (se {se})");
        }
    }

    #[test]
    fn marginal_ks_against_cdf() {
        for (i, d) in zoo().into_iter().enumerate() {
            if matches!(d, DistributionSpec::Constant { .. }) {
                continue;
            }
            let v = d.sample(&mut RandomStream::new(4, &format!("ks{i}")), 50_000).unwrap();
            let s = stats::sorted(&v);
            assert!(stats::ks_one_sample_passes(&s, |x| d.cdf(x), 0.01), "{d:?}");
        }
    }

    #[test]
    fn deterministic_given_stream() {
        for d in zoo() {
            let a = d.sample(&mut RandomStream::new(8, "det"), 1000).unwrap();
            let b = d.sample(&mut RandomStream::new(8, "det"), 1000).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(idx in 0usize..13, u in 0.001f64..0.999) {
            let d = &zoo()[idx];
            if matches!(d, DistributionSpec::Constant { .. }) {
                return Ok(());
            }
            let x = d.quantile(u).unwrap();
            let back = d.quantile(d.cdf(x)).unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1e-3), "{:?}: {} vs {}", d, x, back);
        }

        #[test]
        fn quantile_monotone(idx in 0usize..13, u in 0.001f64..0.998, du in 1e-6f64..0.001) {
            let d = &zoo()[idx];
            prop_assert!(d.quantile(u).unwrap() <= d.quantile(u + du).unwrap());
        }
    }
}
