//! Configuration-driven experiment runner: config parsing, presets, result
//! persistence, run manifests and summary reports.
//!
//! A config is a JSON object with `name`, `kind`, `seed`, an optional
//! `output_dir`, and the payload fields of its kind. A payload may instead name
//! a `preset`; any other payload fields then override the preset's, merging
//! nested objects key by key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::channel::{sample_capacity, CapacityParams, ChannelModel, Csit};
use crate::dependence::{gen_process, sm_pair, CopulaSpec, MarginalMod, ProcessSpec};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::orders::{
    dependence_bias_experiment, default_delta_grid, marginal_strength_experiment, partial_sum_order_experiment,
    random_sum_experiment, CountLaw, CountVector, OrderVerdict, Outcome, RandomSumSpec,
};
use crate::queueing::{backlog_stats, power_tradeoff, ChannelService, QueueConfig, ServiceSpec};
use crate::rng::RandomStream;
use crate::stats;
use crate::tail_lab::{
    composition_preset, condition_chain_eval, hill, light_tail_test, mgf_probe, moment_probe, product_tail_experiment,
    sum_tail_experiment, theta_grid, Arithmetic, EmpiricalTail, LightVerdict, Trend, TrendConfig, COMPOSITION_PRESETS,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sample,
    Capacity,
    Tail,
    ProductSum,
    Orders,
    Queue,
    ConditionChain,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Sample,
        Kind::Capacity,
        Kind::Tail,
        Kind::ProductSum,
        Kind::Orders,
        Kind::Queue,
        Kind::ConditionChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Capacity => "capacity",
            Kind::Tail => "tail",
            Kind::ProductSum => "product_sum",
            Kind::Orders => "orders",
            Kind::Queue => "queue",
            Kind::ConditionChain => "condition_chain",
        }
    }
}

fn one_power() -> DistributionSpec {
    DistributionSpec::Constant { v: 1.0 }
}

fn half() -> f64 {
    0.5
}

fn conf95() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessSpec>,
    /// Samples, or paths when sampling a process.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityPayload {
    pub model: ChannelModel,
    #[serde(default = "one_power")]
    pub power: DistributionSpec,
    pub params: CapacityParams,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailSource {
    Distribution {
        spec: DistributionSpec,
    },
    Capacity {
        model: ChannelModel,
        #[serde(default = "one_power")]
        power: DistributionSpec,
        params: CapacityParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailPayload {
    pub source: TailSource,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<LightVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSumPayload {
    pub operation: Arithmetic,
    pub spec1: DistributionSpec,
    pub spec2: DistributionSpec,
    #[serde(default = "half")]
    pub phi_alpha: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Trend>,
    #[serde(default)]
    pub trend: TrendConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrdersPayload {
    PartialSum {
        lo: ProcessSpec,
        hi: ProcessSpec,
        #[serde(default)]
        weights: Vec<f64>,
        paths: usize,
        #[serde(default = "conf95")]
        confidence: f64,
    },
    Bias {
        dependent: ProcessSpec,
        #[serde(default = "default_delta_grid")]
        deltas: Vec<f64>,
        paths: usize,
        #[serde(default = "conf95")]
        confidence: f64,
    },
    Strength {
        base: ProcessSpec,
        schedule: Vec<MarginalMod>,
        #[serde(default)]
        weights: Vec<f64>,
        paths: usize,
        #[serde(default = "conf95")]
        confidence: f64,
    },
    RandomSum {
        spec: RandomSumSpec,
        n: usize,
        #[serde(default = "conf95")]
        confidence: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SavingSign {
    Positive,
    Negative,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradePayload {
    /// Reference queue; the main queue is the one whose power is matched.
    pub reference: QueueConfig,
    pub q: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<SavingSign>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueuePayload {
    pub queue: QueueConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trade: Option<TradePayload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionChainPayload {
    pub model: ChannelModel,
    #[serde(default = "one_power")]
    pub power: DistributionSpec,
    pub params: CapacityParams,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Sample(SamplePayload),
    Capacity(CapacityPayload),
    Tail(TailPayload),
    ProductSum(ProductSumPayload),
    Orders(OrdersPayload),
    Queue(QueuePayload),
    ConditionChain(ConditionChainPayload),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Sample(_) => Kind::Sample,
            Payload::Capacity(_) => Kind::Capacity,
            Payload::Tail(_) => Kind::Tail,
            Payload::ProductSum(_) => Kind::ProductSum,
            Payload::Orders(_) => Kind::Orders,
            Payload::Queue(_) => Kind::Queue,
            Payload::ConditionChain(_) => Kind::ConditionChain,
        }
    }
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub payload: Payload,
}

fn typed<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "payload".to_string() } else { path }, e.inner().to_string())
    })
}

fn parse_payload(kind: Kind, value: Value) -> Result<Payload> {
    Ok(match kind {
        Kind::Sample => Payload::Sample(typed(value)?),
        Kind::Capacity => Payload::Capacity(typed(value)?),
        Kind::Tail => Payload::Tail(typed(value)?),
        Kind::ProductSum => Payload::ProductSum(typed(value)?),
        Kind::Orders => Payload::Orders(typed(value)?),
        Kind::Queue => Payload::Queue(typed(value)?),
        Kind::ConditionChain => Payload::ConditionChain(typed(value)?),
    })
}

impl ExperimentConfig {
    /// Parses a config, resolving presets. `seed_override` replaces or supplies the seed.
    pub fn from_value(value: Value, seed_override: Option<u64>) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(Error::config("config", "expected a JSON object"));
        };
        let name = match obj.remove("name") {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(_) => return Err(Error::config("name", "expected a non-empty string")),
            None => return Err(Error::config("name", "missing field")),
        };
        let kind: Kind = match obj.remove("kind") {
            Some(v) => typed(v).map_err(|e| match e {
                Error::Config { message, .. } => Error::config("kind", message),
                other => other,
            })?,
            None => return Err(Error::config("kind", "missing field")),
        };
        let seed = match (obj.remove("seed"), seed_override) {
            (_, Some(s)) => s,
            (Some(v), None) => v
                .as_u64()
                .ok_or_else(|| Error::config("seed", "expected an unsigned 64-bit integer"))?,
            (None, None) => return Err(Error::config("seed", "missing field; seeds are mandatory")),
        };
        let output_dir = match obj.remove("output_dir") {
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(Value::Null) | None => None,
            Some(_) => return Err(Error::config("output_dir", "expected a path string")),
        };
        let payload_value = match obj.remove("preset") {
            Some(Value::String(p)) => {
                let base = preset(kind, &p)
                    .ok_or_else(|| Error::config("preset", format!("unknown {} preset `{p}`", kind.name())))?;
                let mut merged = serde_json::to_value(base)?;
                merge_override(&mut merged, Value::Object(obj));
                merged
            }
            Some(_) => return Err(Error::config("preset", "expected a preset name")),
            None => Value::Object(obj),
        };
        let payload = parse_payload(kind, payload_value)?;
        Ok(Self {
            name,
            seed,
            output_dir,
            payload,
        })
    }

    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Self::from_value(value, seed_override)
    }

    pub fn from_file(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, seed_override)
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// Fully resolved config in canonical form.
    pub fn to_value(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.payload).expect("payloads serialize") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("kind".into(), Value::String(self.kind().name().into()));
        obj.insert("seed".into(), Value::from(self.seed));
        if let Some(d) = &self.output_dir {
            obj.insert("output_dir".into(), Value::String(d.display().to_string()));
        }
        Value::Object(obj)
    }

    /// SHA-256 of the canonical config, excluding the output location.
    pub fn hash(&self) -> String {
        let mut v = self.to_value();
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
    Completed,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Completed => "completed",
        }
    }

    /// 2 for failing verdicts, 0 otherwise.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Fails => 2,
            _ => 0,
        }
    }

    fn from_outcome(o: Outcome) -> Self {
        match o {
            Outcome::Holds => Verdict::Holds,
            Outcome::Fails => Verdict::Fails,
            Outcome::Inconclusive => Verdict::Inconclusive,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyStatistic {
    pub name: String,
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl KeyStatistic {
    fn new(name: &str, value: f64, ci: Option<(f64, f64)>) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            name: name.into(),
            value: finite(value),
            ci_lo: ci.and_then(|c| finite(c.0)),
            ci_hi: ci.and_then(|c| finite(c.1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// Output files relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub verdict: Verdict,
    pub key_statistic: KeyStatistic,
    pub config: Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Formats a float for CSV output with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, file: &str, body: &[u8]) -> Result<()> {
        let path = self.dir.join(file);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(body).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.files.push(file.to_string());
        Ok(())
    }

    fn json(&mut self, file: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(file, text.as_bytes())
    }

    fn csv(&mut self, file: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut text = header.join(",");
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.write(file, text.as_bytes())
    }
}

fn mean_ci(xs: &[f64]) -> (f64, (f64, f64)) {
    let m = stats::mean(xs);
    let hw = 1.96 * stats::std_err(xs);
    (m, (m - hw, m + hw))
}

fn verdict_rows(verdicts: &[OrderVerdict]) -> Vec<Vec<String>> {
    verdicts
        .iter()
        .map(|v| {
            vec![
                serde_json::to_value(v.relation).unwrap().as_str().unwrap_or_default().to_string(),
                serde_json::to_value(v.outcome).unwrap().as_str().unwrap_or_default().to_string(),
                fmt_f64(v.margin),
            ]
        })
        .collect()
}

/// Runs the experiment, writes its outputs under `out_dir` and returns the manifest.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let started = chrono::Utc::now().to_rfc3339();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let stream = RandomStream::new(config.seed, &config.name);
    let (verdict, key) = execute(&config.payload, &stream, &mut out)?;
    let manifest = RunManifest {
        name: config.name.clone(),
        kind: config.kind(),
        seed: config.seed,
        config_hash: config.hash(),
        version: VERSION.to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: out.files.clone(),
        verdict,
        key_statistic: key,
        config: config.to_value(),
    };
    out.json(MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

fn execute(payload: &Payload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    match payload {
        Payload::Sample(p) => run_sample(p, stream, out),
        Payload::Capacity(p) => run_capacity(p, stream, out),
        Payload::Tail(p) => run_tail(p, stream, out),
        Payload::ProductSum(p) => run_product_sum(p, stream, out),
        Payload::Orders(p) => run_orders(p, stream, out),
        Payload::Queue(p) => run_queue(p, stream, out),
        Payload::ConditionChain(p) => run_chain(p, stream, out),
    }
}

fn run_sample(p: &SamplePayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    match (&p.spec, &p.process) {
        (Some(spec), None) => {
            let xs = spec.sample(&mut stream.derive("sample"), p.n)?;
            out.csv(
                "samples.csv",
                &["index", "value"],
                xs.iter().enumerate().map(|(i, x)| vec![i.to_string(), fmt_f64(*x)]),
            )?;
            let (m, ci) = mean_ci(&xs);
            Ok((Verdict::Completed, KeyStatistic::new("mean", m, Some(ci))))
        }
        (None, Some(process)) => {
            let paths = gen_process(process, stream, p.n)?;
            let mut buf = Vec::new();
            paths.write_csv(&mut buf).map_err(|e| Error::io("paths.csv", e))?;
            out.write("paths.csv", &buf)?;
            let (m, ci) = mean_ci(paths.data());
            Ok((Verdict::Completed, KeyStatistic::new("mean", m, Some(ci))))
        }
        _ => Err(Error::config("spec", "give exactly one of `spec` or `process`")),
    }
}

fn run_capacity(p: &CapacityPayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    let samples = sample_capacity(&p.model, &p.power, &p.params, stream, p.n)?;
    out.csv(
        "capacity.csv",
        &["index", "c_bits_per_s", "lambda_max", "trace", "power"],
        samples.iter().enumerate().map(|(i, s)| {
            vec![i.to_string(), fmt_f64(s.c), fmt_f64(s.lambda_max), fmt_f64(s.trace), fmt_f64(s.power)]
        }),
    )?;
    let c: Vec<f64> = samples.iter().map(|s| s.c).collect();
    let (m, ci) = mean_ci(&c);
    let sorted = stats::sorted(&c);
    out.json(
        "capacity.json",
        &serde_json::json!({
            "n": p.n,
            "mean": m,
            "mean_ci": [ci.0, ci.1],
            "q01": stats::quantile_sorted(&sorted, 0.01),
            "q50": stats::quantile_sorted(&sorted, 0.5),
            "q99": stats::quantile_sorted(&sorted, 0.99),
        }),
    )?;
    Ok((Verdict::Completed, KeyStatistic::new("mean_capacity", m, Some(ci))))
}

fn run_tail(p: &TailPayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    let xs = match &p.source {
        TailSource::Distribution { spec } => spec.sample(&mut stream.derive("tail"), p.n)?,
        TailSource::Capacity { model, power, params } => sample_capacity(model, power, params, stream, p.n)?
            .into_iter()
            .map(|s| s.c)
            .collect(),
    };
    let tail = EmpiricalTail::new(xs)?;
    let light = light_tail_test(&tail)?;
    let grid = theta_grid();
    let mgf = mgf_probe(&tail, &grid)?;
    let moments = if tail.samples()[0] > 0.0 {
        Some(moment_probe(&tail, &grid)?)
    } else {
        None
    };
    let hill_k = (tail.n() / 100).max(10);
    let hill_index = hill(&tail, hill_k).ok();
    out.json(
        "tail.json",
        &serde_json::json!({
            "experiment": "light_tail",
            "n": tail.n(),
            "light": light,
            "mgf": mgf,
            "moments": moments,
            "hill_k": hill_k,
            "hill_index": hill_index,
        }),
    )?;
    out.csv(
        "tail.csv",
        &["theta", "log_mgf", "mgf_stable", "log_moment", "moment_stable"],
        grid.iter().enumerate().map(|(i, t)| {
            let (lm, ms) = match &moments {
                Some(m) => (fmt_f64(m.estimates[i]), m.stable[i].to_string()),
                None => (String::new(), String::new()),
            };
            vec![fmt_f64(*t), fmt_f64(mgf.estimates[i]), mgf.stable[i].to_string(), lm, ms]
        }),
    )?;
    let verdict = match p.expect {
        Some(e) => Verdict::from_bool(light.verdict == e),
        None if light.verdict == LightVerdict::Inconclusive => Verdict::Inconclusive,
        None => Verdict::Completed,
    };
    Ok((verdict, KeyStatistic::new("light_slope", light.slope_x, None)))
}

fn run_product_sum(p: &ProductSumPayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    let report = match p.operation {
        Arithmetic::Product => product_tail_experiment(&p.spec1, &p.spec2, p.phi_alpha, stream, p.n, &p.trend)?,
        Arithmetic::Sum => sum_tail_experiment(&p.spec1, &p.spec2, p.phi_alpha, stream, p.n, &p.trend)?,
    };
    let c = &report.curve;
    let verdict = match p.expect {
        Some(e) => Verdict::from_bool(c.trend == e),
        None => Verdict::Completed,
    };
    out.json(
        "ratio.json",
        &serde_json::json!({
            "experiment": report.operation,
            "spec1": report.spec1,
            "spec2": report.spec2,
            "grid": c.x_grid,
            "ratios": c.ratio,
            "ci": c.ci_lo.iter().zip(&c.ci_hi).map(|(a, b)| [*a, *b]).collect::<Vec<_>>(),
            "trend": c.trend,
            "slope": c.slope,
            "asymptote": c.asymptote,
            "asymptote_ci": c.asymptote_ci,
            "expected": p.expect,
            "verdict": verdict,
            "dominant_mass": report.dominant_mass,
            "residual_mass": report.residual_mass,
            "residual_share": report.residual_share,
        }),
    )?;
    out.csv(
        "ratio.csv",
        &["x", "ratio", "ci_lo", "ci_hi", "dominant_mass", "residual_mass"],
        (0..c.x_grid.len()).map(|i| {
            vec![
                fmt_f64(c.x_grid[i]),
                fmt_f64(c.ratio[i]),
                fmt_f64(c.ci_lo[i]),
                fmt_f64(c.ci_hi[i]),
                fmt_f64(report.dominant_mass[i]),
                fmt_f64(report.residual_mass[i]),
            ]
        }),
    )?;
    Ok((verdict, KeyStatistic::new("asymptote", c.asymptote, Some(c.asymptote_ci))))
}

fn margin_stat(v: &OrderVerdict) -> KeyStatistic {
    KeyStatistic::new("margin", v.margin, None)
}

fn run_orders(p: &OrdersPayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    match p {
        OrdersPayload::PartialSum {
            lo,
            hi,
            weights,
            paths,
            confidence,
        } => {
            let pair = sm_pair(lo, hi)?;
            let r = partial_sum_order_experiment(&pair, weights, stream, *paths, *confidence)?;
            out.json("orders.json", &r)?;
            out.csv(
                "stop_loss.csv",
                &["t", "pi_lo", "ci_lo", "pi_hi", "ci_hi"],
                (0..r.lo.t_grid.len()).map(|i| {
                    vec![
                        fmt_f64(r.lo.t_grid[i]),
                        fmt_f64(r.lo.pi[i]),
                        fmt_f64(r.lo.ci_halfwidth[i]),
                        fmt_f64(r.hi.pi[i]),
                        fmt_f64(r.hi.ci_halfwidth[i]),
                    ]
                }),
            )?;
            Ok((Verdict::from_outcome(r.verdict.outcome), margin_stat(&r.verdict)))
        }
        OrdersPayload::Bias {
            dependent,
            deltas,
            paths,
            confidence,
        } => {
            let r = dependence_bias_experiment(dependent, deltas, stream, *paths, *confidence)?;
            out.json("orders.json", &r)?;
            let rows = verdict_rows(&r.verdicts);
            out.csv(
                "bias.csv",
                &["delta", "relation", "outcome", "margin"],
                r.deltas.iter().zip(rows).map(|(d, mut row)| {
                    row.insert(0, fmt_f64(*d));
                    row
                }),
            )?;
            Ok((Verdict::from_bool(r.holds_at_zero), KeyStatistic::new("delta_star", r.delta_star, None)))
        }
        OrdersPayload::Strength {
            base,
            schedule,
            weights,
            paths,
            confidence,
        } => {
            let r = marginal_strength_experiment(base, schedule, weights, stream, *paths, *confidence)?;
            out.json("orders.json", &r)?;
            let verdicts: Vec<OrderVerdict> = r.comparisons.iter().map(|c| c.verdict.clone()).collect();
            out.csv(
                "strength.csv",
                &["k", "k_prime", "relation", "outcome", "margin"],
                r.comparisons.iter().zip(verdict_rows(&verdicts)).map(|(c, mut row)| {
                    row.insert(0, c.k_prime.to_string());
                    row.insert(0, c.k.to_string());
                    row
                }),
            )?;
            let worst = verdicts.iter().map(|v| v.margin).fold(f64::INFINITY, f64::min);
            Ok((Verdict::from_bool(r.monotone), KeyStatistic::new("min_margin", worst, None)))
        }
        OrdersPayload::RandomSum { spec, n, confidence } => {
            let r = random_sum_experiment(spec, stream, *n, *confidence)?;
            out.json("orders.json", &r)?;
            let mut all = vec![r.verdict.clone()];
            all.extend(r.components.iter().cloned());
            all.extend(r.pairs.iter().map(|p| p.2.clone()));
            let labels = std::iter::once("overall".to_string())
                .chain((0..r.components.len()).map(|i| format!("component_{i}")))
                .chain(r.pairs.iter().map(|p| format!("pair_{}_{}", p.0, p.1)));
            out.csv(
                "witnesses.csv",
                &["witness", "relation", "outcome", "margin"],
                labels.zip(verdict_rows(&all)).map(|(l, mut row)| {
                    row.insert(0, l);
                    row
                }),
            )?;
            Ok((Verdict::from_outcome(r.verdict.outcome), margin_stat(&r.verdict)))
        }
    }
}

fn run_queue(p: &QueuePayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    if let Some(trade) = &p.trade {
        let r = power_tradeoff(&p.queue, &trade.reference, trade.q, trade.tolerance, stream)?;
        out.json("trade.json", &r)?;
        out.csv(
            "trade_groups.csv",
            &["group", "saving"],
            r.group_savings.iter().enumerate().map(|(i, s)| vec![i.to_string(), fmt_f64(*s)]),
        )?;
        let verdict = match trade.expect {
            Some(SavingSign::Positive) => Verdict::from_bool(r.ci_lo > 0.0),
            Some(SavingSign::Negative) => Verdict::from_bool(r.ci_hi < 0.0),
            Some(SavingSign::Zero) => Verdict::from_bool(r.ci_lo <= 0.0 && 0.0 <= r.ci_hi),
            None => Verdict::Completed,
        };
        return Ok((verdict, KeyStatistic::new("saving", r.saving, Some((r.ci_lo, r.ci_hi)))));
    }
    let st = backlog_stats(&p.queue, stream)?;
    out.json("backlog.json", &st)?;
    out.csv(
        "exceedance.csv",
        &["x", "p", "ci_lo", "ci_hi"],
        st.exceedance
            .iter()
            .map(|e| vec![fmt_f64(e.x), fmt_f64(e.p), fmt_f64(e.ci_lo), fmt_f64(e.ci_hi)]),
    )?;
    out.csv(
        "per_slot_mean.csv",
        &["t", "mean_backlog"],
        st.per_slot_mean.iter().enumerate().map(|(t, m)| vec![t.to_string(), fmt_f64(*m)]),
    )?;
    let verdict = if st.nonstationary {
        Verdict::Inconclusive
    } else {
        Verdict::Completed
    };
    Ok((verdict, KeyStatistic::new("q99", st.q99.value, Some((st.q99.ci_lo, st.q99.ci_hi)))))
}

fn run_chain(p: &ConditionChainPayload, stream: &RandomStream, out: &mut Outputs) -> Result<(Verdict, KeyStatistic)> {
    let r = condition_chain_eval(&p.model, &p.power, &p.params, stream, p.n)?;
    out.json("chain.json", &r)?;
    out.csv(
        "chain.csv",
        &["condition", "theta", "log_estimate", "growth", "max_share", "stable"],
        r.rows.iter().map(|row| {
            vec![
                row.condition.to_string(),
                fmt_f64(row.theta),
                fmt_f64(row.log_estimate),
                fmt_f64(row.growth),
                fmt_f64(row.max_share),
                row.stable.to_string(),
            ]
        }),
    )?;
    Ok((
        Verdict::from_bool(r.dag_consistent),
        KeyStatistic::new("violated_edges", r.violated_edges.len() as f64, None),
    ))
}

fn rayleigh_unit() -> DistributionSpec {
    DistributionSpec::Rayleigh {
        sigma: std::f64::consts::FRAC_1_SQRT_2,
    }
}

fn rayleigh_2x2() -> (ChannelModel, CapacityParams) {
    (
        ChannelModel::new(2, 2, rayleigh_unit()),
        CapacityParams::new(1.0, 10.0, 2, Csit::Unknown),
    )
}

/// `E[log2(1 + snr X)]` for `X ~ Exp(1)`: the mean rate of a unit Rayleigh link.
pub fn rayleigh_mean_rate(snr: f64) -> f64 {
    let m = 200_000;
    let h = 60.0 / m as f64;
    let acc = stats::sum((0..m).map(|i| {
        let x = (i as f64 + 0.5) * h;
        (snr * x).ln_1p() / std::f64::consts::LN_2 * (-x).exp()
    }));
    acc * h
}

/// Rayleigh 1x1 channel-driven queue at 10 dB with exponential arrivals at `load`.
pub fn channel_queue(service_copula: CopulaSpec, load: f64, t: usize, paths: usize) -> QueueConfig {
    let snr = 10.0;
    let arrival = DistributionSpec::Exponential {
        rate: 1.0 / (load * rayleigh_mean_rate(snr)),
    };
    QueueConfig {
        arrival: ProcessSpec::temporal(t, arrival, CopulaSpec::Independence { dim: t }),
        service: ServiceSpec::Channel(ChannelService {
            model: ChannelModel::new(1, 1, rayleigh_unit()),
            params: CapacityParams::new(1.0, snr, 1, Csit::Unknown),
            kappa: 1.0,
            slot_duration: 1.0,
            temporal_copula: service_copula.with_dim(t),
        }),
        t,
        paths,
    }
}

fn uniform01() -> DistributionSpec {
    DistributionSpec::Uniform { a: 0.0, b: 1.0 }
}

/// Tag keys of internally tagged payload parts; a changed tag replaces the whole object.
const TAG_KEYS: [&str; 5] = ["family", "kind", "type", "test", "class"];

/// Recursively overlays `over` onto `base`. Objects merge key by key unless a
/// tag differs; every other value replaces.
fn merge_override(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retagged = TAG_KEYS.iter().any(|k| o.get(*k).is_some_and(|t| b.get(*k) != Some(t)));
            if retagged {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_override(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Names of the presets of one kind.
pub fn preset_names(kind: Kind) -> Vec<&'static str> {
    match kind {
        Kind::Sample => vec!["constant-1", "pareto2"],
        Kind::Capacity => vec!["rayleigh-2x2"],
        Kind::Tail => vec!["rayleigh-2x2", "pareto2"],
        Kind::ProductSum => {
            let mut v = COMPOSITION_PRESETS.to_vec();
            v.extend(["pareto2-times-exp", "logpareto-times-exp", "pareto2-plus-exp"]);
            v
        }
        Kind::Orders => vec![
            "bias-counter-uniform",
            "bias-co-uniform",
            "sm-chain-gauss",
            "sm-chain-comonotone",
            "random-sum-poisson",
        ],
        Kind::Queue => vec!["md1", "power-trade-neg", "power-trade-pos", "power-trade-symmetric"],
        Kind::ConditionChain => vec!["rayleigh-2x2", "pareto-half-power"],
    }
}

/// Payload of a named preset.
pub fn preset(kind: Kind, name: &str) -> Option<Payload> {
    use DistributionSpec as D;
    let exp1 = D::Exponential { rate: 1.0 };
    let p2 = D::ParetoI { alpha: 2.0, xm: 1.0 };
    Some(match (kind, name) {
        (Kind::Sample, "constant-1") => Payload::Sample(SamplePayload {
            spec: Some(D::Constant { v: 1.0 }),
            process: None,
            n: 3,
        }),
        (Kind::Sample, "pareto2") => Payload::Sample(SamplePayload {
            spec: Some(p2),
            process: None,
            n: 100_000,
        }),
        (Kind::Capacity, "rayleigh-2x2") => {
            let (model, params) = rayleigh_2x2();
            Payload::Capacity(CapacityPayload {
                model,
                power: one_power(),
                params,
                n: 100_000,
            })
        }
        (Kind::Tail, "rayleigh-2x2") => {
            let (model, params) = rayleigh_2x2();
            Payload::Tail(TailPayload {
                source: TailSource::Capacity {
                    model,
                    power: one_power(),
                    params,
                },
                n: 1_000_000,
                expect: Some(LightVerdict::Light),
            })
        }
        (Kind::Tail, "pareto2") => Payload::Tail(TailPayload {
            source: TailSource::Distribution { spec: p2 },
            n: 1_000_000,
            expect: Some(LightVerdict::Heavy),
        }),
        (Kind::ProductSum, _) => {
            let (operation, spec1, spec2, expect) = match name {
                "pareto2-times-exp" => (Arithmetic::Product, p2, exp1, Trend::Bounded),
                "logpareto-times-exp" => (Arithmetic::Product, D::LogPareto { alpha: 1.0, xm: 1.0 }, exp1, Trend::Unit),
                "pareto2-plus-exp" => (Arithmetic::Sum, p2, exp1, Trend::Unit),
                _ => {
                    let c = composition_preset(name)?;
                    (c.operation, c.spec1, c.spec2, c.expected)
                }
            };
            Payload::ProductSum(ProductSumPayload {
                operation,
                spec1,
                spec2,
                phi_alpha: 0.5,
                n: 1_000_000,
                expect: Some(expect),
                trend: TrendConfig::default(),
            })
        }
        (Kind::Orders, "bias-counter-uniform") | (Kind::Orders, "bias-co-uniform") => {
            let copula = if name == "bias-counter-uniform" {
                CopulaSpec::Countermonotone
            } else {
                CopulaSpec::Comonotone { dim: 2 }
            };
            Payload::Orders(OrdersPayload::Bias {
                dependent: ProcessSpec::spatial(2, uniform01(), copula),
                deltas: default_delta_grid(),
                paths: 1_000_000,
                confidence: 0.95,
            })
        }
        (Kind::Orders, "sm-chain-gauss") => Payload::Orders(OrdersPayload::PartialSum {
            lo: ProcessSpec::temporal(8, exp1.clone(), CopulaSpec::GaussianAr1 { rho: -0.8, dim: 8 }),
            hi: ProcessSpec::temporal(8, exp1, CopulaSpec::GaussianAr1 { rho: 0.8, dim: 8 }),
            weights: Vec::new(),
            paths: 100_000,
            confidence: 0.95,
        }),
        (Kind::Orders, "sm-chain-comonotone") => Payload::Orders(OrdersPayload::PartialSum {
            lo: ProcessSpec::temporal(8, exp1.clone(), CopulaSpec::Independence { dim: 8 }),
            hi: ProcessSpec::temporal(8, exp1, CopulaSpec::Comonotone { dim: 8 }),
            weights: Vec::new(),
            paths: 100_000,
            confidence: 0.95,
        }),
        (Kind::Orders, "random-sum-poisson") => {
            let counts = |copula| CountVector {
                law: CountLaw::Poisson { lambda: 5.0 },
                copula,
            };
            Payload::Orders(OrdersPayload::RandomSum {
                spec: RandomSumSpec {
                    counts_lo: counts(CopulaSpec::Independence { dim: 2 }),
                    counts_hi: counts(CopulaSpec::Comonotone { dim: 2 }),
                    increments_lo: vec![exp1.clone(); 2],
                    increments_hi: vec![exp1; 2],
                    counts_independent_of_increments: true,
                },
                n: 1_000_000,
                confidence: 0.95,
            })
        }
        (Kind::Queue, "md1") => {
            let t = 2000;
            Payload::Queue(QueuePayload {
                queue: QueueConfig {
                    arrival: ProcessSpec::temporal(t, D::Exponential { rate: 1.25 }, CopulaSpec::Independence { dim: t }),
                    service: ServiceSpec::Process {
                        process: ProcessSpec::temporal(t, D::Constant { v: 1.0 }, CopulaSpec::Independence { dim: t }),
                    },
                    t,
                    paths: 400,
                },
                trade: None,
            })
        }
        (Kind::Queue, "power-trade-neg") | (Kind::Queue, "power-trade-pos") | (Kind::Queue, "power-trade-symmetric") => {
            let (t, paths) = (2000, 1000);
            let (copula, expect) = match name {
                "power-trade-neg" => (CopulaSpec::GaussianAr1 { rho: -0.6, dim: t }, SavingSign::Positive),
                "power-trade-pos" => (CopulaSpec::GaussianAr1 { rho: 0.6, dim: t }, SavingSign::Negative),
                _ => (CopulaSpec::Independence { dim: t }, SavingSign::Zero),
            };
            Payload::Queue(QueuePayload {
                queue: channel_queue(copula, 0.8, t, paths),
                trade: Some(TradePayload {
                    reference: channel_queue(CopulaSpec::Independence { dim: t }, 0.8, t, paths),
                    q: 0.99,
                    tolerance: 1e-3,
                    expect: Some(expect),
                }),
            })
        }
        (Kind::ConditionChain, "rayleigh-2x2") => {
            let (model, params) = rayleigh_2x2();
            Payload::ConditionChain(ConditionChainPayload {
                model,
                power: one_power(),
                params,
                n: 100_000,
            })
        }
        (Kind::ConditionChain, "pareto-half-power") => {
            let (model, params) = rayleigh_2x2();
            Payload::ConditionChain(ConditionChainPayload {
                model,
                power: D::ParetoI { alpha: 0.5, xm: 1.0 },
                params,
                n: 100_000,
            })
        }
        _ => return None,
    })
}

/// One row of a summary report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub kind: Kind,
    pub verdict: Verdict,
    pub statistic: String,
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), format!("not a run manifest: {e}")))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for f in &m.outputs {
        if !dir.join(f).is_file() {
            return Err(Error::contract(format!(
                "manifest {} lists missing output {f}",
                path.display()
            )));
        }
    }
    Ok(m)
}

/// Summary rows for the given manifests, sorted by experiment name.
pub fn report(manifests: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = manifests
        .iter()
        .map(|p| {
            let m = read_manifest(p)?;
            Ok(ReportRow {
                name: m.name,
                kind: m.kind,
                verdict: m.verdict,
                statistic: m.key_statistic.name,
                value: m.key_statistic.value,
                ci_lo: m.key_statistic.ci_lo,
                ci_hi: m.key_statistic.ci_hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub const REPORT_HEADER: [&str; 7] = ["name", "kind", "verdict", "statistic", "value", "ci_lo", "ci_hi"];

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = REPORT_HEADER.join(",");
    s.push('\n');
    for r in rows {
        let fields = [
            r.name.clone(),
            label(&r.kind),
            label(&r.verdict),
            r.statistic.clone(),
            opt(r.value),
            opt(r.ci_lo),
            opt(r.ci_hi),
        ];
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn report_text(rows: &[ReportRow]) -> String {
    let short = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let table: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            let ci = match (r.ci_lo, r.ci_hi) {
                (Some(a), Some(b)) => format!("[{a:.6}, {b:.6}]"),
                _ => "-".into(),
            };
            [
                r.name.clone(),
                label(&r.kind),
                label(&r.verdict),
                r.statistic.clone(),
                short(r.value),
                ci,
            ]
        })
        .collect();
    let header = ["name", "kind", "verdict", "statistic", "value", "ci"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &table {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    for row in std::iter::once(&header).chain(&table) {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// Verdict counts by outcome, for summaries.
pub fn verdict_counts(rows: &[ReportRow]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(label(&r.verdict)).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_and_bad_fields_are_named() {
        let e = ExperimentConfig::from_json(r#"{"name":"a","kind":"sample","spec":{"family":"constant","v":1},"n":3}"#, None)
            .unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "seed"), "{e}");
        let e = ExperimentConfig::from_json(
            r#"{"name":"a","kind":"sample","seed":1,"spec":{"family":"constant","v":1},"n":"three"}"#,
            None,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "n"), "{e}");
        let e = ExperimentConfig::from_json(
            r#"{"name":"a","kind":"capacity","seed":1,"model":{"n_r":2,"n_t":2,"entry_law":{"family":"rayleigh"}},"params":{},"n":3}"#,
            None,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field.starts_with("model.entry_law")), "{e}");
        let e = ExperimentConfig::from_json(r#"{"name":"a","kind":"bogus","seed":1}"#, None).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "kind"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"name":"a","kind":"orders","seed":1,"preset":"nope"}"#, None).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "preset"), "{e}");
    }

    #[test]
    fn nested_overrides_keep_sibling_fields() {
        let c = ExperimentConfig::from_json(
            r#"{"name":"a","kind":"queue","seed":1,"preset":"md1","queue":{"paths":400}}"#,
            None,
        )
        .unwrap();
        let Payload::Queue(q) = c.payload else { panic!("wrong kind") };
        let Some(Payload::Queue(base)) = preset(Kind::Queue, "md1") else { panic!("missing preset") };
        assert_eq!(q.queue.paths, 400);
        assert_eq!(q.queue.t, base.queue.t);

        let c = ExperimentConfig::from_json(
            r#"{"name":"a","kind":"sample","seed":1,"preset":"pareto2","spec":{"family":"exponential","rate":2.0}}"#,
            None,
        )
        .unwrap();
        let Payload::Sample(p) = c.payload else { panic!("wrong kind") };
        assert_eq!(p.spec, Some(DistributionSpec::Exponential { rate: 2.0 }));
    }

    #[test]
    fn preset_overrides_merge() {
        let c = ExperimentConfig::from_json(r#"{"name":"a","kind":"sample","seed":1,"preset":"pareto2","n":7}"#, None)
            .unwrap();
        match c.payload {
            Payload::Sample(p) => {
                assert_eq!(p.n, 7);
                assert_eq!(p.spec, Some(DistributionSpec::ParetoI { alpha: 2.0, xm: 1.0 }));
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::from_json(r#"{"name":"a","kind":"sample","seed":1,"preset":"constant-1"}"#, None).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 2;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn mean_rate_matches_closed_form() {
        // E[ln(1 + X/a)] = e^a E1(a) for a = 1 (E1(1) = 0.21938393439552...).
        let v = rayleigh_mean_rate(1.0) * std::f64::consts::LN_2;
        assert!((v - std::f64::consts::E * 0.219_383_934_395_520_3).abs() < 1e-8, "{v}");
    }

    #[test]
    fn empty_report_is_header_only() {
        let rows = report(&[]).unwrap();
        assert_eq!(report_csv(&rows), "name,kind,verdict,statistic,value,ci_lo,ci_hi\n");
        assert_eq!(report_text(&rows).lines().count(), 1);
    }
}
