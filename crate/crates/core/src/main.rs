use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use depctl::harness::{self, preset_names, ExperimentConfig, Kind, RunManifest};
use depctl::Error;

#[derive(Parser)]
#[command(name = "depctl", version, about = "Tail and dependence-control experiments")]
struct Cli {
    /// Master seed; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "DEPCTL_THREADS")]
    threads: Option<usize>,
    /// Output root; each run writes to `<out>/<name>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KindArgs {
    /// Named preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// Experiment name (defaults to the preset or command name).
    #[arg(long)]
    name: Option<String>,
    /// Payload fields as a JSON object, or `@file` to read them from a file.
    payload: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples of a law or paths of a process.
    Sample(KindArgs),
    /// Channel capacity samples.
    Capacity(KindArgs),
    /// Light-tail classification and moment probes.
    Tail(KindArgs),
    /// Tail ratio of a product or sum of independent variables.
    ProductSum(KindArgs),
    /// Stochastic-order experiments on partial and random sums.
    Orders(KindArgs),
    /// Backlog statistics or the power-for-dependence trade.
    Queue(KindArgs),
    /// Moment-condition chain of channel capacity.
    Chain(KindArgs),
    /// Run experiments from config files.
    Exp {
        #[command(subcommand)]
        action: ExpAction,
    },
    /// Summary table of run manifests, sorted by name.
    Report { manifests: Vec<PathBuf> },
    /// List preset names per kind.
    Presets,
}

#[derive(Subcommand)]
enum ExpAction {
    Run { files: Vec<PathBuf> },
}

fn payload_object(text: Option<&str>) -> depctl::Result<Map<String, Value>> {
    let Some(text) = text else {
        return Ok(Map::new());
    };
    let body = match text.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_string(),
            source: e,
        })?,
        None => text.to_string(),
    };
    match serde_json::from_str(&body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Config {
            field: "payload".into(),
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::Config {
            field: "payload".into(),
            message: e.to_string(),
        }),
    }
}

fn kind_config(kind: Kind, args: &KindArgs, seed: Option<u64>) -> depctl::Result<ExperimentConfig> {
    let mut obj = payload_object(args.payload.as_deref())?;
    let name = args
        .name
        .clone()
        .or_else(|| args.preset.clone())
        .unwrap_or_else(|| kind.name().to_string());
    obj.insert("name".into(), Value::String(name));
    obj.insert("kind".into(), Value::String(kind.name().into()));
    if let Some(p) = &args.preset {
        obj.insert("preset".into(), Value::String(p.clone()));
    }
    ExperimentConfig::from_value(Value::Object(obj), seed)
}

fn run_one(config: &ExperimentConfig, out: Option<&Path>) -> depctl::Result<RunManifest> {
    let root = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let dir = root.join(&config.name);
    let m = harness::run(config, &dir)?;
    let stat = &m.key_statistic;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let ci = match (stat.ci_lo, stat.ci_hi) {
        (Some(a), Some(b)) => format!(" [{a:.6}, {b:.6}]"),
        _ => String::new(),
    };
    println!(
        "{}: {} ({} = {}{}) -> {}",
        m.name,
        m.verdict.name(),
        stat.name,
        fmt(stat.value),
        ci,
        dir.join(harness::MANIFEST_FILE).display()
    );
    Ok(m)
}

fn execute(cli: Cli) -> depctl::Result<i32> {
    let out = cli.out.as_deref();
    let kind = |c: &Command| match c {
        Command::Sample(_) => Some(Kind::Sample),
        Command::Capacity(_) => Some(Kind::Capacity),
        Command::Tail(_) => Some(Kind::Tail),
        Command::ProductSum(_) => Some(Kind::ProductSum),
        Command::Orders(_) => Some(Kind::Orders),
        Command::Queue(_) => Some(Kind::Queue),
        Command::Chain(_) => Some(Kind::ConditionChain),
        _ => None,
    };
    match &cli.command {
        Command::Sample(a)
        | Command::Capacity(a)
        | Command::Tail(a)
        | Command::ProductSum(a)
        | Command::Orders(a)
        | Command::Queue(a)
        | Command::Chain(a) => {
            let k = kind(&cli.command).expect("kind command");
            let config = kind_config(k, a, cli.seed)?;
            Ok(run_one(&config, out)?.verdict.exit_code())
        }
        Command::Exp {
            action: ExpAction::Run { files },
        } => {
            if files.is_empty() {
                return Err(Error::Config {
                    field: "files".into(),
                    message: "no config files given".into(),
                });
            }
            let configs = files
                .iter()
                .map(|f| ExperimentConfig::from_file(f, cli.seed))
                .collect::<depctl::Result<Vec<_>>>()?;
            let mut names = std::collections::BTreeSet::new();
            for c in &configs {
                if !names.insert(c.name.clone()) {
                    return Err(Error::Config {
                        field: "name".into(),
                        message: format!("experiment name `{}` is used twice", c.name),
                    });
                }
            }
            let mut code = 0;
            for c in &configs {
                code = code.max(run_one(c, out)?.verdict.exit_code());
            }
            Ok(code)
        }
        Command::Report { manifests } => {
            let rows = harness::report(manifests)?;
            let text = harness::report_text(&rows);
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.display().to_string(),
                    source: e,
                })?;
                for (file, body) in [("report.txt", text), ("report.csv", harness::report_csv(&rows))] {
                    let path = dir.join(file);
                    std::fs::write(&path, body).map_err(|e| Error::Io {
                        path: path.display().to_string(),
                        source: e,
                    })?;
                }
            }
            Ok(0)
        }
        Command::Presets => {
            for k in Kind::ALL {
                println!("{}: {}", k.name(), preset_names(k).join(", "));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
