//! `rotmag`: scenario runner for the rotating-field magnetometer toolkit.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O error.

mod analysis;
mod builtin;
mod scenario;
mod units;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use analysis::{Metric, Outcome};
use scenario::{parse_cli_value, set_path, Scenario};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(rotmag_core::Error),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(rotmag_core::Error::InvalidConfig(_)) => 2,
            CliError::Numeric(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Numeric(e) => write!(f, "{}: {e}", e.module()),
            CliError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "rotmag", version, about = "Simulate and analyse a rotating-field free-precession magnetometer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Scenario file or built-in scenario name.
    scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; `oracle` and `bounds` print to stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its artifacts.
    Run(Common),
    /// Run a scenario once per value of one scalar parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key path, e.g. `field.b_m`; defaults to the scenario's [sweep].
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values, e.g. "9 uT,12 uT"; an empty string sweeps nothing.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
    },
    /// Closed-form systematics budget for a scenario's configuration.
    Oracle(Common),
    /// Sensitivity bounds from a scenario's [bounds] section.
    Bounds(Common),
    /// List the built-in scenarios.
    ListScenarios,
}

fn load(name: &str, seed: Option<u64>) -> Result<Scenario, CliError> {
    let text = if Path::new(name).is_file() {
        fs::read_to_string(name).map_err(|e| CliError::Io(format!("{name}: {e}")))?
    } else if let Some(t) = builtin::get(name) {
        t.to_string()
    } else {
        return Err(CliError::Config(format!("{name:?} is neither a file nor a built-in scenario")));
    };
    let mut s = Scenario::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{name}: {m}")),
        other => other,
    })?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn metrics_csv(metrics: &[Metric]) -> Vec<u8> {
    let mut out = String::from("metric,value,stddev\n");
    for m in metrics {
        writeln!(out, "{},{:.12e},{:.12e}", m.name, m.value, m.stddev).unwrap();
    }
    out.into_bytes()
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary in the requested format followed by the data files.
fn artifacts(outcome: Outcome, format: Format) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![match format {
        Format::Json => ("summary.json".to_string(), pretty(&outcome.summary)),
        Format::Csv => ("summary.csv".to_string(), metrics_csv(&outcome.metrics)),
    }];
    files.extend(outcome.files);
    files
}

/// Write everything at once, after all computation has succeeded.
fn write_out(dir: &Path, command: &str, s: &Scenario, extra: Value, files: Vec<(String, Vec<u8>)>) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    let listing: Vec<Value> = files.iter().map(|(n, b)| json!({ "file": n, "bytes": b.len(), "sha256": sha256_hex(b) })).collect();
    let manifest = json!({
        "tool": "rotmag",
        "command": command,
        "versions": { "rotmag-cli": env!("CARGO_PKG_VERSION"), "rotmag-core": rotmag_core::VERSION },
        "scenario": s.name,
        "mode": s.mode,
        "seed": s.seed,
        "config_hash": s.config_hash(),
        "extra": extra,
        "artifacts": listing,
    });
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (name, bytes) in files.iter().chain([&("manifest.json".to_string(), pretty(&manifest))]) {
        let p = dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&p, bytes).map_err(|e| io(&p, e))?;
    }
    eprintln!("wrote {} artifacts to {}", files.len() + 1, dir.display());
    Ok(())
}

fn default_out(s: &Scenario) -> PathBuf {
    PathBuf::from("out").join(&s.name)
}

fn run(c: &Common) -> Result<(), CliError> {
    let s = load(&c.scenario, c.seed)?;
    if let Some(sw) = &s.sweep {
        let values = sw.values.clone();
        return sweep(c, &s, sw.param.clone(), values);
    }
    let outcome = analysis::run(&s)?;
    for m in &outcome.metrics {
        println!("{:<32} {:>16.6e} {:>12.3e}", m.name, m.value, m.stddev);
    }
    write_out(&c.out.clone().unwrap_or_else(|| default_out(&s)), "run", &s, Value::Null, artifacts(outcome, c.format))
}

/// Base-unit number of a swept value, or its text for non-numeric keys.
fn param_label(s: &Scenario, path: &str) -> String {
    let mut node = &s.to_value();
    for k in path.split('.') {
        match node.get(k) {
            Some(v) => node = v,
            None => return String::new(),
        }
    }
    match node {
        toml::Value::String(t) => t.split_whitespace().next().unwrap_or("").to_string(),
        other => other.to_string(),
    }
}

fn sweep(c: &Common, s: &Scenario, param: String, values: Vec<toml::Value>) -> Result<(), CliError> {
    let base = s.to_value();
    let mut points = Vec::new();
    for v in &values {
        let mut tree = base.clone();
        set_path(&mut tree, &param, v.clone())?;
        let mut p = Scenario::from_value(tree)?;
        p.sweep = None;
        points.push(p);
    }
    let stateless = points.iter().all(|p| !p.eddy.enabled);
    let outcomes: Vec<Outcome> = if stateless {
        use rayon::prelude::*;
        points.par_iter().map(analysis::run).collect::<Result<_, _>>()?
    } else {
        points.iter().map(analysis::run).collect::<Result<_, _>>()?
    };
    let mut rows = Vec::new();
    for (p, o) in points.iter().zip(&outcomes) {
        let label = param_label(p, &param);
        for m in &o.metrics {
            rows.push((label.clone(), m.clone()));
        }
    }
    let file = match c.format {
        Format::Csv => {
            let mut out = String::from("param,metric,value,stddev\n");
            for (l, m) in &rows {
                writeln!(out, "{l},{},{:.12e},{:.12e}", m.name, m.value, m.stddev).unwrap();
            }
            ("sweep.csv".to_string(), out.into_bytes())
        }
        Format::Json => {
            let v: Vec<Value> = rows.iter().map(|(l, m)| json!({ "param": l, "metric": m.name, "value": m.value, "stddev": m.stddev })).collect();
            ("sweep.json".to_string(), pretty(&Value::Array(v)))
        }
    };
    println!("{} points, {} rows", points.len(), rows.len());
    let extra = json!({ "param": param, "values": values.iter().map(|v| v.to_string()).collect::<Vec<_>>() });
    write_out(&c.out.clone().unwrap_or_else(|| default_out(s)), "sweep", s, extra, vec![file])
}

fn report(c: &Common, command: &str, f: fn(&Scenario) -> Result<Outcome, CliError>) -> Result<(), CliError> {
    let s = load(&c.scenario, c.seed)?;
    let outcome = f(&s)?;
    match &c.out {
        Some(dir) => write_out(dir, command, &s, Value::Null, artifacts(outcome, c.format)),
        None => {
            let bytes = match c.format {
                Format::Json => pretty(&outcome.summary),
                Format::Csv => metrics_csv(&outcome.metrics),
            };
            print!("{}", String::from_utf8(bytes).expect("utf-8"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(c) => run(c),
        Cmd::Sweep { common, param, values } => load(&common.scenario, common.seed).and_then(|s| {
            let (param, list) = match (param, values, &s.sweep) {
                (Some(p), Some(v), _) => (p.clone(), v.split(',').filter(|x| !x.trim().is_empty()).map(parse_cli_value).collect()),
                (None, None, Some(sw)) => (sw.param.clone(), sw.values.clone()),
                (Some(p), None, Some(sw)) => (p.clone(), sw.values.clone()),
                _ => return Err(CliError::Config("sweep needs --param and --values, or a [sweep] section".into())),
            };
            sweep(common, &s, param, list)
        }),
        Cmd::Oracle(c) => report(c, "oracle", analysis::budget),
        Cmd::Bounds(c) => report(c, "bounds", analysis::sensitivity),
        Cmd::ListScenarios => {
            for (name, text) in builtin::ALL {
                let s = Scenario::parse(text).expect("built-in scenarios parse");
                println!("{name:<28} {}", s.description);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
