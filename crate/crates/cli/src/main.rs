use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lanedrive::scenario::{write_report, MetricReport};

mod config;
mod conventional;
mod correlate;
mod driving;
mod plot;
mod scenarios;
mod sweep;
mod synth;

use config::{RunConfig, RunRecord};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or inputs. Exit code 2.
    Usage(String),
    /// Anything else. Exit code 3.
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

pub fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "lanedrive", version, about = "Driving-oriented lane detection evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Every top-level config key has a flag of the same name; nested keys go
/// through `--set`.
#[derive(Args, Debug, Default)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set sim.e2e_horizon=30`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Scenario directory, manifest, `fixture:<id>` or `fixtures:<straight|suite|stability|all>`.
    #[arg(long, global = true, value_delimiter = ',')]
    scenarios: Vec<String>,
    /// Detector spec, e.g. `ground_truth`, `biased:0.3`, `biased_px:25`, `noisy:4:7`,
    /// `curved:0.02:15`, `cmd:<argv>`, `tcp:<host:port>`, or `suite`.
    #[arg(long, global = true, value_delimiter = ',')]
    detectors: Vec<String>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// PSLD rollout style: benign or attack.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long = "timeout-secs", global = true)]
    timeout_secs: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    betas: Vec<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Accuracy, F1 and BEV distances over annotated frames.
    EvalConventional,
    /// E2E-LD and PSLD per scenario and detector.
    EvalDriving,
    /// Correlate metrics across report files joined on scenario and detector.
    Correlate(correlate::CorrelateArgs),
    /// Accuracy and F1 over the alpha/beta grid.
    Sweep,
    /// Dump the frames a detector sees during a closed-loop rollout.
    SynthFrames(synth::SynthArgs),
    /// Run the detector protocol conformance checks against an endpoint.
    ProtocolCheck(ProtocolArgs),
    /// Write the built-in fixture scenarios as scenario directories.
    GenFixtures(GenArgs),
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// `mock`, `cmd:<argv>` or `tcp:<host:port>`.
    #[arg(long, default_value = "mock")]
    endpoint: String,
    #[arg(long = "round-trips", default_value_t = 100)]
    round_trips: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Fixture set or `fixture:<id>` selectors; defaults to all.
    #[arg(default_values_t = vec!["fixtures:all".to_string()])]
    sets: Vec<String>,
}

fn toml_list<T: Into<toml::Value> + Clone>(v: &[T]) -> String {
    toml::Value::Array(v.iter().cloned().map(Into::into).collect()).to_string()
}

impl Global {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let s = |v: &str| toml::Value::String(v.to_string()).to_string();
        if !self.scenarios.is_empty() {
            o.push(format!("scenarios={}", toml_list(&self.scenarios)));
        }
        if !self.detectors.is_empty() {
            o.push(format!("detectors={}", toml_list(&self.detectors)));
        }
        if let Some(p) = &self.output {
            o.push(format!("output={}", s(&p.to_string_lossy())));
        }
        if let Some(m) = &self.mode {
            o.push(format!("mode={}", s(m)));
        }
        if let Some(w) = self.workers {
            o.push(format!("workers={}", w as i64));
        }
        if let Some(t) = self.timeout_secs {
            o.push(format!("timeout_secs={}", toml::Value::Float(t)));
        }
        if !self.alphas.is_empty() {
            o.push(format!("alphas={}", toml_list(&self.alphas)));
        }
        if !self.betas.is_empty() {
            o.push(format!("betas={}", toml_list(&self.betas)));
        }
        // Explicit --set wins over the named flags.
        o.extend(self.set.iter().cloned());
        o
    }

    fn run_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

pub fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        b = b.num_threads(cfg.workers);
    }
    b.build().map_err(internal)
}

pub fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", p.display())))
}

pub fn write_text(p: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(p, text).map_err(|e| internal(format!("{}: {e}", p.display())))
}

/// Writes `run.json` describing the effective configuration.
pub fn write_run_record(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    create_dir(&cfg.output)?;
    let rec = RunRecord::new(command, cfg);
    let json = serde_json::to_string_pretty(&rec).map_err(internal)?;
    write_text(&cfg.output.join(format!("{command}.run.json")), &json)
}

pub fn write_rows(cfg: &RunConfig, name: &str, rows: &[MetricReport]) -> Result<PathBuf, CliError> {
    let path = cfg.output.join(name);
    write_report(rows, &path).map_err(internal)?;
    Ok(path)
}

/// Prints failed rows and how many there were.
pub fn summarize(rows: &[MetricReport]) {
    let failed: Vec<&MetricReport> = rows
        .iter()
        .filter(|r| r.status == lanedrive::scenario::Status::Failed)
        .collect();
    if failed.is_empty() {
        eprintln!("{} rows, no failures", rows.len());
        return;
    }
    eprintln!("{} rows, {} failed:", rows.len(), failed.len());
    for r in failed {
        eprintln!("  {} / {} / {}: {}", r.scenario, r.detector, r.metric, r.note);
    }
}

fn protocol_check(cfg: &RunConfig, args: &ProtocolArgs) -> Result<ExitCode, CliError> {
    use lanedrive::detectors::{protocol_check, Endpoint, MockServer};
    let mock;
    let endpoint = if args.endpoint == "mock" {
        mock = MockServer::empty().map_err(internal)?;
        mock.endpoint()
    } else if let Some(argv) = args.endpoint.strip_prefix("cmd:") {
        Endpoint::Command(argv.split_whitespace().map(String::from).collect())
    } else if let Some(addr) = args.endpoint.strip_prefix("tcp:") {
        Endpoint::Tcp(addr.to_string())
    } else {
        return Err(CliError::Usage(format!("endpoint {:?}: expected mock, cmd:<argv> or tcp:<addr>", args.endpoint)));
    };
    let report = protocol_check(&endpoint, args.round_trips, cfg.timeout());
    let json = serde_json::to_string_pretty(&report).map_err(internal)?;
    println!("{json}");
    if report.passed() {
        eprintln!("conformance: PASS ({} round trips)", report.round_trips);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("conformance: FAIL");
        Ok(ExitCode::from(1))
    }
}

fn gen_fixtures(cfg: &RunConfig, args: &GenArgs) -> Result<ExitCode, CliError> {
    let list = scenarios::load_all(&args.sets)?;
    create_dir(&cfg.output)?;
    let p = pool(cfg)?;
    let results: Vec<Result<(), CliError>> = p.install(|| {
        use rayon::prelude::*;
        list.par_iter()
            .map(|s| {
                let dir = cfg.output.join(scenarios::slug(&s.id));
                lanedrive::scenario::write_scenario(s, &dir).map_err(internal)
            })
            .collect()
    });
    for r in results {
        r?;
    }
    for s in &list {
        println!("{}", cfg.output.join(scenarios::slug(&s.id)).display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let cfg = cli.global.run_config()?;
    match &cli.command {
        Command::EvalConventional => conventional::run(&cfg),
        Command::EvalDriving => driving::run(&cfg),
        Command::Correlate(a) => correlate::run(&cfg, a),
        Command::Sweep => sweep::run(&cfg),
        Command::SynthFrames(a) => synth::run(&cfg, a),
        Command::ProtocolCheck(a) => protocol_check(&cfg, a),
        Command::GenFixtures(a) => gen_fixtures(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Internal(_) => ExitCode::from(3),
            }
        }
    }
}
