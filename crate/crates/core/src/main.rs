use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use aslrkit::estimate::Estimator;
use aslrkit::report::{analyze, render_text, write_artifacts, AnalysisReport, AnalyzeConfig, REPORT_SCHEMA};
use aslrkit::sample::{load_path, save_path};
use aslrkit::synth::{generate_with_seed, load_policy};
use aslrkit::{Error, Result};

#[derive(Parser)]
#[command(name = "aslrkit", version, about = "Measure and analyze address space layout randomization")]
struct Cli {
    /// Worker threads for analysis (default: all cores)
    #[arg(long, global = true, env = "ASLRKIT_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect live samples, one fresh process per run (Linux)
    Sample(SampleArgs),
    /// Simulate samples from a placement policy
    Synth(SynthArgs),
    /// Analyze samples and write report.json plus CSV exports
    Analyze(AnalyzeArgs),
    /// Print the text report for samples or a report.json
    Report(AnalyzeArgs),
    #[command(hide = true)]
    CollectOne {
        #[arg(long)]
        spec: String,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    runs: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    rounds: u32,
    /// Comma-separated malloc sizes, e.g. 16,512,4KB,256KB,4MB,128MB
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    sizes: Option<Vec<u64>>,
    #[arg(long)]
    no_huge: bool,
    #[arg(long)]
    no_single: bool,
    /// Run the children with randomization disabled
    #[arg(long)]
    no_aslr: bool,
    /// Binary providing the collector (default: this one)
    #[arg(long, hide = true)]
    collector: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Builtin policy name or policy JSON file
    #[arg(long)]
    policy: String,
    #[arg(long)]
    runs: u64,
    /// Overrides the policy's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Nsb,
    Plugin,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON file with defaults for the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Attacker tries per second
    #[arg(long)]
    tps: Option<f64>,
    /// Alphabet size (log2) for absolute estimates
    #[arg(long)]
    alphabet_bits: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    estimator: Option<Estimator>,
    tps: Option<f64>,
    alphabet_override_bits: Option<f64>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
}

const DEFAULT_OUT_DIR: &str = "aslrkit-out";

fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    let (n, unit) = s.split_at(digits);
    let n: u64 = n.parse().map_err(|_| format!("bad size '{s}'"))?;
    let scale = match unit.to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "KB" | "K" => 1 << 10,
        "MB" | "M" => 1 << 20,
        "GB" | "G" => 1 << 30,
        _ => return Err(format!("bad size unit in '{s}'")),
    };
    n.checked_mul(scale).ok_or_else(|| format!("size '{s}' overflows"))
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(p) = path else { return Ok(ConfigFile::default()) };
    let text = std::fs::read_to_string(p)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), msg: format!("{}: {e}", p.display()) })
}

/// Flags win over the config file, which wins over defaults.
fn resolve(a: &AnalyzeArgs, file: &ConfigFile) -> (AnalyzeConfig, PathBuf) {
    let d = AnalyzeConfig::default();
    let estimator = match a.estimator {
        Some(EstimatorArg::Nsb) => Estimator::Nsb,
        Some(EstimatorArg::Plugin) => Estimator::Plugin,
        None => file.estimator.unwrap_or(d.estimator),
    };
    let cfg = AnalyzeConfig {
        estimator,
        tps: a.tps.or(file.tps).unwrap_or(d.tps),
        alphabet_override_bits: a.alphabet_bits.or(file.alphabet_override_bits),
    };
    let out = a.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| DEFAULT_OUT_DIR.into());
    (cfg, out)
}

fn setup_pool(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|&n| n > 0) {
        // fails only if a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn gate(report: &AnalysisReport) -> ExitCode {
    if report.has_critical() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn load_report(path: &Path) -> Option<AnalysisReport> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str::<AnalysisReport>(&text).ok().filter(|r| r.schema == REPORT_SCHEMA)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::CollectOne { spec } => collect_one(&spec),
        Cmd::Sample(a) => sample(a),
        Cmd::Synth(a) => {
            let policy = load_policy(&a.policy)?;
            let seed = a.seed.unwrap_or(policy.seed);
            setup_pool(cli.jobs);
            let set = generate_with_seed(&policy, a.runs, seed)?;
            save_path(&set, &a.out)?;
            eprintln!("wrote {} records to {}", set.len(), a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Analyze(a) => {
            let file = read_config(a.config.as_deref())?;
            setup_pool(cli.jobs.or(file.jobs));
            let (cfg, out) = resolve(&a, &file);
            let set = load_path(&a.input)?;
            let report = analyze(&set, &cfg)?;
            for p in write_artifacts(&report, &out)? {
                println!("{}", p.display());
            }
            Ok(gate(&report))
        }
        Cmd::Report(a) => {
            let report = match load_report(&a.input) {
                Some(r) => r,
                None => {
                    let file = read_config(a.config.as_deref())?;
                    setup_pool(cli.jobs.or(file.jobs));
                    let (cfg, _) = resolve(&a, &file);
                    analyze(&load_path(&a.input)?, &cfg)?
                }
            };
            print!("{}", render_text(&report));
            Ok(gate(&report))
        }
    }
}

#[cfg(target_os = "linux")]
fn collect_one(spec: &str) -> Result<ExitCode> {
    let spec: aslrkit::sampler::CollectSpec =
        serde_json::from_str(spec).map_err(|e| Error::Format { line: 0, msg: e.to_string() })?;
    println!("{}", aslrkit::sampler::collect_run_json(&spec)?);
    Ok(ExitCode::SUCCESS)
}

#[cfg(target_os = "linux")]
fn sample(a: SampleArgs) -> Result<ExitCode> {
    use aslrkit::sampler::{collect_campaign, CampaignConfig, CollectSpec};
    let mut cfg = CampaignConfig::new(a.runs, a.out);
    cfg.spec = CollectSpec {
        malloc_sizes: a.sizes.unwrap_or(cfg.spec.malloc_sizes),
        rounds: a.rounds,
        include_mmap_single: !a.no_single,
        include_mmap_huge: !a.no_huge,
        ..cfg.spec
    };
    cfg.collector = a.collector;
    cfg.disable_aslr = a.no_aslr;
    let s = collect_campaign(&cfg)?;
    eprintln!("runs ok: {}, failed: {}", s.runs_ok, s.runs_failed);
    Ok(if s.runs_failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[cfg(not(target_os = "linux"))]
fn collect_one(_: &str) -> Result<ExitCode> {
    Err(Error::Spawn("live collection is only available on Linux".into()))
}

#[cfg(not(target_os = "linux"))]
fn sample(_: SampleArgs) -> Result<ExitCode> {
    Err(Error::Spawn("live collection is only available on Linux".into()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
