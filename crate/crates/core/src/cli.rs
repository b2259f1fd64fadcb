//! Command-line front end. Exit codes: 0 success, 1 a check failed or the
//! instance was refused, 2 bad arguments, unreadable/invalid config or I/O.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::compress::{self, CompressError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::decoder::{self, SsrDecoder};
use crate::sim::{self, fmt_nodes, Scenario, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub const DEFAULT_TRACE: &str = "trace.csv";
pub const DEFAULT_SUMMARY: &str = "summary.toml";
pub const DESIGN_FILE: &str = "design.toml";

#[derive(Debug, Parser)]
#[command(name = "dsst", version, about = "Decentralized secure state tracking: checks, simulation and decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `run.seed` (and the design seed unless `compression.seed` is set).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every pre-run check and print the verdict.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the scenario and write the trace CSV and run summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Run even if checks fail.
        #[arg(long)]
        force: bool,
    },
    /// Resolve and certify the compression matrix and report its error bound.
    DesignD {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Decode the `[decode] W` vector of the config.
    Decode {
        #[command(flatten)]
        common: Common,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn error(message: impl ToString) -> Self {
        Self { code: EXIT_ERROR, message: message.to_string() }
    }

    fn refused(message: impl ToString) -> Self {
        Self { code: EXIT_FAIL, message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Compress(CompressError::Unsolvable { level }) => Self::refused(format!(
                "refused: the system is not {level}-sparse detectable, so no compression matrix can be certified (Lemma 2)"
            )),
            ConfigError::Compress(other) => Self::refused(other),
            other => Self::error(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::error(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Validation(_) => Self::refused(e),
            other => Self::error(other),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Check { common } => cmd_check(&common, out),
        Command::Run { common, out: dir, force } => cmd_run(&common, &dir, force, out),
        Command::DesignD { common, out: dir } => cmd_design_d(&common, dir.as_deref(), out),
        Command::Decode { common } => cmd_decode(&common, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn verdict_line(report: &sim::ValidationReport) -> String {
    let detail = report.check("sparse detectability").map(|c| c.detail.as_str()).unwrap_or("");
    let verdict = detail.split("verdict: ").nth(1).unwrap_or("unknown");
    let verdict = verdict.split(';').next().unwrap_or(verdict);
    format!("verdict: {verdict}")
}

fn cmd_check(common: &Common, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = load(common)?;
    let sc = match cfg.to_scenario() {
        Ok(sc) => sc,
        Err(ConfigError::Compress(e)) => {
            // design mode found nothing to certify; still report the other checks
            let fallback = ScenarioConfig { compression: Default::default(), ..cfg.clone() };
            let sc = fallback.to_scenario()?;
            let report = sc.validate()?;
            write_report(out, &report, Some(&e.to_string()))?;
            return Ok(EXIT_FAIL);
        }
        Err(e) => return Err(e.into()),
    };
    let report = sc.validate()?;
    write_report(out, &report, None)?;
    Ok(if report.pass() { EXIT_OK } else { EXIT_FAIL })
}

fn write_report(
    out: &mut dyn Write,
    report: &sim::ValidationReport,
    compression_override: Option<&str>,
) -> std::io::Result<()> {
    for c in &report.checks {
        let (pass, detail) = match (c.name.as_str(), compression_override) {
            ("compression certification", Some(msg)) => (false, msg),
            _ => (c.pass, c.detail.as_str()),
        };
        writeln!(out, "{}: {} ({})", c.name, if pass { "PASS" } else { "FAIL" }, detail)?;
    }
    writeln!(out, "{}", verdict_line(report))
}

fn output_path(dir: &Path, configured: Option<&String>, default: &str) -> PathBuf {
    dir.join(configured.map(String::as_str).unwrap_or(default))
}

fn cmd_run(common: &Common, dir: &Path, force: bool, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = load(common)?;
    let sc = cfg.to_scenario()?;
    let trace = if force { sim::run_scenario_unchecked(&sc)? } else { sim::run_scenario(&sc)? };

    std::fs::create_dir_all(dir)?;
    let output = cfg.output.as_ref();
    let trace_path = output_path(dir, output.and_then(|o| o.trace.as_ref()), DEFAULT_TRACE);
    let summary_path = output_path(dir, output.and_then(|o| o.summary.as_ref()), DEFAULT_SUMMARY);
    trace.write_csv(std::fs::File::create(&trace_path)?)?;
    let summary = trace.summary();
    let text = toml::to_string(&summary).map_err(Failure::error)?;
    std::fs::write(&summary_path, text)?;

    writeln!(out, "wrote {} and {}", trace_path.display(), summary_path.display())?;
    writeln!(
        out,
        "steps {}, diverged {}, final w_err {}, final x_err {}",
        summary.steps,
        summary.diverged,
        fmt_opt(summary.final_w_err),
        fmt_opt(summary.final_x_err)
    )?;
    Ok(if trace.validation.pass() && !trace.diverged { EXIT_OK } else { EXIT_FAIL })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:e}"))
}

#[derive(Serialize)]
struct DesignReport {
    v: usize,
    p: usize,
    certified_s: usize,
    is_identity: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

fn cmd_design_d(common: &Common, dir: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = load(common)?;
    let sys = cfg.system()?;
    let s = cfg.security.s;
    let d = cfg.compression_matrix(&sys)?;
    let cm = compress::validate_compression(&sys, d, s).map_err(|e| Failure::from(ConfigError::Compress(e)))?;
    let beta = decoder::error_bound_beta(&sys, &cm, s).map_err(Failure::refused)?;
    let report = DesignReport {
        v: cm.v(),
        p: sys.p(),
        certified_s: s,
        is_identity: cm.is_identity(),
        beta: Some(beta),
        d: cm.d().row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let text = toml::to_string(&report).map_err(Failure::error)?;
    write!(out, "{text}")?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(DESIGN_FILE), &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_decode(common: &Common, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = load(common)?;
    let Some(input) = cfg.decode.as_ref() else {
        return Err(Failure::error("config has no [decode] section with W"));
    };
    let sc: Scenario = cfg.to_scenario()?;
    let cm = compress::validate_compression(&sc.sys, sc.d.clone(), sc.s)
        .map_err(|e| Failure::from(ConfigError::Compress(e)))?;
    let decoder = SsrDecoder::new(&sc.sys, &cm, sc.s).map_err(Failure::refused)?;
    let res = decoder
        .decode(&nalgebra::DVector::from_column_slice(&input.w))
        .map_err(Failure::error)?;
    let vec_str = |v: &nalgebra::DVector<f64>| {
        v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")
    };
    writeln!(out, "x_hat = [{}]", vec_str(&res.x_hat))?;
    writeln!(out, "x_hat_now = [{}]", vec_str(&res.x_hat_now))?;
    writeln!(out, "support = {}", fmt_nodes(&res.support_hat))?;
    writeln!(out, "residual = {:e}", res.residual)?;
    match decoder::error_bound_beta(&sc.sys, &cm, sc.s) {
        Ok(beta) => writeln!(out, "beta = {beta:e}")?,
        Err(e) => writeln!(out, "beta unavailable: {e}")?,
    }
    Ok(EXIT_OK)
}
