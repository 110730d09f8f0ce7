use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgGroup, Parser, ValueEnum};
use linproxy_core::{
    csv_tables, emit_report, mode_name, run_audit, AuditConfig, DataSource, Decomposition,
    ModelSource, OutputFormat,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Factor {
    Auto,
    Eigen,
    Cholesky,
}

/// Audit a linear regression model for proxy use of a protected attribute.
///
/// Exit status: 0 when no proxy use is found, 2 when a proxy or potential
/// proxy is reported, 1 on error.
#[derive(Debug, Parser)]
#[command(name = "linproxy", version)]
#[command(group(ArgGroup::new("data").required(true).args(["input", "covariance"])))]
#[command(group(ArgGroup::new("model_src").required(true).args(["target", "model"])))]
struct Args {
    /// CSV table with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Square covariance CSV (header of labels) instead of row data.
    #[arg(long)]
    covariance: Option<PathBuf>,
    /// Protected attribute column.
    #[arg(long)]
    protected: String,
    /// Two labels of the protected column mapped to 0 and 1, e.g. `male,female`.
    #[arg(long, value_parser = parse_pair)]
    protected_pair: Option<(String, String)>,
    /// Fit ordinary least squares to this response column.
    #[arg(long)]
    target: Option<String>,
    /// Model file with `feature,coefficient` rows.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model inputs, comma separated.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Input excused from proxy use.
    #[arg(long)]
    exempt: Option<String>,
    /// Association thresholds, ascending. Default 0.01..0.10 in steps of 0.01.
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    /// Influence threshold.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Association slack for the exempt input.
    #[arg(long, default_value_t = 0.05)]
    epsilon_prime: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Seed for the random starts of the norm maximization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariance factorization.
    #[arg(long, value_enum, default_value = "auto")]
    decomposition: Factor,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record phase timings in the report.
    #[arg(long)]
    timings: bool,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains(',') => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(format!("expected two labels `A,B`, got `{s}`")),
    }
}

fn config(args: Args) -> anyhow::Result<AuditConfig> {
    let data = match (args.input, args.covariance) {
        (Some(p), None) => DataSource::Csv(p),
        (None, Some(p)) => DataSource::Covariance(p),
        _ => bail!("give exactly one of --input or --covariance"),
    };
    let model = match (args.target, args.model) {
        (Some(t), None) => ModelSource::Target(t),
        (None, Some(p)) => ModelSource::File(p),
        _ => bail!("give exactly one of --target or --model"),
    };
    let mut c = AuditConfig::new(data, args.protected, model);
    c.protected_pair = args.protected_pair;
    c.features = args.features;
    c.exempt = args.exempt;
    if !args.epsilons.is_empty() {
        c.epsilons = args.epsilons;
    }
    c.delta = args.delta;
    c.epsilon_prime = args.epsilon_prime;
    c.format = match args.format {
        Format::Json => OutputFormat::Json,
        Format::Csv => OutputFormat::Csv,
        Format::Markdown => OutputFormat::Markdown,
    };
    c.seed = args.seed;
    c.record_timings = args.timings;
    c.decomposition = match args.decomposition {
        Factor::Auto => Decomposition::Auto,
        Factor::Eigen => Decomposition::Eigen,
        Factor::Cholesky => Decomposition::Cholesky,
    };
    Ok(c)
}

/// `out/report.csv` with tag `general` becomes `out/report.general.csv`.
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy());
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn run(args: Args) -> anyhow::Result<i32> {
    let out = args.out.clone();
    let config = config(args)?;
    let report = run_audit(&config)?;
    match out {
        // Several CSV tables go to sibling files tagged with the sweep mode.
        Some(p) if config.format == OutputFormat::Csv && report.sweeps.len() > 1 => {
            for (mode, table) in csv_tables(&report)? {
                let path = tagged(&p, mode_name(mode));
                fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Some(p) => {
            let text = emit_report(&report, config.format)?;
            fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?
        }
        None => {
            let text = emit_report(&report, config.format)?;
            io::stdout().lock().write_all(text.as_bytes())?
        }
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    // Usage errors exit with 1; status 2 is reserved for proxy findings.
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
