//! Command-line parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lorp::oracle::BoxDomain;
use lorp::{AlphaChoice, LossRankOptions, PenaltyKind};

use crate::dataio::{gen_synthetic, load_csv, write_csv, write_csv_to, SynthKind, SynthSpec};
use crate::error::{CliError, Result};
use crate::oracle_cmd::{exact_rank_cmd, grid_rank_cmd, mc_volume_cmd, Example, OracleTarget};
use crate::run::{run_selection, write_curves, BaselineToggles, DataSource, RunConfig};
use crate::sweep::FamilySweep;

#[derive(Debug, Parser)]
#[command(
    name = "lorp",
    version,
    about = "Loss rank model selection for linear regressors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a sweep of candidate regressors and report the winners.
    Select(SelectArgs),
    /// Write a seeded synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Brute-force rank and volume checks.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKindArg {
    Poly,
    Sine,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "poly")]
    pub kind: SynthKindArg,
    /// Polynomial coefficients, constant term first.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0,1"
    )]
    pub coeffs: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "-1,1")]
    pub x_range: (f64, f64),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            kind: match self.kind {
                SynthKindArg::Poly => SynthKind::Polynomial {
                    coeffs: self.coeffs.clone(),
                },
                SynthKindArg::Sine => SynthKind::Sine { freq: self.freq },
            },
            n: self.n,
            noise_sd: self.noise,
            x_range: self.x_range,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    Response,
    Estimate,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    /// Input CSV with a header row.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Generate the data instead of reading it (uses the synth options below).
    #[arg(long, value_enum)]
    pub synth: Option<SynthKindArg>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0,1"
    )]
    pub coeffs: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "-1,1")]
    pub x_range: (f64, f64),
    /// Family sweep such as knn:k=1..20, poly:d=0..10:2 or kernel:sigma=0.01..10:16.
    #[arg(long = "family", required = true)]
    pub families: Vec<String>,
    /// `auto` to optimize the regularization weight, or a fixed value.
    #[arg(long, default_value = "auto")]
    pub alpha: String,
    #[arg(long, default_value_t = 1e-8)]
    pub alpha_lo: f64,
    #[arg(long, default_value_t = 1e6)]
    pub alpha_hi: f64,
    #[arg(long, default_value_t = 256)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    #[arg(long, value_enum, default_value = "response")]
    pub penalty: PenaltyArg,
    /// Drop the constant direction shared by all row-stochastic smoothers.
    #[arg(long)]
    pub filter_generic: bool,
    /// Add the log unit-ball volume, giving absolute log-volumes.
    #[arg(long)]
    pub include_vn: bool,
    /// Comma-separated subset of aic,bic,bms,trace, or `none`.
    #[arg(long, default_value = "aic,bic,bms,trace")]
    pub baselines: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-family curve tables; defaults to the report's directory.
    #[arg(long)]
    pub curves_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_curves: bool,
}

/// `lo,hi` as two numbers.
fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lo,hi, got '{s}'"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{v}' is not a number"))
    };
    Ok((num(a)?, num(b)?))
}

fn parse_baselines(s: &str) -> Result<BaselineToggles> {
    let mut t = BaselineToggles::none();
    if s.trim() == "none" {
        return Ok(t);
    }
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "aic" => t.aic = true,
            "bic" => t.bic = true,
            "bms" => t.bms = true,
            "trace" => t.trace = true,
            other => return Err(CliError::Usage(format!("unknown baseline '{other}'"))),
        }
    }
    Ok(t)
}

impl SelectArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let data = match (&self.data, self.synth) {
            (Some(path), None) => DataSource::Csv {
                path: path.clone(),
                target: self.target.clone(),
            },
            (None, Some(kind)) => DataSource::Synthetic {
                spec: SynthArgs {
                    kind,
                    coeffs: self.coeffs.clone(),
                    freq: self.freq,
                    n: self.n,
                    noise: self.noise,
                    x_range: self.x_range,
                    seed: self.seed,
                    out: None,
                }
                .spec(),
                seed: self.seed,
            },
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --data or --synth".into(),
                ))
            }
        };
        let families = self
            .families
            .iter()
            .map(|f| f.parse::<FamilySweep>())
            .collect::<Result<Vec<_>>>()?;
        let alpha = if self.alpha == "auto" {
            AlphaChoice::Optimize {
                lo: self.alpha_lo,
                hi: self.alpha_hi,
                grid_points: self.grid_points,
                rel_tol: self.rel_tol,
            }
        } else {
            match self.alpha.parse::<f64>() {
                Ok(a) if a >= 0.0 && a.is_finite() => AlphaChoice::Fixed { alpha: a },
                _ => {
                    return Err(CliError::Usage(format!(
                        "--alpha must be 'auto' or a number >= 0, got '{}'",
                        self.alpha
                    )))
                }
            }
        };
        let penalty = match self.penalty {
            PenaltyArg::Response => PenaltyKind::ResponseNorm,
            PenaltyArg::Estimate => PenaltyKind::EstimateNorm,
        };
        if self.filter_generic && penalty == PenaltyKind::EstimateNorm {
            return Err(CliError::Usage(
                "--filter-generic requires --penalty response".into(),
            ));
        }
        let config = RunConfig {
            data,
            families,
            lorp: LossRankOptions {
                penalty,
                filter_generic: self.filter_generic,
                alpha,
                include_vn: self.include_vn,
                zero_tol: None,
            },
            baselines: parse_baselines(&self.baselines)?,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OracleSource {
    /// Built-in fixture: `sd` (discrete) or `sc` (continuous).
    #[arg(long, conflicts_with = "data")]
    pub example: Option<String>,
    /// Restrict the fixture to one polynomial regressor.
    #[arg(long, requires = "example")]
    pub d: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Candidate sweeps (with --data).
    #[arg(long = "family")]
    pub families: Vec<String>,
    /// Cube bounds `lo,hi` for grid and Monte-Carlo volumes.
    #[arg(long = "box", value_parser = parse_pair, allow_hyphen_values = true)]
    pub bounds: Option<(f64, f64)>,
}

impl OracleSource {
    fn target(&self) -> Result<OracleTarget> {
        match (&self.example, &self.data) {
            (Some(e), None) => {
                if !self.families.is_empty() {
                    return Err(CliError::Usage(
                        "--family cannot be combined with --example".into(),
                    ));
                }
                OracleTarget::example(e.parse::<Example>()?, self.d)
            }
            (None, Some(path)) => {
                if self.families.is_empty() {
                    return Err(CliError::Usage("--data needs at least one --family".into()));
                }
                let data = load_csv(path, &self.target)?.data;
                let mut specs = Vec::new();
                for f in &self.families {
                    for s in f.parse::<FamilySweep>()?.specs {
                        specs.push((s.to_string(), s));
                    }
                }
                OracleTarget::from_specs(&data, &specs)
            }
            _ => Err(CliError::Usage(
                "give exactly one of --example or --data".into(),
            )),
        }
    }

    fn domain(&self, n: usize) -> Result<Option<BoxDomain>> {
        match &self.bounds {
            Some((lo, hi)) => Ok(Some(
                BoxDomain::cube(n, *lo, *hi).map_err(|e| CliError::Usage(e.to_string()))?,
            )),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Count value-grid responses with loss at most the observed loss.
    ExactRank {
        #[command(flatten)]
        source: OracleSource,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Loss volume by counting points of an eps-grid over a box.
    GridRank {
        #[command(flatten)]
        source: OracleSource,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Loss volume by uniform rejection sampling over a box.
    McVolume {
        #[command(flatten)]
        source: OracleSource,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_text(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn select(args: &SelectArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let config = args.to_config()?;
    let report = run_selection(&config)?;
    write_text(args.out.as_deref(), &report.to_json(), stdout)?;
    if !args.no_curves {
        let dir = match (&args.curves_dir, &args.out) {
            (Some(d), _) => Some(d.clone()),
            (None, Some(out)) => Some(out.parent().map(Path::to_path_buf).unwrap_or_default()),
            (None, None) => None,
        };
        if let Some(dir) = dir {
            let dir = if dir.as_os_str().is_empty() {
                PathBuf::from(".")
            } else {
                dir
            };
            let stem = args
                .out
                .as_ref()
                .and_then(|o| o.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "lorp".into());
            write_curves(&report, &dir, &stem)?;
        }
    }
    if report.all_failed() {
        for c in &report.body.candidates {
            writeln!(
                stderr,
                "{}: {}",
                c.spec,
                c.error.as_deref().unwrap_or("failed")
            )?;
        }
        return Err(CliError::AllFailed);
    }
    Ok(())
}

fn synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let data = gen_synthetic(&args.spec(), args.seed)?;
    match &args.out {
        Some(p) => write_csv(&data, p),
        None => write_csv_to(&data, stdout),
    }
}

fn oracle(cmd: &OracleCommand, stdout: &mut dyn Write) -> Result<()> {
    let value = match cmd {
        OracleCommand::ExactRank { source, values } => {
            exact_rank_cmd(&source.target()?, values.as_deref())?
        }
        OracleCommand::GridRank { source, eps } => {
            let t = source.target()?;
            grid_rank_cmd(&t, source.domain(t.y_obs.len())?.as_ref(), *eps)?
        }
        OracleCommand::McVolume {
            source,
            samples,
            seed,
        } => {
            let t = source.target()?;
            mc_volume_cmd(&t, source.domain(t.y_obs.len())?.as_ref(), *samples, *seed)?
        }
    };
    writeln!(
        stdout,
        "{}",
        serde_json::to_string_pretty(&value).expect("json value")
    )?;
    Ok(())
}

/// Runs the tool on `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Select(a) => select(a, stdout, stderr),
        Command::Synth(a) => synth(a, stdout),
        Command::Oracle(c) => oracle(c, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "lorp: {e}");
            e.exit_code()
        }
    }
}
