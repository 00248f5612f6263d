//! `ehl`: calibration tests for probability forecasts from the command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ehl_core::evalue::{
    exact_symmetrized_evalue_with, sequential_evalue_with, split_evalue_with, EValueReport, TestOptions,
    DEFAULT_ALPHA, DEFAULT_EXACT_CAP, DEFAULT_SPLITS, DEFAULT_SPLIT_FRACTION,
};
use ehl_core::hl_classic::{hl_sweep, hl_test, BinningMethod, DofMode, DEFAULT_SWEEP_G};
use ehl_core::recalibrate::{bagged_recalibrate, isotonic_recalibrate, DEFAULT_BAGS, DEFAULT_BAND};
use ehl_core::simulate::{run_power_study, PowerStudyConfig, StudyVariant};
use ehl_core::{load_samples, LabeledSampleSet, RngState, Schema, RNG_ALGORITHM, VERSION};

const TOOL: &str = "ehl";
const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "ehl", version, about = "E-value and classical Hosmer-Lemeshow calibration tests")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// E-value calibration test.
    EhlTest(EhlTestArgs),
    /// Classical HL test with one binning.
    HlTest(HlTestArgs),
    /// HL p-values over binning methods and bin counts.
    HlSweep(HlSweepArgs),
    /// Isotonic (optionally bagged) recalibration of an evaluation set.
    Recalibrate(RecalibrateArgs),
    /// Monte Carlo size and power study.
    Simulate(SimulateArgs),
    /// Re-run a configuration embedded in an earlier output.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EhlVariant {
    Split,
    Sequential,
    Exact,
}

#[derive(Args)]
struct Columns {
    /// Forecast column name.
    #[arg(long, default_value = "p")]
    p_column: String,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    y_column: String,
}

#[derive(Args)]
struct EhlTestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    #[arg(long, value_enum, default_value_t = EhlVariant::Split)]
    variant: EhlVariant,
    #[arg(long, default_value_t = DEFAULT_SPLIT_FRACTION, value_parser = parse_fraction)]
    split_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    splits: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Largest sample accepted by the exact variant.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    /// Accept forecasts of exactly 0 or 1 (the e-value may become infinite).
    #[arg(long)]
    allow_boundary: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct HlTestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value = "QR", value_parser = parse_method)]
    binning: BinningMethod,
    #[arg(long, default_value = "g", value_parser = parse_dof)]
    dof: DofMode,
}

#[derive(Args)]
struct HlSweepArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    #[arg(long, default_value_t = *DEFAULT_SWEEP_G.start())]
    g_min: usize,
    #[arg(long, default_value_t = *DEFAULT_SWEEP_G.end())]
    g_max: usize,
    /// Comma-separated binning methods, in table column order.
    #[arg(long, value_delimiter = ',', default_value = "QL,QR,Qplus,Qminus,E", value_parser = parse_method)]
    methods: Vec<BinningMethod>,
    #[arg(long, default_value = "g", value_parser = parse_dof)]
    dof: DofMode,
    /// Round p-values to two decimals in the CSV table.
    #[arg(long)]
    display: bool,
}

#[derive(Args)]
struct RecalibrateArgs {
    #[arg(long)]
    recal: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[command(flatten)]
    columns: Columns,
    /// Bootstrap bags; 0 fits a single isotonic curve.
    #[arg(long, default_value_t = DEFAULT_BAGS)]
    bags: usize,
    #[arg(long, default_value_t = DEFAULT_BAND.0)]
    band_low: f64,
    #[arg(long, default_value_t = DEFAULT_BAND.1)]
    band_high: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also write the recalibration curve on a fixed grid as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',', default_value = "0")]
    j: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    n: Vec<usize>,
    /// Split fractions; accepts decimals or fractions such as 1/3.
    #[arg(long, value_delimiter = ',', default_value = "1/3,1/2,2/3", value_parser = parse_fraction)]
    s: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long = "B", default_value_t = ehl_core::evalue::DEFAULT_SIMULATION_SPLITS)]
    b: usize,
    #[arg(long, value_delimiter = ',', default_value = "hl,ehl", value_parser = parse_study_variant)]
    variants: Vec<StudyVariant>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    hl_bins: usize,
    #[arg(long, default_value = "QR", value_parser = parse_method)]
    hl_binning: BinningMethod,
    #[arg(long, default_value = "g", value_parser = parse_dof)]
    dof: DofMode,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// A JSON output, a bare JSON config, or a CSV output with its metadata line.
    #[arg(long)]
    config: PathBuf,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("not a number: `{s}`"))?,
    };
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(format!("fraction `{s}` must lie strictly between 0 and 1"))
    }
}

fn parse_method(s: &str) -> std::result::Result<BinningMethod, String> {
    s.parse().map_err(|e: ehl_core::Error| e.to_string())
}

fn parse_dof(s: &str) -> std::result::Result<DofMode, String> {
    s.parse().map_err(|e: ehl_core::Error| e.to_string())
}

fn parse_study_variant(s: &str) -> std::result::Result<StudyVariant, String> {
    s.parse().map_err(|e: ehl_core::Error| e.to_string())
}

/// Fully resolved settings of one invocation, embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum RunConfig {
    EhlTest(EhlTestConfig),
    HlTest(HlTestConfig),
    HlSweep(HlSweepConfig),
    Recalibrate(RecalibrateConfig),
    Simulate(SimulateConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EhlTestConfig {
    input: PathBuf,
    p_column: String,
    y_column: String,
    variant: EhlVariant,
    split_fraction: f64,
    splits: usize,
    alpha: f64,
    exact_cap: usize,
    allow_boundary: bool,
    seed: u64,
    format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HlTestConfig {
    input: PathBuf,
    p_column: String,
    y_column: String,
    bins: usize,
    binning: BinningMethod,
    dof: DofMode,
    format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HlSweepConfig {
    input: PathBuf,
    p_column: String,
    y_column: String,
    g_min: usize,
    g_max: usize,
    methods: Vec<BinningMethod>,
    dof: DofMode,
    display: bool,
    format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecalibrateConfig {
    recal: PathBuf,
    eval: PathBuf,
    p_column: String,
    y_column: String,
    bags: usize,
    band: (f64, f64),
    seed: u64,
    format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulateConfig {
    study: PowerStudyConfig,
    format: Format,
}

impl RunConfig {
    fn from_command(command: Command, format: Option<Format>) -> Result<(Self, Option<PathBuf>)> {
        let fmt = |default| format.unwrap_or(default);
        Ok(match command {
            Command::EhlTest(a) => (
                RunConfig::EhlTest(EhlTestConfig {
                    input: a.input,
                    p_column: a.columns.p_column,
                    y_column: a.columns.y_column,
                    variant: a.variant,
                    split_fraction: a.split_fraction,
                    splits: a.splits,
                    alpha: a.alpha,
                    exact_cap: a.exact_cap,
                    allow_boundary: a.allow_boundary,
                    seed: a.seed,
                    format: fmt(Format::Json),
                }),
                None,
            ),
            Command::HlTest(a) => (
                RunConfig::HlTest(HlTestConfig {
                    input: a.input,
                    p_column: a.columns.p_column,
                    y_column: a.columns.y_column,
                    bins: a.bins,
                    binning: a.binning,
                    dof: a.dof,
                    format: fmt(Format::Json),
                }),
                None,
            ),
            Command::HlSweep(a) => (
                RunConfig::HlSweep(HlSweepConfig {
                    input: a.input,
                    p_column: a.columns.p_column,
                    y_column: a.columns.y_column,
                    g_min: a.g_min,
                    g_max: a.g_max,
                    methods: a.methods,
                    dof: a.dof,
                    display: a.display,
                    format: fmt(Format::Csv),
                }),
                None,
            ),
            Command::Recalibrate(a) => (
                RunConfig::Recalibrate(RecalibrateConfig {
                    recal: a.recal,
                    eval: a.eval,
                    p_column: a.columns.p_column,
                    y_column: a.columns.y_column,
                    bags: a.bags,
                    band: (a.band_low, a.band_high),
                    seed: a.seed,
                    format: fmt(Format::Csv),
                }),
                a.curve,
            ),
            Command::Simulate(a) => (
                RunConfig::Simulate(SimulateConfig {
                    study: PowerStudyConfig {
                        j: a.j,
                        n: a.n,
                        s: a.s,
                        variants: a.variants,
                        reps: a.reps,
                        splits: a.b,
                        seed: a.seed,
                        hl_bins: a.hl_bins,
                        hl_method: a.hl_binning,
                        hl_dof: a.dof,
                        alpha: a.alpha,
                    },
                    format: fmt(Format::Csv),
                }),
                None,
            ),
            Command::Run(a) => (load_config(&a.config)?, None),
        })
    }

    fn format(&self) -> Format {
        match self {
            RunConfig::EhlTest(c) => c.format,
            RunConfig::HlTest(c) => c.format,
            RunConfig::HlSweep(c) => c.format,
            RunConfig::Recalibrate(c) => c.format,
            RunConfig::Simulate(c) => c.format,
        }
    }
}

/// Reads a configuration back from an earlier output or a bare config file.
fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trimmed = text.trim_start();
    let json = if trimmed.starts_with('#') {
        let line = trimmed.lines().next().unwrap_or_default();
        let (_, cfg) = line
            .split_once("config=")
            .ok_or_else(|| anyhow!("metadata line of {} has no config", path.display()))?;
        serde_json::from_str::<serde_json::Value>(cfg)?
    } else {
        let value: serde_json::Value = serde_json::from_str(trimmed)?;
        match value.get("config") {
            Some(cfg) => cfg.clone(),
            None => value,
        }
    };
    serde_json::from_value(json).with_context(|| format!("invalid config in {}", path.display()))
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    rng: &'static str,
    config: &'a RunConfig,
    report: R,
}

fn json_output<R: Serialize>(config: &RunConfig, report: R) -> Result<Vec<u8>> {
    let env = Envelope { tool: TOOL, version: VERSION, rng: RNG_ALGORITHM, config, report };
    let mut out = serde_json::to_vec_pretty(&env)?;
    out.push(b'\n');
    Ok(out)
}

fn metadata_line(config: &RunConfig) -> Result<String> {
    Ok(format!(
        "# tool={TOOL} version={VERSION} rng={RNG_ALGORITHM} config={}\n",
        serde_json::to_string(config)?
    ))
}

fn opt_to_string<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn read_input(path: &Path, p_column: &str, y_column: &str) -> Result<LabeledSampleSet> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let schema = Schema { p: p_column.into(), y: y_column.into(), ..Schema::default() };
    load_samples(io::BufReader::new(file), &schema).with_context(|| format!("reading {}", path.display()))
}

fn run_ehl_test(config: &RunConfig, c: &EhlTestConfig) -> Result<Vec<u8>> {
    let data = read_input(&c.input, &c.p_column, &c.y_column)?;
    let opts = TestOptions { alpha: c.alpha, allow_boundary: c.allow_boundary };
    let report = match c.variant {
        EhlVariant::Split => split_evalue_with(&data.samples, c.split_fraction, c.splits, RngState::new(c.seed), &opts)?,
        EhlVariant::Sequential => sequential_evalue_with(&data.samples, &opts)?,
        EhlVariant::Exact => exact_symmetrized_evalue_with(&data.samples, c.exact_cap, &opts)?,
    };
    match c.format {
        Format::Json => json_output(config, &report),
        Format::Csv => {
            let mut out = metadata_line(config)?;
            out.push_str("variant,n,e_value,log_e,implied_p,reject_at_20,alpha,reject,s,B,seed\n");
            let EValueReport { variant, n, e_value, log_e, implied_p, reject_at_20, alpha, reject, s, b, seed, .. } =
                report;
            out.push_str(&format!(
                "{variant},{n},{e_value},{log_e},{implied_p},{reject_at_20},{alpha},{reject},{},{},{}\n",
                opt_to_string(s),
                opt_to_string(b),
                opt_to_string(seed)
            ));
            Ok(out.into_bytes())
        }
    }
}

fn run_hl_test(config: &RunConfig, c: &HlTestConfig) -> Result<Vec<u8>> {
    let data = read_input(&c.input, &c.p_column, &c.y_column)?;
    let report = hl_test(&data.samples, c.binning, c.bins, c.dof)?;
    match c.format {
        Format::Json => json_output(config, &report),
        Format::Csv => {
            let mut out = metadata_line(config)?;
            out.push_str("method,g_requested,g_realized,statistic,dof,p_value\n");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                report.method,
                report.g_requested,
                report.g_realized,
                report.statistic,
                opt_to_string(report.dof),
                opt_to_string(report.p_value)
            ));
            Ok(out.into_bytes())
        }
    }
}

fn run_hl_sweep(config: &RunConfig, c: &HlSweepConfig) -> Result<Vec<u8>> {
    if c.g_min == 0 || c.g_min > c.g_max {
        bail!(ehl_core::Error::InvalidParameter(format!("invalid bin range {}..={}", c.g_min, c.g_max)));
    }
    let data = read_input(&c.input, &c.p_column, &c.y_column)?;
    let g_values: Vec<usize> = (c.g_min..=c.g_max).collect();
    let sweep = hl_sweep(&data.samples, &g_values, &c.methods, c.dof);
    match c.format {
        Format::Json => json_output(config, &sweep),
        Format::Csv => {
            let mut out = metadata_line(config)?;
            out.push_str(&sweep.to_table_csv(c.display));
            out.push_str(&format!(
                "# cells={} min_p={} max_p={}\n",
                sweep.cells.len(),
                opt_to_string(sweep.min_p),
                opt_to_string(sweep.max_p)
            ));
            Ok(out.into_bytes())
        }
    }
}

#[derive(Serialize)]
struct RecalibrationOutput<'a> {
    p: &'a [f64],
    y: Vec<u8>,
    p_raw: Vec<f64>,
    curve: &'a ehl_core::recalibrate::RecalCurve,
}

fn run_recalibrate(config: &RunConfig, c: &RecalibrateConfig, curve_path: Option<&Path>) -> Result<Vec<u8>> {
    let recal = read_input(&c.recal, &c.p_column, &c.y_column)?;
    let eval = read_input(&c.eval, &c.p_column, &c.y_column)?;
    let p_raw = eval.samples.forecasts();
    let result = if c.bags == 0 {
        isotonic_recalibrate(&recal.samples, &p_raw)?
    } else {
        bagged_recalibrate(&recal.samples, &p_raw, c.bags, RngState::new(c.seed), c.band)?
    };
    let y: Vec<u8> = eval.samples.items().iter().map(|o| u8::from(o.y)).collect();

    if let Some(path) = curve_path {
        let mut buf = metadata_line(config)?.into_bytes();
        result.curve.write_csv(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    match c.format {
        Format::Json => json_output(config, RecalibrationOutput { p: &result.values, y, p_raw, curve: &result.curve }),
        Format::Csv => {
            let mut out = metadata_line(config)?;
            out.push_str("p,y,p_raw\n");
            for ((p, y), raw) in result.values.iter().zip(&y).zip(&p_raw) {
                out.push_str(&format!("{p},{y},{raw}\n"));
            }
            Ok(out.into_bytes())
        }
    }
}

fn run_simulate(config: &RunConfig, c: &SimulateConfig) -> Result<Vec<u8>> {
    let report = run_power_study(&c.study)?;
    match c.format {
        Format::Json => json_output(config, &report.cells),
        Format::Csv => {
            let mut out = metadata_line(config)?.into_bytes();
            report.write_csv(&mut out)?;
            Ok(out)
        }
    }
}

fn execute(config: &RunConfig, curve_path: Option<&Path>) -> Result<Vec<u8>> {
    match config {
        RunConfig::EhlTest(c) => run_ehl_test(config, c),
        RunConfig::HlTest(c) => run_hl_test(config, c),
        RunConfig::HlSweep(c) => run_hl_sweep(config, c),
        RunConfig::Recalibrate(c) => run_recalibrate(config, c, curve_path),
        RunConfig::Simulate(c) => run_simulate(config, c),
    }
}

fn real_main(cli: Cli) -> Result<()> {
    let (config, curve_path) = RunConfig::from_command(cli.command, cli.format)?;
    if cli.format.is_some_and(|f| f != config.format()) {
        bail!("--format cannot override the format recorded in a config; it was {:?}", config.format());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    let bytes = pool.install(|| execute(&config, curve_path.as_deref()))?;
    match &cli.output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

/// 3: boundary forecast, 4: exact variant over its cap, 5: fewer than one
/// degree of freedom, 2: any other failure. The test decision never affects it.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ehl_core::Error>() {
        Some(ehl_core::Error::BoundaryForecast { .. }) => 3,
        Some(ehl_core::Error::ExactTooLarge { .. }) => 4,
        Some(ehl_core::Error::InsufficientDof(_)) => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
