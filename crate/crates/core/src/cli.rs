//! Command-line front end: `simulate`, `estimate`, `test-symmetry`,
//! `test-constancy`, `mc` and `replay`.
//!
//! Every report is a JSON object `{command, config, seed, results, timing}`.
//! `config` is the fully resolved argument set, so `replay` on a report
//! reruns it and reproduces the same bytes. `timing` is null unless
//! `--timing` is given, which keeps reports byte-identical across runs.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::empirical::{pseudo_observations, DataMatrix, TiePolicy};
use crate::error::{Error, Result};
use crate::grid::{uniform_axis, Grid, DEFAULT_POINTS_PER_AXIS};
use crate::inference::{constancy_test_from, spearman_ci_from, symmetry_test_from, Centering, IntervalReport, TestReport};
use crate::mc::{mc_experiment, write_samples_csv, ExperimentConfig};
use crate::models::{CopulaModel, Family, SerialGenerator};
use crate::resample::{MultiplierDist, WeightScheme};
use crate::rng::RandomStream;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "COPULA_PROC_THREADS";

const DATASET_STREAM: u64 = 2;
const WEIGHT_STREAM: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "copula-proc", version, about = "Empirical copula processes and bootstrap inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum RunConfig {
    /// Draw a sample from a copula model or serial generator.
    Simulate(SimulateArgs),
    /// Spearman's rho with a bootstrap confidence interval.
    Estimate(EstimateArgs),
    /// Bootstrap test of exchangeability `C(u,v) = C(v,u)`.
    TestSymmetry(TestArgs),
    /// Bootstrap test of a constant copula over time.
    TestConstancy(TestArgs),
    /// Monte Carlo experiment from a JSON config.
    Mc(McArgs),
    /// Rerun the command recorded in a report.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Independence,
    Comonotone,
    Gaussian,
    Clayton,
    Gumbel,
    Khoudraji,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SerialKind {
    Iid,
    Var1,
    Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Multiplier,
    Multinomial,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ties {
    Error,
    Average,
}

impl From<Ties> for TiePolicy {
    fn from(t: Ties) -> Self {
        match t {
            Ties::Error => TiePolicy::Error,
            Ties::Average => TiePolicy::AverageRank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stat {
    Rho,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "independence")]
    pub model: ModelKind,
    /// Clayton/gumbel parameter; also the base parameter for khoudraji.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Gaussian correlation; innovation correlation for var1.
    #[arg(long)]
    pub r: Option<f64>,
    /// Khoudraji asymmetry parameter.
    #[arg(long)]
    pub a: Option<f64>,
    /// Base family of the khoudraji construction.
    #[arg(long, value_enum, default_value = "clayton")]
    pub base: ModelKind,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, value_enum, default_value = "iid")]
    pub serial: SerialKind,
    /// Autoregressive coefficient for var1.
    #[arg(long)]
    pub ar_coef: Option<f64>,
    /// Break fraction for regime; the first part is independence unless
    /// `--first-model` says otherwise, the second part is `--model`.
    #[arg(long)]
    pub break_frac: Option<f64>,
    #[arg(long, value_enum, default_value = "independence")]
    pub first_model: ModelKind,
}

fn need(value: Option<f64>, flag: &str, model: &str) -> Result<f64> {
    value.ok_or_else(|| Error::config(flag, format!("{model} needs {flag}")))
}

fn build_model(kind: ModelKind, m: &ModelArgs) -> Result<CopulaModel> {
    let family = match kind {
        ModelKind::Independence => Family::Independence,
        ModelKind::Comonotone => Family::Comonotone,
        ModelKind::Gaussian => Family::Gaussian {
            r: need(m.r, "--r", "gaussian")?,
        },
        ModelKind::Clayton => Family::Clayton {
            theta: need(m.theta, "--theta", "clayton")?,
        },
        ModelKind::Gumbel => Family::Gumbel {
            theta: need(m.theta, "--theta", "gumbel")?,
        },
        ModelKind::Khoudraji => {
            if m.base == ModelKind::Khoudraji {
                return Err(Error::config("--base", "khoudraji base cannot be khoudraji"));
            }
            let base = build_model(m.base, m)?;
            return CopulaModel::khoudraji(base, need(m.a, "--a", "khoudraji")?);
        }
    };
    CopulaModel::new(family, m.d)
}

impl ModelArgs {
    pub fn generator(&self) -> Result<SerialGenerator> {
        let g = match self.serial {
            SerialKind::Iid => SerialGenerator::Iid {
                model: build_model(self.model, self)?,
            },
            SerialKind::Var1 => SerialGenerator::var1(
                need(self.ar_coef, "--ar-coef", "var1")?,
                need(self.r, "--r", "var1")?,
            ),
            SerialKind::Regime => SerialGenerator::Regime {
                first: build_model(self.first_model, self)?,
                second: build_model(self.model, self)?,
                break_frac: need(self.break_frac, "--break-frac", "regime")?,
            },
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[arg(long = "bootstrap", value_enum, default_value = "multinomial")]
    pub bootstrap: SchemeKind,
    /// Block length; defaults to `⌊n^{1/3}⌋`.
    #[arg(long)]
    pub block_len: Option<usize>,
    #[arg(long = "B", default_value_t = 1000)]
    #[serde(rename = "B")]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "error")]
    pub ties: Ties,
}

impl BootstrapArgs {
    fn scheme(&self) -> WeightScheme {
        match self.bootstrap {
            SchemeKind::Multiplier => WeightScheme::Multiplier {
                dist: MultiplierDist::Exponential,
            },
            SchemeKind::Multinomial => WeightScheme::Multinomial,
            SchemeKind::Block => WeightScheme::Block { len: self.block_len },
        }
    }

    fn check(&self) -> Result<()> {
        if self.block_len.is_some() && self.bootstrap != SchemeKind::Block {
            return Err(Error::config("--block-len", "only valid with --bootstrap block"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Record wall-clock time in the report.
    #[arg(long)]
    #[serde(skip)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "rho")]
    pub stat: Stat,
    #[command(flatten)]
    #[serde(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long, default_value_t = 0.9)]
    pub confidence: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Points per copula axis.
    #[arg(long, default_value_t = DEFAULT_POINTS_PER_AXIS)]
    pub grid: usize,
    /// Points on the time axis (constancy test); defaults to `--grid`.
    #[arg(long)]
    pub time_grid: Option<usize>,
    /// Symmetry test: use uncentered replicates.
    #[arg(long)]
    pub uncentered: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct McArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write raw samples as CSV here.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A JSON report written by this tool.
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

impl Default for OutputArgs {
    fn default() -> Self {
        OutputArgs {
            out: None,
            format: Format::Json,
            timing: false,
        }
    }
}

fn read_data(path: &Path) -> Result<DataMatrix> {
    DataMatrix::read_csv(BufReader::new(File::open(path)?))
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn write_json(out: &mut dyn Write, v: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Flat `field,value` rows for the scalar parts of a report.
fn write_summary_csv(out: &mut dyn Write, results: &Value) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["field", "value"]).map_err(io)?;
    if let Value::Object(map) = results {
        for (k, v) in map {
            let cell = match v {
                Value::String(s) => s.clone(),
                Value::Array(_) | Value::Object(_) => continue,
                other => other.to_string(),
            };
            w.write_record([k.as_str(), cell.as_str()]).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn envelope(config: &RunConfig, seed: u64, results: Value, started: Option<Instant>) -> Value {
    let mut v = to_value(config);
    let obj = v.as_object_mut().expect("tagged enum serializes to an object");
    obj.insert("seed".into(), json!(seed));
    obj.insert("results".into(), results);
    obj.insert(
        "timing".into(),
        started.map_or(Value::Null, |t| json!({ "elapsed_seconds": t.elapsed().as_secs_f64() })),
    );
    v
}

fn estimate(a: &EstimateArgs) -> Result<IntervalReport> {
    a.bootstrap.check()?;
    let x = read_data(&a.input)?;
    let ps = pseudo_observations(&x, a.bootstrap.ties.into())?;
    match a.stat {
        Stat::Rho => spearman_ci_from(
            &ps,
            &a.bootstrap.scheme(),
            a.bootstrap.replicates,
            a.confidence,
            &RandomStream::new(a.bootstrap.seed, WEIGHT_STREAM),
        ),
    }
}

fn test(a: &TestArgs, constancy: bool) -> Result<TestReport> {
    a.bootstrap.check()?;
    if constancy && a.uncentered {
        return Err(Error::config("--uncentered", "only applies to test-symmetry"));
    }
    if !constancy && a.time_grid.is_some() {
        return Err(Error::config("--time-grid", "only applies to test-constancy"));
    }
    if a.grid < 2 {
        return Err(Error::config("--grid", format!("need at least 2 points, got {}", a.grid)));
    }
    let x = read_data(&a.input)?;
    let ps = pseudo_observations(&x, a.bootstrap.ties.into())?;
    let rng = RandomStream::new(a.bootstrap.seed, WEIGHT_STREAM);
    let scheme = a.bootstrap.scheme();
    if constancy {
        let time = a.time_grid.unwrap_or(a.grid);
        if time < 2 {
            return Err(Error::config("--time-grid", format!("need at least 2 points, got {time}")));
        }
        let grid = Grid::new(vec![uniform_axis(a.grid); ps.d()], Some(uniform_axis(time)))?;
        constancy_test_from(&ps, &scheme, a.bootstrap.replicates, a.alpha, &grid, &rng)
    } else {
        let grid = Grid::uniform(ps.d(), a.grid, false)?;
        let centering = if a.uncentered {
            Centering::Uncentered
        } else {
            Centering::Centered
        };
        symmetry_test_from(&ps, &scheme, a.bootstrap.replicates, a.alpha, &grid, centering, &rng)
    }
}

fn output_args(config: &RunConfig) -> &OutputArgs {
    match config {
        RunConfig::Estimate(a) => &a.output,
        RunConfig::TestSymmetry(a) | RunConfig::TestConstancy(a) => &a.output,
        RunConfig::Mc(a) => &a.output,
        RunConfig::Replay(a) => &a.output,
        RunConfig::Simulate(_) => unreachable!("simulate writes data, not a report"),
    }
}

/// Runs one command; reports go to `--out` or stdout.
pub fn execute(config: &RunConfig) -> Result<()> {
    if let RunConfig::Simulate(a) = config {
        let g = a.model.generator()?;
        let x = g.sample(a.n, &mut RandomStream::new(a.seed, DATASET_STREAM))?;
        let mut out = open_out(a.out.as_deref())?;
        return match a.format {
            Format::Csv => x.write_csv(out),
            Format::Json => {
                let rows: Vec<&[f64]> = (0..x.n()).map(|i| x.row(i)).collect();
                write_json(&mut out, &envelope(config, a.seed, json!({ "rows": rows }), None))
            }
        };
    }
    let output = output_args(config);
    if let RunConfig::Replay(a) = config {
        let text = std::fs::read_to_string(&a.report)?;
        let mut recorded: RunConfig = {
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?
        };
        if matches!(recorded, RunConfig::Replay(_) | RunConfig::Simulate(_)) {
            return Err(Error::config("command", "report does not record a replayable command"));
        }
        match &mut recorded {
            RunConfig::Estimate(r) => r.output = output.clone(),
            RunConfig::TestSymmetry(r) | RunConfig::TestConstancy(r) => r.output = output.clone(),
            RunConfig::Mc(r) => r.output = output.clone(),
            _ => {}
        }
        return execute(&recorded);
    }

    let started = output.timing.then(Instant::now);
    let (seed, results) = match config {
        RunConfig::Estimate(a) => (a.bootstrap.seed, to_value(&estimate(a)?)),
        RunConfig::TestSymmetry(a) => (a.bootstrap.seed, to_value(&test(a, false)?)),
        RunConfig::TestConstancy(a) => (a.bootstrap.seed, to_value(&test(a, true)?)),
        RunConfig::Mc(a) => {
            let text = std::fs::read_to_string(&a.config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let report = mc_experiment(&cfg)?;
            if let Some(p) = &a.samples {
                write_samples_csv(&report, BufWriter::new(File::create(p)?))?;
            }
            (cfg.seed, json!({ "experiment": to_value(&cfg), "report": to_value(&report) }))
        }
        RunConfig::Simulate(_) | RunConfig::Replay(_) => unreachable!(),
    };
    let mut out = open_out(output.out.as_deref())?;
    match output.format {
        Format::Json => write_json(&mut out, &envelope(config, seed, results, started)),
        Format::Csv => {
            let flat = match &results {
                Value::Object(m) if m.contains_key("report") => m["report"].clone(),
                _ => results,
            };
            write_summary_csv(&mut out, &flat)
        }
    }
}

/// Exit status for an error: 1 for problems with the statistical input,
/// 2 for configuration problems.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        1
    } else {
        2
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let k: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|_| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
