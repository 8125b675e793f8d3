//! Command-line front end: configuration, dispatch to the harness, CSV and
//! JSON output.
//!
//! A run is configured by flags and optionally by a flat `key = value` file
//! whose keys are the flag names without the leading dashes (`T` may repeat).
//! Flags override file values. Every configuration error names the flag it
//! concerns.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{
    fit_loglog_slope, run_episode, run_sweep, AggregateResult, EnvSpec, HarnessError, PolicySpec,
    SlopeFit, SweepConfig, DEFAULT_BASE_MEAN, DEFAULT_MAX_ATTEMPTS,
};
use crate::ledger::{EpisodeTrace, LossVector};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const TRACE_HEADER: &str = "t,arm,loss,phase,switches,pseudo_regret,switching_cost_regret";
pub const SUMMARY_CSV_HEADER: &str = "T,mean_pseudo_regret,se_pseudo_regret,mean_switches,\
se_switches,mean_switching_cost_regret,phase2_fraction,break_round_mean";

/// Config-file keys, in the order they are written back out.
const KEYS: [&str; 13] = [
    "algo",
    "env",
    "T",
    "K",
    "lambda",
    "delta",
    "seeds",
    "base-seed",
    "block-size",
    "out",
    "format",
    "emit-trace",
    "slope",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("--{flag}: {message}")]
    Invalid { flag: String, message: String },
    /// A malformed command line, already rendered by the argument parser.
    #[error("{0}")]
    Usage(String),
    /// `--help` or `--version` output; not a failure.
    #[error("{0}")]
    Help(String),
}

impl ConfigError {
    pub fn flag(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { flag, .. } => Some(flag),
            _ => None,
        }
    }
}

fn invalid(flag: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        flag: flag.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("serializing summary: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Tsallis,
    Batched,
    SwitchTsallisSwitch,
    /// Always plays the first arm.
    Constant,
    Uniform,
}

impl Algo {
    pub const ALL: [Algo; 5] = [
        Algo::Tsallis,
        Algo::Batched,
        Algo::SwitchTsallisSwitch,
        Algo::Constant,
        Algo::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Tsallis => "tsallis",
            Algo::Batched => "batched",
            Algo::SwitchTsallisSwitch => "switch-tsallis-switch",
            Algo::Constant => "constant",
            Algo::Uniform => "uniform",
        }
    }

    fn takes_block_size(self) -> bool {
        matches!(self, Algo::Batched | Algo::SwitchTsallisSwitch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvChoice {
    Bernoulli,
    Drifting,
    Dekel,
    /// The walk adversary conditioned on never clipping.
    DekelH,
    /// Loss rows read from a comma-separated file.
    Fixed(PathBuf),
}

impl EnvChoice {
    pub fn name(&self) -> String {
        match self {
            EnvChoice::Bernoulli => "bernoulli".into(),
            EnvChoice::Drifting => "drifting".into(),
            EnvChoice::Dekel => "dekel".into(),
            EnvChoice::DekelH => "dekel-h".into(),
            EnvChoice::Fixed(p) => format!("fixed:{}", p.display()),
        }
    }

    fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "bernoulli" => EnvChoice::Bernoulli,
            "drifting" => EnvChoice::Drifting,
            "dekel" => EnvChoice::Dekel,
            "dekel-h" => EnvChoice::DekelH,
            _ => match s.strip_prefix("fixed:") {
                Some(p) if !p.is_empty() => EnvChoice::Fixed(PathBuf::from(p)),
                _ => {
                    return Err(invalid(
                        "env",
                        format!(
                            "expected bernoulli|drifting|dekel|dekel-h|fixed:<path>, got `{s}`"
                        ),
                    ))
                }
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// A fully validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub env: EnvChoice,
    pub horizons: Vec<u64>,
    pub arms: usize,
    pub lambda: f64,
    pub delta: Option<f64>,
    pub seeds: u32,
    pub base_seed: u64,
    pub block_size: Option<u64>,
    /// Output directory; without it the summary goes to stdout.
    pub out: Option<PathBuf>,
    pub format: Format,
    pub emit_trace: bool,
    pub slope: bool,
}

/// A parsed command line: the run plus execution-only settings that do not
/// affect any output value.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub config: RunConfig,
    /// Worker threads, 0 for one per core.
    pub workers: usize,
}

#[derive(Debug, Parser)]
#[command(
    name = "switchlab",
    version,
    about = "Bandit experiments with switching costs",
    allow_negative_numbers = true
)]
struct Args {
    /// tsallis | batched | switch-tsallis-switch | constant | uniform
    #[arg(long)]
    algo: Option<String>,
    /// bernoulli | drifting | dekel | dekel-h | fixed:<path>
    #[arg(long)]
    env: Option<String>,
    /// Horizon; repeat for a grid
    #[arg(long = "T", value_name = "T")]
    horizons: Vec<String>,
    /// Number of arms [default: 2]
    #[arg(long = "K", value_name = "K")]
    arms: Option<String>,
    /// Cost per switch [default: 1]
    #[arg(long)]
    lambda: Option<String>,
    /// Gap of every suboptimal arm (dekel, dekel-h default to T^(-1/3))
    #[arg(long)]
    delta: Option<String>,
    /// Seeds per horizon [default: 10]
    #[arg(long)]
    seeds: Option<String>,
    /// [default: 0]
    #[arg(long = "base-seed")]
    base_seed: Option<String>,
    /// Fixed block length for batched play
    #[arg(long = "block-size")]
    block_size: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Summary format: json | csv [default: json]
    #[arg(long)]
    format: Option<String>,
    /// Write one per-round CSV per episode
    #[arg(long = "emit-trace")]
    emit_trace: bool,
    /// Fit the log-log slope of mean switching-cost regret against T
    #[arg(long)]
    slope: bool,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads, 0 = one per core [default: 0]
    #[arg(long)]
    workers: Option<String>,
}

type Layer = BTreeMap<&'static str, Vec<String>>;

fn known_key(key: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| *k == key)
}

/// Parses the flat `key = value` format. Blank lines and lines starting with
/// `#` are ignored.
fn parse_layer(text: &str) -> Result<Layer, ConfigError> {
    let mut layer = Layer::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid("config", format!("line {lineno}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        let key = known_key(key)
            .ok_or_else(|| invalid("config", format!("line {lineno}: unknown key `{key}`")))?;
        let values = layer.entry(key).or_default();
        if key != "T" && !values.is_empty() {
            return Err(invalid(
                key,
                format!("set twice in config file (line {lineno})"),
            ));
        }
        values.push(value.to_string());
    }
    Ok(layer)
}

fn flag_layer(args: &Args) -> Layer {
    let mut layer = Layer::new();
    let mut put = |key: &'static str, v: &Option<String>| {
        if let Some(v) = v {
            layer.insert(key, vec![v.clone()]);
        }
    };
    put("algo", &args.algo);
    put("env", &args.env);
    put("K", &args.arms);
    put("lambda", &args.lambda);
    put("delta", &args.delta);
    put("seeds", &args.seeds);
    put("base-seed", &args.base_seed);
    put("block-size", &args.block_size);
    put("out", &args.out);
    put("format", &args.format);
    if !args.horizons.is_empty() {
        layer.insert("T", args.horizons.clone());
    }
    if args.emit_trace {
        layer.insert("emit-trace", vec!["true".into()]);
    }
    if args.slope {
        layer.insert("slope", vec!["true".into()]);
    }
    layer
}

fn single<'a>(layer: &'a Layer, key: &str) -> Option<&'a str> {
    layer.get(key).and_then(|v| v.last()).map(String::as_str)
}

fn number<T: std::str::FromStr>(key: &str, s: &str, what: &str) -> Result<T, ConfigError> {
    s.parse()
        .map_err(|_| invalid(key, format!("expected {what}, got `{s}`")))
}

fn finite(key: &str, s: &str) -> Result<f64, ConfigError> {
    let x: f64 = number(key, s, "a number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, format!("expected a finite number, got `{s}`")))
    }
}

fn boolean(key: &str, s: &str) -> Result<bool, ConfigError> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got `{s}`"))),
    }
}

fn resolve(layer: &Layer) -> Result<RunConfig, ConfigError> {
    let algo = match single(layer, "algo") {
        None => return Err(invalid("algo", "is required")),
        Some(s) => *Algo::ALL.iter().find(|a| a.name() == s).ok_or_else(|| {
            invalid(
                "algo",
                format!(
                    "expected tsallis|batched|switch-tsallis-switch|constant|uniform, got `{s}`"
                ),
            )
        })?,
    };
    let env = match single(layer, "env") {
        None => return Err(invalid("env", "is required")),
        Some(s) => EnvChoice::parse(s)?,
    };

    let arms: usize = match single(layer, "K") {
        None => 2,
        Some(s) => number("K", s, "a positive integer")?,
    };
    if arms < 2 {
        return Err(invalid("K", format!("need at least 2 arms, got {arms}")));
    }

    let raw_t = layer.get("T").map(Vec::as_slice).unwrap_or_default();
    if raw_t.is_empty() {
        return Err(invalid("T", "at least one horizon is required"));
    }
    let mut horizons = Vec::with_capacity(raw_t.len());
    for s in raw_t {
        let t: u64 = number("T", s, "a positive integer")?;
        if t < arms as u64 {
            return Err(invalid(
                "T",
                format!("horizon {t} is below the number of arms {arms}"),
            ));
        }
        if horizons.contains(&t) {
            return Err(invalid("T", format!("horizon {t} given twice")));
        }
        horizons.push(t);
    }

    let lambda = match single(layer, "lambda") {
        None => 1.0,
        Some(s) => finite("lambda", s)?,
    };
    if lambda < 0.0 {
        return Err(invalid(
            "lambda",
            format!("must be non-negative, got {lambda}"),
        ));
    }

    let delta = single(layer, "delta")
        .map(|s| finite("delta", s))
        .transpose()?;
    match (&env, delta) {
        (EnvChoice::Fixed(_), Some(_)) => {
            return Err(invalid(
                "delta",
                "contradicts --env fixed (gaps come from the file)",
            ))
        }
        (EnvChoice::Bernoulli | EnvChoice::Drifting, None) => {
            return Err(invalid(
                "delta",
                format!("is required for --env {}", env.name()),
            ))
        }
        (EnvChoice::Bernoulli, Some(d)) if !(d > 0.0 && d <= 1.0) => {
            return Err(invalid(
                "delta",
                format!("must lie in (0, 1] for bernoulli, got {d}"),
            ))
        }
        (EnvChoice::Drifting, Some(d)) if !(d > 0.0 && d <= 0.9) => {
            return Err(invalid(
                "delta",
                format!("must lie in (0, 0.9] for drifting, got {d}"),
            ))
        }
        (EnvChoice::Dekel, Some(d)) if !(0.0..=1.0).contains(&d) => {
            return Err(invalid(
                "delta",
                format!("must lie in [0, 1] for dekel, got {d}"),
            ))
        }
        (EnvChoice::DekelH, Some(d)) if !(d > 0.0 && d <= 1.0 / 6.0) => {
            return Err(invalid(
                "delta",
                format!("must lie in (0, 1/6] for dekel-h, got {d}"),
            ))
        }
        (EnvChoice::DekelH, None) => {
            if let Some(t) = horizons
                .iter()
                .find(|&&t| EnvSpec::dekel_delta(None, t) > 1.0 / 6.0)
            {
                return Err(invalid(
                    "T",
                    format!("default gap T^(-1/3) exceeds 1/6 at T = {t} for dekel-h; set --delta"),
                ));
            }
        }
        _ => {}
    }

    let seeds: u32 = match single(layer, "seeds") {
        None => 10,
        Some(s) => number("seeds", s, "a positive integer")?,
    };
    if seeds == 0 {
        return Err(invalid("seeds", "need at least one seed"));
    }
    let base_seed: u64 = match single(layer, "base-seed") {
        None => 0,
        Some(s) => number("base-seed", s, "an unsigned 64-bit integer")?,
    };

    let block_size = single(layer, "block-size")
        .map(|s| number::<u64>("block-size", s, "a positive integer"))
        .transpose()?;
    if let Some(b) = block_size {
        if !algo.takes_block_size() {
            return Err(invalid(
                "block-size",
                format!(
                    "only applies to --algo batched or switch-tsallis-switch, not {}",
                    algo.name()
                ),
            ));
        }
        if b == 0 {
            return Err(invalid("block-size", "must be at least 1"));
        }
    }

    let out = single(layer, "out").map(PathBuf::from);
    if out.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
        return Err(invalid("out", "empty path"));
    }
    let format = match single(layer, "format") {
        None | Some("json") => Format::Json,
        Some("csv") => Format::Csv,
        Some(s) => {
            return Err(invalid(
                "format",
                format!("expected csv or json, got `{s}`"),
            ))
        }
    };
    let emit_trace = single(layer, "emit-trace").map_or(Ok(false), |s| boolean("emit-trace", s))?;
    if emit_trace && out.is_none() {
        return Err(invalid("emit-trace", "requires --out"));
    }
    let slope = single(layer, "slope").map_or(Ok(false), |s| boolean("slope", s))?;
    if slope && horizons.len() < 3 {
        return Err(invalid(
            "slope",
            format!("needs at least 3 values of --T, got {}", horizons.len()),
        ));
    }

    Ok(RunConfig {
        algo,
        env,
        horizons,
        arms,
        lambda,
        delta,
        seeds,
        base_seed,
        block_size,
        out,
        format,
        emit_trace,
        slope,
    })
}

/// Parses command-line tokens (without the program name). The config file is
/// `config_file` if given, else the `--config` flag.
pub fn parse_config<I, S>(args: I, config_file: Option<&Path>) -> Result<Invocation, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let tokens =
        std::iter::once(OsString::from("switchlab")).chain(args.into_iter().map(Into::into));
    let args = Args::try_parse_from(tokens).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            ConfigError::Help(e.to_string())
        }
        _ => ConfigError::Usage(e.to_string()),
    })?;

    let path = match (config_file, &args.config) {
        (Some(_), Some(_)) => return Err(invalid("config", "config file given twice")),
        (Some(p), None) => Some(p.to_path_buf()),
        (None, p) => p.clone(),
    };
    let mut layer = match &path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| invalid("config", format!("{}: {e}", p.display())))?;
            parse_layer(&text)?
        }
        None => Layer::new(),
    };
    layer.extend(flag_layer(&args));

    let workers = match &args.workers {
        None => 0,
        Some(s) => number("workers", s, "a non-negative integer")?,
    };
    Ok(Invocation {
        config: resolve(&layer)?,
        workers,
    })
}

/// Parses the contents of a config file on its own.
pub fn parse_config_text(text: &str) -> Result<RunConfig, ConfigError> {
    resolve(&parse_layer(text)?)
}

/// Writes `config` in the flat file format; parsing the result gives back an
/// equal config.
pub fn emit_config(config: &RunConfig) -> String {
    let mut s = String::new();
    for (key, values) in to_layer(config) {
        for v in values {
            s.push_str(&format!("{key} = {v}\n"));
        }
    }
    s
}

/// Key order follows `KEYS`, not the map's order.
fn to_layer(c: &RunConfig) -> Vec<(&'static str, Vec<String>)> {
    let mut out: Vec<(&'static str, Vec<String>)> = Vec::new();
    for key in KEYS {
        let values: Vec<String> = match key {
            "algo" => vec![c.algo.name().into()],
            "env" => vec![c.env.name()],
            "T" => c.horizons.iter().map(u64::to_string).collect(),
            "K" => vec![c.arms.to_string()],
            // `{}` on f64 is the shortest string that parses back exactly
            "lambda" => vec![format!("{}", c.lambda)],
            "delta" => c.delta.map(|d| format!("{d}")).into_iter().collect(),
            "seeds" => vec![c.seeds.to_string()],
            "base-seed" => vec![c.base_seed.to_string()],
            "block-size" => c.block_size.map(|b| b.to_string()).into_iter().collect(),
            "out" => c.out.iter().map(|p| p.display().to_string()).collect(),
            "format" => vec![c.format.name().into()],
            "emit-trace" => vec![c.emit_trace.to_string()],
            "slope" => vec![c.slope.to_string()],
            _ => unreachable!(),
        };
        if !values.is_empty() {
            out.push((key, values));
        }
    }
    out
}

impl RunConfig {
    /// Builds the harness sweep. Fixed sequences are loaded here, so file
    /// problems surface as configuration errors on `--env`.
    pub fn to_sweep_config(&self) -> Result<SweepConfig, ConfigError> {
        let policy = match self.algo {
            Algo::Tsallis => PolicySpec::Tsallis,
            Algo::Batched => PolicySpec::Batched {
                block_size: self.block_size,
            },
            Algo::SwitchTsallisSwitch => PolicySpec::SwitchTsallisSwitch {
                block_size: self.block_size,
            },
            Algo::Constant => PolicySpec::Constant { arm: 0 },
            Algo::Uniform => PolicySpec::Uniform,
        };
        let env = match &self.env {
            EnvChoice::Bernoulli => {
                let delta = self.delta.expect("validated");
                EnvSpec::Bernoulli {
                    delta,
                    base_mean: DEFAULT_BASE_MEAN.min(1.0 - delta),
                }
            }
            EnvChoice::Drifting => EnvSpec::Drifting {
                delta: self.delta.expect("validated"),
            },
            EnvChoice::Dekel => EnvSpec::Dekel { delta: self.delta },
            EnvChoice::DekelH => EnvSpec::DekelConditioned {
                delta: self.delta,
                max_attempts: DEFAULT_MAX_ATTEMPTS,
            },
            EnvChoice::Fixed(path) => {
                let rows = self.horizons.iter().copied().max().unwrap_or(0);
                EnvSpec::fixed(load_losses(path, self.arms, rows)?)
            }
        };
        Ok(SweepConfig {
            policy,
            env,
            horizons: self.horizons.clone(),
            arms: self.arms,
            lambda: self.lambda,
            seeds: self.seeds,
            base_seed: self.base_seed,
        })
    }
}

/// Reads a loss matrix: one round per line, `arms` comma-separated values in
/// `[0, 1]`, blank and `#` lines skipped. At least `rows` rounds are required.
pub fn load_losses(path: &Path, arms: usize, rows: u64) -> Result<Vec<LossVector>, ConfigError> {
    let where_ = |msg: String| invalid("env", format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| where_(e.to_string()))?;
    let mut losses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| where_(format!("line {}: {e}", i + 1)))?;
        if values.len() != arms {
            return Err(where_(format!(
                "line {}: {} values, expected {arms} (--K)",
                i + 1,
                values.len()
            )));
        }
        losses.push(LossVector::new(values).map_err(|e| where_(format!("line {}: {e}", i + 1)))?);
    }
    if (losses.len() as u64) < rows {
        return Err(where_(format!(
            "{} rounds, the largest --T is {rows}",
            losses.len()
        )));
    }
    Ok(losses)
}

/// `printf("%.9g")`: 9 significant digits, trailing zeros dropped, exponent
/// form outside `[1e-4, 1e9)`.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        trim_zeros(format!("{:.*}", (8 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// One row per round; arms are printed one-based and `pseudo_regret` is empty
/// when the environment has no gaps.
pub fn write_trace_csv<W: Write>(trace: &EpisodeTrace, mut w: W) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.rounds {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t,
            r.arm + 1,
            format_sig9(r.loss),
            r.phase.number(),
            r.switches,
            r.pseudo_regret.map(format_sig9).unwrap_or_default(),
            format_sig9(r.switching_cost_regret),
        )?;
    }
    w.flush()
}

pub fn emit_trace_csv(trace: &EpisodeTrace, path: &Path) -> Result<(), RunError> {
    let io_err = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_trace_csv(trace, BufWriter::new(file)).map_err(io_err)
}

/// The config as echoed in the manifest, keyed like the flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub algo: String,
    pub env: String,
    #[serde(rename = "T")]
    pub horizons: Vec<u64>,
    #[serde(rename = "K")]
    pub arms: usize,
    pub lambda: String,
    pub delta: Option<String>,
    pub seeds: u32,
    #[serde(rename = "base-seed")]
    pub base_seed: u64,
    #[serde(rename = "block-size")]
    pub block_size: Option<u64>,
    pub out: Option<String>,
    pub format: String,
    #[serde(rename = "emit-trace")]
    pub emit_trace: bool,
    pub slope: bool,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        ConfigEcho {
            algo: c.algo.name().into(),
            env: c.env.name(),
            horizons: c.horizons.clone(),
            arms: c.arms,
            lambda: format!("{}", c.lambda),
            delta: c.delta.map(|d| format!("{d}")),
            seeds: c.seeds,
            base_seed: c.base_seed,
            block_size: c.block_size,
            out: c.out.as_ref().map(|p| p.display().to_string()),
            format: c.format.name().into(),
            emit_trace: c.emit_trace,
            slope: c.slope,
        }
    }
}

impl ConfigEcho {
    pub fn to_config(&self) -> Result<RunConfig, ConfigError> {
        let mut layer = Layer::new();
        let mut put = |k: &'static str, v: String| layer.entry(k).or_default().push(v);
        put("algo", self.algo.clone());
        put("env", self.env.clone());
        for t in &self.horizons {
            put("T", t.to_string());
        }
        put("K", self.arms.to_string());
        put("lambda", self.lambda.clone());
        if let Some(d) = &self.delta {
            put("delta", d.clone());
        }
        put("seeds", self.seeds.to_string());
        put("base-seed", self.base_seed.to_string());
        if let Some(b) = self.block_size {
            put("block-size", b.to_string());
        }
        if let Some(o) = &self.out {
            put("out", o.clone());
        }
        put("format", self.format.clone());
        put("emit-trace", self.emit_trace.to_string());
        put("slope", self.slope.to_string());
        resolve(&layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sweep_seconds: String,
    pub trace_seconds: String,
    pub total_seconds: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ConfigEcho,
    /// Every file the run wrote, summary included.
    pub outputs: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(rename = "T")]
    pub horizon: u64,
    pub mean_pseudo_regret: Option<String>,
    pub se_pseudo_regret: Option<String>,
    pub mean_switches: String,
    pub se_switches: String,
    pub mean_switching_cost_regret: String,
    pub phase2_fraction: String,
    pub break_round_mean: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    /// The grid column regressed on `T`.
    pub quantity: String,
    pub slope: String,
    pub intercept: String,
    pub max_residual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub config: ConfigEcho,
    pub grid: Vec<GridRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slope_fit: Option<SlopeRow>,
    pub manifest: RunManifest,
}

pub fn grid_rows(result: &AggregateResult) -> Vec<GridRow> {
    result
        .points
        .iter()
        .map(|p| GridRow {
            horizon: p.horizon,
            mean_pseudo_regret: p.pseudo_regret.map(|s| format_sig9(s.mean)),
            se_pseudo_regret: p.pseudo_regret.map(|s| format_sig9(s.se)),
            mean_switches: format_sig9(p.switches.mean),
            se_switches: format_sig9(p.switches.se),
            mean_switching_cost_regret: format_sig9(p.switching_cost_regret.mean),
            phase2_fraction: format_sig9(p.phase2_fraction),
            break_round_mean: p.break_round.map(|s| format_sig9(s.mean)),
        })
        .collect()
}

fn slope_row(fit: &SlopeFit) -> SlopeRow {
    SlopeRow {
        quantity: "mean_switching_cost_regret".into(),
        slope: format_sig9(fit.slope),
        intercept: format_sig9(fit.intercept),
        max_residual: format_sig9(fit.max_residual),
    }
}

/// Renders the JSON summary document, newline-terminated.
pub fn summary_json(
    result: &AggregateResult,
    slope: Option<&SlopeFit>,
    manifest: &RunManifest,
) -> Result<String, RunError> {
    let doc = SummaryDoc {
        config: manifest.config.clone(),
        grid: grid_rows(result),
        slope_fit: slope.map(slope_row),
        manifest: manifest.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_summary_json(
    result: &AggregateResult,
    slope: Option<&SlopeFit>,
    manifest: &RunManifest,
    path: &Path,
) -> Result<(), RunError> {
    let text = summary_json(result, slope, manifest)?;
    fs::write(path, text).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The grid as CSV, missing values left empty.
pub fn summary_csv(result: &AggregateResult) -> String {
    let mut s = format!("{SUMMARY_CSV_HEADER}\n");
    for r in grid_rows(result) {
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.horizon,
            opt(&r.mean_pseudo_regret),
            opt(&r.se_pseudo_regret),
            r.mean_switches,
            r.se_switches,
            r.mean_switching_cost_regret,
            r.phase2_fraction,
            opt(&r.break_round_mean),
        ));
    }
    s
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: AggregateResult,
    pub slope: Option<SlopeFit>,
    pub manifest: RunManifest,
    /// The summary in the requested format, exactly as written or printed.
    pub summary: String,
}

pub fn trace_file_name(horizon: u64, seed_index: u32) -> String {
    format!("trace_T{horizon}_seed{seed_index}.csv")
}

/// Runs the sweep and writes the outputs under `config.out`, if set.
pub fn execute(inv: &Invocation, sweep: &SweepConfig) -> Result<RunOutput, RunError> {
    let config = &inv.config;
    let start = Instant::now();
    let result = run_sweep(sweep, inv.workers)?;
    let sweep_seconds = start.elapsed().as_secs_f64();

    let slope = if config.slope {
        let pts: Vec<(f64, f64)> = result
            .points
            .iter()
            .map(|p| (p.horizon as f64, p.switching_cost_regret.mean))
            .collect();
        Some(fit_loglog_slope(&pts)?)
    } else {
        None
    };

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    let mut outputs = Vec::new();
    let trace_start = Instant::now();
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if config.emit_trace {
            for (g, &t) in sweep.horizons.iter().enumerate() {
                for s in 0..sweep.seeds {
                    let params = sweep.params(g, s)?;
                    // Replaying the episode reproduces the sweep's run exactly.
                    let trace = run_episode(&sweep.policy, &sweep.env, &params)?;
                    let path = dir.join(trace_file_name(t, s));
                    emit_trace_csv(&trace, &path)?;
                    outputs.push(path.display().to_string());
                }
            }
        }
    }
    let trace_seconds = trace_start.elapsed().as_secs_f64();

    let (summary_name, manifest_name) = match config.format {
        Format::Json => ("summary.json", None),
        Format::Csv => ("summary.csv", Some("manifest.json")),
    };
    let slope_name = (config.format == Format::Csv && slope.is_some()).then_some("slope_fit.csv");
    if let Some(dir) = &config.out {
        for name in [Some(summary_name), manifest_name, slope_name]
            .into_iter()
            .flatten()
        {
            outputs.push(dir.join(name).display().to_string());
        }
    }

    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: ConfigEcho::from(config),
        outputs,
        timings: Timings {
            sweep_seconds: format_sig9(sweep_seconds),
            trace_seconds: format_sig9(trace_seconds),
            total_seconds: String::new(),
        },
    };
    manifest.timings.total_seconds = format_sig9(start.elapsed().as_secs_f64());

    let summary = match config.format {
        Format::Json => summary_json(&result, slope.as_ref(), &manifest)?,
        Format::Csv => summary_csv(&result),
    };
    if let Some(dir) = &config.out {
        let path = dir.join(summary_name);
        fs::write(&path, &summary).map_err(io_err(&path))?;
        if let Some(name) = manifest_name {
            let path = dir.join(name);
            let mut text = serde_json::to_string_pretty(&manifest)?;
            text.push('\n');
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        if let (Some(name), Some(fit)) = (slope_name, &slope) {
            let row = slope_row(fit);
            let path = dir.join(name);
            let text = format!(
                "quantity,slope,intercept,max_residual\n{},{},{},{}\n",
                row.quantity, row.slope, row.intercept, row.max_residual
            );
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    Ok(RunOutput {
        result,
        slope,
        manifest,
        summary,
    })
}

/// Whole-program entry point; returns the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let inv = match parse_config(args, None) {
        Ok(inv) => inv,
        Err(ConfigError::Help(text)) => {
            let _ = write!(stdout, "{text}");
            return 0;
        }
        Err(e) => {
            let _ = writeln!(stderr, "switchlab: {e}");
            return EXIT_CONFIG;
        }
    };
    let sweep = match inv.config.to_sweep_config() {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "switchlab: {e}");
            return EXIT_CONFIG;
        }
    };
    match execute(&inv, &sweep) {
        Ok(out) => {
            if inv.config.out.is_none() {
                let _ = write!(stdout, "{}", out.summary);
            }
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "switchlab: {e}");
            EXIT_RUNTIME
        }
    }
}
