//! Run configuration: defaults, a plain-text key-value file, and
//! `--section.key=value` flags, resolved in that order of precedence.
//!
//! File syntax is one `section.key = value` per line, `#` starts a comment,
//! and a `[section]` header prefixes the bare keys that follow it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::costs::{FusionConfig, PositionalConfig, PositionalVariant};
use crate::error::{Error, Result};
use crate::seqdist::{DistanceConfig, LambdaRule};
use crate::synth::{EpisodeShape, GeneratorConfig, Regime};
use crate::train::TrainConfig;

/// Environment variable overriding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "OTSEQ_OUTPUT_DIR";

const DEFAULT_OUTPUT_DIR: &str = "otseq-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Dist,
    Bench,
    Train,
    Sweep,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => Self::Solve,
            "dist" => Self::Dist,
            "bench" => Self::Bench,
            "train" => Self::Train,
            "sweep" => Self::Sweep,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown command `{other}` (expected solve, dist, bench, train or sweep)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    Environment,
    File,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Setting {
    pub value: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Cmot,
    Agg,
    Dtw,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cmot => "cmot",
            Self::Agg => "agg",
            Self::Dtw => "dtw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    Sigma,
    /// Multiplier of the median heuristic, `lambda = v / median(C)`.
    Lambda,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Sigma => "sigma",
            Self::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSettings {
    pub schedule: TrainConfig,
    /// Output width of the embedding; `None` keeps the raw width.
    pub d_out: Option<usize>,
    /// Seed of the held-out class bank used for before/after evaluation.
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputPaths {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub cost: Option<PathBuf>,
}

/// Fully resolved configuration plus per-key provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub metrics: Vec<MetricKind>,
    pub max_nonconverged_fraction: f64,
    pub dump_plans: usize,
    pub distance: DistanceConfig,
    pub generator: GeneratorConfig,
    pub shape: EpisodeShape,
    pub episodes: usize,
    pub train: TrainSettings,
    pub sweep: SweepSpec,
    pub input: InputPaths,
    pub settings: BTreeMap<String, Setting>,
}

/// `(key, default)`. Command-specific defaults are layered on in [`defaults_for`].
const KEYS: &[(&str, &str)] = &[
    ("run.seed", "42"),
    ("run.output_dir", DEFAULT_OUTPUT_DIR),
    ("run.metrics", "cmot,agg,dtw"),
    ("run.max_nonconverged_fraction", "0.01"),
    ("run.dump_plans", "0"),
    ("sinkhorn.lambda", "auto"),
    ("sinkhorn.lambda_multiplier", "7"),
    ("sinkhorn.max_iterations", "10000"),
    ("sinkhorn.tolerance", "1e-9"),
    ("sinkhorn.log_domain", "false"),
    ("positional.sigma", "1.2"),
    ("positional.variant", "bounded"),
    ("positional.pe_dimension", "auto"),
    ("fusion.alpha", "0.4"),
    ("generator.n_classes", "10"),
    ("generator.m_segments", "4"),
    ("generator.dim", "8"),
    ("generator.noise_sigma", "0.05"),
    ("generator.regime", "ordering"),
    ("generator.pair_reversals", "true"),
    ("generator.nuisance_dims", "0"),
    ("generator.nuisance_sigma", "1.0"),
    ("episode.n_way", "5"),
    ("episode.k_shot", "1"),
    ("episode.q", "1"),
    ("episode.count", "1000"),
    ("train.learning_rate", "0.01"),
    ("train.decay_factor", "0.2"),
    ("train.decay_every", "2000"),
    ("train.total_episodes", "2000"),
    ("train.d_out", "auto"),
    ("train.eval_seed", "auto"),
    ("sweep.parameter", "alpha"),
    ("sweep.values", "0,0.2,0.4,0.8,1.6"),
    ("input.a", ""),
    ("input.b", ""),
    ("input.cost", ""),
];

/// Defaults that differ per command: training runs on a small 2-way task
/// whose raw features carry nuisance coordinates for the embedding to suppress.
fn defaults_for(command: Command) -> BTreeMap<String, Setting> {
    let mut map: BTreeMap<String, Setting> = KEYS
        .iter()
        .map(|(k, v)| (k.to_string(), Setting { value: v.to_string(), provenance: Provenance::Default }))
        .collect();
    let overrides: &[(&str, &str)] = match command {
        Command::Train => &[
            ("generator.regime", "content"),
            ("generator.nuisance_dims", "8"),
            ("episode.n_way", "2"),
            ("episode.count", "500"),
        ],
        Command::Sweep => &[("run.metrics", "cmot")],
        _ => &[],
    };
    for (k, v) in overrides {
        map.get_mut(*k).expect("override names a known key").value = v.to_string();
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            map.insert("run.output_dir".into(), Setting { value: dir, provenance: Provenance::Environment });
        }
    }
    map
}

fn suggest(key: &str) -> Option<String> {
    KEYS.iter()
        .map(|(k, _)| (strsim::levenshtein(key, k), *k))
        .filter(|(d, _)| *d <= 4)
        .min()
        .map(|(_, k)| k.to_string())
}

fn set(map: &mut BTreeMap<String, Setting>, key: &str, value: &str, provenance: Provenance) -> Result<()> {
    match map.get_mut(key) {
        Some(s) => {
            *s = Setting { value: value.trim().to_string(), provenance };
            Ok(())
        }
        None => Err(Error::UnknownKey { key: key.to_string(), suggestion: suggest(key) }),
    }
}

/// Parses the key-value file format into `(key, value)` pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
        let key = key.trim();
        let key = if section.is_empty() || key.contains('.') { key.to_string() } else { format!("{section}.{key}") };
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Resolves a configuration from command-line arguments (without the program name).
///
/// Accepts `<command> [--config path] [--section.key=value ...]`.
pub fn parse_config<S: AsRef<str>>(args: &[S]) -> Result<RunConfig> {
    let mut args = args.iter().map(|a| a.as_ref());
    let command: Command = args
        .next()
        .ok_or_else(|| Error::InvalidConfig("missing command (solve, dist, bench, train, sweep)".into()))?
        .parse()?;
    let mut file: Option<PathBuf> = None;
    let mut flags = Vec::new();
    while let Some(arg) = args.next() {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::InvalidConfig(format!("unexpected argument `{arg}`")))?;
        if body == "config" {
            let path = args.next().ok_or_else(|| Error::InvalidConfig("--config needs a path".into()))?;
            file = Some(PathBuf::from(path));
        } else if let Some(path) = body.strip_prefix("config=") {
            file = Some(PathBuf::from(path));
        } else {
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("flag `{arg}` must look like --section.key=value")))?;
            flags.push((k.to_string(), v.to_string()));
        }
    }
    let file_pairs = match &file {
        Some(path) => parse_config_text(&read_config(path)?)?,
        None => Vec::new(),
    };
    resolve(command, &file_pairs, &flags)
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config file {}: {e}", path.display())))
}

/// Layers file values and then flag values over the defaults and types the result.
pub fn resolve(command: Command, file: &[(String, String)], flags: &[(String, String)]) -> Result<RunConfig> {
    let mut map = defaults_for(command);
    for (k, v) in file {
        set(&mut map, k, v, Provenance::File)?;
    }
    for (k, v) in flags {
        set(&mut map, k, v, Provenance::Flag)?;
    }
    build(command, map)
}

struct Reader<'a>(&'a BTreeMap<String, Setting>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        &self.0[key].value
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T> {
        let value = self.raw(key);
        value.parse().map_err(|_| Error::ConfigValue { key: key.into(), value: value.into(), expected })
    }

    fn auto_or<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key, expected).map(Some)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)], expected: &'static str) -> Result<T> {
        let value = self.raw(key);
        options
            .iter()
            .find(|(name, _)| *name == value)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::ConfigValue { key: key.into(), value: value.into(), expected })
    }

    fn list<T: Copy>(&self, key: &str, parse: impl Fn(&str) -> Option<T>, expected: &'static str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse(s).ok_or_else(|| Error::ConfigValue { key: key.into(), value: s.into(), expected }))
            .collect()
    }
}

fn build(command: Command, map: BTreeMap<String, Setting>) -> Result<RunConfig> {
    let r = Reader(&map);
    let seed: u64 = r.parse("run.seed", "unsigned integer")?;

    let multiplier: f64 = r.parse("sinkhorn.lambda_multiplier", "positive number")?;
    let lambda = match r.raw("sinkhorn.lambda") {
        "auto" => LambdaRule::MedianHeuristic { multiplier },
        _ => LambdaRule::Fixed(r.parse("sinkhorn.lambda", "`auto` or a positive number")?),
    };
    let variant = r.choice(
        "positional.variant",
        &[
            ("bounded", PositionalVariant::Bounded),
            ("uniform", PositionalVariant::UniformPe),
            ("sinusoid", PositionalVariant::SinusoidPe),
        ],
        "one of bounded, uniform, sinusoid",
    )?;
    let distance = DistanceConfig {
        fusion: FusionConfig { alpha: r.parse("fusion.alpha", "nonnegative number")? },
        positional: PositionalConfig {
            sigma: r.parse("positional.sigma", "positive number")?,
            variant,
            pe_dimension: r.auto_or("positional.pe_dimension", "`auto` or a positive integer")?,
        },
        lambda,
        max_iterations: r.parse("sinkhorn.max_iterations", "positive integer")?,
        residual_tolerance: r.parse("sinkhorn.tolerance", "positive number")?,
        log_domain: r.parse("sinkhorn.log_domain", "true or false")?,
        marginal_a: None,
        marginal_b: None,
    };

    let generator = GeneratorConfig {
        n_classes: r.parse("generator.n_classes", "integer >= 2")?,
        m_segments: r.parse("generator.m_segments", "positive integer")?,
        dim: r.parse("generator.dim", "positive integer")?,
        noise_sigma: r.parse("generator.noise_sigma", "nonnegative number")?,
        regime: r.choice(
            "generator.regime",
            &[("content", Regime::ContentDominated), ("ordering", Regime::OrderingDominated)],
            "content or ordering",
        )?,
        rng_seed: seed,
        pair_reversals: r.parse("generator.pair_reversals", "true or false")?,
        nuisance_dims: r.parse("generator.nuisance_dims", "nonnegative integer")?,
        nuisance_sigma: r.parse("generator.nuisance_sigma", "nonnegative number")?,
    };
    let shape = EpisodeShape {
        n_way: r.parse("episode.n_way", "positive integer")?,
        k_shot: r.parse("episode.k_shot", "positive integer")?,
        q: r.parse("episode.q", "positive integer")?,
    };
    let episodes: usize = r.parse("episode.count", "integer >= 2")?;

    let train = TrainSettings {
        schedule: TrainConfig {
            learning_rate: r.parse("train.learning_rate", "nonnegative number")?,
            decay_factor: r.parse("train.decay_factor", "number in (0, 1]")?,
            decay_every: r.parse("train.decay_every", "positive integer")?,
            total_episodes: r.parse("train.total_episodes", "positive integer")?,
            rng_seed: seed,
        },
        d_out: r.auto_or("train.d_out", "`auto` or a positive integer")?,
        eval_seed: r.auto_or("train.eval_seed", "`auto` or an unsigned integer")?.unwrap_or(seed.wrapping_add(1)),
    };
    let sweep = SweepSpec {
        parameter: r.choice(
            "sweep.parameter",
            &[("alpha", SweepParameter::Alpha), ("sigma", SweepParameter::Sigma), ("lambda", SweepParameter::Lambda)],
            "one of alpha, sigma, lambda",
        )?,
        values: r.list("sweep.values", |s| s.parse().ok(), "comma-separated numbers")?,
    };
    let metrics = r.list(
        "run.metrics",
        |s| match s {
            "cmot" => Some(MetricKind::Cmot),
            "agg" => Some(MetricKind::Agg),
            "dtw" => Some(MetricKind::Dtw),
            _ => None,
        },
        "comma-separated subset of cmot, agg, dtw",
    )?;

    let cfg = RunConfig {
        command,
        seed,
        output_dir: PathBuf::from(r.raw("run.output_dir")),
        metrics,
        max_nonconverged_fraction: r.parse("run.max_nonconverged_fraction", "number in [0, 1]")?,
        dump_plans: r.parse("run.dump_plans", "nonnegative integer")?,
        distance,
        generator,
        shape,
        episodes,
        train,
        sweep,
        input: InputPaths { a: r.path("input.a"), b: r.path("input.b"), cost: r.path("input.cost") },
        settings: map,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Cross-field checks that single-key parsing cannot catch.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.shape.n_way > self.generator.label_count() {
            return Err(Error::InvalidConfig(format!(
                "episode.n_way = {} needs more labels than the {} regime provides ({})",
                self.shape.n_way,
                self.generator.regime.as_str(),
                self.generator.label_count()
            )));
        }
        if self.shape.n_way < 2 || self.shape.k_shot == 0 || self.shape.q == 0 {
            return Err(Error::InvalidConfig("episodes need n_way >= 2, k_shot >= 1 and q >= 1".into()));
        }
        if self.episodes < 2 {
            return Err(Error::InvalidConfig("episode.count must be at least 2".into()));
        }
        let (LambdaRule::Fixed(l) | LambdaRule::MedianHeuristic { multiplier: l }) = self.distance.lambda;
        if !(l > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda (or its multiplier) must be positive, got {l}")));
        }
        if !(self.distance.fusion.alpha >= 0.0) || !(self.distance.positional.sigma > 0.0) {
            return Err(Error::InvalidConfig("alpha must be >= 0 and sigma > 0".into()));
        }
        if !(self.distance.residual_tolerance > 0.0) || self.distance.max_iterations == 0 {
            return Err(Error::InvalidConfig("sinkhorn tolerance and max_iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_nonconverged_fraction) {
            return Err(Error::InvalidConfig("run.max_nonconverged_fraction must lie in [0, 1]".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("run.metrics is empty".into()));
        }
        if self.command == Command::Sweep && self.sweep.values.is_empty() {
            return Err(Error::InvalidConfig("sweep.values is empty".into()));
        }
        self.train.schedule.validate()
    }

    /// Human-readable description of the lambda rule, e.g. `auto(7/med)`.
    pub fn lambda_label(&self) -> String {
        lambda_label(&self.distance.lambda)
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.settings.get(key).map(|s| s.provenance)
    }

    /// The effective settings with provenance, for output snapshots.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        root.insert("command".into(), serde_json::to_value(self.command).unwrap());
        root.insert("lambda_rule".into(), self.lambda_label().into());
        let settings = self
            .settings
            .iter()
            .map(|(k, s)| (k.clone(), serde_json::to_value(s).unwrap()))
            .collect::<serde_json::Map<_, _>>();
        root.insert("settings".into(), settings.into());
        root.into()
    }
}

pub fn lambda_label(rule: &LambdaRule) -> String {
    match rule {
        LambdaRule::Fixed(l) => format!("fixed({l})"),
        LambdaRule::MedianHeuristic { multiplier } => format!("auto({multiplier}/med)"),
    }
}
