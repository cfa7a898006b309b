//! The `samom` command line.
//!
//! Every subcommand reads an optional TOML config (`--config FILE`) with the
//! sections `[model]`, `[algorithms]`, `[run]` and `[output]`; flags override
//! file values. The effective config is validated before any compute and
//! echoed as `config.toml` into the output directory, next to the CSVs and a
//! `manifest.csv` of trial seeds and event checksums.
//!
//! Exit codes: 0 success, 1 config or I/O error, 2 numeric failure (too many
//! diverged trials, or an analytic solve that fails).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::harness::{
    bellman_trajectory, coupling_curve, estimate_covariance, geometric_grid, histogram,
    run_trials, write_bellman_csv, write_coupling_csv, write_covariance_csv, write_hist_csv,
    AlgoSpec, Block, CovarianceTargets, Problem, TrialPlan, TrialSet,
};
use crate::linalg::Mat;
use crate::linear_model::{facts, preset as linear_preset, LinearModelSpec, PRESET_NAMES};
use crate::mdp::{preset as mdp_preset, q_value_iteration, random_graph_mdp, ExplorationKind, Mdp};
use crate::rl::{QAlgorithm, TdAlgorithm, TdModel};
use crate::sa::{Algorithm, SaGain};
use crate::variance::{check_stability, predict_nesa, predict_polsa, sigma_fixed_gain};

/// Environment variable read for the worker-thread count when `run.threads`
/// is not set.
pub const THREADS_ENV: &str = "SAMOM_THREADS";

pub const TD_PRESETS: &[&str] = &["cycle", "two-state"];

#[derive(Debug, Parser)]
#[command(name = "samom", version, about = "Stochastic approximation with matrix momentum")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Paired PolSA vs idealized SNR over a ζ grid (coupling.csv).
    Coupling(Flags),
    /// Monte-Carlo covariance blocks against their predictions (covariance.csv).
    Covariance(Flags),
    /// Q-learning benchmark on a shortest-path MDP (bellman.csv, hist.csv).
    Qlearn(Flags),
    /// TD(0)-family benchmark (td.csv).
    Td(Flags),
    /// Stability report and analytic covariance predictions (prediction.csv).
    Variance(Flags),
    /// Generate and serialize a random-graph MDP.
    GenMdp(Flags),
}

/// Flags shared by all subcommands. Each maps to one config key; a flag whose
/// key the subcommand does not use is rejected.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// model.preset
    #[arg(long)]
    pub preset: Option<String>,
    /// model.file (serialized MDP)
    #[arg(long)]
    pub mdp: Option<String>,
    /// model.exploration: async | clock
    #[arg(long)]
    pub exploration: Option<String>,
    /// model.nodes
    #[arg(long)]
    pub nodes: Option<String>,
    /// model.p (edge probability)
    #[arg(long)]
    pub p: Option<String>,
    /// model.success_prob
    #[arg(long)]
    pub success_prob: Option<String>,
    /// model.beta (discount)
    #[arg(long)]
    pub beta: Option<String>,
    /// algorithms.names, comma separated
    #[arg(long)]
    pub algorithms: Option<String>,
    /// algorithms.zeta: a value, a list `a,b,c` or a range `start:stop:step`
    #[arg(long)]
    pub zeta: Option<String>,
    /// algorithms.gain (g in α_n = g/n)
    #[arg(long)]
    pub gain: Option<String>,
    /// run.steps (`1e5` accepted)
    #[arg(long)]
    pub steps: Option<String>,
    /// run.trials
    #[arg(long)]
    pub trials: Option<String>,
    /// run.seed
    #[arg(long)]
    pub seed: Option<String>,
    /// run.threads (default: $SAMOM_THREADS, then all cores)
    #[arg(long)]
    pub threads: Option<String>,
    /// run.per_decade (snapshots per decade of n)
    #[arg(long)]
    pub per_decade: Option<String>,
    /// run.max_diverged (tolerated fraction of diverged trials)
    #[arg(long)]
    pub max_diverged: Option<String>,
    /// output.dir
    #[arg(long)]
    pub out: Option<String>,
    /// output.file (gen-mdp; stdout when absent)
    #[arg(long)]
    pub file: Option<String>,
    /// output.bins (histogram bins)
    #[arg(long)]
    pub bins: Option<String>,
    /// output.gnuplot: also write plot.gp
    #[arg(long)]
    pub gnuplot: bool,
}

impl Flags {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, &Option<String>); 19] = [
            ("model.preset", &self.preset),
            ("model.file", &self.mdp),
            ("model.exploration", &self.exploration),
            ("model.nodes", &self.nodes),
            ("model.p", &self.p),
            ("model.success_prob", &self.success_prob),
            ("model.beta", &self.beta),
            ("algorithms.names", &self.algorithms),
            ("algorithms.zeta", &self.zeta),
            ("algorithms.gain", &self.gain),
            ("run.steps", &self.steps),
            ("run.trials", &self.trials),
            ("run.seed", &self.seed),
            ("run.threads", &self.threads),
            ("run.per_decade", &self.per_decade),
            ("run.max_diverged", &self.max_diverged),
            ("output.dir", &self.out),
            ("output.file", &self.file),
            ("output.bins", &self.bins),
        ];
        let mut out: Vec<_> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.gnuplot {
            out.push(("output.gnuplot", "true".into()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Coupling,
    Covariance,
    Qlearn,
    Td,
    Variance,
    GenMdp,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Coupling => "coupling",
            Kind::Covariance => "covariance",
            Kind::Qlearn => "qlearn",
            Kind::Td => "td",
            Kind::Variance => "variance",
            Kind::GenMdp => "gen-mdp",
        }
    }

    /// Keys this subcommand reads.
    pub fn keys(self) -> &'static [&'static str] {
        const RUN: [&str; 6] = [
            "run.steps",
            "run.trials",
            "run.seed",
            "run.threads",
            "run.per_decade",
            "run.max_diverged",
        ];
        match self {
            Kind::Coupling => &[
                "model.preset", "algorithms.zeta", "algorithms.gain", RUN[0], RUN[1], RUN[2],
                RUN[3], RUN[4], RUN[5], "output.dir", "output.gnuplot",
            ],
            Kind::Covariance => &[
                "model.preset", "algorithms.names", "algorithms.zeta", "algorithms.gain", RUN[0],
                RUN[1], RUN[2], RUN[3], RUN[4], RUN[5], "output.dir",
            ],
            Kind::Qlearn => &[
                "model.preset", "model.file", "model.exploration", "algorithms.names", RUN[0],
                RUN[1], RUN[2], RUN[3], RUN[4], RUN[5], "output.dir", "output.bins",
                "output.gnuplot",
            ],
            Kind::Td => &[
                "model.preset", "algorithms.names", "algorithms.zeta", "algorithms.gain", RUN[0],
                RUN[1], RUN[2], RUN[3], RUN[4], RUN[5], "output.dir", "output.gnuplot",
            ],
            Kind::Variance => &["model.preset", "algorithms.zeta", "output.dir"],
            Kind::GenMdp => &[
                "model.nodes", "model.p", "model.success_prob", "model.beta", "run.seed",
                "output.file",
            ],
        }
    }

    pub fn required(self) -> &'static [&'static str] {
        match self {
            Kind::Coupling | Kind::Covariance | Kind::Td => &["model.preset", "run.steps", "run.trials"],
            Kind::Qlearn => &["model.preset | model.file", "run.steps", "run.trials"],
            Kind::Variance => &["model.preset"],
            Kind::GenMdp => &["model.nodes", "model.p"],
        }
    }
}

const ALL_KEYS: &[&str] = &[
    "model.preset",
    "model.file",
    "model.exploration",
    "model.nodes",
    "model.p",
    "model.success_prob",
    "model.beta",
    "algorithms.names",
    "algorithms.zeta",
    "algorithms.gain",
    "run.steps",
    "run.trials",
    "run.seed",
    "run.threads",
    "run.per_decade",
    "run.max_diverged",
    "output.dir",
    "output.file",
    "output.bins",
    "output.gnuplot",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required keys for `{kind}`: {}", keys.join(", "))]
    Missing { kind: &'static str, keys: Vec<String> },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` is not used by `{kind}`")]
    NotApplicable { key: String, kind: &'static str },
    #[error("invalid value for `{key}`: {raw:?} ({reason})")]
    Invalid {
        key: String,
        raw: String,
        reason: String,
    },
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed config {path}: {message}")]
    Syntax { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Raw `section.key → text` pairs, before typing.
pub type RawConfig = BTreeMap<String, String>;

/// Flattens a TOML document into [`RawConfig`]. Only `[section]` tables of
/// scalars (or arrays of scalars, joined by commas) are accepted.
pub fn parse_toml(text: &str, origin: &str) -> Result<RawConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
        path: origin.into(),
        message: e.message().to_string(),
    })?;
    let mut raw = RawConfig::new();
    for (section, value) in table {
        let toml::Value::Table(inner) = value else {
            return Err(ConfigError::UnknownKey(section));
        };
        for (key, v) in inner {
            let full = format!("{section}.{key}");
            if !ALL_KEYS.contains(&full.as_str()) {
                return Err(ConfigError::UnknownKey(full));
            }
            let text = scalar_text(&v).ok_or_else(|| ConfigError::Invalid {
                key: full.clone(),
                raw: v.to_string(),
                reason: "expected a string, number, boolean or list".into(),
            })?;
            raw.insert(full, text);
        }
    }
    Ok(raw)
}

fn scalar_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(items) => items
            .iter()
            .map(|i| match i {
                toml::Value::Array(_) | toml::Value::Table(_) => None,
                other => scalar_text(other),
            })
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(",")),
        _ => None,
    }
}

/// Validated experiment settings. Keys a subcommand does not read keep their
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub preset: Option<String>,
    pub model_file: Option<PathBuf>,
    pub exploration: ExplorationKind,
    pub nodes: usize,
    pub edge_prob: f64,
    pub success_prob: f64,
    pub beta: f64,
    pub algorithms: Vec<String>,
    pub zetas: Vec<f64>,
    pub gain: Option<f64>,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub per_decade: usize,
    pub max_diverged: f64,
    pub out_dir: PathBuf,
    pub out_file: Option<PathBuf>,
    pub bins: usize,
    pub gnuplot: bool,
}

fn invalid(key: &str, raw: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        raw: raw.into(),
        reason: reason.into(),
    }
}

/// Non-negative integer; scientific notation such as `1e5` is accepted when
/// the value is integral.
pub fn parse_count(key: &str, raw: &str) -> Result<usize, ConfigError> {
    let t = raw.trim().replace('_', "");
    if let Ok(v) = t.parse::<usize>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= 9.007_199_254_740_992e15 => Ok(v as usize),
        _ => Err(invalid(key, raw, "expected a non-negative integer such as 100000 or 1e5")),
    }
}

pub fn parse_seed(key: &str, raw: &str) -> Result<u64, ConfigError> {
    let t = raw.trim().replace('_', "");
    t.parse::<u64>()
        .or_else(|_| parse_count(key, raw).map(|v| v as u64))
        .map_err(|_| invalid(key, raw, "expected an unsigned 64-bit integer"))
}

pub fn parse_f64(key: &str, raw: &str) -> Result<f64, ConfigError> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(invalid(key, raw, "expected a finite number")),
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, raw, "expected true or false")),
    }
}

/// `0.5`, `0.5,1,1.5` or the inclusive range `0.5:1.9:0.2`.
pub fn parse_zeta_grid(key: &str, raw: &str) -> Result<Vec<f64>, ConfigError> {
    let t = raw.trim();
    let values = if t.contains(':') {
        let parts: Vec<&str> = t.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(key, raw, "a range is start:stop:step"));
        }
        let [a, b, s] = [parts[0], parts[1], parts[2]].map(|p| parse_f64(key, p));
        let (a, b, s) = (a?, b?, s?);
        if !(s > 0.0) || b < a {
            return Err(invalid(key, raw, "a range needs start ≤ stop and step > 0"));
        }
        let count = ((b - a) / s + 1e-9).floor() as usize;
        // Rounded to 12 digits so 0.5 + 7·0.2 prints as 1.9.
        (0..=count)
            .map(|i| ((a + s * i as f64) * 1e12).round() / 1e12)
            .collect()
    } else {
        t.split(',')
            .map(|p| parse_f64(key, p))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|z| !(*z > 0.0 && *z < 2.0)) {
        return Err(invalid(key, raw, "every ζ must lie in (0, 2)"));
    }
    Ok(values)
}

fn split_names(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ExperimentConfig {
    /// Types and validates `raw` for `kind`.
    pub fn from_raw(kind: Kind, raw: &RawConfig) -> Result<Self, ConfigError> {
        for key in raw.keys() {
            if !ALL_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
            if !kind.keys().contains(&key.as_str()) {
                return Err(ConfigError::NotApplicable {
                    key: key.clone(),
                    kind: kind.name(),
                });
            }
        }
        let missing: Vec<String> = kind
            .required()
            .iter()
            .filter(|k| !k.split(" | ").any(|alt| raw.contains_key(alt)))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::Missing {
                kind: kind.name(),
                keys: missing,
            });
        }
        let get = |k: &str| raw.get(k).map(String::as_str);

        let mut c = ExperimentConfig::defaults(kind);
        c.preset = get("model.preset").map(str::to_string);
        c.model_file = get("model.file").map(PathBuf::from);
        if c.preset.is_some() && c.model_file.is_some() {
            return Err(invalid(
                "model.file",
                get("model.file").unwrap(),
                "give either model.preset or model.file",
            ));
        }
        if let Some(v) = get("model.exploration") {
            c.exploration = match v.trim() {
                "async" => ExplorationKind::Async,
                "clock" => ExplorationKind::Clock,
                _ => return Err(invalid("model.exploration", v, "expected async or clock")),
            };
        }
        if let Some(v) = get("model.nodes") {
            c.nodes = parse_count("model.nodes", v)?;
            if c.nodes < 2 {
                return Err(invalid("model.nodes", v, "need at least two nodes"));
            }
        }
        for (key, slot) in [
            ("model.p", &mut c.edge_prob),
            ("model.success_prob", &mut c.success_prob),
        ] {
            if let Some(v) = get(key) {
                *slot = parse_f64(key, v)?;
                if !(0.0..=1.0).contains(slot) {
                    return Err(invalid(key, v, "expected a probability in [0, 1]"));
                }
            }
        }
        if let Some(v) = get("model.beta") {
            c.beta = parse_f64("model.beta", v)?;
            if !(c.beta > 0.0 && c.beta < 1.0) {
                return Err(invalid("model.beta", v, "expected a discount in (0, 1)"));
            }
        }
        if let Some(v) = get("algorithms.names") {
            c.algorithms = split_names(v);
            if c.algorithms.is_empty() {
                return Err(invalid("algorithms.names", v, "no algorithm named"));
            }
        }
        if let Some(v) = get("algorithms.zeta") {
            c.zetas = parse_zeta_grid("algorithms.zeta", v)?;
            if kind != Kind::Coupling && c.zetas.len() != 1 {
                return Err(invalid("algorithms.zeta", v, "expected a single value"));
            }
        }
        if let Some(v) = get("algorithms.gain") {
            let g = parse_f64("algorithms.gain", v)?;
            if !(g > 0.0) {
                return Err(invalid("algorithms.gain", v, "expected a positive gain"));
            }
            c.gain = Some(g);
        }
        if let Some(v) = get("run.steps") {
            c.steps = parse_count("run.steps", v)?;
            if c.steps == 0 {
                return Err(invalid("run.steps", v, "expected at least one step"));
            }
        }
        if let Some(v) = get("run.trials") {
            c.trials = parse_count("run.trials", v)?;
            if c.trials == 0 {
                return Err(invalid("run.trials", v, "expected at least one trial"));
            }
        }
        if let Some(v) = get("run.seed") {
            c.seed = parse_seed("run.seed", v)?;
        }
        if let Some(v) = get("run.threads") {
            let t = parse_count("run.threads", v)?;
            if t == 0 {
                return Err(invalid("run.threads", v, "expected at least one thread"));
            }
            c.threads = Some(t);
        }
        if let Some(v) = get("run.per_decade") {
            c.per_decade = parse_count("run.per_decade", v)?;
            if c.per_decade == 0 {
                return Err(invalid("run.per_decade", v, "expected at least one"));
            }
        }
        if let Some(v) = get("run.max_diverged") {
            c.max_diverged = parse_f64("run.max_diverged", v)?;
            if !(0.0..=1.0).contains(&c.max_diverged) {
                return Err(invalid("run.max_diverged", v, "expected a fraction in [0, 1]"));
            }
        }
        if let Some(v) = get("output.dir") {
            c.out_dir = PathBuf::from(v);
        }
        c.out_file = get("output.file").map(PathBuf::from);
        if let Some(v) = get("output.bins") {
            c.bins = parse_count("output.bins", v)?;
            if c.bins == 0 {
                return Err(invalid("output.bins", v, "expected at least one bin"));
            }
        }
        if let Some(v) = get("output.gnuplot") {
            c.gnuplot = parse_bool("output.gnuplot", v)?;
        }
        c.check_names(raw)?;
        Ok(c)
    }

    fn defaults(kind: Kind) -> Self {
        let algorithms: Vec<String> = match kind {
            Kind::Covariance => vec!["snr-ideal".into(), "polsa".into(), "nesa".into()],
            Kind::Qlearn => QAlgorithm::ALL.iter().map(|a| a.name().to_string()).collect(),
            Kind::Td => ["td0", "lstd0", "polsa-td0", "nesa-td0"].map(String::from).to_vec(),
            _ => Vec::new(),
        };
        let zetas = if kind == Kind::Coupling {
            parse_zeta_grid("algorithms.zeta", "0.5:1.9:0.2").expect("valid default")
        } else {
            vec![1.0]
        };
        ExperimentConfig {
            kind,
            preset: None,
            model_file: None,
            exploration: ExplorationKind::Async,
            nodes: 0,
            edge_prob: 0.0,
            success_prob: 0.8,
            beta: 0.8,
            algorithms,
            zetas,
            gain: None,
            steps: 0,
            trials: 0,
            seed: 0,
            threads: None,
            per_decade: 4,
            max_diverged: 0.1,
            out_dir: PathBuf::from("out").join(kind.name()),
            out_file: None,
            bins: 30,
            gnuplot: false,
        }
    }

    /// Preset and algorithm names are checked here so no compute starts on a
    /// bad name.
    fn check_names(&self, raw: &RawConfig) -> Result<(), ConfigError> {
        let raw_of = |k: &str| raw.get(k).cloned().unwrap_or_default();
        if let Some(p) = &self.preset {
            let known: &[&str] = match self.kind {
                Kind::Qlearn => crate::mdp::MDP_PRESETS,
                Kind::Td => TD_PRESETS,
                _ => PRESET_NAMES,
            };
            if !known.contains(&p.as_str()) {
                return Err(invalid(
                    "model.preset",
                    p,
                    format!("unknown preset; expected one of {}", known.join(", ")),
                ));
            }
        }
        for name in &self.algorithms {
            let ok = match self.kind {
                Kind::Covariance => LINEAR_ALGORITHMS.contains(&name.as_str()),
                Kind::Qlearn => QAlgorithm::parse(name).is_ok(),
                Kind::Td => TdAlgorithm::parse(name, 1.0).is_ok(),
                _ => true,
            };
            if !ok {
                return Err(invalid(
                    "algorithms.names",
                    &raw_of("algorithms.names"),
                    format!("unknown algorithm `{name}`"),
                ));
            }
        }
        Ok(())
    }

    /// Effective config as TOML; parsing it back yields an identical config.
    pub fn to_toml(&self) -> String {
        let mut sections: BTreeMap<&str, toml::Table> = BTreeMap::new();
        for key in self.kind.keys() {
            let Some(value) = self.value_of(key) else {
                continue;
            };
            let (section, name) = key.split_once('.').unwrap();
            sections.entry(section).or_default().insert(name.into(), value);
        }
        let mut out = String::new();
        writeln!(out, "# samom {} (effective configuration)", self.kind.name()).unwrap();
        for section in ["model", "algorithms", "run", "output"] {
            if let Some(t) = sections.get(section) {
                writeln!(out, "\n[{section}]").unwrap();
                out.push_str(&toml::to_string(t).expect("scalar table"));
            }
        }
        out
    }

    fn value_of(&self, key: &str) -> Option<toml::Value> {
        use toml::Value as V;
        let int = |v: u64| match i64::try_from(v) {
            Ok(i) => V::Integer(i),
            Err(_) => V::String(v.to_string()),
        };
        let path = |p: &Path| V::String(p.to_string_lossy().into_owned());
        Some(match key {
            "model.preset" => V::String(self.preset.clone()?),
            "model.file" => path(self.model_file.as_ref()?),
            "model.exploration" => V::String(
                match self.exploration {
                    ExplorationKind::Async => "async",
                    ExplorationKind::Clock => "clock",
                }
                .into(),
            ),
            "model.nodes" => int(self.nodes as u64),
            "model.p" => V::Float(self.edge_prob),
            "model.success_prob" => V::Float(self.success_prob),
            "model.beta" => V::Float(self.beta),
            "algorithms.names" => V::String(self.algorithms.join(",")),
            "algorithms.zeta" => V::String(
                self.zetas
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            "algorithms.gain" => V::Float(self.gain?),
            "run.steps" => int(self.steps as u64),
            "run.trials" => int(self.trials as u64),
            "run.seed" => int(self.seed),
            "run.threads" => int(self.threads? as u64),
            "run.per_decade" => int(self.per_decade as u64),
            "run.max_diverged" => V::Float(self.max_diverged),
            "output.dir" => path(&self.out_dir),
            "output.file" => path(self.out_file.as_ref()?),
            "output.bins" => int(self.bins as u64),
            "output.gnuplot" => V::Boolean(self.gnuplot),
            _ => return None,
        })
    }
}

/// Algorithm names accepted by `covariance`.
pub const LINEAR_ALGORITHMS: &[&str] = &["sa", "snr", "snr-ideal", "polsa", "nesa"];

/// Reads the config file (if any), applies the flags on top and validates.
pub fn parse_config(kind: Kind, flags: &Flags) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            parse_toml(&text, &path.display().to_string())?
        }
        None => RawConfig::new(),
    };
    for (k, v) in flags.entries() {
        raw.insert(k.to_string(), v);
    }
    ExperimentConfig::from_raw(kind, &raw)
}

/// Entry point used by the binary: parses `argv`, runs, prints, and returns
/// the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("samom: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand, writing the summary to `out`.
pub fn run(command: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    let (kind, flags) = match command {
        Command::Coupling(f) => (Kind::Coupling, f),
        Command::Covariance(f) => (Kind::Covariance, f),
        Command::Qlearn(f) => (Kind::Qlearn, f),
        Command::Td(f) => (Kind::Td, f),
        Command::Variance(f) => (Kind::Variance, f),
        Command::GenMdp(f) => (Kind::GenMdp, f),
    };
    let config = parse_config(kind, flags)?;
    run_config(&config, out)
}

/// Runs a validated config.
pub fn run_config(config: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match config.kind {
        Kind::GenMdp => return gen_mdp(config, out),
        Kind::Variance => {
            prepare_dir(config)?;
            return variance(config, out);
        }
        _ => {}
    }
    let threads = match config.threads {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                parse_count(THREADS_ENV, &v)
                    .ok()
                    .filter(|t| *t > 0)
                    .ok_or_else(|| invalid(THREADS_ENV, &v, "expected a positive integer"))?,
            ),
            Err(_) => None,
        },
    };
    let (plan, context) = build_plan(config)?;
    prepare_dir(config)?;
    let set = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?
            .install(|| run_trials(&plan))?,
        None => run_trials(&plan)?,
    };
    write_manifest(&config.out_dir.join("manifest.csv"), &set)?;
    match context {
        Context::Coupling => report_coupling(config, &set, out)?,
        Context::Covariance(m) => report_covariance(config, &set, &m, out)?,
        Context::Q(mdp) => report_qlearn(config, &set, &mdp, out)?,
        Context::Td(model) => report_td(config, &set, &model, out)?,
    }
    check_divergence(config, &set)
}

fn prepare_dir(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(io_err(&path))
}

enum Context {
    Coupling,
    Covariance(Arc<LinearModelSpec>),
    Q(Arc<Mdp>),
    Td(Arc<TdModel>),
}

fn load_linear(config: &ExperimentConfig) -> Result<Arc<LinearModelSpec>, CliError> {
    let name = config.preset.as_deref().unwrap_or_default();
    linear_preset(name)
        .map(Arc::new)
        .map_err(|e| invalid("model.preset", name, e.to_string()).into())
}

fn load_mdp(config: &ExperimentConfig) -> Result<Arc<Mdp>, CliError> {
    if let Some(path) = &config.model_file {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        return Mdp::from_text(&text)
            .map(Arc::new)
            .map_err(|e| invalid("model.file", &path.display().to_string(), e.to_string()).into());
    }
    let name = config.preset.as_deref().unwrap_or_default();
    mdp_preset(name)
        .map(Arc::new)
        .map_err(|e| invalid("model.preset", name, e.to_string()).into())
}

fn load_td(config: &ExperimentConfig) -> Result<Arc<TdModel>, CliError> {
    let name = config.preset.as_deref().unwrap_or_default();
    let model = match name {
        "cycle" => TdModel::cycle_preset(),
        "two-state" => TdModel::two_state(0.5, crate::linalg::Vector::from_vec(vec![1.0, 2.0]))?,
        _ => return Err(invalid("model.preset", name, "unknown TD preset").into()),
    };
    Ok(Arc::new(model))
}

fn linear_algorithm(name: &str, zeta: f64, m: &LinearModelSpec) -> Result<Algorithm, CliError> {
    Ok(match name {
        "sa" => Algorithm::Sa {
            gain: SaGain::Identity,
        },
        "snr" => Algorithm::snr(),
        "snr-ideal" => Algorithm::SnrIdealized {
            a_inv: m
                .a_mean()
                .clone()
                .try_inverse()
                .ok_or(crate::Error::Singular("mean matrix A"))?,
        },
        "polsa" => Algorithm::polsa(zeta),
        "nesa" => Algorithm::nesa(zeta),
        other => {
            return Err(invalid("algorithms.names", other, "unknown linear algorithm").into())
        }
    })
}

fn build_plan(config: &ExperimentConfig) -> Result<(TrialPlan, Context), CliError> {
    let gain = config.gain;
    let spec = |label: String, alg: Algorithm| {
        let s = AlgoSpec::new(label, alg);
        match gain {
            Some(g) => s.with_gain(g),
            None => s,
        }
    };
    let zeta = config.zetas[0];
    let (problem, algos, context) = match config.kind {
        Kind::Coupling => {
            let m = load_linear(config)?;
            let mut algos = vec![spec("snr-ideal".into(), linear_algorithm("snr-ideal", 1.0, &m)?)];
            for z in &config.zetas {
                algos.push(spec(format!("polsa-{z}"), Algorithm::polsa(*z)));
            }
            (Problem::Linear(m), algos, Context::Coupling)
        }
        Kind::Covariance => {
            let m = load_linear(config)?;
            let algos = config
                .algorithms
                .iter()
                .map(|n| Ok(spec(n.clone(), linear_algorithm(n, zeta, &m)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            (Problem::Linear(m.clone()), algos, Context::Covariance(m))
        }
        Kind::Qlearn => {
            let mdp = load_mdp(config)?;
            let algos = config
                .algorithms
                .iter()
                .map(|n| {
                    let a = QAlgorithm::parse(n)
                        .map_err(|e| invalid("algorithms.names", n, e.to_string()))?;
                    Ok(AlgoSpec::new(n.clone(), a.algorithm()))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (
                Problem::QLearning {
                    mdp: mdp.clone(),
                    exploration: config.exploration,
                },
                algos,
                Context::Q(mdp),
            )
        }
        Kind::Td => {
            let model = load_td(config)?;
            let td0 = match gain {
                Some(g) => g,
                None => model.td0_gain()?,
            };
            let algos = config
                .algorithms
                .iter()
                .map(|n| {
                    let a = TdAlgorithm::parse(n, zeta)
                        .map_err(|e| invalid("algorithms.names", n, e.to_string()))?;
                    let s = AlgoSpec::new(n.clone(), a.algorithm());
                    Ok(if a == TdAlgorithm::Td0 { s.with_gain(td0) } else { s })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (Problem::Td(model.clone()), algos, Context::Td(model))
        }
        Kind::Variance | Kind::GenMdp => unreachable!("not a Monte-Carlo subcommand"),
    };
    let mut plan = TrialPlan::new(problem, algos, config.steps, config.trials);
    plan.snapshots = geometric_grid(config.steps, config.per_decade);
    plan.base_seed = config.seed;
    plan.validate()
        .map_err(|e| invalid("algorithms.names", &config.algorithms.join(","), e.to_string()))?;
    Ok((plan, context))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// `trial,seed,algorithm,stream,checksum,diverged_at`
fn write_manifest(path: &Path, set: &TrialSet) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io(path))?;
    w.write_record(["trial", "seed", "algorithm", "stream", "checksum", "diverged_at"])
        .map_err(csv_io(path))?;
    for r in &set.results {
        for (k, t) in r.traces.iter().enumerate() {
            let stream = if set.plan.shared_stream { 0 } else { k };
            w.write_record([
                r.trial.to_string(),
                r.seed.to_string(),
                set.plan.algorithms[k].label.clone(),
                stream.to_string(),
                format!("{:016x}", t.checksum),
                t.diverged_at.map(|n| n.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_io(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn check_divergence(config: &ExperimentConfig, set: &TrialSet) -> Result<(), CliError> {
    for (k, a) in set.plan.algorithms.iter().enumerate() {
        let frac = set.divergence_count(k) as f64 / set.results.len() as f64;
        if frac > config.max_diverged {
            return Err(CliError::Numeric(format!(
                "{} diverged in {:.1}% of trials (threshold {:.1}%)",
                a.label,
                100.0 * frac,
                100.0 * config.max_diverged
            )));
        }
    }
    Ok(())
}

fn line(out: &mut dyn Write, s: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(out, "{}", s.as_ref()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn report_coupling(config: &ExperimentConfig, set: &TrialSet, out: &mut dyn Write) -> Result<(), CliError> {
    let paired: Vec<(f64, usize)> = config
        .zetas
        .iter()
        .enumerate()
        .map(|(i, z)| (*z, i + 1))
        .collect();
    let curve = coupling_curve(set, 0, &paired);
    let path = config.out_dir.join("coupling.csv");
    write_coupling_csv(&path, &curve)?;
    line(out, format!("coupling n²‖θ_n − θ*_n‖² at n = {} ({} trials)", config.steps, config.trials))?;
    line(out, format!("{:>6} {:>14} {:>14} {:>9}", "zeta", "mean", "median", "diverged"))?;
    for (z, _) in &paired {
        if let Some(r) = curve.at(*z, config.steps) {
            line(out, format!("{z:>6} {:>14.6e} {:>14.6e} {:>9}", r.mean, r.median, r.diverged))?;
        }
    }
    if config.gnuplot {
        let mut gp = String::from(
            "set datafile separator ','\nset logscale xy\nset key left\nset xlabel 'n'\nset ylabel 'median n^2|theta - theta*|^2'\nplot \\\n",
        );
        let plots: Vec<String> = config
            .zetas
            .iter()
            .map(|z| format!("  'coupling.csv' using ($1=={z} ? $2 : 1/0):4 with lines title 'zeta={z}'"))
            .collect();
        gp.push_str(&plots.join(", \\\n"));
        gp.push('\n');
        write_gnuplot(config, &gp)?;
    }
    line(out, format!("wrote {}", path.display()))
}

fn write_gnuplot(config: &ExperimentConfig, text: &str) -> Result<(), CliError> {
    let path = config.out_dir.join("plot.gp");
    std::fs::write(&path, text).map_err(io_err(&path))
}

fn report_covariance(
    config: &ExperimentConfig,
    set: &TrialSet,
    m: &LinearModelSpec,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let f = facts(m)?;
    let zeta = config.zetas[0];
    let (a, sd) = (m.a_mean(), m.noise_cov());
    line(out, format!("covariance at n = {} ({} trials, ζ = {zeta})", config.steps, config.trials))?;
    line(out, format!("{:<10} {:>6} {:>12} {:>12} {:>9}", "algorithm", "block", "estimate", "rel err", "diverged"))?;
    for (k, spec) in set.plan.algorithms.iter().enumerate() {
        let targets = match spec.label.as_str() {
            "snr" | "snr-ideal" => CovarianceTargets {
                s11: Some(f.sigma_star.clone()),
                ..Default::default()
            },
            "polsa" => CovarianceTargets {
                s11: Some(f.sigma_star.clone()),
                s22: if zeta == 1.0 { predict_polsa(a, sd).ok().map(|p| p.sigma22) } else { None },
                s21: None,
            },
            "nesa" if zeta == 1.0 => match predict_nesa(&f.l_operator, a, sd) {
                Ok(p) => CovarianceTargets {
                    s11: Some(p.sigma11),
                    s22: Some(p.sigma22),
                    s21: None,
                },
                Err(_) => CovarianceTargets::default(),
            },
            "sa" => {
                let g = spec.schedule.g;
                let gm = Mat::identity(a.nrows(), a.nrows()) * g;
                CovarianceTargets {
                    s11: sigma_fixed_gain(a, &gm, sd).ok(),
                    ..Default::default()
                }
            }
            _ => CovarianceTargets::default(),
        };
        let report = estimate_covariance(set, k, &f.theta_star, &targets);
        let dir = config.out_dir.join(&spec.label);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_covariance_csv(&dir.join("covariance.csv"), &report)?;
        if let Some(row) = report.at(config.steps) {
            for b in [Block::S11, Block::S22] {
                let e = row.block(b);
                let rel = e
                    .rel_error()
                    .map(|r| format!("{r:.4}"))
                    .unwrap_or_else(|| "-".into());
                line(
                    out,
                    format!(
                        "{:<10} {:>6} {:>12.5e} {:>12} {:>9}",
                        spec.label,
                        b.name(),
                        e.estimate.norm(),
                        rel,
                        row.diverged
                    ),
                )?;
            }
        }
    }
    line(out, "estimate column: Frobenius norm; files: <algorithm>/covariance.csv")
}

fn report_qlearn(
    config: &ExperimentConfig,
    set: &TrialSet,
    mdp: &Mdp,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let q = q_value_iteration(mdp, 1e-12)?;
    let series: Vec<(String, Vec<(usize, f64)>)> = set
        .plan
        .algorithms
        .iter()
        .enumerate()
        .map(|(k, a)| (a.label.clone(), bellman_trajectory(set, k, mdp)))
        .collect();
    let path = config.out_dir.join("bellman.csv");
    write_bellman_csv(&path, &series)?;
    for (k, a) in set.plan.algorithms.iter().enumerate() {
        let hists = (0..mdp.d())
            .map(|i| histogram(set, k, i, config.steps, &q, config.bins))
            .collect::<crate::Result<Vec<_>>>()?;
        let dir = config.out_dir.join(&a.label);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_hist_csv(&dir.join("hist.csv"), &hists)?;
    }
    let first = set.plan.snapshots.iter().position(|n| *n > 0).unwrap_or(0);
    line(
        out,
        format!(
            "Q-learning, d = {}, {} exploration, {} trials",
            mdp.d(),
            match config.exploration {
                ExplorationKind::Async => "async",
                ExplorationKind::Clock => "clock",
            },
            config.trials
        ),
    )?;
    line(
        out,
        format!(
            "{:<10} {:>14} {:>14} {:>9}",
            "algorithm",
            format!("B(n={})", set.plan.snapshots[first]),
            format!("B(n={})", config.steps),
            "diverged"
        ),
    )?;
    for (k, (label, s)) in series.iter().enumerate() {
        line(
            out,
            format!(
                "{label:<10} {:>14.6e} {:>14.6e} {:>9}",
                s[first].1,
                s.last().unwrap().1,
                set.divergence_count(k)
            ),
        )?;
    }
    if config.gnuplot {
        let mut gp = String::from(
            "set datafile separator ','\nset logscale xy\nset xlabel 'n'\nset ylabel 'Bellman error'\nplot \\\n",
        );
        let plots: Vec<String> = series
            .iter()
            .map(|(l, _)| format!("  'bellman.csv' using (strcol(1) eq '{l}' ? $2 : 1/0):3 with lines title '{l}'"))
            .collect();
        gp.push_str(&plots.join(", \\\n"));
        gp.push('\n');
        write_gnuplot(config, &gp)?;
    }
    line(out, format!("wrote {} and <algorithm>/hist.csv", path.display()))
}

fn report_td(
    config: &ExperimentConfig,
    set: &TrialSet,
    model: &TdModel,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ts = model.theta_star()?;
    let path = config.out_dir.join("td.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_io(&path))?;
    w.write_record(["algorithm", "n", "mean_error", "max_error"])
        .map_err(csv_io(&path))?;
    let mut finals = Vec::new();
    for (k, a) in set.plan.algorithms.iter().enumerate() {
        let mut last = (f64::NAN, f64::NAN);
        for (pos, n) in set.plan.snapshots.iter().enumerate() {
            let errs: Vec<f64> = set
                .results
                .iter()
                .filter_map(|r| r.traces[k].at(pos))
                .map(|s| (&s.theta - &ts).norm())
                .collect();
            if errs.is_empty() {
                continue;
            }
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let max = errs.iter().copied().fold(0.0, f64::max);
            w.write_record([a.label.clone(), n.to_string(), mean.to_string(), max.to_string()])
                .map_err(csv_io(&path))?;
            last = (mean, max);
        }
        finals.push((a.label.clone(), last, set.divergence_count(k)));
    }
    w.flush().map_err(io_err(&path))?;
    line(out, format!("TD family, {} states, β = {}, n = {}", model.n_states(), model.beta(), config.steps))?;
    line(out, format!("{:<10} {:>14} {:>14} {:>9}", "algorithm", "mean ‖θ̃‖", "max ‖θ̃‖", "diverged"))?;
    for (label, (mean, max), div) in &finals {
        line(out, format!("{label:<10} {mean:>14.6e} {max:>14.6e} {div:>9}"))?;
    }
    if config.gnuplot {
        let mut gp = String::from(
            "set datafile separator ','\nset logscale xy\nset xlabel 'n'\nset ylabel 'mean |theta - theta*|'\nplot \\\n",
        );
        let plots: Vec<String> = finals
            .iter()
            .map(|(l, _, _)| format!("  'td.csv' using (strcol(1) eq '{l}' ? $2 : 1/0):3 with lines title '{l}'"))
            .collect();
        gp.push_str(&plots.join(", \\\n"));
        gp.push('\n');
        write_gnuplot(config, &gp)?;
    }
    line(out, format!("wrote {}", path.display()))
}

fn variance(config: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let m = load_linear(config)?;
    let f = facts(&m)?;
    let zeta = config.zetas[0];
    let (a, sd) = (m.a_mean(), m.noise_cov());
    let report = check_stability(a, zeta, Some(&f.l_operator))?;
    line(out, format!("model {} (d = {}), ζ = {zeta}", config.preset.as_deref().unwrap_or(""), m.dim()))?;
    line(out, format!("{:>24} {:>8} {:>12}", "eigenvalue of A", "Re < 0", "|1 + ζλ| < 1"))?;
    for (i, l) in report.eigenvalues.iter().enumerate() {
        line(
            out,
            format!(
                "{:>24} {:>8} {:>12}",
                format!("{:.6}{:+.6}i", l.re, l.im),
                report.re_negative[i],
                report.momentum_contractive[i]
            ),
        )?;
    }
    if let Some(r) = report.l_spectral_radius {
        line(out, format!("spectral radius of 𝓛: {r:.6}"))?;
    }
    line(out, format!("stable: {}", report.overall))?;

    let mut blocks: Vec<(&str, Mat)> = vec![("sigma_star", f.sigma_star.clone())];
    match predict_polsa(a, sd) {
        Ok(p) => blocks.push(("polsa_sigma22", p.sigma22)),
        Err(e) => line(out, format!("PolSA prediction unavailable: {e}"))?,
    }
    match predict_nesa(&f.l_operator, a, sd) {
        Ok(p) => {
            blocks.push(("nesa_sigma22", p.sigma22));
            blocks.push(("nesa_sigma11", p.sigma11));
        }
        Err(e) => line(out, format!("NeSA prediction unavailable: {e}"))?,
    }
    line(out, "predictions (ζ = 1):")?;
    for (name, mat) in &blocks {
        line(out, format!("{name} ="))?;
        for i in 0..mat.nrows() {
            let row: Vec<String> = (0..mat.ncols()).map(|j| format!("{:>12.6}", mat[(i, j)])).collect();
            line(out, format!("  {}", row.join(" ")))?;
        }
    }
    let path = config.out_dir.join("prediction.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_io(&path))?;
    w.write_record(["block", "i", "j", "value"]).map_err(csv_io(&path))?;
    for (name, mat) in &blocks {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                w.write_record([name.to_string(), i.to_string(), j.to_string(), mat[(i, j)].to_string()])
                    .map_err(csv_io(&path))?;
            }
        }
    }
    w.flush().map_err(io_err(&path))?;
    line(out, format!("wrote {}", path.display()))
}

fn gen_mdp(config: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mdp = random_graph_mdp(config.nodes, config.edge_prob, config.success_prob, config.seed, config.beta)
        .map_err(|e| invalid("model.nodes", &config.nodes.to_string(), e.to_string()))?;
    let text = mdp.to_text()?;
    match &config.out_file {
        Some(path) => {
            std::fs::write(path, &text).map_err(io_err(path))?;
            line(
                out,
                format!("wrote {} ({} nodes, d = {})", path.display(), mdp.n_states(), mdp.d()),
            )
        }
        None => write!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, &str)]) -> RawConfig {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn cli(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("samom").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn empty_config_lists_required_keys() {
        let err = ExperimentConfig::from_raw(Kind::Coupling, &RawConfig::new()).unwrap_err();
        assert_eq!(
            err.to_string(),
            "missing required keys for `coupling`: model.preset, run.steps, run.trials"
        );
    }

    #[test]
    fn malformed_number_names_key_and_text() {
        let r = raw(&[("model.preset", "fig2"), ("run.steps", "1e5x"), ("run.trials", "3")]);
        let err = ExperimentConfig::from_raw(Kind::Coupling, &r).unwrap_err();
        match &err {
            ConfigError::Invalid { key, raw, .. } => {
                assert_eq!(key, "run.steps");
                assert_eq!(raw, "1e5x");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("run.steps") && err.to_string().contains("1e5x"));
    }

    #[test]
    fn unknown_and_foreign_keys_are_rejected() {
        let e = parse_toml("[run]\nstepz = 3\n", "x").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("run.stepz".into()));
        let e = parse_toml("steps = 3\n", "x").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("steps".into()));
        let r = raw(&[("model.preset", "scalar"), ("model.nodes", "3")]);
        assert!(matches!(
            ExperimentConfig::from_raw(Kind::Variance, &r),
            Err(ConfigError::NotApplicable { .. })
        ));
    }

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("k", "1e5").unwrap(), 100_000);
        assert_eq!(parse_count("k", "2_000").unwrap(), 2000);
        assert!(parse_count("k", "1.5").is_err());
        assert!(parse_count("k", "-3").is_err());
    }

    #[test]
    fn zeta_range_spans_endpoints() {
        let z = parse_zeta_grid("z", "0.5:1.9:0.2").unwrap();
        assert_eq!(z, vec![0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9]);
        assert_eq!(parse_zeta_grid("z", "1,1.5").unwrap(), vec![1.0, 1.5]);
        assert!(parse_zeta_grid("z", "0.5:2.5:0.5").is_err());
    }

    #[test]
    fn flag_overrides_file_and_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[model]\npreset = \"fig2-d4\"\n[run]\nsteps = 1000\ntrials = 4\nseed = 3\n",
        )
        .unwrap();
        let flags = Flags {
            config: Some(path),
            steps: Some("2e3".into()),
            zeta: Some("0.5,1".into()),
            ..Flags::default()
        };
        let c = parse_config(Kind::Coupling, &flags).unwrap();
        assert_eq!(c.steps, 2000);
        assert_eq!(c.seed, 3);
        let echo = c.to_toml();
        assert!(echo.contains("steps = 2000"));
        let back = ExperimentConfig::from_raw(Kind::Coupling, &parse_toml(&echo, "echo").unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_kind_round_trips_with_defaults() {
        let cases = [
            (Kind::Coupling, raw(&[("model.preset", "fig2"), ("run.steps", "10"), ("run.trials", "1")])),
            (Kind::Covariance, raw(&[("model.preset", "scalar"), ("run.steps", "10"), ("run.trials", "1"), ("algorithms.gain", "0.25")])),
            (Kind::Qlearn, raw(&[("model.preset", "six"), ("model.exploration", "clock"), ("run.steps", "10"), ("run.trials", "1")])),
            (Kind::Td, raw(&[("model.preset", "cycle"), ("run.steps", "10"), ("run.trials", "1"), ("run.seed", "18446744073709551615")])),
            (Kind::Variance, raw(&[("model.preset", "scalar")])),
            (Kind::GenMdp, raw(&[("model.nodes", "10"), ("model.p", "0.25"), ("output.file", "a b.txt")])),
        ];
        for (kind, r) in cases {
            let c = ExperimentConfig::from_raw(kind, &r).unwrap();
            let back = ExperimentConfig::from_raw(kind, &parse_toml(&c.to_toml(), "echo").unwrap()).unwrap();
            assert_eq!(back, c, "{}", kind.name());
        }
    }

    #[test]
    fn unknown_preset_and_algorithm_fail_before_compute() {
        let r = raw(&[("model.preset", "fig9"), ("run.steps", "10"), ("run.trials", "1")]);
        assert!(matches!(
            ExperimentConfig::from_raw(Kind::Coupling, &r),
            Err(ConfigError::Invalid { ref key, .. }) if key == "model.preset"
        ));
        let r = raw(&[("model.preset", "six"), ("algorithms.names", "snr,zap"), ("run.steps", "10"), ("run.trials", "1")]);
        assert!(matches!(
            ExperimentConfig::from_raw(Kind::Qlearn, &r),
            Err(ConfigError::Invalid { ref key, .. }) if key == "algorithms.names"
        ));
    }

    #[test]
    fn variance_prints_scalar_closed_forms() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("v");
        let cmd = cli(&["variance", "--preset", "scalar", "--out", out_dir.to_str().unwrap()]);
        let mut buf = Vec::new();
        run(&cmd, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("sigma_star =\n      4.000000"), "{text}");
        assert!(text.contains("polsa_sigma22 =\n      1.333333"), "{text}");
        let csv = std::fs::read_to_string(out_dir.join("prediction.csv")).unwrap();
        assert!(csv.starts_with("block,i,j,value\nsigma_star,0,0,4"));
        let p: f64 = csv
            .lines()
            .find(|l| l.starts_with("polsa_sigma22"))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((p - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gen_mdp_file_reloads_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("g.txt");
        let cmd = cli(&["gen-mdp", "--nodes", "10", "--p", "0.25", "--seed", "5", "--file", file.to_str().unwrap()]);
        run(&cmd, &mut Vec::new()).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        let m = Mdp::from_text(&text).unwrap();
        assert_eq!(m.to_text().unwrap(), text);
        let direct = random_graph_mdp(10, 0.25, 0.8, 5, 0.8).unwrap();
        assert_eq!(direct.to_text().unwrap(), text);
        for i in 0..m.d() {
            assert_eq!(m.transition_row(i), direct.transition_row(i));
        }
    }

    #[test]
    fn coupling_run_writes_reproducible_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let go = |sub: &str| {
            let out = dir.path().join(sub);
            let cmd = cli(&[
                "coupling", "--preset", "fig2-d4", "--zeta", "0.5:1.9:0.7", "--steps", "1e3",
                "--trials", "3", "--seed", "7", "--out", out.to_str().unwrap(), "--gnuplot",
            ]);
            run(&cmd, &mut Vec::new()).unwrap();
            out
        };
        let a = go("a");
        let b = go("b");
        for f in ["coupling.csv", "manifest.csv", "plot.gp"] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
        let csv = std::fs::read_to_string(a.join("coupling.csv")).unwrap();
        assert!(csv.starts_with("zeta,n,mean,median,diverged\n"));
        assert!(csv.lines().any(|l| l.starts_with("1.9,1000,")));
        let echo = std::fs::read_to_string(a.join("config.toml")).unwrap();
        let back = ExperimentConfig::from_raw(Kind::Coupling, &parse_toml(&echo, "echo").unwrap()).unwrap();
        assert_eq!(back.zetas, vec![0.5, 1.2, 1.9]);
        assert_eq!(back.steps, 1000);
        let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 1 + 3 * 4);
        assert!(manifest.lines().nth(1).unwrap().starts_with("0,7,snr-ideal,0,"));
    }

    #[test]
    fn qlearn_and_td_runs_write_their_files() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q");
        let cmd = cli(&[
            "qlearn", "--preset", "six", "--steps", "2000", "--trials", "2", "--out", q.to_str().unwrap(),
        ]);
        let mut buf = Vec::new();
        run(&cmd, &mut buf).unwrap();
        let b = std::fs::read_to_string(q.join("bellman.csv")).unwrap();
        assert!(b.starts_with("algorithm,n,error\n"));
        assert!(q.join("polsa-d").join("hist.csv").exists());
        let t = dir.path().join("t");
        let cmd = cli(&["td", "--preset", "cycle", "--steps", "1e3", "--trials", "2", "--out", t.to_str().unwrap()]);
        run(&cmd, &mut Vec::new()).unwrap();
        let td = std::fs::read_to_string(t.join("td.csv")).unwrap();
        assert!(td.starts_with("algorithm,n,mean_error,max_error\n"));
    }

    #[test]
    fn covariance_run_writes_one_file_per_algorithm() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c");
        let cmd = cli(&[
            "covariance", "--preset", "scalar", "--algorithms", "sa,snr-ideal,polsa", "--steps", "500",
            "--trials", "20", "--out", c.to_str().unwrap(),
        ]);
        run(&cmd, &mut Vec::new()).unwrap();
        let s = std::fs::read_to_string(c.join("polsa").join("covariance.csv")).unwrap();
        assert!(s.starts_with("n,block,i,j,estimate,target,stderr\n"));
        assert!(s.lines().any(|l| l.starts_with("500,22,0,0,")));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["samom", "coupling"]), 1);
        assert_eq!(main_with_args(["samom", "frobnicate"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        // Plain SA with a tiny gain on the scalar model never diverges, so a
        // zero threshold still passes; a non-writable output is exit 1.
        let ok = main_with_args([
            "samom", "covariance", "--preset", "scalar", "--algorithms", "sa", "--steps", "100",
            "--trials", "2", "--max-diverged", "0", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(ok, 0);
        let blocked = dir.path().join("file");
        std::fs::write(&blocked, "x").unwrap();
        let bad = main_with_args([
            "samom", "td", "--preset", "cycle", "--steps", "10", "--trials", "1", "--out",
            blocked.join("sub").to_str().unwrap(),
        ]);
        assert_eq!(bad, 1);
    }

    #[test]
    fn divergence_beyond_threshold_is_a_numeric_failure() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = cli(&[
            "covariance", "--preset", "scalar", "--algorithms", "sa", "--gain", "1e7", "--steps", "200",
            "--trials", "2", "--out", dir.path().join("x").to_str().unwrap(),
        ]);
        let err = run(&cmd, &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}
