//! Run configuration: a flat `key = value` text format with defaults,
//! per-key overrides and invariant checks.
//!
//! Recognized keys:
//!
//! | key                | default       |
//! |--------------------|---------------|
//! | `pop_size`         | 20            |
//! | `gen_budget`       | 25            |
//! | `node_range`       | `5,12`        |
//! | `mf`               | 6             |
//! | `complete_epochs`  | 25            |
//! | `archive_capacity` | `pop` (= pop_size) |
//! | `p_crossover`      | 0.9           |
//! | `p_inter`          | 0.5           |
//! | `p_link`           | `auto` (one over the cell's link bits) |
//! | `p_op`             | 0.1           |
//! | `p_add`            | 0.2           |
//! | `node_cap`         | 20            |
//! | `evaluator`        | `synthetic`   |
//! | `seed`             | 0             |
//! | `output_dir`       | `runs/latest` |
//! | `n_repeat`         | 1             |
//! | `base_channels`    | 16            |
//! | `num_classes`      | 10            |
//! | `synthetic_noise`  | 0.002         |
//! | `trainer_timeout`  | 3600 (seconds)|
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::decoder::ArchSettings;
use crate::error::{Error, Result};
use crate::evaluation::synthetic::DEFAULT_NOISE;
use crate::evaluation::{CurveModel, EvalEngine, ExternalEvaluator, SyntheticEvaluator};
use crate::multifidelity::FidelityState;
use crate::rng;
use crate::variation::{LinkRate, VariationConfig};

pub const KEYS: &[&str] = &[
    "pop_size",
    "gen_budget",
    "node_range",
    "mf",
    "complete_epochs",
    "archive_capacity",
    "p_crossover",
    "p_inter",
    "p_link",
    "p_op",
    "p_add",
    "node_cap",
    "evaluator",
    "seed",
    "output_dir",
    "n_repeat",
    "base_channels",
    "num_classes",
    "synthetic_noise",
    "trainer_timeout",
];

/// Which backend scores genomes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvaluatorSpec {
    /// Synthetic curves; without an explicit seed the noise seed is derived
    /// from the run seed.
    Synthetic { seed: Option<u64> },
    /// External trainer launched through the shell.
    Exec { command: String },
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Synthetic { seed: None } => write!(f, "synthetic"),
            EvaluatorSpec::Synthetic { seed: Some(s) } => write!(f, "synthetic:{s}"),
            EvaluatorSpec::Exec { command } => write!(f, "exec:{command}"),
        }
    }
}

impl FromStr for EvaluatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "synthetic" {
            return Ok(EvaluatorSpec::Synthetic { seed: None });
        }
        if let Some(seed) = s.strip_prefix("synthetic:") {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad synthetic seed {seed:?}")))?;
            return Ok(EvaluatorSpec::Synthetic { seed: Some(seed) });
        }
        if let Some(command) = s.strip_prefix("exec:") {
            let command = command.trim();
            if command.is_empty() {
                return Err(Error::Config("exec evaluator needs a command line".into()));
            }
            return Ok(EvaluatorSpec::Exec {
                command: command.to_string(),
            });
        }
        Err(Error::Config(format!(
            "evaluator must be synthetic[:<seed>] or exec:<command>, got {s:?}"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pop_size: usize,
    pub gen_budget: u32,
    pub node_range: (usize, usize),
    pub mf: u32,
    pub complete_epochs: u32,
    /// `None` means "same as pop_size".
    pub archive_capacity: Option<usize>,
    pub variation: VariationConfig,
    pub evaluator: EvaluatorSpec,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub arch: ArchSettings,
    pub synthetic_noise: f64,
    pub trainer_timeout: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pop_size: 20,
            gen_budget: 25,
            node_range: (5, 12),
            mf: 6,
            complete_epochs: 25,
            archive_capacity: None,
            variation: VariationConfig::default(),
            evaluator: EvaluatorSpec::Synthetic { seed: None },
            seed: 0,
            output_dir: PathBuf::from("runs/latest"),
            arch: ArchSettings::default(),
            synthetic_noise: DEFAULT_NOISE,
            trainer_timeout: 3600,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn archive_capacity(&self) -> usize {
        self.archive_capacity.unwrap_or(self.pop_size)
    }

    /// Seed of the synthetic noise stream.
    pub fn noise_seed(&self) -> u64 {
        match self.evaluator {
            EvaluatorSpec::Synthetic { seed: Some(s) } => s,
            _ => rng::derived_seed(self.seed, rng::SYNTHETIC_NOISE),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "pop_size" => self.pop_size = parse_num(key, value)?,
            "gen_budget" => self.gen_budget = parse_num(key, value)?,
            "node_range" => {
                let inner = value.trim_start_matches('[').trim_end_matches(']');
                let parts: Vec<&str> = inner.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("node_range: expected lo,hi, got {value:?}")));
                }
                self.node_range = (parse_num(key, parts[0])?, parse_num(key, parts[1])?);
            }
            "mf" => self.mf = parse_num(key, value)?,
            "complete_epochs" => self.complete_epochs = parse_num(key, value)?,
            "archive_capacity" => {
                self.archive_capacity = if value == "pop" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "p_crossover" => self.variation.p_crossover = parse_num(key, value)?,
            "p_inter" => self.variation.p_inter = parse_num(key, value)?,
            "p_link" => {
                self.variation.p_link = if value == "auto" {
                    LinkRate::PerLength
                } else {
                    LinkRate::Fixed(parse_num(key, value)?)
                }
            }
            "p_op" => self.variation.p_op = parse_num(key, value)?,
            "p_add" => self.variation.p_add = parse_num(key, value)?,
            "node_cap" => self.variation.node_cap = parse_num(key, value)?,
            "evaluator" => self.evaluator = value.parse()?,
            "seed" => self.seed = parse_num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "n_repeat" => self.arch.n_repeat = parse_num(key, value)?,
            "base_channels" => self.arch.base_channels = parse_num(key, value)?,
            "num_classes" => self.arch.num_classes = parse_num(key, value)?,
            "synthetic_noise" => self.synthetic_noise = parse_num(key, value)?,
            "trainer_timeout" => self.trainer_timeout = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Effective configuration, one `key = value` per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let v = &self.variation;
        let p_link = match v.p_link {
            LinkRate::PerLength => "auto".to_string(),
            LinkRate::Fixed(p) => p.to_string(),
        };
        let archive = self
            .archive_capacity
            .map_or_else(|| "pop".to_string(), |c| c.to_string());
        let values = [
            self.pop_size.to_string(),
            self.gen_budget.to_string(),
            format!("{},{}", self.node_range.0, self.node_range.1),
            self.mf.to_string(),
            self.complete_epochs.to_string(),
            archive,
            v.p_crossover.to_string(),
            v.p_inter.to_string(),
            p_link,
            v.p_op.to_string(),
            v.p_add.to_string(),
            v.node_cap.to_string(),
            self.evaluator.to_string(),
            self.seed.to_string(),
            self.output_dir.display().to_string(),
            self.arch.n_repeat.to_string(),
            self.arch.base_channels.to_string(),
            self.arch.num_classes.to_string(),
            self.synthetic_noise.to_string(),
            self.trainer_timeout.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || self.pop_size % 2 != 0 {
            return Err(Error::Config(format!(
                "pop_size must be even and at least 2, got {}",
                self.pop_size
            )));
        }
        FidelityState::new(self.mf, self.gen_budget, self.complete_epochs)?;
        let (lo, hi) = self.node_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("empty node range [{lo}, {hi}]")));
        }
        if hi > self.variation.node_cap {
            return Err(Error::Config(format!(
                "node range upper bound {hi} exceeds node_cap {}",
                self.variation.node_cap
            )));
        }
        if self.archive_capacity() == 0 {
            return Err(Error::Config("archive_capacity must be at least 1".into()));
        }
        self.variation.validate()?;
        if self.arch.n_repeat == 0 || self.arch.base_channels == 0 || self.arch.num_classes == 0 {
            return Err(Error::Config(
                "n_repeat, base_channels and num_classes must be positive".into(),
            ));
        }
        if !(self.synthetic_noise >= 0.0 && self.synthetic_noise.is_finite()) {
            return Err(Error::Config(format!(
                "synthetic_noise must be a finite non-negative number, got {}",
                self.synthetic_noise
            )));
        }
        if self.trainer_timeout == 0 {
            return Err(Error::Config("trainer_timeout must be at least 1 second".into()));
        }
        Ok(())
    }

    /// Builds the evaluation engine described by `evaluator`.
    pub fn build_engine(&self) -> Result<EvalEngine> {
        let backend: Box<dyn crate::evaluation::Evaluator> = match &self.evaluator {
            EvaluatorSpec::Synthetic { .. } => {
                let model = CurveModel::new(self.noise_seed()).with_noise(self.synthetic_noise);
                Box::new(SyntheticEvaluator::new(model, self.arch))
            }
            EvaluatorSpec::Exec { command } => Box::new(ExternalEvaluator::spawn(
                command,
                Duration::from_secs(self.trainer_timeout),
            )?),
        };
        Ok(EvalEngine::new(backend, self.arch))
    }
}
