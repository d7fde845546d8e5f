//! Run configuration: a flat TOML document, one key per line.
//!
//! ```toml
//! scenario = "mog_4corners"
//! n = 240
//! method = "kale"
//! sigma = 0.35
//! lambda = 0.1
//! gamma = "auto"
//! steps = 2000
//! beta = 0.3
//! output_dir = "runs/mog"
//! ```

use std::path::{Path, PathBuf};

use kale_core::scenarios::{Scenario, ScenarioName};
use kale_core::{default_gamma, FlowConfig, NoiseSchedule, SolverMethod, SolverOptions};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Kale,
    Mmd,
    Ula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    #[default]
    None,
    Ula,
    Mmd,
}

/// `"auto"` or a positive step size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Gamma {
    #[default]
    Auto,
    Fixed(f64),
}

impl Gamma {
    pub fn resolve(self, lambda: f64) -> f64 {
        match self {
            Gamma::Auto => default_gamma(lambda),
            Gamma::Fixed(g) => g,
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Gamma::Auto => s.serialize_str("auto"),
            Gamma::Fixed(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(g) => Ok(Gamma::Fixed(g)),
            Raw::Word(w) if w == "auto" => Ok(Gamma::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "gamma must be \"auto\" or a number, got \"{w}\""
            ))),
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Gamma::Auto);
        }
        s.parse().map(Gamma::Fixed).map_err(|_| format!("gamma must be \"auto\" or a number, got \"{s}\""))
    }
}

/// Constant noise level or one level per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl Default for Beta {
    fn default() -> Self {
        Beta::Constant(0.0)
    }
}

fn default_n() -> usize {
    300
}

fn default_mean_gap() -> f64 {
    1.0
}

fn default_solver() -> String {
    "newton".into()
}

fn default_tol() -> f64 {
    1e-9
}

fn default_reference_gamma() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Generated input; mutually exclusive with `source`/`target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_mean_gap")]
    pub mean_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub method: Method,
    pub sigma: f64,
    pub lambda: f64,
    #[serde(default)]
    pub gamma: Gamma,
    pub steps: usize,
    #[serde(default)]
    pub beta: Beta,
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Defaults to `steps` (first and final snapshots only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default = "default_reference_gamma")]
    pub reference_gamma: f64,
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written
/// as strings.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map_err(|_| serde::de::Error::custom("seed must be nonnegative")),
            Raw::Text(t) => t
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("seed `{t}` is not a 64-bit unsigned integer"))),
        }
    }
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{name}` must be a positive number, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim_end().to_string();
            match line {
                Some(l) => CliError::Config(format!("{}:{l}: {msg}", origin.display())),
                None => CliError::Config(format!("{}: {msg}", origin.display())),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Echoed form; parses back to an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        match (&self.scenario, &self.source, &self.target) {
            (Some(name), None, None) => {
                name.parse::<ScenarioName>()?;
            }
            (None, Some(_), Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "give either `scenario` or both `source` and `target`".into(),
                ))
            }
        }
        if self.n == 0 {
            return Err(CliError::Config("`n` must be at least 1".into()));
        }
        if !self.mean_gap.is_finite() {
            return Err(CliError::Config("`mean_gap` must be finite".into()));
        }
        positive("sigma", self.sigma)?;
        positive("lambda", self.lambda)?;
        positive("tol", self.tol)?;
        positive("reference_gamma", self.reference_gamma)?;
        if let Gamma::Fixed(g) = self.gamma {
            positive("gamma", g)?;
        }
        let levels: &[f64] = match &self.beta {
            Beta::Constant(b) => std::slice::from_ref(b),
            Beta::Schedule(v) => v,
        };
        if levels.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(CliError::Config("`beta` values must be nonnegative".into()));
        }
        self.solver_method()?;
        if self.max_iter == Some(0) {
            return Err(CliError::Config("`max_iter` must be at least 1".into()));
        }
        if self.snapshot_every == Some(0) {
            return Err(CliError::Config("`snapshot_every` must be at least 1".into()));
        }
        let needs_density = self.method == Method::Ula || self.reference == Reference::Ula;
        if needs_density && self.scenario_name()? != Some(ScenarioName::Mog4Corners) {
            return Err(CliError::Config(
                "ULA needs the target log-density; only `scenario = \"mog_4corners\"` has one".into(),
            ));
        }
        Ok(())
    }

    pub fn scenario_name(&self) -> CliResult<Option<ScenarioName>> {
        Ok(match &self.scenario {
            Some(s) => Some(s.parse()?),
            None => None,
        })
    }

    pub fn scenario_spec(&self) -> CliResult<Option<Scenario>> {
        Ok(self.scenario_name()?.map(|name| Scenario {
            name,
            n: self.n,
            seed: self.seed,
            mean_gap: self.mean_gap,
        }))
    }

    pub fn solver_method(&self) -> CliResult<SolverMethod> {
        Ok(self.solver.parse()?)
    }

    pub fn solver_options(&self) -> CliResult<SolverOptions> {
        let mut opts = SolverOptions::new(self.solver_method()?).with_tol(self.tol);
        if let Some(m) = self.max_iter {
            opts = opts.with_max_iter(m);
        }
        Ok(opts)
    }

    pub fn gamma_value(&self) -> f64 {
        self.gamma.resolve(self.lambda)
    }

    pub fn snapshot_every(&self) -> usize {
        self.snapshot_every.unwrap_or(self.steps).max(1)
    }

    pub fn flow_config(&self) -> CliResult<FlowConfig> {
        let mut cfg = FlowConfig::new(self.lambda, self.steps);
        cfg.gamma = self.gamma_value();
        cfg.noise = match &self.beta {
            Beta::Constant(b) => NoiseSchedule::Constant(*b),
            Beta::Schedule(v) => NoiseSchedule::List(v.clone()),
        };
        cfg.solver = self.solver_options()?;
        cfg.seed = self.seed;
        cfg.snapshot_every = self.snapshot_every();
        cfg.validate()?;
        Ok(cfg)
    }
}
