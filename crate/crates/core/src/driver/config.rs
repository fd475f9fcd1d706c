//! Declarative experiment description, read from TOML with full defaulting.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::oracle::{
    ExternalScorer, MpoComponent, MpoObjective, Objective, OracleKind, SyntheticOracle, SyntheticOracleSpec,
    DEFAULT_ENUMERATION_CAP,
};
use crate::space::ProductSpace;
use crate::surrogate::SurrogateConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Salsa,
    Random,
    TabularTs,
    PoolAl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Salsa => "salsa",
            Method::Random => "random",
            Method::TabularTs => "tabular-ts",
            Method::PoolAl => "pool-al",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Salsa, Method::Random, Method::TabularTs, Method::PoolAl]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    /// Pool sizes for generated spaces.
    pub sizes: Vec<usize>,
    /// Feature dimension for generated spaces.
    pub dim: usize,
    pub seed: u64,
    /// Item files, one per vector; replaces generation when non-empty.
    pub files: Vec<PathBuf>,
    /// Per-vector subsample counts applied after loading or generation.
    pub subsample: Vec<usize>,
    pub subsample_seed: u64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 100],
            dim: 8,
            seed: 0,
            files: Vec::new(),
            subsample: Vec::new(),
            subsample_seed: 0,
        }
    }
}

impl SpaceConfig {
    /// Relative item paths are taken from `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<ProductSpace> {
        let space = if self.files.is_empty() {
            ProductSpace::generate(&self.sizes, self.dim, self.seed)?
        } else {
            let paths: Vec<PathBuf> = self
                .files
                .iter()
                .map(|p| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                })
                .collect();
            ProductSpace::load_files(&paths)?
        };
        if self.subsample.is_empty() {
            Ok(space)
        } else {
            space.subsample(&self.subsample, self.subsample_seed)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Additive,
    Bilinear,
    NoisyAdditive,
    Mpo,
    External,
}

/// A single (non-composite) objective; also the shape of MPO components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComponentConfig {
    pub kind: ObjectiveKind,
    pub seed: u64,
    pub noise_std: f64,
    pub interaction: f64,
    pub command: String,
    pub timeout_secs: f64,
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Additive,
            seed: 0,
            noise_std: 0.0,
            interaction: 0.3,
            command: String::new(),
            timeout_secs: 600.0,
            weight: 1.0,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub seed: u64,
    pub noise_std: f64,
    /// λ for the bilinear oracle.
    pub interaction: f64,
    /// Shell command for the external scorer.
    pub command: String,
    pub timeout_secs: f64,
    /// Terms of an MPO objective.
    pub components: Vec<ComponentConfig>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Additive,
            seed: 0,
            noise_std: 0.0,
            interaction: 0.3,
            command: String::new(),
            timeout_secs: 600.0,
            components: Vec::new(),
        }
    }
}

fn leaf(
    kind: ObjectiveKind,
    seed: u64,
    noise_std: f64,
    interaction: f64,
    command: &str,
    timeout_secs: f64,
    space: &ProductSpace,
) -> Result<Box<dyn Objective>> {
    let synthetic = |kind| {
        let spec = SyntheticOracleSpec {
            kind,
            seed,
            interaction,
            noise_std,
            ..SyntheticOracleSpec::default()
        };
        Ok(Box::new(SyntheticOracle::new(&spec, space)?) as Box<dyn Objective>)
    };
    match kind {
        ObjectiveKind::Additive => synthetic(OracleKind::Additive),
        ObjectiveKind::Bilinear => synthetic(OracleKind::Bilinear),
        ObjectiveKind::NoisyAdditive => synthetic(OracleKind::NoisyAdditive),
        ObjectiveKind::External => {
            if command.trim().is_empty() {
                return Err(Error::Config("external objective needs a command".into()));
            }
            if !(timeout_secs > 0.0) {
                return Err(Error::Config("scorer timeout must be positive".into()));
            }
            Ok(Box::new(ExternalScorer::new(command, Duration::from_secs_f64(timeout_secs))))
        }
        ObjectiveKind::Mpo => Err(Error::Config("MPO components cannot be nested".into())),
    }
}

impl ObjectiveConfig {
    pub fn build(&self, space: &ProductSpace) -> Result<Box<dyn Objective>> {
        if self.kind != ObjectiveKind::Mpo {
            return leaf(
                self.kind,
                self.seed,
                self.noise_std,
                self.interaction,
                &self.command,
                self.timeout_secs,
                space,
            );
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(MpoComponent {
                    objective: leaf(c.kind, c.seed, c.noise_std, c.interaction, &c.command, c.timeout_secs, space)?,
                    weight: c.weight,
                    lo: c.lo,
                    hi: c.hi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(MpoObjective::new(components)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a model checkpoint every round.
    pub save_models: bool,
    /// Monte-Carlo draws for per-round acquisition-probability heatmaps;
    /// 0 disables them.
    pub heatmap_draws: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            save_models: true,
            heatmap_draws: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    /// N.
    pub rounds: usize,
    /// K.
    pub batch_size: usize,
    /// Attempt cap per round; 10×K when absent.
    pub max_attempts: Option<usize>,
    /// Observations per item before tabular Thompson sampling starts.
    pub warmup_trials: usize,
    /// Size of the exhaustive top-k used for recall; 0 disables recall.
    pub ground_truth_k: usize,
    /// Precomputed ground truth; computed by enumeration when absent.
    pub ground_truth_file: Option<PathBuf>,
    pub enumeration_cap: u64,
    pub space: SpaceConfig,
    pub objective: ObjectiveConfig,
    pub surrogate: SurrogateConfig,
    pub acquisition: AcquisitionConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            method: Method::Salsa,
            seed: 0,
            rounds: 10,
            batch_size: 100,
            max_attempts: None,
            warmup_trials: 2,
            ground_truth_k: 100,
            ground_truth_file: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            space: SpaceConfig::default(),
            objective: ObjectiveConfig::default(),
            surrogate: SurrogateConfig::default(),
            acquisition: AcquisitionConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn budget(&self) -> u64 {
        self.rounds as u64 * self.batch_size as u64
    }

    pub fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(10 * self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.batch_size == 0 {
            return Err(Error::Config("rounds and batch_size must be ≥ 1".into()));
        }
        if self.attempt_cap() < self.batch_size {
            return Err(Error::Config("max_attempts must be ≥ batch_size".into()));
        }
        if self.method == Method::TabularTs && self.warmup_trials == 0 {
            return Err(Error::Config("tabular-ts needs warmup_trials ≥ 1".into()));
        }
        self.acquisition.validate()?;
        self.surrogate.network.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides::<&str>(text, &[])
    }

    /// Parses `text` after applying `key.path=value` overrides to the TOML
    /// tree. Values are read as TOML literals, falling back to bare strings.
    pub fn from_toml_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut root, o.as_ref())?;
        }
        let config: RunConfig = RunConfig::deserialize(toml::Value::Table(root))
            .map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is empty")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
