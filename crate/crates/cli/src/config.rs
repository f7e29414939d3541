//! Experiment configuration: one TOML file per run, validated before any work starts.

use std::path::{Path, PathBuf};

use cltrlab::bandit::{BanditConfig, BatchSchedule, OpeEstimator, OplConfig, OplMethod};
use cltrlab::rlloop::{ChainConfig, RlConfig, RlMethod};
use cltrlab::safeltr::{ClickModelKind, SafeLtrMethod, TrainConfig, WorldConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Overrides the root that relative output directories are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "CLTRLAB_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SafeltrSweep,
    PrpoRobustness,
    OplBandit,
    OpeBandit,
    RlChain,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Self::SafeltrSweep => "safeltr_sweep",
            Self::PrpoRobustness => "prpo_robustness",
            Self::OplBandit => "opl_bandit",
            Self::OpeBandit => "ope_bandit",
            Self::RlChain => "rl_chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeltrParams {
    pub world: WorldConfig,
    pub train: TrainConfig,
}

impl Default for SafeltrParams {
    fn default() -> Self {
        Self { world: WorldConfig::default(), train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OplParams {
    pub env: BanditConfig,
    pub train: OplConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeParams {
    pub env: BanditConfig,
    /// Ridge penalty of the DR reward model.
    pub ridge: f64,
    /// Rows of the uniformly logged sample the target policy is trained on.
    pub target_rows: usize,
    pub target_train: OplConfig,
}

impl Default for OpeParams {
    fn default() -> Self {
        Self {
            env: BanditConfig::default(),
            ridge: 1.0,
            target_rows: 10_000,
            target_train: OplConfig { epochs: 100, schedule: BatchSchedule::FullBatch, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RlParams {
    pub chain: ChainConfig,
    pub train: RlConfig,
    /// Epochs at the end of training averaged into the final reward.
    pub final_window: Option<usize>,
}

/// The file as written by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub family: Family,
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    /// Log sizes N, or training epochs for `rl_chain`.
    pub grid: Vec<usize>,
    pub output_dir: PathBuf,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    pub methods: Vec<toml::Value>,
    #[serde(default)]
    pub safeltr: Option<toml::Value>,
    #[serde(default)]
    pub opl: Option<toml::Value>,
    #[serde(default)]
    pub ope: Option<toml::Value>,
    #[serde(default)]
    pub rl: Option<toml::Value>,
}

fn default_ci() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MethodSpec {
    Safeltr(SafeLtrMethod),
    Opl(OplMethod),
    Ope(OpeEstimator),
    Rl(RlMethod),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Method {
    pub label: String,
    pub spec: MethodSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Safeltr(SafeltrParams),
    Opl(OplParams),
    Ope(OpeParams),
    Rl(RlParams),
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub name: String,
    pub seeds: Vec<u64>,
    pub grid: Vec<usize>,
    pub output_dir: PathBuf,
    pub ci_level: f64,
    pub methods: Vec<Method>,
    pub params: Params,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        raw.resolve()
    }

    /// SHA-256 of the canonical JSON form, seeds included.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seeds shifted by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }

    /// `output_dir`, placed under the override root when it is relative and the
    /// environment variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

fn section<T: DeserializeOwned + Default>(value: Option<toml::Value>, name: &str) -> Result<T, CliError> {
    match value {
        None => Ok(T::default()),
        Some(v) => v.try_into().map_err(|e| CliError::Config(format!("[{name}]: {e}"))),
    }
}

fn label_of(value: &toml::Value) -> Result<(String, toml::Value), CliError> {
    match value {
        toml::Value::String(s) => Ok((s.clone(), value.clone())),
        toml::Value::Table(t) => {
            let mut t = t.clone();
            let explicit = match t.remove("label") {
                Some(toml::Value::String(s)) => Some(s),
                Some(_) => return Err(CliError::Config("method label must be a string".into())),
                None => None,
            };
            let name = t.get("method").and_then(|m| m.as_str()).ok_or_else(|| CliError::Config("method entry without a `method` key".into()))?;
            let label = explicit.unwrap_or_else(|| {
                let params: Vec<String> = t
                    .iter()
                    .filter(|(k, _)| *k != "method")
                    .map(|(k, v)| match v {
                        toml::Value::Table(inner) => {
                            let parts: Vec<String> = inner.iter().map(|(a, b)| format!("{a}={}", plain(b))).collect();
                            format!("{k}={}", parts.join(":"))
                        }
                        other => format!("{k}={}", plain(other)),
                    })
                    .collect();
                if params.is_empty() {
                    name.to_string()
                } else {
                    format!("{name}({})", params.join(","))
                }
            });
            Ok((label, toml::Value::Table(t)))
        }
        _ => Err(CliError::Config("a method is either a name or a table".into())),
    }
}

fn plain(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_method<T: DeserializeOwned>(value: toml::Value, label: &str) -> Result<T, CliError> {
    // bare names become tables with only the tag
    let value = match value {
        toml::Value::String(s) => {
            let mut t = toml::map::Map::new();
            t.insert("method".into(), toml::Value::String(s));
            toml::Value::Table(t)
        }
        v => v,
    };
    value.try_into().map_err(|e| CliError::Config(format!("method `{label}`: {e}")))
}

impl RawConfig {
    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let err = |m: &str| Err(CliError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return err("seed list is empty");
        }
        if self.grid.is_empty() || self.grid.contains(&0) {
            return err("grid must be non-empty with positive entries");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return err("ci_level must lie in (0, 1)");
        }
        if self.methods.is_empty() {
            return err("method list is empty");
        }
        let family = self.family;
        let foreign = match family {
            Family::SafeltrSweep | Family::PrpoRobustness => self.opl.is_some() || self.ope.is_some() || self.rl.is_some(),
            Family::OplBandit => self.safeltr.is_some() || self.ope.is_some() || self.rl.is_some(),
            Family::OpeBandit => self.safeltr.is_some() || self.opl.is_some() || self.rl.is_some(),
            Family::RlChain => self.safeltr.is_some() || self.opl.is_some() || self.ope.is_some(),
        };
        if foreign {
            return Err(CliError::Config(format!("parameter section does not belong to family {}", family.name())));
        }
        let params = match family {
            Family::SafeltrSweep => Params::Safeltr(section(self.safeltr, "safeltr")?),
            Family::PrpoRobustness => {
                let explicit_model = self
                    .safeltr
                    .as_ref()
                    .and_then(|s| s.get("world"))
                    .and_then(|w| w.get("click_model"))
                    .is_some();
                let mut p: SafeltrParams = section(self.safeltr, "safeltr")?;
                if !explicit_model {
                    p.world.click_model = ClickModelKind::Adversarial;
                }
                Params::Safeltr(p)
            }
            Family::OplBandit => Params::Opl(section(self.opl, "opl")?),
            Family::OpeBandit => Params::Ope(section(self.ope, "ope")?),
            Family::RlChain => Params::Rl(section(self.rl, "rl")?),
        };

        let mut methods = Vec::with_capacity(self.methods.len());
        for value in &self.methods {
            let (label, value) = label_of(value)?;
            let spec = match family {
                Family::SafeltrSweep | Family::PrpoRobustness => MethodSpec::Safeltr(parse_method(value, &label)?),
                Family::OplBandit => MethodSpec::Opl(parse_method(value, &label)?),
                Family::OpeBandit => {
                    let name = match &value {
                        toml::Value::String(s) => s.clone(),
                        toml::Value::Table(t) => t.get("method").and_then(|m| m.as_str()).unwrap_or_default().to_string(),
                        _ => String::new(),
                    };
                    let est = OpeEstimator::ALL
                        .into_iter()
                        .find(|e| e.name() == name)
                        .ok_or_else(|| CliError::Config(format!("unknown method `{name}`")))?;
                    MethodSpec::Ope(est)
                }
                Family::RlChain => MethodSpec::Rl(parse_method(value, &label)?),
            };
            if methods.iter().any(|m: &Method| m.label == label) {
                return Err(CliError::Config(format!("duplicate method label `{label}`")));
            }
            methods.push(Method { label, spec });
        }
        check_methods(&methods, &params)?;
        Ok(ExperimentConfig {
            family,
            name: self.name.unwrap_or_else(|| family.name().to_string()),
            seeds: self.seeds,
            grid: self.grid,
            output_dir: self.output_dir,
            ci_level: self.ci_level,
            methods,
            params,
        })
    }
}

/// Rejects combinations the trainers would only refuse mid-run.
fn check_methods(methods: &[Method], params: &Params) -> Result<(), CliError> {
    for m in methods {
        let bad = match (&m.spec, params) {
            (MethodSpec::Opl(OplMethod::Snips), Params::Opl(p)) => {
                matches!(p.train.schedule, BatchSchedule::MiniBatch { .. }).then_some("SNIPS needs a full-batch schedule")
            }
            (MethodSpec::Rl(RlMethod::Rloo { k } | RlMethod::Loop { k }), _) if *k < 2 => Some("leave-one-out methods need k >= 2"),
            (MethodSpec::Safeltr(SafeLtrMethod::ExposureCrm { delta } | SafeLtrMethod::SafeDr { delta }), _) => {
                (!(*delta > 0.0 && *delta < 1.0)).then_some("delta must lie in (0, 1)")
            }
            _ => None,
        };
        if let Some(msg) = bad {
            return Err(CliError::Config(format!("method `{}`: {msg}", m.label)));
        }
    }
    Ok(())
}
