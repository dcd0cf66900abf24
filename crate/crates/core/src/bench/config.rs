//! Declarative experiment configuration (JSON or TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DataFormat, SynthConfig};
use crate::error::{Error, Result};
use crate::fedsim::{BudgetDistribution, TrainingSchedule};
use crate::nn::{ArchSpec, BnMode};
use crate::robustness::AttackConfig;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SPLITMIX_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
    },
    File {
        format: DataFormat,
        train: PathBuf,
        #[serde(default)]
        train_labels: Option<PathBuf>,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        classes: Option<usize>,
        /// Held out as test data when no test file is given.
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic { synth: SynthConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    ClassNoniid,
    #[default]
    FeatureNoniid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    pub clients: usize,
    pub classes_per_client: usize,
    /// Clients per domain; spread evenly over domains when unset.
    pub clients_per_domain: Option<Vec<usize>>,
    pub val_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            kind: PartitionKind::FeatureNoniid,
            clients: 16,
            classes_per_client: 3,
            clients_per_domain: None,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// `desk_cnn`, `digits_cnn` or `mlp`; ignored when `custom` is set.
    pub preset: String,
    /// Hidden widths of the `mlp` preset.
    pub hidden: Vec<usize>,
    pub custom: Option<ArchSpec>,
    pub bn_mode: BnMode,
    pub rescale_init: bool,
    pub rescale_layer: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            preset: "desk_cnn".into(),
            hidden: vec![64, 64],
            custom: None,
            bn_mode: BnMode::BatchAverage,
            rescale_init: true,
            rescale_layer: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitMixConfig {
    pub enabled: bool,
    /// Atom width; `1/r` must be an integer.
    pub r: f64,
    pub sort: bool,
    pub post_bn_passes: usize,
}

impl Default for SplitMixConfig {
    fn default() -> Self {
        SplitMixConfig { enabled: true, r: 0.25, sort: false, post_bn_passes: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub lambda_grid: Vec<f64>,
    pub lambda_n: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        let a = AttackConfig::default();
        RobustnessConfig {
            enabled: false,
            epsilon: a.epsilon,
            steps: a.steps,
            step_size: a.step_size,
            random_start: a.random_start,
            lambda_grid: vec![0.0, 0.2, 0.5, 0.8, 1.0],
            lambda_n: 0.5,
        }
    }
}

impl RobustnessConfig {
    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            steps: self.steps,
            step_size: self.step_size,
            random_start: self.random_start,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    None,
    FedavgIndividual,
    Sheterofl,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::None => "none",
            BaselineKind::FedavgIndividual => "fedavg_individual",
            BaselineKind::Sheterofl => "sheterofl",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Widths for the baseline; all multiples of `r` when unset.
    pub widths: Option<Vec<f64>>,
    /// FedAvg: train widths beyond some client's budget anyway.
    pub upper_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partitioner: PartitionConfig,
    pub architecture: ArchitectureConfig,
    pub splitmix: SplitMixConfig,
    pub budgets: BudgetDistribution,
    pub schedule: TrainingSchedule,
    pub robustness: RobustnessConfig,
    pub baseline: BaselineConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Feed finished client tasks to aggregation in a shuffled order.
    pub completion_shuffle: bool,
    /// `key=value` overrides applied on top of the file, in order.
    pub overrides: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            partitioner: PartitionConfig::default(),
            architecture: ArchitectureConfig::default(),
            splitmix: SplitMixConfig::default(),
            budgets: BudgetDistribution::default(),
            schedule: TrainingSchedule::default(),
            robustness: RobustnessConfig::default(),
            baseline: BaselineConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("results"),
            completion_shuffle: false,
            overrides: Vec::new(),
        }
    }
}

/// Parse an override value: JSON when it parses, a plain string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Set a dotted `key` in a JSON object tree, creating objects as needed.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let spec = spec.trim_start_matches("--");
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key {key:?} has an empty segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_value(raw));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn from_value(v: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}

impl ExperimentConfig {
    /// Parse JSON or TOML text (`toml` selects TOML), then apply overrides.
    pub fn parse(text: &str, toml_syntax: bool, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut v: Value = if toml_syntax {
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML: {e}")))?
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("JSON: {e}")))?
        };
        if !v.is_object() {
            return Err(Error::Config("config root must be a table".into()));
        }
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let mut cfg = from_value(v)?;
        cfg.overrides.extend(overrides.iter().cloned());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let toml_syntax = path.extension().is_some_and(|e| e == "toml");
        let mut cfg = ExperimentConfig::parse(&text, toml_syntax, overrides)?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    /// Number of bases `M = 1/r`.
    pub fn m(&self) -> Result<usize> {
        let r = self.splitmix.r;
        let m = (1.0 / r).round();
        if !(r > 0.0 && r <= 1.0) || (m * r - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("splitmix.r = {r}: 1/r must be an integer")));
        }
        Ok(m as usize)
    }

    pub fn arch(&self, input: &[usize], classes: usize) -> Result<ArchSpec> {
        let a = &self.architecture;
        let mut spec = match &a.custom {
            Some(s) => s.clone(),
            None if a.preset == "mlp" => ArchSpec::mlp(input.iter().product(), &a.hidden, classes),
            None => {
                let side = *input.last().unwrap_or(&0);
                ArchSpec::preset(&a.preset, side, classes)?
            }
        };
        if spec.input != input || spec.classes != classes {
            return Err(Error::Config(format!(
                "architecture expects input {:?} with {} classes, data has {input:?} with {classes}",
                spec.input, spec.classes
            )));
        }
        spec.bn_mode = a.bn_mode;
        spec.rescale_init = a.rescale_init;
        spec.rescale_layer = a.rescale_layer;
        spec.dual_bn = self.robustness.enabled;
        Ok(spec)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let m = self.m()?;
        let p = &self.partitioner;
        if p.clients == 0 {
            return Err(Error::Config("partitioner.clients must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&p.val_fraction) {
            return Err(Error::Config("partitioner.val_fraction must be in [0, 1)".into()));
        }
        if let Some(cpd) = &p.clients_per_domain {
            if cpd.iter().sum::<usize>() != p.clients {
                return Err(Error::Config(format!(
                    "partitioner.clients_per_domain sums to {}, not clients = {}",
                    cpd.iter().sum::<usize>(),
                    p.clients
                )));
            }
        }
        self.budgets.validate()?;
        self.schedule.validate(p.clients)?;
        if let DatasetConfig::Synthetic { synth } = &self.dataset {
            synth.validate()?;
        }
        if self.robustness.enabled {
            self.robustness.attack().validate()?;
            if self.robustness.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(Error::Config("robustness.lambda_grid values must be in [0, 1]".into()));
            }
            if !(0.0..=1.0).contains(&self.robustness.lambda_n) {
                return Err(Error::Config("robustness.lambda_n must be in [0, 1]".into()));
            }
            if self.baseline.kind == BaselineKind::Sheterofl {
                return Err(Error::Config("baseline sheterofl does not support robustness training".into()));
            }
        }
        if let Some(ws) = &self.baseline.widths {
            for &w in ws {
                crate::nn::Width::from_ratio(w, m).map_err(|e| Error::Config(format!("baseline.widths: {e}")))?;
            }
        }
        if !self.splitmix.enabled && self.baseline.kind == BaselineKind::None {
            return Err(Error::Config("nothing to run: splitmix disabled and no baseline".into()));
        }
        Ok(())
    }
}
