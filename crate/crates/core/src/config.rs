//! Experiment configuration: one TOML file with nested sections and
//! `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::ScheduleKind;
use crate::error::{Error, Result};
use crate::eval::metrics::EvalConfig;
use crate::intervene::{DistanceModel, InterventionKind, InterventionPolicy};
use crate::nnet::params::ModelConfig;
use crate::rng::derive_seed;
use crate::taskheads::{IntervenedOptionsConfig, Task};
use crate::trainer::{BaselineMode, LrDecay, TrainConfig};
use crate::worldgen::dataset::DatasetConfig;
use crate::worldgen::io::sha256_hex;
use crate::worldgen::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            embed_dim: 16,
            hidden_dim: 128,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    #[default]
    Quadratic,
    Linear,
    Exponential,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSettings {
    pub kind: ScheduleName,
    pub p_r: f64,
    pub lambda: f64,
    pub fixed_p: f64,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        ScheduleSettings {
            kind: ScheduleName::Quadratic,
            p_r: 0.3,
            lambda: 5.0,
            fixed_p: 0.25,
        }
    }
}

impl ScheduleSettings {
    pub fn to_kind(&self) -> ScheduleKind {
        match self.kind {
            ScheduleName::Quadratic => ScheduleKind::Quadratic { p_r: self.p_r },
            ScheduleName::Linear => ScheduleKind::Linear { p_r: self.p_r },
            ScheduleName::Exponential => ScheduleKind::Exponential {
                p_r: self.p_r,
                lambda: self.lambda,
            },
            ScheduleName::Fixed => ScheduleKind::Fixed { p: self.fixed_p },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: LrDecay,
    pub seed: u64,
    pub baseline_mode: BaselineMode,
    pub drop_original_correct: bool,
    pub log_interventions: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            task: t.task,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            seed: t.seed,
            baseline_mode: t.baseline_mode,
            drop_original_correct: false,
            log_interventions: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub admission_threshold: f64,
    pub include_not_given_in_clean_test: bool,
    pub kinds: Vec<InterventionKind>,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSettings {
            admission_threshold: e.admission_threshold,
            include_not_given_in_clean_test: e.include_not_given_in_clean_test,
            kinds: e.kinds,
            seed: e.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub seeds: Vec<u64>,
    pub p_r: Vec<f64>,
    pub displacement_ratio: Vec<f64>,
    /// Schedule labels: quadratic, linear, exponential or fixed:<p>.
    pub schedules: Vec<String>,
    pub modes: Vec<BaselineMode>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            seeds: vec![0, 1, 2],
            p_r: vec![0.1, 0.3, 0.5, 0.7],
            displacement_ratio: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            schedules: ["fixed:0.25", "fixed:0.5", "fixed:0.75", "linear", "exponential", "quadratic"]
                .map(String::from)
                .to_vec(),
            modes: BaselineMode::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSettings,
    pub schedule: ScheduleSettings,
    pub policy: InterventionPolicy,
    pub distance: DistanceModel,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub sweep: SweepSettings,
}

/// Parses a schedule label of the sweep grid against base settings.
pub fn parse_schedule_label(label: &str, base: &ScheduleSettings) -> Result<ScheduleSettings> {
    let mut s = base.clone();
    match label.split_once(':') {
        Some(("fixed", p)) => {
            s.kind = ScheduleName::Fixed;
            s.fixed_p = p
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed probability in {label:?}")))?;
        }
        None => {
            s.kind = match label {
                "quadratic" => ScheduleName::Quadratic,
                "linear" => ScheduleName::Linear,
                "exponential" => ScheduleName::Exponential,
                "fixed" => ScheduleName::Fixed,
                _ => return Err(Error::Config(format!("unknown schedule {label:?}"))),
            }
        }
        _ => return Err(Error::Config(format!("unknown schedule {label:?}"))),
    }
    Ok(s)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config not found: {}", path.display())));
        }
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Applies one `section.key=value` override; the value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("bad override key {path:?}")));
        }
        let mut root = toml::Value::try_from(&*self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        let mut node = &mut root;
        for key in &keys[..keys.len() - 1] {
            node = node
                .get_mut(*key)
                .filter(|v| v.is_table())
                .ok_or_else(|| Error::Config(format!("unknown config section in {path:?}")))?;
        }
        let table = node.as_table_mut().expect("checked table");
        let last = keys[keys.len() - 1];
        if !table.contains_key(last) {
            return Err(Error::Config(format!("unknown config key {path:?}")));
        }
        table.insert(last.to_string(), parse_value(raw.trim()));
        let updated: ExperimentConfig = root
            .try_into()
            .map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.model.init_scale > 0.0 && self.model.init_scale.is_finite()) {
            return Err(Error::Config("init scale must be positive".into()));
        }
        self.train_config(self.train.seed).validate()?;
        self.eval_config().validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            task: self.train.task,
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            lr_decay: self.train.lr_decay,
            schedule: self.schedule.to_kind(),
            policy: self.policy.clone(),
            distance: self.distance.clone(),
            options: IntervenedOptionsConfig {
                drop_original_correct: self.train.drop_original_correct,
            },
            seed,
            baseline_mode: self.train.baseline_mode,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            admission_threshold: self.eval.admission_threshold,
            include_not_given_in_clean_test: self.eval.include_not_given_in_clean_test,
            kinds: self.eval.kinds.clone(),
            seed: self.eval.seed,
            policy: self.policy.clone(),
            distance: self.distance.clone(),
            options: IntervenedOptionsConfig {
                drop_original_correct: self.train.drop_original_correct,
            },
        }
    }

    /// Model shape for `vocab`, initialized from a seed derived from the run seed.
    pub fn model_config(&self, vocab: &Vocab, run_seed: u64) -> ModelConfig {
        ModelConfig::for_vocab(
            vocab,
            self.dataset.video_dim,
            self.model.embed_dim,
            self.model.hidden_dim,
            self.model.init_scale,
            derive_seed(self.model.seed, "model", run_seed),
        )
    }

    /// Sets every seed that defines a run.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
