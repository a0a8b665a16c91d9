//! Per-example SGD with scheduled interventions, plus the naive baselines.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::curriculum::{should_intervene, Schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::intervene::{
    intervene, DistanceModel, InterventionLogRecord, InterventionPolicy, QuestionPool,
};
use crate::nnet::checkpoint::params_hash;
use crate::nnet::forward::{
    argmax, backward_mcqa, backward_oeqa, forward_mcqa, forward_oeqa,
};
use crate::nnet::loss::{mcqa_loss_and_grad, oeqa_loss_and_grad, OeqaObjective};
use crate::nnet::params::{ModelConfig, ModelParams, Tensors};
use crate::rng::{derived_rng, Rng};
use crate::taskheads::{build_target, IntervenedOptionsConfig, OptionSet, Task};
use crate::worldgen::dataset::{Dataset, QAInstance};
use crate::worldgen::io::content_hash;
use crate::worldgen::question::{QuestionSpec, Slot};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    Ai,
    /// No interventions, no "not given" option, answer cross-entropy only.
    Naive,
    RandomDrop,
    RandomSwitch,
}

impl BaselineMode {
    pub const ALL: [BaselineMode; 4] = [
        BaselineMode::Ai,
        BaselineMode::Naive,
        BaselineMode::RandomDrop,
        BaselineMode::RandomSwitch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Ai => "ai",
            BaselineMode::Naive => "naive",
            BaselineMode::RandomDrop => "random_drop",
            BaselineMode::RandomSwitch => "random_switch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    fn is_augmentation(self) -> bool {
        matches!(self, BaselineMode::RandomDrop | BaselineMode::RandomSwitch)
    }
}

/// Per-epoch learning-rate multiplier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    Constant,
    /// γ·(E−e+1)/E.
    Linear,
    /// γ·(1+cos(π(e−1)/E))/2.
    #[default]
    Cosine,
}

impl LrDecay {
    pub fn factor(self, e: usize, epochs: usize) -> f64 {
        let (e, n) = (e as f64, epochs as f64);
        match self {
            LrDecay::Constant => 1.0,
            LrDecay::Linear => (n - e + 1.0) / n,
            LrDecay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * (e - 1.0) / n).cos()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: LrDecay,
    pub schedule: ScheduleKind,
    pub policy: InterventionPolicy,
    pub distance: DistanceModel,
    pub options: IntervenedOptionsConfig,
    pub seed: u64,
    pub baseline_mode: BaselineMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Oeqa,
            epochs: 30,
            learning_rate: 0.05,
            lr_decay: LrDecay::Cosine,
            schedule: ScheduleKind::default(),
            policy: InterventionPolicy::default(),
            distance: DistanceModel::default(),
            options: IntervenedOptionsConfig::default(),
            seed: 0,
            baseline_mode: BaselineMode::Ai,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.policy.validate()?;
        self.distance.validate()?;
        self.effective_schedule().map(|_| ())
    }

    /// The schedule actually used; naive training never intervenes.
    pub fn effective_schedule(&self) -> Result<Schedule> {
        let kind = match self.baseline_mode {
            BaselineMode::Naive => ScheduleKind::Fixed { p: 0.0 },
            _ => self.schedule,
        };
        Schedule::new(kind, self.epochs)
    }

    fn objective(&self) -> OeqaObjective {
        match self.baseline_mode {
            BaselineMode::Ai => OeqaObjective::Combined,
            _ => OeqaObjective::AnswerOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub p_e: f64,
    /// Fraction of examples intervened on (or augmented) this epoch.
    pub realized_rate: f64,
    pub mean_loss: f64,
    /// Among examples with an ignorance target, the fraction the model
    /// admitted before its update.
    pub admission_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub dataset_hash: String,
    pub n_train: usize,
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint_hash: String,
}

/// Training output including the per-intervention audit log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub manifest: RunManifest,
    pub interventions: Vec<InterventionLogRecord>,
}

pub fn train(dataset: &Dataset, model: ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, RunManifest)> {
    let out = run(dataset, model, cfg, false)?;
    Ok((out.params, out.manifest))
}

/// Like [`train`], also returning every intervention applied.
pub fn train_logged(dataset: &Dataset, model: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(dataset, model, cfg, true)
}

/// Random drop / random switch baselines: the question is corrupted with
/// probability p(e) but keeps its original answer.
pub fn train_baseline_augmented(
    dataset: &Dataset,
    model: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, RunManifest)> {
    if !cfg.baseline_mode.is_augmentation() {
        return Err(Error::Config(format!(
            "baseline mode {} is not a naive augmentation",
            cfg.baseline_mode.as_str()
        )));
    }
    train(dataset, model, cfg)
}

/// Removes one uniformly chosen slot token.
pub fn random_drop(q: &QuestionSpec, rng: &mut Rng) -> QuestionSpec {
    let slots: Vec<Slot> = q.slots.keys().copied().collect();
    let Some(&slot) = slots.choose(rng) else {
        return q.clone();
    };
    let mut out = q.slots.clone();
    out.remove(&slot);
    QuestionSpec::new(q.template, out)
}

/// Exchanges the tokens of two distinct slots; single-slot questions are
/// returned unchanged.
pub fn random_switch(q: &QuestionSpec, rng: &mut Rng) -> QuestionSpec {
    let slots: Vec<Slot> = q.slots.keys().copied().collect();
    if slots.len() < 2 {
        return q.clone();
    }
    let pair: Vec<Slot> = slots.choose_multiple(rng, 2).copied().collect();
    let mut out = q.slots.clone();
    let a = out[&pair[0]].clone();
    let b = out[&pair[1]].clone();
    out.insert(pair[0], b);
    out.insert(pair[1], a);
    QuestionSpec {
        template: q.template,
        slots: out,
        is_general: q.is_general,
    }
}

struct Step {
    question: QuestionSpec,
    options: Option<OptionSet>,
    answer_index: usize,
    d: f64,
    changed: bool,
    ignorance: bool,
}

#[allow(clippy::too_many_arguments)]
fn prepare_step(
    inst: &QAInstance,
    dataset: &Dataset,
    cfg: &TrainConfig,
    pool: &QuestionPool,
    option_pool: &[String],
    p: f64,
    rng: &mut Rng,
    log: Option<&mut Vec<InterventionLogRecord>>,
) -> Result<Step> {
    let vocab = dataset.vocab();
    let fire = should_intervene(p, rng);
    match cfg.baseline_mode {
        BaselineMode::Ai => {
            let outcome = if fire {
                Some(intervene(&inst.question, pool, vocab, &cfg.policy, &cfg.distance, rng)?)
            } else {
                None
            };
            if let (Some(o), Some(log)) = (&outcome, log) {
                log.push(InterventionLogRecord::new(inst.id, &o.intervention, o.d));
            }
            let prepared = build_target(
                cfg.task,
                inst,
                vocab,
                outcome.as_ref(),
                &cfg.distance,
                option_pool,
                &cfg.options,
                rng,
            )?;
            let ignorance = prepared.target.intervened && cfg.distance.is_ignorance(prepared.target.d);
            Ok(Step {
                question: prepared.question,
                options: prepared.options,
                answer_index: prepared.target.answer_index,
                d: prepared.target.d,
                changed: prepared.target.intervened,
                ignorance,
            })
        }
        mode => {
            let question = match mode {
                BaselineMode::RandomDrop if fire => random_drop(&inst.question, rng),
                BaselineMode::RandomSwitch if fire => random_switch(&inst.question, rng),
                _ => inst.question.clone(),
            };
            let (options, answer_index) = match cfg.task {
                Task::Mcqa => (Some(inst.options.clone()), inst.options.correct_index),
                Task::Oeqa => {
                    let idx = vocab.action_index(&inst.answer).ok_or_else(|| {
                        Error::Options(format!("answer {:?} is not an action", inst.answer))
                    })?;
                    (None, idx)
                }
            };
            Ok(Step {
                question,
                options,
                answer_index,
                d: 0.0,
                changed: fire && mode != BaselineMode::Naive,
                ignorance: false,
            })
        }
    }
}

fn run(dataset: &Dataset, mut params: ModelParams, cfg: &TrainConfig, keep_log: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.effective_schedule()?;
    let train_set = &dataset.train;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let vocab = dataset.vocab();
    if params.config.num_classes != vocab.actions.len() || params.config.tokens != vocab.model_tokens() {
        return Err(Error::Model("model vocabulary does not match the dataset".into()));
    }
    let pool = QuestionPool::new(train_set.iter().map(|i| (i.id, i.question.clone())).collect());
    let option_pool = vocab.actions.clone();
    let objective = cfg.objective();
    let mut grads = Tensors::zeros(&params.config);
    let mut log = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for e in 1..=cfg.epochs {
        let p = schedule.prob(e)?;
        let lr = cfg.learning_rate * cfg.lr_decay.factor(e, cfg.epochs);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, "shuffle", e as u64));
        let mut rng = derived_rng(cfg.seed, "epoch", e as u64);
        let (mut loss_sum, mut changed, mut ign, mut admitted) = (0.0, 0usize, 0usize, 0usize);

        for &i in &order {
            let inst = &train_set[i];
            let step = prepare_step(
                inst,
                dataset,
                cfg,
                &pool,
                &option_pool,
                p,
                &mut rng,
                keep_log.then_some(&mut log),
            )?;
            grads.fill_zero();
            let loss = match &step.options {
                None => {
                    let out = forward_oeqa(&inst.video, &step.question, &params)?;
                    let (loss, dl) = oeqa_loss_and_grad(&out.cache.logits, step.answer_index, step.d, objective)?;
                    if step.ignorance && out.p_ignorance > 0.5 {
                        admitted += 1;
                    }
                    backward_oeqa(&params, &out.cache, &dl, &mut grads)?;
                    loss
                }
                Some(options) => {
                    let out = forward_mcqa(&inst.video, &step.question, options, &params)?;
                    let (loss, ds) = mcqa_loss_and_grad(&out.scores, step.answer_index)?;
                    if step.ignorance && Some(argmax(&out.scores)) == options.not_given_index {
                        admitted += 1;
                    }
                    backward_mcqa(&params, &out.cache, &ds, &mut grads)?;
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {e} on instance {}",
                    inst.id
                )));
            }
            loss_sum += loss;
            changed += step.changed as usize;
            ign += step.ignorance as usize;
            params.apply_sgd(&grads, lr);
        }
        let n = train_set.len() as f64;
        let mean_loss = loss_sum / n;
        if !mean_loss.is_finite() || !params.all_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {e}")));
        }
        epochs.push(EpochMetrics {
            epoch: e,
            p_e: p,
            realized_rate: changed as f64 / n,
            mean_loss,
            admission_rate: if ign == 0 { 0.0 } else { admitted as f64 / ign as f64 },
        });
    }

    let manifest = RunManifest {
        train: cfg.clone(),
        model: params.config.clone(),
        dataset_hash: content_hash(dataset)?,
        n_train: train_set.len(),
        epochs,
        checkpoint_hash: params_hash(&params)?,
    };
    Ok(TrainOutcome {
        params,
        manifest,
        interventions: log,
    })
}

pub const METRICS_HEADER: &str = "epoch,p_e,realized_rate,mean_loss,admission_rate";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            m.epoch, m.p_e, m.realized_rate, m.mean_loss, m.admission_rate
        );
    }
    s
}

pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(metrics)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::dataset::{build_dataset, DatasetConfig};

    fn small_dataset() -> Dataset {
        build_dataset(&DatasetConfig {
            n_train: 300,
            n_test: 50,
            n_conflict: 20,
            video_dim: 16,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_model(ds: &Dataset, seed: u64) -> ModelParams {
        ModelParams::init(ModelConfig::for_vocab(ds.vocab(), 16, 8, 16, 0.1, seed)).unwrap()
    }

    fn cfg(task: Task, mode: BaselineMode) -> TrainConfig {
        TrainConfig {
            task,
            epochs: 4,
            baseline_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_checkpoints() {
        let ds = small_dataset();
        let c = cfg(Task::Oeqa, BaselineMode::Ai);
        let (a, ma) = train(&ds, small_model(&ds, 1), &c).unwrap();
        let (b, mb) = train(&ds, small_model(&ds, 1), &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn quadratic_schedule_ends_without_interventions() {
        let ds = small_dataset();
        let (_, m) = train(&ds, small_model(&ds, 0), &cfg(Task::Oeqa, BaselineMode::Ai)).unwrap();
        let last = m.epochs.last().unwrap();
        assert_eq!(last.p_e, 0.0);
        assert_eq!(last.realized_rate, 0.0);
        assert!(m.epochs[0].realized_rate > 0.0);
        assert!(m.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }

    #[test]
    fn naive_mode_never_intervenes() {
        let ds = small_dataset();
        let c = TrainConfig {
            schedule: ScheduleKind::Fixed { p: 1.0 },
            ..cfg(Task::Mcqa, BaselineMode::Naive)
        };
        let out = train_logged(&ds, small_model(&ds, 0), &c).unwrap();
        assert!(out.interventions.is_empty());
        assert!(out.manifest.epochs.iter().all(|e| e.realized_rate == 0.0 && e.p_e == 0.0));
    }

    #[test]
    fn mcqa_ai_training_runs_and_logs() {
        let ds = small_dataset();
        let out = train_logged(&ds, small_model(&ds, 2), &cfg(Task::Mcqa, BaselineMode::Ai)).unwrap();
        assert!(!out.interventions.is_empty());
        assert!(out.manifest.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }

    #[test]
    fn augmentation_requires_augmentation_mode() {
        let ds = small_dataset();
        let c = cfg(Task::Oeqa, BaselineMode::Ai);
        assert!(train_baseline_augmented(&ds, small_model(&ds, 0), &c).is_err());
        let c = cfg(Task::Oeqa, BaselineMode::RandomDrop);
        let (_, m) = train_baseline_augmented(&ds, small_model(&ds, 0), &c).unwrap();
        assert!(m.epochs[0].realized_rate > 0.0);
    }

    #[test]
    fn random_drop_on_single_slot_leaves_template_only() {
        let q = QuestionSpec::from_pairs(crate::worldgen::Template::Action, &[(Slot::Subject, "dog")]);
        let mut rng = derived_rng(0, "t", 0);
        let d = random_drop(&q, &mut rng);
        assert!(d.slots.is_empty());
        assert_eq!(d.template, q.template);
    }

    #[test]
    fn random_switch_exchanges_two_slots() {
        let q = QuestionSpec::from_pairs(
            crate::worldgen::Template::Frame,
            &[(Slot::Subject, "dog"), (Slot::Attribute, "red")],
        );
        let mut rng = derived_rng(0, "t", 0);
        let s = random_switch(&q, &mut rng);
        assert_eq!(s.slot(Slot::Subject), Some("red"));
        assert_eq!(s.slot(Slot::Attribute), Some("dog"));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ds = small_dataset();
        let model = ModelParams::init(ModelConfig::for_vocab(ds.vocab(), 8, 8, 16, 0.1, 0)).unwrap();
        assert!(train(&ds, model, &cfg(Task::Oeqa, BaselineMode::Ai)).is_err());
    }

    #[test]
    fn metrics_csv_has_header_and_rows() {
        let m = vec![EpochMetrics {
            epoch: 1,
            p_e: 0.3,
            realized_rate: 0.25,
            mean_loss: 1.5,
            admission_rate: 0.0,
        }];
        let s = metrics_csv(&m);
        assert_eq!(s.lines().count(), 2);
        assert!(s.starts_with(METRICS_HEADER));
    }
}
