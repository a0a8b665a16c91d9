//! Accuracy, admission and abstention metrics over a split.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::{
    displace, perturb, semantic_distance, DistanceModel, InterventionKind, InterventionPolicy,
    QuestionPool,
};
use crate::nnet::forward::{argmax, forward_mcqa, forward_oeqa};
use crate::nnet::params::ModelParams;
use crate::rng::derived_rng;
use crate::taskheads::{augment_options, intervened_options, IntervenedOptionsConfig, OptionSet, Task};
use crate::worldgen::dataset::{Dataset, QAInstance};
use crate::worldgen::question::{derive_answer, QuestionSpec};
use crate::worldgen::vocab::{Vocab, NOT_GIVEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// OEQA admits when p_i exceeds this.
    pub admission_threshold: f64,
    pub include_not_given_in_clean_test: bool,
    pub kinds: Vec<InterventionKind>,
    /// Seeds test-time interventions.
    pub seed: u64,
    pub policy: InterventionPolicy,
    pub distance: DistanceModel,
    pub options: IntervenedOptionsConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            admission_threshold: 0.5,
            include_not_given_in_clean_test: true,
            kinds: vec![InterventionKind::Displacement, InterventionKind::Perturbation],
            seed: 0,
            policy: InterventionPolicy::default(),
            distance: DistanceModel::default(),
            options: IntervenedOptionsConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.admission_threshold > 0.0 && self.admission_threshold < 1.0) {
            return Err(Error::Config("admission threshold must lie in (0, 1)".into()));
        }
        if self.kinds.contains(&InterventionKind::None) {
            return Err(Error::Config("\"none\" is not a test-time intervention".into()));
        }
        self.policy.validate()?;
        self.distance.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OeqaPrediction {
    pub answer: usize,
    pub p_ignorance: f64,
}

/// Anything that answers questions about an instance's video.
pub trait Predictor: Sync {
    fn predict_oeqa(&self, inst: &QAInstance, q: &QuestionSpec) -> Result<OeqaPrediction>;
    fn predict_mcqa(&self, inst: &QAInstance, q: &QuestionSpec, options: &OptionSet) -> Result<usize>;
}

impl Predictor for ModelParams {
    fn predict_oeqa(&self, inst: &QAInstance, q: &QuestionSpec) -> Result<OeqaPrediction> {
        let out = forward_oeqa(&inst.video, q, self)?;
        Ok(OeqaPrediction {
            answer: argmax(&out.p_answers),
            p_ignorance: out.p_ignorance,
        })
    }

    fn predict_mcqa(&self, inst: &QAInstance, q: &QuestionSpec, options: &OptionSet) -> Result<usize> {
        Ok(argmax(&forward_mcqa(&inst.video, q, options, self)?.scores))
    }
}

/// Reads answers straight off the scene; abstains when there is none.
pub struct OracleModel {
    pub vocab: Vocab,
}

impl Predictor for OracleModel {
    fn predict_oeqa(&self, inst: &QAInstance, q: &QuestionSpec) -> Result<OeqaPrediction> {
        Ok(match derive_answer(&self.vocab, &inst.scene, q).and_then(|a| self.vocab.action_index(&a)) {
            Some(answer) => OeqaPrediction { answer, p_ignorance: 0.0 },
            None => OeqaPrediction { answer: 0, p_ignorance: 1.0 },
        })
    }

    fn predict_mcqa(&self, inst: &QAInstance, q: &QuestionSpec, options: &OptionSet) -> Result<usize> {
        let answer = derive_answer(&self.vocab, &inst.scene, q);
        let hit = answer.and_then(|a| options.options.iter().position(|o| *o == a));
        hit.or(options.not_given_index)
            .ok_or_else(|| Error::Eval("oracle found no answer and no \"not given\" option".into()))
    }
}

/// Guesses uniformly, seeded per instance.
pub struct UniformModel {
    pub num_classes: usize,
    pub seed: u64,
}

impl Predictor for UniformModel {
    fn predict_oeqa(&self, inst: &QAInstance, _q: &QuestionSpec) -> Result<OeqaPrediction> {
        let mut rng = derived_rng(self.seed, "uniform", inst.id);
        Ok(OeqaPrediction {
            answer: rng.random_range(0..self.num_classes),
            p_ignorance: rng.random(),
        })
    }

    fn predict_mcqa(&self, inst: &QAInstance, _q: &QuestionSpec, options: &OptionSet) -> Result<usize> {
        let mut rng = derived_rng(self.seed, "uniform", inst.id);
        Ok(rng.random_range(0..options.len()))
    }
}

fn non_empty(split: &[QAInstance]) -> Result<()> {
    if split.is_empty() {
        Err(Error::Eval("cannot evaluate on an empty split".into()))
    } else {
        Ok(())
    }
}

fn rate(hits: Vec<bool>) -> f64 {
    hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
}

fn clean_options(inst: &QAInstance, cfg: &EvalConfig) -> Result<OptionSet> {
    if cfg.include_not_given_in_clean_test {
        augment_options(&inst.options)
    } else {
        Ok(inst.options.clone())
    }
}

/// Predicted answer token for each clean question.
pub fn clean_predictions<P: Predictor + ?Sized>(
    model: &P,
    split: &[QAInstance],
    task: Task,
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<Vec<String>> {
    non_empty(split)?;
    split
        .par_iter()
        .map(|inst| match task {
            Task::Oeqa => {
                let p = model.predict_oeqa(inst, &inst.question)?;
                vocab
                    .actions
                    .get(p.answer)
                    .cloned()
                    .ok_or_else(|| Error::Eval(format!("answer class {} out of range", p.answer)))
            }
            Task::Mcqa => {
                let options = clean_options(inst, cfg)?;
                let i = model.predict_mcqa(inst, &inst.question, &options)?;
                options
                    .options
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Eval(format!("option index {i} out of range")))
            }
        })
        .collect()
}

/// Fraction of clean questions answered correctly. The OEQA ignorance logit
/// is ignored.
pub fn clean_accuracy<P: Predictor + ?Sized>(
    model: &P,
    split: &[QAInstance],
    task: Task,
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<f64> {
    let preds = clean_predictions(model, split, task, vocab, cfg)?;
    Ok(rate(split.iter().zip(&preds).map(|(i, p)| *p == i.answer).collect()))
}

/// Fraction of questions answered with `token`.
pub fn answer_rate<P: Predictor + ?Sized>(
    model: &P,
    split: &[QAInstance],
    task: Task,
    vocab: &Vocab,
    cfg: &EvalConfig,
    token: &str,
) -> Result<f64> {
    let preds = clean_predictions(model, split, task, vocab, cfg)?;
    Ok(rate(preds.iter().map(|p| p == token).collect()))
}

/// Rate of "not given" picks on clean multi-choice questions.
pub fn unknown_rate<P: Predictor + ?Sized>(
    model: &P,
    split: &[QAInstance],
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<f64> {
    if !cfg.include_not_given_in_clean_test {
        return Err(Error::Eval("unknown rate needs \"not given\" among the clean options".into()));
    }
    answer_rate(model, split, Task::Mcqa, vocab, cfg, NOT_GIVEN)
}

const TEST_INTERVENTION_TRIES: usize = 200;

/// Test-time intervention of the given kind, redrawn until d ≥ τ.
pub fn test_intervention(
    inst: &QAInstance,
    kind: InterventionKind,
    pool: &QuestionPool,
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<(QuestionSpec, f64)> {
    let mut rng = derived_rng(cfg.seed, kind.as_str(), inst.id);
    for _ in 0..TEST_INTERVENTION_TRIES {
        let (q, _) = match kind {
            InterventionKind::Displacement => displace(&inst.question, pool, &mut rng)?,
            InterventionKind::Perturbation => perturb(&inst.question, vocab, &cfg.policy, &mut rng)?,
            InterventionKind::None => return Err(Error::Eval("no intervention requested".into())),
        };
        let d = semantic_distance(&inst.question, &q, vocab, &cfg.distance);
        if cfg.distance.is_ignorance(d) {
            return Ok((q, d));
        }
    }
    Err(Error::Eval(format!("no above-threshold {} for instance {}", kind.as_str(), inst.id)))
}

/// Fraction of intervened test questions on which the model admits ignorance.
pub fn admission_accuracy<P: Predictor + ?Sized>(
    model: &P,
    split: &[QAInstance],
    kind: InterventionKind,
    task: Task,
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<f64> {
    non_empty(split)?;
    let pool = QuestionPool::new(split.iter().map(|i| (i.id, i.question.clone())).collect());
    let hits = split
        .par_iter()
        .map(|inst| {
            let (q, _) = test_intervention(inst, kind, &pool, vocab, cfg)?;
            match task {
                Task::Oeqa => Ok(model.predict_oeqa(inst, &q)?.p_ignorance > cfg.admission_threshold),
                Task::Mcqa => {
                    let mut rng = derived_rng(cfg.seed, "options", inst.id);
                    let still_valid = derive_answer(vocab, &inst.scene, &q);
                    let set = intervened_options(
                        &inst.options,
                        &vocab.actions,
                        still_valid.as_deref(),
                        &cfg.options,
                        &mut rng,
                    )?;
                    Ok(Some(model.predict_mcqa(inst, &q, &set)?) == set.not_given_index)
                }
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(rate(hits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub clean_accuracy: f64,
    pub conflict_accuracy: Option<f64>,
    /// Conflict questions answered with the planted shortcut answer.
    pub shortcut_rate: Option<f64>,
    pub admission_accuracy: BTreeMap<String, f64>,
    pub unknown_rate: Option<f64>,
    pub n_test: usize,
    pub n_conflict: usize,
}

impl EvalReport {
    pub fn rates(&self) -> Vec<f64> {
        let mut out = vec![self.clean_accuracy];
        out.extend(self.conflict_accuracy);
        out.extend(self.shortcut_rate);
        out.extend(self.admission_accuracy.values().copied());
        out.extend(self.unknown_rate);
        out
    }
}

pub fn evaluate<P: Predictor + ?Sized>(model: &P, ds: &Dataset, task: Task, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let vocab = ds.vocab();
    let clean = clean_accuracy(model, &ds.test, task, vocab, cfg)?;
    let (conflict_accuracy, shortcut_rate) = if ds.test_conflict.is_empty() {
        (None, None)
    } else {
        let preds = clean_predictions(model, &ds.test_conflict, task, vocab, cfg)?;
        let acc = rate(ds.test_conflict.iter().zip(&preds).map(|(i, p)| *p == i.answer).collect());
        let forced = &ds.config.bias.forced_action;
        let short = rate(preds.iter().map(|p| p == forced).collect());
        (Some(acc), Some(short))
    };
    let mut admission = BTreeMap::new();
    for &kind in &cfg.kinds {
        admission.insert(
            kind.as_str().to_string(),
            admission_accuracy(model, &ds.test, kind, task, vocab, cfg)?,
        );
    }
    let unknown = if task == Task::Mcqa && cfg.include_not_given_in_clean_test {
        Some(unknown_rate(model, &ds.test, vocab, cfg)?)
    } else {
        None
    };
    Ok(EvalReport {
        task,
        clean_accuracy: clean,
        conflict_accuracy,
        shortcut_rate,
        admission_accuracy: admission,
        unknown_rate: unknown,
        n_test: ds.test.len(),
        n_conflict: ds.test_conflict.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::params::ModelConfig;
    use crate::worldgen::dataset::{build_dataset, DatasetConfig};

    fn ds() -> Dataset {
        build_dataset(&DatasetConfig {
            n_train: 50,
            n_test: 400,
            n_conflict: 50,
            video_dim: 16,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_is_perfect() {
        let ds = ds();
        let oracle = OracleModel { vocab: ds.vocab().clone() };
        let cfg = EvalConfig::default();
        for task in [Task::Oeqa, Task::Mcqa] {
            let r = evaluate(&oracle, &ds, task, &cfg).unwrap();
            assert_eq!(r.clean_accuracy, 1.0);
            assert_eq!(r.conflict_accuracy, Some(1.0));
            assert_eq!(r.shortcut_rate, Some(0.0));
        }
        assert_eq!(unknown_rate(&oracle, &ds.test, ds.vocab(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn zero_model_never_admits() {
        let ds = ds();
        let zero = ModelParams::zeros(ModelConfig::for_vocab(ds.vocab(), 16, 4, 8, 0.1, 0)).unwrap();
        let cfg = EvalConfig::default();
        for kind in [InterventionKind::Displacement, InterventionKind::Perturbation] {
            let r = admission_accuracy(&zero, &ds.test, kind, Task::Oeqa, ds.vocab(), &cfg).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let ds = ds();
        let oracle = OracleModel { vocab: ds.vocab().clone() };
        assert!(clean_accuracy(&oracle, &[], Task::Oeqa, ds.vocab(), &EvalConfig::default()).is_err());
    }

    #[test]
    fn unknown_rate_needs_not_given() {
        let ds = ds();
        let oracle = OracleModel { vocab: ds.vocab().clone() };
        let cfg = EvalConfig {
            include_not_given_in_clean_test: false,
            ..Default::default()
        };
        assert!(unknown_rate(&oracle, &ds.test, ds.vocab(), &cfg).is_err());
    }

    #[test]
    fn test_perturbations_clear_the_threshold() {
        let ds = ds();
        let cfg = EvalConfig::default();
        let pool = QuestionPool::new(ds.test.iter().map(|i| (i.id, i.question.clone())).collect());
        for inst in &ds.test {
            for kind in [InterventionKind::Displacement, InterventionKind::Perturbation] {
                let (_, d) = test_intervention(inst, kind, &pool, ds.vocab(), &cfg).unwrap();
                assert!(d >= cfg.distance.threshold);
            }
        }
    }

    #[test]
    fn oracle_admits_displacements_it_cannot_answer() {
        let ds = ds();
        let oracle = OracleModel { vocab: ds.vocab().clone() };
        let r = admission_accuracy(
            &oracle,
            &ds.test,
            InterventionKind::Displacement,
            Task::Mcqa,
            ds.vocab(),
            &EvalConfig::default(),
        )
        .unwrap();
        assert!(r > 0.5, "{r}");
    }
}
