//! Training targets for both task types: "not given" option augmentation for
//! multi-choice questions and distance-carrying targets for open-ended ones.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::{DistanceModel, InterventionOutcome};
use crate::rng::Rng;
use crate::worldgen::dataset::{InstanceRecord, QAInstance};
use crate::worldgen::question::{derive_answer, QuestionSpec};
use crate::worldgen::vocab::{Vocab, NOT_GIVEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mcqa,
    #[default]
    Oeqa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mcqa => "mcqa",
            Task::Oeqa => "oeqa",
        }
    }
}

/// Candidate answers of a multi-choice question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSet {
    pub options: Vec<String>,
    /// Index of the supervised answer; equals `not_given_index` for intervened sets.
    pub correct_index: usize,
    pub not_given_index: Option<usize>,
}

impl OptionSet {
    pub fn new(options: Vec<String>, correct_index: usize) -> Result<Self> {
        let set = OptionSet {
            options,
            correct_index,
            not_given_index: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn correct(&self) -> &str {
        &self.options[self.correct_index]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.options.iter().any(|o| o == token)
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.is_empty() {
            return Err(Error::Options("option set is empty".into()));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if !seen.insert(o.as_str()) {
                return Err(Error::Options(format!("duplicate option {o:?}")));
            }
        }
        if self.correct_index >= self.options.len() {
            return Err(Error::Options(format!(
                "correct index {} out of range for {} options",
                self.correct_index,
                self.options.len()
            )));
        }
        let ng_pos = self.options.iter().position(|o| o == NOT_GIVEN);
        match (self.not_given_index, ng_pos) {
            (None, None) => Ok(()),
            (Some(i), Some(p)) if i == p && i + 1 == self.options.len() => Ok(()),
            _ => Err(Error::Options(
                "not-given option must be present exactly when indexed, and last".into(),
            )),
        }
    }
}

/// A′: the original options followed by "not given". Order and correct index
/// are preserved.
pub fn augment_options(options: &OptionSet) -> Result<OptionSet> {
    if options.contains(NOT_GIVEN) || options.not_given_index.is_some() {
        return Err(Error::Options("option set already offers \"not given\"".into()));
    }
    let mut out = options.options.clone();
    out.push(NOT_GIVEN.to_string());
    let ng = out.len() - 1;
    Ok(OptionSet {
        options: out,
        correct_index: options.correct_index,
        not_given_index: Some(ng),
    })
}

/// Knobs of the A″ construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervenedOptionsConfig {
    /// Leave the original correct answer out (and draw one more distractor).
    pub drop_original_correct: bool,
}

/// A″: N−1 distractors drawn from `global_pool`, the original correct answer,
/// then "not given" last; the target is "not given".
///
/// `exclude` names a token that must not be drawn as a distractor, typically
/// the answer the intervened question still has in the scene.
pub fn intervened_options(
    options: &OptionSet,
    global_pool: &[String],
    exclude: Option<&str>,
    cfg: &IntervenedOptionsConfig,
    rng: &mut Rng,
) -> Result<OptionSet> {
    let original = options.correct().to_string();
    if original == NOT_GIVEN {
        return Err(Error::Options("original answer cannot be \"not given\"".into()));
    }
    let n = options
        .options
        .iter()
        .filter(|o| o.as_str() != NOT_GIVEN)
        .count();
    let mut seen = HashSet::new();
    let candidates: Vec<&String> = global_pool
        .iter()
        .filter(|o| {
            o.as_str() != NOT_GIVEN
                && **o != original
                && Some(o.as_str()) != exclude
                && seen.insert(o.as_str())
        })
        .collect();
    let wanted = if cfg.drop_original_correct { n } else { n - 1 };
    if candidates.len() < wanted {
        return Err(Error::Options(format!(
            "option pool offers {} distractors, need {wanted}",
            candidates.len()
        )));
    }
    let mut out: Vec<String> = index::sample(rng, candidates.len(), wanted)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    if !cfg.drop_original_correct {
        out.push(original);
    }
    out.shuffle(rng);
    out.push(NOT_GIVEN.to_string());
    let ng = out.len() - 1;
    Ok(OptionSet {
        options: out,
        correct_index: ng,
        not_given_index: Some(ng),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTarget {
    pub task: Task,
    /// Option index (MCQA) or answer class (OEQA).
    pub answer_index: usize,
    pub d: f64,
    pub intervened: bool,
}

/// Question, options and target for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub question: QuestionSpec,
    pub options: Option<OptionSet>,
    pub target: TrainTarget,
}

/// Builds the training target for an instance, optionally intervened.
///
/// MCQA: unintervened or sub-threshold questions train on A′ with the original
/// answer; the rest on A″ with "not given". OEQA: the original answer class
/// with the distance d (0 when unintervened).
#[allow(clippy::too_many_arguments)]
pub fn build_target(
    task: Task,
    instance: &QAInstance,
    vocab: &Vocab,
    outcome: Option<&InterventionOutcome>,
    dm: &DistanceModel,
    option_pool: &[String],
    cfg: &IntervenedOptionsConfig,
    rng: &mut Rng,
) -> Result<PreparedExample> {
    let (question, d) = match outcome {
        Some(o) => (o.question.clone(), o.d),
        None => (instance.question.clone(), 0.0),
    };
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Options(format!("distance {d} outside [0, 1]")));
    }
    let intervened = outcome.is_some();
    match task {
        Task::Mcqa => {
            let (options, answer_index) = if intervened && dm.is_ignorance(d) {
                let still_valid = derive_answer(vocab, &instance.scene, &question);
                let set = intervened_options(
                    &instance.options,
                    option_pool,
                    still_valid.as_deref(),
                    cfg,
                    rng,
                )?;
                let target = set.not_given_index.expect("A'' has not-given");
                (set, target)
            } else {
                let set = augment_options(&instance.options)?;
                let target = set.correct_index;
                (set, target)
            };
            Ok(PreparedExample {
                question,
                options: Some(options),
                target: TrainTarget {
                    task,
                    answer_index,
                    d,
                    intervened,
                },
            })
        }
        Task::Oeqa => {
            let answer_index = vocab.action_index(&instance.answer).ok_or_else(|| {
                Error::Options(format!("answer {:?} is not an action", instance.answer))
            })?;
            Ok(PreparedExample {
                question,
                options: None,
                target: TrainTarget {
                    task,
                    answer_index,
                    d,
                    intervened,
                },
            })
        }
    }
}

/// Dataset record extended with the training target actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    #[serde(flatten)]
    pub instance: InstanceRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub options_augmented: Option<Vec<String>>,
    pub target_index: usize,
    pub d: f64,
    pub intervened: bool,
}

impl AugmentedRecord {
    pub fn new(instance: &QAInstance, prepared: &PreparedExample) -> Self {
        let mut record = InstanceRecord::from(instance);
        let q = &prepared.question;
        record.template = q.template;
        record.slots = q.slots.clone();
        record.is_general = q.is_general;
        AugmentedRecord {
            instance: record,
            options_augmented: prepared.options.as_ref().map(|o| o.options.clone()),
            target_index: prepared.target.answer_index,
            d: prepared.target.d,
            intervened: prepared.target.intervened,
        }
    }
}
