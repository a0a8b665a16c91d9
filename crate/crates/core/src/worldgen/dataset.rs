use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, Rng};
use crate::taskheads::OptionSet;
use crate::worldgen::bias::{plant_bias, BiasSpec};
use crate::worldgen::question::{
    generate_question, question_for_event, QuestionSpec, Slot, Template,
};
use crate::worldgen::render::{Renderer, VideoFeature};
use crate::worldgen::scene::{generate_scene, Event, Scene, MAX_SCENE_EVENTS};
use crate::worldgen::vocab::{Relation, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    TestConflict,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::TestConflict => "test_conflict",
        }
    }
}

/// One video-question-answer triple with its multi-choice options.
#[derive(Clone, Debug, PartialEq)]
pub struct QAInstance {
    pub id: u64,
    pub split: Split,
    pub scene: Scene,
    pub video: VideoFeature,
    pub question: QuestionSpec,
    /// Answer action token.
    pub answer: String,
    pub options: OptionSet,
    /// Whether the scene was rewritten by the planted bias.
    pub biased: bool,
}

/// JSON-lines form of a [`QAInstance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u64,
    pub split: Split,
    pub template: Template,
    pub slots: BTreeMap<Slot, String>,
    pub is_general: bool,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub options: Option<Vec<String>>,
    pub biased: bool,
    pub video: Vec<f64>,
    pub scene: Vec<Event>,
}

impl From<&QAInstance> for InstanceRecord {
    fn from(inst: &QAInstance) -> Self {
        InstanceRecord {
            id: inst.id,
            split: inst.split,
            template: inst.question.template,
            slots: inst.question.slots.clone(),
            is_general: inst.question.is_general,
            answer: inst.answer.clone(),
            options: Some(inst.options.options.clone()),
            biased: inst.biased,
            video: inst.video.values.clone(),
            scene: inst.scene.events.clone(),
        }
    }
}

impl InstanceRecord {
    pub fn into_instance(self, noise_sigma: f64) -> Result<QAInstance> {
        let question = QuestionSpec::new(self.template, self.slots);
        if question.is_general != self.is_general {
            return Err(Error::Generation(format!(
                "record {} has an inconsistent is_general flag",
                self.id
            )));
        }
        let options = self.options.unwrap_or_else(|| vec![self.answer.clone()]);
        let correct = options
            .iter()
            .position(|o| *o == self.answer)
            .ok_or_else(|| Error::Generation(format!("record {} lacks its answer option", self.id)))?;
        Ok(QAInstance {
            id: self.id,
            split: self.split,
            scene: Scene {
                scene_id: self.id,
                events: self.scene,
            },
            video: VideoFeature {
                values: self.video,
                noise_sigma,
            },
            question,
            answer: self.answer,
            options: OptionSet::new(options, correct)?,
            biased: self.biased,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_conflict: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Options per multi-choice question, correct answer included.
    pub num_options: usize,
    pub video_dim: usize,
    pub noise_sigma: f64,
    pub featurizer_seed: u64,
    pub bias: BiasSpec,
    pub vocab: Vocab,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_train: 8000,
            n_test: 2000,
            n_conflict: 500,
            min_events: 1,
            max_events: 4,
            num_options: 5,
            video_dim: 64,
            noise_sigma: 0.1,
            featurizer_seed: 1,
            bias: BiasSpec::default(),
            vocab: Vocab::default(),
        }
    }
}

const CONFLICT_ATTEMPTS: u64 = 10_000;

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        self.bias.validate(&self.vocab)?;
        if self.min_events < 1 || self.min_events > self.max_events || self.max_events > MAX_SCENE_EVENTS
        {
            return Err(Error::Config(format!(
                "event range {}..={} must lie inside 1..={MAX_SCENE_EVENTS}",
                self.min_events, self.max_events
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        if self.n_conflict == 0 {
            return Err(Error::Config("test_conflict split would be empty".into()));
        }
        if self.num_options < 1 || self.num_options > self.vocab.actions.len() {
            return Err(Error::Config(format!(
                "num_options {} must lie in 1..={}",
                self.num_options,
                self.vocab.actions.len()
            )));
        }
        if self.vocab.actions.len() < 2 {
            return Err(Error::Config(
                "need at least two actions for a bias-conflict split".into(),
            ));
        }
        if self.bias.template.min_events() > self.max_events {
            return Err(Error::Config(format!(
                "bias template {:?} needs scenes of {} events",
                self.bias.template,
                self.bias.template.min_events()
            )));
        }
        if self.video_dim == 0 {
            return Err(Error::Config("video_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn renderer(&self) -> Renderer {
        Renderer {
            dim: self.video_dim,
            featurizer_seed: self.featurizer_seed,
            noise_sigma: self.noise_sigma,
            noise_seed: derive_seed(self.seed, "noise", 0),
        }
    }

    fn templates(&self) -> Vec<Template> {
        Template::ALL
            .into_iter()
            .filter(|t| t.min_events() <= self.max_events)
            .collect()
    }
}

/// The three splits plus the config that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<QAInstance>,
    pub test: Vec<QAInstance>,
    pub test_conflict: Vec<QAInstance>,
}

impl Dataset {
    pub fn vocab(&self) -> &Vocab {
        &self.config.vocab
    }

    pub fn split(&self, split: Split) -> &[QAInstance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::TestConflict => &self.test_conflict,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &QAInstance> {
        self.train.iter().chain(&self.test).chain(&self.test_conflict)
    }
}

/// Correct answer plus `n - 1` distinct distractor actions, shuffled.
pub fn sample_options(vocab: &Vocab, answer: &str, n: usize, rng: &mut Rng) -> Result<OptionSet> {
    let others: Vec<&String> = vocab.actions.iter().filter(|a| *a != answer).collect();
    if others.len() + 1 < n {
        return Err(Error::Config(format!("cannot draw {n} distinct options")));
    }
    let mut opts: Vec<String> = others
        .choose_multiple(rng, n - 1)
        .map(|s| s.to_string())
        .collect();
    opts.push(answer.to_string());
    opts.shuffle(rng);
    let correct = opts.iter().position(|o| o == answer).expect("just pushed");
    OptionSet::new(opts, correct)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    cfg: &DatasetConfig,
    renderer: &Renderer,
    id: u64,
    split: Split,
    mut scene: Scene,
    question: QuestionSpec,
    answer: String,
    rng: &mut Rng,
) -> Result<QAInstance> {
    scene.scene_id = id;
    let options = sample_options(&cfg.vocab, &answer, cfg.num_options, rng)?;
    Ok(QAInstance {
        id,
        split,
        video: renderer.render(&scene, id)?,
        scene,
        question,
        answer,
        options,
        biased: false,
    })
}

fn random_instance(cfg: &DatasetConfig, renderer: &Renderer, id: u64, split: Split) -> Result<QAInstance> {
    let mut rng = derived_rng(cfg.seed, split.as_str(), id);
    let template = *cfg.templates().choose(&mut rng).expect("some template fits");
    let lo = cfg.min_events.max(template.min_events());
    let k = rng.random_range(lo..=cfg.max_events);
    let scene = generate_scene(&cfg.vocab, k, rng.random())?;
    let (question, answer) = generate_question(&cfg.vocab, &scene, template, rng.random())?;
    assemble(cfg, renderer, id, split, scene, question, answer, &mut rng)
}

fn conflict_instance(cfg: &DatasetConfig, renderer: &Renderer, id: u64) -> Result<QAInstance> {
    let bias = &cfg.bias;
    let template = bias.template;
    let lo = cfg.min_events.max(template.min_events());
    for attempt in 0..CONFLICT_ATTEMPTS {
        let mut rng = derived_rng(derive_seed(cfg.seed, "conflict", id), "attempt", attempt);
        let k = rng.random_range(lo..=cfg.max_events);
        let scene = generate_scene(&cfg.vocab, k, rng.random())?;
        let targets: Vec<&Event> = scene
            .events
            .iter()
            .filter(|e| e.subject == bias.subject && e.action != bias.forced_action)
            .collect();
        let Some(event) = targets.choose(&mut rng).copied() else {
            continue;
        };
        let relation = if template == Template::Transition {
            let rels: Vec<Relation> = Relation::ALL
                .into_iter()
                .filter(|r| match r {
                    Relation::Before => event.position + 1 < scene.len(),
                    Relation::After => event.position > 0,
                })
                .collect();
            Some(*rels.choose(&mut rng).expect("two or more events"))
        } else {
            None
        };
        let allow_general = rng.random_bool(0.5);
        let question =
            question_for_event(&cfg.vocab, &scene, template, event, relation, allow_general)?;
        let answer = event.action.clone();
        return assemble(cfg, renderer, id, Split::TestConflict, scene, question, answer, &mut rng);
    }
    Err(Error::Config(format!(
        "could not generate a bias-conflict instance in {CONFLICT_ATTEMPTS} attempts"
    )))
}

/// Builds train (bias planted), test (unbiased) and test_conflict splits.
/// Ids are contiguous across splits: train, then test, then test_conflict.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let renderer = cfg.renderer();
    let n_train = cfg.n_train as u64;
    let n_test = cfg.n_test as u64;
    let n_conflict = cfg.n_conflict as u64;

    let train: Vec<QAInstance> = (0..n_train)
        .into_par_iter()
        .map(|id| random_instance(cfg, &renderer, id, Split::Train))
        .collect::<Result<_>>()?;
    let train = plant_bias(
        train,
        &cfg.bias,
        &cfg.vocab,
        &renderer,
        derive_seed(cfg.seed, "plant", 0),
    )?;
    let test: Vec<QAInstance> = (n_train..n_train + n_test)
        .into_par_iter()
        .map(|id| random_instance(cfg, &renderer, id, Split::Test))
        .collect::<Result<_>>()?;
    let start = n_train + n_test;
    let test_conflict: Vec<QAInstance> = (start..start + n_conflict)
        .into_par_iter()
        .map(|id| conflict_instance(cfg, &renderer, id))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        train,
        test,
        test_conflict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::question::derive_answer;

    fn small() -> DatasetConfig {
        DatasetConfig {
            n_train: 600,
            n_test: 200,
            n_conflict: 50,
            ..Default::default()
        }
    }

    #[test]
    fn every_instance_is_consistent() {
        let ds = build_dataset(&small()).unwrap();
        let v = ds.vocab();
        for inst in ds.all() {
            inst.scene.validate(v).unwrap();
            inst.question.validate(v).unwrap();
            assert_eq!(derive_answer(v, &inst.scene, &inst.question).as_deref(), Some(inst.answer.as_str()));
            assert_eq!(inst.options.correct(), inst.answer);
            assert_eq!(inst.options.len(), 5);
            assert_eq!(inst.video.dim(), 64);
        }
    }

    #[test]
    fn bias_confined_to_train_and_conflict_split_is_pure() {
        let ds = build_dataset(&small()).unwrap();
        assert!(ds.test.iter().chain(&ds.test_conflict).all(|i| !i.biased));
        assert!(ds.train.iter().any(|i| i.biased));
        for inst in &ds.test_conflict {
            assert!(ds.config.bias.matches(ds.vocab(), inst));
            assert_ne!(inst.answer, ds.config.bias.forced_action);
        }
    }

    #[test]
    fn ids_are_unique_and_ordered() {
        let ds = build_dataset(&small()).unwrap();
        let ids: Vec<u64> = ds.all().map(|i| i.id).collect();
        assert!(ids.windows(2).all(|w| w[0] + 1 == w[1]));
    }

    #[test]
    fn empty_conflict_split_is_a_config_error() {
        let cfg = DatasetConfig {
            n_conflict: 0,
            ..small()
        };
        assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn record_round_trip() {
        let ds = build_dataset(&small()).unwrap();
        let inst = &ds.train[3];
        let rec = InstanceRecord::from(inst);
        let json = serde_json::to_string(&rec).unwrap();
        let back: InstanceRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_instance(0.1).unwrap(), *inst);
    }
}
