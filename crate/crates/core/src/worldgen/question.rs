use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::worldgen::scene::{Event, Scene};
use crate::worldgen::vocab::{Category, Relation, Vocab};

/// Question templates of the synthetic world.
///
/// * `Action`: "what does the [attribute] SUBJECT do COUNT times?"
/// * `Transition`: "what does the [attribute] SUBJECT do before/after REF_ACTION?"
/// * `Frame`: "what is the [attribute] SUBJECT doing?"
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Action,
    Transition,
    Frame,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Action, Template::Transition, Template::Frame];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn required_slots(self) -> &'static [Slot] {
        match self {
            Template::Action => &[Slot::Subject, Slot::Count],
            Template::Transition => &[Slot::Subject, Slot::Relation, Slot::RefAction],
            Template::Frame => &[Slot::Subject],
        }
    }

    pub fn min_events(self) -> usize {
        match self {
            Template::Transition => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Subject,
    Attribute,
    Count,
    Relation,
    RefAction,
}

impl Slot {
    pub fn category(self) -> Category {
        match self {
            Slot::Subject => Category::Subject,
            Slot::Attribute => Category::Attribute,
            Slot::Count => Category::Count,
            Slot::Relation => Category::Relation,
            Slot::RefAction => Category::Action,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Subject => "subject",
            Slot::Attribute => "attribute",
            Slot::Count => "count",
            Slot::Relation => "relation",
            Slot::RefAction => "ref_action",
        }
    }

    pub fn parse(name: &str) -> Option<Slot> {
        [
            Slot::Subject,
            Slot::Attribute,
            Slot::Count,
            Slot::Relation,
            Slot::RefAction,
        ]
        .into_iter()
        .find(|s| s.name() == name)
    }
}

/// A templated question: which template plus the tokens filling its slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub template: Template,
    pub slots: BTreeMap<Slot, String>,
    pub is_general: bool,
}

impl QuestionSpec {
    pub fn new(template: Template, slots: BTreeMap<Slot, String>) -> Self {
        let is_general = !slots.contains_key(&Slot::Attribute);
        QuestionSpec {
            template,
            slots,
            is_general,
        }
    }

    pub fn from_pairs(template: Template, pairs: &[(Slot, &str)]) -> Self {
        Self::new(
            template,
            pairs.iter().map(|(s, t)| (*s, t.to_string())).collect(),
        )
    }

    pub fn slot(&self, slot: Slot) -> Option<&str> {
        self.slots.get(&slot).map(String::as_str)
    }

    /// Checks the slot set against the template and the tokens against the vocab.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let required = self.template.required_slots();
        for slot in required {
            if !self.slots.contains_key(slot) {
                return Err(Error::Generation(format!(
                    "{:?} question lacks slot {}",
                    self.template,
                    slot.name()
                )));
            }
        }
        for (slot, token) in &self.slots {
            if *slot != Slot::Attribute && !required.contains(slot) {
                return Err(Error::Generation(format!(
                    "{:?} question has stray slot {}",
                    self.template,
                    slot.name()
                )));
            }
            if vocab.category_of(token) != Some(slot.category()) {
                return Err(Error::Generation(format!(
                    "token {token:?} does not fit slot {}",
                    slot.name()
                )));
            }
        }
        if self.is_general == self.slots.contains_key(&Slot::Attribute) {
            return Err(Error::Generation("is_general flag out of sync".into()));
        }
        Ok(())
    }

    /// Plain-text rendering of the question.
    pub fn text(&self) -> String {
        let mut who = String::from("the ");
        if let Some(attr) = self.slot(Slot::Attribute) {
            who.push_str(attr);
            who.push(' ');
        }
        who.push_str(self.slot(Slot::Subject).unwrap_or("someone"));
        match self.template {
            Template::Action => format!(
                "what does {who} do {} times?",
                self.slot(Slot::Count).unwrap_or("some")
            ),
            Template::Transition => format!(
                "what does {who} do {} {}?",
                self.slot(Slot::Relation).unwrap_or("around"),
                self.slot(Slot::RefAction).unwrap_or("something")
            ),
            Template::Frame => format!("what is {who} doing?"),
        }
    }
}

impl fmt::Display for QuestionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

fn neighbor<'a>(scene: &'a Scene, event: &Event, relation: Relation) -> Option<&'a Event> {
    // "X before R": R happens right after X. "X after R": R happens right before X.
    match relation {
        Relation::Before => scene.events.get(event.position + 1),
        Relation::After => event
            .position
            .checked_sub(1)
            .and_then(|p| scene.events.get(p)),
    }
}

fn event_matches(vocab: &Vocab, scene: &Scene, event: &Event, q: &QuestionSpec) -> bool {
    let Some(subject) = q.slot(Slot::Subject) else {
        return false;
    };
    if vocab.canonical(subject) != event.subject {
        return false;
    }
    if let Some(attr) = q.slot(Slot::Attribute) {
        if vocab.canonical(attr) != event.attribute {
            return false;
        }
    }
    match q.template {
        Template::Frame => true,
        Template::Action => q
            .slot(Slot::Count)
            .and_then(|c| c.parse::<u32>().ok())
            .is_some_and(|c| c == event.count),
        Template::Transition => {
            let rel = q.slot(Slot::Relation).and_then(Relation::parse);
            let reference = q.slot(Slot::RefAction);
            match (rel, reference) {
                (Some(rel), Some(reference)) => {
                    neighbor(scene, event, rel).is_some_and(|n| n.action == reference)
                }
                _ => false,
            }
        }
    }
}

/// Re-derives the answer of `q` from the scene, or `None` when the question
/// does not pick out exactly one event.
pub fn derive_answer(vocab: &Vocab, scene: &Scene, q: &QuestionSpec) -> Option<String> {
    referenced_event(vocab, scene, q).map(|i| scene.events[i].action.clone())
}

/// Index of the single event the question refers to, if there is exactly one.
pub fn referenced_event(vocab: &Vocab, scene: &Scene, q: &QuestionSpec) -> Option<usize> {
    let mut hits = scene
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| event_matches(vocab, scene, e, q));
    let (first, _) = hits.next()?;
    if hits.next().is_some() {
        return None;
    }
    Some(first)
}

/// Builds the question for a given target event. The attribute is dropped
/// (making the question general) only when `allow_general` is set and the
/// question still resolves uniquely without it.
pub fn question_for_event(
    vocab: &Vocab,
    scene: &Scene,
    template: Template,
    event: &Event,
    relation: Option<Relation>,
    allow_general: bool,
) -> Result<QuestionSpec> {
    let mut slots = BTreeMap::new();
    slots.insert(Slot::Subject, event.subject.clone());
    match template {
        Template::Frame => {}
        Template::Action => {
            slots.insert(Slot::Count, event.count.to_string());
        }
        Template::Transition => {
            let rel = relation
                .ok_or_else(|| Error::Generation("transition question needs a relation".into()))?;
            let n = neighbor(scene, event, rel).ok_or_else(|| {
                Error::Generation(format!(
                    "event at {} has no neighbor {}",
                    event.position,
                    rel.as_str()
                ))
            })?;
            slots.insert(Slot::Relation, rel.as_str().to_string());
            slots.insert(Slot::RefAction, n.action.clone());
        }
    }
    let general = QuestionSpec::new(template, slots.clone());
    if allow_general && derive_answer(vocab, scene, &general).as_deref() == Some(&event.action) {
        return Ok(general);
    }
    slots.insert(Slot::Attribute, event.attribute.clone());
    let q = QuestionSpec::new(template, slots);
    if derive_answer(vocab, scene, &q).as_deref() != Some(&event.action) {
        return Err(Error::Generation(format!(
            "question {q} is ambiguous in scene {}",
            scene.scene_id
        )));
    }
    Ok(q)
}

/// Samples a question of the given template about a random event of the
/// scene, returning it with its answer action.
pub fn generate_question(
    vocab: &Vocab,
    scene: &Scene,
    template: Template,
    rng_seed: u64,
) -> Result<(QuestionSpec, String)> {
    if scene.len() < template.min_events() {
        return Err(Error::Generation(format!(
            "{template:?} question needs at least {} events, scene {} has {}",
            template.min_events(),
            scene.scene_id,
            scene.len()
        )));
    }
    let mut rng = rng_from_seed(rng_seed);
    let event = scene.events.choose(&mut rng).expect("non-empty scene");
    let relation = if template == Template::Transition {
        let options: Vec<Relation> = Relation::ALL
            .into_iter()
            .filter(|r| neighbor(scene, event, *r).is_some())
            .collect();
        Some(*options.choose(&mut rng).expect("scene has two or more events"))
    } else {
        None
    };
    let allow_general = rng.random_bool(0.5);
    let q = question_for_event(vocab, scene, template, event, relation, allow_general)?;
    Ok((q, event.action.clone()))
}
