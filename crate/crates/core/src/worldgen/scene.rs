use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::worldgen::vocab::Vocab;

/// Upper bound on events per scene accepted by [`generate_scene`].
pub const MAX_SCENE_EVENTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub subject: String,
    pub attribute: String,
    pub action: String,
    pub count: u32,
    pub position: usize,
}

/// Symbolic stand-in for a video: an ordered timeline of events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub events: Vec<Event>,
}

impl Scene {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.events.is_empty() || self.events.len() > MAX_SCENE_EVENTS {
            return Err(Error::Generation(format!(
                "scene {} has {} events",
                self.scene_id,
                self.events.len()
            )));
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.position != i {
                return Err(Error::Generation(format!(
                    "scene {} positions are not contiguous",
                    self.scene_id
                )));
            }
            let ok = vocab.subjects.contains(&ev.subject)
                && vocab.attributes.contains(&ev.attribute)
                && vocab.actions.contains(&ev.action)
                && (vocab.count_min..=vocab.count_max).contains(&ev.count);
            if !ok {
                return Err(Error::Generation(format!(
                    "scene {} event {i} uses tokens outside the vocab",
                    self.scene_id
                )));
            }
            let clash = self.events[..i]
                .iter()
                .any(|o| o.subject == ev.subject && o.attribute == ev.attribute);
            if clash {
                return Err(Error::Generation(format!(
                    "scene {} repeats ({}, {})",
                    self.scene_id, ev.subject, ev.attribute
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Draws a scene of `k` events with distinct (subject, attribute) pairs.
/// The scene id is the seed.
pub fn generate_scene(vocab: &Vocab, k: usize, rng_seed: u64) -> Result<Scene> {
    if k == 0 || k > MAX_SCENE_EVENTS {
        return Err(Error::Generation(format!(
            "event count {k} outside 1..={MAX_SCENE_EVENTS}"
        )));
    }
    let subjects = vocab.scene_subjects();
    let attributes = vocab.scene_attributes();
    let mut pairs: Vec<(&str, &str)> = subjects
        .iter()
        .flat_map(|s| attributes.iter().map(move |a| (*s, *a)))
        .collect();
    if pairs.len() < k {
        return Err(Error::Generation(format!(
            "vocab offers {} (subject, attribute) pairs, scene needs {k}",
            pairs.len()
        )));
    }
    let mut rng = rng_from_seed(rng_seed);
    pairs.shuffle(&mut rng);
    let events = pairs[..k]
        .iter()
        .enumerate()
        .map(|(position, (subject, attribute))| Event {
            subject: subject.to_string(),
            attribute: attribute.to_string(),
            action: vocab.actions.choose(&mut rng).expect("non-empty").clone(),
            count: rng.random_range(vocab.count_min..=vocab.count_max),
            position,
        })
        .collect();
    Ok(Scene {
        scene_id: rng_seed,
        events,
    })
}
