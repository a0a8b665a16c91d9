use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::worldgen::dataset::{QAInstance, Split};
use crate::worldgen::question::{derive_answer, referenced_event, Slot, Template};
use crate::worldgen::render::Renderer;
use crate::worldgen::vocab::Vocab;

/// Planted shortcut: training questions of `template` about `subject` get
/// their scene rewritten so the answer is `forced_action` with probability
/// `strength`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    pub template: Template,
    pub subject: String,
    pub forced_action: String,
    pub strength: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            template: Template::Frame,
            subject: "baby".into(),
            forced_action: "crying".into(),
            strength: 0.9,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if !vocab.actions.contains(&self.forced_action) {
            return Err(Error::Config(format!(
                "forced action {:?} is not in the vocab",
                self.forced_action
            )));
        }
        if !vocab.scene_subjects().contains(&self.subject.as_str()) {
            return Err(Error::Config(format!(
                "bias subject {:?} never appears in scenes",
                self.subject
            )));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config("bias strength must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Whether the instance's question is a bias trigger.
    pub fn matches(&self, vocab: &Vocab, instance: &QAInstance) -> bool {
        instance.question.template == self.template
            && instance
                .question
                .slot(Slot::Subject)
                .is_some_and(|s| vocab.canonical(s) == self.subject)
    }
}

/// Rewrites the scenes of matching training instances so the referenced
/// event performs the forced action, then re-renders their videos.
pub fn plant_bias(
    mut instances: Vec<QAInstance>,
    bias: &BiasSpec,
    vocab: &Vocab,
    renderer: &Renderer,
    rng_seed: u64,
) -> Result<Vec<QAInstance>> {
    bias.validate(vocab)?;
    if let Some(bad) = instances.iter().find(|i| i.split != Split::Train) {
        return Err(Error::Config(format!(
            "bias can only be planted in the train split (instance {} is {:?})",
            bad.id, bad.split
        )));
    }
    for inst in instances.iter_mut() {
        if !bias.matches(vocab, inst) {
            continue;
        }
        let mut rng = derived_rng(rng_seed, "bias", inst.id);
        if !rng.random_bool(bias.strength) {
            continue;
        }
        let target = referenced_event(vocab, &inst.scene, &inst.question).ok_or_else(|| {
            Error::Generation(format!("instance {} has no referenced event", inst.id))
        })?;
        inst.scene.events[target].action = bias.forced_action.clone();
        let answer = derive_answer(vocab, &inst.scene, &inst.question).ok_or_else(|| {
            Error::Generation(format!("bias rewrite broke instance {}", inst.id))
        })?;
        if answer != bias.forced_action {
            return Err(Error::Generation(format!(
                "bias rewrite of instance {} yields {answer:?}",
                inst.id
            )));
        }
        let old = std::mem::replace(&mut inst.answer, answer);
        if old != inst.answer {
            // Keep the option set consistent: the forced action takes the old
            // answer's slot, and if it was a distractor the old answer takes its place.
            let opts = &mut inst.options.options;
            if let Some(pos) = opts.iter().position(|o| *o == inst.answer) {
                opts[pos] = old.clone();
            }
            opts[inst.options.correct_index] = inst.answer.clone();
        }
        inst.video = renderer.render(&inst.scene, inst.id)?;
        inst.biased = true;
    }
    Ok(instances)
}
