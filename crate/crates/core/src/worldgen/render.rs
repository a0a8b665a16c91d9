use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, rng_from_seed};
use crate::worldgen::scene::Scene;

/// Fixed-size rendering of a scene; what the model sees instead of pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoFeature {
    pub values: Vec<f64>,
    pub noise_sigma: f64,
}

impl VideoFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Feature tokens a scene renders into. Entity tokens say who appears; the
/// rest bind an action to who did it, how it looked, how often, or what came
/// next, so a reader can recover which subject did what from the pooled sum.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FeatureToken {
    Subject(String),
    Entity(String, String),
    SubjectAction(String, String),
    AttributeAction(String, String),
    CountAction(u32, String),
    Transition(String, String),
}

impl FeatureToken {
    fn label(&self) -> String {
        match self {
            FeatureToken::Subject(s) => format!("who:{s}"),
            FeatureToken::Entity(s, t) => format!("entity:{s}:{t}"),
            FeatureToken::SubjectAction(s, a) => format!("subject:{s}:{a}"),
            FeatureToken::AttributeAction(t, a) => format!("attribute:{t}:{a}"),
            FeatureToken::CountAction(c, a) => format!("count:{c}:{a}"),
            FeatureToken::Transition(a, b) => format!("next:{a}:{b}"),
        }
    }
}

pub fn scene_tokens(scene: &Scene) -> Vec<FeatureToken> {
    let mut out = Vec::with_capacity(scene.len() * 5);
    for ev in &scene.events {
        out.push(FeatureToken::Subject(ev.subject.clone()));
        out.push(FeatureToken::Entity(ev.subject.clone(), ev.attribute.clone()));
        out.push(FeatureToken::SubjectAction(ev.subject.clone(), ev.action.clone()));
        out.push(FeatureToken::AttributeAction(ev.attribute.clone(), ev.action.clone()));
        out.push(FeatureToken::CountAction(ev.count, ev.action.clone()));
    }
    for pair in scene.events.windows(2) {
        out.push(FeatureToken::Transition(pair[0].action.clone(), pair[1].action.clone()));
    }
    out
}

/// Embedding of one feature token: i.i.d. N(0, 1/dim) entries keyed by
/// (featurizer seed, token), so every token has unit expected norm.
pub fn token_embedding(token: &FeatureToken, dim: usize, featurizer_seed: u64) -> Vec<f64> {
    let mut rng = derived_rng(featurizer_seed, &token.label(), 0);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Renders a scene: sum of its token embeddings plus N(0, noise_sigma²) noise.
pub fn render_video(
    scene: &Scene,
    dim: usize,
    featurizer_seed: u64,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<VideoFeature> {
    if dim == 0 {
        return Err(Error::Config("video dimension must be at least 1".into()));
    }
    if scene.is_empty() {
        return Err(Error::Generation(format!("scene {} is empty", scene.scene_id)));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid noise sigma {noise_sigma}")));
    }
    let mut values = vec![0.0; dim];
    for tok in scene_tokens(scene) {
        for (v, e) in values.iter_mut().zip(token_embedding(&tok, dim, featurizer_seed)) {
            *v += e;
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("checked sigma");
        let mut rng = rng_from_seed(derive_seed(noise_seed, "video-noise", 0));
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(VideoFeature {
        values,
        noise_sigma,
    })
}

/// Render settings shared by every split of a dataset. Instance noise seeds
/// are derived from `noise_seed` and the instance id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Renderer {
    pub dim: usize,
    pub featurizer_seed: u64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Renderer {
    pub fn render(&self, scene: &Scene, instance_id: u64) -> Result<VideoFeature> {
        render_video(
            scene,
            self.dim,
            self.featurizer_seed,
            self.noise_sigma,
            derive_seed(self.noise_seed, "instance", instance_id),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::scene::{generate_scene, Event};
    use crate::worldgen::vocab::Vocab;

    #[test]
    fn zero_noise_is_reproducible() {
        let scene = generate_scene(&Vocab::default(), 3, 11).unwrap();
        let a = render_video(&scene, 64, 5, 0.0, 1).unwrap();
        let b = render_video(&scene, 64, 5, 0.0, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_render_depends_on_noise_seed_only_through_noise() {
        let scene = generate_scene(&Vocab::default(), 3, 11).unwrap();
        let a = render_video(&scene, 64, 5, 0.1, 1).unwrap();
        let b = render_video(&scene, 64, 5, 0.1, 1).unwrap();
        let c = render_video(&scene, 64, 5, 0.1, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn changing_one_action_changes_the_video() {
        let mut scene = generate_scene(&Vocab::default(), 2, 4).unwrap();
        let a = render_video(&scene, 64, 5, 0.0, 0).unwrap();
        scene.events[1].action = if scene.events[1].action == "eating" {
            "running".into()
        } else {
            "eating".into()
        };
        let b = render_video(&scene, 64, 5, 0.0, 0).unwrap();
        let diff: f64 = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-3, "diff {diff}");
    }

    #[test]
    fn single_event_is_sum_of_its_tokens() {
        let scene = Scene {
            scene_id: 0,
            events: vec![Event {
                subject: "girl".into(),
                attribute: "red".into(),
                action: "dancing".into(),
                count: 2,
                position: 0,
            }],
        };
        let toks = scene_tokens(&scene);
        assert_eq!(
            toks,
            vec![
                FeatureToken::Subject("girl".into()),
                FeatureToken::Entity("girl".into(), "red".into()),
                FeatureToken::SubjectAction("girl".into(), "dancing".into()),
                FeatureToken::AttributeAction("red".into(), "dancing".into()),
                FeatureToken::CountAction(2, "dancing".into()),
            ]
        );
        let mut expected = vec![0.0; 16];
        for t in &toks {
            for (e, x) in expected.iter_mut().zip(token_embedding(t, 16, 9)) {
                *e += x;
            }
        }
        let got = render_video(&scene, 16, 9, 0.0, 0).unwrap();
        assert_eq!(got.values, expected);
    }
}
