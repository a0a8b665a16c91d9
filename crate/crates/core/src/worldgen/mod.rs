//! Synthetic video QA world: vocabularies, scenes, their rendered features,
//! templated questions and datasets with a planted question→answer shortcut.

pub mod bias;
pub mod dataset;
pub mod io;
pub mod question;
pub mod render;
pub mod scene;
pub mod vocab;

pub use bias::{plant_bias, BiasSpec};
pub use dataset::{build_dataset, Dataset, DatasetConfig, InstanceRecord, QAInstance, Split};
pub use question::{derive_answer, generate_question, QuestionSpec, Slot, Template};
pub use render::{render_video, Renderer, VideoFeature};
pub use scene::{generate_scene, Event, Scene};
pub use vocab::{Relation, Vocab, NOT_GIVEN};
