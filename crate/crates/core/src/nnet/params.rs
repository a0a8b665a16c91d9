use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::worldgen::question::Template;
use crate::worldgen::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub video_dim: usize,
    /// Size of the open-ended answer pool (the ignorance logit is extra).
    pub num_classes: usize,
    pub num_templates: usize,
    /// Embedded tokens; their count is the vocab size.
    pub tokens: Vec<String>,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn for_vocab(
        vocab: &Vocab,
        video_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        init_scale: f64,
        seed: u64,
    ) -> Self {
        ModelConfig {
            embed_dim,
            hidden_dim,
            video_dim,
            num_classes: vocab.actions.len(),
            num_templates: Template::ALL.len(),
            tokens: vocab.model_tokens(),
            init_scale,
            seed,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("video_dim", self.video_dim),
            ("num_classes", self.num_classes),
            ("num_templates", self.num_templates),
            ("vocab size", self.tokens.len()),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Model(format!("{name} must be at least 1")));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Model("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor, flat and row-major. Also used for gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensors {
    /// [vocab × embed]; question slot tokens and option tokens.
    pub token_emb: Vec<f64>,
    /// [templates × embed]
    pub template_emb: Vec<f64>,
    /// [hidden × video]
    pub w_video: Vec<f64>,
    /// [hidden × embed]
    pub w_question: Vec<f64>,
    /// [hidden × embed]
    pub w_option: Vec<f64>,
    pub b_hidden: Vec<f64>,
    /// [(classes + 1) × hidden]; the last row is the ignorance logit.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    /// [hidden]; multi-choice scoring vector.
    pub w_score: Vec<f64>,
    pub b_score: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "token_emb",
    "template_emb",
    "w_video",
    "w_question",
    "w_option",
    "b_hidden",
    "w_out",
    "b_out",
    "w_score",
    "b_score",
];

impl Tensors {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (e, h, c1) = (cfg.embed_dim, cfg.hidden_dim, cfg.num_classes + 1);
        Tensors {
            token_emb: vec![0.0; cfg.vocab_size() * e],
            template_emb: vec![0.0; cfg.num_templates * e],
            w_video: vec![0.0; h * cfg.video_dim],
            w_question: vec![0.0; h * e],
            w_option: vec![0.0; h * e],
            b_hidden: vec![0.0; h],
            w_out: vec![0.0; c1 * h],
            b_out: vec![0.0; c1],
            w_score: vec![0.0; h],
            b_score: vec![0.0; 1],
        }
    }

    pub fn shapes(cfg: &ModelConfig) -> [[usize; 2]; 10] {
        let (e, h, c1) = (cfg.embed_dim, cfg.hidden_dim, cfg.num_classes + 1);
        [
            [cfg.vocab_size(), e],
            [cfg.num_templates, e],
            [h, cfg.video_dim],
            [h, e],
            [h, e],
            [h, 1],
            [c1, h],
            [c1, 1],
            [h, 1],
            [1, 1],
        ]
    }

    pub fn as_slices(&self) -> [&[f64]; 10] {
        [
            &self.token_emb,
            &self.template_emb,
            &self.w_video,
            &self.w_question,
            &self.w_option,
            &self.b_hidden,
            &self.w_out,
            &self.b_out,
            &self.w_score,
            &self.b_score,
        ]
    }

    pub fn as_mut_slices(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.token_emb,
            &mut self.template_emb,
            &mut self.w_video,
            &mut self.w_question,
            &mut self.w_option,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.w_score,
            &mut self.b_score,
        ]
    }

    pub fn fill_zero(&mut self) {
        for t in self.as_mut_slices() {
            t.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.as_slices().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.as_slices().iter().map(|t| t.len()).sum()
    }
}

/// The question-answering model: embeddings, one fused hidden layer and
/// two heads (open-ended logits and multi-choice scores).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Tensors,
    token_index: HashMap<String, usize>,
}

fn gaussian(values: &mut [f64], std: f64, rng: &mut crate::rng::Rng) {
    if std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in values {
        *v = normal.sample(rng);
    }
}

impl ModelParams {
    pub fn from_tensors(config: ModelConfig, tensors: Tensors) -> Result<Self> {
        config.validate()?;
        let expect = Tensors::shapes(&config);
        for ((name, t), shape) in TENSOR_NAMES.iter().zip(tensors.as_slices()).zip(expect) {
            if t.len() != shape[0] * shape[1] {
                return Err(Error::Model(format!(
                    "tensor {name} has {} values, expected {}",
                    t.len(),
                    shape[0] * shape[1]
                )));
            }
        }
        let token_index = config
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(ModelParams {
            config,
            tensors,
            token_index,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let t = Tensors::zeros(&config);
        Self::from_tensors(config, t)
    }

    /// Random initialization: embeddings N(0, init_scale²), fused layer
    /// N(0, 2/fan_in), heads N(0, 1/hidden). Biases and the ignorance row of
    /// the output layer start at zero, so an untrained ignorance head reads
    /// exactly 0.5.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut t = Tensors::zeros(&config);
        let mut rng = derived_rng(config.seed, "model-init", 0);
        let (e, h) = (config.embed_dim, config.hidden_dim);
        gaussian(&mut t.token_emb, config.init_scale, &mut rng);
        gaussian(&mut t.template_emb, config.init_scale, &mut rng);
        let fan_in = (config.video_dim + 2 * e) as f64;
        let std_in = (2.0 / fan_in).sqrt();
        gaussian(&mut t.w_video, std_in, &mut rng);
        gaussian(&mut t.w_question, std_in, &mut rng);
        gaussian(&mut t.w_option, std_in, &mut rng);
        let std_out = (1.0 / h as f64).sqrt();
        let answer_rows = config.num_classes * h;
        gaussian(&mut t.w_out[..answer_rows], std_out, &mut rng);
        gaussian(&mut t.w_score, std_out, &mut rng);
        Self::from_tensors(config, t)
    }

    pub fn token_id(&self, token: &str) -> Result<usize> {
        self.token_index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Model(format!("unknown token {token:?}")))
    }

    pub fn token_row(&self, id: usize) -> &[f64] {
        let e = self.config.embed_dim;
        &self.tensors.token_emb[id * e..(id + 1) * e]
    }

    pub fn template_row(&self, id: usize) -> &[f64] {
        let e = self.config.embed_dim;
        &self.tensors.template_emb[id * e..(id + 1) * e]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.all_finite()
    }

    /// θ ← θ − lr·g
    pub fn apply_sgd(&mut self, grads: &Tensors, lr: f64) {
        for (p, g) in self.tensors.as_mut_slices().into_iter().zip(grads.as_slices()) {
            for (x, dx) in p.iter_mut().zip(g) {
                *x -= lr * dx;
            }
        }
    }
}
