//! Forward and backward passes.
//!
//! Question encoding: q = mean(slot token embeddings) + template embedding.
//! Fusion: z = W_v·v + W_q·q (+ W_o·o for an option) + b, h = max(0, z).
//! Open-ended head: logits = W_out·h + b_out over C answers plus one
//! ignorance logit. Multi-choice head: s = w_score·h + b_score per option.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nnet::loss::{sigmoid, softmax};
use crate::nnet::params::{ModelParams, Tensors};
use crate::taskheads::OptionSet;
use crate::worldgen::question::QuestionSpec;
use crate::worldgen::render::VideoFeature;

/// Encoded question with the ids needed to route gradients back.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedQuestion {
    pub vector: Vec<f64>,
    pub token_ids: Vec<usize>,
    pub template: usize,
}

pub fn encode_question(q: &QuestionSpec, params: &ModelParams) -> Result<EncodedQuestion> {
    let e = params.config.embed_dim;
    let template = q.template.index();
    if template >= params.config.num_templates {
        return Err(Error::Model(format!("template {:?} has no embedding", q.template)));
    }
    let token_ids = q
        .slots
        .values()
        .map(|t| params.token_id(t))
        .collect::<Result<Vec<_>>>()?;
    let mut vector = params.template_row(template).to_vec();
    if !token_ids.is_empty() {
        let inv = 1.0 / token_ids.len() as f64;
        let mut mean = vec![0.0; e];
        for &id in &token_ids {
            for (m, x) in mean.iter_mut().zip(params.token_row(id)) {
                *m += x;
            }
        }
        for (v, m) in vector.iter_mut().zip(mean) {
            *v += m * inv;
        }
    }
    Ok(EncodedQuestion {
        vector,
        token_ids,
        template,
    })
}

fn check_video(v: &VideoFeature, params: &ModelParams) -> Result<()> {
    if v.values.len() != params.config.video_dim {
        return Err(Error::Model(format!(
            "video has dimension {}, model expects {}",
            v.values.len(),
            params.config.video_dim
        )));
    }
    Ok(())
}

fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += Wᵀ·y for W of shape [y.len() × out.len()].
fn matvec_t_add(out: &mut [f64], w: &[f64], y: &[f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += yi * a;
        }
    }
}

/// g += y ⊗ x for g of shape [y.len() × x.len()].
fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += yi * xi;
        }
    }
}

/// Pre-activation shared by every option: W_v·v + W_q·q + b.
fn shared_preactivation(params: &ModelParams, video: &[f64], q: &[f64]) -> Vec<f64> {
    let t = &params.tensors;
    let mut z = t.b_hidden.clone();
    matvec_add(&mut z, &t.w_video, video);
    matvec_add(&mut z, &t.w_question, q);
    z
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|x| x.max(0.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OeqaCache {
    pub video: Vec<f64>,
    pub question: EncodedQuestion,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OeqaOutput {
    /// Softmax over the first C logits.
    pub p_answers: Vec<f64>,
    /// Sigmoid of the ignorance logit.
    pub p_ignorance: f64,
    pub cache: OeqaCache,
}

impl OeqaOutput {
    /// Predicted answer class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.cache.logits[..self.p_answers.len()])
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn forward_oeqa(v: &VideoFeature, q: &QuestionSpec, params: &ModelParams) -> Result<OeqaOutput> {
    check_video(v, params)?;
    let question = encode_question(q, params)?;
    let pre = shared_preactivation(params, &v.values, &question.vector);
    let hidden = relu(&pre);
    let t = &params.tensors;
    let mut logits = t.b_out.clone();
    matvec_add(&mut logits, &t.w_out, &hidden);
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite open-ended logits".into()));
    }
    let c = params.config.num_classes;
    let p_answers = softmax(&logits[..c]);
    let p_ignorance = sigmoid(logits[c]);
    Ok(OeqaOutput {
        p_answers,
        p_ignorance,
        cache: OeqaCache {
            video: v.values.clone(),
            question,
            pre,
            hidden,
            logits,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct McqaCache {
    pub video: Vec<f64>,
    pub question: EncodedQuestion,
    pub option_ids: Vec<usize>,
    pub pre: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McqaOutput {
    pub scores: Vec<f64>,
    pub cache: McqaCache,
}

impl McqaOutput {
    /// Highest-scoring option; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Scores each option token with the shared head over [v; q; option].
pub fn forward_mcqa_tokens(
    v: &VideoFeature,
    q: &QuestionSpec,
    options: &[String],
    params: &ModelParams,
) -> Result<McqaOutput> {
    check_video(v, params)?;
    if options.is_empty() {
        return Err(Error::Model("no options to score".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = options.iter().find(|o| !seen.insert(o.as_str())) {
        return Err(Error::Model(format!("duplicate option {dup:?}")));
    }
    let option_ids = options
        .iter()
        .map(|o| params.token_id(o))
        .collect::<Result<Vec<_>>>()?;
    let question = encode_question(q, params)?;
    let base = shared_preactivation(params, &v.values, &question.vector);
    let t = &params.tensors;
    let mut pre = Vec::with_capacity(options.len());
    let mut hidden = Vec::with_capacity(options.len());
    let mut scores = Vec::with_capacity(options.len());
    for &id in &option_ids {
        let mut z = base.clone();
        matvec_add(&mut z, &t.w_option, params.token_row(id));
        let h = relu(&z);
        let s = t.b_score[0] + h.iter().zip(&t.w_score).map(|(a, b)| a * b).sum::<f64>();
        if !s.is_finite() {
            return Err(Error::Numeric("non-finite option score".into()));
        }
        pre.push(z);
        hidden.push(h);
        scores.push(s);
    }
    Ok(McqaOutput {
        scores: scores.clone(),
        cache: McqaCache {
            video: v.values.clone(),
            question,
            option_ids,
            pre,
            hidden,
            scores,
        },
    })
}

pub fn forward_mcqa(
    v: &VideoFeature,
    q: &QuestionSpec,
    options: &OptionSet,
    params: &ModelParams,
) -> Result<McqaOutput> {
    forward_mcqa_tokens(v, q, &options.options, params)
}

fn check_cache(params: &ModelParams, video: &[f64], pre: &[f64], q: &EncodedQuestion) -> Result<()> {
    let cfg = &params.config;
    let ok = video.len() == cfg.video_dim
        && pre.len() == cfg.hidden_dim
        && q.vector.len() == cfg.embed_dim
        && q.template < cfg.num_templates
        && q.token_ids.iter().all(|&i| i < cfg.vocab_size());
    if ok {
        Ok(())
    } else {
        Err(Error::Model("forward cache does not match the parameters".into()))
    }
}

/// Routes dL/dz (summed over options) into the fused layer and the encoder.
fn backward_shared(params: &ModelParams, video: &[f64], q: &EncodedQuestion, dz: &[f64], g: &mut Tensors) {
    let e = params.config.embed_dim;
    outer_add(&mut g.w_video, dz, video);
    outer_add(&mut g.w_question, dz, &q.vector);
    for (gb, d) in g.b_hidden.iter_mut().zip(dz) {
        *gb += d;
    }
    let mut dq = vec![0.0; e];
    matvec_t_add(&mut dq, &params.tensors.w_question, dz);
    let trow = &mut g.template_emb[q.template * e..(q.template + 1) * e];
    for (a, b) in trow.iter_mut().zip(&dq) {
        *a += b;
    }
    if !q.token_ids.is_empty() {
        let inv = 1.0 / q.token_ids.len() as f64;
        for &id in &q.token_ids {
            let row = &mut g.token_emb[id * e..(id + 1) * e];
            for (a, b) in row.iter_mut().zip(&dq) {
                *a += b * inv;
            }
        }
    }
}

/// Accumulates parameter gradients given dL/dlogits (length C+1).
pub fn backward_oeqa(params: &ModelParams, cache: &OeqaCache, dlogits: &[f64], grads: &mut Tensors) -> Result<()> {
    check_cache(params, &cache.video, &cache.pre, &cache.question)?;
    let c1 = params.config.num_classes + 1;
    if dlogits.len() != c1 || cache.logits.len() != c1 {
        return Err(Error::Model(format!("expected {c1} logit gradients, got {}", dlogits.len())));
    }
    outer_add(&mut grads.w_out, dlogits, &cache.hidden);
    for (gb, d) in grads.b_out.iter_mut().zip(dlogits) {
        *gb += d;
    }
    let mut dz = vec![0.0; params.config.hidden_dim];
    matvec_t_add(&mut dz, &params.tensors.w_out, dlogits);
    for (d, z) in dz.iter_mut().zip(&cache.pre) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
    backward_shared(params, &cache.video, &cache.question, &dz, grads);
    Ok(())
}

/// Accumulates parameter gradients given dL/dscores (one per option).
pub fn backward_mcqa(params: &ModelParams, cache: &McqaCache, dscores: &[f64], grads: &mut Tensors) -> Result<()> {
    let Some(first_pre) = cache.pre.first() else {
        return Err(Error::Model("empty multi-choice cache".into()));
    };
    check_cache(params, &cache.video, first_pre, &cache.question)?;
    if dscores.len() != cache.option_ids.len() {
        return Err(Error::Model(format!(
            "expected {} score gradients, got {}",
            cache.option_ids.len(),
            dscores.len()
        )));
    }
    let e = params.config.embed_dim;
    let hdim = params.config.hidden_dim;
    let t = &params.tensors;
    let mut dz_sum = vec![0.0; hdim];
    let mut dz = vec![0.0; hdim];
    for (i, &ds) in dscores.iter().enumerate() {
        if ds == 0.0 {
            continue;
        }
        for (gw, h) in grads.w_score.iter_mut().zip(&cache.hidden[i]) {
            *gw += ds * h;
        }
        grads.b_score[0] += ds;
        for ((d, z), w) in dz.iter_mut().zip(&cache.pre[i]).zip(&t.w_score) {
            *d = if *z > 0.0 { ds * w } else { 0.0 };
        }
        let id = cache.option_ids[i];
        outer_add(&mut grads.w_option, &dz, params.token_row(id));
        let mut demb = vec![0.0; e];
        matvec_t_add(&mut demb, &t.w_option, &dz);
        for (a, b) in grads.token_emb[id * e..(id + 1) * e].iter_mut().zip(&demb) {
            *a += b;
        }
        for (s, d) in dz_sum.iter_mut().zip(&dz) {
            *s += d;
        }
    }
    backward_shared(params, &cache.video, &cache.question, &dz_sum, grads);
    Ok(())
}
