//! Central finite-difference check of the analytic gradients.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::forward::{backward_mcqa, backward_oeqa, forward_mcqa_tokens, forward_oeqa};
use crate::nnet::loss::{mcqa_loss_and_grad, oeqa_loss_and_grad, OeqaObjective};
use crate::nnet::params::{ModelConfig, ModelParams, Tensors, TENSOR_NAMES};
use crate::rng::{derived_rng, Rng};
use crate::worldgen::question::{QuestionSpec, Slot, Template};
use crate::worldgen::render::VideoFeature;
use crate::worldgen::vocab::{Category, Vocab, NOT_GIVEN};

/// Below this magnitude the relative error is measured against the floor
/// instead, so near-zero gradients are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Minimum |pre-activation| accepted for a sample, keeping finite
/// differences away from ReLU kinks.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub video_dim: usize,
    /// Random parameter draws.
    pub n_samples: usize,
    pub step: f64,
    pub distances: Vec<f64>,
    pub num_options: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            embed_dim: 6,
            hidden_dim: 10,
            video_dim: 8,
            n_samples: 20,
            step: 1e-4,
            distances: vec![0.0, 0.3, 1.0],
            num_options: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: String,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub coords_checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: Vec<CaseReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn random_question(vocab: &Vocab, rng: &mut Rng) -> QuestionSpec {
    let template = *Template::ALL.choose(rng).expect("templates");
    let pick = |cat: Category, rng: &mut Rng| vocab.tokens_in(cat).choose(rng).cloned().expect("tokens");
    let mut slots = BTreeMap::new();
    for slot in template.required_slots() {
        slots.insert(*slot, pick(slot.category(), rng));
    }
    if rng.random_bool(0.5) {
        slots.insert(Slot::Attribute, pick(Category::Attribute, rng));
    }
    QuestionSpec::new(template, slots)
}

fn random_params(cfg: ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    let mut t = Tensors::zeros(&cfg);
    let normal = Normal::new(0.0, 0.5).expect("std");
    for tensor in t.as_mut_slices() {
        for x in tensor.iter_mut() {
            *x = normal.sample(rng);
        }
    }
    ModelParams::from_tensors(cfg, t)
}

enum Case {
    Oeqa { answer: usize, d: f64 },
    Mcqa { options: Vec<String>, target: usize },
}

fn loss_of(params: &ModelParams, v: &VideoFeature, q: &QuestionSpec, case: &Case) -> Result<f64> {
    match case {
        Case::Oeqa { answer, d } => {
            let out = forward_oeqa(v, q, params)?;
            Ok(oeqa_loss_and_grad(&out.cache.logits, *answer, *d, OeqaObjective::Combined)?.0)
        }
        Case::Mcqa { options, target } => {
            let out = forward_mcqa_tokens(v, q, options, params)?;
            Ok(mcqa_loss_and_grad(&out.scores, *target)?.0)
        }
    }
}

/// Analytic gradient plus the smallest |pre-activation| seen.
fn analytic(params: &ModelParams, v: &VideoFeature, q: &QuestionSpec, case: &Case) -> Result<(Tensors, f64)> {
    let mut g = Tensors::zeros(&params.config);
    let margin = |pre: &[f64]| pre.iter().fold(f64::INFINITY, |m, z| m.min(z.abs()));
    match case {
        Case::Oeqa { answer, d } => {
            let out = forward_oeqa(v, q, params)?;
            let (_, dl) = oeqa_loss_and_grad(&out.cache.logits, *answer, *d, OeqaObjective::Combined)?;
            backward_oeqa(params, &out.cache, &dl, &mut g)?;
            Ok((g, margin(&out.cache.pre)))
        }
        Case::Mcqa { options, target } => {
            let out = forward_mcqa_tokens(v, q, options, params)?;
            let (_, ds) = mcqa_loss_and_grad(&out.scores, *target)?;
            backward_mcqa(params, &out.cache, &ds, &mut g)?;
            let m = out.cache.pre.iter().map(|p| margin(p)).fold(f64::INFINITY, f64::min);
            Ok((g, m))
        }
    }
}

/// Compares analytic gradients with central differences on every coordinate
/// for the open-ended loss at each configured d and for the multi-choice loss.
pub fn grad_check(cfg: &GradCheckConfig, tolerance: f64) -> Result<GradCheckReport> {
    if cfg.embed_dim.max(cfg.hidden_dim).max(cfg.video_dim) > 16 {
        return Err(Error::Config("gradient check dims must be at most 16".into()));
    }
    if cfg.n_samples == 0 || cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::Config("gradient check needs samples and a positive step".into()));
    }
    let vocab = Vocab::default();
    let mut case_names: Vec<String> = cfg.distances.iter().map(|d| format!("oeqa_d={d}")).collect();
    case_names.push("mcqa".into());
    let mut reports: Vec<CaseReport> = case_names
        .iter()
        .map(|c| CaseReport {
            case: c.clone(),
            max_rel_err: 0.0,
            worst_tensor: String::new(),
            coords_checked: 0,
        })
        .collect();

    for sample in 0..cfg.n_samples as u64 {
        let mut rng = derived_rng(cfg.seed, "gradcheck", sample);
        let mcfg = ModelConfig::for_vocab(&vocab, cfg.video_dim, cfg.embed_dim, cfg.hidden_dim, 0.5, sample);
        let mut params = random_params(mcfg, &mut rng)?;
        let normal = Normal::new(0.0, 1.0).expect("std");

        for (ci, report) in reports.iter_mut().enumerate() {
            let case = if ci < cfg.distances.len() {
                Case::Oeqa {
                    answer: rng.random_range(0..vocab.actions.len()),
                    d: cfg.distances[ci],
                }
            } else {
                let mut options: Vec<String> = vocab
                    .actions
                    .choose_multiple(&mut rng, cfg.num_options)
                    .cloned()
                    .collect();
                options.push(NOT_GIVEN.to_string());
                let target = rng.random_range(0..options.len());
                Case::Mcqa { options, target }
            };
            // Redraw inputs until every hidden unit sits clear of its kink.
            let mut attempt = 0;
            let (video, q, grads) = loop {
                let video = VideoFeature {
                    values: (0..cfg.video_dim).map(|_| normal.sample(&mut rng)).collect(),
                    noise_sigma: 0.0,
                };
                let q = random_question(&vocab, &mut rng);
                let (g, margin) = analytic(&params, &video, &q, &case)?;
                if margin > KINK_MARGIN {
                    break (video, q, g);
                }
                attempt += 1;
                if attempt > 1000 {
                    return Err(Error::Numeric("could not avoid ReLU kinks".into()));
                }
            };

            for (ti, name) in TENSOR_NAMES.iter().enumerate() {
                let len = grads.as_slices()[ti].len();
                for k in 0..len {
                    let orig = params.tensors.as_slices()[ti][k];
                    params.tensors.as_mut_slices()[ti][k] = orig + cfg.step;
                    let plus = loss_of(&params, &video, &q, &case)?;
                    params.tensors.as_mut_slices()[ti][k] = orig - cfg.step;
                    let minus = loss_of(&params, &video, &q, &case)?;
                    params.tensors.as_mut_slices()[ti][k] = orig;
                    let numeric = (plus - minus) / (2.0 * cfg.step);
                    let err = rel_err(grads.as_slices()[ti][k], numeric);
                    if !err.is_finite() {
                        return Err(Error::Numeric(format!("non-finite gradient error in {name}")));
                    }
                    if err > report.max_rel_err {
                        report.max_rel_err = err;
                        report.worst_tensor = name.to_string();
                    }
                    report.coords_checked += 1;
                }
            }
        }
    }
    let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        cases: reports,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_check_passes() {
        let cfg = GradCheckConfig {
            n_samples: 3,
            ..Default::default()
        };
        let r = grad_check(&cfg, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.cases.len(), 4);
        assert!(r.cases.iter().all(|c| c.coords_checked > 0));
    }

    #[test]
    fn zero_tolerance_fails() {
        let cfg = GradCheckConfig {
            n_samples: 1,
            ..Default::default()
        };
        assert!(!grad_check(&cfg, 0.0).unwrap().passed);
    }

    #[test]
    fn rejects_large_dims() {
        let cfg = GradCheckConfig {
            hidden_dim: 32,
            ..Default::default()
        };
        assert!(grad_check(&cfg, 1e-4).is_err());
    }
}
