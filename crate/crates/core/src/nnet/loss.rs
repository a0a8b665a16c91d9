//! Loss functions and their gradients with respect to the logits.
//!
//! Open-ended combined loss, with p_a the answer probability of the original
//! answer and p_i the ignorance probability:
//!
//! L = −(1−d)·log p_a − (d·log p_i + (1−d)·log(1−p_i))
//!
//! Probabilities are clamped at [`PROB_FLOOR`] before logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + eᶻ) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Combined open-ended loss from the answer and ignorance probabilities.
pub fn combined_loss(p_answer: f64, p_ignorance: f64, d: f64) -> f64 {
    let ln = |p: f64| p.max(PROB_FLOOR).ln();
    -(1.0 - d) * ln(p_answer) - (d * ln(p_ignorance) + (1.0 - d) * ln(1.0 - p_ignorance))
}

pub fn loss_oeqa(p_answers: &[f64], p_ignorance: f64, answer_index: usize, d: f64) -> Result<f64> {
    let p = p_answers.get(answer_index).ok_or_else(|| {
        Error::Model(format!("answer {answer_index} out of range for {} classes", p_answers.len()))
    })?;
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Model(format!("distance {d} outside [0, 1]")));
    }
    Ok(combined_loss(*p, p_ignorance, d))
}

/// Which open-ended objective to optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OeqaObjective {
    /// Answer cross-entropy plus the soft-labelled ignorance term.
    Combined,
    /// Plain answer cross-entropy; the ignorance logit gets no gradient.
    AnswerOnly,
}

/// Loss and dL/dlogits for the open-ended head (logits has C+1 entries).
pub fn oeqa_loss_and_grad(
    logits: &[f64],
    answer: usize,
    d: f64,
    objective: OeqaObjective,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Model("open-ended head needs C+1 ≥ 2 logits".into()));
    }
    let c = logits.len() - 1;
    if answer >= c {
        return Err(Error::Model(format!("answer {answer} out of range for {c} classes")));
    }
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Model(format!("distance {d} outside [0, 1]")));
    }
    let ln_floor = PROB_FLOOR.ln();
    let mut grad = vec![0.0; c + 1];

    let answer_weight = match objective {
        OeqaObjective::Combined => 1.0 - d,
        OeqaObjective::AnswerOnly => 1.0,
    };
    let lsm = log_softmax(&logits[..c]);
    let mut loss = 0.0;
    if answer_weight != 0.0 {
        let lp = lsm[answer];
        if lp > ln_floor {
            loss -= answer_weight * lp;
            for (g, l) in grad[..c].iter_mut().zip(&lsm) {
                *g = answer_weight * l.exp();
            }
            grad[answer] -= answer_weight;
        } else {
            loss -= answer_weight * ln_floor;
        }
    }

    if objective == OeqaObjective::Combined {
        let z = logits[c];
        let p = sigmoid(z);
        let log_p = -softplus(-z);
        let log_not_p = -softplus(z);
        let mut gz = 0.0;
        if d != 0.0 {
            if log_p > ln_floor {
                loss -= d * log_p;
                gz -= d * (1.0 - p);
            } else {
                loss -= d * ln_floor;
            }
        }
        if d != 1.0 {
            if log_not_p > ln_floor {
                loss -= (1.0 - d) * log_not_p;
                gz += (1.0 - d) * p;
            } else {
                loss -= (1.0 - d) * ln_floor;
            }
        }
        grad[c] = gz;
    }
    Ok((loss, grad))
}

/// Softmax cross-entropy over option scores and its gradient.
pub fn mcqa_loss_and_grad(scores: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= scores.len() {
        return Err(Error::Model(format!(
            "target {target} out of range for {} options",
            scores.len()
        )));
    }
    let lsm = log_softmax(scores);
    let mut grad: Vec<f64> = lsm.iter().map(|l| l.exp()).collect();
    grad[target] -= 1.0;
    Ok((-lsm[target], grad))
}

pub fn loss_mcqa(scores: &[f64], target: usize) -> Result<f64> {
    mcqa_loss_and_grad(scores, target).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oeqa_d0_example() {
        let l = loss_oeqa(&[0.1, 0.8, 0.1], 0.1, 1, 0.0).unwrap();
        assert!((l - (-(0.8f64).ln() - (0.9f64).ln())).abs() < 1e-15);
        assert!((l - 0.32850).abs() < 1e-5);
    }

    #[test]
    fn oeqa_d1_example() {
        let l = combined_loss(0.123, 0.5, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        assert!(combined_loss(0.0, 0.0, 0.5).is_finite());
        assert!(combined_loss(1.0, 1.0, 0.0).is_finite());
        assert!(loss_oeqa(&[0.5, 0.5], 0.5, 2, 0.0).is_err());
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.4];
        let p = softmax(&logits[..4]);
        let pi = sigmoid(logits[4]);
        for d in [0.0, 0.3, 0.7, 1.0] {
            let (l, _) = oeqa_loss_and_grad(&logits, 2, d, OeqaObjective::Combined).unwrap();
            assert!((l - loss_oeqa(&p, pi, 2, d).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn d_one_zeroes_answer_gradient() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.4];
        let (_, g) = oeqa_loss_and_grad(&logits, 2, 1.0, OeqaObjective::Combined).unwrap();
        assert!(g[..4].iter().all(|x| *x == 0.0));
        assert!(g[4] != 0.0);
    }

    #[test]
    fn answer_only_ignores_the_ignorance_logit() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.4];
        let (l, g) = oeqa_loss_and_grad(&logits, 1, 0.0, OeqaObjective::AnswerOnly).unwrap();
        assert_eq!(g[4], 0.0);
        assert!((l + log_softmax(&logits[..4])[1]).abs() < 1e-15);
    }

    #[test]
    fn mcqa_uniform_and_limits() {
        let l = loss_mcqa(&[0.4; 6], 3).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        assert!((l - 1.79176).abs() < 1e-5);
        let big = loss_mcqa(&[0.0, 800.0, 0.0], 1).unwrap();
        assert!(big < 1e-300);
        let a = loss_mcqa(&[0.1, 0.5, -0.2], 0).unwrap();
        let b = loss_mcqa(&[10.1, 10.5, 9.8], 0).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(loss_mcqa(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.1, 0.2, -3.0]);
        let b = softmax(&[5.1, 5.2, 2.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
