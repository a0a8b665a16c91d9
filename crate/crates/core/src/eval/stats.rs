//! Paired comparisons across seeds.

use serde::{Deserialize, Serialize};

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// Two-sided exact sign test p-value for `wins` against `losses` (ties dropped).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses) as u64;
    let tail: f64 = (0..=k)
        .map(|i| (ln_choose(n, i) - n as f64 * std::f64::consts::LN_2).exp())
        .sum();
    (2.0 * tail).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub a_mean: f64,
    pub b_mean: f64,
    /// Seeds with a > b.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Compares `a` and `b` seed by seed.
pub fn paired(metric: &str, a: &str, b: &str, a_values: Vec<f64>, b_values: Vec<f64>) -> PairedComparison {
    assert_eq!(a_values.len(), b_values.len(), "paired samples differ in length");
    let wins = a_values.iter().zip(&b_values).filter(|(x, y)| x > y).count();
    let losses = a_values.iter().zip(&b_values).filter(|(x, y)| x < y).count();
    let ties = a_values.len() - wins - losses;
    PairedComparison {
        metric: metric.into(),
        a: a.into(),
        b: b.into(),
        a_mean: mean(&a_values),
        b_mean: mean(&b_values),
        a_values,
        b_values,
        wins,
        losses,
        ties,
        p_value: sign_test_p(wins, losses),
    }
}
