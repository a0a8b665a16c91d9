//! Per-epoch intervention probability schedules.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// p_r·(e−E)²/E², reaching 0 at the last epoch.
    Quadratic { p_r: f64 },
    /// p_r at epoch 1 down to 0 at epoch E.
    Linear { p_r: f64 },
    /// p_r·exp(−λ(e−1)/(E−1)); never reaches 0.
    Exponential { p_r: f64, lambda: f64 },
    Fixed { p: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Quadratic { p_r: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub epochs: usize,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, epochs: usize) -> Result<Self> {
        let s = Schedule { kind, epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Schedule("schedule needs at least one epoch".into()));
        }
        let unit = |x: f64, name: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Schedule(format!("{name} = {x} outside [0, 1]")))
            }
        };
        match self.kind {
            ScheduleKind::Quadratic { p_r } | ScheduleKind::Linear { p_r } => unit(p_r, "p_r"),
            ScheduleKind::Exponential { p_r, lambda } => {
                unit(p_r, "p_r")?;
                if lambda > 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Schedule(format!("lambda = {lambda} must be positive")))
                }
            }
            ScheduleKind::Fixed { p } => unit(p, "p"),
        }
    }

    /// Intervention probability at 1-based epoch `e`.
    pub fn prob(&self, e: usize) -> Result<f64> {
        let big_e = self.epochs;
        if e < 1 || e > big_e {
            return Err(Error::Schedule(format!("epoch {e} outside 1..={big_e}")));
        }
        let (e, big_e) = (e as f64, big_e as f64);
        let p = match self.kind {
            ScheduleKind::Quadratic { p_r } => p_r * (e - big_e).powi(2) / (big_e * big_e),
            ScheduleKind::Linear { p_r } => {
                if self.epochs == 1 {
                    0.0
                } else {
                    p_r * (big_e - e) / (big_e - 1.0)
                }
            }
            ScheduleKind::Exponential { p_r, lambda } => {
                if self.epochs == 1 {
                    p_r
                } else {
                    p_r * (-lambda * (e - 1.0) / (big_e - 1.0)).exp()
                }
            }
            ScheduleKind::Fixed { p } => p,
        };
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::Quadratic { p_r } => format!("quadratic(p_r={p_r})"),
            ScheduleKind::Linear { p_r } => format!("linear(p_r={p_r})"),
            ScheduleKind::Exponential { p_r, lambda } => {
                format!("exponential(p_r={p_r},lambda={lambda})")
            }
            ScheduleKind::Fixed { p } => format!("fixed(p={p})"),
        }
    }
}

/// Bernoulli(p) draw. Always consumes one uniform so streams stay aligned
/// across schedules.
pub fn should_intervene(p: f64, rng: &mut Rng) -> bool {
    let u: f64 = rng.random();
    u < p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn quadratic_examples() {
        let s = Schedule::new(ScheduleKind::Quadratic { p_r: 0.3 }, 10).unwrap();
        assert_eq!(s.prob(10).unwrap(), 0.0);
        assert!((s.prob(1).unwrap() - 0.243).abs() < 1e-15);
    }

    #[test]
    fn fixed_is_constant() {
        let s = Schedule::new(ScheduleKind::Fixed { p: 0.75 }, 7).unwrap();
        for e in 1..=7 {
            assert_eq!(s.prob(e).unwrap(), 0.75);
        }
    }

    #[test]
    fn out_of_range_epoch() {
        let s = Schedule::new(ScheduleKind::Linear { p_r: 0.3 }, 5).unwrap();
        assert!(s.prob(0).is_err());
        assert!(s.prob(6).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(Schedule::new(ScheduleKind::Quadratic { p_r: 1.5 }, 5).is_err());
        assert!(Schedule::new(ScheduleKind::Exponential { p_r: 0.3, lambda: 0.0 }, 5).is_err());
        assert!(Schedule::new(ScheduleKind::Fixed { p: 0.5 }, 0).is_err());
    }

    #[test]
    fn single_epoch_conventions() {
        let lin = Schedule::new(ScheduleKind::Linear { p_r: 0.3 }, 1).unwrap();
        let exp = Schedule::new(ScheduleKind::Exponential { p_r: 0.3, lambda: 5.0 }, 1).unwrap();
        assert_eq!(lin.prob(1).unwrap(), 0.0);
        assert_eq!(exp.prob(1).unwrap(), 0.3);
    }

    #[test]
    fn bernoulli_extremes_and_rate() {
        let mut rng = rng_from_seed(11);
        assert!((0..1000).all(|_| !should_intervene(0.0, &mut rng)));
        assert!((0..1000).all(|_| should_intervene(1.0, &mut rng)));
        let hits = (0..10_000).filter(|_| should_intervene(0.3, &mut rng)).count();
        let rate = hits as f64 / 10_000.0;
        // sd = sqrt(0.21/10000) ≈ 0.0046; [0.27, 0.33] is about 6.5 sd wide each side.
        assert!((0.27..=0.33).contains(&rate), "rate {rate}");
    }
}
