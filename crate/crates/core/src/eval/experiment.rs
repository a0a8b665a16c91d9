//! Experiment drivers: single runs, the bias-breaking comparison and sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_schedule_label, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate, EvalReport};
use crate::eval::stats::{mean, paired, PairedComparison};
use crate::nnet::params::ModelParams;
use crate::trainer::{train, BaselineMode, RunManifest};
use crate::worldgen::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub mode: BaselineMode,
    pub config_hash: String,
    pub report: EvalReport,
    pub manifest: RunManifest,
}

/// Trains one model with run seed `seed` and evaluates it on the test splits.
pub fn run_single(ds: &Dataset, exp: &ExperimentConfig, seed: u64) -> Result<(ModelParams, RunResult)> {
    let model = ModelParams::init(exp.model_config(ds.vocab(), seed))?;
    let tc = exp.train_config(seed);
    let (params, manifest) = train(ds, model, &tc)?;
    let report = evaluate(&params, ds, tc.task, &exp.eval_config())?;
    Ok((
        params,
        RunResult {
            seed,
            mode: tc.baseline_mode,
            config_hash: exp.hash(),
            report,
            manifest,
        },
    ))
}

fn with_mode(exp: &ExperimentConfig, mode: BaselineMode) -> ExperimentConfig {
    let mut e = exp.clone();
    e.train.baseline_mode = mode;
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasBreakingReport {
    pub strength: f64,
    pub seeds: Vec<u64>,
    pub naive: Vec<RunResult>,
    pub ai: Vec<RunResult>,
    pub clean: PairedComparison,
    pub conflict: PairedComparison,
    /// AI versus naive; a win means AI takes the shortcut more often.
    pub shortcut: PairedComparison,
}

/// Trains naive and AI models on the same data and seeds and compares them on
/// the clean and bias-conflict test splits.
pub fn bias_breaking_experiment(ds: &Dataset, exp: &ExperimentConfig, seeds: &[u64]) -> Result<BiasBreakingReport> {
    if ds.test_conflict.is_empty() {
        return Err(Error::Eval("bias breaking needs a non-empty conflict split".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Eval("bias breaking needs at least one seed".into()));
    }
    let jobs: Vec<(BaselineMode, u64)> = [BaselineMode::Naive, BaselineMode::Ai]
        .into_iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(m, s)| run_single(ds, &with_mode(exp, m), s).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let (naive, ai): (Vec<_>, Vec<_>) = results.into_iter().partition(|r| r.mode == BaselineMode::Naive);
    let col = |rs: &[RunResult], f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    let conflict = |r: &EvalReport| r.conflict_accuracy.unwrap_or(0.0);
    let shortcut = |r: &EvalReport| r.shortcut_rate.unwrap_or(0.0);
    Ok(BiasBreakingReport {
        strength: ds.config.bias.strength,
        seeds: seeds.to_vec(),
        clean: paired("clean_accuracy", "ai", "naive", col(&ai, |r| r.clean_accuracy), col(&naive, |r| r.clean_accuracy)),
        conflict: paired("conflict_accuracy", "ai", "naive", col(&ai, conflict), col(&naive, conflict)),
        shortcut: paired("shortcut_rate", "ai", "naive", col(&ai, shortcut), col(&naive, shortcut)),
        naive,
        ai,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PR,
    DisplacementRatio,
    Schedule,
    Mode,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PR => "p_r",
            SweepAxis::DisplacementRatio => "displacement_ratio",
            SweepAxis::Schedule => "schedule",
            SweepAxis::Mode => "mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SweepAxis::PR, SweepAxis::DisplacementRatio, SweepAxis::Schedule, SweepAxis::Mode]
            .into_iter()
            .find(|a| a.as_str() == s)
    }

    /// Default grid labels taken from the sweep settings.
    pub fn default_grid(self, exp: &ExperimentConfig) -> Vec<String> {
        match self {
            SweepAxis::PR => exp.sweep.p_r.iter().map(|x| x.to_string()).collect(),
            SweepAxis::DisplacementRatio => exp.sweep.displacement_ratio.iter().map(|x| x.to_string()).collect(),
            SweepAxis::Schedule => exp.sweep.schedules.clone(),
            SweepAxis::Mode => exp.sweep.modes.iter().map(|m| m.as_str().to_string()).collect(),
        }
    }
}

/// Applies one grid value of `axis` to a copy of `exp`.
pub fn grid_config(exp: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut e = exp.clone();
    let num = || {
        value
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad {} grid value {value:?}", axis.as_str())))
    };
    match axis {
        SweepAxis::PR => e.schedule.p_r = num()?,
        SweepAxis::DisplacementRatio => e.policy.displacement_ratio = num()?,
        SweepAxis::Schedule => e.schedule = parse_schedule_label(value, &exp.schedule)?,
        SweepAxis::Mode => {
            e.train.baseline_mode = BaselineMode::parse(value)
                .ok_or_else(|| Error::Config(format!("unknown baseline mode {value:?}")))?
        }
    }
    e.validate()?;
    Ok(e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub config_hash: String,
    pub clean_accuracy: f64,
    pub conflict_accuracy: Option<f64>,
    pub shortcut_rate: Option<f64>,
    pub admission_displacement: Option<f64>,
    pub admission_perturbation: Option<f64>,
    pub unknown_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub grid: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Per-seed values of a metric at one grid value, in seed order.
    pub fn values(&self, value: &str, metric: fn(&SweepRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.value == value).map(metric).collect()
    }

    pub fn mean(&self, value: &str, metric: fn(&SweepRow) -> f64) -> f64 {
        mean(&self.values(value, metric))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "axis,value,seed,config_hash,clean_accuracy,conflict_accuracy,shortcut_rate,\
             admission_displacement,admission_perturbation,unknown_rate\n",
        );
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.axis,
                r.value,
                r.seed,
                r.config_hash,
                r.clean_accuracy,
                opt(r.conflict_accuracy),
                opt(r.shortcut_rate),
                opt(r.admission_displacement),
                opt(r.admission_perturbation),
                opt(r.unknown_rate)
            );
        }
        s
    }
}

pub fn sweep_row(axis: SweepAxis, value: &str, r: &RunResult) -> SweepRow {
    SweepRow {
        axis: axis.as_str().into(),
        value: value.into(),
        seed: r.seed,
        config_hash: r.config_hash.clone(),
        clean_accuracy: r.report.clean_accuracy,
        conflict_accuracy: r.report.conflict_accuracy,
        shortcut_rate: r.report.shortcut_rate,
        admission_displacement: r.report.admission_accuracy.get("displacement").copied(),
        admission_perturbation: r.report.admission_accuracy.get("perturbation").copied(),
        unknown_rate: r.report.unknown_rate,
    }
}

/// One trained run per grid value and seed; rows come out in grid order,
/// then seed order.
pub fn sweep(ds: &Dataset, exp: &ExperimentConfig, axis: SweepAxis, grid: &[String], seeds: &[u64]) -> Result<SweepTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Eval("sweep needs a non-empty grid and seed list".into()));
    }
    let configs = grid
        .iter()
        .map(|v| grid_config(exp, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(g, s)| run_single(ds, &configs[g], s).map(|(_, r)| sweep_row(axis, &grid[g], &r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis,
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::dataset::build_dataset;

    fn tiny() -> (Dataset, ExperimentConfig) {
        let mut exp = ExperimentConfig::default();
        exp.dataset.n_train = 200;
        exp.dataset.n_test = 60;
        exp.dataset.n_conflict = 20;
        exp.dataset.video_dim = 16;
        exp.model.hidden_dim = 16;
        exp.model.embed_dim = 8;
        exp.train.epochs = 2;
        (build_dataset(&exp.dataset).unwrap(), exp)
    }

    #[test]
    fn sweep_rows_cover_grid_and_seeds() {
        let (ds, exp) = tiny();
        let grid = vec!["0".to_string(), "1".to_string()];
        let t = sweep(&ds, &exp, SweepAxis::DisplacementRatio, &grid, &[0, 1, 2]).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.to_csv().lines().count(), 7);
        assert_eq!(t.rows[3].value, "1");
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.clean_accuracy)));
    }

    #[test]
    fn bad_grid_values_are_rejected() {
        let (ds, exp) = tiny();
        assert!(sweep(&ds, &exp, SweepAxis::PR, &["1.5".into()], &[0]).is_err());
        assert!(sweep(&ds, &exp, SweepAxis::Mode, &["greedy".into()], &[0]).is_err());
        assert!(sweep(&ds, &exp, SweepAxis::PR, &[], &[0]).is_err());
    }

    #[test]
    fn bias_breaking_pairs_modes_by_seed() {
        let (ds, exp) = tiny();
        let r = bias_breaking_experiment(&ds, &exp, &[3, 4]).unwrap();
        assert_eq!(r.naive.len(), 2);
        assert!(r.naive.iter().all(|x| x.mode == BaselineMode::Naive));
        assert!(r.ai.iter().all(|x| x.mode == BaselineMode::Ai));
        assert_eq!(r.ai[0].seed, 3);
        assert_eq!(r.naive[0].manifest.dataset_hash, r.ai[0].manifest.dataset_hash);
    }
}
