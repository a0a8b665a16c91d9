use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use admitqa::eval::{evaluate, sweep, SweepAxis, SweepRow, SweepTable};
use admitqa::nnet::{grad_check, load_checkpoint, params_hash, save_checkpoint, GradCheckConfig, ModelParams};
use admitqa::trainer::{train, write_metrics_csv};
use admitqa::worldgen::io::{read_dataset, write_dataset, MANIFEST_FILE};
use admitqa::worldgen::{build_dataset, Dataset};
use admitqa::ExperimentConfig;
use serde_json::{json, Value};

use crate::{Cli, Command, GlobalArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<admitqa::Error> for CliError {
    fn from(e: admitqa::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    verbose: u8,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Wraps a payload with the resolved config and seed.
    fn artifact(&self, kind: &str, payload: Value) -> Value {
        json!({
            "kind": kind,
            "seed": self.seed,
            "config_hash": self.cfg.hash(),
            "config": self.cfg,
            "result": payload,
        })
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf> {
        let path = self.out.join(name);
        let bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&path, &bytes)?;
        Ok(path)
    }

    fn write_config(&self) -> Result<()> {
        write_file(&self.out.join("config.toml"), self.cfg.to_toml_string()?.as_bytes())
    }

    fn dataset(&self, data: Option<&Path>) -> Result<Dataset> {
        match data {
            Some(dir) => {
                if !dir.join(MANIFEST_FILE).exists() {
                    return Err(CliError::Usage(format!("dataset not found: {}", dir.display())));
                }
                self.log(format!("reading dataset from {}", dir.display()));
                Ok(read_dataset(dir)?)
            }
            None => {
                self.log("generating dataset from config");
                Ok(build_dataset(&self.cfg.dataset)?)
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) if !p.exists() => return Err(CliError::Usage(format!("config not found: {}", p.display()))),
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    for o in &g.overrides {
        cfg.apply_override(o).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(s) = g.seed {
        cfg.set_seed(s);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let cfg = resolve_config(g)?;
    fs::create_dir_all(&g.out)
        .map_err(|e| CliError::Usage(format!("output directory {} not writable: {e}", g.out.display())))?;
    let ctx = Ctx {
        seed: cfg.train.seed,
        cfg,
        out: g.out.clone(),
        verbose: g.verbose,
    };
    match cli.command {
        Command::Gen => gen(&ctx),
        Command::Train { data } => train_cmd(&ctx, data.as_deref()),
        Command::Eval { checkpoint, data } => eval_cmd(&ctx, &checkpoint, data.as_deref()),
        Command::Sweep { axis, grid, seeds, data } => sweep_cmd(&ctx, &axis, grid, seeds, data.as_deref()),
        Command::Gradcheck { tolerance, samples } => gradcheck_cmd(&ctx, tolerance, samples),
        Command::Report { input } => report_cmd(&ctx, input.as_deref().unwrap_or(&ctx.out)),
    }
}

fn gen(ctx: &Ctx) -> Result<()> {
    let ds = build_dataset(&ctx.cfg.dataset)?;
    let manifest = write_dataset(&ds, &ctx.out)?;
    ctx.write_config()?;
    println!(
        "dataset: train {} test {} conflict {}  hash {}",
        manifest.counts.train, manifest.counts.test, manifest.counts.test_conflict, manifest.content_hash
    );
    Ok(())
}

fn train_cmd(ctx: &Ctx, data: Option<&Path>) -> Result<()> {
    let ds = ctx.dataset(data)?;
    let model = ModelParams::init(ctx.cfg.model_config(ds.vocab(), ctx.seed))?;
    let tc = ctx.cfg.train_config(ctx.seed);
    ctx.log(format!("training {} ({}) for {} epochs", tc.task.as_str(), tc.baseline_mode.as_str(), tc.epochs));
    let (params, manifest) = train(&ds, model, &tc)?;
    save_checkpoint(&params, &ctx.out.join("checkpoint.json"))?;
    write_metrics_csv(&manifest.epochs, &ctx.out.join("metrics.csv"))?;
    ctx.write_config()?;
    ctx.write_json("run.json", &ctx.artifact("train", json!(manifest)))?;
    for m in &manifest.epochs {
        ctx.log(format!(
            "epoch {:>3}  p {:.4}  realized {:.4}  loss {:.5}",
            m.epoch, m.p_e, m.realized_rate, m.mean_loss
        ));
    }
    let last = manifest.epochs.last().map(|m| m.mean_loss).unwrap_or(f64::NAN);
    println!("trained: final loss {last:.5}  checkpoint {}", manifest.checkpoint_hash);
    Ok(())
}

fn eval_cmd(ctx: &Ctx, checkpoint: &Path, data: Option<&Path>) -> Result<()> {
    if !checkpoint.exists() {
        return Err(CliError::Usage(format!("checkpoint not found: {}", checkpoint.display())));
    }
    let params = load_checkpoint(checkpoint)?;
    let ds = ctx.dataset(data)?;
    let report = evaluate(&params, &ds, ctx.cfg.train.task, &ctx.cfg.eval_config())?;
    let payload = json!({ "checkpoint_hash": params_hash(&params)?, "report": report });
    ctx.write_json("eval.json", &ctx.artifact("eval", payload))?;
    println!("{}", format_report_row("eval", &report_fields(&json!(report))));
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, axis: &str, grid: Vec<String>, seeds: Vec<u64>, data: Option<&Path>) -> Result<()> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| {
        CliError::Usage(format!("unknown sweep axis {axis:?}; expected p_r, displacement_ratio, schedule or mode"))
    })?;
    let grid = if grid.is_empty() { axis.default_grid(&ctx.cfg) } else { grid };
    let seeds = if seeds.is_empty() { ctx.cfg.sweep.seeds.clone() } else { seeds };
    let ds = ctx.dataset(data)?;
    ctx.log(format!("sweep over {} x {} seeds", grid.len(), seeds.len()));
    let table = sweep(&ds, &ctx.cfg, axis, &grid, &seeds)?;
    let stem = format!("sweep_{}_{}", axis.as_str(), &ctx.cfg.hash()[..12]);
    write_file(&ctx.out.join(format!("{stem}.csv")), table.to_csv().as_bytes())?;
    ctx.write_json(&format!("{stem}.json"), &ctx.artifact("sweep", sweep_summary(&table)))?;
    print!("{}", sweep_text(&table));
    Ok(())
}

fn sweep_summary(t: &SweepTable) -> Value {
    let means: Vec<Value> = t
        .grid
        .iter()
        .map(|v| {
            json!({
                "value": v,
                "clean_accuracy": t.mean(v, |r| r.clean_accuracy),
                "conflict_accuracy": t.mean(v, |r| r.conflict_accuracy.unwrap_or(f64::NAN)),
                "admission_displacement": t.mean(v, |r| r.admission_displacement.unwrap_or(f64::NAN)),
                "admission_perturbation": t.mean(v, |r| r.admission_perturbation.unwrap_or(f64::NAN)),
                "unknown_rate": t.mean(v, |r| r.unknown_rate.unwrap_or(f64::NAN)),
            })
        })
        .collect();
    json!({ "table": t, "means": means })
}

fn sweep_text(t: &SweepTable) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        t.axis.as_str(),
        "clean",
        "conflict",
        "adm_disp",
        "adm_pert",
        "unknown"
    );
    for v in &t.grid {
        let m = |f: fn(&SweepRow) -> f64| fmt_num(t.mean(v, f));
        s.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            v,
            m(|r| r.clean_accuracy),
            m(|r| r.conflict_accuracy.unwrap_or(f64::NAN)),
            m(|r| r.admission_displacement.unwrap_or(f64::NAN)),
            m(|r| r.admission_perturbation.unwrap_or(f64::NAN)),
            m(|r| r.unknown_rate.unwrap_or(f64::NAN)),
        ));
    }
    s
}

fn gradcheck_cmd(ctx: &Ctx, tolerance: f64, samples: usize) -> Result<()> {
    let gc = GradCheckConfig {
        n_samples: samples,
        seed: ctx.seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&gc, tolerance)?;
    ctx.write_json("gradcheck.json", &ctx.artifact("gradcheck", json!({ "settings": gc, "report": report })))?;
    for c in &report.cases {
        ctx.log(format!("{:<12} max rel err {:.3e} ({})", c.case, c.max_rel_err, c.worst_tensor));
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!("gradcheck {verdict}: max rel err {:.3e} (tolerance {:.0e})", report.max_rel_err, tolerance);
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime("gradient check failed".into()))
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.4}")
    }
}

fn report_fields(report: &Value) -> Vec<(&'static str, f64)> {
    let get = |v: Option<&Value>| v.and_then(Value::as_f64).unwrap_or(f64::NAN);
    vec![
        ("clean", get(report.get("clean_accuracy"))),
        ("conflict", get(report.get("conflict_accuracy"))),
        ("adm_disp", get(report.pointer("/admission_accuracy/displacement"))),
        ("adm_pert", get(report.pointer("/admission_accuracy/perturbation"))),
        ("unknown", get(report.get("unknown_rate"))),
    ]
}

fn format_report_row(label: &str, fields: &[(&str, f64)]) -> String {
    let mut s = format!("{label:<28}");
    for (name, v) in fields {
        s.push_str(&format!(" {name} {:>7}", fmt_num(*v)));
    }
    s
}

fn report_cmd(ctx: &Ctx, input: &Path) -> Result<()> {
    let entries = fs::read_dir(input).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut lines = Vec::new();
    let mut merged = Vec::new();
    for p in &paths {
        let Ok(bytes) = fs::read(p) else { continue };
        let Ok(v) = serde_json::from_slice::<Value>(&bytes) else { continue };
        let Some(kind) = v.get("kind").and_then(Value::as_str) else { continue };
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("?");
        let seed = v.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let label = format!("{name} (seed {seed})");
        let result = &v["result"];
        match kind {
            "eval" => lines.push(format_report_row(&label, &report_fields(&result["report"]))),
            "train" => {
                let loss = result
                    .get("epochs")
                    .and_then(Value::as_array)
                    .and_then(|e| e.last())
                    .and_then(|m| m.get("mean_loss"))
                    .and_then(Value::as_f64)
                    .unwrap_or(f64::NAN);
                lines.push(format!("{label:<28} final loss {}", fmt_num(loss)));
            }
            "gradcheck" => {
                let passed = result.pointer("/report/passed").and_then(Value::as_bool).unwrap_or(false);
                let err = result.pointer("/report/max_rel_err").and_then(Value::as_f64).unwrap_or(f64::NAN);
                lines.push(format!("{label:<28} gradcheck {} max rel err {err:.3e}", if passed { "PASS" } else { "FAIL" }));
            }
            "sweep" => {
                let table: std::result::Result<SweepTable, _> = serde_json::from_value(result["table"].clone());
                if let Ok(t) = table {
                    lines.push(format!("{label}:"));
                    lines.extend(sweep_text(&t).lines().map(|l| format!("  {l}")));
                }
            }
            _ => continue,
        }
        merged.push(json!({ "file": name, "artifact": v }));
    }
    if merged.is_empty() {
        return Err(CliError::Runtime(format!("no artifacts found in {}", input.display())));
    }
    let text = lines.join("\n") + "\n";
    write_file(&ctx.out.join("report.txt"), text.as_bytes())?;
    let bundle = json!({ "kind": "report", "seed": ctx.seed, "config": ctx.cfg, "artifacts": merged });
    let bytes = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&ctx.out.join("report.json"), &bytes)?;
    print!("{text}");
    Ok(())
}

