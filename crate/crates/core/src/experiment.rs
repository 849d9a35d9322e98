//! File-producing entry points behind each CLI subcommand.
//!
//! Every command is a pure function of (dataset bytes, [`ExperimentConfig`],
//! master seed): metric JSON files are written with a stable layout and no
//! timing information, so reruns are byte-identical. Wall-clock times go to
//! separate `timings.csv` files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, score_features, AttackConfig, AttackDataset};
use crate::data::{
    prepare, stratified_split, synth_biased, write_csv, DatasetSpec, SynthConfig, TabularDataset,
};
use crate::dp::{run_schedule, sweep_csv, Mechanism};
use crate::error::{PfaError, Result};
use crate::harness::{
    emit_plot_data, filter_and_aggregate, run_ablation, sweep, SweepOptions, SweepResult,
    Thresholds,
};
use crate::run::{run_pfa, RunConfig, RunRecord};
use crate::trainer::{load_checkpoint, save_checkpoint, TrainConfig};

fn default_test_fraction() -> f64 {
    0.2
}

fn default_n_configs() -> usize {
    50
}

fn default_k() -> usize {
    crate::harness::DEFAULT_TOP_K
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub attack: AttackConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Used when no dataset spec is given.
    pub synth: SynthConfig,
    #[serde(default = "default_n_configs")]
    pub n_configs: usize,
    pub thresholds: Thresholds,
    #[serde(default = "default_k")]
    pub top_k: usize,
    /// Training seeds per ablation row / noise schedule.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            test_fraction: default_test_fraction(),
            synth: SynthConfig::default(),
            n_configs: default_n_configs(),
            thresholds: Thresholds::default(),
            top_k: default_k(),
            repeats: default_repeats(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PfaError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PfaError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PfaError::Config(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.n_configs == 0 || self.top_k == 0 || self.repeats == 0 {
            return Err(PfaError::Config(
                "n_configs, top_k and repeats must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Shared command context: configuration, master seed, output directory,
/// optional dataset spec, and worker count.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub jobs: usize,
}

impl Context {
    /// Base run configuration derived from the master seed.
    pub fn run_config(&self) -> RunConfig {
        let mut train = self.config.train.clone();
        train.seed = self.seed;
        RunConfig {
            train,
            attack: self.config.attack.clone(),
            attack_seed: self.seed,
            noise: None,
        }
    }

    /// Train/test split; the split seed is the master seed.
    pub fn load_data(&self) -> Result<(TabularDataset, TabularDataset)> {
        match &self.dataset {
            Some(path) => {
                let spec = DatasetSpec::from_json_file(path)?;
                prepare(&spec, self.config.test_fraction, self.seed)
            }
            None => {
                let ds = synth_biased(&self.config.synth)?;
                stratified_split(&ds, self.config.test_fraction, self.seed)
            }
        }
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_file(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out_file(name)?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

fn timings_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_id,wall_time_s\n");
    for r in records {
        let _ = writeln!(out, "{},{:.3}", r.run_id, r.wall_time);
    }
    out
}

/// Writes `synth.csv` and its dataset spec `synth.spec.json`.
pub fn cmd_synth(ctx: &Context) -> Result<Vec<PathBuf>> {
    let mut synth = ctx.config.synth;
    synth.seed = ctx.seed;
    let ds = synth_biased(&synth)?;
    let csv = ctx.out_file("synth.csv")?;
    let spec = write_csv(&ds, &csv)?;
    let mut rel = spec.clone();
    rel.csv_path = PathBuf::from("synth.csv");
    let spec_path = ctx.write_json("synth.spec.json", &rel)?;
    Ok(vec![csv, spec_path])
}

/// Single PFA run: `metrics.json`, `trace.csv`, `model.ckpt`.
pub fn cmd_train(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (train, test) = ctx.load_data()?;
    let cfg = ctx.run_config();
    let (record, outcome) = run_pfa(0, &train, &test, &cfg)?;
    let metrics = ctx.write_json("metrics.json", &record)?;
    let trace = ctx.write_text("trace.csv", &outcome.trace.to_csv())?;
    let ckpt = ctx.out_file("model.ckpt")?;
    let extra = serde_json::json!({
        "experiment": ctx.config,
        "seed": ctx.seed,
        "dataset": ctx.dataset,
    });
    save_checkpoint(
        &ckpt,
        &outcome.model,
        &cfg.train,
        &outcome.coeff_state,
        extra,
    )?;
    Ok(vec![metrics, trace, ckpt])
}

/// Coefficient / learning-rate sweep: `sweep.json`, plot data, timings.
pub fn cmd_sweep(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (train, test) = ctx.load_data()?;
    let opts = SweepOptions {
        n_configs: ctx.config.n_configs,
        seed: ctx.seed,
        thresholds: ctx.config.thresholds,
        k: ctx.config.top_k,
        jobs: ctx.jobs,
    };
    let result = sweep(&train, &test, &ctx.run_config(), &opts)?;
    let mut files = vec![ctx.write_json("sweep.json", &result)?];
    files.extend(emit_plot_data(&result.records, &ctx.out.join("plots"))?);
    files.push(ctx.write_text("timings.csv", &timings_csv(&result.records))?);
    Ok(files)
}

/// Three-row weight ablation: `ablation.json`, `ablation.csv`.
pub fn cmd_ablate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (train, test) = ctx.load_data()?;
    let seeds: Vec<u64> = (0..ctx.config.repeats as u64)
        .map(|i| ctx.seed + i)
        .collect();
    let table = run_ablation(&train, &test, &ctx.run_config(), &seeds, ctx.jobs)?;
    Ok(vec![
        ctx.write_json("ablation.json", &table)?,
        ctx.write_text("ablation.csv", &table.to_csv())?,
    ])
}

/// DP-G and DP-L over the ε schedule for each repeat seed:
/// `baseline.json`, `baseline.csv`.
pub fn cmd_baseline(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (train, test) = ctx.load_data()?;
    let mut records = Vec::new();
    for mechanism in [Mechanism::Gaussian, Mechanism::Laplacian] {
        for i in 0..ctx.config.repeats as u64 {
            let mut cfg = ctx.run_config();
            cfg.train.seed = ctx.seed + i;
            cfg.attack_seed = ctx.seed + i;
            records.extend(run_schedule(
                &train,
                &test,
                mechanism,
                ctx.seed + i,
                &cfg,
                ctx.jobs,
            )?);
        }
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.run_id = i;
    }
    Ok(vec![
        ctx.write_json("baseline.json", &records)?,
        ctx.write_text("baseline.csv", &sweep_csv(&records))?,
        ctx.write_text("baseline_timings.csv", &timings_csv(&records))?,
    ])
}

/// Re-attacks a saved model on the test split it was evaluated on:
/// `attack.json`, `attack_histogram.csv`.
pub fn cmd_attack(ctx: &Context, checkpoint: &Path) -> Result<Vec<PathBuf>> {
    let (model, header) = load_checkpoint(checkpoint)?;
    // Rebuild the original split unless the caller overrides the dataset.
    let mut data_ctx = ctx.clone();
    if let Some(exp) = header.extra.get("experiment") {
        data_ctx.config = serde_json::from_value(exp.clone())?;
    }
    if let Some(seed) = header.extra.get("seed").and_then(|v| v.as_u64()) {
        data_ctx.seed = seed;
    }
    if ctx.dataset.is_none() {
        data_ctx.dataset = header
            .extra
            .get("dataset")
            .and_then(|v| v.as_str())
            .map(PathBuf::from);
    }
    let (_, test) = data_ctx.load_data()?;
    let xp = model.transform(&test.x)?;
    let scores = model.predictor.predict(&xp)?.into_vec();
    let mut features = score_features(&scores);
    if ctx.config.attack.attack_on_xprime {
        features = features.hstack(&xp)?;
    }
    let data = AttackDataset::new(features, test.s.clone(), scores)?;
    let report = run_attack(&data, &ctx.config.attack, ctx.seed)?;
    Ok(vec![
        ctx.write_json("attack.json", &report)?,
        ctx.write_text("attack_histogram.csv", &report.histogram_csv())?,
    ])
}

/// Re-filters a saved sweep with the configured thresholds and `top_k`:
/// `report.json` plus plot data.
pub fn cmd_report(ctx: &Context, sweep_json: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(sweep_json)?;
    let result: SweepResult = serde_json::from_str(&text)?;
    let aggregates =
        filter_and_aggregate(&result.records, &ctx.config.thresholds, ctx.config.top_k)?;
    let report = serde_json::json!({
        "thresholds": ctx.config.thresholds,
        "k": ctx.config.top_k,
        "n_records": result.records.len(),
        "aggregates": aggregates,
    });
    let mut files = vec![ctx.write_json("report.json", &report)?];
    files.extend(emit_plot_data(&result.records, &ctx.out.join("plots"))?);
    Ok(files)
}
