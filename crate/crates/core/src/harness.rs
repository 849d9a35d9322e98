//! Experiment orchestration: coefficient/learning-rate sweeps, threshold
//! filtering with top-k aggregation, the three-row weight ablation and
//! plot-data export.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{PfaError, Result};
use crate::losses::CoeffTriple;
use crate::run::{run_pfa, RunConfig, RunRecord};

pub const DEFAULT_DP_MAX: f64 = 0.05;
pub const DEFAULT_ATTACK_MAX: f64 = 0.65;
pub const DEFAULT_TOP_K: usize = 5;
pub const LR_RANGE: (f64, f64) = (1e-4, 1e-2);

/// The three fixed weight settings of the ablation: α = 0, β = 0, γ = 0.
pub const ABLATION_SETTINGS: [(f64, f64, f64); 3] =
    [(0.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.5, 0.5, 0.0)];

/// Maps `f` over `items`, on up to `jobs` threads; output order follows input.
pub fn parallel_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub dp_max: f64,
    pub attack_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            dp_max: DEFAULT_DP_MAX,
            attack_max: DEFAULT_ATTACK_MAX,
        }
    }
}

impl Thresholds {
    pub fn passes(&self, r: &RunRecord) -> bool {
        r.dp_gap() <= self.dp_max && r.attack_accuracy() <= self.attack_max
    }

    /// Normalized excess over both thresholds; 0 for passing records.
    pub fn excess(&self, r: &RunRecord) -> f64 {
        let over = |v: f64, max: f64| (v - max).max(0.0) / max.max(1e-12);
        over(r.dp_gap(), self.dp_max) + over(r.attack_accuracy(), self.attack_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Run ids in selection order.
    pub selected: Vec<usize>,
    pub n_passing: usize,
    /// Number of selected runs that came from the nearest-to-threshold fill.
    pub n_fallback: usize,
    pub accuracy: MeanStd,
    pub dp_gap: MeanStd,
    pub attack_accuracy: MeanStd,
}

/// Picks the `k` most accurate records meeting both thresholds; if fewer
/// qualify, fills up with the records of smallest normalized excess.
pub fn filter_and_aggregate(
    records: &[RunRecord],
    thresholds: &Thresholds,
    k: usize,
) -> Result<Aggregates> {
    if records.is_empty() || k == 0 {
        return Err(PfaError::Argument(
            "aggregation needs records and k ≥ 1".into(),
        ));
    }
    let by_accuracy = |a: &&RunRecord, b: &&RunRecord| {
        b.accuracy()
            .total_cmp(&a.accuracy())
            .then(a.run_id.cmp(&b.run_id))
    };
    let mut passing: Vec<&RunRecord> = records.iter().filter(|r| thresholds.passes(r)).collect();
    passing.sort_by(by_accuracy);
    let n_passing = passing.len();
    let mut selected: Vec<&RunRecord> = passing.into_iter().take(k).collect();
    let mut n_fallback = 0;
    if selected.len() < k {
        let mut rest: Vec<&RunRecord> = records.iter().filter(|r| !thresholds.passes(r)).collect();
        rest.sort_by(|a, b| {
            thresholds
                .excess(a)
                .total_cmp(&thresholds.excess(b))
                .then_with(|| by_accuracy(a, b))
        });
        let fill = (k - selected.len()).min(rest.len());
        selected.extend(rest.into_iter().take(fill));
        n_fallback = fill;
    }
    let pick =
        |f: fn(&RunRecord) -> f64| MeanStd::of(&selected.iter().map(|r| f(r)).collect::<Vec<_>>());
    Ok(Aggregates {
        selected: selected.iter().map(|r| r.run_id).collect(),
        n_passing,
        n_fallback,
        accuracy: pick(RunRecord::accuracy),
        dp_gap: pick(RunRecord::dp_gap),
        attack_accuracy: pick(RunRecord::attack_accuracy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run_id: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Runs aborted by a numeric failure; they take no part in aggregation.
    #[serde(default)]
    pub failed: Vec<FailedRun>,
    pub thresholds: Thresholds,
    pub k: usize,
    pub aggregates: Aggregates,
}

impl SweepResult {
    /// Recomputes the aggregates from the records alone.
    pub fn reaggregate(&self, thresholds: &Thresholds, k: usize) -> Result<Aggregates> {
        filter_and_aggregate(&self.records, thresholds, k)
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Uniform draw from the probability simplex (flat Dirichlet).
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R) -> CoeffTriple {
    let e: [f64; 3] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
    let t: f64 = e.iter().sum();
    CoeffTriple::new(e[0] / t, e[1] / t, e[2] / t)
}

/// Draws `n` run configurations from `base`: simplex coefficients,
/// log-uniform learning rates and fresh training/attack seeds.
pub fn sample_configs(base: &RunConfig, n: usize, seed: u64) -> Vec<RunConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut cfg = base.clone();
            cfg.train.coeffs = sample_simplex(&mut rng);
            cfg.train.lr_g = log_uniform(&mut rng, LR_RANGE);
            cfg.train.lr_p = log_uniform(&mut rng, LR_RANGE);
            cfg.train.lr_d = log_uniform(&mut rng, LR_RANGE);
            cfg.train.seed = rng.random();
            cfg.attack_seed = rng.random();
            cfg
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub n_configs: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub k: usize,
    pub jobs: usize,
}

/// Runs sampled configurations (concurrently when `jobs > 1`), merges them in
/// run-id order and aggregates.
pub fn sweep(
    train_data: &TabularDataset,
    test: &TabularDataset,
    base: &RunConfig,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if opts.n_configs == 0 {
        return Err(PfaError::Argument("n_configs must be at least 1".into()));
    }
    let configs: Vec<(usize, RunConfig)> = sample_configs(base, opts.n_configs, opts.seed)
        .into_iter()
        .enumerate()
        .collect();
    let outcomes = parallel_map(&configs, opts.jobs, |(id, cfg)| {
        run_pfa(*id, train_data, test, cfg).map(|(record, _)| record)
    });
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (outcome, (id, _)) in outcomes.into_iter().zip(&configs) {
        match outcome {
            Ok(r) => records.push(r),
            Err(PfaError::Numeric(msg)) => failed.push(FailedRun {
                run_id: *id,
                error: msg.lines().next().unwrap_or_default().to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(PfaError::Numeric("every sweep run diverged".into()));
    }
    let aggregates = filter_and_aggregate(&records, &opts.thresholds, opts.k)?;
    Ok(SweepResult {
        seed: opts.seed,
        records,
        failed,
        thresholds: opts.thresholds,
        k: opts.k,
        aggregates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub coeffs: CoeffTriple,
    /// Means over seeds.
    pub accuracy: f64,
    pub fairness: f64,
    pub privacy: f64,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str = "alpha,beta,gamma,accuracy,fairness,privacy";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.coeffs.alpha, r.coeffs.beta, r.coeffs.gamma, r.accuracy, r.fairness, r.privacy
            );
        }
        out
    }
}

/// The three fixed settings with coefficient adaptation off, each trained
/// once per seed (the training seed; the attack seed follows it).
pub fn run_ablation(
    train_data: &TabularDataset,
    test: &TabularDataset,
    base: &RunConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(PfaError::Argument(
            "ablation needs at least one seed".into(),
        ));
    }
    let jobs_list: Vec<(usize, RunConfig)> = ABLATION_SETTINGS
        .iter()
        .flat_map(|&(a, b, g)| seeds.iter().map(move |&s| (a, b, g, s)))
        .enumerate()
        .map(|(id, (a, b, g, s))| {
            let mut cfg = base.clone();
            cfg.train.coeffs = CoeffTriple::new(a, b, g);
            cfg.train.coeff_opt_enabled = false;
            cfg.train.seed = s;
            cfg.attack_seed = s;
            (id, cfg)
        })
        .collect();
    let mut records = parallel_map(&jobs_list, jobs, |(id, cfg)| {
        run_pfa(*id, train_data, test, cfg).map(|(record, _)| record)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?
    .into_iter();
    let rows = ABLATION_SETTINGS
        .iter()
        .map(|&(a, b, g)| {
            let recs: Vec<RunRecord> = records.by_ref().take(seeds.len()).collect();
            let mean =
                |f: fn(&RunRecord) -> f64| recs.iter().map(f).sum::<f64>() / recs.len() as f64;
            AblationRow {
                coeffs: CoeffTriple::new(a, b, g),
                accuracy: mean(RunRecord::accuracy),
                fairness: mean(RunRecord::dp_gap),
                privacy: mean(RunRecord::attack_accuracy),
                records: recs,
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

pub const SCATTER_CSV_HEADER: &str = "fairness,attack_accuracy,accuracy,generator_loss";

pub fn scatter_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(SCATTER_CSV_HEADER);
    out.push('\n');
    for r in records {
        let g = r
            .trace_summary
            .map_or_else(String::new, |t| format!("{}", t.test.generator));
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.dp_gap(),
            r.attack_accuracy(),
            r.accuracy(),
            g
        );
    }
    out
}

/// Writes `scatter.csv` plus one `histogram_run_<id>.csv` per record.
pub fn emit_plot_data(records: &[RunRecord], out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(records.len() + 1);
    let scatter = out_dir.join("scatter.csv");
    std::fs::write(&scatter, scatter_csv(records))?;
    written.push(scatter);
    for r in records {
        let path = out_dir.join(format!("histogram_run_{}.csv", r.run_id));
        std::fs::write(&path, r.attack.histogram_csv())?;
        written.push(path);
    }
    Ok(written)
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(PfaError::Argument(
            "spearman needs two equal-length series of length ≥ 2".into(),
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(PfaError::Numeric(
            "spearman undefined for a constant series".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackConfig, AttackReport, AttackerKind};
    use crate::metrics::{evaluate, EvaluationInput};
    use crate::run::Method;
    use crate::trainer::TrainConfig;

    pub(crate) fn record(run_id: usize, accuracy: f64, dp: f64, attack: f64) -> RunRecord {
        let mut fairness = evaluate(&EvaluationInput::new(&[0, 1], &[0.0, 1.0], &[0, 1])).unwrap();
        fairness.accuracy = accuracy;
        fairness.dp_gap = dp;
        RunRecord {
            run_id,
            method: Method::Pfa,
            config: RunConfig {
                train: TrainConfig::default(),
                attack: AttackConfig::default(),
                attack_seed: 0,
                noise: None,
            },
            fairness,
            attack: AttackReport {
                attack_accuracy: attack,
                best_attacker: AttackerKind::Mlp,
                mlp_accuracy: attack,
                logistic_accuracy: attack,
                majority_baseline: 0.5,
                score_histogram_by_group: Vec::new(),
            },
            trace_summary: None,
            wall_time: 0.0,
        }
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(
            MeanStd::of(&[0.7]),
            MeanStd {
                mean: 0.7,
                std: 0.0
            }
        );
        let m = MeanStd::of(&[0.4; 5]);
        assert!((m.mean - 0.4).abs() < 1e-15 && m.std == 0.0);
        let m = MeanStd::of(&[1.0, 3.0]);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn filtering_matches_manual_trace() {
        let recs = vec![
            record(0, 0.90, 0.10, 0.60), // fails dp, excess 1.0
            record(1, 0.80, 0.02, 0.60), // passes
            record(2, 0.85, 0.04, 0.64), // passes
            record(3, 0.95, 0.03, 0.80), // fails attack, excess 0.2308
            record(4, 0.70, 0.05, 0.65), // passes (boundary)
            record(5, 0.99, 0.06, 0.66), // fails both, excess 0.2 + 0.01538
        ];
        let agg = filter_and_aggregate(&recs, &Thresholds::default(), 5).unwrap();
        assert_eq!(agg.n_passing, 3);
        assert_eq!(agg.selected, vec![2, 1, 4, 5, 3]);
        assert_eq!(agg.n_fallback, 2);
        let agg = filter_and_aggregate(&recs, &Thresholds::default(), 1).unwrap();
        assert_eq!(agg.selected, vec![2]);
        assert_eq!(agg.accuracy.std, 0.0);
    }

    #[test]
    fn impossible_thresholds_fall_back() {
        let recs = vec![record(0, 0.9, 0.10, 0.6), record(1, 0.8, 0.02, 0.6)];
        let t = Thresholds {
            dp_max: 0.0,
            attack_max: 0.65,
        };
        let agg = filter_and_aggregate(&recs, &t, 1).unwrap();
        assert_eq!(agg.n_passing, 0);
        assert_eq!(agg.selected, vec![1]);
    }

    #[test]
    fn simplex_samples_and_lr_range() {
        let base = RunConfig {
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            attack_seed: 0,
            noise: None,
        };
        let cfgs = sample_configs(&base, 200, 4);
        for c in &cfgs {
            let s = c.train.coeffs.as_array();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12 && s.iter().all(|&v| v >= 0.0));
            for lr in [c.train.lr_g, c.train.lr_p, c.train.lr_d] {
                assert!((1e-4..=1e-2).contains(&lr));
            }
        }
        assert_eq!(cfgs, sample_configs(&base, 200, 4));
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..50).collect();
        assert_eq!(
            parallel_map(&v, 4, |x| x * 2),
            parallel_map(&v, 1, |x| x * 2)
        );
    }

    #[test]
    fn scatter_rows() {
        let recs = vec![record(0, 0.9, 0.1, 0.6), record(1, 0.8, 0.02, 0.6)];
        let csv = scatter_csv(&recs);
        assert!(csv.starts_with("fairness,attack_accuracy,accuracy,generator_loss\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
