//! White-box attribute-inference attack: an attacker is fitted on the deployed
//! model's output scores to recover the sensitive attribute, and its holdout
//! accuracy is the privacy score (0.5 on balanced groups means no leakage).

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PfaError, Result};
use crate::losses::{clamp_prob, prediction_loss};
use crate::nn::{Activation, AdamConfig, DenseMatrix, NetworkState};
use crate::trainer::{mlp, PfaModel};

pub const HISTOGRAM_BINS: usize = 20;
pub const MIN_PER_CLASS: usize = 20;
const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Also feed `X'` to the attacker (stronger than the scores-only default).
    pub attack_on_xprime: bool,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
    pub batch_size: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            attack_on_xprime: false,
            mlp_epochs: 60,
            mlp_lr: 1e-2,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackDataset {
    pub features: DenseMatrix,
    pub s: Vec<u8>,
    /// Class scores the features were derived from, kept for histograms.
    pub class_scores: Vec<f64>,
}

impl AttackDataset {
    pub fn new(features: DenseMatrix, s: Vec<u8>, class_scores: Vec<f64>) -> Result<Self> {
        if features.rows() != s.len() || class_scores.len() != s.len() {
            return Err(PfaError::Dimension(format!(
                "attack dataset has {} feature rows, {} labels, {} scores",
                features.rows(),
                s.len(),
                class_scores.len()
            )));
        }
        Ok(Self {
            features,
            s,
            class_scores,
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            class_scores: idx.iter().map(|&i| self.class_scores[i]).collect(),
        }
    }
}

pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

/// Features `[p, logit(p)]` from raw class scores.
pub fn score_features(scores: &[f64]) -> DenseMatrix {
    let data = scores.iter().flat_map(|&p| [p, logit(p)]).collect();
    DenseMatrix::from_vec(scores.len(), 2, data).expect("two features per score")
}

/// Attack features for `x` under `model` (eval mode).
pub fn build_attack_features(
    model: &PfaModel,
    x: &DenseMatrix,
    s: &[u8],
    cfg: &AttackConfig,
) -> Result<AttackDataset> {
    if x.rows() != s.len() {
        return Err(PfaError::Dimension(format!(
            "{} rows but {} labels",
            x.rows(),
            s.len()
        )));
    }
    let xp = model.transform(x)?;
    let scores = model.predictor.predict(&xp)?.into_vec();
    let mut features = score_features(&scores);
    if cfg.attack_on_xprime {
        features = features.hstack(&xp)?;
    }
    AttackDataset::new(features, s.to_vec(), scores)
}

/// Per-column standardization fitted on attacker training data.
#[derive(Debug, Clone, PartialEq)]
struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    fn fit(x: &DenseMatrix) -> Self {
        let n = x.rows().max(1) as f64;
        let (mean, std) = (0..x.cols())
            .map(|c| {
                let col = x.col_values(c);
                let m = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                (m, if var > 1e-24 { var.sqrt() } else { 1.0 })
            })
            .unzip();
        Self { mean, std }
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

/// Logistic regression fitted by Newton's method with a small ridge term.
#[derive(Debug, Clone, PartialEq)]
struct Logistic {
    w: Vec<f64>,
}

impl Logistic {
    const RIDGE: f64 = 1e-4;

    fn fit(x: &DenseMatrix, s: &[u8]) -> Self {
        let k = x.cols() + 1;
        let mut w = vec![0.0; k];
        for _ in 0..50 {
            let mut grad = vec![0.0; k];
            let mut hess = vec![0.0; k * k];
            for (r, &label) in s.iter().enumerate() {
                let row = x.row(r);
                let feat = |j: usize| if j == 0 { 1.0 } else { row[j - 1] };
                let z: f64 = (0..k).map(|j| w[j] * feat(j)).sum();
                let p = crate::nn::sigmoid(z);
                let err = p - f64::from(label);
                let wgt = (p * (1.0 - p)).max(1e-10);
                for i in 0..k {
                    grad[i] += err * feat(i);
                    for j in 0..k {
                        hess[i * k + j] += wgt * feat(i) * feat(j);
                    }
                }
            }
            let n = s.len() as f64;
            for i in 0..k {
                grad[i] = grad[i] / n + Self::RIDGE * w[i];
                for j in 0..k {
                    hess[i * k + j] /= n;
                }
                hess[i * k + i] += Self::RIDGE;
            }
            let Some(step) = solve(&mut hess, &mut grad, k) else {
                break;
            };
            let mut max_step: f64 = 0.0;
            for i in 0..k {
                w[i] -= step[i];
                max_step = max_step.max(step[i].abs());
            }
            if max_step < 1e-10 {
                break;
            }
        }
        Self { w }
    }

    fn predict(&self, x: &DenseMatrix) -> Vec<f64> {
        (0..x.rows())
            .map(|r| {
                let z = self.w[0]
                    + x.row(r)
                        .iter()
                        .zip(&self.w[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                crate::nn::sigmoid(z)
            })
            .collect()
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let pivot =
            (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))?;
        if a[pivot * k + col].abs() < 1e-14 {
            return None;
        }
        if pivot != col {
            for j in 0..k {
                a.swap(pivot * k + j, col * k + j);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..k {
            let f = a[row * k + col] / a[col * k + col];
            for j in col..k {
                a[row * k + j] -= f * a[col * k + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| a[i * k + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * k + i];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKind {
    Mlp,
    Logistic,
}

/// Both fitted attackers plus the holdout reserved for reporting.
#[derive(Debug, Clone)]
pub struct Attacker {
    scaler: Scaler,
    mlp: NetworkState,
    logistic: Logistic,
    pub holdout: AttackDataset,
}

impl Attacker {
    /// `P(s = 1)` from each attacker.
    pub fn predict(&self, features: &DenseMatrix) -> Result<[Vec<f64>; 2]> {
        let z = self.scaler.apply(features);
        Ok([self.mlp.predict(&z)?.into_vec(), self.logistic.predict(&z)])
    }
}

fn stratified_holdout(s: &[u8], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for g in [0u8, 1] {
        let mut idx: Vec<usize> = (0..s.len()).filter(|&i| s[i] == g).collect();
        idx.shuffle(&mut rng);
        let n_hold = ((idx.len() as f64) * HOLDOUT_FRACTION).round() as usize;
        hold.extend_from_slice(&idx[..n_hold]);
        train.extend_from_slice(&idx[n_hold..]);
    }
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

/// Fits both attackers on a stratified 80 % of `data`; the remaining 20 % is
/// kept in [`Attacker::holdout`].
pub fn train_attacker(data: &AttackDataset, cfg: &AttackConfig, seed: u64) -> Result<Attacker> {
    let ones = data.s.iter().filter(|&&v| v != 0).count();
    let zeros = data.len() - ones;
    if ones.min(zeros) < MIN_PER_CLASS {
        return Err(PfaError::DegenerateGroup(format!(
            "attacker needs at least {MIN_PER_CLASS} samples per group, got {zeros} and {ones}"
        )));
    }
    let (train_idx, hold_idx) = stratified_holdout(&data.s, seed);
    let train = data.subset(&train_idx);
    let scaler = Scaler::fit(&train.features);
    let x = scaler.apply(&train.features);

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut mlp = NetworkState::new(mlp(x.cols(), &[16, 16], Activation::Relu)?, &mut rng)?;
    let adam = AdamConfig::with_eta(cfg.mlp_lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.mlp_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select_rows(chunk);
            let sb: Vec<f64> = chunk.iter().map(|&i| f64::from(train.s[i])).collect();
            let (out, tape) = mlp.forward(&xb, true, &mut rng)?;
            let loss = prediction_loss(&sb, out.data())?;
            let (grads, _) = mlp.backward(&tape, &DenseMatrix::column(loss.grad))?;
            mlp.adam_step(&grads, &adam)?;
        }
    }
    let logistic = Logistic::fit(&x, &train.s);
    Ok(Attacker {
        scaler,
        mlp,
        logistic,
        holdout: data.subset(&hold_idx),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count_s0: usize,
    pub count_s1: usize,
    pub count_class_pred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_accuracy: f64,
    pub best_attacker: AttackerKind,
    pub mlp_accuracy: f64,
    pub logistic_accuracy: f64,
    pub majority_baseline: f64,
    /// Attacker `P(s=1)` split by true group, and the model's class score.
    pub score_histogram_by_group: Vec<HistogramBin>,
}

impl AttackReport {
    pub const HISTOGRAM_CSV_HEADER: &'static str =
        "bin_low,bin_high,count_s0,count_s1,count_class_pred";

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from(Self::HISTOGRAM_CSV_HEADER);
        out.push('\n');
        for b in &self.score_histogram_by_group {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.bin_low, b.bin_high, b.count_s0, b.count_s1, b.count_class_pred
            );
        }
        out
    }
}

fn bin_of(p: f64) -> usize {
    ((p.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Histogram over `[0, 1]` in 20 equal bins; the last bin is closed.
pub fn histogram(attack_scores: &[f64], s: &[u8], class_scores: &[f64]) -> Vec<HistogramBin> {
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            bin_low: i as f64 / HISTOGRAM_BINS as f64,
            bin_high: (i + 1) as f64 / HISTOGRAM_BINS as f64,
            count_s0: 0,
            count_s1: 0,
            count_class_pred: 0,
        })
        .collect();
    for (&p, &g) in attack_scores.iter().zip(s) {
        let b = &mut bins[bin_of(p)];
        if g == 0 {
            b.count_s0 += 1;
        } else {
            b.count_s1 += 1;
        }
    }
    for &p in class_scores {
        bins[bin_of(p)].count_class_pred += 1;
    }
    bins
}

fn hard_accuracy(scores: &[f64], s: &[u8]) -> f64 {
    let hits = scores
        .iter()
        .zip(s)
        .filter(|(&p, &g)| (p >= 0.5) == (g != 0))
        .count();
    hits as f64 / s.len() as f64
}

/// Scores both attackers on `holdout` and reports the stronger one.
pub fn evaluate_attack(attacker: &Attacker, holdout: &AttackDataset) -> Result<AttackReport> {
    if holdout.is_empty() {
        return Err(PfaError::Argument("empty holdout".into()));
    }
    let [mlp_scores, log_scores] = attacker.predict(&holdout.features)?;
    let mlp_accuracy = hard_accuracy(&mlp_scores, &holdout.s);
    let logistic_accuracy = hard_accuracy(&log_scores, &holdout.s);
    let (attack_accuracy, best_attacker, best_scores) = if mlp_accuracy >= logistic_accuracy {
        (mlp_accuracy, AttackerKind::Mlp, mlp_scores)
    } else {
        (logistic_accuracy, AttackerKind::Logistic, log_scores)
    };
    let ones = holdout.s.iter().filter(|&&v| v != 0).count() as f64;
    let n = holdout.len() as f64;
    Ok(AttackReport {
        attack_accuracy,
        best_attacker,
        mlp_accuracy,
        logistic_accuracy,
        majority_baseline: (ones / n).max(1.0 - ones / n),
        score_histogram_by_group: histogram(&best_scores, &holdout.s, &holdout.class_scores),
    })
}

/// Fits on 80 % and reports accuracy on the reserved 20 %. The histogram
/// covers the whole of `data` so its bins sum to `data.len()`.
pub fn run_attack(data: &AttackDataset, cfg: &AttackConfig, seed: u64) -> Result<AttackReport> {
    let attacker = train_attacker(data, cfg, seed)?;
    let mut report = evaluate_attack(&attacker, &attacker.holdout)?;
    let [mlp_scores, log_scores] = attacker.predict(&data.features)?;
    let best = match report.best_attacker {
        AttackerKind::Mlp => mlp_scores,
        AttackerKind::Logistic => log_scores,
    };
    report.score_histogram_by_group = histogram(&best, &data.s, &data.class_scores);
    Ok(report)
}
