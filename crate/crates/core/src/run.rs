//! One evaluated training run and the evaluation path shared by every method.

use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, score_features, AttackConfig, AttackDataset, AttackReport};
use crate::data::TabularDataset;
use crate::dp::NoiseConfig;
use crate::error::Result;
use crate::losses::CoeffTriple;
use crate::metrics::{evaluate, EvaluationInput, FairnessReport};
use crate::nn::DenseMatrix;
use crate::trainer::{train, EpochLosses, PfaModel, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pfa,
    DpG,
    DpL,
    Plain,
}

/// Everything needed to replay a run on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub attack_seed: u64,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs: usize,
    /// Epoch-mean training losses of the last epoch.
    pub final_train: EpochLosses,
    /// Eval-mode losses on the test split under the final coefficients.
    pub test: EpochLosses,
    pub final_coeffs: CoeffTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub method: Method,
    pub config: RunConfig,
    pub fairness: FairnessReport,
    pub attack: AttackReport,
    #[serde(default)]
    pub trace_summary: Option<TraceSummary>,
    /// Seconds; not serialized so that metric files stay byte-reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    pub fn accuracy(&self) -> f64 {
        self.fairness.accuracy
    }

    pub fn dp_gap(&self) -> f64 {
        self.fairness.dp_gap
    }

    pub fn attack_accuracy(&self) -> f64 {
        self.attack.attack_accuracy
    }
}

/// Fairness metrics and the inference attack for a set of class scores.
///
/// `representation` is what the attacker additionally sees when
/// `attack_on_xprime` is set.
pub fn evaluate_scores(
    scores: &[f64],
    representation: &DenseMatrix,
    test: &TabularDataset,
    attack: &AttackConfig,
    attack_seed: u64,
) -> Result<(FairnessReport, AttackReport)> {
    let fairness = evaluate(&EvaluationInput::new(&test.y, scores, &test.s))?;
    let mut features = score_features(scores);
    if attack.attack_on_xprime {
        features = features.hstack(representation)?;
    }
    let data = AttackDataset::new(features, test.s.clone(), scores.to_vec())?;
    let report = run_attack(&data, attack, attack_seed)?;
    Ok((fairness, report))
}

/// Evaluates a trained PFA model on `test`.
pub fn evaluate_pfa(
    model: &PfaModel,
    test: &TabularDataset,
    attack: &AttackConfig,
    attack_seed: u64,
) -> Result<(FairnessReport, AttackReport)> {
    let xp = model.transform(&test.x)?;
    let scores = model.predictor.predict(&xp)?.into_vec();
    evaluate_scores(&scores, &xp, test, attack, attack_seed)
}

/// Trains PFA on `train_data`, evaluates on `test`, and returns the record
/// together with the trained outcome.
pub fn run_pfa(
    run_id: usize,
    train_data: &TabularDataset,
    test: &TabularDataset,
    config: &RunConfig,
) -> Result<(RunRecord, TrainOutcome)> {
    let start = std::time::Instant::now();
    let outcome = train(train_data, &config.train)?;
    let (fairness, attack) =
        evaluate_pfa(&outcome.model, test, &config.attack, config.attack_seed)?;
    let final_coeffs = outcome.coeff_state.coeffs;
    let summary = TraceSummary {
        epochs: outcome.trace.records.len(),
        final_train: outcome.trace.last().map(|r| r.losses).unwrap_or_default(),
        test: outcome
            .model
            .evaluate_losses(test, &final_coeffs, config.train.pairing)?,
        final_coeffs,
    };
    let method = if config.train.coeffs == CoeffTriple::new(1.0, 0.0, 0.0)
        && !config.train.coeff_opt_enabled
    {
        Method::Plain
    } else {
        Method::Pfa
    };
    Ok((
        RunRecord {
            run_id,
            method,
            config: config.clone(),
            fairness,
            attack,
            trace_summary: Some(summary),
            wall_time: start.elapsed().as_secs_f64(),
        },
        outcome,
    ))
}
