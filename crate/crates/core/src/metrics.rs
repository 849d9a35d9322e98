//! Group-fairness metrics, accuracy and the baseline label bias.
//!
//! All gap metrics are absolute differences between the two sensitive groups
//! of a rate computed on thresholded predictions. A group (or label-group
//! cell) that a metric needs but that is empty is reported as an error: a
//! silent zero would look like perfect fairness.

use serde::{Deserialize, Serialize};

use crate::error::{PfaError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct EvaluationInput<'a> {
    pub y_true: &'a [u8],
    pub y_score: &'a [f64],
    pub s: &'a [u8],
    pub threshold: f64,
}

impl<'a> EvaluationInput<'a> {
    pub fn new(y_true: &'a [u8], y_score: &'a [f64], s: &'a [u8]) -> Self {
        Self {
            y_true,
            y_score,
            s,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn check(&self) -> Result<()> {
        let n = self.y_true.len();
        if self.y_score.len() != n || self.s.len() != n {
            return Err(PfaError::Dimension(format!(
                "evaluation lengths differ: y={n}, score={}, s={}",
                self.y_score.len(),
                self.s.len()
            )));
        }
        if n == 0 {
            return Err(PfaError::Argument("empty evaluation set".into()));
        }
        Ok(())
    }

    #[inline]
    fn hard(&self, i: usize) -> u8 {
        u8::from(self.y_score[i] >= self.threshold)
    }
}

/// Confusion counts for one sensitive group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl GroupCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }
    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }
}

/// Streams the evaluation set once and tallies per-group confusion counts.
fn group_counts(eval: &EvaluationInput<'_>) -> Result<[GroupCounts; 2]> {
    eval.check()?;
    let mut counts = [GroupCounts::default(); 2];
    for i in 0..eval.y_true.len() {
        let c = &mut counts[usize::from(eval.s[i] != 0)];
        match (eval.y_true[i] != 0, eval.hard(i) != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(counts)
}

fn ratio(num: usize, den: usize, what: &str, group: usize) -> Result<f64> {
    if den == 0 {
        return Err(PfaError::DegenerateGroup(format!(
            "group {group} has no {what}"
        )));
    }
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub count: usize,
    pub selection_rate: f64,
    pub error_rate: f64,
    /// `None` when the group has no positive labels.
    pub tpr: Option<f64>,
    /// `None` when the group has no negative labels.
    pub fpr: Option<f64>,
}

fn rates(c: &GroupCounts, group: usize) -> Result<GroupRates> {
    Ok(GroupRates {
        count: c.total(),
        selection_rate: ratio(c.tp + c.fp, c.total(), "members", group)?,
        error_rate: ratio(c.fp + c.fn_, c.total(), "members", group)?,
        tpr: (c.positives() > 0).then(|| c.tp as f64 / c.positives() as f64),
        fpr: (c.negatives() > 0).then(|| c.fp as f64 / c.negatives() as f64),
    })
}

fn required(rate: Option<f64>, what: &str, group: usize) -> Result<f64> {
    rate.ok_or_else(|| PfaError::DegenerateGroup(format!("group {group} has no {what}")))
}

/// Demographic-parity gap `|P(Ŷ=1|S=0) − P(Ŷ=1|S=1)|`.
pub fn dp_gap(eval: &EvaluationInput<'_>) -> Result<f64> {
    let [g0, g1] = group_counts(eval)?;
    Ok((ratio(g0.tp + g0.fp, g0.total(), "members", 0)?
        - ratio(g1.tp + g1.fp, g1.total(), "members", 1)?)
    .abs())
}

/// Equal-treatment (error-rate) gap `|P(Ŷ≠Y|S=0) − P(Ŷ≠Y|S=1)|`.
pub fn et_gap(eval: &EvaluationInput<'_>) -> Result<f64> {
    let [g0, g1] = group_counts(eval)?;
    Ok((ratio(g0.fp + g0.fn_, g0.total(), "members", 0)?
        - ratio(g1.fp + g1.fn_, g1.total(), "members", 1)?)
    .abs())
}

/// Equal-opportunity gap `|TPR₀ − TPR₁|`.
pub fn eop_gap(eval: &EvaluationInput<'_>) -> Result<f64> {
    let [g0, g1] = group_counts(eval)?;
    Ok((ratio(g0.tp, g0.positives(), "positive labels", 0)?
        - ratio(g1.tp, g1.positives(), "positive labels", 1)?)
    .abs())
}

/// Equalized-odds gap `(|ΔTPR| + |ΔFPR|) / 2`.
pub fn eodds_gap(eval: &EvaluationInput<'_>) -> Result<f64> {
    let [g0, g1] = group_counts(eval)?;
    let d_tpr = ratio(g0.tp, g0.positives(), "positive labels", 0)?
        - ratio(g1.tp, g1.positives(), "positive labels", 1)?;
    let d_fpr = ratio(g0.fp, g0.negatives(), "negative labels", 0)?
        - ratio(g1.fp, g1.negatives(), "negative labels", 1)?;
    Ok((d_tpr.abs() + d_fpr.abs()) / 2.0)
}

pub fn accuracy(eval: &EvaluationInput<'_>) -> Result<f64> {
    eval.check()?;
    let correct = (0..eval.y_true.len())
        .filter(|&i| eval.hard(i) == u8::from(eval.y_true[i] != 0))
        .count();
    Ok(correct as f64 / eval.y_true.len() as f64)
}

/// Demographic-parity gap of the raw labels, `|P(Y=1|S=0) − P(Y=1|S=1)|`.
pub fn baseline_bias(y: &[u8], s: &[u8]) -> Result<f64> {
    let score: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    dp_gap(&EvaluationInput::new(y, &score, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub dp_gap: f64,
    pub et_gap: f64,
    /// `None` when a group lacks positive labels.
    pub eop_gap: Option<f64>,
    /// `None` when a group lacks positive or negative labels.
    pub eodds_gap: Option<f64>,
    pub threshold: f64,
    pub group_rates: [GroupRates; 2],
}

impl FairnessReport {
    /// Column order of [`Self::csv_row`]: the four gaps, then accuracy.
    pub const CSV_HEADER: &'static str = "dp,et,eop,eodds,accuracy";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        format!(
            "{},{},{},{},{}",
            self.dp_gap,
            self.et_gap,
            opt(self.eop_gap),
            opt(self.eodds_gap),
            self.accuracy
        )
    }
}

/// Computes every metric in a single pass over the data.
///
/// Label-conditioned gaps are reported as `None` instead of failing when a
/// group lacks the required labels; both groups must be present.
pub fn evaluate(eval: &EvaluationInput<'_>) -> Result<FairnessReport> {
    let counts = group_counts(eval)?;
    let r0 = rates(&counts[0], 0)?;
    let r1 = rates(&counts[1], 1)?;
    let d_tpr = r0.tpr.zip(r1.tpr).map(|(a, b)| (a - b).abs());
    let d_fpr = r0.fpr.zip(r1.fpr).map(|(a, b)| (a - b).abs());
    let correct: usize = counts.iter().map(|c| c.tp + c.tn).sum();
    Ok(FairnessReport {
        accuracy: correct as f64 / eval.y_true.len() as f64,
        dp_gap: (r0.selection_rate - r1.selection_rate).abs(),
        et_gap: (r0.error_rate - r1.error_rate).abs(),
        eop_gap: d_tpr,
        eodds_gap: d_tpr.zip(d_fpr).map(|(a, b)| (a + b) / 2.0),
        threshold: eval.threshold,
        group_rates: [r0, r1],
    })
}

/// Strict variant of [`evaluate`] that fails when any gap is undefined.
pub fn evaluate_strict(eval: &EvaluationInput<'_>) -> Result<FairnessReport> {
    let report = evaluate(eval)?;
    for (g, r) in report.group_rates.iter().enumerate() {
        required(r.tpr, "positive labels", g)?;
        required(r.fpr, "negative labels", g)?;
    }
    Ok(report)
}
