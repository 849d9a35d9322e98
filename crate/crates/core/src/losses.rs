//! Scalar training objectives and their gradients w.r.t. predicted probabilities.
//!
//! Every probability is clamped into `[PROB_EPS, 1 - PROB_EPS]` before a log
//! is taken; gradients are evaluated at the clamped value.

use serde::{Deserialize, Serialize};

use crate::error::{PfaError, Result};

pub const PROB_EPS: f64 = 1e-7;

/// A loss value together with its gradient w.r.t. each input probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross entropy `-[y ln p + (1-y) ln(1-p)]` for one sample.
pub fn bce(y: f64, y_hat: f64) -> f64 {
    let p = clamp_prob(y_hat);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(PfaError::Argument("empty batch".into()));
    }
    if a != b {
        return Err(PfaError::Dimension(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Mean BCE of labels against probabilities.
pub fn mean_bce(labels: &[f64], probs: &[f64]) -> Result<LossGrad> {
    check_lengths(labels.len(), probs.len())?;
    let n = labels.len() as f64;
    let mut value = 0.0;
    let grad = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            value += bce(y, p);
            let p = clamp_prob(p);
            (p - y) / (n * p * (1.0 - p))
        })
        .collect();
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Task loss of the predictor: mean BCE of `y` against `y_hat`.
pub fn prediction_loss(y: &[f64], y_hat: &[f64]) -> Result<LossGrad> {
    mean_bce(y, y_hat)
}

/// Discriminator loss: mean BCE of the sensitive labels against `s_hat`.
pub fn privacy_loss(s: &[f64], s_hat: &[f64]) -> Result<LossGrad> {
    mean_bce(s, s_hat)
}

/// Demographic-parity penalty `|mean(ŷ | s=0) - mean(ŷ | s=1)|`.
///
/// The subgradient at a zero gap is taken as zero.
pub fn fairness_loss(y_hat: &[f64], s: &[f64]) -> Result<LossGrad> {
    check_lengths(y_hat.len(), s.len())?;
    let (mut sum0, mut sum1, mut n0, mut n1) = (0.0, 0.0, 0usize, 0usize);
    for (&p, &g) in y_hat.iter().zip(s) {
        if g >= 0.5 {
            sum1 += p;
            n1 += 1;
        } else {
            sum0 += p;
            n0 += 1;
        }
    }
    if n0 == 0 || n1 == 0 {
        return Err(PfaError::DegenerateGroup(format!(
            "fairness loss needs both groups (sizes {n0}, {n1})"
        )));
    }
    let diff = sum0 / n0 as f64 - sum1 / n1 as f64;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    let grad = s
        .iter()
        .map(|&g| {
            if g >= 0.5 {
                -sign / n1 as f64
            } else {
                sign / n0 as f64
            }
        })
        .collect();
    Ok(LossGrad {
        value: diff.abs(),
        grad,
    })
}

/// Fooling loss on discriminator outputs: mean of `-[ln p + ln(1-p)]`.
/// Its minimum, `2 ln 2`, is reached when every output is 0.5.
pub fn fooling_loss(d_out: &[f64]) -> Result<LossGrad> {
    if d_out.is_empty() {
        return Err(PfaError::Argument("empty batch".into()));
    }
    let n = d_out.len() as f64;
    let mut value = 0.0;
    let grad = d_out
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            value -= p.ln() + (1.0 - p).ln();
            (2.0 * p - 1.0) / (n * p * (1.0 - p))
        })
        .collect();
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Weights of the generator's composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffTriple {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CoeffTriple {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn uniform() -> Self {
        Self::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|c| c.is_finite() && *c >= 0.0)
        {
            Ok(())
        } else {
            Err(PfaError::Argument(format!(
                "coefficients must be nonnegative: {self:?}"
            )))
        }
    }

    /// Rescaled to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        self.validate()?;
        let total = self.alpha + self.beta + self.gamma;
        if total <= 0.0 {
            return Err(PfaError::Argument("coefficients sum to zero".into()));
        }
        Ok(Self::new(
            self.alpha / total,
            self.beta / total,
            self.gamma / total,
        ))
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Which loss each of β and γ weights (α always weights the prediction loss).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// β ↔ fairness, γ ↔ fooling.
    #[default]
    BetaFairness,
    /// β ↔ fooling, γ ↔ fairness.
    BetaFooling,
}

impl Pairing {
    /// Effective `(w_pred, w_fool, w_fair)` weights.
    pub fn weights(self, c: &CoeffTriple) -> (f64, f64, f64) {
        match self {
            Pairing::BetaFairness => (c.alpha, c.gamma, c.beta),
            Pairing::BetaFooling => (c.alpha, c.beta, c.gamma),
        }
    }
}

/// Generator composite objective.
pub fn generator_loss(
    l_pred: f64,
    l_fool: f64,
    l_fair: f64,
    c: &CoeffTriple,
    pairing: Pairing,
) -> f64 {
    let (w_pred, w_fool, w_fair) = pairing.weights(c);
    w_pred * l_pred + w_fool * l_fool + w_fair * l_fair
}
