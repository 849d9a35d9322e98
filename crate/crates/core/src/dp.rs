//! Input-noise differential-privacy baselines: Laplace (DP-L) and Gaussian
//! (DP-G) noise added once to the standardized training features, followed by
//! a plain predictor trained on the noised data.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{PfaError, Result};
use crate::nn::DenseMatrix;
use crate::run::{evaluate_scores, Method, RunConfig, RunRecord};
use crate::trainer::train_plain;

pub const SCHEDULE_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Gaussian,
    Laplacian,
}

impl Mechanism {
    pub fn method(self) -> Method {
        match self {
            Mechanism::Gaussian => Method::DpG,
            Mechanism::Laplacian => Method::DpL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Gaussian => "gaussian",
            Mechanism::Laplacian => "laplacian",
        }
    }
}

fn default_sensitivity() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    1e-5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    /// Per standardized column.
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    /// Gaussian mechanism only.
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(mechanism: Mechanism, epsilon: f64, seed: u64) -> Self {
        Self {
            mechanism,
            epsilon,
            sensitivity: default_sensitivity(),
            delta: default_delta(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(PfaError::Argument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.sensitivity > 0.0) {
            return Err(PfaError::Argument(format!(
                "sensitivity must be positive, got {}",
                self.sensitivity
            )));
        }
        if self.mechanism == Mechanism::Gaussian && !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PfaError::Argument(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Laplace `b = Δ/ε`; Gaussian `σ = Δ·√(2 ln(1.25/δ))/ε`.
    pub fn scale(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self.mechanism {
            Mechanism::Laplacian => self.sensitivity / self.epsilon,
            Mechanism::Gaussian => {
                self.sensitivity * (2.0 * (1.25 / self.delta).ln()).sqrt() / self.epsilon
            }
        })
    }

    /// Standard deviation of a single noise draw.
    pub fn noise_std(&self) -> Result<f64> {
        let scale = self.scale()?;
        Ok(match self.mechanism {
            Mechanism::Laplacian => scale * std::f64::consts::SQRT_2,
            Mechanism::Gaussian => scale,
        })
    }
}

/// `10^(-5 + k/2)` for `k = 0..13`: 1e-5 up to 10 with ratio √10.
pub fn epsilon_schedule() -> Vec<f64> {
    (0..SCHEDULE_LEN)
        .map(|k| 10f64.powf(-5.0 + k as f64 / 2.0))
        .collect()
}

/// Zero-mean Laplace draw via the inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -b * u.signum() * tail.ln();
        }
    }
}

/// Returns `x` plus i.i.d. noise of the configured mechanism.
pub fn add_noise(x: &DenseMatrix, cfg: &NoiseConfig) -> Result<DenseMatrix> {
    let scale = cfg.scale()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += match cfg.mechanism {
            Mechanism::Laplacian => sample_laplace(&mut rng, scale),
            Mechanism::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
        };
    }
    Ok(out)
}

/// Trains the predictor alone on noised training features and evaluates on
/// the clean test split through the same path as PFA.
pub fn run_noise_baseline(
    run_id: usize,
    train_data: &TabularDataset,
    test: &TabularDataset,
    noise: &NoiseConfig,
    config: &RunConfig,
) -> Result<RunRecord> {
    let start = std::time::Instant::now();
    let mut noised = train_data.clone();
    noised.x = add_noise(&train_data.x, noise)?;
    let (net, _) = train_plain(&noised, &config.train)?;
    let scores = net.predict(&test.x)?.into_vec();
    let (fairness, attack) =
        evaluate_scores(&scores, &test.x, test, &config.attack, config.attack_seed)?;
    let mut config = config.clone();
    config.noise = Some(*noise);
    Ok(RunRecord {
        run_id,
        method: noise.mechanism.method(),
        config,
        fairness,
        attack,
        trace_summary: None,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// One record per schedule point, all sharing the training and noise seeds.
pub fn run_schedule(
    train_data: &TabularDataset,
    test: &TabularDataset,
    mechanism: Mechanism,
    noise_seed: u64,
    config: &RunConfig,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    let points: Vec<(usize, f64)> = epsilon_schedule().into_iter().enumerate().collect();
    crate::harness::parallel_map(&points, jobs, |&(k, eps)| {
        run_noise_baseline(
            k,
            train_data,
            test,
            &NoiseConfig::new(mechanism, eps, noise_seed),
            config,
        )
    })
    .into_iter()
    .collect()
}

pub const SWEEP_CSV_HEADER: &str = "mechanism,epsilon,accuracy,dp_gap,attack_accuracy";

pub fn sweep_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        if let Some(n) = r.config.noise {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                n.mechanism.name(),
                n.epsilon,
                r.accuracy(),
                r.dp_gap(),
                r.attack_accuracy()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = epsilon_schedule();
        assert_eq!(s.len(), 13);
        assert!((s[0] - 1e-5).abs() < 1e-20);
        assert!((s[12] - 10.0).abs() < 1e-12);
        for w in s.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_scale_closed_form() {
        let c = NoiseConfig::new(Mechanism::Gaussian, 1.0, 0);
        assert!((c.scale().unwrap() - 4.844).abs() < 1e-3);
        assert_eq!(
            NoiseConfig::new(Mechanism::Laplacian, 1.0, 0)
                .scale()
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn laplace_variance() {
        let x = DenseMatrix::zeros(1_000_000, 1);
        let noised = add_noise(&x, &NoiseConfig::new(Mechanism::Laplacian, 1.0, 3)).unwrap();
        let d = noised.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!((var - 2.0).abs() / 2.0 < 0.02, "variance {var}");
    }

    #[test]
    fn noise_is_zero_mean() {
        let n = 100_000;
        let x = DenseMatrix::zeros(n, 2);
        for mech in [Mechanism::Laplacian, Mechanism::Gaussian] {
            let cfg = NoiseConfig::new(mech, 0.5, 11);
            let noised = add_noise(&x, &cfg).unwrap();
            let std = cfg.noise_std().unwrap();
            for c in 0..2 {
                let mean = noised.col_values(c).iter().sum::<f64>() / n as f64;
                assert!(
                    mean.abs() < 4.0 * std / (n as f64).sqrt(),
                    "{mech:?} mean {mean}"
                );
            }
        }
    }

    #[test]
    fn huge_epsilon_is_nearly_identity() {
        let x = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let out = add_noise(&x, &NoiseConfig::new(Mechanism::Gaussian, 1e12, 0)).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_strictly_decreases_along_schedule() {
        for mech in [Mechanism::Laplacian, Mechanism::Gaussian] {
            let stds: Vec<f64> = epsilon_schedule()
                .into_iter()
                .map(|e| NoiseConfig::new(mech, e, 0).noise_std().unwrap())
                .collect();
            assert!(stds.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = DenseMatrix::zeros(1, 1);
        assert!(add_noise(&x, &NoiseConfig::new(Mechanism::Laplacian, 0.0, 0)).is_err());
        let mut g = NoiseConfig::new(Mechanism::Gaussian, 1.0, 0);
        g.delta = 1.0;
        assert!(add_noise(&x, &g).is_err());
    }
}
