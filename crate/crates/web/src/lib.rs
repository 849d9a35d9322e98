//! Browser bindings for three small demos: the coefficient optimizer's
//! trajectory under fixed losses, the noise-scale schedule of the DP
//! baselines, and a short training run on synthetic data.
//!
//! Each export takes plain numbers and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

pub mod demo {
    use super::*;
    use pfa_core::attack::{run_attack, score_features, AttackConfig, AttackDataset};
    use pfa_core::coeff::{update_hyperparameters, CoeffState};
    use pfa_core::data::{stratified_split, synth_biased, SynthConfig};
    use pfa_core::dp::{epsilon_schedule, Mechanism, NoiseConfig};
    use pfa_core::losses::{CoeffTriple, Pairing};
    use pfa_core::metrics::{evaluate, EvaluationInput};
    use pfa_core::nn::AdamConfig;
    use pfa_core::trainer::{train, TraceRecord, TrainConfig};

    fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
        serde_json::to_string(v).map_err(|e| e.to_string())
    }

    #[derive(Serialize)]
    struct CoeffPoint {
        step: u64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    }

    /// Coefficients after each of `steps` updates with constant losses.
    pub fn coeff_trajectory(
        l_pred: f64,
        l_fair: f64,
        l_fool: f64,
        steps: u32,
        eta: f64,
    ) -> Result<String, String> {
        let mut state = CoeffState::new(
            CoeffTriple::uniform(),
            AdamConfig::with_eta(eta),
            Pairing::BetaFairness,
        );
        let mut points = vec![CoeffPoint {
            step: 0,
            alpha: state.coeffs.alpha,
            beta: state.coeffs.beta,
            gamma: state.coeffs.gamma,
        }];
        for _ in 0..steps.min(10_000) {
            state = update_hyperparameters(&state, l_pred, l_fair, l_fool)
                .map_err(|e| e.to_string())?;
            points.push(CoeffPoint {
                step: state.t,
                alpha: state.coeffs.alpha,
                beta: state.coeffs.beta,
                gamma: state.coeffs.gamma,
            });
        }
        to_json(&points)
    }

    #[derive(Serialize)]
    struct NoisePoint {
        epsilon: f64,
        laplace_scale: f64,
        laplace_std: f64,
        gaussian_sigma: f64,
    }

    /// Noise scales along the ε schedule for the given sensitivity and δ.
    pub fn noise_schedule(sensitivity: f64, delta: f64) -> Result<String, String> {
        let points = epsilon_schedule()
            .into_iter()
            .map(|epsilon| {
                let mut lap = NoiseConfig::new(Mechanism::Laplacian, epsilon, 0);
                lap.sensitivity = sensitivity;
                let mut gauss = NoiseConfig::new(Mechanism::Gaussian, epsilon, 0);
                gauss.sensitivity = sensitivity;
                gauss.delta = delta;
                Ok(NoisePoint {
                    epsilon,
                    laplace_scale: lap.scale().map_err(|e| e.to_string())?,
                    laplace_std: lap.noise_std().map_err(|e| e.to_string())?,
                    gaussian_sigma: gauss.scale().map_err(|e| e.to_string())?,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        to_json(&points)
    }

    #[derive(Serialize)]
    struct DemoResult {
        trace: Vec<TraceRecord>,
        accuracy: f64,
        dp_gap: f64,
        attack_accuracy: f64,
        baseline_dp_gap: f64,
    }

    /// Trains on a small synthetic dataset and evaluates on its test split.
    #[allow(clippy::too_many_arguments)]
    pub fn train_demo(
        n: usize,
        bias: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        epochs: usize,
        adapt: bool,
        seed: u64,
    ) -> Result<String, String> {
        let err = |e: pfa_core::PfaError| e.to_string();
        let ds = synth_biased(&SynthConfig {
            n: n.clamp(200, 5000),
            d: 8,
            bias,
            leak: 0.3,
            seed,
        })
        .map_err(err)?;
        let (tr, te) = stratified_split(&ds, 0.25, seed).map_err(err)?;
        let cfg = TrainConfig {
            coeffs: CoeffTriple::new(alpha, beta, gamma),
            epochs: epochs.clamp(1, 50),
            batch_size: 64,
            coeff_opt_enabled: adapt,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&tr, &cfg).map_err(err)?;
        let scores = out.model.predict(&te.x).map_err(err)?;
        let report = evaluate(&EvaluationInput::new(&te.y, &scores, &te.s)).map_err(err)?;
        let attack_data = AttackDataset::new(score_features(&scores), te.s.clone(), scores.clone())
            .map_err(err)?;
        let attack = run_attack(&attack_data, &AttackConfig::default(), seed).map_err(err)?;
        to_json(&DemoResult {
            trace: out.trace.records,
            accuracy: report.accuracy,
            dp_gap: report.dp_gap,
            attack_accuracy: attack.attack_accuracy,
            baseline_dp_gap: pfa_core::metrics::baseline_bias(&te.y, &te.s).map_err(err)?,
        })
    }
}

#[wasm_bindgen]
pub fn coeff_trajectory(
    l_pred: f64,
    l_fair: f64,
    l_fool: f64,
    steps: u32,
    eta: f64,
) -> Result<String, JsValue> {
    demo::coeff_trajectory(l_pred, l_fair, l_fool, steps, eta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn noise_schedule(sensitivity: f64, delta: f64) -> Result<String, JsValue> {
    demo::noise_schedule(sensitivity, delta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn train_demo(
    n: u32,
    bias: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    epochs: u32,
    adapt: bool,
    seed: u32,
) -> Result<String, JsValue> {
    demo::train_demo(
        n as usize,
        bias,
        alpha,
        beta,
        gamma,
        epochs as usize,
        adapt,
        u64::from(seed),
    )
    .map_err(|e| JsValue::from_str(&e))
}
