//! Online adaptation of the composite-loss coefficients (α, β, γ).
//!
//! Each coefficient receives the gradient `-(associated loss / total loss)`
//! and is moved by a bias-corrected Adam step. Because every raw gradient is
//! negative, an unprojected update would grow all three coefficients; the
//! projection back onto the bounded simplex is what makes them compete.

use serde::{Deserialize, Serialize};

use crate::error::{PfaError, Result};
use crate::losses::{CoeffTriple, Pairing};
use crate::nn::AdamConfig;

pub const DEFAULT_FLOOR: f64 = 0.01;
pub const DEFAULT_CEIL: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffState {
    pub coeffs: CoeffTriple,
    /// First moments for (α, β, γ).
    pub m: [f64; 3],
    /// Second moments for (α, β, γ).
    pub v: [f64; 3],
    /// Shared timestep, advanced once per update.
    pub t: u64,
    pub cfg: AdamConfig,
    pub pairing: Pairing,
    pub floor: f64,
    pub ceil: f64,
}

impl CoeffState {
    pub fn new(coeffs: CoeffTriple, cfg: AdamConfig, pairing: Pairing) -> Self {
        Self {
            coeffs,
            m: [0.0; 3],
            v: [0.0; 3],
            t: 0,
            cfg,
            pairing,
            floor: DEFAULT_FLOOR,
            ceil: DEFAULT_CEIL,
        }
    }

    /// Default coefficient optimizer settings: η = 0.01, β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn default_adam() -> AdamConfig {
        AdamConfig::with_eta(0.01)
    }
}

/// Gradients `(g_α, g_β, g_γ)` as negative loss proportions.
pub fn coeff_gradients(
    l_pred: f64,
    l_fair: f64,
    l_fool: f64,
    pairing: Pairing,
) -> Result<[f64; 3]> {
    let total = l_pred + l_fair + l_fool;
    if !(total > 0.0) || !total.is_finite() {
        return Err(PfaError::Argument(format!(
            "total loss must be positive and finite, got {total}"
        )));
    }
    if l_pred < 0.0 || l_fair < 0.0 || l_fool < 0.0 {
        return Err(PfaError::Argument("losses must be nonnegative".into()));
    }
    let (g_pred, g_fair, g_fool) = (-l_pred / total, -l_fair / total, -l_fool / total);
    Ok(match pairing {
        Pairing::BetaFairness => [g_pred, g_fair, g_fool],
        Pairing::BetaFooling => [g_pred, g_fool, g_fair],
    })
}

/// One Adam step on all three coefficients followed by projection onto
/// `{c : Σc = 1, floor ≤ c ≤ ceil}`.
pub fn update_hyperparameters(
    state: &CoeffState,
    l_pred: f64,
    l_fair: f64,
    l_fool: f64,
) -> Result<CoeffState> {
    state.cfg.validate()?;
    let grads = coeff_gradients(l_pred, l_fair, l_fool, state.pairing)?;
    let mut next = state.clone();
    next.t += 1;
    let cfg = &state.cfg;
    let bc1 = 1.0 - cfg.beta1.powi(next.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(next.t as i32);
    let mut raw = state.coeffs.as_array();
    for i in 0..3 {
        next.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        next.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = next.m[i] / bc1;
        let v_hat = next.v[i] / bc2;
        raw[i] -= cfg.eta * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    let p = project_to_bounded_simplex(raw, state.floor, state.ceil)?;
    next.coeffs = CoeffTriple::new(p[0], p[1], p[2]);
    Ok(next)
}

/// Finds the scale `λ > 0` with `Σ clamp(λ·xᵢ, lo, hi) = 1` and returns the
/// clamped values. Entries below `lo` are lifted to `lo` before scaling.
///
/// The sum is piecewise linear and nondecreasing in `λ`, so the root is
/// located exactly by walking the sorted breakpoints.
pub fn project_to_bounded_simplex<const N: usize>(
    x: [f64; N],
    lo: f64,
    hi: f64,
) -> Result<[f64; N]> {
    if !(lo > 0.0 && lo < hi && lo * N as f64 <= 1.0 && hi * N as f64 >= 1.0) {
        return Err(PfaError::Argument(format!(
            "infeasible bounds [{lo}, {hi}] for {N} entries"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PfaError::Numeric(format!(
            "non-finite coefficient in {x:?}"
        )));
    }
    let x = x.map(|v| v.max(lo));
    let total = |lambda: f64| -> f64 { x.iter().map(|&v| (lambda * v).clamp(lo, hi)).sum() };

    let mut breaks: Vec<f64> = x.iter().flat_map(|&v| [lo / v, hi / v]).collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();

    // Below the first breakpoint every entry sits at `lo` (sum N·lo ≤ 1); above
    // the last every entry sits at `hi` (sum N·hi ≥ 1).
    let mut lambda = breaks[breaks.len() - 1];
    let mut prev = 0.0;
    for &b in &breaks {
        let f_b = total(b);
        if f_b >= 1.0 {
            let f_prev = total(prev);
            // On (prev, b] the sum is affine: f(λ) = f_prev + slope (λ - prev).
            let slope: f64 = x
                .iter()
                .filter(|&&v| {
                    let mid = 0.5 * (prev + b) * v;
                    mid > lo && mid < hi
                })
                .sum();
            lambda = if slope > 0.0 {
                prev + (1.0 - f_prev) / slope
            } else {
                b
            };
            break;
        }
        prev = b;
    }
    let mut out = x.map(|v| (lambda * v).clamp(lo, hi));
    // Remove the last ulps of rounding from the free entries.
    let sum: f64 = out.iter().sum();
    let free: Vec<usize> = (0..N).filter(|&i| out[i] > lo && out[i] < hi).collect();
    if let Some(&i) = free.first() {
        out[i] += 1.0 - sum;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fresh() -> CoeffState {
        CoeffState::new(
            CoeffTriple::uniform(),
            CoeffState::default_adam(),
            Pairing::BetaFairness,
        )
    }

    #[test]
    fn gradients_are_negative_proportions() {
        let g = coeff_gradients(25.0, 60.0, 15.0, Pairing::BetaFairness).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-15);
        assert!((g[1] + 0.60).abs() < 1e-15);
        assert!((g[2] + 0.15).abs() < 1e-15);
        // The fairness-paired gradient is four times the fooling-paired one.
        assert!((g[1] / g[2] - 4.0).abs() < 1e-12);
        let eq = coeff_gradients(2.0, 2.0, 2.0, Pairing::BetaFairness).unwrap();
        assert!(eq.iter().all(|g| (g + 1.0 / 3.0).abs() < 1e-15));
        let z = coeff_gradients(0.0, 1.0, 3.0, Pairing::BetaFairness).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[1] + z[2] + 1.0).abs() < 1e-15);
        assert!(coeff_gradients(0.0, 0.0, 0.0, Pairing::BetaFairness).is_err());
        let swapped = coeff_gradients(25.0, 60.0, 15.0, Pairing::BetaFooling).unwrap();
        assert_eq!(swapped[1], g[2]);
        assert_eq!(swapped[2], g[1]);
    }

    #[test]
    fn symmetric_fixed_point() {
        let mut s = fresh();
        for _ in 0..20 {
            s = update_hyperparameters(&s, 0.4, 0.4, 0.4).unwrap();
            for c in s.coeffs.as_array() {
                assert!((c - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        assert_eq!(s.t, 20);
    }

    #[test]
    fn first_symmetric_step_is_eta_for_all() {
        let s = update_hyperparameters(&fresh(), 0.4, 0.4, 0.4).unwrap();
        // Bias-corrected m̂/√v̂ = -1 for every coefficient.
        for i in 0..3 {
            assert!((s.m[i] + 0.1 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn largest_loss_gains_most() {
        let s = update_hyperparameters(&fresh(), 0.6, 0.3, 0.1).unwrap();
        let c = s.coeffs;
        assert!(c.alpha > c.beta && c.beta > c.gamma, "{c:?}");
        let s = update_hyperparameters(&fresh(), 0.1, 0.3, 0.6).unwrap();
        assert!(s.coeffs.gamma > s.coeffs.beta && s.coeffs.beta > s.coeffs.alpha);
    }

    #[test]
    fn projection_respects_bounds() {
        let p = project_to_bounded_simplex([0.98, 0.98, 0.01], 0.01, 0.98).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.495).abs() < 1e-12 && (p[2] - 0.01).abs() < 1e-12);
        let p = project_to_bounded_simplex([5.0, 0.0, -1.0], 0.01, 0.98).unwrap();
        assert!((p[0] - 0.98).abs() < 1e-12 && (p[1] - 0.01).abs() < 1e-12);
        assert!(project_to_bounded_simplex([f64::NAN, 0.1, 0.1], 0.01, 0.98).is_err());
    }

    proptest! {
        #[test]
        fn updates_stay_on_bounded_simplex(
            init in proptest::array::uniform3(0.0f64..1.0),
            losses in proptest::collection::vec(proptest::array::uniform3(0.0f64..5.0), 1..30),
        ) {
            let mut s = fresh();
            s.coeffs = CoeffTriple::new(init[0], init[1], init[2]);
            for l in losses {
                if l.iter().sum::<f64>() <= 0.0 { continue; }
                s = update_hyperparameters(&s, l[0], l[1], l[2]).unwrap();
                let c = s.coeffs.as_array();
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(c.iter().all(|&v| v >= 0.01 - 1e-15 && v <= 0.98 + 1e-15));
                prop_assert!(s.v.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn gradients_sum_to_minus_one(l in proptest::array::uniform3(0.0f64..10.0)) {
            prop_assume!(l.iter().sum::<f64>() > 1e-9);
            let g = coeff_gradients(l[0], l[1], l[2], Pairing::BetaFairness).unwrap();
            prop_assert!((g.iter().sum::<f64>() + 1.0).abs() < 1e-12);
        }
    }
}
