//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library code it is used to check: finite
//! differences, a straight-line coefficient optimizer, brute-force metrics
//! and a plain P∘G trainer written from public building blocks only.

#![allow(dead_code)]

use pfa_core::data::TabularDataset;
use pfa_core::losses::CoeffTriple;
use pfa_core::nn::{AdamConfig, DenseMatrix, NetworkState};
use pfa_core::trainer::{
    discriminator_architecture, generator_architecture, predictor_architecture, stratified_batches,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` for every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let up = f(&buf);
            buf[i] = x[i] - h;
            let down = f(&buf);
            buf[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Coefficient optimizer

/// One Adam-then-project step written out longhand; state is
/// `(coeffs, m, v, t)` with coefficient order (α, β, γ).
#[derive(Debug, Clone, Copy)]
pub struct RefCoeffState {
    pub c: [f64; 3],
    pub m: [f64; 3],
    pub v: [f64; 3],
    pub t: i32,
}

impl RefCoeffState {
    pub fn new(c: [f64; 3]) -> Self {
        Self {
            c,
            m: [0.0; 3],
            v: [0.0; 3],
            t: 0,
        }
    }
}

/// Losses are given in (prediction, fairness, fooling) order and pair with
/// (α, β, γ) in that order.
pub fn ref_coeff_step(
    st: &RefCoeffState,
    losses: [f64; 3],
    eta: f64,
    lo: f64,
    hi: f64,
) -> RefCoeffState {
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8_f64);
    let total = losses[0] + losses[1] + losses[2];
    let mut out = *st;
    out.t += 1;
    let mut raw = [0.0; 3];
    for i in 0..3 {
        let g = -losses[i] / total;
        out.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        out.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
        let m_hat = out.m[i] / (1.0 - b1.powi(out.t));
        let v_hat = out.v[i] / (1.0 - b2.powi(out.t));
        raw[i] = st.c[i] - eta * m_hat / (v_hat.sqrt() + eps);
    }
    out.c = ref_project(raw, lo, hi);
    out
}

/// Fixed point of "clip to [lo, hi], renormalize": finds by bisection the
/// scale λ with Σ clip(λ·x_i) = 1.
pub fn ref_project(x: [f64; 3], lo: f64, hi: f64) -> [f64; 3] {
    let x = x.map(|v| v.max(lo));
    let total = |l: f64| x.iter().map(|&v| (l * v).clamp(lo, hi)).sum::<f64>();
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    while total(b) < 1.0 {
        b *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if total(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let l = 0.5 * (a + b);
    let mut out = x.map(|v| (l * v).clamp(lo, hi));
    // Put the residual rounding error on a free coordinate.
    let sum: f64 = out.iter().sum();
    if let Some(i) = (0..3).find(|&i| out[i] > lo && out[i] < hi) {
        out[i] += 1.0 - sum;
    }
    out
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefMetrics {
    pub accuracy: f64,
    pub dp: f64,
    pub et: f64,
    pub eop: Option<f64>,
    pub eodds: Option<f64>,
}

/// Builds the 2×2×2 table `count[s][y][ŷ]` and reads every metric off it.
pub fn ref_metrics(y: &[u8], score: &[f64], s: &[u8], threshold: f64) -> RefMetrics {
    let mut count = [[[0usize; 2]; 2]; 2];
    for i in 0..y.len() {
        let g = usize::from(s[i] == 1);
        let label = usize::from(y[i] == 1);
        let pred = usize::from(score[i] >= threshold);
        count[g][label][pred] += 1;
    }
    let members = |g: usize| count[g][0][0] + count[g][0][1] + count[g][1][0] + count[g][1][1];
    let selected = |g: usize| (count[g][0][1] + count[g][1][1]) as f64 / members(g) as f64;
    let errors = |g: usize| (count[g][0][1] + count[g][1][0]) as f64 / members(g) as f64;
    let tpr = |g: usize| {
        let p = count[g][1][0] + count[g][1][1];
        (p > 0).then(|| count[g][1][1] as f64 / p as f64)
    };
    let fpr = |g: usize| {
        let n = count[g][0][0] + count[g][0][1];
        (n > 0).then(|| count[g][0][1] as f64 / n as f64)
    };
    let correct: usize = (0..2).map(|g| count[g][0][0] + count[g][1][1]).sum();
    let eop = match (tpr(0), tpr(1)) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let fpr_gap = match (fpr(0), fpr(1)) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    RefMetrics {
        accuracy: correct as f64 / y.len() as f64,
        dp: (selected(0) - selected(1)).abs(),
        et: (errors(0) - errors(1)).abs(),
        eop,
        eodds: match (eop, fpr_gap) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        },
    }
}

// ---------------------------------------------------------------------------
// Plain P∘G training

fn ref_bce_grad(y: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let grad = y
        .iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            (p - y) / (n * p * (1.0 - p))
        })
        .collect();
    (loss / n, grad)
}

/// Trains the generator and predictor as one network on cross entropy only,
/// alternating a predictor step and a generator step per batch. The
/// discriminator is initialised (to keep the random stream aligned) but never
/// used: it has no dropout, so it never draws from the stream afterwards.
///
/// Returns the per-epoch mean prediction loss and the final networks.
pub fn ref_plain_pg(
    data: &TabularDataset,
    cfg: &TrainConfig,
) -> (Vec<f64>, NetworkState, NetworkState) {
    let mut r = rng(cfg.seed);
    let d = data.dim();
    let mut g =
        NetworkState::new(generator_architecture(d, cfg.dropout_rate).unwrap(), &mut r).unwrap();
    let mut p = NetworkState::new(predictor_architecture(d).unwrap(), &mut r).unwrap();
    let _ = NetworkState::new(discriminator_architecture(d).unwrap(), &mut r).unwrap();
    let mut trace = Vec::new();
    for _ in 0..cfg.epochs {
        let batches = stratified_batches(&data.s, cfg.batch_size, &mut r).unwrap();
        let mut total = 0.0;
        for idx in &batches {
            let xb = data.x.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| f64::from(data.y[i])).collect();

            // Predictor on a detached representation.
            let (xp, _) = g.forward(&xb, true, &mut r).unwrap();
            let (out, tape) = p.forward(&xp, true, &mut r).unwrap();
            let (_, grad) = ref_bce_grad(&yb, out.data());
            let (pg, _) = p.backward(&tape, &DenseMatrix::column(grad)).unwrap();
            p.adam_step(&pg, &AdamConfig::with_eta(cfg.lr_p)).unwrap();

            // Generator through the updated predictor.
            let (xp, g_tape) = g.forward(&xb, true, &mut r).unwrap();
            let (out, tape) = p.forward(&xp, true, &mut r).unwrap();
            let (loss, grad) = ref_bce_grad(&yb, out.data());
            let (_, dx) = p.backward(&tape, &DenseMatrix::column(grad)).unwrap();
            let (gg, _) = g.backward(&g_tape, &dx).unwrap();
            g.adam_step(&gg, &AdamConfig::with_eta(cfg.lr_g)).unwrap();
            total += loss;
        }
        trace.push(total / batches.len() as f64);
    }
    (trace, g, p)
}

pub fn prediction_only() -> CoeffTriple {
    CoeffTriple::new(1.0, 0.0, 0.0)
}

/// FNV-1a over the bit patterns of a parameter vector.
pub fn hash_params(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
