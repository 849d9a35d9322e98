//! Sequential dense networks with exact reverse-mode gradients.
//!
//! A network is an ordered list of [`LayerSpec`]s. Each layer consumes the
//! output of the previous one; `ResidualAdd` additionally reads the output of
//! an earlier layer. The forward pass records a [`Tape`] holding everything
//! the backward pass needs, so gradients are exact rather than numerical.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{PfaError, Result};

/// Variance stabilizer inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Affine {
        in_dim: usize,
        out_dim: usize,
    },
    LayerNorm {
        dim: usize,
    },
    Dropout {
        dim: usize,
        rate: f64,
    },
    Activation {
        dim: usize,
        activation: Activation,
    },
    /// Adds the output of layer `from` (an earlier index) to the current state.
    ResidualAdd {
        dim: usize,
        from: usize,
    },
    /// `sigmoid(h W + b) ⊙ h`.
    AttentionGate {
        dim: usize,
    },
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Affine { in_dim, .. } => in_dim,
            LayerSpec::LayerNorm { dim }
            | LayerSpec::Dropout { dim, .. }
            | LayerSpec::Activation { dim, .. }
            | LayerSpec::ResidualAdd { dim, .. }
            | LayerSpec::AttentionGate { dim } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Affine { out_dim, .. } => out_dim,
            _ => self.in_dim(),
        }
    }

    /// Shapes of the trainable parameters of this layer.
    fn param_shapes(&self) -> Vec<(usize, usize)> {
        match *self {
            LayerSpec::Affine { in_dim, out_dim } => vec![(in_dim, out_dim), (1, out_dim)],
            LayerSpec::LayerNorm { dim } => vec![(1, dim), (1, dim)],
            LayerSpec::AttentionGate { dim } => vec![(dim, dim), (1, dim)],
            _ => Vec::new(),
        }
    }
}

/// Serializable architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self { layers };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(PfaError::Dimension("architecture has no layers".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(PfaError::Dimension(format!(
                    "layer {k} has a zero dimension"
                )));
            }
            if k > 0 && self.layers[k - 1].out_dim() != layer.in_dim() {
                return Err(PfaError::Dimension(format!(
                    "layer {} outputs {} features but layer {k} expects {}",
                    k - 1,
                    self.layers[k - 1].out_dim(),
                    layer.in_dim()
                )));
            }
            match *layer {
                LayerSpec::Dropout { rate, .. } if !(0.0..1.0).contains(&rate) => {
                    return Err(PfaError::Argument(format!(
                        "layer {k}: dropout rate {rate} outside [0, 1)"
                    )));
                }
                LayerSpec::ResidualAdd { dim, from } => {
                    if from >= k {
                        return Err(PfaError::Dimension(format!(
                            "layer {k}: residual source {from} is not an earlier layer"
                        )));
                    }
                    if self.layers[from].out_dim() != dim {
                        return Err(PfaError::Dimension(format!(
                            "layer {k}: residual source {from} has width {}, expected {dim}",
                            self.layers[from].out_dim()
                        )));
                    }
                }
                LayerSpec::Activation {
                    activation: Activation::LeakyRelu { slope },
                    ..
                } if !slope.is_finite() => {
                    return Err(PfaError::Argument(format!("layer {k}: bad leaky slope")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// One trainable tensor with its Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: DenseMatrix,
    pub m: DenseMatrix,
    pub v: DenseMatrix,
}

impl Param {
    fn new(value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            m: DenseMatrix::zeros(r, c),
            v: DenseMatrix::zeros(r, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_eta(eta: f64) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && self.eta.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PfaError::Argument(format!(
                "invalid Adam settings {self:?}"
            )))
        }
    }
}

/// Per-layer gradients, laid out exactly like [`NetworkState::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Vec<DenseMatrix>>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.per_layer.iter().flatten()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.iter().flat_map(|g| g.data().iter().copied()).collect()
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Dropout {
        mask: Vec<f64>,
    },
    LayerNorm {
        xhat: DenseMatrix,
        inv_std: Vec<f64>,
    },
    Gate {
        gate: DenseMatrix,
    },
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `states[k]` is the input of layer `k`; the last entry is the network output.
    states: Vec<DenseMatrix>,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn output(&self) -> &DenseMatrix {
        &self.states[self.states.len() - 1]
    }

    pub fn input(&self) -> &DenseMatrix {
        &self.states[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub arch: Architecture,
    /// Trainable tensors per layer (empty for parameter-free layers).
    pub params: Vec<Vec<Param>>,
    /// Adam step counter.
    pub t: u64,
}

impl NetworkState {
    /// Glorot-uniform weights, zero biases, unit layer-norm scale.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .layers
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Affine { in_dim, out_dim } => vec![
                    Param::new(glorot(in_dim, out_dim, rng)),
                    Param::new(DenseMatrix::zeros(1, out_dim)),
                ],
                LayerSpec::AttentionGate { dim } => vec![
                    Param::new(glorot(dim, dim, rng)),
                    Param::new(DenseMatrix::zeros(1, dim)),
                ],
                LayerSpec::LayerNorm { dim } => vec![
                    Param::new(DenseMatrix::filled(1, dim, 1.0)),
                    Param::new(DenseMatrix::zeros(1, dim)),
                ],
                _ => Vec::new(),
            })
            .collect();
        Ok(Self { arch, params, t: 0 })
    }

    pub fn in_dim(&self) -> usize {
        self.arch.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.arch.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.value.len()).sum()
    }

    /// All parameter values in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Overwrites parameter values from a flat buffer produced by [`Self::flat_params`].
    pub fn load_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(PfaError::Dimension(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params.iter_mut().flatten() {
            let n = p.value.len();
            p.value
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward pass. Dropout masks are drawn from `rng` only in train mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &DenseMatrix,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<(DenseMatrix, Tape)> {
        if batch.cols() != self.in_dim() {
            return Err(PfaError::Dimension(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let n_layers = self.arch.layers.len();
        let mut states = Vec::with_capacity(n_layers + 1);
        let mut caches = Vec::with_capacity(n_layers);
        states.push(batch.clone());
        for k in 0..n_layers {
            let (out, cache) = self.layer_forward(k, &states, train_mode, rng);
            if !out.all_finite() {
                return Err(PfaError::Numeric(format!(
                    "non-finite activation after layer {k}"
                )));
            }
            states.push(out);
            caches.push(cache);
        }
        let output = states[n_layers].clone();
        Ok((output, Tape { states, caches }))
    }

    /// Eval-mode forward without keeping a tape.
    pub fn predict(&self, batch: &DenseMatrix) -> Result<DenseMatrix> {
        // Eval mode never draws from the RNG.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        self.forward(batch, false, &mut rng).map(|(out, _)| out)
    }

    fn layer_forward<R: Rng + ?Sized>(
        &self,
        k: usize,
        states: &[DenseMatrix],
        train_mode: bool,
        rng: &mut R,
    ) -> (DenseMatrix, Cache) {
        let x = &states[k];
        let params = &self.params[k];
        match self.arch.layers[k] {
            LayerSpec::Affine { .. } => {
                let mut out = x.matmul(&params[0].value);
                out.add_row_vector(&params[1].value);
                (out, Cache::None)
            }
            LayerSpec::Activation { activation, .. } => {
                (x.map(|v| activation.apply(v)), Cache::None)
            }
            LayerSpec::Dropout { rate, .. } => {
                if !train_mode || rate == 0.0 {
                    return (x.clone(), Cache::None);
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                let mut out = x.clone();
                for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                (out, Cache::Dropout { mask })
            }
            LayerSpec::LayerNorm { dim } => {
                let gamma = params[0].value.data();
                let beta = params[1].value.data();
                let mut xhat = DenseMatrix::zeros(x.rows(), dim);
                let mut out = DenseMatrix::zeros(x.rows(), dim);
                let mut inv_std = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f64>() / dim as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std.push(inv);
                    let xh = xhat.row_mut(r);
                    for (h, v) in xh.iter_mut().zip(row) {
                        *h = (v - mean) * inv;
                    }
                    let o = out.row_mut(r);
                    for j in 0..dim {
                        o[j] = gamma[j] * xh[j] + beta[j];
                    }
                }
                (out, Cache::LayerNorm { xhat, inv_std })
            }
            LayerSpec::ResidualAdd { from, .. } => {
                let mut out = x.clone();
                out.add_assign(&states[from + 1]);
                (out, Cache::None)
            }
            LayerSpec::AttentionGate { .. } => {
                let mut gate = x.matmul(&params[0].value);
                gate.add_row_vector(&params[1].value);
                gate.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                let mut out = gate.clone();
                for (o, h) in out.data_mut().iter_mut().zip(x.data()) {
                    *o *= h;
                }
                (out, Cache::Gate { gate })
            }
        }
    }

    /// Reverse pass for the scalar loss whose gradient w.r.t. the network
    /// output is `upstream`. Returns parameter gradients and the gradient
    /// w.r.t. the network input.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &DenseMatrix,
    ) -> Result<(Gradients, DenseMatrix)> {
        let n_layers = self.arch.layers.len();
        if tape.states.len() != n_layers + 1 || tape.caches.len() != n_layers {
            return Err(PfaError::State(
                "tape does not belong to this network".into(),
            ));
        }
        if upstream.shape() != tape.output().shape() {
            return Err(PfaError::Dimension(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                tape.output().shape()
            )));
        }
        // Gradient contributions routed backwards through residual skips,
        // keyed by state index.
        let mut skip: Vec<Option<DenseMatrix>> = vec![None; n_layers + 1];
        let mut per_layer: Vec<Vec<DenseMatrix>> = vec![Vec::new(); n_layers];
        let mut grad = upstream.clone();
        for k in (0..n_layers).rev() {
            if let Some(extra) = skip[k + 1].take() {
                grad.add_assign(&extra);
            }
            let x = &tape.states[k];
            let y = &tape.states[k + 1];
            let params = &self.params[k];
            grad = match (&self.arch.layers[k], &tape.caches[k]) {
                (LayerSpec::Affine { .. }, _) => {
                    per_layer[k] = vec![x.t_matmul(&grad), grad.sum_rows()];
                    grad.matmul_t(&params[0].value)
                }
                (LayerSpec::Activation { activation, .. }, _) => {
                    let mut g = grad;
                    for ((gv, xv), yv) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        *gv *= activation.derivative(*xv, *yv);
                    }
                    g
                }
                (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                    let mut g = grad;
                    for (gv, m) in g.data_mut().iter_mut().zip(mask) {
                        *gv *= m;
                    }
                    g
                }
                (LayerSpec::Dropout { .. }, _) => grad,
                (LayerSpec::LayerNorm { dim }, Cache::LayerNorm { xhat, inv_std }) => {
                    let dim = *dim;
                    let gamma = params[0].value.data();
                    let mut d_gamma = DenseMatrix::zeros(1, dim);
                    let d_beta = grad.sum_rows();
                    let mut dx = DenseMatrix::zeros(x.rows(), dim);
                    let mut dxhat = vec![0.0; dim];
                    for r in 0..x.rows() {
                        let g = grad.row(r);
                        let xh = xhat.row(r);
                        for j in 0..dim {
                            d_gamma.data_mut()[j] += g[j] * xh[j];
                            dxhat[j] = g[j] * gamma[j];
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = inv_std[r] / dim as f64;
                        let out = dx.row_mut(r);
                        for j in 0..dim {
                            out[j] = scale * (dim as f64 * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                    per_layer[k] = vec![d_gamma, d_beta];
                    dx
                }
                (LayerSpec::ResidualAdd { from, .. }, _) => {
                    let slot = &mut skip[from + 1];
                    match slot {
                        Some(acc) => acc.add_assign(&grad),
                        None => *slot = Some(grad.clone()),
                    }
                    grad
                }
                (LayerSpec::AttentionGate { .. }, Cache::Gate { gate }) => {
                    // out = a ⊙ h, a = sigmoid(h W + b)
                    let mut d_pre = grad.clone();
                    for ((d, h), a) in d_pre.data_mut().iter_mut().zip(x.data()).zip(gate.data()) {
                        *d *= h * a * (1.0 - a);
                    }
                    let mut dx = d_pre.matmul_t(&params[0].value);
                    for ((d, g), a) in dx.data_mut().iter_mut().zip(grad.data()).zip(gate.data()) {
                        *d += g * a;
                    }
                    per_layer[k] = vec![x.t_matmul(&d_pre), d_pre.sum_rows()];
                    dx
                }
                (layer, _) => {
                    return Err(PfaError::State(format!(
                        "tape cache missing for layer {k} ({layer:?})"
                    )));
                }
            };
        }
        Ok((Gradients { per_layer }, grad))
    }

    /// One bias-corrected Adam step over every parameter.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.per_layer.len() != self.params.len() {
            return Err(PfaError::Dimension(
                "gradient layout does not match network".into(),
            ));
        }
        for (k, (ps, gs)) in self.params.iter().zip(&grads.per_layer).enumerate() {
            if ps.len() != gs.len() {
                return Err(PfaError::Dimension(format!(
                    "layer {k}: gradient count mismatch"
                )));
            }
            for (p, g) in ps.iter().zip(gs) {
                if p.value.shape() != g.shape() {
                    return Err(PfaError::Dimension(format!(
                        "layer {k}: gradient shape mismatch"
                    )));
                }
                if !g.all_finite() {
                    return Err(PfaError::Numeric(format!("layer {k}: non-finite gradient")));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (ps, gs) in self.params.iter_mut().zip(&grads.per_layer) {
            for (p, g) in ps.iter_mut().zip(gs) {
                let values = p.value.data_mut();
                let m = p.m.data_mut();
                let v = p.v.data_mut();
                for (i, &gi) in g.data().iter().enumerate() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    values[i] -= cfg.eta * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            per_layer: self
                .arch
                .layers
                .iter()
                .map(|l| {
                    l.param_shapes()
                        .into_iter()
                        .map(|(r, c)| DenseMatrix::zeros(r, c))
                        .collect()
                })
                .collect(),
        }
    }
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).expect("glorot buffer has the right length")
}
