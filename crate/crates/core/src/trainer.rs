//! Generator / predictor / discriminator triad and its alternating training loop.
//!
//! Per minibatch the loop runs, in order:
//! 1. discriminator step on the privacy loss over `X' = G(X)`;
//! 2. predictor step on `L_prediction + w·L_fairness` over the same `X'`,
//!    where `w` is the current fairness coefficient;
//! 3. generator step on the weighted composite of prediction, fooling and
//!    fairness losses, back-propagated through the (frozen) predictor and
//!    discriminator into the generator.
//!
//! With coefficient adaptation enabled, (α, β, γ) are updated once per epoch
//! from the epoch-mean losses.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coeff::{update_hyperparameters, CoeffState};
use crate::data::TabularDataset;
use crate::error::{PfaError, Result};
use crate::losses::{
    fairness_loss, fooling_loss, prediction_loss, privacy_loss, CoeffTriple, Pairing,
};
use crate::nn::{Activation, AdamConfig, Architecture, DenseMatrix, LayerSpec, NetworkState};

pub const PREDICTOR_LEAKY_SLOPE: f64 = 0.01;

fn default_pairing() -> Pairing {
    Pairing::BetaFairness
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub coeffs: CoeffTriple,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_p: f64,
    pub lr_d: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub coeff_opt_enabled: bool,
    pub coeff_opt: AdamConfig,
    pub d_steps_per_batch: usize,
    #[serde(default = "default_pairing")]
    pub pairing: Pairing,
    /// Zero the sensitive column of `X'` before it reaches P and D.
    pub drop_sensitive_from_xprime: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            coeffs: CoeffTriple::uniform(),
            epochs: 100,
            batch_size: 128,
            lr_g: 1e-3,
            lr_p: 1e-3,
            lr_d: 1e-3,
            dropout_rate: 0.2,
            seed: 0,
            coeff_opt_enabled: true,
            coeff_opt: CoeffState::default_adam(),
            d_steps_per_batch: 1,
            pairing: Pairing::BetaFairness,
            drop_sensitive_from_xprime: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps_per_batch == 0 {
            return Err(PfaError::Config(
                "epochs, batch_size and d_steps_per_batch must be at least 1".into(),
            ));
        }
        for (name, lr) in [
            ("lr_g", self.lr_g),
            ("lr_p", self.lr_p),
            ("lr_d", self.lr_d),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(PfaError::Config(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(PfaError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.coeffs
            .validate()
            .map_err(|e| PfaError::Config(e.to_string()))?;
        self.coeff_opt
            .validate()
            .map_err(|e| PfaError::Config(e.to_string()))
    }
}

/// Generator: seven affine layers `d→64→64→256→256→64→64→d`. Every hidden
/// affine is followed by layer norm, ReLU and dropout; the first 64-wide
/// hidden state is added to the last one, and a feature-wise attention gate
/// precedes the output layer.
pub fn generator_architecture(d: usize, dropout: f64) -> Result<Architecture> {
    let widths = [64, 64, 256, 256, 64, 64];
    let mut layers = Vec::new();
    let mut prev = d;
    let mut first_hidden = None;
    for &w in &widths {
        layers.push(LayerSpec::Affine {
            in_dim: prev,
            out_dim: w,
        });
        layers.push(LayerSpec::LayerNorm { dim: w });
        layers.push(LayerSpec::Activation {
            dim: w,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::Dropout {
            dim: w,
            rate: dropout,
        });
        first_hidden.get_or_insert(layers.len() - 1);
        prev = w;
    }
    layers.push(LayerSpec::ResidualAdd {
        dim: 64,
        from: first_hidden.expect("at least one hidden layer"),
    });
    layers.push(LayerSpec::AttentionGate { dim: 64 });
    layers.push(LayerSpec::Affine {
        in_dim: 64,
        out_dim: d,
    });
    Architecture::new(layers)
}

/// Predictor: `d→128→64→32→16→1`, leaky-ReLU hiddens, sigmoid head.
pub fn predictor_architecture(d: usize) -> Result<Architecture> {
    mlp(
        d,
        &[128, 64, 32, 16],
        Activation::LeakyRelu {
            slope: PREDICTOR_LEAKY_SLOPE,
        },
    )
}

/// Discriminator: `d→32→64→32→1`, ReLU hiddens, sigmoid head.
pub fn discriminator_architecture(d: usize) -> Result<Architecture> {
    mlp(d, &[32, 64, 32], Activation::Relu)
}

/// Plain MLP with a single sigmoid output.
pub fn mlp(d: usize, hidden: &[usize], activation: Activation) -> Result<Architecture> {
    let mut layers = Vec::new();
    let mut prev = d;
    for &w in hidden {
        layers.push(LayerSpec::Affine {
            in_dim: prev,
            out_dim: w,
        });
        layers.push(LayerSpec::Activation { dim: w, activation });
        prev = w;
    }
    layers.push(LayerSpec::Affine {
        in_dim: prev,
        out_dim: 1,
    });
    layers.push(LayerSpec::Activation {
        dim: 1,
        activation: Activation::Sigmoid,
    });
    Architecture::new(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfaModel {
    pub generator: NetworkState,
    pub predictor: NetworkState,
    pub discriminator: NetworkState,
    pub input_dim: usize,
    /// Column of `X'` zeroed before P and D see it, if any.
    pub masked_column: Option<usize>,
}

/// Builds the three networks, drawing initial weights from `rng` in the
/// order generator, predictor, discriminator.
pub fn build_model<R: Rng + ?Sized>(
    input_dim: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PfaModel> {
    if input_dim == 0 {
        return Err(PfaError::Argument("input_dim must be at least 1".into()));
    }
    Ok(PfaModel {
        generator: NetworkState::new(generator_architecture(input_dim, cfg.dropout_rate)?, rng)?,
        predictor: NetworkState::new(predictor_architecture(input_dim)?, rng)?,
        discriminator: NetworkState::new(discriminator_architecture(input_dim)?, rng)?,
        input_dim,
        masked_column: None,
    })
}

/// Losses of one generator step (or their means over an epoch).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub prediction: f64,
    pub fairness: f64,
    pub privacy: f64,
    pub fooling: f64,
    pub generator: f64,
}

impl EpochLosses {
    fn is_finite(&self) -> bool {
        [
            self.prediction,
            self.fairness,
            self.privacy,
            self.fooling,
            self.generator,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub losses: EpochLosses,
    /// Coefficients in effect during this epoch.
    pub coeffs: CoeffTriple,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub const CSV_HEADER: &'static str =
        "epoch,l_prediction,l_fairness,l_privacy,l_fooling,l_generator,alpha,beta,gamma";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                l.prediction,
                l.fairness,
                l.privacy,
                l.fooling,
                l.generator,
                r.coeffs.alpha,
                r.coeffs.beta,
                r.coeffs.gamma
            );
        }
        out
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Minibatch index lists where every batch holds members of both groups.
///
/// Each group is shuffled and dealt evenly over the batches; the batch count
/// is capped by the smaller group's size.
pub fn stratified_batches<R: Rng + ?Sized>(
    s: &[u8],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let mut groups: [Vec<usize>; 2] = Default::default();
    for (i, &g) in s.iter().enumerate() {
        groups[usize::from(g != 0)].push(i);
    }
    let smallest = groups[0].len().min(groups[1].len());
    if smallest == 0 {
        return Err(PfaError::DegenerateGroup(
            "training data must contain both sensitive groups".into(),
        ));
    }
    let n_batches = s.len().div_ceil(batch_size).min(smallest).max(1);
    let mut batches = vec![Vec::with_capacity(batch_size + 2); n_batches];
    for group in groups.iter_mut() {
        group.shuffle(rng);
        let len = group.len();
        for (b, batch) in batches.iter_mut().enumerate() {
            let lo = b * len / n_batches;
            let hi = (b + 1) * len / n_batches;
            batch.extend_from_slice(&group[lo..hi]);
        }
    }
    batches.shuffle(rng);
    Ok(batches)
}

fn to_column(values: Vec<f64>) -> DenseMatrix {
    DenseMatrix::column(values)
}

impl PfaModel {
    fn mask(&self, mut xp: DenseMatrix) -> DenseMatrix {
        if let Some(c) = self.masked_column {
            for r in 0..xp.rows() {
                xp.set(r, c, 0.0);
            }
        }
        xp
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(PfaError::Dimension(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// `X' = G(X)` in eval mode (masking applied).
    pub fn transform(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        Ok(self.mask(self.generator.predict(x)?))
    }

    /// `P(G(X))` in eval mode.
    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.predictor.predict(&self.transform(x)?)?.into_vec())
    }

    /// `D(X')` in eval mode.
    pub fn discriminate(&self, x_prime: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.discriminator.predict(x_prime)?.into_vec())
    }

    /// Train-mode `X' = G(X)` without keeping a tape.
    pub fn transform_train<R: Rng + ?Sized>(
        &self,
        x: &DenseMatrix,
        rng: &mut R,
    ) -> Result<DenseMatrix> {
        self.check_input(x)?;
        Ok(self.mask(self.generator.forward(x, true, rng)?.0))
    }

    /// One discriminator update on the privacy loss. Returns the loss.
    pub fn d_step<R: Rng + ?Sized>(
        &mut self,
        xp: &DenseMatrix,
        s: &[f64],
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let (s_hat, tape) = self.discriminator.forward(xp, true, rng)?;
        let priv_loss = privacy_loss(s, s_hat.data())?;
        let (grads, _) = self
            .discriminator
            .backward(&tape, &to_column(priv_loss.grad))?;
        self.discriminator
            .adam_step(&grads, &AdamConfig::with_eta(lr))?;
        Ok(priv_loss.value)
    }

    /// One predictor update on `L_prediction + fairness_weight·L_fairness`.
    /// Returns both (unweighted) losses.
    pub fn p_step<R: Rng + ?Sized>(
        &mut self,
        xp: &DenseMatrix,
        y: &[f64],
        s: &[f64],
        fairness_weight: f64,
        lr: f64,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let (y_hat, tape) = self.predictor.forward(xp, true, rng)?;
        let pred = prediction_loss(y, y_hat.data())?;
        let fair = fairness_loss(y_hat.data(), s)?;
        let upstream: Vec<f64> = pred
            .grad
            .iter()
            .zip(&fair.grad)
            .map(|(a, b)| a + fairness_weight * b)
            .collect();
        let (grads, _) = self.predictor.backward(&tape, &to_column(upstream))?;
        self.predictor
            .adam_step(&grads, &AdamConfig::with_eta(lr))?;
        Ok((pred.value, fair.value))
    }

    /// Gradients w.r.t. `X'` of each generator loss term (unweighted):
    /// `[prediction, fooling, fairness]`, plus the generator tape.
    fn generator_terms<R: Rng + ?Sized>(
        &self,
        x: &DenseMatrix,
        y: &[f64],
        s: &[f64],
        weights: (f64, f64, f64),
        rng: &mut R,
    ) -> Result<(GeneratorPass, crate::nn::Tape)> {
        let (xp, g_tape) = self.generator.forward(x, true, rng)?;
        let xp = self.mask(xp);
        let (y_hat, p_tape) = self.predictor.forward(&xp, true, rng)?;
        let (s_hat, d_tape) = self.discriminator.forward(&xp, true, rng)?;
        let pred = prediction_loss(y, y_hat.data())?;
        let fair = fairness_loss(y_hat.data(), s)?;
        let fool = fooling_loss(s_hat.data())?;
        let (w_pred, w_fool, w_fair) = weights;

        let mut d_xp = DenseMatrix::zeros(xp.rows(), xp.cols());
        if w_pred != 0.0 || w_fair != 0.0 {
            let upstream: Vec<f64> = pred
                .grad
                .iter()
                .zip(&fair.grad)
                .map(|(a, b)| w_pred * a + w_fair * b)
                .collect();
            let (_, dx) = self.predictor.backward(&p_tape, &to_column(upstream))?;
            d_xp.add_assign(&dx);
        }
        if w_fool != 0.0 {
            let upstream: Vec<f64> = fool.grad.iter().map(|g| w_fool * g).collect();
            let (_, dx) = self.discriminator.backward(&d_tape, &to_column(upstream))?;
            d_xp.add_assign(&dx);
        }
        if let Some(c) = self.masked_column {
            for r in 0..d_xp.rows() {
                d_xp.set(r, c, 0.0);
            }
        }
        Ok((
            GeneratorPass {
                prediction: pred.value,
                fairness: fair.value,
                fooling: fool.value,
                d_xprime: d_xp,
            },
            g_tape,
        ))
    }

    /// One generator update on the weighted composite; P and D stay fixed.
    pub fn g_step<R: Rng + ?Sized>(
        &mut self,
        x: &DenseMatrix,
        y: &[f64],
        s: &[f64],
        coeffs: &CoeffTriple,
        pairing: Pairing,
        lr: f64,
        rng: &mut R,
    ) -> Result<GeneratorPass> {
        let weights = pairing.weights(coeffs);
        let (pass, tape) = self.generator_terms(x, y, s, weights, rng)?;
        let (grads, _) = self.generator.backward(&tape, &pass.d_xprime)?;
        self.generator
            .adam_step(&grads, &AdamConfig::with_eta(lr))?;
        Ok(pass)
    }

    /// Per-term gradients reaching the generator output, each computed with
    /// unit weight on that term alone: `[prediction, fooling, fairness]`.
    pub fn generator_term_gradients(
        &self,
        x: &DenseMatrix,
        y: &[f64],
        s: &[f64],
        seed: u64,
    ) -> Result<[DenseMatrix; 3]> {
        let term = |w| -> Result<DenseMatrix> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(self.generator_terms(x, y, s, w, &mut rng)?.0.d_xprime)
        };
        Ok([
            term((1.0, 0.0, 0.0))?,
            term((0.0, 1.0, 0.0))?,
            term((0.0, 0.0, 1.0))?,
        ])
    }

    /// Eval-mode losses over a whole dataset.
    pub fn evaluate_losses(
        &self,
        data: &TabularDataset,
        coeffs: &CoeffTriple,
        pairing: Pairing,
    ) -> Result<EpochLosses> {
        let xp = self.transform(&data.x)?;
        let y_hat = self.predictor.predict(&xp)?;
        let s_hat = self.discriminator.predict(&xp)?;
        let y = data.y_f64();
        let s = data.s_f64();
        let prediction = prediction_loss(&y, y_hat.data())?.value;
        let fairness = fairness_loss(y_hat.data(), &s)?.value;
        let privacy = privacy_loss(&s, s_hat.data())?.value;
        let fooling = fooling_loss(s_hat.data())?.value;
        Ok(EpochLosses {
            prediction,
            fairness,
            privacy,
            fooling,
            generator: crate::losses::generator_loss(
                prediction, fooling, fairness, coeffs, pairing,
            ),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorPass {
    pub prediction: f64,
    pub fairness: f64,
    pub fooling: f64,
    /// Weighted gradient of the composite w.r.t. `X'`.
    pub d_xprime: DenseMatrix,
}

/// Runs one epoch over stratified minibatches. Returns the epoch-mean losses.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut PfaModel,
    data: &TabularDataset,
    cfg: &TrainConfig,
    coeffs: &CoeffTriple,
    rng: &mut R,
) -> Result<EpochLosses> {
    let batches = stratified_batches(&data.s, cfg.batch_size, rng)?;
    let mut sum = EpochLosses::default();
    for idx in &batches {
        let xb = data.x.select_rows(idx);
        let yb: Vec<f64> = idx.iter().map(|&i| f64::from(data.y[i])).collect();
        let sb: Vec<f64> = idx.iter().map(|&i| f64::from(data.s[i])).collect();

        let xp = model.transform_train(&xb, rng)?;
        let mut privacy = 0.0;
        for _ in 0..cfg.d_steps_per_batch {
            privacy = model.d_step(&xp, &sb, cfg.lr_d, rng)?;
        }
        let (_, _, w_fair) = cfg.pairing.weights(coeffs);
        model.p_step(&xp, &yb, &sb, w_fair, cfg.lr_p, rng)?;
        let pass = model.g_step(&xb, &yb, &sb, coeffs, cfg.pairing, cfg.lr_g, rng)?;

        sum.prediction += pass.prediction;
        sum.fairness += pass.fairness;
        sum.fooling += pass.fooling;
        sum.privacy += privacy;
        sum.generator += crate::losses::generator_loss(
            pass.prediction,
            pass.fooling,
            pass.fairness,
            coeffs,
            cfg.pairing,
        );
    }
    let n = batches.len() as f64;
    Ok(EpochLosses {
        prediction: sum.prediction / n,
        fairness: sum.fairness / n,
        privacy: sum.privacy / n,
        fooling: sum.fooling / n,
        generator: sum.generator / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PfaModel,
    pub coeff_state: CoeffState,
    pub trace: LossTrace,
}

/// Full training run. All randomness comes from `cfg.seed`.
pub fn train(data: &TabularDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(data, cfg, |_| {})
}

/// As [`train`], invoking `on_epoch` after every epoch.
pub fn train_with_callback(
    data: &TabularDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TraceRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(data.dim(), cfg, &mut rng)?;
    if cfg.drop_sensitive_from_xprime {
        model.masked_column = sensitive_column(data);
    }
    let mut coeff_state = CoeffState::new(cfg.coeffs, cfg.coeff_opt, cfg.pairing);
    let mut trace = LossTrace::default();
    for epoch in 0..cfg.epochs {
        let coeffs = coeff_state.coeffs;
        let losses = train_epoch(&mut model, data, cfg, &coeffs, &mut rng)
            .map_err(|e| diverged(epoch, &trace, &e.to_string()))?;
        if !losses.is_finite() {
            return Err(diverged(
                epoch,
                &trace,
                &format!("non-finite losses {losses:?}"),
            ));
        }
        let record = TraceRecord {
            epoch,
            losses,
            coeffs,
        };
        on_epoch(&record);
        trace.records.push(record);
        if cfg.coeff_opt_enabled {
            coeff_state = update_hyperparameters(
                &coeff_state,
                losses.prediction,
                losses.fairness,
                losses.fooling,
            )?;
        }
    }
    Ok(TrainOutcome {
        model,
        coeff_state,
        trace,
    })
}

fn diverged(epoch: usize, trace: &LossTrace, detail: &str) -> PfaError {
    PfaError::Numeric(format!(
        "training diverged at epoch {epoch}: {detail}\n{}",
        trace.to_csv()
    ))
}

/// Index of the feature column carrying the sensitive attribute, if present.
pub fn sensitive_column(data: &TabularDataset) -> Option<usize> {
    let mut offset = 0;
    for c in &data.manifest.columns {
        match c {
            crate::data::ColumnTransform::Sensitive { .. } => return Some(offset),
            crate::data::ColumnTransform::Numeric { .. } => offset += 1,
            crate::data::ColumnTransform::Categorical { levels, .. } => offset += levels.len(),
        }
    }
    None
}

/// Trains the predictor architecture alone on BCE. Shares batching and
/// optimizer code with the adversarial loop.
pub fn train_plain(data: &TabularDataset, cfg: &TrainConfig) -> Result<(NetworkState, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = NetworkState::new(predictor_architecture(data.dim())?, &mut rng)?;
    let adam = AdamConfig::with_eta(cfg.lr_p);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = stratified_batches(&data.s, cfg.batch_size, &mut rng)?;
        let mut total = 0.0;
        for idx in &batches {
            let xb = data.x.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| f64::from(data.y[i])).collect();
            let (y_hat, tape) = net.forward(&xb, true, &mut rng)?;
            let loss = prediction_loss(&yb, y_hat.data())?;
            let (grads, _) = net.backward(&tape, &to_column(loss.grad))?;
            net.adam_step(&grads, &adam)?;
            total += loss.value;
        }
        let mean = total / batches.len() as f64;
        if !mean.is_finite() {
            return Err(PfaError::Numeric(format!(
                "plain training diverged at epoch {epoch}"
            )));
        }
        epoch_losses.push(mean);
    }
    Ok((net, epoch_losses))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PFACKPT1";

/// Header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub input_dim: usize,
    pub masked_column: Option<usize>,
    pub generator: Architecture,
    pub predictor: Architecture,
    pub discriminator: Architecture,
    /// Parameter counts of G, P and D, in blob order.
    pub param_counts: [usize; 3],
    pub train_config: TrainConfig,
    pub coeff_state: CoeffState,
    /// Free-form context (dataset spec, split seed, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Writes `PFACKPT1`, the header length as u64 LE, the JSON header, then
/// every parameter of G, P and D as f64 LE.
pub fn save_checkpoint(
    path: &Path,
    model: &PfaModel,
    train_config: &TrainConfig,
    coeff_state: &CoeffState,
    extra: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        input_dim: model.input_dim,
        masked_column: model.masked_column,
        generator: model.generator.arch.clone(),
        predictor: model.predictor.arch.clone(),
        discriminator: model.discriminator.arch.clone(),
        param_counts: [
            model.generator.param_count(),
            model.predictor.param_count(),
            model.discriminator.param_count(),
        ],
        train_config: train_config.clone(),
        coeff_state: coeff_state.clone(),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for net in [&model.generator, &model.predictor, &model.discriminator] {
        for v in net.flat_params() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PfaModel, CheckpointHeader)> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| PfaError::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..json_end])?;
    let blob = &bytes[json_end..];
    let total: usize = header.param_counts.iter().sum();
    if blob.len() != total * 8 {
        return Err(bad("parameter blob has the wrong size"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    // Architecture shapes are all that matter; weights are overwritten below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut nets = Vec::with_capacity(3);
    let mut offset = 0;
    for (arch, count) in [&header.generator, &header.predictor, &header.discriminator]
        .into_iter()
        .zip(header.param_counts)
    {
        let mut net = NetworkState::new(arch.clone(), &mut rng)?;
        net.load_flat_params(&values[offset..offset + count])?;
        offset += count;
        nets.push(net);
    }
    let discriminator = nets.pop().expect("three networks");
    let predictor = nets.pop().expect("three networks");
    let generator = nets.pop().expect("three networks");
    Ok((
        PfaModel {
            generator,
            predictor,
            discriminator,
            input_dim: header.input_dim,
            masked_column: header.masked_column,
        },
        header,
    ))
}
