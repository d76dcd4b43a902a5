//! Training pipeline: objective, independent per-frame stage, online
//! perceptron/SGD epochs, evaluation and cross-validation.
//!
//! The objective minimized over a dataset is
//!
//! ```text
//! sum_i -log p(y_i | h_i) + (lambda1 / 2) sum_{i,t} ||y_hat_it - y_it||^2
//!     + lambda2 ||theta||^2 + lambda3 ||omega||_1
//! ```
//!
//! with `theta = {A, W, b, c, start, end}` and `omega` the encoder weights.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{
    emission_logits, forward_backward, grad_theta_hard, grad_theta_soft, prediction_residuals, sequence_score, viterbi,
    CrfParams, EmissionTable,
};
use crate::dataset::{split_folds, Dataset, LabelAlphabet};
use crate::error::{Error, Result};
use crate::math::{argmax, derive_seed};
use crate::nn::{backprop_batch, forward_batch, frame_loss, l1_subgrad, BatchTrace, EncoderWeights, NetGrads, TopLayer};
use crate::rbm::{greedy_pretrain, PretrainReport};

const STREAM_INIT: u64 = 1;
const STREAM_RBM: u64 = 2;
const STREAM_INDEPENDENT: u64 = 3;
const STREAM_ONLINE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Base step for the chain and top-layer parameters.
    pub step_theta: f64,
    /// Base step for the encoder weights.
    pub step_omega: f64,
    pub decay: f64,
    pub epochs: usize,
    /// Hidden widths of the encoder; the input width comes from the data.
    pub layers: Vec<usize>,
    pub rbm_epochs: usize,
    pub rbm_lr: f64,
    pub rbm_batch: usize,
    pub ind_epochs: usize,
    pub ind_lr: f64,
    pub ind_batch: usize,
    /// Heavy-ball momentum of the independent stage, in `[0, 1)`.
    pub ind_momentum: f64,
    pub seed: u64,
    /// Feed the encoder the posterior-based chain signal instead of the
    /// hard perceptron difference.
    pub soft_encoder_grad: bool,
    pub use_rbm: bool,
    pub use_independent: bool,
    /// Keep the encoder fixed during online epochs.
    pub freeze_encoder: bool,
    /// Standard deviation of the initial top-layer weights.
    pub w_init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.0,
            lambda3: 2e-4,
            step_theta: 0.01,
            step_omega: 0.05,
            decay: 0.01,
            epochs: 100,
            layers: vec![100, 100, 64],
            rbm_epochs: 30,
            rbm_lr: 0.1,
            rbm_batch: 100,
            ind_epochs: 30,
            ind_lr: 0.6,
            ind_batch: 32,
            ind_momentum: 0.9,
            seed: 0,
            soft_encoder_grad: false,
            use_rbm: true,
            use_independent: true,
            freeze_encoder: false,
            w_init_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3), ("decay", self.decay)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        let positive = [
            ("step_theta", self.step_theta),
            ("step_omega", self.step_omega),
            ("rbm_lr", self.rbm_lr),
            ("ind_lr", self.ind_lr),
            ("w_init_std", self.w_init_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.ind_momentum) {
            return Err(Error::arg(format!("ind_momentum must lie in [0, 1), got {}", self.ind_momentum)));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::arg(format!("layers must list positive widths, got {:?}", self.layers)));
        }
        if self.rbm_batch == 0 || self.ind_batch == 0 {
            return Err(Error::arg("batch sizes must be positive"));
        }
        if self.use_rbm && self.rbm_epochs == 0 {
            return Err(Error::arg("rbm_epochs must be at least 1 when RBM pretraining is enabled"));
        }
        Ok(())
    }

    /// The per-stage seeds derived from `seed`, by stage name.
    pub fn stage_seeds(&self) -> [(&'static str, u64); 4] {
        [
            ("init", derive_seed(self.seed, STREAM_INIT)),
            ("rbm", derive_seed(self.seed, STREAM_RBM)),
            ("independent", derive_seed(self.seed, STREAM_INDEPENDENT)),
            ("online", derive_seed(self.seed, STREAM_ONLINE)),
        ]
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim).chain(self.layers.iter().copied()).collect()
    }
}

/// `base / (1 + epoch * decay)`.
pub fn step_size(base: f64, epoch: usize, decay: f64) -> f64 {
    base / (1.0 + epoch as f64 * decay)
}

/// Every trainable parameter plus the alphabet and the config it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub encoder: EncoderWeights,
    pub top: TopLayer,
    pub crf: CrfParams,
    pub alphabet: LabelAlphabet,
    pub config: TrainConfig,
}

impl ModelState {
    pub fn new(
        encoder: EncoderWeights,
        top: TopLayer,
        crf: CrfParams,
        alphabet: LabelAlphabet,
        config: TrainConfig,
    ) -> Result<Self> {
        let k = alphabet.len();
        if top.code_dim() != encoder.code_dim() {
            return Err(Error::arg("top layer width does not match encoder output"));
        }
        if top.num_labels() != k || crf.num_labels() != k {
            return Err(Error::arg(format!("parameters are not sized for {k} labels")));
        }
        Ok(Self {
            encoder,
            top,
            crf,
            alphabet,
            config,
        })
    }

    /// Random encoder, `W ~ N(0, w_init_std^2)`, every other chain parameter zero.
    pub fn init(alphabet: LabelAlphabet, input_dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT));
        let encoder = EncoderWeights::random(&config.layer_sizes(input_dim), &mut rng)?;
        let k = alphabet.len();
        let top = TopLayer::random(encoder.code_dim(), k, config.w_init_std, &mut rng);
        Self::new(encoder, top, CrfParams::zeros(k), alphabet, config.clone())
    }

    pub fn num_labels(&self) -> usize {
        self.alphabet.len()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Squared norm of every chain/top-layer parameter.
    pub fn theta_sq_norm(&self) -> f64 {
        self.crf.sq_norm() + self.top.w.iter().chain(self.top.c.iter()).map(|v| v * v).sum::<f64>()
    }

    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if dataset.dim() != self.input_dim() && !dataset.is_empty() {
            return Err(Error::Mismatch(format!(
                "data frames have dimension {}, model expects {}",
                dataset.dim(),
                self.input_dim()
            )));
        }
        if dataset.alphabet != self.alphabet {
            return Err(Error::Mismatch("data and model use different label alphabets".into()));
        }
        Ok(())
    }

    pub fn forward(&self, frames: ArrayView2<'_, f64>) -> Result<(BatchTrace, EmissionTable)> {
        let trace = forward_batch(frames, &self.encoder, &self.top)?;
        let em = emission_logits(trace.codes(), &self.top, &self.crf, self.config.lambda1)?;
        Ok((trace, em))
    }

    pub fn decode(&self, frames: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let (_, em) = self.forward(frames)?;
        Ok(viterbi(&em, &self.crf)?.0)
    }

    /// Per-frame argmax of the top-layer prediction, ignoring label context.
    pub fn decode_independent(&self, frames: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let trace = forward_batch(frames, &self.encoder, &self.top)?;
        Ok(trace.predictions.rows().into_iter().map(argmax).collect())
    }
}

pub fn objective_value(dataset: &Dataset, model: &ModelState, config: &TrainConfig) -> Result<f64> {
    model.check_compatible(dataset)?;
    let mut total = config.lambda2 * model.theta_sq_norm() + config.lambda3 * model.encoder.l1_norm();
    for seq in &dataset.sequences {
        let trace = forward_batch(seq.frames.view(), &model.encoder, &model.top)?;
        let em = emission_logits(trace.codes(), &model.top, &model.crf, config.lambda1)?;
        let post = forward_backward(&em, &model.crf)?;
        total += post.log_z - sequence_score(&em, &seq.labels, &model.crf)?;
        if config.lambda1 != 0.0 {
            let sq: f64 = trace
                .predictions
                .rows()
                .into_iter()
                .zip(&seq.labels)
                .map(|(row, &y)| frame_loss(row, y))
                .sum();
            total += 0.5 * config.lambda1 * sq;
        }
    }
    Ok(total)
}

/// Gradient of [`objective_value`] with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub crf: CrfParams,
    pub w: Array2<f64>,
    pub c: Array1<f64>,
    pub layers: Vec<Array2<f64>>,
}

impl ModelGrads {
    /// `model -= step * grad`.
    pub fn descend(&self, model: &mut ModelState, step: f64) {
        model.crf.transitions.scaled_add(-step, &self.crf.transitions);
        model.crf.bias.scaled_add(-step, &self.crf.bias);
        model.crf.start.scaled_add(-step, &self.crf.start);
        model.crf.end.scaled_add(-step, &self.crf.end);
        model.top.w.scaled_add(-step, &self.w);
        model.top.c.scaled_add(-step, &self.c);
        for (w, g) in model.encoder.layers_mut().iter_mut().zip(&self.layers) {
            w.scaled_add(-step, g);
        }
    }
}

/// Analytic gradient of the full objective, using the posterior marginals
/// for the likelihood term and the `l1` subgradient with `sign(0) = 0`.
pub fn objective_gradient(dataset: &Dataset, model: &ModelState, config: &TrainConfig) -> Result<ModelGrads> {
    model.check_compatible(dataset)?;
    let k = model.num_labels();
    let mut crf = CrfParams::zeros(k);
    let mut w = Array2::zeros(model.top.w.raw_dim());
    let mut c = Array1::zeros(k);
    let mut net = NetGrads::zeros(&model.encoder, &model.top);
    for seq in &dataset.sequences {
        let trace = forward_batch(seq.frames.view(), &model.encoder, &model.top)?;
        let em = emission_logits(trace.codes(), &model.top, &model.crf, config.lambda1)?;
        let post = forward_backward(&em, &model.crf)?;
        let resid = prediction_residuals(trace.predictions.view(), &seq.labels);
        let g = grad_theta_soft(trace.codes(), &seq.labels, &post, config.lambda1, &model.top, resid.view())?;
        crf.transitions -= &g.transitions;
        crf.bias -= &g.bias;
        crf.start -= &g.start;
        crf.end -= &g.end;
        w -= &g.w;
        c -= &g.c;
        let code_loss_grad = -&g.codes;
        let back = backprop_batch(
            seq.frames.view(),
            &seq.labels,
            &trace,
            Some(code_loss_grad.view()),
            0.5 * config.lambda1,
            &model.encoder,
            &model.top,
        )?;
        // back.w / back.c repeat the squared-loss terms already inside g
        for (acc, gl) in net.layers.iter_mut().zip(&back.layers) {
            *acc += gl;
        }
    }
    if config.lambda2 != 0.0 {
        let two = 2.0 * config.lambda2;
        crf.transitions.scaled_add(two, &model.crf.transitions);
        crf.bias.scaled_add(two, &model.crf.bias);
        crf.start.scaled_add(two, &model.crf.start);
        crf.end.scaled_add(two, &model.crf.end);
        w.scaled_add(two, &model.top.w);
        c.scaled_add(two, &model.top.c);
    }
    for (acc, l1) in net.layers.iter_mut().zip(l1_subgrad(&model.encoder, config.lambda3)) {
        *acc += &l1;
    }
    Ok(ModelGrads {
        crf,
        w,
        c,
        layers: net.layers,
    })
}

/// Per-frame stage objective `lambda1 * sum ||y_hat - y||^2 + lambda3 * ||omega||_1`.
fn independent_objective(frames: ArrayView2<'_, f64>, labels: &[usize], model: &ModelState, lambda1: f64, lambda3: f64) -> Result<f64> {
    let trace = forward_batch(frames, &model.encoder, &model.top)?;
    let sq: f64 = trace
        .predictions
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| frame_loss(row, y))
        .sum();
    Ok(lambda1 * sq + lambda3 * model.encoder.l1_norm())
}

/// Fits the encoder and top layer to per-frame targets, ignoring label context.
///
/// Mini-batch gradient descent on the batch-mean gradient. After every epoch
/// the full stage objective is recomputed; an epoch that increases it is
/// rolled back and the step halved, so the objective never rises.
/// The chain-only parameters are left untouched.
///
/// Also returns the stage objective before the first epoch and after each
/// epoch (after any rollback), so the trajectory is non-increasing.
pub fn independent_pretrain(dataset: &Dataset, model: &ModelState, config: &TrainConfig) -> Result<(ModelState, Vec<f64>)> {
    model.check_compatible(dataset)?;
    let mut model = model.clone();
    if config.ind_epochs == 0 || dataset.is_empty() {
        return Ok((model, Vec::new()));
    }
    let frames = dataset.stacked_frames();
    let labels: Vec<usize> = dataset.sequences.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let m = labels.len();
    let (lambda1, lambda3) = (config.lambda1, config.lambda3);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INDEPENDENT));
    let mut order: Vec<usize> = (0..m).collect();
    let mut lr = config.ind_lr;
    let mut best = independent_objective(frames.view(), &labels, &model, lambda1, lambda3)?;
    let mut history = vec![best];
    let still = NetGrads::zeros(&model.encoder, &model.top);
    let mut velocity = still.clone();
    let mu = config.ind_momentum;
    for _ in 0..config.ind_epochs {
        let snapshot = model.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.ind_batch) {
            let x = frames.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = forward_batch(x.view(), &model.encoder, &model.top)?;
            let g = backprop_batch(x.view(), &y, &trace, None, lambda1, &model.encoder, &model.top)?;
            let inv_b = 1.0 / chunk.len() as f64;
            let l1 = l1_subgrad(&model.encoder, lambda3 * chunk.len() as f64 / m as f64);
            velocity.w = &velocity.w * mu + &g.w * inv_b;
            velocity.c = &velocity.c * mu + &g.c * inv_b;
            for ((v, gl), l1) in velocity.layers.iter_mut().zip(&g.layers).zip(&l1) {
                *v = &*v * mu + &(gl + l1) * inv_b;
            }
            model.top.w.scaled_add(-lr, &velocity.w);
            model.top.c.scaled_add(-lr, &velocity.c);
            for (w, v) in model.encoder.layers_mut().iter_mut().zip(&velocity.layers) {
                w.scaled_add(-lr, v);
            }
        }
        let value = independent_objective(frames.view(), &labels, &model, lambda1, lambda3)?;
        if value.is_finite() && value <= best {
            best = value;
        } else {
            model = snapshot;
            velocity = still.clone();
            lr *= 0.5;
        }
        history.push(best);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub train_error: f64,
    pub violations: usize,
}

pub type TrainLog = Vec<EpochRecord>;

/// One online sweep over the training sequences in a seeded shuffled order.
///
/// For each sequence the current model decodes `y*`. When `y* != y` the
/// chain and top-layer parameters take a perceptron step along
/// `d/d theta [score(y) - score(y*)]` and the resulting code gradient is
/// backpropagated into the encoder. The squared-loss and `l1` terms are
/// applied on every sequence; the global regularizers are split evenly
/// across the `N` sequences of the sweep.
pub fn online_epoch(
    dataset: &Dataset,
    model: &ModelState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(ModelState, EpochRecord)> {
    model.check_compatible(dataset)?;
    let mut model = model.clone();
    let n = dataset.len().max(1) as f64;
    let eta_theta = step_size(config.step_theta, epoch, config.decay);
    let eta_omega = step_size(config.step_omega, epoch, config.decay);
    let lambda1 = config.lambda1;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(config.seed, STREAM_ONLINE),
        epoch as u64,
    )));

    let mut violations = 0;
    for &i in &order {
        let seq = &dataset.sequences[i];
        let trace = forward_batch(seq.frames.view(), &model.encoder, &model.top)?;
        let em = emission_logits(trace.codes(), &model.top, &model.crf, lambda1)?;
        let (predicted, _) = viterbi(&em, &model.crf)?;
        let violated = predicted != seq.labels;

        let mut perceptron = None;
        let mut code_grad = None;
        if violated {
            violations += 1;
            let hard = grad_theta_hard(trace.codes(), &seq.labels, &predicted, lambda1, &model.top)?;
            let signal = if config.soft_encoder_grad {
                let post = forward_backward(&em, &model.crf)?;
                let zero = Array2::zeros((seq.len(), model.num_labels()));
                grad_theta_soft(trace.codes(), &seq.labels, &post, lambda1, &model.top, zero.view())?.codes
            } else {
                hard.codes.clone()
            };
            code_grad = Some(-signal);
            perceptron = Some(hard);
        }

        let needs_backprop = code_grad.is_some() || lambda1 != 0.0;
        let net = if needs_backprop {
            Some(backprop_batch(
                seq.frames.view(),
                &seq.labels,
                &trace,
                code_grad.as_ref().map(|g| g.view()),
                0.5 * lambda1,
                &model.encoder,
                &model.top,
            )?)
        } else {
            None
        };

        if let Some(hard) = &perceptron {
            hard.ascend(&mut model.crf, &mut model.top, eta_theta);
        }
        if let Some(net) = &net {
            if lambda1 != 0.0 {
                model.top.w.scaled_add(-eta_theta, &net.w);
                model.top.c.scaled_add(-eta_theta, &net.c);
            }
        }
        if config.lambda2 != 0.0 {
            let shrink = 1.0 - eta_theta * 2.0 * config.lambda2 / n;
            model.crf.transitions *= shrink;
            model.crf.bias *= shrink;
            model.crf.start *= shrink;
            model.crf.end *= shrink;
            model.top.w *= shrink;
            model.top.c *= shrink;
        }
        if !config.freeze_encoder {
            let l1 = (config.lambda3 != 0.0).then(|| l1_subgrad(&model.encoder, config.lambda3 / n));
            let layers = model.encoder.layers_mut();
            if let Some(net) = &net {
                for (w, g) in layers.iter_mut().zip(&net.layers) {
                    w.scaled_add(-eta_omega, g);
                }
            }
            if let Some(l1) = &l1 {
                for (w, g) in layers.iter_mut().zip(l1) {
                    w.scaled_add(-eta_omega, g);
                }
            }
        }
    }

    let objective = objective_value(dataset, &model, config)?;
    let train_error = evaluate(dataset, &model)?.frame_error;
    Ok((
        model,
        EpochRecord {
            epoch,
            objective,
            train_error,
            violations,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub frame_error: f64,
    pub errors: usize,
    pub frames: usize,
    pub predictions: Vec<Vec<usize>>,
}

fn score_predictions(dataset: &Dataset, predictions: Vec<Vec<usize>>) -> Evaluation {
    let frames = dataset.num_frames();
    let errors = dataset
        .sequences
        .iter()
        .zip(&predictions)
        .map(|(s, p)| s.labels.iter().zip(p).filter(|(a, b)| a != b).count())
        .sum();
    Evaluation {
        frame_error: if frames == 0 { 0.0 } else { errors as f64 / frames as f64 },
        errors,
        frames,
        predictions,
    }
}

/// Viterbi-decodes every sequence and reports the fraction of wrong frames.
pub fn evaluate(dataset: &Dataset, model: &ModelState) -> Result<Evaluation> {
    model.check_compatible(dataset)?;
    let predictions = dataset
        .sequences
        .iter()
        .map(|s| model.decode(s.frames.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_predictions(dataset, predictions))
}

/// Frame error of the context-free predictor: argmax of the top layer per frame.
pub fn evaluate_independent(dataset: &Dataset, model: &ModelState) -> Result<Evaluation> {
    model.check_compatible(dataset)?;
    let predictions = dataset
        .sequences
        .iter()
        .map(|s| model.decode_independent(s.frames.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_predictions(dataset, predictions))
}

/// Everything produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    /// The model after the pretraining stages, before any online epoch.
    pub pretrained: ModelState,
    pub rbm_report: Option<PretrainReport>,
    pub log: TrainLog,
}

/// RBM initialization and the independent stage, as enabled in `config`.
pub fn pretrain(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelState, Option<PretrainReport>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let mut model = ModelState::init(dataset.alphabet.clone(), dataset.dim(), config)?;
    let mut report = None;
    if config.use_rbm {
        let (encoder, r) = greedy_pretrain(
            dataset.stacked_frames().view(),
            &config.layer_sizes(dataset.dim()),
            config.rbm_epochs,
            config.rbm_lr,
            config.rbm_batch,
            derive_seed(config.seed, STREAM_RBM),
        )?;
        model.encoder = encoder;
        report = Some(r);
    }
    if config.use_independent {
        model = independent_pretrain(dataset, &model, config)?.0;
    }
    Ok((model, report))
}

/// Runs `config.epochs` online sweeps starting from `model`.
pub fn train_online(
    dataset: &Dataset,
    model: ModelState,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelState, TrainLog)> {
    let mut model = model;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (next, record) = online_epoch(dataset, &model, config, epoch)?;
        on_epoch(&record);
        model = next;
        log.push(record);
    }
    Ok((model, log))
}

/// Full pipeline: pretraining stages followed by online epochs.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let (pretrained, rbm_report) = pretrain(dataset, config)?;
    let (model, log) = train_online(dataset, pretrained.clone(), config, |_| {})?;
    Ok(TrainOutcome {
        model,
        pretrained,
        rbm_report,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Viterbi frame error of the fully trained model on the held-out fold.
    pub error: f64,
    /// Per-frame argmax error of the pretrained (context-free) predictor.
    pub baseline_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean_error: f64,
    pub mean_baseline_error: f64,
}

/// `k`-fold cross-validation of the full pipeline over seeded sequence folds.
pub fn cross_validate(dataset: &Dataset, k: usize, config: &TrainConfig, seed: u64) -> Result<CrossValidation> {
    let assignment = split_folds(dataset, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (train_idx, test_idx) = assignment.train_test(fold);
        let train_set = dataset.subset(&train_idx);
        let test_set = dataset.subset(&test_idx);
        let outcome = train(&train_set, config)?;
        folds.push(FoldResult {
            fold,
            train_sequences: train_idx.len(),
            test_sequences: test_idx.len(),
            error: evaluate(&test_set, &outcome.model)?.frame_error,
            baseline_error: evaluate_independent(&test_set, &outcome.pretrained)?.frame_error,
        });
    }
    let mean = |f: fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    Ok(CrossValidation {
        mean_error: mean(|f| f.error),
        mean_baseline_error: mean(|f| f.baseline_error),
        folds,
    })
}
