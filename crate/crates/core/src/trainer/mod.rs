//! Supervised fine-tuning: mean cross-entropy, reverse-mode gradients,
//! AdamW with a linear learning-rate schedule, and the epoch loop.

mod optim;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use optim::{adamw_step, clip_grad_norm, linear_schedule, AdamWHyper, AdamWState};

use crate::corpus::{Corpus, Label};
use crate::encoder::{
    loss_and_gradients, predict_proba, BatchGradients, Mode, ModelConfig, ModelError, Parameters, Params, Scalar,
};
use crate::tokenizer::{TokenSequence, Tokenizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyTrain,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write history: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    #[default]
    All,
    HeadOnly,
}

impl TrainableScope {
    pub fn allows(self, tensor_name: &str) -> bool {
        match self {
            TrainableScope::All => true,
            TrainableScope::HeadOnly => Params::<f32>::is_classifier(tensor_name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    pub trainable_scope: TrainableScope,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 3,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.0,
            seed: 0,
            loss_reduction: LossReduction::Mean,
            trainable_scope: TrainableScope::All,
            max_grad_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return fail("weight_decay must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm < 0.0 {
            return fail("max_grad_norm must be nonnegative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWHyper {
        AdamWHyper {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_train)
    }
}

/// Mean of `-ln p(true class)` over the batch.
pub fn cross_entropy(probabilities: &[[f64; 2]], labels: &[Label]) -> Result<f64, TrainError> {
    if probabilities.len() != labels.len() {
        return Err(TrainError::Shape(format!(
            "{} probability rows but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probabilities.iter().zip(labels).map(|(p, l)| -p[l.index()].ln()).sum();
    Ok(total / labels.len() as f64)
}

/// Gradients of the mean cross-entropy with dropout disabled.
pub fn backward<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
    labels: &[Label],
) -> Result<BatchGradients<T>, TrainError> {
    Ok(loss_and_gradients(params, config, batch, labels, Mode::Inference)?)
}

/// Argmax label; an exact tie goes to the negative class.
pub fn decide<T: Scalar>(p: [T; 2]) -> Label {
    if p[1] > p[0] {
        Label::Climate
    } else {
        Label::Other
    }
}

/// Encoded sentences paired with their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSet {
    pub sequences: Vec<TokenSequence>,
    pub labels: Vec<Label>,
}

impl EncodedSet {
    pub fn from_corpus(corpus: &Corpus, tokenizer: &Tokenizer) -> Self {
        Self {
            sequences: tokenizer.encode_all(corpus.iter().map(|r| r.text())),
            labels: corpus.labels(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

const EVAL_CHUNK: usize = 64;

/// Inference-mode probabilities for every sequence.
pub fn predict_probabilities(
    params: &Parameters,
    config: &ModelConfig,
    sequences: &[TokenSequence],
) -> Result<Vec<[f32; 2]>, ModelError> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(EVAL_CHUNK) {
        out.extend(predict_proba(params, config, chunk)?);
    }
    Ok(out)
}

pub fn predict_labels(
    params: &Parameters,
    config: &ModelConfig,
    sequences: &[TokenSequence],
) -> Result<Vec<Label>, ModelError> {
    Ok(predict_probabilities(params, config, sequences)?
        .into_iter()
        .map(decide)
        .collect())
}

fn accuracy(pred: &[Label], gold: &[Label]) -> f64 {
    let hits = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    hits as f64 / gold.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FineTuneResult {
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

impl FineTuneResult {
    /// One JSON object per line: epoch, train_loss, train_acc, val_acc.
    pub fn write_history(&self, mut w: impl Write) -> Result<(), TrainError> {
        for rec in &self.history {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Tokenizes both corpora and runs [`fine_tune_encoded`].
pub fn fine_tune(
    init: Parameters,
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    train: &Corpus,
    val: &Corpus,
    tc: &TrainConfig,
) -> Result<FineTuneResult, TrainError> {
    let train = EncodedSet::from_corpus(train, tokenizer);
    let val = EncodedSet::from_corpus(val, tokenizer);
    fine_tune_encoded(init, config, &train, &val, tc, |_| {})
}

/// The epoch loop. The training set is reshuffled each epoch from a
/// seed-derived stream; the last partial batch is kept. Dropout draws from a
/// second stream of the same seed, so equal inputs give bit-identical results.
pub fn fine_tune_encoded(
    init: Parameters,
    config: &ModelConfig,
    train: &EncodedSet,
    val: &EncodedSet,
    tc: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<FineTuneResult, TrainError> {
    tc.validate()?;
    config.validate()?;
    init.check(config)?;
    if tc.epochs == 0 {
        return Ok(FineTuneResult {
            params: init,
            history: Vec::new(),
            steps: 0,
        });
    }
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if train.sequences.len() != train.labels.len() || val.sequences.len() != val.labels.len() {
        return Err(TrainError::Shape("sequence and label counts differ".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    dropout_rng.set_stream(2);

    let total_steps = tc.total_steps(train.len());
    let warmup = (tc.warmup_fraction * total_steps as f64).round() as usize;
    let scope = tc.trainable_scope;
    let mut hyper = tc.adamw();
    let mut params = init;
    let mut state = AdamWState::new(&params);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| train.sequences[i].clone()).collect();
            let labels: Vec<Label> = chunk.iter().map(|&i| train.labels[i]).collect();
            let BatchGradients {
                loss,
                probabilities,
                mut grads,
            } = loss_and_gradients(&params, config, &batch, &labels, Mode::Train(&mut dropout_rng))?;
            loss_sum += loss * chunk.len() as f64;
            hits += probabilities
                .iter()
                .zip(&labels)
                .filter(|(p, l)| decide(**p) == **l)
                .count();

            let grad_norm = clip_grad_norm(&mut grads, tc.max_grad_norm, |n| scope.allows(n));
            let lr = tc.learning_rate * linear_schedule(step, total_steps, warmup);
            hyper.learning_rate = lr;
            step += 1;
            adamw_step(&mut params, &grads, &mut state, &hyper, step as u64, |n| {
                scope.allows(n)
            })?;
            on_step(&StepRecord {
                step,
                epoch,
                loss,
                learning_rate: lr,
                grad_norm,
            });
        }
        params.check_finite()?;
        let val_acc = if val.is_empty() {
            None
        } else {
            let pred = predict_labels(&params, config, &val.sequences)?;
            Some(accuracy(&pred, &val.labels))
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_acc,
        });
    }
    Ok(FineTuneResult {
        params,
        history,
        steps: step,
    })
}
