//! SGD training with per-epoch recombinant sampling.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Example};
use crate::neural::{accumulate_gradient, ModelConfig, ModelParams, NeuralError, Seq2Seq};
use crate::rng::{substream, GRAMMAR_SAMPLING, INIT, SHUFFLE};
use crate::scfg::{sample_example, Grammar, ScfgError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("sampling recombinant example: {0}")]
    Sample(#[from] ScfgError),
    #[error("example {index} ({example}): {source}")]
    Example { index: usize, example: String, source: NeuralError },
    #[error("non-finite log-likelihood or gradient at epoch {epoch} on example {example}")]
    NonFinite { epoch: usize, example: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub halve_every: usize,
    /// Last epoch trained at the initial rate.
    pub halve_start_epoch: usize,
    /// Recombinant examples per epoch; `None` means as many as the dataset.
    pub recombinant_per_epoch: Option<usize>,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            initial_lr: 0.1,
            halve_every: 5,
            halve_start_epoch: 15,
            recombinant_per_epoch: None,
            seed: 0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.initial_lr)));
        }
        if self.halve_every == 0 {
            return Err(TrainError::Config("halve_every must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Config(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn recombinant_count(&self, dataset_len: usize) -> usize {
        self.recombinant_per_epoch.unwrap_or(dataset_len)
    }
}

/// Rate for 1-based epoch `t`: halved once at epoch `halve_start + 1` and
/// again every `halve_every` epochs after that.
pub fn learning_rate(t: usize, config: &TrainConfig) -> f64 {
    let halvings =
        if t <= config.halve_start_epoch { 0 } else { (t - config.halve_start_epoch - 1) / config.halve_every + 1 };
    config.initial_lr * 0.5f64.powi(halvings as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_loglik: f64,
    pub seconds: f64,
    pub examples: usize,
}

/// Fresh model whose input vocabulary drops training singletons.
pub fn init_model(config: ModelConfig, dataset: &Dataset, seed: u64) -> Seq2Seq {
    init_model_with_grammar(config, dataset, None, seed)
}

/// Like [`init_model`], with every logical-form terminal of `grammar` added
/// to the output vocabulary so recombinant targets stay writable.
pub fn init_model_with_grammar(
    config: ModelConfig,
    dataset: &Dataset,
    grammar: Option<&Grammar>,
    seed: u64,
) -> Seq2Seq {
    let reduced = dataset.replace_singletons();
    let mut output_vocab = dataset.output_vocab.clone();
    if let Some(g) = grammar {
        for rule in g.rules() {
            for tok in rule.beta.iter().filter_map(|s| s.terminal()) {
                output_vocab.insert(tok);
            }
        }
    }
    let mut rng = substream(seed, INIT);
    Seq2Seq::new(config, reduced.input_vocab, output_vocab, &mut rng)
}

/// `base` plus `n` fresh samples from `grammar`, shuffled.
pub fn build_epoch_dataset<R1: Rng, R2: Rng>(
    base: &[Example],
    grammar: Option<&Grammar>,
    n: usize,
    sample_rng: &mut R1,
    shuffle_rng: &mut R2,
) -> Result<Vec<Example>, ScfgError> {
    let mut out = base.to_vec();
    if let Some(g) = grammar {
        for _ in 0..n {
            out.push(sample_example(g, sample_rng)?);
        }
    }
    out.shuffle(shuffle_rng);
    Ok(out)
}

pub fn train(
    model: &mut Seq2Seq,
    dataset: &Dataset,
    grammar: Option<&Grammar>,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>, TrainError> {
    train_with(model, dataset, grammar, config, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    model: &mut Seq2Seq,
    dataset: &Dataset,
    grammar: Option<&Grammar>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>, TrainError>
where
    F: FnMut(&EpochMetrics, &Seq2Seq) -> Result<(), TrainError>,
{
    config.validate()?;
    let mut sample_rng = substream(config.seed, GRAMMAR_SAMPLING);
    let mut shuffle_rng = substream(config.seed, SHUFFLE);
    let n = config.recombinant_count(dataset.len());
    let mut grad = ModelParams::zeros(model.params.dims());
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let lr = learning_rate(epoch, config);
        let epoch_data = build_epoch_dataset(&dataset.examples, grammar, n, &mut sample_rng, &mut shuffle_rng)?;
        let mut total = 0.0;
        for (index, ex) in epoch_data.iter().enumerate() {
            let input = model.prepare_input(&ex.utterance);
            let targets = model.prepare_targets(&input, &ex.logical_form).map_err(|source| TrainError::Example {
                index,
                example: ex.to_line(),
                source,
            })?;
            grad.zero();
            let ll = accumulate_gradient(&model.params, &input, &targets, &mut grad)
                .map_err(|source| TrainError::Example { index, example: ex.to_line(), source })?;
            let norm = grad.norm();
            if !ll.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFinite { epoch, example: ex.to_line() });
            }
            let scale = match config.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            model.params.add_scaled(lr * scale, &grad);
            total += ll;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            mean_train_loglik: total / epoch_data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
            examples: epoch_data.len(),
        };
        on_epoch(&m, model)?;
        metrics.push(m);
    }
    Ok(metrics)
}

/// Mean per-example log-likelihood under the current parameters.
pub fn mean_log_likelihood(model: &Seq2Seq, examples: &[Example]) -> Result<f64, NeuralError> {
    let mut total = 0.0;
    for ex in examples {
        total += model.log_likelihood(&ex.utterance, &ex.logical_form)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// CSV with header `epoch,lr,mean_train_loglik,seconds`.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], w: W) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "lr", "mean_train_loglik", "seconds"])?;
    for m in metrics {
        out.write_record([
            m.epoch.to_string(),
            m.lr.to_string(),
            m.mean_train_loglik.to_string(),
            format!("{:.3}", m.seconds),
        ])?;
    }
    out.flush()?;
    Ok(())
}
