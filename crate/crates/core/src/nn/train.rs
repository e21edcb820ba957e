use rand::seq::SliceRandom;

use super::network::{argmax, Gradients, Mode, Network};
use super::optim::{optimizer_step, Optimizer};
use super::kernels::softmax_ce;
use super::NnError;
use crate::seed;

/// Samples processed per forward/backward pass. A batch is split into
/// micro-batches whose gradients are summed before one optimizer step.
const MICRO_BATCH: usize = 64;

/// Indexed access to training samples.
pub trait SampleSource: Sync {
    /// Values per sample (must equal the network's input length).
    fn input_len(&self) -> usize;
    fn fill_input(&self, index: usize, out: &mut [f32]);
    fn label(&self, index: usize) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: Some(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept (best validation loss, or the last
    /// epoch when there is no validation set).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn gather(source: &dyn SampleSource, idx: &[usize], inputs: &mut Vec<f32>, labels: &mut Vec<usize>) {
    let n = source.input_len();
    inputs.resize(idx.len() * n, 0.0);
    labels.clear();
    for (slot, &k) in idx.iter().enumerate() {
        source.fill_input(k, &mut inputs[slot * n..(slot + 1) * n]);
        labels.push(source.label(k));
    }
}

/// Mean cross-entropy and accuracy over `idx` in eval mode.
pub fn evaluate_loss(net: &Network, source: &dyn SampleSource, idx: &[usize]) -> Result<(f64, f64), NnError> {
    if idx.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n_out = net.output_len();
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(MICRO_BATCH) {
        gather(source, chunk, &mut inputs, &mut labels);
        let logits = net.predict_logits(&inputs, chunk.len())?;
        for (b, &label) in labels.iter().enumerate() {
            let z = &logits[b * n_out..(b + 1) * n_out];
            loss += softmax_ce(z, label).0;
            correct += usize::from(argmax(z) == label);
        }
    }
    Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
}

pub fn train(
    net: &mut Network,
    source: &dyn SampleSource,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport, NnError> {
    train_with_progress(net, source, train_idx, val_idx, config, |_| {})
}

/// Mini-batch training with per-epoch shuffling and optional early stopping
/// on validation loss. The best parameters seen are restored at the end.
pub fn train_with_progress(
    net: &mut Network,
    source: &dyn SampleSource,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, NnError> {
    if config.batch_size == 0 {
        return Err(NnError::InvalidSpec("batch_size must be at least 1".into()));
    }
    if train_idx.is_empty() {
        return Err(NnError::InvalidSpec("empty training set".into()));
    }
    if source.input_len() != net.input_len() {
        return Err(NnError::Shape(format!(
            "samples have {} values, network expects {}",
            source.input_len(),
            net.input_len()
        )));
    }

    let mut order = train_idx.to_vec();
    let mut grads = Gradients::zeros_for(net.params());
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<_>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let epoch_seed = seed::derive(config.seed, epoch as u64);
        order.shuffle(&mut seed::rng(epoch_seed));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut dropout_rng = seed::rng(seed::derive(epoch_seed, b as u64 + 1));
            grads.clear();
            let scale = 1.0 / batch.len() as f32;
            for micro in batch.chunks(MICRO_BATCH) {
                gather(source, micro, &mut inputs, &mut labels);
                let (l, c) = net.accumulate_gradients(&inputs, &labels, Mode::Train, &mut dropout_rng, scale, &mut grads)?;
                loss_sum += l;
                correct += c;
            }
            optimizer_step(net.params_mut(), &grads, config);
        }
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(net, source, val_idx)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&stats);
        history.push(stats);

        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(bl, _, _)| vl < *bl) {
                best = Some((vl, epoch, net.params().layers.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, layers)) => {
            net.params_mut().layers = layers;
            epoch
        }
        None => history.len().saturating_sub(1),
    };
    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
    })
}
