//! End-to-end pipeline: train every regime on one dataset split and collect
//! comparable predictions.
//!
//! Receiver backbones are trained first and then frozen. DAMR-V and both
//! DAMR-F variants reuse them; the fusion heads only see features extracted
//! from the frozen backbones.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetRecord, Split};
use crate::metrics::{self, binning_snr, Comparison, MethodResult, MetricsError, Prediction};
use crate::models::{self, forward_with_tap_batch, FeatureTap, ModelError, ModelKind};
use crate::modulation::{ModulationType, FRAME_LEN, NUM_CLASSES};
use crate::nn::{self, softmax, Network, NnError, SampleSource, TrainConfig, TrainReport};
use crate::protocols::{damr_v_fuse, Decision, Method, ProbVector, ProtocolError, VoteWeights};
use crate::seed;
use crate::simnet::{Artifacts, SimError};

/// Records per inference batch.
const INFER_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn fill_frame(record: &DatasetRecord, rx: usize, out: &mut [f32]) {
    let f = &record.frames[rx];
    out[..FRAME_LEN].copy_from_slice(f.i());
    out[FRAME_LEN..].copy_from_slice(f.q());
}

/// One receiver's frames as 2-channel inputs.
pub struct ReceiverFrames<'a> {
    pub records: &'a [DatasetRecord],
    pub rx: usize,
}

impl SampleSource for ReceiverFrames<'_> {
    fn input_len(&self) -> usize {
        2 * FRAME_LEN
    }
    fn fill_input(&self, index: usize, out: &mut [f32]) {
        fill_frame(&self.records[index], self.rx, out);
    }
    fn label(&self, index: usize) -> usize {
        self.records[index].label.id() as usize
    }
}

/// All receivers' frames interleaved as `[I₁, Q₁, …, I₆, Q₆]`.
pub struct CentFrames<'a> {
    pub records: &'a [DatasetRecord],
}

impl SampleSource for CentFrames<'_> {
    fn input_len(&self) -> usize {
        2 * FRAME_LEN * self.records.first().map_or(0, DatasetRecord::n_rx)
    }
    fn fill_input(&self, index: usize, out: &mut [f32]) {
        for (rx, chunk) in out.chunks_exact_mut(2 * FRAME_LEN).enumerate() {
            fill_frame(&self.records[index], rx, chunk);
        }
    }
    fn label(&self, index: usize) -> usize {
        self.records[index].label.id() as usize
    }
}

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub width: usize,
    pub values: Vec<f32>,
    pub labels: Vec<usize>,
}

impl FeatureTable {
    pub fn row(&self, index: usize) -> &[f32] {
        &self.values[index * self.width..(index + 1) * self.width]
    }
}

impl SampleSource for FeatureTable {
    fn input_len(&self) -> usize {
        self.width
    }
    fn fill_input(&self, index: usize, out: &mut [f32]) {
        out.copy_from_slice(self.row(index));
    }
    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Frozen-backbone outputs for every record and receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutputs {
    pub n_rx: usize,
    /// `[record][rx][8]`
    pub logits: Vec<f32>,
    /// `[record][rx][256]`
    pub hidden: Vec<f32>,
    pub labels: Vec<usize>,
}

impl BackboneOutputs {
    pub fn logits(&self, record: usize, rx: usize) -> &[f32] {
        let k = (record * self.n_rx + rx) * NUM_CLASSES;
        &self.logits[k..k + NUM_CLASSES]
    }

    pub fn hidden(&self, record: usize, rx: usize) -> &[f32] {
        let k = (record * self.n_rx + rx) * models::HIDDEN;
        &self.hidden[k..k + models::HIDDEN]
    }

    /// Per-record concatenation of all receivers' features at `tap`.
    pub fn features(&self, tap: FeatureTap) -> FeatureTable {
        let values = match tap {
            FeatureTap::Logits8 => self.logits.clone(),
            FeatureTap::Hidden256 => self.hidden.clone(),
        };
        FeatureTable {
            width: self.n_rx * tap.size(),
            values,
            labels: self.labels.clone(),
        }
    }
}

/// Runs each receiver's backbone on its own frames.
pub fn backbone_outputs(backbones: &[Network], records: &[DatasetRecord]) -> Result<BackboneOutputs> {
    let n_rx = backbones.len();
    if let Some(r) = records.iter().find(|r| r.n_rx() != n_rx) {
        return Err(ExperimentError::Config(format!(
            "{n_rx} backbones for records with {} receivers",
            r.n_rx()
        )));
    }
    let n = records.len();
    let mut logits = vec![0.0f32; n * n_rx * NUM_CLASSES];
    let mut hidden = vec![0.0f32; n * n_rx * models::HIDDEN];
    let mut inputs = Vec::new();
    for (rx, net) in backbones.iter().enumerate() {
        let source = ReceiverFrames { records, rx };
        for start in (0..n).step_by(INFER_BATCH) {
            let end = (start + INFER_BATCH).min(n);
            inputs.resize((end - start) * 2 * FRAME_LEN, 0.0);
            for (slot, k) in (start..end).enumerate() {
                source.fill_input(k, &mut inputs[slot * 2 * FRAME_LEN..(slot + 1) * 2 * FRAME_LEN]);
            }
            for (slot, out) in forward_with_tap_batch(net, &inputs, end - start)?.into_iter().enumerate() {
                let k = (start + slot) * n_rx + rx;
                logits[k * NUM_CLASSES..(k + 1) * NUM_CLASSES].copy_from_slice(&out.logits);
                hidden[k * models::HIDDEN..(k + 1) * models::HIDDEN].copy_from_slice(&out.hidden256);
            }
        }
    }
    Ok(BackboneOutputs {
        n_rx,
        logits,
        hidden,
        labels: records.iter().map(|r| r.label.id() as usize).collect(),
    })
}

/// Seeds for model initialization and training derived from the config seed.
fn seeded(cfg: &TrainConfig, stream: u64) -> (u64, TrainConfig) {
    let init = seed::derive(cfg.seed, 2 * stream);
    let train = TrainConfig {
        seed: seed::derive(cfg.seed, 2 * stream + 1),
        ..cfg.clone()
    };
    (init, train)
}

const CENT_STREAM: u64 = 64;

fn head_stream(tap: FeatureTap) -> u64 {
    match tap {
        FeatureTap::Logits8 => 65,
        FeatureTap::Hidden256 => 66,
    }
}

fn fit(
    kind: ModelKind,
    n_rx: usize,
    stream: u64,
    source: &dyn SampleSource,
    split: &Split,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&nn::EpochStats),
) -> Result<(Network, TrainReport)> {
    let (init, train_cfg) = seeded(cfg, stream);
    let mut net = Network::new(models::build(kind, n_rx)?, init)?;
    let report = nn::train_with_progress(&mut net, source, &split.train, &split.val, &train_cfg, on_epoch)?;
    Ok((net, report))
}

/// Trains receiver `rx`'s local model on its own frames.
pub fn train_receiver(
    records: &[DatasetRecord],
    split: &Split,
    rx: usize,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&nn::EpochStats),
) -> Result<(Network, TrainReport)> {
    let source = ReceiverFrames { records, rx };
    fit(ModelKind::Vtcnn2, 1, rx as u64, &source, split, cfg, on_epoch)
}

/// Trains the 12-channel centralized model.
pub fn train_cent(
    records: &[DatasetRecord],
    split: &Split,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&nn::EpochStats),
) -> Result<(Network, TrainReport)> {
    let n_rx = records.first().map_or(0, DatasetRecord::n_rx);
    if n_rx != crate::channel::MAX_RECEIVERS {
        return Err(ExperimentError::Config(format!(
            "the centralized model needs {} receivers, dataset has {n_rx}",
            crate::channel::MAX_RECEIVERS
        )));
    }
    fit(ModelKind::Vtcnn2Cent, n_rx, CENT_STREAM, &CentFrames { records }, split, cfg, on_epoch)
}

/// Trains a fusion head on features of the frozen backbones.
pub fn train_head(
    tap: FeatureTap,
    outputs: &BackboneOutputs,
    split: &Split,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&nn::EpochStats),
) -> Result<(Network, TrainReport)> {
    let table = outputs.features(tap);
    fit(tap.head_kind(), outputs.n_rx, head_stream(tap), &table, split, cfg, on_epoch)
}

fn prediction(method: Method, record: &DatasetRecord, rx: usize, predicted: ModulationType) -> Prediction {
    Prediction {
        truth: record.label,
        predicted,
        snr_db: binning_snr(method, record, rx),
    }
}

fn argmax_class(values: &[f32]) -> ModulationType {
    ModulationType::ALL[nn::argmax(values)]
}

pub fn predict_lamr(outputs: &BackboneOutputs, records: &[DatasetRecord], idx: &[usize], rx: usize) -> Vec<Prediction> {
    idx.iter()
        .map(|&k| {
            let p = softmax(outputs.logits(k, rx));
            prediction(Method::Lamr, &records[k], rx, argmax_class(&p))
        })
        .collect()
}

pub fn predict_damr_v(
    outputs: &BackboneOutputs,
    records: &[DatasetRecord],
    idx: &[usize],
    weights: &VoteWeights,
) -> Result<Vec<Prediction>> {
    idx.iter()
        .map(|&k| {
            let probs = (0..outputs.n_rx)
                .map(|rx| ProbVector::from_logits(outputs.logits(k, rx)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let d: Decision = damr_v_fuse(&probs, weights)?;
            Ok(prediction(Method::DamrV, &records[k], 0, d.predicted))
        })
        .collect()
}

fn predict_batched(
    net: &Network,
    source: &dyn SampleSource,
    idx: &[usize],
    method: Method,
    records: &[DatasetRecord],
) -> Result<Vec<Prediction>> {
    let n_in = source.input_len();
    let mut inputs = Vec::new();
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(INFER_BATCH) {
        inputs.resize(chunk.len() * n_in, 0.0);
        for (slot, &k) in chunk.iter().enumerate() {
            source.fill_input(k, &mut inputs[slot * n_in..(slot + 1) * n_in]);
        }
        let logits = net.predict_logits(&inputs, chunk.len())?;
        for (slot, &k) in chunk.iter().enumerate() {
            let z = &logits[slot * NUM_CLASSES..(slot + 1) * NUM_CLASSES];
            out.push(prediction(method, &records[k], 0, argmax_class(z)));
        }
    }
    Ok(out)
}

pub fn predict_damr_f(
    head: &Network,
    tap: FeatureTap,
    outputs: &BackboneOutputs,
    records: &[DatasetRecord],
    idx: &[usize],
) -> Result<Vec<Prediction>> {
    let method = match tap {
        FeatureTap::Logits8 => Method::DamrF8,
        FeatureTap::Hidden256 => Method::DamrF256,
    };
    predict_batched(head, &outputs.features(tap), idx, method, records)
}

pub fn predict_cent(cent: &Network, records: &[DatasetRecord], idx: &[usize]) -> Result<Vec<Prediction>> {
    predict_batched(cent, &CentFrames { records }, idx, Method::CentAmr, records)
}

fn result(method: Method, receiver: Option<usize>, preds: &[Prediction], bin_width_db: f64) -> Result<MethodResult> {
    Ok(MethodResult {
        method,
        receiver,
        evaluation: metrics::evaluate(preds)?,
        curve: metrics::f1_vs_snr(preds, bin_width_db)?,
    })
}

/// Evaluates every method whose artifacts are present on `idx`.
pub fn evaluate_methods(
    artifacts: &Artifacts,
    records: &[DatasetRecord],
    idx: &[usize],
    bin_width_db: f64,
    methods: &[Method],
) -> Result<Vec<MethodResult>> {
    let needs_backbones = methods.iter().any(|m| !matches!(m, Method::CentAmr));
    let outputs = if needs_backbones {
        Some(backbone_outputs(&artifacts.receivers, records)?)
    } else {
        None
    };
    let missing = |m: Method| ExperimentError::Config(format!("missing trained model for {m}"));
    let mut results = Vec::new();
    for &m in methods {
        match m {
            Method::Lamr => {
                let outputs = outputs.as_ref().unwrap();
                for rx in 0..outputs.n_rx {
                    let preds = predict_lamr(outputs, records, idx, rx);
                    results.push(result(m, Some(rx), &preds, bin_width_db)?);
                }
            }
            Method::CentAmr => {
                let cent = artifacts.cent.as_ref().ok_or_else(|| missing(m))?;
                results.push(result(m, None, &predict_cent(cent, records, idx)?, bin_width_db)?);
            }
            Method::DamrV => {
                let outputs = outputs.as_ref().unwrap();
                let preds = predict_damr_v(outputs, records, idx, &VoteWeights::uniform(outputs.n_rx))?;
                results.push(result(m, None, &preds, bin_width_db)?);
            }
            Method::DamrF8 | Method::DamrF256 => {
                let tap = m.feature_tap().unwrap();
                let head = match tap {
                    FeatureTap::Logits8 => artifacts.head_f8.as_ref(),
                    FeatureTap::Hidden256 => artifacts.head_f256.as_ref(),
                }
                .ok_or_else(|| missing(m))?;
                let preds = predict_damr_f(head, tap, outputs.as_ref().unwrap(), records, idx)?;
                results.push(result(m, None, &preds, bin_width_db)?);
            }
        }
    }
    Ok(results)
}

/// Progress events of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    Epoch { model: String, stats: nn::EpochStats },
    Trained { model: String, report: TrainReport },
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub artifacts: Artifacts,
    pub reports: Vec<(String, TrainReport)>,
    pub comparison: Comparison,
}

/// Model labels used in progress events and output file names.
pub fn receiver_label(rx: usize) -> String {
    format!("lamr_rx{rx}")
}

/// Trains all regimes on `split.train` (early stopping on `split.val`) and
/// evaluates them on `split.test`.
pub fn run_pipeline(
    records: &[DatasetRecord],
    split: &Split,
    cfg: &TrainConfig,
    bin_width_db: f64,
    mut on_progress: impl FnMut(Progress),
) -> Result<PipelineOutput> {
    let n_rx = records.first().map_or(0, DatasetRecord::n_rx);
    let mut reports = Vec::new();
    let mut run = |label: String,
                   reports: &mut Vec<(String, TrainReport)>,
                   f: &mut dyn FnMut(&mut dyn FnMut(&nn::EpochStats)) -> Result<(Network, TrainReport)>|
     -> Result<Network> {
        let (net, report) = f(&mut |stats| {
            on_progress(Progress::Epoch {
                model: label.clone(),
                stats: stats.clone(),
            })
        })?;
        on_progress(Progress::Trained {
            model: label.clone(),
            report: report.clone(),
        });
        reports.push((label, report));
        Ok(net)
    };

    let mut receivers = Vec::with_capacity(n_rx);
    for rx in 0..n_rx {
        receivers.push(run(receiver_label(rx), &mut reports, &mut |cb| {
            train_receiver(records, split, rx, cfg, cb)
        })?);
    }
    let cent = run("centamr".into(), &mut reports, &mut |cb| train_cent(records, split, cfg, cb))?;
    let outputs = backbone_outputs(&receivers, records)?;
    let head_f8 = run("head_f8".into(), &mut reports, &mut |cb| {
        train_head(FeatureTap::Logits8, &outputs, split, cfg, cb)
    })?;
    let head_f256 = run("head_f256".into(), &mut reports, &mut |cb| {
        train_head(FeatureTap::Hidden256, &outputs, split, cfg, cb)
    })?;

    let artifacts = Artifacts {
        receivers,
        cent: Some(cent),
        head_f8: Some(head_f8),
        head_f256: Some(head_f256),
    };
    let results = evaluate_methods(&artifacts, records, &split.test, bin_width_db, &Method::ALL)?;
    Ok(PipelineOutput {
        artifacts,
        reports,
        comparison: Comparison {
            n_rx,
            results,
            perf: Vec::new(),
        },
    })
}

/// Hex SHA-256 of a network's checkpoint encoding.
pub fn checkpoint_digest(net: &Network) -> String {
    let mut bytes = Vec::new();
    nn::write_checkpoint(&mut bytes, &net.params().layers).expect("writing to a Vec cannot fail");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
