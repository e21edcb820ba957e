//! Accuracy, macro-F1, F1-vs-SNR curves and CSV comparison tables.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::modulation::{ModulationType, NUM_CLASSES};
use crate::protocols::{bandwidth_bits, Method};
use crate::simnet::PerfReport;

pub const DEFAULT_BIN_WIDTH_DB: f64 = 4.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ModulationType, ModulationType)>) -> Self {
        let mut m = Self::new();
        for (truth, predicted) in pairs {
            m.record(truth, predicted);
        }
        m
    }

    pub fn record(&mut self, truth: ModulationType, predicted: ModulationType) {
        self.counts[truth.id() as usize][predicted.id() as usize] += 1;
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum();
        trace as f64 / total as f64
    }

    /// `2TP / (2TP + FP + FN)`, or 0 when the denominator is 0.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let fn_ = self.support(class) - tp;
        let fp = (0..NUM_CLASSES).map(|t| self.counts[t][class]).sum::<u64>() - tp;
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (0..NUM_CLASSES).map(|k| self.f1(k)).sum::<f64>() / NUM_CLASSES as f64
    }
}

/// One classified record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub truth: ModulationType,
    pub predicted: ModulationType,
    /// SNR used for binning.
    pub snr_db: f32,
}

/// SNR a record is binned by: the receiver's own SNR for LAMR, the best
/// receiver's SNR otherwise.
pub fn binning_snr(method: Method, record: &DatasetRecord, receiver: usize) -> f32 {
    match method {
        Method::Lamr => record.snr_db[receiver],
        _ => record.max_snr_db(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(predictions: &[Prediction]) -> Result<Evaluation, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Config("cannot evaluate an empty split".into()));
    }
    let confusion = ConfusionMatrix::from_pairs(predictions.iter().map(|p| (p.truth, p.predicted)));
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Point {
    pub snr_bin_center_db: f64,
    pub macro_f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct F1Curve {
    pub points: Vec<F1Point>,
}

/// Bins are `[k·w, (k+1)·w)` and run contiguously from the lowest to the
/// highest occupied bin. Empty bins report support 0 and F1 0.
pub fn f1_vs_snr(predictions: &[Prediction], bin_width_db: f64) -> Result<F1Curve, MetricsError> {
    if !(bin_width_db > 0.0 && bin_width_db.is_finite()) {
        return Err(MetricsError::Config(format!("bin width must be positive, got {bin_width_db}")));
    }
    if predictions.is_empty() {
        return Ok(F1Curve::default());
    }
    let bin = |snr: f32| (snr as f64 / bin_width_db).floor() as i64;
    let lo = predictions.iter().map(|p| bin(p.snr_db)).min().unwrap();
    let hi = predictions.iter().map(|p| bin(p.snr_db)).max().unwrap();
    let mut matrices = vec![ConfusionMatrix::new(); (hi - lo + 1) as usize];
    for p in predictions {
        matrices[(bin(p.snr_db) - lo) as usize].record(p.truth, p.predicted);
    }
    let points = matrices
        .iter()
        .enumerate()
        .map(|(i, m)| F1Point {
            snr_bin_center_db: ((lo + i as i64) as f64 + 0.5) * bin_width_db,
            macro_f1: m.macro_f1(),
            support: m.total(),
        })
        .collect();
    Ok(F1Curve { points })
}

/// Results for one row of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// Receiver index for LAMR rows.
    pub receiver: Option<usize>,
    pub evaluation: Evaluation,
    pub curve: F1Curve,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comparison {
    pub n_rx: usize,
    pub results: Vec<MethodResult>,
    pub perf: Vec<PerfReport>,
}

impl Comparison {
    pub fn get(&self, method: Method) -> impl Iterator<Item = &MethodResult> {
        self.results.iter().filter(move |r| r.method == method)
    }

    pub fn accuracy(&self, method: Method) -> Option<f64> {
        let rows: Vec<f64> = self.get(method).map(|r| r.evaluation.accuracy).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    fn check(&self) -> Result<(), MetricsError> {
        let lamr = self.get(Method::Lamr).count();
        if lamr != self.n_rx {
            return Err(MetricsError::Config(format!("expected {} LAMR results, got {lamr}", self.n_rx)));
        }
        for m in Method::NETWORKED {
            if self.get(m).count() != 1 {
                return Err(MetricsError::Config(format!("missing or duplicate result for {m}")));
            }
        }
        Ok(())
    }

    /// Rows in a fixed order: LAMR by receiver, then the networked methods.
    pub fn ordered(&self) -> Vec<&MethodResult> {
        let mut rows: Vec<&MethodResult> = self.results.iter().collect();
        rows.sort_by_key(|r| (r.method, r.receiver));
        rows
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn receiver_cell(r: &MethodResult) -> String {
    r.receiver.map_or_else(|| "all".to_string(), |j| j.to_string())
}

/// `bits / reference` as a reduced fraction, e.g. `1/256`.
pub fn ratio_fraction(bits: u64, reference: u64) -> String {
    if bits == 0 {
        return "0".into();
    }
    let (mut a, mut b) = (bits, reference);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let (num, den) = (bits / a, reference / a);
    if den == 1 {
        num.to_string()
    } else {
        format!("{num}/{den}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, MetricsError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// One row per result: method, receiver, accuracy, macro-F1, sample count.
pub fn write_accuracy(rows: &[&MethodResult], path: &Path) -> Result<(), MetricsError> {
    let mut w = writer(path)?;
    w.write_record(["method", "receiver", "accuracy", "macro_f1", "n_samples"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            receiver_cell(r),
            f6(r.evaluation.accuracy),
            f6(r.evaluation.macro_f1),
            r.evaluation.confusion.total().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves(rows: &[&MethodResult], path: &Path) -> Result<(), MetricsError> {
    let mut w = writer(path)?;
    w.write_record(["method", "receiver", "snr_bin_center_db", "macro_f1", "support"])?;
    for r in rows {
        for p in &r.curve.points {
            w.write_record([
                r.method.name().to_string(),
                receiver_cell(r),
                f6(p.snr_bin_center_db),
                f6(p.macro_f1),
                p.support.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Confusion counts, one row per (result, true class).
pub fn write_confusion(rows: &[&MethodResult], path: &Path) -> Result<(), MetricsError> {
    let mut w = writer(path)?;
    let mut header = vec!["method".to_string(), "receiver".into(), "true_class".into()];
    header.extend(ModulationType::ALL.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for r in rows {
        for (t, counts) in r.evaluation.confusion.counts().iter().enumerate() {
            let mut rec = vec![r.method.name().to_string(), receiver_cell(r), ModulationType::ALL[t].name().to_string()];
            rec.extend(counts.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-receiver and total uplink bits of every method, with the ratio to
/// CentAMR as a fraction and as a decimal.
pub fn write_bandwidth(n_rx: usize, path: &Path) -> Result<(), MetricsError> {
    let reference = bandwidth_bits(Method::CentAmr);
    let mut w = writer(path)?;
    w.write_record(["method", "bits_per_receiver", "bits_total", "ratio_vs_centamr", "ratio_decimal"])?;
    for m in Method::ALL {
        let bits = bandwidth_bits(m);
        w.write_record([
            m.name().to_string(),
            bits.to_string(),
            (bits * n_rx as u64).to_string(),
            ratio_fraction(bits, reference),
            f6(bits as f64 / reference as f64),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `accuracy.csv`, `bandwidth.csv`, `f1_vs_snr.csv`, `confusion.csv`
/// and `perf.csv` into `dir` and returns their paths.
pub fn emit_comparison(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    cmp.check()?;
    fs::create_dir_all(dir)?;
    let rows = cmp.ordered();
    let paths: Vec<PathBuf> = ["accuracy.csv", "bandwidth.csv", "f1_vs_snr.csv", "confusion.csv", "perf.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_accuracy(&rows, &paths[0])?;
    write_bandwidth(cmp.n_rx, &paths[1])?;
    write_curves(&rows, &paths[2])?;
    write_confusion(&rows, &paths[3])?;
    write_perf(&cmp.perf, &paths[4])?;
    Ok(paths)
}

pub fn write_perf(reports: &[PerfReport], path: &Path) -> Result<(), MetricsError> {
    let mut w = writer(path)?;
    w.write_record(["method", "latency_ms_per_sample", "throughput_samples_per_sec", "n_samples", "warmup"])?;
    for p in reports {
        w.write_record([
            p.method.name().to_string(),
            f6(p.latency_ms_per_sample),
            f6(p.throughput_samples_per_sec),
            p.n_samples.to_string(),
            p.warmup.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
