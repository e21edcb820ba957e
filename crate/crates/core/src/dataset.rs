//! Multi-receiver dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header (20 bytes)
//!   magic      [u8; 4]  "TMRS"
//!   version    u16      1
//!   n_rx       u8       1..=6
//!   frame_len  u32      1024
//!   n_records  u64
//!   n_classes  u8       8
//! record (1 + 4·n_rx + 8192·n_rx bytes), repeated n_records times
//!   label      u8       modulation id
//!   snr_db     [f32; n_rx]
//!   payload    n_rx × ([f32; 1024] I, then [f32; 1024] Q)
//! ```
//!
//! Record `k` is generated from `splitmix64(seed ^ k)` alone, so the file
//! content does not depend on generation order or thread count. Labels follow
//! a seeded shuffle of the balanced sequence `k mod 8`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{self, ChannelConfig, ChannelError, MultiRxObservation, MAX_RECEIVERS};
use crate::modulation::{self, DspError, IqFrame, ModulationType, ShapingConfig, FRAME_LEN, NUM_CLASSES};
use crate::seed;

pub const MAGIC: [u8; 4] = *b"TMRS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("file truncated inside record {record}")]
    Truncated { record: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub fn record_len(n_rx: usize) -> usize {
    1 + 4 * n_rx + 8 * FRAME_LEN * n_rx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_rx: u8,
    pub n_records: u64,
}

impl DatasetHeader {
    pub fn new(n_rx: usize, n_records: u64) -> Result<Self, DatasetError> {
        if n_rx == 0 || n_rx > MAX_RECEIVERS {
            return Err(DatasetError::InvalidArgument(format!(
                "n_rx must be in 1..={MAX_RECEIVERS}, got {n_rx}"
            )));
        }
        Ok(Self {
            n_rx: n_rx as u8,
            n_records,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6] = self.n_rx;
        b[7..11].copy_from_slice(&(FRAME_LEN as u32).to_le_bytes());
        b[11..19].copy_from_slice(&self.n_records.to_le_bytes());
        b[19] = NUM_CLASSES as u8;
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self, DatasetError> {
        if b[0..4] != MAGIC {
            return Err(DatasetError::Format(format!("bad magic {:?}", &b[0..4])));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(DatasetError::Format(format!("unsupported version {version}")));
        }
        let frame_len = u32::from_le_bytes(b[7..11].try_into().unwrap());
        if frame_len as usize != FRAME_LEN {
            return Err(DatasetError::Format(format!("unsupported frame length {frame_len}")));
        }
        if b[19] as usize != NUM_CLASSES {
            return Err(DatasetError::Format(format!("unsupported class count {}", b[19])));
        }
        let n_records = u64::from_le_bytes(b[11..19].try_into().unwrap());
        Self::new(b[6] as usize, n_records).map_err(|e| DatasetError::Format(e.to_string()))
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.n_records * record_len(self.n_rx as usize) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub label: ModulationType,
    pub snr_db: Vec<f32>,
    pub frames: Vec<IqFrame>,
}

impl DatasetRecord {
    pub fn n_rx(&self) -> usize {
        self.frames.len()
    }

    pub fn max_snr_db(&self) -> f32 {
        self.snr_db.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.label.id());
        for s in &self.snr_db {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for f in &self.frames {
            for v in f.i().iter().chain(f.q()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    fn parse(bytes: &[u8], n_rx: usize) -> Result<Self, DatasetError> {
        let label = ModulationType::from_id(bytes[0]).map_err(|e| DatasetError::Format(e.to_string()))?;
        let floats: Vec<f32> = bytes[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let snr_db = floats[..n_rx].to_vec();
        let frames = floats[n_rx..]
            .chunks_exact(2 * FRAME_LEN)
            .map(|c| IqFrame::new(c[..FRAME_LEN].to_vec(), c[FRAME_LEN..].to_vec()))
            .collect::<Result<Vec<_>, DspError>>()
            .map_err(|e| DatasetError::Format(e.to_string()))?;
        Ok(Self {
            label,
            snr_db,
            frames,
        })
    }
}

impl From<&MultiRxObservation> for DatasetRecord {
    fn from(obs: &MultiRxObservation) -> Self {
        Self {
            label: obs.label,
            snr_db: obs.states.iter().map(|s| s.snr_db as f32).collect(),
            frames: obs.frames.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateParams {
    pub n_records: u64,
    pub n_rx: usize,
    pub channel: ChannelConfig,
    pub shaping: ShapingConfig,
    pub seed: u64,
}

impl GenerateParams {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.n_records < NUM_CLASSES as u64 {
            return Err(DatasetError::InvalidArgument(format!(
                "n_records must be at least {NUM_CLASSES}"
            )));
        }
        DatasetHeader::new(self.n_rx, self.n_records)?;
        self.channel.validate()?;
        self.shaping
            .validate()
            .map_err(|e| DatasetError::InvalidArgument(e.to_string()))
    }
}

/// Balanced label sequence `k mod 8`, shuffled with a seed-derived stream.
pub fn label_schedule(n_records: u64, seed: u64) -> Vec<ModulationType> {
    let mut labels: Vec<ModulationType> = (0..n_records)
        .map(|k| ModulationType::ALL[(k % NUM_CLASSES as u64) as usize])
        .collect();
    labels.shuffle(&mut seed::rng(seed::derive(seed, u64::MAX)));
    labels
}

/// Simulates record `index` as a full observation (frames and channel states).
pub fn generate_observation(
    params: &GenerateParams,
    index: u64,
    label: ModulationType,
) -> Result<MultiRxObservation, DatasetError> {
    let rs = seed::record_seed(params.seed, index);
    let (low, high) = params.channel.snr_range_db;
    let base_snr = if high > low {
        seed::rng(seed::derive(rs, 0)).random_range(low..=high)
    } else {
        low
    };
    let tx = modulation::generate_frame(label, &params.shaping, seed::derive(rs, 1));
    let states = channel::draw_states(&params.channel, params.n_rx, base_snr, seed::derive(rs, 2))?;
    let frames = states
        .iter()
        .enumerate()
        .map(|(j, st)| channel::apply_channel(&tx, st, seed::derive(rs, 3 + j as u64)))
        .collect();
    Ok(MultiRxObservation::new(label, frames, states)?)
}

pub fn generate_record(
    params: &GenerateParams,
    index: u64,
    label: ModulationType,
) -> Result<DatasetRecord, DatasetError> {
    Ok(DatasetRecord::from(&generate_observation(params, index, label)?))
}

/// Generates every record in memory. Identical to what [`generate_dataset`]
/// writes for the same parameters.
pub fn generate_records(params: &GenerateParams) -> Result<Vec<DatasetRecord>, DatasetError> {
    params.validate()?;
    let labels = label_schedule(params.n_records, params.seed);
    (0..params.n_records)
        .into_par_iter()
        .map(|k| generate_record(params, k, labels[k as usize]))
        .collect()
}

const GENERATE_CHUNK: u64 = 256;

/// Generates a dataset and writes it to `path`.
pub fn generate_dataset(path: &Path, params: &GenerateParams) -> Result<DatasetHeader, DatasetError> {
    params.validate()?;
    let header = DatasetHeader::new(params.n_rx, params.n_records)?;
    let labels = label_schedule(params.n_records, params.seed);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header.to_bytes())?;
    let mut buf = Vec::with_capacity(record_len(params.n_rx) * GENERATE_CHUNK as usize);
    let mut start = 0u64;
    while start < params.n_records {
        let end = (start + GENERATE_CHUNK).min(params.n_records);
        let records = (start..end)
            .into_par_iter()
            .map(|k| generate_record(params, k, labels[k as usize]))
            .collect::<Result<Vec<_>, _>>()?;
        buf.clear();
        records.iter().for_each(|r| r.write_to(&mut buf));
        out.write_all(&buf)?;
        start = end;
    }
    out.flush()?;
    Ok(header)
}

/// Writes already materialized records.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<DatasetHeader, DatasetError> {
    let n_rx = records.first().map(DatasetRecord::n_rx).unwrap_or(1);
    let header = DatasetHeader::new(n_rx, records.len() as u64)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header.to_bytes())?;
    let mut buf = Vec::with_capacity(record_len(n_rx));
    for r in records {
        if r.n_rx() != n_rx || r.snr_db.len() != n_rx {
            return Err(DatasetError::InvalidArgument(
                "all records must have the same receiver count".into(),
            ));
        }
        buf.clear();
        r.write_to(&mut buf);
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(header)
}

/// Streaming record reader.
pub struct RecordReader<R> {
    reader: R,
    header: DatasetHeader,
    next: u64,
    buf: Vec<u8>,
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut reader: R) -> Result<Self, DatasetError> {
        let mut hb = [0u8; HEADER_LEN];
        reader.read_exact(&mut hb).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => DatasetError::Format("truncated header".into()),
            _ => DatasetError::Io(e),
        })?;
        let header = DatasetHeader::from_bytes(&hb)?;
        let buf = vec![0u8; record_len(header.n_rx as usize)];
        Ok(Self {
            reader,
            header,
            next: 0,
            buf,
        })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.n_records {
            return None;
        }
        let index = self.next;
        // Stop after an error so a truncated file yields exactly one error.
        self.next = self.header.n_records;
        if let Err(e) = self.reader.read_exact(&mut self.buf) {
            return Some(Err(match e.kind() {
                io::ErrorKind::UnexpectedEof => DatasetError::Truncated { record: index },
                _ => DatasetError::Io(e),
            }));
        }
        let record = DatasetRecord::parse(&self.buf, self.header.n_rx as usize);
        if record.is_ok() {
            self.next = index + 1;
        }
        Some(record)
    }
}

/// Opens a dataset file for streaming.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, RecordReader<BufReader<File>>), DatasetError> {
    let reader = RecordReader::new(BufReader::new(File::open(path)?))?;
    Ok((reader.header(), reader))
}

/// A fully loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let (header, reader) = load_dataset(path)?;
        let records = reader.collect::<Result<Vec<_>, _>>()?;
        Ok(Self { header, records })
    }

    /// Concatenates datasets with equal receiver counts.
    pub fn concat(parts: Vec<Dataset>) -> Result<Self, DatasetError> {
        let mut iter = parts.into_iter();
        let mut first = iter
            .next()
            .ok_or_else(|| DatasetError::InvalidArgument("no datasets given".into()))?;
        for part in iter {
            if part.header.n_rx != first.header.n_rx {
                return Err(DatasetError::InvalidArgument(
                    "datasets have different receiver counts".into(),
                ));
            }
            first.records.extend(part.records);
        }
        first.header.n_records = first.records.len() as u64;
        Ok(first)
    }

    pub fn labels(&self) -> Vec<ModulationType> {
        self.records.iter().map(|r| r.label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            test_frac: 0.2,
            val_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fracs = [self.train_frac, self.test_frac, self.val_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(DatasetError::InvalidArgument("split fractions must lie in [0, 1]".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidArgument("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified, seeded partition of record indices.
///
/// Test and validation sizes are `floor(frac·n)`; train takes the remainder.
/// Indices are laid out round-robin over classes (fixed class cycle,
/// per-class shuffled order) and cut into contiguous blocks, which keeps each
/// block's per-class counts within one of each other.
pub fn split_dataset(labels: &[ModulationType], spec: &SplitSpec, seed: u64) -> Result<Split, DatasetError> {
    spec.validate()?;
    let n = labels.len();
    let n_test = (spec.test_frac * n as f64 + 1e-9).floor() as usize;
    let n_val = (spec.val_frac * n as f64 + 1e-9).floor() as usize;

    let mut rng = seed::rng(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (k, l) in labels.iter().enumerate() {
        per_class[l.id() as usize].push(k);
    }
    for list in &mut per_class {
        list.shuffle(&mut rng);
    }
    let mut cycle: Vec<usize> = (0..NUM_CLASSES).collect();
    cycle.shuffle(&mut rng);

    let mut order = Vec::with_capacity(n);
    let rounds = per_class.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..rounds {
        for &c in &cycle {
            if let Some(&k) = per_class[c].get(r) {
                order.push(k);
            }
        }
    }
    let test = order[..n_test].to_vec();
    let val = order[n_test..n_test + n_val].to_vec();
    let train = order[n_test + n_val..].to_vec();
    Ok(Split { train, test, val })
}
