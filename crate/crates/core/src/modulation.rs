//! Baseband frame synthesis for the eight-scheme modulation pool.
//!
//! Linear schemes are Gray-mapped (most significant bit first), normalized to
//! unit average constellation power and shaped with a root-raised-cosine
//! filter. MSK is generated directly as continuous-phase FSK with modulation
//! index 0.5. Every frame is rescaled to unit average power so that SNR is
//! defined solely by the channel.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::seed;

/// Samples per observation window.
pub const FRAME_LEN: usize = 1024;

/// Size of the modulation pool.
pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("bit sequence of length {len} is not a multiple of {bits_per_symbol} bits per symbol")]
    InvalidBitLength { len: usize, bits_per_symbol: usize },
    #[error("{0} is not produced by symbol mapping")]
    UnsupportedScheme(ModulationType),
    #[error("invalid shaping configuration: {0}")]
    InvalidShaping(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("unknown modulation id {0}")]
    UnknownId(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModulationType {
    Bpsk,
    Qpsk,
    Psk8,
    Dqpsk,
    Msk,
    Qam16,
    Qam64,
    Qam256,
}

impl ModulationType {
    /// All schemes in class-id order.
    pub const ALL: [ModulationType; NUM_CLASSES] = [
        ModulationType::Bpsk,
        ModulationType::Qpsk,
        ModulationType::Psk8,
        ModulationType::Dqpsk,
        ModulationType::Msk,
        ModulationType::Qam16,
        ModulationType::Qam64,
        ModulationType::Qam256,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, DspError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(DspError::UnknownId(id))
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModulationType::Bpsk | ModulationType::Msk => 1,
            ModulationType::Qpsk | ModulationType::Dqpsk => 2,
            ModulationType::Psk8 => 3,
            ModulationType::Qam16 => 4,
            ModulationType::Qam64 => 6,
            ModulationType::Qam256 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationType::Bpsk => "BPSK",
            ModulationType::Qpsk => "QPSK",
            ModulationType::Psk8 => "8PSK",
            ModulationType::Dqpsk => "DQPSK",
            ModulationType::Msk => "MSK",
            ModulationType::Qam16 => "16-QAM",
            ModulationType::Qam64 => "64-QAM",
            ModulationType::Qam256 => "256-QAM",
        }
    }
}

impl fmt::Display for ModulationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One observation window of complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    i: Vec<f32>,
    q: Vec<f32>,
}

impl IqFrame {
    pub fn new(i: Vec<f32>, q: Vec<f32>) -> Result<Self, DspError> {
        if i.len() != FRAME_LEN || q.len() != FRAME_LEN {
            return Err(DspError::InvalidFrame(format!(
                "expected {FRAME_LEN} I and Q samples, got {} and {}",
                i.len(),
                q.len()
            )));
        }
        if i.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(DspError::InvalidFrame("non-finite sample".into()));
        }
        Ok(Self { i, q })
    }

    pub(crate) fn from_complex(samples: &[Complex64]) -> Result<Self, DspError> {
        let i = samples.iter().map(|s| s.re as f32).collect();
        let q = samples.iter().map(|s| s.im as f32).collect();
        Self::new(i, q)
    }

    pub fn i(&self) -> &[f32] {
        &self.i
    }

    pub fn q(&self) -> &[f32] {
        &self.q
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&i, &q)| Complex64::new(i as f64, q as f64))
            .collect()
    }

    /// Mean of `i² + q²` over the frame.
    pub fn average_power(&self) -> f64 {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&i, &q)| (i as f64).powi(2) + (q as f64).powi(2))
            .sum::<f64>()
            / FRAME_LEN as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingConfig {
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub filter_span_symbols: usize,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            samples_per_symbol: 8,
            rolloff: 0.35,
            filter_span_symbols: 8,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.samples_per_symbol < 2 {
            return Err(DspError::InvalidShaping(
                "samples_per_symbol must be at least 2".into(),
            ));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(DspError::InvalidShaping(
                "rolloff must lie in (0, 1]".into(),
            ));
        }
        if self.filter_span_symbols < 4 {
            return Err(DspError::InvalidShaping(
                "filter_span_symbols must be at least 4".into(),
            ));
        }
        Ok(())
    }
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
}

fn psk_point(order: usize, index: usize, offset: f64) -> Complex64 {
    Complex64::from_polar(1.0, offset + 2.0 * PI * index as f64 / order as f64)
}

fn qam_point(order: usize, bits: &[u8]) -> Complex64 {
    let side = (order as f64).sqrt() as usize;
    let half = bits.len() / 2;
    let level = |b: &[u8]| (2 * gray_to_binary(bits_to_index(b))) as f64 - (side - 1) as f64;
    let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
    Complex64::new(level(&bits[..half]) / scale, level(&bits[half..]) / scale)
}

/// Maps a bit sequence (one bit per byte, values 0/1) onto constellation
/// symbols.
///
/// BPSK sends bit 0 as +1. QPSK points sit at odd multiples of π/4. DQPSK
/// emits phase increments π/4 + kπ/2 accumulated from an initial phase of 0.
pub fn map_symbols(bits: &[u8], scheme: ModulationType) -> Result<Vec<Complex64>, DspError> {
    if scheme == ModulationType::Msk {
        return Err(DspError::UnsupportedScheme(scheme));
    }
    let bps = scheme.bits_per_symbol();
    if bits.len() % bps != 0 {
        return Err(DspError::InvalidBitLength {
            len: bits.len(),
            bits_per_symbol: bps,
        });
    }
    let groups = bits.chunks_exact(bps);
    let symbols = match scheme {
        ModulationType::Bpsk => groups
            .map(|g| psk_point(2, gray_to_binary(bits_to_index(g)), 0.0))
            .collect(),
        ModulationType::Qpsk => groups
            .map(|g| psk_point(4, gray_to_binary(bits_to_index(g)), PI / 4.0))
            .collect(),
        ModulationType::Psk8 => groups
            .map(|g| psk_point(8, gray_to_binary(bits_to_index(g)), 0.0))
            .collect(),
        ModulationType::Dqpsk => {
            let mut phase = 0.0f64;
            groups
                .map(|g| {
                    let k = gray_to_binary(bits_to_index(g));
                    phase = (phase + PI / 4.0 + k as f64 * PI / 2.0).rem_euclid(2.0 * PI);
                    Complex64::from_polar(1.0, phase)
                })
                .collect()
        }
        ModulationType::Qam16 => groups.map(|g| qam_point(16, g)).collect(),
        ModulationType::Qam64 => groups.map(|g| qam_point(64, g)).collect(),
        ModulationType::Qam256 => groups.map(|g| qam_point(256, g)).collect(),
        ModulationType::Msk => unreachable!(),
    };
    Ok(symbols)
}

/// Unit-energy root-raised-cosine taps, `span·sps + 1` long, centered.
pub fn rrc_taps(shaping: &ShapingConfig) -> Vec<f64> {
    let sps = shaping.samples_per_symbol as f64;
    let beta = shaping.rolloff;
    let len = shaping.filter_span_symbols * shaping.samples_per_symbol + 1;
    let mid = (len / 2) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let t = (n as f64 - mid) / sps;
            if t.abs() < 1e-12 {
                1.0 - beta + 4.0 * beta / PI
            } else if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-9 {
                let a = PI / (4.0 * beta);
                beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    taps
}

fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..=1u8)).collect()
}

fn normalize_power(samples: &mut [Complex64]) {
    let power = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64;
    if power > 0.0 {
        let scale = power.sqrt().recip();
        samples.iter_mut().for_each(|s| *s *= scale);
    }
}

/// Generates one frame. See [`generate_frame_with_symbols`].
pub fn generate_frame(scheme: ModulationType, shaping: &ShapingConfig, seed: u64) -> IqFrame {
    generate_frame_with_symbols(scheme, shaping, seed).0
}

/// Generates one frame together with the symbol centered on every
/// `samples_per_symbol`-th sample: entry `j` is the symbol whose pulse peaks at
/// frame sample `j·sps`. For MSK the entries are the ±1 frequency symbols.
///
/// # Panics
///
/// Panics if `shaping` is invalid.
pub fn generate_frame_with_symbols(
    scheme: ModulationType,
    shaping: &ShapingConfig,
    seed: u64,
) -> (IqFrame, Vec<Complex64>) {
    shaping.validate().expect("invalid shaping configuration");
    let mut rng = seed::rng(seed);
    let sps = shaping.samples_per_symbol;
    let span = shaping.filter_span_symbols;
    let frame_symbols = FRAME_LEN.div_ceil(sps);

    if scheme == ModulationType::Msk {
        let bits = random_bits(&mut rng, frame_symbols);
        let step = PI / (2.0 * sps as f64);
        let mut phase = 0.0f64;
        let mut samples = Vec::with_capacity(FRAME_LEN);
        for n in 0..FRAME_LEN {
            let d = 1.0 - 2.0 * f64::from(bits[n / sps]);
            samples.push(Complex64::from_polar(1.0, phase));
            phase = (phase + d * step).rem_euclid(2.0 * PI);
        }
        normalize_power(&mut samples);
        let symbols = bits
            .iter()
            .map(|&b| Complex64::new(1.0 - 2.0 * f64::from(b), 0.0))
            .collect();
        let frame = IqFrame::from_complex(&samples).expect("MSK samples are finite");
        return (frame, symbols);
    }

    // Enough symbols that every frame sample sees the full filter support.
    let n_symbols = frame_symbols + span + 1;
    let bits = random_bits(&mut rng, n_symbols * scheme.bits_per_symbol());
    let symbols = map_symbols(&bits, scheme).expect("bit count matches scheme");
    let taps = rrc_taps(shaping);

    // Frame sample n is the full-convolution output at n + span·sps, which is
    // the center of symbol n/sps + span/2.
    let offset = span * sps;
    let mut samples = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    for (n, out) in samples.iter_mut().enumerate() {
        let m = n + offset;
        let mut acc = Complex64::new(0.0, 0.0);
        // Upsampled input is non-zero only at multiples of sps.
        let k_hi = m / sps;
        let k_lo = (m + 1).saturating_sub(taps.len()).div_ceil(sps);
        for k in k_lo..=k_hi.min(symbols.len() - 1) {
            acc += symbols[k] * taps[m - k * sps];
        }
        *out = acc;
    }
    normalize_power(&mut samples);
    let centered = symbols[span / 2..span / 2 + frame_symbols].to_vec();
    let frame = IqFrame::from_complex(&samples).expect("shaped samples are finite");
    (frame, centered)
}
