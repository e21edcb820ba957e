//! Per-receiver channel impairments.
//!
//! Each receiver sees the transmitted frame through its own Rayleigh
//! tapped-delay line, a sample-rate offset, a carrier-frequency offset and
//! AWGN. Tap gains are correlated across receivers through a shared component.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::modulation::{IqFrame, ModulationType, FRAME_LEN};
use crate::seed;

pub const MAX_RECEIVERS: usize = 6;
pub const MIN_SNR_DB: f64 = -44.0;
pub const MAX_SNR_DB: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("receiver count {0} outside 1..={MAX_RECEIVERS}")]
    InvalidReceiverCount(usize),
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
    #[error("base SNR {snr} dB outside configured range [{low}, {high}]")]
    SnrOutOfRange { snr: f64, low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub num_taps: usize,
    /// Power-delay-profile decay per tap, in dB.
    pub tap_decay_db: f64,
    /// Maximum |CFO| in cycles per sample.
    pub cfo_max_normalized: f64,
    pub sro_max_ppm: f64,
    pub snr_range_db: (f64, f64),
    pub per_receiver_snr_jitter_db: f64,
    /// Correlation coefficient of tap gains between receivers.
    pub cross_correlation: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            num_taps: 4,
            tap_decay_db: 3.0,
            cfo_max_normalized: 1e-3,
            sro_max_ppm: 20.0,
            snr_range_db: (0.0, 20.0),
            per_receiver_snr_jitter_db: 3.0,
            cross_correlation: 0.3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidConfig(m.to_string()));
        let (low, high) = self.snr_range_db;
        if self.num_taps == 0 {
            return bad("num_taps must be positive");
        }
        if !(self.tap_decay_db >= 0.0) {
            return bad("tap_decay_db must be non-negative");
        }
        if !(self.cfo_max_normalized >= 0.0) || !(self.sro_max_ppm >= 0.0) {
            return bad("offset bounds must be non-negative");
        }
        if !(self.per_receiver_snr_jitter_db >= 0.0) {
            return bad("SNR jitter must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.cross_correlation) {
            return bad("cross_correlation must lie in [0, 1]");
        }
        if !(low <= high) || low < MIN_SNR_DB || high > MAX_SNR_DB {
            return bad("snr_range_db must satisfy -44 <= low <= high <= 50");
        }
        Ok(())
    }

    /// Normalized exponential power-delay profile.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_taps)
            .map(|t| 10f64.powf(-self.tap_decay_db * t as f64 / 10.0))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverChannelState {
    pub taps: Vec<Complex64>,
    pub cfo_normalized: f64,
    pub sro_ppm: f64,
    pub snr_db: f64,
}

impl ReceiverChannelState {
    /// Unit single-tap channel with no offsets.
    pub fn identity(snr_db: f64) -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
            cfo_normalized: 0.0,
            sro_ppm: 0.0,
            snr_db,
        }
    }
}

/// One transmission as seen by every receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRxObservation {
    pub label: ModulationType,
    pub frames: Vec<IqFrame>,
    pub states: Vec<ReceiverChannelState>,
}

impl MultiRxObservation {
    pub fn new(
        label: ModulationType,
        frames: Vec<IqFrame>,
        states: Vec<ReceiverChannelState>,
    ) -> Result<Self, ChannelError> {
        if frames.len() != states.len() || frames.is_empty() || frames.len() > MAX_RECEIVERS {
            return Err(ChannelError::InvalidReceiverCount(frames.len()));
        }
        Ok(Self {
            label,
            frames,
            states,
        })
    }

    pub fn n_rx(&self) -> usize {
        self.frames.len()
    }

    pub fn snrs_db(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.snr_db).collect()
    }
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sigma, im * sigma)
}

fn symmetric_uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Draws the channel state of every receiver for one transmission.
///
/// Tap `t` of receiver `j` is `√ρ·c_t + √(1−ρ)·e_{j,t}` where `c_t` is shared by
/// all receivers and both components are circular Gaussian with the profile's
/// power for that tap.
pub fn draw_states(
    config: &ChannelConfig,
    n_rx: usize,
    base_snr_db: f64,
    seed: u64,
) -> Result<Vec<ReceiverChannelState>, ChannelError> {
    if n_rx == 0 || n_rx > MAX_RECEIVERS {
        return Err(ChannelError::InvalidReceiverCount(n_rx));
    }
    config.validate()?;
    let (low, high) = config.snr_range_db;
    if !(low..=high).contains(&base_snr_db) {
        return Err(ChannelError::SnrOutOfRange {
            snr: base_snr_db,
            low,
            high,
        });
    }
    let mut rng = seed::rng(seed);
    let powers = config.tap_powers();
    let rho = config.cross_correlation;
    let common: Vec<Complex64> = powers
        .iter()
        .map(|&p| complex_gaussian(&mut rng, p))
        .collect();
    let states = (0..n_rx)
        .map(|_| {
            let taps = common
                .iter()
                .zip(&powers)
                .map(|(&c, &p)| {
                    let own = complex_gaussian(&mut rng, p);
                    c * rho.sqrt() + own * (1.0 - rho).sqrt()
                })
                .collect();
            let jitter = symmetric_uniform(&mut rng, config.per_receiver_snr_jitter_db);
            let cfo = symmetric_uniform(&mut rng, config.cfo_max_normalized);
            let sro = symmetric_uniform(&mut rng, config.sro_max_ppm);
            ReceiverChannelState {
                taps,
                cfo_normalized: cfo,
                sro_ppm: sro,
                snr_db: base_snr_db + jitter,
            }
        })
        .collect();
    Ok(states)
}

/// Causal tap convolution truncated to the input length.
fn convolve_taps(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(t, &h)| h * x[n - t])
                .sum()
        })
        .collect()
}

/// Resamples by `1 + ppm·1e-6` with four-point cubic Lagrange interpolation;
/// positions past the last sample clamp to the edge.
fn resample_sro(x: &[Complex64], sro_ppm: f64) -> Vec<Complex64> {
    if sro_ppm == 0.0 {
        return x.to_vec();
    }
    let ratio = 1.0 + sro_ppm * 1e-6;
    let last = x.len() as isize - 1;
    let at = |k: isize| x[k.clamp(0, last) as usize];
    (0..x.len())
        .map(|n| {
            let pos = n as f64 * ratio;
            let base = pos.floor() as isize;
            let mu = pos - base as f64;
            let w = [
                -mu * (mu - 1.0) * (mu - 2.0) / 6.0,
                (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0,
                -(mu + 1.0) * mu * (mu - 2.0) / 2.0,
                (mu + 1.0) * mu * (mu - 1.0) / 6.0,
            ];
            (0..4)
                .map(|k| at(base - 1 + k as isize) * w[k])
                .sum()
        })
        .collect()
}

fn rotate_cfo(x: &mut [Complex64], cfo: f64) {
    if cfo == 0.0 {
        return;
    }
    for (n, s) in x.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, 2.0 * PI * cfo * n as f64);
    }
}

fn mean_power(x: &[Complex64]) -> f64 {
    x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Intermediate signals of one channel application, for calibration checks.
#[derive(Debug, Clone)]
pub struct ChannelTrace {
    /// Channel output before noise.
    pub noiseless: Vec<Complex64>,
    /// Injected noise sequence.
    pub noise: Vec<Complex64>,
    /// Final output after unit-power renormalization.
    pub output: IqFrame,
}

/// Applies `state` to `frame`. See [`apply_channel_traced`].
pub fn apply_channel(frame: &IqFrame, state: &ReceiverChannelState, seed: u64) -> IqFrame {
    apply_channel_traced(frame, state, seed).output
}

/// Computes `AWGN(rotate_cfo(resample_sro(convolve_taps(frame))))` and
/// renormalizes to unit average power. Noise power is set against the power
/// of the noiseless output so that its ratio to the injected noise equals
/// `snr_db`.
pub fn apply_channel_traced(
    frame: &IqFrame,
    state: &ReceiverChannelState,
    seed: u64,
) -> ChannelTrace {
    let x = frame.to_complex();
    let mut y = resample_sro(&convolve_taps(&x, &state.taps), state.sro_ppm);
    rotate_cfo(&mut y, state.cfo_normalized);

    let signal_power = mean_power(&y);
    let reference = if signal_power > 0.0 { signal_power } else { 1.0 };
    let noise_power = reference / 10f64.powf(state.snr_db / 10.0);
    let mut rng = seed::rng(seed);
    let noise: Vec<Complex64> = (0..FRAME_LEN)
        .map(|_| complex_gaussian(&mut rng, noise_power))
        .collect();

    let mut out: Vec<Complex64> = y.iter().zip(&noise).map(|(s, n)| s + n).collect();
    let total = mean_power(&out);
    if total > 0.0 {
        let scale = total.sqrt().recip();
        out.iter_mut().for_each(|s| *s *= scale);
    }
    let output = IqFrame::from_complex(&out).expect("channel output is finite");
    ChannelTrace {
        noiseless: y,
        noise,
        output,
    }
}
