//! In-process message-passing harness.
//!
//! Receivers and a central node exchange [`WireMessage`]s whose payloads are
//! the exact bytes that would go on the air: little-endian `f32` arrays on the
//! uplink and a single class-id byte on the downlink. Every message of an
//! episode is recorded in a [`WireLog`].

use std::time::Instant;

use thiserror::Error;

use crate::channel::MultiRxObservation;
use crate::models::{forward_with_tap, FeatureTap, ModelError, HIDDEN};
use crate::modulation::{IqFrame, ModulationType, FRAME_LEN, NUM_CLASSES};
use crate::nn::{softmax, Network, NnError};
use crate::protocols::{
    cent_predict, damr_f_fuse, damr_v_fuse, frame_input, Decision, Method, ProbVector, ProtocolError, VoteWeights,
};

/// Measured episodes required after warm-up.
pub const MIN_PERF_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeId {
    Receiver(u8),
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    RawFrame,
    ProbVector,
    Features8,
    Features256,
    DecisionDownlink,
}

impl MessageKind {
    pub fn payload_len(self) -> usize {
        match self {
            MessageKind::RawFrame => 2 * FRAME_LEN * 4,
            MessageKind::ProbVector | MessageKind::Features8 => NUM_CLASSES * 4,
            MessageKind::Features256 => HIDDEN * 4,
            MessageKind::DecisionDownlink => 1,
        }
    }

    pub fn is_uplink(self) -> bool {
        self != MessageKind::DecisionDownlink
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub sender: NodeId,
    pub recipient: NodeId,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(sender: NodeId, recipient: NodeId, kind: MessageKind, payload: Vec<u8>) -> Result<Self, SimError> {
        if payload.len() != kind.payload_len() {
            return Err(SimError::Malformed(format!(
                "{kind:?} payload must be {} bytes, got {}",
                kind.payload_len(),
                payload.len()
            )));
        }
        Ok(Self {
            sender,
            recipient,
            kind,
            payload,
        })
    }

    pub fn bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }
}

pub fn encode_f32s(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32s(bytes: &[u8]) -> Result<Vec<f32>, SimError> {
    if bytes.len() % 4 != 0 {
        return Err(SimError::Malformed(format!("{} bytes is not a whole number of f32s", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// `[I₀…I₁₀₂₃, Q₀…Q₁₀₂₃]` as little-endian `f32`.
pub fn encode_frame(frame: &IqFrame) -> Vec<u8> {
    encode_f32s(&frame_input(frame))
}

pub fn decode_frame(bytes: &[u8]) -> Result<IqFrame, SimError> {
    let v = decode_f32s(bytes)?;
    if v.len() != 2 * FRAME_LEN {
        return Err(SimError::Malformed(format!("frame payload of {} values", v.len())));
    }
    IqFrame::new(v[..FRAME_LEN].to_vec(), v[FRAME_LEN..].to_vec()).map_err(|e| SimError::Malformed(e.to_string()))
}

/// Messages of one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WireLog {
    pub messages: Vec<WireMessage>,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
}

impl WireLog {
    pub fn push(&mut self, msg: WireMessage) {
        if msg.kind.is_uplink() {
            self.uplink_bits += msg.bits();
        } else {
            self.downlink_bits += msg.bits();
        }
        self.messages.push(msg);
    }

    /// Uplink bits sent by receiver `rx`.
    pub fn receiver_uplink_bits(&self, rx: u8) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.kind.is_uplink() && m.sender == NodeId::Receiver(rx))
            .map(WireMessage::bits)
            .sum()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }
}

/// Trained models an episode may need.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    /// One 2-channel backbone per receiver, in receiver order.
    pub receivers: Vec<Network>,
    pub cent: Option<Network>,
    pub head_f8: Option<Network>,
    pub head_f256: Option<Network>,
}

impl Artifacts {
    fn head(&self, tap: FeatureTap) -> Option<&Network> {
        match tap {
            FeatureTap::Logits8 => self.head_f8.as_ref(),
            FeatureTap::Hidden256 => self.head_f256.as_ref(),
        }
    }

    fn check(&self, method: Method, n_rx: usize) -> Result<(), SimError> {
        let need_receivers = matches!(method, Method::DamrV | Method::DamrF8 | Method::DamrF256);
        if need_receivers && self.receivers.len() != n_rx {
            return Err(SimError::Config(format!(
                "{method} needs {n_rx} receiver models, have {}",
                self.receivers.len()
            )));
        }
        let missing = match method {
            Method::Lamr => return Err(SimError::Config("LAMR exchanges no messages".into())),
            Method::CentAmr => self.cent.is_none(),
            Method::DamrV => false,
            Method::DamrF8 => self.head_f8.is_none(),
            Method::DamrF256 => self.head_f256.is_none(),
        };
        if missing {
            return Err(SimError::Config(format!("missing trained model for {method}")));
        }
        Ok(())
    }
}

/// Runs one classification end to end: receiver-side processing, uplink,
/// central fusion, and a downlink of the decided class id to every receiver.
pub fn run_episode(
    method: Method,
    obs: &MultiRxObservation,
    artifacts: &Artifacts,
) -> Result<(Decision, WireLog), SimError> {
    artifacts.check(method, obs.n_rx())?;
    let mut log = WireLog::default();
    let uplink_kind = match method {
        Method::CentAmr => MessageKind::RawFrame,
        Method::DamrV => MessageKind::ProbVector,
        Method::DamrF8 => MessageKind::Features8,
        Method::DamrF256 => MessageKind::Features256,
        Method::Lamr => unreachable!("rejected by check"),
    };

    for (j, frame) in obs.frames.iter().enumerate() {
        let payload = match method {
            Method::CentAmr => encode_frame(frame),
            _ => {
                let taps = forward_with_tap(&artifacts.receivers[j], &frame_input(frame))?;
                match method {
                    Method::DamrV => encode_f32s(&softmax(&taps.logits)),
                    Method::DamrF8 => encode_f32s(&taps.logits),
                    _ => encode_f32s(&taps.hidden256),
                }
            }
        };
        log.push(WireMessage::new(NodeId::Receiver(j as u8), NodeId::Central, uplink_kind, payload)?);
    }

    let uplink = &log.messages;
    let decision = match method {
        Method::CentAmr => {
            let frames = uplink
                .iter()
                .map(|m| decode_frame(&m.payload))
                .collect::<Result<Vec<_>, _>>()?;
            let central_view = MultiRxObservation::new(obs.label, frames, obs.states.clone())
                .map_err(|e| SimError::Config(e.to_string()))?;
            let cent = artifacts.cent.as_ref().unwrap();
            cent_predict(cent, &central_view)?
        }
        Method::DamrV => {
            let probs = uplink
                .iter()
                .map(|m| {
                    let v = decode_f32s(&m.payload)?;
                    let arr: [f32; NUM_CLASSES] = v.try_into().unwrap();
                    ProbVector::new(arr).map_err(SimError::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            damr_v_fuse(&probs, &VoteWeights::uniform(probs.len()))?
        }
        _ => {
            let tap = method.feature_tap().unwrap();
            let features = uplink
                .iter()
                .map(|m| decode_f32s(&m.payload))
                .collect::<Result<Vec<_>, _>>()?;
            damr_f_fuse(&features, artifacts.head(tap).unwrap(), tap)?
        }
    };

    for j in 0..obs.n_rx() {
        log.push(WireMessage::new(
            NodeId::Central,
            NodeId::Receiver(j as u8),
            MessageKind::DecisionDownlink,
            vec![decision.predicted.id()],
        )?);
    }
    Ok((decision, log))
}

/// Reads the downlinked class id.
pub fn decode_decision(msg: &WireMessage) -> Result<ModulationType, SimError> {
    if msg.kind != MessageKind::DecisionDownlink {
        return Err(SimError::Malformed(format!("{:?} is not a decision", msg.kind)));
    }
    ModulationType::from_id(msg.payload[0]).map_err(|e| SimError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub method: Method,
    pub latency_ms_per_sample: f64,
    pub throughput_samples_per_sec: f64,
    pub n_samples: usize,
    pub warmup: usize,
}

/// Times episodes one at a time on the calling thread. The first `warmup`
/// observations are run but not timed. Latency is the mean of the per-episode
/// wall-clock times; throughput is measured episodes over the total elapsed
/// time of the measured loop.
pub fn measure_perf(
    method: Method,
    artifacts: &Artifacts,
    observations: &[MultiRxObservation],
    warmup: usize,
) -> Result<PerfReport, SimError> {
    if observations.len() < warmup + MIN_PERF_SAMPLES {
        return Err(SimError::Config(format!(
            "need at least {} observations for {warmup} warm-up episodes, got {}",
            warmup + MIN_PERF_SAMPLES,
            observations.len()
        )));
    }
    for obs in &observations[..warmup] {
        run_episode(method, obs, artifacts)?;
    }
    let measured = &observations[warmup..];
    let mut per_episode = 0.0f64;
    let start = Instant::now();
    for obs in measured {
        let t = Instant::now();
        std::hint::black_box(run_episode(method, obs, artifacts)?);
        per_episode += t.elapsed().as_secs_f64();
    }
    let total = start.elapsed().as_secs_f64();
    Ok(PerfReport {
        method,
        latency_ms_per_sample: per_episode * 1000.0 / measured.len() as f64,
        throughput_samples_per_sec: measured.len() as f64 / total,
        n_samples: measured.len(),
        warmup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_lengths() {
        assert_eq!(MessageKind::RawFrame.payload_len(), 8192);
        assert_eq!(MessageKind::ProbVector.payload_len(), 32);
        assert_eq!(MessageKind::Features8.payload_len(), 32);
        assert_eq!(MessageKind::Features256.payload_len(), 1024);
        assert_eq!(MessageKind::DecisionDownlink.payload_len(), 1);
        assert!(WireMessage::new(NodeId::Receiver(0), NodeId::Central, MessageKind::ProbVector, vec![0; 31]).is_err());
    }

    #[test]
    fn frame_encoding_is_little_endian_i_then_q() {
        let mut i = vec![0.0f32; FRAME_LEN];
        let mut q = vec![0.0f32; FRAME_LEN];
        i[0] = 1.0;
        q[0] = -2.0;
        let frame = IqFrame::new(i, q).unwrap();
        let bytes = encode_frame(&frame);
        assert_eq!(bytes.len(), 8192);
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4 * FRAME_LEN..4 * FRAME_LEN + 4], &(-2.0f32).to_le_bytes());
        assert_eq!(decode_frame(&bytes).unwrap(), frame);
    }

    #[test]
    fn log_accumulates_bits_by_direction() {
        let mut log = WireLog::default();
        log.push(WireMessage::new(NodeId::Receiver(1), NodeId::Central, MessageKind::Features256, vec![0; 1024]).unwrap());
        log.push(WireMessage::new(NodeId::Central, NodeId::Receiver(1), MessageKind::DecisionDownlink, vec![3]).unwrap());
        assert_eq!(log.uplink_bits, 8192);
        assert_eq!(log.downlink_bits, 8);
        assert_eq!(log.receiver_uplink_bits(1), 8192);
        assert_eq!(log.receiver_uplink_bits(0), 0);
        assert_eq!(decode_decision(&log.messages[1]).unwrap(), ModulationType::Dqpsk);
    }

    #[test]
    fn missing_artifacts_are_config_errors() {
        let frames = vec![IqFrame::new(vec![0.0; FRAME_LEN], vec![0.0; FRAME_LEN]).unwrap()];
        let states = vec![crate::channel::ReceiverChannelState::identity(10.0)];
        let obs = MultiRxObservation::new(ModulationType::Bpsk, frames, states).unwrap();
        let art = Artifacts::default();
        for m in Method::ALL {
            assert!(matches!(run_episode(m, &obs, &art), Err(SimError::Config(_))), "{m}");
        }
    }

    #[test]
    fn perf_needs_enough_samples() {
        let r = measure_perf(Method::DamrV, &Artifacts::default(), &[], 5);
        assert!(matches!(r, Err(SimError::Config(_))));
    }
}
