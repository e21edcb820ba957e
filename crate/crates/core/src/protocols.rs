//! Decision rules of the four inference regimes and the analytic uplink
//! bandwidth model.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::{MultiRxObservation, MAX_RECEIVERS};
use crate::models::{FeatureTap, ModelError};
use crate::modulation::{IqFrame, ModulationType, FRAME_LEN, NUM_CLASSES};
use crate::nn::{softmax, Network, NnError, Tensor};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid receiver count: {0}")]
    InvalidReceiverCount(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid vote weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Bits per transmitted value.
pub const BITS_PER_VALUE: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Lamr,
    CentAmr,
    DamrV,
    DamrF8,
    DamrF256,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Lamr, Method::CentAmr, Method::DamrV, Method::DamrF8, Method::DamrF256];
    /// Methods that exchange messages with a central node.
    pub const NETWORKED: [Method; 4] = [Method::CentAmr, Method::DamrV, Method::DamrF8, Method::DamrF256];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lamr => "LAMR",
            Method::CentAmr => "CentAMR",
            Method::DamrV => "DAMR-V",
            Method::DamrF8 => "DAMR-F8",
            Method::DamrF256 => "DAMR-F256",
        }
    }

    pub fn feature_tap(self) -> Option<FeatureTap> {
        match self {
            Method::DamrF8 => Some(FeatureTap::Logits8),
            Method::DamrF256 => Some(FeatureTap::Hidden256),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown method '{s}' (expected lamr, centamr, damr-v, damr-f8 or damr-f256)"))
    }
}

/// Softmax output of one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector([f32; NUM_CLASSES]);

impl ProbVector {
    pub fn new(values: [f32; NUM_CLASSES]) -> Result<Self, ProtocolError> {
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ProtocolError::InvalidProbabilities(format!("entry outside [0, 1] in {values:?}")));
        }
        let sum: f64 = values.iter().map(|&p| p as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ProtocolError::InvalidProbabilities(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn from_logits(logits: &[f32]) -> Result<Self, ProtocolError> {
        let p = softmax(logits);
        let arr: [f32; NUM_CLASSES] = p
            .try_into()
            .map_err(|_| ProtocolError::Shape(format!("expected {NUM_CLASSES} logits, got {}", logits.len())))?;
        Ok(Self(arr))
    }

    pub fn values(&self) -> &[f32; NUM_CLASSES] {
        &self.0
    }
}

/// Per-receiver weights of the voting sum.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteWeights(Vec<f64>);

impl VoteWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, ProtocolError> {
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(ProtocolError::InvalidWeights("weights must be positive and finite".into()));
        }
        Ok(Self(weights))
    }

    /// Equal unit weights.
    pub fn uniform(n_rx: usize) -> Self {
        Self(vec![1.0; n_rx])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Outcome of one classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub predicted: ModulationType,
    pub fused_scores: [f64; NUM_CLASSES],
    pub method: Method,
}

impl Decision {
    /// Picks the highest score, breaking ties towards the lowest class id.
    pub fn from_scores(fused_scores: [f64; NUM_CLASSES], method: Method) -> Self {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if fused_scores[k] > fused_scores[best] {
                best = k;
            }
        }
        Self {
            predicted: ModulationType::ALL[best],
            fused_scores,
            method,
        }
    }
}

fn probs_to_scores(p: &[f32]) -> [f64; NUM_CLASSES] {
    std::array::from_fn(|k| p[k] as f64)
}

/// `[I…, Q…]` input of a 2-channel backbone.
pub fn frame_input(frame: &IqFrame) -> Vec<f32> {
    let mut v = Vec::with_capacity(2 * FRAME_LEN);
    v.extend_from_slice(frame.i());
    v.extend_from_slice(frame.q());
    v
}

/// Interleaved 12-channel input `[I₁, Q₁, I₂, Q₂, …, I₆, Q₆]`.
pub fn assemble_cent_input(frames: &[IqFrame]) -> Result<Tensor, ProtocolError> {
    if frames.len() != MAX_RECEIVERS {
        return Err(ProtocolError::InvalidReceiverCount(format!(
            "centralized input needs {MAX_RECEIVERS} frames, got {}",
            frames.len()
        )));
    }
    let data: Vec<f32> = frames.iter().flat_map(frame_input).collect();
    Ok(Tensor::new(vec![2 * MAX_RECEIVERS, FRAME_LEN], data)?)
}

/// Local decision of one receiver from its own frame.
pub fn lamr_predict(model: &Network, frame: &IqFrame) -> Result<Decision, ProtocolError> {
    let input = Tensor::new(vec![2, FRAME_LEN], frame_input(frame))?;
    let logits = model.forward(&input)?;
    Ok(Decision::from_scores(probs_to_scores(&softmax(logits.data())), Method::Lamr))
}

/// Single forward pass of the 12-channel model over all six frames.
pub fn cent_predict(model: &Network, obs: &MultiRxObservation) -> Result<Decision, ProtocolError> {
    let input = assemble_cent_input(&obs.frames)?;
    let logits = model.forward(&input)?;
    Ok(Decision::from_scores(probs_to_scores(&softmax(logits.data())), Method::CentAmr))
}

/// Weighted soft vote: `scores[k] = Σ_j W_j·P_j[k]`.
pub fn damr_v_fuse(probs: &[ProbVector], weights: &VoteWeights) -> Result<Decision, ProtocolError> {
    if probs.is_empty() || probs.len() > MAX_RECEIVERS || probs.len() != weights.len() {
        return Err(ProtocolError::InvalidReceiverCount(format!(
            "{} probability vectors with {} weights",
            probs.len(),
            weights.len()
        )));
    }
    let mut scores = [0.0f64; NUM_CLASSES];
    for (p, &w) in probs.iter().zip(weights.values()) {
        for (s, &v) in scores.iter_mut().zip(p.values()) {
            *s += w * v as f64;
        }
    }
    Ok(Decision::from_scores(scores, Method::DamrV))
}

/// Concatenates receiver features in receiver order and classifies them with
/// the fusion head.
pub fn damr_f_fuse(features: &[Vec<f32>], head: &Network, tap: FeatureTap) -> Result<Decision, ProtocolError> {
    if features.is_empty() || features.len() > MAX_RECEIVERS {
        return Err(ProtocolError::InvalidReceiverCount(format!("{} feature vectors", features.len())));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != tap.size()) {
        return Err(ProtocolError::Shape(format!(
            "feature vector of length {} for a {}-value tap",
            bad.len(),
            tap.size()
        )));
    }
    let concat: Vec<f32> = features.concat();
    if head.input_len() != concat.len() {
        return Err(ProtocolError::Shape(format!(
            "head expects {} features, got {}",
            head.input_len(),
            concat.len()
        )));
    }
    let logits = head.predict_logits(&concat, 1)?;
    let method = match tap {
        FeatureTap::Logits8 => Method::DamrF8,
        FeatureTap::Hidden256 => Method::DamrF256,
    };
    Ok(Decision::from_scores(probs_to_scores(&softmax(&logits)), method))
}

/// Uplink payload bits one receiver sends per classification. LAMR sends
/// nothing; the 1-byte downlink decision is not counted.
pub fn bandwidth_bits(method: Method) -> u64 {
    match method {
        Method::Lamr => 0,
        Method::CentAmr => FRAME_LEN as u64 * 2 * BITS_PER_VALUE,
        Method::DamrV | Method::DamrF8 => NUM_CLASSES as u64 * BITS_PER_VALUE,
        Method::DamrF256 => crate::models::HIDDEN as u64 * BITS_PER_VALUE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_fusion_head, ModelKind};
    use crate::nn::LayerParams;
    use proptest::prelude::*;

    fn pv(v: &[f32]) -> ProbVector {
        let mut a = [0.0f32; NUM_CLASSES];
        a[..v.len()].copy_from_slice(v);
        ProbVector::new(a).unwrap()
    }

    #[test]
    fn bandwidth_constants() {
        assert_eq!(bandwidth_bits(Method::CentAmr), 65_536);
        assert_eq!(bandwidth_bits(Method::DamrV), 256);
        assert_eq!(bandwidth_bits(Method::DamrF8), 256);
        assert_eq!(bandwidth_bits(Method::DamrF256), 8_192);
        assert_eq!(bandwidth_bits(Method::CentAmr) / bandwidth_bits(Method::DamrV), 256);
        assert_eq!(bandwidth_bits(Method::CentAmr) / bandwidth_bits(Method::DamrF256), 8);
    }

    #[test]
    fn decision_ties_go_to_lowest_index() {
        let mut s = [0.0; NUM_CLASSES];
        s[3] = 0.9;
        assert_eq!(Decision::from_scores(s, Method::Lamr).predicted.id(), 3);
        s[5] = 0.9;
        s[3] = 0.9;
        assert_eq!(Decision::from_scores(s, Method::Lamr).predicted.id(), 3);
    }

    #[test]
    fn hand_summation_example() {
        let d = damr_v_fuse(&[pv(&[0.6, 0.4]), pv(&[0.1, 0.9])], &VoteWeights::uniform(2)).unwrap();
        assert!((d.fused_scores[0] - 0.7).abs() < 1e-6);
        assert!((d.fused_scores[1] - 1.3).abs() < 1e-6);
        assert_eq!(d.predicted.id(), 1);
    }

    #[test]
    fn single_receiver_vote_is_local_argmax() {
        let p = pv(&[0.1, 0.2, 0.05, 0.3, 0.1, 0.1, 0.1, 0.05]);
        let d = damr_v_fuse(&[p], &VoteWeights::uniform(1)).unwrap();
        assert_eq!(d.predicted.id(), 3);
    }

    #[test]
    fn vote_rejects_bad_counts() {
        let p = pv(&[1.0]);
        assert!(damr_v_fuse(&[p, p], &VoteWeights::uniform(3)).is_err());
        assert!(damr_v_fuse(&[], &VoteWeights::uniform(0)).is_err());
        assert!(damr_v_fuse(&[p; 7], &VoteWeights::uniform(7)).is_err());
        assert!(VoteWeights::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new([0.5; 8]).is_err());
        assert!(ProbVector::new([0.125; 8]).is_ok());
        assert!(ProbVector::from_logits(&[0.0; 3]).is_err());
    }

    #[test]
    fn cent_input_is_interleaved_and_order_sensitive() {
        let frames: Vec<IqFrame> = (0..6)
            .map(|j| IqFrame::new(vec![j as f32; FRAME_LEN], vec![-(j as f32); FRAME_LEN]).unwrap())
            .collect();
        let t = assemble_cent_input(&frames).unwrap();
        assert_eq!(t.shape(), &[12, FRAME_LEN]);
        assert_eq!(t.data()[2 * FRAME_LEN], 1.0);
        assert_eq!(t.data()[3 * FRAME_LEN], -1.0);
        let mut swapped = frames.clone();
        swapped.swap(0, 5);
        assert_ne!(assemble_cent_input(&swapped).unwrap(), t);
        assert!(matches!(
            assemble_cent_input(&frames[..5]),
            Err(ProtocolError::InvalidReceiverCount(_))
        ));
    }

    #[test]
    fn fused_widths() {
        let f = build_fusion_head(ModelKind::FusionHeadF256, 6).unwrap();
        assert_eq!(f.input_len(), 6 * FeatureTap::Hidden256.size());
        let f = build_fusion_head(ModelKind::FusionHeadF8, 6).unwrap();
        assert_eq!(f.input_len(), 6 * FeatureTap::Logits8.size());
    }

    /// F8 head whose output reproduces its 8 inputs exactly (n_rx = 1):
    /// layer 1 splits x into relu(x), relu(−x); layer 2 rebuilds x + C;
    /// the output layer subtracts C.
    pub(crate) fn copy_head() -> Network {
        const C: f32 = 64.0;
        let spec = build_fusion_head(ModelKind::FusionHeadF8, 1).unwrap();
        let mut w1 = vec![0.0f32; 128 * 8];
        for k in 0..8 {
            w1[k * 8 + k] = 1.0;
            w1[(8 + k) * 8 + k] = -1.0;
        }
        let mut w2 = vec![0.0f32; 64 * 128];
        let mut b2 = vec![0.0f32; 64];
        for k in 0..8 {
            w2[k * 128 + k] = 1.0;
            w2[k * 128 + 8 + k] = -1.0;
            b2[k] = C;
        }
        let mut w3 = vec![0.0f32; 8 * 64];
        for k in 0..8 {
            w3[k * 64 + k] = 1.0;
        }
        let lp = |w: Vec<f32>, ws: Vec<usize>, b: Vec<f32>| {
            let bs = vec![b.len()];
            Some(LayerParams {
                weight: Tensor::new(ws, w).unwrap(),
                bias: Tensor::new(bs, b).unwrap(),
            })
        };
        let layers = vec![
            lp(w1, vec![128, 8], vec![0.0; 128]),
            None,
            lp(w2, vec![64, 128], b2),
            None,
            None,
            lp(w3, vec![8, 64], vec![-C; 8]),
            None,
        ];
        Network::from_params(spec, layers).unwrap()
    }

    #[test]
    fn copy_head_feature_fusion_matches_local_decision() {
        use crate::models::{build_vtcnn2, forward_with_tap};
        use crate::modulation::{generate_frame, ShapingConfig};
        let backbone = Network::new(build_vtcnn2(2).unwrap(), 21).unwrap();
        let head = copy_head();
        for seed in 0..3 {
            let frame = generate_frame(ModulationType::ALL[seed as usize], &ShapingConfig::default(), seed);
            let local = lamr_predict(&backbone, &frame).unwrap();
            let taps = forward_with_tap(&backbone, &frame_input(&frame)).unwrap();
            let fused = damr_f_fuse(&[taps.logits.clone()], &head, FeatureTap::Logits8).unwrap();
            assert_eq!(fused.predicted, local.predicted);
            for (a, b) in fused.fused_scores.iter().zip(&local.fused_scores) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn feature_fusion_checks_widths() {
        let head = copy_head();
        assert!(matches!(
            damr_f_fuse(&[vec![0.0; 7]], &head, FeatureTap::Logits8),
            Err(ProtocolError::Shape(_))
        ));
        assert!(matches!(
            damr_f_fuse(&[vec![0.0; 8], vec![0.0; 8]], &head, FeatureTap::Logits8),
            Err(ProtocolError::Shape(_))
        ));
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("damr_f256".parse::<Method>().unwrap(), Method::DamrF256);
        assert!("nope".parse::<Method>().is_err());
    }

    fn prob_vectors(n: usize) -> impl Strategy<Value = Vec<ProbVector>> {
        prop::collection::vec(prop::array::uniform8(0.001f32..1.0), n).prop_map(|raw| {
            raw.into_iter()
                .map(|r| {
                    let s: f32 = r.iter().sum();
                    let mut p = r.map(|v| v / s);
                    // Push any rounding residue into the largest entry.
                    let resid = 1.0 - p.iter().map(|&v| v as f64).sum::<f64>();
                    let k = (0..NUM_CLASSES).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                    p[k] += resid as f32;
                    ProbVector::new(p).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(probs in (1usize..=6).prop_flat_map(prob_vectors), rot in 0usize..6) {
            let n = probs.len();
            let base = damr_v_fuse(&probs, &VoteWeights::uniform(n)).unwrap();
            let mut rotated = probs.clone();
            rotated.rotate_left(rot % n);
            let other = damr_v_fuse(&rotated, &VoteWeights::uniform(n)).unwrap();
            for (a, b) in base.fused_scores.iter().zip(&other.fused_scores) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(base.predicted, other.predicted);
        }

        #[test]
        fn positive_weight_scaling_keeps_decision(probs in (1usize..=6).prop_flat_map(prob_vectors), c in 1e-3f64..1e3) {
            let n = probs.len();
            let base = damr_v_fuse(&probs, &VoteWeights::uniform(n)).unwrap();
            let scaled = damr_v_fuse(&probs, &VoteWeights::new(vec![c; n]).unwrap()).unwrap();
            prop_assert_eq!(base.predicted, scaled.predicted);
        }
    }
}
