use damr::channel::MultiRxObservation;
use damr::dataset::{self, GenerateParams};
use damr::models::{self, forward_with_tap, ModelKind};
use damr::nn::{softmax, Network};
use damr::protocols::{bandwidth_bits, frame_input, lamr_predict, Method};
use damr::simnet::{decode_decision, decode_f32s, run_episode, Artifacts, MessageKind, NodeId};

fn artifacts(n_rx: usize) -> Artifacts {
    let backbone = |s| Network::new(models::build(ModelKind::Vtcnn2, 1).unwrap(), s).unwrap();
    Artifacts {
        receivers: (0..n_rx as u64).map(backbone).collect(),
        cent: Some(Network::new(models::build(ModelKind::Vtcnn2Cent, n_rx).unwrap(), 50).unwrap()),
        head_f8: Some(Network::new(models::build(ModelKind::FusionHeadF8, n_rx).unwrap(), 51).unwrap()),
        head_f256: Some(Network::new(models::build(ModelKind::FusionHeadF256, n_rx).unwrap(), 52).unwrap()),
    }
}

fn observations(n: u64) -> Vec<MultiRxObservation> {
    let p = GenerateParams {
        n_records: n,
        n_rx: 6,
        channel: Default::default(),
        shaping: Default::default(),
        seed: 77,
    };
    let labels = dataset::label_schedule(n, p.seed);
    (0..n).map(|k| dataset::generate_observation(&p, k, labels[k as usize]).unwrap()).collect()
}

#[test]
fn wire_log_matches_bandwidth_model() {
    let art = artifacts(6);
    for obs in observations(8) {
        for m in Method::NETWORKED {
            let (decision, log) = run_episode(m, &obs, &art).unwrap();
            assert_eq!(decision.method, m);
            for rx in 0..6u8 {
                assert_eq!(log.receiver_uplink_bits(rx), bandwidth_bits(m), "{m} rx{rx}");
            }
            assert_eq!(log.uplink_bits, 6 * bandwidth_bits(m));
            assert_eq!(log.count(MessageKind::DecisionDownlink), 6);
            assert_eq!(log.downlink_bits, 6 * 8);
            for msg in log.messages.iter().filter(|x| x.kind == MessageKind::DecisionDownlink) {
                assert_eq!(msg.sender, NodeId::Central);
                assert_eq!(decode_decision(msg).unwrap(), decision.predicted);
            }
        }
    }
}

#[test]
fn episodes_are_deterministic_and_carry_receiver_outputs() {
    let art = artifacts(6);
    let obs = &observations(1)[0];
    let first = run_episode(Method::DamrV, obs, &art).unwrap();
    assert_eq!(first, run_episode(Method::DamrV, obs, &art).unwrap());

    for (rx, msg) in first.1.messages.iter().take(6).enumerate() {
        assert_eq!(msg.sender, NodeId::Receiver(rx as u8));
        let probs = decode_f32s(&msg.payload).unwrap();
        let local = lamr_predict(&art.receivers[rx], &obs.frames[rx]).unwrap();
        let expected = softmax(&forward_with_tap(&art.receivers[rx], &frame_input(&obs.frames[rx])).unwrap().logits);
        assert_eq!(probs, expected);
        let best = (0..8).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
        assert_eq!(best, local.predicted.id() as usize);
    }
}

#[test]
fn mismatched_artifacts_are_rejected() {
    let mut art = artifacts(6);
    art.receivers.pop();
    let obs = &observations(1)[0];
    assert!(run_episode(Method::DamrV, obs, &art).is_err());
    assert!(run_episode(Method::CentAmr, obs, &art).is_ok());
    art.cent = None;
    assert!(run_episode(Method::CentAmr, obs, &art).is_err());
}
