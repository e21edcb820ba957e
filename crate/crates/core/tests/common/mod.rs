//! Backpropagation checked against central finite differences of an
//! independent f64 forward pass.

use damr::nn::{LayerParams, LayerSpec, Network, NetworkSpec, Tensor};
use damr::seed;
use rand::Rng;

const EPS: f64 = 1e-3;
const FLOOR: f64 = 1e-4;

/// Plain f64 forward. Returns the loss and the sign pattern of every ReLU input.
pub fn oracle(spec: &NetworkSpec, params: &[Option<Vec<Vec<f64>>>], input: &[f64], label: usize) -> (f64, Vec<bool>) {
    let mut shape = spec.input_shape.clone();
    let mut x = input.to_vec();
    let mut signs = Vec::new();
    for (layer, p) in spec.layers.iter().zip(params) {
        match *layer {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                let (w, b) = (&p.as_ref().unwrap()[0], &p.as_ref().unwrap()[1]);
                let len = shape[1];
                let out_len = len - kernel_size + 1;
                let mut y = vec![0.0; out_channels * out_len];
                for o in 0..out_channels {
                    for t in 0..out_len {
                        let mut acc = b[o];
                        for c in 0..in_channels {
                            for k in 0..kernel_size {
                                acc += w[(o * in_channels + c) * kernel_size + k] * x[c * len + t + k];
                            }
                        }
                        y[o * out_len + t] = acc;
                    }
                }
                x = y;
                shape = vec![out_channels, out_len];
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (w, b) = (&p.as_ref().unwrap()[0], &p.as_ref().unwrap()[1]);
                x = (0..out_features)
                    .map(|o| b[o] + (0..in_features).map(|i| w[o * in_features + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![out_features];
            }
            LayerSpec::Relu => {
                signs.extend(x.iter().map(|v| *v > 0.0));
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            LayerSpec::Flatten => shape = vec![x.len()],
            LayerSpec::Dropout { .. } | LayerSpec::Softmax => {}
        }
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (lse - x[label], signs)
}

pub fn random_spec(rng: &mut impl Rng) -> NetworkSpec {
    let channels = rng.random_range(1..=3);
    let len = rng.random_range(8..=14);
    let mut layers = Vec::new();
    let mut shape = (channels, len);
    for _ in 0..rng.random_range(1..=2) {
        let out = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        layers.push(LayerSpec::Conv1d {
            in_channels: shape.0,
            out_channels: out,
            kernel_size: k,
        });
        layers.push(LayerSpec::Relu);
        shape = (out, shape.1 - k + 1);
    }
    layers.push(LayerSpec::Flatten);
    let hidden = rng.random_range(3..=7);
    layers.push(LayerSpec::Dense {
        in_features: shape.0 * shape.1,
        out_features: hidden,
    });
    layers.push(LayerSpec::Relu);
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::Dropout { rate: 0.3 });
    }
    layers.push(LayerSpec::Dense {
        in_features: hidden,
        out_features: rng.random_range(2..=5),
    });
    layers.push(LayerSpec::Softmax);
    NetworkSpec {
        input_shape: vec![channels, len],
        layers,
    }
}

fn to_f64(layers: &[Option<LayerParams>]) -> Vec<Option<Vec<Vec<f64>>>> {
    layers
        .iter()
        .map(|l| {
            l.as_ref().map(|p| {
                vec![
                    p.weight.data().iter().map(|&v| v as f64).collect(),
                    p.bias.data().iter().map(|&v| v as f64).collect(),
                ]
            })
        })
        .collect()
}

pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Checks `cases` random networks. Parameters whose perturbation flips a ReLU
/// input sign are skipped.
pub fn gradient_check(cases: u64) -> GradReport {
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for case in 0..cases {
        let mut rng = seed::rng(seed::derive(0x6772_6164, case));
        let spec = random_spec(&mut rng);
        let net = Network::new(spec.clone(), case).unwrap();
        let n_in: usize = spec.input_shape.iter().product();
        let input: Vec<f32> = (0..n_in).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n_out = net.output_len();
        let label = rng.random_range(0..n_out);

        let (loss, grads) = net.gradients(&Tensor::new(spec.input_shape.clone(), input.clone()).unwrap(), label).unwrap();
        let base = to_f64(&net.params().layers);
        let x64: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let (oracle_loss, base_signs) = oracle(&spec, &base, &x64, label);
        let loss_rel = (loss - oracle_loss).abs() / oracle_loss.abs().max(1.0);
        worst = worst.max(loss_rel);

        for (li, layer) in base.iter().enumerate() {
            let Some(tensors) = layer else { continue };
            let g = grads.layers[li].as_ref().unwrap();
            for (ti, values) in tensors.iter().enumerate() {
                let analytic = if ti == 0 { g.weight.data() } else { g.bias.data() };
                for idx in 0..values.len() {
                    let eval = |delta: f64| {
                        let mut p = base.clone();
                        p[li].as_mut().unwrap()[ti][idx] += delta;
                        oracle(&spec, &p, &x64, label)
                    };
                    let (lp, sp) = eval(EPS);
                    let (lm, sm) = eval(-EPS);
                    if sp != base_signs || sm != base_signs {
                        skipped += 1;
                        continue;
                    }
                    let numeric = (lp - lm) / (2.0 * EPS);
                    let a = analytic[idx] as f64;
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
    }
    GradReport { checked, skipped, worst }
}
