//! Rough timing of one VTCNN2 training batch and single-sample inference.

use std::time::Instant;

use damr::models::build_vtcnn2;
use damr::nn::{Gradients, Mode, Network};

fn main() {
    let net = Network::new(build_vtcnn2(2).unwrap(), 1).unwrap();
    let batch = 64;
    let inputs: Vec<f32> = (0..batch * 2048).map(|k| ((k as f32) * 0.01).sin()).collect();
    let labels: Vec<usize> = (0..batch).map(|k| k % 8).collect();
    let mut grads = Gradients::zeros_for(net.params());
    let mut rng = damr::seed::rng(0);
    let t = Instant::now();
    net.accumulate_gradients(&inputs, &labels, Mode::Train, &mut rng, 1.0 / batch as f32, &mut grads).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("train: {:.1} samples/s", batch as f64 / dt);
    let t = Instant::now();
    net.predict_logits(&inputs, batch).unwrap();
    println!("batched inference: {:.1} samples/s", batch as f64 / t.elapsed().as_secs_f64());
    let t = Instant::now();
    for b in 0..8 {
        net.predict_logits(&inputs[b * 2048..(b + 1) * 2048], 1).unwrap();
    }
    println!("single inference: {:.2} ms/sample", t.elapsed().as_secs_f64() * 1000.0 / 8.0);
}
