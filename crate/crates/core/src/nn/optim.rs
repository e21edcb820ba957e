use super::network::{Gradients, ParamStore};
use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one update to every parameter and increments the step counter.
///
/// Adam uses bias-corrected moments. SGD keeps a velocity
/// `v ← μ·v + g` and steps `θ ← θ − lr·v`.
pub fn optimizer_step(params: &mut ParamStore, grads: &Gradients, config: &TrainConfig) {
    params.step += 1;
    let lr = config.learning_rate;
    let t = params.step as i32;
    let slots = params
        .layers
        .iter_mut()
        .zip(params.first_moment.iter_mut())
        .zip(params.second_moment.iter_mut())
        .zip(&grads.layers);
    for (((p, m), v), g) in slots {
        let (Some(p), Some(m), Some(v), Some(g)) = (p.as_mut(), m.as_mut(), v.as_mut(), g.as_ref()) else {
            continue;
        };
        let values = p.values_mut().zip(m.values_mut()).zip(v.values_mut()).zip(g.values());
        match config.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (beta1 as f32, beta2 as f32);
                let step_size = (lr * c2.sqrt() / c1) as f32;
                let eps_hat = (eps * c2.sqrt()) as f32;
                for (((theta, m), v), &g) in values {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *theta -= step_size * *m / (v.sqrt() + eps_hat);
                }
            }
            Optimizer::Sgd { momentum } => {
                let mu = momentum as f32;
                let lr = lr as f32;
                for (((theta, vel), _), &g) in values {
                    *vel = mu * *vel + g;
                    *theta -= lr * *vel;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network, NetworkSpec};

    fn scalar_net() -> Network {
        let spec = NetworkSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Dense {
                in_features: 1,
                out_features: 1,
            }],
        };
        Network::new(spec, 0).unwrap()
    }

    fn grads_of(net: &Network, value: f32) -> Gradients {
        let mut g = Gradients::zeros_for(net.params());
        for p in g.layers.iter_mut().flatten() {
            p.values_mut().for_each(|v| *v = value);
        }
        g
    }

    #[test]
    fn sgd_with_zero_gradient_is_a_no_op() {
        let mut net = scalar_net();
        let before = net.params().layers.clone();
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd { momentum: 0.0 },
            ..Default::default()
        };
        let g = grads_of(&net, 0.0);
        optimizer_step(net.params_mut(), &g, &cfg);
        assert_eq!(net.params().layers, before);
        assert_eq!(net.params().step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = scalar_net();
        let before = net.params().layers[0].as_ref().unwrap().weight.data()[0];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let g = grads_of(&net, 1.0);
        optimizer_step(net.params_mut(), &g, &cfg);
        let after = net.params().layers[0].as_ref().unwrap().weight.data()[0];
        assert!(((after - before) - (-0.1)).abs() < 1e-6, "{}", after - before);
    }

    #[test]
    fn identical_runs_give_identical_parameters() {
        let run = || {
            let mut net = scalar_net();
            let cfg = TrainConfig::default();
            for k in 0..10 {
                let g = grads_of(&net, (k as f32 * 0.7).sin());
                optimizer_step(net.params_mut(), &g, &cfg);
            }
            net
        };
        assert_eq!(run(), run());
    }
}
