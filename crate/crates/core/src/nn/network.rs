use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{conv1d_backward_batch, conv1d_batch, dense_backward_batch, dense_batch, dropout_mask, softmax_ce};
use super::{NnError, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Dropout {
        rate: f32,
    },
    Flatten,
    Softmax,
}

impl LayerSpec {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => match input {
                &[c, len] if c == in_channels && len >= kernel_size => Ok(vec![out_channels, len - kernel_size + 1]),
                _ => Err(NnError::Shape(format!(
                    "conv1d({in_channels}->{out_channels}, k={kernel_size}) cannot take input {input:?}"
                ))),
            },
            LayerSpec::Dense {
                in_features,
                out_features,
            } => match input {
                &[f] if f == in_features => Ok(vec![out_features]),
                _ => Err(NnError::Shape(format!(
                    "dense({in_features}->{out_features}) cannot take input {input:?}"
                ))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => Ok(input.to_vec()),
        }
    }

    /// Weight and bias shapes of parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => Some((vec![out_channels, in_channels, kernel_size], vec![out_channels])),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => write!(f, "Conv1d({in_channels}->{out_channels}, k={kernel_size})"),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => write!(f, "Dense({in_features}->{out_features})"),
            LayerSpec::Relu => f.write_str("ReLU"),
            LayerSpec::Dropout { rate } => write!(f, "Dropout({rate})"),
            LayerSpec::Flatten => f.write_str("Flatten"),
            LayerSpec::Softmax => f.write_str("Softmax"),
        }
    }
}

/// Per-sample input shape plus a linear stack of layers. A `Softmax` may only
/// appear last; the network's forward pass returns the logits before it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Shape entering each layer, followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::InvalidSpec(format!("bad input shape {:?}", self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Softmax if i + 1 != self.layers.len() => {
                    return Err(NnError::InvalidSpec("softmax must be the last layer".into()));
                }
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                    return Err(NnError::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")));
                }
                LayerSpec::Conv1d { kernel_size: 0, .. } => {
                    return Err(NnError::InvalidSpec("kernel_size must be at least 1".into()));
                }
                _ => {}
            }
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(NnError::InvalidSpec("network output must be one-dimensional".into()));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Layers executed by the forward pass (a trailing softmax is excluded).
    fn compute_layers(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input{:?}", self.input_shape)?;
        for l in &self.layers {
            write!(f, " -> {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.weight.data_mut().iter_mut().chain(self.bias.data_mut().iter_mut())
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f32> {
        self.weight.data().iter().chain(self.bias.data().iter())
    }
}

/// Trainable parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub layers: Vec<Option<LayerParams>>,
    pub(crate) first_moment: Vec<Option<LayerParams>>,
    pub(crate) second_moment: Vec<Option<LayerParams>>,
    pub step: u64,
}

impl ParamStore {
    fn new(layers: Vec<Option<LayerParams>>) -> Self {
        let zeros: Vec<Option<LayerParams>> = layers.iter().map(|l| l.as_ref().map(LayerParams::zeros_like)).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            layers,
            step: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flatten().map(|p| p.weight.len() + p.bias.len()).sum()
    }
}

/// Parameter gradients, laid out like [`ParamStore::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    pub fn zeros_for(params: &ParamStore) -> Self {
        Self {
            layers: params.layers.iter().map(|l| l.as_ref().map(LayerParams::zeros_like)).collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        for p in self.layers.iter_mut().flatten() {
            p.values_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Activations kept for the reverse pass. Element-wise layers work in place on
/// the buffer produced by the last parameterized layer, so `layer_input[i]`
/// names the buffer layer `i` reads (and, for element-wise layers, writes).
struct ForwardCache {
    batch: usize,
    buffers: Vec<Vec<f32>>,
    layer_input: Vec<usize>,
    masks: Vec<Option<Vec<f32>>>,
    taps: Vec<Vec<f32>>,
}

impl ForwardCache {
    fn logits(&self) -> &[f32] {
        self.buffers.last().unwrap()
    }
}

/// A network specification together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: ParamStore,
}

impl Network {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                layer.param_shapes().map(|(ws, bs)| {
                    let mut rng = seed::rng(seed::derive(seed, i as u64));
                    let limit = (6.0 / layer.fan_in() as f64).sqrt() as f32;
                    let n: usize = ws.iter().product();
                    let w = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
                    LayerParams {
                        weight: Tensor::new(ws, w).unwrap(),
                        bias: Tensor::zeros(bs),
                    }
                })
            })
            .collect();
        Ok(Self {
            spec,
            shapes,
            params: ParamStore::new(layers),
        })
    }

    /// Wraps existing parameters, checking every shape against the spec.
    pub fn from_params(spec: NetworkSpec, layers: Vec<Option<LayerParams>>) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        if layers.len() != spec.layers.len() {
            return Err(NnError::Shape(format!(
                "{} parameter slots for {} layers",
                layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&layers).enumerate() {
            match (layer.param_shapes(), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weight.shape() == ws && p.bias.shape() == bs => {}
                _ => return Err(NnError::Shape(format!("parameters of layer {i} ({layer}) do not match"))),
            }
        }
        Ok(Self {
            spec,
            shapes,
            params: ParamStore::new(layers),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Number of values produced by layer `layer` for one sample.
    pub fn layer_output_len(&self, layer: usize) -> usize {
        self.shapes[layer + 1].iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn first_param_layer(&self) -> usize {
        self.spec
            .layers
            .iter()
            .position(|l| l.param_shapes().is_some())
            .unwrap_or(usize::MAX)
    }

    fn check_batch(&self, inputs: &[f32], batch: usize) -> Result<(), NnError> {
        if batch == 0 || inputs.len() != batch * self.input_len() {
            return Err(NnError::Shape(format!(
                "expected {batch} samples of {} values, got {} values",
                self.input_len(),
                inputs.len()
            )));
        }
        Ok(())
    }

    fn run_forward(
        &self,
        inputs: &[f32],
        batch: usize,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        record: bool,
        taps: &[usize],
    ) -> Result<ForwardCache, NnError> {
        self.check_batch(inputs, batch)?;
        if let Some(&bad) = taps.iter().find(|&&t| t >= self.spec.compute_layers()) {
            return Err(NnError::Shape(format!("tap layer {bad} out of range")));
        }
        let n = self.spec.compute_layers();
        let mut cache = ForwardCache {
            batch,
            buffers: vec![inputs.to_vec()],
            layer_input: Vec::with_capacity(n),
            masks: vec![None; n],
            taps: vec![Vec::new(); taps.len()],
        };
        let mut col = Vec::new();
        for i in 0..n {
            let cur = cache.buffers.len() - 1;
            cache.layer_input.push(cur);
            let in_shape = &self.shapes[i];
            match &self.spec.layers[i] {
                &LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let out_len = self.shapes[i + 1][1];
                    let mut out = vec![0.0; batch * out_channels * out_len];
                    conv1d_batch(
                        &cache.buffers[cur],
                        batch,
                        in_channels,
                        in_shape[1],
                        p.weight.data(),
                        p.bias.data(),
                        out_channels,
                        kernel_size,
                        &mut out,
                        &mut col,
                    );
                    self.push_buffer(&mut cache, out, record);
                }
                &LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let mut out = vec![0.0; batch * out_features];
                    dense_batch(
                        &cache.buffers[cur],
                        batch,
                        in_features,
                        p.weight.data(),
                        p.bias.data(),
                        out_features,
                        &mut out,
                    );
                    self.push_buffer(&mut cache, out, record);
                }
                LayerSpec::Relu => cache.buffers[cur].iter_mut().for_each(|v| *v = v.max(0.0)),
                &LayerSpec::Dropout { rate } => {
                    if mode == Mode::Train && rate > 0.0 {
                        let mask = dropout_mask(cache.buffers[cur].len(), rate, rng);
                        cache.buffers[cur].iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        cache.masks[i] = Some(mask);
                    }
                }
                LayerSpec::Flatten => {}
                LayerSpec::Softmax => unreachable!("trailing softmax is not executed"),
            }
            for (slot, _) in taps.iter().enumerate().filter(|(_, &t)| t == i) {
                cache.taps[slot] = cache.buffers.last().unwrap().clone();
            }
        }
        if !cache.logits().iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("network output".into()));
        }
        Ok(cache)
    }

    fn push_buffer(&self, cache: &mut ForwardCache, out: Vec<f32>, record: bool) {
        if !record {
            // Inference only needs the newest activation.
            cache.buffers.last_mut().unwrap().clear();
            cache.buffers.last_mut().unwrap().shrink_to_fit();
        }
        cache.buffers.push(out);
    }

    fn run_backward(&self, cache: &ForwardCache, grad_logits: Vec<f32>, grads: &mut Gradients) {
        let batch = cache.batch;
        let first_param = self.first_param_layer();
        let mut col = Vec::new();
        let mut g = grad_logits;
        for i in (0..self.spec.compute_layers()).rev() {
            let input = &cache.buffers[cache.layer_input[i]];
            match &self.spec.layers[i] {
                &LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let mut gi = (i > first_param).then(|| vec![0.0; input.len()]);
                    conv1d_backward_batch(
                        input,
                        &g,
                        batch,
                        in_channels,
                        self.shapes[i][1],
                        p.weight.data(),
                        out_channels,
                        kernel_size,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        gi.as_deref_mut(),
                        &mut col,
                    );
                    match gi {
                        Some(gi) => g = gi,
                        None => return,
                    }
                }
                &LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let mut gi = (i > first_param).then(|| vec![0.0; input.len()]);
                    dense_backward_batch(
                        input,
                        &g,
                        batch,
                        in_features,
                        p.weight.data(),
                        out_features,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        gi.as_deref_mut(),
                    );
                    match gi {
                        Some(gi) => g = gi,
                        None => return,
                    }
                }
                // The buffer holds this layer's final output; positive entries
                // are exactly where the ReLU passed its input through.
                LayerSpec::Relu => g.iter_mut().zip(input).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                }),
                LayerSpec::Dropout { .. } => {
                    if let Some(mask) = &cache.masks[i] {
                        g.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                    }
                }
                LayerSpec::Flatten => {}
                LayerSpec::Softmax => unreachable!(),
            }
        }
    }

    /// Logits for one sample shaped like the spec's input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        if input.shape() != self.spec.input_shape.as_slice() {
            return Err(NnError::Shape(format!(
                "expected input {:?}, got {:?}",
                self.spec.input_shape,
                input.shape()
            )));
        }
        let logits = self.predict_logits(input.data(), 1)?;
        Ok(Tensor::from_vec(logits))
    }

    /// Eval-mode logits for `batch` samples packed back to back.
    pub fn predict_logits(&self, inputs: &[f32], batch: usize) -> Result<Vec<f32>, NnError> {
        let mut rng = seed::rng(0);
        let cache = self.run_forward(inputs, batch, Mode::Eval, &mut rng, false, &[])?;
        Ok(cache.buffers.last().unwrap().clone())
    }

    /// Eval-mode logits plus copies of the outputs of the `taps` layers.
    pub fn forward_taps(&self, inputs: &[f32], batch: usize, taps: &[usize]) -> Result<(Vec<f32>, Vec<Vec<f32>>), NnError> {
        let mut rng = seed::rng(0);
        let mut cache = self.run_forward(inputs, batch, Mode::Eval, &mut rng, false, taps)?;
        let taps = std::mem::take(&mut cache.taps);
        Ok((cache.buffers.pop().unwrap(), taps))
    }

    /// Exact cross-entropy gradients for one sample in eval mode.
    pub fn gradients(&self, input: &Tensor, label: usize) -> Result<(f64, Gradients), NnError> {
        if input.shape() != self.spec.input_shape.as_slice() {
            return Err(NnError::Shape(format!(
                "expected input {:?}, got {:?}",
                self.spec.input_shape,
                input.shape()
            )));
        }
        let mut grads = Gradients::zeros_for(&self.params);
        let mut rng = seed::rng(0);
        let (loss, _) = self.accumulate_gradients(input.data(), &[label], Mode::Eval, &mut rng, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `scale · ∂(Σ CE)/∂θ` over the batch into `grads`. Returns the summed
    /// loss and the number of correct argmax predictions.
    pub fn accumulate_gradients(
        &self,
        inputs: &[f32],
        labels: &[usize],
        mode: Mode,
        rng: &mut ChaCha8Rng,
        scale: f32,
        grads: &mut Gradients,
    ) -> Result<(f64, usize), NnError> {
        let batch = labels.len();
        let cache = self.run_forward(inputs, batch, mode, rng, true, &[])?;
        let n_out = self.output_len();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut grad_logits = Vec::with_capacity(batch * n_out);
        for (b, &label) in labels.iter().enumerate() {
            if label >= n_out {
                return Err(NnError::Shape(format!("label {label} outside {n_out} classes")));
            }
            let logits = &cache.logits()[b * n_out..(b + 1) * n_out];
            let (loss, probs) = softmax_ce(logits, label);
            loss_sum += loss;
            if argmax(logits) == label {
                correct += 1;
            }
            grad_logits.extend(probs.iter().enumerate().map(|(k, &p)| {
                let target = if k == label { 1.0 } else { 0.0 };
                (p - target) * scale
            }));
        }
        if !loss_sum.is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }
        self.run_backward(&cache, grad_logits, grads);
        Ok((loss_sum, correct))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}
