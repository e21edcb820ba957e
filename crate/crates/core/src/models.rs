//! Concrete architectures: the VTCNN2-1D backbone (2- and 12-channel inputs)
//! and the two feature-fusion heads.
//!
//! Convolutions use valid padding, so a 1024-sample input shrinks to 1018 and
//! then 1012 samples and the first dense layer sees `80·1012` features.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::modulation::{FRAME_LEN, NUM_CLASSES};
use crate::nn::{LayerSpec, Network, NetworkSpec, NnError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub const CONV1_FILTERS: usize = 256;
pub const CONV2_FILTERS: usize = 80;
pub const KERNEL: usize = 7;
pub const HIDDEN: usize = 256;
pub const FLATTEN_LEN: usize = CONV2_FILTERS * (FRAME_LEN - 2 * (KERNEL - 1));
pub const HEAD_DROPOUT: f32 = 0.3;

/// Layer index of the post-ReLU 256-unit hidden activation.
pub const HIDDEN256_LAYER: usize = 6;
/// Layer index of the 8 logits.
pub const LOGITS_LAYER: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Vtcnn2,
    Vtcnn2Cent,
    FusionHeadF8,
    FusionHeadF256,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vtcnn2 => "vtcnn2",
            ModelKind::Vtcnn2Cent => "vtcnn2-cent",
            ModelKind::FusionHeadF8 => "fusion-f8",
            ModelKind::FusionHeadF256 => "fusion-f256",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [ModelKind::Vtcnn2, ModelKind::Vtcnn2Cent, ModelKind::FusionHeadF8, ModelKind::FusionHeadF256]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::UnsupportedModel(s.to_string()))
    }
}

/// Which backbone activation a receiver shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureTap {
    /// Output of the last dense layer, before softmax.
    Logits8,
    /// Output of the 256-unit hidden layer after its ReLU.
    Hidden256,
}

impl FeatureTap {
    pub fn size(self) -> usize {
        match self {
            FeatureTap::Logits8 => NUM_CLASSES,
            FeatureTap::Hidden256 => HIDDEN,
        }
    }

    pub fn layer(self) -> usize {
        match self {
            FeatureTap::Logits8 => LOGITS_LAYER,
            FeatureTap::Hidden256 => HIDDEN256_LAYER,
        }
    }

    pub fn head_kind(self) -> ModelKind {
        match self {
            FeatureTap::Logits8 => ModelKind::FusionHeadF8,
            FeatureTap::Hidden256 => ModelKind::FusionHeadF256,
        }
    }
}

/// `Conv1d(c→256, 7) → ReLU → Conv1d(256→80, 7) → ReLU → Flatten →
/// Dense(80·1012→256) → ReLU → Dense(256→8) → Softmax`.
pub fn build_vtcnn2(in_channels: usize) -> Result<NetworkSpec, ModelError> {
    if in_channels != 2 && in_channels != 12 {
        return Err(ModelError::UnsupportedModel(format!(
            "VTCNN2-1D takes 2 or 12 input channels, not {in_channels}"
        )));
    }
    Ok(NetworkSpec {
        input_shape: vec![in_channels, FRAME_LEN],
        layers: vec![
            LayerSpec::Conv1d {
                in_channels,
                out_channels: CONV1_FILTERS,
                kernel_size: KERNEL,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1d {
                in_channels: CONV1_FILTERS,
                out_channels: CONV2_FILTERS,
                kernel_size: KERNEL,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: FLATTEN_LEN,
                out_features: HIDDEN,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_features: HIDDEN,
                out_features: NUM_CLASSES,
            },
            LayerSpec::Softmax,
        ],
    })
}

fn dense(in_features: usize, out_features: usize) -> LayerSpec {
    LayerSpec::Dense {
        in_features,
        out_features,
    }
}

/// Central classifier over the concatenated features of `n_rx` receivers.
///
/// F8: `8·n_rx → 128 → 64 → Dropout(0.3) → 8`.
/// F256: `256·n_rx → 4096 → 1024 → Dropout(0.3) → 512 → Dropout(0.3) → 8`.
/// Hidden layers use ReLU.
pub fn build_fusion_head(kind: ModelKind, n_rx: usize) -> Result<NetworkSpec, ModelError> {
    if n_rx == 0 {
        return Err(ModelError::UnsupportedModel("fusion head needs at least one receiver".into()));
    }
    let drop = LayerSpec::Dropout { rate: HEAD_DROPOUT };
    let (width, layers) = match kind {
        ModelKind::FusionHeadF8 => {
            let w = NUM_CLASSES * n_rx;
            (
                w,
                vec![
                    dense(w, 128),
                    LayerSpec::Relu,
                    dense(128, 64),
                    LayerSpec::Relu,
                    drop.clone(),
                    dense(64, NUM_CLASSES),
                    LayerSpec::Softmax,
                ],
            )
        }
        ModelKind::FusionHeadF256 => {
            let w = HIDDEN * n_rx;
            (
                w,
                vec![
                    dense(w, 4096),
                    LayerSpec::Relu,
                    dense(4096, 1024),
                    LayerSpec::Relu,
                    drop.clone(),
                    dense(1024, 512),
                    LayerSpec::Relu,
                    drop,
                    dense(512, NUM_CLASSES),
                    LayerSpec::Softmax,
                ],
            )
        }
        other => {
            return Err(ModelError::UnsupportedModel(format!("{other} is not a fusion head")));
        }
    };
    Ok(NetworkSpec {
        input_shape: vec![width],
        layers,
    })
}

/// Spec for `kind`; `n_rx` only matters for fusion heads.
pub fn build(kind: ModelKind, n_rx: usize) -> Result<NetworkSpec, ModelError> {
    match kind {
        ModelKind::Vtcnn2 => build_vtcnn2(2),
        ModelKind::Vtcnn2Cent => build_vtcnn2(12),
        head => build_fusion_head(head, n_rx),
    }
}

/// Backbone outputs needed by every regime.
#[derive(Debug, Clone, PartialEq)]
pub struct TapOutput {
    pub logits: Vec<f32>,
    pub hidden256: Vec<f32>,
}

/// One forward pass of a VTCNN2 backbone exposing logits and the hidden tap.
pub fn forward_with_tap(model: &Network, input: &[f32]) -> Result<TapOutput, ModelError> {
    let mut out = forward_with_tap_batch(model, input, 1)?;
    Ok(out.remove(0))
}

pub fn forward_with_tap_batch(model: &Network, inputs: &[f32], batch: usize) -> Result<Vec<TapOutput>, ModelError> {
    if model.spec().layers.len() <= LOGITS_LAYER || model.layer_output_len(HIDDEN256_LAYER) != HIDDEN {
        return Err(ModelError::UnsupportedModel("feature taps need a VTCNN2 backbone".into()));
    }
    let (logits, taps) = model.forward_taps(inputs, batch, &[HIDDEN256_LAYER])?;
    Ok((0..batch)
        .map(|b| TapOutput {
            logits: logits[b * NUM_CLASSES..(b + 1) * NUM_CLASSES].to_vec(),
            hidden256: taps[0][b * HIDDEN..(b + 1) * HIDDEN].to_vec(),
        })
        .collect())
}
