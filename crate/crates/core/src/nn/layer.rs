use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    #[serde(rename = "avgpool2x2")]
    AvgPool2x2,
    #[serde(rename = "global_avgpool")]
    GlobalAvgPool,
    ShortcutAdd,
    Identity,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Dense,
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::AvgPool2x2,
        LayerKind::GlobalAvgPool,
        LayerKind::ShortcutAdd,
        LayerKind::Identity,
    ];

    pub fn is_parameterized(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv2d)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::AvgPool2x2 => "avgpool2x2",
            LayerKind::GlobalAvgPool => "global_avgpool",
            LayerKind::ShortcutAdd => "shortcut_add",
            LayerKind::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// One layer of a feed-forward chain.
///
/// Activations are addressed by *node*: node 0 is the network input and
/// node `i + 1` is the output of layer `i`. A `shortcut_add` layer sums the
/// previous node with node `skip_from`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    fn parameter_free(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            in_channels: 0,
            out_channels: 0,
            kernel: 0,
            stride: 1,
            skip_from: None,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_channels: in_features,
            out_channels: out_features,
            kernel: 0,
            stride: 1,
            skip_from: None,
        }
    }

    /// Square convolution with "same"-style padding of `kernel / 2`.
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel,
            stride,
            skip_from: None,
        }
    }

    pub fn relu() -> Self {
        Self::parameter_free(LayerKind::Relu)
    }

    pub fn avgpool2x2() -> Self {
        Self::parameter_free(LayerKind::AvgPool2x2)
    }

    pub fn global_avgpool() -> Self {
        Self::parameter_free(LayerKind::GlobalAvgPool)
    }

    pub fn identity() -> Self {
        Self::parameter_free(LayerKind::Identity)
    }

    pub fn shortcut_add(skip_from: usize) -> Self {
        LayerSpec {
            skip_from: Some(skip_from),
            ..Self::parameter_free(LayerKind::ShortcutAdd)
        }
    }

    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_channels * self.out_channels,
            LayerKind::Conv2d => self.out_channels * self.in_channels * self.kernel * self.kernel,
            _ => 0,
        }
    }

    pub fn bias_len(&self) -> usize {
        if self.kind.is_parameterized() {
            self.out_channels
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    pub fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense => (self.in_channels, self.out_channels),
            LayerKind::Conv2d => {
                let k2 = self.kernel * self.kernel;
                (self.in_channels * k2, self.out_channels * k2)
            }
            _ => (0, 0),
        }
    }
}

/// Trainable parameters of one layer; both empty for parameter-free kinds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        LayerParams {
            weight: vec![0.0; spec.weight_len()],
            bias: vec![0.0; spec.bias_len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights followed by biases.
    pub fn flatten(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.weight);
        v.extend_from_slice(&self.bias);
        v
    }
}
