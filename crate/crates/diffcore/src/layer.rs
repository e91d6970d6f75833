//! Layer inventory and build-time shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};

/// Per-example feature layout flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureShape {
    /// `channels x height x width` feature maps.
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Map { c, h, w } => c * h * w,
            FeatureShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Batch tensor shape for `n` examples.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            FeatureShape::Map { c, h, w } => vec![n, c, h, w],
            FeatureShape::Flat(f) => vec![n, f],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Square,
    /// `ln(max(u, 1e-7))`
    Log,
    /// Normalizes over the features of a flat input.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub out_channels: usize,
    /// `[height, width]`
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    /// Zero padding `[top, bottom, left, right]`.
    pub padding: [usize; 4],
    pub groups: usize,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: [usize; 2],
    pub stride: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftSpec {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftSpec {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames(&self, samples: usize) -> usize {
        (samples - self.window_len) / self.hop + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d(Conv2dSpec),
    Dense { out_features: usize, bias: bool },
    Activation { function: Activation },
    Pool(PoolSpec),
    BatchNorm { momentum: f64, epsilon: f64 },
    Dropout { rate: f64 },
    Flatten,
    /// Fixed (non-trainable) linear map over the height axis of each map:
    /// `y[c, o, t] = sum_i W[o, i] x[c, i, t]`.
    ChannelMix { out_rows: usize },
    /// Fixed windowed DFT followed by a smoothed magnitude.
    /// Takes a single `rows x samples` map to `rows x bins x frames`.
    Stft(StftSpec),
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: [usize; 2]) -> Self {
        LayerSpec::Conv2d(Conv2dSpec {
            out_channels,
            kernel,
            stride: [1, 1],
            padding: [0; 4],
            groups: 1,
            bias: true,
        })
    }

    /// Convolution padded so that stride-1 output extents equal input extents.
    pub fn conv_same(out_channels: usize, kernel: [usize; 2]) -> Self {
        let (kh, kw) = (kernel[0], kernel[1]);
        let top = (kh - 1) / 2;
        let left = (kw - 1) / 2;
        LayerSpec::Conv2d(Conv2dSpec {
            out_channels,
            kernel,
            stride: [1, 1],
            padding: [top, kh - 1 - top, left, kw - 1 - left],
            groups: 1,
            bias: true,
        })
    }

    /// Sets the group count on a convolution; other layers pass through.
    pub fn grouped(self, groups: usize) -> Self {
        match self {
            LayerSpec::Conv2d(mut c) => {
                c.groups = groups;
                LayerSpec::Conv2d(c)
            }
            other => other,
        }
    }

    pub fn without_bias(self) -> Self {
        match self {
            LayerSpec::Conv2d(mut c) => {
                c.bias = false;
                LayerSpec::Conv2d(c)
            }
            LayerSpec::Dense { out_features, .. } => LayerSpec::Dense { out_features, bias: false },
            other => other,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense { out_features, bias: true }
    }

    pub fn act(function: Activation) -> Self {
        LayerSpec::Activation { function }
    }

    pub fn pool(kind: PoolKind, window: [usize; 2], stride: [usize; 2]) -> Self {
        LayerSpec::Pool(PoolSpec { kind, window, stride })
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm { momentum: 0.9, epsilon: 1e-5 }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { function } => match function {
                Activation::Elu => "elu",
                Activation::Relu => "relu",
                Activation::Square => "square",
                Activation::Log => "log",
                Activation::Softmax => "softmax",
            },
            LayerSpec::Pool(p) => match p.kind {
                PoolKind::Max => "max_pool",
                PoolKind::Avg => "avg_pool",
            },
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ChannelMix { .. } => "channel_mix",
            LayerSpec::Stft(_) => "stft",
        }
    }
}

/// Result of validating one layer against its input.
#[derive(Clone, Debug)]
pub(crate) struct Resolved {
    pub out: FeatureShape,
    pub params: Vec<Vec<usize>>,
    pub buffers: Vec<Vec<usize>>,
    /// Whether every output value is guaranteed nonnegative.
    pub positive: bool,
}

pub(crate) fn resolve(
    index: usize,
    spec: &LayerSpec,
    input: FeatureShape,
    positive_in: bool,
) -> Result<Resolved> {
    let kind = spec.kind();
    let bad = |reason: String| DiffError::InvalidLayer { index, kind, reason };
    let map = |s: FeatureShape| match s {
        FeatureShape::Map { c, h, w } => Ok((c, h, w)),
        FeatureShape::Flat(_) => Err(bad("requires a feature-map input".into())),
    };
    let plain = |out: FeatureShape, positive: bool| Resolved {
        out,
        params: vec![],
        buffers: vec![],
        positive,
    };

    match spec {
        LayerSpec::Conv2d(c) => {
            let (cin, h, w) = map(input)?;
            if c.groups == 0 || cin % c.groups != 0 || c.out_channels % c.groups != 0 {
                return Err(bad(format!(
                    "groups {} must divide input channels {cin} and output channels {}",
                    c.groups, c.out_channels
                )));
            }
            if c.out_channels == 0 || c.kernel.contains(&0) || c.stride.contains(&0) {
                return Err(bad("zero-sized channels, kernel or stride".into()));
            }
            let ph = h + c.padding[0] + c.padding[1];
            let pw = w + c.padding[2] + c.padding[3];
            if c.kernel[0] > ph || c.kernel[1] > pw {
                return Err(bad(format!(
                    "kernel {:?} exceeds padded input {ph}x{pw}",
                    c.kernel
                )));
            }
            let oh = (ph - c.kernel[0]) / c.stride[0] + 1;
            let ow = (pw - c.kernel[1]) / c.stride[1] + 1;
            let mut params = vec![vec![
                c.out_channels,
                cin / c.groups,
                c.kernel[0],
                c.kernel[1],
            ]];
            if c.bias {
                params.push(vec![c.out_channels]);
            }
            Ok(Resolved {
                out: FeatureShape::Map { c: c.out_channels, h: oh, w: ow },
                params,
                buffers: vec![],
                positive: false,
            })
        }
        LayerSpec::Dense { out_features, bias } => {
            let FeatureShape::Flat(fin) = input else {
                return Err(bad("requires a flat input (insert Flatten)".into()));
            };
            if *out_features == 0 {
                return Err(bad("zero output features".into()));
            }
            let mut params = vec![vec![*out_features, fin]];
            if *bias {
                params.push(vec![*out_features]);
            }
            Ok(Resolved {
                out: FeatureShape::Flat(*out_features),
                params,
                buffers: vec![],
                positive: false,
            })
        }
        LayerSpec::Activation { function } => match function {
            Activation::Square => Ok(plain(input, true)),
            Activation::Log => {
                if !positive_in {
                    return Err(bad(
                        "log must follow a nonnegative-output layer (square or a pool of squares)"
                            .into(),
                    ));
                }
                Ok(plain(input, false))
            }
            Activation::Softmax => match input {
                FeatureShape::Flat(_) => Ok(plain(input, true)),
                _ => Err(bad("softmax requires a flat input".into())),
            },
            Activation::Relu => Ok(plain(input, true)),
            Activation::Elu => Ok(plain(input, false)),
        },
        LayerSpec::Pool(p) => {
            let (c, h, w) = map(input)?;
            if p.window.contains(&0) || p.stride.contains(&0) {
                return Err(bad("zero-sized window or stride".into()));
            }
            if p.window[0] > h || p.window[1] > w {
                return Err(bad(format!(
                    "window {:?} exceeds input extent {h}x{w}",
                    p.window
                )));
            }
            let oh = (h - p.window[0]) / p.stride[0] + 1;
            let ow = (w - p.window[1]) / p.stride[1] + 1;
            Ok(plain(FeatureShape::Map { c, h: oh, w: ow }, positive_in))
        }
        LayerSpec::BatchNorm { momentum, epsilon } => {
            if !(0.0..1.0).contains(momentum) || *epsilon <= 0.0 {
                return Err(bad("momentum must lie in [0, 1) and epsilon be positive".into()));
            }
            let ch = match input {
                FeatureShape::Map { c, .. } => c,
                FeatureShape::Flat(f) => f,
            };
            Ok(Resolved {
                out: input,
                params: vec![vec![ch], vec![ch]],
                buffers: vec![vec![ch], vec![ch]],
                positive: false,
            })
        }
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(bad(format!("rate {rate} outside [0, 1)")));
            }
            Ok(plain(input, positive_in))
        }
        LayerSpec::Flatten => Ok(plain(FeatureShape::Flat(input.len()), positive_in)),
        LayerSpec::ChannelMix { out_rows } => {
            let (c, h, w) = map(input)?;
            if *out_rows == 0 {
                return Err(bad("zero output rows".into()));
            }
            Ok(Resolved {
                out: FeatureShape::Map { c, h: *out_rows, w },
                params: vec![],
                buffers: vec![vec![*out_rows, h]],
                positive: false,
            })
        }
        LayerSpec::Stft(s) => {
            let (c, h, w) = map(input)?;
            if c != 1 {
                return Err(bad(format!("expects a single input map, got {c}")));
            }
            if s.window_len < 2 || s.window_len > w || s.hop == 0 {
                return Err(bad(format!(
                    "window {} / hop {} invalid for {w} samples",
                    s.window_len, s.hop
                )));
            }
            Ok(plain(
                FeatureShape::Map { c: h, h: s.bins(), w: s.frames(w) },
                true,
            ))
        }
    }
}
