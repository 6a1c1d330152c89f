use std::fmt;

use crate::config::GanConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    Linear,
    GlobalAveragePool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Batch,
    Layer,
    Spectral,
    None,
}

/// Feature normalization applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureNorm {
    Batch,
    Layer,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    /// Parameter-path component, e.g. `conv1`.
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    /// Padding (before, after) on both spatial axes.
    pub padding: (usize, usize),
    pub out_channels: usize,
    pub norm: FeatureNorm,
    pub spectral: bool,
    pub activation: Activation,
    /// Per-image output shape: `[h, w, c]` or `[c]`.
    pub output_shape: Vec<usize>,
}

impl LayerSpec {
    /// Every normalization acting on this layer.
    pub fn normalizations(&self) -> Vec<Normalization> {
        let mut out = Vec::new();
        match self.norm {
            FeatureNorm::Batch => out.push(Normalization::Batch),
            FeatureNorm::Layer => out.push(Normalization::Layer),
            FeatureNorm::None => {}
        }
        if self.spectral {
            out.push(Normalization::Spectral);
        }
        if out.is_empty() {
            out.push(Normalization::None);
        }
        out
    }

    pub fn has_weights(&self) -> bool {
        self.kind != LayerKind::GlobalAveragePool
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.output_shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{} {:?}", self.name, self.kind)?;
        if matches!(self.kind, LayerKind::Conv | LayerKind::TransposedConv) {
            write!(f, " {0}x{0}/{1}", self.kernel, self.stride)?;
        }
        write!(f, " -> {}", dims.join("x"))
    }
}

/// Padding that makes a 4x4 kernel map `n` to `n / stride` (conv) or
/// `n * stride` (transposed conv).
fn same_padding(stride: usize) -> (usize, usize) {
    if stride == 1 {
        (1, 2)
    } else {
        (1, 1)
    }
}

fn check_size(config: &GanConfig) -> Result<usize> {
    match config.input_size {
        32 | 64 => Ok(config.input_size),
        s => Err(Error::Config(format!(
            "input_size must be 32 or 64, got {s}"
        ))),
    }
}

fn width(base: usize, config: &GanConfig) -> usize {
    (base / config.channel_divisor.max(1)).max(1)
}

pub fn build_generator(config: &GanConfig) -> Result<Vec<LayerSpec>> {
    let size = check_size(config)?;
    let last_stride = if size == 32 { 1 } else { 2 };
    let c0 = width(128, config);
    let mut layers = vec![LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Linear,
        kernel: 1,
        stride: 1,
        padding: (0, 0),
        out_channels: 4 * 4 * c0,
        norm: FeatureNorm::Batch,
        spectral: false,
        activation: Activation::Relu,
        output_shape: vec![4, 4, c0],
    }];
    let mut hw = 4;
    for (i, base) in [512, 256, 128].into_iter().enumerate() {
        hw *= 2;
        let c = width(base, config);
        layers.push(LayerSpec {
            name: format!("deconv{}", i + 1),
            kind: LayerKind::TransposedConv,
            kernel: 4,
            stride: 2,
            padding: same_padding(2),
            out_channels: c,
            norm: FeatureNorm::Batch,
            spectral: false,
            activation: Activation::Relu,
            output_shape: vec![hw, hw, c],
        });
    }
    hw *= last_stride;
    layers.push(LayerSpec {
        name: "deconv4".into(),
        kind: LayerKind::TransposedConv,
        kernel: 4,
        stride: last_stride,
        padding: same_padding(last_stride),
        out_channels: 3,
        norm: FeatureNorm::None,
        spectral: false,
        activation: Activation::Tanh,
        output_shape: vec![hw, hw, 3],
    });
    debug_assert_eq!(hw, size);
    Ok(layers)
}

pub fn build_discriminator(config: &GanConfig) -> Result<Vec<LayerSpec>> {
    let size = check_size(config)?;
    config.validate()?;
    let spectral = config.uses_spectral_norm();
    let norm = match config.variant {
        crate::config::Variant::Dcgan | crate::config::Variant::Dragan => FeatureNorm::Batch,
        crate::config::Variant::SnDcgan => FeatureNorm::None,
        crate::config::Variant::WganGp | crate::config::Variant::SnWganGp => FeatureNorm::Layer,
    };
    let mut layers = Vec::new();
    let mut hw = size;
    for (i, base) in [64, 128, 256, 512].into_iter().enumerate() {
        let stride = if i == 0 && size == 32 { 1 } else { 2 };
        hw /= stride;
        let c = width(base, config);
        layers.push(LayerSpec {
            name: format!("conv{}", i + 1),
            kind: LayerKind::Conv,
            kernel: 4,
            stride,
            padding: same_padding(stride),
            out_channels: c,
            norm,
            spectral,
            activation: Activation::LeakyRelu(config.leaky_slope),
            output_shape: vec![hw, hw, c],
        });
    }
    let k = layers.last().map(|l| l.out_channels).unwrap_or(1);
    layers.push(LayerSpec {
        name: "gap".into(),
        kind: LayerKind::GlobalAveragePool,
        kernel: 0,
        stride: 1,
        padding: (0, 0),
        out_channels: k,
        norm: FeatureNorm::None,
        spectral: false,
        activation: Activation::None,
        output_shape: vec![1, 1, k],
    });
    layers.push(LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Linear,
        kernel: 1,
        stride: 1,
        padding: (0, 0),
        out_channels: 1,
        norm: FeatureNorm::None,
        spectral,
        activation: Activation::None,
        output_shape: vec![1],
    });
    Ok(layers)
}
