//! A feed-forward stack of [`LayerSpec`]s evaluated on the autograd graph.

use coloc_autograd::{ConvGeom, Float, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::params::ParamStore;
use super::spec::{Activation, FeatureNorm, LayerKind, LayerSpec};
use super::spectral;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;
/// Running statistics keep this fraction of their previous value.
pub const BN_MOMENTUM: f64 = 0.9;

/// How feature normalization obtains its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics (training).
    Batch,
    /// Frozen running statistics (inference).
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BindOptions {
    /// Bind parameters as differentiable leaves.
    pub trainable: bool,
    /// Power iterations to run on spectrally normalized weights. Zero keeps
    /// the stored vectors frozen.
    pub sn_iterations: usize,
    pub mode: NormMode,
}

impl BindOptions {
    pub const INFERENCE: BindOptions = BindOptions {
        trainable: false,
        sn_iterations: 0,
        mode: NormMode::Running,
    };
}

/// Layer stack with a parameter-path prefix (`generator`, `discriminator`).
#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub prefix: String,
    /// Per-image input shape, `[h, w, c]` or `[features]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    geoms: Vec<Option<ConvGeom>>,
    in_features: Vec<usize>,
}

fn numel(s: &[usize]) -> usize {
    s.iter().product()
}

impl Net {
    /// Checks that the stack is well formed and every declared output shape
    /// is what the layer actually produces.
    pub fn new(
        prefix: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let prefix = prefix.into();
        let mut shape = input_shape.clone();
        let mut geoms = Vec::with_capacity(layers.len());
        let mut in_features = Vec::with_capacity(layers.len());
        for l in &layers {
            let bad = |why: String| Error::Config(format!("{prefix}.{}: {why}", l.name));
            in_features.push(numel(&shape));
            let geom = match l.kind {
                LayerKind::Conv => {
                    let [h, w, c] = shape[..] else {
                        return Err(bad(format!("conv needs an [h, w, c] input, got {shape:?}")));
                    };
                    let g = ConvGeom::new((h, w), c, l.out_channels, l.kernel, l.stride, l.padding)
                        .ok_or_else(|| bad("kernel larger than padded input".into()))?;
                    shape = vec![g.out_h, g.out_w, g.cout];
                    Some(g)
                }
                LayerKind::TransposedConv => {
                    let [h, w, c] = shape[..] else {
                        return Err(bad(format!(
                            "transposed conv needs an [h, w, c] input, got {shape:?}"
                        )));
                    };
                    let [oh, ow, oc] = l.output_shape[..] else {
                        return Err(bad("transposed conv output must be [h, w, c]".into()));
                    };
                    let g = ConvGeom::new((oh, ow), oc, c, l.kernel, l.stride, l.padding)
                        .ok_or_else(|| bad("kernel larger than padded output".into()))?;
                    if (g.out_h, g.out_w) != (h, w) || oc != l.out_channels {
                        return Err(bad(format!("cannot map {shape:?} to {:?}", l.output_shape)));
                    }
                    shape = vec![oh, ow, oc];
                    Some(g)
                }
                LayerKind::Linear => {
                    if numel(&l.output_shape) != l.out_channels {
                        return Err(bad("linear output shape disagrees with out_channels".into()));
                    }
                    shape = l.output_shape.clone();
                    None
                }
                LayerKind::GlobalAveragePool => {
                    let [_, _, c] = shape[..] else {
                        return Err(bad(format!(
                            "pooling needs an [h, w, c] input, got {shape:?}"
                        )));
                    };
                    shape = vec![1, 1, c];
                    None
                }
            };
            if shape != l.output_shape {
                return Err(bad(format!(
                    "produces {shape:?}, declared {:?}",
                    l.output_shape
                )));
            }
            geoms.push(geom);
        }
        Ok(Self {
            prefix,
            input_shape,
            layers,
            geoms,
            in_features,
        })
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    fn path(&self, layer: &LayerSpec, what: &str) -> String {
        format!("{}.{}.{}", self.prefix, layer.name, what)
    }

    fn norm_channels(layer: &LayerSpec) -> usize {
        *layer.output_shape.last().unwrap_or(&1)
    }

    fn weight_shape(&self, i: usize) -> Vec<usize> {
        let l = &self.layers[i];
        match (l.kind, self.geoms[i]) {
            (LayerKind::Linear, _) => vec![self.in_features[i], l.out_channels],
            (_, Some(g)) => g.weight_shape().to_vec(),
            _ => Vec::new(),
        }
    }

    /// Gaussian weights, zero biases, unit scales, fresh unit vectors for
    /// spectral normalization.
    pub fn init<T: Float, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        params: &mut ParamStore<T>,
        buffers: &mut ParamStore<T>,
    ) {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (i, l) in self.layers.iter().enumerate() {
            if !l.has_weights() {
                continue;
            }
            let ws = self.weight_shape(i);
            let w = Tensor::from_fn(ws.clone(), |_| T::of(normal.sample(rng)));
            params.insert(self.path(l, "weight"), w);
            params.insert(self.path(l, "bias"), Tensor::zeros(vec![l.out_channels]));
            if l.spectral {
                let out = *ws.last().unwrap();
                let u: Vec<f64> = (0..out).map(|_| StandardNormal.sample(rng)).collect();
                let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                buffers.insert(
                    self.path(l, "sn_u"),
                    Tensor::new(vec![out], u.iter().map(|a| T::of(a / norm)).collect()),
                );
            }
            let c = Self::norm_channels(l);
            match l.norm {
                FeatureNorm::Batch => {
                    params.insert(self.path(l, "gamma"), Tensor::ones(vec![c]));
                    params.insert(self.path(l, "beta"), Tensor::zeros(vec![c]));
                    buffers.insert(self.path(l, "running_mean"), Tensor::zeros(vec![c]));
                    buffers.insert(self.path(l, "running_var"), Tensor::ones(vec![c]));
                }
                FeatureNorm::Layer => {
                    params.insert(self.path(l, "gamma"), Tensor::ones(vec![c]));
                    params.insert(self.path(l, "beta"), Tensor::zeros(vec![c]));
                }
                FeatureNorm::None => {}
            }
        }
    }

    /// Parameter paths owned by this network, in layer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.layers {
            if l.has_weights() {
                out.push(self.path(l, "weight"));
                out.push(self.path(l, "bias"));
            }
            if l.norm != FeatureNorm::None {
                out.push(self.path(l, "gamma"));
                out.push(self.path(l, "beta"));
            }
        }
        out
    }

    /// Wraps stored parameters as graph variables, applying spectral
    /// normalization once for the whole binding.
    pub fn bind<'a, T: Float>(
        &'a self,
        params: &ParamStore<T>,
        buffers: &'a ParamStore<T>,
        opts: BindOptions,
    ) -> Result<Bound<'a, T>> {
        let mut leaves = Vec::new();
        let mut vars = Vec::with_capacity(self.layers.len());
        let mut sn_updates = Vec::new();
        let mut fetch = |name: String| -> Result<Var<T>> {
            let t = params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?
                .clone();
            let v = if opts.trainable {
                Var::leaf(t)
            } else {
                Var::constant(t)
            };
            if opts.trainable {
                leaves.push((name, v.clone()));
            }
            Ok(v)
        };
        for l in &self.layers {
            let mut lv = LayerVars::default();
            if l.has_weights() {
                let w = fetch(self.path(l, "weight"))?;
                lv.bias = Some(fetch(self.path(l, "bias"))?);
                lv.weight = Some(if l.spectral {
                    let key = self.path(l, "sn_u");
                    let u = buffers
                        .get(&key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing buffer `{key}`")))?;
                    match spectral::normalize_var(&w, u, opts.sn_iterations) {
                        Some((wn, u)) => {
                            if opts.sn_iterations > 0 {
                                sn_updates.push((key, u));
                            }
                            wn
                        }
                        None => {
                            log::warn!(
                                "{}: zero weight, spectral normalization skipped",
                                self.path(l, "weight")
                            );
                            w
                        }
                    }
                } else {
                    w
                });
            }
            if l.norm != FeatureNorm::None {
                lv.gamma = Some(fetch(self.path(l, "gamma"))?);
                lv.beta = Some(fetch(self.path(l, "beta"))?);
            }
            vars.push(lv);
        }
        Ok(Bound {
            net: self,
            buffers,
            vars,
            leaves,
            sn_updates,
            mode: opts.mode,
        })
    }
}

#[derive(Default)]
struct LayerVars<T: Float> {
    weight: Option<Var<T>>,
    bias: Option<Var<T>>,
    gamma: Option<Var<T>>,
    beta: Option<Var<T>>,
}

/// Parameters of one [`Net`] bound into a graph.
pub struct Bound<'a, T: Float> {
    net: &'a Net,
    buffers: &'a ParamStore<T>,
    vars: Vec<LayerVars<T>>,
    leaves: Vec<(String, Var<T>)>,
    sn_updates: Vec<(String, Tensor<T>)>,
    mode: NormMode,
}

/// Output of [`Bound::forward`].
pub struct Forward<T: Float> {
    pub output: Var<T>,
    /// Input of the global-average-pooling layer, if the net has one.
    pub pooled_from: Option<Var<T>>,
    /// Per-image output shape of every layer.
    pub shapes: Vec<Vec<usize>>,
    /// New running statistics (batch mode only), keyed by buffer path.
    pub stat_updates: Vec<(String, Tensor<T>)>,
}

impl<'a, T: Float> Bound<'a, T> {
    pub fn net(&self) -> &Net {
        self.net
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// Differentiable parameter leaves, empty unless bound as trainable.
    pub fn leaves(&self) -> &[(String, Var<T>)] {
        &self.leaves
    }

    /// Advanced spectral-normalization vectors produced by binding.
    pub fn sn_updates(&self) -> &[(String, Tensor<T>)] {
        &self.sn_updates
    }

    /// Effective (post spectral normalization) weight of layer `name`.
    pub fn effective_weight(&self, name: &str) -> Option<&Var<T>> {
        let i = self.net.layers.iter().position(|l| l.name == name)?;
        self.vars[i].weight.as_ref()
    }

    pub fn bias(&self, name: &str) -> Option<&Var<T>> {
        let i = self.net.layers.iter().position(|l| l.name == name)?;
        self.vars[i].bias.as_ref()
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Forward<T>> {
        let net = self.net;
        let xs = x.shape();
        if xs.len() != net.input_shape.len() + 1 || xs[1..] != net.input_shape[..] {
            return Err(Error::Input(format!(
                "{} expects [n, {}] input, got {xs:?}",
                net.prefix,
                net.input_shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let n = xs[0];
        let mut h = x.clone();
        let mut shapes = Vec::with_capacity(net.layers.len());
        let mut stat_updates = Vec::new();
        let mut pooled_from = None;
        for (i, l) in net.layers.iter().enumerate() {
            let lv = &self.vars[i];
            h = match l.kind {
                LayerKind::Linear => {
                    let flat = h.reshape(vec![n, net.in_features[i]]);
                    let y = flat
                        .matmul(lv.weight.as_ref().unwrap())
                        .add(lv.bias.as_ref().unwrap());
                    let mut shape = vec![n];
                    shape.extend_from_slice(&l.output_shape);
                    y.reshape(shape)
                }
                LayerKind::Conv => {
                    let g = net.geoms[i].unwrap();
                    h.conv2d(lv.weight.as_ref().unwrap(), g)
                        .add(lv.bias.as_ref().unwrap())
                }
                LayerKind::TransposedConv => {
                    let g = net.geoms[i].unwrap();
                    h.conv2d_transpose(lv.weight.as_ref().unwrap(), g)
                        .add(lv.bias.as_ref().unwrap())
                }
                LayerKind::GlobalAveragePool => {
                    pooled_from = Some(h.clone());
                    h.mean_axes(&[1, 2])
                }
            };
            h = match l.norm {
                FeatureNorm::None => h,
                FeatureNorm::Layer => {
                    let axes: Vec<usize> = (1..h.shape().len()).collect();
                    standardize(&h, &axes)
                        .mul(lv.gamma.as_ref().unwrap())
                        .add(lv.beta.as_ref().unwrap())
                }
                FeatureNorm::Batch => {
                    let axes: Vec<usize> = (0..h.shape().len() - 1).collect();
                    let normed = match self.mode {
                        NormMode::Batch => {
                            let (normed, mean, var) = batch_standardize(&h, &axes);
                            let m = T::of(BN_MOMENTUM);
                            let blend =
                                |key: String, batch: Tensor<T>| -> Result<(String, Tensor<T>)> {
                                    let old = self.buffer(&key)?;
                                    let new =
                                        old.zip_with(&batch, |o, b| m * o + (T::one() - m) * b);
                                    Ok((key, new))
                                };
                            stat_updates.push(blend(net.path(l, "running_mean"), mean)?);
                            stat_updates.push(blend(net.path(l, "running_var"), var)?);
                            normed
                        }
                        NormMode::Running => {
                            let mean = self.buffer(&net.path(l, "running_mean"))?;
                            let var = self.buffer(&net.path(l, "running_var"))?;
                            let eps = T::of(NORM_EPS);
                            let inv = var.map(|v| T::one() / (v + eps).sqrt());
                            h.sub(&Var::constant(mean)).mul(&Var::constant(inv))
                        }
                    };
                    normed
                        .mul(lv.gamma.as_ref().unwrap())
                        .add(lv.beta.as_ref().unwrap())
                }
            };
            h = match l.activation {
                Activation::None => h,
                Activation::Relu => h.relu(),
                Activation::LeakyRelu(s) => h.leaky_relu(T::of(s)),
                Activation::Tanh => h.tanh(),
            };
            shapes.push(h.shape()[1..].to_vec());
        }
        Ok(Forward {
            output: h,
            pooled_from,
            shapes,
            stat_updates,
        })
    }

    fn buffer(&self, key: &str) -> Result<Tensor<T>> {
        self.buffers
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer `{key}`")))
    }
}

/// `(x - mean) / sqrt(var + eps)` over `axes`, differentiable.
fn standardize<T: Float>(x: &Var<T>, axes: &[usize]) -> Var<T> {
    let mean = x.mean_axes(axes);
    let centered = x.sub(&mean);
    let var = centered.square().mean_axes(axes);
    centered.mul(&var.add_scalar(T::of(NORM_EPS)).powf(T::of(-0.5)))
}

/// Like [`standardize`] but also returns the per-channel batch mean and
/// (biased) variance as flat tensors.
fn batch_standardize<T: Float>(x: &Var<T>, axes: &[usize]) -> (Var<T>, Tensor<T>, Tensor<T>) {
    let mean = x.mean_axes(axes);
    let centered = x.sub(&mean);
    let var = centered.square().mean_axes(axes);
    let c = *x.shape().last().unwrap();
    let normed = centered.mul(&var.add_scalar(T::of(NORM_EPS)).powf(T::of(-0.5)));
    (
        normed,
        mean.value().reshape(vec![c]),
        var.value().reshape(vec![c]),
    )
}

/// Applies `(path, tensor)` updates to a buffer store.
pub fn apply_updates<T: Float>(buffers: &mut ParamStore<T>, updates: &[(String, Tensor<T>)]) {
    for (k, v) in updates {
        buffers.insert(k.clone(), v.clone());
    }
}
