//! Generator and GAP-headed discriminator networks.

mod net;
mod params;
mod spec;
mod spectral;

use coloc_autograd::{Float, Tensor, Var};
use rand::Rng;

pub use net::{
    apply_updates, BindOptions, Bound, Forward, Net, NormMode, BN_MOMENTUM, INIT_STD, NORM_EPS,
};
pub use params::ParamStore;
pub use spec::{
    build_discriminator, build_generator, Activation, FeatureNorm, LayerKind, LayerSpec,
    Normalization,
};
pub use spectral::{spectral_normalize, SpectralOutcome};

use crate::config::GanConfig;
use crate::error::{Error, Result};

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";

/// Discriminator internals needed for class activation maps.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorReadout<T: Float> {
    /// One raw score per image, `[n]`.
    pub logits: Tensor<T>,
    /// Activations entering global average pooling, `[n, h, w, k]`.
    pub feature_maps: Tensor<T>,
    /// Effective pooling-to-output weights `w_k`, `[k]`.
    pub gap_weights: Tensor<T>,
    pub gap_bias: T,
}

impl<T: Float> DiscriminatorReadout<T> {
    /// Reads the pooled features and output layer off a forward pass of a
    /// net ending in global average pooling followed by a linear layer.
    pub fn from_forward(bound: &Bound<'_, T>, fwd: &Forward<T>) -> Result<Self> {
        let layers = &bound.net().layers;
        let n = layers.len();
        if n < 2
            || layers[n - 2].kind != LayerKind::GlobalAveragePool
            || layers[n - 1].kind != LayerKind::Linear
        {
            return Err(Error::Capability(
                "readout needs a network ending in pooling and a linear layer".into(),
            ));
        }
        let fc = &layers[n - 1];
        if fc.out_channels != 1 {
            return Err(Error::Capability(
                "readout needs a single output unit".into(),
            ));
        }
        let features = fwd
            .pooled_from
            .as_ref()
            .expect("pooling layer records its input")
            .value()
            .clone();
        let k = *features.shape().last().unwrap();
        let w = bound
            .effective_weight(&fc.name)
            .expect("linear weight")
            .value()
            .reshape(vec![k]);
        let b = bound.bias(&fc.name).expect("linear bias").value().data()[0];
        let batch = fwd.output.shape()[0];
        Ok(Self {
            logits: fwd.output.value().reshape(vec![batch]),
            feature_maps: features,
            gap_weights: w,
            gap_bias: b,
        })
    }

    pub fn len(&self) -> usize {
        self.logits.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.numel() == 0
    }
}

/// A generator/discriminator pair with its parameters and buffers.
#[derive(Clone, Debug)]
pub struct Gan<T: Float> {
    pub config: GanConfig,
    pub generator: Net,
    pub discriminator: Net,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

impl<T: Float> Gan<T> {
    pub fn architecture(config: &GanConfig) -> Result<(Net, Net)> {
        config.validate()?;
        let s = config.input_size;
        let generator = Net::new(GENERATOR, vec![config.latent_dim], build_generator(config)?)?;
        let discriminator = Net::new(DISCRIMINATOR, vec![s, s, 3], build_discriminator(config)?)?;
        Ok((generator, discriminator))
    }

    pub fn new<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Result<Self> {
        let (generator, discriminator) = Self::architecture(config)?;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        generator.init(rng, &mut params, &mut buffers);
        discriminator.init(rng, &mut params, &mut buffers);
        Ok(Self {
            config: config.clone(),
            generator,
            discriminator,
            params,
            buffers,
        })
    }

    /// Reassembles a model from stored tensors, checking every shape.
    pub fn from_parts(
        config: &GanConfig,
        params: ParamStore<T>,
        buffers: ParamStore<T>,
    ) -> Result<Self> {
        let (generator, discriminator) = Self::architecture(config)?;
        let mut expect_p = ParamStore::<T>::new();
        let mut expect_b = ParamStore::<T>::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        generator.init(&mut rng, &mut expect_p, &mut expect_b);
        discriminator.init(&mut rng, &mut expect_p, &mut expect_b);
        for (want, have, what) in [
            (&expect_p, &params, "parameter"),
            (&expect_b, &buffers, "buffer"),
        ] {
            for (name, t) in want.iter() {
                match have.get(name) {
                    Some(h) if h.shape() == t.shape() => {}
                    Some(h) => {
                        return Err(Error::Checkpoint(format!(
                            "{what} `{name}` has shape {:?}, expected {:?}",
                            h.shape(),
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Checkpoint(format!("missing {what} `{name}`"))),
                }
            }
            if have.len() != want.len() {
                return Err(Error::Checkpoint(format!(
                    "unexpected extra {what} entries"
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            generator,
            discriminator,
            params,
            buffers,
        })
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Inference-mode discriminator pass (running statistics, frozen
    /// spectral-normalization vectors).
    pub fn discriminator_forward(&self, images: &Tensor<T>) -> Result<DiscriminatorReadout<T>> {
        let bound = self
            .discriminator
            .bind(&self.params, &self.buffers, BindOptions::INFERENCE)?;
        let fwd = bound.forward(&Var::constant(images.clone()))?;
        DiscriminatorReadout::from_forward(&bound, &fwd)
    }

    /// Inference-mode generator pass on latent codes `[n, latent_dim]`.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let bound = self
            .generator
            .bind(&self.params, &self.buffers, BindOptions::INFERENCE)?;
        Ok(bound
            .forward(&Var::constant(z.clone()))?
            .output
            .value()
            .clone())
    }

    /// Latent codes drawn uniformly from `[-1, 1)`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor<T> {
        sample_latent(n, self.config.latent_dim, rng)
    }
}

pub fn sample_latent<T: Float, R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(vec![n, dim], |_| T::of(rng.random_range(-1.0..1.0)))
}
