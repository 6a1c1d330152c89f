//! Adversarial objectives and gradient penalties.
//!
//! The probability-space functions are the mathematical contract; training
//! uses the logit forms, which stay finite for any score.

use std::collections::BTreeMap;

use coloc_autograd::{grad, Float, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{GanConfig, Variant};
use crate::error::{Error, Result};
use crate::models::Bound;

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    match p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        Some(v) => Err(Error::Domain(format!(
            "{name} contains {v}, outside (0, 1); compute losses from logits instead"
        ))),
        None => Ok(()),
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// `-mean(log D(x)) - mean(log(1 - D(G(z))))`.
pub fn d_loss_ns(real_probs: &[f64], fake_probs: &[f64]) -> Result<f64> {
    check_probs("real_probs", real_probs)?;
    check_probs("fake_probs", fake_probs)?;
    Ok(-mean(real_probs.iter().map(|p| p.ln()), real_probs.len())
        - mean(fake_probs.iter().map(|p| (-p).ln_1p()), fake_probs.len()))
}

/// `mean(log(1 - D(G(z))))`, the saturating generator objective.
pub fn g_loss_minimax(fake_probs: &[f64]) -> Result<f64> {
    check_probs("fake_probs", fake_probs)?;
    Ok(mean(
        fake_probs.iter().map(|p| (-p).ln_1p()),
        fake_probs.len(),
    ))
}

/// `-mean(log D(G(z)))`.
pub fn g_loss_ns(fake_probs: &[f64]) -> Result<f64> {
    check_probs("fake_probs", fake_probs)?;
    Ok(-mean(fake_probs.iter().map(|p| p.ln()), fake_probs.len()))
}

/// Critic and generator losses on raw scores, both to be minimized:
/// `(mean(fake) - mean(real), -mean(fake))`.
pub fn wgan_losses(real_scores: &[f64], fake_scores: &[f64]) -> (f64, f64) {
    let mf = mean(fake_scores.iter().copied(), fake_scores.len());
    let mr = mean(real_scores.iter().copied(), real_scores.len());
    (mf - mr, -mf)
}

/// Logit form of [`d_loss_ns`]: `mean(softplus(-real)) + mean(softplus(fake))`.
pub fn d_loss_ns_logits<T: Float>(real: &Var<T>, fake: &Var<T>) -> Var<T> {
    real.neg()
        .softplus()
        .mean_all()
        .add(&fake.softplus().mean_all())
}

/// Logit form of [`g_loss_ns`]: `mean(softplus(-fake))`.
pub fn g_loss_ns_logits<T: Float>(fake: &Var<T>) -> Var<T> {
    fake.neg().softplus().mean_all()
}

/// Logit form of [`g_loss_minimax`]: `-mean(softplus(fake))`.
pub fn g_loss_minimax_logits<T: Float>(fake: &Var<T>) -> Var<T> {
    fake.softplus().mean_all().neg()
}

pub fn wgan_d_loss<T: Float>(real: &Var<T>, fake: &Var<T>) -> Var<T> {
    fake.mean_all().sub(&real.mean_all())
}

pub fn wgan_g_loss<T: Float>(fake: &Var<T>) -> Var<T> {
    fake.mean_all().neg()
}

/// Anything that scores a batch `[n, ...]` with one value per image.
pub trait Critic<T: Float> {
    fn scores(&self, x: &Var<T>) -> Result<Var<T>>;

    /// Whether input gradients can be taken through [`Critic::scores`].
    fn differentiable(&self) -> bool {
        true
    }
}

impl<T: Float> Critic<T> for Bound<'_, T> {
    fn scores(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = self.forward(x)?.output;
        let n = out.shape()[0];
        Ok(out.reshape(vec![n]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Anchors are generated samples.
    Interpolate,
    /// Anchors are noise-perturbed real samples.
    Perturb,
}

pub struct PenaltyTerm<T: Float> {
    /// `mean((‖∇D(x̄)‖₂ - 1)²)`, differentiable with respect to the critic.
    pub penalty: Var<T>,
    pub grad_norm_mean: f64,
}

/// Gradient-norm penalty at `x̄ = α·real + (1-α)·anchor`, one `α ~ U[0,1)`
/// per image.
pub fn gradient_penalty<T: Float, C: Critic<T> + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    real: &Tensor<T>,
    anchor: &Tensor<T>,
    mode: PenaltyMode,
    rng: &mut R,
) -> Result<PenaltyTerm<T>> {
    if !critic.differentiable() {
        return Err(Error::Capability(format!(
            "{mode:?} gradient penalty needs a differentiable critic"
        )));
    }
    if real.shape() != anchor.shape() || real.rank() == 0 {
        return Err(Error::Input(format!(
            "penalty batches differ: {:?} vs {:?}",
            real.shape(),
            anchor.shape()
        )));
    }
    let n = real.shape()[0];
    let per = real.numel() / n.max(1);
    let alphas: Vec<T> = (0..n).map(|_| T::of(rng.random::<f64>())).collect();
    let mixed = Tensor::from_fn(real.shape().to_vec(), |i| {
        let a = alphas[i / per];
        a * real.data()[i] + (T::one() - a) * anchor.data()[i]
    });
    let x = Var::leaf(mixed);
    let scores = critic.scores(&x)?;
    let gx = match grad(&scores.sum_all(), &[&x], true).remove(0) {
        Some(g) => g,
        None => Var::constant(Tensor::zeros(x.shape().to_vec())),
    };
    let axes: Vec<usize> = (1..x.shape().len()).collect();
    let norms = gx.square().sum_axes(&axes).sqrt();
    let grad_norm_mean = norms.value().data().iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let penalty = norms.add_scalar(-T::one()).square().mean_all();
    Ok(PenaltyTerm {
        penalty,
        grad_norm_mean,
    })
}

/// DRAGAN anchors: `real + N(0, (scale·std(real))²)` independently per pixel.
pub fn perturb_anchor<T: Float, R: Rng + ?Sized>(
    real: &Tensor<T>,
    scale: f64,
    rng: &mut R,
) -> Tensor<T> {
    let n = real.numel().max(1) as f64;
    // Shifted by the first value so a constant batch has exactly zero spread.
    let x0 = real.data().first().map_or(0.0, |v| v.as_f64());
    let m = real.data().iter().map(|v| v.as_f64() - x0).sum::<f64>() / n;
    let var = (real
        .data()
        .iter()
        .map(|v| (v.as_f64() - x0 - m).powi(2))
        .sum::<f64>()
        / n)
        .max(0.0);
    let sd = scale * var.sqrt();
    let data = real
        .data()
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            *v + T::of(sd * e)
        })
        .collect();
    Tensor::new(real.shape().to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorObjective {
    NonSaturating,
    Wasserstein,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorObjective {
    NonSaturating,
    Minimax,
    Wasserstein,
}

/// Which objectives a variant minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecipe {
    pub discriminator: DiscriminatorObjective,
    pub generator: GeneratorObjective,
    pub penalty: Option<PenaltyMode>,
    pub penalty_weight: f64,
}

pub fn assemble_objectives(config: &GanConfig) -> Result<LossRecipe> {
    config.validate()?;
    use DiscriminatorObjective as D;
    use GeneratorObjective as G;
    let (d, g, penalty) = match config.variant {
        Variant::Dcgan | Variant::SnDcgan => (D::NonSaturating, G::NonSaturating, None),
        Variant::Dragan => (
            D::NonSaturating,
            G::NonSaturating,
            Some(PenaltyMode::Perturb),
        ),
        Variant::WganGp | Variant::SnWganGp => (
            D::Wasserstein,
            G::Wasserstein,
            Some(PenaltyMode::Interpolate),
        ),
    };
    Ok(LossRecipe {
        discriminator: d,
        generator: g,
        penalty,
        penalty_weight: if penalty.is_some() {
            config.penalty_weight
        } else {
            0.0
        },
    })
}

impl LossRecipe {
    pub fn d_loss<T: Float>(&self, real: &Var<T>, fake: &Var<T>) -> Var<T> {
        match self.discriminator {
            DiscriminatorObjective::NonSaturating => d_loss_ns_logits(real, fake),
            DiscriminatorObjective::Wasserstein => wgan_d_loss(real, fake),
        }
    }

    pub fn g_loss<T: Float>(&self, fake: &Var<T>) -> Var<T> {
        match self.generator {
            GeneratorObjective::NonSaturating => g_loss_ns_logits(fake),
            GeneratorObjective::Minimax => g_loss_minimax_logits(fake),
            GeneratorObjective::Wasserstein => wgan_g_loss(fake),
        }
    }
}

/// Scalars of one training iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl LossBundle {
    pub fn all_finite(&self) -> bool {
        self.d_loss.is_finite()
            && self.g_loss.is_finite()
            && self.penalty.is_finite()
            && self.diagnostics.values().all(|v| v.is_finite())
    }

    /// Name/value pairs in log order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("d_loss".to_string(), self.d_loss),
            ("g_loss".to_string(), self.g_loss),
            ("penalty".to_string(), self.penalty),
        ];
        out.extend(self.diagnostics.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }
}
