//! Adversarial training loop, augmentation, checkpoint series and peak
//! selection.

mod adam;
mod augment;
mod sampler;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use coloc_autograd::{grad, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamConfig};
pub use augment::{augment, AugmentationPolicy};
pub use sampler::BatchSampler;

use crate::checkpoint::Checkpoint;
use crate::config::GanConfig;
use crate::data::AnnotatedImage;
use crate::error::{Error, Result};
use crate::losses::{
    assemble_objectives, gradient_penalty, perturb_anchor, LossBundle, LossRecipe, PenaltyMode,
};
use crate::models::{apply_updates, BindOptions, Bound, Gan, NormMode};

/// Salt for the fixed latent codes behind every checkpoint's sample grid.
const GRID_SEED_SALT: u64 = 0x6772_6964;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Completed generator iterations.
    pub iteration: u64,
    pub d_updates: u64,
    pub g_updates: u64,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub gan: Gan<f32>,
    /// `Some` when the configuration enables augmentation.
    pub policy: Option<AugmentationPolicy>,
    pub recipe: LossRecipe,
    pub d_opt: Adam<f32>,
    pub g_opt: Adam<f32>,
    pub rng: ChaCha8Rng,
    /// Created on the first step, sized to the dataset.
    pub sampler: Option<BatchSampler>,
    pub counters: Counters,
}

fn adam_config(c: &GanConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: c.learning_rate,
        beta1: c.adam_beta1,
        beta2: c.adam_beta2,
        epsilon: c.adam_epsilon,
    }
}

fn gather(data: &[AnnotatedImage], idx: &[usize]) -> Result<Tensor<f32>> {
    crate::data::stack(idx.iter().map(|&i| &data[i]))
}

fn batch_stats(t: &Tensor<f32>) -> String {
    let n = t.numel().max(1) as f64;
    let finite: Vec<f64> = t
        .data()
        .iter()
        .map(|v| *v as f64)
        .filter(|v| v.is_finite())
        .collect();
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "shape={:?} mean={mean:.6} std={:.6} min={lo:.6} max={hi:.6} non_finite={}",
        t.shape(),
        var.sqrt(),
        t.numel() - finite.len()
    )
}

fn named_grads(loss: &Var<f32>, bound: &Bound<'_, f32>) -> Vec<(String, Tensor<f32>)> {
    let leaves: Vec<&Var<f32>> = bound.leaves().iter().map(|(_, v)| v).collect();
    let grads = grad(loss, &leaves, false);
    bound
        .leaves()
        .iter()
        .zip(grads)
        .map(|((name, v), g)| {
            let g = g
                .map(|g| g.value().clone())
                .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()));
            (name.clone(), g)
        })
        .collect()
}

struct DStep {
    loss: f64,
    penalty: f64,
    real_mean: f64,
    fake_mean: f64,
    grad_norm: Option<f64>,
}

impl Trainer {
    pub fn new(config: &GanConfig, policy: &AugmentationPolicy) -> Result<Self> {
        let recipe = assemble_objectives(config)?;
        policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gan = Gan::new(config, &mut rng)?;
        Ok(Self {
            gan,
            policy: config.augmentation.then(|| policy.clone()),
            recipe,
            d_opt: Adam::new(adam_config(config)),
            g_opt: Adam::new(adam_config(config)),
            rng,
            sampler: None,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.gan.config
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.gan.config.clone(),
            policy: self.policy.clone(),
            params: self.gan.params.clone(),
            buffers: self.gan.buffers.clone(),
            d_opt: self.d_opt.clone(),
            g_opt: self.g_opt.clone(),
            counters: self.counters,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            sampler: self.sampler.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let recipe = assemble_objectives(&ckpt.config)?;
        let gan = Gan::from_parts(&ckpt.config, ckpt.params, ckpt.buffers)?;
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng_seed);
        rng.set_stream(ckpt.rng_stream);
        rng.set_word_pos(ckpt.rng_word_pos);
        Ok(Self {
            gan,
            policy: ckpt.policy,
            recipe,
            d_opt: ckpt.d_opt,
            g_opt: ckpt.g_opt,
            rng,
            sampler: ckpt.sampler,
            counters: ckpt.counters,
        })
    }

    fn non_finite(&self, detail: String) -> Error {
        Error::NonFinite {
            iteration: self.counters.iteration,
            detail,
        }
    }

    fn d_step(&mut self, data: &[AnnotatedImage]) -> Result<DStep> {
        let n = self.gan.config.batch_size;
        let sampler = self
            .sampler
            .get_or_insert_with(|| BatchSampler::new(data.len()));
        let idx = sampler.next_batch(n, &mut self.rng);
        let mut real = gather(data, &idx)?;
        if let Some(p) = &self.policy {
            real = augment(&real, p, &mut self.rng);
        }
        let gan = &self.gan;
        let z: Tensor<f32> = gan.sample_latent(n, &mut self.rng);
        let g_opts = BindOptions {
            trainable: false,
            sn_iterations: 0,
            mode: NormMode::Batch,
        };
        let fake = gan
            .generator
            .bind(&gan.params, &gan.buffers, g_opts)?
            .forward(&Var::constant(z))?
            .output
            .value()
            .clone();
        let d_opts = BindOptions {
            trainable: true,
            sn_iterations: 1,
            mode: NormMode::Batch,
        };
        let d = gan.discriminator.bind(&gan.params, &gan.buffers, d_opts)?;
        let rf = d.forward(&Var::constant(real.clone()))?;
        let ff = d.forward(&Var::constant(fake.clone()))?;
        let r = rf.output.reshape(vec![n]);
        let f = ff.output.reshape(vec![n]);
        let mut loss = self.recipe.d_loss(&r, &f);
        let mut penalty = 0.0;
        let mut grad_norm = None;
        if let Some(mode) = self.recipe.penalty {
            let anchor = match mode {
                PenaltyMode::Interpolate => fake.clone(),
                PenaltyMode::Perturb => {
                    perturb_anchor(&real, gan.config.dragan_noise_scale, &mut self.rng)
                }
            };
            let term = gradient_penalty(&d, &real, &anchor, mode, &mut self.rng)?;
            penalty = term.penalty.value().item() as f64;
            grad_norm = Some(term.grad_norm_mean);
            loss = loss.add(&term.penalty.scale(self.recipe.penalty_weight as f32));
        }
        let step = DStep {
            loss: loss.value().item() as f64,
            penalty,
            real_mean: r.value().mean() as f64,
            fake_mean: f.value().mean() as f64,
            grad_norm,
        };
        if !(step.loss.is_finite() && step.penalty.is_finite()) {
            return Err(self.non_finite(format!(
                "discriminator loss {} (penalty {}); real batch {}; fake batch {}; real logits {}; fake logits {}",
                step.loss,
                step.penalty,
                batch_stats(&real),
                batch_stats(&fake),
                batch_stats(r.value()),
                batch_stats(f.value())
            )));
        }
        let grads = named_grads(&loss, &d);
        let sn = d.sn_updates().to_vec();
        drop(d);
        self.d_opt.update(&mut self.gan.params, &grads);
        apply_updates(&mut self.gan.buffers, &sn);
        // Running statistics track real data only.
        apply_updates(&mut self.gan.buffers, &rf.stat_updates);
        Ok(step)
    }

    fn g_step(&mut self) -> Result<f64> {
        let n = self.gan.config.batch_size;
        let gan = &self.gan;
        let z: Tensor<f32> = gan.sample_latent(n, &mut self.rng);
        let g = gan.generator.bind(
            &gan.params,
            &gan.buffers,
            BindOptions {
                trainable: true,
                sn_iterations: 0,
                mode: NormMode::Batch,
            },
        )?;
        let gf = g.forward(&Var::constant(z))?;
        let d = gan.discriminator.bind(
            &gan.params,
            &gan.buffers,
            BindOptions {
                trainable: false,
                sn_iterations: 0,
                mode: NormMode::Batch,
            },
        )?;
        let scores = d.forward(&gf.output)?.output.reshape(vec![n]);
        let loss = self.recipe.g_loss(&scores);
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(self.non_finite(format!(
                "generator loss {value}; fake batch {}; fake logits {}",
                batch_stats(gf.output.value()),
                batch_stats(scores.value())
            )));
        }
        let grads = named_grads(&loss, &g);
        drop((d, g));
        self.g_opt.update(&mut self.gan.params, &grads);
        apply_updates(&mut self.gan.buffers, &gf.stat_updates);
        Ok(value)
    }

    /// One generator iteration: `critic_steps` discriminator updates, then
    /// one generator update.
    pub fn step(&mut self, data: &[AnnotatedImage]) -> Result<LossBundle> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if let Some(s) = &self.sampler {
            if s.len() != data.len() {
                return Err(Error::Data(format!(
                    "training set has {} images, sampler was built for {}",
                    data.len(),
                    s.len()
                )));
            }
        }
        let mut last = None;
        for _ in 0..self.gan.config.critic_steps {
            last = Some(self.d_step(data)?);
            self.counters.d_updates += 1;
        }
        let d = last.expect("critic_steps is positive");
        let g_loss = self.g_step()?;
        self.counters.g_updates += 1;
        self.counters.iteration += 1;
        let mut bundle = LossBundle {
            d_loss: d.loss,
            g_loss,
            penalty: d.penalty,
            ..Default::default()
        };
        bundle
            .diagnostics
            .insert("real_logit_mean".into(), d.real_mean);
        bundle
            .diagnostics
            .insert("fake_logit_mean".into(), d.fake_mean);
        if let Some(g) = d.grad_norm {
            bundle.diagnostics.insert("grad_norm_mean".into(), g);
        }
        if !bundle.all_finite() {
            return Err(self.non_finite(format!("diagnostics {:?}", bundle.entries())));
        }
        Ok(bundle)
    }

    /// 64 samples from fixed latent codes, in inference mode.
    pub fn sample_grid_images(&self) -> Result<Tensor<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.gan.config.seed ^ GRID_SEED_SALT);
        let z: Tensor<f32> = self.gan.sample_latent(64, &mut rng);
        self.gan.generate(&z)
    }
}

/// One line per logged scalar: `iteration<TAB>name<TAB>value`.
pub fn log_lines(iteration: u64, losses: &LossBundle) -> String {
    let mut s = String::new();
    for (name, v) in losses.entries() {
        s.push_str(&format!("{iteration}\t{name}\t{v:?}\n"));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub checkpoint_interval: u64,
    /// Checkpoints, sample grids and `train.log` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Keep a model snapshot in every [`CheckpointRecord`].
    pub keep_models: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            checkpoint_interval: 5_000,
            out_dir: None,
            keep_models: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckpointRecord {
    pub iteration: u64,
    pub path: Option<PathBuf>,
    pub gan: Option<Gan<f32>>,
}

pub trait TrainObserver {
    fn on_step(&mut self, _iteration: u64, _losses: &LossBundle) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _record: &CheckpointRecord, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs until `max_iterations` generator iterations are done, checkpointing
/// every `checkpoint_interval` iterations and at the end.
pub fn train(
    trainer: &mut Trainer,
    data: &[AnnotatedImage],
    opts: &TrainOptions,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<CheckpointRecord>> {
    if opts.checkpoint_interval == 0 {
        return Err(Error::Config("checkpoint_interval must be positive".into()));
    }
    let size = trainer.config().input_size;
    if let Some(bad) = data.iter().find(|i| i.height != size || i.width != size) {
        return Err(Error::Data(format!(
            "image {} is {}x{}, model expects {size}x{size}",
            bad.image_id, bad.width, bad.height
        )));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            let ckpt_dir = dir.join("checkpoints");
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
            let path = dir.join("train.log");
            let f: File = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };
    let max = trainer.config().max_iterations;
    let mut records = Vec::new();
    while trainer.counters.iteration < max {
        let losses = match trainer.step(data) {
            Ok(l) => l,
            Err(e) => {
                if let Some((path, w)) = &mut log {
                    w.flush().map_err(|err| Error::io(&*path, err))?;
                }
                return Err(e);
            }
        };
        let it = trainer.counters.iteration;
        if let Some((path, w)) = &mut log {
            w.write_all(log_lines(it, &losses).as_bytes())
                .map_err(|e| Error::io(&*path, e))?;
        }
        observer.on_step(it, &losses)?;
        if it % opts.checkpoint_interval == 0 || it == max {
            if let Some((path, w)) = &mut log {
                w.flush().map_err(|e| Error::io(&*path, e))?;
            }
            let record = write_checkpoint(trainer, opts)?;
            observer.on_checkpoint(&record, trainer)?;
            records.push(record);
        }
    }
    if let Some((path, w)) = &mut log {
        w.flush().map_err(|e| Error::io(&*path, e))?;
    }
    Ok(records)
}

fn write_checkpoint(trainer: &Trainer, opts: &TrainOptions) -> Result<CheckpointRecord> {
    let it = trainer.counters.iteration;
    let path = match &opts.out_dir {
        Some(dir) => {
            let stem = dir.join("checkpoints").join(format!("iter_{it:06}"));
            let path = stem.with_extension("ckpt");
            trainer.to_checkpoint().save(&path)?;
            let grid = crate::render::sample_grid(&trainer.sample_grid_images()?, 8)?;
            let png = dir
                .join("checkpoints")
                .join(format!("iter_{it:06}_samples.png"));
            crate::data::save_rgb_png(&grid, &png)?;
            Some(path)
        }
        None => None,
    };
    Ok(CheckpointRecord {
        iteration: it,
        path,
        gan: opts.keep_models.then(|| trainer.gan.clone()),
    })
}

/// Index of the checkpoint with the highest score; earliest wins ties.
pub fn select_peak_checkpoint<C>(
    checkpoints: &[C],
    mut eval: impl FnMut(&C) -> Result<f64>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in checkpoints.iter().enumerate() {
        let s = eval(c)?;
        if s.is_nan() {
            return Err(Error::Domain(format!("checkpoint {i} scored NaN")));
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Input("no checkpoints to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::data::synthetic_dataset;

    fn tiny(variant: Variant) -> (GanConfig, Vec<AnnotatedImage>) {
        let mut cfg = GanConfig::new(variant, 32);
        cfg.channel_divisor = 16;
        cfg.latent_dim = 8;
        cfg.batch_size = 4;
        cfg.max_iterations = 3;
        cfg.seed = 11;
        let ds = synthetic_dataset(10, 2, 32, 12, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (cfg, ds.train)
    }

    #[test]
    fn peak_selection() {
        let pick = |v: &[f64]| select_peak_checkpoint(v, |x| Ok(*x));
        assert_eq!(pick(&[0.3, 0.7, 0.5]).unwrap(), 1);
        assert_eq!(pick(&[0.4, 0.4, 0.4]).unwrap(), 0);
        assert_eq!(pick(&[0.9]).unwrap(), 0);
        assert!(pick(&[]).is_err());
    }

    #[test]
    fn schedule_counts_updates() {
        for v in [Variant::Dcgan, Variant::WganGp] {
            let (cfg, data) = tiny(v);
            let mut t = Trainer::new(&cfg, &AugmentationPolicy::default()).unwrap();
            let recs = train(&mut t, &data, &TrainOptions::default(), &mut ()).unwrap();
            assert_eq!(recs.len(), 1);
            assert_eq!(t.counters.g_updates, 3);
            assert_eq!(t.counters.d_updates, 3 * v.critic_steps() as u64);
        }
    }

    #[test]
    fn training_writes_log_and_checkpoints() {
        let (mut cfg, data) = tiny(Variant::Dragan);
        cfg.augmentation = true;
        let tmp = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(&cfg, &AugmentationPolicy::default()).unwrap();
        let opts = TrainOptions {
            checkpoint_interval: 2,
            out_dir: Some(tmp.path().to_path_buf()),
            keep_models: false,
        };
        let recs = train(&mut t, &data, &opts, &mut ()).unwrap();
        assert_eq!(
            recs.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert!(recs.iter().all(|r| r.path.as_ref().unwrap().exists()));
        assert!(tmp
            .path()
            .join("checkpoints/iter_000003_samples.png")
            .exists());
        let log = std::fs::read_to_string(tmp.path().join("train.log")).unwrap();
        assert!(log.lines().any(|l| l.starts_with("1\td_loss\t")));
        assert!(log.lines().any(|l| l.starts_with("3\tgrad_norm_mean\t")));
    }
}
