//! Model/training hyperparameters and the flat `key=value` experiment format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::localization::BoxSelection;
use crate::training::AugmentationPolicy;

/// The five GAN families compared for co-localization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Dcgan,
    SnDcgan,
    Dragan,
    WganGp,
    SnWganGp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dcgan,
        Variant::SnDcgan,
        Variant::Dragan,
        Variant::WganGp,
        Variant::SnWganGp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcgan => "DCGAN",
            Variant::SnDcgan => "SN-DCGAN",
            Variant::Dragan => "DRAGAN",
            Variant::WganGp => "WGAN-GP",
            Variant::SnWganGp => "SN-WGAN-GP",
        }
    }

    pub fn is_wasserstein(self) -> bool {
        matches!(self, Variant::WganGp | Variant::SnWganGp)
    }

    pub fn spectral_norm(self) -> bool {
        matches!(self, Variant::SnDcgan | Variant::SnWganGp)
    }

    /// Discriminator updates per generator update.
    pub fn critic_steps(self) -> usize {
        if self.is_wasserstein() {
            5
        } else {
            1
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "dcgan" => Ok(Variant::Dcgan),
            "sndcgan" => Ok(Variant::SnDcgan),
            "dragan" => Ok(Variant::Dragan),
            "wgangp" => Ok(Variant::WganGp),
            "snwgangp" => Ok(Variant::SnWganGp),
            _ => Err(Error::Config(format!("unknown GAN variant {s:?}"))),
        }
    }
}

/// Every hyperparameter of a GAN run.
#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub latent_dim: usize,
    pub leaky_slope: f64,
    pub critic_steps: usize,
    pub penalty_weight: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub augmentation: bool,
    pub seed: u64,
    /// Explicit spectral-normalization request; must agree with the variant.
    pub spectral_norm: Option<bool>,
    /// Divides every hidden channel width (1 = the standard architecture).
    pub channel_divisor: usize,
    /// Perturbation std for DRAGAN anchors, relative to the real batch std.
    pub dragan_noise_scale: f64,
}

impl GanConfig {
    pub fn new(variant: Variant, input_size: usize) -> Self {
        Self {
            variant,
            input_size,
            latent_dim: 128,
            leaky_slope: 0.2,
            critic_steps: variant.critic_steps(),
            penalty_weight: 10.0,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 128,
            max_iterations: 250_000,
            augmentation: false,
            seed: 0,
            spectral_norm: None,
            channel_divisor: 1,
            dragan_noise_scale: 0.5,
        }
    }

    pub fn uses_spectral_norm(&self) -> bool {
        self.variant.spectral_norm()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_size != 32 && self.input_size != 64 {
            return bad(format!(
                "input_size must be 32 or 64, got {}",
                self.input_size
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.critic_steps != self.variant.critic_steps() {
            return bad(format!(
                "{} requires critic_steps = {}, got {}",
                self.variant,
                self.variant.critic_steps(),
                self.critic_steps
            ));
        }
        if let Some(sn) = self.spectral_norm {
            if sn != self.variant.spectral_norm() {
                return bad(format!(
                    "spectral_norm={sn} is inconsistent with variant {}",
                    self.variant
                ));
            }
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be a nonnegative number".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if self.batch_size == 0 || self.max_iterations == 0 {
            return bad("batch_size and max_iterations must be positive".into());
        }
        if self.channel_divisor == 0 || 64 % self.channel_divisor != 0 {
            return bad(format!(
                "channel_divisor must divide 64, got {}",
                self.channel_divisor
            ));
        }
        if !(self.dragan_noise_scale >= 0.0) {
            return bad("dragan_noise_scale must be nonnegative".into());
        }
        Ok(())
    }

    /// Serializes as `key=value` lines (the checkpoint header format).
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("variant".to_string(), self.variant.name().to_string()),
            ("input_size".into(), self.input_size.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("leaky_slope".into(), fmt_f64(self.leaky_slope)),
            ("critic_steps".into(), self.critic_steps.to_string()),
            ("penalty_weight".into(), fmt_f64(self.penalty_weight)),
            ("learning_rate".into(), fmt_f64(self.learning_rate)),
            ("adam_beta1".into(), fmt_f64(self.adam_beta1)),
            ("adam_beta2".into(), fmt_f64(self.adam_beta2)),
            ("adam_epsilon".into(), fmt_f64(self.adam_epsilon)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_iterations".into(), self.max_iterations.to_string()),
            ("augmentation".into(), self.augmentation.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("channel_divisor".into(), self.channel_divisor.to_string()),
            (
                "dragan_noise_scale".into(),
                fmt_f64(self.dragan_noise_scale),
            ),
        ];
        kv.push((
            "spectral_norm".into(),
            self.uses_spectral_norm().to_string(),
        ));
        kv
    }

    pub fn to_text(&self) -> String {
        render_kv(&self.to_kv())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;
        let cfg = Self::take_from(&mut map)?;
        reject_unknown(&map)?;
        Ok(cfg)
    }

    /// Consumes the GAN keys from `map`, leaving the rest untouched.
    pub(crate) fn take_from(map: &mut BTreeMap<String, String>) -> Result<Self> {
        let variant: Variant = map
            .remove("variant")
            .ok_or_else(|| Error::Config("missing required key `variant`".into()))?
            .parse()?;
        let input_size = take(map, "input_size")?.unwrap_or(64);
        let mut cfg = GanConfig::new(variant, input_size);
        macro_rules! opt {
            ($field:ident) => {
                if let Some(v) = take(map, stringify!($field))? {
                    cfg.$field = v;
                }
            };
        }
        opt!(latent_dim);
        opt!(leaky_slope);
        opt!(critic_steps);
        opt!(penalty_weight);
        opt!(learning_rate);
        opt!(adam_beta1);
        opt!(adam_beta2);
        opt!(adam_epsilon);
        opt!(batch_size);
        opt!(max_iterations);
        opt!(augmentation);
        opt!(seed);
        opt!(channel_divisor);
        opt!(dragan_noise_scale);
        cfg.spectral_norm = take(map, "spectral_norm")?;
        cfg.validate()?;
        // Only a consistency check; the variant decides.
        cfg.spectral_norm = None;
        Ok(cfg)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn take<V: FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<V>> {
    match map.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<V>()
            .map(Some)
            .map_err(|_| Error::Config(format!("invalid value {raw:?} for `{key}`"))),
    }
}

pub(crate) fn reject_unknown(map: &BTreeMap<String, String>) -> Result<()> {
    if map.is_empty() {
        Ok(())
    } else {
        let keys: Vec<&str> = map.keys().map(String::as_str).collect();
        Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
    }
}

/// Parses `key=value` lines; `#` starts a comment. Duplicate keys are errors.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key=value, got {line:?}",
                lineno + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{k}`",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

pub fn render_kv(kv: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in kv {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

/// A full run description: GAN hyperparameters plus data, augmentation,
/// localization and output settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub gan: GanConfig,
    pub augmentation: AugmentationPolicy,
    /// `synthetic`, `manifest`, `cifar10-<category>` or a built-in group name.
    pub dataset: String,
    pub root: Option<PathBuf>,
    pub ratio: f64,
    pub box_selection: BoxSelection,
    pub checkpoint_interval: u64,
    pub out_dir: PathBuf,
    pub include_test_in_training: bool,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_square: usize,
    pub diversity_pairs: usize,
}

impl ExperimentConfig {
    pub fn new(gan: GanConfig) -> Self {
        Self {
            gan,
            augmentation: AugmentationPolicy::default(),
            dataset: "synthetic".into(),
            root: None,
            ratio: 0.2,
            box_selection: BoxSelection::LargestBoxArea,
            checkpoint_interval: 5_000,
            out_dir: PathBuf::from("runs/default"),
            include_test_in_training: false,
            synthetic_train: 1000,
            synthetic_test: 100,
            synthetic_square: 12,
            diversity_pairs: 1000,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;
        let gan = GanConfig::take_from(&mut map)?;
        let mut cfg = ExperimentConfig::new(gan);
        if let Some(v) = map.remove("dataset") {
            cfg.dataset = v;
        }
        cfg.root = take::<String>(&mut map, "root")?.map(PathBuf::from);
        if let Some(v) = take(&mut map, "ratio")? {
            cfg.ratio = v;
        }
        if let Some(v) = map.remove("box_selection") {
            cfg.box_selection = v.parse()?;
        }
        if let Some(v) = take(&mut map, "checkpoint_interval")? {
            cfg.checkpoint_interval = v;
        }
        if let Some(v) = take::<String>(&mut map, "out")? {
            cfg.out_dir = PathBuf::from(v);
        }
        macro_rules! opt {
            ($field:ident) => {
                if let Some(v) = take(&mut map, stringify!($field))? {
                    cfg.$field = v;
                }
            };
        }
        opt!(include_test_in_training);
        opt!(synthetic_train);
        opt!(synthetic_test);
        opt!(synthetic_square);
        opt!(diversity_pairs);
        cfg.augmentation = AugmentationPolicy::take_from(&mut map)?;
        reject_unknown(&map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.augmentation.validate()?;
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        if self.dataset.trim().is_empty() {
            return Err(Error::Config("dataset must not be empty".into()));
        }
        Ok(())
    }

    /// Fully resolved configuration, defaults included.
    pub fn to_text(&self) -> String {
        let mut kv = self.gan.to_kv();
        kv.push(("dataset".into(), self.dataset.clone()));
        if let Some(root) = &self.root {
            kv.push(("root".into(), root.display().to_string()));
        }
        kv.push(("ratio".into(), fmt_f64(self.ratio)));
        kv.push(("box_selection".into(), self.box_selection.to_string()));
        kv.push((
            "checkpoint_interval".into(),
            self.checkpoint_interval.to_string(),
        ));
        kv.push(("out".into(), self.out_dir.display().to_string()));
        kv.push((
            "include_test_in_training".into(),
            self.include_test_in_training.to_string(),
        ));
        kv.push(("synthetic_train".into(), self.synthetic_train.to_string()));
        kv.push(("synthetic_test".into(), self.synthetic_test.to_string()));
        kv.push(("synthetic_square".into(), self.synthetic_square.to_string()));
        kv.push(("diversity_pairs".into(), self.diversity_pairs.to_string()));
        kv.extend(self.augmentation.to_kv());
        render_kv(&kv)
    }
}
