//! Datasets: CIFAR-10 categories, merged Tiny ImageNet groups, synthetic
//! squares, and tab-separated manifests.

mod cifar;
mod image_io;
mod manifest;
mod specs;
mod synthetic;
mod tiny_imagenet;

use std::collections::HashSet;

use coloc_autograd::Tensor;

pub use cifar::{build_cifar_category, CIFAR_CATEGORIES};
pub use image_io::{load_image, load_image_dir, save_rgb_png, to_rgb8};
pub use manifest::{
    load_manifest_dataset, read_manifest, save_dataset, write_manifest, ManifestEntry, Split,
};
pub use specs::{builtin_specs, find_spec, DatasetSpec};
pub use synthetic::{build_synthetic_square_dataset, synthetic_dataset};
pub use tiny_imagenet::build_tiny_imagenet_group;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::localization::BBox;

/// 8-bit channel value to the generator's `[-1, 1]` range.
pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_u8(x: f32) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// An RGB image in `[-1, 1]`, stored HWC, with an optional ground-truth box.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub gt_box: Option<BBox>,
}

impl AnnotatedImage {
    pub fn from_rgb8(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        rgb: &[u8],
        gt_box: Option<BBox>,
    ) -> Self {
        assert_eq!(rgb.len(), height * width * 3);
        Self {
            image_id: image_id.into(),
            height,
            width,
            pixels: rgb.iter().map(|v| u8_to_unit(*v)).collect(),
            gt_box,
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| unit_to_u8(*v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub input_size: usize,
    pub train: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
    pub has_boxes: bool,
}

impl Dataset {
    /// Images used for GAN training, optionally including the test split.
    pub fn training_images(&self, include_test: bool) -> Vec<AnnotatedImage> {
        let mut out = self.train.clone();
        if include_test {
            out.extend(self.test.iter().cloned());
        }
        out
    }

    /// Checks sizes, ranges and that the splits share no image id.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for img in self.train.iter().chain(&self.test) {
            if img.height != self.input_size || img.width != self.input_size {
                return Err(Error::Data(format!(
                    "{}: image {} is {}x{}, expected {s}x{s}",
                    self.name,
                    img.image_id,
                    img.width,
                    img.height,
                    s = self.input_size
                )));
            }
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::Data(format!(
                    "{}: duplicate image id {}",
                    self.name, img.image_id
                )));
            }
        }
        Ok(())
    }
}

/// Stacks images into an `[n, h, w, 3]` batch.
pub fn stack<'a>(images: impl IntoIterator<Item = &'a AnnotatedImage>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::Input(format!(
                    "image {} is {}x{}, batch is {}x{}",
                    img.image_id, img.height, img.width, d.0, d.1
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::Input("empty image batch".into()))?;
    Ok(Tensor::new(vec![n, h, w, 3], data))
}

/// Builds the dataset an experiment names: `synthetic`, `manifest` (with
/// `root` pointing at the manifest file), `cifar10-<category>`, or a
/// built-in group such as `Cat`.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let name = cfg.dataset.trim();
    let root = || {
        cfg.root
            .as_deref()
            .ok_or_else(|| Error::Data(format!("dataset `{name}` needs a `root`")))
    };
    let ds = if name.eq_ignore_ascii_case("synthetic") {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.gan.seed);
        synthetic_dataset(
            cfg.synthetic_train,
            cfg.synthetic_test,
            cfg.gan.input_size,
            cfg.synthetic_square,
            &mut rng,
        )?
    } else if name.eq_ignore_ascii_case("manifest") {
        load_manifest_dataset(root()?)?
    } else if let Some(cat) = name.strip_prefix("cifar10-") {
        build_cifar_category(cat, root()?)?
    } else if let Some(spec) = find_spec(name) {
        let r = root()?;
        if !r.exists() {
            return Err(Error::Data(format!(
                "dataset root {} does not exist",
                r.display()
            )));
        }
        build_tiny_imagenet_group(spec, r)?
    } else {
        return Err(Error::Config(format!("unknown dataset `{name}`")));
    };
    if ds.input_size != cfg.gan.input_size {
        return Err(Error::Config(format!(
            "dataset `{}` has {}-pixel images but input_size is {}",
            ds.name, ds.input_size, cfg.gan.input_size
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip_is_identity() {
        for v in 0..=255u8 {
            let x = u8_to_unit(v);
            assert!((-1.0..=1.0).contains(&x));
            assert_eq!(unit_to_u8(x), v);
        }
    }
}
