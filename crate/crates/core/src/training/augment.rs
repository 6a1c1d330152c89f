//! Random translation plus photometric jitter for real batches.

use std::collections::BTreeMap;

use coloc_autograd::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{fmt_f64, take};
use crate::error::{Error, Result};

/// Eigenvalues and eigenvectors (columns) of ImageNet RGB covariance.
const PCA_EIGVAL: [f32; 3] = [0.2175, 0.0188, 0.0045];
const PCA_EIGVEC: [[f32; 3]; 3] = [
    [-0.5675, 0.7192, 0.4009],
    [-0.5808, -0.0045, -0.8140],
    [-0.5836, -0.6948, 0.4203],
];

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    /// Maximum shift per axis as a fraction of the image size.
    pub max_translation_fraction: f64,
    /// Relative amplitudes: factors are drawn from `[1 - a, 1 + a]`.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Standard deviation of the PCA lighting coefficients.
    pub lighting_pca_scale: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            max_translation_fraction: 0.05,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            lighting_pca_scale: 0.1,
        }
    }
}

const KEYS: [&str; 5] = [
    "aug.max_translation_fraction",
    "aug.brightness",
    "aug.contrast",
    "aug.saturation",
    "aug.lighting_pca_scale",
];

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            max_translation_fraction: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            lighting_pca_scale: 0.0,
        }
    }

    fn fields_mut(&mut self) -> [&mut f64; 5] {
        [
            &mut self.max_translation_fraction,
            &mut self.brightness,
            &mut self.contrast,
            &mut self.saturation,
            &mut self.lighting_pca_scale,
        ]
    }

    fn fields(&self) -> [f64; 5] {
        [
            self.max_translation_fraction,
            self.brightness,
            self.contrast,
            self.saturation,
            self.lighting_pca_scale,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in KEYS.iter().zip(self.fields()) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "`{k}` must be a nonnegative number, got {v}"
                )));
            }
        }
        if self.max_translation_fraction >= 0.5 {
            return Err(Error::Config(
                "`aug.max_translation_fraction` must be below 0.5".into(),
            ));
        }
        for (k, v) in [
            ("aug.brightness", self.brightness),
            ("aug.contrast", self.contrast),
            ("aug.saturation", self.saturation),
        ] {
            if v > 1.0 {
                return Err(Error::Config(format!("`{k}` must not exceed 1, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .zip(self.fields())
            .map(|(k, v)| (k.to_string(), fmt_f64(v)))
            .collect()
    }

    /// Consumes `aug.*` keys; absent keys keep their defaults.
    pub fn take_from(map: &mut BTreeMap<String, String>) -> Result<Self> {
        let mut p = Self::default();
        for (k, field) in KEYS.iter().zip(p.fields_mut()) {
            if let Some(v) = take(map, k)? {
                *field = v;
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Largest shift in pixels for a `size`-pixel image.
    pub fn max_shift(&self, size: usize) -> usize {
        (self.max_translation_fraction * size as f64 + 1e-9).floor() as usize
    }

    fn photometric(&self) -> bool {
        self.brightness > 0.0
            || self.contrast > 0.0
            || self.saturation > 0.0
            || self.lighting_pca_scale > 0.0
    }
}

/// Augments every image of an `[n, h, w, 3]` batch in `[-1, 1]`.
pub fn augment<R: Rng + ?Sized>(
    images: &Tensor<f32>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Tensor<f32> {
    let [n, h, w, c] = images.shape()[..] else {
        panic!("augment expects [n, h, w, 3], got {:?}", images.shape());
    };
    assert_eq!(c, 3, "augment expects RGB images");
    let per = h * w * 3;
    let mut out = images.data().to_vec();
    let sy = policy.max_shift(h) as i64;
    let sx = policy.max_shift(w) as i64;
    for i in 0..n {
        let img = &mut out[i * per..(i + 1) * per];
        if sx > 0 || sy > 0 {
            let dy = if sy > 0 {
                rng.random_range(-sy..=sy)
            } else {
                0
            };
            let dx = if sx > 0 {
                rng.random_range(-sx..=sx)
            } else {
                0
            };
            translate(img, h, w, dy, dx);
        }
        if policy.photometric() {
            jitter(img, policy, rng);
        }
    }
    Tensor::new(images.shape().to_vec(), out)
}

/// Shifts by `(dy, dx)`, replicating edge pixels into the uncovered band.
fn translate(img: &mut [f32], h: usize, w: usize, dy: i64, dx: i64) {
    if dy == 0 && dx == 0 {
        return;
    }
    let src = img.to_vec();
    for y in 0..h {
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        for x in 0..w {
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
            let (d, s) = ((y * w + x) * 3, (sy * w + sx) * 3);
            img[d..d + 3].copy_from_slice(&src[s..s + 3]);
        }
    }
}

fn gray(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn factor<R: Rng + ?Sized>(amp: f64, rng: &mut R) -> Option<f32> {
    (amp > 0.0).then(|| rng.random_range(1.0 - amp..=1.0 + amp) as f32)
}

/// Brightness, contrast, saturation and PCA lighting in `[0, 1]` space.
fn jitter<R: Rng + ?Sized>(img: &mut [f32], policy: &AugmentationPolicy, rng: &mut R) {
    for v in img.iter_mut() {
        *v = (*v + 1.0) * 0.5;
    }
    if let Some(b) = factor(policy.brightness, rng) {
        img.iter_mut().for_each(|v| *v *= b);
    }
    if let Some(c) = factor(policy.contrast, rng) {
        let px = img.len() / 3;
        let mean = img.chunks_exact(3).map(gray).sum::<f32>() / px as f32;
        img.iter_mut().for_each(|v| *v = (*v - mean) * c + mean);
    }
    if let Some(s) = factor(policy.saturation, rng) {
        for p in img.chunks_exact_mut(3) {
            let g = gray(p);
            p.iter_mut().for_each(|v| *v = (*v - g) * s + g);
        }
    }
    if policy.lighting_pca_scale > 0.0 {
        let normal = Normal::new(0.0, policy.lighting_pca_scale).expect("valid std");
        let alpha: [f32; 3] = std::array::from_fn(|_| normal.sample(rng) as f32);
        let shift: [f32; 3] = std::array::from_fn(|ch| {
            (0..3)
                .map(|j| PCA_EIGVEC[ch][j] * alpha[j] * PCA_EIGVAL[j])
                .sum()
        });
        for p in img.chunks_exact_mut(3) {
            for ch in 0..3 {
                p[ch] += shift[ch];
            }
        }
    }
    for v in img.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0);
    }
}
