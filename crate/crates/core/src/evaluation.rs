//! IoU, GT-known localization accuracy, and MS-SSIM sample diversity.

use std::collections::BTreeMap;

use coloc_autograd::{Float, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stack, AnnotatedImage};
use crate::error::{Error, Result};
use crate::localization::{localize, BBox, LocalizeOptions, Prediction};
use crate::models::Gan;
use crate::saliency::cam_batch;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// A prediction counts as correct when its IoU is strictly above one half.
pub fn is_correct(iou: f64) -> bool {
    iou > 0.5
}

pub fn gt_known_loc(predictions: &[BBox], ground_truth: &[BBox]) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground-truth boxes",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Input("no images to score".into()));
    }
    let hits = predictions
        .iter()
        .zip(ground_truth)
        .filter(|(p, g)| is_correct(iou(p, g)))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub iou: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub ms_ssim_mean: f64,
    pub pairs: usize,
    pub seed: u64,
    pub scales: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub gt_known_loc: f64,
    pub n: usize,
    pub ratio: f64,
    pub checkpoint: String,
    pub diversity: Option<DiversityReport>,
    /// Resolved configuration, `key -> value`.
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!(
            "gt_known_loc={} n={} ratio={} checkpoint={}",
            self.gt_known_loc, self.n, self.ratio, self.checkpoint
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores predictions against ground truth by image id. Every annotated
/// image must have a prediction; per-image records are sorted by id.
pub fn score_predictions(
    predictions: &[Prediction],
    ground_truth: &BTreeMap<String, BBox>,
    ratio: f64,
    checkpoint: &str,
) -> Result<EvalReport> {
    if ground_truth.is_empty() {
        return Err(Error::Input("no annotated images to evaluate".into()));
    }
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.image_id.as_str(), p).is_some() {
            return Err(Error::Input(format!(
                "duplicate prediction for {}",
                p.image_id
            )));
        }
    }
    let missing: Vec<&str> = ground_truth
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "no prediction for: {}",
            missing.join(", ")
        )));
    }
    let mut per_image = Vec::with_capacity(ground_truth.len());
    let mut preds = Vec::with_capacity(ground_truth.len());
    let mut gts = Vec::with_capacity(ground_truth.len());
    for (id, gt) in ground_truth {
        let pred = by_id[id.as_str()].bbox()?;
        let v = iou(&pred, gt);
        per_image.push(ImageScore {
            image_id: id.clone(),
            iou: v,
            correct: is_correct(v),
        });
        preds.push(pred);
        gts.push(*gt);
    }
    Ok(EvalReport {
        gt_known_loc: gt_known_loc(&preds, &gts)?,
        n: per_image.len(),
        per_image,
        ratio,
        checkpoint: checkpoint.to_string(),
        diversity: None,
        config: BTreeMap::new(),
    })
}

/// Heatmap, box and prediction record for every image, in input order.
pub fn predict<T: Float>(
    gan: &Gan<T>,
    images: &[AnnotatedImage],
    opts: &LocalizeOptions,
) -> Result<Vec<Prediction>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let size = gan.input_size();
    if let Some(bad) = images.iter().find(|i| i.height != size || i.width != size) {
        return Err(Error::Input(format!(
            "image {} is {}x{} but the model expects {size}x{size}",
            bad.image_id, bad.width, bad.height
        )));
    }
    let batch: Tensor<T> = stack(images)?.cast();
    let maps = cam_batch(gan, &batch)?;
    Ok(images
        .iter()
        .zip(&maps)
        .map(|(img, m)| Prediction::new(img.image_id.clone(), &localize(m, opts), opts.ratio))
        .collect())
}

/// Localizes every image of an annotated split and scores the boxes.
pub fn evaluate_checkpoint<T: Float>(
    gan: &Gan<T>,
    split: &[AnnotatedImage],
    opts: &LocalizeOptions,
    checkpoint: &str,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let mut gt = BTreeMap::new();
    for img in split {
        let b = img.gt_box.ok_or_else(|| {
            Error::Data(format!("image {} has no ground-truth box", img.image_id))
        })?;
        gt.insert(img.image_id.clone(), b);
    }
    let preds = predict(gan, split, opts)?;
    let mut report = score_predictions(&preds, &gt, opts.ratio, checkpoint)?;
    report.config = gan.config.to_kv().into_iter().collect();
    Ok(report)
}

// --- MS-SSIM ---------------------------------------------------------------

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Default scale count: 3 for 64-pixel images, 2 for 32, otherwise as many
/// of the standard five as fit the window.
pub fn default_scales(size: usize) -> usize {
    match size {
        64 => 3,
        32 => 2,
        _ => max_scales(size).min(5),
    }
}

fn max_scales(size: usize) -> usize {
    let mut s = 0;
    let mut d = size;
    while d >= WINDOW && s < 5 {
        s += 1;
        d /= 2;
    }
    s
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one channel.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance and contrast-structure terms of one channel pair.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
    };
    let (mu_a, _, _) = filter(a, h, w, g);
    let (mu_b, _, _) = filter(b, h, w, g);
    let (aa, _, _) = filter(&prod(&|x, _| x * x), h, w, g);
    let (bb, _, _) = filter(&prod(&|_, y| y * y), h, w, g);
    let (ab, _, _) = filter(&prod(&|x, y| x * y), h, w, g);
    let n = mu_a.len() as f64;
    let mut l_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        l_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += (2.0 * cov + c2) / (va + vb + c2);
    }
    (l_sum / n, cs_sum / n)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (img[2 * y * w + 2 * x]
                    + img[2 * y * w + 2 * x + 1]
                    + img[(2 * y + 1) * w + 2 * x]
                    + img[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `[h, w, 3]` images given in `[-1, 1]`, averaged
/// over channels. Negative terms are clamped at zero.
pub fn ms_ssim(a: &[f32], b: &[f32], h: usize, w: usize, scales: usize) -> Result<f64> {
    if a.len() != h * w * 3 || b.len() != a.len() {
        return Err(Error::Input("MS-SSIM images must both be [h, w, 3]".into()));
    }
    let fit = max_scales(h.min(w));
    if fit == 0 {
        return Err(Error::Input(format!(
            "images of {h}x{w} are smaller than the {WINDOW}-pixel window"
        )));
    }
    let scales = if scales > fit {
        log::warn!("MS-SSIM: {h}x{w} images support {fit} scales, not {scales}");
        fit
    } else {
        scales.max(1)
    };
    let wsum: f64 = SCALE_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = SCALE_WEIGHTS[..scales].iter().map(|v| v / wsum).collect();
    let g = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let mut x: Vec<f64> = a
            .iter()
            .skip(c)
            .step_by(3)
            .map(|v| (*v as f64 + 1.0) / 2.0)
            .collect();
        let mut y: Vec<f64> = b
            .iter()
            .skip(c)
            .step_by(3)
            .map(|v| (*v as f64 + 1.0) / 2.0)
            .collect();
        let (mut ch, mut cw) = (h, w);
        let mut score = 1.0;
        for (s, wt) in weights.iter().enumerate() {
            let (l, cs) = ssim_terms(&x, &y, ch, cw, &g);
            let term = if s + 1 == scales {
                l.max(0.0) * cs.max(0.0)
            } else {
                cs.max(0.0)
            };
            score *= term.powf(*wt);
            if s + 1 < scales {
                (x, _, _) = downsample(&x, ch, cw);
                (y, ch, cw) = downsample(&y, ch, cw);
            }
        }
        total += score;
    }
    Ok(total / 3.0)
}

/// Anything that can draw generated images `[n, h, w, 3]` in `[-1, 1]`.
pub trait ImageSampler {
    fn sample(&mut self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Tensor<f32>>;
}

impl<T: Float> ImageSampler for Gan<T> {
    fn sample(&mut self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Tensor<f32>> {
        let z: Tensor<T> = self.sample_latent(n, rng);
        Ok(self.generate(&z)?.cast())
    }
}

/// Mean MS-SSIM over `pairs` independently generated image pairs. Higher
/// means less diverse samples.
pub fn ms_ssim_diversity<S: ImageSampler + ?Sized, R: Rng>(
    sampler: &mut S,
    pairs: usize,
    rng: &mut R,
    scales: Option<usize>,
) -> Result<(f64, usize)> {
    if pairs == 0 {
        return Err(Error::Input("sample_pairs must be at least 1".into()));
    }
    const CHUNK: usize = 64;
    let mut sum = 0.0;
    let mut done = 0;
    let mut used_scales = 0;
    while done < pairs {
        let k = (pairs - done).min(CHUNK);
        let a = sampler.sample(k, rng)?;
        let b = sampler.sample(k, rng)?;
        let [_, h, w, _] = a.shape()[..] else {
            return Err(Error::Input("sampler must return [n, h, w, 3]".into()));
        };
        let s = scales.unwrap_or_else(|| default_scales(h));
        used_scales = s.min(max_scales(h.min(w)));
        let per = h * w * 3;
        for i in 0..k {
            sum += ms_ssim(
                &a.data()[i * per..(i + 1) * per],
                &b.data()[i * per..(i + 1) * per],
                h,
                w,
                s,
            )?;
        }
        done += k;
    }
    Ok((sum / pairs as f64, used_scales))
}
