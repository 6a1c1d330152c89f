//! Class activation maps from the discriminator's pooled features.

use coloc_autograd::{Float, Tensor};

use crate::error::{Error, Result};
use crate::models::{DiscriminatorReadout, Gan};

/// A single-channel map at feature or input resolution, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// A map min-max normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// `(min, max)` before normalization.
    pub raw_range: (f64, f64),
    /// The raw map was constant; `values` are all zero.
    pub degenerate: bool,
}

impl SaliencyMap {
    /// Wraps values already in `[0, 1]`.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            height,
            width,
            values,
            raw_range: (lo, hi),
            degenerate: false,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// 8-bit grayscale export: `round(255 · v)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Whitespace-separated rows, for inspection and tests.
    pub fn to_text_grid(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|c| format!("{:.6}", self.get(r, c)))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// `Σ_k w_k · A_k` for one image at feature resolution.
pub fn raw_cam<T: Float>(readout: &DiscriminatorReadout<T>, image_index: usize) -> Result<RawMap> {
    let [n, h, w, k] = readout.feature_maps.shape()[..] else {
        return Err(Error::Input("feature maps must be [n, h, w, k]".into()));
    };
    if image_index >= n {
        return Err(Error::Input(format!(
            "image index {image_index} out of range for {n} images"
        )));
    }
    if readout.gap_weights.numel() != k {
        return Err(Error::Input(format!(
            "{} pooling weights for {k} feature maps",
            readout.gap_weights.numel()
        )));
    }
    let wts: Vec<f64> = readout
        .gap_weights
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let base = image_index * h * w * k;
    let feats = &readout.feature_maps.data()[base..base + h * w * k];
    let values = feats
        .chunks_exact(k)
        .map(|px| px.iter().zip(&wts).map(|(a, b)| a.as_f64() * b).sum())
        .collect();
    Ok(RawMap {
        height: h,
        width: w,
        values,
    })
}

/// Bilinear resize with pixel-center alignment (corners not aligned).
pub fn upsample_bilinear(raw: &RawMap, out_h: usize, out_w: usize) -> RawMap {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, raw.height);
    let xs = axis(out_w, raw.width);
    let at = |r: usize, c: usize| raw.values[r * raw.width + c];
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            values.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    RawMap {
        height: out_h,
        width: out_w,
        values,
    }
}

/// `(v - min) / (max - min)`; a constant map becomes all zeros and is
/// flagged degenerate.
pub fn normalize(raw: &RawMap) -> SaliencyMap {
    let lo = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let degenerate = !(span > 0.0) || !span.is_finite();
    let values = if degenerate {
        vec![0.0; raw.values.len()]
    } else {
        raw.values.iter().map(|v| (v - lo) / span).collect()
    };
    SaliencyMap {
        height: raw.height,
        width: raw.width,
        values,
        raw_range: (lo, hi),
        degenerate,
    }
}

/// Heatmap of one image at `out_size × out_size`.
pub fn compute_cam<T: Float>(
    readout: &DiscriminatorReadout<T>,
    image_index: usize,
    out_size: usize,
) -> Result<SaliencyMap> {
    let raw = raw_cam(readout, image_index)?;
    Ok(normalize(&upsample_bilinear(&raw, out_size, out_size)))
}

const CAM_CHUNK: usize = 64;

/// One heatmap per image of `[n, s, s, 3]`, with the discriminator in
/// inference mode.
pub fn cam_batch<T: Float>(gan: &Gan<T>, images: &Tensor<T>) -> Result<Vec<SaliencyMap>> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::Input(format!(
            "expected [n, h, w, 3] images, got {shape:?}"
        )));
    }
    let (n, per) = (shape[0], shape[1..].iter().product::<usize>());
    let size = shape[1];
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + CAM_CHUNK).min(n);
        let mut dims = shape.to_vec();
        dims[0] = end - start;
        let chunk = Tensor::new(dims, images.data()[start * per..end * per].to_vec());
        let readout = gan.discriminator_forward(&chunk)?;
        for i in 0..end - start {
            out.push(compute_cam(&readout, i, size)?);
        }
        start = end;
    }
    Ok(out)
}
