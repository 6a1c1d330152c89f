//! Panel figures, heatmap exports and sample grids.

use std::sync::OnceLock;

use coloc_autograd::Tensor;
use image::{GrayImage, Rgb, RgbImage};

use crate::data::{to_rgb8, unit_to_u8, AnnotatedImage};
use crate::error::{Error, Result};
use crate::localization::BBox;
use crate::saliency::SaliencyMap;

pub const PREDICTION_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const GROUND_TRUTH_COLOR: Rgb<u8> = Rgb([0, 0, 255]);
pub const OVERLAY_ALPHA: f64 = 0.5;

/// 256-entry blue-cyan-yellow-red table.
pub fn jet_table() -> &'static [[u8; 3]; 256] {
    static TABLE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|i| {
            let t = i as f64 / 255.0;
            let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
            [ch(3.0), ch(2.0), ch(1.0)]
        })
    })
}

pub fn heatmap_gray(map: &SaliencyMap) -> GrayImage {
    GrayImage::from_raw(map.width as u32, map.height as u32, map.to_gray8())
        .expect("buffer matches dimensions")
}

pub fn heatmap_color(map: &SaliencyMap) -> RgbImage {
    let table = jet_table();
    let data = map
        .to_gray8()
        .iter()
        .flat_map(|v| table[*v as usize])
        .collect();
    RgbImage::from_raw(map.width as u32, map.height as u32, data)
        .expect("buffer matches dimensions")
}

/// One-pixel rectangle outline along the box's border pixels.
pub fn draw_box(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if b.x_min >= w || b.y_min >= h {
        return;
    }
    let (x1, y1) = (b.x_max.min(w) - 1, b.y_max.min(h) - 1);
    for x in b.x_min..=x1 {
        img.put_pixel(x as u32, b.y_min as u32, color);
        img.put_pixel(x as u32, y1 as u32, color);
    }
    for y in b.y_min..=y1 {
        img.put_pixel(b.x_min as u32, y as u32, color);
        img.put_pixel(x1 as u32, y as u32, color);
    }
}

/// Input with boxes, colored heatmap, and heatmap blended over the input,
/// side by side.
pub fn panel(image: &AnnotatedImage, map: &SaliencyMap, prediction: &BBox) -> Result<RgbImage> {
    if (map.height, map.width) != (image.height, image.width) {
        return Err(Error::Input(format!(
            "heatmap {}x{} does not match image {} ({}x{})",
            map.width, map.height, image.image_id, image.width, image.height
        )));
    }
    let (w, h) = (image.width as u32, image.height as u32);
    let input = to_rgb8(image);
    let heat = heatmap_color(map);
    let mut boxed = input.clone();
    if let Some(gt) = &image.gt_box {
        draw_box(&mut boxed, gt, GROUND_TRUTH_COLOR);
    }
    draw_box(&mut boxed, prediction, PREDICTION_COLOR);
    let mut out = RgbImage::new(3 * w, h);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (input.get_pixel(x, y), heat.get_pixel(x, y));
            let blend = Rgb(std::array::from_fn(|c| {
                ((1.0 - OVERLAY_ALPHA) * a[c] as f64 + OVERLAY_ALPHA * b[c] as f64).round() as u8
            }));
            out.put_pixel(x, y, *boxed.get_pixel(x, y));
            out.put_pixel(w + x, y, *b);
            out.put_pixel(2 * w + x, y, blend);
        }
    }
    Ok(out)
}

/// Tiles `[n, h, w, 3]` images in `[-1, 1]` into rows of `cols`.
pub fn sample_grid(images: &Tensor<f32>, cols: usize) -> Result<RgbImage> {
    let [n, h, w, 3] = images.shape()[..] else {
        return Err(Error::Input(format!(
            "expected [n, h, w, 3] samples, got {:?}",
            images.shape()
        )));
    };
    if n == 0 || cols == 0 {
        return Err(Error::Input(
            "sample grid needs at least one image and column".into(),
        ));
    }
    let rows = n.div_ceil(cols);
    let mut out = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    for (i, img) in images.data().chunks_exact(h * w * 3).enumerate() {
        let (oy, ox) = ((i / cols) * h, (i % cols) * w);
        for (p, px) in img.chunks_exact(3).enumerate() {
            let rgb = Rgb([unit_to_u8(px[0]), unit_to_u8(px[1]), unit_to_u8(px[2])]);
            out.put_pixel((ox + p % w) as u32, (oy + p / w) as u32, rgb);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_endpoints() {
        let t = jet_table();
        assert_eq!(t[0], [0, 0, 128]);
        assert_eq!(t[255], [128, 0, 0]);
    }

    #[test]
    fn panel_draws_both_boxes() {
        let mut img = AnnotatedImage::from_rgb8(
            "a",
            16,
            16,
            &[128; 16 * 16 * 3],
            Some(BBox::new(1, 1, 9, 9)),
        );
        img.gt_box = Some(BBox::new(1, 1, 9, 9));
        let map = SaliencyMap::from_values(16, 16, vec![0.5; 256]);
        let p = panel(&img, &map, &BBox::new(4, 4, 14, 14)).unwrap();
        assert_eq!(p.dimensions(), (48, 16));
        assert_eq!(*p.get_pixel(1, 1), GROUND_TRUTH_COLOR);
        assert_eq!(*p.get_pixel(13, 13), PREDICTION_COLOR);
        assert_eq!(*p.get_pixel(16, 0), Rgb(jet_table()[128]));
    }

    #[test]
    fn grid_layout() {
        let t = Tensor::from_fn(vec![3, 2, 2, 3], |i| if i < 12 { 1.0 } else { -1.0 });
        let g = sample_grid(&t, 2).unwrap();
        assert_eq!(g.dimensions(), (4, 4));
        assert_eq!(*g.get_pixel(0, 0), Rgb([255, 255, 255]));
        assert_eq!(*g.get_pixel(2, 0), Rgb([0, 0, 0]));
        assert_eq!(*g.get_pixel(3, 3), Rgb([0, 0, 0]));
    }
}
