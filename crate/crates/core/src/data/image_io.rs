use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use super::AnnotatedImage;
use crate::error::{Error, Result};

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Decodes any supported file as RGB, converting grayscale.
pub fn load_image(path: &Path, image_id: impl Into<String>) -> Result<AnnotatedImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(AnnotatedImage::from_rgb8(
        image_id,
        h as usize,
        w as usize,
        rgb.as_raw(),
        None,
    ))
}

/// All PNG/JPEG files of a directory, sorted by file name, keyed by stem.
/// Unreadable files are reported separately instead of failing the batch.
pub fn load_image_dir(dir: &Path) -> Result<(Vec<AnnotatedImage>, Vec<(PathBuf, Error)>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        match load_image(&p, id) {
            Ok(img) => images.push(img),
            Err(e) => failures.push((p, e)),
        }
    }
    Ok((images, failures))
}

pub fn to_rgb8(img: &AnnotatedImage) -> RgbImage {
    RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .expect("buffer matches dimensions")
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
