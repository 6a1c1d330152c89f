use std::path::{Path, PathBuf};

use super::{AnnotatedImage, Dataset};
use crate::error::{Error, Result};

pub const CIFAR_CATEGORIES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const RECORD: usize = 1 + 32 * 32 * 3;
const TRAIN_PER_CATEGORY: usize = 5000;
const TEST_PER_CATEGORY: usize = 1000;

fn batch_dir(root: &Path) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Appends the images of `label` from one binary batch file.
fn read_batch(path: &Path, label: u8, split: &str, out: &mut Vec<AnnotatedImage>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of the {RECORD}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("batch");
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Data(format!(
                "{}: record {i} has label {}",
                path.display(),
                rec[0]
            )));
        }
        if rec[0] != label {
            continue;
        }
        // Planar R, G, B to interleaved.
        let planes = &rec[1..];
        let mut rgb = vec![0u8; 32 * 32 * 3];
        for p in 0..32 * 32 {
            for c in 0..3 {
                rgb[p * 3 + c] = planes[c * 1024 + p];
            }
        }
        out.push(AnnotatedImage::from_rgb8(
            format!("{split}-{stem}-{i:05}"),
            32,
            32,
            &rgb,
            None,
        ));
    }
    Ok(())
}

/// One CIFAR-10 category from the binary distribution under `root`.
pub fn build_cifar_category(category: &str, root: &Path) -> Result<Dataset> {
    let want = category.trim().to_ascii_lowercase();
    let label = CIFAR_CATEGORIES
        .iter()
        .position(|c| *c == want)
        .ok_or_else(|| Error::Config(format!("unknown CIFAR-10 category {category:?}")))?
        as u8;
    let dir = batch_dir(root);
    let mut train = Vec::new();
    for k in 1..=5 {
        read_batch(
            &dir.join(format!("data_batch_{k}.bin")),
            label,
            "train",
            &mut train,
        )?;
    }
    let mut test = Vec::new();
    read_batch(&dir.join("test_batch.bin"), label, "test", &mut test)?;
    if train.len() != TRAIN_PER_CATEGORY || test.len() != TEST_PER_CATEGORY {
        return Err(Error::Data(format!(
            "{want}: found {} train / {} test images, expected {TRAIN_PER_CATEGORY} / {TEST_PER_CATEGORY}",
            train.len(),
            test.len()
        )));
    }
    Ok(Dataset {
        name: format!("cifar10-{want}"),
        input_size: 32,
        train,
        test,
        has_boxes: false,
    })
}
