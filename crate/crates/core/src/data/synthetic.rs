use rand::Rng;

use super::{AnnotatedImage, Dataset};
use crate::error::{Error, Result};
use crate::localization::BBox;

/// `n` images of dark noise (`[-1, -0.6]`) with one bright square
/// (`[0.6, 1]`) at a uniform position; `gt_box` is the square exactly.
pub fn build_synthetic_square_dataset<R: Rng + ?Sized>(
    n: usize,
    size: usize,
    square: usize,
    rng: &mut R,
) -> Result<Vec<AnnotatedImage>> {
    synthesize("square", n, size, square, rng)
}

fn synthesize<R: Rng + ?Sized>(
    prefix: &str,
    n: usize,
    size: usize,
    square: usize,
    rng: &mut R,
) -> Result<Vec<AnnotatedImage>> {
    if square == 0 || square >= size {
        return Err(Error::Config(format!(
            "square side must lie in [1, {size}), got {square}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = rng.random_range(0..=size - square);
        let y0 = rng.random_range(0..=size - square);
        let mut pixels = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let inside = (y0..y0 + square).contains(&y) && (x0..x0 + square).contains(&x);
                for _ in 0..3 {
                    pixels.push(if inside {
                        rng.random_range(0.6f32..=1.0)
                    } else {
                        rng.random_range(-1.0f32..=-0.6)
                    });
                }
            }
        }
        out.push(AnnotatedImage {
            image_id: format!("{prefix}-{i:05}"),
            height: size,
            width: size,
            pixels,
            gt_box: Some(BBox::new(x0, y0, x0 + square, y0 + square)),
        });
    }
    Ok(out)
}

/// Train and test splits with disjoint ids, drawn from one generator.
pub fn synthetic_dataset<R: Rng + ?Sized>(
    train: usize,
    test: usize,
    size: usize,
    square: usize,
    rng: &mut R,
) -> Result<Dataset> {
    Ok(Dataset {
        name: "synthetic".into(),
        input_size: size,
        train: synthesize("train", train, size, square, rng)?,
        test: synthesize("test", test, size, square, rng)?,
        has_boxes: true,
    })
}
