//! Brute-force reference implementations, written independently of the
//! library code they check.

#![allow(dead_code)]

use coloc_core::BBox;

/// Components by recursive flood fill, each listed in raster order, the
/// list ordered by first raster pixel.
pub fn flood_fill_components(
    mask: &[bool],
    h: usize,
    w: usize,
    eight: bool,
) -> Vec<Vec<(usize, usize)>> {
    fn fill(
        mask: &[bool],
        label: &mut [usize],
        h: usize,
        w: usize,
        eight: bool,
        r: usize,
        c: usize,
        id: usize,
    ) {
        label[r * w + c] = id;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if mask[nr * w + nc] && label[nr * w + nc] == 0 {
                    fill(mask, label, h, w, eight, nr, nc, id);
                }
            }
        }
    }
    let mut label = vec![0usize; h * w];
    let mut next = 0;
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] && label[r * w + c] == 0 {
                next += 1;
                fill(mask, &mut label, h, w, eight, r, c, next);
            }
        }
    }
    (1..=next)
        .map(|id| {
            let mut px = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if label[r * w + c] == id {
                        px.push((r, c));
                    }
                }
            }
            px
        })
        .collect()
}

/// The box a single-box localizer should return for `mask`: the tightest
/// box of each component, largest area first, earliest component on ties;
/// the full image when the mask is empty.
pub fn best_box_oracle(mask: &[bool], h: usize, w: usize) -> BBox {
    let comps = flood_fill_components(mask, h, w, true);
    let mut best: Option<(usize, BBox)> = None;
    for comp in &comps {
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        for r in 0..h {
            for c in 0..w {
                if comp.contains(&(r, c)) {
                    x0 = x0.min(c);
                    y0 = y0.min(r);
                    x1 = x1.max(c + 1);
                    y1 = y1.max(r + 1);
                }
            }
        }
        let area = (x1 - x0) * (y1 - y0);
        if best.map_or(true, |(a, _)| area > a) {
            best = Some((area, BBox::new(x0, y0, x1, y1)));
        }
    }
    best.map(|(_, b)| b).unwrap_or(BBox::new(0, 0, w, h))
}

/// IoU by testing membership of every pixel of a `grid × grid` canvas.
pub fn iou_by_counting(a: &BBox, b: &BBox, grid: usize) -> f64 {
    let inside = |bx: &BBox, x: usize, y: usize| {
        x >= bx.x_min && x < bx.x_max && y >= bx.y_min && y < bx.y_max
    };
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..grid {
        for x in 0..grid {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    inter as f64 / union as f64
}

/// `Σ_k w_k · A[i, r, c, k]` evaluated one location at a time.
pub fn cam_pixel(
    features: &[f64],
    shape: [usize; 4],
    weights: &[f64],
    i: usize,
    r: usize,
    c: usize,
) -> f64 {
    let [_, h, w, k] = shape;
    let mut acc = 0.0;
    for ch in 0..k {
        acc += weights[ch] * features[((i * h + r) * w + c) * k + ch];
    }
    acc
}

/// Largest singular value by full SVD.
pub fn top_singular_value(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().copied().fold(0.0, f64::max)
}
