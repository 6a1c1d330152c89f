//! Heatmap to single bounding box: threshold, connected components,
//! largest box.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;

/// Pixel rectangle with inclusive minimum and exclusive maximum corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        debug_assert!(x_min < x_max && y_min < y_max, "empty box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn intersection(&self, other: &BBox) -> usize {
        let w = self
            .x_max
            .min(other.x_max)
            .saturating_sub(self.x_min.max(other.x_min));
        let h = self
            .y_max
            .min(other.y_max)
            .saturating_sub(self.y_min.max(other.y_min));
        w * h
    }

    /// Tightest box around a non-empty set of `(row, col)` pixels.
    pub fn around(pixels: &[(usize, usize)]) -> Option<Self> {
        let (&(r0, c0), rest) = pixels.split_first()?;
        let (mut y0, mut y1, mut x0, mut x1) = (r0, r0, c0, c0);
        for &(r, c) in rest {
            y0 = y0.min(r);
            y1 = y1.max(r);
            x0 = x0.min(c);
            x1 = x1.max(c);
        }
        Some(Self::new(x0, y0, x1 + 1, y1 + 1))
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})-({}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Whether every set pixel of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// How the "largest" box is chosen among components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BoxSelection {
    #[default]
    LargestBoxArea,
    LargestComponent,
}

impl fmt::Display for BoxSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoxSelection::LargestBoxArea => "box_area",
            BoxSelection::LargestComponent => "component_pixels",
        })
    }
}

impl FromStr for BoxSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box_area" => Ok(BoxSelection::LargestBoxArea),
            "component_pixels" => Ok(BoxSelection::LargestComponent),
            _ => Err(Error::Config(format!(
                "box_selection must be box_area or component_pixels, got {s:?}"
            ))),
        }
    }
}

/// Marks pixels at or above `ratio` times the map's maximum. An all-zero
/// (or constant, hence zeroed) map yields an empty mask and `true`.
pub fn binarize(map: &SaliencyMap, ratio: f64) -> (BinaryMask, bool) {
    let max = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if map.degenerate || !(max > 0.0) {
        return (
            BinaryMask::new(map.height, map.width, vec![false; map.values.len()]),
            true,
        );
    }
    let t = ratio * max;
    (
        BinaryMask::new(
            map.height,
            map.width,
            map.values.iter().map(|v| *v >= t).collect(),
        ),
        false,
    )
}

/// Maximal connected sets of true pixels as `(row, col)` lists, ordered by
/// each component's first pixel in raster order.
pub fn connected_components(
    mask: &BinaryMask,
    connectivity: Connectivity,
) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            comp.push((r, c));
            for &(dr, dc) in offsets {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if mask.data[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizeOptions {
    pub ratio: f64,
    pub connectivity: Connectivity,
    pub selection: BoxSelection,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            ratio: 0.2,
            connectivity: Connectivity::Eight,
            selection: BoxSelection::LargestBoxArea,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localization {
    pub bbox: BBox,
    /// The map carried no signal and the full image was returned.
    pub degenerate: bool,
}

/// Index of the winning component; the earliest wins ties.
pub fn select_component(
    components: &[Vec<(usize, usize)>],
    selection: BoxSelection,
) -> Option<usize> {
    let score = |c: &Vec<(usize, usize)>| match selection {
        BoxSelection::LargestBoxArea => BBox::around(c).map(|b| b.area()).unwrap_or(0),
        BoxSelection::LargestComponent => c.len(),
    };
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in components.iter().enumerate() {
        let s = score(c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Exactly one box per map.
pub fn localize(map: &SaliencyMap, opts: &LocalizeOptions) -> Localization {
    let (mask, degenerate) = binarize(map, opts.ratio);
    let full = Localization {
        bbox: BBox::full(map.width, map.height),
        degenerate: true,
    };
    if degenerate {
        return full;
    }
    let comps = connected_components(&mask, opts.connectivity);
    match select_component(&comps, opts.selection) {
        Some(i) => Localization {
            bbox: BBox::around(&comps[i]).expect("components are non-empty"),
            degenerate: false,
        },
        None => full,
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    pub ratio: f64,
    pub degenerate_flag: bool,
}

impl Prediction {
    pub fn new(image_id: impl Into<String>, loc: &Localization, ratio: f64) -> Self {
        Self {
            image_id: image_id.into(),
            x_min: loc.bbox.x_min,
            y_min: loc.bbox.y_min,
            x_max: loc.bbox.x_max,
            y_max: loc.bbox.y_max,
            ratio,
            degenerate_flag: loc.degenerate,
        }
    }

    pub fn bbox(&self) -> Result<BBox> {
        if self.x_min < self.x_max && self.y_min < self.y_max {
            Ok(BBox::new(self.x_min, self.y_min, self.x_max, self.y_max))
        } else {
            Err(Error::Input(format!(
                "prediction for {} has an empty box",
                self.image_id
            )))
        }
    }
}

pub fn write_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn read_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Input(format!("predictions line {}: {e}", i + 1)))
        })
        .collect()
}
