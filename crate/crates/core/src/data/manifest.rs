//! Tab-separated manifests: `image_id`, path, `x0,y0,x1,y1` or `-`, split.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image_io::{load_image, save_rgb_png, to_rgb8};
use super::Dataset;
use crate::error::{Error, Result};
use crate::localization::BBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub gt_box: Option<BBox>,
    pub split: Split,
}

fn parse_box(s: &str) -> Option<BBox> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    match v[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Some(BBox::new(x0, y0, x1, y1)),
        _ => None,
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::Data(format!("{}:{}: {why}", path.display(), lineno + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let gt_box = match f[2].trim() {
            "-" => None,
            s => Some(parse_box(s).ok_or_else(|| bad("malformed box"))?),
        };
        out.push(ManifestEntry {
            image_id: f[0].trim().to_string(),
            path: PathBuf::from(f[1].trim()),
            gt_box,
            split: f[3]
                .trim()
                .parse()
                .map_err(|_| bad("split must be train or test"))?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let b = match e.gt_box {
            Some(b) => format!("{},{},{},{}", b.x_min, b.y_min, b.x_max, b.y_max),
            None => "-".into(),
        };
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.image_id,
            e.path.display(),
            b,
            e.split
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads every manifest entry; all images must share one square size.
pub fn load_manifest_dataset(path: &Path) -> Result<Dataset> {
    let entries = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &entries {
        let file = if e.path.is_absolute() {
            e.path.clone()
        } else {
            base.join(&e.path)
        };
        let mut img =
            load_image(&file, e.image_id.clone()).map_err(|err| Error::Data(err.to_string()))?;
        img.gt_box = e.gt_box;
        match e.split {
            Split::Train => train.push(img),
            Split::Test => test.push(img),
        }
    }
    let size = train
        .first()
        .or(test.first())
        .map(|i| i.height)
        .ok_or_else(|| Error::Data(format!("{}: empty manifest", path.display())))?;
    let has_boxes = test.iter().all(|i| i.gt_box.is_some()) && !test.is_empty();
    let ds = Dataset {
        name: path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("manifest")
            .to_string(),
        input_size: size,
        train,
        test,
        has_boxes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `images/<id>.png` plus `manifest.tsv` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for (split, set) in [(Split::Train, &ds.train), (Split::Test, &ds.test)] {
        for img in set {
            let rel = PathBuf::from("images").join(format!("{}.png", img.image_id));
            save_rgb_png(&to_rgb8(img), &dir.join(&rel))?;
            entries.push(ManifestEntry {
                image_id: img.image_id.clone(),
                path: rel,
                gt_box: img.gt_box,
                split,
            });
        }
    }
    let path = dir.join("manifest.tsv");
    write_manifest(&path, &entries)?;
    Ok(path)
}
