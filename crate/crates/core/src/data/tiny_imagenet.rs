use std::collections::BTreeMap;
use std::path::Path;

use super::image_io::load_image;
use super::specs::{wordnet_alias, DatasetSpec};
use super::{AnnotatedImage, Dataset};
use crate::error::{Error, Result};
use crate::localization::BBox;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn lower(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Maps each subcategory name to its WordNet id among the dataset's classes.
fn resolve_wnids(spec: &DatasetSpec, root: &Path) -> Result<Vec<(String, String)>> {
    let wnids: Vec<String> = read(&root.join("wnids.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let words_path = root.join("words.txt");
    let mut synonyms: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let words = read(&words_path)?;
    for line in words.lines() {
        let Some((id, names)) = line.split_once('\t') else {
            continue;
        };
        if wnids.iter().any(|w| w == id) {
            synonyms.insert(id, names.split(',').map(lower).collect());
        }
    }
    let mut out = Vec::new();
    for name in spec.subcategory_names {
        let want = wordnet_alias(name).unwrap_or(name);
        let hits: Vec<&str> = synonyms
            .iter()
            .filter(|(_, syn)| syn.iter().any(|s| *s == want))
            .map(|(id, _)| *id)
            .collect();
        match hits[..] {
            [id] => out.push((name.to_string(), id.to_string())),
            [] => {
                return Err(Error::Data(format!(
                    "{}: subcategory {name:?} not found among {} classes",
                    spec.name,
                    wnids.len()
                )))
            }
            _ => {
                return Err(Error::Data(format!(
                    "{}: subcategory {name:?} is ambiguous: {hits:?}",
                    spec.name
                )))
            }
        }
    }
    Ok(out)
}

/// Parses `x0 y0 x1 y1` (inclusive) into a half-open box clipped to 64.
fn parse_box(fields: &[&str], path: &Path, lineno: usize) -> Result<BBox> {
    let bad = || Error::Data(format!("{}:{}: malformed box", path.display(), lineno + 1));
    if fields.len() != 4 {
        return Err(bad());
    }
    let v: Vec<usize> = fields
        .iter()
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let (x0, y0, x1, y1) = (v[0], v[1], (v[2] + 1).min(64), (v[3] + 1).min(64));
    if x0 >= x1 || y0 >= y1 {
        return Err(bad());
    }
    Ok(BBox::new(x0, y0, x1, y1))
}

fn load_annotated(path: &Path, id: String, gt: BBox) -> Result<AnnotatedImage> {
    let mut img = load_image(path, id).map_err(|e| Error::Data(e.to_string()))?;
    if img.height != 64 || img.width != 64 {
        return Err(Error::Data(format!(
            "{}: expected 64x64, got {}x{}",
            path.display(),
            img.width,
            img.height
        )));
    }
    img.gt_box = Some(gt);
    Ok(img)
}

/// Union of a group's subcategories from the standard Tiny ImageNet layout.
/// Training images come from `train/`, test images from `val/`.
pub fn build_tiny_imagenet_group(spec: &DatasetSpec, root: &Path) -> Result<Dataset> {
    let classes = resolve_wnids(spec, root)?;
    let mut train = Vec::new();
    for (_, wnid) in &classes {
        let dir = root.join("train").join(wnid);
        let ann = dir.join(format!("{wnid}_boxes.txt"));
        for (lineno, line) in read(&ann)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Data(format!(
                    "{}:{}: expected 5 fields",
                    ann.display(),
                    lineno + 1
                )));
            }
            let gt = parse_box(&fields[1..], &ann, lineno)?;
            let file = fields[0].trim();
            let id = file
                .rsplit_once('.')
                .map(|(s, _)| s)
                .unwrap_or(file)
                .to_string();
            train.push(load_annotated(&dir.join("images").join(file), id, gt)?);
        }
    }
    let val_ann = root.join("val").join("val_annotations.txt");
    let mut test = Vec::new();
    for (lineno, line) in read(&val_ann)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!(
                "{}:{}: expected 6 fields",
                val_ann.display(),
                lineno + 1
            )));
        }
        if !classes.iter().any(|(_, w)| w == fields[1].trim()) {
            continue;
        }
        let gt = parse_box(&fields[2..], &val_ann, lineno)?;
        let file = fields[0].trim();
        let id = file
            .rsplit_once('.')
            .map(|(s, _)| s)
            .unwrap_or(file)
            .to_string();
        test.push(load_annotated(
            &root.join("val").join("images").join(file),
            id,
            gt,
        )?);
    }
    if train.len() != spec.train_count || test.len() != spec.test_count {
        return Err(Error::Data(format!(
            "{}: found {} train / {} test images, expected {} / {}",
            spec.name,
            train.len(),
            test.len(),
            spec.train_count,
            spec.test_count
        )));
    }
    train.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    test.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let ds = Dataset {
        name: spec.name.to_string(),
        input_size: 64,
        train,
        test,
        has_boxes: true,
    };
    ds.validate()?;
    Ok(ds)
}
