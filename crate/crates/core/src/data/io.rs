//! PNG/JPEG I/O and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.tsv`, `labels.txt` (a label map),
//! `images/<id>.png` and `masks/<id>.png`. The manifest starts with
//! `#key=value` header lines (`num_classes`, optionally `height`/`width`),
//! then one tab-separated record per sample: id, image path, mask path,
//! split tag. Paths are relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};

use super::labelmap::LabelMap;
use super::{SegmentationSample, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LABELS_FILE: &str = "labels.txt";

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an 8-bit image as planar RGB in [0,1]; grey is replicated.
pub fn load_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(img_err(path))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Ok((h, w, out))
}

pub fn save_rgb_png(path: &Path, h: usize, w: usize, planar: &[f32]) -> Result<()> {
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            px[c] = (planar[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(img_err(path))
}

/// Single-channel 8-bit PNG holding raw class indices.
pub fn save_mask_png(path: &Path, h: usize, w: usize, mask: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, mask.to_vec())
        .ok_or_else(|| Error::Dataset(format!("mask buffer does not match {h}x{w}")))?;
    img.save(path).map_err(img_err(path))
}

pub fn load_mask_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(img_err(path))?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::Dataset(format!(
            "{}: mask must be single-channel 8-bit, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let g = img.into_luma8();
    Ok((g.height() as usize, g.width() as usize, g.into_raw()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("#num_classes={}\n", self.num_classes);
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                r.image.display(),
                r.mask.display(),
                r.split.name()
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut num_classes = None;
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some(v) = h.trim().strip_prefix("num_classes=") {
                    num_classes = Some(
                        v.parse()
                            .map_err(|_| Error::Dataset(format!("manifest: bad num_classes {v:?}")))?,
                    );
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::Dataset(format!(
                    "manifest line {}: expected 4 tab-separated fields",
                    ln + 1
                )));
            }
            records.push(ManifestRecord {
                id: f[0].to_string(),
                image: PathBuf::from(f[1]),
                mask: PathBuf::from(f[2]),
                split: f[3].parse()?,
            });
        }
        let num_classes = num_classes.ok_or_else(|| Error::Dataset("manifest lacks #num_classes".into()))?;
        Ok(Self { num_classes, records })
    }
}

/// Writes samples (sorted by id) with the layout described above.
pub fn save_dataset(dir: &Path, samples: &[SegmentationSample], labels: &LabelMap) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut order: Vec<&SegmentationSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut records = Vec::with_capacity(order.len());
    for s in order {
        s.check_classes(labels.len())?;
        let image = PathBuf::from("images").join(format!("{}.png", s.id));
        let mask = PathBuf::from("masks").join(format!("{}.png", s.id));
        save_rgb_png(&dir.join(&image), s.height, s.width, &s.image)?;
        save_mask_png(&dir.join(&mask), s.height, s.width, &s.mask)?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            image,
            mask,
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        num_classes: labels.len(),
        records,
    };
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    fs::write(dir.join(LABELS_FILE), labels.to_text())?;
    Ok(manifest)
}

/// Loads a dataset from its directory (or its manifest path). Returns the
/// label map (default names if `labels.txt` is absent) and the samples in
/// manifest order.
pub fn load_dataset(path: &Path) -> Result<(LabelMap, Vec<SegmentationSample>)> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text =
        fs::read_to_string(&manifest_path).map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let manifest = DatasetManifest::parse(&text)?;
    let labels = if root.join(LABELS_FILE).exists() {
        LabelMap::load(&root.join(LABELS_FILE))?
    } else {
        let d = LabelMap::default();
        if d.len() == manifest.num_classes {
            d
        } else {
            LabelMap::from_names((0..manifest.num_classes).map(|i| format!("class{i}")).collect())?
        }
    };
    if labels.len() != manifest.num_classes {
        return Err(Error::Dataset(format!(
            "label map has {} classes, manifest says {}",
            labels.len(),
            manifest.num_classes
        )));
    }
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let (h, w, image) = load_rgb(&root.join(&r.image))?;
        let (mh, mw, mask) = load_mask_png(&root.join(&r.mask))?;
        if (h, w) != (mh, mw) {
            return Err(Error::Dataset(format!("{}: image {h}x{w} but mask {mh}x{mw}", r.id)));
        }
        let mut s = SegmentationSample::new(r.id.clone(), h, w, image, mask)?;
        s.check_classes(manifest.num_classes)?;
        s.split = r.split;
        samples.push(s);
    }
    Ok((labels, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = synth_generate(3, 16, 24, 5, 10).unwrap();
        s[1].split = Split::Test;
        let m = save_dataset(dir.path(), &s, &LabelMap::default()).unwrap();
        assert_eq!(m.records.len(), 3);
        let (labels, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(labels, LabelMap::default());
        assert_eq!(back, s);
    }

    #[test]
    fn grey_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        GrayImage::from_raw(2, 1, vec![0, 255]).unwrap().save(&p).unwrap();
        let (h, w, d) = load_rgb(&p).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(d, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rgb_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_rgb_png(&p, 1, 1, &[0.0, 0.0, 0.0]).unwrap();
        assert!(load_mask_png(&p).is_err());
    }
}
