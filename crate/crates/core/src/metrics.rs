//! Per-class Dice similarity coefficient over hard label masks.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// How per-class confusion counts are combined across images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum TP/FP/FN over the whole set, then one DSC per class.
    #[default]
    Dataset,
    /// DSC per image (only where the class occurs in pred or truth), then averaged.
    PerImage,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Dataset => "dataset",
            Aggregation::PerImage => "per-image",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(Aggregation::Dataset),
            "per-image" | "per_image" => Ok(Aggregation::PerImage),
            _ => Err(Error::InvalidArgument(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn dsc(&self) -> Option<f64> {
        let den = 2 * self.tp + self.fp + self.fn_;
        (den > 0).then(|| 2.0 * self.tp as f64 / den as f64)
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Streams image masks; shards can be merged in any fixed order.
#[derive(Debug, Clone)]
pub struct DscAccumulator {
    classes: usize,
    total: Vec<Confusion>,
    per_image_sum: Vec<f64>,
    per_image_count: Vec<u64>,
    images: usize,
}

impl DscAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            total: vec![Confusion::default(); classes],
            per_image_sum: vec![0.0; classes],
            per_image_count: vec![0; classes],
            images: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// Adds one image (flat `H·W` masks).
    pub fn add_image(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(
                "evaluate_dsc",
                format!("prediction has {} pixels, truth has {}", pred.len(), gt.len()),
            ));
        }
        let k = self.classes;
        let mut conf = vec![Confusion::default(); k];
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(Error::LabelOutOfRange {
                    label: p.max(g),
                    classes: k,
                });
            }
            if p == g {
                conf[p].tp += 1;
            } else {
                conf[p].fp += 1;
                conf[g].fn_ += 1;
            }
        }
        for (c, cf) in conf.iter().enumerate() {
            self.total[c].add(cf);
            if let Some(d) = cf.dsc() {
                self.per_image_sum[c] += d;
                self.per_image_count[c] += 1;
            }
        }
        self.images += 1;
        Ok(())
    }

    /// Adds `n` images stored back to back.
    pub fn add_batch(&mut self, pred: &[u8], gt: &[u8], n: usize) -> Result<()> {
        if n == 0 || pred.len() != gt.len() || !pred.len().is_multiple_of(n) {
            return Err(Error::shape(
                "evaluate_dsc",
                format!("{} / {} labels for {n} images", pred.len(), gt.len()),
            ));
        }
        let hw = pred.len() / n;
        for (p, g) in pred.chunks(hw).zip(gt.chunks(hw)) {
            self.add_image(p, g)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DscAccumulator) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "evaluate_dsc",
                format!("merging {} classes into {}", other.classes, self.classes),
            ));
        }
        for c in 0..self.classes {
            self.total[c].add(&other.total[c]);
            self.per_image_sum[c] += other.per_image_sum[c];
            self.per_image_count[c] += other.per_image_count[c];
        }
        self.images += other.images;
        Ok(())
    }

    /// Builds the report; `names[k]` labels class `k` (default `class{k}`).
    pub fn report(&self, names: Option<&[String]>, aggregation: Aggregation) -> Result<ClassReport> {
        if let Some(n) = names {
            if n.len() != self.classes {
                return Err(Error::InvalidArgument(format!(
                    "{} class names for {} classes",
                    n.len(),
                    self.classes
                )));
            }
        }
        let mut classes = Vec::with_capacity(self.classes.saturating_sub(1));
        for c in 1..self.classes {
            let conf = self.total[c];
            let dsc = match aggregation {
                Aggregation::Dataset => conf.dsc(),
                Aggregation::PerImage => {
                    (self.per_image_count[c] > 0).then(|| self.per_image_sum[c] / self.per_image_count[c] as f64)
                }
            };
            classes.push(ClassScore {
                index: c,
                name: names.map_or_else(|| format!("class{c}"), |n| n[c].clone()),
                dsc,
                gt_pixels: conf.tp + conf.fn_,
                pred_pixels: conf.tp + conf.fp,
                confusion: conf,
            });
        }
        let scored: Vec<f64> = classes.iter().filter_map(|c| c.dsc).collect();
        let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
        Ok(ClassReport {
            aggregation,
            images: self.images,
            classes,
            mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub index: usize,
    pub name: String,
    /// `None` when the class has no support in prediction or truth.
    pub dsc: Option<f64>,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    pub confusion: Confusion,
}

/// Foreground per-class DSC; background is never reported.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub aggregation: Aggregation,
    pub images: usize,
    pub classes: Vec<ClassScore>,
    /// Mean over the classes that have a DSC; `None` if none do.
    pub mean: Option<f64>,
}

impl ClassReport {
    pub fn dsc(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).and_then(|c| c.dsc)
    }

    pub fn dsc_by_index(&self, index: usize) -> Option<f64> {
        self.classes.iter().find(|c| c.index == index).and_then(|c| c.dsc)
    }

    /// Names of classes excluded for lack of support.
    pub fn excluded(&self) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| c.dsc.is_none())
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Machine-readable form. Keys, in order: `aggregation`, `images`,
    /// `mean_dsc`, then per class `class.<index>.{name,dsc,gt_pixels,pred_pixels,tp,fp,fn}`,
    /// then `excluded` (comma separated). Missing values are written as `none`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |d| format!("{d:.6}"));
        let _ = writeln!(s, "aggregation={}", self.aggregation.name());
        let _ = writeln!(s, "images={}", self.images);
        let _ = writeln!(s, "mean_dsc={}", fmt(self.mean));
        for c in &self.classes {
            let p = format!("class.{}", c.index);
            let _ = writeln!(s, "{p}.name={}", c.name);
            let _ = writeln!(s, "{p}.dsc={}", fmt(c.dsc));
            let _ = writeln!(s, "{p}.gt_pixels={}", c.gt_pixels);
            let _ = writeln!(s, "{p}.pred_pixels={}", c.pred_pixels);
            let _ = writeln!(s, "{p}.tp={}", c.confusion.tp);
            let _ = writeln!(s, "{p}.fp={}", c.confusion.fp);
            let _ = writeln!(s, "{p}.fn={}", c.confusion.fn_);
        }
        let _ = writeln!(s, "excluded={}", self.excluded().join(","));
        s
    }
}

impl fmt::Display for ClassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "DSC ({} aggregation, {} images)",
            self.aggregation.name(),
            self.images
        )?;
        writeln!(
            f,
            "{:<3} {:<24} {:>8} {:>10} {:>10}",
            "k", "class", "dsc", "gt_px", "pred_px"
        )?;
        for c in &self.classes {
            let d = c.dsc.map_or_else(|| "no support".to_string(), |d| format!("{d:.4}"));
            writeln!(
                f,
                "{:<3} {:<24} {:>8} {:>10} {:>10}",
                c.index, c.name, d, c.gt_pixels, c.pred_pixels
            )?;
        }
        match self.mean {
            Some(m) => writeln!(f, "mean foreground DSC: {m:.4}")?,
            None => writeln!(f, "mean foreground DSC: none")?,
        }
        let ex = self.excluded();
        if !ex.is_empty() {
            writeln!(f, "excluded (no support): {}", ex.join(", "))?;
        }
        Ok(())
    }
}

/// Dataset-level report for `n` stacked masks.
pub fn evaluate_dsc(pred: &[u8], gt: &[u8], n: usize, classes: usize) -> Result<ClassReport> {
    let mut acc = DscAccumulator::new(classes);
    acc.add_batch(pred, gt, n)?;
    acc.report(None, Aggregation::Dataset)
}
