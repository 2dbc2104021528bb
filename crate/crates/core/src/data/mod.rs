//! Annotation ingestion, mask rasterization, resizing, splitting, synthetic
//! data and on-disk dataset layout.

mod io;
mod labelmap;
mod labelme;
mod raster;
mod resize;
mod split;
mod synth;

pub use io::{load_dataset, load_mask_png, load_rgb, save_dataset, save_mask_png, save_rgb_png, DatasetManifest};
pub use labelmap::LabelMap;
pub use labelme::{parse_annotation_file, parse_annotation_str, Annotation, LabelPolicy, Shape};
pub use raster::{rasterize, LabeledPolygon, RasterWarning};
pub use resize::{resize_image_bilinear, resize_mask_nearest, resize_pair};
pub use split::split_dataset;
pub use synth::{class_colour, synth_generate, ShapeClass, SMALL_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split tag {s:?}"))),
        }
    }
}

/// One image with its index mask. `image` is `[3,H,W]` planar RGB in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub split: Split,
}

impl SegmentationSample {
    pub fn new(id: impl Into<String>, height: usize, width: usize, image: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        let id = id.into();
        if image.len() != 3 * height * width || mask.len() != height * width {
            return Err(Error::Dataset(format!(
                "sample {id}: image has {} values and mask {} for {height}x{width}",
                image.len(),
                mask.len()
            )));
        }
        Ok(Self {
            id,
            height,
            width,
            image,
            mask,
            split: Split::Train,
        })
    }

    pub fn image_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[1, 3, self.height, self.width], self.image.clone())
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.mask.iter().find(|&&v| v as usize >= classes) {
            Some(&v) => Err(Error::LabelOutOfRange {
                label: v as usize,
                classes,
            }),
            None => Ok(()),
        }
    }
}

/// Stacks samples into a `[N,3,H,W]` batch and a flat `[N,H,W]` mask.
pub fn stack_batch(samples: &[&SegmentationSample]) -> Result<(Tensor, Vec<u8>)> {
    let first = samples.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut img = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut mask = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::Dataset(format!(
                "sample {} is {}x{}, batch is {h}x{w}",
                s.id, s.height, s.width
            )));
        }
        img.extend_from_slice(&s.image);
        mask.extend_from_slice(&s.mask);
    }
    Ok((Tensor::new(&[samples.len(), 3, h, w], img)?, mask))
}
