//! Resampling with half-pixel centre alignment.

use super::SegmentationSample;
use crate::error::{Error, Result};

fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Bilinear resize of planar `[C,H,W]` data; edges are clamped.
pub fn resize_image_bilinear(data: &[f32], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f32> {
    if (h, w) == (th, tw) {
        return data.to_vec();
    }
    let (sy, sx) = (h as f64 / th as f64, w as f64 / tw as f64);
    let taps = |n: usize, t: usize, s: f64| -> Vec<(usize, usize, f32)> {
        (0..t)
            .map(|d| {
                let f = src_coord(d, s).clamp(0.0, (n - 1) as f64);
                let i0 = f.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, (f - i0 as f64) as f32)
            })
            .collect()
    };
    let ty = taps(h, th, sy);
    let tx = taps(w, tw, sx);
    let mut out = vec![0.0f32; c * th * tw];
    for ch in 0..c {
        let src = &data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * th * tw..(ch + 1) * th * tw];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * tw + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Nearest-neighbour resize of an `H×W` label mask.
pub fn resize_mask_nearest(mask: &[u8], h: usize, w: usize, th: usize, tw: usize) -> Vec<u8> {
    if (h, w) == (th, tw) {
        return mask.to_vec();
    }
    let idx = |d: usize, n: usize, t: usize| (((d as f64 + 0.5) * n as f64 / t as f64).floor() as usize).min(n - 1);
    let xs: Vec<usize> = (0..tw).map(|x| idx(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let row = &mask[idx(y, h, th) * w..][..w];
        out.extend(xs.iter().map(|&x| row[x]));
    }
    out
}

/// Resizes image bilinearly and mask by nearest neighbour.
pub fn resize_pair(sample: &SegmentationSample, th: usize, tw: usize) -> Result<SegmentationSample> {
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(format!("resize target {th}x{tw}")));
    }
    let (h, w) = (sample.height, sample.width);
    Ok(SegmentationSample {
        id: sample.id.clone(),
        height: th,
        width: tw,
        image: resize_image_bilinear(&sample.image, 3, h, w, th, tw),
        mask: resize_mask_nearest(&sample.mask, h, w, th, tw),
        split: sample.split,
    })
}
