//! Seeded synthetic radiograph-like scenes with exact masks.
//!
//! Each image has a textured background, one or two large blobs (classes 1
//! and 2), medium rectangles and ellipses (classes 4 to 7) and small discs
//! (classes 3, 8, 9) each covering under 1% of the image. Every class has a
//! fixed colour; shapes are tinted slightly and Gaussian noise is added.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SegmentationSample;
use crate::error::{Error, Result};

/// Classes generated as small targets.
pub const SMALL_CLASSES: [u8; 3] = [3, 8, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Large,
    Medium,
    Small,
}

impl ShapeClass {
    pub fn of(class: u8) -> Self {
        match class {
            1 | 2 => ShapeClass::Large,
            c if SMALL_CLASSES.contains(&c) => ShapeClass::Small,
            _ => ShapeClass::Medium,
        }
    }
}

const PALETTE: [[f32; 3]; 10] = [
    [0.0, 0.0, 0.0],
    [0.92, 0.90, 0.80],
    [0.62, 0.48, 0.30],
    [0.95, 0.25, 0.25],
    [0.20, 0.85, 0.95],
    [0.95, 0.80, 0.10],
    [0.20, 0.35, 0.95],
    [0.85, 0.20, 0.90],
    [0.15, 0.95, 0.30],
    [1.00, 0.55, 0.05],
];

/// Display colour of a class index (RGB in [0,1]).
pub fn class_colour(class: u8) -> [f32; 3] {
    match PALETTE.get(class as usize) {
        Some(c) => *c,
        // Beyond the palette: spread hues deterministically.
        None => {
            let t = class as f32 * 0.618_034;
            let f = |o: f32| 0.5 + 0.45 * (std::f32::consts::TAU * (t + o)).sin();
            [f(0.0), f(0.33), f(0.67)]
        }
    }
}

struct Canvas {
    h: usize,
    w: usize,
    mask: Vec<u8>,
    rgb: Vec<[f32; 3]>,
}

impl Canvas {
    fn paint(&mut self, class: u8, tint: f32, inside: impl Fn(f64, f64) -> bool) -> usize {
        let c = class_colour(class);
        let mut n = 0;
        for y in 0..self.h {
            for x in 0..self.w {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = y * self.w + x;
                    self.mask[i] = class;
                    self.rgb[i] = [c[0] * tint, c[1] * tint, c[2] * tint];
                    n += 1;
                }
            }
        }
        n
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, theta: f64) -> impl Fn(f64, f64) -> bool {
    let (s, c) = theta.sin_cos();
    move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let u = (dx * c + dy * s) / rx;
        let v = (-dx * s + dy * c) / ry;
        u * u + v * v <= 1.0
    }
}

fn one_sample(rng: &mut ChaCha8Rng, id: String, h: usize, w: usize, classes: usize) -> Result<SegmentationSample> {
    let (hf, wf) = (h as f64, w as f64);
    let ext = hf.min(wf);
    let mut cv = Canvas {
        h,
        w,
        mask: vec![0; h * w],
        rgb: vec![[0.0; 3]; h * w],
    };

    // Background texture: a slow two-axis ripple around mid grey.
    let (fx, fy) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0));
    let (px, py) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let base = rng.random_range(0.30..0.40);
    for y in 0..h {
        for x in 0..w {
            let t = (fx * std::f64::consts::TAU * x as f64 / wf + px).sin()
                * (fy * std::f64::consts::TAU * y as f64 / hf + py).cos();
            let g = (base + 0.06 * t) as f32;
            cv.rgb[y * w + x] = [g, g, g * 1.05];
        }
    }

    let fg: Vec<u8> = (1..classes.min(256) as u32).map(|c| c as u8).collect();
    let large: Vec<u8> = fg
        .iter()
        .copied()
        .filter(|&c| ShapeClass::of(c) == ShapeClass::Large)
        .collect();
    let medium: Vec<u8> = fg
        .iter()
        .copied()
        .filter(|&c| ShapeClass::of(c) == ShapeClass::Medium)
        .collect();
    let small: Vec<u8> = fg
        .iter()
        .copied()
        .filter(|&c| ShapeClass::of(c) == ShapeClass::Small)
        .collect();

    let n_large = if large.len() > 1 {
        rng.random_range(1..=2)
    } else {
        large.len()
    };
    for &c in &large[..n_large] {
        let rx = ext * rng.random_range(0.14..0.22);
        let ry = ext * rng.random_range(0.10..0.18);
        let cx = wf * rng.random_range(0.25..0.75);
        let cy = hf * rng.random_range(0.25..0.75);
        let th = rng.random_range(0.0..std::f64::consts::PI);
        let tint = rng.random_range(0.92..1.0);
        cv.paint(c, tint, ellipse(cx, cy, rx, ry, th));
    }

    for &c in &medium {
        if rng.random::<f64>() < 0.25 {
            continue;
        }
        let a = ext * rng.random_range(0.05..0.09);
        let b = ext * rng.random_range(0.05..0.09);
        let cx = wf * rng.random_range(0.12..0.88);
        let cy = hf * rng.random_range(0.12..0.88);
        let tint = rng.random_range(0.92..1.0);
        if rng.random::<bool>() {
            cv.paint(c, tint, move |x, y| (x - cx).abs() <= a && (y - cy).abs() <= b);
        } else {
            let th = rng.random_range(0.0..std::f64::consts::PI);
            cv.paint(c, tint, ellipse(cx, cy, a, b, th));
        }
    }

    // Small discs, painted last so they are never occluded, kept apart.
    let limit = 0.01 * hf * wf;
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    for &c in &small {
        if rng.random::<f64>() < 0.15 {
            continue;
        }
        let mut r = (0.005 * hf * wf / std::f64::consts::PI).sqrt().max(0.75);
        let (mut cx, mut cy) = (0.0, 0.0);
        for _ in 0..32 {
            cx = rng.random_range(r + 1.0..(wf - r - 1.0).max(r + 1.5));
            cy = rng.random_range(r + 1.0..(hf - r - 1.0).max(r + 1.5));
            if placed.iter().all(|&(x, y, pr)| (x - cx).hypot(y - cy) > r + pr + 2.0) {
                break;
            }
        }
        let tint = rng.random_range(0.92..1.0);
        loop {
            let covers = |x: f64, y: f64| (x - cx).hypot(y - cy) <= r;
            let n = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| covers(x as f64 + 0.5, y as f64 + 0.5))
                .count();
            if (n as f64) < limit || r <= 0.5 {
                if n > 0 {
                    cv.paint(c, tint, covers);
                }
                break;
            }
            r -= 0.25;
        }
        placed.push((cx, cy, r));
    }

    let noise = Normal::new(0.0f32, 0.03).expect("noise sigma");
    let mut image = vec![0.0f32; 3 * h * w];
    for (i, px) in cv.rgb.iter().enumerate() {
        for ch in 0..3 {
            let v = (px[ch] + noise.sample(rng)).clamp(0.0, 1.0);
            // Quantize like an 8-bit file so disk round trips are exact.
            image[ch * h * w + i] = (v * 255.0).round() / 255.0;
        }
    }
    SegmentationSample::new(id, h, w, image, cv.mask)
}

/// `count` samples of `h×w`, fully determined by `seed`.
pub fn synth_generate(count: usize, h: usize, w: usize, seed: u64, classes: usize) -> Result<Vec<SegmentationSample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("synthetic sample count must be positive".into()));
    }
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!("synthetic extent {h}x{w} below 8x8")));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::InvalidArgument(format!("{classes} classes outside 2..=256")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| one_sample(&mut rng, format!("synth_{i:05}"), h, w, classes))
        .collect()
}
