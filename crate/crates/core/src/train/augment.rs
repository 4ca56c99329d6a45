//! Photometric and geometric augmentation: horizontal flip, gaussian blur,
//! random grayscale and color jitter.
//!
//! Transforms run in a fixed order (jitter, grayscale, blur, flip) and each
//! fires independently with its probability. Every random draw comes from
//! the caller's generator, so the output is a function of the rng state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub hflip: f64,
    pub blur: f64,
    pub blur_sigma: [f64; 2],
    pub grayscale: f64,
    pub jitter: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            hflip: 0.5,
            blur: 0.5,
            blur_sigma: [0.1, 2.0],
            grayscale: 0.2,
            jitter: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// Every probability zero.
    pub fn none() -> Self {
        AugmentationConfig {
            hflip: 0.0,
            blur: 0.0,
            grayscale: 0.0,
            jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("augment.hflip", self.hflip),
            ("augment.blur", self.blur),
            ("augment.grayscale", self.grayscale),
            ("augment.jitter", self.jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::Config(format!("augment.hue = {} must lie in [0, 0.5]", self.hue)));
        }
        let [lo, hi] = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("augment.blur_sigma = [{lo}, {hi}] is not a positive range")));
        }
        for (name, s) in [
            ("augment.brightness", self.brightness),
            ("augment.contrast", self.contrast),
            ("augment.saturation", self.saturation),
        ] {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("{name} = {s} must be non-negative")));
            }
        }
        Ok(())
    }
}

pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentationConfig, rng: &mut R) -> Image {
    let mut img = image.clone();
    if rng.random_bool(cfg.jitter) {
        color_jitter(&mut img, cfg, rng);
    }
    if rng.random_bool(cfg.grayscale) {
        grayscale(&mut img);
    }
    if rng.random_bool(cfg.blur) {
        let [lo, hi] = cfg.blur_sigma;
        let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
        gaussian_blur(&mut img, sigma);
    }
    if rng.random_bool(cfg.hflip) {
        hflip(&mut img);
    }
    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

pub fn hflip(img: &mut Image) {
    let w = img.width;
    for row in img.data.chunks_mut(w) {
        row.reverse();
    }
}

#[inline]
fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn grayscale(img: &mut Image) {
    let n = img.height * img.width;
    for i in 0..n {
        let l = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
        img.data[i] = l;
        img.data[n + i] = l;
        img.data[2 * n + i] = l;
    }
}

/// Separable blur, kernel radius `ceil(3 sigma)`, edges clamped.
pub fn gaussian_blur(img: &mut Image, sigma: f64) {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (img.height as isize, img.width as isize);
    let mut tmp = vec![0.0f32; img.data.len()];
    for c in 0..CHANNELS as isize {
        let base = (c * h * w) as usize;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += kv * img.data[base + (y * w + sx) as usize];
                }
                tmp[base + (y * w + x) as usize] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp[base + (sy * w + x) as usize];
                }
                img.data[base + (y * w + x) as usize] = acc;
            }
        }
    }
}

fn factor<R: Rng + ?Sized>(strength: f64, rng: &mut R) -> f32 {
    let lo = (1.0 - strength).max(0.0);
    let hi = 1.0 + strength;
    if hi > lo {
        rng.random_range(lo..hi) as f32
    } else {
        1.0
    }
}

/// Brightness, contrast, saturation, then hue.
pub fn color_jitter<R: Rng + ?Sized>(img: &mut Image, cfg: &AugmentationConfig, rng: &mut R) {
    let n = img.height * img.width;
    let b = factor(cfg.brightness, rng);
    let c = factor(cfg.contrast, rng);
    let s = factor(cfg.saturation, rng);
    let hue = if cfg.hue > 0.0 {
        rng.random_range(-cfg.hue..cfg.hue) as f32
    } else {
        0.0
    };

    for v in &mut img.data {
        *v = (*v * b).clamp(0.0, 1.0);
    }

    let mean = (0..n)
        .map(|i| luma(img.data[i], img.data[n + i], img.data[2 * n + i]))
        .sum::<f32>()
        / n as f32;
    for v in &mut img.data {
        *v = ((*v - mean) * c + mean).clamp(0.0, 1.0);
    }

    for i in 0..n {
        let l = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
        for ch in 0..CHANNELS {
            let v = &mut img.data[ch * n + i];
            *v = ((*v - l) * s + l).clamp(0.0, 1.0);
        }
    }

    if hue != 0.0 {
        for i in 0..n {
            let (h, sat, val) = rgb_to_hsv(img.data[i], img.data[n + i], img.data[2 * n + i]);
            let (r, g, bl) = hsv_to_rgb((h + hue).rem_euclid(1.0), sat, val);
            img.data[i] = r;
            img.data[n + i] = g;
            img.data[2 * n + i] = bl;
        }
    }
}

/// Hue in `[0, 1)`.
fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
