//! RGB images, dataset loading, statistics and normalization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

/// Channel-planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// `3 x height x width`, row-major per channel.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::dim(
                "image",
                format!("{height}x{width} RGB needs {} values, got {}", CHANNELS * height * width, data.len()),
            ));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(CHANNELS * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Image { height, width, data }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let mut data = Vec::with_capacity(CHANNELS * h * w);
        for c in 0..CHANNELS {
            for y in y0..y0 + h {
                let start = (c * self.height + y) * self.width + x0;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Image { height: h, width: w, data }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut out = Image::filled(h, w, [0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..CHANNELS {
                out.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Decodes a PNG/PNM file into RGB.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Format {
            kind: "image",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format {
                    kind: "PNG",
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    }

    /// Largest centered `h x w` window; panics if the image is smaller.
    pub fn center_crop(&self, h: usize, w: usize) -> Image {
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    /// Upscales (bilinear) so both sides are at least `min_side`.
    pub fn ensure_min_side(self, min_h: usize, min_w: usize) -> Image {
        if self.height >= min_h && self.width >= min_w {
            return self;
        }
        let h = self.height.max(min_h) as u32;
        let w = self.width.max(min_w) as u32;
        let resized = image::imageops::resize(&self.to_rgb8(), w, h, image::imageops::FilterType::Triangle);
        Image::from_rgb8(&resized)
    }
}

/// Lists image files of a directory in sorted order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every decodable image of `dir`; undecodable files are skipped with a warning.
pub fn load_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut images = Vec::new();
    for path in list_images(dir)? {
        match Image::open(&path) {
            Ok(img) => images.push(img),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!("no decodable image in {}", dir.display())));
    }
    Ok(images)
}

/// Per-channel pixel statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub n_images: usize,
}

impl DatasetStats {
    /// Pooled mean and population std over all pixels of all images.
    pub fn compute(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Statistics("no images".into()));
        }
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            for c in 0..CHANNELS {
                for &v in img.plane(c) {
                    let v = v as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += img.height * img.width;
        }
        let nf = n as f64;
        let mean = sum.map(|s| s / nf);
        let mut std = [0.0; 3];
        for c in 0..CHANNELS {
            std[c] = (sq[c] / nf - mean[c] * mean[c]).max(0.0).sqrt();
        }
        Ok(DatasetStats {
            mean,
            std,
            n_images: images.len(),
        })
    }
}

/// `(value - mean_c) / std_c` per channel.
pub fn normalize<T: Scalar>(image: &Image, stats: &DatasetStats) -> Result<Tensor<T>> {
    if let Some(c) = (0..CHANNELS).find(|&c| !(stats.std[c] > 0.0)) {
        return Err(Error::Statistics(format!(
            "channel {c} has non-positive std {}",
            stats.std[c]
        )));
    }
    let plane = image.height * image.width;
    let data = image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            T::from_f64_lossy((v as f64 - stats.mean[c]) / stats.std[c])
        })
        .collect();
    Tensor::from_vec(&[CHANNELS, image.height, image.width], data)
}
