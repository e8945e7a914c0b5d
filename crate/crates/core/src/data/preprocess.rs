use image::imageops::{self, FilterType};
use image::Rgb32FImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Per-channel statistics of the diving footage the defaults were measured on.
pub const DEFAULT_MEAN_RGB: [f64; 3] = [0.2719, 0.4617, 0.5961];
pub const DEFAULT_STD_RGB: [f64; 3] = [0.1870, 0.1881, 0.2604];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub mean_rgb: [f64; 3],
    pub std_rgb: [f64; 3],
    pub short_side: u32,
    pub crop: u32,
    pub hflip_prob: f64,
    /// Random crop window and flip, shared by all frames of a clip.
    pub augment: bool,
    /// Per-channel standardization; off leaves pixels in [0, 1].
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mean_rgb: DEFAULT_MEAN_RGB,
            std_rgb: DEFAULT_STD_RGB,
            short_side: 256,
            crop: 224,
            hflip_prob: 0.5,
            augment: true,
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std_rgb.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("std_rgb must be positive, got {:?}", self.std_rgb)));
        }
        if self.crop == 0 || self.crop > self.short_side {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={} (short_side)",
                self.crop, self.short_side
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }

    /// The same settings with augmentation off, as used for evaluation.
    pub fn deterministic(&self) -> Self {
        Self {
            augment: false,
            ..*self
        }
    }
}

fn resized(frame: &Rgb32FImage, short_side: u32) -> Rgb32FImage {
    let (w, h) = frame.dimensions();
    let (nw, nh) = if w <= h {
        (short_side, ((h as u64 * short_side as u64 + w as u64 / 2) / w as u64) as u32)
    } else {
        (((w as u64 * short_side as u64 + h as u64 / 2) / h as u64) as u32, short_side)
    };
    if (nw, nh) == (w, h) {
        frame.clone()
    } else {
        imageops::resize(frame, nw, nh, FilterType::Triangle)
    }
}

/// Resize, crop, optionally flip and standardize a clip into `[N, 3, crop, crop]`.
///
/// All frames must share one size. With `augment` the crop origin and flip
/// are drawn once from `rng_seed`; otherwise the crop is centered.
pub fn preprocess(frames: &[Rgb32FImage], cfg: &PreprocessConfig, rng_seed: u64) -> Result<Tensor> {
    cfg.validate()?;
    let first = frames.first().ok_or_else(|| Error::invalid("no frames to preprocess"))?;
    let dims = first.dimensions();
    if let Some(f) = frames.iter().find(|f| f.dimensions() != dims) {
        return Err(Error::invalid(format!(
            "frames differ in size: {:?} vs {:?}",
            dims,
            f.dimensions()
        )));
    }
    let resized: Vec<Rgb32FImage> = frames.iter().map(|f| resized(f, cfg.short_side)).collect();
    let (w, h) = resized[0].dimensions();
    let c = cfg.crop;
    if w < c || h < c {
        return Err(Error::invalid(format!("frame {w}x{h} after resize is smaller than crop {c}")));
    }
    let (x0, y0, flip) = if cfg.augment {
        let mut rng = seed::rng(rng_seed, &[seed::stream::AUGMENT]);
        let x0 = rng.gen_range(0..=w - c);
        let y0 = rng.gen_range(0..=h - c);
        (x0, y0, rng.gen_bool(cfg.hflip_prob))
    } else {
        ((w - c) / 2, (h - c) / 2, false)
    };

    let c = c as usize;
    let plane = c * c;
    let mut out = vec![0.0; frames.len() * 3 * plane];
    for (n, img) in resized.iter().enumerate() {
        let base = n * 3 * plane;
        for y in 0..c {
            for x in 0..c {
                let sx = if flip { c - 1 - x } else { x };
                let px = img.get_pixel(x0 + sx as u32, y0 + y as u32).0;
                for ch in 0..3 {
                    let v = px[ch] as f64;
                    out[base + ch * plane + y * c + x] = if cfg.normalize {
                        (v - cfg.mean_rgb[ch]) / cfg.std_rgb[ch]
                    } else {
                        v
                    };
                }
            }
        }
    }
    Tensor::new(out, &[frames.len(), 3, c, c])
}
