//! Procedural diving clips with a known score.
//!
//! Each clip shows a Gaussian blob crossing the frame from left to right
//! while bobbing vertically:
//!
//! ```text
//! u      = t / (T - 1)
//! x(u)   = W * (x0 + (x1 - x0) * u)
//! y(u)   = H * (yc + WOBBLE * (1 - s) * sin(2π * CYCLES * u + φ))
//! color  = (0.35 + 0.65 q, 0.95, 1 - 0.65 q),   q = (d - 2.0) / 2.1
//! ```
//!
//! where `s` is the clip's normalized score and `d` its difficulty, so a
//! perfectly smooth trajectory scores 1 and the blob's hue encodes `d`.
//! `x0, x1, yc, φ` are drawn per clip; a little uniform noise is added per
//! frame. Judge scores are synthesized so that [`aggregate_judges`] returns
//! exactly `s`.
//!
//! [`aggregate_judges`]: super::aggregate_judges

use std::f64::consts::TAU;

use image::{Rgb, Rgb32FImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::judges::{aggregate_judges, JUDGE_COUNT};
use super::preprocess::DEFAULT_MEAN_RGB;
use super::{ClipRecord, Dataset, FrameSource, Split};
use crate::error::Result;
use crate::seed;

/// Vertical wobble amplitude of a zero-score clip, as a fraction of height.
pub const WOBBLE: f64 = 0.25;
pub const CYCLES: f64 = 1.5;
pub const NOISE: f64 = 0.03;
/// Degree-of-difficulty grid: 2.0, 2.1, ..., 4.1.
pub const DIFFICULTY_MIN: f64 = 2.0;
pub const DIFFICULTY_MAX: f64 = 4.1;
pub const DIFFICULTY_STEP: f64 = 0.1;
/// Normalized scores are drawn from this range before judge quantization.
pub const SCORE_RANGE: (f64, f64) = (0.3, 1.0);

const RENDER: u64 = 11;
const NOISE_STREAM: u64 = 12;
const LABELS: u64 = 13;
const SPLIT: u64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_clips: usize,
    pub frames: usize,
    pub height: u32,
    pub width: u32,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_clips: 640,
            frames: 32,
            height: 32,
            width: 32,
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

/// Everything needed to render one synthetic clip on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthClip {
    pub seed: u64,
    pub frames: usize,
    pub height: u32,
    pub width: u32,
    pub normalized_score: f64,
    pub difficulty: f64,
}

impl SynthClip {
    pub fn render(&self, t: usize) -> Rgb32FImage {
        let mut rng = seed::rng(self.seed, &[RENDER]);
        let x0 = rng.gen_range(0.15..0.25);
        let x1 = rng.gen_range(0.75..0.85);
        let yc = rng.gen_range(0.4..0.6);
        let phase = rng.gen_range(0.0..TAU);
        let (h, w) = (self.height as f64, self.width as f64);
        let u = if self.frames > 1 {
            t as f64 / (self.frames - 1) as f64
        } else {
            0.0
        };
        let cx = w * (x0 + (x1 - x0) * u);
        let cy = h * (yc + WOBBLE * (1.0 - self.normalized_score) * (TAU * CYCLES * u + phase).sin());
        let sigma = 0.08 * h.min(w);
        let q = ((self.difficulty - DIFFICULTY_MIN) / (DIFFICULTY_MAX - DIFFICULTY_MIN)).clamp(0.0, 1.0);
        let color = [0.35 + 0.65 * q, 0.95, 1.0 - 0.65 * q];

        let mut noise = seed::rng(self.seed, &[NOISE_STREAM, t as u64]);
        Rgb32FImage::from_fn(self.width, self.height, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            let px = std::array::from_fn(|c| {
                let v = DEFAULT_MEAN_RGB[c] * (1.0 - g) + color[c] * g + noise.gen_range(-NOISE..NOISE);
                v.clamp(0.0, 1.0) as f32
            });
            Rgb(px)
        })
    }
}

/// Seven judge scores (multiples of 0.5) whose trimmed middle three sum to
/// `halves / 2`.
fn synth_judges<R: Rng>(halves: u32, rng: &mut R) -> [f64; JUDGE_COUNT] {
    let (base, rem) = (halves / 3, halves % 3);
    let mut mid = [base, base + u32::from(rem >= 2), base + u32::from(rem >= 1)];
    if mid[0] >= 1 && mid[2] <= 19 && rng.gen_bool(0.5) {
        mid[0] -= 1;
        mid[2] += 1;
    }
    let mut all = Vec::with_capacity(JUDGE_COUNT);
    for _ in 0..2 {
        all.push(rng.gen_range(mid[0].saturating_sub(3)..=mid[0]));
        all.push(rng.gen_range(mid[2]..=(mid[2] + 3).min(20)));
    }
    all.extend(mid);
    all.shuffle(rng);
    std::array::from_fn(|i| all[i] as f64 / 2.0)
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let n = spec.n_clips;
    let mut split_rng = seed::rng(spec.seed, &[SPLIT]);
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let test: std::collections::HashSet<usize> = rand::seq::index::sample(&mut split_rng, n, n_test.min(n))
        .into_iter()
        .collect();
    let grid = ((DIFFICULTY_MAX - DIFFICULTY_MIN) / DIFFICULTY_STEP).round() as u32;

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let clip_seed = seed::derive(spec.seed, &[i as u64]);
        let mut rng = seed::rng(clip_seed, &[LABELS]);
        let target = rng.gen_range(SCORE_RANGE.0..=SCORE_RANGE.1);
        let halves = (target * 60.0).round() as u32;
        let judges = synth_judges(halves, &mut rng);
        let difficulty = (DIFFICULTY_MIN * 10.0 + rng.gen_range(0..=grid) as f64) / 10.0;
        let clip = SynthClip {
            seed: clip_seed,
            frames: spec.frames,
            height: spec.height,
            width: spec.width,
            normalized_score: aggregate_judges(&judges)?,
            difficulty,
        };
        let split = if test.contains(&i) { Split::Test } else { Split::Train };
        records.push(ClipRecord::new(
            format!("synth_{i:05}"),
            spec.frames,
            FrameSource::Synthetic(clip),
            judges,
            difficulty,
            split,
        )?);
    }
    Ok(Dataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::final_score;

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_clips: n,
            frames: 8,
            height: 16,
            width: 16,
            seed: 5,
            test_fraction: 0.25,
        }
    }

    #[test]
    fn empty_spec_gives_empty_dataset() {
        assert!(synth_dataset(&spec(0)).unwrap().records.is_empty());
    }

    #[test]
    fn labels_are_consistent() {
        let ds = synth_dataset(&spec(200)).unwrap();
        assert_eq!(ds.indices(Split::Test).len(), 50);
        for r in &ds.records {
            assert!(r.judge_scores.iter().all(|j| (0.0..=10.0).contains(j) && (j * 2.0).fract() == 0.0));
            assert_eq!(r.final_score, final_score(r.normalized_score, r.difficulty));
            assert!((DIFFICULTY_MIN..=DIFFICULTY_MAX + 1e-12).contains(&r.difficulty));
            assert!(r.normalized_score >= 0.29 && r.normalized_score <= 1.0);
        }
    }

    #[test]
    fn judges_hit_every_reachable_sum() {
        let mut rng = seed::rng(0, &[]);
        for halves in 0..=60 {
            let j = synth_judges(halves, &mut rng);
            assert!((aggregate_judges(&j).unwrap() - halves as f64 / 60.0).abs() < 1e-12, "{halves} {j:?}");
        }
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = synth_dataset(&spec(3)).unwrap();
        let b = synth_dataset(&spec(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.load_frames(2, &[0, 7]).unwrap(), b.load_frames(2, &[0, 7]).unwrap());
    }
}
