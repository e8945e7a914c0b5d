//! Clip records, judge aggregation, frame sampling and preprocessing.

mod frames;
mod judges;
mod manifest;
mod preprocess;
mod sampling;
pub mod synth;

use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

pub use frames::{write_shard, DiskFrames, SHAPE_FILE, SHARD_FILE};
pub use judges::{aggregate_judges, final_score, JUDGE_COUNT, MAX_TRIMMED_SUM};
pub use manifest::{load_manifest, write_dataset, HEADER as MANIFEST_HEADER};
pub use preprocess::{preprocess, PreprocessConfig, DEFAULT_MEAN_RGB, DEFAULT_STD_RGB};
pub use sampling::{plan_frames, subclip, FramePlan, SamplerConfig, Strategy};
pub use synth::{synth_dataset, SynthClip, SynthSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
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

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    Disk(DiskFrames),
    Synthetic(SynthClip),
}

/// One dive with its labels.
///
/// `normalized_score` and `final_score` are derived from the judge scores
/// and difficulty on construction and never stored independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub frame_count: usize,
    pub frame_source: FrameSource,
    pub judge_scores: [f64; JUDGE_COUNT],
    pub difficulty: f64,
    pub normalized_score: f64,
    pub final_score: f64,
    pub split: Split,
}

impl ClipRecord {
    pub fn new(
        clip_id: String,
        frame_count: usize,
        frame_source: FrameSource,
        judge_scores: [f64; JUDGE_COUNT],
        difficulty: f64,
        split: Split,
    ) -> Result<Self> {
        if frame_count == 0 {
            return Err(Error::invalid(format!("clip {clip_id} has no frames")));
        }
        if !(difficulty > 0.0 && difficulty.is_finite()) {
            return Err(Error::invalid(format!("clip {clip_id}: difficulty {difficulty} must be positive")));
        }
        let normalized_score = aggregate_judges(&judge_scores)?;
        Ok(Self {
            clip_id,
            frame_count,
            frame_source,
            judge_scores,
            difficulty,
            normalized_score,
            final_score: final_score(normalized_score, difficulty),
            split,
        })
    }

    /// Regression target `(normalized score, difficulty)`.
    pub fn target(&self) -> [f64; 2] {
        [self.normalized_score, self.difficulty]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<ClipRecord>,
}

impl Dataset {
    pub fn new(records: Vec<ClipRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record positions belonging to `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Decoded RGB frames in [0, 1] for record `i`.
    pub fn load_frames(&self, i: usize, frames: &[usize]) -> Result<Vec<Rgb32FImage>> {
        let r = &self.records[i];
        if let Some(&bad) = frames.iter().find(|&&f| f >= r.frame_count) {
            return Err(Error::invalid(format!(
                "clip {}: frame {bad} out of range ({} frames)",
                r.clip_id, r.frame_count
            )));
        }
        match &r.frame_source {
            FrameSource::Disk(d) => d.load(frames),
            FrameSource::Synthetic(s) => Ok(frames.iter().map(|&f| s.render(f)).collect()),
        }
    }

    /// Plans, loads and preprocesses record `i` into `[N, 3, crop, crop]`.
    pub fn clip_tensor(
        &self,
        i: usize,
        sampler: &SamplerConfig,
        preprocess_cfg: &PreprocessConfig,
        augment_seed: u64,
    ) -> Result<crate::Tensor> {
        let plan = plan_frames(self.records[i].frame_count, sampler)?;
        let frames = self.load_frames(i, &plan.indices)?;
        preprocess(&frames, preprocess_cfg, augment_seed)
    }
}
