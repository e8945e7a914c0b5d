//! Line-oriented clip manifests.
//!
//! ```text
//! clip_id<TAB>frames_path<TAB>j1,j2,j3,j4,j5,j6,j7<TAB>difficulty<TAB>split
//! ```
//!
//! `split` is `train` or `test`. A first line starting with `clip_id` is a
//! header; blank lines and lines starting with `#` are skipped. Relative
//! frame paths resolve against the manifest's directory. For reference, the
//! MTL-AQA diving split has 1059 train and 353 test clips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::frames::{write_shard, DiskFrames};
use super::judges::JUDGE_COUNT;
use super::{ClipRecord, Dataset, FrameSource, Split};
use crate::error::{Error, Result};

pub const HEADER: &str = "clip_id\tframes_path\tjudge_scores\tdifficulty\tsplit";

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("clip_id")) {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [clip_id, frames, judges, difficulty, split] = fields.as_slice() else {
            return Err(err(format!("expected 5 tab-separated fields, got {}", fields.len())));
        };
        let judges: Vec<f64> = judges
            .split(',')
            .map(|j| j.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("clip {clip_id}: bad judge score: {e}")))?;
        if judges.len() != JUDGE_COUNT {
            return Err(err(format!(
                "clip {clip_id}: expected {JUDGE_COUNT} judge scores, got {}",
                judges.len()
            )));
        }
        let difficulty: f64 = difficulty
            .trim()
            .parse()
            .map_err(|e| err(format!("clip {clip_id}: bad difficulty: {e}")))?;
        let split = match split.trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(err(format!("clip {clip_id}: split must be train or test, got {other:?}"))),
        };
        let dir = {
            let p = PathBuf::from(frames);
            if p.is_relative() {
                root.join(p)
            } else {
                p
            }
        };
        let (disk, t) = DiskFrames::probe(&dir).map_err(|e| err(format!("clip {clip_id}: {e}")))?;
        let judge_scores: [f64; JUDGE_COUNT] = judges.try_into().expect("length checked");
        let record = ClipRecord::new(clip_id.to_string(), t, FrameSource::Disk(disk), judge_scores, difficulty, split)
            .map_err(|e| err(format!("clip {clip_id}: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

/// Writes every clip of `dataset` as a raw shard under `out/frames/` plus a
/// manifest at `out/manifest.tsv`, and returns the manifest path.
pub fn write_dataset(dataset: &Dataset, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let mut text = String::from(HEADER);
    text.push('\n');
    for (i, r) in dataset.records.iter().enumerate() {
        if r.clip_id.contains(['\t', '\n', '/']) {
            return Err(Error::invalid(format!("clip id {:?} cannot be written", r.clip_id)));
        }
        let rel = PathBuf::from("frames").join(&r.clip_id);
        let all: Vec<usize> = (0..r.frame_count).collect();
        write_shard(&out.join(&rel), dataset.load_frames(i, &all)?)?;
        let judges: Vec<String> = r.judge_scores.iter().map(f64::to_string).collect();
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}",
            r.clip_id,
            rel.display(),
            judges.join(","),
            r.difficulty,
            r.split.name()
        )
        .expect("write to String");
    }
    let path = out.join("manifest.tsv");
    fs::write(&path, text)?;
    Ok(path)
}
