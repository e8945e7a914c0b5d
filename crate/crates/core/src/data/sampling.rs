use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// N distinct frames uniformly without replacement, sorted by time.
    Random,
    /// Frame `k` of every subclip, clamped to the subclip.
    FixedOffset,
    /// One uniformly random frame from every subclip.
    VariedOffset,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::FixedOffset, Strategy::VariedOffset];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::FixedOffset => "fixed_offset",
            Strategy::VariedOffset => "varied_offset",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "random" => Ok(Strategy::Random),
            "fixed" | "fixed_offset" => Ok(Strategy::FixedOffset),
            "varied" | "varied_offset" => Ok(Strategy::VariedOffset),
            _ => Err(Error::invalid(format!(
                "unknown sampling strategy {s:?} (expected random, fixed_offset or varied_offset)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub n_frames: usize,
    pub fixed_offset_k: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::VariedOffset,
            n_frames: 8,
            fixed_offset_k: 0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlan {
    pub indices: Vec<usize>,
}

impl std::fmt::Display for FramePlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Subclip `i` of `n` over a clip of length `t`: the half-open range
/// `[floor(i t / n), floor((i + 1) t / n))`. Non-empty whenever `t >= n`.
pub fn subclip(t: usize, n: usize, i: usize) -> std::ops::Range<usize> {
    (i * t / n)..((i + 1) * t / n)
}

pub fn plan_frames(t: usize, cfg: &SamplerConfig) -> Result<FramePlan> {
    let n = cfg.n_frames;
    if n == 0 {
        return Err(Error::invalid("sampler needs at least one frame"));
    }
    if t < n {
        return Err(Error::invalid(format!("clip has {t} frames, {n} requested")));
    }
    let mut rng = seed::rng(cfg.rng_seed, &[seed::stream::PLAN]);
    let indices = match cfg.strategy {
        Strategy::Random => {
            let mut idx = sample(&mut rng, t, n).into_vec();
            idx.sort_unstable();
            idx
        }
        Strategy::FixedOffset => (0..n)
            .map(|i| {
                let r = subclip(t, n, i);
                r.start + cfg.fixed_offset_k.min(r.len() - 1)
            })
            .collect(),
        Strategy::VariedOffset => (0..n).map(|i| rng.gen_range(subclip(t, n, i))).collect(),
    };
    Ok(FramePlan { indices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy, n: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            strategy,
            n_frames: n,
            fixed_offset_k: 0,
            rng_seed: seed,
        }
    }

    #[test]
    fn full_length_plan_is_identity() {
        for s in Strategy::ALL {
            assert_eq!(plan_frames(8, &cfg(s, 8, 3)).unwrap().indices, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fixed_offset_zero_takes_subclip_starts() {
        let p = plan_frames(16, &cfg(Strategy::FixedOffset, 8, 0)).unwrap();
        assert_eq!(p.to_string(), "0 2 4 6 8 10 12 14");
    }

    #[test]
    fn fixed_offset_is_clamped() {
        let mut c = cfg(Strategy::FixedOffset, 4, 0);
        c.fixed_offset_k = 100;
        assert_eq!(plan_frames(10, &c).unwrap().indices, vec![1, 4, 6, 9]);
    }

    #[test]
    fn too_short_clip_is_rejected() {
        assert!(plan_frames(4, &cfg(Strategy::Random, 8, 0)).is_err());
        assert!(plan_frames(4, &cfg(Strategy::Random, 0, 0)).is_err());
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!("fixed".parse::<Strategy>().unwrap(), Strategy::FixedOffset);
        assert_eq!("varied-offset".parse::<Strategy>().unwrap(), Strategy::VariedOffset);
        assert!("uniform".parse::<Strategy>().is_err());
    }
}
