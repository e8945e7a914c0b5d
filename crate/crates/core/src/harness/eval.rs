use crate::data::{Dataset, PreprocessConfig, SamplerConfig, Split, Strategy};
use crate::error::{Error, Result};
use crate::model::{Model, PredictionPair};
use crate::ranking::spearman;

/// Deterministic test-time protocol: first frame of every subclip, center crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_frames: usize,
    pub preprocess: PreprocessConfig,
    pub split: Split,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl EvalConfig {
    pub fn from_train(cfg: &crate::train::TrainConfig) -> Self {
        Self {
            n_frames: cfg.sampler.n_frames,
            preprocess: cfg.preprocess.deterministic(),
            split: Split::Test,
            threads: cfg.threads,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            strategy: Strategy::FixedOffset,
            n_frames: self.n_frames,
            fixed_offset_k: 0,
            rng_seed: 0,
        }
    }
}

/// Eval-mode predictions for `records`, in the given order.
pub fn predict_records(model: &Model, dataset: &Dataset, records: &[usize], cfg: &EvalConfig) -> Result<Vec<PredictionPair>> {
    let sampler = cfg.sampler();
    let pre = cfg.preprocess.deterministic();
    crate::par::map(records.len(), cfg.threads, |k| {
        let clip = dataset.clip_tensor(records[k], &sampler, &pre, 0)?;
        model.predict(&clip)
    })
}

/// Spearman correlation of predicted against true final scores.
pub fn rank_correlation(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    spearman(truth, predicted).map_err(|e| match e {
        Error::UndefinedCorrelation(why) => Error::UndefinedCorrelation(format!(
            "{why}; if the predictions are constant the model has likely collapsed: \
             train longer, raise the learning rate or add Spearman weight to the loss"
        )),
        other => other,
    })
}

/// Held-out Spearman correlation of final scores.
pub fn evaluate(model: &Model, dataset: &Dataset, cfg: &EvalConfig) -> Result<f64> {
    let records = dataset.indices(cfg.split);
    if records.len() < 2 {
        return Err(Error::invalid(format!(
            "{} split has {} clips; evaluation needs at least 2",
            cfg.split.name(),
            records.len()
        )));
    }
    let preds = predict_records(model, dataset, &records, cfg)?;
    let truth: Vec<f64> = records.iter().map(|&i| dataset.records[i].final_score).collect();
    let predicted: Vec<f64> = preds.iter().map(PredictionPair::final_score).collect();
    rank_correlation(&truth, &predicted)
}
