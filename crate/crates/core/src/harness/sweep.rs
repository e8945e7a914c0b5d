//! One-axis hyperparameter sweeps and the built-in ablation presets.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use toml::Value;

use super::config::{parse_literal, ExperimentConfig};
use super::eval::{evaluate, EvalConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::train::{train_from, TrainLog, TrainOptions, TrainState};

pub const RESULTS_HEADER: &str = "axis_value,spearman,wall_time_s";

/// One row of a sweep: the values written to the axis fields, and how the
/// row is labeled in the table (one cell per label column).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepValue {
    pub cells: Vec<String>,
    pub values: Vec<Value>,
    /// Reference result at full scale, shown in its own column.
    pub reference: Option<String>,
}

impl SweepValue {
    /// Label cells joined with `;`.
    pub fn axis_value(&self) -> String {
        self.cells.join(";")
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub title: String,
    pub base: ExperimentConfig,
    /// Dotted config paths, all set together by each row.
    pub axis: Vec<String>,
    /// Table headings for the label cells.
    pub columns: Vec<String>,
    pub values: Vec<SweepValue>,
    pub epochs_override: Option<usize>,
    pub output_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis_value: String,
    /// Held-out Spearman correlation; empty when the row failed.
    pub spearman: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub logs: Vec<TrainLog>,
    /// `(axis_value, message)` for every row that failed.
    pub failures: Vec<(String, String)>,
    pub table: String,
}

impl SweepSpec {
    /// A sweep over one dotted path, each value given as a TOML literal.
    pub fn custom(base: ExperimentConfig, axis: &str, literals: &[String]) -> Self {
        Self {
            title: format!("Effect of {axis}"),
            base,
            axis: vec![axis.to_string()],
            columns: vec![axis.to_string()],
            values: literals
                .iter()
                .map(|l| SweepValue {
                    cells: vec![l.clone()],
                    values: vec![parse_literal(l)],
                    reference: None,
                })
                .collect(),
            epochs_override: None,
            output_path: None,
        }
    }

    /// Base config with row `k` applied.
    pub fn row_config(&self, k: usize) -> Result<ExperimentConfig> {
        let mut cfg = self.base.clone();
        for (path, v) in self.axis.iter().zip(&self.values[k].values) {
            cfg.set(path, v.clone())?;
        }
        if let Some(e) = self.epochs_override {
            cfg.train.epochs = e;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep has no axis values".into()));
        }
        if self.axis.is_empty() {
            return Err(Error::Config("sweep has no axis".into()));
        }
        for (k, v) in self.values.iter().enumerate() {
            if v.values.len() != self.axis.len() || v.cells.len() != self.columns.len() {
                return Err(Error::Config(format!("sweep row {} does not match the axis", v.axis_value())));
            }
            if v.cells.iter().any(|c| c.contains([',', '"', '\n', ';'])) {
                return Err(Error::Config(format!("sweep label {:?} contains a reserved character", v.cells)));
            }
            self.row_config(k)?;
        }
        Ok(())
    }
}

fn run_row(spec: &SweepSpec, k: usize, base_data: &Dataset) -> Result<(f64, TrainLog)> {
    let cfg = spec.row_config(k)?;
    cfg.validate()?;
    let owned;
    let data = if cfg.data == spec.base.data {
        base_data
    } else {
        owned = cfg.dataset()?;
        &owned
    };
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let state = train_from(TrainState::new(model), data, &cfg.train, &TrainOptions::default())?;
    let rho = evaluate(&state.model, data, &EvalConfig::from_train(&cfg.train))?;
    Ok((rho, state.log))
}

/// Trains and evaluates one model per axis value.
///
/// A failing row is recorded with an empty score and the sweep continues.
/// With `output_path` set, writes `results.csv`, `table.txt` and
/// `row_<k>_train_log.csv` there.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let data = spec.base.dataset()?;
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for (k, v) in spec.values.iter().enumerate() {
        let started = Instant::now();
        let result = run_row(spec, k, &data);
        let wall_time_s = started.elapsed().as_secs_f64();
        let (spearman, log) = match result {
            Ok((rho, log)) => (Some(rho), log),
            Err(e) => {
                ::log::warn!("sweep row {} failed: {e}", v.axis_value());
                failures.push((v.axis_value(), e.to_string()));
                (None, TrainLog::default())
            }
        };
        ::log::info!("sweep row {}: spearman {spearman:?}", v.axis_value());
        rows.push(ResultRow {
            axis_value: v.axis_value(),
            spearman,
            wall_time_s,
        });
        logs.push(log);
    }
    let table = render_table(spec, &rows);
    if let Some(dir) = &spec.output_path {
        fs::create_dir_all(dir)?;
        write_results(&rows, fs::File::create(dir.join("results.csv"))?)?;
        fs::write(dir.join("table.txt"), &table)?;
        for (k, log) in logs.iter().enumerate() {
            log.save(dir.join(format!("row_{k:02}_train_log.csv")))?;
        }
    }
    Ok(SweepOutcome {
        rows,
        logs,
        failures,
        table,
    })
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let err = crate::train::csv_err;
    out.write_record(RESULTS_HEADER.split(',')).map_err(err)?;
    for r in rows {
        out.serialize(r).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let err = crate::train::csv_err;
    let header: Vec<String> = rd.headers().map_err(err)?.iter().map(String::from).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::invalid(format!("results header {:?} is not {RESULTS_HEADER:?}", header.join(","))));
    }
    rd.deserialize().collect::<std::result::Result<_, _>>().map_err(err)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    read_results(fs::File::open(path)?)
}

/// Results table: label columns, `Sp. Corr.`, and the full-scale
/// reference when any row has one.
pub fn render_table(spec: &SweepSpec, rows: &[ResultRow]) -> String {
    let with_reference = spec.values.iter().any(|v| v.reference.is_some());
    let mut header: Vec<String> = spec.columns.clone();
    header.push("Sp. Corr.".into());
    if with_reference {
        header.push("paper (full scale)".into());
    }
    let body: Vec<Vec<String>> = spec
        .values
        .iter()
        .zip(rows)
        .map(|(v, r)| {
            let mut line = v.cells.clone();
            line.push(r.spearman.map_or_else(|| "failed".into(), |s| format!("{s:.4}")));
            if with_reference {
                line.push(v.reference.clone().unwrap_or_else(|| "-".into()));
            }
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let labels = spec.columns.len();
    let fmt_line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == labels {
                s.push_str(" | ");
            } else if c > 0 {
                s.push_str(if c > labels { " | " } else { "  " });
            }
            let pad = widths[c] - cell.chars().count();
            s.push_str(cell);
            s.push_str(&" ".repeat(pad));
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    writeln!(out, "{}", spec.title).expect("write to String");
    writeln!(out).expect("write to String");
    writeln!(out, "{}", fmt_line(&header)).expect("write to String");
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    writeln!(out, "{}", fmt_line(&rule).replace(' ', "-").replace("-|-", "-+-")).expect("write to String");
    for line in &body {
        writeln!(out, "{}", fmt_line(line)).expect("write to String");
    }
    out
}

pub const PRESETS: [&str; 9] = [
    "learning-rate",
    "frames",
    "batch-size",
    "decoder",
    "sampling",
    "preprocessing",
    "topology",
    "alpha-beta",
    "weight-decay",
];

fn row(cells: &[&str], values: &[&str], reference: &str) -> SweepValue {
    SweepValue {
        cells: cells.iter().map(|c| c.to_string()).collect(),
        values: values.iter().map(|v| parse_literal(v)).collect(),
        reference: Some(reference.to_string()),
    }
}

/// A built-in ablation at toy scale. Axis values are the full-scale ones
/// where they fit the tiny models; otherwise they are scaled and the
/// reference column names the full-scale row.
pub fn preset(name: &str) -> Result<SweepSpec> {
    let spec = |variant: Variant, title: &str, axis: &[&str], columns: &[&str], values: Vec<SweepValue>| SweepSpec {
        title: format!("{title} ({}, toy scale)", variant.name()),
        base: ExperimentConfig::toy(variant),
        axis: axis.iter().map(|a| a.to_string()).collect(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        values,
        epochs_override: None,
        output_path: None,
    };
    let s = match name {
        "learning-rate" => spec(
            Variant::ConvMlp,
            "Effect of learning rate",
            &["train.learning_rate"],
            &["Learning Rate"],
            vec![
                row(&["1e-6"], &["1e-6"], "0.7064"),
                row(&["5e-5"], &["5e-5"], "0.9113"),
                row(&["5e-4"], &["5e-4"], "0.9037"),
                row(&["5e-3"], &["5e-3"], "0.7497"),
                row(&["1e-2"], &["1e-2"], "0.4846"),
            ],
        ),
        "frames" => spec(
            Variant::ConvMlp,
            "Effect of number of frames",
            &["model.frames", "train.sampler.n_frames"],
            &["# Frames"],
            vec![
                row(&["4"], &["4", "4"], "0.7990 (16 frames)"),
                row(&["8"], &["8", "8"], "0.9031 (32 frames)"),
                row(&["16"], &["16", "16"], "0.9226 (64 frames)"),
            ],
        ),
        "batch-size" => spec(
            Variant::ConvDecoder,
            "Effect of batch size",
            &["train.batch_size"],
            &["Batch Size"],
            vec![
                row(&["4"], &["4"], "0.8898"),
                row(&["16"], &["16"], "0.9105"),
                row(&["32"], &["32"], "0.9168"),
            ],
        ),
        "decoder" => spec(
            Variant::ConvDecoder,
            "Effect of number of heads and layers",
            &["model.n_decoder_heads", "model.n_decoder_layers"],
            &["# Heads", "# Layers"],
            vec![
                row(&["4", "2"], &["4", "2"], "0.9317"),
                row(&["4", "6"], &["4", "6"], "0.9097"),
                row(&["8", "1"], &["8", "1"], "0.8587"),
                row(&["8", "6"], &["8", "6"], "0.5436"),
            ],
        ),
        "sampling" => spec(
            Variant::EncoderMlp,
            "Effect of frame sampling method",
            &["train.sampler.strategy"],
            &["Frame Sampling Method"],
            vec![
                row(&["Random"], &["\"random\""], "0.9239"),
                row(&["Fixed-offset"], &["\"fixed_offset\""], "0.9218"),
                row(&["Varied-offset"], &["\"varied_offset\""], "0.9284"),
            ],
        ),
        "preprocessing" => spec(
            Variant::EncoderMlp,
            "Effect of normalization and data augmentation",
            &["train.preprocess.normalize", "train.preprocess.augment"],
            &["Method"],
            vec![
                row(&["Transformer Encoder & MLP"], &["false", "false"], "0.9218"),
                row(&["+ Norm. & Data Aug."], &["true", "true"], "0.9255"),
            ],
        ),
        "topology" => spec(
            Variant::EncoderMlp,
            "Effect of MLP topology",
            &["model.mlp_topology"],
            &["MLP Topology"],
            vec![
                row(&["24"], &["[24, 2]"], "0.9165 (768)"),
                row(&["16 16"], &["[16, 16, 2]"], "0.9288 (512 512)"),
                row(&["24 24"], &["[24, 24, 2]"], "0.9218 (768 768)"),
                row(&["24 24 24"], &["[24, 24, 24, 2]"], "0.9244 (768 768 768)"),
                row(&["24 24 24 24"], &["[24, 24, 24, 24, 2]"], "0.9219 (768 768 768 768)"),
            ],
        ),
        "alpha-beta" => spec(
            Variant::EncoderDecoder,
            "Effect of MSE-Spearman loss weights",
            &["train.loss.alpha", "train.loss.beta"],
            &["α", "β"],
            vec![
                row(&["0", "1"], &["0.0", "1.0"], "0.3429"),
                row(&["1", "0"], &["1.0", "0.0"], "0.9050"),
                row(&["1", "10"], &["1.0", "10.0"], "0.9063"),
                row(&["1", "1"], &["1.0", "1.0"], "0.9163"),
            ],
        ),
        "weight-decay" => spec(
            Variant::EncoderDecoder,
            "Effect of weight decay",
            &["train.weight_decay"],
            &["Weight Decay"],
            vec![row(&["0"], &["0.0"], "0.9204"), row(&["1e-5"], &["1e-5"], "0.9142")],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown sweep preset {other:?} (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            for k in 0..s.values.len() {
                s.row_config(k).unwrap().validate().unwrap_or_else(|e| panic!("{name} row {k}: {e}"));
            }
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn results_csv_round_trips() {
        let rows = vec![
            ResultRow {
                axis_value: "0;1".into(),
                spearman: Some(0.123456789),
                wall_time_s: 1.5,
            },
            ResultRow {
                axis_value: "1;0".into(),
                spearman: None,
                wall_time_s: 0.25,
            },
        ];
        let mut buf = Vec::new();
        write_results(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"axis_value,spearman,wall_time_s\n"));
        assert_eq!(read_results(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn table_has_label_score_and_reference_columns() {
        let s = preset("alpha-beta").unwrap();
        let rows: Vec<ResultRow> = s
            .values
            .iter()
            .map(|v| ResultRow {
                axis_value: v.axis_value(),
                spearman: Some(0.5),
                wall_time_s: 0.0,
            })
            .collect();
        let t = render_table(&s, &rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[2], "α  β  | Sp. Corr. | paper (full scale)");
        assert_eq!(lines[4], "0  1  | 0.5000    | 0.3429");
        assert_eq!(lines.len(), 8);
    }
}
