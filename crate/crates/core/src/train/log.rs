use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "epoch,train_loss,train_spearman,eval_spearman,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_spearman: f64,
    pub eval_spearman: f64,
    pub wall_time_s: f64,
}

impl EpochRow {
    /// Every field but the wall time, as raw bits.
    fn metric_bits(&self) -> (usize, u64, u64, u64) {
        (
            self.epoch,
            self.train_loss.to_bits(),
            self.train_spearman.to_bits(),
            self.eval_spearman.to_bits(),
        )
    }
}

/// Per-epoch training metrics, in epoch order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    /// True when both logs agree bit for bit on everything except wall time.
    pub fn same_metrics(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.metric_bits() == b.metric_bits())
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(LOG_HEADER.split(',')).map_err(csv_err)?;
        for r in &self.rows {
            out.serialize(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header.join(",") != LOG_HEADER {
            return Err(Error::invalid(format!("train log header {:?} is not {LOG_HEADER:?}", header.join(","))));
        }
        let rows = rd.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let log = TrainLog {
            rows: vec![
                EpochRow {
                    epoch: 1,
                    train_loss: 0.123456789012345,
                    train_spearman: -0.1,
                    eval_spearman: 1.0 / 3.0,
                    wall_time_s: 2.5,
                },
                EpochRow {
                    epoch: 2,
                    train_loss: 1e-300,
                    train_spearman: 0.0,
                    eval_spearman: 0.9,
                    wall_time_s: 5.0,
                },
            ],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_spearman,eval_spearman,wall_time_s\n1,"));
        assert_eq!(TrainLog::read_csv(&buf[..]).unwrap(), log);
    }
}
