//! Checkpoint files: a UTF-8 text header followed by raw little-endian f64s.
//!
//! ```text
//! AQA-CHECKPOINT 1
//! meta <key> <value>          zero or more; value runs to end of line
//! tensor <path> <shape>       one per tensor; shape is `d0,d1,...` or `-` for a scalar
//! end
//! <f64 LE data, tensors concatenated in header order>
//! ```
//!
//! Paths and keys contain no whitespace. The data section holds exactly
//! `sum(product(shape))` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::numel_of;
use crate::error::{Error, Result};

const MAGIC: &str = "AQA-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub path: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamStore) -> Self {
        let tensors = params
            .iter()
            .map(|(_, e)| NamedTensor {
                path: e.path.clone(),
                shape: e.shape.clone(),
                values: e.values.clone(),
            })
            .collect();
        Self {
            meta: BTreeMap::new(),
            tensors,
        }
    }

    pub fn push(&mut self, path: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        self.tensors.push(NamedTensor {
            path: path.into(),
            shape: shape.to_vec(),
            values,
        });
    }

    pub fn get(&self, path: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.path == path)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))
    }

    /// Copies values for every parameter of `params` from this checkpoint.
    pub fn load_into(&self, params: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let path = params.entry(id).path.clone();
            let t = self
                .get(&path)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {path}")))?;
            if t.shape != params.entry(id).shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {path}: shape {:?} in file, {:?} expected",
                    t.shape,
                    params.entry(id).shape
                )));
            }
            params.values_mut(id).copy_from_slice(&t.values);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("meta entry {k:?} is not representable")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for t in &self.tensors {
            if t.path.is_empty() || t.path.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("tensor path {:?} is not representable", t.path)));
            }
            if numel_of(&t.shape) != t.values.len() {
                return Err(Error::Checkpoint(format!("tensor {} has inconsistent length", t.path)));
            }
            let shape = if t.shape.is_empty() {
                "-".to_string()
            } else {
                t.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            header.push_str(&format!("tensor {} {shape}\n", t.path));
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.tensors.iter().map(|t| t.values.len()).sum::<usize>());
        for t in &self.tensors {
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<()> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(Error::Checkpoint("truncated header".into()));
            }
            if line.ends_with('\n') {
                line.pop();
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        if line != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic line {line:?}")));
        }
        let mut ckpt = Checkpoint::default();
        let mut shapes = Vec::new();
        loop {
            next_line(&mut r, &mut line)?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (path, shape) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("bad tensor line {line:?}")))?;
                let shape: Vec<usize> = if shape == "-" {
                    Vec::new()
                } else {
                    shape
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Checkpoint(format!("bad shape in {line:?}: {e}")))?
                };
                shapes.push((path.to_string(), shape));
            } else {
                return Err(Error::Checkpoint(format!("unexpected header line {line:?}")));
            }
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let expected: usize = shapes.iter().map(|(_, s)| numel_of(s)).sum();
        if bytes.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "data section has {} bytes, header implies {}",
                bytes.len(),
                expected * 8
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        for (path, shape) in shapes {
            let n = numel_of(&shape);
            ckpt.tensors.push(NamedTensor {
                path,
                shape,
                values: values.by_ref().take(n).collect(),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        // atomic replace
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bits() {
        let mut c = Checkpoint::default();
        c.meta.insert("epoch".into(), "3".into());
        c.meta.insert("note".into(), "two words".into());
        c.push("enc.w", &[2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 3.0]);
        c.push("scale", &[], vec![42.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("enc.w").unwrap().values[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn header_is_plain_text() {
        let mut c = Checkpoint::default();
        c.push("a", &[2], vec![1.0, 2.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let header = "AQA-CHECKPOINT 1\ntensor a 2\nend\n";
        assert_eq!(&buf[..header.len()], header.as_bytes());
        assert_eq!(&buf[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut c = Checkpoint::default();
        c.push("a", &[2], vec![1.0, 2.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(Checkpoint::read_from(&buf[..]).is_err());
    }

    #[test]
    fn load_into_checks_shapes() {
        let mut p = ParamStore::new();
        p.add("w", &[2], vec![0.0, 0.0]).unwrap();
        let mut c = Checkpoint::default();
        c.push("w", &[1, 2], vec![1.0, 2.0]);
        assert!(c.load_into(&mut p).is_err());
        let mut c = Checkpoint::default();
        c.push("w", &[2], vec![1.0, 2.0]);
        c.load_into(&mut p).unwrap();
        assert_eq!(p.entry(p.id("w").unwrap()).values, vec![1.0, 2.0]);
    }
}
