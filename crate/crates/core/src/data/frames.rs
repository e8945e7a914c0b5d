//! Frame storage on disk.
//!
//! A clip directory holds either a raw shard or individual images:
//!
//! * `shape.txt` containing `T 3 H W`, and `frames.f32` holding `T*H*W*3`
//!   little-endian f32 values, frame-major, rows top to bottom, RGB
//!   interleaved, in [0, 1];
//! * or image files (`.png`, `.jpg`, `.jpeg`), one per frame, ordered by
//!   file name.

use std::fs;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::Rgb32FImage;

use crate::error::{Error, Result};

pub const SHAPE_FILE: &str = "shape.txt";
pub const SHARD_FILE: &str = "frames.f32";

#[derive(Debug, Clone, PartialEq)]
pub enum DiskFrames {
    Shard { dir: PathBuf, height: u32, width: u32 },
    Images(Vec<PathBuf>),
}

impl DiskFrames {
    /// Inspects `dir` and returns its layout and frame count.
    pub fn probe(dir: &Path) -> Result<(Self, usize)> {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("frames directory {} does not exist", dir.display())));
        }
        let shape_path = dir.join(SHAPE_FILE);
        if shape_path.is_file() {
            let text = fs::read_to_string(&shape_path)?;
            let dims: Vec<usize> = text
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: shape_path.clone(),
                    line: 1,
                    msg: format!("bad shape: {e}"),
                })?;
            let &[t, 3, h, w] = dims.as_slice() else {
                return Err(Error::Parse {
                    path: shape_path,
                    line: 1,
                    msg: format!("expected `T 3 H W`, got {text:?}"),
                });
            };
            if t == 0 || h == 0 || w == 0 {
                return Err(Error::Parse {
                    path: shape_path,
                    line: 1,
                    msg: "zero extent".into(),
                });
            }
            let expected = (t * h * w * 3 * 4) as u64;
            let actual = fs::metadata(dir.join(SHARD_FILE))?.len();
            if actual != expected {
                return Err(Error::invalid(format!(
                    "{}: {actual} bytes, shape implies {expected}",
                    dir.join(SHARD_FILE).display()
                )));
            }
            let shard = DiskFrames::Shard {
                dir: dir.to_path_buf(),
                height: h as u32,
                width: w as u32,
            };
            return Ok((shard, t));
        }
        let mut images: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        if images.is_empty() {
            return Err(Error::invalid(format!("no frames found in {}", dir.display())));
        }
        images.sort();
        let n = images.len();
        Ok((DiskFrames::Images(images), n))
    }

    pub fn load(&self, indices: &[usize]) -> Result<Vec<Rgb32FImage>> {
        match self {
            DiskFrames::Shard { dir, height, width } => {
                let path = dir.join(SHARD_FILE);
                let mut f = fs::File::open(&path)?;
                let floats = (*height as usize) * (*width as usize) * 3;
                let mut buf = vec![0u8; floats * 4];
                indices
                    .iter()
                    .map(|&i| {
                        f.seek(SeekFrom::Start((i * floats * 4) as u64))?;
                        f.read_exact(&mut buf)?;
                        let data = buf
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                            .collect();
                        Rgb32FImage::from_raw(*width, *height, data)
                            .ok_or_else(|| Error::invalid(format!("{}: short frame {i}", path.display())))
                    })
                    .collect()
            }
            DiskFrames::Images(paths) => indices
                .iter()
                .map(|&i| {
                    let p = paths
                        .get(i)
                        .ok_or_else(|| Error::invalid(format!("frame {i} out of range ({} frames)", paths.len())))?;
                    image::open(p)
                        .map(|img| img.to_rgb32f())
                        .map_err(|source| Error::Image {
                            path: p.clone(),
                            source,
                        })
                })
                .collect(),
        }
    }
}

/// Writes a raw shard for `frames` into `dir`, which is created if missing.
pub fn write_shard<I>(dir: &Path, frames: I) -> Result<()>
where
    I: IntoIterator<Item = Rgb32FImage>,
{
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(SHARD_FILE))?);
    let mut count = 0usize;
    let mut dims = None;
    for frame in frames {
        let d = frame.dimensions();
        if *dims.get_or_insert(d) != d {
            return Err(Error::invalid("frames in one shard must share a size"));
        }
        for v in frame.as_raw() {
            out.write_all(&v.to_le_bytes())?;
        }
        count += 1;
    }
    out.flush()?;
    let (w, h) = dims.ok_or_else(|| Error::invalid("shard needs at least one frame"))?;
    fs::write(dir.join(SHAPE_FILE), format!("{count} 3 {h} {w}\n"))?;
    Ok(())
}
