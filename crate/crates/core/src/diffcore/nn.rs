//! Normalization, attention-support and regularization ops.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    fn last_axis(&self, op: &'static str) -> Result<usize> {
        self.shape()
            .last()
            .copied()
            .ok_or_else(|| Error::op(op, "needs rank >= 1"))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let d = self.last_axis("softmax")?;
        let mut out = self.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(Tensor::from_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx = Vec::with_capacity(ctx.out.len());
                for (y, g) in ctx.out.chunks_exact(d).zip(ctx.grad_out.chunks_exact(d)) {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    gx.extend(y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalizes each last-axis row to zero mean and unit variance
    /// (population variance, `eps` added under the root). No affine part.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let d = self.last_axis("layer_norm")?;
        let rows = self.numel() / d;
        let mut out = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * r));
            inv_std.push(r);
        }
        Ok(Tensor::from_op(
            "layer_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx = Vec::with_capacity(ctx.out.len());
                let n = d as f64;
                for ((xh, g), r) in ctx.out.chunks_exact(d).zip(ctx.grad_out.chunks_exact(d)).zip(&inv_std) {
                    let g_mean = g.iter().sum::<f64>() / n;
                    let gx_mean = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                    gx.extend(xh.iter().zip(g).map(|(x, gi)| r * (gi - g_mean - x * gx_mean)));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Multiplies by a precomputed dropout mask (entries `0` or `1/(1-p)`).
    pub fn dropout_with_mask(&self, mask: &[f64]) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(Error::Shape {
                op: "dropout",
                lhs: self.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = self.data().iter().zip(mask).map(|(x, m)| x * m).collect();
        let mask = mask.to_vec();
        Ok(Tensor::from_op(
            "dropout",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad_out.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        ))
    }

    /// Rows of `self` (a `[vocab, dim]` table) selected by `indices`.
    pub fn embedding(&self, indices: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::op("embedding", format!("table must be rank 2, got {shape:?}")));
        }
        let (vocab, dim) = (shape[0], shape[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::op("embedding", format!("index {bad} out of range for {vocab} rows")));
        }
        if indices.is_empty() {
            return Err(Error::op("embedding", "no indices"));
        }
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&self.data()[i * dim..(i + 1) * dim]);
        }
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "embedding",
            out,
            vec![indices.len(), dim],
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gt = vec![0.0; vocab * dim];
                for (r, &i) in idx.iter().enumerate() {
                    gt[i * dim..(i + 1) * dim]
                        .iter_mut()
                        .zip(&ctx.grad_out[r * dim..(r + 1) * dim])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(gt)]
            }),
        ))
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}
