//! Small 3D-convolution clip encoder.

use super::layers::{Init, Linear};
use crate::diffcore::{Bound, Conv3dSpec, ParamId, Tensor};
use crate::error::{Error, Result};

const KERNEL: usize = 3;
const SPEC: Conv3dSpec = Conv3dSpec {
    stride: [1, 2, 2],
    padding: [1, 1, 1],
};

#[derive(Debug, Clone)]
pub(crate) struct ConvEncoder {
    convs: Vec<(ParamId, ParamId)>,
    proj: Linear,
}

impl ConvEncoder {
    pub fn new(init: &mut Init, channels: &[usize], dim: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(channels.len());
        let mut cin = 3;
        for (i, &cout) in channels.iter().enumerate() {
            let taps = KERNEL.pow(3);
            let w = init.glorot(
                &format!("conv.{i}.w"),
                &[cout, cin, KERNEL, KERNEL, KERNEL],
                cin * taps,
                cout * taps,
            )?;
            let b = init.constant(&format!("conv.{i}.b"), &[cout], 0.0)?;
            convs.push((w, b));
            cin = cout;
        }
        Ok(Self {
            convs,
            proj: Linear::new(init, "conv.proj", cin, dim)?,
        })
    }

    /// Conv stack output before the final activation, `[C, T, H', W']`.
    pub fn features(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        let s = clip.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape {
                op: "conv_encoder",
                lhs: s.to_vec(),
                rhs: vec![0, 3, 0, 0],
            });
        }
        let mut x = clip.permute(&[1, 0, 2, 3])?;
        for (i, (w, b)) in self.convs.iter().enumerate() {
            if i > 0 {
                x = x.relu();
            }
            x = x.conv3d(&p[*w], Some(&p[*b]), SPEC)?;
        }
        Ok(x)
    }

    /// `clip [N, 3, H, W] -> [D]`: conv stack, ReLU, global average pool, linear.
    pub fn forward(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        let x = self.features(p, clip)?.relu();
        let c = x.shape()[0];
        let pooled = x.reshape(&[c, x.numel() / c])?.mean_axis(1)?.reshape(&[1, c])?;
        let d = self.proj.forward(p, &pooled)?;
        let dim = d.shape()[1];
        d.reshape(&[dim])
    }
}
