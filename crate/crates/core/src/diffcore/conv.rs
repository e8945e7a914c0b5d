//! Direct 3D convolution over `[channels, time, height, width]` volumes.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    /// Calls `f(out_index, in_index, weight_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [ti, hi, wi] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [to, ho, wo] = self.output;
        let in_plane = ti * hi * wi;
        let out_plane = to * ho * wo;
        for co in 0..self.cout {
            for ci in 0..self.cin {
                let wbase = (co * self.cin + ci) * kt * kh * kw;
                let ibase = ci * in_plane;
                for ot in 0..to {
                    for dt in 0..kt {
                        let it = (ot * self.stride[0] + dt) as isize - self.pad[0] as isize;
                        if it < 0 || it >= ti as isize {
                            continue;
                        }
                        for oh in 0..ho {
                            for dh in 0..kh {
                                let ih = (oh * self.stride[1] + dh) as isize - self.pad[1] as isize;
                                if ih < 0 || ih >= hi as isize {
                                    continue;
                                }
                                let row = ibase + (it as usize * hi + ih as usize) * wi;
                                let orow = co * out_plane + (ot * ho + oh) * wo;
                                for dw in 0..kw {
                                    let widx = wbase + (dt * kh + dh) * kw + dw;
                                    for ow in 0..wo {
                                        let iw = (ow * self.stride[2] + dw) as isize - self.pad[2] as isize;
                                        if iw < 0 || iw >= wi as isize {
                                            continue;
                                        }
                                        f(orow + ow, row + iw as usize, widx);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output extent along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl Tensor {
    /// `input [cin, t, h, w]` convolved with `weight [cout, cin, kt, kh, kw]`,
    /// plus an optional per-output-channel `bias [cout]`.
    pub fn conv3d(&self, weight: &Tensor, bias: Option<&Tensor>, spec: Conv3dSpec) -> Result<Tensor> {
        let (si, sw) = (self.shape(), weight.shape());
        if si.len() != 4 || sw.len() != 5 || si[0] != sw[1] {
            return Err(Error::Shape {
                op: "conv3d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [sw[0]] {
                return Err(Error::Shape {
                    op: "conv3d bias",
                    lhs: sw.to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_out_len(si[a + 1], sw[a + 2], spec.stride[a], spec.padding[a]).ok_or_else(|| {
                Error::op(
                    "conv3d",
                    format!("kernel {:?} does not fit input {:?} with padding {:?}", &sw[2..], &si[1..], spec.padding),
                )
            })?;
        }
        let geo = Geometry {
            cin: si[0],
            cout: sw[0],
            input: [si[1], si[2], si[3]],
            kernel: [sw[2], sw[3], sw[4]],
            output,
            stride: spec.stride,
            pad: spec.padding,
        };
        let out_plane = output.iter().product::<usize>();
        let mut out = vec![0.0; geo.cout * out_plane];
        if let Some(b) = bias {
            for (co, chunk) in out.chunks_exact_mut(out_plane).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let (x, w) = (self.data(), weight.data());
        geo.for_each_tap(|o, i, k| out[o] += x[i] * w[k]);

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let mut shape = vec![geo.cout];
        shape.extend(output);
        Ok(Tensor::from_op(
            "conv3d",
            out,
            shape,
            inputs,
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; x.len()];
                    geo.for_each_tap(|o, i, k| gx[i] += g[o] * w[k]);
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    let mut gw = vec![0.0; w.len()];
                    geo.for_each_tap(|o, i, k| gw[k] += g[o] * x[i]);
                    gw
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| g.chunks_exact(out_plane).map(|c| c.iter().sum()).collect()));
                }
                grads
            }),
        ))
    }
}
