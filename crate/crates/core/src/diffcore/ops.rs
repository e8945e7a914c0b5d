//! Elementwise, reduction and shape ops.

use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Output shape and repeat count when one shape is a suffix of the other.
/// Returns `(out_shape, lhs_is_small)`.
fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, bool)> {
    let (long, short, lhs_small) = if a.len() >= b.len() { (a, b, false) } else { (b, a, true) };
    if long[long.len() - short.len()..] != *short {
        return Err(Error::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    // Equal shapes are not a broadcast.
    let lhs_small = lhs_small && a.len() != b.len();
    Ok((long.to_vec(), lhs_small))
}

/// Sums a gradient over the leading repetitions of a broadcast operand.
fn reduce_to(g: &[f64], small: usize) -> Vec<f64> {
    if g.len() == small {
        return g.to_vec();
    }
    let mut out = vec![0.0; small];
    for chunk in g.chunks_exact(small) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: Binary) -> Result<Tensor> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (shape, _) = suffix_broadcast(name, self.shape(), other.shape())?;
        let n = numel_of(&shape);
        let (a, b) = (self.data(), other.data());
        let (na, nb) = (a.len(), b.len());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<f64> = if na == nb {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        } else if na > nb {
            (0..n).map(|i| f(a[i], b[i % nb])).collect()
        } else {
            (0..n).map(|i| f(a[i % na], b[i])).collect()
        };
        Ok(Tensor::from_op(
            name,
            data,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let (na, nb) = (a.len(), b.len());
                let ga = ctx.needs[0].then(|| {
                    let full: Vec<f64> = match kind {
                        Binary::Add | Binary::Sub => g.to_vec(),
                        Binary::Mul => g.iter().enumerate().map(|(i, gi)| gi * b[i % nb]).collect(),
                    };
                    reduce_to(&full, na)
                });
                let gb = ctx.needs[1].then(|| {
                    let full: Vec<f64> = match kind {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|v| -v).collect(),
                        Binary::Mul => g.iter().enumerate().map(|(i, gi)| gi * a[i % na]).collect(),
                    };
                    reduce_to(&full, nb)
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise sum; a shape that is a suffix of the other broadcasts
    /// over the leading axes.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            op,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let g = x
                    .iter()
                    .zip(ctx.out)
                    .zip(ctx.grad_out)
                    .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Elementwise `x^p`.
    pub fn powf(&self, p: f64) -> Tensor {
        self.unary("pow", |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        self.unary(
            "gelu",
            |x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()),
            |x, _| {
                let t = (C * (x + A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(
            "sum",
            vec![s],
            Vec::new(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(vec![ctx.grad_out[0]; ctx.inputs[0].numel()])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    fn axis_split(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::op(op, format!("axis {axis} out of range for shape {shape:?}")));
        }
        Ok((
            numel_of(&shape[..axis]),
            shape[axis],
            numel_of(&shape[axis + 1..]),
        ))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_split("sum_axis", axis)?;
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "sum_axis",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        gx[(o * n + k) * inner..(o * n + k + 1) * inner].copy_from_slice(src);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::op("mean_axis", format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad_out.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::op("permute", format!("invalid axes {axes:?} for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(self.data(), shape, axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(permute_data(ctx.grad_out, &out_shape_c, &inverse))]),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(Error::op(
                "transpose",
                format!("axes ({a}, {b}) out of range for shape {:?}", self.shape()),
            ));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::op("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::op("concat", format!("axis {axis} out of range for shape {base:?}")));
        }
        for p in &parts[1..] {
            let s = p.shape();
            if s.len() != base.len() || s.iter().zip(base).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer = numel_of(&base[..axis]);
        let inner = numel_of(&base[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            "concat",
            out,
            shape,
            parts.to_vec(),
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let mut offset = 0;
                widths
                    .iter()
                    .zip(ctx.needs)
                    .map(|(&w, &need)| {
                        let start = offset;
                        offset += w;
                        need.then(|| {
                            let mut gp = Vec::with_capacity(outer * w);
                            for o in 0..outer {
                                gp.extend_from_slice(&g[o * row + start..o * row + start + w]);
                            }
                            gp
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Indices `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_split("slice", axis)?;
        if start >= end || end > n {
            return Err(Error::op(
                "slice",
                format!("range {start}..{end} invalid for axis {axis} of {:?}", self.shape()),
            ));
        }
        let w = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&self.data()[base..base + w]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        Ok(Tensor::from_op(
            "slice",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    gx[base..base + w].copy_from_slice(&ctx.grad_out[o * w..(o + 1) * w]);
                }
                vec![Some(gx)]
            }),
        ))
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    if axes.iter().enumerate().all(|(i, &a)| i == a) {
        return x.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let last = rank - 1;
    let (inner_n, inner_stride) = (out_shape[last], src_strides[last]);
    while out.len() < n {
        for k in 0..inner_n {
            out.push(x[src + k * inner_stride]);
        }
        // advance the multi-index, skipping the innermost axis
        let mut d = last;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
