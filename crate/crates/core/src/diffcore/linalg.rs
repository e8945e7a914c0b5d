//! Matrix products.

use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

/// `c += a[m,k] @ b[k,n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            ci.iter_mut().zip(bp).for_each(|(c, &b)| *c += aip * b);
        }
    }
}

/// `c += a[m,n] @ b[k,n]^T`, giving `[m,k]`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ai = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            c[i * k + p] += ai.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += a[m,k]^T @ b[m,n]`, giving `[k,n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            c[p * n..(p + 1) * n].iter_mut().zip(bi).for_each(|(c, &b)| *c += aip * b);
        }
    }
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// Leading axes are batch axes and must agree, except that a rank-2
    /// right operand is shared across every batch of the left one
    /// (`[..., m, k] @ [k, n]`).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared_rhs = sb.len() == 2;
        let batch_a = &sa[..sa.len() - 2];
        if !shared_rhs && batch_a != &sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let batch = numel_of(batch_a);

        let (a, b) = (self.data(), rhs.data());
        let mut out = vec![0.0; batch * m * n];
        if shared_rhs {
            // one tall product
            gemm_nn(a, b, &mut out, batch * m, k, n);
        } else {
            for t in 0..batch {
                gemm_nn(
                    &a[t * m * k..(t + 1) * m * k],
                    &b[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = batch_a.to_vec();
        shape.extend([m, n]);
        Ok(Tensor::from_op(
            "matmul",
            out,
            shape,
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![0.0; a.len()];
                    if shared_rhs {
                        gemm_nt(g, b, &mut ga, batch * m, n, k);
                    } else {
                        for t in 0..batch {
                            gemm_nt(
                                &g[t * m * n..(t + 1) * m * n],
                                &b[t * k * n..(t + 1) * k * n],
                                &mut ga[t * m * k..(t + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![0.0; b.len()];
                    if shared_rhs {
                        gemm_tn(a, g, &mut gb, batch * m, k, n);
                    } else {
                        for t in 0..batch {
                            gemm_tn(
                                &a[t * m * k..(t + 1) * m * k],
                                &g[t * m * n..(t + 1) * m * n],
                                &mut gb[t * k * n..(t + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `self @ other^T` over the last two axes with equal batch axes;
    /// the attention score product.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let mismatch = || Error::Shape {
            op: "matmul_nt",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() != sa.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let (m, d) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k, d2) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if d != d2 {
            return Err(mismatch());
        }
        let batch = numel_of(&sa[..sa.len() - 2]);
        let (a, b) = (self.data(), rhs.data());
        let mut out = vec![0.0; batch * m * k];
        for t in 0..batch {
            gemm_nt(
                &a[t * m * d..(t + 1) * m * d],
                &b[t * k * d..(t + 1) * k * d],
                &mut out[t * m * k..(t + 1) * m * k],
                m,
                d,
                k,
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, k]);
        Ok(Tensor::from_op(
            "matmul_nt",
            out,
            shape,
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad_out;
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                // out = a b^T: da = g b, db = g^T a
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![0.0; a.len()];
                    for t in 0..batch {
                        gemm_nn(
                            &g[t * m * k..(t + 1) * m * k],
                            &b[t * k * d..(t + 1) * k * d],
                            &mut ga[t * m * d..(t + 1) * m * d],
                            m,
                            k,
                            d,
                        );
                    }
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![0.0; b.len()];
                    for t in 0..batch {
                        gemm_tn(
                            &g[t * m * k..(t + 1) * m * k],
                            &a[t * m * d..(t + 1) * m * d],
                            &mut gb[t * k * d..(t + 1) * k * d],
                            m,
                            k,
                            d,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_a_is_a() {
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
        let a: Vec<f64> = (0..9).map(|i| (i as f64) * 0.7 - 2.0).collect();
        let a = Tensor::new(a, &[3, 3]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn inner_dim_mismatch_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    }

    #[test]
    fn batched_matches_per_batch() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 * 0.05).collect();
        let ta = Tensor::new(a.clone(), &[2, 2, 3]).unwrap();
        let tb = Tensor::new(b.clone(), &[2, 3, 2]).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for t in 0..2 {
            let at = Tensor::new(a[t * 6..t * 6 + 6].to_vec(), &[2, 3]).unwrap();
            let bt = Tensor::new(b[t * 6..t * 6 + 6].to_vec(), &[3, 2]).unwrap();
            assert_eq!(&c.data()[t * 4..t * 4 + 4], at.matmul(&bt).unwrap().data());
        }
    }

    #[test]
    fn matmul_nt_equals_explicit_transpose() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..18).map(|i| (i as f64).cos()).collect();
        let ta = Tensor::new(a, &[2, 2, 3]).unwrap();
        let tb = Tensor::new(b, &[2, 3, 3]).unwrap();
        let direct = ta.matmul_nt(&tb).unwrap();
        let explicit = ta.matmul(&tb.transpose(1, 2).unwrap()).unwrap();
        for (x, y) in direct.data().iter().zip(explicit.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
