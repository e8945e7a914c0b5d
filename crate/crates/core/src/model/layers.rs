use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{dropout_mask, Bound, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// Standard deviation of token, position and query embeddings at init.
const EMBED_STD: f64 = 0.02;

/// Mode and randomness for one forward pass.
pub struct ForwardCtx {
    train: bool,
    rng: ChaCha8Rng,
    attention: Option<Vec<Tensor>>,
}

impl ForwardCtx {
    /// Dropout off.
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: crate::seed::rng(0, &[]),
            attention: None,
        }
    }

    /// Dropout on, with masks drawn from `seed`.
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: crate::seed::rng(seed, &[crate::seed::stream::DROPOUT]),
            attention: None,
        }
    }

    /// Keep every attention probability tensor computed in this pass.
    pub fn recording(mut self) -> Self {
        self.attention = Some(Vec::new());
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Attention probabilities `[groups * heads, queries, keys]`, in call order.
    pub fn attention_maps(&self) -> &[Tensor] {
        self.attention.as_deref().unwrap_or(&[])
    }

    pub(crate) fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let mask = dropout_mask(x.numel(), p, &mut self.rng);
        x.dropout_with_mask(&mask)
    }

    fn record(&mut self, probs: &Tensor) {
        if let Some(maps) = &mut self.attention {
            maps.push(probs.detach());
        }
    }
}

/// Registers parameters with their initial values.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform Glorot init for `[fan_in, fan_out]`-shaped weights.
    pub fn glorot(&mut self, path: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-a..a)).collect();
        self.store.add(path, shape, values)
    }

    pub fn normal(&mut self, path: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(path, shape, values)
    }

    pub fn embedding(&mut self, path: &str, shape: &[usize]) -> Result<ParamId> {
        self.normal(path, shape, EMBED_STD)
    }

    pub fn constant(&mut self, path: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.add(path, shape, vec![v; shape.iter().product()])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, path: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: init.glorot(&format!("{path}.w"), &[fan_in, fan_out], fan_in, fan_out)?,
            b: init.constant(&format!("{path}.b"), &[fan_out], 0.0)?,
        })
    }

    /// `x [..., in] -> [..., out]`
    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.matmul(&p[self.w])?.add(&p[self.b])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(&format!("{path}.gamma"), &[dim], 1.0)?,
            beta: init.constant(&format!("{path}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(LN_EPS)?.mul(&p[self.gamma])?.add(&p[self.beta])
    }
}

/// Two-layer GELU feed-forward sublayer.
#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, path: &str, dim: usize, ratio: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(init, &format!("{path}.up"), dim, dim * ratio)?,
            down: Linear::new(init, &format!("{path}.down"), dim * ratio, dim)?,
        })
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.down.forward(p, &self.up.forward(p, x)?.gelu())
    }
}

/// Regression head: linear layers with ReLU and dropout between them.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
    dropout: f64,
}

impl Mlp {
    pub fn new(init: &mut Init, path: &str, input: usize, widths: &[usize], dropout: f64) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(init, &format!("{path}.{i}"), fan_in, w)?);
            fan_in = w;
        }
        Ok(Self { layers, dropout })
    }

    pub fn forward(&self, p: &Bound, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, &h)?;
            if i + 1 < self.layers.len() {
                h = ctx.dropout(&h.relu(), self.dropout)?;
            }
        }
        Ok(h)
    }
}

/// Multi-head scaled dot-product attention over independent groups.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, path: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(init, &format!("{path}.q"), dim, dim)?,
            k: Linear::new(init, &format!("{path}.k"), dim, dim)?,
            v: Linear::new(init, &format!("{path}.v"), dim, dim)?,
            o: Linear::new(init, &format!("{path}.o"), dim, dim)?,
            heads,
        })
    }

    /// Queries `x [G, L, D]` attend to `kv [G, S, D]` within each group.
    pub fn forward(&self, p: &Bound, x: &Tensor, kv: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (sx, skv) = (x.shape(), kv.shape());
        if sx.len() != 3 || skv.len() != 3 || sx[0] != skv[0] || sx[2] != skv[2] {
            return Err(Error::Shape {
                op: "attention",
                lhs: sx.to_vec(),
                rhs: skv.to_vec(),
            });
        }
        let (g, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let s = kv.shape()[1];
        let (h, dh) = (self.heads, d / self.heads);
        let split = |t: Tensor, len: usize| -> Result<Tensor> {
            t.reshape(&[g, len, h, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[g * h, len, dh])
        };
        let q = split(self.q.forward(p, x)?, l)?;
        let k = split(self.k.forward(p, kv)?, s)?;
        let v = split(self.v.forward(p, kv)?, s)?;
        let probs = q.matmul_nt(&k)?.scale(1.0 / (dh as f64).sqrt()).softmax()?;
        ctx.record(&probs);
        let out = probs
            .matmul(&v)?
            .reshape(&[g, h, l, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[g, l, d])?;
        self.o.forward(p, &out)
    }
}
