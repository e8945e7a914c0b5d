//! Transformer decoder driven by learned query tokens.

use super::layers::{Attention, FeedForward, ForwardCtx, Init, LayerNorm};
use crate::diffcore::{Bound, ParamId, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerDecoder {
    queries: ParamId,
    n_queries: usize,
    layers: Vec<DecoderLayer>,
    ln_out: LayerNorm,
    dim: usize,
    dropout: f64,
}

impl TransformerDecoder {
    pub fn new(
        init: &mut Init,
        dim: usize,
        heads: usize,
        n_layers: usize,
        n_queries: usize,
        ffn_ratio: usize,
        dropout: f64,
    ) -> Result<Self> {
        let queries = init.embedding("dec.queries", &[n_queries, dim])?;
        let layers = (0..n_layers)
            .map(|i| {
                let path = format!("dec.{i}");
                Ok(DecoderLayer {
                    ln_self: LayerNorm::new(init, &format!("{path}.ln_self"), dim)?,
                    self_attn: Attention::new(init, &format!("{path}.self"), dim, heads)?,
                    ln_cross: LayerNorm::new(init, &format!("{path}.ln_cross"), dim)?,
                    cross_attn: Attention::new(init, &format!("{path}.cross"), dim, heads)?,
                    ln_ffn: LayerNorm::new(init, &format!("{path}.ln_ffn"), dim)?,
                    ffn: FeedForward::new(init, &format!("{path}.ffn"), dim, ffn_ratio)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            queries,
            n_queries,
            layers,
            ln_out: LayerNorm::new(init, "dec.ln_out", dim)?,
            dim,
            dropout,
        })
    }

    /// `memory [S, D] -> [n_queries, D]`
    pub fn forward(&self, p: &Bound, memory: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let s = memory.shape();
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::Shape {
                op: "transformer_decoder",
                lhs: s.to_vec(),
                rhs: vec![0, self.dim],
            });
        }
        let (q, d) = (self.n_queries, self.dim);
        let memory = memory.reshape(&[1, s[0], d])?;
        let idx: Vec<usize> = (0..q).collect();
        let mut x = p[self.queries].embedding(&idx)?.reshape(&[1, q, d])?;
        for layer in &self.layers {
            let h = layer.ln_self.forward(p, &x)?;
            let a = layer.self_attn.forward(p, &h, &h, ctx)?;
            x = x.add(&ctx.dropout(&a, self.dropout)?)?;
            let h = layer.ln_cross.forward(p, &x)?;
            let a = layer.cross_attn.forward(p, &h, &memory, ctx)?;
            x = x.add(&ctx.dropout(&a, self.dropout)?)?;
            let h = layer.ln_ffn.forward(p, &x)?;
            let a = layer.ffn.forward(p, &h)?;
            x = x.add(&ctx.dropout(&a, self.dropout)?)?;
        }
        self.ln_out.forward(p, &x.reshape(&[q, d])?)
    }
}
