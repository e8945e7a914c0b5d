//! Patch embedding and divided space-time attention blocks.
//!
//! Tokens are `[1 + N*P, D]`: the class token first, then grid tokens in
//! frame-major order (token `1 + n*P + p` is patch `p` of frame `n`).

use super::layers::{Attention, FeedForward, ForwardCtx, Init, LayerNorm, Linear};
use crate::diffcore::{Bound, ParamId, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct PatchEmbed {
    proj: Linear,
    cls: ParamId,
    pos: ParamId,
    frames: usize,
    image: usize,
    patch: usize,
}

impl PatchEmbed {
    pub fn new(init: &mut Init, frames: usize, image: usize, patch: usize, dim: usize) -> Result<Self> {
        let grid = (image / patch) * (image / patch);
        Ok(Self {
            proj: Linear::new(init, "patch.proj", 3 * patch * patch, dim)?,
            cls: init.embedding("patch.cls", &[1, dim])?,
            pos: init.embedding("patch.pos", &[1 + frames * grid, dim])?,
            frames,
            image,
            patch,
        })
    }

    /// `clip [N, 3, H, W] -> tokens [1 + N*P, D]`
    pub fn forward(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        let s = clip.shape();
        if s.len() != 4 || s[1] != 3 || s[0] != self.frames || s[2] != self.image || s[3] != self.image {
            return Err(Error::Shape {
                op: "patch_embed",
                lhs: s.to_vec(),
                rhs: vec![self.frames, 3, self.image, self.image],
            });
        }
        let (n, k) = (self.frames, self.patch);
        let g = self.image / k;
        let patches = clip
            .reshape(&[n, 3, g, k, g, k])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[n * g * g, 3 * k * k])?;
        let grid = self.proj.forward(p, &patches)?;
        Tensor::concat(&[p[self.cls].clone(), grid], 0)?.add(&p[self.pos])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DividedBlock {
    ln_t: LayerNorm,
    attn_t: Attention,
    ln_s: LayerNorm,
    attn_s: Attention,
    ln_f: LayerNorm,
    ffn: FeedForward,
}

impl DividedBlock {
    pub fn new(init: &mut Init, path: &str, dim: usize, heads: usize, ffn_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln_t: LayerNorm::new(init, &format!("{path}.ln_t"), dim)?,
            attn_t: Attention::new(init, &format!("{path}.attn_t"), dim, heads)?,
            ln_s: LayerNorm::new(init, &format!("{path}.ln_s"), dim)?,
            attn_s: Attention::new(init, &format!("{path}.attn_s"), dim, heads)?,
            ln_f: LayerNorm::new(init, &format!("{path}.ln_f"), dim)?,
            ffn: FeedForward::new(init, &format!("{path}.ffn"), dim, ffn_ratio)?,
        })
    }

    pub fn forward(
        &self,
        p: &Bound,
        tokens: &Tensor,
        frames: usize,
        patches: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let s = tokens.shape();
        if s.len() != 2 || s[0] != 1 + frames * patches {
            return Err(Error::op(
                "divided_attention_block",
                format!("expected {} tokens for {frames} frames x {patches} patches, got shape {s:?}", 1 + frames * patches),
            ));
        }
        let x = tokens.add(&self.axis_attention(p, tokens, frames, patches, true, ctx)?)?;
        let x = x.add(&self.axis_attention(p, &x, frames, patches, false, ctx)?)?;
        x.add(&self.ffn.forward(p, &self.ln_f.forward(p, &x)?)?)
    }

    /// Residual update from attention along time (`temporal`) or space.
    ///
    /// Each group is one spatial position (temporal) or one frame (spatial),
    /// prefixed by its own copy of the class token; the class token's outputs
    /// are averaged over groups.
    fn axis_attention(
        &self,
        p: &Bound,
        tokens: &Tensor,
        frames: usize,
        patches: usize,
        temporal: bool,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let (ln, attn) = if temporal {
            (&self.ln_t, &self.attn_t)
        } else {
            (&self.ln_s, &self.attn_s)
        };
        let d = tokens.shape()[1];
        let len = tokens.shape()[0];
        let h = ln.forward(p, tokens)?;
        let cls = h.slice(0, 0, 1)?;
        let mut grid = h.slice(0, 1, len)?.reshape(&[frames, patches, d])?;
        let (groups, members) = if temporal {
            grid = grid.transpose(0, 1)?;
            (patches, frames)
        } else {
            (frames, patches)
        };
        let cls_copies = Tensor::zeros(&[groups, 1, d]).add(&cls)?;
        let seq = Tensor::concat(&[cls_copies, grid], 1)?;
        let out = attn.forward(p, &seq, &seq, ctx)?;
        let cls_out = out.slice(1, 0, 1)?.mean_axis(0)?;
        let mut grid_out = out.slice(1, 1, 1 + members)?;
        if temporal {
            grid_out = grid_out.transpose(0, 1)?;
        }
        Tensor::concat(&[cls_out, grid_out.reshape(&[frames * patches, d])?], 0)
    }
}
