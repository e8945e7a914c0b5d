//! The four regression architectures, scaled down for CPU training.
//!
//! | variant           | backbone                    | head                              |
//! |-------------------|-----------------------------|-----------------------------------|
//! | `conv_mlp`        | 3D conv encoder             | MLP                               |
//! | `conv_decoder`    | 3D conv encoder             | transformer decoder, then MLP     |
//! | `encoder_mlp`     | divided space-time encoder  | MLP on the class token            |
//! | `encoder_decoder` | divided space-time encoder  | transformer decoder, then linear  |
//!
//! Every variant maps a clip `[N, 3, H, W]` to `[1, 2]`: the raw normalized
//! score and difficulty predictions. Decoder outputs are averaged over the
//! query tokens before the head.

mod conv;
mod decoder;
mod encoder;
mod layers;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, Checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::seed;
use conv::ConvEncoder;
use decoder::TransformerDecoder;
use encoder::{DividedBlock, PatchEmbed};
use layers::{Init, LayerNorm, Linear, Mlp};

pub use layers::ForwardCtx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConvMlp,
    ConvDecoder,
    EncoderMlp,
    EncoderDecoder,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ConvMlp,
        Variant::ConvDecoder,
        Variant::EncoderMlp,
        Variant::EncoderDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ConvMlp => "conv_mlp",
            Variant::ConvDecoder => "conv_decoder",
            Variant::EncoderMlp => "encoder_mlp",
            Variant::EncoderDecoder => "encoder_decoder",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, Variant::ConvMlp | Variant::ConvDecoder)
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, Variant::ConvDecoder | Variant::EncoderDecoder)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.replace('-', "_"))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model variant {s:?} (expected conv_mlp, conv_decoder, encoder_mlp or encoder_decoder)"
                ))
            })
    }
}

/// What the encoder hands to the MLP head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    MeanTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frames: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_decoder_heads: usize,
    /// Widths of the head's linear layers; the last is 2.
    pub mlp_topology: Vec<usize>,
    pub dropout_mlp: f64,
    pub dropout_decoder: f64,
    pub n_query_tokens: usize,
    pub ffn_ratio: usize,
    pub conv_channels: Vec<usize>,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny(Variant::EncoderMlp)
    }
}

impl ModelConfig {
    /// Small enough to train on 8 frames of 32x32 in minutes on a CPU.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            frames: 8,
            image_size: 32,
            patch_size: 8,
            embed_dim: 16,
            n_heads: 2,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            n_decoder_heads: 2,
            mlp_topology: vec![16, 2],
            dropout_mlp: 0.2,
            dropout_decoder: 0.1,
            n_query_tokens: 1,
            ffn_ratio: 4,
            conv_channels: vec![8, 16],
            pooling: Pooling::ClassToken,
        }
    }

    /// The smallest configuration that exercises every component; used for
    /// gradient checks.
    pub fn minimal(variant: Variant) -> Self {
        Self {
            frames: 2,
            image_size: 8,
            patch_size: 4,
            mlp_topology: vec![8, 2],
            conv_channels: vec![2, 4],
            ffn_ratio: 2,
            ..Self::tiny(variant)
        }
    }

    /// Full-scale dimensions: 768-wide TimeSformer-style encoder, 1024-wide
    /// I3D-style embedding, `512 512 2` head.
    pub fn full_scale(variant: Variant) -> Self {
        let conv = variant.is_conv();
        Self {
            variant,
            frames: if conv { 16 } else { 8 },
            image_size: 224,
            patch_size: 16,
            embed_dim: if conv { 1024 } else { 768 },
            n_heads: 12,
            n_encoder_layers: 12,
            n_decoder_layers: if conv { 2 } else { 4 },
            n_decoder_heads: if conv { 4 } else { 8 },
            mlp_topology: vec![512, 512, 2],
            dropout_mlp: 0.2,
            dropout_decoder: 0.1,
            n_query_tokens: 1,
            ffn_ratio: 4,
            conv_channels: vec![64, 192, 480, 832, 1024],
            pooling: Pooling::ClassToken,
        }
    }

    /// Patches per frame.
    pub fn patches_per_frame(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Encoder sequence length including the class token.
    pub fn sequence_len(&self) -> usize {
        1 + self.frames * self.patches_per_frame()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("frames", self.frames),
            ("image_size", self.image_size),
            ("embed_dim", self.embed_dim),
            ("ffn_ratio", self.ffn_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("model.{name} must be positive"));
        }
        if self.mlp_topology.last() != Some(&2) || self.mlp_topology.contains(&0) {
            return bad(format!(
                "model.mlp_topology must be positive widths ending in 2, got {:?}",
                self.mlp_topology
            ));
        }
        for (name, p) in [("dropout_mlp", self.dropout_mlp), ("dropout_decoder", self.dropout_decoder)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("model.{name} must be in [0, 1), got {p}"));
            }
        }
        if self.variant.is_conv() {
            if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                return bad("model.conv_channels must be non-empty positive widths".into());
            }
        } else {
            if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
                return bad(format!(
                    "model.patch_size {} must divide image_size {}",
                    self.patch_size, self.image_size
                ));
            }
            if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
                return bad(format!(
                    "model.embed_dim {} must be divisible by n_heads {}",
                    self.embed_dim, self.n_heads
                ));
            }
        }
        if self.variant.has_decoder() {
            if self.n_decoder_heads == 0 || self.embed_dim % self.n_decoder_heads != 0 {
                return bad(format!(
                    "model.embed_dim {} must be divisible by n_decoder_heads {}",
                    self.embed_dim, self.n_decoder_heads
                ));
            }
            if self.n_query_tokens == 0 {
                return bad("model.n_query_tokens must be positive".into());
            }
        }
        Ok(())
    }
}

/// Raw regression outputs for one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionPair {
    pub normalized_score_hat: f64,
    pub difficulty_hat: f64,
}

impl PredictionPair {
    /// Clamped normalized score times predicted difficulty.
    pub fn final_score(&self) -> f64 {
        crate::data::final_score(self.normalized_score_hat.clamp(0.0, 1.0), self.difficulty_hat)
    }
}

#[derive(Debug, Clone)]
enum Backbone {
    Conv(ConvEncoder),
    Encoder {
        embed: PatchEmbed,
        blocks: Vec<DividedBlock>,
        ln: LayerNorm,
    },
}

#[derive(Debug, Clone)]
enum Head {
    Mlp(Mlp),
    DecoderMlp(TransformerDecoder, Mlp),
    DecoderLinear(TransformerDecoder, Linear),
}

/// A configured network and its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    backbone: Backbone,
    head: Head,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: seed::rng(seed, &[seed::stream::INIT]),
        };
        let c = &config;
        let (backbone, width) = if c.variant.is_conv() {
            (Backbone::Conv(ConvEncoder::new(&mut init, &c.conv_channels, c.embed_dim)?), c.embed_dim)
        } else {
            let embed = PatchEmbed::new(&mut init, c.frames, c.image_size, c.patch_size, c.embed_dim)?;
            let blocks = (0..c.n_encoder_layers)
                .map(|i| DividedBlock::new(&mut init, &format!("enc.{i}"), c.embed_dim, c.n_heads, c.ffn_ratio))
                .collect::<Result<_>>()?;
            let ln = LayerNorm::new(&mut init, "enc.ln_out", c.embed_dim)?;
            (Backbone::Encoder { embed, blocks, ln }, c.embed_dim)
        };
        let decoder = |init: &mut Init| {
            TransformerDecoder::new(
                init,
                c.embed_dim,
                c.n_decoder_heads,
                c.n_decoder_layers,
                c.n_query_tokens,
                c.ffn_ratio,
                c.dropout_decoder,
            )
        };
        let head = match c.variant {
            Variant::ConvMlp | Variant::EncoderMlp => {
                Head::Mlp(Mlp::new(&mut init, "head", width, &c.mlp_topology, c.dropout_mlp)?)
            }
            Variant::ConvDecoder => {
                let dec = decoder(&mut init)?;
                Head::DecoderMlp(dec, Mlp::new(&mut init, "head", width, &c.mlp_topology, c.dropout_mlp)?)
            }
            Variant::EncoderDecoder => {
                let dec = decoder(&mut init)?;
                Head::DecoderLinear(dec, Linear::new(&mut init, "head.0", width, 2)?)
            }
        };
        Ok(Self {
            config,
            params,
            backbone,
            head,
        })
    }

    /// Rebuilds the architecture for `config` around existing values.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn wrong_variant(&self, op: &'static str) -> Error {
        Error::op(op, format!("not part of the {} variant", self.config.variant.name()))
    }

    /// `clip [N, 3, H, W] -> tokens [1 + N*P, D]`
    pub fn patch_embed(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Encoder { embed, .. } => embed.forward(p, clip),
            Backbone::Conv(_) => Err(self.wrong_variant("patch_embed")),
        }
    }

    /// Encoder block `layer` applied to `tokens [1 + frames*patches, D]`.
    pub fn encoder_block(
        &self,
        layer: usize,
        p: &Bound,
        tokens: &Tensor,
        frames: usize,
        patches: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Encoder { blocks, .. } => blocks
                .get(layer)
                .ok_or_else(|| Error::invalid(format!("no encoder block {layer}")))?
                .forward(p, tokens, frames, patches, ctx),
            Backbone::Conv(_) => Err(self.wrong_variant("divided_attention_block")),
        }
    }

    /// `clip [N, 3, H, W] -> [D]`
    pub fn conv_encoder(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Conv(c) => c.forward(p, clip),
            Backbone::Encoder { .. } => Err(self.wrong_variant("conv_encoder")),
        }
    }

    /// Last convolution's output before its activation, `[C, N, H', W']`.
    pub fn conv_features(&self, p: &Bound, clip: &Tensor) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Conv(c) => c.features(p, clip),
            Backbone::Encoder { .. } => Err(self.wrong_variant("conv_encoder")),
        }
    }

    /// `memory [S, D] -> [n_query_tokens, D]`
    pub fn transformer_decoder(&self, p: &Bound, memory: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        match &self.head {
            Head::DecoderMlp(d, _) | Head::DecoderLinear(d, _) => d.forward(p, memory, ctx),
            Head::Mlp(_) => Err(self.wrong_variant("transformer_decoder")),
        }
    }

    /// Backbone output: `[1, D]` for conv variants, all tokens `[L, D]` for
    /// encoder variants.
    fn backbone(&self, p: &Bound, clip: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Conv(c) => c.forward(p, clip)?.reshape(&[1, self.config.embed_dim]),
            Backbone::Encoder { embed, blocks, ln } => {
                let mut x = embed.forward(p, clip)?;
                let (n, pp) = (self.config.frames, self.config.patches_per_frame());
                for b in blocks {
                    x = b.forward(p, &x, n, pp, ctx)?;
                }
                ln.forward(p, &x)
            }
        }
    }

    /// One clip to `[1, 2]`.
    pub fn forward(&self, p: &Bound, clip: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let feats = self.backbone(p, clip, ctx)?;
        let d = self.config.embed_dim;
        match &self.head {
            Head::Mlp(mlp) => {
                let summary = match (&self.backbone, self.config.pooling) {
                    (Backbone::Conv(_), _) => feats,
                    (_, Pooling::ClassToken) => feats.slice(0, 0, 1)?,
                    (_, Pooling::MeanTokens) => {
                        let len = feats.shape()[0];
                        feats.slice(0, 1, len)?.mean_axis(0)?.reshape(&[1, d])?
                    }
                };
                mlp.forward(p, &summary, ctx)
            }
            Head::DecoderMlp(dec, mlp) => {
                let q = dec.forward(p, &feats, ctx)?.mean_axis(0)?.reshape(&[1, d])?;
                mlp.forward(p, &q, ctx)
            }
            Head::DecoderLinear(dec, lin) => {
                let q = dec.forward(p, &feats, ctx)?.mean_axis(0)?.reshape(&[1, d])?;
                lin.forward(p, &q)
            }
        }
    }

    /// Clips to `[B, 2]`, each clip processed independently.
    pub fn forward_batch(&self, p: &Bound, clips: &[Tensor], ctx: &mut ForwardCtx) -> Result<Tensor> {
        let outs = clips
            .iter()
            .map(|c| self.forward(p, c, ctx))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&outs, 0)
    }

    /// Eval-mode prediction without recording a graph.
    pub fn predict(&self, clip: &Tensor) -> Result<PredictionPair> {
        let out = self.forward(&self.params.bind_frozen(), clip, &mut ForwardCtx::eval())?;
        let v = out.data();
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("model prediction".into()));
        }
        Ok(PredictionPair {
            normalized_score_hat: v[0],
            difficulty_hat: v[1],
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_params(&self.params);
        c.meta.insert("variant".into(), self.config.variant.name().into());
        c
    }

    /// Path of the config sidecar written next to a checkpoint.
    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    /// Writes the parameters to `path` and the config to its `.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_checkpoint().save(path)?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(Self::sidecar_path(path), json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let config: ModelConfig = serde_json::from_str(&fs::read_to_string(&side)?)
            .map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
        Self::from_checkpoint(config, &Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        ckpt.load_into(&mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(cfg: &ModelConfig, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = seed::rng(seed, &[]);
        let n = cfg.frames * 3 * cfg.image_size * cfg.image_size;
        Tensor::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[cfg.frames, 3, cfg.image_size, cfg.image_size],
        )
        .unwrap()
    }

    #[test]
    fn every_variant_maps_a_batch_to_pairs() {
        for v in Variant::ALL {
            let cfg = ModelConfig::minimal(v);
            let m = Model::new(cfg.clone(), 1).unwrap();
            let clips: Vec<_> = (0..4).map(|s| clip(&cfg, s)).collect();
            let out = m.forward_batch(&m.params().bind(), &clips, &mut ForwardCtx::train(3)).unwrap();
            assert_eq!(out.shape(), &[4, 2], "{v:?}");
        }
    }

    #[test]
    fn tiny_sequence_length() {
        let cfg = ModelConfig::tiny(Variant::EncoderMlp);
        assert_eq!(cfg.sequence_len(), 129);
        let m = Model::new(cfg.clone(), 0).unwrap();
        let t = m.patch_embed(&m.params().bind_frozen(), &clip(&cfg, 0)).unwrap();
        assert_eq!(t.shape(), &[129, 16]);
    }

    #[test]
    fn eval_is_bitwise_repeatable() {
        let cfg = ModelConfig::minimal(Variant::EncoderDecoder);
        let m = Model::new(cfg.clone(), 2).unwrap();
        let x = clip(&cfg, 7);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::tiny(Variant::EncoderMlp);
        c.n_heads = 3;
        assert!(Model::new(c, 0).is_err());
        let mut c = ModelConfig::tiny(Variant::EncoderMlp);
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(Variant::ConvMlp);
        c.mlp_topology = vec![16, 3];
        assert!(c.validate().is_err());
        assert!("transformer".parse::<Variant>().is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::minimal(Variant::ConvDecoder);
        let m = Model::new(cfg.clone(), 4).unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        let x = clip(&cfg, 1);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
}
