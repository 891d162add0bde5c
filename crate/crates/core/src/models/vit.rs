//! Vision Transformer over spectrogram patches (ViT-Tiny defaults).

use candle_core::{Module, Tensor, D};
use candle_nn::{Linear, VarBuilder};

use super::layers::{apply, conv, Conv, dropout, linear, CResult, Mode, Norm};
use super::Network;

pub(crate) struct VitParams {
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VitParams {
    fn default() -> Self {
        Self {
            patch: 16,
            dim: 192,
            depth: 12,
            heads: 3,
            mlp_ratio: 4,
        }
    }
}

struct EncoderBlock {
    norm1: Norm,
    qkv: Linear,
    proj: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl EncoderBlock {
    fn new(vb: VarBuilder, p: &VitParams) -> CResult<Self> {
        let d = p.dim;
        Ok(Self {
            norm1: Norm::new(d, vb.pp("norm1"))?,
            qkv: linear(vb.pp("attn.qkv"), d, 3 * d)?,
            proj: linear(vb.pp("attn.proj"), d, d)?,
            norm2: Norm::new(d, vb.pp("norm2"))?,
            fc1: linear(vb.pp("mlp.fc1"), d, d * p.mlp_ratio)?,
            fc2: linear(vb.pp("mlp.fc2"), d * p.mlp_ratio, d)?,
            heads: p.heads,
        })
    }

    fn attention(&self, x: &Tensor) -> CResult<Tensor> {
        let (n, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = apply(&self.qkv, x)?
            .reshape((n, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let att = (q.matmul(&k.t()?)? * (1.0 / (hd as f64).sqrt()))?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((n, t, d))?;
        apply(&self.proj, &out)
    }

    fn forward(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let x = (x + self.attention(&self.norm1.forward(x)?)?)?;
        let h = apply(&self.fc1, &self.norm2.forward(&x)?)?.gelu_erf()?;
        let h = dropout(&h, 0.1, mode)?;
        &x + apply(&self.fc2, &h)?
    }
}

pub(crate) struct Vit {
    patch_embed: Conv,
    cls_token: Tensor,
    pos_embed: Tensor,
    blocks: Vec<EncoderBlock>,
    norm: Norm,
    head: Linear,
}

impl Vit {
    pub fn new(vb: VarBuilder, h: usize, w: usize, p: &VitParams) -> CResult<Self> {
        let tokens = (h / p.patch) * (w / p.patch) + 1;
        Ok(Self {
            patch_embed: conv(vb.pp("patch_embed"), 1, p.dim, p.patch, p.patch, 0, 1, true)?,
            cls_token: vb.get((1, 1, p.dim), "cls_token")?,
            pos_embed: vb.get((1, tokens, p.dim), "pos_embed")?,
            blocks: (0..p.depth)
                .map(|i| EncoderBlock::new(vb.pp("blocks").pp(i.to_string()), p))
                .collect::<CResult<_>>()?,
            norm: Norm::new(p.dim, vb.pp("norm"))?,
            head: linear(vb.pp("head"), p.dim, 2)?,
        })
    }
}

impl Network for Vit {
    fn head(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let n = x.dim(0)?;
        let patches = self.patch_embed.forward(x)?.flatten_from(2)?.transpose(1, 2)?;
        let d = patches.dim(2)?;
        let cls = self.cls_token.broadcast_as((n, 1, d))?;
        let mut h = Tensor::cat(&[&cls, &patches], 1)?.broadcast_add(&self.pos_embed)?;
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        let cls_out = self.norm.forward(&h)?.narrow(1, 0, 1)?.squeeze(1)?;
        apply(&self.head, &cls_out)
    }
}
