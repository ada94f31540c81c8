//! Convolutional front end plus BERT-style encoder over the time axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, BatchNorm2d, Conv2d, Init, LayerNorm, Linear, Mode, Registry, Slot};
use crate::error::{Error, Result};
use crate::tensor::{self as t, Element, Tensor};

/// Transformer tagger hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    /// Front-end convolution channels `C`.
    pub conv_channels: usize,
    /// Attention width `C′`.
    pub attn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width; `None` means `4·C′`.
    pub ffn_dim: Option<usize>,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub n_mels: usize,
    pub n_tags: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            conv_channels: 128,
            attn_dim: 256,
            n_layers: 4,
            n_heads: 8,
            ffn_dim: None,
            dropout: 0.1,
            max_seq_len: 512,
            n_mels: 128,
            n_tags: 50,
        }
    }
}

impl TransformerConfig {
    /// Smaller preset for distillation students (≈0.4M parameters).
    pub fn distillation_preset() -> Self {
        TransformerConfig {
            conv_channels: 48,
            attn_dim: 96,
            n_layers: 2,
            n_heads: 4,
            ..Self::default()
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.attn_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.conv_channels == 0 || self.attn_dim == 0 || self.n_heads == 0 || self.n_tags == 0 {
            return bad("transformer sizes must be positive".into());
        }
        if !self.attn_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "attn_dim {} is not divisible by n_heads {}",
                self.attn_dim, self.n_heads
            ));
        }
        if self.n_mels == 0 || !self.n_mels.is_multiple_of(8) {
            return bad(format!("n_mels {} must be a positive multiple of 8", self.n_mels));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// `conv3×3 → BN → (+ shortcut) → ReLU`, shortcut is a 1×1 conv when the
/// channel count changes.
pub struct ConvBlock<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub shortcut: Option<Conv2d<T>>,
}

impl<T: Element> ConvBlock<T> {
    fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        ConvBlock {
            conv: Conv2d::new(init, c_in, c_out, 3, false),
            bn: BatchNorm2d::new(init, c_out),
            shortcut: (c_in != c_out).then(|| Conv2d::new(init, c_in, c_out, 1, true)),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.bn.forward(&self.conv.forward(x)?, mode)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok(t::relu(&t::add(&y, &skip)?))
    }

    fn register(&self, prefix: &str, out: &mut Registry<T>) {
        self.conv.register(&join(prefix, "conv"), out);
        self.bn.register(&join(prefix, "bn"), out);
        if let Some(s) = &self.shortcut {
            s.register(&join(prefix, "shortcut"), out);
        }
    }
}

/// Pooling after each front-end block, `(freq, time)`.
pub const FRONTEND_POOLS: [(usize, usize); 3] = [(2, 2), (2, 2), (2, 1)];

pub struct Frontend<T: Element> {
    pub input_bn: BatchNorm2d<T>,
    pub blocks: Vec<ConvBlock<T>>,
    pub fc: Linear<T>,
    pub channels: usize,
}

/// Intermediate shapes of one front-end pass, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendTrace {
    pub after_blocks: Vec<usize>,
    pub reshaped: Vec<usize>,
    pub output: Vec<usize>,
}

impl<T: Element> Frontend<T> {
    fn new(init: &mut Init, cfg: &TransformerConfig) -> Self {
        let c = cfg.conv_channels;
        Frontend {
            input_bn: BatchNorm2d::new(init, 1),
            blocks: vec![
                ConvBlock::new(init, 1, c),
                ConvBlock::new(init, c, c),
                ConvBlock::new(init, c, c),
            ],
            fc: Linear::new(init, c * cfg.n_mels / 8, cfg.attn_dim),
            channels: c,
        }
    }

    /// `[B, 1, F, T] → [B, C′, T/4]`; `T` is cropped down to a multiple of 4.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FrontendTrace)> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] == 0 || !s[2].is_multiple_of(8) || s[3] < 4 {
            return Err(Error::shape(
                "front end input [B, 1, F % 8 == 0, T ≥ 4]",
                &s,
                &[0, 1, 8, 4],
            ));
        }
        let (b, f, time) = (s[0], s[2], s[3] - s[3] % 4);
        let expected_in = self.fc.weight.shape()[1];
        if self.channels * f / 8 != expected_in {
            return Err(Error::shape(
                "front end (mel bands differ from model)",
                &s,
                &[b, 1, expected_in * 8 / self.channels, time],
            ));
        }
        let mut h = if time == s[3] {
            x.clone()
        } else {
            t::slice(x, 3, 0, time)?
        };
        h = self.input_bn.forward(&h, mode)?;
        for (block, &pool) in self.blocks.iter().zip(&FRONTEND_POOLS) {
            h = block.forward(&h, mode)?;
            h = t::max_pool2d(&h, pool, pool)?;
        }
        let after_blocks = h.shape().to_vec();
        let (c, f8, t4) = (after_blocks[1], after_blocks[2], after_blocks[3]);
        let reshaped = t::reshape(&h, &[b, c * f8, t4])?;
        let tokens = self.fc.forward(&t::transpose(&reshaped, 1, 2)?)?;
        let out = t::transpose(&tokens, 1, 2)?;
        let trace = FrontendTrace {
            after_blocks,
            reshaped: reshaped.shape().to_vec(),
            output: out.shape().to_vec(),
        };
        Ok((out, trace))
    }

    fn register(&self, prefix: &str, out: &mut Registry<T>) {
        self.input_bn.register(&join(prefix, "input_bn"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.register(&join(prefix, &format!("block{i}")), out);
        }
        self.fc.register(&join(prefix, "fc"), out);
    }
}

/// `softmax(QKᵀ/√d_k)·V` over `[B, h, L, d_k]` inputs. Returns the output
/// and the attention weights `[B, h, L, L]`.
pub fn attention<T: Element>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (sq, sk, sv) = (q.shape(), k.shape(), v.shape());
    if sq.len() != 4 || sq != sk || sk != sv {
        return Err(Error::shape("attention", sq, if sq != sk { sk } else { sv }));
    }
    let weights = attention_weights(q, k)?;
    Ok((t::matmul(&weights, v)?, weights))
}

/// `softmax(QKᵀ/√d_k)` over the last axis.
pub fn attention_weights<T: Element>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let d_k = q.shape()[q.ndim() - 1];
    let scores = t::scale(
        &t::matmul(q, &t::transpose(k, 2, 3)?)?,
        T::from_f64_lossy(1.0 / (d_k as f64).sqrt()),
    );
    t::softmax(&scores, 3)
}

pub struct EncoderLayer<T: Element> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub out: Linear<T>,
    pub ln1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub n_heads: usize,
    pub dropout: f64,
}

impl<T: Element> EncoderLayer<T> {
    fn new(init: &mut Init, cfg: &TransformerConfig) -> Self {
        let d = cfg.attn_dim;
        EncoderLayer {
            q: Linear::new(init, d, d),
            k: Linear::new(init, d, d),
            v: Linear::new(init, d, d),
            out: Linear::new(init, d, d),
            ln1: LayerNorm::new(init, d),
            ff1: Linear::new(init, d, cfg.ffn_dim()),
            ff2: Linear::new(init, cfg.ffn_dim(), d),
            ln2: LayerNorm::new(init, d),
            n_heads: cfg.n_heads,
            dropout: cfg.dropout,
        }
    }

    fn heads(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let (b, l, d) = (s[0], s[1], s[2]);
        let h = t::reshape(x, &[b, l, self.n_heads, d / self.n_heads])?;
        t::permute(&h, &[0, 2, 1, 3])
    }

    /// Post-norm block on `[B, L, D]`.
    fn forward<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        let s = x.shape().to_vec();
        let train = mode.training();
        let q = self.heads(&self.q.forward(x)?)?;
        let k = self.heads(&self.k.forward(x)?)?;
        let v = self.heads(&self.v.forward(x)?)?;
        let w = t::dropout(&attention_weights(&q, &k)?, self.dropout, train, rng)?;
        let ctx = t::matmul(&w, &v)?;
        let ctx = t::reshape(&t::permute(&ctx, &[0, 2, 1, 3])?, &s)?;
        let attn = t::dropout(&self.out.forward(&ctx)?, self.dropout, train, rng)?;
        let h = self.ln1.forward(&t::add(x, &attn)?)?;
        let ff = t::gelu(&self.ff1.forward(&h)?);
        let ff = t::dropout(&self.ff2.forward(&ff)?, self.dropout, train, rng)?;
        self.ln2.forward(&t::add(&h, &ff)?)
    }

    fn register(&self, prefix: &str, out: &mut Registry<T>) {
        self.q.register(&join(prefix, "attn.q"), out);
        self.k.register(&join(prefix, "attn.k"), out);
        self.v.register(&join(prefix, "attn.v"), out);
        self.out.register(&join(prefix, "attn.out"), out);
        self.ln1.register(&join(prefix, "ln1"), out);
        self.ff1.register(&join(prefix, "ffn.0"), out);
        self.ff2.register(&join(prefix, "ffn.1"), out);
        self.ln2.register(&join(prefix, "ln2"), out);
    }
}

pub struct TransformerTagger<T: Element> {
    pub config: TransformerConfig,
    pub frontend: Frontend<T>,
    pub cls: Tensor<T>,
    pub pos: Tensor<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub head: Linear<T>,
}

impl<T: Element> TransformerTagger<T> {
    pub fn new(cfg: &TransformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let frontend = Frontend::new(&mut init, cfg);
        let cls = init.normal(&[1, 1, cfg.attn_dim], 0.02);
        let pos = init.normal(&[cfg.max_seq_len, cfg.attn_dim], 0.02);
        let layers = (0..cfg.n_layers).map(|_| EncoderLayer::new(&mut init, cfg)).collect();
        let head = Linear::new(&mut init, cfg.attn_dim, cfg.n_tags);
        Ok(TransformerTagger {
            config: cfg.clone(),
            frontend,
            cls,
            pos,
            layers,
            head,
        })
    }

    /// `[B, C′, L] → [B, C′]`: CLS token, positions `0..=L`, encoder stack,
    /// position-0 output.
    pub fn encode<R: Rng>(&self, seq: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        let s = seq.shape();
        let d = self.config.attn_dim;
        if s.len() != 3 || s[1] != d {
            return Err(Error::shape("transformer_encode", s, &[0, d, 0]));
        }
        let (b, l) = (s[0], s[2]);
        if l + 1 > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: l,
                max_seq_len: self.config.max_seq_len,
            });
        }
        let tokens = t::transpose(seq, 1, 2)?;
        let cls = t::broadcast_to(&self.cls, &[b, 1, d])?;
        let x = t::concat(&[&cls, &tokens], 1)?;
        let pos = t::slice(&self.pos, 0, 0, l + 1)?;
        let mut x = t::dropout(&t::add(&x, &pos)?, self.config.dropout, mode.training(), rng)?;
        for layer in &self.layers {
            x = layer.forward(&x, mode, rng)?;
        }
        t::reshape(&t::slice(&x, 1, 0, 1)?, &[b, d])
    }

    /// Pre-sigmoid tag scores `[B, n_tags]`.
    pub fn logits<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        let seq = self.frontend.forward(x, mode)?;
        self.head.forward(&self.encode(&seq, mode, rng)?)
    }

    pub fn register(&self, out: &mut Registry<T>) {
        self.frontend.register("frontend", out);
        out.push(("cls_token".into(), self.cls.clone(), Slot::Param));
        out.push(("pos_embedding".into(), self.pos.clone(), Slot::Param));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.register(&format!("encoder.{i}"), out);
        }
        self.head.register("head", out);
    }
}

/// Each front-end token spans this many seconds of audio.
pub fn token_seconds(hop: usize, sample_rate: u32) -> f64 {
    4.0 * hop as f64 / sample_rate as f64
}
