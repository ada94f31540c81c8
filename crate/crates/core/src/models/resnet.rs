//! Short-chunk residual CNN baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, pool_kernel, BatchNorm2d, Conv2d, Init, Linear, Mode, Registry};
use crate::error::{Error, Result};
use crate::tensor::{self as t, Element, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResNetConfig {
    /// Output channels of each residual layer; its length is the depth.
    pub channels: Vec<usize>,
    /// Width of the hidden dense layer.
    pub hidden: usize,
    pub dropout: f64,
    pub n_mels: usize,
    pub n_tags: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            channels: vec![128, 128, 256, 256, 256, 256, 512],
            hidden: 512,
            dropout: 0.5,
            n_mels: 128,
            n_tags: 50,
        }
    }
}

impl ResNetConfig {
    pub fn n_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Param(
                "resnet needs at least one layer with positive channels".into(),
            ));
        }
        if self.hidden == 0 || self.n_tags == 0 || self.n_mels == 0 {
            return Err(Error::Param("resnet sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Two 3×3 conv/BN stages with a residual connection (3×3 conv + BN on
/// the shortcut when channels change), then 2×2 max pooling.
pub struct ResBlock<T: Element> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Element> ResBlock<T> {
    fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(init, c_in, c_out, 3, false),
            bn1: BatchNorm2d::new(init, c_out),
            conv2: Conv2d::new(init, c_out, c_out, 3, false),
            bn2: BatchNorm2d::new(init, c_out),
            shortcut: (c_in != c_out)
                .then(|| (Conv2d::new(init, c_in, c_out, 3, false), BatchNorm2d::new(init, c_out))),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = t::relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        let skip = match &self.shortcut {
            Some((c, bn)) => bn.forward(&c.forward(x)?, mode)?,
            None => x.clone(),
        };
        let y = t::relu(&t::add(&h, &skip)?);
        let k = pool_kernel(y.shape(), (2, 2));
        t::max_pool2d(&y, k, k)
    }

    fn register(&self, prefix: &str, out: &mut Registry<T>) {
        self.conv1.register(&join(prefix, "conv1"), out);
        self.bn1.register(&join(prefix, "bn1"), out);
        self.conv2.register(&join(prefix, "conv2"), out);
        self.bn2.register(&join(prefix, "bn2"), out);
        if let Some((c, bn)) = &self.shortcut {
            c.register(&join(prefix, "shortcut.conv"), out);
            bn.register(&join(prefix, "shortcut.bn"), out);
        }
    }
}

pub struct ResNet<T: Element> {
    pub config: ResNetConfig,
    pub input_bn: BatchNorm2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub dense: Linear<T>,
    pub head: Linear<T>,
}

impl<T: Element> ResNet<T> {
    pub fn new(cfg: &ResNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let input_bn = BatchNorm2d::new(&mut init, 1);
        let mut c_in = 1;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        for &c in &cfg.channels {
            blocks.push(ResBlock::new(&mut init, c_in, c));
            c_in = c;
        }
        Ok(ResNet {
            config: cfg.clone(),
            input_bn,
            blocks,
            dense: Linear::new(&mut init, 2 * c_in, cfg.hidden),
            head: Linear::new(&mut init, cfg.hidden, cfg.n_tags),
        })
    }

    /// `[B, 1, F, T] → [B, n_tags]` pre-sigmoid scores. Any `F`, `T ≥ 1`
    /// are accepted; the map is pooled globally (max ‖ mean).
    pub fn logits<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] == 0 || s[3] == 0 {
            return Err(Error::shape("resnet input [B, 1, F, T]", s, &[0, 1, 0, 0]));
        }
        let b = s[0];
        let mut h = self.input_bn.forward(x, mode)?;
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        let c = h.shape()[1];
        let flat = t::reshape(&h, &[b, c, h.shape()[2] * h.shape()[3]])?;
        let mx = t::max_axis(&flat, 2, false)?;
        let avg = t::mean_axis(&flat, 2, false)?;
        let pooled = t::concat(&[&mx, &avg], 1)?;
        let hidden = t::relu(&self.dense.forward(&pooled)?);
        let hidden = t::dropout(&hidden, self.config.dropout, mode.training(), rng)?;
        self.head.forward(&hidden)
    }

    pub fn register(&self, out: &mut Registry<T>) {
        self.input_bn.register("input_bn", out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.register(&format!("layer{i}"), out);
        }
        self.dense.register("dense", out);
        self.head.register("head", out);
    }
}
