//! Tagging models: the convolutional-front-end transformer and a
//! short-chunk residual CNN baseline. Both map a `[B, 1, F, T]` log-mel
//! batch to per-tag probabilities.

mod layers;
mod resnet;
mod transformer;


use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use layers::{BatchNorm2d, Conv2d, Init, LayerNorm, Linear, Mode, Registry, Slot};
pub use resnet::{ResBlock, ResNet, ResNetConfig};
pub use transformer::{
    attention, attention_weights, token_seconds, ConvBlock, EncoderLayer, Frontend, FrontendTrace, TransformerConfig,
    TransformerTagger, FRONTEND_POOLS,
};

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{self as t, no_grad, Checkpoint, Element, NamedArray, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Resnet,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Resnet => "resnet",
        })
    }
}

/// Architecture choice plus the settings of both architectures; only the
/// selected one is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub transformer: TransformerConfig,
    pub resnet: ResNetConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Transformer,
            transformer: TransformerConfig::default(),
            resnet: ResNetConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn transformer(cfg: TransformerConfig) -> Self {
        ModelSpec {
            kind: ModelKind::Transformer,
            transformer: cfg,
            ..Self::default()
        }
    }

    pub fn resnet(cfg: ResNetConfig) -> Self {
        ModelSpec {
            kind: ModelKind::Resnet,
            resnet: cfg,
            ..Self::default()
        }
    }

    pub fn n_tags(&self) -> usize {
        match self.kind {
            ModelKind::Transformer => self.transformer.n_tags,
            ModelKind::Resnet => self.resnet.n_tags,
        }
    }

    pub fn n_mels(&self) -> usize {
        match self.kind {
            ModelKind::Transformer => self.transformer.n_mels,
            ModelKind::Resnet => self.resnet.n_mels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Transformer => self.transformer.validate(),
            ModelKind::Resnet => self.resnet.validate(),
        }
    }

    /// Only the active architecture's settings, as single-line JSON.
    pub fn active_json(&self) -> String {
        match self.kind {
            ModelKind::Transformer => serde_json::to_string(&self.transformer),
            ModelKind::Resnet => serde_json::to_string(&self.resnet),
        }
        .expect("model config serializes")
    }

    pub fn from_active_json(kind: ModelKind, json: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Integrity(format!("bad model config in checkpoint: {e}"));
        Ok(match kind {
            ModelKind::Transformer => ModelSpec::transformer(serde_json::from_str(json).map_err(bad)?),
            ModelKind::Resnet => ModelSpec::resnet(serde_json::from_str(json).map_err(bad)?),
        })
    }
}

pub enum Net<T: Element> {
    Transformer(TransformerTagger<T>),
    Resnet(ResNet<T>),
}

/// A tagging model with its named parameters and buffers.
pub struct Tagger<T: Element = f32> {
    pub spec: ModelSpec,
    pub net: Net<T>,
    registry: Registry<T>,
}

/// Per-tag probabilities for one chunk or one whole track.
#[derive(Debug, Clone, PartialEq)]
pub struct TagPrediction {
    pub probs: Vec<f32>,
    pub track_level: bool,
}

/// Element-wise mean of chunk predictions.
pub fn aggregate_chunks(preds: &[TagPrediction]) -> Result<TagPrediction> {
    let first = preds
        .first()
        .ok_or_else(|| Error::EmptyInput("no chunk predictions to aggregate".into()))?;
    let n = first.probs.len();
    if let Some(p) = preds.iter().find(|p| p.probs.len() != n) {
        return Err(Error::shape("aggregate_chunks", &[n], &[p.probs.len()]));
    }
    let mut acc = vec![0.0f64; n];
    for p in preds {
        acc.iter_mut().zip(&p.probs).for_each(|(a, &v)| *a += v as f64);
    }
    Ok(TagPrediction {
        probs: acc.into_iter().map(|v| (v / preds.len() as f64) as f32).collect(),
        track_level: true,
    })
}

/// Stacks equally shaped spectrograms into a `[B, 1, F, T]` tensor.
pub fn batch_tensor<T: Element>(specs: &[&LogMelSpectrogram]) -> Result<Tensor<T>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::EmptyInput("empty spectrogram batch".into()))?;
    let (f, time) = (first.n_mels, first.n_frames);
    let mut data = Vec::with_capacity(specs.len() * f * time);
    for s in specs {
        if (s.n_mels, s.n_frames) != (f, time) {
            return Err(Error::shape("batch_tensor", &[f, time], &[s.n_mels, s.n_frames]));
        }
        data.extend(s.values.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Tensor::from_vec(data, &[specs.len(), 1, f, time])
}

/// Number of trainable scalars (buffers excluded).
pub fn param_count<T: Element>(model: &Tagger<T>) -> usize {
    model.param_count()
}

impl<T: Element> Tagger<T> {
    /// Builds a model with deterministic initialization from `seed`.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = match spec.kind {
            ModelKind::Transformer => Net::Transformer(TransformerTagger::new(&spec.transformer, seed)?),
            ModelKind::Resnet => Net::Resnet(ResNet::new(&spec.resnet, seed)?),
        };
        let mut registry = Vec::new();
        match &net {
            Net::Transformer(m) => m.register(&mut registry),
            Net::Resnet(m) => m.register(&mut registry),
        }
        Ok(Tagger {
            spec: spec.clone(),
            net,
            registry,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn n_tags(&self) -> usize {
        self.spec.n_tags()
    }

    pub fn as_transformer(&self) -> Option<&TransformerTagger<T>> {
        match &self.net {
            Net::Transformer(m) => Some(m),
            Net::Resnet(_) => None,
        }
    }

    /// Pre-sigmoid scores `[B, n_tags]`.
    pub fn logits(&self, x: &Tensor<T>, mode: Mode, rng: &mut StreamRng) -> Result<Tensor<T>> {
        match &self.net {
            Net::Transformer(m) => m.logits(x, mode, rng),
            Net::Resnet(m) => m.logits(x, mode, rng),
        }
    }

    /// Tag probabilities `[B, n_tags]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut StreamRng) -> Result<Tensor<T>> {
        Ok(t::sigmoid(&self.logits(x, mode, rng)?))
    }

    /// Eval-mode probabilities without recording a graph, one row per item.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let mut rng = crate::rng::stream(0, &[]);
        let probs = no_grad(|| self.forward(x, Mode::Eval, &mut rng))?;
        let n = self.n_tags();
        let rows = probs.data().chunks(n).map(|c| c.to_vec()).collect();
        Ok(rows)
    }

    pub fn named(&self) -> &Registry<T> {
        &self.registry
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.registry
            .iter()
            .filter(|(_, _, s)| *s == Slot::Param)
            .map(|(_, t, _)| t.clone())
            .collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        self.registry
            .iter()
            .filter(|(_, _, s)| *s == Slot::Param)
            .map(|(n, t, _)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    /// Values of every parameter and buffer, in registry order.
    pub fn state(&self) -> Vec<Vec<T>> {
        self.registry.iter().map(|(_, t, _)| t.to_vec()).collect()
    }

    /// Restores values captured by [`state`](Self::state).
    pub fn load_state(&self, state: &[Vec<T>]) -> Result<()> {
        if state.len() != self.registry.len() {
            return Err(Error::shape("load_state", &[state.len()], &[self.registry.len()]));
        }
        for ((_, dst, _), src) in self.registry.iter().zip(state) {
            if src.len() != dst.numel() {
                return Err(Error::shape("load_state", &[src.len()], dst.shape()));
            }
            dst.data_mut().copy_from_slice(src);
        }
        Ok(())
    }

    /// Overwrites all parameters and buffers with `other`'s values.
    pub fn copy_from(&self, other: &Tagger<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Param(
                "cannot copy weights between different model configs".into(),
            ));
        }
        for ((_, dst, _), (_, src, _)) in self.registry.iter().zip(&other.registry) {
            dst.data_mut().copy_from_slice(&src.data());
        }
        Ok(())
    }

    /// Independent copy with identical weights.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = Tagger::new(&self.spec, 0)?;
        copy.copy_from(self)?;
        Ok(copy)
    }

    pub fn to_checkpoint(&self, mut meta: BTreeMap<String, String>) -> Checkpoint {
        meta.insert("model_kind".into(), self.kind().to_string());
        meta.insert("model_config".into(), self.spec.active_json());
        meta.insert("param_count".into(), self.param_count().to_string());
        Checkpoint {
            meta,
            arrays: self
                .registry
                .iter()
                .map(|(name, t, _)| NamedArray {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint written by [`to_checkpoint`](Self::to_checkpoint).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let kind = match ckpt.meta.get("model_kind").map(String::as_str) {
            Some("transformer") => ModelKind::Transformer,
            Some("resnet") => ModelKind::Resnet,
            other => return Err(Error::Integrity(format!("checkpoint has unknown model kind {other:?}"))),
        };
        let json = ckpt
            .meta
            .get("model_config")
            .ok_or_else(|| Error::Integrity("checkpoint lacks model_config".into()))?;
        let spec = ModelSpec::from_active_json(kind, json)?;
        let model = Tagger::new(&spec, 0)?;
        if ckpt.arrays.len() != model.registry.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} arrays, model expects {}",
                ckpt.arrays.len(),
                model.registry.len()
            )));
        }
        for (name, tensor, _) in &model.registry {
            let a = ckpt
                .array(name)
                .ok_or_else(|| Error::Integrity(format!("checkpoint is missing array {name}")))?;
            if a.shape != tensor.shape() {
                return Err(Error::Integrity(format!(
                    "array {name} has shape {:?}, model expects {:?}",
                    a.shape,
                    tensor.shape()
                )));
            }
            let mut d = tensor.data_mut();
            d.iter_mut()
                .zip(&a.data)
                .for_each(|(dst, &v)| *dst = T::from_f64_lossy(v as f64));
        }
        Ok(model)
    }
}
