//! Parameter-holding building blocks shared by both architectures.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::StreamRng;
use crate::tensor::{self as t, Element, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Whether layers behave as during training (batch statistics, dropout)
/// or inference (running statistics, no dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Whether a named tensor is trained or only tracked (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Param,
    Buffer,
}

/// Collects `(name, tensor, slot)` triples in declaration order.
pub type Registry<T> = Vec<(String, Tensor<T>, Slot)>;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Deterministic parameter initialization from a seeded stream.
pub struct Init {
    rng: StreamRng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: crate::rng::stream(seed, &[crate::rng::hash_str("init")]),
        }
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..=bound)))
            .collect();
        Tensor::parameter(data, shape).expect("shape matches data")
    }

    pub fn normal<T: Element>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut self.rng))).collect();
        Tensor::parameter(data, shape).expect("shape matches data")
    }

    pub fn constant<T: Element>(&mut self, shape: &[usize], value: f64) -> Tensor<T> {
        let n = shape.iter().product();
        Tensor::parameter(vec![T::from_f64_lossy(value); n], shape).expect("shape matches data")
    }
}

pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Element> Conv2d<T> {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, kernel: usize, bias: bool) -> Self {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        Conv2d {
            weight: init.uniform(&[c_out, c_in, kernel, kernel], bound),
            bias: bias.then(|| init.uniform(&[c_out], bound)),
            stride: (1, 1),
            padding: (kernel / 2, kernel / 2),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        t::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn register(&self, prefix: &str, out: &mut Registry<T>) {
        out.push((join(prefix, "weight"), self.weight.clone(), Slot::Param));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone(), Slot::Param));
        }
    }
}

pub struct BatchNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        BatchNorm2d {
            gamma: init.constant(&[channels], 1.0),
            beta: init.constant(&[channels], 0.0),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        t::batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode.training(),
            T::from_f64_lossy(BN_MOMENTUM),
            T::from_f64_lossy(BN_EPS),
        )
    }

    pub fn register(&self, prefix: &str, out: &mut Registry<T>) {
        out.push((join(prefix, "weight"), self.gamma.clone(), Slot::Param));
        out.push((join(prefix, "bias"), self.beta.clone(), Slot::Param));
        out.push((join(prefix, "running_mean"), self.running_mean.clone(), Slot::Buffer));
        out.push((join(prefix, "running_var"), self.running_var.clone(), Slot::Buffer));
    }
}

pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    /// Uniform `±1/√fan_in` initialization, weight `[out, in]`.
    pub fn new(init: &mut Init, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Linear {
            weight: init.uniform(&[n_out, n_in], bound),
            bias: init.uniform(&[n_out], bound),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        t::linear(x, &self.weight, Some(&self.bias))
    }

    pub fn register(&self, prefix: &str, out: &mut Registry<T>) {
        out.push((join(prefix, "weight"), self.weight.clone(), Slot::Param));
        out.push((join(prefix, "bias"), self.bias.clone(), Slot::Param));
    }
}

pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(init: &mut Init, dim: usize) -> Self {
        LayerNorm {
            gamma: init.constant(&[dim], 1.0),
            beta: init.constant(&[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        t::layer_norm(x, &self.gamma, &self.beta, T::from_f64_lossy(LN_EPS))
    }

    pub fn register(&self, prefix: &str, out: &mut Registry<T>) {
        out.push((join(prefix, "weight"), self.gamma.clone(), Slot::Param));
        out.push((join(prefix, "bias"), self.beta.clone(), Slot::Param));
    }
}

/// Pool kernel that degrades to 1 along axes already collapsed to size 1.
pub(crate) fn pool_kernel(shape: &[usize], k: (usize, usize)) -> (usize, usize) {
    (k.0.min(shape[2]).max(1), k.1.min(shape[3]).max(1))
}
