//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::sync::OnceLock;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of its center.
pub const ZERO_CROSSINGS: usize = 64;
pub const KAISER_BETA: f64 = 14.769_656_459_379_492;
/// Shorter kernel for augmentation, where speed matters more than stopband
/// depth.
pub const FAST_ZERO_CROSSINGS: usize = 16;
pub const FAST_KAISER_BETA: f64 = 8.6;
/// Table entries per zero crossing.
const PRECISION: usize = 512;

/// Kernel length and window shape of a resampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quality {
    /// Used when loading audio.
    High,
    /// Used by pitch-shift augmentation.
    Fast,
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn build_table(zero_crossings: usize, beta: f64) -> Vec<f64> {
    let n = zero_crossings * PRECISION;
    let norm = bessel_i0(beta);
    (0..=n + 1)
        .map(|i| {
            if i >= n {
                return 0.0;
            }
            let x = i as f64 / PRECISION as f64;
            let sinc = if i == 0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let u = i as f64 / n as f64;
            sinc * bessel_i0(beta * (1.0 - u * u).sqrt()) / norm
        })
        .collect()
}

fn kernel_table(quality: Quality) -> (&'static [f64], usize) {
    static HIGH: OnceLock<Vec<f64>> = OnceLock::new();
    static FAST: OnceLock<Vec<f64>> = OnceLock::new();
    match quality {
        Quality::High => (
            HIGH.get_or_init(|| build_table(ZERO_CROSSINGS, KAISER_BETA)),
            ZERO_CROSSINGS,
        ),
        Quality::Fast => (
            FAST.get_or_init(|| build_table(FAST_ZERO_CROSSINGS, FAST_KAISER_BETA)),
            FAST_ZERO_CROSSINGS,
        ),
    }
}

/// Resamples `input` by `ratio` (output rate / input rate) into exactly
/// `out_len` samples. Downsampling lowers the kernel cutoff to the new
/// Nyquist frequency.
pub fn resample_ratio(input: &[f32], ratio: f64, out_len: usize) -> Vec<f32> {
    resample_ratio_with(input, ratio, out_len, Quality::High)
}

pub fn resample_ratio_with(input: &[f32], ratio: f64, out_len: usize, quality: Quality) -> Vec<f32> {
    let (table, zero_crossings) = kernel_table(quality);
    let scale = ratio.min(1.0);
    let half_width = zero_crossings as f64 / scale;
    let step = scale * PRECISION as f64;
    let n_in = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let k_lo = ((t - half_width).ceil() as isize).max(0);
        let k_hi = ((t + half_width).floor() as isize).min(n_in - 1);
        let mut acc = 0.0f64;
        for k in k_lo..=k_hi {
            let pos = (t - k as f64).abs() * step;
            let i = pos as usize;
            let frac = pos - i as f64;
            if i + 1 >= table.len() {
                continue;
            }
            let w = table[i] + frac * (table[i + 1] - table[i]);
            acc += w * input[k as usize] as f64;
        }
        out.push((acc * scale) as f32);
    }
    out
}

/// Resamples to `target_sr`; output length is `round(len · target / sr)`.
/// Equal rates return the samples unchanged.
pub fn resample(w: &Waveform, target_sr: u32) -> Result<Waveform> {
    if target_sr == 0 {
        return Err(Error::Param("target sample rate must be positive".into()));
    }
    if target_sr == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_sr as f64 / w.sample_rate as f64;
    let out_len = (w.samples.len() as f64 * ratio).round() as usize;
    Ok(Waveform {
        samples: resample_ratio(&w.samples, ratio, out_len),
        sample_rate: target_sr,
    })
}
