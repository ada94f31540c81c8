//! The individual waveform transforms. Every function returns exactly as
//! many samples as it receives.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::{resample_ratio_with, Quality, Waveform};

pub fn polarity_inversion(w: &Waveform) -> Waveform {
    map(w, |s| -s)
}

/// Adds Gaussian white noise whose RMS is exactly `k_snr · RMS(x)`.
/// Silent input is returned unchanged.
pub fn additive_noise<R: Rng + ?Sized>(w: &Waveform, k_snr: f64, rng: &mut R) -> Waveform {
    let signal_rms = w.rms();
    if signal_rms == 0.0 || w.is_empty() {
        return w.clone();
    }
    let noise: Vec<f64> = (0..w.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise_rms = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
    if noise_rms == 0.0 {
        return w.clone();
    }
    let scale = k_snr * signal_rms / noise_rms;
    let samples = w
        .samples
        .iter()
        .zip(&noise)
        .map(|(&x, n)| (x as f64 + scale * n) as f32)
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn random_gain(w: &Waveform, gain_db: f64) -> Waveform {
    let g = db_to_amplitude(gain_db);
    map(w, |s| (s as f64 * g) as f32)
}

/// Second-order IIR section, direct form I, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn prototype(cutoff_hz: f64, sample_rate: u32) -> (f64, f64) {
        let nyquist = sample_rate as f64 / 2.0;
        let fc = cutoff_hz.clamp(1e-3, nyquist * 0.999);
        let w0 = 2.0 * std::f64::consts::PI * fc / sample_rate as f64;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    /// Butterworth low-pass (Q = 1/√2) from the RBJ audio-EQ cookbook.
    pub fn low_pass(cutoff_hz: f64, sample_rate: u32) -> Self {
        let (cos, alpha) = Self::prototype(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Biquad {
            b: [b0, (1.0 - cos) / a0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Butterworth high-pass (Q = 1/√2) from the RBJ audio-EQ cookbook.
    pub fn high_pass(cutoff_hz: f64, sample_rate: u32) -> Self {
        let (cos, alpha) = Self::prototype(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0 / a0;
        Biquad {
            b: [b0, -(1.0 + cos) / a0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    pub fn process(&self, x: &[f32]) -> Vec<f32> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&xn| {
                let xn = xn as f64;
                let yn = b0 * xn + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = xn;
                y2 = y1;
                y1 = yn;
                yn as f32
            })
            .collect()
    }
}

pub fn high_pass(w: &Waveform, cutoff_hz: f64) -> Waveform {
    let samples = Biquad::high_pass(cutoff_hz, w.sample_rate).process(&w.samples);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

pub fn low_pass(w: &Waveform, cutoff_hz: f64) -> Waveform {
    let samples = Biquad::low_pass(cutoff_hz, w.sample_rate).process(&w.samples);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Gain of the delayed copy.
pub const DELAY_MIX: f64 = 0.5;

/// `y[n] = (x[n] + 0.5·x[n − d]) / 1.5` with `d = delay_ms · sr / 1000`.
pub fn delay(w: &Waveform, delay_ms: f64) -> Waveform {
    let d = (delay_ms.max(0.0) * w.sample_rate as f64 / 1000.0).round() as usize;
    let norm = 1.0 + DELAY_MIX;
    let samples = (0..w.len())
        .map(|n| {
            let echo = if n >= d { w.samples[n - d] as f64 } else { 0.0 };
            ((w.samples[n] as f64 + DELAY_MIX * echo) / norm) as f32
        })
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Shifts pitch by resampling with factor `2^(−n/12)` and then cropping or
/// zero-padding back to the original length (tempo changes too).
pub fn pitch_shift(w: &Waveform, semitones: i32) -> Waveform {
    if semitones == 0 || w.is_empty() {
        return w.clone();
    }
    let ratio = 2f64.powf(-semitones as f64 / 12.0);
    let out_len = ((w.len() as f64 * ratio).round() as usize).min(w.len());
    let mut samples = resample_ratio_with(&w.samples, ratio, out_len, Quality::Fast);
    samples.resize(w.len(), 0.0);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Comb delays in milliseconds at room size 0.
pub const COMB_DELAYS_MS: [f64; 4] = [29.7, 37.1, 41.1, 43.7];
/// All-pass delays (ms) and gain.
pub const ALLPASS_DELAYS_MS: [f64; 2] = [5.0, 1.7];
pub const ALLPASS_GAIN: f64 = 0.7;
pub const REVERB_WET: f64 = 0.3;
pub const REVERB_DRY: f64 = 0.7;

/// Comb feedback and delay multiplier for a room size in `[0, 100]`.
pub fn reverb_params(room_size: f64) -> (f64, f64) {
    let r = room_size.clamp(0.0, 100.0) / 100.0;
    (0.70 + 0.22 * r, 1.0 + 0.5 * r)
}

/// Schroeder reverberator: four parallel feedback combs feeding two
/// series all-passes, mixed 0.3 wet / 0.7 dry.
pub fn reverb(w: &Waveform, room_size: f64) -> Waveform {
    let (feedback, stretch) = reverb_params(room_size);
    let sr = w.sample_rate as f64;
    let to_samples = |ms: f64| ((ms * stretch * sr / 1000.0).round() as usize).max(1);
    let n = w.len();
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();

    let mut wet = vec![0.0; n];
    for &ms in &COMB_DELAYS_MS {
        let d = to_samples(ms);
        let mut y = vec![0.0; n];
        for i in d..n {
            y[i] = x[i - d] + feedback * y[i - d];
        }
        wet.iter_mut()
            .zip(&y)
            .for_each(|(a, b)| *a += b / COMB_DELAYS_MS.len() as f64);
    }
    for &ms in &ALLPASS_DELAYS_MS {
        let d = ((ms * sr / 1000.0).round() as usize).max(1);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let delayed_x = if i >= d { wet[i - d] } else { 0.0 };
            let delayed_y = if i >= d { y[i - d] } else { 0.0 };
            y[i] = -ALLPASS_GAIN * wet[i] + delayed_x + ALLPASS_GAIN * delayed_y;
        }
        wet = y;
    }
    let samples = x
        .iter()
        .zip(&wet)
        .map(|(d, w)| (REVERB_DRY * d + REVERB_WET * w) as f32)
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

pub fn clip(w: &mut Waveform) {
    w.samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
}

fn map(w: &Waveform, f: impl Fn(f32) -> f32) -> Waveform {
    Waveform {
        samples: w.samples.iter().map(|&s| f(s)).collect(),
        sample_rate: w.sample_rate,
    }
}
