use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Magnitude spectrogram stored row-major as `[bins × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }
}

/// Number of frames without center padding: `floor((n − n_fft) / hop) + 1`.
pub fn frame_count(n_samples: usize, n_fft: usize, hop: usize) -> Option<usize> {
    (n_samples >= n_fft && hop > 0).then(|| (n_samples - n_fft) / hop + 1)
}

/// Reusable short-time Fourier transform with a periodic Hann window.
#[derive(Clone)]
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || hop == 0 {
            return Err(Error::Param(format!(
                "invalid STFT parameters n_fft={n_fft}, hop={hop}"
            )));
        }
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Stft {
            n_fft,
            hop,
            window,
            fft,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Calls `f(frame_index, magnitudes)` for every frame.
    pub fn for_each_frame(&self, samples: &[f32], mut f: impl FnMut(usize, &[f64])) -> Result<usize> {
        let frames = frame_count(samples.len(), self.n_fft, self.hop).ok_or_else(|| {
            Error::TooShort(format!(
                "{} samples is shorter than one {}-point frame",
                samples.len(),
                self.n_fft
            ))
        })?;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mags = vec![0.0; self.n_bins()];
        for t in 0..frames {
            let frame = &samples[t * self.hop..t * self.hop + self.n_fft];
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            f(t, &mags);
        }
        Ok(frames)
    }

    pub fn magnitude(&self, samples: &[f32]) -> Result<Spectrogram> {
        let bins = self.n_bins();
        let frames = frame_count(samples.len(), self.n_fft, self.hop).unwrap_or(0);
        let mut data = vec![0.0; bins * frames];
        self.for_each_frame(samples, |t, mags| {
            for (k, &m) in mags.iter().enumerate() {
                data[k * frames + t] = m;
            }
        })?;
        Ok(Spectrogram { bins, frames, data })
    }
}
