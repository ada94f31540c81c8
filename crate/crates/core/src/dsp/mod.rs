//! Waveform decoding, resampling and log-mel feature extraction.

mod mel;
mod resample;
mod stft;
mod wav;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use resample::{
    resample, resample_ratio, resample_ratio_with, Quality, FAST_KAISER_BETA, FAST_ZERO_CROSSINGS, KAISER_BETA,
    ZERO_CROSSINGS,
};
pub use stft::{frame_count, Spectrogram, Stft};
pub use wav::{load_audio, read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rate every model input is converted to.
pub const TARGET_SAMPLE_RATE: u32 = 22_050;
/// Floor applied to mel magnitudes before taking the logarithm.
pub const LOG_EPSILON: f64 = 1e-10;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Param("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Param(format!("sample {i} is not finite")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Number of samples in `seconds` at `sample_rate`, rounded down.
pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64 + 1e-9).floor() as usize
}

/// Feature-extraction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    /// Dynamic range kept below the per-spectrogram maximum, dB.
    pub top_db: f64,
    pub chunk_seconds: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: TARGET_SAMPLE_RATE,
            n_fft: 1024,
            hop: 512,
            n_mels: 128,
            f_min: 0.0,
            f_max: None,
            top_db: 80.0,
            chunk_seconds: 3.69,
        }
    }
}

impl DspConfig {
    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn chunk_samples(&self) -> usize {
        seconds_to_samples(self.chunk_seconds, self.sample_rate)
    }

    /// Frames produced by one chunk.
    pub fn chunk_frames(&self) -> Result<usize> {
        frame_count(self.chunk_samples(), self.n_fft, self.hop).ok_or_else(|| {
            Error::Param(format!(
                "chunk of {} s is shorter than one FFT frame",
                self.chunk_seconds
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_db <= 0.0 || !self.top_db.is_finite() {
            return Err(Error::Param(format!("top_db must be positive, got {}", self.top_db)));
        }
        if self.chunk_seconds <= 0.0 {
            return Err(Error::Param("chunk_seconds must be positive".into()));
        }
        self.chunk_frames()?;
        FeatureExtractor::new(self).map(|_| ())
    }
}

/// `[F × T]` log-mel matrix in dB, row-major by mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_hop_seconds: f64,
}

impl LogMelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Magnitude STFT of `w`, `[(n_fft/2 + 1) × T]`.
pub fn stft_magnitude(w: &Waveform, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    Stft::new(n_fft, hop)?.magnitude(&w.samples)
}

pub fn mel_filterbank(sr: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Result<MelFilterbank> {
    MelFilterbank::new(sr, n_fft, n_mels, f_min, f_max)
}

/// Mel magnitudes in dB, `20·log10(max(x, ε))`, without the range clamp.
pub fn mel_db(w: &Waveform, fb: &MelFilterbank, stft: &Stft) -> Result<(Vec<f64>, usize)> {
    if stft.n_bins() != fb.n_bins {
        return Err(Error::shape("log_mel", &[stft.n_bins()], &[fb.n_bins]));
    }
    let frames = frame_count(w.len(), stft.n_fft(), stft.hop()).unwrap_or(0);
    let mut out = vec![0.0; fb.n_mels * frames];
    let mut col = vec![0.0; fb.n_mels];
    stft.for_each_frame(&w.samples, |t, mags| {
        fb.apply(mags, &mut col);
        for (m, &v) in col.iter().enumerate() {
            out[m * frames + t] = 20.0 * v.max(LOG_EPSILON).log10();
        }
    })?;
    Ok((out, frames))
}

/// Clamps dB values to `[max − top_db, max]`.
pub fn clamp_db(values: &mut [f64], top_db: f64) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - top_db;
    values.iter_mut().for_each(|v| *v = v.max(floor));
}

/// Log-mel spectrogram with the default 80 dB range.
pub fn log_mel(w: &Waveform, fb: &MelFilterbank, n_fft: usize, hop: usize) -> Result<LogMelSpectrogram> {
    log_mel_with(w, fb, &Stft::new(n_fft, hop)?, 80.0)
}

pub fn log_mel_with(w: &Waveform, fb: &MelFilterbank, stft: &Stft, top_db: f64) -> Result<LogMelSpectrogram> {
    let (mut db, frames) = mel_db(w, fb, stft)?;
    clamp_db(&mut db, top_db);
    Ok(LogMelSpectrogram {
        values: db.into_iter().map(|v| v as f32).collect(),
        n_mels: fb.n_mels,
        n_frames: frames,
        frame_hop_seconds: stft.hop() as f64 / w.sample_rate as f64,
    })
}

/// STFT plan and filterbank built once and reused for many waveforms.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub config: DspConfig,
    pub stft: Stft,
    pub filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(config: &DspConfig) -> Result<Self> {
        Ok(FeatureExtractor {
            config: config.clone(),
            stft: Stft::new(config.n_fft, config.hop)?,
            filterbank: MelFilterbank::new(
                config.sample_rate,
                config.n_fft,
                config.n_mels,
                config.f_min,
                config.f_max(),
            )?,
        })
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate != self.config.sample_rate {
            return Err(Error::Param(format!(
                "waveform is at {} Hz, features expect {} Hz",
                w.sample_rate, self.config.sample_rate
            )));
        }
        log_mel_with(w, &self.filterbank, &self.stft, self.config.top_db)
    }
}

/// Splits `w` into fixed-length chunks starting every `hop_seconds`
/// (defaults to the chunk length). A trailing partial chunk is dropped.
pub fn chunk_waveform(w: &Waveform, chunk_seconds: f64, hop_seconds: Option<f64>) -> Result<Vec<Waveform>> {
    let len = seconds_to_samples(chunk_seconds, w.sample_rate);
    let hop = hop_seconds.map_or(len, |h| seconds_to_samples(h, w.sample_rate));
    if len == 0 || hop == 0 {
        return Err(Error::Param("chunk and hop lengths must be at least one sample".into()));
    }
    let count = frame_count(w.len(), len, hop).ok_or_else(|| {
        Error::TooShort(format!(
            "{:.3} s of audio is shorter than one {chunk_seconds} s chunk",
            w.duration_seconds()
        ))
    })?;
    Ok((0..count)
        .map(|i| Waveform {
            samples: w.samples[i * hop..i * hop + len].to_vec(),
            sample_rate: w.sample_rate,
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod test_support {
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    use super::Waveform;

    pub fn sine(freq: f64, sr: u32, n: usize, amp: f64) -> Waveform {
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    /// Frequency of the largest DFT bin of the Hann-windowed signal, and
    /// the bin spacing in Hz.
    pub fn peak_frequency(x: &[f32], sr: u32) -> (f64, f64) {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                Complex::new(v as f64 * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        let bin_hz = sr as f64 / n as f64;
        (k as f64 * bin_hz, bin_hz)
    }
}
