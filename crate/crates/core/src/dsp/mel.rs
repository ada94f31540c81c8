use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, each scaled to unit area
/// (`2 / (f_hi − f_lo)`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `[n_mels × n_bins]`.
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Center frequency of every filter, Hz.
    pub centers: Vec<f64>,
    /// Nonzero column range of every row.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || n_fft < 2 || !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
            return Err(Error::Param(format!(
                "mel filterbank needs n_mels ≥ 1 and 0 ≤ f_min < f_max ≤ {nyquist}; got n_mels={n_mels}, f_min={f_min}, f_max={f_max}"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        let mut spans = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (w, &f) in row.iter_mut().zip(&bin_hz) {
                let up = (f - lo) / (c - lo);
                let down = (hi - f) / (hi - c);
                *w = up.min(down).max(0.0) * norm;
            }
            let first = row.iter().position(|&w| w > 0.0);
            let last = row.iter().rposition(|&w| w > 0.0);
            match (first, last) {
                (Some(a), Some(b)) => spans.push((a, b + 1)),
                _ => {
                    return Err(Error::Param(format!(
                        "mel filter {m} ({lo:.1}–{hi:.1} Hz) covers no FFT bin; use fewer mel bands or a longer FFT"
                    )))
                }
            }
        }
        Ok(MelFilterbank {
            weights,
            n_mels,
            n_bins,
            sample_rate,
            n_fft,
            f_min,
            f_max,
            centers: edges[1..=n_mels].to_vec(),
            spans,
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `out[m] = Σ_k w[m,k] · spectrum[k]`, skipping zero weights.
    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let (a, b) = self.spans[m];
            let row = &self.weights[m * self.n_bins + a..m * self.n_bins + b];
            *o = row.iter().zip(&spectrum[a..b]).map(|(w, s)| w * s).sum();
        }
    }

    /// Mel band whose triangle covers `hz` most strongly.
    pub fn band_for(&self, hz: f64) -> usize {
        self.centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}
