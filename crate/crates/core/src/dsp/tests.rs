use proptest::prelude::*;

use super::test_support::sine;
use super::*;

fn noise(n: usize, amp: f64, seed: u64) -> Waveform {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, &[]);
    let samples = (0..n).map(|_| (amp * rng.random_range(-1.0..1.0)) as f32).collect();
    Waveform::new(samples, TARGET_SAMPLE_RATE).unwrap()
}

/// Direct O(N²) DFT magnitude of one Hann-windowed frame.
fn naive_frame_magnitude(frame: &[f32], k: usize) -> f64 {
    let n = frame.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &x) in frame.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
        let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n;
        re += x as f64 * w * ang.cos();
        im += x as f64 * w * ang.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn waveform_invariants() {
    assert!(Waveform::new(vec![0.0], 0).is_err());
    assert!(Waveform::new(vec![f32::NAN], 22050).is_err());
    assert!(Waveform::new(vec![f32::INFINITY], 22050).is_err());
    assert!(Waveform::new(vec![], 22050).is_ok());
}

#[test]
fn stft_of_silence_is_zero() {
    let w = Waveform::new(vec![0.0; 4096], 22050).unwrap();
    let s = stft_magnitude(&w, 1024, 512).unwrap();
    assert_eq!((s.bins, s.frames), (513, 7));
    assert!(s.data.iter().all(|&v| v == 0.0));
}

#[test]
fn chunk_length_gives_157_frames() {
    let w = Waveform::new(vec![0.0; 81_364], 22050).unwrap();
    assert_eq!(stft_magnitude(&w, 1024, 512).unwrap().frames, 157);
    assert_eq!(DspConfig::default().chunk_samples(), 81_364);
    assert_eq!(DspConfig::default().chunk_frames().unwrap(), 157);
}

#[test]
fn stft_too_short_is_an_error() {
    let w = Waveform::new(vec![0.0; 1023], 22050).unwrap();
    assert!(matches!(stft_magnitude(&w, 1024, 512), Err(Error::TooShort(_))));
}

#[test]
fn bin_center_sine_peaks_at_its_bin() {
    for k in [5usize, 40, 200, 400] {
        let f = k as f64 * 22050.0 / 1024.0;
        let w = sine(f, 22050, 6000, 0.5);
        let s = stft_magnitude(&w, 1024, 512).unwrap();
        for t in 0..s.frames {
            let argmax = (0..s.bins)
                .max_by(|&a, &b| s.get(a, t).total_cmp(&s.get(b, t)))
                .unwrap();
            assert_eq!(argmax, k, "frame {t}");
        }
    }
}

#[test]
fn stft_matches_direct_dft() {
    let w = noise(3000, 0.7, 3);
    let s = stft_magnitude(&w, 256, 100).unwrap();
    assert_eq!(s.frames, (3000 - 256) / 100 + 1);
    for t in [0, 5, s.frames - 1] {
        let frame = &w.samples[t * 100..t * 100 + 256];
        for k in [0, 1, 17, 64, 128] {
            let oracle = naive_frame_magnitude(frame, k);
            assert!((s.get(k, t) - oracle).abs() < 1e-9 * (1.0 + oracle), "t={t} k={k}");
        }
    }
}

#[test]
fn mel_scale_round_trips() {
    for f in [0.0, 100.0, 700.0, 1000.0, 11025.0] {
        assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
    }
    assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
}

#[test]
fn default_filterbank_shape_and_monotone_centers() {
    let fb = mel_filterbank(22050, 1024, 128, 0.0, 11025.0).unwrap();
    assert_eq!(fb.weights.len(), 128 * 513);
    assert_eq!((fb.n_mels, fb.n_bins), (128, 513));
    assert!(fb.weights.iter().all(|&w| w >= 0.0));
    for m in 0..128 {
        assert!(fb.row(m).iter().any(|&w| w > 0.0), "row {m} empty");
    }
    assert!(fb.centers.windows(2).all(|c| c[0] < c[1]));
}

#[test]
fn single_filter_spans_the_whole_band() {
    let fb = mel_filterbank(22050, 1024, 1, 0.0, 11025.0).unwrap();
    let row = fb.row(0);
    assert_eq!(row[0], 0.0);
    assert_eq!(row[512], 0.0);
    assert!(row[1..512].iter().all(|&w| w > 0.0));
    // Peak at the mel midpoint, with height 2 / (f_hi − f_lo).
    let center = mel_to_hz(hz_to_mel(11025.0) / 2.0);
    assert!((fb.centers[0] - center).abs() < 1e-9);
    let peak = row.iter().copied().fold(0.0, f64::max);
    assert!(peak <= 2.0 / 11025.0 + 1e-15 && peak > 0.95 * 2.0 / 11025.0);
}

#[test]
fn filter_weight_matches_hand_formula() {
    let fb = mel_filterbank(22050, 1024, 40, 50.0, 8000.0).unwrap();
    let edges: Vec<f64> = (0..42)
        .map(|i| mel_to_hz(hz_to_mel(50.0) + (hz_to_mel(8000.0) - hz_to_mel(50.0)) * i as f64 / 41.0))
        .collect();
    for (m, k) in [(0usize, 3usize), (10, 30), (39, 360), (20, 100)] {
        let f = k as f64 * 22050.0 / 1024.0;
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let tri = if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo)
        } else {
            (hi - f) / (hi - c)
        };
        assert!((fb.row(m)[k] - tri * 2.0 / (hi - lo)).abs() < 1e-15, "m={m} k={k}");
    }
}

#[test]
fn filterbank_parameter_errors() {
    assert!(matches!(
        mel_filterbank(22050, 1024, 0, 0.0, 8000.0),
        Err(Error::Param(_))
    ));
    assert!(matches!(
        mel_filterbank(22050, 1024, 10, 5000.0, 4000.0),
        Err(Error::Param(_))
    ));
    assert!(matches!(
        mel_filterbank(22050, 1024, 10, 0.0, 12000.0),
        Err(Error::Param(_))
    ));
    assert!(matches!(
        mel_filterbank(22050, 1024, 10, -1.0, 8000.0),
        Err(Error::Param(_))
    ));
    // Far more bands than FFT bins leaves some triangles empty.
    assert!(matches!(
        mel_filterbank(22050, 64, 128, 0.0, 11025.0),
        Err(Error::Param(_))
    ));
}

#[test]
fn log_mel_of_silence_is_flat_at_the_floor() {
    let w = Waveform::new(vec![0.0; 81_364], 22050).unwrap();
    let fb = mel_filterbank(22050, 1024, 128, 0.0, 11025.0).unwrap();
    let s = log_mel(&w, &fb, 1024, 512).unwrap();
    assert_eq!((s.n_mels, s.n_frames), (128, 157));
    assert!(s.values.iter().all(|&v| v == -200.0));
    assert!((s.frame_hop_seconds - 512.0 / 22050.0).abs() < 1e-15);
}

#[test]
fn log_mel_is_clamped_to_80_db_below_max() {
    let mut samples = sine(1000.0, 22050, 20_000, 0.9).samples;
    samples[10_000..].iter_mut().for_each(|s| *s = 0.0);
    let w = Waveform::new(samples, 22050).unwrap();
    let fb = mel_filterbank(22050, 1024, 64, 0.0, 11025.0).unwrap();
    let s = log_mel(&w, &fb, 1024, 512).unwrap();
    assert!(s.values.iter().all(|v| v.is_finite()));
    assert!((s.min() - (s.max() - 80.0)).abs() < 1e-3);
}

#[test]
fn halving_amplitude_shifts_by_6_02_db() {
    let w = noise(8000, 0.8, 11);
    let half = Waveform::new(w.samples.iter().map(|s| s * 0.5).collect(), 22050).unwrap();
    let fb = mel_filterbank(22050, 1024, 64, 0.0, 11025.0).unwrap();
    let stft = Stft::new(1024, 512).unwrap();
    let (a, _) = mel_db(&w, &fb, &stft).unwrap();
    let (b, _) = mel_db(&half, &fb, &stft).unwrap();
    let shift = 20.0 * 0.5f64.log10();
    for (x, y) in a.iter().zip(&b) {
        assert!((y - x - shift).abs() < 1e-4, "{x} {y}");
    }
}

#[test]
fn extractor_matches_free_function_and_checks_rate() {
    let cfg = DspConfig {
        n_mels: 32,
        ..DspConfig::default()
    };
    let fx = FeatureExtractor::new(&cfg).unwrap();
    let w = noise(5000, 0.3, 2);
    let a = fx.log_mel(&w).unwrap();
    let b = log_mel(&w, &mel_filterbank(22050, 1024, 32, 0.0, 11025.0).unwrap(), 1024, 512).unwrap();
    assert_eq!(a, b);
    let other = Waveform::new(w.samples.clone(), 16000).unwrap();
    assert!(fx.log_mel(&other).is_err());
}

#[test]
fn thirty_seconds_gives_eight_chunks() {
    let w = Waveform::new(vec![0.1; 30 * 22050], 22050).unwrap();
    let chunks = chunk_waveform(&w, 3.69, None).unwrap();
    assert_eq!(chunks.len(), 8);
    assert!(chunks.iter().all(|c| c.len() == 81_364));
}

#[test]
fn exactly_one_chunk_is_returned_whole() {
    let w = noise(81_364, 0.5, 4);
    let chunks = chunk_waveform(&w, 3.69, None).unwrap();
    assert_eq!(chunks, vec![w]);
}

#[test]
fn half_hop_on_two_chunks_gives_three() {
    let w = Waveform::new(vec![0.0; seconds_to_samples(7.38, 22050)], 22050).unwrap();
    let chunks = chunk_waveform(&w, 3.69, Some(3.69 / 2.0)).unwrap();
    assert_eq!(chunks.len(), 3);
}

#[test]
fn chunking_too_short_is_an_error() {
    let w = Waveform::new(vec![0.0; 1000], 22050).unwrap();
    assert!(matches!(chunk_waveform(&w, 3.69, None), Err(Error::TooShort(_))));
}

#[test]
fn mel_energy_grows_with_noise_rms() {
    let fb = mel_filterbank(22050, 1024, 64, 0.0, 11025.0).unwrap();
    let stft = Stft::new(1024, 512).unwrap();
    let base = noise(10_000, 1.0, 99);
    let mut last = f64::NEG_INFINITY;
    for amp in [0.01f32, 0.05, 0.1, 0.3, 0.6, 1.0] {
        let w = Waveform::new(base.samples.iter().map(|s| s * amp).collect(), 22050).unwrap();
        let mut energy = 0.0;
        let mut col = vec![0.0; 64];
        stft.for_each_frame(&w.samples, |_, mags| {
            fb.apply(mags, &mut col);
            energy += col.iter().map(|v| v * v).sum::<f64>();
        })
        .unwrap();
        assert!(energy > last, "amp {amp}");
        last = energy;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_formula_holds(n in 1024usize..20_000, hop in 1usize..1024) {
        let w = Waveform::new(vec![0.25; n], 22050).unwrap();
        let s = Stft::new(1024, hop).unwrap().magnitude(&w.samples).unwrap();
        prop_assert_eq!(s.frames, (n - 1024) / hop + 1);
        prop_assert_eq!(s.bins, 513);
    }

    #[test]
    fn log_mel_ignores_polarity(seed in 0u64..1000, n in 2048usize..6000) {
        let w = noise(n, 0.9, seed);
        let neg = Waveform::new(w.samples.iter().map(|s| -s).collect(), 22050).unwrap();
        let fb = mel_filterbank(22050, 1024, 32, 0.0, 11025.0).unwrap();
        let a = log_mel(&w, &fb, 1024, 512).unwrap();
        let b = log_mel(&neg, &fb, 1024, 512).unwrap();
        prop_assert_eq!(a, b);
    }
}
