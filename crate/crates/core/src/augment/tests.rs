use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::dsp::test_support::{peak_frequency, sine};
use crate::dsp::{rms, TARGET_SAMPLE_RATE};

const SR: u32 = TARGET_SAMPLE_RATE;

fn noise(n: usize, amp: f64, seed: u64) -> Waveform {
    let mut rng = crate::rng::stream(seed, &[7]);
    let samples = (0..n).map(|_| (amp * rng.random_range(-1.0..1.0)) as f32).collect();
    Waveform::new(samples, SR).unwrap()
}

/// Magnitude of a bilinear-transformed second-order Butterworth filter at
/// `f`, from the prewarped analog prototype.
fn butterworth_gain(f: f64, fc: f64, high: bool) -> f64 {
    let warp = |x: f64| (std::f64::consts::PI * x / SR as f64).tan();
    let r = warp(f) / warp(fc);
    let r = if high { 1.0 / r } else { r };
    1.0 / (1.0 + r.powi(4)).sqrt()
}

/// Steady-state gain in dB measured on the second half of the output.
fn measured_gain_db(input: &Waveform, output: &Waveform) -> f64 {
    let h = input.len() / 2;
    20.0 * (rms(&output.samples[h..]) / rms(&input.samples[h..])).log10()
}

#[test]
fn zero_probabilities_leave_input_untouched() {
    let chain = AugmentChain::new(&AugmentSpec::with_all_probabilities(0.0), 1).unwrap();
    let w = noise(4000, 0.8, 1);
    let mut rng = chain.rng_for(&[0]);
    assert_eq!(chain.apply(&w, &mut rng), w);
}

#[test]
fn polarity_only_negates() {
    let chain = AugmentChain::new(&AugmentSpec::only(TransformKind::Polarity), 1).unwrap();
    let w = noise(4000, 0.8, 2);
    let out = chain.apply(&w, &mut chain.rng_for(&[0]));
    assert!(out.samples.iter().zip(&w.samples).all(|(a, b)| *a == -*b));
}

#[test]
fn chain_is_deterministic_for_a_seed() {
    let chain = AugmentChain::new(&AugmentSpec::with_all_probabilities(0.9), 5).unwrap();
    let w = sine(330.0, SR, 8000, 0.5);
    let a = chain.apply(&w, &mut chain.rng_for(&[3, 4]));
    let b = chain.apply(&w, &mut chain.rng_for(&[3, 4]));
    assert_eq!(a, b);
    let again = AugmentChain::new(&AugmentSpec::with_all_probabilities(0.9), 5).unwrap();
    assert_eq!(again.apply(&w, &mut again.rng_for(&[3, 4])), a);
}

#[test]
fn unset_probabilities_are_drawn_from_the_range() {
    let chain = AugmentChain::new(&AugmentSpec::default(), 11).unwrap();
    assert_eq!(chain.stages.len(), 8);
    for s in &chain.stages {
        assert!((0.3..=0.7).contains(&s.probability), "{s:?}");
    }
    let kinds: Vec<_> = chain.stages.iter().map(|s| s.kind).collect();
    assert_eq!(kinds, TransformKind::ALL.to_vec());
    let other = AugmentChain::new(&AugmentSpec::default(), 12).unwrap();
    assert_ne!(chain.stages, other.stages);
}

#[test]
fn disabled_transforms_are_dropped() {
    let mut spec = AugmentSpec::with_all_probabilities(1.0);
    spec.reverb.enabled = false;
    spec.noise.enabled = false;
    let chain = AugmentChain::new(&spec, 0).unwrap();
    assert_eq!(chain.stages.len(), 6);
    assert_eq!(chain.probability(TransformKind::Reverb), 0.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = AugmentSpec::default();
    spec.gain.range = [0.0, -5.0];
    assert!(AugmentChain::new(&spec, 0).is_err());
    let mut spec = AugmentSpec::default();
    spec.delay.probability = Some(1.5);
    assert!(AugmentChain::new(&spec, 0).is_err());
    let spec = AugmentSpec {
        probability_range: [0.8, 0.2],
        ..AugmentSpec::default()
    };
    assert!(spec.validate().is_err());
}

#[test]
fn spec_round_trips_through_toml() {
    let mut spec = AugmentSpec::default();
    spec.gain.probability = Some(0.25);
    let text = toml::to_string(&spec).unwrap();
    let back: AugmentSpec = toml::from_str(&text).unwrap();
    assert_eq!(back, spec);
    let partial: AugmentSpec = toml::from_str("[reverb]\nrange = [10.0, 20.0]\n").unwrap();
    assert_eq!(partial.reverb.range, [10.0, 20.0]);
    assert!(partial.reverb.enabled);
    assert!(toml::from_str::<AugmentSpec>("bogus = 1").is_err());
}

#[test]
fn every_transform_preserves_length_and_clips() {
    let w = noise(3000, 1.0, 3);
    for kind in TransformKind::ALL {
        let chain = AugmentChain::new(&AugmentSpec::only(kind), 0).unwrap();
        for seed in 0..5 {
            let (out, fired) = chain.apply_traced(&w, &mut chain.rng_for(&[seed]));
            assert_eq!(out.len(), w.len(), "{kind}");
            assert!(out.samples.iter().all(|s| (-1.0..=1.0).contains(s)), "{kind}");
            assert_eq!(fired.len(), 1);
            assert_eq!(fired[0].kind, kind);
            let [a, b] = kind.default_range();
            assert!((a..=b).contains(&fired[0].param), "{kind}: {}", fired[0].param);
        }
    }
}

#[test]
fn pitch_shift_draws_whole_semitones() {
    let chain = AugmentChain::new(&AugmentSpec::only(TransformKind::PitchShift), 0).unwrap();
    let w = noise(500, 0.5, 1);
    for seed in 0..50 {
        let (_, fired) = chain.apply_traced(&w, &mut chain.rng_for(&[seed]));
        assert_eq!(fired[0].param.fract(), 0.0);
    }
}

#[test]
fn activation_rates_match_probabilities() {
    let mut spec = AugmentSpec::default();
    // Short pitch/reverb work keeps the 10k-trial loop fast.
    spec.pitch_shift.range = [1.0, 1.0];
    let chain = AugmentChain::new(&spec, 2024).unwrap();
    let w = noise(256, 0.5, 8);
    let trials = 10_000;
    let mut counts: HashMap<TransformKind, usize> = HashMap::new();
    for i in 0..trials {
        let (_, fired) = chain.apply_traced(&w, &mut chain.rng_for(&[i]));
        for f in fired {
            *counts.entry(f.kind).or_default() += 1;
        }
    }
    for s in &chain.stages {
        let rate = *counts.get(&s.kind).unwrap_or(&0) as f64 / trials as f64;
        assert!(
            (rate - s.probability).abs() <= 0.02,
            "{}: rate {rate} vs p {}",
            s.kind,
            s.probability
        );
    }
}

#[test]
fn polarity_twice_is_identity() {
    let w = noise(1000, 0.9, 4);
    assert_eq!(polarity_inversion(&polarity_inversion(&w)), w);
    let z = Waveform::new(vec![0.0; 10], SR).unwrap();
    assert!(polarity_inversion(&z).samples.iter().all(|&s| s == 0.0));
    assert_eq!(polarity_inversion(&w).rms(), w.rms());
}

#[test]
fn noise_adds_power() {
    let w = sine(440.0, SR, 44_100, std::f64::consts::SQRT_2);
    assert!((w.rms() - 1.0).abs() < 1e-3);
    let mut total = 0.0;
    let trials = 20;
    for seed in 0..trials {
        let out = additive_noise(&w, 0.3, &mut crate::rng::stream(seed, &[]));
        total += out.rms();
    }
    let mean = total / trials as f64;
    let expected = (1.0f64 + 0.09).sqrt();
    assert!((mean - expected).abs() / expected < 0.02, "{mean}");
}

#[test]
fn noise_edge_cases() {
    let silent = Waveform::new(vec![0.0; 100], SR).unwrap();
    assert_eq!(additive_noise(&silent, 0.5, &mut crate::rng::stream(0, &[])), silent);
    let w = noise(5000, 0.5, 9);
    let out = additive_noise(&w, 1e-6, &mut crate::rng::stream(0, &[]));
    let err: Vec<f32> = out.samples.iter().zip(&w.samples).map(|(a, b)| a - b).collect();
    assert!(rms(&err) < 1e-6);
}

#[test]
fn gain_scales_amplitude() {
    let w = noise(1000, 0.9, 5);
    let tenth = random_gain(&w, -20.0);
    for (a, b) in tenth.samples.iter().zip(&w.samples) {
        assert!((a - b * 0.1).abs() <= 1e-7);
    }
    let half = random_gain(&w, -6.0206);
    for (a, b) in half.samples.iter().zip(&w.samples) {
        assert!((a - b * 0.5).abs() <= 1e-6);
    }
    assert_eq!(random_gain(&w, 0.0), w);
}

#[test]
fn high_pass_follows_butterworth_response() {
    for (f, fc) in [(100.0, 2200.0), (10_000.0, 2200.0), (3000.0, 3000.0), (1000.0, 4000.0)] {
        let w = sine(f, SR, 44_100, 0.5);
        let g = measured_gain_db(&w, &high_pass(&w, fc));
        let oracle = 20.0 * butterworth_gain(f, fc, true).log10();
        assert!((g - oracle).abs() < 0.1, "f={f} fc={fc}: {g} vs {oracle}");
    }
    let low = sine(100.0, SR, 44_100, 0.5);
    assert!(measured_gain_db(&low, &high_pass(&low, 2200.0)) <= -20.0);
    let high = sine(10_000.0, SR, 44_100, 0.5);
    assert!(measured_gain_db(&high, &high_pass(&high, 2200.0)) >= -1.0);
    let dc = Waveform::new(vec![0.5; 20_000], SR).unwrap();
    assert!(high_pass(&dc, 2200.0).samples[19_000..].iter().all(|s| s.abs() < 1e-6));
}

#[test]
fn low_pass_follows_butterworth_response() {
    for (f, fc) in [(100.0, 1200.0), (5000.0, 200.0), (800.0, 800.0), (3000.0, 1200.0)] {
        let w = sine(f, SR, 44_100, 0.5);
        let g = measured_gain_db(&w, &low_pass(&w, fc));
        let oracle = 20.0 * butterworth_gain(f, fc, false).log10();
        assert!((g - oracle).abs() < 0.1, "f={f} fc={fc}: {g} vs {oracle}");
    }
    let high = sine(10_000.0, SR, 44_100, 0.5);
    assert!(measured_gain_db(&high, &low_pass(&high, 1200.0)) <= -20.0);
    let dc = Waveform::new(vec![0.5; 20_000], SR).unwrap();
    assert!(low_pass(&dc, 200.0).samples[19_000..]
        .iter()
        .all(|s| (s - 0.5).abs() < 1e-5));
}

#[test]
fn delay_places_a_half_amplitude_echo() {
    let mut x = vec![0.0f32; 10_000];
    x[0] = 1.0;
    let w = Waveform::new(x, SR).unwrap();
    let y = delay(&w, 200.0);
    assert_eq!(y.len(), w.len());
    let nonzero: Vec<usize> = (0..y.len()).filter(|&i| y.samples[i] != 0.0).collect();
    assert_eq!(nonzero, vec![0, 4410]);
    assert!((y.samples[4410] / y.samples[0] - 0.5).abs() < 1e-7);
    assert!((y.samples[0] - 1.0 / 1.5).abs() < 1e-7);
    let silent = Waveform::new(vec![0.0; 100], SR).unwrap();
    assert_eq!(delay(&silent, 300.0), silent);
}

#[test]
fn pitch_shift_moves_the_peak() {
    let w = sine(440.0, SR, 22_050, 0.5);
    let (up, _) = peak_frequency(&pitch_shift(&w, 12).samples[..11_025], SR);
    assert!((up - 880.0).abs() / 880.0 < 0.03, "{up}");
    let (down, _) = peak_frequency(&pitch_shift(&w, -12).samples, SR);
    assert!((down - 220.0).abs() / 220.0 < 0.03, "{down}");
    assert_eq!(pitch_shift(&w, 0), w);
    assert_eq!(pitch_shift(&w, 5).len(), w.len());
    assert_eq!(pitch_shift(&w, -5).len(), w.len());
}

/// Samples until the impulse response's energy envelope stays below −60 dB
/// of its peak.
fn decay_samples(room: f64) -> usize {
    let mut x = vec![0.0f32; 3 * SR as usize];
    x[0] = 1.0;
    let y = reverb(&Waveform::new(x, SR).unwrap(), room);
    let peak = y.samples.iter().map(|s| s * s).fold(0.0f32, f32::max);
    let threshold = peak * 1e-6;
    y.samples.iter().rposition(|s| s * s > threshold).unwrap()
}

#[test]
fn bigger_rooms_ring_longer() {
    let small = decay_samples(0.0);
    let big = decay_samples(100.0);
    assert!(big > small, "{big} vs {small}");
    assert!(decay_samples(50.0) > small);
}

#[test]
fn reverb_parameter_mapping() {
    assert_eq!(reverb_params(0.0), (0.70, 1.0));
    let (g, s) = reverb_params(100.0);
    assert!((g - 0.92).abs() < 1e-12 && (s - 1.5).abs() < 1e-12);
}

#[test]
fn reverb_keeps_noise_level_in_bounds() {
    let silent = Waveform::new(vec![0.0; 1000], SR).unwrap();
    assert_eq!(reverb(&silent, 50.0), silent);
    for room in [0.0, 50.0, 100.0] {
        for seed in 0..5 {
            let w = noise(44_100, 0.3, seed);
            let ratio = reverb(&w, room).rms() / w.rms();
            assert!((0.5..=2.0).contains(&ratio), "room {room}: {ratio}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gains_compose(a in -20.0f64..0.0, b in -20.0f64..0.0, seed in 0u64..100) {
        let w = noise(500, 0.9, seed);
        let twice = random_gain(&random_gain(&w, a), b);
        let once = random_gain(&w, a + b);
        for (x, y) in twice.samples.iter().zip(&once.samples) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn chain_output_is_bounded_and_same_length(seed in 0u64..1000, n in 64usize..3000, amp in 0.0f64..3.0) {
        let chain = AugmentChain::new(&AugmentSpec::with_all_probabilities(0.6), seed).unwrap();
        let w = noise(n, amp, seed);
        let out = chain.apply(&w, &mut chain.rng_for(&[seed]));
        prop_assert_eq!(out.len(), n);
        prop_assert!(out.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
}
