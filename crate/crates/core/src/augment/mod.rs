//! Waveform augmentation: eight transforms applied in a fixed order, each
//! firing independently with its own probability.

mod transforms;

#[cfg(test)]
mod tests;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use transforms::{
    additive_noise, clip, db_to_amplitude, delay, high_pass, low_pass, pitch_shift, polarity_inversion, random_gain,
    reverb, reverb_params, Biquad, ALLPASS_DELAYS_MS, ALLPASS_GAIN, COMB_DELAYS_MS, DELAY_MIX, REVERB_DRY, REVERB_WET,
};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Polarity,
    Noise,
    Gain,
    HighPass,
    LowPass,
    Delay,
    PitchShift,
    Reverb,
}

impl TransformKind {
    /// Application order.
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Polarity,
        TransformKind::Noise,
        TransformKind::Gain,
        TransformKind::HighPass,
        TransformKind::LowPass,
        TransformKind::Delay,
        TransformKind::PitchShift,
        TransformKind::Reverb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Polarity => "polarity",
            TransformKind::Noise => "noise",
            TransformKind::Gain => "gain",
            TransformKind::HighPass => "high_pass",
            TransformKind::LowPass => "low_pass",
            TransformKind::Delay => "delay",
            TransformKind::PitchShift => "pitch_shift",
            TransformKind::Reverb => "reverb",
        }
    }

    /// Parameter range used when none is configured, in the transform's
    /// own units (SNR factor, dB, Hz, ms, semitones, room size).
    pub fn default_range(self) -> [f64; 2] {
        match self {
            TransformKind::Polarity => [0.0, 0.0],
            TransformKind::Noise => [0.3, 0.5],
            TransformKind::Gain => [-20.0, -1.0],
            TransformKind::HighPass => [2200.0, 4000.0],
            TransformKind::LowPass => [200.0, 1200.0],
            TransformKind::Delay => [200.0, 500.0],
            TransformKind::PitchShift => [-7.0, 7.0],
            TransformKind::Reverb => [0.0, 100.0],
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings for one transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Activation probability; drawn from the spec's `probability_range`
    /// when the chain is built if left unset.
    #[serde(default)]
    pub probability: Option<f64>,
    /// Inclusive `[min, max]` parameter range.
    pub range: [f64; 2],
}

fn yes() -> bool {
    true
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        TransformSpec {
            enabled: true,
            probability: None,
            range: kind.default_range(),
        }
    }
}

/// Configuration of the whole chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Range that unset per-transform probabilities are drawn from.
    pub probability_range: [f64; 2],
    pub polarity: TransformSpec,
    pub noise: TransformSpec,
    pub gain: TransformSpec,
    pub high_pass: TransformSpec,
    pub low_pass: TransformSpec,
    pub delay: TransformSpec,
    pub pitch_shift: TransformSpec,
    pub reverb: TransformSpec,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            probability_range: [0.3, 0.7],
            polarity: TransformSpec::new(TransformKind::Polarity),
            noise: TransformSpec::new(TransformKind::Noise),
            gain: TransformSpec::new(TransformKind::Gain),
            high_pass: TransformSpec::new(TransformKind::HighPass),
            low_pass: TransformSpec::new(TransformKind::LowPass),
            delay: TransformSpec::new(TransformKind::Delay),
            pitch_shift: TransformSpec::new(TransformKind::PitchShift),
            reverb: TransformSpec::new(TransformKind::Reverb),
        }
    }
}

impl AugmentSpec {
    pub fn get(&self, kind: TransformKind) -> &TransformSpec {
        match kind {
            TransformKind::Polarity => &self.polarity,
            TransformKind::Noise => &self.noise,
            TransformKind::Gain => &self.gain,
            TransformKind::HighPass => &self.high_pass,
            TransformKind::LowPass => &self.low_pass,
            TransformKind::Delay => &self.delay,
            TransformKind::PitchShift => &self.pitch_shift,
            TransformKind::Reverb => &self.reverb,
        }
    }

    pub fn get_mut(&mut self, kind: TransformKind) -> &mut TransformSpec {
        match kind {
            TransformKind::Polarity => &mut self.polarity,
            TransformKind::Noise => &mut self.noise,
            TransformKind::Gain => &mut self.gain,
            TransformKind::HighPass => &mut self.high_pass,
            TransformKind::LowPass => &mut self.low_pass,
            TransformKind::Delay => &mut self.delay,
            TransformKind::PitchShift => &mut self.pitch_shift,
            TransformKind::Reverb => &mut self.reverb,
        }
    }

    /// Every transform fires with probability `p`.
    pub fn with_all_probabilities(p: f64) -> Self {
        let mut spec = AugmentSpec::default();
        for kind in TransformKind::ALL {
            spec.get_mut(kind).probability = Some(p);
        }
        spec
    }

    /// Only `kind` fires (always); everything else is off.
    pub fn only(kind: TransformKind) -> Self {
        let mut spec = AugmentSpec::with_all_probabilities(0.0);
        spec.get_mut(kind).probability = Some(1.0);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.probability_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Param(format!(
                "augment probability_range [{lo}, {hi}] must lie in [0, 1] with min ≤ max"
            )));
        }
        for kind in TransformKind::ALL {
            let t = self.get(kind);
            if let Some(p) = t.probability {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Param(format!(
                        "augment.{kind}.probability = {p} is outside [0, 1]"
                    )));
                }
            }
            let [a, b] = t.range;
            if !(a.is_finite() && b.is_finite()) || a > b {
                return Err(Error::Param(format!(
                    "augment.{kind}.range [{a}, {b}] must be finite with min ≤ max"
                )));
            }
            let bad = match kind {
                TransformKind::Noise => a <= 0.0,
                TransformKind::HighPass | TransformKind::LowPass => a <= 0.0,
                TransformKind::Delay => a < 0.0,
                TransformKind::Reverb => a < 0.0 || b > 100.0,
                _ => false,
            };
            if bad {
                return Err(Error::Param(format!(
                    "augment.{kind}.range [{a}, {b}] is out of the transform's domain"
                )));
            }
        }
        Ok(())
    }
}

/// One configured stage of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub kind: TransformKind,
    pub probability: f64,
    pub range: [f64; 2],
}

/// A transform that fired, with the parameter it drew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Applied {
    pub kind: TransformKind,
    pub param: f64,
}

/// Ordered, fully resolved augmentation chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentChain {
    pub stages: Vec<Stage>,
    pub seed: u64,
}

impl AugmentChain {
    /// Resolves unset probabilities by drawing them uniformly from
    /// `spec.probability_range` with a stream derived from `seed`.
    pub fn new(spec: &AugmentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let [lo, hi] = spec.probability_range;
        let mut rng = crate::rng::stream(seed, &[crate::rng::hash_str("augment-probabilities")]);
        let stages = TransformKind::ALL
            .iter()
            .filter_map(|&kind| {
                let t = spec.get(kind);
                // Always draw so enabling one transform does not shift the others.
                let drawn = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                t.enabled.then(|| Stage {
                    kind,
                    probability: t.probability.unwrap_or(drawn),
                    range: t.range,
                })
            })
            .collect();
        Ok(AugmentChain { stages, seed })
    }

    /// A chain that never changes its input.
    pub fn identity() -> Self {
        AugmentChain {
            stages: Vec::new(),
            seed: 0,
        }
    }

    pub fn probability(&self, kind: TransformKind) -> f64 {
        self.stages
            .iter()
            .find(|s| s.kind == kind)
            .map_or(0.0, |s| s.probability)
    }

    /// Per-example stream for this chain.
    pub fn rng_for(&self, path: &[u64]) -> StreamRng {
        crate::rng::stream(derive_seed(self.seed, &[crate::rng::hash_str("augment-apply")]), path)
    }

    pub fn apply<R: Rng + ?Sized>(&self, w: &Waveform, rng: &mut R) -> Waveform {
        self.apply_traced(w, rng).0
    }

    /// Like [`apply`](Self::apply) but also reports which transforms fired.
    pub fn apply_traced<R: Rng + ?Sized>(&self, w: &Waveform, rng: &mut R) -> (Waveform, Vec<Applied>) {
        let mut out = w.clone();
        let mut fired = Vec::new();
        for stage in &self.stages {
            let u: f64 = rng.random();
            if u >= stage.probability {
                continue;
            }
            let [a, b] = stage.range;
            let param = match stage.kind {
                TransformKind::Polarity => 0.0,
                TransformKind::PitchShift => {
                    let (lo, hi) = (a.ceil() as i32, b.floor() as i32);
                    if lo > hi {
                        0.0
                    } else {
                        rng.random_range(lo..=hi) as f64
                    }
                }
                _ if a == b => a,
                _ => rng.random_range(a..=b),
            };
            out = match stage.kind {
                TransformKind::Polarity => polarity_inversion(&out),
                TransformKind::Noise => additive_noise(&out, param, rng),
                TransformKind::Gain => random_gain(&out, param),
                TransformKind::HighPass => high_pass(&out, param),
                TransformKind::LowPass => low_pass(&out, param),
                TransformKind::Delay => delay(&out, param),
                TransformKind::PitchShift => pitch_shift(&out, param as i32),
                TransformKind::Reverb => reverb(&out, param),
            };
            fired.push(Applied {
                kind: stage.kind,
                param,
            });
        }
        clip(&mut out);
        (out, fired)
    }
}
