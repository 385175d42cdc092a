//! Labeled single-channel source generators for the five hazard classes.
//!
//! None of these are physical models. Gas leaks are band-limited Gaussian
//! noise with a slow turbulent amplitude modulation; partial discharges are
//! trains of damped ultrasonic wavelets whose position inside the mains cycle
//! follows the phase-resolved pattern of the discharge type; background is
//! white noise with optional low-frequency machinery tones.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 96_000;

/// Hazard class; the declaration order fixes the one-hot index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Corona,
    Surface,
    Floating,
    GasLeak,
    Background,
}

impl ClassLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Corona,
        ClassLabel::Surface,
        ClassLabel::Floating,
        ClassLabel::GasLeak,
        ClassLabel::Background,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Corona => "corona",
            ClassLabel::Surface => "surface",
            ClassLabel::Floating => "floating",
            ClassLabel::GasLeak => "gas_leak",
            ClassLabel::Background => "background",
        }
    }

    pub fn is_discharge(self) -> bool {
        matches!(self, ClassLabel::Corona | ClassLabel::Surface | ClassLabel::Floating)
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.name() == norm || (norm == "gasleak" && *c == ClassLabel::GasLeak))
            .ok_or_else(|| invalid(format!("unknown class label {s:?}")))
    }
}

/// A sampled single-channel waveform with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct MonoSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub label: ClassLabel,
}

impl MonoSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, label: ClassLabel) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz, label })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        dsp::power(&self.samples)
    }
}

/// Parameters of one synthetic source clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub class: ClassLabel,
    pub seed: u64,
    pub amplitude: f64,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// Gas-leak noise band.
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Mains frequency that discharge phases are referenced to.
    pub mains_hz: f64,
    pub pulses_per_cycle: u32,
    /// 0.2, 0.5 or 1.0 for 200, 500 and 1000 cc/min leaks.
    pub leak_rate_scale: f64,
    /// Number of sub-20 kHz machinery tones mixed into background clips.
    pub machinery_tones: u32,
}

impl SourceSpec {
    pub fn new(class: ClassLabel, seed: u64) -> Self {
        Self {
            class,
            seed,
            amplitude: 1.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            duration_s: 10.0,
            band_lo_hz: 20_000.0,
            band_hi_hz: 48_000.0,
            mains_hz: 60.0,
            pulses_per_cycle: 4,
            leak_rate_scale: 1.0,
            machinery_tones: 0,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid(format!("amplitude must be finite and >= 0, got {}", self.amplitude)));
        }
        if self.sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid(format!("duration must be positive, got {}", self.duration_s)));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        match self.class {
            ClassLabel::GasLeak => {
                if !(self.band_lo_hz < self.band_hi_hz) {
                    return Err(invalid(format!(
                        "gas-leak band is empty: [{}, {}] Hz",
                        self.band_lo_hz, self.band_hi_hz
                    )));
                }
                if self.band_hi_hz > nyquist || self.band_lo_hz < 0.0 {
                    return Err(invalid(format!(
                        "gas-leak band [{}, {}] Hz exceeds the valid range [0, {nyquist}] Hz at {} Hz sampling",
                        self.band_lo_hz, self.band_hi_hz, self.sample_rate_hz
                    )));
                }
                if self.band_lo_hz < 20_000.0 || self.band_hi_hz > 48_000.0 {
                    return Err(invalid(format!(
                        "gas-leak band [{}, {}] Hz must lie within [20000, 48000] Hz",
                        self.band_lo_hz, self.band_hi_hz
                    )));
                }
                let (_, edge_scale) = leak_rate_scaling(self.leak_rate_scale)?;
                if self.band_hi_hz * edge_scale <= self.band_lo_hz {
                    return Err(invalid(format!(
                        "leak-rate scale {} collapses the band [{}, {}] Hz",
                        self.leak_rate_scale, self.band_lo_hz, self.band_hi_hz
                    )));
                }
            }
            c if c.is_discharge() => {
                if self.pulses_per_cycle == 0 {
                    return Err(invalid("pulses_per_cycle must be >= 1"));
                }
                if !(self.mains_hz > 0.0) {
                    return Err(invalid("mains frequency must be positive"));
                }
                if nyquist < PULSE_CARRIER_HZ.1 {
                    return Err(invalid(format!(
                        "sample rate {} Hz cannot represent discharge carriers up to {} Hz",
                        self.sample_rate_hz, PULSE_CARRIER_HZ.1
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Amplitude factor and band upper-edge factor for a leak-rate scale.
pub fn leak_rate_scaling(scale: f64) -> Result<(f64, f64)> {
    const LEVELS: [(f64, f64, f64); 3] = [(0.2, 0.5, 0.8), (0.5, 0.8, 0.9), (1.0, 1.0, 1.0)];
    LEVELS
        .iter()
        .find(|(s, _, _)| (s - scale).abs() < 1e-9)
        .map(|&(_, a, e)| (a, e))
        .ok_or_else(|| invalid(format!("leak_rate_scale must be one of 0.2, 0.5, 1.0; got {scale}")))
}

/// Dispatches on `spec.class`.
pub fn generate(spec: &SourceSpec) -> Result<MonoSignal> {
    match spec.class {
        ClassLabel::GasLeak => gen_gas_leak(spec),
        ClassLabel::Background => gen_background(spec),
        _ => gen_discharge(spec),
    }
}

/// Band-limited Gaussian noise with 0.5-2 Hz amplitude modulation.
pub fn gen_gas_leak(spec: &SourceSpec) -> Result<MonoSignal> {
    if spec.class != ClassLabel::GasLeak {
        return Err(invalid(format!("gen_gas_leak called with class {}", spec.class)));
    }
    spec.validate()?;
    let (amp_scale, edge_scale) = leak_rate_scaling(spec.leak_rate_scale)?;
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    dsp::band_limit(&mut x, fs, spec.band_lo_hz, spec.band_hi_hz * edge_scale);
    let rms = dsp::power(&x).sqrt();
    let norm = if rms > 0.0 { 1.0 / rms } else { 0.0 };

    let am_hz = rng.random_range(0.5..2.0);
    let am_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let depth = 0.5;
    let gain = spec.amplitude * amp_scale * norm;
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let m = 1.0 + depth * (std::f64::consts::TAU * am_hz * t + am_phase).sin();
        *v *= m * gain;
    }
    MonoSignal::new(x, spec.sample_rate_hz, ClassLabel::GasLeak)
}

/// Carrier range of discharge wavelets.
pub const PULSE_CARRIER_HZ: (f64, f64) = (25_000.0, 45_000.0);
/// Exponential decay constant of discharge wavelets.
pub const PULSE_DECAY_S: f64 = 0.2e-3;

/// Phase-resolved layout of one discharge type.
struct PhasePattern {
    /// Cluster centers in degrees; slot `k` uses `centers[k % centers.len()]`.
    centers: Vec<f64>,
    spread_deg: f64,
    occurrence: f64,
    amplitude_sigma: f64,
}

fn phase_pattern(class: ClassLabel, pulses_per_cycle: u32, rng: &mut ChaCha8Rng) -> PhasePattern {
    match class {
        // Negative-half-cycle pulses bunched around the voltage trough.
        ClassLabel::Corona => PhasePattern {
            centers: vec![270.0],
            spread_deg: 10.0,
            occurrence: 0.85,
            amplitude_sigma: 0.35,
        },
        // Both half-cycles, wide phase spread.
        ClassLabel::Surface => PhasePattern {
            centers: vec![70.0, 250.0],
            spread_deg: 25.0,
            occurrence: 0.8,
            amplitude_sigma: 0.5,
        },
        // Regularly spaced pulses locked to the cycle, little jitter.
        _ => {
            let offset = rng.random_range(0.0..360.0);
            let step = 360.0 / pulses_per_cycle as f64;
            PhasePattern {
                centers: (0..pulses_per_cycle).map(|k| (offset + k as f64 * step) % 360.0).collect(),
                spread_deg: 2.0,
                occurrence: 0.95,
                amplitude_sigma: 0.1,
            }
        }
    }
}

/// Trains of exponentially damped ultrasonic wavelets placed by mains phase.
pub fn gen_discharge(spec: &SourceSpec) -> Result<MonoSignal> {
    if !spec.class.is_discharge() {
        return Err(invalid(format!("gen_discharge called with non-discharge class {}", spec.class)));
    }
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pattern = phase_pattern(spec.class, spec.pulses_per_cycle, &mut rng);
    let jitter = Normal::new(0.0, pattern.spread_deg).expect("finite spread");
    let amp_dist = LogNormal::new(0.0, pattern.amplitude_sigma).expect("finite sigma");

    let mut x = vec![0.0; n];
    let pulse_len = (12.0 * PULSE_DECAY_S * fs).ceil() as usize;
    let cycles = (n as f64 / fs * spec.mains_hz).ceil() as usize;
    for cycle in 0..cycles {
        for slot in 0..spec.pulses_per_cycle as usize {
            // Draw every variate unconditionally so the stream layout is fixed.
            let center = pattern.centers[slot % pattern.centers.len()];
            let phase = center + jitter.sample(&mut rng);
            let occurs = rng.random::<f64>() < pattern.occurrence;
            let a = amp_dist.sample(&mut rng);
            let carrier = rng.random_range(PULSE_CARRIER_HZ.0..PULSE_CARRIER_HZ.1);
            if !occurs {
                continue;
            }
            let onset_s = (cycle as f64 + phase.rem_euclid(360.0) / 360.0) / spec.mains_hz;
            let start = (onset_s * fs).round() as usize;
            if start >= n {
                continue;
            }
            let end = (start + pulse_len).min(n);
            for (k, v) in x[start..end].iter_mut().enumerate() {
                let t = k as f64 / fs;
                *v += a * (-t / PULSE_DECAY_S).exp() * (std::f64::consts::TAU * carrier * t).sin();
            }
        }
    }
    for v in x.iter_mut() {
        *v *= spec.amplitude;
    }
    MonoSignal::new(x, spec.sample_rate_hz, spec.class)
}

/// White Gaussian noise of standard deviation `amplitude`, plus optional tones below 20 kHz.
pub fn gen_background(spec: &SourceSpec) -> Result<MonoSignal> {
    if spec.class != ClassLabel::Background {
        return Err(invalid(format!("gen_background called with class {}", spec.class)));
    }
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for _ in 0..spec.machinery_tones {
        let f = rng.random_range(50.0..15_000.0f64.min(fs / 2.0));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let a = rng.random_range(0.1..0.5);
        for (i, v) in x.iter_mut().enumerate() {
            *v += a * (std::f64::consts::TAU * f * i as f64 / fs + phase).sin();
        }
    }
    for v in x.iter_mut() {
        *v *= spec.amplitude;
    }
    MonoSignal::new(x, spec.sample_rate_hz, ClassLabel::Background)
}
