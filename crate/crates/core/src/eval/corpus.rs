use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamform::{beamform_scene, pixel_to_steering, steering_delays, BeamWeights, SteeringDirection};
use crate::config::{ExperimentConfig, NoiseStage, SceneConfig};
use crate::dsp;
use crate::error::{data, Result};
use crate::features::{bandpass_bins, normalize_minmax, stft, window_count, extract_window, FeaturePipeline, Spectrogram};
use crate::scene::{make_array, noise_with_power, propagation_paths, ArrayGeometry, NoiseKind, RoomSpec, Vec3};
use crate::synth::{generate, ClassLabel, MonoSignal, SourceSpec};

/// SplitMix64 finalizer over `base` and `tag`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PARAM_SALT: u64 = 0x5041_5241_4D53;
const NOISE_SALT: u64 = 0x004E_4F49_5345;
const WINDOW_SALT: u64 = 0x5749_4E44_4F57;

/// One planned clip of the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub class: ClassLabel,
    pub index: usize,
    pub source: SourceSpec,
    pub noise_seed: u64,
    pub window_seed: u64,
}

/// Every clip of the corpus, class by class.
pub fn plan_corpus(cfg: &ExperimentConfig) -> Vec<ClipMeta> {
    let c = &cfg.corpus;
    let mut out = Vec::with_capacity(ClassLabel::COUNT * c.clips_per_class);
    for class in ClassLabel::ALL {
        for index in 0..c.clips_per_class {
            let seed = derive_seed(c.seed, ((class.index() as u64) << 32) | index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PARAM_SALT));
            let mut source = SourceSpec::new(class, seed);
            source.sample_rate_hz = c.sample_rate_hz;
            source.duration_s = c.duration_s;
            source.mains_hz = c.mains_hz;
            source.pulses_per_cycle = c.pulses_per_cycle;
            let lo = rng.random_range(c.leak_band_lo_hz[0]..=c.leak_band_lo_hz[1]);
            let hi = rng.random_range(c.leak_band_hi_hz[0]..=c.leak_band_hi_hz[1]);
            let rate = c.leak_rates[rng.random_range(0..c.leak_rates.len())];
            let tones = rng.random_range(0..=c.max_machinery_tones);
            match class {
                ClassLabel::GasLeak => {
                    source.band_lo_hz = lo;
                    source.band_hi_hz = hi;
                    source.leak_rate_scale = rate;
                }
                ClassLabel::Background => source.machinery_tones = tones,
                _ => {}
            }
            out.push(ClipMeta {
                id: format!("{}-{index:03}", class.name()),
                class,
                index,
                source,
                noise_seed: derive_seed(seed, NOISE_SALT),
                window_seed: derive_seed(seed, WINDOW_SALT),
            });
        }
    }
    out
}

/// Array, steering and weights of the configured scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub direction: SteeringDirection,
    pub weights: BeamWeights,
    pub source_position: Vec3,
}

impl Scene {
    pub fn from_config(sc: &SceneConfig) -> Result<Self> {
        let mut geometry = make_array(&sc.array_preset, sc.n_mics)?;
        geometry.speed_of_sound = sc.speed_of_sound;
        let direction = pixel_to_steering(sc.detection_px[0], sc.detection_px[1], &sc.camera)?;
        let weights = BeamWeights::uniform(geometry.len());
        Ok(Self { geometry, direction, weights, source_position: sc.source_position })
    }

    /// Noise-free beamformed signal of `source` placed in the scene.
    pub fn render_clean(&self, source: &MonoSignal, room: Option<&RoomSpec>) -> Result<MonoSignal> {
        beamform_scene(source, self.source_position, &self.geometry, room, &self.direction, &self.weights)
    }

    /// Beamformer output for independent microphone noise whose per-channel
    /// power equals that channel's clean signal power (0 dB per channel).
    /// Scaling it by `10^(-snr/20)` gives the noise for `snr` dB.
    pub fn beamformed_channel_noise(
        &self,
        source: &MonoSignal,
        room: Option<&RoomSpec>,
        kind: NoiseKind,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let fs = source.sample_rate_hz as f64;
        let n = source.len();
        let paths = propagation_paths(self.source_position, &self.geometry, room)?;
        let taus = steering_delays(&self.geometry, &self.direction);
        let mut out = vec![0.0; n];
        let mut channel = vec![0.0; n];
        for (m, ((terms, tau), w)) in paths.iter().zip(&taus).zip(&self.weights.w).enumerate() {
            channel.iter_mut().for_each(|v| *v = 0.0);
            for t in terms {
                dsp::delay_accumulate(&source.samples, t.delay_s * fs, t.gain, &mut channel);
            }
            let p = dsp::power(&channel);
            let noise = noise_with_power(n, p, kind, seed, m as u64);
            dsp::delay_accumulate(&noise, tau * fs, *w, &mut out);
        }
        Ok(out)
    }
}

/// `clean + noise * sqrt(target / P(noise))` with `target = P(clean) / 10^(snr/10)`.
pub fn mix_at_snr(clean: &MonoSignal, noise: &[f64], snr_db: f64) -> Result<MonoSignal> {
    let ps = clean.power();
    let pn = dsp::power(noise);
    if !(ps > 0.0 && pn > 0.0) {
        return Err(data("cannot set an SNR with a silent signal or noise"));
    }
    let g = (ps / 10f64.powf(snr_db / 10.0) / pn).sqrt();
    let samples = clean.samples.iter().zip(noise).map(|(s, v)| s + g * v).collect();
    MonoSignal::new(samples, clean.sample_rate_hz, clean.label)
}

/// Everything needed to render clips of one corpus under varying conditions.
pub struct Renderer {
    pub scene: Scene,
    pub stage: NoiseStage,
    pub kind: NoiseKind,
}

/// A clean beamformed clip with its noise reference, ready to be mixed at any SNR.
pub struct CleanClip {
    pub clean: MonoSignal,
    /// Unscaled noise; for the channel stage this is the beamformed 0 dB
    /// channel noise.
    pub noise: Vec<f64>,
    pub stage: NoiseStage,
}

impl CleanClip {
    /// Noisy classifier input at `snr_db`, measured at the configured stage.
    pub fn at_snr(&self, snr_db: f64) -> Result<MonoSignal> {
        match self.stage {
            NoiseStage::Beamformed => mix_at_snr(&self.clean, &self.noise, snr_db),
            NoiseStage::Channel => {
                let g = 10f64.powf(-snr_db / 20.0);
                let samples = self.clean.samples.iter().zip(&self.noise).map(|(s, v)| s + g * v).collect();
                MonoSignal::new(samples, self.clean.sample_rate_hz, self.clean.label)
            }
        }
    }
}

impl Renderer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self { scene: Scene::from_config(&cfg.scene)?, stage: cfg.corpus.noise_stage, kind: cfg.corpus.noise_kind })
    }

    pub fn source(&self, meta: &ClipMeta) -> Result<MonoSignal> {
        generate(&meta.source)
    }

    pub fn clean(&self, meta: &ClipMeta, room: Option<&RoomSpec>) -> Result<CleanClip> {
        let src = self.source(meta)?;
        let clean = self.scene.render_clean(&src, room)?;
        let noise = match self.stage {
            NoiseStage::Beamformed => noise_with_power(clean.len(), 1.0, self.kind, meta.noise_seed, 0),
            NoiseStage::Channel => self.scene.beamformed_channel_noise(&src, room, self.kind, meta.noise_seed)?,
        };
        Ok(CleanClip { clean, noise, stage: self.stage })
    }
}

/// STFT, band selection and per-clip min-max normalization; gamma is left
/// for later so one rendering serves several gamma settings.
pub fn normalized_spectrogram(signal: &MonoSignal, pipeline: &FeaturePipeline) -> Result<Spectrogram> {
    let s = stft(signal, &pipeline.stft)?;
    Ok(normalize_minmax(&bandpass_bins(&s, pipeline.band_lo_hz, pipeline.band_hi_hz)?))
}

/// Frames of the evaluated excerpt: the windows that fit in the first
/// `excerpt_s` seconds (the whole clip when 0 or longer than the clip).
pub fn excerpt_frames(spec: &Spectrogram, pipeline: &FeaturePipeline, excerpt_s: f64) -> usize {
    if excerpt_s <= 0.0 {
        return spec.n_frames;
    }
    let samples = (excerpt_s * pipeline.stft.sample_rate_hz as f64).round() as usize;
    pipeline.stft.n_frames(samples).min(spec.n_frames)
}

pub fn truncate_frames(spec: &Spectrogram, frames: usize) -> Spectrogram {
    if frames >= spec.n_frames {
        return spec.clone();
    }
    let mut mag = Vec::with_capacity(spec.n_freq * frames);
    for f in 0..spec.n_freq {
        mag.extend_from_slice(&spec.row(f)[..frames]);
    }
    Spectrogram { mag, n_frames: frames, ..spec.clone() }
}

/// Randomly placed training windows (without replacement), pre-gamma.
pub fn sample_windows(spec: &Spectrogram, pipeline: &FeaturePipeline, count: usize, seed: u64) -> Result<Vec<f32>> {
    let n = window_count(spec.n_frames, pipeline.win_frames, pipeline.hop_frames);
    if n == 0 {
        return Err(data("clip is too short for one window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, n, count.min(n)).into_vec();
    picks.sort_unstable();
    let sz = spec.n_freq * pipeline.win_frames;
    let mut out = vec![0f32; picks.len() * sz];
    for (chunk, &i) in out.chunks_exact_mut(sz).zip(&picks) {
        extract_window(spec, i, pipeline.win_frames, pipeline.hop_frames, chunk);
    }
    Ok(out)
}
