//! Virtual microphone-array rendering: array presets, free-field and
//! shoebox-room propagation, and SNR-controlled noise injection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{data, invalid, Error, Result};
use crate::synth::{ClassLabel, MonoSignal};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
/// Distances below this are clamped in the 1/r spreading law.
pub const MIN_DISTANCE_M: f64 = 0.05;
const FX112_RADIUS_M: f64 = 0.10;
const COINCIDENT_M: f64 = 1e-6;

/// Microphone positions in array coordinates (meters, centroid at the origin).
///
/// Array frame: x to the right, y up, z along the camera's optical axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub positions: Vec<Vec3>,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Vec3>, speed_of_sound: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("array needs at least one microphone"));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("microphone positions must be finite"));
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(invalid(format!("speed of sound must be positive, got {speed_of_sound}")));
        }
        let g = Self { positions, speed_of_sound };
        let c = g.centroid();
        if norm(c) > 1e-9 {
            return Err(invalid(format!("array centroid {c:?} is not at the origin")));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let m = self.positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / m)
    }

    pub fn max_radius(&self) -> f64 {
        self.positions.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }
}

/// Builds a named array layout.
///
/// * `fx112`: `m` points on a Fermat (golden-angle) spiral in the z = 0 plane,
///   re-centered and scaled to a 0.10 m outer radius.
/// * `single`: one microphone at the origin (`m` must be 1).
pub fn make_array(preset: &str, m: usize) -> Result<ArrayGeometry> {
    if m == 0 {
        return Err(invalid("array size must be >= 1"));
    }
    match preset {
        "fx112" => {
            if m == 1 {
                return ArrayGeometry::new(vec![[0.0; 3]], DEFAULT_SPEED_OF_SOUND);
            }
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut pts: Vec<Vec3> = (0..m)
                .map(|i| {
                    let r = ((i as f64 + 0.5) / m as f64).sqrt();
                    let th = i as f64 * golden;
                    [r * th.cos(), r * th.sin(), 0.0]
                })
                .collect();
            let mut c = [0.0; 3];
            for p in &pts {
                c = add(c, *p);
            }
            let c = c.map(|v| v / m as f64);
            for p in pts.iter_mut() {
                *p = sub(*p, c);
            }
            let rmax = pts.iter().map(|p| norm(*p)).fold(0.0, f64::max);
            for p in pts.iter_mut() {
                *p = p.map(|v| v * FX112_RADIUS_M / rmax);
            }
            // Re-center once more to squash rounding left over from the scaling.
            let mut c = [0.0; 3];
            for p in &pts {
                c = add(c, *p);
            }
            let c = c.map(|v| v / m as f64);
            for p in pts.iter_mut() {
                *p = sub(*p, c);
            }
            ArrayGeometry::new(pts, DEFAULT_SPEED_OF_SOUND)
        }
        "single" => {
            if m != 1 {
                return Err(invalid(format!("preset \"single\" has exactly one microphone, requested {m}")));
            }
            ArrayGeometry::new(vec![[0.0; 3]], DEFAULT_SPEED_OF_SOUND)
        }
        other => Err(invalid(format!("unknown array preset {other:?}"))),
    }
}

/// Shoebox room; the array frame axes are aligned with the room axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Width, length, height in meters (x, y, z extents).
    pub size: Vec3,
    /// Fraction of amplitude absorbed per reflection, in (0, 1]; 1 is anechoic.
    pub absorption: f64,
    pub max_image_order: u32,
    /// Position of the array origin in room coordinates.
    pub array_center: Vec3,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("room dimensions must be positive, got {:?}", self.size)));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(invalid(format!("absorption must be in (0, 1], got {}", self.absorption)));
        }
        if !self.contains(self.array_center) {
            return Err(invalid(format!("array center {:?} is outside the room", self.array_center)));
        }
        Ok(())
    }

    /// Strictly inside the walls.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] > 0.0 && p[k] < self.size[k])
    }

    pub fn reflection_gain(&self, order: u32) -> f64 {
        if order == 0 {
            1.0
        } else {
            (1.0 - self.absorption).powi(order as i32)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: u32,
    pub gain: f64,
}

/// Image sources of `source` (room coordinates) up to the room's maximum order,
/// including the direct path. Images whose gain is exactly zero are dropped.
pub fn image_sources(room: &RoomSpec, source: Vec3) -> Vec<ImageSource> {
    let k = room.max_image_order as i64;
    let mut out = Vec::new();
    let nrange = || (-(k + 1) / 2 - 1)..=((k + 1) / 2 + 1);
    for nx in nrange() {
        for px in 0..2i64 {
            let ox = (2 * nx - px).unsigned_abs();
            for ny in nrange() {
                for py in 0..2i64 {
                    let oy = (2 * ny - py).unsigned_abs();
                    for nz in nrange() {
                        for pz in 0..2i64 {
                            let oz = (2 * nz - pz).unsigned_abs();
                            let order = ox + oy + oz;
                            if order > k as u64 {
                                continue;
                            }
                            let coord = |n: i64, p: i64, s: f64, l: f64| (1 - 2 * p) as f64 * s + 2.0 * n as f64 * l;
                            let position = [
                                coord(nx, px, source[0], room.size[0]),
                                coord(ny, py, source[1], room.size[1]),
                                coord(nz, pz, source[2], room.size[2]),
                            ];
                            let gain = room.reflection_gain(order as u32);
                            if gain != 0.0 {
                                out.push(ImageSource { position, order: order as u32, gain });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// M synchronized channels plus the geometry they were captured with.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelRecording {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate_hz: u32,
    pub geometry: ArrayGeometry,
    pub label: ClassLabel,
}

impl MultichannelRecording {
    pub fn new(
        channels: Vec<Vec<f64>>,
        sample_rate_hz: u32,
        geometry: ArrayGeometry,
        label: ClassLabel,
    ) -> Result<Self> {
        if channels.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "{} channels for a {}-microphone array",
                channels.len(),
                geometry.len()
            )));
        }
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sample in recording".into()));
        }
        Ok(Self { channels, sample_rate_hz, geometry, label })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn channel_powers(&self) -> Vec<f64> {
        self.channels.iter().map(|c| dsp::power(c)).collect()
    }
}

/// One propagation path from the source (or an image of it) to a microphone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathTerm {
    pub delay_s: f64,
    pub gain: f64,
}

/// Per-microphone propagation paths for a source at `source_pos` (array frame).
pub fn propagation_paths(
    source_pos: Vec3,
    geometry: &ArrayGeometry,
    room: Option<&RoomSpec>,
) -> Result<Vec<Vec<PathTerm>>> {
    if source_pos.iter().any(|v| !v.is_finite()) {
        return Err(invalid("source position must be finite"));
    }
    for (m, p) in geometry.positions.iter().enumerate() {
        if norm(sub(source_pos, *p)) < COINCIDENT_M {
            return Err(invalid(format!("source coincides with microphone {m}")));
        }
    }
    let c = geometry.speed_of_sound;
    let term = |from: Vec3, to: Vec3, gain: f64| {
        let d = norm(sub(from, to));
        PathTerm { delay_s: d / c, gain: gain / d.max(MIN_DISTANCE_M) }
    };
    match room {
        None => Ok(geometry.positions.iter().map(|p| vec![term(source_pos, *p, 1.0)]).collect()),
        Some(room) => {
            room.validate()?;
            let src = add(room.array_center, source_pos);
            if !room.contains(src) {
                return Err(invalid(format!("source {src:?} is outside the room")));
            }
            let mics: Vec<Vec3> = geometry.positions.iter().map(|p| add(room.array_center, *p)).collect();
            if let Some(m) = mics.iter().position(|p| !room.contains(*p)) {
                return Err(invalid(format!("microphone {m} is outside the room")));
            }
            let images = image_sources(room, src);
            Ok(mics
                .iter()
                .map(|mic| images.iter().map(|im| term(im.position, *mic, im.gain)).collect())
                .collect())
        }
    }
}

/// Renders `source` at every microphone: each path contributes the source
/// delayed by distance / c and scaled by `1 / max(distance, 0.05 m)` (times the
/// reflection gain for image sources). Output has the source's length.
pub fn propagate(
    source: &MonoSignal,
    source_pos: Vec3,
    geometry: &ArrayGeometry,
    room: Option<&RoomSpec>,
) -> Result<MultichannelRecording> {
    let paths = propagation_paths(source_pos, geometry, room)?;
    let fs = source.sample_rate_hz as f64;
    let n = source.len();
    let channels = paths
        .iter()
        .map(|terms| {
            let mut out = vec![0.0; n];
            for t in terms {
                dsp::delay_accumulate(&source.samples, t.delay_s * fs, t.gain, &mut out);
            }
            out
        })
        .collect();
    MultichannelRecording::new(channels, source.sample_rate_hz, geometry.clone(), source.label)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// White Gaussian noise.
    #[default]
    Gaussian,
    /// Gaussian noise shaped to a 1/f power spectrum.
    Pink,
}

/// `SNR = 10 log10(P_s / P_n)`.
pub fn measure_snr(signal_power: f64, noise_power: f64) -> Result<f64> {
    if !(signal_power > 0.0) || !(noise_power > 0.0) {
        return Err(invalid(format!(
            "SNR needs positive powers, got signal {signal_power} and noise {noise_power}"
        )));
    }
    Ok(10.0 * (signal_power / noise_power).log10())
}

/// A noise sequence of length `n` and exactly the requested mean-square power.
///
/// Each `stream` draws from its own ChaCha stream so channel `m`'s noise does
/// not depend on how many channels are rendered.
pub fn noise_with_power(n: usize, power: f64, kind: NoiseKind, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if kind == NoiseKind::Pink {
        shape_pink(&mut x);
    }
    let p = dsp::power(&x);
    let g = if p > 0.0 { (power / p).sqrt() } else { 0.0 };
    for v in x.iter_mut() {
        *v *= g;
    }
    x
}

fn shape_pink(x: &mut [f64]) {
    use rustfft::num_complex::Complex;
    let n = x.len();
    if n < 2 {
        return;
    }
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        *c = if kk == 0 { Complex::new(0.0, 0.0) } else { *c / (kk as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re;
    }
}

/// Adds independent noise to every channel so each channel's
/// `10 log10(P_s / P_n)` equals `snr_db`. Silent channels in an otherwise
/// non-silent recording are calibrated against the mean channel power.
pub fn add_noise_at_snr(
    rec: &MultichannelRecording,
    snr_db: f64,
    kind: NoiseKind,
    seed: u64,
) -> Result<MultichannelRecording> {
    if !snr_db.is_finite() {
        return Err(invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let powers = rec.channel_powers();
    let mean_power = powers.iter().sum::<f64>() / powers.len().max(1) as f64;
    if !(mean_power > 0.0) {
        return Err(data("recording is silent; SNR is undefined"));
    }
    let ratio = 10f64.powf(snr_db / 10.0);
    let channels = rec
        .channels
        .iter()
        .zip(&powers)
        .enumerate()
        .map(|(m, (ch, &p))| {
            let ps = if p > 0.0 { p } else { mean_power };
            let noise = noise_with_power(ch.len(), ps / ratio, kind, seed, m as u64);
            ch.iter().zip(&noise).map(|(s, v)| s + v).collect()
        })
        .collect();
    MultichannelRecording::new(channels, rec.sample_rate_hz, rec.geometry.clone(), rec.label)
}

/// Single-channel counterpart of [`add_noise_at_snr`].
pub fn add_noise_mono(signal: &MonoSignal, snr_db: f64, kind: NoiseKind, seed: u64) -> Result<MonoSignal> {
    if !snr_db.is_finite() {
        return Err(invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let p = signal.power();
    if !(p > 0.0) {
        return Err(data("signal is silent; SNR is undefined"));
    }
    let noise = noise_with_power(signal.len(), p / 10f64.powf(snr_db / 10.0), kind, seed, 0);
    let samples = signal.samples.iter().zip(&noise).map(|(s, v)| s + v).collect();
    MonoSignal::new(samples, signal.sample_rate_hz, signal.label)
}
