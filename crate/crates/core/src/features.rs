//! Spectrogram features: STFT magnitude, band selection, per-clip min-max
//! normalization with gamma correction, and fixed-width sliding windows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{data, invalid, shape, Result};
use crate::synth::MonoSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    #[default]
    Hamming,
    Hann,
}

impl WindowFn {
    /// Periodic (DFT-even) window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let a0 = match self {
            WindowFn::Hamming => 0.54,
            WindowFn::Hann => 0.5,
        };
        (0..n)
            .map(|i| a0 - (1.0 - a0) * (std::f64::consts::TAU * i as f64 / n as f64).cos())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftParams {
    pub n_fft: usize,
    /// Frame shift in samples.
    pub hop: usize,
    pub window: WindowFn,
    pub sample_rate_hz: u32,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { n_fft: 512, hop: 128, window: WindowFn::Hamming, sample_rate_hz: 96_000 }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return Err(invalid(format!("need 0 < hop <= n_fft, got hop {} n_fft {}", self.hop, self.n_fft)));
        }
        if self.sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(())
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.n_fft as f64
    }

    pub fn frame_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.n_fft {
            0
        } else {
            (n_samples - self.n_fft) / self.hop + 1
        }
    }
}

/// Magnitude spectrogram stored frequency-major: `mag[f * n_frames + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mag: Vec<f32>,
    pub n_freq: usize,
    pub n_frames: usize,
    pub bin_hz: f64,
    pub frame_s: f64,
    /// Index in the full STFT of row 0.
    pub first_bin: usize,
    /// Band kept by [`bandpass_bins`], if applied.
    pub band: Option<(f64, f64)>,
    /// Gamma applied by [`gamma_correct`], if any.
    pub gamma: Option<f64>,
}

impl Spectrogram {
    pub fn at(&self, f: usize, t: usize) -> f32 {
        self.mag[f * self.n_frames + t]
    }

    pub fn row(&self, f: usize) -> &[f32] {
        &self.mag[f * self.n_frames..(f + 1) * self.n_frames]
    }

    /// Center frequency of row `f`.
    pub fn freq_hz(&self, f: usize) -> f64 {
        (self.first_bin + f) as f64 * self.bin_hz
    }
}

/// Magnitude STFT with an un-normalized forward DFT. Frame `n` covers samples
/// `[n * hop, n * hop + n_fft)`; rows are bins `0..=n_fft/2`.
pub fn stft(signal: &MonoSignal, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let n = signal.len();
    if n < params.n_fft {
        return Err(data(format!("signal of {n} samples is shorter than one {}-sample frame", params.n_fft)));
    }
    let t_frames = params.n_frames(n);
    let n_freq = params.n_fft / 2 + 1;
    let win = params.window.coefficients(params.n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.n_fft);
    let mut mag = vec![0f32; n_freq * t_frames];
    let mut buf = vec![Complex::new(0.0, 0.0); params.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..t_frames {
        let frame = &signal.samples[t * params.hop..t * params.hop + params.n_fft];
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&win) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (f, c) in buf[..n_freq].iter().enumerate() {
            mag[f * t_frames + t] = c.norm() as f32;
        }
    }
    Ok(Spectrogram {
        mag,
        n_freq,
        n_frames: t_frames,
        bin_hz: params.bin_hz(),
        frame_s: params.frame_s(),
        first_bin: 0,
        band: None,
        gamma: None,
    })
}

/// Keeps the rows whose center frequency lies in `[f_lo, f_hi]`.
pub fn bandpass_bins(spec: &Spectrogram, f_lo: f64, f_hi: f64) -> Result<Spectrogram> {
    let nyquist = (spec.first_bin + spec.n_freq - 1) as f64 * spec.bin_hz;
    if !(f_lo < f_hi) || f_hi > nyquist + 1e-9 * nyquist.max(1.0) || f_lo < 0.0 {
        return Err(invalid(format!("band [{f_lo}, {f_hi}] Hz is invalid (Nyquist {nyquist} Hz)")));
    }
    let rows: Vec<usize> = (0..spec.n_freq)
        .filter(|&f| {
            let hz = spec.freq_hz(f);
            hz >= f_lo && hz <= f_hi
        })
        .collect();
    let (Some(&first), Some(&last)) = (rows.first(), rows.last()) else {
        return Err(invalid(format!("band [{f_lo}, {f_hi}] Hz contains no frequency bins")));
    };
    let mag = spec.mag[first * spec.n_frames..(last + 1) * spec.n_frames].to_vec();
    Ok(Spectrogram {
        mag,
        n_freq: last - first + 1,
        first_bin: spec.first_bin + first,
        band: Some((f_lo, f_hi)),
        ..spec.clone()
    })
}

/// Min-max normalization to `[0, 1]` over the whole spectrogram. A constant
/// spectrogram maps to zeros.
pub fn normalize_minmax(spec: &Spectrogram) -> Spectrogram {
    let (lo, hi) = spec.mag.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let mag = if range > 0.0 {
        spec.mag.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; spec.mag.len()]
    };
    Spectrogram { mag, ..spec.clone() }
}

/// Element-wise `I^gamma` on a spectrogram already normalized to `[0, 1]`.
pub fn gamma_correct(spec: &Spectrogram, gamma: f64) -> Result<Spectrogram> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if spec.mag.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("gamma correction expects magnitudes normalized to [0, 1]"));
    }
    let g = gamma as f32;
    let mag = if gamma == 1.0 { spec.mag.clone() } else { spec.mag.iter().map(|v| v.powf(g)).collect() };
    Ok(Spectrogram { mag, gamma: Some(gamma), ..spec.clone() })
}

/// Windows of `win_frames` frames taken every `hop_frames`; each window is an
/// `n_freq x win_frames` row-major block.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub data: Vec<f32>,
    pub n_windows: usize,
    pub n_freq: usize,
    pub win_frames: usize,
    pub hop_frames: usize,
}

impl WindowBatch {
    pub fn window(&self, i: usize) -> &[f32] {
        let sz = self.n_freq * self.win_frames;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn origin_frame(&self, i: usize) -> usize {
        i * self.hop_frames
    }
}

pub fn window_count(n_frames: usize, win_frames: usize, hop_frames: usize) -> usize {
    if n_frames < win_frames || hop_frames == 0 {
        0
    } else {
        (n_frames - win_frames) / hop_frames + 1
    }
}

/// Copies window `i` (frames `[i*hop, i*hop + win)`) into `out`.
pub fn extract_window(spec: &Spectrogram, i: usize, win_frames: usize, hop_frames: usize, out: &mut [f32]) {
    let t0 = i * hop_frames;
    for f in 0..spec.n_freq {
        out[f * win_frames..(f + 1) * win_frames].copy_from_slice(&spec.row(f)[t0..t0 + win_frames]);
    }
}

pub fn slide(spec: &Spectrogram, win_frames: usize, hop_frames: usize) -> Result<WindowBatch> {
    if win_frames == 0 || hop_frames == 0 {
        return Err(invalid("window and hop must be positive"));
    }
    if spec.n_frames < win_frames {
        return Err(data(format!("{} frames cannot hold one {win_frames}-frame window", spec.n_frames)));
    }
    let n_windows = window_count(spec.n_frames, win_frames, hop_frames);
    let sz = spec.n_freq * win_frames;
    let mut data = vec![0f32; n_windows * sz];
    for (i, chunk) in data.chunks_exact_mut(sz).enumerate() {
        extract_window(spec, i, win_frames, hop_frames, chunk);
    }
    Ok(WindowBatch { data, n_windows, n_freq: spec.n_freq, win_frames, hop_frames })
}

/// Every setting between a waveform and classifier-ready windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturePipeline {
    pub stft: StftParams,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub gamma: f64,
    pub win_frames: usize,
    pub hop_frames: usize,
}

impl Default for FeaturePipeline {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            band_lo_hz: 20_000.0,
            band_hi_hz: 48_000.0,
            gamma: 1.5,
            win_frames: 24,
            hop_frames: 8,
        }
    }
}

impl FeaturePipeline {
    /// STFT, band selection, per-clip normalization and gamma correction.
    pub fn spectrogram(&self, signal: &MonoSignal) -> Result<Spectrogram> {
        if signal.sample_rate_hz != self.stft.sample_rate_hz {
            return Err(invalid(format!(
                "signal sampled at {} Hz but the pipeline expects {} Hz",
                signal.sample_rate_hz, self.stft.sample_rate_hz
            )));
        }
        let s = stft(signal, &self.stft)?;
        let s = bandpass_bins(&s, self.band_lo_hz, self.band_hi_hz)?;
        gamma_correct(&normalize_minmax(&s), self.gamma)
    }

    pub fn windows(&self, signal: &MonoSignal) -> Result<WindowBatch> {
        slide(&self.spectrogram(signal)?, self.win_frames, self.hop_frames)
    }

    /// Number of frequency rows after band selection.
    pub fn n_band_bins(&self) -> usize {
        let bin = self.stft.bin_hz();
        (0..=self.stft.n_fft / 2)
            .filter(|&k| {
                let hz = k as f64 * bin;
                hz >= self.band_lo_hz && hz <= self.band_hi_hz
            })
            .count()
    }

    /// Time of window `i`'s center frame.
    pub fn window_center_s(&self, i: usize) -> f64 {
        let frame = i * self.hop_frames + self.win_frames / 2;
        frame as f64 * self.stft.frame_s()
    }
}

const SPEC_MAGIC: &[u8; 4] = b"SHSP";
const WINDOWS_MAGIC: &[u8; 4] = b"SHWB";
const FEATURE_FORMAT_VERSION: u32 = 1;

fn write_header(w: &mut impl Write, magic: &[u8; 4], dims: &[u32], meta: &[f64]) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for m in meta {
        w.write_all(&m.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(data("feature file is truncated"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

fn open_checked<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Cursor<'a>> {
    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(4)? != magic {
        return Err(data("wrong feature file magic"));
    }
    let v = c.u32()?;
    if v != FEATURE_FORMAT_VERSION {
        return Err(data(format!("unsupported feature format version {v}")));
    }
    Ok(c)
}

fn encode_opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn decode_opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Header: magic `SHSP`, version, `n_freq`, `n_frames`, `first_bin` (u32),
/// then `bin_hz`, `frame_s`, band low/high, gamma (f64, NaN when unset),
/// followed by row-major f32 magnitudes. All little-endian.
pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (lo, hi) = spec.band.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    write_header(
        &mut w,
        SPEC_MAGIC,
        &[spec.n_freq as u32, spec.n_frames as u32, spec.first_bin as u32],
        &[spec.bin_hz, spec.frame_s, encode_opt(lo), encode_opt(hi), encode_opt(spec.gamma)],
    )?;
    write_f32s(&mut w, &spec.mag)?;
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut c = open_checked(&bytes, SPEC_MAGIC)?;
    let n_freq = c.u32()? as usize;
    let n_frames = c.u32()? as usize;
    let first_bin = c.u32()? as usize;
    let bin_hz = c.f64()?;
    let frame_s = c.f64()?;
    let lo = decode_opt(c.f64()?);
    let hi = decode_opt(c.f64()?);
    let gamma = decode_opt(c.f64()?);
    let mag = c.f32s(n_freq * n_frames)?;
    let band = lo.zip(hi);
    Ok(Spectrogram { mag, n_freq, n_frames, bin_hz, frame_s, first_bin, band, gamma })
}

/// Header: magic `SHWB`, version, `n_windows`, `n_freq`, `win_frames`,
/// `hop_frames` (u32), then `bin_hz`, `frame_s`, band low/high, gamma (f64),
/// followed by the windows' f32 values in order.
pub fn write_windows(path: &Path, batch: &WindowBatch, source: &Spectrogram) -> Result<()> {
    if batch.n_freq != source.n_freq {
        return Err(shape("window batch and spectrogram disagree on frequency rows"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let (lo, hi) = source.band.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    write_header(
        &mut w,
        WINDOWS_MAGIC,
        &[batch.n_windows as u32, batch.n_freq as u32, batch.win_frames as u32, batch.hop_frames as u32],
        &[source.bin_hz, source.frame_s, encode_opt(lo), encode_opt(hi), encode_opt(source.gamma)],
    )?;
    write_f32s(&mut w, &batch.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<WindowBatch> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut c = open_checked(&bytes, WINDOWS_MAGIC)?;
    let n_windows = c.u32()? as usize;
    let n_freq = c.u32()? as usize;
    let win_frames = c.u32()? as usize;
    let hop_frames = c.u32()? as usize;
    for _ in 0..5 {
        c.f64()?;
    }
    let data = c.f32s(n_windows * n_freq * win_frames)?;
    Ok(WindowBatch { data, n_windows, n_freq, win_frames, hop_frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ClassLabel;

    fn toy_spec(n_freq: usize, n_frames: usize) -> Spectrogram {
        Spectrogram {
            mag: (0..n_freq * n_frames).map(|i| i as f32).collect(),
            n_freq,
            n_frames,
            bin_hz: 187.5,
            frame_s: 128.0 / 96_000.0,
            first_bin: 0,
            band: None,
            gamma: None,
        }
    }

    #[test]
    fn frame_count_for_full_clip() {
        assert_eq!(StftParams::default().n_frames(960_000), 7497);
        assert_eq!(window_count(7497, 24, 8), 935);
    }

    #[test]
    fn zero_signal_zero_spectrogram() {
        let s = MonoSignal::new(vec![0.0; 2048], 96_000, ClassLabel::Background).unwrap();
        let sp = stft(&s, &StftParams::default()).unwrap();
        assert_eq!((sp.n_freq, sp.n_frames), (257, 13));
        assert!(sp.mag.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_signal_rejected() {
        let s = MonoSignal::new(vec![0.0; 100], 96_000, ClassLabel::Background).unwrap();
        assert!(stft(&s, &StftParams::default()).is_err());
    }

    #[test]
    fn default_band_keeps_150_bins() {
        let sp = bandpass_bins(&toy_spec(257, 3), 20_000.0, 48_000.0).unwrap();
        assert_eq!(sp.n_freq, 150);
        assert_eq!(sp.first_bin, 107);
        assert_eq!(FeaturePipeline::default().n_band_bins(), 150);
        let full = bandpass_bins(&toy_spec(257, 3), 0.0, 48_000.0).unwrap();
        assert_eq!(full.mag, toy_spec(257, 3).mag);
        assert!(bandpass_bins(&toy_spec(257, 3), 30_010.0, 30_100.0).is_err());
        assert!(bandpass_bins(&toy_spec(257, 3), 30_000.0, 20_000.0).is_err());
    }

    #[test]
    fn gamma_cases() {
        let mut s = toy_spec(1, 4);
        s.mag = vec![0.0, 0.25, 0.5, 1.0];
        assert_eq!(gamma_correct(&s, 1.0).unwrap().mag, s.mag);
        let g2 = gamma_correct(&s, 2.0).unwrap();
        assert_eq!(g2.mag[1], 0.0625);
        assert!(g2.mag.iter().zip(&s.mag).all(|(o, i)| o <= i));
        assert!(gamma_correct(&s, 0.0).is_err());
        assert!(gamma_correct(&s, -1.0).is_err());
        s.mag[0] = 2.0;
        assert!(gamma_correct(&s, 2.0).is_err());
    }

    #[test]
    fn slide_indices() {
        let b = slide(&toy_spec(2, 40), 24, 8).unwrap();
        assert_eq!(b.n_windows, 3);
        assert_eq!((b.origin_frame(1), b.origin_frame(2)), (8, 16));
        assert_eq!(b.window(2)[0], 16.0);
        assert_eq!(b.window(2)[24 + 23], 40.0 + 39.0);
        assert_eq!(slide(&toy_spec(2, 24), 24, 8).unwrap().n_windows, 1);
        assert!(slide(&toy_spec(2, 23), 24, 8).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("sonohazard-feat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut s = bandpass_bins(&toy_spec(257, 30), 20_000.0, 48_000.0).unwrap();
        s.gamma = Some(1.5);
        write_spectrogram(&dir.join("a.spec"), &s).unwrap();
        assert_eq!(read_spectrogram(&dir.join("a.spec")).unwrap(), s);
        let b = slide(&s, 24, 2).unwrap();
        write_windows(&dir.join("a.win"), &b, &s).unwrap();
        assert_eq!(read_windows(&dir.join("a.win")).unwrap(), b);
        std::fs::remove_dir_all(&dir).ok();
    }
}
