//! Shared signal-processing primitives: windowed-sinc fractional delay, FFT
//! convolution and spectral band limiting.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Number of taps of the fractional-delay interpolator.
pub const FD_TAPS: usize = 16;
/// Tap offsets run from `-(FD_HALF - 1)` to `FD_HALF`.
const FD_HALF: isize = (FD_TAPS / 2) as isize;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Hann-windowed sinc kernel for a delay of `frac` samples, `frac` in `[0, 1)`.
///
/// `kernel[j]` multiplies `x[t - n - (j - 7)]` when delaying by `n + frac`.
/// Coefficients are normalized to unit DC gain; `frac == 0` yields a unit impulse.
pub fn frac_delay_kernel(frac: f64) -> [f64; FD_TAPS] {
    let mut h = [0.0; FD_TAPS];
    if frac == 0.0 {
        h[(FD_HALF - 1) as usize] = 1.0;
        return h;
    }
    let mut sum = 0.0;
    for (j, c) in h.iter_mut().enumerate() {
        let a = (j as isize - (FD_HALF - 1)) as f64 - frac;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * a / FD_HALF as f64).cos());
        *c = sinc(a) * w;
        sum += *c;
    }
    for c in h.iter_mut() {
        *c /= sum;
    }
    h
}

/// Offset of the first kernel tap relative to the integer delay.
pub const FD_FIRST_OFFSET: isize = -(FD_HALF - 1);

/// Accumulates `gain * x(t - delay)` into `out[t]` for every `t` in `0..out.len()`.
///
/// `x` is treated as zero outside its bounds. Negative delays (advances) are allowed.
pub fn delay_accumulate(x: &[f64], delay_samples: f64, gain: f64, out: &mut [f64]) {
    if gain == 0.0 || x.is_empty() {
        return;
    }
    let n = delay_samples.floor();
    let frac = delay_samples - n;
    let n = n as isize;
    if frac == 0.0 {
        shift_accumulate(x, n, gain, out);
        return;
    }
    let h = frac_delay_kernel(frac);
    for (j, &c) in h.iter().enumerate() {
        let off = n + FD_FIRST_OFFSET + j as isize;
        shift_accumulate(x, off, gain * c, out);
    }
}

/// `out[t] += g * x[t - shift]` over the overlapping range.
fn shift_accumulate(x: &[f64], shift: isize, g: f64, out: &mut [f64]) {
    let len = out.len() as isize;
    let t0 = shift.max(0);
    let t1 = (x.len() as isize + shift).min(len);
    if t1 <= t0 {
        return;
    }
    let dst = &mut out[t0 as usize..t1 as usize];
    let src = &x[(t0 - shift) as usize..(t1 - shift) as usize];
    for (d, s) in dst.iter_mut().zip(src) {
        *d += g * s;
    }
}

/// Sparse-or-dense impulse response starting at sample `offset` (may be negative).
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponse {
    pub offset: isize,
    pub taps: Vec<f64>,
}

impl ImpulseResponse {
    pub fn zeros(offset: isize, len: usize) -> Self {
        Self { offset, taps: vec![0.0; len] }
    }

    /// Adds a fractionally delayed, scaled impulse.
    pub fn add_delay(&mut self, delay_samples: f64, gain: f64) {
        let n = delay_samples.floor();
        let frac = delay_samples - n;
        let h = frac_delay_kernel(frac);
        let base = n as isize + FD_FIRST_OFFSET - self.offset;
        for (j, c) in h.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let idx = base + j as isize;
            assert!(
                idx >= 0 && (idx as usize) < self.taps.len(),
                "impulse response too short for delay {delay_samples}"
            );
            self.taps[idx as usize] += gain * c;
        }
    }

    /// Convolves with another response (used to fuse two filtering stages).
    pub fn convolve(&self, other: &ImpulseResponse) -> ImpulseResponse {
        let mut taps = vec![0.0; self.taps.len() + other.taps.len() - 1];
        for (i, a) in self.taps.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.taps.iter().enumerate() {
                taps[i + j] += a * b;
            }
        }
        ImpulseResponse { offset: self.offset + other.offset, taps }
    }

    /// Applies the response to `x`, returning `x.len()` samples:
    /// `y[t] = sum_k taps[k] * x[t - offset - k]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let nnz = self.taps.iter().filter(|c| **c != 0.0).count();
        if nnz <= 256 {
            let mut y = vec![0.0; x.len()];
            for (k, &c) in self.taps.iter().enumerate() {
                if c != 0.0 {
                    shift_accumulate(x, self.offset + k as isize, c, &mut y);
                }
            }
            y
        } else {
            let full = fft_convolve(x, &self.taps);
            let mut y = vec![0.0; x.len()];
            for (t, v) in y.iter_mut().enumerate() {
                let idx = t as isize - self.offset;
                if idx >= 0 && (idx as usize) < full.len() {
                    *v = full[idx as usize];
                }
            }
            y
        }
    }
}

/// Full linear convolution of `a` and `b` via FFT (length `a.len() + b.len() - 1`).
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = good_fft_len(out_len);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0)))
        .collect();
    fwd.process(&mut fa);
    // Unpack the two real spectra packed into one complex transform.
    let mut prod = vec![Complex::new(0.0, 0.0); n];
    for k in 0..n {
        let z = fa[k];
        let zc = fa[(n - k) % n].conj();
        let xa = (z + zc) * 0.5;
        let xb = (z - zc) * Complex::new(0.0, -0.5);
        prod[k] = xa * xb;
    }
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    prod[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Smallest 2^a * 3^b * 5^c >= n.
pub fn good_fft_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Zeroes every spectral component outside `[lo_hz, hi_hz]` (both spectrum halves).
pub fn band_limit(x: &mut [f64], sample_rate_hz: f64, lo_hz: f64, hi_hz: f64) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = sample_rate_hz / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * df;
        if f < lo_hz || f > hi_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re * scale;
    }
}

/// Mean squared amplitude.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}
