use proptest::prelude::*;
use sonohazard::synth::{generate, gen_background, gen_discharge, gen_gas_leak, ClassLabel, SourceSpec};

fn spec(class: ClassLabel, seed: u64, duration_s: f64) -> SourceSpec {
    SourceSpec { duration_s, ..SourceSpec::new(class, seed) }
}

/// Naive O(n^2) DFT energy in [lo, hi] Hz over total energy (one-sided bins).
fn band_energy_fraction(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let (mut inside, mut total) = (0.0, 0.0);
    for k in 0..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        let w = -std::f64::consts::TAU * k as f64 / n as f64;
        for (t, v) in x.iter().enumerate() {
            let a = w * t as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        let e = re * re + im * im;
        let f = k as f64 * fs / n as f64;
        total += e;
        if f >= lo && f <= hi {
            inside += e;
        }
    }
    inside / total
}

/// Onset times (s): samples above `thr` preceded by at least `gap` quiet samples.
fn onsets(x: &[f64], fs: f64, thr: f64, gap: usize) -> Vec<f64> {
    let mut out = vec![];
    let mut quiet = gap;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > thr {
            if quiet >= gap {
                out.push(i as f64 / fs);
            }
            quiet = 0;
        } else {
            quiet += 1;
        }
    }
    out
}

fn onset_phases_deg(class: ClassLabel, seed: u64) -> Vec<f64> {
    let s = gen_discharge(&spec(class, seed, 10.0)).unwrap();
    let peak = s.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    onsets(&s.samples, 96_000.0, 1e-3 * peak, 48).iter().map(|t| (t * 60.0).fract() * 360.0).collect()
}

#[test]
fn gas_leak_energy_stays_in_band() {
    let mut s = spec(ClassLabel::GasLeak, 7, 0.05);
    s.band_lo_hz = 25_000.0;
    s.band_hi_hz = 30_000.0;
    let x = gen_gas_leak(&s).unwrap();
    let frac = band_energy_fraction(&x.samples, 96_000.0, 25_000.0, 30_000.0);
    assert!(frac >= 0.9, "in-band energy fraction {frac}");
}

#[test]
fn gas_leak_length_and_determinism() {
    let s = SourceSpec::new(ClassLabel::GasLeak, 7);
    let a = gen_gas_leak(&s).unwrap();
    assert_eq!(a.len(), 960_000);
    assert_eq!(a.label, ClassLabel::GasLeak);
    assert_eq!(a.samples, gen_gas_leak(&s).unwrap().samples);
}

#[test]
fn corona_pulses_cluster_near_trough() {
    let phases = onset_phases_deg(ClassLabel::Corona, 5);
    assert!(phases.len() > 100, "{} onsets", phases.len());
    let near = phases.iter().filter(|p| (*p - 270.0).abs() <= 30.0).count();
    assert!(near as f64 >= 0.8 * phases.len() as f64, "{near} of {}", phases.len());
}

#[test]
fn surface_pulses_fill_both_half_cycles() {
    let phases = onset_phases_deg(ClassLabel::Surface, 5);
    let first = phases.iter().filter(|p| **p < 180.0).count() as f64;
    let n = phases.len() as f64;
    assert!(first >= 0.3 * n && n - first >= 0.3 * n, "{first} of {n} in the positive half-cycle");
}

#[test]
fn floating_pulses_are_phase_locked() {
    let phases = onset_phases_deg(ClassLabel::Floating, 5);
    let step = 360.0 / 4.0;
    // Residual of each onset against the lattice anchored at the first onset.
    let resid: Vec<f64> = phases
        .iter()
        .map(|p| {
            let d = (p - phases[0]).rem_euclid(step);
            if d > step / 2.0 {
                d - step
            } else {
                d
            }
        })
        .collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
    assert!(std < 10.0, "phase jitter std {std} deg");
}

#[test]
fn discharge_carriers_are_ultrasonic() {
    let x = gen_discharge(&spec(ClassLabel::Corona, 2, 0.1)).unwrap();
    let frac = band_energy_fraction(&x.samples, 96_000.0, 20_000.0, 48_000.0);
    assert!(frac > 0.95, "{frac}");
}

#[test]
fn zero_amplitude_is_silent() {
    for class in ClassLabel::ALL {
        let mut s = spec(class, 1, 0.1);
        s.amplitude = 0.0;
        let x = generate(&s).unwrap();
        assert_eq!(x.len(), 9_600);
        assert!(x.samples.iter().all(|v| *v == 0.0), "{class}");
    }
}

#[test]
fn background_statistics() {
    let x = gen_background(&SourceSpec::new(ClassLabel::Background, 3)).unwrap();
    let n = x.len() as f64;
    let mean = x.samples.iter().sum::<f64>() / n;
    let std = (x.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((0.97..=1.03).contains(&std), "std {std}");
    assert!(mean.abs() < 3.0 * std / n.sqrt(), "mean {mean}");

    let y = gen_background(&SourceSpec::new(ClassLabel::Background, 4)).unwrap();
    let my = y.samples.iter().sum::<f64>() / n;
    let sy = (y.samples.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n).sqrt();
    let cov = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - mean) * (b - my)).sum::<f64>() / n;
    let rho = cov / (std * sy);
    assert!(rho.abs() < 0.01, "correlation {rho}");
}

#[test]
fn wrong_generator_is_rejected() {
    assert!(gen_discharge(&spec(ClassLabel::GasLeak, 1, 0.1)).is_err());
    assert!(gen_gas_leak(&spec(ClassLabel::Corona, 1, 0.1)).is_err());
    assert!(gen_background(&spec(ClassLabel::Floating, 1, 0.1)).is_err());
    let mut s = spec(ClassLabel::Corona, 1, 0.1);
    s.pulses_per_cycle = 0;
    assert!(gen_discharge(&s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_deterministic(class in 0usize..5, seed in any::<u64>()) {
        let s = spec(ClassLabel::from_index(class).unwrap(), seed, 0.05);
        prop_assert_eq!(generate(&s).unwrap().samples, generate(&s).unwrap().samples);
    }

    #[test]
    fn amplitude_is_linear(class in 0usize..5, seed in 0u64..1000, k in 0.01f64..10.0) {
        let base = spec(ClassLabel::from_index(class).unwrap(), seed, 0.02);
        let scaled = SourceSpec { amplitude: k, ..base.clone() };
        let a = generate(&base).unwrap();
        let b = generate(&scaled).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            prop_assert!((x * k - y).abs() <= 1e-12 * y.abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn samples_are_finite_and_sized(class in 0usize..5, seed in any::<u64>(), dur in 0.001f64..0.05) {
        let s = spec(ClassLabel::from_index(class).unwrap(), seed, dur);
        let x = generate(&s).unwrap();
        prop_assert_eq!(x.len(), (dur * 96_000.0).round() as usize);
        prop_assert!(x.samples.iter().all(|v| v.is_finite()));
    }
}
