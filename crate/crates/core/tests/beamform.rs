use proptest::prelude::*;
use sonohazard::beamform::{
    beamform_scene, delay_and_sum, parse_detections, pixel_to_steering, steering_delays, BeamWeights, CameraModel,
    SteeringDirection,
};
use sonohazard::dsp::power;
use sonohazard::scene::{add_noise_at_snr, make_array, propagate, ArrayGeometry, MultichannelRecording, NoiseKind};
use sonohazard::synth::{generate, ClassLabel, MonoSignal, SourceSpec};

fn clip(class: ClassLabel, seed: u64, dur: f64) -> MonoSignal {
    generate(&SourceSpec { duration_s: dur, ..SourceSpec::new(class, seed) }).unwrap()
}

fn minus(a: &MultichannelRecording, b: &MultichannelRecording) -> MultichannelRecording {
    let ch = a.channels.iter().zip(&b.channels).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
    MultichannelRecording::new(ch, a.sample_rate_hz, a.geometry.clone(), a.label).unwrap()
}

#[test]
fn pixel_mapping() {
    let cam = CameraModel::default();
    let u = pixel_to_steering(320.0, 240.0, &cam).unwrap().vector();
    assert!((u[0]).abs() < 1e-12 && (u[1]).abs() < 1e-12 && (u[2] - 1.0).abs() < 1e-12);
    let edge = pixel_to_steering(0.0, 240.0, &cam).unwrap();
    assert!(edge.vector()[0] < 0.0);
    assert!((edge.azimuth_deg() + 30.0).abs() < 1e-9, "{}", edge.azimuth_deg());
    for (px, py) in [(0.0, 0.0), (639.0, 479.0), (100.5, 377.25)] {
        let v = pixel_to_steering(px, py, &cam).unwrap().vector();
        assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-9);
    }
    assert!(pixel_to_steering(640.0, 10.0, &cam).is_err());
    assert!(pixel_to_steering(-1.0, 10.0, &cam).is_err());
}

#[test]
fn steering_delay_arithmetic() {
    let g = ArrayGeometry::new(vec![[0.343, 0.0, 0.0], [-0.343, 0.0, 0.0]], 343.0).unwrap();
    let d = steering_delays(&g, &SteeringDirection::new([1.0, 0.0, 0.0]).unwrap());
    assert!((d[0] - 1e-3).abs() < 1e-15 && (d[1] + 1e-3).abs() < 1e-15);
    let fx = make_array("fx112", 112).unwrap();
    assert!(steering_delays(&fx, &SteeringDirection::broadside()).iter().all(|t| *t == 0.0));
}

#[test]
fn single_channel_identity() {
    let g = make_array("single", 1).unwrap();
    let s = clip(ClassLabel::Corona, 1, 0.02);
    let rec = MultichannelRecording::new(vec![s.samples.clone()], 96_000, g, s.label).unwrap();
    let y = delay_and_sum(&rec, &SteeringDirection::broadside(), &BeamWeights::new(vec![1.0]).unwrap()).unwrap();
    assert_eq!(y.samples, s.samples);
}

#[test]
fn identical_channels_broadside_average() {
    let g = make_array("fx112", 112).unwrap();
    let s = clip(ClassLabel::GasLeak, 2, 0.02);
    let rec = MultichannelRecording::new(vec![s.samples.clone(); 112], 96_000, g, s.label).unwrap();
    let y = delay_and_sum(&rec, &SteeringDirection::broadside(), &BeamWeights::uniform(112)).unwrap();
    let scale = s.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in y.samples.iter().zip(&s.samples) {
        assert!((a - b).abs() <= 1e-6 * scale);
    }
}

#[test]
fn array_gain_on_axis() {
    let g = make_array("fx112", 112).unwrap();
    let s = clip(ClassLabel::GasLeak, 5, 0.2);
    let clean = propagate(&s, [0.0, 0.0, 5.0], &g, None).unwrap();
    let noisy = add_noise_at_snr(&clean, 0.0, NoiseKind::Gaussian, 99).unwrap();
    let noise = minus(&noisy, &clean);
    let dir = pixel_to_steering(320.0, 240.0, &CameraModel::default()).unwrap();
    let w = BeamWeights::uniform(112);
    let ys = delay_and_sum(&clean, &dir, &w).unwrap();
    let yn = delay_and_sum(&noise, &dir, &w).unwrap();
    let gain = 10.0 * (power(&ys.samples) / power(&yn.samples)).log10();
    assert!(gain >= 15.0, "array gain {gain} dB");
    assert!(gain <= 10.0 * 112f64.log10() + 1.0, "array gain {gain} dB above theory");
}

#[test]
fn steering_selects_the_target() {
    let g = make_array("fx112", 112).unwrap();
    let a = clip(ClassLabel::GasLeak, 1, 0.1);
    let b = clip(ClassLabel::Background, 2, 0.1);
    let pa = [0.0, 0.0, 5.0];
    let pb = [3.5, 0.0, 3.5];
    let ra = propagate(&a, pa, &g, None).unwrap();
    let rb = propagate(&b, pb, &g, None).unwrap();
    let w = BeamWeights::uniform(112);
    let dir = SteeringDirection::new(pa).unwrap();
    let ya = delay_and_sum(&ra, &dir, &w).unwrap();
    let yb = delay_and_sum(&rb, &dir, &w).unwrap();
    let out_ratio = power(&ya.samples) / power(&yb.samples);
    let best_raw = ra
        .channels
        .iter()
        .zip(&rb.channels)
        .map(|(x, y)| power(x) / power(y))
        .fold(0.0f64, f64::max);
    assert!(out_ratio > best_raw, "beam {out_ratio} vs best channel {best_raw}");
}

#[test]
fn fused_scene_matches_two_stage_pipeline() {
    let g = make_array("fx112", 112).unwrap();
    let s = clip(ClassLabel::Surface, 3, 0.05);
    let src = [0.6, -0.4, 4.0];
    let dir = pixel_to_steering(400.0, 300.0, &CameraModel::default()).unwrap();
    let w = BeamWeights::uniform(112);
    let two = delay_and_sum(&propagate(&s, src, &g, None).unwrap(), &dir, &w).unwrap();
    let fused = beamform_scene(&s, src, &g, None, &dir, &w).unwrap();
    assert_eq!(two.len(), fused.len());
    let scale = two.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in two.samples[64..two.len() - 64].iter().zip(&fused.samples[64..fused.len() - 64]) {
        assert!((a - b).abs() <= 1e-9 * scale);
    }
}

#[test]
fn weight_count_must_match() {
    let g = make_array("fx112", 4).unwrap();
    let rec = MultichannelRecording::new(vec![vec![0.0; 100]; 4], 96_000, g, ClassLabel::Background).unwrap();
    assert!(delay_and_sum(&rec, &SteeringDirection::broadside(), &BeamWeights::uniform(3)).is_err());
}

#[test]
fn detections_file() {
    let d = parse_detections("px,py,class_name\n320,240,gas_leak\n# comment\n\n10.5, 20, corona\n").unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!((d[1].px, d[1].py, d[1].class_name.as_str()), (10.5, 20.0, "corona"));
    assert!(parse_detections("1,2\n").is_err());
    assert!(parse_detections("1,2,a\nx,2,b\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn negated_direction_negates_delays(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..1.0) {
        let g = make_array("fx112", 112).unwrap();
        let d = SteeringDirection::new([x, y, z]).unwrap();
        let a = steering_delays(&g, &d);
        let b = steering_delays(&g, &d.negated());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn beamformer_is_linear(k in -8.0f64..8.0, px in 0.0f64..640.0, py in 0.0f64..480.0) {
        let g = make_array("fx112", 16).unwrap();
        let rec = propagate(&clip(ClassLabel::Corona, 4, 0.01), [0.2, 0.1, 2.0], &g, None).unwrap();
        let scaled = MultichannelRecording::new(
            rec.channels.iter().map(|c| c.iter().map(|v| k * v).collect()).collect(),
            rec.sample_rate_hz,
            rec.geometry.clone(),
            rec.label,
        ).unwrap();
        let dir = pixel_to_steering(px, py, &CameraModel::default()).unwrap();
        let w = BeamWeights::uniform(16);
        let a = delay_and_sum(&rec, &dir, &w).unwrap();
        let b = delay_and_sum(&scaled, &dir, &w).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((k * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}
