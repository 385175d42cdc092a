//! Time-domain delay-and-sum beamforming steered from camera pixels.
//!
//! The beam output is `y(t) = sum_m w_m x_m(t - tau_m)` with
//! `tau_m = p_m . u / c`. A plane wave arriving from direction `u` reaches
//! microphone `m` earlier by exactly `tau_m`, so delaying each channel by its
//! `tau_m` lines the wavefronts up. Fractional delays use the same 16-tap
//! windowed-sinc interpolator as the scene renderer.

use serde::{Deserialize, Serialize};

use crate::dsp::{self, ImpulseResponse};
use crate::error::{invalid, shape, Result};
use crate::scene::{self, dot, norm, ArrayGeometry, MultichannelRecording, RoomSpec, Vec3};
use crate::synth::MonoSignal;

/// Unit look direction in array coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringDirection {
    u: Vec3,
}

impl SteeringDirection {
    /// Normalizes `v`; rejects zero or non-finite vectors.
    pub fn new(v: Vec3) -> Result<Self> {
        let n = norm(v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid(format!("steering vector {v:?} cannot be normalized")));
        }
        Ok(Self { u: v.map(|c| c / n) })
    }

    /// Optical axis of an unrotated camera (broadside to a z = 0 planar array).
    pub fn broadside() -> Self {
        Self { u: [0.0, 0.0, 1.0] }
    }

    pub fn vector(&self) -> Vec3 {
        self.u
    }

    pub fn negated(&self) -> Self {
        Self { u: self.u.map(|c| -c) }
    }

    /// Azimuth in degrees, positive toward +x.
    pub fn azimuth_deg(&self) -> f64 {
        self.u[0].atan2(self.u[2]).to_degrees()
    }

    /// Elevation in degrees, positive toward +y (up).
    pub fn elevation_deg(&self) -> f64 {
        self.u[1].atan2(self.u[0].hypot(self.u[2])).to_degrees()
    }
}

/// Pinhole camera co-located with the array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub width_px: u32,
    pub height_px: u32,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    /// Rotation from camera frame to array frame, row-major.
    pub mounting: [[f64; 3]; 3],
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width_px: 640,
            height_px: 480,
            hfov_deg: 60.0,
            vfov_deg: 45.0,
            mounting: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(invalid("camera pixel dimensions must be positive"));
        }
        for fov in [self.hfov_deg, self.vfov_deg] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(invalid(format!("field of view must be in (0, 180) degrees, got {fov}")));
            }
        }
        Ok(())
    }
}

/// Maps a pixel to the direction of the ray through it. Image y grows
/// downward while array y points up.
pub fn pixel_to_steering(px: f64, py: f64, cam: &CameraModel) -> Result<SteeringDirection> {
    cam.validate()?;
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    if !(px >= 0.0 && px < w && py >= 0.0 && py < h) {
        return Err(invalid(format!("pixel ({px}, {py}) is outside the {w}x{h} frame")));
    }
    let fx = (w / 2.0) / (cam.hfov_deg.to_radians() / 2.0).tan();
    let fy = (h / 2.0) / (cam.vfov_deg.to_radians() / 2.0).tan();
    let ray = [(px - w / 2.0) / fx, -(py - h / 2.0) / fy, 1.0];
    let r = &cam.mounting;
    let v = [dot(r[0], ray), dot(r[1], ray), dot(r[2], ray)];
    SteeringDirection::new(v)
}

/// Per-channel steering delays `tau_m = p_m . u / c` in seconds.
pub fn steering_delays(geometry: &ArrayGeometry, dir: &SteeringDirection) -> Vec<f64> {
    geometry.positions.iter().map(|p| dot(*p, dir.u) / geometry.speed_of_sound).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamWeights {
    pub w: Vec<f64>,
}

impl BeamWeights {
    pub fn uniform(m: usize) -> Self {
        Self { w: vec![1.0 / m as f64; m] }
    }

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(invalid("beam weights must be finite"));
        }
        Ok(Self { w })
    }
}

/// Delay-and-sum output, same length as the input; samples reaching outside
/// the clip read zeros.
pub fn delay_and_sum(rec: &MultichannelRecording, dir: &SteeringDirection, w: &BeamWeights) -> Result<MonoSignal> {
    if w.w.len() != rec.n_channels() {
        return Err(shape(format!("{} weights for {} channels", w.w.len(), rec.n_channels())));
    }
    let fs = rec.sample_rate_hz as f64;
    let n = rec.n_samples();
    let delays = steering_delays(&rec.geometry, dir);
    if let Some(d) = delays.iter().find(|d| (d.abs() * fs) >= n as f64) {
        return Err(invalid(format!("steering delay {d} s exceeds the clip length")));
    }
    let mut y = vec![0.0; n];
    for ((ch, tau), wm) in rec.channels.iter().zip(&delays).zip(&w.w) {
        dsp::delay_accumulate(ch, tau * fs, *wm, &mut y);
    }
    MonoSignal::new(y, rec.sample_rate_hz, rec.label)
}

/// Impulse response of `propagate` followed by `delay_and_sum`, fused into one
/// filter. Applying it to the source equals the two-stage pipeline except
/// within one interpolator length of a clip edge where the beamformer would
/// read past the rendered recording; with integer steering delays (e.g.
/// broadside on a planar array) the two agree everywhere.
pub fn beamformed_response(
    source_pos: Vec3,
    geometry: &ArrayGeometry,
    room: Option<&RoomSpec>,
    dir: &SteeringDirection,
    w: &BeamWeights,
    sample_rate_hz: u32,
) -> Result<ImpulseResponse> {
    if w.w.len() != geometry.len() {
        return Err(shape(format!("{} weights for {} microphones", w.w.len(), geometry.len())));
    }
    let fs = sample_rate_hz as f64;
    let paths = scene::propagation_paths(source_pos, geometry, room)?;
    let steer = steering_delays(geometry, dir);
    let pad = dsp::FD_TAPS as isize + 2;
    let lo = paths
        .iter()
        .zip(&steer)
        .flat_map(|(terms, s)| terms.iter().map(move |t| ((t.delay_s + s) * fs).floor() as isize))
        .min()
        .unwrap_or(0)
        - 2 * pad
        - 2;
    let hi = paths
        .iter()
        .zip(&steer)
        .flat_map(|(terms, s)| terms.iter().map(move |t| ((t.delay_s + s) * fs).ceil() as isize))
        .max()
        .unwrap_or(0)
        + 2 * pad
        + 2;
    let mut total = ImpulseResponse::zeros(lo, (hi - lo + 1) as usize);
    for ((terms, tau), wm) in paths.iter().zip(&steer).zip(&w.w) {
        if *wm == 0.0 {
            continue;
        }
        let mut beam = ImpulseResponse::zeros((tau * fs).floor() as isize - pad, (2 * pad + 1) as usize);
        beam.add_delay(tau * fs, *wm);
        for t in terms {
            let mut prop = ImpulseResponse::zeros((t.delay_s * fs).floor() as isize - pad, (2 * pad + 1) as usize);
            prop.add_delay(t.delay_s * fs, t.gain);
            let fused = prop.convolve(&beam);
            let base = fused.offset - total.offset;
            for (k, c) in fused.taps.iter().enumerate() {
                if *c != 0.0 {
                    total.taps[(base + k as isize) as usize] += c;
                }
            }
        }
    }
    // Trim leading/trailing zeros.
    let first = total.taps.iter().position(|c| *c != 0.0).unwrap_or(0);
    let last = total.taps.iter().rposition(|c| *c != 0.0).unwrap_or(0);
    Ok(ImpulseResponse { offset: total.offset + first as isize, taps: total.taps[first..=last].to_vec() })
}

/// Renders a scene straight to the beamformer output (see [`beamformed_response`]).
pub fn beamform_scene(
    source: &MonoSignal,
    source_pos: Vec3,
    geometry: &ArrayGeometry,
    room: Option<&RoomSpec>,
    dir: &SteeringDirection,
    w: &BeamWeights,
) -> Result<MonoSignal> {
    let ir = beamformed_response(source_pos, geometry, room, dir, w, source.sample_rate_hz)?;
    MonoSignal::new(ir.apply(&source.samples), source.sample_rate_hz, source.label)
}

/// A camera detection standing in for an object detector's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub px: f64,
    pub py: f64,
    pub class_name: String,
}

/// Parses `px,py,class_name` lines; a header line and `#` comments are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(invalid(format!("detection line {}: expected px,py,class_name", i + 1)));
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(px), Ok(py)) => out.push(Detection { px, py, class_name: fields[2].to_string() }),
            _ if i == 0 => continue,
            _ => return Err(invalid(format!("detection line {}: bad pixel coordinates", i + 1))),
        }
    }
    Ok(out)
}
