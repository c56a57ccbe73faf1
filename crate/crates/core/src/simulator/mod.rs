//! Procedural colon-like tubes, an analytic ray-casting renderer, scripted
//! and interactive virtual-endoscope trajectories, and the ground-truth
//! coverage oracle.

mod events;
mod oracle;
mod scenario;
mod trajectory;

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use events::{inject_events, Injection, ScriptedScan};
pub use oracle::{OracleCoverage, ORACLE_MAGIC};
pub use scenario::{HoleScenario, HOLE_LENGTH, HOLE_SPAN};
pub use trajectory::{scripted_trajectory, Pilot, PilotMove, TrajectoryKind, TrajectoryParams};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::frames::{Intrinsics, PosedFrame};
use crate::geometry::{wrap_tau, Pose, Vec3};

/// Axis sampling step of the tube model (mm).
const AXIS_STEP: f64 = 0.25;
/// Bisection tolerance of the ray march (mm).
const HIT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisShape {
    /// Along world +z from the origin.
    Straight,
    /// Around world +z: `(R cos u, R sin u, pitch · u / 2π)`.
    Helix { radius: f64, pitch: f64 },
    /// Catmull-Rom curve through the control points.
    Spline { control: Vec<[f64; 3]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    pub axis: AxisShape,
    /// Axis arc length (mm).
    pub length: f64,
    /// Mean radius (mm).
    pub radius: f64,
    /// Amplitude and period (mm) of a slow radius change along the axis.
    pub radius_variation: f64,
    pub radius_period: f64,
    /// Sinusoidal folds: radial amplitude (mm) and frequency (cycles per mm).
    pub fold_amplitude: f64,
    pub fold_frequency: f64,
}

impl Default for TubeParams {
    fn default() -> Self {
        Self {
            axis: AxisShape::Straight,
            length: 400.0,
            radius: 25.0,
            radius_variation: 0.0,
            radius_period: 100.0,
            fold_amplitude: 0.0,
            fold_frequency: 0.05,
        }
    }
}

/// Axis-aligned window in tube coordinates `(s, φ)`: `s ∈ [s_start, s_end)`,
/// `φ` in the counter-clockwise arc from `theta_start` to `theta_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorWindow {
    pub s_start: f64,
    pub s_end: f64,
    pub theta_start: f64,
    pub theta_end: f64,
}

impl SectorWindow {
    pub fn contains(&self, s: f64, phi: f64) -> bool {
        if s < self.s_start || s >= self.s_end {
            return false;
        }
        let span = wrap_tau(self.theta_end - self.theta_start);
        let span = if span == 0.0 && self.theta_end != self.theta_start { TAU } else { span };
        wrap_tau(phi - self.theta_start) < span
    }

    pub fn angular_span(&self) -> f64 {
        wrap_tau(self.theta_end - self.theta_start)
    }
}

/// A tube around a densely sampled axis. Surface point at axis arc length `s`
/// and angle `φ`: `axis(s) + r(s)(cos φ · n(s) + sin φ · b(s))`, with `n`, `b`
/// the rotation-minimizing frame of the axis.
#[derive(Debug, Clone)]
pub struct TubeModel {
    params: TubeParams,
    axis: Centerline,
    /// Windows whose surface never returns depth (folds hiding the wall).
    hidden: Vec<SectorWindow>,
    closed_form: bool,
}

/// Ray-cast result of one pose.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub color: Vec<[u8; 3]>,
    /// Tube coordinates `(s, φ)` of the surface point behind each valid pixel.
    pub hits: Vec<Option<(f64, f64)>>,
}

impl RenderedView {
    pub fn into_frame(self, frame_id: u64, timestamp: f64, pose: Pose, segment_id: u32) -> PosedFrame {
        PosedFrame {
            frame_id,
            timestamp,
            width: self.width,
            height: self.height,
            color: self.color,
            depth: self.depth,
            pose,
            segment_id,
        }
    }
}

impl TubeModel {
    pub fn new(params: TubeParams) -> Result<Self> {
        if !(params.length > 0.0) {
            return Err(Error::Config("tube length must be positive".into()));
        }
        let min_radius = params.radius - params.radius_variation.abs() - params.fold_amplitude.abs();
        if !(min_radius > 5.0) {
            return Err(Error::Config(format!("tube radius dips to {min_radius} mm; must stay above 5 mm")));
        }
        let n = (params.length / AXIS_STEP).round() as usize + 1;
        let (samples, tangents) = match &params.axis {
            AxisShape::Straight => (
                (0..n).map(|k| Vec3::new(0.0, 0.0, k as f64 * AXIS_STEP)).collect(),
                vec![Vec3::z(); n],
            ),
            AxisShape::Helix { radius, pitch } => {
                let rise = pitch / TAU;
                let c = (radius * radius + rise * rise).sqrt();
                let at = |s: f64| {
                    let u = s / c;
                    (
                        Vec3::new(radius * u.cos(), radius * u.sin(), rise * u),
                        Vec3::new(-radius * u.sin(), radius * u.cos(), rise) / c,
                    )
                };
                (0..n).map(|k| at(k as f64 * AXIS_STEP)).unzip()
            }
            AxisShape::Spline { control } => catmull_rom_axis(control, params.length)?,
        };
        let axis = Centerline::from_samples(samples, tangents, None)?;
        let closed_form = matches!(params.axis, AxisShape::Straight)
            && params.radius_variation == 0.0
            && params.fold_amplitude == 0.0;
        Ok(Self {
            params,
            axis,
            hidden: Vec::new(),
            closed_form,
        })
    }

    pub fn with_hidden(mut self, windows: Vec<SectorWindow>) -> Self {
        self.hidden = windows;
        self
    }

    pub fn params(&self) -> &TubeParams {
        &self.params
    }

    pub fn hidden(&self) -> &[SectorWindow] {
        &self.hidden
    }

    pub fn length(&self) -> f64 {
        self.axis.total_length()
    }

    /// The sampled axis with its rotation-minimizing frames.
    pub fn axis(&self) -> &Centerline {
        &self.axis
    }

    pub fn radius_at(&self, s: f64) -> f64 {
        let p = &self.params;
        p.radius
            + p.radius_variation * (TAU * s / p.radius_period).sin()
            + p.fold_amplitude * (TAU * p.fold_frequency * s).sin()
    }

    /// Axis point, tangent, normal and binormal at arc length `s` (clamped).
    pub fn frame_at(&self, s: f64) -> (Vec3, Vec3, Vec3, Vec3) {
        let last = self.axis.len() - 1;
        let x = (s / AXIS_STEP).clamp(0.0, last as f64);
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        let f = x - k as f64;
        let k1 = (k + 1).min(last);
        let lerp = |a: Vec3, b: Vec3| a * (1.0 - f) + b * f;
        let p = lerp(self.axis.samples()[k], self.axis.samples()[k1]);
        let t = lerp(self.axis.tangent(k), self.axis.tangent(k1)).normalize();
        let n = lerp(self.axis.normal(k), self.axis.normal(k1));
        let n = (n - t * n.dot(&t)).normalize();
        (p, t, n, t.cross(&n))
    }

    pub fn surface_point(&self, s: f64, phi: f64) -> Vec3 {
        let (p, _, n, b) = self.frame_at(s);
        p + (n * phi.cos() + b * phi.sin()) * self.radius_at(s)
    }

    /// Procedural wall color.
    pub fn texture(&self, s: f64, phi: f64) -> [u8; 3] {
        let r = 165.0 + 45.0 * (0.21 * s + 2.0 * phi).sin() + 20.0 * (0.05 * s).cos();
        let g = 90.0 + 40.0 * (5.0 * phi + 0.09 * s).sin();
        let b = 80.0 + 35.0 * (0.17 * s - 3.0 * phi).cos();
        [r, g, b].map(|v| v.round().clamp(0.0, 255.0) as u8)
    }

    /// Local tube coordinates of `p` starting the axis search at sample `hint`:
    /// `(signed wall distance, s, φ)`, negative inside. `None` past either end.
    fn locate(&self, p: &Vec3, hint: &mut usize) -> Option<(f64, f64, f64)> {
        if matches!(self.params.axis, AxisShape::Straight) {
            if p.z < 0.0 || p.z > self.axis.total_length() {
                return None;
            }
            let (n, b) = (self.axis.normal(0), self.axis.binormal(0));
            let radial = Vec3::new(p.x, p.y, 0.0);
            let phi = wrap_tau(radial.dot(&b).atan2(radial.dot(&n)));
            return Some((radial.norm() - self.radius_at(p.z), p.z, phi));
        }
        let pts = self.axis.samples();
        let last = pts.len() - 1;
        let mut k = (*hint).min(last);
        let mut d = (pts[k] - p).norm_squared();
        while k < last {
            let dn = (pts[k + 1] - p).norm_squared();
            if dn >= d {
                break;
            }
            k += 1;
            d = dn;
        }
        while k > 0 {
            let dp = (pts[k - 1] - p).norm_squared();
            if dp >= d {
                break;
            }
            k -= 1;
            d = dp;
        }
        *hint = k;
        let t = self.axis.tangent(k);
        let u = (p - pts[k]).dot(&t);
        let s = self.axis.arclen()[k] + u;
        if s < 0.0 || s > self.axis.total_length() {
            return None;
        }
        let radial = p - (pts[k] + t * u);
        let rho = radial.norm();
        let phi = wrap_tau(radial.dot(&self.axis.binormal(k)).atan2(radial.dot(&self.axis.normal(k))));
        Some((rho - self.radius_at(s), s, phi))
    }

    /// Axis sample nearest to `p` (a good search start for rays from `p`).
    fn nearest_sample(&self, p: &Vec3) -> usize {
        self.axis.project(p).map(|pr| pr.sample_index).unwrap_or(0)
    }

    /// True when `p` lies strictly inside the tube.
    pub fn contains(&self, p: &Vec3) -> bool {
        let mut hint = self.nearest_sample(p);
        matches!(self.locate(p, &mut hint), Some((g, _, _)) if g < 0.0)
    }

    /// Distance along the unit ray to the first wall hit and its `(s, φ)`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, hint: usize) -> Option<(f64, f64, f64)> {
        if self.closed_form {
            return self.cast_cylinder(origin, dir);
        }
        let mut hint = hint;
        let (mut g, _, _) = self.locate(origin, &mut hint)?;
        if g >= 0.0 {
            return None;
        }
        let max_dist = 4.0 * (self.params.length + self.params.radius);
        let mut lam = 0.0;
        while lam < max_dist {
            let step = (-g * 0.5).max(0.25);
            let next = lam + step;
            let (gn, _, _) = self.locate(&(origin + dir * next), &mut hint)?;
            if gn >= 0.0 {
                let (mut lo, mut hi) = (lam, next);
                while hi - lo > HIT_TOLERANCE {
                    let mid = 0.5 * (lo + hi);
                    match self.locate(&(origin + dir * mid), &mut hint) {
                        Some((gm, _, _)) if gm < 0.0 => lo = mid,
                        _ => hi = mid,
                    }
                }
                let hit = 0.5 * (lo + hi);
                let (_, s, phi) = self.locate(&(origin + dir * hit), &mut hint)?;
                return Some((hit, s, phi));
            }
            lam = next;
            g = gn;
        }
        None
    }

    fn cast_cylinder(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64, f64)> {
        let r = self.params.radius;
        let (ox, oy, dx, dy) = (origin.x, origin.y, dir.x, dir.y);
        let a = dx * dx + dy * dy;
        if a < 1e-18 {
            return None;
        }
        let b = ox * dx + oy * dy;
        let c = ox * ox + oy * oy - r * r;
        let disc = b * b - a * c;
        if disc < 0.0 || c >= 0.0 {
            return None;
        }
        let lam = (-b + disc.sqrt()) / a;
        let hit = origin + dir * lam;
        if hit.z < 0.0 || hit.z > self.axis.total_length() {
            return None;
        }
        let n = self.axis.normal(0);
        let bn = self.axis.binormal(0);
        let radial = Vec3::new(hit.x, hit.y, 0.0);
        Some((lam, hit.z, wrap_tau(radial.dot(&bn).atan2(radial.dot(&n)))))
    }

    /// Ray-casts every pixel. Depth is the camera-space z of the first hit;
    /// pixels whose hit falls in a hidden window, or that see no wall, are
    /// invalid (zero depth, black).
    pub fn render(&self, pose: &Pose, intr: &Intrinsics) -> Result<RenderedView> {
        let eye = pose.position();
        let hint = self.nearest_sample(&eye);
        let mut h = hint;
        match self.locate(&eye, &mut h) {
            Some((g, _, _)) if g < 0.0 => {}
            other => {
                return Err(Error::CameraOutsideTube {
                    s: other.map(|o| o.1).unwrap_or(self.axis.arclen()[hint]),
                })
            }
        }
        let (w, hgt) = (intr.width, intr.height);
        let rows: Vec<Vec<(f32, [u8; 3], Option<(f64, f64)>)>> = (0..hgt)
            .into_par_iter()
            .map(|row| {
                (0..w)
                    .map(|col| {
                        let ray_cam = intr.ray(row as f64, col as f64);
                        let dir = pose.transform_vector(&ray_cam);
                        match self.cast(&eye, &dir, hint) {
                            Some((lam, s, phi)) if !self.hidden.iter().any(|win| win.contains(s, phi)) => {
                                ((lam * ray_cam.z) as f32, self.texture(s, phi), Some((s, phi)))
                            }
                            _ => (0.0, [0, 0, 0], None),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut view = RenderedView {
            width: w,
            height: hgt,
            depth: Vec::with_capacity(w * hgt),
            color: Vec::with_capacity(w * hgt),
            hits: Vec::with_capacity(w * hgt),
        };
        for (d, c, hit) in rows.into_iter().flatten() {
            view.depth.push(d);
            view.color.push(c);
            view.hits.push(hit);
        }
        Ok(view)
    }
}

/// Catmull-Rom curve through `control`, resampled by arc length at the axis
/// step over `length` mm (or the curve length, if shorter).
fn catmull_rom_axis(control: &[[f64; 3]], length: f64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    if control.len() < 2 {
        return Err(Error::Config("spline axis needs at least two control points".into()));
    }
    let pts: Vec<Vec3> = control.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let n = pts.len();
    let get = |i: i64| pts[i.clamp(0, n as i64 - 1) as usize];
    let eval = |u: f64| -> Vec3 {
        let i = (u.floor() as i64).clamp(0, n as i64 - 2);
        let t = u - i as f64;
        let (p0, p1, p2, p3) = (get(i - 1), get(i), get(i + 1), get(i + 2));
        let t2 = t * t;
        let t3 = t2 * t;
        (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) * 0.5
    };
    let dense_n = (n - 1) * 2000;
    let mut dense = Vec::with_capacity(dense_n + 1);
    let mut acc = Vec::with_capacity(dense_n + 1);
    let mut total = 0.0;
    for i in 0..=dense_n {
        let p: Vec3 = eval(i as f64 / 2000.0);
        if let Some(prev) = dense.last().copied() {
            let step = p.metric_distance(&prev);
            total += step;
        }
        dense.push(p);
        acc.push(total);
    }
    let len = length.min(total);
    let count = (len / AXIS_STEP).round() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let s = (k as f64 * AXIS_STEP).min(total);
        while j + 2 < acc.len() && acc[j + 1] < s {
            j += 1;
        }
        let f = if acc[j + 1] > acc[j] { (s - acc[j]) / (acc[j + 1] - acc[j]) } else { 0.0 };
        samples.push(dense[j] * (1.0 - f) + dense[j + 1] * f);
    }
    let tangents = (0..samples.len())
        .map(|k| {
            let a = samples[k.saturating_sub(1)];
            let b = samples[(k + 1).min(samples.len() - 1)];
            (b - a).normalize()
        })
        .collect();
    Ok((samples, tangents))
}
