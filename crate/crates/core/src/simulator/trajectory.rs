//! Scripted scan trajectories and the interactive virtual endoscope.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_about, wrap_tau, Pose, Vec3};

use super::{SectorWindow, TubeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Withdrawal along the axis, looking back toward the cecum at `tilt`
    /// off-axis while the view direction spins around the axis.
    Pullback,
    /// Pullback that turns away from a sector; pair it with a hidden window
    /// on the model for a guaranteed hole.
    PullbackWithSkip,
    /// Sideways-looking camera that spins around the axis while advancing.
    Spiral,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pullback" => Ok(Self::Pullback),
            "pullback_with_skip" => Ok(Self::PullbackWithSkip),
            "spiral" => Ok(Self::Spiral),
            other => Err(Error::Config(format!("unknown trajectory kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// Axis arc length of the first camera position (cecum side, mm).
    pub s_start: f64,
    /// Axis arc length the withdrawal stops before (mm); `None` runs to the
    /// end of the tube.
    pub s_end: Option<f64>,
    /// Withdrawal per frame (mm).
    pub step: f64,
    /// Angle between the view direction and the backward axis (degrees);
    /// ignored by the spiral, which looks at 90°.
    pub tilt_deg: f64,
    /// View rotation around the axis per frame (degrees).
    pub spin_deg: f64,
    /// Sector to stay away from (pullback_with_skip only).
    pub skip: Option<SectorWindow>,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            s_start: 0.0,
            s_end: None,
            step: 1.0,
            tilt_deg: 55.0,
            spin_deg: 40.0,
            skip: None,
        }
    }
}

impl TrajectoryParams {
    pub fn end(&self, model_length: f64) -> f64 {
        self.s_end.unwrap_or(model_length)
    }

    /// `floor((s_end − s_start) / step)` frames.
    pub fn frame_count(&self, model_length: f64) -> usize {
        let end = self.end(model_length);
        if !(self.step > 0.0) || end <= self.s_start {
            return 0;
        }
        ((end - self.s_start) / self.step).floor() as usize
    }
}

/// Camera poses of a scripted scan, one per `step` of withdrawal.
pub fn scripted_trajectory(kind: TrajectoryKind, model: &TubeModel, params: &TrajectoryParams) -> Result<Vec<Pose>> {
    if !(params.step > 0.0) {
        return Err(Error::Config("trajectory step must be positive".into()));
    }
    let s_end = params.end(model.length());
    if params.s_start < 0.0 || s_end > model.length() + 1e-9 {
        return Err(Error::Config(format!(
            "trajectory range [{}, {}] exceeds the model length {}",
            params.s_start,
            s_end,
            model.length()
        )));
    }
    if kind == TrajectoryKind::PullbackWithSkip && params.skip.is_none() {
        return Err(Error::Config("pullback_with_skip needs a skip sector".into()));
    }
    let spin = params.spin_deg.to_radians();
    let tilt = params.tilt_deg.to_radians();
    (0..params.frame_count(model.length()))
        .map(|k| {
            let s = params.s_start + k as f64 * params.step;
            let (c, t, n, b) = model.frame_at(s);
            let mut a = wrap_tau(k as f64 * spin);
            let around = |a: f64| n * a.cos() + b * a.sin();
            let tangential = |a: f64| -n * a.sin() + b * a.cos();
            let (forward, up) = match kind {
                TrajectoryKind::Spiral => (around(a), tangential(a)),
                TrajectoryKind::Pullback | TrajectoryKind::PullbackWithSkip => {
                    if let Some(win) = params.skip.filter(|_| kind == TrajectoryKind::PullbackWithSkip) {
                        if faces_window(&win, s, a) {
                            a = wrap_tau(a + PI);
                        }
                    }
                    (-t * tilt.cos() + around(a) * tilt.sin(), tangential(a))
                }
            };
            Pose::look_along(c, forward, up).ok_or_else(|| Error::Config("degenerate view direction".into()))
        })
        .collect()
}

/// True when a camera at `s` viewing azimuth `a` would look into `win`: the
/// camera sees rows behind it, so the guard starts at the window and extends
/// past its end by a view depth.
fn faces_window(win: &SectorWindow, s: f64, a: f64) -> bool {
    const VIEW_DEPTH: f64 = 60.0;
    const MARGIN: f64 = PI / 4.0;
    if s < win.s_start || s > win.s_end + VIEW_DEPTH {
        return false;
    }
    let span = win.angular_span();
    wrap_tau(a - win.theta_start + MARGIN) < span + 2.0 * MARGIN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PilotMove {
    #[serde(rename = "advance")]
    Advance,
    #[serde(rename = "retract")]
    Retract,
    #[serde(rename = "yaw+")]
    YawRight,
    #[serde(rename = "yaw-")]
    YawLeft,
    #[serde(rename = "pitch+")]
    PitchUp,
    #[serde(rename = "pitch-")]
    PitchDown,
    #[serde(rename = "roll+")]
    RollRight,
    #[serde(rename = "roll-")]
    RollLeft,
}

/// Virtual endoscope steered through a tube. Advancing moves toward the
/// cecum (decreasing `s`); the camera's position and orientation relative to
/// the axis frame are carried along. Angles are in degrees, distances in mm.
#[derive(Debug, Clone)]
pub struct Pilot {
    s: f64,
    /// Camera rotation and offset in the axis frame `[n b t]` at `s`.
    local_rotation: Matrix3<f64>,
    local_offset: Vec3,
}

impl Pilot {
    /// A pilot holding `pose`, which must be inside the tube.
    pub fn new(model: &TubeModel, pose: &Pose) -> Result<Self> {
        let eye = pose.position();
        let s = model.axis().project(&eye)?.arc_length;
        if !model.contains(&eye) {
            return Err(Error::CameraOutsideTube { s });
        }
        let (c, _, _, _) = model.frame_at(s);
        let f = axis_frame(model, s);
        Ok(Self {
            s,
            local_rotation: f.transpose() * pose.rotation,
            local_offset: f.transpose() * (eye - c),
        })
    }

    /// On the axis at `s`, looking toward the cecum.
    pub fn at(model: &TubeModel, s: f64) -> Result<Self> {
        let (c, t, n, _) = model.frame_at(s);
        let pose = Pose::look_along(c, -t, n).expect("tangent and normal are orthogonal");
        Self::new(model, &pose)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn pose(&self, model: &TubeModel) -> Pose {
        let (c, _, _, _) = model.frame_at(self.s);
        let f = axis_frame(model, self.s);
        Pose::new(f * self.local_rotation, c + f * self.local_offset)
    }

    /// Applies one control. Moves that would leave the tube are rejected and
    /// leave the pilot unchanged.
    pub fn apply(&mut self, model: &TubeModel, mv: PilotMove, magnitude: f64) -> Result<Pose> {
        let mut next = self.clone();
        let angle = magnitude.to_radians();
        match mv {
            PilotMove::Advance => next.s -= magnitude,
            PilotMove::Retract => next.s += magnitude,
            PilotMove::YawRight => next.turn(&Vec3::y(), angle),
            PilotMove::YawLeft => next.turn(&Vec3::y(), -angle),
            PilotMove::PitchUp => next.turn(&Vec3::x(), angle),
            PilotMove::PitchDown => next.turn(&Vec3::x(), -angle),
            PilotMove::RollRight => next.turn(&Vec3::z(), angle),
            PilotMove::RollLeft => next.turn(&Vec3::z(), -angle),
        }
        if next.s < 0.0 || next.s > model.length() {
            return Err(Error::CameraOutsideTube { s: next.s });
        }
        let pose = next.pose(model);
        if !model.contains(&pose.position()) {
            return Err(Error::CameraOutsideTube { s: next.s });
        }
        *self = next;
        Ok(pose)
    }

    /// Rotation about a camera axis (`x` pitch, `y` yaw, `z` roll).
    fn turn(&mut self, camera_axis: &Vec3, angle: f64) {
        self.local_rotation *= rotation_about(camera_axis, angle);
    }
}

fn axis_frame(model: &TubeModel, s: f64) -> Matrix3<f64> {
    let (_, t, n, b) = model.frame_at(s);
    Matrix3::from_columns(&[n, b, t])
}
