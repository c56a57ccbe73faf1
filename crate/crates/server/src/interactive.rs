//! A piloted endoscope feeding a live session: every control renders one
//! frame at the new pose and integrates it.

use colnav_core::config::Config;
use colnav_core::frames::Intrinsics;
use colnav_core::geometry::Pose;
use colnav_core::navigation::camera_marker;
use colnav_core::replay::{latest_compass, new_session, simulated_model};
use colnav_core::session::{Session, SessionEvent};
use colnav_core::simulator::{Pilot, PilotMove, TubeModel};
use colnav_core::unfolding::ComposedImage;
use colnav_core::{Error, Result};
use colnav_proto::{BandSpan, CompassJson, Marker, Move, RgbImage, ServerFrame, Stats, TileEncoder, WireMessage};

pub fn pilot_move(mv: Move) -> PilotMove {
    match mv {
        Move::Advance => PilotMove::Advance,
        Move::Retract => PilotMove::Retract,
        Move::YawRight => PilotMove::YawRight,
        Move::YawLeft => PilotMove::YawLeft,
        Move::PitchUp => PilotMove::PitchUp,
        Move::PitchDown => PilotMove::PitchDown,
        Move::RollRight => PilotMove::RollRight,
        Move::RollLeft => PilotMove::RollLeft,
    }
}

/// Everything one `ServerFrame` needs, before tile encoding.
#[derive(Debug, Clone)]
pub struct FrameState {
    pub seq: u64,
    pub view: (u32, u32, Vec<u8>),
    pub flat: ComposedImage,
    pub compass: CompassJson,
    pub marker: Option<Marker>,
    pub stats: Stats,
}

impl FrameState {
    /// The wire message, with the flattened image as a delta against what
    /// `enc` last sent.
    pub fn to_message(&self, enc: &mut TileEncoder) -> WireMessage {
        let (w, h, rgb) = &self.view;
        WireMessage::ServerFrame(Box::new(ServerFrame {
            seq: self.seq,
            view: RgbImage::encode(*w, *h, rgb),
            tiles: enc.encode(self.flat.width as u32, self.flat.height as u32, &self.flat.rgb),
            compass: self.compass.clone(),
            marker: self.marker,
            stats: self.stats.clone(),
        }))
    }
}

pub struct Interactive {
    cfg: Config,
    model: TubeModel,
    intr: Intrinsics,
    pilot: Pilot,
    session: Session,
    poses: Vec<Pose>,
}

impl Interactive {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let model = simulated_model(&cfg)?;
        let intr = cfg.camera.intrinsics()?;
        let pilot = Pilot::at(&model, cfg.pilot.start(model.length()))?;
        let session = new_session(&cfg, intr);
        Ok(Self {
            cfg,
            model,
            intr,
            pilot,
            session,
            poses: Vec::new(),
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn model(&self) -> &TubeModel {
        &self.model
    }

    pub fn s(&self) -> f64 {
        self.pilot.s()
    }

    /// Poses of every captured frame, in order.
    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Steers, then captures. A move that would leave the tube is an error
    /// and captures nothing.
    pub fn control(&mut self, mv: Move, magnitude: Option<f64>) -> Result<FrameState> {
        let m = magnitude.unwrap_or(if mv.is_translation() {
            self.cfg.pilot.step_mm
        } else {
            self.cfg.pilot.step_deg
        });
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::OutOfRange {
                what: "control magnitude",
                value: m,
            });
        }
        self.pilot.apply(&self.model, pilot_move(mv), m)?;
        self.capture()
    }

    /// Renders the current pose and integrates it as the next frame.
    pub fn capture(&mut self) -> Result<FrameState> {
        let pose = self.pilot.pose(&self.model);
        let view = self.model.render(&pose, &self.intr)?;
        let id = self.poses.len() as u64;
        let frame = view.into_frame(id, id as f64 / self.cfg.scan.fps, pose, 0);
        let rgb: Vec<u8> = frame.color.iter().flatten().copied().collect();
        self.session.handle_event(SessionEvent::FrameArrived(frame))?;
        self.poses.push(pose);
        Ok(self.state(rgb))
    }

    fn state(&self, view_rgb: Vec<u8>) -> FrameState {
        let snapshot = self.session.image().snapshot();
        let flat = snapshot.compose();
        let compass = match latest_compass(&self.session, &self.cfg) {
            Some((_, segment, Ok(c))) => CompassJson {
                ticks: c.ticks,
                camera_row: Some(c.camera_row),
                band: Some(segment),
                offset_rad: Some(c.offset_rad),
                stale: None,
            },
            Some((_, _, Err(e))) => CompassJson {
                ticks: vec![false; self.cfg.navigation.n_ticks],
                camera_row: None,
                band: None,
                offset_rad: None,
                stale: Some(e.to_string()),
            },
            None => CompassJson {
                ticks: vec![false; self.cfg.navigation.n_ticks],
                camera_row: None,
                band: None,
                offset_rad: None,
                stale: Some("no frames".into()),
            },
        };
        let marker = self.session.latest().and_then(|(_, segment, pose)| {
            let cl = self.session.centerline(segment)?;
            let m = camera_marker(cl, &pose, segment, &self.cfg.unfold).ok()?;
            let place = flat.layout.iter().find(|p| p.segment_id == segment)?;
            let row = place.row_start as i64 + m.row;
            (m.row >= 0 && row < place.row_end as i64).then_some(Marker {
                band: segment,
                row: row as u32,
                col: m.col as u32,
            })
        });
        let cov = self.session.image().coverage();
        let stats = Stats {
            coverage_pct: cov.coverage_pct,
            scanned_length: cov.scanned_length,
            frames: self.session.frame_count(),
            pending: self.session.pending_len(),
            s_mm: self.pilot.s(),
            bands: flat
                .layout
                .iter()
                .map(|p| BandSpan {
                    segment: p.segment_id,
                    row_start: p.row_start as u32,
                    row_end: p.row_end as u32,
                })
                .collect(),
        };
        FrameState {
            seq: 0,
            view: (self.intr.width as u32, self.intr.height as u32, view_rgb),
            flat,
            compass,
            marker,
            stats,
        }
    }
}
