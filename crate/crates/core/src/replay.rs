//! Offline drivers: writing simulated frame streams and replaying streams
//! through a session into reports and exports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frames::{Intrinsics, PosedFrame};
use crate::geometry::Pose;
use crate::io::{write_event_log, EventRecord, FrameStream, FrameStreamWriter, Manifest, EVENTS, ORACLE};
use crate::metrics::{categorize, CategoryLabel};
use crate::navigation::{compute_compass, CompassState};
use crate::session::{Session, SessionEvent};
use crate::simulator::{inject_events, scripted_trajectory, Injection, ScriptedScan, TrajectoryKind, TubeModel};

pub const REPORT: &str = "report.json";
pub const COMPASS_LOG: &str = "compass.jsonl";

pub fn new_session(cfg: &Config, intrinsics: Intrinsics) -> Session {
    Session::new(intrinsics, cfg.centerline, cfg.unfold, cfg.session)
}

/// The tube `simulate` scans: the configured model, with the skip sector
/// hidden for `pullback_with_skip` so that the oracle holds an exact hole.
pub fn simulated_model(cfg: &Config) -> Result<TubeModel> {
    let model = TubeModel::new(cfg.tube.clone())?;
    Ok(match (cfg.scan.kind, cfg.trajectory.skip) {
        (TrajectoryKind::PullbackWithSkip, Some(w)) => model.with_hidden(vec![w]),
        _ => model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub frames: usize,
    pub events: usize,
    pub oracle_rows: usize,
}

/// Writes the scripted scan of `cfg` to `out`: frame stream, `events.jsonl`,
/// `oracle.bin` and the effective configuration as `config.txt`. Frames carry
/// the delivered (possibly perturbed) poses and segments.
pub fn simulate(cfg: &Config, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let model = simulated_model(cfg)?;
    let intr = cfg.camera.intrinsics()?;
    let poses = scripted_trajectory(cfg.scan.kind, &model, &cfg.trajectory)?;
    if poses.is_empty() {
        return Err(Error::Config("trajectory has no frames".into()));
    }
    let injections: Vec<Injection> = cfg
        .scan
        .injections
        .iter()
        .map(|inj| match inj {
            Injection::PoseNoise {
                at_frame,
                sigma_mm,
                sigma_deg,
                seed,
            } => Injection::PoseNoise {
                at_frame: *at_frame,
                sigma_mm: *sigma_mm,
                sigma_deg: *sigma_deg,
                seed: seed.wrapping_add(cfg.scan.seed),
            },
            other => other.clone(),
        })
        .collect();

    // Injection only touches poses and segments, so it runs on raster-free
    // frames; the rasters are rendered afterwards at the true poses.
    let skeleton: Vec<PosedFrame> = poses
        .iter()
        .enumerate()
        .map(|(k, p)| PosedFrame {
            frame_id: k as u64,
            timestamp: k as f64 / cfg.scan.fps,
            width: 0,
            height: 0,
            color: Vec::new(),
            depth: Vec::new(),
            pose: *p,
            segment_id: 0,
        })
        .collect();
    let events = inject_events(skeleton, &injections);
    let delivered: BTreeMap<u64, (Pose, u32)> = events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::FrameArrived(f) => Some((f.frame_id, (f.pose, f.segment_id))),
            _ => None,
        })
        .collect();

    let manifest = Manifest {
        intrinsics: intr,
        depth_scale: cfg.scan.depth_scale,
    };
    let mut writer = FrameStreamWriter::create(out, manifest)?;
    let oracle = ScriptedScan::render_each(&model, &intr, &poses, &cfg.unfold, cfg.scan.fps, |mut frame| {
        let (pose, segment) = delivered[&frame.frame_id];
        frame.pose = pose;
        frame.segment_id = segment;
        writer.write(&frame)
    })?;
    writer.finish()?;

    let records: Vec<EventRecord> = events.iter().map(EventRecord::from_event).collect();
    write_event_log(BufWriter::new(File::create(out.join(EVENTS))?), &records)?;
    let mut o = BufWriter::new(File::create(out.join(ORACLE))?);
    oracle.write(&mut o)?;
    o.flush()?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(SimulateSummary {
        frames: poses.len(),
        events: records.len(),
        oracle_rows: oracle.n_rows,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Record the compass after every frame.
    pub compass: bool,
    /// Leave wall-clock measurements out of the report.
    pub omit_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantReport {
    /// 1..=4; quadrant q covers columns `[(q-1)·n/4, q·n/4)`.
    pub quadrant: usize,
    pub coverage_pct: f64,
    pub category: CategoryLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub segment: u32,
    pub coverage_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Frames per second over the event stream: frame loading, integration,
    /// refits and queued re-integration. The final settle is excluded.
    pub fps: f64,
    pub stream_seconds: f64,
    pub settle_seconds: f64,
    pub worst_event_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub coverage_pct: f64,
    pub scanned_length: f64,
    pub quadrants: Vec<QuadrantReport>,
    pub per_band: Vec<BandReport>,
    pub frames: usize,
    pub events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    pub config: Map<String, Value>,
}

impl Report {
    pub fn of(session: &Session, cfg: &Config, events: usize, timing: Option<Timing>) -> Result<Self> {
        let image = session.image();
        let stats = image.coverage();
        let quadrants = image
            .quadrant_coverage()
            .iter()
            .enumerate()
            .map(|(q, pct)| {
                Ok(QuadrantReport {
                    quadrant: q + 1,
                    coverage_pct: *pct,
                    category: categorize(*pct)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            coverage_pct: stats.coverage_pct,
            scanned_length: stats.scanned_length,
            quadrants,
            per_band: stats
                .per_band
                .iter()
                .map(|(segment, pct)| BandReport {
                    segment: *segment,
                    coverage_pct: *pct,
                })
                .collect(),
            frames: session.frame_count(),
            events,
            timing,
            config: cfg.to_map(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassRecord {
    pub frame_id: u64,
    pub segment: u32,
    /// Camera-relative ticks; tick 0 is image-up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticks: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_row: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Compass for the most recent frame of the session.
pub fn latest_compass(session: &Session, cfg: &Config) -> Option<(u64, u32, Result<CompassState>)> {
    let (frame_id, segment, pose) = session.latest()?;
    let state = match session.centerline(segment) {
        Some(cl) => compute_compass(&session.image().snapshot(), segment, cl, &pose, &cfg.navigation),
        None => Err(Error::EmptyCenterline),
    };
    Some((frame_id, segment, state))
}

impl CompassRecord {
    pub fn new(frame_id: u64, segment: u32, state: &Result<CompassState>) -> Self {
        match state {
            Ok(c) => Self {
                frame_id,
                segment,
                ticks: Some(c.ticks.clone()),
                camera_row: Some(c.camera_row),
                offset_rad: Some(c.offset_rad),
                error: None,
            },
            Err(e) => Self {
                frame_id,
                segment,
                ticks: None,
                camera_row: None,
                offset_rad: None,
                error: Some(e.to_string()),
            },
        }
    }
}

pub struct ReplayOutcome {
    pub report: Report,
    pub compass: Vec<CompassRecord>,
    pub session: Session,
}

/// Runs every event of `stream` through a fresh session, then drains the
/// re-integration queue.
pub fn run_replay(stream: &FrameStream, cfg: &Config, opts: ReplayOptions) -> Result<ReplayOutcome> {
    cfg.validate()?;
    let records = stream.events()?;
    let mut session = new_session(cfg, stream.manifest().intrinsics);
    let mut compass = Vec::new();
    let mut worst = 0.0f64;
    let start = Instant::now();
    for record in &records {
        let t = Instant::now();
        let event = stream.resolve(record)?;
        let arrived = matches!(event, SessionEvent::FrameArrived(_));
        session.handle_event(event)?;
        if arrived && opts.compass {
            if let Some((frame_id, segment, state)) = latest_compass(&session, cfg) {
                compass.push(CompassRecord::new(frame_id, segment, &state));
            }
        }
        worst = worst.max(t.elapsed().as_secs_f64());
    }
    let stream_seconds = start.elapsed().as_secs_f64();
    let t = Instant::now();
    session.settle()?;
    let settle_seconds = t.elapsed().as_secs_f64();
    let timing = (!opts.omit_timing).then(|| Timing {
        fps: session.frame_count() as f64 / stream_seconds.max(1e-9),
        stream_seconds,
        settle_seconds,
        worst_event_ms: worst * 1e3,
    });
    let report = Report::of(&session, cfg, records.len(), timing)?;
    Ok(ReplayOutcome {
        report,
        compass,
        session,
    })
}

/// Writes `report.json`, the compass log (when recorded), the flattened
/// image export and one centerline dump per segment (`centerline.csv` for the
/// first, `centerline_<segment>.csv` for the rest).
pub fn write_outputs(out: &Path, outcome: &ReplayOutcome) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(REPORT), outcome.report.to_json())?;
    if !outcome.compass.is_empty() {
        let mut w = BufWriter::new(File::create(out.join(COMPASS_LOG))?);
        for r in &outcome.compass {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    outcome.session.image().snapshot().compose().export(out)?;
    for (i, segment) in outcome.session.segment_ids().into_iter().enumerate() {
        let Some(cl) = outcome.session.centerline(segment) else { continue };
        let name = if i == 0 {
            "centerline.csv".to_string()
        } else {
            format!("centerline_{segment}.csv")
        };
        let mut w = BufWriter::new(File::create(out.join(name))?);
        cl.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        Config::default()
            .with_overrides([
                ("camera.width", "64"),
                ("camera.height", "48"),
                ("tube.length", "60"),
                ("trajectory.step", "2"),
                ("unfold.stride", "1"),
            ])
            .unwrap()
    }

    #[test]
    fn simulate_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let summary = simulate(&cfg, dir.path()).unwrap();
        assert_eq!(summary.frames, 30);
        assert_eq!(summary.events, 30);
        let stream = FrameStream::open(dir.path()).unwrap();
        assert_eq!(stream.len(), 30);
        let outcome = run_replay(
            &stream,
            &cfg,
            ReplayOptions {
                compass: true,
                omit_timing: true,
            },
        )
        .unwrap();
        assert_eq!(outcome.report.frames, 30);
        assert_eq!(outcome.compass.len(), 30);
        assert!(outcome.report.timing.is_none());
        assert!(outcome.report.coverage_pct > 50.0, "{}", outcome.report.coverage_pct);
        let out = dir.path().join("out");
        write_outputs(&out, &outcome).unwrap();
        for f in ["report.json", "compass.jsonl", "flattened.png", "flattened.weight", "bands.txt", "centerline.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let back: Report = serde_json::from_str(&std::fs::read_to_string(out.join(REPORT)).unwrap()).unwrap();
        assert_eq!(back, outcome.report);
    }

    #[test]
    fn zero_length_trajectory_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small().with_overrides([("trajectory.s_end", "0")]).unwrap();
        assert!(matches!(simulate(&cfg, dir.path()), Err(Error::Config(_))));
    }
}
