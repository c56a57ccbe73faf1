//! On-disk frame streams and event logs.
//!
//! A frame stream is a directory holding `manifest` (`key=value`: width,
//! height, fx, fy, cx, cy, depth_scale), `NNNNNN.rgb` (8-bit RGB, row-major),
//! `NNNNNN.depth` (little-endian u16, row-major, `mm = raw / depth_scale`,
//! 0 = invalid) and `trajectory.csv` (frame_id, timestamp, 12 pose floats
//! `[R|t]` row-major, segment_id). An optional `events.jsonl` holds one
//! tagged session event per line; frames are referenced by id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Intrinsics, PosedFrame};
use crate::geometry::Pose;
use crate::session::SessionEvent;

pub const MANIFEST: &str = "manifest";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const EVENTS: &str = "events.jsonl";
pub const ORACLE: &str = "oracle.bin";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Manifest {
    pub intrinsics: Intrinsics,
    /// Raw depth units per millimetre.
    pub depth_scale: f64,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let i = &self.intrinsics;
        format!(
            "width={}\nheight={}\nfx={}\nfy={}\ncx={}\ncy={}\ndepth_scale={}\n",
            i.width, i.height, i.fx, i.fy, i.cx, i.cy, self.depth_scale
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {line:?} is not key=value")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("manifest lacks {k}")))?
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("manifest {k} is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("manifest lacks {k}")))?
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("manifest {k} is not an integer")))
        };
        let intrinsics = Intrinsics::new(
            num("fx")?,
            num("fy")?,
            num("cx")?,
            num("cy")?,
            int("width")?,
            int("height")?,
        )?;
        let depth_scale = num("depth_scale")?;
        if !(depth_scale > 0.0) {
            return Err(Error::Format("manifest depth_scale must be positive".into()));
        }
        Ok(Self {
            intrinsics,
            depth_scale,
        })
    }
}

/// One `trajectory.csv` row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub segment_id: u32,
}

fn frame_path(dir: &Path, frame_id: u64, ext: &str) -> PathBuf {
    dir.join(format!("{frame_id:06}.{ext}"))
}

/// Read access to a frame-stream directory; rasters load on demand.
#[derive(Debug, Clone)]
pub struct FrameStream {
    dir: PathBuf,
    manifest: Manifest,
    rows: Vec<TrajectoryRow>,
}

impl FrameStream {
    /// Opens `dir`. A missing directory, or one without a manifest and frame
    /// files, is [`Error::NoFrames`].
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.exists() {
            return Err(Error::NoFrames);
        }
        let manifest = Manifest::parse(&std::fs::read_to_string(manifest_path)?)?;
        let path = dir.join(TRAJECTORY);
        if !path.exists() {
            return Err(Error::NoFrames);
        }
        let rows = read_trajectory(BufReader::new(File::open(path)?))?;
        if rows.is_empty() {
            return Err(Error::NoFrames);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            rows,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, frame_id: u64) -> Option<&TrajectoryRow> {
        self.rows
            .binary_search_by_key(&frame_id, |r| r.frame_id)
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Loads the rasters of one row.
    pub fn load(&self, row: &TrajectoryRow) -> Result<PosedFrame> {
        let intr = &self.manifest.intrinsics;
        let n = intr.width * intr.height;
        let rgb = std::fs::read(frame_path(&self.dir, row.frame_id, "rgb"))?;
        let raw = std::fs::read(frame_path(&self.dir, row.frame_id, "depth"))?;
        if rgb.len() != 3 * n || raw.len() != 2 * n {
            return Err(Error::Format(format!(
                "frame {} rasters hold {} rgb and {} depth bytes, expected {} and {}",
                row.frame_id,
                rgb.len(),
                raw.len(),
                3 * n,
                2 * n
            )));
        }
        let scale = self.manifest.depth_scale;
        Ok(PosedFrame {
            frame_id: row.frame_id,
            timestamp: row.timestamp,
            width: intr.width,
            height: intr.height,
            color: rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            depth: raw
                .chunks_exact(2)
                .map(|b| (u16::from_le_bytes([b[0], b[1]]) as f64 / scale) as f32)
                .collect(),
            pose: row.pose,
            segment_id: row.segment_id,
        })
    }

    /// Session events of the stream: the event log when present, otherwise
    /// one `FrameArrived` per trajectory row.
    pub fn events(&self) -> Result<Vec<EventRecord>> {
        let path = self.dir.join(EVENTS);
        if path.exists() {
            read_event_log(BufReader::new(File::open(path)?))
        } else {
            Ok(self
                .rows
                .iter()
                .map(|r| EventRecord::FrameArrived { frame_id: r.frame_id })
                .collect())
        }
    }

    /// Resolves a record into a session event, loading frame rasters.
    pub fn resolve(&self, record: &EventRecord) -> Result<SessionEvent> {
        Ok(match record {
            EventRecord::FrameArrived { frame_id } => {
                let row = self
                    .row(*frame_id)
                    .ok_or_else(|| Error::Format(format!("event references frame {frame_id} missing from the trajectory")))?;
                SessionEvent::FrameArrived(self.load(row)?)
            }
            other => other.to_event_without_frames()?,
        })
    }
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        if fields.len() != 15 {
            return Err(Error::Format(format!(
                "trajectory line {}: expected 15 fields, found {}",
                i + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Format(format!("trajectory line {}: bad {what}", i + 1));
        let frame_id = fields[0].parse::<u64>().map_err(|_| bad("frame_id"))?;
        let timestamp = fields[1].parse::<f64>().map_err(|_| bad("timestamp"))?;
        let mut m = [0.0; 12];
        for (k, v) in m.iter_mut().enumerate() {
            *v = fields[2 + k].parse::<f64>().map_err(|_| bad("pose value"))?;
        }
        let segment_id = fields[14].parse::<u32>().map_err(|_| bad("segment_id"))?;
        if let Some(prev) = rows.last().map(|r: &TrajectoryRow| r.frame_id) {
            if frame_id <= prev {
                return Err(Error::Format(format!("trajectory line {}: frame ids must increase", i + 1)));
            }
        }
        rows.push(TrajectoryRow {
            frame_id,
            timestamp,
            pose: Pose::from_row_major(&m),
            segment_id,
        });
    }
    Ok(rows)
}

/// Writes a frame stream incrementally.
pub struct FrameStreamWriter {
    dir: PathBuf,
    manifest: Manifest,
    trajectory: BufWriter<File>,
}

impl FrameStreamWriter {
    pub fn create(dir: &Path, manifest: Manifest) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST), manifest.to_text())?;
        let mut trajectory = BufWriter::new(File::create(dir.join(TRAJECTORY))?);
        write!(trajectory, "frame_id,timestamp")?;
        for r in 0..3 {
            write!(trajectory, ",r{r}0,r{r}1,r{r}2,t{r}")?;
        }
        writeln!(trajectory, ",segment_id")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            trajectory,
        })
    }

    pub fn write(&mut self, frame: &PosedFrame) -> Result<()> {
        frame.check_dimensions(&self.manifest.intrinsics)?;
        let rgb: Vec<u8> = frame.color.iter().flatten().copied().collect();
        std::fs::write(frame_path(&self.dir, frame.frame_id, "rgb"), rgb)?;
        let scale = self.manifest.depth_scale;
        let mut raw = Vec::with_capacity(frame.depth.len() * 2);
        for d in &frame.depth {
            let v = (*d as f64 * scale).round();
            // Depths beyond the u16 range are stored as invalid.
            let v = if (0.0..=u16::MAX as f64).contains(&v) { v as u16 } else { 0 };
            raw.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(frame_path(&self.dir, frame.frame_id, "depth"), raw)?;
        write!(self.trajectory, "{},{}", frame.frame_id, frame.timestamp)?;
        for v in frame.pose.to_row_major() {
            write!(self.trajectory, ",{v}")?;
        }
        writeln!(self.trajectory, ",{}", frame.segment_id)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.trajectory.flush()?;
        Ok(())
    }
}

/// One line of `events.jsonl`. Poses are `[R|t]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventRecord {
    FrameArrived {
        frame_id: u64,
    },
    PosesUpdated {
        poses: Vec<PoseRecord>,
    },
    SegmentSplit {
        new_segment: u32,
        at_frame: u64,
    },
    SegmentMerged {
        from: u32,
        into: u32,
        poses: Vec<PoseRecord>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: u64,
    pub pose: [f64; 12],
}

fn pose_table(poses: &BTreeMap<u64, Pose>) -> Vec<PoseRecord> {
    poses
        .iter()
        .map(|(id, p)| PoseRecord {
            frame_id: *id,
            pose: p.to_row_major(),
        })
        .collect()
}

fn pose_map(table: &[PoseRecord]) -> BTreeMap<u64, Pose> {
    table.iter().map(|r| (r.frame_id, Pose::from_row_major(&r.pose))).collect()
}

impl EventRecord {
    pub fn from_event(event: &SessionEvent) -> Self {
        match event {
            SessionEvent::FrameArrived(f) => Self::FrameArrived { frame_id: f.frame_id },
            SessionEvent::PosesUpdated(p) => Self::PosesUpdated { poses: pose_table(p) },
            SessionEvent::SegmentSplit { new_segment, at_frame } => Self::SegmentSplit {
                new_segment: *new_segment,
                at_frame: *at_frame,
            },
            SessionEvent::SegmentMerged { from, into, poses } => Self::SegmentMerged {
                from: *from,
                into: *into,
                poses: pose_table(poses),
            },
        }
    }

    /// The event for every variant except `FrameArrived`, which needs the
    /// frame rasters.
    pub fn to_event_without_frames(&self) -> Result<SessionEvent> {
        Ok(match self {
            Self::FrameArrived { frame_id } => {
                return Err(Error::Format(format!("frame_arrived {frame_id} needs its frame")))
            }
            Self::PosesUpdated { poses } => SessionEvent::PosesUpdated(pose_map(poses)),
            Self::SegmentSplit { new_segment, at_frame } => SessionEvent::SegmentSplit {
                new_segment: *new_segment,
                at_frame: *at_frame,
            },
            Self::SegmentMerged { from, into, poses } => SessionEvent::SegmentMerged {
                from: *from,
                into: *into,
                poses: pose_map(poses),
            },
        })
    }
}

pub fn read_event_log<R: BufRead>(input: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("event log line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_event_log<W: Write>(mut out: W, records: &[EventRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
