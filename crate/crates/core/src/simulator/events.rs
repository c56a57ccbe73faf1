//! Rendering scripted scans and turning them into session event streams.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frames::{Intrinsics, PosedFrame};
use crate::geometry::{rotation_about, Pose, Vec3};
use crate::session::SessionEvent;
use crate::unfolding::UnfoldConfig;

use super::{OracleCoverage, TubeModel};

/// Upstream disturbance applied to a frame stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    /// Tracking restarts at `at_frame` in a fresh segment whose poses are
    /// off by a rigid world transform until a loop closure.
    TrackingLoss {
        at_frame: u64,
        new_segment: u32,
        rotation_deg: f64,
        translation: [f64; 3],
    },
    /// The lost segment is merged back with its true poses before `at_frame`.
    LoopClosure { at_frame: u64 },
    /// Every delivered pose is jittered before `at_frame`: translation
    /// uniform in `±sigma_mm` per axis, rotation uniform in `±sigma_deg`
    /// about a random axis.
    PoseNoise {
        at_frame: u64,
        sigma_mm: f64,
        sigma_deg: f64,
        seed: u64,
    },
}

impl Injection {
    pub fn at_frame(&self) -> u64 {
        match self {
            Self::TrackingLoss { at_frame, .. } | Self::LoopClosure { at_frame } | Self::PoseNoise { at_frame, .. } => {
                *at_frame
            }
        }
    }
}

/// Frames rendered at their true poses (all in segment 0) with the oracle
/// coverage of everything they saw.
#[derive(Debug, Clone)]
pub struct ScriptedScan {
    pub frames: Vec<PosedFrame>,
    pub oracle: OracleCoverage,
}

impl ScriptedScan {
    pub fn render(model: &TubeModel, intr: &Intrinsics, poses: &[Pose], unfold: &UnfoldConfig, fps: f64) -> Result<Self> {
        let mut frames = Vec::with_capacity(poses.len());
        let oracle = Self::render_each(model, intr, poses, unfold, fps, |f| {
            frames.push(f);
            Ok(())
        })?;
        Ok(Self { frames, oracle })
    }

    /// Renders in small parallel batches and hands frames to `sink` in order,
    /// so a long scan never holds more than one batch of views.
    pub fn render_each(
        model: &TubeModel,
        intr: &Intrinsics,
        poses: &[Pose],
        unfold: &UnfoldConfig,
        fps: f64,
        mut sink: impl FnMut(PosedFrame) -> Result<()>,
    ) -> Result<OracleCoverage> {
        const BATCH: usize = 16;
        let mut oracle = OracleCoverage::new(model.length(), unfold);
        for (b, chunk) in poses.chunks(BATCH).enumerate() {
            let views = chunk
                .par_iter()
                .map(|p| model.render(p, intr))
                .collect::<Result<Vec<_>>>()?;
            for (i, (view, pose)) in views.into_iter().zip(chunk).enumerate() {
                let k = b * BATCH + i;
                oracle.mark_view(&view);
                sink(view.into_frame(k as u64, k as f64 / fps, *pose, 0))?;
            }
        }
        Ok(oracle)
    }
}

/// Applies `injections` to a stream of frames carrying true poses.
/// Injections fire just before the frame with their `at_frame` id; those
/// past the last frame fire at the end. A loop closure without an open
/// tracking loss is ignored.
pub fn inject_events(frames: Vec<PosedFrame>, injections: &[Injection]) -> Vec<SessionEvent> {
    let mut pending: Vec<&Injection> = injections.iter().collect();
    pending.sort_by_key(|i| i.at_frame());
    let mut pending = pending.into_iter().peekable();

    let mut out = Vec::new();
    let mut truth: BTreeMap<u64, Pose> = BTreeMap::new();
    let mut estimate: BTreeMap<u64, Pose> = BTreeMap::new();
    let mut segment_of: BTreeMap<u64, u32> = BTreeMap::new();
    let mut segment = frames.first().map_or(0, |f| f.segment_id);
    // (lost segment, segment it split from, world perturbation)
    let mut lost: Option<(u32, u32, Pose)> = None;

    let fire = |inj: &Injection,
                    out: &mut Vec<SessionEvent>,
                    segment: &mut u32,
                    lost: &mut Option<(u32, u32, Pose)>,
                    truth: &BTreeMap<u64, Pose>,
                    estimate: &mut BTreeMap<u64, Pose>,
                    segment_of: &mut BTreeMap<u64, u32>| match inj {
        Injection::TrackingLoss {
            at_frame,
            new_segment,
            rotation_deg,
            translation,
        } => {
            let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
            let r = rotation_about(&axis, rotation_deg.to_radians());
            out.push(SessionEvent::SegmentSplit {
                new_segment: *new_segment,
                at_frame: *at_frame,
            });
            *lost = Some((*new_segment, lost.map_or(*segment, |l| l.1), Pose::new(r, Vec3::from(*translation))));
            *segment = *new_segment;
        }
        Injection::LoopClosure { .. } => {
            if let Some((from, into, _)) = lost.take() {
                let poses: BTreeMap<u64, Pose> = segment_of
                    .iter()
                    .filter(|(_, s)| **s == from)
                    .map(|(id, _)| (*id, truth[id]))
                    .collect();
                for (id, p) in &poses {
                    estimate.insert(*id, *p);
                    segment_of.insert(*id, into);
                }
                out.push(SessionEvent::SegmentMerged { from, into, poses });
                *segment = into;
            }
        }
        Injection::PoseNoise {
            sigma_mm,
            sigma_deg,
            seed,
            ..
        } => {
            if estimate.is_empty() {
                return;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut updated = BTreeMap::new();
            for (id, p) in estimate.iter_mut() {
                let mut jitter = |s: f64| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
                let dt = Vec3::new(jitter(*sigma_mm), jitter(*sigma_mm), jitter(*sigma_mm));
                let axis = Vec3::new(jitter(1.0), jitter(1.0), jitter(1.0));
                let angle = jitter(sigma_deg.to_radians());
                let r = match axis.try_normalize(1e-9) {
                    Some(a) => rotation_about(&a, angle),
                    None => nalgebra::Matrix3::identity(),
                };
                *p = Pose::new(p.rotation * r, p.translation + dt);
                updated.insert(*id, *p);
            }
            out.push(SessionEvent::PosesUpdated(updated));
        }
    };

    for mut frame in frames {
        while let Some(inj) = pending.next_if(|i| i.at_frame() <= frame.frame_id) {
            fire(inj, &mut out, &mut segment, &mut lost, &truth, &mut estimate, &mut segment_of);
        }
        truth.insert(frame.frame_id, frame.pose);
        if let Some((_, _, perturbation)) = &lost {
            frame.pose = perturbation.compose(&frame.pose);
        }
        frame.segment_id = segment;
        estimate.insert(frame.frame_id, frame.pose);
        segment_of.insert(frame.frame_id, segment);
        out.push(SessionEvent::FrameArrived(frame));
    }
    for inj in pending {
        fire(inj, &mut out, &mut segment, &mut lost, &truth, &mut estimate, &mut segment_of);
    }
    out
}
