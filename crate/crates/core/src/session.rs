//! Event-driven session: frame/segment bookkeeping, centerline refits and
//! the re-integration queue that keeps the flattened image consistent with
//! the latest poses.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::centerline::{filter_outliers, fit_centerline, Centerline, CenterlineConfig, TrajectoryGraph};
use crate::error::{Error, Result};
use crate::frames::{backproject_camera, CameraCloud, Intrinsics, PosedFrame};
use crate::geometry::{geodesic_angle, Pose, Vec3};
use crate::unfolding::{map_cloud, FlattenedImage, ImageSnapshot, UnfoldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Frames re-integrated per incoming frame.
    pub reintegration_budget: usize,
    /// Rotation weight of the pose delta (mm per radian).
    pub pose_lambda: f64,
    /// Centerline motion (mm) above which a refit counts as a relocation.
    pub move_threshold: f64,
    /// Length of the straight stand-in centerline used until a segment spans
    /// two bins (mm).
    pub provisional_length: f64,
    /// Capacity of the event queue in front of the session loop.
    pub queue_capacity: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            reintegration_budget: 10,
            pose_lambda: 20.0,
            move_threshold: 2.0,
            provisional_length: 100.0,
            queue_capacity: 64,
        }
    }
}

/// Upstream notifications that drive the session.
#[derive(Debug, Clone)]
pub enum SessionEvent {
    FrameArrived(PosedFrame),
    PosesUpdated(BTreeMap<u64, Pose>),
    SegmentSplit {
        new_segment: u32,
        at_frame: u64,
    },
    SegmentMerged {
        from: u32,
        into: u32,
        poses: BTreeMap<u64, Pose>,
    },
}

/// What a call to [`Session::handle_event`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    BandOpened { segment: u32 },
    BandRemoved { segment: u32 },
    Integrated { frame: u64 },
    Deintegrated { frame: u64 },
    Reintegrated { frame: u64 },
    CenterlineRefit { segment: u32 },
    Enqueued { frame: u64 },
}

/// `‖t_new − t_old‖ + λ · angle(R_old, R_new)`.
pub fn pose_delta(old: &Pose, new: &Pose, lambda: f64) -> f64 {
    (new.translation - old.translation).norm() + lambda * geodesic_angle(&old.rotation, &new.rotation)
}

#[derive(Debug, Clone)]
struct Mapped {
    pose: Pose,
    segment: u32,
    centerline: Arc<Centerline>,
    sample_range: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct FrameRecord {
    cloud: Arc<CameraCloud>,
    pose: Pose,
    segment: u32,
    mapped: Option<Mapped>,
}

#[derive(Debug, Clone, Default)]
struct SegmentState {
    centerline: Option<Arc<Centerline>>,
    provisional: bool,
    since_fit: usize,
}

/// Immutable view of the session for readers.
#[derive(Debug, Clone)]
pub struct SessionSnapshot {
    pub image: ImageSnapshot,
    pub centerlines: BTreeMap<u32, Arc<Centerline>>,
    pub latest: Option<(u64, u32, Pose)>,
    pub frames: usize,
    pub pending: usize,
}

#[derive(Debug, Clone)]
pub struct Session {
    centerline_cfg: CenterlineConfig,
    unfold_cfg: UnfoldConfig,
    cfg: SessionConfig,
    intrinsics: Intrinsics,
    frames: BTreeMap<u64, FrameRecord>,
    segments: BTreeMap<u32, SegmentState>,
    image: FlattenedImage,
    pending: BTreeMap<u64, f64>,
    latest: Option<u64>,
}

impl Session {
    pub fn new(
        intrinsics: Intrinsics,
        centerline_cfg: CenterlineConfig,
        unfold_cfg: UnfoldConfig,
        cfg: SessionConfig,
    ) -> Self {
        Self {
            centerline_cfg,
            unfold_cfg,
            cfg,
            intrinsics,
            frames: BTreeMap::new(),
            segments: BTreeMap::new(),
            image: FlattenedImage::new(unfold_cfg),
            pending: BTreeMap::new(),
            latest: None,
        }
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn image(&self) -> &FlattenedImage {
        &self.image
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn segment_ids(&self) -> Vec<u32> {
        self.image.bands().map(|b| b.segment_id).collect()
    }

    pub fn segment_of(&self, frame_id: u64) -> Option<u32> {
        self.frames.get(&frame_id).map(|r| r.segment)
    }

    pub fn pose_of(&self, frame_id: u64) -> Option<Pose> {
        self.frames.get(&frame_id).map(|r| r.pose)
    }

    pub fn centerline(&self, segment: u32) -> Option<&Arc<Centerline>> {
        self.segments.get(&segment).and_then(|s| s.centerline.as_ref())
    }

    /// Latest arrived frame with its segment and current pose.
    pub fn latest(&self) -> Option<(u64, u32, Pose)> {
        let id = self.latest?;
        let r = self.frames.get(&id)?;
        Some((id, r.segment, r.pose))
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Queued frames of each segment, largest delta first.
    pub fn queue(&self) -> BTreeMap<u32, Vec<(u64, f64)>> {
        let mut out: BTreeMap<u32, Vec<(u64, f64)>> = BTreeMap::new();
        for (id, d) in &self.pending {
            out.entry(self.frames[id].segment).or_default().push((*id, *d));
        }
        for list in out.values_mut() {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        out
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            image: self.image.snapshot(),
            centerlines: self
                .segments
                .iter()
                .filter_map(|(id, s)| s.centerline.clone().map(|c| (*id, c)))
                .collect(),
            latest: self.latest(),
            frames: self.frames.len(),
            pending: self.pending.len(),
        }
    }

    pub fn handle_event(&mut self, event: SessionEvent) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        match event {
            SessionEvent::FrameArrived(frame) => self.frame_arrived(frame, &mut actions)?,
            SessionEvent::PosesUpdated(poses) => self.poses_updated(poses, &mut actions)?,
            SessionEvent::SegmentSplit { new_segment, at_frame } => {
                self.segment_split(new_segment, at_frame, &mut actions)?
            }
            SessionEvent::SegmentMerged { from, into, poses } => self.segment_merged(from, into, poses, &mut actions)?,
        }
        Ok(actions)
    }

    fn open_segment(&mut self, id: u32, actions: &mut Vec<Action>) {
        self.segments.insert(id, SegmentState::default());
        self.image.add_band(id);
        actions.push(Action::BandOpened { segment: id });
    }

    fn frame_arrived(&mut self, frame: PosedFrame, actions: &mut Vec<Action>) -> Result<()> {
        if self.frames.contains_key(&frame.frame_id) {
            return Err(Error::DuplicateFrame(frame.frame_id));
        }
        if !self.segments.contains_key(&frame.segment_id) {
            if !self.segments.is_empty() {
                return Err(Error::UnknownSegment(frame.segment_id));
            }
            self.open_segment(frame.segment_id, actions);
        }
        let cloud = backproject_camera(&frame, &self.intrinsics, self.unfold_cfg.stride)?;
        let id = frame.frame_id;
        let seg = frame.segment_id;
        self.frames.insert(
            id,
            FrameRecord {
                cloud: Arc::new(cloud),
                pose: frame.pose,
                segment: seg,
                mapped: None,
            },
        );
        self.latest = Some(id);
        let state = self.segments.get_mut(&seg).expect("segment opened above");
        state.since_fit += 1;
        if state.centerline.is_none() || state.provisional || state.since_fit >= self.centerline_cfg.recompute_every {
            self.refit(seg, actions);
        }
        self.integrate_frame(id)?;
        actions.push(Action::Integrated { frame: id });
        self.drain_into(self.cfg.reintegration_budget, actions)?;
        Ok(())
    }

    fn poses_updated(&mut self, poses: BTreeMap<u64, Pose>, actions: &mut Vec<Action>) -> Result<()> {
        if let Some(id) = poses.keys().find(|id| !self.frames.contains_key(id)) {
            return Err(Error::UnknownFrame(*id));
        }
        let mut touched: Vec<u32> = Vec::new();
        for (id, pose) in &poses {
            let r = self.frames.get_mut(id).expect("checked above");
            r.pose = *pose;
            touched.push(r.segment);
        }
        touched.sort_unstable();
        touched.dedup();
        for seg in touched {
            self.refit(seg, actions);
        }
        for id in poses.keys() {
            self.enqueue_if_stale(*id, actions);
        }
        Ok(())
    }

    fn segment_split(&mut self, new_segment: u32, at_frame: u64, actions: &mut Vec<Action>) -> Result<()> {
        if self.segments.contains_key(&new_segment) {
            return Err(Error::SegmentExists(new_segment));
        }
        self.open_segment(new_segment, actions);
        let Some(old) = self.frames.get(&at_frame).map(|r| r.segment) else {
            // The split precedes its first frame: only the band opens.
            return Ok(());
        };
        let moved: Vec<u64> = self
            .frames
            .range(at_frame..)
            .filter(|(_, r)| r.segment == old)
            .map(|(id, _)| *id)
            .collect();
        self.move_frames(&moved, new_segment, actions)?;
        self.refit(old, actions);
        self.refit(new_segment, actions);
        for id in &moved {
            self.integrate_frame(*id)?;
            actions.push(Action::Reintegrated { frame: *id });
        }
        self.enqueue_segment(old, actions);
        Ok(())
    }

    fn segment_merged(
        &mut self,
        from: u32,
        into: u32,
        poses: BTreeMap<u64, Pose>,
        actions: &mut Vec<Action>,
    ) -> Result<()> {
        for seg in [from, into] {
            if !self.segments.contains_key(&seg) {
                return Err(Error::UnknownSegment(seg));
            }
        }
        if let Some(id) = poses.keys().find(|id| !self.frames.contains_key(id)) {
            return Err(Error::UnknownFrame(*id));
        }
        let mut touched: Vec<u32> = Vec::new();
        for (id, pose) in &poses {
            let r = self.frames.get_mut(id).expect("checked above");
            r.pose = *pose;
            touched.push(r.segment);
        }
        if from == into {
            touched.sort_unstable();
            touched.dedup();
            for seg in touched {
                self.refit(seg, actions);
                self.enqueue_segment(seg, actions);
            }
            return Ok(());
        }
        let moved: Vec<u64> = self
            .frames
            .iter()
            .filter(|(_, r)| r.segment == from)
            .map(|(id, _)| *id)
            .collect();
        self.move_frames(&moved, into, actions)?;
        self.segments.remove(&from);
        self.image.remove_band(from)?;
        actions.push(Action::BandRemoved { segment: from });
        self.refit(into, actions);
        for id in &moved {
            self.integrate_frame(*id)?;
            actions.push(Action::Reintegrated { frame: *id });
        }
        touched.retain(|s| *s != from);
        touched.push(into);
        touched.sort_unstable();
        touched.dedup();
        for seg in touched {
            if seg != into {
                self.refit(seg, actions);
            }
            self.enqueue_segment(seg, actions);
        }
        Ok(())
    }

    /// De-integrates `ids` and assigns them to `segment`.
    fn move_frames(&mut self, ids: &[u64], segment: u32, actions: &mut Vec<Action>) -> Result<()> {
        for id in ids {
            if self.image.is_integrated(*id) {
                self.image.deintegrate(*id)?;
                actions.push(Action::Deintegrated { frame: *id });
            }
            self.pending.remove(id);
            let r = self.frames.get_mut(id).expect("ids come from the frame table");
            r.segment = segment;
            r.mapped = None;
        }
        Ok(())
    }

    /// Recomputes a segment's centerline from its current frame positions.
    /// Frames whose mapping went stale are enqueued.
    fn refit(&mut self, segment: u32, actions: &mut Vec<Action>) {
        let positions: BTreeMap<u64, (Vec3, Vec3)> = self
            .frames
            .iter()
            .filter(|(_, r)| r.segment == segment)
            .map(|(id, r)| (*id, (r.pose.position(), r.pose.optical_axis())))
            .collect();
        let fitted = segment_centerline(&positions, &self.centerline_cfg, &self.cfg);
        let Some(state) = self.segments.get_mut(&segment) else { return };
        state.since_fit = 0;
        let Some((cl, provisional)) = fitted else {
            state.centerline = None;
            state.provisional = false;
            return;
        };
        state.provisional = provisional;
        if state.centerline.as_ref().is_some_and(|old| old.same_geometry(&cl)) {
            return;
        }
        let rows = self.unfold_cfg.rows_for_length(cl.total_length());
        state.centerline = Some(Arc::new(cl));
        self.image
            .set_extent(segment, rows)
            .expect("every segment state has a band");
        actions.push(Action::CenterlineRefit { segment });
        self.enqueue_segment(segment, actions);
    }

    fn enqueue_segment(&mut self, segment: u32, actions: &mut Vec<Action>) {
        let ids: Vec<u64> = self
            .frames
            .iter()
            .filter(|(_, r)| r.segment == segment)
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            self.enqueue_if_stale(id, actions);
        }
    }

    /// Queues a frame whose integrated pose, segment or centerline differs
    /// from the current one. The priority is the pose delta plus the motion
    /// of the centerline samples the frame was mapped through.
    fn enqueue_if_stale(&mut self, id: u64, actions: &mut Vec<Action>) {
        let r = &self.frames[&id];
        let Some(m) = &r.mapped else { return };
        let current = self.segments.get(&r.segment).and_then(|s| s.centerline.as_ref());
        let same_centerline = current.is_some_and(|c| Arc::ptr_eq(c, &m.centerline));
        if m.segment == r.segment && m.pose == r.pose && same_centerline {
            self.pending.remove(&id);
            return;
        }
        let mut delta = pose_delta(&m.pose, &r.pose, self.cfg.pose_lambda);
        if m.segment != r.segment {
            delta = f64::INFINITY;
        } else if !same_centerline {
            delta += match (current, m.sample_range) {
                // Points past the old end may now map onto the extended curve.
                (Some(c), Some((a, b))) if b + 1 < m.centerline.len() => {
                    c.sample_delta(&m.centerline, a..=b, self.cfg.pose_lambda)
                }
                _ => f64::INFINITY,
            };
        }
        if self.pending.insert(id, delta).is_none() {
            actions.push(Action::Enqueued { frame: id });
        }
    }

    /// Maps a frame with its current pose and centerline and integrates it.
    fn integrate_frame(&mut self, id: u64) -> Result<()> {
        let r = &self.frames[&id];
        let seg = r.segment;
        let cl = self
            .segments
            .get(&seg)
            .and_then(|s| s.centerline.clone())
            .ok_or(Error::EmptyCenterline)?;
        let world = r.cloud.to_world(&r.pose);
        let mapping = map_cloud(&world, &cl, &self.unfold_cfg)?;
        self.image.integrate(id, seg, &mapping.samples)?;
        let pose = r.pose;
        self.frames.get_mut(&id).expect("present").mapped = Some(Mapped {
            pose,
            segment: seg,
            centerline: cl,
            sample_range: mapping.sample_range,
        });
        self.pending.remove(&id);
        Ok(())
    }

    fn reintegrate(&mut self, id: u64) -> Result<()> {
        if self.image.is_integrated(id) {
            self.image.deintegrate(id)?;
        }
        self.integrate_frame(id)
    }

    /// Re-integrates up to `budget` queued frames, largest delta first
    /// (ties by frame id). Returns the number processed.
    pub fn drain_reintegration(&mut self, budget: usize) -> Result<usize> {
        let mut actions = Vec::new();
        self.drain_into(budget, &mut actions)
    }

    fn drain_into(&mut self, budget: usize, actions: &mut Vec<Action>) -> Result<usize> {
        if budget == 0 || self.pending.is_empty() {
            return Ok(0);
        }
        let mut order: Vec<(u64, f64)> = self.pending.iter().map(|(id, d)| (*id, *d)).collect();
        if budget < order.len() {
            order.select_nth_unstable_by(budget, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            order.truncate(budget);
        }
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (id, _) in &order {
            self.reintegrate(*id)?;
            actions.push(Action::Reintegrated { frame: *id });
        }
        Ok(order.len())
    }

    /// Refits every segment with frames added since its last fit, then drains
    /// the queue completely. Afterwards the image equals [`Session::rebuilt`].
    pub fn settle(&mut self) -> Result<usize> {
        let mut actions = Vec::new();
        let segs: Vec<u32> = self.segments.keys().copied().collect();
        for seg in segs {
            if self.segments[&seg].since_fit > 0 {
                self.refit(seg, &mut actions);
            }
        }
        self.drain_into(usize::MAX, &mut actions)
    }

    /// A fresh session holding the same frames, final poses and segments,
    /// fitted and integrated from scratch.
    pub fn rebuilt(&self) -> Result<Session> {
        let mut fresh = Session::new(self.intrinsics, self.centerline_cfg, self.unfold_cfg, self.cfg);
        let mut scratch = Vec::new();
        for seg in self.segment_ids() {
            fresh.open_segment(seg, &mut scratch);
        }
        for (id, r) in &self.frames {
            fresh.frames.insert(
                *id,
                FrameRecord {
                    cloud: r.cloud.clone(),
                    pose: r.pose,
                    segment: r.segment,
                    mapped: None,
                },
            );
        }
        fresh.latest = self.latest;
        for seg in self.segment_ids() {
            fresh.refit(seg, &mut scratch);
        }
        let ids: Vec<u64> = fresh.frames.keys().copied().collect();
        for id in ids {
            fresh.integrate_frame(id)?;
        }
        Ok(fresh)
    }
}

/// Centerline of one segment from its frames' `(position, optical axis)`:
/// outlier filter, trajectory graph, binning and spline fit. Until the
/// trajectory spans two bins a straight stand-in along the first frame's
/// optical axis is used (flagged `true`). `None` for a segment without frames.
fn segment_centerline(
    frames: &BTreeMap<u64, (Vec3, Vec3)>,
    cfg: &CenterlineConfig,
    session: &SessionConfig,
) -> Option<(Centerline, bool)> {
    let (first_pos, first_axis) = *frames.values().next()?;
    let ids: Vec<u64> = frames.keys().copied().collect();
    let positions: Vec<Vec3> = frames.values().map(|(p, _)| *p).collect();
    // A stream with too many outliers is fitted unfiltered rather than dropped.
    let flagged = filter_outliers(&positions, cfg.outlier_window, cfg.outlier_radius)
        .map(|(_, f)| f)
        .unwrap_or_default();
    let mut kept: BTreeMap<u64, Vec3> = ids.iter().copied().zip(positions.iter().copied()).collect();
    for i in flagged {
        kept.remove(&ids[i]);
    }
    let graph = TrajectoryGraph::from_positions(cfg.edge_threshold, &kept);
    match fit_centerline(&graph, cfg) {
        Ok(cl) => Some((cl, false)),
        Err(_) => Centerline::straight(first_pos, first_axis, session.provisional_length, cfg.sample_spacing)
            .ok()
            .map(|cl| (cl, true)),
    }
}
