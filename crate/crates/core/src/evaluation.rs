//! Engine-versus-simulator evaluation: coverage against the oracle, hole
//! detection, compass scoring and centerline accuracy.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frames::{backproject, Intrinsics};
use crate::geometry::{rotation_about, Pose, Vec3};
use crate::metrics::{categorize, CategoryLabel};
use crate::navigation::{compute_compass, NavigationConfig};
use crate::session::{Session, SessionEvent};
use crate::simulator::{
    inject_events, scripted_trajectory, AxisShape, HoleScenario, Injection, OracleCoverage, ScriptedScan, SectorWindow,
    TrajectoryKind, TrajectoryParams, TubeModel, TubeParams,
};
use crate::unfolding::{map_points_to_uv, FlattenedImage, UnfoldConfig};

/// A scripted scan pushed through a session and settled.
pub struct ScanRun {
    pub session: Session,
    pub oracle: OracleCoverage,
    /// Session time over the event stream, rendering excluded.
    pub stream_seconds: f64,
    pub worst_event_seconds: f64,
}

pub fn run_scan(
    model: &TubeModel,
    intr: &Intrinsics,
    poses: &[Pose],
    cfg: &Config,
    injections: &[Injection],
) -> Result<ScanRun> {
    let scan = ScriptedScan::render(model, intr, poses, &cfg.unfold, cfg.scan.fps)?;
    let events = inject_events(scan.frames, injections);
    let mut session = Session::new(*intr, cfg.centerline, cfg.unfold, cfg.session);
    let mut worst = 0.0f64;
    let start = Instant::now();
    for e in events {
        let t = Instant::now();
        session.handle_event(e)?;
        worst = worst.max(t.elapsed().as_secs_f64());
    }
    let stream_seconds = start.elapsed().as_secs_f64();
    session.settle()?;
    Ok(ScanRun {
        session,
        oracle: scan.oracle,
        stream_seconds,
        worst_event_seconds: worst,
    })
}

/// Engine coverage next to the oracle over the axis range spanned by the
/// engine centerline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageComparison {
    pub s_range: (f64, f64),
    pub engine_pct: f64,
    pub oracle_pct: f64,
    pub engine_quadrants: [f64; 4],
    pub oracle_quadrants: [f64; 4],
    pub engine_categories: [CategoryLabel; 4],
    pub oracle_categories: [CategoryLabel; 4],
}

fn categories(q: [f64; 4]) -> Result<[CategoryLabel; 4]> {
    Ok([categorize(q[0])?, categorize(q[1])?, categorize(q[2])?, categorize(q[3])?])
}

/// Axis range `[s_lo, s_hi]` covered by the centerline of `segment`.
pub fn centerline_axis_range(session: &Session, segment: u32, model: &TubeModel) -> Result<(f64, f64)> {
    let cl = session.centerline(segment).ok_or(Error::UnknownSegment(segment))?;
    let first = model.axis().project(&cl.samples()[0])?.arc_length;
    let last = model.axis().project(cl.samples().last().expect("nonempty"))?.arc_length;
    Ok((first.min(last), first.max(last)))
}

/// Single-band comparison; quadrants line up because the engine and the
/// model seed their frames with the same reference normal on a straight axis.
pub fn compare_coverage(session: &Session, model: &TubeModel, oracle: &OracleCoverage) -> Result<CoverageComparison> {
    let segment = *session.segment_ids().first().ok_or(Error::UnknownSegment(0))?;
    let (s_lo, s_hi) = centerline_axis_range(session, segment, model)?;
    let engine_quadrants = session.image().quadrant_coverage();
    let oracle_quadrants = oracle.quadrant_coverage(s_lo, s_hi);
    Ok(CoverageComparison {
        s_range: (s_lo, s_hi),
        engine_pct: session.image().coverage().coverage_pct,
        oracle_pct: oracle.coverage_between(s_lo, s_hi),
        engine_quadrants,
        oracle_quadrants,
        engine_categories: categories(engine_quadrants)?,
        oracle_categories: categories(oracle_quadrants)?,
    })
}

/// Per-tick confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TickCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl TickCounts {
    pub fn add(&mut self, predicted: &[bool], truth: &[bool]) {
        for (p, t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn merge(&mut self, o: &TickCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// 1 when there was nothing to find.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

/// True when `b` equals `a` rotated by at most one tick either way.
pub fn within_one_tick(a: &[bool], b: &[bool]) -> bool {
    let n = a.len();
    n == b.len() && [0, 1, n.saturating_sub(1)].iter().any(|s| (0..n).all(|k| a[k] == b[(k + s) % n]))
}

pub const ROLLS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 180.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoleOutcome {
    pub seed: u64,
    pub hole: SectorWindow,
    pub coverage: CoverageComparison,
    /// World-frame engine ticks against oracle sectors, for poses inside the
    /// hole's axis range.
    pub ticks: TickCounts,
    /// Poses whose world ticks agree within one tick under every roll.
    pub roll_consistent: usize,
    pub roll_checked: usize,
}

/// Compass scoring over the poses of a settled session whose camera lies in
/// `[s_lo, s_hi)` on the model axis. Every `roll_every`-th such pose is also
/// re-evaluated under each roll of [`ROLLS_DEG`].
pub fn score_compass(
    run: &ScanRun,
    model: &TubeModel,
    poses: &[Pose],
    s_window: (f64, f64),
    nav: &NavigationConfig,
    roll_every: usize,
) -> Result<(TickCounts, usize, usize)> {
    let session = &run.session;
    let segment = *session.segment_ids().first().ok_or(Error::UnknownSegment(0))?;
    let cl = session.centerline(segment).ok_or(Error::UnknownSegment(segment))?.clone();
    let (s_lo, _) = centerline_axis_range(session, segment, model)?;
    let snap = session.image().snapshot();
    let extent = session.image().band(segment).ok_or(Error::UnknownSegment(segment))?.extent_rows();
    let row0 = s_lo.round() as usize;
    let mut counts = TickCounts::default();
    let (mut consistent, mut checked) = (0, 0);
    let mut inside = 0usize;
    for p in poses {
        let s = model.axis().project(&p.position())?.arc_length;
        if s < s_window.0 || s >= s_window.1 {
            continue;
        }
        let c = compute_compass(&snap, segment, &cl, p, nav)?;
        let world = c.world_ticks();
        let truth = run
            .oracle
            .uncovered_groups(row0 + c.camera_row.max(0) as usize, row0..row0 + extent, nav);
        counts.add(&world, &truth);
        if roll_every > 0 && inside % roll_every == 0 {
            checked += 1;
            let mut ok = true;
            for deg in ROLLS_DEG {
                let r = compute_compass(&snap, segment, &cl, &p.rolled(deg.to_radians()), nav)?;
                ok &= within_one_tick(&world, &r.world_ticks());
            }
            consistent += ok as usize;
        }
        inside += 1;
    }
    Ok((counts, consistent, checked))
}

/// Runs one randomized hole scenario end to end.
pub fn evaluate_hole_scenario(seed: u64, roll_every: usize) -> Result<HoleOutcome> {
    let sc = HoleScenario::generate(seed)?;
    let cfg = Config {
        unfold: HoleScenario::unfold_config(),
        ..Config::default()
    };
    let run = run_scan(&sc.model, &HoleScenario::intrinsics(), &sc.poses, &cfg, &[])?;
    let coverage = compare_coverage(&run.session, &sc.model, &run.oracle)?;
    let (ticks, roll_consistent, roll_checked) = score_compass(
        &run,
        &sc.model,
        &sc.poses,
        (sc.hole.s_start, sc.hole.s_end),
        &cfg.navigation,
        roll_every,
    )?;
    Ok(HoleOutcome {
        seed,
        hole: sc.hole,
        coverage,
        ticks,
        roll_consistent,
        roll_checked,
    })
}

/// The single skip case: a 120 mm straight clip whose hole fills the first
/// quadrant (0°..90°) over 40..90 mm, scanned at the hole-scenario camera.
pub fn canonical_skip_config() -> Config {
    let hole = SectorWindow {
        s_start: 40.0,
        s_end: 90.0,
        theta_start: 0.0,
        theta_end: FRAC_PI_2,
    };
    let mut cfg = Config::default();
    cfg.tube.length = 120.0;
    cfg.camera.width = 160;
    cfg.camera.height = 120;
    cfg.unfold.stride = 1;
    cfg.scan.kind = TrajectoryKind::PullbackWithSkip;
    cfg.trajectory.skip = Some(hole);
    cfg
}

/// The helix tube of the centerline check: 400 mm of axis on a 30 mm helix
/// radius with 200 mm pitch.
pub fn helix_model() -> Result<TubeModel> {
    TubeModel::new(TubeParams {
        axis: AxisShape::Helix {
            radius: 30.0,
            pitch: 200.0,
        },
        ..TubeParams::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenterlineAccuracy {
    /// Largest distance from a centerline sample in the interior 90% of arc
    /// length to the analytic axis (mm).
    pub max_axis_error: f64,
    /// Largest distance from a sample of the curve fitted before the last 50
    /// frames to the curve fitted after them (mm).
    pub max_append_shift: f64,
}

/// Pullback along the helix; centerlines are taken from full refits of the
/// session (frames rendered small, since only poses matter).
pub fn helix_centerline_accuracy() -> Result<CenterlineAccuracy> {
    let model = helix_model()?;
    let poses = scripted_trajectory(TrajectoryKind::Pullback, &model, &TrajectoryParams::default())?;
    let intr = Intrinsics::with_fov(40, 30, 100f64.to_radians())?;
    let cfg = Config::default();
    let scan = ScriptedScan::render(&model, &intr, &poses, &cfg.unfold, cfg.scan.fps)?;
    let mut session = Session::new(intr, cfg.centerline, cfg.unfold, cfg.session);
    let n = scan.frames.len();
    let mut before = None;
    for (i, f) in scan.frames.into_iter().enumerate() {
        if i + 50 == n {
            before = Some(session.rebuilt()?);
        }
        session.handle_event(SessionEvent::FrameArrived(f))?;
    }
    let after = session.rebuilt()?;
    let cl = after.centerline(0).ok_or(Error::EmptyCenterline)?;
    let total = cl.total_length();
    let mut max_axis_error = 0.0f64;
    for (k, p) in cl.samples().iter().enumerate() {
        let l = cl.arclen()[k];
        if l < 0.05 * total || l > 0.95 * total {
            continue;
        }
        max_axis_error = max_axis_error.max(model.axis().project(p)?.radial_vector.norm());
    }
    let old = before.ok_or(Error::EmptyCenterline)?;
    let old = old.centerline(0).ok_or(Error::EmptyCenterline)?;
    let mut max_append_shift = 0.0f64;
    for p in old.samples() {
        max_append_shift = max_append_shift.max(cl.project(p)?.radial_vector.norm());
    }
    Ok(CenterlineAccuracy {
        max_axis_error,
        max_append_shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseCheck {
    pub frames: usize,
    /// Largest color and weight difference between the image after removing
    /// half of the frames and an image built from the other half only.
    pub max_color_residual: f64,
    pub max_weight_residual: f64,
    /// Cells left with nonzero weight after removing every frame.
    pub nonzero_after: usize,
    pub seconds: f64,
}

/// Integrates `n` frames rendered from random poses inside the default tube,
/// removes them in shuffled order and compares against direct integration.
pub fn integration_inverse(n: usize, seed: u64) -> Result<InverseCheck> {
    let t0 = Instant::now();
    let model = TubeModel::new(TubeParams::default())?;
    let intr = Intrinsics::with_fov(160, 120, 100f64.to_radians())?;
    let cfg = UnfoldConfig {
        stride: 2,
        ..UnfoldConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<Pose> = (0..n)
        .map(|_| {
            let s = rng.random_range(30.0..370.0);
            let off = Vec3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), s);
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = rotation_about(&axis.normalize(), rng.random_range(0.0..TAU));
            Pose::new(r, off)
        })
        .collect();
    let scan = ScriptedScan::render(&model, &intr, &poses, &cfg, 20.0)?;
    let cl = model.axis();
    let rows = cfg.rows_for_length(cl.total_length());
    let samples = scan
        .frames
        .iter()
        .map(|f| map_points_to_uv(&backproject(f, &intr, cfg.stride)?, cl, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let fresh = || {
        let mut img = FlattenedImage::new(cfg);
        img.add_band(0);
        img.set_extent(0, rows).map(|_| img)
    };
    let mut img = fresh()?;
    for (i, s) in samples.iter().enumerate() {
        img.integrate(i as u64, 0, s)?;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (gone, kept) = order.split_at(n / 2);
    for i in gone {
        img.deintegrate(*i as u64)?;
    }
    let mut direct = fresh()?;
    let mut kept_sorted = kept.to_vec();
    kept_sorted.sort_unstable();
    for i in &kept_sorted {
        direct.integrate(*i as u64, 0, &samples[*i])?;
    }
    let (max_color_residual, max_weight_residual) = img.max_difference(&direct);
    for i in kept {
        img.deintegrate(*i as u64)?;
    }
    let band = img.band(0).ok_or(Error::UnknownSegment(0))?;
    let mut nonzero_after = 0;
    for r in 0..band.rows() {
        for c in 0..band.n_theta() {
            nonzero_after += (band.weight(r, c) != 0.0) as usize;
        }
    }
    Ok(InverseCheck {
        frames: n,
        max_color_residual,
        max_weight_residual,
        nonzero_after,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// The injected disturbances of the rebuild check on the 400 mm model.
pub fn rebuild_injections() -> Vec<Injection> {
    vec![
        Injection::TrackingLoss {
            at_frame: 150,
            new_segment: 1,
            rotation_deg: 4.0,
            translation: [6.0, -3.0, 2.0],
        },
        Injection::LoopClosure { at_frame: 250 },
        Injection::PoseNoise {
            at_frame: 320,
            sigma_mm: 0.5,
            sigma_deg: 0.5,
            seed: 7,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_counts_and_shift_tolerance() {
        let mut c = TickCounts::default();
        c.add(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        assert_eq!(c.precision(), 0.5);
        assert_eq!(TickCounts::default().recall(), 1.0);
        let a = [true, false, false, false, false];
        assert!(within_one_tick(&a, &[false, true, false, false, false]));
        assert!(within_one_tick(&a, &[false, false, false, false, true]));
        assert!(!within_one_tick(&a, &[false, false, true, false, false]));
    }

    #[test]
    fn inverse_on_a_few_frames() {
        let r = integration_inverse(6, 1).unwrap();
        assert_eq!(r.nonzero_after, 0);
        assert!(r.max_color_residual < 1e-6 && r.max_weight_residual < 1e-6, "{r:?}");
    }
}
