//! Seeded short-clip scans with one guaranteed hole.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frames::Intrinsics;
use crate::geometry::Pose;
use crate::unfolding::UnfoldConfig;

use super::{scripted_trajectory, SectorWindow, TrajectoryKind, TrajectoryParams, TubeModel, TubeParams};

/// Hole size of the scenarios: 90° of angle over 50 mm of axis.
pub const HOLE_SPAN: f64 = FRAC_PI_2;
pub const HOLE_LENGTH: f64 = 50.0;

/// A straight, possibly folded tube clip scanned by a pullback that skips a
/// 90° × 50 mm window at a random place.
#[derive(Debug, Clone)]
pub struct HoleScenario {
    pub seed: u64,
    pub model: TubeModel,
    pub hole: SectorWindow,
    pub poses: Vec<Pose>,
}

impl HoleScenario {
    /// Renders are 160×120 with a 100° horizontal field of view.
    pub fn intrinsics() -> Intrinsics {
        Intrinsics::with_fov(160, 120, 100f64.to_radians()).expect("valid constants")
    }

    /// Engine sampling matched to the small renders.
    pub fn unfold_config() -> UnfoldConfig {
        UnfoldConfig {
            stride: 1,
            ..UnfoldConfig::default()
        }
    }

    pub fn generate(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let length = rng.random_range(100.0..150.0);
        let params = TubeParams {
            length,
            radius: rng.random_range(20.0..30.0),
            radius_variation: rng.random_range(0.0..3.0),
            radius_period: rng.random_range(60.0..140.0),
            fold_amplitude: rng.random_range(0.0..2.0),
            fold_frequency: rng.random_range(0.03..0.08),
            ..TubeParams::default()
        };
        let s_start = rng.random_range(20.0..length - HOLE_LENGTH - 20.0);
        let theta_start = rng.random_range(0.0..TAU);
        let hole = SectorWindow {
            s_start,
            s_end: s_start + HOLE_LENGTH,
            theta_start,
            theta_end: (theta_start + HOLE_SPAN) % TAU,
        };
        let model = TubeModel::new(params)?.with_hidden(vec![hole]);
        let traj = TrajectoryParams {
            s_start: 0.0,
            s_end: None,
            step: 1.0,
            tilt_deg: rng.random_range(50.0..60.0),
            spin_deg: rng.random_range(35.0..45.0),
            skip: Some(hole),
        };
        let poses = scripted_trajectory(TrajectoryKind::PullbackWithSkip, &model, &traj)?;
        Ok(Self {
            seed,
            model,
            hole,
            poses,
        })
    }
}
