//! Navigation compass: uncovered angular sectors at the camera's row, rotated
//! so tick 0 points to image-up.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::geometry::{signed_angle, Pose};
use crate::unfolding::{BandGrid, ImageSnapshot, UnfoldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigationConfig {
    pub n_ticks: usize,
    /// A tick turns red when more than this fraction of its columns is uncovered.
    pub hole_fraction: f64,
    /// Rows around the camera row taking part in the per-column majority vote.
    pub vote_rows: usize,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            n_ticks: 36,
            hole_fraction: 0.5,
            vote_rows: 5,
        }
    }
}

impl NavigationConfig {
    pub fn validate(&self, unfold: &UnfoldConfig) -> Result<()> {
        if self.n_ticks == 0 || unfold.n_theta % self.n_ticks != 0 {
            return Err(Error::Config(format!(
                "n_ticks {} must divide n_theta {}",
                self.n_ticks, unfold.n_theta
            )));
        }
        if !(0.0..1.0).contains(&self.hole_fraction) {
            return Err(Error::Config("hole_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Tick ring in camera terms: tick `k` spans angles `[kΔ, (k+1)Δ)` about the
/// centerline tangent, starting from the camera's up direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassState {
    pub ticks: Vec<bool>,
    pub camera_row: i64,
    pub band: u32,
    pub offset_rad: f64,
}

impl CompassState {
    /// Ticks indexed by column group instead of by camera direction.
    pub fn world_ticks(&self) -> Vec<bool> {
        let n = self.ticks.len();
        let shift = tick_shift(self.offset_rad, n);
        (0..n).map(|g| self.ticks[(g + n - shift) % n]).collect()
    }
}

/// Whole-tick rotation corresponding to a roll offset.
pub fn tick_shift(offset_rad: f64, n_ticks: usize) -> usize {
    let step = TAU / n_ticks as f64;
    ((offset_rad / step).round() as i64).rem_euclid(n_ticks as i64) as usize
}

/// Signed angle about the tangent at sample `k` from the sample normal to the
/// camera up-vector projected onto the cross-section plane.
pub fn roll_offset(cl: &Centerline, pose: &Pose, k: usize) -> Result<f64> {
    if k >= cl.len() {
        return Err(Error::EmptyCenterline);
    }
    let t = cl.tangent(k);
    let up = pose.up();
    let projected = up - t * up.dot(&t);
    if projected.norm() < 1e-3 {
        return Err(Error::DegenerateProjection);
    }
    Ok(signed_angle(&cl.normal(k), &projected, &t))
}

/// Flattened-image coordinates of the camera projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraMarker {
    pub band: u32,
    pub row: i64,
    pub col: usize,
}

pub fn camera_marker(cl: &Centerline, pose: &Pose, segment: u32, unfold: &UnfoldConfig) -> Result<CameraMarker> {
    let proj = cl.project(&pose.position())?;
    let col = if proj.radial_vector.norm() > 0.0 {
        unfold.column_of(cl.angle_at(proj.sample_index, &proj.radial_vector))
    } else {
        0
    };
    Ok(CameraMarker {
        band: segment,
        row: (cl.section_arc_length(&proj) / unfold.row_height).floor() as i64,
        col,
    })
}

/// Per-column-group uncovered flags at `row`, using a majority vote over the
/// rows within `vote_rows / 2` of it that lie inside the band extent.
pub fn uncovered_groups(band: &BandGrid, row: usize, cfg: &NavigationConfig) -> Vec<bool> {
    let n_theta = band.n_theta();
    let extent = band.extent_rows();
    let half = cfg.vote_rows / 2;
    let lo = row.saturating_sub(half);
    let hi = (row + half).min(extent.saturating_sub(1));
    let group = n_theta / cfg.n_ticks;
    let mut holes = vec![0usize; cfg.n_ticks];
    for col in 0..n_theta {
        let (mut empty, mut total) = (0usize, 0usize);
        for r in lo..=hi {
            total += 1;
            if !band.is_covered(r, col) {
                empty += 1;
            }
        }
        if 2 * empty > total {
            holes[col / group] += 1;
        }
    }
    holes
        .iter()
        .map(|h| *h as f64 > cfg.hole_fraction * group as f64)
        .collect()
}

pub fn compute_compass(
    image: &ImageSnapshot,
    segment: u32,
    cl: &Centerline,
    pose: &Pose,
    cfg: &NavigationConfig,
) -> Result<CompassState> {
    let unfold = &image.config;
    let proj = cl.project(&pose.position())?;
    let row = (cl.section_arc_length(&proj) / unfold.row_height).floor() as i64;
    let band = image.band(segment).ok_or(Error::StaleImage { segment, row })?;
    if row < 0 || row as usize >= band.extent_rows() {
        return Err(Error::StaleImage { segment, row });
    }
    let offset = roll_offset(cl, pose, proj.sample_index)?;
    let groups = uncovered_groups(band, row as usize, cfg);
    let n = cfg.n_ticks;
    let shift = tick_shift(offset, n);
    Ok(CompassState {
        ticks: (0..n).map(|k| groups[(k + shift) % n]).collect(),
        camera_row: row,
        band: segment,
        offset_rad: offset,
    })
}
