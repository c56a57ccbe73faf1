//! Flattened image: maps surface points to (arc-length row, angle column)
//! cells and maintains per-cell weighted color averages that can be exactly
//! integrated and de-integrated frame by frame.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::frames::PointCloud;

/// Weights at or below this value are snapped to an exact zero.
pub const WEIGHT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnfoldConfig {
    /// Angle bins around the centerline.
    pub n_theta: usize,
    /// Arc length covered by one row (mm).
    pub row_height: f64,
    /// Points farther than this from the centerline are dropped (mm).
    pub max_radius: f64,
    /// Viewing rays flatter than this against the surface are dropped (degrees).
    pub min_grazing_deg: f64,
    /// Pixel subsampling step used when back-projecting frames.
    pub stride: usize,
    /// Height of the red divider between segment bands (rows).
    pub divider_rows: usize,
    /// Viewing distance beyond which the sample weight decays (mm).
    pub weight_depth_ref: f64,
    pub weight_min: f64,
    pub weight_max: f64,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self {
            n_theta: 360,
            row_height: 1.0,
            max_radius: 60.0,
            min_grazing_deg: 10.0,
            stride: 4,
            divider_rows: 2,
            weight_depth_ref: 100.0,
            weight_min: 0.05,
            weight_max: 1.0,
        }
    }
}

impl UnfoldConfig {
    /// Column of an angle in `[0, 2π)`.
    #[inline]
    pub fn column_of(&self, theta: f64) -> usize {
        ((theta / TAU * self.n_theta as f64).floor() as usize).min(self.n_theta - 1)
    }

    /// Quadrant of a column: `floor(4c / n_theta)`.
    #[inline]
    pub fn quadrant_of(&self, col: usize) -> usize {
        4 * col / self.n_theta
    }

    pub fn rows_for_length(&self, length: f64) -> usize {
        (length / self.row_height).floor() as usize + 1
    }
}

/// One observation destined for a flattened-image cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvSample {
    pub row: u32,
    pub col: u32,
    pub color: [f32; 3],
    pub weight: f32,
}

/// Result of mapping a cloud: the samples plus the range of centerline
/// samples they were projected through.
#[derive(Debug, Clone, Default)]
pub struct UvMapping {
    pub samples: Vec<UvSample>,
    pub sample_range: Option<(usize, usize)>,
}

/// Sample weight from the incidence angle and viewing distance:
/// `cos(incidence) / max(1, distance / depth_ref)`, clamped.
#[inline]
pub fn sample_weight(cos_incidence: f64, distance: f64, cfg: &UnfoldConfig) -> f64 {
    (cos_incidence / (distance / cfg.weight_depth_ref).max(1.0)).clamp(cfg.weight_min, cfg.weight_max)
}

/// Maps world points to flattened-image cells through the centerline.
///
/// Drops points beyond `max_radius`, points seen at grazing angles below
/// `min_grazing_deg`, and points lying past either end of the centerline by
/// more than half a sample spacing.
pub fn map_points_to_uv(cloud: &PointCloud, cl: &Centerline, cfg: &UnfoldConfig) -> Result<Vec<UvSample>> {
    Ok(map_cloud(cloud, cl, cfg)?.samples)
}

pub fn map_cloud(cloud: &PointCloud, cl: &Centerline, cfg: &UnfoldConfig) -> Result<UvMapping> {
    if cl.is_empty() {
        return Err(Error::EmptyCenterline);
    }
    let min_sin_grazing = cfg.min_grazing_deg.to_radians().sin();
    let last = cl.len() - 1;
    let half_gap = if cl.len() > 1 { 0.5 * cl.total_length() / last as f64 } else { 0.5 * cfg.row_height };

    let mapped: Vec<Option<(UvSample, usize)>> = (0..cloud.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let p = &cloud.points[i];
            let proj = cl.project(p).ok()?;
            let k = proj.sample_index;
            let radial = proj.radial_vector;
            if k == 0 || k == last {
                let along = radial.dot(&cl.tangent(k));
                if (k == 0 && along < -half_gap) || (k == last && along > half_gap) {
                    return None;
                }
            }
            if radial.norm() > cfg.max_radius {
                return None;
            }
            let ray = p - cloud.origin;
            let distance = ray.norm();
            if distance <= 0.0 {
                return None;
            }
            // |ray · n| is the sine of the grazing angle and the cosine of incidence.
            let cos_incidence = (ray.dot(&cloud.normals[i]) / distance).abs();
            if cos_incidence < min_sin_grazing {
                return None;
            }
            let theta = cl.angle_at(k, &radial);
            let c = cloud.colors[i];
            Some((
                UvSample {
                    row: (cl.section_arc_length(&proj).max(0.0) / cfg.row_height).floor() as u32,
                    col: cfg.column_of(theta) as u32,
                    color: [c[0] as f32, c[1] as f32, c[2] as f32],
                    weight: sample_weight(cos_incidence, distance, cfg) as f32,
                },
                k,
            ))
        })
        .collect();

    let mut out = UvMapping::default();
    out.samples.reserve(mapped.len());
    for (sample, k) in mapped.into_iter().flatten() {
        out.sample_range = Some(match out.sample_range {
            None => (k, k),
            Some((a, b)) => (a.min(k), b.max(k)),
        });
        out.samples.push(sample);
    }
    Ok(out)
}

/// One segment's region of the flattened image.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGrid {
    pub segment_id: u32,
    n_theta: usize,
    /// Rows inside the scanned extent.
    extent_rows: usize,
    color: Vec<[f64; 3]>,
    weight: Vec<f64>,
}

impl BandGrid {
    fn new(segment_id: u32, n_theta: usize) -> Self {
        Self {
            segment_id,
            n_theta,
            extent_rows: 0,
            color: Vec::new(),
            weight: Vec::new(),
        }
    }

    /// Allocated rows; at least the extent, possibly more while stale
    /// contributions from a longer centerline remain.
    pub fn rows(&self) -> usize {
        self.weight.len() / self.n_theta
    }

    pub fn extent_rows(&self) -> usize {
        self.extent_rows
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    fn ensure_rows(&mut self, rows: usize) {
        if rows > self.rows() {
            self.color.resize(rows * self.n_theta, [0.0; 3]);
            self.weight.resize(rows * self.n_theta, 0.0);
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weight.get(row * self.n_theta + col).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn color(&self, row: usize, col: usize) -> [f64; 3] {
        self.color.get(row * self.n_theta + col).copied().unwrap_or([0.0; 3])
    }

    pub fn is_covered(&self, row: usize, col: usize) -> bool {
        self.weight(row, col) > 0.0
    }

    /// Covered cells and total cells per quadrant inside the extent.
    fn quadrant_counts(&self, cfg: &UnfoldConfig) -> [(usize, usize); 4] {
        let mut counts = [(0usize, 0usize); 4];
        for row in 0..self.extent_rows {
            for col in 0..self.n_theta {
                let q = cfg.quadrant_of(col);
                counts[q].1 += 1;
                if self.is_covered(row, col) {
                    counts[q].0 += 1;
                }
            }
        }
        counts
    }
}

/// Placement of a band in the stacked image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandPlacement {
    pub segment_id: u32,
    pub row_start: usize,
    /// Exclusive.
    pub row_end: usize,
}

/// Stacks bands in order, separated by `divider_rows` red rows.
pub fn band_layout(bands: &[(u32, usize)], divider_rows: usize) -> Vec<BandPlacement> {
    let mut row = 0;
    let mut out = Vec::with_capacity(bands.len());
    for (i, (segment_id, rows)) in bands.iter().enumerate() {
        if i > 0 {
            row += divider_rows;
        }
        out.push(BandPlacement {
            segment_id: *segment_id,
            row_start: row,
            row_end: row + rows,
        });
        row += rows;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub coverage_pct: f64,
    pub scanned_length: f64,
    pub per_band: Vec<(u32, f64)>,
}

/// Pre-merged contribution of one frame to one cell, stored at the precision
/// used for integration so that removal is the exact inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelSample {
    cell: u32,
    weight: f32,
    color: [f32; 3],
}

#[derive(Debug, Clone)]
struct FrameContribution {
    segment_id: u32,
    cells: Vec<PixelSample>,
}

/// Immutable view of the image for readers.
#[derive(Debug, Clone)]
pub struct ImageSnapshot {
    pub config: UnfoldConfig,
    pub bands: Vec<Arc<BandGrid>>,
}

#[derive(Debug, Clone)]
pub struct FlattenedImage {
    cfg: UnfoldConfig,
    bands: Vec<Arc<BandGrid>>,
    contributions: BTreeMap<u64, FrameContribution>,
}

impl FlattenedImage {
    pub fn new(cfg: UnfoldConfig) -> Self {
        Self {
            cfg,
            bands: Vec::new(),
            contributions: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &UnfoldConfig {
        &self.cfg
    }

    pub fn bands(&self) -> impl Iterator<Item = &BandGrid> {
        self.bands.iter().map(|b| b.as_ref())
    }

    pub fn band(&self, segment_id: u32) -> Option<&BandGrid> {
        self.bands.iter().find(|b| b.segment_id == segment_id).map(|b| b.as_ref())
    }

    fn band_mut(&mut self, segment_id: u32) -> Result<&mut BandGrid> {
        self.bands
            .iter_mut()
            .find(|b| b.segment_id == segment_id)
            .map(Arc::make_mut)
            .ok_or(Error::UnknownSegment(segment_id))
    }

    /// Appends a band for a new segment; no-op if it already exists.
    pub fn add_band(&mut self, segment_id: u32) {
        if self.band(segment_id).is_none() {
            self.bands.push(Arc::new(BandGrid::new(segment_id, self.cfg.n_theta)));
        }
    }

    /// Removes a band. Every frame integrated into it must be de-integrated first.
    pub fn remove_band(&mut self, segment_id: u32) -> Result<()> {
        if let Some((&frame, _)) = self.contributions.iter().find(|(_, c)| c.segment_id == segment_id) {
            return Err(Error::Format(format!(
                "band {segment_id} still holds frame {frame}"
            )));
        }
        let before = self.bands.len();
        self.bands.retain(|b| b.segment_id != segment_id);
        if self.bands.len() == before {
            return Err(Error::UnknownSegment(segment_id));
        }
        Ok(())
    }

    pub fn set_extent(&mut self, segment_id: u32, rows: usize) -> Result<()> {
        let band = self.band_mut(segment_id)?;
        band.extent_rows = rows;
        band.ensure_rows(rows);
        Ok(())
    }

    pub fn is_integrated(&self, frame_id: u64) -> bool {
        self.contributions.contains_key(&frame_id)
    }

    pub fn integrated_segment(&self, frame_id: u64) -> Option<u32> {
        self.contributions.get(&frame_id).map(|c| c.segment_id)
    }

    pub fn integrated_frames(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.contributions.iter().map(|(id, c)| (*id, c.segment_id))
    }

    /// Number of cells the frame contributed to.
    pub fn contribution_size(&self, frame_id: u64) -> Option<usize> {
        self.contributions.get(&frame_id).map(|c| c.cells.len())
    }

    /// Adds a frame's samples with the weighted-average update
    /// `F' = (F·W + w·d) / (W + w)`, `W' = W + w`.
    pub fn integrate(&mut self, frame_id: u64, segment_id: u32, samples: &[UvSample]) -> Result<()> {
        if self.contributions.contains_key(&frame_id) {
            return Err(Error::AlreadyIntegrated(frame_id));
        }
        let n_theta = self.cfg.n_theta;
        let cells = premerge(samples, n_theta);
        let band = self.band_mut(segment_id)?;
        if let Some(max_row) = samples.iter().map(|s| s.row as usize).max() {
            band.ensure_rows(max_row + 1);
        }
        for s in &cells {
            let i = s.cell as usize;
            let w = s.weight as f64;
            let d = s.color.map(|c| c as f64);
            let (f, wp) = (band.color[i], band.weight[i]);
            let nw = wp + w;
            band.color[i] = [
                (f[0] * wp + w * d[0]) / nw,
                (f[1] * wp + w * d[1]) / nw,
                (f[2] * wp + w * d[2]) / nw,
            ];
            band.weight[i] = nw;
        }
        self.contributions.insert(frame_id, FrameContribution { segment_id, cells });
        Ok(())
    }

    /// Removes a frame with `F' = (F·W − w·d) / (W − w)`, `W' = W − w`, using
    /// the logged contribution. Cells whose weight drops to `WEIGHT_EPSILON`
    /// or below are reset to exactly zero weight and black.
    pub fn deintegrate(&mut self, frame_id: u64) -> Result<()> {
        let contrib = self.contributions.remove(&frame_id).ok_or(Error::NotIntegrated(frame_id))?;
        let band = self.band_mut(contrib.segment_id)?;
        for s in &contrib.cells {
            let i = s.cell as usize;
            let w = s.weight as f64;
            let d = s.color.map(|c| c as f64);
            let (f, wp) = (band.color[i], band.weight[i]);
            let nw = wp - w;
            if nw <= WEIGHT_EPSILON {
                band.color[i] = [0.0; 3];
                band.weight[i] = 0.0;
            } else {
                band.color[i] = [
                    (f[0] * wp - w * d[0]) / nw,
                    (f[1] * wp - w * d[1]) / nw,
                    (f[2] * wp - w * d[2]) / nw,
                ];
                band.weight[i] = nw;
            }
        }
        Ok(())
    }

    /// Coverage over the scanned extent (the union of band extents).
    pub fn coverage(&self) -> CoverageStats {
        let mut covered = 0usize;
        let mut total = 0usize;
        let mut per_band = Vec::with_capacity(self.bands.len());
        for band in &self.bands {
            let counts = band.quadrant_counts(&self.cfg);
            let (c, t) = counts.iter().fold((0, 0), |acc, q| (acc.0 + q.0, acc.1 + q.1));
            covered += c;
            total += t;
            per_band.push((band.segment_id, percent(c, t)));
        }
        let extent_rows: usize = self.bands.iter().map(|b| b.extent_rows).sum();
        CoverageStats {
            coverage_pct: percent(covered, total),
            scanned_length: extent_rows as f64 * self.cfg.row_height,
            per_band,
        }
    }

    /// Coverage percentage of each angular quadrant over the scanned extent.
    pub fn quadrant_coverage(&self) -> [f64; 4] {
        let mut acc = [(0usize, 0usize); 4];
        for band in &self.bands {
            for (q, (c, t)) in band.quadrant_counts(&self.cfg).iter().enumerate() {
                acc[q].0 += c;
                acc[q].1 += t;
            }
        }
        acc.map(|(c, t)| percent(c, t))
    }

    pub fn layout(&self) -> Vec<BandPlacement> {
        let bands: Vec<(u32, usize)> = self.bands.iter().map(|b| (b.segment_id, b.extent_rows)).collect();
        band_layout(&bands, self.cfg.divider_rows)
    }

    pub fn snapshot(&self) -> ImageSnapshot {
        ImageSnapshot {
            config: self.cfg,
            bands: self.bands.clone(),
        }
    }

    /// Largest per-channel color and weight differences against `other`,
    /// matching bands by segment id and treating missing cells as empty.
    pub fn max_difference(&self, other: &FlattenedImage) -> (f64, f64) {
        let mut ids: Vec<u32> = self.bands.iter().chain(&other.bands).map(|b| b.segment_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let empty = BandGrid::new(0, self.cfg.n_theta);
        let (mut dc, mut dw) = (0.0f64, 0.0f64);
        for id in ids {
            let a = self.band(id).unwrap_or(&empty);
            let b = other.band(id).unwrap_or(&empty);
            for row in 0..a.rows().max(b.rows()) {
                for col in 0..self.cfg.n_theta {
                    let (ca, cb) = (a.color(row, col), b.color(row, col));
                    for ch in 0..3 {
                        dc = dc.max((ca[ch] - cb[ch]).abs());
                    }
                    dw = dw.max((a.weight(row, col) - b.weight(row, col)).abs());
                }
            }
        }
        (dc, dw)
    }
}

fn percent(covered: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * covered as f64 / total as f64
    }
}

/// Merges samples landing on the same cell into one weighted average.
fn premerge(samples: &[UvSample], n_theta: usize) -> Vec<PixelSample> {
    let mut keyed: Vec<(u32, &UvSample)> = samples
        .iter()
        .map(|s| (s.row * n_theta as u32 + s.col, s))
        .collect();
    keyed.sort_by_key(|(cell, _)| *cell);
    let mut out: Vec<PixelSample> = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let cell = keyed[i].0;
        let mut wsum = 0.0f64;
        let mut acc = [0.0f64; 3];
        while i < keyed.len() && keyed[i].0 == cell {
            let s = keyed[i].1;
            let w = s.weight as f64;
            wsum += w;
            for ch in 0..3 {
                acc[ch] += w * s.color[ch] as f64;
            }
            i += 1;
        }
        if wsum > 0.0 {
            out.push(PixelSample {
                cell,
                weight: wsum as f32,
                color: acc.map(|a| (a / wsum) as f32),
            });
        }
    }
    out
}

impl ImageSnapshot {
    pub fn layout(&self) -> Vec<BandPlacement> {
        let bands: Vec<(u32, usize)> = self.bands.iter().map(|b| (b.segment_id, b.extent_rows)).collect();
        band_layout(&bands, self.config.divider_rows)
    }

    pub fn band(&self, segment_id: u32) -> Option<&BandGrid> {
        self.bands.iter().find(|b| b.segment_id == segment_id).map(|b| b.as_ref())
    }

    /// Stacked 8-bit RGB raster and matching weights: covered cells carry
    /// their color, uncovered cells are black, divider rows are red.
    pub fn compose(&self) -> ComposedImage {
        let layout = self.layout();
        let width = self.config.n_theta;
        let height = layout.last().map(|p| p.row_end).unwrap_or(0);
        let mut rgb = vec![0u8; width * height * 3];
        let mut weight = vec![0f32; width * height];
        let mut prev_end = 0;
        for (placement, band) in layout.iter().zip(&self.bands) {
            for row in prev_end..placement.row_start {
                for col in 0..width {
                    rgb[(row * width + col) * 3] = 255;
                }
            }
            for r in 0..(placement.row_end - placement.row_start) {
                let row = placement.row_start + r;
                for col in 0..width {
                    let w = band.weight(r, col);
                    if w > 0.0 {
                        let c = band.color(r, col);
                        let px = (row * width + col) * 3;
                        for ch in 0..3 {
                            rgb[px + ch] = c[ch].round().clamp(0.0, 255.0) as u8;
                        }
                        weight[row * width + col] = w as f32;
                    }
                }
            }
            prev_end = placement.row_end;
        }
        ComposedImage {
            width,
            height,
            rgb,
            weight,
            layout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub weight: Vec<f32>,
    pub layout: Vec<BandPlacement>,
}

impl ComposedImage {
    /// Writes `flattened.png`, the little-endian `f32` sidecar
    /// `flattened.weight` and the band table `bands.txt` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if self.width > 0 && self.height > 0 {
            image::save_buffer(
                dir.join("flattened.png"),
                &self.rgb,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let mut raw = Vec::with_capacity(self.weight.len() * 4);
        for w in &self.weight {
            raw.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(dir.join("flattened.weight"), raw)?;
        let mut table = std::fs::File::create(dir.join("bands.txt"))?;
        writeln!(table, "# segment_id row_start row_end width={} height={}", self.width, self.height)?;
        for p in &self.layout {
            writeln!(table, "{} {} {}", p.segment_id, p.row_start, p.row_end)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> UnfoldConfig {
        UnfoldConfig {
            n_theta: 8,
            ..UnfoldConfig::default()
        }
    }

    fn sample(row: u32, col: u32, color: f32, weight: f32) -> UvSample {
        UvSample {
            row,
            col,
            color: [color; 3],
            weight,
        }
    }

    fn image_with_band(cfg: UnfoldConfig, rows: usize) -> FlattenedImage {
        let mut img = FlattenedImage::new(cfg);
        img.add_band(0);
        img.set_extent(0, rows).unwrap();
        img
    }

    #[test]
    fn first_sample_sets_color_and_weight() {
        let mut img = image_with_band(small_cfg(), 4);
        img.integrate(1, 0, &[sample(1, 2, 90.0, 0.4)]).unwrap();
        let band = img.band(0).unwrap();
        assert!((band.color(1, 2)[0] - 90.0).abs() < 1e-12);
        assert!((band.weight(1, 2) - 0.4f32 as f64).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_average() {
        let mut img = image_with_band(small_cfg(), 4);
        img.integrate(1, 0, &[sample(0, 0, 100.0, 0.5)]).unwrap();
        img.integrate(2, 0, &[sample(0, 0, 200.0, 0.5)]).unwrap();
        assert!((img.band(0).unwrap().color(0, 0)[1] - 150.0).abs() < 1e-12);
    }

    #[test]
    fn same_frame_samples_premerge() {
        let mut img = image_with_band(small_cfg(), 4);
        img.integrate(1, 0, &[sample(0, 0, 0.0, 0.25), sample(0, 0, 90.0, 0.75)]).unwrap();
        let band = img.band(0).unwrap();
        assert!((band.color(0, 0)[0] - 67.5).abs() < 1e-4);
        assert!((band.weight(0, 0) - 1.0).abs() < 1e-7);
        assert_eq!(img.contribution_size(1), Some(1));
    }

    #[test]
    fn double_integration_and_unknown_removal_fail() {
        let mut img = image_with_band(small_cfg(), 4);
        img.integrate(1, 0, &[sample(0, 0, 1.0, 1.0)]).unwrap();
        assert!(matches!(img.integrate(1, 0, &[]), Err(Error::AlreadyIntegrated(1))));
        assert!(matches!(img.deintegrate(9), Err(Error::NotIntegrated(9))));
        assert!(matches!(img.integrate(2, 5, &[]), Err(Error::UnknownSegment(5))));
    }

    #[test]
    fn integrate_then_deintegrate_is_empty() {
        let mut img = image_with_band(small_cfg(), 4);
        let empty = img.clone();
        img.integrate(3, 0, &[sample(2, 7, 33.0, 0.3), sample(3, 1, 12.0, 0.9)]).unwrap();
        img.deintegrate(3).unwrap();
        assert_eq!(img.max_difference(&empty), (0.0, 0.0));
        let band = img.band(0).unwrap();
        assert_eq!(band.weight(2, 7), 0.0);
    }

    fn random_frame(rng: &mut ChaCha8Rng, rows: u32, n_theta: u32) -> Vec<UvSample> {
        let n = rng.random_range(1..40);
        (0..n)
            .map(|_| UvSample {
                row: rng.random_range(0..rows),
                col: rng.random_range(0..n_theta),
                color: [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
                weight: rng.random_range(0.05..1.0),
            })
            .collect()
    }

    #[test]
    fn colors_equal_weighted_mean_of_contributors() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut img = image_with_band(cfg, 6);
        let frames: Vec<Vec<UvSample>> = (0..50).map(|_| random_frame(&mut rng, 6, 8)).collect();
        for (id, f) in frames.iter().enumerate() {
            img.integrate(id as u64, 0, f).unwrap();
        }
        // Oracle: recompute each cell's mean from the logged contributions.
        let mut sums = vec![([0.0f64; 3], 0.0f64); 6 * 8];
        for contrib in img.contributions.values() {
            for s in &contrib.cells {
                let e = &mut sums[s.cell as usize];
                for ch in 0..3 {
                    e.0[ch] += s.weight as f64 * s.color[ch] as f64;
                }
                e.1 += s.weight as f64;
            }
        }
        let band = img.band(0).unwrap();
        for (cell, (acc, w)) in sums.iter().enumerate() {
            let (row, col) = (cell / 8, cell % 8);
            assert!((band.weight(row, col) - w).abs() < 1e-9);
            if *w > 0.0 {
                for ch in 0..3 {
                    assert!((band.color(row, col)[ch] - acc[ch] / w).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn deintegrating_a_equals_integrating_b_alone() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_frame(&mut rng, 4, 8);
        let b = random_frame(&mut rng, 4, 8);
        let mut both = image_with_band(cfg, 4);
        both.integrate(1, 0, &a).unwrap();
        both.integrate(2, 0, &b).unwrap();
        both.deintegrate(1).unwrap();
        let mut only_b = image_with_band(cfg, 4);
        only_b.integrate(2, 0, &b).unwrap();
        let (dc, dw) = both.max_difference(&only_b);
        assert!(dc < 1e-6 && dw < 1e-9, "{dc} {dw}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn order_independent_and_exactly_invertible(seed in any::<u64>(), n in 1usize..25) {
            let cfg = small_cfg();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<Vec<UvSample>> = (0..n).map(|_| random_frame(&mut rng, 5, 8)).collect();
            let mut forward = image_with_band(cfg, 5);
            for (id, f) in frames.iter().enumerate() {
                forward.integrate(id as u64, 0, f).unwrap();
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut shuffled = image_with_band(cfg, 5);
            for &id in &order {
                shuffled.integrate(id as u64, 0, &frames[id]).unwrap();
            }
            let (dc, dw) = forward.max_difference(&shuffled);
            prop_assert!(dc < 1e-6 && dw < 1e-9);

            // Convexity: every covered color lies within its contributors' range.
            let band = forward.band(0).unwrap();
            for row in 0..5 {
                for col in 0..8u32 {
                    let contributors: Vec<&UvSample> = frames.iter().flatten()
                        .filter(|s| s.row == row && s.col == col).collect();
                    if contributors.is_empty() { continue; }
                    for ch in 0..3 {
                        let lo = contributors.iter().map(|s| s.color[ch] as f64).fold(f64::INFINITY, f64::min);
                        let hi = contributors.iter().map(|s| s.color[ch] as f64).fold(f64::NEG_INFINITY, f64::max);
                        let c = band.color(row as usize, col as usize)[ch];
                        prop_assert!(c >= lo - 1e-3 && c <= hi + 1e-3);
                    }
                }
            }

            order.shuffle(&mut rng);
            for &id in &order {
                shuffled.deintegrate(id as u64).unwrap();
            }
            let band = shuffled.band(0).unwrap();
            for row in 0..5 {
                for col in 0..8 {
                    prop_assert_eq!(band.weight(row, col), 0.0);
                    prop_assert_eq!(band.color(row, col), [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn coverage_of_empty_and_full_images() {
        let img = FlattenedImage::new(small_cfg());
        let stats = img.coverage();
        assert_eq!((stats.coverage_pct, stats.scanned_length), (0.0, 0.0));
        assert_eq!(img.quadrant_coverage(), [0.0; 4]);

        let cfg = small_cfg();
        let mut img = image_with_band(cfg, 10);
        let all: Vec<UvSample> = (0..10).flat_map(|r| (0..8).map(move |c| sample(r, c, 10.0, 1.0))).collect();
        img.integrate(0, 0, &all).unwrap();
        let stats = img.coverage();
        assert_eq!(stats.coverage_pct, 100.0);
        assert_eq!(stats.scanned_length, 10.0 * cfg.row_height);
        assert_eq!(img.quadrant_coverage(), [100.0; 4]);
    }

    #[test]
    fn masked_quadrant_and_random_holes() {
        let cfg = small_cfg();
        let mut img = image_with_band(cfg, 6);
        let samples: Vec<UvSample> = (0..6)
            .flat_map(|r| (2..8).map(move |c| sample(r, c, 10.0, 1.0)))
            .collect();
        img.integrate(0, 0, &samples).unwrap();
        assert_eq!(img.quadrant_coverage(), [0.0, 100.0, 100.0, 100.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = UnfoldConfig { n_theta: 36, ..cfg };
        let mut img = image_with_band(cfg, 12);
        let holes: Vec<UvSample> = (0..12)
            .flat_map(|r| (0..36).map(move |c| (r, c)))
            .filter(|_| rng.random_bool(0.6))
            .map(|(r, c)| sample(r, c, 5.0, 1.0))
            .collect();
        img.integrate(0, 0, &holes).unwrap();
        let band = img.band(0).unwrap();
        let mut want = [0.0; 4];
        for (q, slot) in want.iter_mut().enumerate() {
            let mut covered = 0;
            for r in 0..12 {
                for c in q * 9..(q + 1) * 9 {
                    covered += band.is_covered(r, c) as usize;
                }
            }
            *slot = 100.0 * covered as f64 / (12.0 * 9.0);
        }
        assert_eq!(img.quadrant_coverage(), want);
    }

    #[test]
    fn band_layout_dividers() {
        assert_eq!(band_layout(&[(0, 10)], 2), vec![BandPlacement { segment_id: 0, row_start: 0, row_end: 10 }]);
        let two = band_layout(&[(0, 10), (1, 5)], 2);
        assert_eq!(two[1], BandPlacement { segment_id: 1, row_start: 12, row_end: 17 });
    }

    #[test]
    fn composed_raster_marks_dividers_red() {
        let cfg = small_cfg();
        let mut img = image_with_band(cfg, 3);
        img.add_band(1);
        img.set_extent(1, 2).unwrap();
        img.integrate(0, 1, &[sample(0, 0, 40.0, 1.0)]).unwrap();
        let composed = img.snapshot().compose();
        assert_eq!((composed.width, composed.height), (8, 7));
        assert_eq!(&composed.rgb[(3 * 8) * 3..(3 * 8) * 3 + 3], &[255, 0, 0]);
        assert_eq!(&composed.rgb[(5 * 8) * 3..(5 * 8) * 3 + 3], &[40, 40, 40]);
        assert_eq!(&composed.rgb[0..3], &[0, 0, 0]);
    }

    #[test]
    fn remove_band_requires_empty_band() {
        let mut img = image_with_band(small_cfg(), 2);
        img.integrate(4, 0, &[sample(0, 0, 1.0, 1.0)]).unwrap();
        assert!(img.remove_band(0).is_err());
        img.deintegrate(4).unwrap();
        img.remove_band(0).unwrap();
        assert!(img.band(0).is_none());
    }

    fn cylinder_cloud(radius: f64, z_range: (f64, f64), origin: Vec3) -> PointCloud {
        let mut cloud = PointCloud { origin, ..Default::default() };
        for zi in 0..((z_range.1 - z_range.0) as usize * 2) {
            let z = z_range.0 + 0.5 * zi as f64 + 0.25;
            for ti in 0..720 {
                let theta = (ti as f64 + 0.5) / 720.0 * TAU;
                let p = Vec3::new(radius * theta.cos(), radius * theta.sin(), z);
                cloud.points.push(p);
                cloud.normals.push(Vec3::new(-theta.cos(), -theta.sin(), 0.0));
                cloud.colors.push([1, 2, 3]);
                cloud.source_pixels.push((zi as u32, ti as u32));
            }
        }
        cloud
    }

    #[test]
    fn normal_and_binormal_directions() {
        let cfg = UnfoldConfig::default();
        let cl = Centerline::straight(Vec3::zeros(), Vec3::z(), 50.0, 1.0).unwrap();
        let k = 17;
        let origin = cl.samples()[k];
        let along_n = PointCloud {
            points: vec![cl.samples()[k] + cl.normal(k) * 20.0, cl.samples()[k] + cl.binormal(k) * 20.0],
            normals: vec![-cl.normal(k), -cl.binormal(k)],
            colors: vec![[0; 3]; 2],
            source_pixels: vec![(0, 0); 2],
            origin,
        };
        let uv = map_points_to_uv(&along_n, &cl, &cfg).unwrap();
        assert_eq!((uv[0].row, uv[0].col), (17, 0));
        assert_eq!((uv[1].row, uv[1].col), (17, 90));
    }

    #[test]
    fn cylinder_cloud_matches_analytic_unwrap() {
        let cfg = UnfoldConfig::default();
        let cl = Centerline::straight(Vec3::zeros(), Vec3::z(), 100.0, 1.0).unwrap();
        let cloud = cylinder_cloud(25.0, (10.0, 90.0), Vec3::new(0.0, 0.0, 50.0));
        let uv = map_points_to_uv(&cloud, &cl, &cfg).unwrap();
        // Reference frame of a +z line: normal +x, binormal +y. Nothing is
        // dropped here, so samples stay aligned with the input points.
        assert_eq!(uv.len(), cloud.len());
        let total = cloud.len();
        let agree = cloud
            .points
            .iter()
            .zip(&uv)
            .filter(|(p, s)| {
                let theta = crate::geometry::wrap_tau(p.y.atan2(p.x));
                let want = ((p.z / cfg.row_height).floor() as u32, cfg.column_of(theta) as u32);
                (s.row, s.col) == want
            })
            .count();
        assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn points_beyond_ends_and_radius_are_dropped() {
        let cfg = UnfoldConfig::default();
        let cl = Centerline::straight(Vec3::zeros(), Vec3::z(), 10.0, 1.0).unwrap();
        let origin = Vec3::new(0.0, 0.0, 5.0);
        let cloud = PointCloud {
            points: vec![
                Vec3::new(20.0, 0.0, -5.0),
                Vec3::new(20.0, 0.0, 15.0),
                Vec3::new(70.0, 0.0, 5.0),
                Vec3::new(20.0, 0.0, 5.0),
            ],
            normals: vec![Vec3::new(-1.0, 0.0, 0.0); 4],
            colors: vec![[0; 3]; 4],
            source_pixels: vec![(0, 0); 4],
            origin,
        };
        let uv = map_points_to_uv(&cloud, &cl, &cfg).unwrap();
        assert_eq!(uv.len(), 1);
        assert_eq!(uv[0].row, 5);
    }

    #[test]
    fn grazing_rays_are_dropped() {
        let cfg = UnfoldConfig::default();
        let cl = Centerline::straight(Vec3::zeros(), Vec3::z(), 100.0, 1.0).unwrap();
        // Ray along +z hitting a wall whose normal is -x: grazing angle 0.
        let cloud = PointCloud {
            points: vec![Vec3::new(20.0, 0.0, 60.0)],
            normals: vec![Vec3::new(-1.0, 0.0, 0.0)],
            colors: vec![[0; 3]],
            source_pixels: vec![(0, 0)],
            origin: Vec3::new(20.0, 0.0, 10.0),
        };
        assert!(map_points_to_uv(&cloud, &cl, &cfg).unwrap().is_empty());
    }

    #[test]
    fn seam_columns_are_adjacent() {
        let cfg = UnfoldConfig::default();
        let eps = 1e-6;
        assert_eq!(cfg.column_of(eps), 0);
        assert_eq!(cfg.column_of(TAU - eps), cfg.n_theta - 1);
        assert_eq!((cfg.column_of(TAU - eps) + 1) % cfg.n_theta, cfg.column_of(eps));
    }

    #[test]
    fn weight_rule_clamps() {
        let cfg = UnfoldConfig::default();
        assert_eq!(sample_weight(1.0, 50.0, &cfg), 1.0);
        assert_eq!(sample_weight(1.0, 200.0, &cfg), 0.5);
        assert_eq!(sample_weight(0.01, 10.0, &cfg), 0.05);
    }
}
