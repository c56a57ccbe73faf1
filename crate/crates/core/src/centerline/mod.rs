//! Camera-trajectory centerline: outlier filtering, trajectory graph,
//! arc-length binning, smoothing B-spline and rotation-minimizing frames.

mod graph;
mod kdtree;
mod spline;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use graph::{filter_outliers, update_graph, TrajectoryGraph};
pub use kdtree::KdTree;
pub use spline::{target_rss, SmoothingSpline};

use crate::error::{Error, Result};
use crate::geometry::{reference_normal, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterlineConfig {
    /// Sliding-window length of the outlier filter.
    pub outlier_window: usize,
    /// Distance from the window median beyond which a position is an outlier (mm).
    pub outlier_radius: f64,
    /// Maximum edge length of the trajectory graph (mm).
    pub edge_threshold: f64,
    /// Width of the path-length bins (mm).
    pub bin_width: f64,
    /// Nominal arc-length spacing of centerline samples (mm).
    pub sample_spacing: f64,
    /// Uniform knot spacing of the smoothing spline (mm of path length).
    pub knot_spacing: f64,
    /// Per-bin residual allowance of the smoothing spline (mm); the residual
    /// budget grows with the bin count.
    pub smoothing: f64,
    /// Full recompute after this many newly arrived frames.
    pub recompute_every: usize,
}

impl Default for CenterlineConfig {
    fn default() -> Self {
        Self {
            outlier_window: 7,
            outlier_radius: 20.0,
            edge_threshold: 10.0,
            bin_width: 5.0,
            sample_spacing: 1.0,
            knot_spacing: 10.0,
            smoothing: 0.2,
            recompute_every: 30,
        }
    }
}

/// Arc-length sampled curve with rotation-minimizing frames and a
/// nearest-sample index.
#[derive(Debug, Clone)]
pub struct Centerline {
    samples: Vec<Vec3>,
    arclen: Vec<f64>,
    tangents: Vec<Vec3>,
    normals: Vec<Vec3>,
    binormals: Vec<Vec3>,
    spline: Option<SmoothingSpline>,
    index: KdTree,
}

/// Nearest-sample projection of a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineProjection {
    /// Zero-based index of the nearest sample.
    pub sample_index: usize,
    pub arc_length: f64,
    /// Query minus sample position.
    pub radial_vector: Vec3,
}

impl Centerline {
    /// Builds a centerline from ordered samples and their tangents; frames are
    /// transported from `reference_normal` of the first tangent.
    pub fn from_samples(samples: Vec<Vec3>, tangents: Vec<Vec3>, spline: Option<SmoothingSpline>) -> Result<Self> {
        if samples.is_empty() || samples.len() != tangents.len() {
            return Err(Error::EmptyCenterline);
        }
        let tangents: Vec<Vec3> = tangents.iter().map(|t| t.normalize()).collect();
        let normals = rotation_minimizing_normals(&samples, &tangents);
        let binormals = tangents.iter().zip(&normals).map(|(t, n)| t.cross(n)).collect();
        let mut arclen = Vec::with_capacity(samples.len());
        let mut acc = 0.0;
        for (i, s) in samples.iter().enumerate() {
            if i > 0 {
                acc += (s - samples[i - 1]).norm();
            }
            arclen.push(acc);
        }
        let index = KdTree::build(&samples);
        Ok(Self {
            samples,
            arclen,
            tangents,
            normals,
            binormals,
            spline,
            index,
        })
    }

    /// Straight segment from `start` along `direction`.
    pub fn straight(start: Vec3, direction: Vec3, length: f64, spacing: f64) -> Result<Self> {
        let dir = direction.try_normalize(1e-12).ok_or(Error::EmptyCenterline)?;
        let n = (length / spacing).floor() as usize + 1;
        let samples = (0..n).map(|k| start + dir * (k as f64 * spacing)).collect();
        Self::from_samples(samples, vec![dir; n], None)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec3] {
        &self.samples
    }

    pub fn arclen(&self) -> &[f64] {
        &self.arclen
    }

    pub fn total_length(&self) -> f64 {
        self.arclen.last().copied().unwrap_or(0.0)
    }

    pub fn tangent(&self, k: usize) -> Vec3 {
        self.tangents[k]
    }

    pub fn normal(&self, k: usize) -> Vec3 {
        self.normals[k]
    }

    pub fn binormal(&self, k: usize) -> Vec3 {
        self.binormals[k]
    }

    pub fn spline(&self) -> Option<&SmoothingSpline> {
        self.spline.as_ref()
    }

    /// Nearest sample to `t`; ties go to the lower index.
    pub fn project(&self, t: &Vec3) -> Result<CenterlineProjection> {
        let (k, _) = self.index.nearest(t).ok_or(Error::EmptyCenterline)?;
        Ok(CenterlineProjection {
            sample_index: k,
            arc_length: self.arclen[k],
            radial_vector: t - self.samples[k],
        })
    }

    /// Arc length of the cross-section through the query: the nearest
    /// sample's arc length plus the query's offset along that sample's
    /// tangent, clamped to half the spacing to the neighbouring samples.
    /// Rows taken from this do not alias with the sample spacing.
    pub fn section_arc_length(&self, proj: &CenterlineProjection) -> f64 {
        let k = proj.sample_index;
        let along = proj.radial_vector.dot(&self.tangents[k]);
        let lo = if k > 0 { 0.5 * (self.arclen[k - 1] - self.arclen[k]) } else { along.min(0.0) };
        let hi = if k + 1 < self.len() { 0.5 * (self.arclen[k + 1] - self.arclen[k]) } else { along.max(0.0) };
        self.arclen[k] + along.clamp(lo, hi)
    }

    /// Angle of `radial` about the tangent of sample `k`, measured from the
    /// normal toward the binormal, in `[0, 2π)`.
    #[inline]
    pub fn angle_at(&self, k: usize, radial: &Vec3) -> f64 {
        let y = radial.dot(&self.binormals[k]);
        let x = radial.dot(&self.normals[k]);
        crate::geometry::wrap_tau(y.atan2(x))
    }

    /// Largest per-sample change between two centerlines over samples
    /// `range`, as translation plus `lambda` times the rotation of the frame.
    /// Samples missing from either curve count as infinite change.
    pub fn sample_delta(&self, other: &Centerline, range: std::ops::RangeInclusive<usize>, lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for k in range {
            if k >= self.len() || k >= other.len() {
                return f64::INFINITY;
            }
            let dp = (self.samples[k] - other.samples[k]).norm();
            let cos_n = self.normals[k].dot(&other.normals[k]);
            let cos_t = self.tangents[k].dot(&other.tangents[k]);
            let dn = cos_n.clamp(-1.0, 1.0).acos();
            let dt = cos_t.clamp(-1.0, 1.0).acos();
            worst = worst.max(dp + lambda * dn.max(dt));
        }
        worst
    }

    /// True when both curves have bit-identical samples and frames.
    pub fn same_geometry(&self, other: &Centerline) -> bool {
        self.samples == other.samples && self.normals == other.normals && self.tangents == other.tangents
    }

    /// Writes `index,x,y,z,arc_length,tx,ty,tz,nx,ny,nz,bx,by,bz` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,x,y,z,arc_length,tx,ty,tz,nx,ny,nz,bx,by,bz")?;
        for k in 0..self.len() {
            let (p, t, n, b) = (self.samples[k], self.tangents[k], self.normals[k], self.binormals[k]);
            writeln!(
                out,
                "{k},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.x, p.y, p.z, self.arclen[k], t.x, t.y, t.z, n.x, n.y, n.z, b.x, b.y, b.z
            )?;
        }
        Ok(())
    }
}

/// Double-reflection transport of the normal along a sampled curve.
pub fn rotation_minimizing_normals(samples: &[Vec3], tangents: &[Vec3]) -> Vec<Vec3> {
    let mut normals = Vec::with_capacity(samples.len());
    if samples.is_empty() {
        return normals;
    }
    normals.push(reference_normal(&tangents[0]));
    for i in 0..samples.len() - 1 {
        let r = normals[i];
        let v1 = samples[i + 1] - samples[i];
        let c1 = v1.norm_squared();
        let (r_l, t_l) = if c1 > 1e-18 {
            (
                r - v1 * (2.0 / c1 * v1.dot(&r)),
                tangents[i] - v1 * (2.0 / c1 * v1.dot(&tangents[i])),
            )
        } else {
            (r, tangents[i])
        };
        let v2 = tangents[i + 1] - t_l;
        let c2 = v2.norm_squared();
        let next = if c2 > 1e-18 { r_l - v2 * (2.0 / c2 * v2.dot(&r_l)) } else { r_l };
        let t = tangents[i + 1];
        let next = (next - t * next.dot(&t))
            .try_normalize(1e-12)
            .unwrap_or_else(|| reference_normal(&t));
        normals.push(next);
    }
    normals
}

/// Bins nodes by path length, fits a smoothing spline through the bin
/// centroids (parameterized by the mean path length of each bin), resamples it at
/// `sample_spacing` in arc length and builds rotation-minimizing frames.
///
/// Empty bins between occupied ones are bridged by the spline.
pub fn fit_centerline(g: &TrajectoryGraph, cfg: &CenterlineConfig) -> Result<Centerline> {
    let mut bins: BTreeMap<i64, (Vec3, f64, usize)> = BTreeMap::new();
    for (id, l) in g.path_lengths() {
        let p = g.nodes()[id];
        let b = (l / cfg.bin_width).floor() as i64;
        let e = bins.entry(b).or_insert((Vec3::zeros(), 0.0, 0));
        e.0 += p;
        e.1 += l;
        e.2 += 1;
    }
    if bins.len() < 2 {
        return Err(Error::InsufficientTrajectory { bins: bins.len() });
    }
    // Partially filled end bins would bias a bin-center parameter, so each
    // centroid is placed at the mean path length of its nodes.
    let params: Vec<f64> = bins.values().map(|(_, l, n)| l / *n as f64).collect();
    let centroids: Vec<Vec3> = bins.values().map(|(sum, _, n)| sum / *n as f64).collect();
    let spline = SmoothingSpline::fit(
        &params,
        &centroids,
        cfg.knot_spacing,
        target_rss(centroids.len(), cfg.smoothing),
    );
    resample(spline, cfg.sample_spacing)
}

fn resample(spline: SmoothingSpline, spacing: f64) -> Result<Centerline> {
    let (t0, t1) = spline.domain();
    let dt = (spacing / 8.0).min((t1 - t0) / 16.0).max(1e-6);
    let steps = ((t1 - t0) / dt).ceil() as usize;
    let mut dense_t = Vec::with_capacity(steps + 1);
    let mut dense_s = Vec::with_capacity(steps + 1);
    let mut prev = spline.eval(t0);
    let mut acc = 0.0;
    for i in 0..=steps {
        let t = (t0 + i as f64 * dt).min(t1);
        let p = spline.eval(t);
        acc += (p - prev).norm();
        prev = p;
        dense_t.push(t);
        dense_s.push(acc);
    }
    let total = acc;
    let count = (total / spacing).floor() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut tangents = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let s = k as f64 * spacing;
        while j + 1 < dense_s.len() - 1 && dense_s[j + 1] < s {
            j += 1;
        }
        let (sa, sb) = (dense_s[j], dense_s[(j + 1).min(dense_s.len() - 1)]);
        let f = if sb > sa { ((s - sa) / (sb - sa)).clamp(0.0, 1.0) } else { 0.0 };
        let t = dense_t[j] + f * (dense_t[(j + 1).min(dense_t.len() - 1)] - dense_t[j]);
        samples.push(spline.eval(t));
        let d = spline.derivative(t);
        tangents.push(if d.norm() > 1e-12 {
            d
        } else {
            samples.last().unwrap() - samples.get(samples.len().saturating_sub(2)).copied().unwrap_or_default()
        });
    }
    if tangents.iter().any(|t| t.norm() < 1e-12) {
        return Err(Error::InsufficientTrajectory { bins: 1 });
    }
    Centerline::from_samples(samples, tangents, Some(spline))
}

pub fn project_to_centerline(cl: &Centerline, t: &Vec3) -> Result<CenterlineProjection> {
    cl.project(t)
}
