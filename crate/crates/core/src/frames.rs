//! Frame data model and depth back-projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

/// Pinhole intrinsics of a rectified camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with a horizontal field of view of `hfov` radians.
    pub fn with_fov(width: usize, height: usize, hfov: f64) -> Result<Self> {
        let f = (width as f64 * 0.5) / (hfov * 0.5).tan();
        Self::new(f, f, width as f64 * 0.5, height as f64 * 0.5, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Camera-space point for pixel `(row, col)` at depth `d` along +z.
    #[inline]
    pub fn unproject(&self, row: usize, col: usize, d: f64) -> Vec3 {
        Vec3::new(
            (col as f64 - self.cx) * d / self.fx,
            (row as f64 - self.cy) * d / self.fy,
            d,
        )
    }

    /// Pixel coordinates `(u, v)` = (column, row) of a camera-space point.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Unit viewing direction through pixel `(row, col)`.
    pub fn ray(&self, row: f64, col: f64) -> Vec3 {
        Vec3::new((col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0).normalize()
    }
}

/// One posed RGB-D frame. Rasters are row-major; depth is in millimeters with
/// zero marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedFrame {
    pub frame_id: u64,
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub color: Vec<[u8; 3]>,
    pub depth: Vec<f32>,
    pub pose: Pose,
    pub segment_id: u32,
}

impl PosedFrame {
    pub fn check_dimensions(&self, intr: &Intrinsics) -> Result<()> {
        let n = intr.width * intr.height;
        if self.width != intr.width || self.height != intr.height || self.color.len() != n || self.depth.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (intr.width, intr.height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }
}

/// Back-projected samples of one frame in camera coordinates.
///
/// Pose independent, so the session keeps one per frame and re-poses it on
/// every re-integration.
#[derive(Debug, Clone, Default)]
pub struct CameraCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    pub source_pixels: Vec<(u32, u32)>,
}

impl CameraCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_world(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self.normals.iter().map(|n| pose.transform_vector(n)).collect(),
            colors: self.colors.clone(),
            source_pixels: self.source_pixels.clone(),
            origin: pose.position(),
        }
    }
}

/// World-space point cloud with per-point surface normals and the camera
/// center the points were observed from.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    pub source_pixels: Vec<(u32, u32)>,
    pub origin: Vec3,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Camera-space back-projection of every `stride`-th pixel with valid depth.
/// The sampling lattice starts at a per-frame phase hashed from the frame id,
/// so periodic camera motion does not keep sampling the same surface lattice.
///
/// Normals come from depth differences between neighbouring pixels and face
/// the camera. Pixels whose neighbourhood has no valid depth keep a normal
/// anti-parallel to their viewing ray.
pub fn backproject_camera(frame: &PosedFrame, intr: &Intrinsics, stride: usize) -> Result<CameraCloud> {
    frame.check_dimensions(intr)?;
    let stride = stride.max(1);
    let (w, h) = (intr.width, intr.height);
    let reach = (stride / 2).max(1);
    let at = |row: usize, col: usize| -> Option<Vec3> {
        let d = frame.depth[row * w + col];
        (d > 0.0 && d.is_finite()).then(|| intr.unproject(row, col, d as f64))
    };

    let (row0, col0) = sampling_phase(frame.frame_id, stride);
    let mut cloud = CameraCloud::default();
    for row in (row0.min(h)..h).step_by(stride) {
        for col in (col0.min(w)..w).step_by(stride) {
            let Some(p) = at(row, col) else { continue };
            let du = neighbour_difference(p, col, w, reach, |c| at(row, c));
            let dv = neighbour_difference(p, row, h, reach, |r| at(r, col));
            let view = -p.normalize();
            let normal = match (du, dv) {
                (Some(a), Some(b)) => a.cross(&b).try_normalize(1e-12).unwrap_or(view),
                _ => view,
            };
            let normal = if normal.dot(&view) < 0.0 { -normal } else { normal };
            cloud.points.push(p);
            cloud.normals.push(normal);
            cloud.colors.push(frame.color[row * w + col]);
            cloud.source_pixels.push((row as u32, col as u32));
        }
    }
    Ok(cloud)
}

/// `(row, col)` offset of the sampling lattice of frame `frame_id`.
pub fn sampling_phase(frame_id: u64, stride: usize) -> (usize, usize) {
    // splitmix64 finalizer
    let mut z = frame_id.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let s = stride.max(1) as u64;
    ((z % s) as usize, ((z >> 32) % s) as usize)
}

fn neighbour_difference(
    p: Vec3,
    idx: usize,
    len: usize,
    reach: usize,
    at: impl Fn(usize) -> Option<Vec3>,
) -> Option<Vec3> {
    let fwd = (idx + reach < len).then(|| at(idx + reach)).flatten();
    let back = (idx >= reach).then(|| at(idx - reach)).flatten();
    match (fwd, back) {
        (Some(f), Some(b)) => Some(f - b),
        (Some(f), None) => Some(f - p),
        (None, Some(b)) => Some(p - b),
        (None, None) => None,
    }
}

/// World-space back-projection: `R·[(u−cx)d/fx, (v−cy)d/fy, d] + t` for every
/// sampled pixel with `d > 0`.
pub fn backproject(frame: &PosedFrame, intr: &Intrinsics, stride: usize) -> Result<PointCloud> {
    Ok(backproject_camera(frame, intr, stride)?.to_world(&frame.pose))
}
