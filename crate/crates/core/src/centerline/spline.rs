//! Penalized cubic B-spline smoothing of 3D points.
//!
//! Uniform knots are anchored at parameter zero, so extending the data range
//! only appends basis functions and leaves the interior basis untouched. The
//! smoothing weight is chosen by bisection so that the residual sum of squares
//! matches a target, in the spirit of classic smoothing-spline fitting.

use nalgebra::DMatrix;

use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    knot_spacing: f64,
    /// Index of the first basis function; basis `m` is supported on
    /// `[m·h, (m+4)·h)`.
    first_basis: i64,
    coeffs: Vec<Vec3>,
    t_min: f64,
    t_max: f64,
    lambda: f64,
}

/// Cubic uniform B-spline basis weights for local parameter `u ∈ [0, 1)`,
/// ordered from the oldest contributing basis to the newest.
#[inline]
fn basis(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

#[inline]
fn basis_derivative(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let v = 1.0 - u;
    [
        -0.5 * v * v,
        (9.0 * u2 - 12.0 * u) / 6.0,
        (-9.0 * u2 + 6.0 * u + 3.0) / 6.0,
        0.5 * u2,
    ]
}

impl SmoothingSpline {
    /// Fits `points` at strictly increasing `params`.
    ///
    /// `target_rss` bounds the residual sum of squares; the smoothest curve
    /// meeting it is returned. At least two points are required.
    pub fn fit(params: &[f64], points: &[Vec3], knot_spacing: f64, target_rss: f64) -> Self {
        assert!(params.len() == points.len() && params.len() >= 2);
        let h = knot_spacing;
        let t_min = params[0];
        let t_max = *params.last().unwrap();
        let first_basis = (t_min / h).floor() as i64 - 3;
        let last_basis = (t_max / h).floor() as i64;
        let n_coef = (last_basis - first_basis + 1) as usize;

        // Design matrix rows: each datum touches 4 consecutive bases.
        let n = params.len();
        let mut design = DMatrix::<f64>::zeros(n, n_coef);
        for (row, &t) in params.iter().enumerate() {
            let (span, u) = locate(t, h);
            let w = basis(u);
            for (k, wk) in w.iter().enumerate() {
                let col = (span - 3 + k as i64 - first_basis) as usize;
                design[(row, col)] = *wk;
            }
        }
        let mut penalty = DMatrix::<f64>::zeros(n_coef, n_coef);
        for m in 1..n_coef.saturating_sub(1) {
            let idx = [m - 1, m, m + 1];
            let d = [1.0, -2.0, 1.0];
            for (i, di) in idx.iter().zip(d) {
                for (j, dj) in idx.iter().zip(d) {
                    penalty[(*i, *j)] += di * dj;
                }
            }
        }
        let gram = design.transpose() * &design;
        let mut rhs = DMatrix::<f64>::zeros(n_coef, 3);
        for (row, p) in points.iter().enumerate() {
            for col in 0..n_coef {
                let b = design[(row, col)];
                if b != 0.0 {
                    rhs[(col, 0)] += b * p.x;
                    rhs[(col, 1)] += b * p.y;
                    rhs[(col, 2)] += b * p.z;
                }
            }
        }
        let data = DMatrix::from_fn(n, 3, |r, c| points[r][c]);
        // Exact fits still leave rounding-level residuals.
        let target_rss = target_rss.max(1e-12 * n as f64);

        let solve = |lambda: f64| -> Option<(DMatrix<f64>, f64)> {
            let system = &gram + &penalty * lambda + DMatrix::<f64>::identity(n_coef, n_coef) * 1e-12;
            let coeffs = system.cholesky()?.solve(&rhs);
            let resid = &design * &coeffs - &data;
            Some((coeffs, resid.norm_squared()))
        };

        const LAMBDA_MIN: f64 = 1e-6;
        const LAMBDA_MAX: f64 = 1e6;
        let (best, lambda) = match solve(LAMBDA_MAX) {
            Some((c, rss)) if rss <= target_rss => (c, LAMBDA_MAX),
            _ => {
                let (mut lo, mut hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
                let (mut best, _) = solve(LAMBDA_MIN).expect("penalized normal equations are positive definite");
                let mut lambda = LAMBDA_MIN;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    match solve(mid.exp()) {
                        Some((c, rss)) if rss <= target_rss => {
                            best = c;
                            lambda = mid.exp();
                            lo = mid;
                        }
                        _ => hi = mid,
                    }
                }
                (best, lambda)
            }
        };
        let coeffs = (0..n_coef)
            .map(|i| Vec3::new(best[(i, 0)], best[(i, 1)], best[(i, 2)]))
            .collect();
        Self {
            knot_spacing: h,
            first_basis,
            coeffs,
            t_min,
            t_max,
            lambda,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn knot_spacing(&self) -> f64 {
        self.knot_spacing
    }

    pub fn coefficients(&self) -> &[Vec3] {
        &self.coeffs
    }

    pub fn first_basis(&self) -> i64 {
        self.first_basis
    }

    fn window(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(self.t_min, self.t_max);
        let (span, u) = locate(t, self.knot_spacing);
        let start = (span - 3 - self.first_basis).clamp(0, self.coeffs.len() as i64 - 4) as usize;
        (start, u)
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        let (start, u) = self.window(t);
        basis(u)
            .iter()
            .enumerate()
            .fold(Vec3::zeros(), |acc, (k, w)| acc + self.coeffs[start + k] * *w)
    }

    pub fn derivative(&self, t: f64) -> Vec3 {
        let (start, u) = self.window(t);
        basis_derivative(u)
            .iter()
            .enumerate()
            .fold(Vec3::zeros(), |acc, (k, w)| acc + self.coeffs[start + k] * *w)
            / self.knot_spacing
    }
}

/// Knot span index and local parameter of `t` for uniform spacing `h`.
#[inline]
fn locate(t: f64, h: f64) -> (i64, f64) {
    let x = t / h;
    let span = x.floor();
    (span as i64, x - span)
}

/// Residual target for `n` data points with per-point tolerance `sigma`.
pub fn target_rss(n: usize, sigma: f64) -> f64 {
    n as f64 * sigma * sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_partitions_unity() {
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            assert!((basis(u).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(basis_derivative(u).iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn reproduces_a_line() {
        let params: Vec<f64> = (0..12).map(|i| 2.5 + 5.0 * i as f64).collect();
        let points: Vec<Vec3> = params.iter().map(|t| Vec3::new(1.0, -2.0, 0.0) + Vec3::new(0.3, 0.1, 1.0) * *t).collect();
        let s = SmoothingSpline::fit(&params, &points, 10.0, 0.0);
        for t in [2.5, 7.0, 33.3, 57.5] {
            let want = Vec3::new(1.0, -2.0, 0.0) + Vec3::new(0.3, 0.1, 1.0) * t;
            assert!((s.eval(t) - want).norm() < 1e-6, "t={t}");
            assert!((s.derivative(t) - Vec3::new(0.3, 0.1, 1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn two_points_give_the_segment() {
        let s = SmoothingSpline::fit(&[2.5, 7.5], &[Vec3::zeros(), Vec3::new(0.0, 0.0, 5.0)], 10.0, 0.0);
        let mid = s.eval(5.0);
        assert!((mid - Vec3::new(0.0, 0.0, 2.5)).norm() < 1e-6);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let params: Vec<f64> = (0..20).map(|i| 2.5 + 5.0 * i as f64).collect();
        let points: Vec<Vec3> = params
            .iter()
            .map(|t| Vec3::new((t / 15.0).cos() * 10.0, (t / 15.0).sin() * 10.0, 0.4 * t))
            .collect();
        let s = SmoothingSpline::fit(&params, &points, 10.0, 1.0);
        let eps = 1e-5;
        for t in [5.0, 31.0, 64.2, 90.0] {
            let fd = (s.eval(t + eps) - s.eval(t - eps)) / (2.0 * eps);
            assert!((fd - s.derivative(t)).norm() < 1e-6);
        }
    }

    #[test]
    fn rss_respects_target() {
        let params: Vec<f64> = (0..30).map(|i| 2.5 + 5.0 * i as f64).collect();
        let points: Vec<Vec3> = params
            .iter()
            .enumerate()
            .map(|(i, t)| Vec3::new(if i % 2 == 0 { 0.3 } else { -0.3 }, 0.0, *t))
            .collect();
        let target = target_rss(points.len(), 0.35);
        let s = SmoothingSpline::fit(&params, &points, 10.0, target);
        let rss: f64 = params.iter().zip(&points).map(|(t, p)| (s.eval(*t) - p).norm_squared()).sum();
        assert!(rss <= target * (1.0 + 1e-9), "{rss} > {target}");
    }
}
