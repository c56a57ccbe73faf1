//! Static 3D k-d tree for nearest-sample queries.
//!
//! Ties on distance resolve to the lowest point index, matching an exhaustive
//! scan that keeps the first minimum.

use crate::geometry::Vec3;

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices in implicit-tree order: the median of each range is its root.
    order: Vec<u32>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        Self {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` so equidistant points on the far side still compete on index.
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build_range(points: &[Vec3], order: &mut [u32], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][axis]
            .total_cmp(&points[*b as usize][axis])
            .then(a.cmp(b))
    });
    let (left, right) = order.split_at_mut(mid);
    build_range(points, left, depth + 1);
    build_range(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::build(&[]).nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&Vec3::zeros()).unwrap().0, 0);
        let dup = vec![Vec3::new(2.0, 2.0, 2.0); 5];
        assert_eq!(KdTree::build(&dup).nearest(&Vec3::zeros()).unwrap().0, 0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-5i32..5, -5i32..5, -5i32..5), 1..200),
            q in (-6.0f64..6.0, -6.0f64..6.0, -6.0f64..6.0),
        ) {
            // Integer lattice points produce plenty of exact ties.
            let pts: Vec<Vec3> = pts.iter().map(|(x, y, z)| Vec3::new(*x as f64, *y as f64, *z as f64)).collect();
            let q = Vec3::new(q.0.round(), q.1.round(), q.2);
            let tree = KdTree::build(&pts);
            prop_assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
        }
    }
}
