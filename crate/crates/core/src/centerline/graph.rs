//! Trajectory graph over camera positions and its shortest-path lengths.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Removes positions farther than `radius` from the component-wise median of
/// the centered sliding window of `window` neighbours (the point included).
///
/// Returns the retained positions in order together with the indices that
/// were dropped. Fails when more than 20% of the inputs are flagged.
pub fn filter_outliers(positions: &[Vec3], window: usize, radius: f64) -> Result<(Vec<Vec3>, Vec<usize>)> {
    let flagged = outlier_indices(positions, window, radius);
    if flagged.len() * 5 > positions.len() {
        return Err(Error::DegenerateTrajectory {
            flagged: flagged.len(),
            total: positions.len(),
        });
    }
    let drop: BTreeSet<usize> = flagged.iter().copied().collect();
    let kept = positions
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, p)| *p)
        .collect();
    Ok((kept, flagged))
}

pub(crate) fn outlier_indices(positions: &[Vec3], window: usize, radius: f64) -> Vec<usize> {
    let n = positions.len();
    let window = window.max(1);
    let half = window / 2;
    let mut flagged = Vec::new();
    let mut buf = Vec::with_capacity(window);
    for i in 0..n {
        // Shift the window inward at the ends so it always holds `window` items.
        let start = i.saturating_sub(half).min(n.saturating_sub(window));
        let end = (start + window).min(n);
        let med = Vec3::new(
            median(&mut buf, positions[start..end].iter().map(|p| p.x)),
            median(&mut buf, positions[start..end].iter().map(|p| p.y)),
            median(&mut buf, positions[start..end].iter().map(|p| p.z)),
        );
        if (positions[i] - med).norm() > radius {
            flagged.push(i);
        }
    }
    flagged
}

fn median(buf: &mut Vec<f64>, values: impl Iterator<Item = f64>) -> f64 {
    buf.clear();
    buf.extend(values);
    buf.sort_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Undirected graph of camera positions with edges between nodes closer than
/// `edge_threshold`, plus shortest-path distances from the root (the lowest
/// frame id). Unreachable nodes have no path length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGraph {
    edge_threshold: f64,
    nodes: BTreeMap<u64, Vec3>,
    adjacency: BTreeMap<u64, BTreeMap<u64, f64>>,
    path_length: BTreeMap<u64, f64>,
}

impl TrajectoryGraph {
    pub fn new(edge_threshold: f64) -> Self {
        Self {
            edge_threshold,
            nodes: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            path_length: BTreeMap::new(),
        }
    }

    /// Builds a graph from scratch.
    pub fn from_positions(edge_threshold: f64, positions: &BTreeMap<u64, Vec3>) -> Self {
        let mut g = Self::new(edge_threshold);
        g.update(positions);
        g
    }

    pub fn edge_threshold(&self) -> f64 {
        self.edge_threshold
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &BTreeMap<u64, Vec3> {
        &self.nodes
    }

    pub fn root(&self) -> Option<u64> {
        self.nodes.keys().next().copied()
    }

    pub fn path_length(&self, id: u64) -> Option<f64> {
        self.path_length.get(&id).copied()
    }

    pub fn path_lengths(&self) -> &BTreeMap<u64, f64> {
        &self.path_length
    }

    pub fn neighbours(&self, id: u64) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.adjacency.get(&id).into_iter().flat_map(|m| m.iter().map(|(k, v)| (*k, *v)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Inserts or moves nodes, rebuilds their incident edges and recomputes
    /// path lengths from the root.
    pub fn update(&mut self, new_positions: &BTreeMap<u64, Vec3>) {
        if new_positions.is_empty() {
            return;
        }
        for (&id, &p) in new_positions {
            self.detach(id);
            self.nodes.insert(id, p);
            self.adjacency.entry(id).or_default();
        }
        for (&id, p) in new_positions {
            let near: Vec<(u64, f64)> = self
                .nodes
                .iter()
                .filter(|(&other, _)| other != id)
                .filter_map(|(&other, q)| {
                    let d = (p - q).norm();
                    (d <= self.edge_threshold).then_some((other, d))
                })
                .collect();
            for (other, d) in near {
                self.adjacency.entry(id).or_default().insert(other, d);
                self.adjacency.entry(other).or_default().insert(id, d);
            }
        }
        self.recompute_path_lengths();
    }

    pub fn remove(&mut self, ids: &[u64]) {
        if ids.is_empty() {
            return;
        }
        for &id in ids {
            self.detach(id);
            self.nodes.remove(&id);
            self.adjacency.remove(&id);
        }
        self.recompute_path_lengths();
    }

    fn detach(&mut self, id: u64) {
        if let Some(neigh) = self.adjacency.get_mut(&id) {
            let old: Vec<u64> = neigh.keys().copied().collect();
            neigh.clear();
            for other in old {
                if let Some(m) = self.adjacency.get_mut(&other) {
                    m.remove(&id);
                }
            }
        }
    }

    fn recompute_path_lengths(&mut self) {
        self.path_length.clear();
        let Some(root) = self.root() else { return };
        let mut heap = BinaryHeap::new();
        self.path_length.insert(root, 0.0);
        heap.push(Entry { dist: 0.0, id: root });
        while let Some(Entry { dist, id }) = heap.pop() {
            if dist > self.path_length[&id] {
                continue;
            }
            let neighbours: Vec<(u64, f64)> = self.neighbours(id).collect();
            for (next, len) in neighbours {
                let cand = dist + len;
                let better = self.path_length.get(&next).is_none_or(|&cur| cand < cur);
                if better {
                    self.path_length.insert(next, cand);
                    heap.push(Entry { dist: cand, id: next });
                }
            }
        }
    }
}

pub fn update_graph(mut g: TrajectoryGraph, new_positions: &BTreeMap<u64, Vec3>) -> TrajectoryGraph {
    g.update(new_positions);
    g
}

#[derive(Debug, PartialEq)]
struct Entry {
    dist: f64,
    id: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then on id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
