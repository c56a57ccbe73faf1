//! Ground-truth coverage over tube coordinates.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::{categorize, CategoryLabel};
use crate::navigation::NavigationConfig;
use crate::unfolding::UnfoldConfig;

use super::RenderedView;

pub const ORACLE_MAGIC: &[u8; 8] = b"CNORACL1";

/// Seen flags over `(s, φ)` cells at the flattened-image resolution: row
/// `floor(s / row_height)`, column of `φ` about the tube axis frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCoverage {
    pub n_rows: usize,
    pub n_theta: usize,
    row_height_um: u64,
    seen: Vec<bool>,
}

impl OracleCoverage {
    pub fn new(length: f64, cfg: &UnfoldConfig) -> Self {
        let n_rows = (length / cfg.row_height).ceil() as usize + 1;
        Self {
            n_rows,
            n_theta: cfg.n_theta,
            row_height_um: (cfg.row_height * 1000.0).round() as u64,
            seen: vec![false; n_rows * cfg.n_theta],
        }
    }

    pub fn row_height(&self) -> f64 {
        self.row_height_um as f64 / 1000.0
    }

    pub fn cell_of(&self, s: f64, phi: f64) -> (usize, usize) {
        let row = ((s / self.row_height()).floor().max(0.0) as usize).min(self.n_rows - 1);
        let col = ((phi / std::f64::consts::TAU * self.n_theta as f64).floor() as usize).min(self.n_theta - 1);
        (row, col)
    }

    pub fn mark(&mut self, s: f64, phi: f64) {
        let (r, c) = self.cell_of(s, phi);
        self.seen[r * self.n_theta + c] = true;
    }

    /// Marks the cell behind every valid pixel of a rendered view.
    pub fn mark_view(&mut self, view: &RenderedView) {
        for (s, phi) in view.hits.iter().flatten() {
            self.mark(*s, *phi);
        }
    }

    pub fn is_seen(&self, row: usize, col: usize) -> bool {
        self.seen[row * self.n_theta + col]
    }

    pub fn merge(&mut self, other: &OracleCoverage) {
        for (a, b) in self.seen.iter_mut().zip(&other.seen) {
            *a |= *b;
        }
    }

    fn rows_between(&self, s_lo: f64, s_hi: f64) -> std::ops::Range<usize> {
        let lo = (s_lo / self.row_height()).floor().max(0.0) as usize;
        let hi = ((s_hi / self.row_height()).floor().max(0.0) as usize + 1).min(self.n_rows);
        lo.min(hi)..hi
    }

    /// Seen percentage over rows spanning `[s_lo, s_hi]`.
    pub fn coverage_between(&self, s_lo: f64, s_hi: f64) -> f64 {
        let rows = self.rows_between(s_lo, s_hi);
        let total = rows.len() * self.n_theta;
        let seen = rows
            .flat_map(|r| (0..self.n_theta).map(move |c| (r, c)))
            .filter(|(r, c)| self.is_seen(*r, *c))
            .count();
        if total == 0 {
            0.0
        } else {
            100.0 * seen as f64 / total as f64
        }
    }

    /// Per-quadrant seen percentage over rows spanning `[s_lo, s_hi]`;
    /// column `c` belongs to quadrant `floor(4c / n_theta)`.
    pub fn quadrant_coverage(&self, s_lo: f64, s_hi: f64) -> [f64; 4] {
        let mut acc = [(0usize, 0usize); 4];
        for r in self.rows_between(s_lo, s_hi) {
            for c in 0..self.n_theta {
                let q = 4 * c / self.n_theta;
                acc[q].1 += 1;
                if self.is_seen(r, c) {
                    acc[q].0 += 1;
                }
            }
        }
        acc.map(|(s, t)| if t == 0 { 0.0 } else { 100.0 * s as f64 / t as f64 })
    }

    pub fn quadrant_categories(&self, s_lo: f64, s_hi: f64) -> [CategoryLabel; 4] {
        self.quadrant_coverage(s_lo, s_hi)
            .map(|pct| categorize(pct).expect("percentages lie in [0, 100]"))
    }

    /// Per-tick hole flags at `row` by the compass rule: a column is unseen
    /// when most rows of `rows` (clipped to `row ± vote_rows / 2`) are, and a
    /// tick is a hole when more than `hole_fraction` of its columns are.
    pub fn uncovered_groups(&self, row: usize, rows: std::ops::Range<usize>, cfg: &NavigationConfig) -> Vec<bool> {
        let half = cfg.vote_rows / 2;
        let lo = row.saturating_sub(half).max(rows.start);
        let hi = (row + half).min(rows.end.saturating_sub(1)).min(self.n_rows - 1);
        let group = self.n_theta / cfg.n_ticks;
        let mut holes = vec![0usize; cfg.n_ticks];
        for col in 0..self.n_theta {
            let total = hi + 1 - lo;
            let unseen = (lo..=hi).filter(|r| !self.is_seen(*r, col)).count();
            if 2 * unseen > total {
                holes[col / group] += 1;
            }
        }
        holes
            .iter()
            .map(|h| *h as f64 > cfg.hole_fraction * group as f64)
            .collect()
    }

    /// 16-byte header (magic, `n_rows` u32 LE, `n_theta` u32 LE) followed by
    /// one byte per cell, row-major.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(ORACLE_MAGIC)?;
        out.write_all(&(self.n_rows as u32).to_le_bytes())?;
        out.write_all(&(self.n_theta as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.seen.iter().map(|s| *s as u8).collect();
        out.write_all(&bytes)
    }

    pub fn read<R: Read>(mut input: R, row_height: f64) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..8] != ORACLE_MAGIC {
            return Err(Error::Format("oracle file has a bad magic".into()));
        }
        let n_rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n_theta = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() != n_rows * n_theta || n_theta == 0 {
            return Err(Error::Format(format!(
                "oracle body holds {} cells, header says {n_rows}×{n_theta}",
                body.len()
            )));
        }
        Ok(Self {
            n_rows,
            n_theta,
            row_height_um: (row_height * 1000.0).round() as u64,
            seen: body.iter().map(|b| *b != 0).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::CategoryLabel::*;

    #[test]
    fn file_round_trip() {
        let cfg = UnfoldConfig::default();
        let mut o = OracleCoverage::new(10.0, &cfg);
        o.mark(3.5, 1.0);
        o.mark(9.9, 6.2);
        let mut buf = Vec::new();
        o.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], ORACLE_MAGIC);
        assert_eq!(buf.len(), 16 + o.n_rows * o.n_theta);
        assert_eq!(OracleCoverage::read(&buf[..], 1.0).unwrap(), o);
        buf[0] = b'X';
        assert!(OracleCoverage::read(&buf[..], 1.0).is_err());
    }

    #[test]
    fn quadrant_categories_follow_thresholds() {
        let cfg = UnfoldConfig::default();
        let mut o = OracleCoverage::new(9.0, &cfg);
        // 10 rows; quadrant 0 fully seen, quadrant 1 seen on 7 rows, quadrant 2 on 6, quadrant 3 none.
        for r in 0..10 {
            for c in 0..360 {
                let q = c / 90;
                let seen = match q {
                    0 => true,
                    1 => r < 7,
                    2 => r < 6,
                    _ => false,
                };
                if seen {
                    o.mark(r as f64 + 0.5, (c as f64 + 0.5).to_radians());
                }
            }
        }
        assert_eq!(o.quadrant_coverage(0.0, 9.5), [100.0, 70.0, 60.0, 0.0]);
        assert_eq!(
            o.quadrant_categories(0.0, 9.5),
            [MostlyCovered, PartiallyCovered, MostlyNotCovered, MostlyNotCovered]
        );
    }
}
