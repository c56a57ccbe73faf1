//! Evaluation arithmetic: coverage categories, weighted Cohen's kappa and
//! quadrant rank labels.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryLabel {
    MostlyNotCovered = 0,
    PartiallyCovered = 1,
    MostlyCovered = 2,
}

impl CategoryLabel {
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(v: usize) -> Result<Self> {
        match v {
            0 => Ok(Self::MostlyNotCovered),
            1 => Ok(Self::PartiallyCovered),
            2 => Ok(Self::MostlyCovered),
            _ => Err(Error::OutOfRange {
                what: "category ordinal",
                value: v as f64,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MostlyNotCovered => "mostly not covered",
            Self::PartiallyCovered => "partially covered",
            Self::MostlyCovered => "mostly covered",
        }
    }
}

/// `≤ 60` → mostly not covered, `≤ 80` → partially covered, else mostly covered.
pub fn categorize(coverage_pct: f64) -> Result<CategoryLabel> {
    if !(0.0..=100.0).contains(&coverage_pct) {
        return Err(Error::OutOfRange {
            what: "coverage percentage",
            value: coverage_pct,
        });
    }
    Ok(if coverage_pct <= 60.0 {
        CategoryLabel::MostlyNotCovered
    } else if coverage_pct <= 80.0 {
        CategoryLabel::PartiallyCovered
    } else {
        CategoryLabel::MostlyCovered
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Linear,
    Quadratic,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::Config(format!("unknown weighting {other:?}"))),
        }
    }
}

/// Weighted kappa over ordinals in `0..n_categories`:
/// `1 − Σ w_ij O_ij / Σ w_ij E_ij` with `w_ij = |i − j|` or `(i − j)²`.
/// Returns 1 when the expected disagreement is zero (both raters constant and equal).
pub fn weighted_kappa_n(a: &[usize], b: &[usize], n_categories: usize, weighting: Weighting) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::OutOfRange {
            what: "label count",
            value: 0.0,
        });
    }
    if let Some(bad) = a.iter().chain(b).find(|v| **v >= n_categories) {
        return Err(Error::OutOfRange {
            what: "category ordinal",
            value: *bad as f64,
        });
    }
    let k = n_categories;
    let n = a.len() as f64;
    let mut observed = vec![0.0; k * k];
    let (mut row, mut col) = (vec![0.0; k], vec![0.0; k]);
    for (x, y) in a.iter().zip(b) {
        observed[x * k + y] += 1.0;
        row[*x] += 1.0;
        col[*y] += 1.0;
    }
    let w = |i: usize, j: usize| {
        let d = i.abs_diff(j) as f64;
        match weighting {
            Weighting::Linear => d,
            Weighting::Quadratic => d * d,
        }
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            num += w(i, j) * observed[i * k + j] / n;
            den += w(i, j) * row[i] * col[j] / (n * n);
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

/// Weighted kappa over the three coverage categories.
pub fn weighted_kappa(a: &[usize], b: &[usize], weighting: Weighting) -> Result<f64> {
    weighted_kappa_n(a, b, 3, weighting)
}

/// Rank of each quadrant (1 = most covered); ties go to the lower index.
pub fn quadrant_rank_labels(per_quadrant: [f64; 4]) -> [u8; 4] {
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|x, y| per_quadrant[*y].total_cmp(&per_quadrant[*x]).then(x.cmp(y)));
    let mut ranks = [0u8; 4];
    for (pos, q) in order.iter().enumerate() {
        ranks[*q] = pos as u8 + 1;
    }
    ranks
}

/// Per-clip quadrant labels; the key is the clip id, the array holds the
/// label of quadrants 1..=4 (missing quadrants are `None`).
pub type Annotations = BTreeMap<String, [Option<CategoryLabel>; 4]>;

/// Reads `clip_id,quadrant,label` rows (quadrant 1..=4, label 0..=2). A
/// header row and blank lines are skipped.
pub fn read_annotations<R: BufRead>(input: R) -> Result<Annotations> {
    let mut out = Annotations::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::Format(format!("line {}: expected clip_id,quadrant,label", i + 1)));
        }
        let (Ok(q), Ok(label)) = (fields[1].parse::<usize>(), fields[2].parse::<usize>()) else {
            if i == 0 {
                continue;
            }
            return Err(Error::Format(format!("line {}: quadrant and label must be integers", i + 1)));
        };
        if !(1..=4).contains(&q) {
            return Err(Error::Format(format!("line {}: quadrant {q} outside 1..=4", i + 1)));
        }
        let label = CategoryLabel::from_ordinal(label)
            .map_err(|_| Error::Format(format!("line {}: label {label} outside 0..=2", i + 1)))?;
        out.entry(fields[0].to_string()).or_insert([None; 4])[q - 1] = Some(label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaRow {
    pub measure: &'static str,
    pub weighting: Weighting,
    pub items: usize,
    pub kappa: f64,
}

/// Agreement between reference annotations and predictions: kappa over the
/// matched quadrant categories and over per-clip quadrant ranks (ranks from
/// the category labels, ties by quadrant index), for both weightings.
pub fn kappa_table(reference: &Annotations, predicted: &Annotations) -> Result<Vec<KappaRow>> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for (clip, labels) in reference {
        let Some(pred) = predicted.get(clip) else { continue };
        for q in 0..4 {
            if let (Some(x), Some(y)) = (labels[q], pred[q]) {
                a.push(x.ordinal());
                b.push(y.ordinal());
            }
        }
        if labels.iter().all(Option::is_some) && pred.iter().all(Option::is_some) {
            let score = |l: &[Option<CategoryLabel>; 4]| l.map(|x| x.map_or(0.0, |c| c.ordinal() as f64));
            ra.extend(quadrant_rank_labels(score(labels)).iter().map(|r| *r as usize - 1));
            rb.extend(quadrant_rank_labels(score(pred)).iter().map(|r| *r as usize - 1));
        }
    }
    if a.is_empty() {
        return Err(Error::Format("no clip/quadrant pairs in common".into()));
    }
    let mut rows = Vec::new();
    for weighting in [Weighting::Linear, Weighting::Quadratic] {
        rows.push(KappaRow {
            measure: "category",
            weighting,
            items: a.len(),
            kappa: weighted_kappa(&a, &b, weighting)?,
        });
        if !ra.is_empty() {
            rows.push(KappaRow {
                measure: "quadrant_rank",
                weighting,
                items: ra.len(),
                kappa: weighted_kappa_n(&ra, &rb, 4, weighting)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thresholds() {
        assert_eq!(categorize(60.0).unwrap(), CategoryLabel::MostlyNotCovered);
        assert_eq!(categorize(60.000001).unwrap(), CategoryLabel::PartiallyCovered);
        assert_eq!(categorize(80.0).unwrap(), CategoryLabel::PartiallyCovered);
        assert_eq!(categorize(100.0).unwrap(), CategoryLabel::MostlyCovered);
        assert_eq!(categorize(0.0).unwrap(), CategoryLabel::MostlyNotCovered);
        assert!(categorize(100.5).is_err() && categorize(-1.0).is_err() && categorize(f64::NAN).is_err());
    }

    #[test]
    fn kappa_degenerate_and_errors() {
        assert_eq!(weighted_kappa(&[1, 1, 1], &[1, 1, 1], Weighting::Linear).unwrap(), 1.0);
        assert!(matches!(weighted_kappa(&[1], &[1, 2], Weighting::Linear), Err(Error::LengthMismatch(1, 2))));
        assert!(weighted_kappa(&[3], &[1], Weighting::Linear).is_err());
    }

    #[test]
    fn ranks() {
        assert_eq!(quadrant_rank_labels([100.0, 90.0, 80.0, 70.0]), [1, 2, 3, 4]);
        assert_eq!(quadrant_rank_labels([70.0, 80.0, 90.0, 100.0]), [4, 3, 2, 1]);
    }

    #[test]
    fn annotation_parsing() {
        let text = "clip_id,quadrant,label\nc1,1,2\nc1,4,0\n\nc2,2,1\n";
        let ann = read_annotations(text.as_bytes()).unwrap();
        assert_eq!(ann["c1"][0], Some(CategoryLabel::MostlyCovered));
        assert_eq!(ann["c1"][3], Some(CategoryLabel::MostlyNotCovered));
        assert_eq!(ann["c2"][1], Some(CategoryLabel::PartiallyCovered));
        assert!(read_annotations("c1,5,0\n".as_bytes()).is_err());
        assert!(read_annotations("c1,1,3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn categorize_is_monotone(x in 0.0f64..=100.0, y in 0.0f64..=100.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(categorize(lo).unwrap() <= categorize(hi).unwrap());
        }
    }
}
