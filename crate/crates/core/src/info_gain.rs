//! Information-gain ranking of numeric features.
//!
//! Continuous features are discretized with equal-frequency bins whose edges
//! are order statistics of the feature itself, so any strictly increasing
//! transform of a feature leaves its bin assignment (and its score)
//! unchanged. All entropies are in bits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};

/// `-Σ p log2 p` over the nonzero classes.
pub fn entropy(class_counts: &[usize]) -> Result<f64> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("entropy of an empty count vector".into()));
    }
    Ok(entropy_unchecked(class_counts, total))
}

fn entropy_unchecked(class_counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    let h: f64 = class_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a pure node yields -0.0
    h.max(0.0)
}

/// `H(Y|X) = Σ_i p(x_i) H(Y | X = x_i)` from a bin × class count matrix.
pub fn conditional_entropy(joint_counts: &[Vec<usize>]) -> Result<f64> {
    let total: usize = joint_counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Data("conditional entropy of an empty table".into()));
    }
    let n = total as f64;
    Ok(joint_counts
        .iter()
        .filter_map(|row| {
            let m: usize = row.iter().sum();
            (m > 0).then(|| m as f64 / n * entropy_unchecked(row, m))
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    EqualFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discretizer {
    pub strategy: BinStrategy,
    pub bin_count: usize,
}

impl Default for Discretizer {
    fn default() -> Self {
        Self {
            strategy: BinStrategy::EqualFrequency,
            bin_count: 10,
        }
    }
}

/// Sorted, strictly increasing cut points. A value `v` falls in bin
/// `#{edges < v}`, so `v <= edges[0]` is bin 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<f64>);

impl BinEdges {
    pub fn bin(&self, v: f64) -> usize {
        self.0.partition_point(|&e| e < v)
    }

    pub fn bin_count(&self) -> usize {
        self.0.len() + 1
    }
}

impl Discretizer {
    pub fn equal_frequency(bin_count: usize) -> Self {
        Self {
            strategy: BinStrategy::EqualFrequency,
            bin_count,
        }
    }

    /// Cut points at the `k / bin_count` lower order statistics, with
    /// duplicates and any cut at the maximum removed.
    pub fn fit(&self, values: &[f64]) -> BinEdges {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if sorted.is_empty() || self.bin_count < 2 {
            return BinEdges(Vec::new());
        }
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let max = sorted[n - 1];
        let mut edges: Vec<f64> = (1..self.bin_count)
            .map(|k| {
                let idx = (k * n).div_ceil(self.bin_count).max(1) - 1;
                sorted[idx]
            })
            .filter(|&e| e < max)
            .collect();
        edges.dedup();
        BinEdges(edges)
    }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |&m| m + 1)
}

/// `H(Y) - H(Y|X)` after discretizing `feature`. Clamped at 0.
pub fn information_gain(feature: &[f64], labels: &[usize], d: &Discretizer) -> Result<f64> {
    if feature.len() != labels.len() {
        return Err(Error::Shape(format!(
            "feature has {} values but there are {} labels",
            feature.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("information gain of an empty sample".into()));
    }
    let k = class_count(labels);
    let edges = d.fit(feature);
    let mut joint = vec![vec![0usize; k]; edges.bin_count()];
    let mut marginal = vec![0usize; k];
    for (&v, &y) in feature.iter().zip(labels) {
        joint[edges.bin(v)][y] += 1;
        marginal[y] += 1;
    }
    let h = entropy(&marginal)?;
    let hc = conditional_entropy(&joint)?;
    Ok((h - hc).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgScore {
    pub feature: String,
    /// Position among the table's numeric columns.
    pub column: usize,
    pub raw_ig: f64,
    pub normalized: f64,
}

/// Min-max rescaling to `[0, 1]`; if every score is equal, all map to 1.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / span).collect()
}

/// Scores every numeric column of `t`, normalizes, and sorts descending
/// (ties keep column order).
pub fn rank_ig(t: &Table, d: &Discretizer) -> Result<Vec<IgScore>> {
    let names = t.schema().numeric_names();
    if names.is_empty() {
        return Err(Error::Data("no numeric features to rank".into()));
    }
    let raw: Vec<f64> = (0..names.len())
        .into_par_iter()
        .map(|j| information_gain(&t.numeric_column(j), t.labels(), d))
        .collect::<Result<_>>()?;
    let normalized = min_max_normalize(&raw);
    let mut scores: Vec<IgScore> = names
        .iter()
        .enumerate()
        .map(|(j, name)| IgScore {
            feature: (*name).to_string(),
            column: j,
            raw_ig: raw[j],
            normalized: normalized[j],
        })
        .collect();
    scores.sort_by(|a, b| b.normalized.total_cmp(&a.normalized));
    Ok(scores)
}

/// `feature,raw_ig,normalized` rows in ranking order.
pub fn write_ranking_csv<W: std::io::Write>(scores: &[IgScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "raw_ig", "normalized"])?;
    for s in scores {
        w.write_record([s.feature.clone(), s.raw_ig.to_string(), s.normalized.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[5, 5]).unwrap(), 1.0);
        assert_eq!(entropy(&[8]).unwrap(), 0.0);
        assert!((entropy(&[2, 2, 4]).unwrap() - 1.5).abs() < 1e-15);
        assert!(entropy(&[0, 0]).is_err());
    }

    #[test]
    fn conditional_entropy_examples() {
        assert_eq!(conditional_entropy(&[vec![3, 5]]).unwrap(), entropy(&[3, 5]).unwrap());
        assert_eq!(conditional_entropy(&[vec![4, 0], vec![0, 6], vec![0, 0]]).unwrap(), 0.0);
        assert!((conditional_entropy(&[vec![4, 0], vec![2, 2]]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn information_gain_examples() {
        let d = Discretizer::default();
        let labels = [0, 1, 0, 1, 1, 0, 0, 1];
        let feature: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        assert_eq!(information_gain(&feature, &labels, &d).unwrap(), 1.0);
        assert_eq!(information_gain(&[3.0; 8], &labels, &d).unwrap(), 0.0);

        let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = [0, 0, 0, 0, 0, 0, 1, 1];
        let ig = information_gain(&x, &y, &d).unwrap();
        assert!((ig - 0.3113).abs() < 1e-4, "{ig}");

        assert!(information_gain(&[1.0], &[0, 1], &d).is_err());
    }

    #[test]
    fn edges_collapse_duplicates() {
        let d = Discretizer::equal_frequency(4);
        let e = d.fit(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(e.0, vec![0.0, 3.0]);
        assert_eq!(e.bin(-5.0), 0);
        assert_eq!(e.bin(0.5), 1);
        assert_eq!(e.bin(9.0), 2);
    }

    #[test]
    fn degenerate_normalization() {
        assert_eq!(min_max_normalize(&[0.3]), vec![1.0]);
        assert_eq!(min_max_normalize(&[0.2, 0.2]), vec![1.0, 1.0]);
        assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn ig_bounded_by_label_entropy(
            rows in prop::collection::vec((-50.0f64..50.0, 0usize..4), 1..80),
            bins in 2usize..12,
        ) {
            let (x, y): (Vec<f64>, Vec<usize>) = rows.into_iter().unzip();
            let d = Discretizer::equal_frequency(bins);
            let ig = information_gain(&x, &y, &d).unwrap();
            let mut counts = vec![0; 4];
            for &l in &y { counts[l] += 1; }
            let h = entropy(&counts).unwrap();
            prop_assert!(ig >= 0.0 && ig <= h + 1e-12);
        }

        #[test]
        fn ig_invariant_under_monotone_transform(
            rows in prop::collection::vec((-5.0f64..5.0, 0usize..3), 1..60),
        ) {
            let (x, y): (Vec<f64>, Vec<usize>) = rows.into_iter().unzip();
            let d = Discretizer::default();
            let tx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(information_gain(&x, &y, &d).unwrap(), information_gain(&tx, &y, &d).unwrap());
        }

        #[test]
        fn ig_invariant_under_row_permutation(
            rows in prop::collection::vec((-5.0f64..5.0, 0usize..3), 2..60),
            rot in 0usize..60,
        ) {
            let d = Discretizer::default();
            let (x, y): (Vec<f64>, Vec<usize>) = rows.iter().copied().unzip();
            let mut shuffled = rows.clone();
            shuffled.reverse();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            let (px, py): (Vec<f64>, Vec<usize>) = shuffled.into_iter().unzip();
            let a = information_gain(&x, &y, &d).unwrap();
            let b = information_gain(&px, &py, &d).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        // Grouping rule: H(merged) <= H(split) and the gap is at most the
        // binary entropy of the merged pair's internal split, weighted.
        #[test]
        fn entropy_merge_consistency(
            counts in prop::collection::vec(0usize..30, 2..6),
        ) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            prop_assume!(counts[0] + counts[1] > 0);
            let total: usize = counts.iter().sum();
            let mut merged = vec![counts[0] + counts[1]];
            merged.extend_from_slice(&counts[2..]);
            let h_split = entropy(&counts).unwrap();
            let h_merged = entropy(&merged).unwrap();
            let pair = counts[0] + counts[1];
            let mix = entropy(&counts[..2]).unwrap() * pair as f64 / total as f64;
            // direct-evaluation oracle: the grouping identity holds with equality
            let direct: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| {
                let p = c as f64 / total as f64; -p * p.log2()
            }).sum();
            prop_assert!((h_split - direct).abs() < 1e-12);
            prop_assert!(h_merged <= h_split + 1e-12);
            prop_assert!((h_merged + mix - h_split).abs() < 1e-12);
        }
    }
}
