//! CART classification trees, a bootstrap forest over them, and
//! mean-decrease-impurity feature importance.
//!
//! Trees are stored as flat arenas in preorder. Every tree draws from its own
//! ChaCha8 stream seeded with `seed + tree_index`, so a forest is the same no
//! matter how the trees are scheduled across threads.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

/// Decreases at or below this are treated as no improvement.
const MIN_DECREASE: f64 = 1e-12;

/// `1 - Σ p_i²`.
pub fn gini(class_counts: &[usize]) -> Result<f64> {
    let n: usize = class_counts.iter().sum();
    if n == 0 {
        return Err(Error::Data("gini impurity of an empty node".into()));
    }
    let n = n as f64;
    Ok(1.0 - class_counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Borrowed row-major feature matrix with class labels.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub values: &'a [f64],
    pub width: usize,
    pub labels: &'a [usize],
    pub n_classes: usize,
}

impl<'a> Samples<'a> {
    pub fn new(values: &'a [f64], width: usize, labels: &'a [usize], n_classes: usize) -> Result<Self> {
        if width == 0 || values.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} values do not form {} rows of width {width}",
                values.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::Data("label index out of range".into()));
        }
        Ok(Self {
            values,
            width,
            labels,
            n_classes,
        })
    }

    pub fn from_table(t: &'a Table) -> Result<Self> {
        Self::new(t.numeric_values(), t.n_numeric(), t.labels(), t.schema().n_classes())
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    fn at(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.width + feature]
    }

    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.labels[r]] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// `gini(parent) - (wL gini(L) + wR gini(R))`.
    pub decrease: f64,
}

/// Best Gini split of `rows` over the candidate features, scanning midpoints
/// between consecutive distinct values. Ties go to the lower feature id and
/// then the lower threshold. `rows` may repeat (bootstrap multiplicity).
pub fn best_split(data: &Samples, rows: &[usize], candidate_features: &[usize]) -> Option<Split> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let parent = data.counts(rows);
    let nf = n as f64;
    let parent_sq: f64 = parent.iter().map(|&c| (c * c) as f64).sum();
    let parent_gini = 1.0 - parent_sq / (nf * nf);
    if parent_gini <= 0.0 {
        return None;
    }

    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; data.n_classes];
    for &f in &features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data.at(r, f), data.labels[r])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        let mut left_sq = 0.0f64;
        let mut right_sq = parent_sq;
        for i in 0..n - 1 {
            let y = pairs[i].1;
            // moving one sample of class y from right to left
            left_sq += (2 * left[y] + 1) as f64;
            let right_y = parent[y] - left[y];
            right_sq -= (2 * right_y - 1) as f64;
            left[y] += 1;

            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            if a == b {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = nf - nl;
            let weighted = (nl - left_sq / nl + nr - right_sq / nr) / nf;
            let decrease = parent_gini - weighted;
            // within MIN_DECREASE of the incumbent counts as a tie, which the
            // earlier (lower feature, lower threshold) candidate wins
            if decrease > MIN_DECREASE && best.is_none_or(|s| decrease > s.decrease + MIN_DECREASE) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        impurity_decrease: f64,
    },
    Leaf {
        class_counts: Vec<usize>,
    },
}

/// Arena of nodes in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn plurality(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_counts(&self, row: &[f64]) -> &[usize] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { class_counts } => return class_counts,
            }
        }
    }

    /// Plurality class of the leaf reached by `row`; ties go to the lower index.
    pub fn predict(&self, row: &[f64]) -> usize {
        plurality(self.leaf_counts(row))
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means `ceil(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn features_per_split_for(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// Grows one tree on `rows` (which may repeat). At every node a fresh subset
/// of `features_per_split` features is drawn; if none of them yields a
/// split with positive decrease, the remaining features are tried in id
/// order before the node becomes a leaf.
pub fn fit_tree(data: &Samples, rows: Vec<usize>, config: &ForestConfig, rng: &mut Rng) -> Tree {
    let k = config.features_per_split_for(data.width);
    let mut nodes: Vec<Node> = Vec::new();
    // (rows, depth, parent slot to patch: (parent index, is_left))
    let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(rows, 0, None)];

    while let Some((rows, depth, parent)) = stack.pop() {
        let index = nodes.len();
        if let Some((p, is_left)) = parent {
            if let Node::Split { left, right, .. } = &mut nodes[p] {
                if is_left {
                    *left = index;
                } else {
                    *right = index;
                }
            }
        }

        let counts = data.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
        let split = if pure || depth_capped || rows.len() < config.min_samples_split.max(2) {
            None
        } else {
            let mut drawn: Vec<usize> = sample(rng, data.width, k).into_vec();
            drawn.sort_unstable();
            best_split(data, &rows, &drawn).or_else(|| {
                let rest: Vec<usize> = (0..data.width).filter(|f| !drawn.contains(f)).collect();
                best_split(data, &rows, &rest)
            })
        };

        match split {
            None => nodes.push(Node::Leaf {
                class_counts: counts,
            }),
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&row| data.at(row, s.feature) <= s.threshold);
                nodes.push(Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                    samples: rows.len(),
                    impurity_decrease: s.decrease,
                });
                stack.push((r, depth + 1, Some((index, false))));
                stack.push((l, depth + 1, Some((index, true))));
            }
        }
    }
    Tree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Bootstrap sample of size `n` drawn from the tree's own stream.
pub fn bootstrap(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub fn fit_forest(data: &Samples, config: &ForestConfig) -> Result<Forest> {
    if data.rows() == 0 {
        return Err(Error::Data("cannot fit a forest on zero rows".into()));
    }
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(config.seed.wrapping_add(i as u64));
            let rows = bootstrap(data.rows(), &mut rng);
            fit_tree(data, rows, config, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        config: config.clone(),
        n_features: data.width,
        n_classes: data.n_classes,
    })
}

impl Forest {
    /// Majority vote over the trees; ties go to the lower class index.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        plurality(&votes)
    }

    /// Per-feature sum of `samples * impurity_decrease` over split nodes,
    /// averaged over trees and normalized to sum to 1. All zeros if no tree
    /// has a split.
    pub fn importance(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_features];
        for t in &self.trees {
            for node in &t.nodes {
                if let Node::Split {
                    feature,
                    samples,
                    impurity_decrease,
                    ..
                } = node
                {
                    totals[*feature] += *samples as f64 * impurity_decrease;
                }
            }
        }
        let n = self.trees.len() as f64;
        totals.iter_mut().for_each(|v| *v /= n);
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            totals.iter_mut().for_each(|v| *v /= sum);
        }
        totals
    }

    /// Preorder node records, one line each:
    /// `tree <i>`, `S <feature> <threshold> <samples> <decrease>` or `L <counts...>`.
    pub fn write_flat<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "forest {} {} {}", self.trees.len(), self.n_features, self.n_classes)?;
        let mut line = String::new();
        for (i, t) in self.trees.iter().enumerate() {
            writeln!(w, "tree {i}")?;
            for node in &t.nodes {
                line.clear();
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        samples,
                        impurity_decrease,
                        ..
                    } => {
                        let _ = write!(line, "S {feature} {threshold} {samples} {impurity_decrease}");
                    }
                    Node::Leaf { class_counts } => {
                        line.push('L');
                        for c in class_counts {
                            let _ = write!(line, " {c}");
                        }
                    }
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Reads [`write_flat`](Self::write_flat) output back; the config is not
    /// part of the flat format and comes from the caller.
    pub fn read_flat<R: BufRead>(r: R, config: ForestConfig) -> Result<Forest> {
        let bad = |msg: &str| Error::Data(format!("forest file: {msg}"));
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "forest" {
            return Err(bad("bad header"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let (n_trees, n_features, n_classes) = (parse(h[1])?, parse(h[2])?, parse(h[3])?);

        let mut flat: Vec<Vec<Node>> = Vec::new();
        for line in lines {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.first().copied() {
                Some("tree") => flat.push(Vec::new()),
                Some("S") if parts.len() == 5 => {
                    let node = Node::Split {
                        feature: parse(parts[1])?,
                        threshold: parts[2].parse().map_err(|_| bad("bad threshold"))?,
                        left: usize::MAX,
                        right: usize::MAX,
                        samples: parse(parts[3])?,
                        impurity_decrease: parts[4].parse().map_err(|_| bad("bad decrease"))?,
                    };
                    flat.last_mut().ok_or_else(|| bad("node before tree"))?.push(node);
                }
                Some("L") => {
                    let counts = parts[1..].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
                    flat.last_mut()
                        .ok_or_else(|| bad("node before tree"))?
                        .push(Node::Leaf { class_counts: counts });
                }
                None => {}
                _ => return Err(bad(&format!("unrecognised line '{line}'"))),
            }
        }
        if flat.len() != n_trees {
            return Err(bad("tree count mismatch"));
        }
        let trees = flat
            .into_iter()
            .map(|mut nodes| {
                let end = link_preorder(&mut nodes, 0).ok_or_else(|| bad("truncated tree"))?;
                if end != nodes.len() {
                    return Err(bad("trailing nodes"));
                }
                Ok(Tree { nodes })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            trees,
            config,
            n_features,
            n_classes,
        })
    }
}

/// Restores child links of the subtree rooted at `i`; returns the index
/// just past it.
fn link_preorder(nodes: &mut [Node], i: usize) -> Option<usize> {
    let is_split = matches!(nodes.get(i)?, Node::Split { .. });
    if !is_split {
        return Some(i + 1);
    }
    let l = i + 1;
    let r = link_preorder(nodes, l)?;
    let end = link_preorder(nodes, r)?;
    if let Node::Split { left, right, .. } = &mut nodes[i] {
        *left = l;
        *right = r;
    }
    Some(end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfScore {
    pub feature: String,
    pub column: usize,
    pub mdi: f64,
}

/// Fits a forest on the numeric columns of `t` and returns MDI scores
/// sorted descending (ties keep column order).
pub fn rank_rf(t: &Table, config: &ForestConfig) -> Result<(Vec<RfScore>, Forest)> {
    let names = t.schema().numeric_names();
    if names.is_empty() {
        return Err(Error::Data("no numeric features to rank".into()));
    }
    let data = Samples::from_table(t)?;
    let forest = fit_forest(&data, config)?;
    let mdi = forest.importance();
    let mut scores: Vec<RfScore> = names
        .iter()
        .enumerate()
        .map(|(j, n)| RfScore {
            feature: (*n).to_string(),
            column: j,
            mdi: mdi[j],
        })
        .collect();
    scores.sort_by(|a, b| b.mdi.total_cmp(&a.mdi));
    Ok((scores, forest))
}

pub fn write_ranking_csv<W: Write>(scores: &[RfScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "mdi"])?;
    for s in scores {
        w.write_record([s.feature.clone(), s.mdi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples<'a>(values: &'a [f64], width: usize, labels: &'a [usize]) -> Samples<'a> {
        let k = labels.iter().max().unwrap() + 1;
        Samples::new(values, width, labels, k).unwrap()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
        assert_eq!(gini(&[8, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[1, 3]).unwrap(), 0.375);
        assert!(gini(&[]).is_err());
        assert!(gini(&[0, 0]).is_err());
    }

    #[test]
    fn best_split_one_dimensional() {
        let x = [1.0, 2.0, 9.0, 10.0];
        let y = [0, 0, 1, 1];
        let s = best_split(&samples(&x, 1, &y), &[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 5.5);
        assert_eq!(s.decrease, 0.5);
    }

    #[test]
    fn best_split_pure_node() {
        let x = [1.0, 2.0, 3.0];
        let y = [1, 1, 1];
        assert!(best_split(&samples(&x, 1, &y), &[0, 1, 2], &[0]).is_none());
    }

    #[test]
    fn best_split_tie_goes_to_lower_feature() {
        // column 1 duplicates column 0
        let x = [1.0, 1.0, 2.0, 2.0, 9.0, 9.0, 10.0, 10.0];
        let y = [0, 0, 1, 1];
        let s = best_split(&samples(&x, 2, &y), &[0, 1, 2, 3], &[1, 0]).unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn single_tree_forest_on_separable_fixture() {
        let x = [1.0, 2.0, 9.0, 10.0];
        let y = [0, 0, 1, 1];
        let data = samples(&x, 1, &y);
        let cfg = ForestConfig { n_trees: 1, ..Default::default() };
        let f = fit_forest(&data, &cfg).unwrap();
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(f.predict(&x[i..i + 1]), label);
        }
        assert!(fit_forest(&Samples { values: &[], width: 1, labels: &[], n_classes: 2 }, &cfg).is_err());
    }

    #[test]
    fn vote_ties_and_majority() {
        let leaf = |c: Vec<usize>| Tree { nodes: vec![Node::Leaf { class_counts: c }] };
        let f = Forest {
            trees: vec![leaf(vec![3, 1]), leaf(vec![2, 0]), leaf(vec![0, 4])],
            config: ForestConfig::default(),
            n_features: 1,
            n_classes: 2,
        };
        assert_eq!(f.predict(&[0.0]), 0);
        let f = Forest { trees: vec![leaf(vec![1, 2]), leaf(vec![2, 1])], ..f };
        assert_eq!(f.predict(&[0.0]), 0);
        // leaf plurality tie
        assert_eq!(leaf(vec![2, 2]).predict(&[0.0]), 0);
    }

    #[test]
    fn importance_only_split_feature() {
        let x = [1.0, 5.0, 2.0, 5.0, 9.0, 5.0, 10.0, 5.0];
        let y = [0, 0, 1, 1];
        let cfg = ForestConfig { n_trees: 10, seed: 3, ..Default::default() };
        let f = fit_forest(&samples(&x, 2, &y), &cfg).unwrap();
        let imp = f.importance();
        assert_eq!(imp, vec![1.0, 0.0]);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = seeded(1);
        let x: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<usize> = (0..100).map(|i| (x[i * 3] > 0.5) as usize + (x[i * 3 + 1] > 0.7) as usize).collect();
        let cfg = ForestConfig { n_trees: 5, seed: 9, ..Default::default() };
        let f = fit_forest(&samples(&x, 3, &y), &cfg).unwrap();
        let mut buf = Vec::new();
        f.write_flat(&mut buf).unwrap();
        let back = Forest::read_flat(buf.as_slice(), cfg).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn trees_fit_their_bootstrap_exactly() {
        for seed in 0..5u64 {
            let mut rng = seeded(seed);
            let x: Vec<f64> = (0..600).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
            let data = samples(&x, 3, &y);
            let cfg = ForestConfig { n_trees: 1, seed, ..Default::default() };
            let rows = bootstrap(200, &mut rng);
            let tree = fit_tree(&data, rows.clone(), &cfg, &mut rng);
            for &r in &rows {
                assert_eq!(tree.predict(&x[r * 3..r * 3 + 3]), y[r]);
            }
        }
    }

    #[test]
    fn forest_is_reproducible() {
        let mut rng = seeded(5);
        let x: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<usize> = (0..100).map(|i| (x[i * 4] + x[i * 4 + 2] > 1.0) as usize).collect();
        let cfg = ForestConfig { n_trees: 20, seed: 11, ..Default::default() };
        let a = fit_forest(&samples(&x, 4, &y), &cfg).unwrap();
        let b = fit_forest(&samples(&x, 4, &y), &cfg).unwrap();
        assert_eq!(a, b);
        let s: f64 = a.importance().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}
