//! Honest regression forest.
//!
//! Each tree is grown on a subsample drawn without replacement. With
//! `honest = true` the subsample is halved: one half chooses the splits, the
//! other half supplies the leaf means. Leaves that receive no estimation
//! rows fall back to the nearest ancestor that did.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub num_trees: usize,
    #[serde(alias = "subsample")]
    pub subsample_fraction: f64,
    /// Candidate features per split; `None` means `ceil(sqrt(p))`.
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    pub honest: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 200,
            subsample_fraction: 0.5,
            features_per_split: None,
            min_leaf: 5,
            honest: true,
        }
    }
}

impl ForestParams {
    pub fn check(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::InvalidArgument("num_trees must be positive".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subsample fraction {} outside (0, 1]",
                self.subsample_fraction
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("min_leaf must be positive".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidArgument("features_per_split must be positive".into()));
        }
        Ok(())
    }

    fn mtry(&self, p: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// `usize::MAX` marks a leaf.
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    /// Mean of the estimation rows reaching this node.
    value: f64,
    estimation_count: usize,
}

#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    structure_rows: Vec<usize>,
    estimation_rows: Vec<usize>,
}

impl RegressionTree {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut node = &self.nodes[0];
        let mut value = node.value;
        while node.feature != usize::MAX {
            let next = if x[node.feature] <= node.threshold { node.left } else { node.right };
            node = &self.nodes[next];
            if node.estimation_count > 0 {
                value = node.value;
            }
        }
        value
    }

    /// Rows (of the training matrix) that chose the splits.
    pub fn structure_rows(&self) -> &[usize] {
        &self.structure_rows
    }

    /// Rows that supplied the leaf means. Equal to the structure rows for
    /// adaptive (non-honest) trees.
    pub fn estimation_rows(&self) -> &[usize] {
        &self.estimation_rows
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == usize::MAX).count()
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
    params: ForestParams,
    num_features: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Average of per-tree leaf means.
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        // Running mean keeps constant predictions exact.
        let mut mean = 0.0;
        for (t, tree) in self.trees.iter().enumerate() {
            mean += (tree.predict(x) - mean) / (t + 1) as f64;
        }
        mean
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.num_features {
            return Err(Error::Dimension(format!(
                "forest trained on {} features, got {}",
                self.num_features,
                x.ncols()
            )));
        }
        Ok(x.rows().into_iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Per-feature dense ranks of the training values, used for sorting and
/// boundary detection.
struct Ranks {
    ranks: Vec<Vec<u32>>,
}

impl Ranks {
    fn new(x: ArrayView2<f64>) -> Self {
        let ranks = (0..x.ncols())
            .map(|j| {
                let col = x.column(j);
                let mut vals: Vec<f64> = col.to_vec();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                col.iter()
                    .map(|v| vals.partition_point(|u| u < v) as u32)
                    .collect()
            })
            .collect();
        Self { ranks }
    }
}

/// Grow a forest on `(x, y)`. Deterministic in `seed`; trees are grown in
/// parallel from per-tree derived seeds.
pub fn forest_fit(
    x: ArrayView2<f64>,
    y: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    params.check()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("cannot fit a forest on zero rows".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} rows", y.len())));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite forest target {v}")));
    }
    let ranks = Ranks::new(x);
    let trees = (0..params.num_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, &ranks, params, seeding::derive(seed, &[t as u64])))
        .collect();
    Ok(ForestModel {
        trees,
        params: *params,
        num_features: x.ncols(),
    })
}

fn grow_tree(
    x: ArrayView2<f64>,
    y: &[f64],
    ranks: &Ranks,
    params: &ForestParams,
    seed: u64,
) -> RegressionTree {
    let mut rng = seeding::rng(seed);
    let n = x.nrows();
    let size = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let sample = index::sample(&mut rng, n, size).into_vec();
    let (structure_rows, estimation_rows) = if params.honest && size >= 2 {
        let half = size / 2;
        (sample[..half].to_vec(), sample[half..].to_vec())
    } else {
        (sample.clone(), sample)
    };

    let p = x.ncols();
    let mtry = params.mtry(p);
    let mut nodes = vec![Node {
        feature: usize::MAX,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: 0.0,
        estimation_count: 0,
    }];
    // (node id, rows)
    let mut stack = vec![(0usize, structure_rows.clone())];
    let mut order: Vec<usize> = Vec::new();
    while let Some((id, mut rows)) = stack.pop() {
        if rows.len() < 2 * params.min_leaf || p == 0 {
            continue;
        }
        let candidates = index::sample(&mut rng, p, mtry).into_vec();
        let total: f64 = rows.iter().map(|&r| y[r]).sum();
        let parent = total * total / rows.len() as f64;
        let mut best: Option<(f64, usize, usize)> = None; // (gain, feature, split position)
        for &j in &candidates {
            let rk = &ranks.ranks[j];
            order.clear();
            order.extend_from_slice(&rows);
            order.sort_unstable_by_key(|&r| (rk[r], r));
            let mut left = 0.0;
            for k in 0..order.len() - 1 {
                left += y[order[k]];
                let n_left = k + 1;
                let n_right = order.len() - n_left;
                if n_left < params.min_leaf || n_right < params.min_leaf {
                    continue;
                }
                if rk[order[k]] == rk[order[k + 1]] {
                    continue;
                }
                let right = total - left;
                let gain =
                    left * left / n_left as f64 + right * right / n_right as f64 - parent;
                if gain > 1e-12 * (1.0 + parent.abs()) && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, j, k));
                }
            }
        }
        let Some((_, j, k)) = best else { continue };
        let rk = &ranks.ranks[j];
        rows.sort_unstable_by_key(|&r| (rk[r], r));
        let threshold = 0.5 * (x[(rows[k], j)] + x[(rows[k + 1], j)]);
        let right_rows = rows.split_off(k + 1);
        let left_id = nodes.len();
        let blank = Node {
            feature: usize::MAX,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0.0,
            estimation_count: 0,
        };
        nodes.push(blank.clone());
        nodes.push(blank);
        let node = &mut nodes[id];
        node.feature = j;
        node.threshold = threshold;
        node.left = left_id;
        node.right = left_id + 1;
        stack.push((left_id + 1, right_rows));
        stack.push((left_id, rows));
    }

    // Route estimation rows; running means keep constant targets exact.
    for &r in &estimation_rows {
        let row = x.row(r);
        let mut id = 0;
        loop {
            let node = &mut nodes[id];
            node.estimation_count += 1;
            node.value += (y[r] - node.value) / node.estimation_count as f64;
            if node.feature == usize::MAX {
                break;
            }
            id = if row[node.feature] <= node.threshold { node.left } else { node.right };
        }
    }
    RegressionTree {
        nodes,
        structure_rows,
        estimation_rows,
    }
}
