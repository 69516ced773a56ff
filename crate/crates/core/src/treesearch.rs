//! Exhaustive policy-tree search over per-observation scores.
//!
//! Candidate thresholds are computed once per feature from the full sample and
//! every row is mapped to the bin between consecutive candidates. A node is
//! then described by per-feature histograms of score sums, so a depth-1
//! search is a prefix scan and a depth-2 search moves rows from the right
//! histograms to the left ones as the root threshold advances. Deeper trees
//! recurse over root candidates.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::TreeNode;
use crate::scores::ScoreMatrix;

pub const MAX_DEPTH: usize = 4;

/// Below this many rows a node's candidates are scanned serially.
const PAR_MIN_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub depth: usize,
    /// Keep every `split_step`-th candidate threshold.
    pub split_step: usize,
    /// Minimum rows routed to each child of a split.
    pub min_node_size: usize,
    /// Lookahead depth of the hybrid search; `None` means exact search.
    pub hybrid_search_depth: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { depth: 2, split_step: 1, min_node_size: 1, hybrid_search_depth: None }
    }
}

impl SearchConfig {
    pub fn exact(depth: usize) -> Self {
        Self { depth, ..Self::default() }
    }

    pub fn hybrid(depth: usize, lookahead: usize) -> Self {
        Self { depth, hybrid_search_depth: Some(lookahead), ..Self::default() }
    }

    pub fn check(&self) -> Result<()> {
        if self.depth > MAX_DEPTH {
            return Err(Error::InvalidArgument(format!(
                "depth {} exceeds the supported maximum {MAX_DEPTH}",
                self.depth
            )));
        }
        if self.split_step == 0 {
            return Err(Error::InvalidArgument("split_step must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidArgument("min_node_size must be at least 1".into()));
        }
        if self.hybrid_search_depth == Some(0) {
            return Err(Error::InvalidArgument("hybrid_search_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub root: TreeNode,
    /// Sum over rows of the score of the assigned arm.
    pub total_score: f64,
    /// Number of candidate splits scored.
    pub nodes_evaluated: u64,
}

/// Midpoints between consecutive distinct sorted values, keeping indices
/// `0, step, 2 step, ...`.
pub fn candidate_thresholds(x: &[f64], split_step: usize) -> Vec<f64> {
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2)
        .map(|w| w[0] + (w[1] - w[0]) / 2.0)
        .step_by(split_step.max(1))
        .collect()
}

/// Exact search, or hybrid search when `cfg.hybrid_search_depth` is set.
pub fn search(x: ArrayView2<f64>, gamma: &ScoreMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    match cfg.hybrid_search_depth {
        Some(_) => hybrid_search(x, gamma, cfg),
        None => exact_search(x, gamma, cfg),
    }
}

pub fn exact_search(x: ArrayView2<f64>, gamma: &ScoreMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    let prob = Problem::new(x, gamma, cfg)?;
    let rows: Vec<u32> = (0..x.nrows() as u32).collect();
    let root = prob.build(&rows, cfg.depth);
    Ok(prob.finish(root, x))
}

/// Greedy lookahead: at each node run the exact search to the lookahead
/// depth, keep only its root split and recurse with one less level of budget.
pub fn hybrid_search(x: ArrayView2<f64>, gamma: &ScoreMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    let lookahead = cfg.hybrid_search_depth.unwrap_or(cfg.depth);
    let prob = Problem::new(x, gamma, cfg)?;
    let rows: Vec<u32> = (0..x.nrows() as u32).collect();
    let root = prob.build_hybrid(&rows, cfg.depth, lookahead.max(1));
    Ok(prob.finish(root, x))
}

/// Re-evaluate a tree's total score on `(x, gamma)`.
pub fn tree_score(root: &TreeNode, x: ArrayView2<f64>, gamma: &ScoreMatrix) -> f64 {
    let g = gamma.gamma();
    x.rows().into_iter().enumerate().map(|(i, r)| g[[i, root.arm_for(r)]]).sum()
}

#[derive(Debug, Clone, Copy)]
struct Decision {
    value: f64,
    /// `(feature, candidate index)`, or a leaf.
    split: Option<(usize, usize)>,
}

struct Problem<'a> {
    gamma: ArrayView2<'a, f64>,
    d: usize,
    p: usize,
    thresholds: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    total_bins: usize,
    /// Row-major n x p global bin ids.
    row_bins: Vec<u32>,
    min_node: usize,
    tol: f64,
    evaluated: AtomicU64,
}

/// Joint histogram over every pair of global bins, `B x B x D` sums.
#[derive(Clone)]
struct PairHist {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

#[derive(Clone)]
struct Hist {
    sums: Vec<f64>,
    counts: Vec<u32>,
    total: Vec<f64>,
    n: usize,
}

impl<'a> Problem<'a> {
    fn new(x: ArrayView2<'a, f64>, gamma: &'a ScoreMatrix, cfg: &SearchConfig) -> Result<Self> {
        cfg.check()?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("no rows to search".into()));
        }
        if gamma.n() != n {
            return Err(Error::Dimension(format!(
                "features have {n} rows, scores have {}",
                gamma.n()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("features must be finite".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many rows".into()));
        }
        let p = x.ncols();
        let thresholds: Vec<Vec<f64>> = (0..p)
            .map(|j| candidate_thresholds(&x.column(j).to_vec(), cfg.split_step))
            .collect();
        let mut offsets = Vec::with_capacity(p);
        let mut total_bins = 0;
        for t in &thresholds {
            offsets.push(total_bins);
            total_bins += t.len() + 1;
        }
        let mut row_bins = vec![0u32; n * p];
        for (i, r) in x.rows().into_iter().enumerate() {
            for j in 0..p {
                let b = thresholds[j].partition_point(|&t| t < r[j]);
                row_bins[i * p + j] = (offsets[j] + b) as u32;
            }
        }
        let scale: f64 = gamma
            .gamma()
            .rows()
            .into_iter()
            .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum();
        Ok(Self {
            gamma: gamma.view(),
            d: gamma.num_arms(),
            p,
            thresholds,
            offsets,
            total_bins,
            row_bins,
            min_node: cfg.min_node_size,
            tol: 1e-11 * (1.0 + scale),
            evaluated: AtomicU64::new(0),
        })
    }

    fn finish(&self, root: TreeNode, x: ArrayView2<f64>) -> SearchResult {
        let total = self
            .gamma
            .rows()
            .into_iter()
            .zip(x.rows())
            .map(|(g, r)| g[root.arm_for(r)])
            .sum();
        SearchResult {
            root,
            total_score: total,
            nodes_evaluated: self.evaluated.load(Ordering::Relaxed),
        }
    }

    fn bin(&self, row: u32, j: usize) -> usize {
        self.row_bins[row as usize * self.p + j] as usize - self.offsets[j]
    }

    /// Best arm and its score sum; ties go to the lowest arm.
    fn best_arm(&self, sums: &[f64]) -> (usize, f64) {
        let mut best = 0;
        for a in 1..sums.len() {
            if sums[a] > sums[best] + self.tol {
                best = a;
            }
        }
        (best, sums[best])
    }

    fn column_sums(&self, rows: &[u32]) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for &r in rows {
            for (acc, g) in s.iter_mut().zip(self.gamma.row(r as usize)) {
                *acc += g;
            }
        }
        s
    }

    fn empty_hist(&self) -> Hist {
        Hist {
            sums: vec![0.0; self.total_bins * self.d],
            counts: vec![0; self.total_bins],
            total: vec![0.0; self.d],
            n: 0,
        }
    }

    fn hist_of(&self, rows: &[u32]) -> Hist {
        let mut h = self.empty_hist();
        for &r in rows {
            self.move_row(r, &mut h, None);
        }
        h
    }

    /// Add `row` to `to`, removing it from `from` when given.
    fn move_row(&self, row: u32, to: &mut Hist, mut from: Option<&mut Hist>) {
        let d = self.d;
        let g = self.gamma.row(row as usize);
        let bins = &self.row_bins[row as usize * self.p..(row as usize + 1) * self.p];
        for (a, &v) in g.iter().enumerate() {
            to.total[a] += v;
        }
        to.n += 1;
        for &b in bins {
            let b = b as usize;
            to.counts[b] += 1;
            for (a, &v) in g.iter().enumerate() {
                to.sums[b * d + a] += v;
            }
        }
        if let Some(f) = from.as_deref_mut() {
            for (a, &v) in g.iter().enumerate() {
                f.total[a] -= v;
            }
            f.n -= 1;
            for &b in bins {
                let b = b as usize;
                f.counts[b] -= 1;
                for (a, &v) in g.iter().enumerate() {
                    f.sums[b * d + a] -= v;
                }
            }
        }
    }

    fn depth1(&self, h: &Hist) -> Decision {
        let d = self.d;
        let mut best = Decision { value: self.best_arm(&h.total).1, split: None };
        let mut evaluated = 0u64;
        let mut left = vec![0.0; d];
        let mut right = vec![0.0; d];
        for j in 0..self.p {
            let off = self.offsets[j];
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut lc = 0usize;
            for c in 0..self.thresholds[j].len() {
                let cnt = h.counts[off + c] as usize;
                if cnt == 0 {
                    continue;
                }
                lc += cnt;
                for a in 0..d {
                    left[a] += h.sums[(off + c) * d + a];
                }
                if lc < self.min_node {
                    continue;
                }
                if h.n - lc < self.min_node {
                    break;
                }
                for a in 0..d {
                    right[a] = h.total[a] - left[a];
                }
                evaluated += 1;
                let v = self.best_arm(&left).1 + self.best_arm(&right).1;
                if v > best.value + self.tol {
                    best = Decision { value: v, split: Some((j, c)) };
                }
            }
        }
        self.evaluated.fetch_add(evaluated, Ordering::Relaxed);
        best
    }

    /// Rows sorted by their bin on feature `j` (stable), with the end position
    /// of every bin.
    fn sort_by_bin(&self, rows: &[u32], j: usize, counts: Option<&[u32]>) -> (Vec<u32>, Vec<usize>) {
        let nb = self.thresholds[j].len() + 1;
        let mut ends = vec![0usize; nb];
        match counts {
            Some(c) => {
                for b in 0..nb {
                    ends[b] = c[self.offsets[j] + b] as usize;
                }
            }
            None => {
                for &r in rows {
                    ends[self.bin(r, j)] += 1;
                }
            }
        }
        let mut starts = vec![0usize; nb];
        let mut acc = 0;
        for b in 0..nb {
            starts[b] = acc;
            acc += ends[b];
            ends[b] = acc;
        }
        let mut sorted = vec![0u32; rows.len()];
        for &r in rows {
            let b = self.bin(r, j);
            sorted[starts[b]] = r;
            starts[b] += 1;
        }
        (sorted, ends)
    }

    fn depth2(&self, rows: &[u32], all: &Hist) -> Decision {
        let per_feature = |j: usize| -> Decision {
            let mut best = Decision { value: f64::NEG_INFINITY, split: None };
            let m = self.thresholds[j].len();
            if m == 0 || all.n < 2 * self.min_node {
                return best;
            }
            let (sorted, ends) = self.sort_by_bin(rows, j, Some(&all.counts));
            let mut left = self.empty_hist();
            let mut right = all.clone();
            let mut pos = 0;
            for c in 0..m {
                if ends[c] == pos {
                    continue;
                }
                for &r in &sorted[pos..ends[c]] {
                    self.move_row(r, &mut left, Some(&mut right));
                }
                pos = ends[c];
                if left.n < self.min_node {
                    continue;
                }
                if right.n < self.min_node {
                    break;
                }
                let v = self.depth1(&left).value + self.depth1(&right).value;
                if v > best.value + self.tol {
                    best = Decision { value: v, split: Some((j, c)) };
                }
            }
            best
        };
        let per: Vec<Decision> = if rows.len() >= PAR_MIN_ROWS {
            (0..self.p).into_par_iter().map(per_feature).collect()
        } else {
            (0..self.p).map(per_feature).collect()
        };
        let mut best = Decision { value: self.best_arm(&all.total).1, split: None };
        for dec in per {
            if dec.split.is_some() && dec.value > best.value + self.tol {
                best = dec;
            }
        }
        best
    }

    fn empty_pair(&self) -> PairHist {
        let b = self.total_bins;
        PairHist { sums: vec![0.0; b * b * self.d], counts: vec![0; b * b] }
    }

    fn pair_of(&self, rows: &[u32]) -> PairHist {
        let mut h = self.empty_pair();
        for &r in rows {
            self.move_row_pair(r, &mut h, None);
        }
        h
    }

    fn move_row_pair(&self, row: u32, to: &mut PairHist, mut from: Option<&mut PairHist>) {
        let (b, d) = (self.total_bins, self.d);
        let g = self.gamma.row(row as usize);
        let bins = &self.row_bins[row as usize * self.p..(row as usize + 1) * self.p];
        for &bj in bins {
            let base = bj as usize * b;
            for &bk in bins {
                let idx = base + bk as usize;
                to.counts[idx] += 1;
                for (a, &v) in g.iter().enumerate() {
                    to.sums[idx * d + a] += v;
                }
                if let Some(f) = from.as_deref_mut() {
                    f.counts[idx] -= 1;
                    for (a, &v) in g.iter().enumerate() {
                        f.sums[idx * d + a] -= v;
                    }
                }
            }
        }
    }

    /// Depth-2 search from joint histograms: the left child of a root split
    /// on bin `c` of feature `j` is the running sum of pair-histogram rows
    /// `off_j..=off_j + c`.
    fn depth2_pair(&self, pair: &PairHist, all: &Hist) -> Decision {
        let (b, d) = (self.total_bins, self.d);
        let mut best = Decision { value: self.best_arm(&all.total).1, split: None };
        if all.n < 2 * self.min_node {
            return best;
        }
        let mut left = self.empty_hist();
        let mut right = self.empty_hist();
        for j in 0..self.p {
            let m = self.thresholds[j].len();
            if m == 0 {
                continue;
            }
            left.sums.iter_mut().for_each(|v| *v = 0.0);
            left.counts.iter_mut().for_each(|v| *v = 0);
            left.total.iter_mut().for_each(|v| *v = 0.0);
            left.n = 0;
            let mut local = Decision { value: f64::NEG_INFINITY, split: None };
            for c in 0..m {
                let bin = self.offsets[j] + c;
                let cnt = all.counts[bin] as usize;
                if cnt == 0 {
                    continue;
                }
                for (l, &v) in left.sums.iter_mut().zip(&pair.sums[bin * b * d..(bin + 1) * b * d]) {
                    *l += v;
                }
                for (l, &v) in left.counts.iter_mut().zip(&pair.counts[bin * b..(bin + 1) * b]) {
                    *l += v;
                }
                for a in 0..d {
                    left.total[a] += all.sums[bin * d + a];
                }
                left.n += cnt;
                if left.n < self.min_node {
                    continue;
                }
                if all.n - left.n < self.min_node {
                    break;
                }
                for ((r, &t), &l) in right.sums.iter_mut().zip(&all.sums).zip(&left.sums) {
                    *r = t - l;
                }
                for ((r, &t), &l) in right.counts.iter_mut().zip(&all.counts).zip(&left.counts) {
                    *r = t - l;
                }
                for a in 0..d {
                    right.total[a] = all.total[a] - left.total[a];
                }
                right.n = all.n - left.n;
                let v = self.depth1(&left).value + self.depth1(&right).value;
                if v > local.value + self.tol {
                    local = Decision { value: v, split: Some((j, c)) };
                }
            }
            if local.split.is_some() && local.value > best.value + self.tol {
                best = local;
            }
        }
        best
    }

    /// Depth 3: rows move from the right child to the left one as the root
    /// threshold advances, updating both children's joint histograms.
    fn depth3(&self, rows: &[u32]) -> Decision {
        let all = self.hist_of(rows);
        let all_pair = self.pair_of(rows);
        let per_feature = |j: usize| -> Decision {
            let mut best = Decision { value: f64::NEG_INFINITY, split: None };
            let m = self.thresholds[j].len();
            if m == 0 || all.n < 2 * self.min_node {
                return best;
            }
            let (sorted, ends) = self.sort_by_bin(rows, j, Some(&all.counts));
            let mut left = self.empty_hist();
            let mut right = all.clone();
            let mut left_pair = self.empty_pair();
            let mut right_pair = all_pair.clone();
            let mut pos = 0;
            for c in 0..m {
                if ends[c] == pos {
                    continue;
                }
                for &r in &sorted[pos..ends[c]] {
                    self.move_row(r, &mut left, Some(&mut right));
                    self.move_row_pair(r, &mut left_pair, Some(&mut right_pair));
                }
                pos = ends[c];
                if left.n < self.min_node {
                    continue;
                }
                if right.n < self.min_node {
                    break;
                }
                let v = self.depth2_pair(&left_pair, &left).value
                    + self.depth2_pair(&right_pair, &right).value;
                if v > best.value + self.tol {
                    best = Decision { value: v, split: Some((j, c)) };
                }
            }
            best
        };
        let per: Vec<Decision> = if rows.len() >= PAR_MIN_ROWS {
            (0..self.p).into_par_iter().map(per_feature).collect()
        } else {
            (0..self.p).map(per_feature).collect()
        };
        let mut best = Decision { value: self.best_arm(&all.total).1, split: None };
        for dec in per {
            if dec.split.is_some() && dec.value > best.value + self.tol {
                best = dec;
            }
        }
        best
    }

    fn deep(&self, rows: &[u32], depth: usize) -> Decision {
        let mut orders: Vec<Vec<u32>> = Vec::with_capacity(self.p);
        let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
        for j in 0..self.p {
            let (sorted, ends) = self.sort_by_bin(rows, j, None);
            let mut pos = 0;
            for c in 0..self.thresholds[j].len() {
                if ends[c] == pos {
                    continue;
                }
                pos = ends[c];
                if pos < self.min_node {
                    continue;
                }
                if rows.len() - pos < self.min_node {
                    break;
                }
                candidates.push((j, c, pos));
            }
            orders.push(sorted);
        }
        let score = |&(j, _, pos): &(usize, usize, usize)| -> f64 {
            let (left, right) = orders[j].split_at(pos);
            self.solve(left, depth - 1).value + self.solve(right, depth - 1).value
        };
        let values: Vec<f64> = if rows.len() >= PAR_MIN_ROWS {
            candidates.par_iter().map(score).collect()
        } else {
            candidates.iter().map(score).collect()
        };
        let mut best = Decision { value: self.best_arm(&self.column_sums(rows)).1, split: None };
        for (&(j, c, _), v) in candidates.iter().zip(values) {
            if v > best.value + self.tol {
                best = Decision { value: v, split: Some((j, c)) };
            }
        }
        best
    }

    fn solve(&self, rows: &[u32], depth: usize) -> Decision {
        match depth {
            0 => Decision { value: self.best_arm(&self.column_sums(rows)).1, split: None },
            1 => self.depth1(&self.hist_of(rows)),
            2 => self.depth2(rows, &self.hist_of(rows)),
            3 => self.depth3(rows),
            _ => self.deep(rows, depth),
        }
    }

    fn partition(&self, rows: &[u32], j: usize, c: usize) -> (Vec<u32>, Vec<u32>) {
        rows.iter().partition(|&&r| self.bin(r, j) <= c)
    }

    fn leaf(&self, rows: &[u32]) -> TreeNode {
        TreeNode::leaf(self.best_arm(&self.column_sums(rows)).0)
    }

    fn split_node(&self, j: usize, c: usize, left: TreeNode, right: TreeNode) -> TreeNode {
        TreeNode::split(j, self.thresholds[j][c], left, right)
    }

    fn build(&self, rows: &[u32], depth: usize) -> TreeNode {
        match self.solve(rows, depth).split {
            None => self.leaf(rows),
            Some((j, c)) => {
                let (l, r) = self.partition(rows, j, c);
                self.split_node(j, c, self.build(&l, depth - 1), self.build(&r, depth - 1))
            }
        }
    }

    fn build_hybrid(&self, rows: &[u32], budget: usize, lookahead: usize) -> TreeNode {
        if budget <= lookahead {
            return self.build(rows, budget);
        }
        match self.solve(rows, lookahead).split {
            None => self.leaf(rows),
            Some((j, c)) => {
                let (l, r) = self.partition(rows, j, c);
                self.split_node(
                    j,
                    c,
                    self.build_hybrid(&l, budget - 1, lookahead),
                    self.build_hybrid(&r, budget - 1, lookahead),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScoreMethod;
    use ndarray::{array, Array2};

    fn scores(g: Array2<f64>) -> ScoreMatrix {
        ScoreMatrix::new(g, ScoreMethod::Aipw).unwrap()
    }

    #[test]
    fn thresholds() {
        assert_eq!(candidate_thresholds(&[1.0, 2.0, 4.0], 1), vec![1.5, 3.0]);
        assert!(candidate_thresholds(&[2.0; 5], 1).is_empty());
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(candidate_thresholds(&x, 10).len(), 10);
    }

    #[test]
    fn depth_zero_and_one() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let g = scores(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let r0 = exact_search(x.view(), &g, &SearchConfig::exact(0)).unwrap();
        assert_eq!(r0.root, TreeNode::leaf(0));
        assert_eq!(r0.total_score, 2.0);
        let r1 = exact_search(x.view(), &g, &SearchConfig::exact(1)).unwrap();
        assert_eq!(r1.root, TreeNode::split(0, 2.5, TreeNode::leaf(0), TreeNode::leaf(1)));
        assert_eq!(r1.total_score, 4.0);
    }

    #[test]
    fn config_errors() {
        let x = array![[1.0]];
        let g = scores(array![[1.0]]);
        assert!(exact_search(x.view(), &g, &SearchConfig::exact(5)).is_err());
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(exact_search(empty.view(), &g, &SearchConfig::exact(1)).is_err());
        let x2 = array![[1.0], [2.0]];
        assert!(exact_search(x2.view(), &g, &SearchConfig::exact(1)).is_err());
    }
}
