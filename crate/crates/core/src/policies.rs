//! Policy classes: constant, stochastic, quadrant, linear, cubic, plug-in and
//! decision trees, behind one assignment interface.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::seeding;

/// A policy tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        arm: usize,
    },
}

impl TreeNode {
    pub fn leaf(arm: usize) -> Self {
        TreeNode::Leaf { arm }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Arm at the leaf reached by `x`.
    pub fn arm_for(&self, x: ArrayView1<f64>) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { arm } => return *arm,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Index of the leaf reached by `x`, counting leaves left to right.
    pub fn leaf_index(&self, x: ArrayView1<f64>) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return offset,
                TreeNode::Split { feature, threshold, left, right } => {
                    if x[*feature] <= *threshold {
                        node = left;
                    } else {
                        offset += left.num_leaves();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max()
            }
        }
    }

    fn max_arm(&self) -> usize {
        match self {
            TreeNode::Leaf { arm } => *arm,
            TreeNode::Split { left, right, .. } => left.max_arm().max(right.max_arm()),
        }
    }
}

/// Leaf depth 0; a split is one deeper than its deepest child.
pub fn tree_depth(root: &TreeNode) -> usize {
    match root {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Split { left, right, .. } => 1 + tree_depth(left).max(tree_depth(right)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Constant {
        arm: usize,
    },
    /// Independent draw per row from `weights`.
    Stochastic {
        weights: Vec<f64>,
    },
    /// `arm_in` iff `s1 (x[j1] - b1) >= 0` and `s2 (x[j2] - b2) >= 0`.
    Quadrant {
        features: [usize; 2],
        signs: [Sign; 2],
        thresholds: [f64; 2],
        arm_in: usize,
        arm_out: usize,
    },
    /// `arm_pos` iff `intercept + coefficients . x >= 0`.
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
        arm_pos: usize,
        arm_neg: usize,
    },
    /// `arm_pos` iff `b0 + b1 x[j1] + b2 x[j2] + b3 x[j2]^2 + b4 x[j2]^3 >= 0`.
    Cubic {
        features: [usize; 2],
        coefficients: [f64; 5],
        arm_pos: usize,
        arm_neg: usize,
    },
    Tree(TreeNode),
    /// Row-wise argmax of estimated per-arm values; bound to the rows of the
    /// matrix it was built from.
    PlugIn {
        tau: Array2<f64>,
    },
}

impl Policy {
    /// Check that every referenced arm lies in `0..num_arms`.
    pub fn check_arms(&self, num_arms: usize) -> Result<()> {
        let max_arm = match self {
            Policy::Constant { arm } => *arm,
            Policy::Stochastic { weights } => {
                if weights.len() != num_arms {
                    return Err(Error::Dimension(format!(
                        "{} stochastic weights for {num_arms} arms",
                        weights.len()
                    )));
                }
                check_weights(weights)?;
                0
            }
            Policy::Quadrant { arm_in, arm_out, .. } => *arm_in.max(arm_out),
            Policy::Linear { arm_pos, arm_neg, .. } | Policy::Cubic { arm_pos, arm_neg, .. } => {
                *arm_pos.max(arm_neg)
            }
            Policy::Tree(root) => root.max_arm(),
            Policy::PlugIn { tau } => {
                if tau.ncols() != num_arms {
                    return Err(Error::Dimension(format!(
                        "plug-in matrix has {} columns for {num_arms} arms",
                        tau.ncols()
                    )));
                }
                0
            }
        };
        if max_arm >= num_arms {
            return Err(Error::InvalidArgument(format!(
                "policy references arm {max_arm} but only {num_arms} arms exist"
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > crate::data::SHARE_TOLERANCE {
        return Err(Error::InvalidArgument(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Assign an arm to every row of `x`. `seed` only matters for
/// [`Policy::Stochastic`].
pub fn assign(policy: &Policy, x: ArrayView2<f64>, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    let p = x.ncols();
    let need = |j: usize| -> Result<()> {
        if j >= p {
            Err(Error::InvalidArgument(format!(
                "feature index {j} out of range for {p} features"
            )))
        } else {
            Ok(())
        }
    };
    let out = match policy {
        Policy::Constant { arm } => vec![*arm; n],
        Policy::Stochastic { weights } => {
            check_weights(weights)?;
            let mut rng = seeding::rng(seed);
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    weights
                        .iter()
                        .position(|&w| {
                            acc += w;
                            u < acc
                        })
                        .unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap_or(0))
                })
                .collect()
        }
        Policy::Quadrant { features, signs, thresholds, arm_in, arm_out } => {
            features.iter().try_for_each(|&j| need(j))?;
            x.rows()
                .into_iter()
                .map(|r| {
                    let inside = (0..2)
                        .all(|k| signs[k].value() * (r[features[k]] - thresholds[k]) >= 0.0);
                    if inside { *arm_in } else { *arm_out }
                })
                .collect()
        }
        Policy::Linear { intercept, coefficients, arm_pos, arm_neg } => {
            if coefficients.len() != p {
                return Err(Error::Dimension(format!(
                    "{} linear coefficients for {p} features",
                    coefficients.len()
                )));
            }
            x.rows()
                .into_iter()
                .map(|r| {
                    let s = intercept + r.iter().zip(coefficients).map(|(a, b)| a * b).sum::<f64>();
                    if s >= 0.0 { *arm_pos } else { *arm_neg }
                })
                .collect()
        }
        Policy::Cubic { features, coefficients: b, arm_pos, arm_neg } => {
            features.iter().try_for_each(|&j| need(j))?;
            x.rows()
                .into_iter()
                .map(|r| {
                    let (x1, x2) = (r[features[0]], r[features[1]]);
                    let s = b[0] + b[1] * x1 + b[2] * x2 + b[3] * x2 * x2 + b[4] * x2 * x2 * x2;
                    if s >= 0.0 { *arm_pos } else { *arm_neg }
                })
                .collect()
        }
        Policy::Tree(root) => {
            if let Some(j) = root.max_feature() {
                need(j)?;
            }
            x.rows().into_iter().map(|r| root.arm_for(r)).collect()
        }
        Policy::PlugIn { tau } => {
            if tau.nrows() != n {
                return Err(Error::Dimension(format!(
                    "plug-in matrix has {} rows, data has {n}",
                    tau.nrows()
                )));
            }
            tau.rows().into_iter().map(|r| argmax(r)).collect()
        }
    };
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = a;
        }
    }
    best
}

pub fn plug_in_policy(tau: Array2<f64>) -> Policy {
    Policy::PlugIn { tau }
}

/// Render a tree in Graphviz DOT. Splits are labelled `name ≤ threshold`
/// with `yes`/`no` edges; leaves carry the arm name.
pub fn export_tree(root: &TreeNode, feature_names: &[String], arm_names: &[String]) -> String {
    fn name(list: &[String], i: usize, fallback: &str) -> String {
        list.get(i).cloned().unwrap_or_else(|| format!("{fallback}{i}"))
    }
    fn esc(s: &str) -> String {
        s.replace('\\', "\\\\").replace('"', "\\\"")
    }
    fn walk(
        node: &TreeNode,
        next: &mut usize,
        out: &mut String,
        features: &[String],
        arms: &[String],
    ) -> usize {
        let id = *next;
        *next += 1;
        match node {
            TreeNode::Leaf { arm } => {
                let _ = writeln!(
                    out,
                    "  n{id} [label=\"{}\", shape=ellipse];",
                    esc(&name(arms, *arm, "arm "))
                );
            }
            TreeNode::Split { feature, threshold, left, right } => {
                let _ = writeln!(
                    out,
                    "  n{id} [label=\"{} ≤ {}\"];",
                    esc(&name(features, *feature, "x")),
                    fmt_sig(*threshold)
                );
                let l = walk(left, next, out, features, arms);
                let _ = writeln!(out, "  n{id} -> n{l} [label=\"yes\"];");
                let r = walk(right, next, out, features, arms);
                let _ = writeln!(out, "  n{id} -> n{r} [label=\"no\"];");
            }
        }
        id
    }
    let mut out = String::from("digraph policy_tree {\n  node [shape=box];\n");
    let mut next = 0;
    walk(root, &mut next, &mut out, feature_names, arm_names);
    out.push_str("}\n");
    out
}
