//! Resampling comparison of policy rules: split by cluster, bootstrap each
//! part to fixed sizes, fit trees on the training scores and compare rewards
//! on the validation scores.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluate::{p_value, stars, COMPARISON_STARS};
use crate::format::fmt_sig;
use crate::policies::argmax;
use crate::scores::ScoreMatrix;
use crate::seeding;
use crate::treesearch::{search, SearchConfig};

use super::dgp::ARM_NAMES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub label: String,
    pub search: SearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub reps: usize,
    pub train_share: f64,
    pub sizes: [usize; 2],
    pub trees: Vec<TreeSpec>,
    /// Split whole clusters between training and validation.
    pub cluster_split: bool,
    /// Resample whole clusters instead of rows.
    pub cluster_bootstrap: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            reps: 500,
            train_share: 0.6,
            sizes: [4871, 1857],
            trees: vec![
                TreeSpec { label: "Tree d=2".into(), search: SearchConfig::exact(2) },
                TreeSpec { label: "Tree d=3".into(), search: SearchConfig::exact(3) },
                TreeSpec { label: "Tree d=4 hybrid".into(), search: SearchConfig::hybrid(4, 2) },
            ],
            cluster_split: true,
            cluster_bootstrap: false,
        }
    }
}

/// `mean_diff[r][c]` is the mean gain of policy `c` over policy `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonMatrix {
    pub policies: Vec<String>,
    pub mean_diff: Vec<Vec<f64>>,
    pub boot_se: Vec<Vec<f64>>,
    pub mean_reward: Vec<f64>,
    pub reward_se: Vec<f64>,
    pub reps: usize,
}

pub fn arm_label(arm: usize, num_arms: usize) -> String {
    if num_arms == ARM_NAMES.len() {
        ARM_NAMES[arm].to_string()
    } else {
        format!("arm{arm}")
    }
}

pub const RANDOM: &str = "Random";
pub const PLUG_IN: &str = "Plug-in";

fn policy_labels(num_arms: usize, trees: &[TreeSpec]) -> Vec<String> {
    let mut v: Vec<String> = (1..num_arms).map(|a| arm_label(a, num_arms)).collect();
    v.push(RANDOM.into());
    v.extend(trees.iter().map(|t| t.label.clone()));
    v.push(PLUG_IN.into());
    v.push(arm_label(0, num_arms));
    v
}

/// Training and validation row sets before resampling.
fn split_rows(ds: &Dataset, share: f64, by_cluster: bool, rng: &mut seeding::Rng) -> (Vec<usize>, Vec<usize>) {
    let n = ds.n();
    let target = (share * n as f64).round() as usize;
    if !by_cluster {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(rng);
        let test = rows.split_off(target.min(n));
        return (rows, test);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.num_clusters()];
    for (i, &c) in ds.clusters().iter().enumerate() {
        members[c].push(i);
    }
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.shuffle(rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in order {
        if train.len() < target {
            train.extend(&members[c]);
        } else {
            test.extend(&members[c]);
        }
    }
    (train, test)
}

fn resample(rows: &[usize], size: usize, clusters: Option<&[usize]>, rng: &mut seeding::Rng) -> Vec<usize> {
    match clusters {
        None => (0..size).map(|_| rows[rng.random_range(0..rows.len())]).collect(),
        Some(cl) => {
            let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for &i in rows {
                groups.entry(cl[i]).or_default().push(i);
            }
            let groups: Vec<Vec<usize>> = groups.into_values().collect();
            let mut out = Vec::with_capacity(size);
            while out.len() < size {
                let g = &groups[rng.random_range(0..groups.len())];
                out.extend(g.iter().take(size - out.len()));
            }
            out
        }
    }
}

/// Run the exercise. `mu_hat` feeds the plug-in rule (row-wise argmax on
/// the validation rows); `scores` are used for fitting and evaluation.
pub fn validation_exercise(
    ds: &Dataset,
    scores: &ScoreMatrix,
    mu_hat: &Array2<f64>,
    cfg: &ValidationConfig,
    seed: u64,
) -> Result<ComparisonMatrix> {
    let n = ds.n();
    let d = ds.num_arms();
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument("validation needs at least 2 repetitions".into()));
    }
    if !(cfg.train_share > 0.0 && cfg.train_share < 1.0) {
        return Err(Error::InvalidArgument("train_share must lie in (0, 1)".into()));
    }
    if cfg.sizes.contains(&0) {
        return Err(Error::InvalidArgument("bootstrap sizes must be positive".into()));
    }
    if scores.n() != n || scores.num_arms() != d || mu_hat.dim() != (n, d) {
        return Err(Error::Dimension("scores and outcome predictions must match the dataset".into()));
    }
    if d < 2 {
        return Err(Error::InvalidArgument("at least one treatment arm is required".into()));
    }
    for t in &cfg.trees {
        t.search.check()?;
    }
    let labels = policy_labels(d, &cfg.trees);
    let k = labels.len();
    let x = ds.features();
    let g = scores.gamma();

    let run = |rep: usize| -> Result<Vec<f64>> {
        let mut rng = seeding::rng_at(seed, &[rep as u64]);
        let (train, test) = split_rows(ds, cfg.train_share, cfg.cluster_split, &mut rng);
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidData("split left an empty partition".into()));
        }
        let boot_clusters = cfg.cluster_bootstrap.then(|| ds.clusters());
        let tr = resample(&train, cfg.sizes[0], boot_clusters, &mut rng);
        let te = resample(&test, cfg.sizes[1], boot_clusters, &mut rng);
        let x_tr = x.select(ndarray::Axis(0), &tr);
        let g_tr = scores.select_rows(&tr);
        let m = te.len() as f64;
        let mean_arm = |assign: &dyn Fn(usize) -> usize| -> f64 {
            te.iter().map(|&i| g[[i, assign(i)]]).sum::<f64>() / m
        };
        let mut values = Vec::with_capacity(k);
        for a in 1..d {
            values.push(mean_arm(&|_| a));
        }
        let letter_weight = 1.0 / (d - 1) as f64;
        values.push(te.iter().map(|&i| (1..d).map(|a| g[[i, a]]).sum::<f64>() * letter_weight).sum::<f64>() / m);
        for t in &cfg.trees {
            let fit = search(x_tr.view(), &g_tr, &t.search)?;
            values.push(mean_arm(&|i| fit.root.arm_for(x.row(i))));
        }
        values.push(mean_arm(&|i| argmax(mu_hat.row(i))));
        values.push(mean_arm(&|_| 0));
        Ok(values)
    };
    let per_rep: Vec<Vec<f64>> = (0..cfg.reps).into_par_iter().map(run).collect::<Result<_>>()?;

    let reps = cfg.reps as f64;
    let mut mean_diff = vec![vec![0.0; k]; k];
    let mut boot_se = vec![vec![0.0; k]; k];
    for r in 0..k {
        for c in 0..k {
            if r == c {
                continue;
            }
            let diffs: Vec<f64> = per_rep.iter().map(|v| v[c] - v[r]).collect();
            let mean = diffs.iter().sum::<f64>() / reps;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (reps - 1.0);
            mean_diff[r][c] = mean;
            boot_se[r][c] = var.sqrt();
        }
    }
    let mut mean_reward = vec![0.0; k];
    let mut reward_se = vec![0.0; k];
    for c in 0..k {
        let v: Vec<f64> = per_rep.iter().map(|r| r[c]).collect();
        let mean = v.iter().sum::<f64>() / reps;
        mean_reward[c] = mean;
        reward_se[c] = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps - 1.0)).sqrt();
    }
    Ok(ComparisonMatrix { policies: labels, mean_diff, boot_se, mean_reward, reward_se, reps: cfg.reps })
}

impl ComparisonMatrix {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.policies.iter().position(|p| p == label)
    }

    /// Long CSV: one line per ordered pair with stars at 0.1/0.05/0.01.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_policy,column_policy,mean_diff,boot_se,stars\n");
        for (r, row) in self.policies.iter().enumerate() {
            for (c, col) in self.policies.iter().enumerate() {
                let (m, se) = (self.mean_diff[r][c], self.boot_se[r][c]);
                let s = if r == c { "" } else { stars(p_value(m, se), &COMPARISON_STARS) };
                let _ = writeln!(out, "{row},{col},{},{},{s}", fmt_sig(m), fmt_sig(se));
            }
        }
        out
    }

    /// Aligned text: policies in columns, baselines in rows.
    pub fn render(&self) -> String {
        let w = self.policies.iter().map(String::len).max().unwrap_or(8).max(10) + 2;
        let mut out = format!("{:w$}", "");
        for p in &self.policies {
            let _ = write!(out, "{p:>w$}");
        }
        out.push('\n');
        for (r, row) in self.policies.iter().enumerate() {
            let mut est = format!("{row:w$}");
            let mut se = format!("{:w$}", "");
            for c in 0..self.policies.len() {
                let (m, s) = (self.mean_diff[r][c], self.boot_se[r][c]);
                let st = if r == c { "" } else { stars(p_value(m, s), &COMPARISON_STARS) };
                let _ = write!(est, "{:>w$}", format!("{:.4}{st}", m));
                let _ = write!(se, "{:>w$}", format!("({:.4})", s));
            }
            let _ = writeln!(out, "{}", est.trim_end());
            let _ = writeln!(out, "{}", se.trim_end());
        }
        out
    }
}
