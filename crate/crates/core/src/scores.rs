//! Per-observation reward scores and the reward estimates built from them.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::nuisance::NuisanceFit;
use crate::policies::{self, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Ipw,
    Aipw,
}

/// n x D matrix of scores `gamma[i][a]`; the mean of column `a` estimates the
/// value of giving everyone arm `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    gamma: Array2<f64>,
    method: ScoreMethod,
}

impl ScoreMatrix {
    pub fn new(gamma: Array2<f64>, method: ScoreMethod) -> Result<Self> {
        if gamma.nrows() == 0 || gamma.ncols() == 0 {
            return Err(Error::EmptyInput("score matrix is empty".into()));
        }
        if let Some(((i, a), v)) = gamma.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!("score [{i}, {a}] is not finite ({v})")));
        }
        Ok(Self { gamma, method })
    }

    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.gamma.view()
    }

    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn num_arms(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            gamma: self.gamma.select(ndarray::Axis(0), rows),
            method: self.method,
        }
    }

    /// Write `gamma_0..gamma_{D-1}` columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((0..self.num_arms()).map(|a| format!("gamma_{a}")))?;
        for row in self.gamma.rows() {
            w.write_record(row.iter().map(|&v| fmt_sig(v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub method: ScoreMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEffect {
    pub group_label: String,
    pub arm: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub n_group: usize,
}

/// Mean and standard error (sample SD over sqrt n; zero for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

fn check_dims(ds: &Dataset, m: &Array2<f64>, what: &str) -> Result<()> {
    if m.dim() != (ds.n(), ds.num_arms()) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            ds.n(),
            ds.num_arms()
        )));
    }
    Ok(())
}

fn check_positive(e_hat: &Array2<f64>) -> Result<()> {
    if let Some(((i, a), v)) = e_hat.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Numerical(format!("propensity [{i}, {a}] = {v} is not positive")));
    }
    Ok(())
}

/// Cross-fitted doubly robust scores
/// `(y - mu_a) * 1{A = a} / e_a + mu_a`.
pub fn aipw_scores(ds: &Dataset, fit: &NuisanceFit) -> Result<ScoreMatrix> {
    check_dims(ds, &fit.mu_hat, "outcome predictions")?;
    check_dims(ds, &fit.e_hat, "propensities")?;
    check_positive(&fit.e_hat)?;
    let mut gamma = fit.mu_hat.clone();
    for (i, (&a, &y)) in ds.actions().iter().zip(ds.outcomes()).enumerate() {
        let mu = fit.mu_hat[[i, a]];
        gamma[[i, a]] = (y - mu) / fit.e_hat[[i, a]] + mu;
    }
    ScoreMatrix::new(gamma, ScoreMethod::Aipw)
}

/// Inverse-propensity scores `1{A = a} y / e_a`.
pub fn ipw_scores(ds: &Dataset, e_hat: &Array2<f64>) -> Result<ScoreMatrix> {
    check_dims(ds, e_hat, "propensities")?;
    check_positive(e_hat)?;
    let mut gamma = Array2::zeros((ds.n(), ds.num_arms()));
    for (i, (&a, &y)) in ds.actions().iter().zip(ds.outcomes()).enumerate() {
        gamma[[i, a]] = y / e_hat[[i, a]];
    }
    ScoreMatrix::new(gamma, ScoreMethod::Ipw)
}

/// Inverse-propensity estimate of a policy's mean outcome. Stochastic
/// policies are weighted by their arm probabilities instead of sampled.
pub fn ipw_reward(ds: &Dataset, policy: &Policy, e_hat: &Array2<f64>) -> Result<RewardEstimate> {
    policy.check_arms(ds.num_arms())?;
    let scores = ipw_scores(ds, e_hat)?;
    match policy {
        Policy::Stochastic { weights } => stochastic_reward(&scores, weights),
        _ => {
            let assignment = policies::assign(policy, ds.features().view(), 0)?;
            policy_reward(&scores, &assignment)
        }
    }
}

fn check_assignment(scores: &ScoreMatrix, assignment: &[usize]) -> Result<()> {
    if assignment.len() != scores.n() {
        return Err(Error::Dimension(format!(
            "assignment has {} entries for {} score rows",
            assignment.len(),
            scores.n()
        )));
    }
    if let Some(&a) = assignment.iter().find(|&&a| a >= scores.num_arms()) {
        return Err(Error::InvalidArgument(format!(
            "assigned arm {a} out of range for {} arms",
            scores.num_arms()
        )));
    }
    Ok(())
}

fn estimate(contrib: &[f64], method: ScoreMethod) -> RewardEstimate {
    let (value, std_error) = mean_se(contrib);
    RewardEstimate { value, std_error, n: contrib.len(), method }
}

pub fn policy_reward(scores: &ScoreMatrix, assignment: &[usize]) -> Result<RewardEstimate> {
    check_assignment(scores, assignment)?;
    let g = scores.gamma();
    let contrib: Vec<f64> = assignment.iter().enumerate().map(|(i, &a)| g[[i, a]]).collect();
    Ok(estimate(&contrib, scores.method()))
}

pub fn stochastic_reward(scores: &ScoreMatrix, weights: &[f64]) -> Result<RewardEstimate> {
    if weights.len() != scores.num_arms() {
        return Err(Error::Dimension(format!(
            "{} weights for {} arms",
            weights.len(),
            scores.num_arms()
        )));
    }
    policies::check_weights(weights)?;
    let contrib: Vec<f64> = scores
        .gamma()
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(weights).map(|(g, w)| g * w).sum())
        .collect();
    Ok(estimate(&contrib, scores.method()))
}

/// Paired difference `policy a - policy b`.
pub fn reward_difference(
    scores: &ScoreMatrix,
    assign_a: &[usize],
    assign_b: &[usize],
) -> Result<RewardEstimate> {
    check_assignment(scores, assign_a)?;
    check_assignment(scores, assign_b)?;
    let g = scores.gamma();
    let contrib: Vec<f64> = assign_a
        .iter()
        .zip(assign_b)
        .enumerate()
        .map(|(i, (&a, &b))| g[[i, a]] - g[[i, b]])
        .collect();
    Ok(estimate(&contrib, scores.method()))
}

/// Within-group contrasts of every arm against `baseline_arm`. Groups are
/// reported in label order.
pub fn group_effects<S: AsRef<str>>(
    scores: &ScoreMatrix,
    grouping: &[S],
    baseline_arm: usize,
) -> Result<Vec<GroupEffect>> {
    if grouping.len() != scores.n() {
        return Err(Error::Dimension(format!(
            "{} group labels for {} score rows",
            grouping.len(),
            scores.n()
        )));
    }
    if baseline_arm >= scores.num_arms() {
        return Err(Error::InvalidArgument(format!("baseline arm {baseline_arm} out of range")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in grouping.iter().enumerate() {
        groups.entry(label.as_ref()).or_default().push(i);
    }
    let g = scores.gamma();
    let mut out = Vec::new();
    for (label, rows) in groups {
        for arm in (0..scores.num_arms()).filter(|&a| a != baseline_arm) {
            let d: Vec<f64> = rows.iter().map(|&i| g[[i, arm]] - g[[i, baseline_arm]]).collect();
            let (estimate, std_error) = mean_se(&d);
            out.push(GroupEffect {
                group_label: label.to_string(),
                arm,
                estimate,
                std_error,
                n_group: rows.len(),
            });
        }
    }
    Ok(out)
}
