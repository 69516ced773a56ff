//! Cross-fitted nuisance estimation: cluster-coherent folds, per-arm outcome
//! regressions `mu_a(X)` and propensities `e_a(X)`.
//!
//! Observation `i` only ever receives predictions from models trained on
//! folds other than its own.

pub mod forest;

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{forest_fit, ForestModel, ForestParams, RegressionTree};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeding;

/// Fold id per observation. Clusters never straddle folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    folds: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffle the distinct clusters with a seeded generator and deal them out,
/// each to the currently lightest fold (ties to the lowest fold id). With
/// equal-size clusters this is plain round-robin; with unequal sizes it keeps
/// every fold within one cluster size of `n / K`.
pub fn make_folds(clusters: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2 folds, got {k}")));
    }
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut sizes: Vec<usize> = Vec::new();
    let dense: Vec<usize> = clusters
        .iter()
        .map(|&c| {
            let next = index.len();
            let id = *index.entry(c).or_insert(next);
            if id == sizes.len() {
                sizes.push(0);
            }
            sizes[id] += 1;
            id
        })
        .collect();
    let g = sizes.len();
    if g < k {
        return Err(Error::InvalidArgument(format!(
            "{g} clusters cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..g).collect();
    order.shuffle(&mut seeding::rng(seed));
    let mut load = vec![0usize; k];
    let mut fold_of_cluster = vec![0usize; g];
    for c in order {
        let f = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        fold_of_cluster[c] = f;
        load[f] += sizes[c];
    }
    Ok(FoldAssignment {
        folds: dense.iter().map(|&c| fold_of_cluster[c]).collect(),
        k,
    })
}

/// Cross-fitted outcome regressions: entry `(i, a)` predicts `X_i` from a
/// forest fit on `{j : fold(j) != fold(i), A_j = a}`.
pub fn fit_outcome_models(
    ds: &Dataset,
    folds: &FoldAssignment,
    params: &ForestParams,
    seed: u64,
) -> Result<Array2<f64>> {
    check_folds(ds, folds)?;
    if let Some((i, y)) = ds.outcomes().iter().enumerate().find(|(_, y)| !y.is_finite()) {
        return Err(Error::InvalidData(format!("outcome at row {i} is not finite ({y})")));
    }
    let d = ds.num_arms();
    let tasks: Vec<(usize, usize)> =
        (0..folds.k()).flat_map(|f| (0..d).map(move |a| (f, a))).collect();
    let fold_rows = rows_by_fold(folds);
    let x = ds.features();
    let preds: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(f, a)| {
            let train: Vec<usize> = (0..ds.n())
                .filter(|&j| folds.folds()[j] != f && ds.actions()[j] == a)
                .collect();
            if train.is_empty() {
                return Err(Error::InvalidData(format!(
                    "arm {a} has no observations outside fold {f}"
                )));
            }
            let xt = x.select(Axis(0), &train);
            let yt: Vec<f64> = train.iter().map(|&j| ds.outcomes()[j]).collect();
            let model = forest_fit(
                xt.view(),
                &yt,
                params,
                seeding::derive(seed, &[f as u64, a as u64]),
            )?;
            Ok(fold_rows[f].iter().map(|&i| model.predict_row(x.row(i))).collect())
        })
        .collect::<Result<_>>()?;
    let mut mu = Array2::zeros((ds.n(), d));
    for (&(f, a), p) in tasks.iter().zip(preds) {
        for (&i, v) in fold_rows[f].iter().zip(p) {
            mu[(i, a)] = v;
        }
    }
    Ok(mu)
}

/// Cross-fitted propensities from one-vs-rest forests, renormalized per row
/// and clipped into `[clip, 1 - clip]`. Stored propensities are returned
/// unchanged.
pub fn fit_propensities(
    ds: &Dataset,
    folds: &FoldAssignment,
    params: &ForestParams,
    seed: u64,
    clip: f64,
) -> Result<Array2<f64>> {
    if let Some(p) = ds.propensities() {
        return Ok(p.clone());
    }
    check_folds(ds, folds)?;
    let d = ds.num_arms();
    if !(clip > 0.0 && clip < 0.5) || clip * d as f64 > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "propensity clip {clip} invalid for {d} arms"
        )));
    }
    let mut counts = vec![0usize; d];
    for &a in ds.actions() {
        counts[a] += 1;
    }
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidData(format!("arm {a} has zero observations")));
    }
    let fold_rows = rows_by_fold(folds);
    let x = ds.features();
    let tasks: Vec<(usize, usize)> =
        (0..folds.k()).flat_map(|f| (0..d).map(move |a| (f, a))).collect();
    let preds: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(f, a)| {
            let train: Vec<usize> =
                (0..ds.n()).filter(|&j| folds.folds()[j] != f).collect();
            let xt = x.select(Axis(0), &train);
            let yt: Vec<f64> = train
                .iter()
                .map(|&j| f64::from(u8::from(ds.actions()[j] == a)))
                .collect();
            let model = forest_fit(
                xt.view(),
                &yt,
                params,
                seeding::derive(seed, &[f as u64, a as u64]),
            )?;
            Ok(fold_rows[f].iter().map(|&i| model.predict_row(x.row(i))).collect())
        })
        .collect::<Result<_>>()?;
    let mut e = Array2::zeros((ds.n(), d));
    for (&(f, a), p) in tasks.iter().zip(preds) {
        for (&i, v) in fold_rows[f].iter().zip(p) {
            e[(i, a)] = v;
        }
    }
    for mut row in e.rows_mut() {
        let mut v = row.to_vec();
        clip_and_normalize(&mut v, clip);
        row.assign(&ndarray::Array1::from(v));
    }
    Ok(e)
}

/// Project a probability row so that it sums to one with every entry at
/// least `clip`: entries below the floor are pinned there and the remaining
/// mass is rescaled over the rest, repeated until stable.
pub fn clip_and_normalize(row: &mut [f64], clip: f64) {
    let d = row.len();
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|v| *v = v.max(0.0) / total);
    } else {
        row.iter_mut().for_each(|v| *v = 1.0 / d as f64);
    }
    let mut pinned = vec![false; d];
    loop {
        let mut changed = false;
        for (v, p) in row.iter_mut().zip(pinned.iter_mut()) {
            if !*p && *v < clip {
                *v = clip;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let free_mass = 1.0 - clip * pinned.iter().filter(|&&p| p).count() as f64;
        let free_sum: f64 = row.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let free_count = pinned.iter().filter(|&&p| !p).count();
        for (v, &p) in row.iter_mut().zip(&pinned) {
            if !p {
                *v = if free_sum > 0.0 {
                    *v * free_mass / free_sum
                } else {
                    free_mass / free_count as f64
                };
            }
        }
    }
}

fn check_folds(ds: &Dataset, folds: &FoldAssignment) -> Result<()> {
    if folds.folds().len() != ds.n() {
        return Err(Error::Dimension(format!(
            "fold assignment covers {} rows, dataset has {}",
            folds.folds().len(),
            ds.n()
        )));
    }
    Ok(())
}

fn rows_by_fold(folds: &FoldAssignment) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); folds.k()];
    for (i, &f) in folds.folds().iter().enumerate() {
        rows[f].push(i);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceConfig {
    pub forest: ForestParams,
    pub folds: usize,
    pub clip: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            folds: 10,
            clip: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    Known,
    Estimated,
    Injected,
}

/// Cross-fitted nuisance estimates for one dataset.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub mu_hat: Array2<f64>,
    pub e_hat: Array2<f64>,
    pub folds: Option<FoldAssignment>,
    pub learner_config: NuisanceConfig,
    pub seed: u64,
    pub propensity_source: PropensitySource,
}

impl NuisanceFit {
    /// Wrap externally supplied nuisances (e.g. the true functions of a
    /// simulated design).
    pub fn injected(mu_hat: Array2<f64>, e_hat: Array2<f64>) -> Result<Self> {
        if mu_hat.dim() != e_hat.dim() {
            return Err(Error::Dimension(format!(
                "mu_hat {:?} vs e_hat {:?}",
                mu_hat.dim(),
                e_hat.dim()
            )));
        }
        Ok(Self {
            mu_hat,
            e_hat,
            folds: None,
            learner_config: NuisanceConfig::default(),
            seed: 0,
            propensity_source: PropensitySource::Injected,
        })
    }
}

/// Folds, outcome models and (unless known) propensities in one call.
pub fn fit_nuisance(ds: &Dataset, cfg: &NuisanceConfig, seed: u64) -> Result<NuisanceFit> {
    let folds = make_folds(ds.clusters(), cfg.folds, seeding::derive(seed, &[0]))?;
    let mu_hat = fit_outcome_models(ds, &folds, &cfg.forest, seeding::derive(seed, &[1]))?;
    let e_hat = fit_propensities(ds, &folds, &cfg.forest, seeding::derive(seed, &[2]), cfg.clip)?;
    Ok(NuisanceFit {
        mu_hat,
        e_hat,
        folds: Some(folds),
        learner_config: *cfg,
        seed,
        propensity_source: if ds.propensities().is_some() {
            PropensitySource::Known
        } else {
            PropensitySource::Estimated
        },
    })
}
