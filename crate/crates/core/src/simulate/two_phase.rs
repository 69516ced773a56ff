//! Exploration wave with randomized letters, a policy tree fitted on it, and
//! an exploitation wave comparing the tree against random letters.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{known_propensities, Dataset};
use crate::error::{Error, Result};
use crate::evaluate::{EvalSample, TreatmentGroup};
use crate::nuisance::{fit_nuisance, NuisanceConfig, NuisanceFit};
use crate::policies::check_weights;
use crate::scores::{aipw_scores, ScoreMatrix};
use crate::seeding;
use crate::treesearch::{search, SearchConfig, SearchResult};

use super::dgp::{draw_outcomes, Dgp, DgpConfig, Population};
use super::randomize::block_randomize_clusters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhaseConfig {
    pub dgp: DgpConfig,
    /// Share of individuals (by cluster) treated in the first wave.
    pub explore_share: f64,
    /// Arm shares within the first-wave treated group.
    pub arm_shares_explore: Vec<f64>,
    /// Share of the untreated group that receives the fitted tree's arm.
    pub b1_share: f64,
    pub tree_depth: usize,
    pub split_step: usize,
    pub min_node_size: usize,
    pub hybrid_search_depth: Option<usize>,
    /// `region` or `none`.
    pub block_feature: String,
    pub nuisance: NuisanceConfig,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            explore_share: 0.6,
            arm_shares_explore: vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            b1_share: 0.5,
            tree_depth: 3,
            split_step: 1,
            min_node_size: 1,
            hybrid_search_depth: None,
            block_feature: "region".into(),
            nuisance: NuisanceConfig::default(),
        }
    }
}

impl TwoPhaseConfig {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            depth: self.tree_depth,
            split_step: self.split_step,
            min_node_size: self.min_node_size,
            hybrid_search_depth: self.hybrid_search_depth,
        }
    }

    fn check(&self) -> Result<()> {
        if self.explore_share >= 1.0 {
            return Err(Error::InvalidArgument(
                "explore_share of 1 leaves nobody for the second wave".into(),
            ));
        }
        if !(self.explore_share > 0.0) {
            return Err(Error::InvalidArgument("explore_share must lie in (0, 1)".into()));
        }
        if !(self.b1_share > 0.0 && self.b1_share < 1.0) {
            return Err(Error::InvalidArgument("b1_share must lie in (0, 1)".into()));
        }
        if self.arm_shares_explore.len() != self.dgp.num_arms {
            return Err(Error::Dimension(format!(
                "{} exploration shares for {} arms",
                self.arm_shares_explore.len(),
                self.dgp.num_arms
            )));
        }
        check_weights(&self.arm_shares_explore)?;
        if self.dgp.num_arms < 2 {
            return Err(Error::InvalidArgument("the experiment needs at least one letter".into()));
        }
        if !matches!(self.block_feature.as_str(), "region" | "none") {
            return Err(Error::InvalidArgument(format!(
                "block_feature must be `region` or `none`, got `{}`",
                self.block_feature
            )));
        }
        self.search_config().check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    /// Treated in the first wave.
    A,
    /// Untreated in the first wave, tree-assigned in the second.
    B1,
    /// Untreated in the first wave, random letter in the second.
    B2,
}

#[derive(Debug, Clone)]
pub struct TwoPhaseResult {
    pub population: Population,
    pub phase: Vec<Phase>,
    /// Every individual, first-wave actions and outcomes, known propensities.
    pub wave1: Dataset,
    pub nuisance: NuisanceFit,
    pub scores: ScoreMatrix,
    pub tree: SearchResult,
    /// Population row of every second-wave observation.
    pub wave2_rows: Vec<usize>,
    pub wave2_actions: Vec<usize>,
    pub wave2_outcomes: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Randomize the clusters touched by `rows` only.
fn randomize_rows(
    rows: &[usize],
    clusters: &[usize],
    blocks: &[usize],
    shares: &[f64],
    seed: u64,
) -> Result<(Vec<usize>, Vec<String>)> {
    let mut map = std::collections::HashMap::new();
    let sub_clusters: Vec<usize> = rows
        .iter()
        .map(|&i| {
            let next = map.len();
            *map.entry(clusters[i]).or_insert(next)
        })
        .collect();
    let sub_blocks: Vec<usize> = rows.iter().map(|&i| blocks[i]).collect();
    let r = block_randomize_clusters(&sub_clusters, &sub_blocks, shares, seed)?;
    Ok((r.arms, r.warnings))
}

pub fn run_two_phase(cfg: &TwoPhaseConfig, seed: u64) -> Result<TwoPhaseResult> {
    cfg.check()?;
    let d = cfg.dgp.num_arms;
    let dgp = Dgp::new(cfg.dgp.clone())?;
    let population = dgp.population(cfg.dgp.n, seeding::derive(seed, &[0]))?;
    let mut warnings = population.warnings.clone();
    let n = population.dataset.n();
    let clusters = population.dataset.clusters().to_vec();
    let blocks: Vec<usize> = match cfg.block_feature.as_str() {
        "region" => population.regions.clone(),
        _ => vec![0; n],
    };
    let all: Vec<usize> = (0..n).collect();

    // First wave: A/B by cluster within blocks, then letters within A.
    let x = cfg.explore_share;
    let (ab, w) = randomize_rows(&all, &clusters, &blocks, &[1.0 - x, x], seeding::derive(seed, &[1]))?;
    warnings.extend(w);
    let a_rows: Vec<usize> = all.iter().copied().filter(|&i| ab[i] == 1).collect();
    let b_rows: Vec<usize> = all.iter().copied().filter(|&i| ab[i] == 0).collect();
    if b_rows.is_empty() {
        return Err(Error::InvalidData("no individuals left for the second wave".into()));
    }
    if a_rows.is_empty() {
        return Err(Error::InvalidData("nobody treated in the first wave".into()));
    }
    let (letters, w) =
        randomize_rows(&a_rows, &clusters, &blocks, &cfg.arm_shares_explore, seeding::derive(seed, &[2]))?;
    warnings.extend(w);
    let mut actions1 = vec![0usize; n];
    for (k, &i) in a_rows.iter().enumerate() {
        actions1[i] = letters[k];
    }
    let outcomes1 = draw_outcomes(&population.oracle.mu, &actions1, seeding::derive(seed, &[3]));
    let mut shares1: Vec<f64> = cfg.arm_shares_explore.iter().map(|s| x * s).collect();
    shares1[0] += 1.0 - x;
    let wave1 = known_propensities(
        &population.dataset.with_observations(actions1, outcomes1)?.with_wave(vec![1; n])?,
        &shares1,
    )?;

    let nuisance = fit_nuisance(&wave1, &cfg.nuisance, seeding::derive(seed, &[4]))?;
    let scores = aipw_scores(&wave1, &nuisance)?;
    let tree = search(wave1.features().view(), &scores, &cfg.search_config())?;

    // Second wave: B split into tree-assigned and random letters.
    let (b_split, w) = randomize_rows(
        &b_rows,
        &clusters,
        &blocks,
        &[1.0 - cfg.b1_share, cfg.b1_share],
        seeding::derive(seed, &[5]),
    )?;
    warnings.extend(w);
    let b2_rows: Vec<usize> = b_rows.iter().zip(&b_split).filter(|(_, &s)| s == 0).map(|(&i, _)| i).collect();
    let mut uniform = vec![1.0 / (d - 1) as f64; d];
    uniform[0] = 0.0;
    let (random_letters, _) =
        randomize_rows(&b2_rows, &clusters, &vec![0; n], &uniform, seeding::derive(seed, &[6]))?;
    let mut phase = vec![Phase::A; n];
    let mut actions2 = Vec::with_capacity(b_rows.len());
    let mut b2_iter = random_letters.into_iter();
    let feats = population.dataset.features();
    for (&i, &s) in b_rows.iter().zip(&b_split) {
        if s == 1 {
            phase[i] = Phase::B1;
            actions2.push(tree.root.arm_for(feats.row(i)));
        } else {
            phase[i] = Phase::B2;
            actions2.push(b2_iter.next().expect("one letter per B.2 row"));
        }
    }
    let mu2 = population.oracle.mu.select(ndarray::Axis(0), &b_rows);
    let outcomes2 = draw_outcomes(&mu2, &actions2, seeding::derive(seed, &[7]));

    Ok(TwoPhaseResult {
        population,
        phase,
        wave1,
        nuisance,
        scores,
        tree,
        wave2_rows: b_rows,
        wave2_actions: actions2,
        wave2_outcomes: outcomes2,
        warnings,
    })
}

impl TwoPhaseResult {
    /// Wave-1 rows for everyone followed by wave-2 rows for the untreated.
    pub fn eval_sample(&self) -> EvalSample {
        let n = self.wave1.n();
        let total = n + self.wave2_rows.len();
        let mut y = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(total);
        let mut wave = Vec::with_capacity(total);
        let mut clusters = Vec::with_capacity(total);
        let mut rows = Vec::with_capacity(total);
        for i in 0..n {
            let a = self.wave1.actions()[i];
            y.push(self.wave1.outcomes()[i]);
            groups.push(if a == 0 { TreatmentGroup::Nothing } else { TreatmentGroup::Letter(a) });
            wave.push(1);
            clusters.push(self.wave1.clusters()[i]);
            rows.push(i);
        }
        for (k, &i) in self.wave2_rows.iter().enumerate() {
            y.push(self.wave2_outcomes[k]);
            groups.push(match self.phase[i] {
                Phase::B1 => TreatmentGroup::PolicyTree,
                _ => TreatmentGroup::Letter(self.wave2_actions[k]),
            });
            wave.push(2);
            clusters.push(self.wave1.clusters()[i]);
            rows.push(i);
        }
        let controls: Array2<f64> = self.wave1.features().select(ndarray::Axis(0), &rows);
        EvalSample {
            y,
            groups,
            wave,
            clusters,
            controls,
            control_names: self.wave1.feature_names().to_vec(),
        }
    }

    /// Individuals per phase, in the order A, B.1, B.2.
    pub fn phase_sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for p in &self.phase {
            s[*p as usize] += 1;
        }
        s
    }
}
