//! Synthetic population with Bernoulli outcomes whose per-arm success
//! probabilities are additive in arm effects and centred covariate modifiers.

use ndarray::{Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::policies::{self, Policy};
use crate::scores::mean_se;
use crate::seeding;

pub const ARM_NAMES: [&str; 4] = ["Nothing", "Complexity", "Requirements", "Welcome"];

/// Share of clamped rows above which generation emits a warning.
const CLAMP_WARN_SHARE: f64 = 0.01;
const CALIBRATION_SEED: u64 = 0x5EED_CA1B;
const CALIBRATION_ROWS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionShare {
    pub name: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub age_min: u32,
    pub age_max: u32,
    pub female_share: f64,
    pub min_years_in_country: u32,
    pub min_years_in_city: u32,
    pub regions: Vec<RegionShare>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        let regions = [
            ("Americas", 0.06),
            ("Asia", 0.10),
            ("CEE", 0.08),
            ("Germany/Austria", 0.30),
            ("Italy", 0.12),
            ("MENA", 0.06),
            ("SEE", 0.12),
            ("Spain/Portugal", 0.08),
            ("Stateless", 0.02),
            ("SSA", 0.06),
        ]
        .into_iter()
        .map(|(name, share)| RegionShare { name: name.into(), share })
        .collect();
        Self {
            age_min: 18,
            age_max: 75,
            female_share: 0.5,
            min_years_in_country: 10,
            min_years_in_city: 2,
            regions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSize {
    pub size: usize,
    pub prob: f64,
}

/// `shift` is added to arm `arm` (every arm when absent) for rows meeting
/// the condition, then centred so the population mean is unchanged. Exactly
/// one of the condition fields must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modifier {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<usize>,
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_least: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_most: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<f64>,
    pub shift: f64,
}

impl Modifier {
    pub fn new(arm: Option<usize>, feature: &str, shift: f64) -> Self {
        Self {
            arm,
            feature: feature.into(),
            at_least: None,
            at_most: None,
            between: None,
            equals: None,
            shift,
        }
    }

    pub fn at_least(mut self, v: f64) -> Self {
        self.at_least = Some(v);
        self
    }

    pub fn at_most(mut self, v: f64) -> Self {
        self.at_most = Some(v);
        self
    }

    pub fn between(mut self, lo: f64, hi: f64) -> Self {
        self.between = Some([lo, hi]);
        self
    }

    pub fn equals(mut self, v: f64) -> Self {
        self.equals = Some(v);
        self
    }

    fn condition(&self) -> Result<Condition> {
        let set = [
            self.at_least.map(Condition::AtLeast),
            self.at_most.map(Condition::AtMost),
            self.between.map(|[a, b]| Condition::Between(a, b)),
            self.equals.map(Condition::Equals),
        ];
        let mut it = set.into_iter().flatten();
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(Error::InvalidArgument(format!(
                "modifier on `{}` needs exactly one of at_least, at_most, between, equals",
                self.feature
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Condition {
    AtLeast(f64),
    AtMost(f64),
    Between(f64, f64),
    Equals(f64),
}

impl Condition {
    fn holds(self, v: f64) -> bool {
        match self {
            Condition::AtLeast(t) => v >= t,
            Condition::AtMost(t) => v <= t,
            Condition::Between(lo, hi) => v >= lo && v <= hi,
            Condition::Equals(t) => v == t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub n: usize,
    pub num_arms: usize,
    pub baseline_rate: f64,
    pub arm_effects: Vec<f64>,
    pub heterogeneity: Vec<Modifier>,
    pub features: FeatureSpec,
    pub cluster_sizes: Vec<ClusterSize>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let region = |r: &str| format!("region={r}");
        let heterogeneity = vec![
            Modifier::new(Some(3), "years_in_country", 0.30).at_most(12.0),
            Modifier::new(Some(1), "years_in_country", 0.25).between(13.0, 16.0),
            Modifier::new(Some(2), "years_in_country", 0.30).at_least(40.0),
            Modifier::new(Some(3), &region("Americas"), 0.08).equals(1.0),
            Modifier::new(Some(3), &region("Asia"), 0.08).equals(1.0),
            Modifier::new(Some(3), &region("SSA"), 0.08).equals(1.0),
            Modifier::new(Some(2), &region("CEE"), 0.08).equals(1.0),
            Modifier::new(Some(2), &region("SEE"), 0.08).equals(1.0),
            Modifier::new(None, "age", 0.02).at_least(46.0),
        ];
        Self {
            n: 5145,
            num_arms: 4,
            baseline_rate: 0.06,
            arm_effects: vec![0.0108, 0.0433, 0.0351],
            heterogeneity,
            features: FeatureSpec::default(),
            cluster_sizes: [(1, 0.55), (2, 0.3), (3, 0.1), (4, 0.05)]
                .into_iter()
                .map(|(size, prob)| ClusterSize { size, prob })
                .collect(),
        }
    }
}

impl DgpConfig {
    /// No heterogeneity: every row has the same arm means.
    pub fn homogeneous(mut self) -> Self {
        self.heterogeneity.clear();
        self
    }
}

#[derive(Debug, Clone)]
struct ResolvedModifier {
    arm: Option<usize>,
    feature: usize,
    condition: Condition,
    shift: f64,
    /// Population probability of the condition, subtracted for centring.
    prob: f64,
}

/// A validated configuration ready to sample from.
#[derive(Debug, Clone)]
pub struct Dgp {
    cfg: DgpConfig,
    feature_names: Vec<String>,
    modifiers: Vec<ResolvedModifier>,
    region_weights: WeightedIndex<f64>,
    size_weights: WeightedIndex<f64>,
}

/// True per-row arm means and the optimal assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub mu: Array2<f64>,
    pub optimal: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Population {
    /// Actions are all arm 0 and outcomes are drawn under arm 0.
    pub dataset: Dataset,
    pub oracle: Oracle,
    /// Region index of every row.
    pub regions: Vec<usize>,
    pub clamped_rows: usize,
    pub warnings: Vec<String>,
}

fn check_distribution(probs: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let v: Vec<f64> = probs.collect();
    if v.is_empty() || v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be nonnegative")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("{what} sum to {s}, not 1")));
    }
    Ok(())
}

impl Dgp {
    pub fn new(cfg: DgpConfig) -> Result<Self> {
        if cfg.num_arms < 1 || cfg.arm_effects.len() + 1 != cfg.num_arms {
            return Err(Error::InvalidArgument(format!(
                "{} arm effects for {} arms",
                cfg.arm_effects.len(),
                cfg.num_arms
            )));
        }
        if !(0.0..=1.0).contains(&cfg.baseline_rate) {
            return Err(Error::InvalidArgument("baseline_rate must lie in [0, 1]".into()));
        }
        let f = &cfg.features;
        if f.age_min > f.age_max || f.age_max < f.min_years_in_country {
            return Err(Error::InvalidArgument("inconsistent age range".into()));
        }
        if f.min_years_in_city > f.min_years_in_country {
            return Err(Error::InvalidArgument(
                "min_years_in_city exceeds min_years_in_country".into(),
            ));
        }
        if !(0.0..=1.0).contains(&f.female_share) {
            return Err(Error::InvalidArgument("female_share must lie in [0, 1]".into()));
        }
        check_distribution(f.regions.iter().map(|r| r.share), "region shares")?;
        check_distribution(cfg.cluster_sizes.iter().map(|c| c.prob), "cluster size probabilities")?;
        if cfg.cluster_sizes.iter().any(|c| c.size == 0) {
            return Err(Error::InvalidArgument("cluster sizes must be positive".into()));
        }
        let mut feature_names: Vec<String> =
            ["age", "female", "years_in_country", "years_in_city"].map(String::from).to_vec();
        feature_names.extend(f.regions.iter().map(|r| format!("region={}", r.name)));

        let region_weights = WeightedIndex::new(f.regions.iter().map(|r| r.share))
            .map_err(|e| Error::InvalidArgument(format!("region shares: {e}")))?;
        let size_weights = WeightedIndex::new(cfg.cluster_sizes.iter().map(|c| c.prob))
            .map_err(|e| Error::InvalidArgument(format!("cluster sizes: {e}")))?;

        let mut dgp = Self {
            cfg,
            feature_names,
            modifiers: Vec::new(),
            region_weights,
            size_weights,
        };
        let mut resolved = Vec::new();
        for m in &dgp.cfg.heterogeneity {
            let feature = dgp.feature_names.iter().position(|n| *n == m.feature).ok_or_else(|| {
                Error::InvalidArgument(format!("modifier references unknown feature `{}`", m.feature))
            })?;
            if let Some(a) = m.arm {
                if a >= dgp.cfg.num_arms {
                    return Err(Error::InvalidArgument(format!("modifier arm {a} out of range")));
                }
            }
            resolved.push(ResolvedModifier {
                arm: m.arm,
                feature,
                condition: m.condition()?,
                shift: m.shift,
                prob: f64::NAN,
            });
        }
        // Region dummies and gender have known probabilities; everything
        // else is calibrated on a fixed large sample.
        let needs_calibration = resolved.iter().any(|m| m.feature < 4 && m.feature != 1);
        let calibration = if needs_calibration {
            let mut rng = seeding::rng(CALIBRATION_SEED);
            Some(dgp.sample_features(CALIBRATION_ROWS, &mut rng).0)
        } else {
            None
        };
        for m in resolved.iter_mut() {
            m.prob = if m.feature >= 4 {
                let share = dgp.cfg.features.regions[m.feature - 4].share;
                let p_one = share;
                let hit = |v: f64| m.condition.holds(v);
                share_of(hit(1.0), p_one) + share_of(hit(0.0), 1.0 - p_one)
            } else if m.feature == 1 {
                let p_one = dgp.cfg.features.female_share;
                let hit = |v: f64| m.condition.holds(v);
                share_of(hit(1.0), p_one) + share_of(hit(0.0), 1.0 - p_one)
            } else {
                let x = calibration.as_ref().expect("calibration sample");
                let count = x.column(m.feature).iter().filter(|&&v| m.condition.holds(v)).count();
                count as f64 / x.nrows() as f64
            };
        }
        dgp.modifiers = resolved;
        Ok(dgp)
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    pub fn num_arms(&self) -> usize {
        self.cfg.num_arms
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Population mean of every arm's success probability, ignoring clamping.
    pub fn arm_means(&self) -> Vec<f64> {
        (0..self.cfg.num_arms).map(|a| self.base(a)).collect()
    }

    fn base(&self, arm: usize) -> f64 {
        self.cfg.baseline_rate + if arm == 0 { 0.0 } else { self.cfg.arm_effects[arm - 1] }
    }

    /// Unclamped arm means for one row.
    fn raw_mu(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut mu: Vec<f64> = (0..self.cfg.num_arms).map(|a| self.base(a)).collect();
        for m in &self.modifiers {
            let ind = if m.condition.holds(x[m.feature]) { 1.0 } else { 0.0 };
            let delta = m.shift * (ind - m.prob);
            match m.arm {
                Some(a) => mu[a] += delta,
                None => mu.iter_mut().for_each(|v| *v += delta),
            }
        }
        mu
    }

    /// Arm means for one row, clamped to [0, 1].
    pub fn mu(&self, x: ArrayView1<f64>) -> Vec<f64> {
        self.raw_mu(x).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    /// Features, cluster ids and region indices for `n` rows.
    fn sample_features(&self, n: usize, rng: &mut seeding::Rng) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
        let f = &self.cfg.features;
        let p = self.feature_names.len();
        let mut x = Array2::zeros((n, p));
        let mut clusters = Vec::with_capacity(n);
        let mut regions = Vec::with_capacity(n);
        let mut cluster = 0;
        let mut i = 0;
        while i < n {
            let size = self.cfg.cluster_sizes[self.size_weights.sample(rng)].size.min(n - i);
            let region = self.region_weights.sample(rng);
            for _ in 0..size {
                let age = rng.random_range(f.age_min.max(f.min_years_in_country)..=f.age_max);
                let yic = rng.random_range(f.min_years_in_country..=age);
                let yicity = rng.random_range(f.min_years_in_city..=yic);
                let female = rng.random_bool(f.female_share);
                x[[i, 0]] = age as f64;
                x[[i, 1]] = if female { 1.0 } else { 0.0 };
                x[[i, 2]] = yic as f64;
                x[[i, 3]] = yicity as f64;
                x[[i, 4 + region]] = 1.0;
                clusters.push(cluster);
                regions.push(region);
                i += 1;
            }
            cluster += 1;
        }
        (x, clusters, regions)
    }

    /// Fresh features only (for Monte Carlo evaluation of fixed policies).
    pub fn sample_x(&self, n: usize, seed: u64) -> Array2<f64> {
        self.sample_features(n, &mut seeding::rng(seed)).0
    }

    /// True arm means and optimal arms for the rows of `x`.
    pub fn oracle(&self, x: &Array2<f64>) -> (Oracle, usize) {
        let n = x.nrows();
        let d = self.cfg.num_arms;
        let mut mu = Array2::zeros((n, d));
        let mut clamped = 0;
        for (i, r) in x.rows().into_iter().enumerate() {
            let raw = self.raw_mu(r);
            if raw.iter().any(|v| !(0.0..=1.0).contains(v)) {
                clamped += 1;
            }
            for a in 0..d {
                mu[[i, a]] = raw[a].clamp(0.0, 1.0);
            }
        }
        let optimal = mu.rows().into_iter().map(policies::argmax).collect();
        (Oracle { mu, optimal }, clamped)
    }

    /// Draw `n` rows: features, clusters, true means, and outcomes under arm 0.
    pub fn population(&self, n: usize, seed: u64) -> Result<Population> {
        if n == 0 {
            return Err(Error::EmptyInput("population size is zero".into()));
        }
        let mut rng = seeding::rng_at(seed, &[0]);
        let (x, clusters, regions) = self.sample_features(n, &mut rng);
        let (oracle, clamped) = self.oracle(&x);
        let mut warnings = Vec::new();
        if clamped as f64 > CLAMP_WARN_SHARE * n as f64 {
            warnings.push(format!(
                "success probability clamped to [0, 1] on {clamped} of {n} rows"
            ));
        }
        let actions = vec![0; n];
        let outcomes = draw_outcomes(&oracle.mu, &actions, seeding::derive(seed, &[1]));
        let dataset = Dataset::new(
            x,
            self.feature_names.clone(),
            actions,
            outcomes,
            clusters,
            self.cfg.num_arms,
        )?;
        Ok(Population { dataset, oracle, regions, clamped_rows: clamped, warnings })
    }
}

fn share_of(hit: bool, p: f64) -> f64 {
    if hit { p } else { 0.0 }
}

/// Bernoulli outcomes `y_i ~ B(mu[i, actions_i])`.
pub fn draw_outcomes(mu: &Array2<f64>, actions: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = seeding::rng(seed);
    actions
        .iter()
        .enumerate()
        .map(|(i, &a)| if rng.random::<f64>() < mu[[i, a]] { 1.0 } else { 0.0 })
        .collect()
}

pub fn gen_population(cfg: DgpConfig, seed: u64) -> Result<Population> {
    let n = cfg.n;
    Dgp::new(cfg)?.population(n, seed)
}

impl Population {
    /// The same individuals observed under `actions`, with fresh outcomes.
    pub fn realize(&self, actions: Vec<usize>, seed: u64) -> Result<Dataset> {
        if actions.len() != self.dataset.n() {
            return Err(Error::Dimension(format!(
                "{} actions for {} rows",
                actions.len(),
                self.dataset.n()
            )));
        }
        let outcomes = draw_outcomes(&self.oracle.mu, &actions, seed);
        self.dataset.with_observations(actions, outcomes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

/// Monte Carlo regret of `policy` against the optimal policy on `n_mc` fresh
/// draws. Row-bound plug-in policies cannot be applied to fresh draws.
pub fn oracle_regret(policy: &Policy, dgp: &Dgp, n_mc: usize, seed: u64) -> Result<RegretEstimate> {
    if matches!(policy, Policy::PlugIn { .. }) {
        return Err(Error::InvalidArgument(
            "a plug-in policy is bound to its own rows and has no regret on fresh draws".into(),
        ));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    policy.check_arms(dgp.num_arms())?;
    let x = dgp.sample_x(n_mc, seeding::derive(seed, &[0]));
    let (oracle, _) = dgp.oracle(&x);
    let gaps: Vec<f64> = match policy {
        Policy::Stochastic { weights } => (0..n_mc)
            .map(|i| {
                let q: f64 = (0..weights.len()).map(|a| weights[a] * oracle.mu[[i, a]]).sum();
                oracle.mu[[i, oracle.optimal[i]]] - q
            })
            .collect(),
        _ => {
            let assigned = policies::assign(policy, x.view(), seeding::derive(seed, &[1]))?;
            (0..n_mc)
                .map(|i| oracle.mu[[i, oracle.optimal[i]]] - oracle.mu[[i, assigned[i]]])
                .collect()
        }
    };
    let (value, std_error) = mean_se(&gaps);
    Ok(RegretEstimate { value, std_error, n_mc })
}
