//! Config-driven commands behind the `policylearn` binary.
//!
//! Every command reads one TOML file, writes its artifacts into the output
//! directory, and leaves a `resolved_config.toml` with every setting it used.
//! JSON artifacts go through [`policylearn::format::to_json_string`], so the
//! same config and seed give the same bytes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use policylearn::data::{self, CsvSchema, Dataset, FeatureColumn, ValidationReport};
use policylearn::evaluate::{
    evaluation_table, standard_specs, DesignSpec, EvalSample, EvaluationTable, TreatmentGroup, WMode,
};
use policylearn::format::{fmt_sig, to_json_string};
use policylearn::nuisance::{fit_nuisance, ForestParams, NuisanceConfig, NuisanceFit, PropensitySource};
use policylearn::policies::{export_tree, tree_depth, TreeNode};
use policylearn::scores::{aipw_scores, policy_reward, reward_difference, stochastic_reward, RewardEstimate, ScoreMatrix};
use policylearn::simulate::{
    arm_label, run_two_phase, validation_exercise, DgpConfig, TwoPhaseConfig, TwoPhaseResult, ValidationConfig,
    ARM_NAMES,
};
use policylearn::treesearch::{search, SearchConfig};
use policylearn::ErrorKind;

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] policylearn::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => ErrorKind::Data,
        }
    }

    /// 1 usage, 2 data validation, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    /// `{"error":{"kind":...,"message":...}}` on one line.
    pub fn to_json_line(&self) -> String {
        let kind = match self.kind() {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        };
        serde_json::json!({ "error": { "kind": kind, "message": self.to_string() } }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    pub forest: ForestParams,
    pub cross_fit: CrossFitSection,
    pub propensity: PropensitySection,
    pub search: SearchConfig,
    pub simulate: SimulateSection,
    pub evaluate: EvaluateSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: None,
            forest: ForestParams::default(),
            cross_fit: CrossFitSection::default(),
            propensity: PropensitySection::default(),
            search: SearchConfig::default(),
            simulate: SimulateSection::default(),
            evaluate: EvaluateSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Input CSV and its column roles. `path` is relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub action: String,
    pub outcome: String,
    pub cluster: String,
    pub features: Vec<FeatureColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_arms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_names: Option<Vec<String>>,
    /// Overlap threshold for the identification checks.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    0.01
}

impl DataSection {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            action: self.action.clone(),
            outcome: self.outcome.clone(),
            cluster: self.cluster.clone(),
            features: self.features.clone(),
            num_arms: self.num_arms,
            wave: self.wave.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossFitSection {
    pub k: usize,
}

impl Default for CrossFitSection {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensitySection {
    pub clip: f64,
    /// Known assignment shares; when set the propensity model is skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known: Option<Vec<f64>>,
}

impl Default for PropensitySection {
    fn default() -> Self {
        Self { clip: 0.01, known: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub explore_share: f64,
    pub arm_shares_explore: Vec<f64>,
    pub b1_share: f64,
    pub block_feature: String,
    /// Search used for the first-wave tree.
    pub tree: SearchConfig,
    pub validation: ValidationConfig,
    pub dgp: DgpConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let t = TwoPhaseConfig::default();
        Self {
            tree: t.search_config(),
            explore_share: t.explore_share,
            arm_shares_explore: t.arm_shares_explore,
            b1_share: t.b1_share,
            block_feature: t.block_feature,
            validation: ValidationConfig::default(),
            dgp: t.dgp,
        }
    }
}

/// One regression column. `controls` defaults to every control except the
/// first level of each one-hot family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub w_mode: WMode,
    pub base_group: String,
    pub waves: Vec<u8>,
    #[serde(default = "default_true")]
    pub wave_dummy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Evaluation CSV for the `evaluate` command (the `eval_sample.csv`
    /// layout written by `simulate`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub outcome: String,
    pub group: String,
    pub wave: String,
    pub cluster: String,
    /// Control columns to read; every remaining column when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<String>>,
    /// Regression columns; the three standard ones when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<ColumnSpec>>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            path: None,
            outcome: "y".into(),
            group: "group".into(),
            wave: "wave".into(),
            cluster: "cluster".into(),
            controls: None,
            columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    /// Read a config file; relative input paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = cfg.data.as_mut() {
            d.path = base.join(&d.path);
        }
        if let Some(p) = cfg.evaluate.path.as_mut() {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    pub fn nuisance(&self) -> NuisanceConfig {
        NuisanceConfig { forest: self.forest, folds: self.cross_fit.k, clip: self.propensity.clip }
    }

    pub fn two_phase(&self) -> TwoPhaseConfig {
        let s = &self.simulate;
        TwoPhaseConfig {
            dgp: s.dgp.clone(),
            explore_share: s.explore_share,
            arm_shares_explore: s.arm_shares_explore.clone(),
            b1_share: s.b1_share,
            tree_depth: s.tree.depth,
            split_step: s.tree.split_step,
            min_node_size: s.tree.min_node_size,
            hybrid_search_depth: s.tree.hybrid_search_depth,
            block_feature: s.block_feature.clone(),
            nuisance: self.nuisance(),
        }
    }

    fn data(&self, command: &str) -> Result<&DataSection> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("`{command}` needs a [data] section")))
    }
}

// ---------------------------------------------------------------------------
// Artifacts

/// `tree.json`: the tree with the names needed to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeArtifact {
    pub feature_names: Vec<String>,
    pub arm_names: Vec<String>,
    pub depth: usize,
    pub num_leaves: usize,
    pub root: TreeNode,
}

impl TreeArtifact {
    fn new(root: &TreeNode, feature_names: &[String], arm_names: &[String]) -> Self {
        Self {
            feature_names: feature_names.to_vec(),
            arm_names: arm_names.to_vec(),
            depth: tree_depth(root),
            num_leaves: root.num_leaves(),
            root: root.clone(),
        }
    }

    pub fn to_dot(&self) -> String {
        export_tree(&self.root, &self.feature_names, &self.arm_names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedReward {
    pub policy: String,
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

impl NamedReward {
    fn new(policy: impl Into<String>, r: RewardEstimate) -> Self {
        Self { policy: policy.into(), value: r.value, std_error: r.std_error, n: r.n }
    }
}

/// `reward_report.json` written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardReport {
    pub n: usize,
    pub num_arms: usize,
    pub num_clusters: usize,
    pub seed: u64,
    pub propensity_source: PropensitySource,
    pub notes: Vec<String>,
    pub validation: ValidationReport,
    pub search: SearchConfig,
    pub nodes_evaluated: u64,
    pub total_score: f64,
    pub rewards: Vec<NamedReward>,
    /// Tree minus the best constant arm, paired.
    pub tree_gain: NamedReward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteEntry {
    pub arm: String,
    pub estimate: f64,
    pub std_error: f64,
    /// Mean of the true arm contrast over the simulated population.
    pub truth: f64,
}

/// `two_phase.json` written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    /// Individuals in A, B.1 and B.2.
    pub phase_sizes: [usize; 3],
    pub wave1_ate: Vec<AteEntry>,
    /// Second-wave individuals per arm among B.1 (tree) and B.2 (random).
    pub wave2_arm_counts_tree: Vec<usize>,
    pub wave2_arm_counts_random: Vec<usize>,
    pub nodes_evaluated: u64,
    pub warnings: Vec<String>,
}

struct Out {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let s = to_json_string(value)?;
        self.write(name, &s)
    }

    fn config(&mut self, cfg: &RunConfig) -> Result<()> {
        let s = toml::to_string(cfg).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        self.write("resolved_config.toml", &s)
    }
}

fn arm_names(num_arms: usize, configured: Option<&Vec<String>>) -> Result<Vec<String>> {
    match configured {
        Some(v) if v.len() == num_arms => Ok(v.clone()),
        Some(v) => Err(CliError::Usage(format!("{} arm names for {num_arms} arms", v.len()))),
        None if num_arms == ARM_NAMES.len() => Ok(ARM_NAMES.iter().map(|s| s.to_string()).collect()),
        None => Ok((0..num_arms).map(|a| format!("arm{a}")).collect()),
    }
}

// ---------------------------------------------------------------------------
// Pipeline pieces

/// Load, check identification assumptions, attach known shares.
fn prepare_dataset(cfg: &RunConfig, command: &str) -> Result<(Dataset, ValidationReport, Vec<String>)> {
    let d = cfg.data(command)?;
    let mut ds = data::load_csv(&d.path, &d.schema())?;
    let mut notes = Vec::new();
    if let Some(shares) = &cfg.propensity.known {
        ds = data::known_propensities(&ds, shares)?;
        notes.push("known assignment shares supplied; propensity model skipped".into());
    } else if ds.propensities().is_some() {
        notes.push("propensity columns read from the input; propensity model skipped".into());
    }
    let report = data::validate(&ds, d.eta);
    if !report.bounded_ok {
        return Err(policylearn::Error::InvalidData(report.issues.join("; ")).into());
    }
    if !report.overlap_ok {
        return Err(policylearn::Error::InvalidData(format!(
            "overlap fails: minimum propensity {} is below {}",
            fmt_sig(report.min_propensity),
            fmt_sig(report.eta)
        ))
        .into());
    }
    Ok((ds, report, notes))
}

fn score(ds: &Dataset, cfg: &RunConfig) -> Result<(NuisanceFit, ScoreMatrix)> {
    let fit = fit_nuisance(ds, &cfg.nuisance(), policylearn::seeding::derive(cfg.seed, &[1]))?;
    let scores = aipw_scores(ds, &fit)?;
    Ok((fit, scores))
}

// ---------------------------------------------------------------------------
// Commands

/// Scores and an optimal tree for the `[data]` CSV.
pub fn cmd_fit(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Out::new(out_dir)?;
    out.config(cfg)?;
    let (ds, validation, notes) = prepare_dataset(cfg, "fit")?;
    let names = arm_names(ds.num_arms(), cfg.data("fit")?.arm_names.as_ref())?;
    let (fit, scores) = score(&ds, cfg)?;
    let result = search(ds.features().view(), &scores, &cfg.search)?;

    let d = ds.num_arms();
    let x = ds.features();
    let tree_assign: Vec<usize> = x.rows().into_iter().map(|r| result.root.arm_for(r)).collect();
    let mut rewards = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for a in 0..d {
        let r = policy_reward(&scores, &vec![a; ds.n()])?;
        if best.is_none_or(|(_, v)| r.value > v) {
            best = Some((a, r.value));
        }
        rewards.push(NamedReward::new(names[a].clone(), r));
    }
    let mut uniform = vec![1.0 / (d - 1) as f64; d];
    uniform[0] = 0.0;
    rewards.push(NamedReward::new("Random", stochastic_reward(&scores, &uniform)?));
    rewards.push(NamedReward::new("Tree", policy_reward(&scores, &tree_assign)?));
    let best_arm = best.expect("at least two arms").0;
    let gain = reward_difference(&scores, &tree_assign, &vec![best_arm; ds.n()])?;

    let tree = TreeArtifact::new(&result.root, ds.feature_names(), &names);
    out.json("tree.json", &tree)?;
    out.write("tree.gv", &tree.to_dot())?;
    let mut csv = Vec::new();
    scores.write_csv(&mut csv)?;
    out.write("scores.csv", &String::from_utf8(csv).expect("csv output is utf-8"))?;
    let report = RewardReport {
        n: ds.n(),
        num_arms: d,
        num_clusters: ds.num_clusters(),
        seed: cfg.seed,
        propensity_source: fit.propensity_source,
        notes,
        validation,
        search: cfg.search,
        nodes_evaluated: result.nodes_evaluated,
        total_score: result.total_score,
        rewards,
        tree_gain: NamedReward::new(format!("Tree - {}", names[best_arm]), gain),
    };
    out.json("reward_report.json", &report)?;
    Ok(out.written)
}

/// Resampling comparison of policy rules on the `[data]` CSV, or on
/// simulated first-wave data when there is no `[data]` section.
pub fn cmd_validate_policies(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Out::new(out_dir)?;
    out.config(cfg)?;
    let (ds, fit, scores) = if cfg.data.is_some() {
        let (ds, _, _) = prepare_dataset(cfg, "validate-policies")?;
        let (fit, scores) = score(&ds, cfg)?;
        (ds, fit, scores)
    } else {
        let r = run_two_phase(&cfg.two_phase(), cfg.seed)?;
        (r.wave1, r.nuisance, r.scores)
    };
    let m = validation_exercise(
        &ds,
        &scores,
        &fit.mu_hat,
        &cfg.simulate.validation,
        policylearn::seeding::derive(cfg.seed, &[2]),
    )?;
    out.write("comparison_matrix.csv", &m.to_csv())?;
    out.json("comparison_matrix.json", &m)?;
    out.write("comparison_matrix.txt", &m.render())?;
    Ok(out.written)
}

/// Two-phase experiment followed by the evaluation regressions.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Out::new(out_dir)?;
    out.config(cfg)?;
    let r = run_two_phase(&cfg.two_phase(), cfg.seed)?;
    let d = r.wave1.num_arms();
    let names: Vec<String> = (0..d).map(|a| arm_label(a, d)).collect();

    let tree = TreeArtifact::new(&r.tree.root, r.wave1.feature_names(), &names);
    out.json("tree.json", &tree)?;
    out.write("tree.gv", &tree.to_dot())?;
    out.json("two_phase.json", &simulation_report(&r, cfg.seed)?)?;

    let sample = r.eval_sample();
    out.write("eval_sample.csv", &eval_sample_csv(&sample))?;
    let table = evaluation_table(&sample, &resolve_columns(&cfg.evaluate, &sample))?;
    write_table(&mut out, &table)?;
    Ok(out.written)
}

/// Evaluation regressions on an `eval_sample.csv`-shaped file.
pub fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Out::new(out_dir)?;
    out.config(cfg)?;
    let path = cfg
        .evaluate
        .path
        .as_ref()
        .ok_or_else(|| CliError::Usage("`evaluate` needs evaluate.path".into()))?;
    let sample = read_eval_sample(path, &cfg.evaluate)?;
    let table = evaluation_table(&sample, &resolve_columns(&cfg.evaluate, &sample))?;
    write_table(&mut out, &table)?;
    Ok(out.written)
}

/// Graph description of a `tree.json` written by `fit` or `simulate`.
pub fn cmd_export_tree(tree_json: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(tree_json).map_err(io_err(tree_json))?;
    let tree: TreeArtifact = serde_json::from_str(&text).map_err(policylearn::Error::from)?;
    let mut out = Out::new(out_dir)?;
    out.write("tree.gv", &tree.to_dot())?;
    Ok(out.written)
}

fn write_table(out: &mut Out, table: &EvaluationTable) -> Result<()> {
    out.json("evaluation_table.json", table)?;
    out.write("evaluation_table.txt", &table.render())
}

fn simulation_report(r: &TwoPhaseResult, seed: u64) -> Result<SimulationReport> {
    let d = r.wave1.num_arms();
    let n = r.wave1.n();
    let mu = &r.population.oracle.mu;
    let mut wave1_ate = Vec::new();
    for a in 1..d {
        let e = reward_difference(&r.scores, &vec![a; n], &vec![0; n])?;
        let truth = (0..n).map(|i| mu[[i, a]] - mu[[i, 0]]).sum::<f64>() / n as f64;
        wave1_ate.push(AteEntry { arm: arm_label(a, d), estimate: e.value, std_error: e.std_error, truth });
    }
    let mut tree_counts = vec![0; d];
    let mut random_counts = vec![0; d];
    for (k, &i) in r.wave2_rows.iter().enumerate() {
        let a = r.wave2_actions[k];
        match r.phase[i] {
            policylearn::simulate::Phase::B1 => tree_counts[a] += 1,
            _ => random_counts[a] += 1,
        }
    }
    Ok(SimulationReport {
        seed,
        phase_sizes: r.phase_sizes(),
        wave1_ate,
        wave2_arm_counts_tree: tree_counts,
        wave2_arm_counts_random: random_counts,
        nodes_evaluated: r.tree.nodes_evaluated,
        warnings: r.warnings.clone(),
    })
}

fn resolve_columns(section: &EvaluateSection, sample: &EvalSample) -> Vec<(String, DesignSpec)> {
    let defaults = sample.default_controls();
    match &section.columns {
        None => standard_specs(&defaults),
        Some(cols) => cols
            .iter()
            .map(|c| {
                let spec = DesignSpec {
                    w_mode: c.w_mode,
                    controls: c.controls.clone().unwrap_or_else(|| defaults.clone()),
                    wave_dummy: c.wave_dummy,
                    base_group: c.base_group.clone(),
                    waves: c.waves.clone(),
                };
                (c.name.clone(), spec)
            })
            .collect(),
    }
}

fn group_label(g: TreatmentGroup) -> String {
    g.label(WMode::Letters)
}

/// `y,group,wave,cluster,<controls...>`.
pub fn eval_sample_csv(s: &EvalSample) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["y".to_string(), "group".into(), "wave".into(), "cluster".into()];
    header.extend(s.control_names.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for i in 0..s.y.len() {
        let mut rec = vec![fmt_sig(s.y[i]), group_label(s.groups[i]), s.wave[i].to_string(), s.clusters[i].to_string()];
        rec.extend(s.controls.row(i).iter().map(|&v| fmt_sig(v)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn parse_cell<T: std::str::FromStr>(v: &str, row: usize, column: &str) -> Result<T> {
    v.trim().parse().map_err(|_| {
        policylearn::Error::Parse { row, column: column.into(), message: format!("cannot parse `{v}`") }.into()
    })
}

pub fn read_eval_sample(path: &Path, section: &EvaluateSection) -> Result<EvalSample> {
    let mut rdr = csv::Reader::from_path(path).map_err(policylearn::Error::from)?;
    let headers: Vec<String> =
        rdr.headers().map_err(policylearn::Error::from)?.iter().map(String::from).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::from(policylearn::Error::Schema(format!("missing column `{name}`"))))
    };
    let (iy, ig, iw, ic) = (find(&section.outcome)?, find(&section.group)?, find(&section.wave)?, find(&section.cluster)?);
    let control_names: Vec<String> = match &section.controls {
        Some(c) => c.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![iy, ig, iw, ic].contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let control_idx: Vec<usize> = control_names.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let (mut y, mut groups, mut wave, mut clusters, mut controls) = (vec![], vec![], vec![], vec![], vec![]);
    let mut cluster_ids: HashMap<String, usize> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(policylearn::Error::from)?;
        let row = k + 1;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        y.push(parse_cell::<f64>(cell(iy), row, &section.outcome)?);
        groups.push(TreatmentGroup::parse(cell(ig).trim())?);
        wave.push(parse_cell::<u8>(cell(iw), row, &section.wave)?);
        let next = cluster_ids.len();
        clusters.push(*cluster_ids.entry(cell(ic).trim().to_string()).or_insert(next));
        for (&i, name) in control_idx.iter().zip(&control_names) {
            controls.push(parse_cell::<f64>(cell(i), row, name)?);
        }
    }
    if y.is_empty() {
        return Err(policylearn::Error::EmptyInput(format!("{} has no data rows", path.display())).into());
    }
    let n = y.len();
    let controls = Array2::from_shape_vec((n, control_names.len()), controls)
        .map_err(|e| policylearn::Error::Dimension(e.to_string()))?;
    let sample = EvalSample { y, groups, wave, clusters, controls, control_names };
    sample.check()?;
    Ok(sample)
}
