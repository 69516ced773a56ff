//! Observational or experimental samples `{X_i, A_i, Y_i}` plus cluster ids,
//! CSV ingestion with one-hot encoding, and identification checks.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on propensity row sums and treatment-share vectors.
pub const SHARE_TOLERANCE: f64 = 1e-9;

/// An immutable sample. Arm 0 is the no-treatment option.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    feature_names: Vec<String>,
    actions: Vec<usize>,
    outcomes: Vec<f64>,
    clusters: Vec<usize>,
    num_clusters: usize,
    num_arms: usize,
    propensities: Option<Array2<f64>>,
    wave: Option<Vec<u8>>,
}

impl Dataset {
    /// Build a dataset, checking every invariant except outcome finiteness,
    /// which [`validate`] reports instead of rejecting.
    ///
    /// Cluster labels may be arbitrary; they are relabelled densely in order
    /// of first appearance.
    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        actions: Vec<usize>,
        outcomes: Vec<f64>,
        clusters: Vec<usize>,
        num_arms: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        if num_arms == 0 {
            return Err(Error::InvalidArgument("num_arms must be at least 1".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for (what, len) in [
            ("actions", actions.len()),
            ("outcomes", outcomes.len()),
            ("clusters", clusters.len()),
        ] {
            if len != n {
                return Err(Error::Dimension(format!("{what} has length {len}, expected {n}")));
            }
        }
        if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= num_arms) {
            return Err(Error::InvalidData(format!(
                "row {i}: action {a} outside 0..{num_arms}"
            )));
        }
        if let Some(((i, j), x)) = features.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(Error::InvalidData(format!(
                "row {i}: feature `{}` is not finite ({x})",
                feature_names[j]
            )));
        }
        let (clusters, num_clusters) = densify(&clusters);
        Ok(Self {
            features,
            feature_names,
            actions,
            outcomes,
            clusters,
            num_clusters,
            num_arms,
            propensities: None,
            wave: None,
        })
    }

    /// Attach known propensities `e_a(X_i)` (an n x D matrix).
    pub fn with_propensities(mut self, propensities: Array2<f64>) -> Result<Self> {
        check_propensities(&propensities, self.n(), self.num_arms)?;
        self.propensities = Some(propensities);
        Ok(self)
    }

    pub fn with_wave(mut self, wave: Vec<u8>) -> Result<Self> {
        if wave.len() != self.n() {
            return Err(Error::Dimension(format!(
                "wave has length {}, expected {}",
                wave.len(),
                self.n()
            )));
        }
        if let Some((i, w)) = wave.iter().enumerate().find(|(_, &w)| w != 1 && w != 2) {
            return Err(Error::InvalidData(format!("row {i}: wave {w} not in {{1, 2}}")));
        }
        self.wave = Some(wave);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Dense cluster ids in `0..num_clusters()`.
    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn propensities(&self) -> Option<&Array2<f64>> {
        self.propensities.as_ref()
    }

    pub fn wave(&self) -> Option<&[u8]> {
        self.wave.as_deref()
    }

    /// Row subset (with repetition allowed). Cluster ids are re-densified.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let features = self.features.select(ndarray::Axis(0), rows);
        let pick = |v: &[usize]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let mut ds = Dataset::new(
            features,
            self.feature_names.clone(),
            pick(&self.actions),
            rows.iter().map(|&r| self.outcomes[r]).collect(),
            pick(&self.clusters),
            self.num_arms,
        )?;
        if let Some(p) = &self.propensities {
            ds.propensities = Some(p.select(ndarray::Axis(0), rows));
        }
        if let Some(w) = &self.wave {
            ds.wave = Some(rows.iter().map(|&r| w[r]).collect());
        }
        Ok(ds)
    }

    /// Replace the observed actions and outcomes, keeping everything else.
    pub fn with_observations(&self, actions: Vec<usize>, outcomes: Vec<f64>) -> Result<Self> {
        let mut ds = Dataset::new(
            self.features.clone(),
            self.feature_names.clone(),
            actions,
            outcomes,
            self.clusters.clone(),
            self.num_arms,
        )?;
        ds.propensities = self.propensities.clone();
        ds.wave = self.wave.clone();
        Ok(ds)
    }
}

fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let dense = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

fn check_propensities(p: &Array2<f64>, n: usize, num_arms: usize) -> Result<()> {
    if p.dim() != (n, num_arms) {
        return Err(Error::Dimension(format!(
            "propensity matrix is {:?}, expected ({n}, {num_arms})",
            p.dim()
        )));
    }
    for (i, row) in p.rows().into_iter().enumerate() {
        if let Some(x) = row.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::InvalidData(format!(
                "row {i}: propensity {x} outside (0, 1]"
            )));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > SHARE_TOLERANCE {
            return Err(Error::InvalidData(format!(
                "row {i}: propensities sum to {s}, not 1"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    Real,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureColumn {
    pub name: String,
    #[serde(default)]
    pub kind: FeatureKind,
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub action: String,
    pub outcome: String,
    pub cluster: String,
    pub features: Vec<FeatureColumn>,
    /// Number of arms; inferred as `max(action) + 1` when absent.
    #[serde(default)]
    pub num_arms: Option<usize>,
    #[serde(default)]
    pub wave: Option<String>,
}

/// Load a headered UTF-8 CSV file. Categorical features are one-hot encoded
/// as `col=level` indicator columns with lexicographic level order. Columns
/// `prop_0..prop_{D-1}`, when all present, become known propensities.
///
/// Parse errors carry the 1-based data record number.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if headers.is_empty() || records.is_empty() {
        return Err(Error::EmptyInput("CSV file has no data rows".into()));
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let action_col = col(&schema.action)?;
    let outcome_col = col(&schema.outcome)?;
    let cluster_col = col(&schema.cluster)?;
    let wave_col = schema.wave.as_deref().map(col).transpose()?;
    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<_>>()?;

    fn cell<'r>(
        rec: &'r csv::StringRecord,
        headers: &[String],
        row: usize,
        c: usize,
    ) -> Result<&'r str> {
        let v = rec.get(c).map(str::trim).unwrap_or("");
        if v.is_empty() {
            return Err(Error::Parse {
                row,
                column: headers[c].clone(),
                message: "missing value".into(),
            });
        }
        Ok(v)
    }
    let real = |rec: &csv::StringRecord, row: usize, c: usize| -> Result<f64> {
        let v = cell(rec, &headers, row, c)?;
        v.parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: headers[c].clone(),
            message: format!("cannot parse `{v}` as a number"),
        })
    };

    let n = records.len();
    let mut actions = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut cluster_labels: HashMap<String, usize> = HashMap::new();
    let mut clusters = Vec::with_capacity(n);
    let mut wave = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let a = cell(rec, &headers, row, action_col)?;
        let a: usize = a.parse().map_err(|_| Error::Parse {
            row,
            column: schema.action.clone(),
            message: format!("cannot parse `{a}` as an arm id"),
        })?;
        if let Some(d) = schema.num_arms {
            if a >= d {
                return Err(Error::Parse {
                    row,
                    column: schema.action.clone(),
                    message: format!("arm {a} outside 0..{d}"),
                });
            }
        }
        actions.push(a);
        outcomes.push(real(rec, row, outcome_col)?);
        let c = cell(rec, &headers, row, cluster_col)?.to_string();
        let next = cluster_labels.len();
        clusters.push(*cluster_labels.entry(c).or_insert(next));
        if let Some(wc) = wave_col {
            let w = cell(rec, &headers, row, wc)?;
            match w {
                "1" => wave.push(1u8),
                "2" => wave.push(2u8),
                _ => {
                    return Err(Error::Parse {
                        row,
                        column: headers[wc].clone(),
                        message: format!("wave `{w}` not in {{1, 2}}"),
                    })
                }
            }
        }
    }
    let num_arms = schema
        .num_arms
        .unwrap_or_else(|| actions.iter().copied().max().unwrap_or(0) + 1);

    // Encode features column block by column block.
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (spec, &c) in schema.features.iter().zip(&feature_cols) {
        match spec.kind {
            FeatureKind::Real => {
                let mut v = Vec::with_capacity(n);
                for (r, rec) in records.iter().enumerate() {
                    let x = real(rec, r + 1, c)?;
                    if !x.is_finite() {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: spec.name.clone(),
                            message: format!("feature value `{x}` is not finite"),
                        });
                    }
                    v.push(x);
                }
                names.push(spec.name.clone());
                columns.push(v);
            }
            FeatureKind::Categorical => {
                let mut values = Vec::with_capacity(n);
                for (r, rec) in records.iter().enumerate() {
                    values.push(cell(rec, &headers, r + 1, c)?.to_string());
                }
                let levels: BTreeSet<&str> = values.iter().map(String::as_str).collect();
                for level in levels {
                    names.push(format!("{}={}", spec.name, level));
                    columns.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
                }
            }
        }
    }
    let p = columns.len();
    let features = Array2::from_shape_fn((n, p), |(i, j)| columns[j][i]);
    let mut ds = Dataset::new(features, names, actions, outcomes, clusters, num_arms)?;

    let prop_cols: Vec<Option<usize>> = (0..num_arms)
        .map(|a| headers.iter().position(|h| *h == format!("prop_{a}")))
        .collect();
    let present = prop_cols.iter().filter(|c| c.is_some()).count();
    if present == num_arms {
        let mut props = Array2::zeros((n, num_arms));
        for (r, rec) in records.iter().enumerate() {
            for (a, c) in prop_cols.iter().enumerate() {
                props[(r, a)] = real(rec, r + 1, c.expect("present"))?;
            }
        }
        ds = ds.with_propensities(props)?;
    } else if present > 0 {
        return Err(Error::Schema(format!(
            "found {present} of {num_arms} propensity columns prop_0..prop_{}",
            num_arms - 1
        )));
    }
    if wave_col.is_some() {
        ds = ds.with_wave(wave)?;
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Identification checks

/// Findings for the overlap and boundedness assumptions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub overlap_ok: bool,
    pub min_propensity: f64,
    pub eta: f64,
    pub bounded_ok: bool,
    /// Range over the finite outcomes.
    pub outcome_range: (f64, f64),
    pub issues: Vec<String>,
}

/// Check overlap (`min e_a(X_i) >= eta`) and outcome finiteness. When no
/// propensities are stored, empirical arm frequencies stand in for them.
pub fn validate(ds: &Dataset, eta: f64) -> ValidationReport {
    let mut issues = Vec::new();
    let min_propensity = match ds.propensities() {
        Some(p) => p.iter().copied().fold(f64::INFINITY, f64::min),
        None => {
            let mut counts = vec![0usize; ds.num_arms()];
            for &a in ds.actions() {
                counts[a] += 1;
            }
            for (a, &c) in counts.iter().enumerate() {
                if c == 0 {
                    issues.push(format!("arm {a} is never observed"));
                }
            }
            counts.iter().map(|&c| c as f64 / ds.n() as f64).fold(f64::INFINITY, f64::min)
        }
    };
    let overlap_ok = min_propensity >= eta;
    if !overlap_ok {
        issues.push(format!(
            "overlap violated: minimum propensity {min_propensity} below eta {eta}"
        ));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut bounded_ok = true;
    for (i, &y) in ds.outcomes().iter().enumerate() {
        if y.is_finite() {
            lo = lo.min(y);
            hi = hi.max(y);
        } else {
            bounded_ok = false;
            issues.push(format!("outcome at row {i} is not finite ({y})"));
        }
    }
    ValidationReport {
        overlap_ok,
        min_propensity,
        eta,
        bounded_ok,
        outcome_range: (lo, hi),
        issues,
    }
}

/// Attach constant propensity rows equal to the known treatment `shares`.
pub fn known_propensities(ds: &Dataset, shares: &[f64]) -> Result<Dataset> {
    check_shares(shares, ds.num_arms())?;
    let p = Array2::from_shape_fn((ds.n(), ds.num_arms()), |(_, a)| shares[a]);
    ds.clone().with_propensities(p)
}

/// Shares must have length `d`, be strictly positive and sum to one.
pub(crate) fn check_shares(shares: &[f64], d: usize) -> Result<()> {
    if shares.len() != d {
        return Err(Error::Dimension(format!(
            "{} shares for {d} arms",
            shares.len()
        )));
    }
    if let Some(s) = shares.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("share {s} is not positive")));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::InvalidArgument(format!("shares sum to {total}, not 1")));
    }
    Ok(())
}
