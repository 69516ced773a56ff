//! Evaluation regression of outcomes on treatment-group dummies, additive
//! controls and a wave dummy, with cluster-robust standard errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";
pub const WAVE_DUMMY: &str = "wave2";

/// Treatment group of one observation in one wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TreatmentGroup {
    Nothing,
    /// A randomly assigned letter (arm id >= 1).
    Letter(usize),
    PolicyTree,
}

impl TreatmentGroup {
    pub fn label(&self, mode: WMode) -> String {
        match (self, mode) {
            (TreatmentGroup::Nothing, _) => "Nothing".into(),
            (TreatmentGroup::PolicyTree, _) => "PolicyTree".into(),
            (TreatmentGroup::Letter(a), WMode::Letters) => format!("Letter{a}"),
            (TreatmentGroup::Letter(_), WMode::Pooled) => "Random".into(),
        }
    }

    /// Inverse of [`TreatmentGroup::label`] in letters mode.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "Nothing" => Ok(TreatmentGroup::Nothing),
            "PolicyTree" => Ok(TreatmentGroup::PolicyTree),
            _ => s
                .strip_prefix("Letter")
                .and_then(|a| a.parse::<usize>().ok())
                .filter(|&a| a >= 1)
                .map(TreatmentGroup::Letter)
                .ok_or_else(|| Error::InvalidData(format!("unknown treatment group `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WMode {
    /// One dummy per letter plus Nothing and PolicyTree.
    Letters,
    /// Randomly assigned letters pooled into Random.
    Pooled,
}

/// Rows of the evaluation sample: one per individual and wave.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub y: Vec<f64>,
    pub groups: Vec<TreatmentGroup>,
    pub wave: Vec<u8>,
    pub clusters: Vec<usize>,
    pub controls: Array2<f64>,
    pub control_names: Vec<String>,
}

impl EvalSample {
    pub fn check(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::EmptyInput("evaluation sample has no rows".into()));
        }
        for (what, len) in [
            ("groups", self.groups.len()),
            ("wave", self.wave.len()),
            ("clusters", self.clusters.len()),
            ("controls", self.controls.nrows()),
        ] {
            if len != n {
                return Err(Error::Dimension(format!("{what} has {len} rows, outcomes have {n}")));
            }
        }
        if self.control_names.len() != self.controls.ncols() {
            return Err(Error::Dimension("control names do not match control columns".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("outcomes must be finite".into()));
        }
        Ok(())
    }

    /// Every control except the first level of each one-hot family
    /// (`family=level` columns).
    pub fn default_controls(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.control_names
            .iter()
            .filter(|name| match name.split_once('=') {
                Some((family, _)) => !seen.insert(family.to_string()),
                None => true,
            })
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub w_mode: WMode,
    pub controls: Vec<String>,
    pub wave_dummy: bool,
    pub base_group: String,
    /// Waves kept in the regression.
    pub waves: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: Vec<f64>,
    pub x: Array2<f64>,
    pub columns: Vec<String>,
    pub clusters: Vec<usize>,
    pub w_columns: Vec<String>,
    pub base_group: String,
}

fn w_order(mode: WMode, num_letters: usize) -> Vec<String> {
    let mut v = Vec::new();
    match mode {
        WMode::Letters => v.extend((1..=num_letters).map(|a| format!("Letter{a}"))),
        WMode::Pooled => v.push("Random".to_string()),
    }
    v.push("Nothing".into());
    v.push("PolicyTree".into());
    v
}

/// Intercept, one dummy per non-base group that has rows, the requested
/// controls, and a wave dummy when asked for and both waves are present.
pub fn build_design(sample: &EvalSample, spec: &DesignSpec) -> Result<Design> {
    sample.check()?;
    let rows: Vec<usize> = (0..sample.y.len()).filter(|&i| spec.waves.contains(&sample.wave[i])).collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("no rows in waves {:?}", spec.waves)));
    }
    let num_letters = sample
        .groups
        .iter()
        .filter_map(|g| if let TreatmentGroup::Letter(a) = g { Some(*a) } else { None })
        .max()
        .unwrap_or(0);
    let order = w_order(spec.w_mode, num_letters);
    if !order.contains(&spec.base_group) {
        return Err(Error::InvalidArgument(format!(
            "base group `{}` is not one of {order:?}",
            spec.base_group
        )));
    }
    let labels: Vec<String> = rows.iter().map(|&i| sample.groups[i].label(spec.w_mode)).collect();
    let present: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    if !present.contains(spec.base_group.as_str()) {
        return Err(Error::InvalidData(format!("base group `{}` has no rows", spec.base_group)));
    }
    let w_columns: Vec<String> = order
        .iter()
        .filter(|g| **g != spec.base_group && present.contains(g.as_str()))
        .cloned()
        .collect();
    if w_columns.is_empty() {
        return Err(Error::InvalidData("every row is in the base group; nothing to contrast".into()));
    }
    let control_idx: Vec<usize> = spec
        .controls
        .iter()
        .map(|c| {
            sample
                .control_names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown control `{c}`")))
        })
        .collect::<Result<_>>()?;
    let waves_present: BTreeSet<u8> = rows.iter().map(|&i| sample.wave[i]).collect();
    let add_wave = spec.wave_dummy && waves_present.len() > 1;

    let mut columns = vec![INTERCEPT.to_string()];
    columns.extend(w_columns.iter().cloned());
    columns.extend(spec.controls.iter().cloned());
    if add_wave {
        columns.push(WAVE_DUMMY.into());
    }
    let n = rows.len();
    let k = columns.len();
    let mut x = Array2::zeros((n, k));
    for (r, &i) in rows.iter().enumerate() {
        x[[r, 0]] = 1.0;
        if let Some(pos) = w_columns.iter().position(|w| *w == labels[r]) {
            x[[r, 1 + pos]] = 1.0;
        }
        for (c, &j) in control_idx.iter().enumerate() {
            x[[r, 1 + w_columns.len() + c]] = sample.controls[[i, j]];
        }
        if add_wave {
            let first = *waves_present.iter().next().expect("nonempty");
            x[[r, k - 1]] = if sample.wave[i] != first { 1.0 } else { 0.0 };
        }
    }
    for c in 1 + w_columns.len()..k {
        let col = x.column(c);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::InvalidData(format!(
                "column `{}` is constant and collides with the intercept",
                columns[c]
            )));
        }
    }
    for a in 1..k {
        for b in a + 1..k {
            if x.column(a) == x.column(b) {
                return Err(Error::InvalidData(format!(
                    "columns `{}` and `{}` are identical",
                    columns[a], columns[b]
                )));
            }
        }
    }
    Ok(Design {
        y: rows.iter().map(|&i| sample.y[i]).collect(),
        x,
        columns,
        clusters: rows.iter().map(|&i| sample.clusters[i]).collect(),
        w_columns,
        base_group: spec.base_group.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DfAdjust {
    CR0,
    CR1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: Array2<f64>,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub n_clusters: usize,
    pub df_adjust: DfAdjust,
    /// Omitted group whose coefficient is zero by construction.
    pub base_label: Option<String>,
}

impl OlsFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.columns.len()).map(|j| self.vcov[[j, j]].max(0.0).sqrt()).collect()
    }

    fn index(&self, label: &str) -> Result<Option<usize>> {
        if let Some(j) = self.columns.iter().position(|c| c == label) {
            return Ok(Some(j));
        }
        if self.base_label.as_deref() == Some(label) {
            return Ok(None);
        }
        Err(Error::InvalidArgument(format!("`{label}` is not a coefficient of the fit")))
    }

    pub fn coefficient(&self, label: &str) -> Result<(f64, f64)> {
        match self.index(label)? {
            Some(j) => Ok((self.coefficients[j], self.vcov[[j, j]].max(0.0).sqrt())),
            None => Ok((0.0, 0.0)),
        }
    }
}

struct LeastSquares {
    beta: DVector<f64>,
    residuals: DVector<f64>,
    bread: DMatrix<f64>,
    x: DMatrix<f64>,
}

fn least_squares(y: &[f64], x: &Array2<f64>, columns: &[String]) -> Result<LeastSquares> {
    let (n, k) = x.dim();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} design rows", y.len())));
    }
    if columns.len() != k {
        return Err(Error::Dimension("column labels do not match the design".into()));
    }
    if n <= k {
        return Err(Error::Numerical(format!("{n} rows cannot identify {k} coefficients")));
    }
    let xm = DMatrix::from_fn(n, k, |i, j| x[[i, j]]);
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let r = qr.r();
    let dependent: Vec<&str> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * xm.column(j).norm().max(f64::MIN_POSITIVE))
        .map(|j| columns[j].as_str())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::Numerical(format!(
            "design is rank deficient; linearly dependent columns: {}",
            dependent.join(", ")
        )));
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
    let bread = &r_inv * r_inv.transpose();
    let residuals = &yv - &xm * &beta;
    Ok(LeastSquares { beta, residuals, bread, x: xm })
}

fn sandwich(ls: &LeastSquares, meat: &DMatrix<f64>, factor: f64) -> Array2<f64> {
    let v = &ls.bread * meat * &ls.bread;
    let k = v.nrows();
    Array2::from_shape_fn((k, k), |(i, j)| factor * 0.5 * (v[(i, j)] + v[(j, i)]))
}

fn dense_clusters(clusters: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let dense = clusters
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

/// Least squares with cluster-robust covariance
/// `(X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1`, scaled by
/// `G (n - 1) / ((G - 1) (n - k))` under CR1.
pub fn ols_cluster(
    y: &[f64],
    x: &Array2<f64>,
    clusters: &[usize],
    columns: &[String],
    df_adjust: DfAdjust,
) -> Result<OlsFit> {
    let (n, k) = x.dim();
    if clusters.len() != n {
        return Err(Error::Dimension(format!("{} cluster ids for {n} rows", clusters.len())));
    }
    let ls = least_squares(y, x, columns)?;
    let (dense, g) = dense_clusters(clusters);
    if g < 2 {
        return Err(Error::Numerical("cluster-robust covariance needs at least two clusters".into()));
    }
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for i in 0..n {
        let e = ls.residuals[i];
        for j in 0..k {
            scores[(dense[i], j)] += ls.x[(i, j)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let factor = match df_adjust {
        DfAdjust::CR0 => 1.0,
        DfAdjust::CR1 => cr1_factor(n, k, g),
    };
    Ok(OlsFit {
        columns: columns.to_vec(),
        coefficients: ls.beta.iter().copied().collect(),
        vcov: sandwich(&ls, &meat, factor),
        residuals: ls.residuals.iter().copied().collect(),
        n,
        n_clusters: g,
        df_adjust,
        base_label: None,
    })
}

/// `G (n - 1) / ((G - 1) (n - k))`, from exact integer products so that
/// `G = n` gives the correctly rounded `n / (n - k)`.
pub fn cr1_factor(n: usize, k: usize, g: usize) -> f64 {
    let num = g as u128 * (n as u128 - 1);
    let den = (g as u128 - 1) * (n as u128 - k as u128);
    num as f64 / den as f64
}

/// Heteroskedasticity-robust covariance with the `n / (n - k)` correction.
pub fn ols_hc1(y: &[f64], x: &Array2<f64>, columns: &[String]) -> Result<OlsFit> {
    let (n, k) = x.dim();
    let ls = least_squares(y, x, columns)?;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let s = ls.x.row(i).transpose() * ls.residuals[i];
        meat += &s * s.transpose();
    }
    let factor = n as f64 / (n - k) as f64;
    Ok(OlsFit {
        columns: columns.to_vec(),
        coefficients: ls.beta.iter().copied().collect(),
        vcov: sandwich(&ls, &meat, factor),
        residuals: ls.residuals.iter().copied().collect(),
        n,
        n_clusters: n,
        df_adjust: DfAdjust::CR1,
        base_label: None,
    })
}

/// Fit the design with CR1 errors, remembering the omitted base group.
pub fn fit_design(design: &Design) -> Result<OlsFit> {
    let mut fit = ols_cluster(&design.y, &design.x, &design.clusters, &design.columns, DfAdjust::CR1)?;
    fit.base_label = Some(design.base_group.clone());
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    pub estimate: f64,
    pub std_error: f64,
}

impl Contrast {
    pub fn p_value(&self) -> f64 {
        p_value(self.estimate, self.std_error)
    }
}

/// `beta_a - beta_b` with its standard error. The omitted base group may be
/// named and counts as a zero coefficient.
pub fn contrast(fit: &OlsFit, label_a: &str, label_b: &str) -> Result<Contrast> {
    let ia = fit.index(label_a)?;
    let ib = fit.index(label_b)?;
    let b = |i: Option<usize>| i.map_or(0.0, |j| fit.coefficients[j]);
    let v = |i: Option<usize>, j: Option<usize>| match (i, j) {
        (Some(i), Some(j)) => fit.vcov[[i, j]],
        _ => 0.0,
    };
    let var = v(ia, ia) + v(ib, ib) - 2.0 * v(ia, ib);
    Ok(Contrast { estimate: b(ia) - b(ib), std_error: var.max(0.0).sqrt() })
}

/// Two-sided normal p-value; 1 when the standard error is zero.
pub fn p_value(estimate: f64, std_error: f64) -> f64 {
    if !(std_error > 0.0) {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / std_error).abs();
    2.0 * (1.0 - Normal::standard().cdf(z))
}

/// Stars for p below each threshold, most lenient first.
pub fn stars(p: f64, thresholds: &[f64; 3]) -> &'static str {
    if p < thresholds[2] {
        "***"
    } else if p < thresholds[1] {
        "**"
    } else if p < thresholds[0] {
        "*"
    } else {
        ""
    }
}

pub const REGRESSION_STARS: [f64; 3] = [0.05, 0.01, 0.001];
pub const COMPARISON_STARS: [f64; 3] = [0.1, 0.05, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub stars: String,
}

impl Entry {
    fn new(label: String, estimate: f64, std_error: f64) -> Self {
        let p = p_value(estimate, std_error);
        Self { label, estimate, std_error, p_value: p, stars: stars(p, &REGRESSION_STARS).into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableColumn {
    pub name: String,
    pub spec: DesignSpec,
    /// Group coefficients against the base group.
    pub panel_a: Vec<Entry>,
    /// PolicyTree against every other group in the column.
    pub panel_b: Vec<Entry>,
    pub n: usize,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationTable {
    pub columns: Vec<TableColumn>,
}

/// The three standard columns: pooled groups on wave 2 against Random,
/// pooled groups on both waves against Nothing, separate letters on both
/// waves against Nothing.
pub fn standard_specs(controls: &[String]) -> Vec<(String, DesignSpec)> {
    let spec = |w_mode, base: &str, waves: Vec<u8>| DesignSpec {
        w_mode,
        controls: controls.to_vec(),
        wave_dummy: true,
        base_group: base.into(),
        waves,
    };
    vec![
        ("(1)".into(), spec(WMode::Pooled, "Random", vec![2])),
        ("(2)".into(), spec(WMode::Pooled, "Nothing", vec![1, 2])),
        ("(3)".into(), spec(WMode::Letters, "Nothing", vec![1, 2])),
    ]
}

pub fn evaluate_column(sample: &EvalSample, name: &str, spec: &DesignSpec) -> Result<TableColumn> {
    let design = build_design(sample, spec)?;
    let fit = fit_design(&design)?;
    let mut panel_a = Vec::new();
    for w in &design.w_columns {
        let (b, se) = fit.coefficient(w)?;
        panel_a.push(Entry::new(w.clone(), b, se));
    }
    let mut panel_b = Vec::new();
    let mut groups: Vec<String> = design.w_columns.clone();
    groups.push(design.base_group.clone());
    if groups.iter().any(|g| g == "PolicyTree") {
        for other in w_order(spec.w_mode, 16).iter().filter(|g| groups.contains(g) && *g != "PolicyTree") {
            let c = contrast(&fit, "PolicyTree", other)?;
            panel_b.push(Entry::new(format!("PolicyTree - {other}"), c.estimate, c.std_error));
        }
    }
    Ok(TableColumn {
        name: name.into(),
        spec: spec.clone(),
        panel_a,
        panel_b,
        n: fit.n,
        n_clusters: fit.n_clusters,
    })
}

pub fn evaluation_table(sample: &EvalSample, specs: &[(String, DesignSpec)]) -> Result<EvaluationTable> {
    let columns = specs
        .iter()
        .map(|(name, spec)| evaluate_column(sample, name, spec))
        .collect::<Result<_>>()?;
    Ok(EvaluationTable { columns })
}

impl EvaluationTable {
    /// Aligned text rendering: coefficients with stars, standard errors in
    /// parentheses underneath.
    pub fn render(&self) -> String {
        let mut labels_a: Vec<String> = Vec::new();
        let mut labels_b: Vec<String> = Vec::new();
        for c in &self.columns {
            for e in &c.panel_a {
                if !labels_a.contains(&e.label) {
                    labels_a.push(e.label.clone());
                }
            }
            for e in &c.panel_b {
                if !labels_b.contains(&e.label) {
                    labels_b.push(e.label.clone());
                }
            }
        }
        let width = 14;
        let label_w = labels_a.iter().chain(&labels_b).map(String::len).max().unwrap_or(0).max(12) + 2;
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for c in &self.columns {
            let _ = write!(out, "{:>width$}", c.name);
        }
        out.push('\n');
        let block = |out: &mut String, title: &str, labels: &[String], pick: &dyn Fn(&TableColumn) -> &Vec<Entry>| {
            let _ = writeln!(out, "{title}");
            for l in labels {
                let mut est = format!("{:label_w$}", l);
                let mut se = format!("{:label_w$}", "");
                for c in &self.columns {
                    match pick(c).iter().find(|e| e.label == *l) {
                        Some(e) => {
                            let _ = write!(est, "{:>width$}", format!("{:.4}{}", e.estimate, e.stars));
                            let _ = write!(se, "{:>width$}", format!("({:.4})", e.std_error));
                        }
                        None => {
                            let _ = write!(est, "{:>width$}", "");
                            let _ = write!(se, "{:>width$}", "");
                        }
                    }
                }
                let _ = writeln!(out, "{}", est.trim_end());
                let _ = writeln!(out, "{}", se.trim_end());
            }
        };
        block(&mut out, "Panel A", &labels_a, &|c| &c.panel_a);
        block(&mut out, "Panel B", &labels_b, &|c| &c.panel_b);
        let _ = write!(out, "{:label_w$}", "Observations");
        for c in &self.columns {
            let _ = write!(out, "{:>width$}", c.n);
        }
        out.push('\n');
        let _ = write!(out, "{:label_w$}", "Clusters");
        for c in &self.columns {
            let _ = write!(out, "{:>width$}", c.n_clusters);
        }
        out.push('\n');
        let _ = writeln!(out, "* p<{}, ** p<{}, *** p<{}", REGRESSION_STARS[0], REGRESSION_STARS[1], REGRESSION_STARS[2]);
        out
    }
}
