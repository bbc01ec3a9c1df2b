//! Residual confounding audit: regress each confounder (and its declared
//! transforms) out of the features, then test whether the residual features
//! still depend on that confounder given the remaining ones.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, FeatureSample};
use crate::error::{Error, Result};
use crate::linalg::{dot, OrthoBasis};
use crate::method::MethodConfig;
use crate::rcot::rcot_test_blocks;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderSpec {
    pub base: Vec<String>,
    /// Derived terms per base name, e.g. `"age^2"` or `"age*sex"`.
    #[serde(default)]
    pub expansions: BTreeMap<String, Vec<String>>,
}

impl ConfounderSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Resolves names against the z column headers.
    pub fn bind(&self, headers: &[String]) -> Result<BoundSpec> {
        if self.base.is_empty() {
            return Err(Error::InvalidSpec("base list is empty".into()));
        }
        let mut seen_base = BTreeSet::new();
        for b in &self.base {
            if !seen_base.insert(b.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate base confounder `{b}`")));
            }
        }
        for name in self.expansions.keys() {
            if !seen_base.contains(name.as_str()) {
                return Err(Error::InvalidSpec(format!("expansion for unknown base `{name}`")));
            }
        }
        let mut bases = Vec::new();
        let mut all_terms: BTreeSet<Vec<(usize, u32)>> = BTreeSet::new();
        for name in &self.base {
            let columns = resolve(name, headers)?;
            for &c in &columns {
                if !all_terms.insert(vec![(c, 1)]) {
                    return Err(Error::InvalidSpec(format!("column `{}` bound twice", headers[c])));
                }
            }
            let mut terms = Vec::new();
            for expr in self.expansions.get(name).into_iter().flatten() {
                for t in parse_term(expr, headers)? {
                    if !all_terms.insert(t.factors.clone()) {
                        return Err(Error::InvalidSpec(format!("duplicate column `{}`", t.label)));
                    }
                    terms.push(t);
                }
            }
            bases.push(BoundBase {
                name: name.clone(),
                columns,
                terms,
            });
        }
        Ok(BoundSpec { bases })
    }
}

/// A product of column powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub label: String,
    /// `(column, power)` pairs, sorted by column.
    pub factors: Vec<(usize, u32)>,
}

impl Term {
    pub fn evaluate(&self, z: &DMatrix<f64>) -> Vec<f64> {
        (0..z.nrows())
            .map(|i| self.factors.iter().map(|&(c, k)| z[(i, c)].powi(k as i32)).product())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundBase {
    pub name: String,
    pub columns: Vec<usize>,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSpec {
    pub bases: Vec<BoundBase>,
}

/// Columns named exactly `name`, or all one-hot columns `name=level`.
fn resolve(name: &str, headers: &[String]) -> Result<Vec<usize>> {
    if let Some(i) = headers.iter().position(|h| h == name) {
        return Ok(vec![i]);
    }
    let prefix = format!("{name}=");
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&prefix))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        Err(Error::InvalidSpec(format!("unknown confounder `{name}`")))
    } else {
        Ok(cols)
    }
}

/// Parses `a^2*b`; a factor naming several one-hot columns expands into one
/// term per column.
fn parse_term(expr: &str, headers: &[String]) -> Result<Vec<Term>> {
    let mut expanded: Vec<Vec<(usize, u32)>> = vec![Vec::new()];
    for factor in expr.split('*') {
        let factor = factor.trim();
        let (name, power) = match factor.rsplit_once('^') {
            Some((n, k)) => {
                let k: u32 = k
                    .trim()
                    .parse()
                    .ok()
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::InvalidSpec(format!("bad exponent in `{expr}`")))?;
                (n.trim(), k)
            }
            None => (factor, 1),
        };
        if name.is_empty() {
            return Err(Error::InvalidSpec(format!("empty factor in `{expr}`")));
        }
        let cols = resolve(name, headers)?;
        expanded = expanded
            .into_iter()
            .flat_map(|prefix| {
                cols.iter().map(move |&c| {
                    let mut f = prefix.clone();
                    f.push((c, power));
                    f
                })
            })
            .collect();
    }
    Ok(expanded
        .into_iter()
        .map(|mut f| {
            f.sort_unstable();
            // Merge repeated columns, e.g. `a*a` into `a^2`.
            let mut merged: Vec<(usize, u32)> = Vec::new();
            for (c, k) in f {
                match merged.last_mut() {
                    Some((lc, lk)) if *lc == c => *lk += k,
                    _ => merged.push((c, k)),
                }
            }
            let label = merged
                .iter()
                .map(|&(c, k)| if k == 1 { headers[c].clone() } else { format!("{}^{k}", headers[c]) })
                .collect::<Vec<_>>()
                .join("*");
            Term { label, factors: merged }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residualized {
    pub residuals: DMatrix<f64>,
    /// Design columns dropped as collinear.
    pub dropped: Vec<usize>,
}

/// Residuals of every column of `x` after OLS on `[1, design]`.
pub fn regress_out(x: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<Residualized> {
    let n = x.nrows();
    if design.ncols() > 0 && design.nrows() != n {
        return Err(Error::RowMismatch(format!(
            "design has {} rows, x has {n}",
            design.nrows()
        )));
    }
    if n <= design.ncols() + 1 {
        return Err(Error::TooFewRows(format!(
            "regression on {} design columns needs more than {} rows",
            design.ncols(),
            design.ncols() + 1
        )));
    }
    let mut basis = OrthoBasis::with_intercept(n);
    for j in 0..design.ncols() {
        let col: Vec<f64> = design.column(j).iter().copied().collect();
        basis.push(&col, j);
    }
    let mut residuals = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        residuals.set_column(j, &DVector::from_vec(basis.residualize(&col)));
    }
    Ok(Residualized {
        residuals,
        dropped: basis.dropped().to_vec(),
    })
}

/// Which variable takes the feature slot of the test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditRole {
    /// Residual features as `X^ω`, the confounder as `Y`.
    #[default]
    ResidualAsFeatures,
    /// The confounder as `X^ω`, residual features as `Y`.
    ConfounderAsFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub error: Option<String>,
    pub design_columns: Vec<String>,
    pub conditioning_columns: Vec<String>,
    pub dropped_design_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: String,
    pub role: AuditRole,
    pub alpha: f64,
    pub results: BTreeMap<String, AuditEntry>,
}

impl AuditReport {
    /// `name → p_value` for the confounders that ran successfully.
    pub fn p_values(&self) -> BTreeMap<String, f64> {
        self.results
            .iter()
            .filter_map(|(k, e)| e.p_value.map(|p| (k.clone(), p)))
            .collect()
    }
}

fn matrix_from_cols(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[allow(clippy::too_many_arguments)]
fn audit_one(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    meta: &[ColumnMeta],
    spec: &BoundSpec,
    idx: usize,
    method: &MethodConfig,
    role: AuditRole,
    alpha: f64,
) -> (AuditEntry, Result<(f64, f64)>) {
    let n = x.nrows();
    let target = &spec.bases[idx];
    let mut design_cols: Vec<Vec<f64>> = Vec::new();
    let mut design_names = Vec::new();
    for &c in &target.columns {
        design_cols.push(z.column(c).iter().copied().collect());
        design_names.push(meta[c].name.clone());
    }
    for t in &target.terms {
        design_cols.push(t.evaluate(z));
        design_names.push(t.label.clone());
    }
    let mut cond_cols: Vec<Vec<f64>> = Vec::new();
    let mut cond_meta = Vec::new();
    for (k, b) in spec.bases.iter().enumerate() {
        if k == idx {
            continue;
        }
        for &c in &b.columns {
            cond_cols.push(z.column(c).iter().copied().collect());
            cond_meta.push(meta[c].clone());
        }
        for t in &b.terms {
            cond_cols.push(t.evaluate(z));
            cond_meta.push(ColumnMeta::continuous(t.label.clone()));
        }
    }
    let mut entry = AuditEntry {
        p_value: None,
        statistic: None,
        error: None,
        design_columns: design_names.clone(),
        conditioning_columns: cond_meta.iter().map(|m| m.name.clone()).collect(),
        dropped_design_columns: Vec::new(),
    };
    let result = (|| {
        let design = matrix_from_cols(n, &design_cols);
        let res = regress_out(x, &design)?;
        entry.dropped_design_columns = res.dropped.iter().map(|&j| design_names[j].clone()).collect();
        let conf = matrix_from_cols(n, &target.columns.iter().map(|&c| z.column(c).iter().copied().collect()).collect::<Vec<_>>());
        let cond = matrix_from_cols(n, &cond_cols);
        let (feat, resp) = match role {
            AuditRole::ResidualAsFeatures => (res.residuals, conf),
            AuditRole::ConfounderAsFeatures => (conf, res.residuals),
        };
        let out = if resp.ncols() == 1 {
            let s = FeatureSample::new(feat, resp.column(0).into_owned(), cond, cond_meta.clone())?;
            method.run(&s, alpha)?
        } else if let MethodConfig::Rcot(p) = method {
            rcot_test_blocks(&feat, &resp, &cond, p, alpha)?
        } else {
            return Err(Error::InvalidParam(format!(
                "{} takes a single-column response; `{}` spans {} columns (use rcot)",
                method.method(),
                target.name,
                resp.ncols()
            )));
        };
        Ok((out.p_value, out.statistic))
    })();
    (entry, result)
}

/// Runs the audit for every base confounder. Failures are recorded per
/// confounder and do not stop the others.
pub fn confounder_audit(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    meta: &[ColumnMeta],
    spec: &ConfounderSpec,
    method: &MethodConfig,
    role: AuditRole,
    alpha: f64,
) -> Result<AuditReport> {
    if x.nrows() != z.nrows() {
        return Err(Error::RowMismatch(format!("x has {} rows, z has {}", x.nrows(), z.nrows())));
    }
    if meta.len() != z.ncols() {
        return Err(Error::DimMismatch {
            expected: z.ncols(),
            got: meta.len(),
        });
    }
    let headers: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
    let bound = spec.bind(&headers)?;
    let mut results = BTreeMap::new();
    for (idx, b) in bound.bases.iter().enumerate() {
        let (mut entry, r) = audit_one(x, z, meta, &bound, idx, method, role, alpha);
        match r {
            Ok((p, stat)) => {
                entry.p_value = Some(p);
                entry.statistic = Some(stat);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        results.insert(b.name.clone(), entry);
    }
    Ok(AuditReport {
        method: method.method().to_string(),
        role,
        alpha,
        results,
    })
}

/// Largest `|⟨r_j, d_k⟩|` over residual and design columns, intercept included.
pub fn max_orthogonality_error(residuals: &DMatrix<f64>, design: &DMatrix<f64>) -> f64 {
    let n = residuals.nrows();
    let ones = vec![1.0; n];
    let mut worst: f64 = 0.0;
    for r in residuals.column_iter() {
        let r: Vec<f64> = r.iter().copied().collect();
        worst = worst.max(dot(&r, &ones).abs());
        for d in design.column_iter() {
            let d: Vec<f64> = d.iter().copied().collect();
            worst = worst.max(dot(&r, &d).abs());
        }
    }
    worst
}
