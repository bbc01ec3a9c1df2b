//! Domain types shared by every test: the feature sample `(X, Y, Z)`, the
//! test outcome record, and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of rows accepted by any test.
pub const MIN_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// A column produced by encoding a categorical variable (indicator or level code).
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
        }
    }
}

/// The triple `(X^ω, Y, Z)` consumed by every conditional independence test.
///
/// `x` is `n × q` with `q ≥ 1`, `y` has length `n` and `z` is `n × p`; `p = 0`
/// encodes an unconditional test. All entries are finite and `n ≥ 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    x: DMatrix<f64>,
    y: DVector<f64>,
    z: DMatrix<f64>,
    z_meta: Vec<ColumnMeta>,
}

impl FeatureSample {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        z: DMatrix<f64>,
        z_meta: Vec<ColumnMeta>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::RowMismatch(format!(
                "x has {} rows, y has {n}",
                x.nrows()
            )));
        }
        if z.nrows() != n && z.ncols() > 0 {
            return Err(Error::RowMismatch(format!(
                "z has {} rows, y has {n}",
                z.nrows()
            )));
        }
        if n < MIN_ROWS {
            return Err(Error::EmptyInput {
                min: MIN_ROWS,
                got: n,
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidParam("x must have at least one column".into()));
        }
        if z_meta.len() != z.ncols() {
            return Err(Error::DimMismatch {
                expected: z.ncols(),
                got: z_meta.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("x"));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("z"));
        }
        // An empty z may have been built with zero rows; normalize the shape.
        let z = if z.ncols() == 0 {
            DMatrix::zeros(n, 0)
        } else {
            z
        };
        Ok(Self { x, y, z, z_meta })
    }

    /// A sample with all-continuous confounder columns named `z0, z1, ...`.
    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        let meta = (0..z.ncols())
            .map(|j| ColumnMeta::continuous(format!("z{j}")))
            .collect();
        Self::new(x, y, z, meta)
    }

    /// A sample without confounders.
    pub fn unconditional(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, DMatrix::zeros(n, 0), Vec::new())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn z_meta(&self) -> &[ColumnMeta] {
        &self.z_meta
    }

    /// Same sample with the outcome replaced (used for permutation nulls).
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.z.clone(), self.z_meta.clone())
    }

    /// Same sample with the feature block replaced.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, self.y.clone(), self.z.clone(), self.z_meta.clone())
    }

    /// Rows reordered so that new row `i` is old row `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let n = self.n();
        if order.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: order.len(),
            });
        }
        let x = DMatrix::from_fn(n, self.q(), |i, j| self.x[(order[i], j)]);
        let y = DVector::from_fn(n, |i, _| self.y[order[i]]);
        let z = DMatrix::from_fn(n, self.p(), |i, j| self.z[(order[i], j)]);
        Self::new(x, y, z, self.z_meta.clone())
    }

    /// Rows selected by index (duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let m = rows.len();
        let x = DMatrix::from_fn(m, self.q(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(m, |i, _| self.y[rows[i]]);
        let z = DMatrix::from_fn(m, self.p(), |i, j| self.z[(rows[i], j)]);
        Self::new(x, y, z, self.z_meta.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rcot")]
    Rcot,
    #[serde(rename = "cpt-kpc", alias = "cpt_kpc")]
    CptKpc,
    #[serde(rename = "cmiknn")]
    Cmiknn,
    #[serde(rename = "fcit")]
    Fcit,
    #[serde(rename = "wald")]
    Wald,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Rcot,
        Method::CptKpc,
        Method::Cmiknn,
        Method::Fcit,
        Method::Wald,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rcot => "rcot",
            Method::CptKpc => "cpt-kpc",
            Method::Cmiknn => "cmiknn",
            Method::Fcit => "fcit",
            Method::Wald => "wald",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rcot" => Ok(Method::Rcot),
            "cpt-kpc" | "cpt_kpc" => Ok(Method::CptKpc),
            "cmiknn" => Ok(Method::Cmiknn),
            "fcit" => Ok(Method::Fcit),
            "wald" => Ok(Method::Wald),
            other => Err(Error::InvalidParam(format!("unknown method {other:?}"))),
        }
    }
}

/// Resolved hyperparameters recorded with an outcome.
pub type Params = BTreeMap<String, serde_json::Value>;

/// Result of one test run. `reject == (p_value <= alpha)` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    pub dim_x: usize,
    pub dim_z: usize,
    pub params: Params,
    pub seed: u64,
    pub runtime_ms: f64,
}

impl TestOutcome {
    pub fn new(
        method: Method,
        sample: &FeatureSample,
        statistic: f64,
        p_value: f64,
        alpha: f64,
        params: Params,
        seed: u64,
    ) -> Self {
        let p_value = if p_value.is_nan() {
            1.0
        } else {
            p_value.clamp(0.0, 1.0)
        };
        Self {
            method,
            statistic,
            p_value,
            reject: p_value <= alpha,
            alpha,
            n: sample.n(),
            dim_x: sample.q(),
            dim_z: sample.p(),
            params,
            seed,
            runtime_ms: 0.0,
        }
    }

    pub fn with_runtime(mut self, start: std::time::Instant) -> Self {
        self.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        self
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Column-standardizes `m` with the `n − 1` denominator. Constant columns
/// become all zeros and report a standard deviation of 0.
pub fn standardize_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let (n, d) = m.shape();
    let mut out = m.clone();
    let mut means = Vec::with_capacity(d);
    let mut sds = Vec::with_capacity(d);
    for j in 0..d {
        let col = m.column(j);
        let mean = if n > 0 { col.sum() / n as f64 } else { 0.0 };
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        // Relative threshold: a column whose spread is at rounding level is constant.
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let constant = sd == 0.0 || sd <= 1e-13 * scale;
        let mut out_col = out.column_mut(j);
        for v in out_col.iter_mut() {
            *v = if constant { 0.0 } else { (*v - mean) / sd };
        }
        means.push(mean);
        sds.push(if constant { 0.0 } else { sd });
    }
    (out, means, sds)
}

/// Standardizes a vector with the same conventions as [`standardize_columns`].
pub fn standardize_vector(v: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let (s, means, sds) = standardize_columns(&m);
    (DVector::from_column_slice(s.as_slice()), means[0], sds[0])
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        let headers = reader
            .headers()
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(Self { headers, rows })
    }

    fn id_column(&self) -> Option<usize> {
        self.headers.iter().position(|h| h == "id")
    }

    /// Reorders rows to follow `ids` using this table's id column.
    fn align_to(&mut self, ids: &[String], file: &str) -> Result<()> {
        let idc = self.id_column().expect("caller checked id column");
        let mut by_id: HashMap<String, usize> = HashMap::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            if by_id.insert(row[idc].clone(), i).is_some() {
                return Err(Error::InvalidParam(format!(
                    "duplicate id {:?} in {file}",
                    row[idc]
                )));
            }
        }
        if by_id.len() != ids.len() {
            return Err(Error::RowMismatch(format!(
                "{file} has {} rows, expected {}",
                by_id.len(),
                ids.len()
            )));
        }
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let i = by_id
                .get(id)
                .ok_or_else(|| Error::UnmatchedId(id.clone()))?;
            rows.push(self.rows[*i].clone());
        }
        self.rows = rows;
        Ok(())
    }

    fn data_columns(&self) -> Vec<usize> {
        let idc = self.id_column();
        (0..self.headers.len()).filter(|&j| Some(j) != idc).collect()
    }

    fn numeric_matrix(&self, file: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
        let cols = self.data_columns();
        let n = self.rows.len();
        let mut m = DMatrix::zeros(n, cols.len());
        for (i, row) in self.rows.iter().enumerate() {
            for (jj, &j) in cols.iter().enumerate() {
                let cell = row.get(j).map(String::as_str).unwrap_or("");
                m[(i, jj)] = parse_cell(cell).ok_or_else(|| Error::NonNumeric {
                    file: file.to_owned(),
                    row: i + 1,
                    column: self.headers[j].clone(),
                    value: cell.to_owned(),
                })?;
            }
        }
        let names = cols.iter().map(|&j| self.headers[j].clone()).collect();
        Ok((names, m))
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads `(X^ω, Y, Z)` from CSV files with a single header row.
///
/// Rows are aligned by order unless every file carries an `id` column, in
/// which case they are joined on it. Non-numeric `z` columns are one-hot
/// encoded, dropping the alphabetically first level.
pub fn load_sample(x_path: &Path, y_path: &Path, z_path: Option<&Path>) -> Result<FeatureSample> {
    let x_tab = RawTable::read(x_path)?;
    let mut y_tab = RawTable::read(y_path)?;
    let mut z_tab = z_path.map(RawTable::read).transpose()?;

    let all_have_id = x_tab.id_column().is_some()
        && y_tab.id_column().is_some()
        && z_tab.as_ref().is_none_or(|t| t.id_column().is_some());

    if all_have_id {
        let idc = x_tab.id_column().unwrap();
        let ids: Vec<String> = x_tab.rows.iter().map(|r| r[idc].clone()).collect();
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::InvalidParam("duplicate ids in x file".into()));
        }
        y_tab.align_to(&ids, "y")?;
        if let Some(z) = z_tab.as_mut() {
            z.align_to(&ids, "z")?;
        }
    } else {
        let n = x_tab.rows.len();
        if y_tab.rows.len() != n {
            return Err(Error::RowMismatch(format!(
                "x has {n} rows, y has {}",
                y_tab.rows.len()
            )));
        }
        if let Some(z) = &z_tab {
            if z.rows.len() != n {
                return Err(Error::RowMismatch(format!(
                    "x has {n} rows, z has {}",
                    z.rows.len()
                )));
            }
        }
    }

    let n = x_tab.rows.len();
    if n < MIN_ROWS {
        return Err(Error::EmptyInput {
            min: MIN_ROWS,
            got: n,
        });
    }

    let (_, x) = x_tab.numeric_matrix("x")?;
    let (_, ym) = y_tab.numeric_matrix("y")?;
    if ym.ncols() != 1 {
        return Err(Error::InvalidParam(format!(
            "y file must hold exactly one data column, found {}",
            ym.ncols()
        )));
    }
    let y = DVector::from_column_slice(ym.as_slice());

    let (z, meta) = match &z_tab {
        Some(t) => encode_confounders(t)?,
        None => (DMatrix::zeros(n, 0), Vec::new()),
    };
    FeatureSample::new(x, y, z, meta)
}

/// Loads features and confounders without an outcome, joined on `id` when
/// both files carry one. Returns `(x, z, z_meta)`.
pub fn load_features_and_confounders(x_path: &Path, z_path: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<ColumnMeta>)> {
    let x_tab = RawTable::read(x_path)?;
    let mut z_tab = RawTable::read(z_path)?;
    let n = x_tab.rows.len();
    if let (Some(idc), Some(_)) = (x_tab.id_column(), z_tab.id_column()) {
        let ids: Vec<String> = x_tab.rows.iter().map(|r| r[idc].clone()).collect();
        if ids.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::InvalidParam("duplicate ids in x file".into()));
        }
        z_tab.align_to(&ids, "z")?;
    } else if z_tab.rows.len() != n {
        return Err(Error::RowMismatch(format!("x has {n} rows, z has {}", z_tab.rows.len())));
    }
    if n < MIN_ROWS {
        return Err(Error::EmptyInput { min: MIN_ROWS, got: n });
    }
    let (_, x) = x_tab.numeric_matrix("x")?;
    let (z, meta) = encode_confounders(&z_tab)?;
    Ok((x, z, meta))
}

fn encode_confounders(t: &RawTable) -> Result<(DMatrix<f64>, Vec<ColumnMeta>)> {
    let n = t.rows.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut meta = Vec::new();
    for j in t.data_columns() {
        let name = &t.headers[j];
        let cells: Vec<&str> = t
            .rows
            .iter()
            .map(|r| r.get(j).map(String::as_str).unwrap_or(""))
            .collect();
        if let Some(i) = cells.iter().position(|c| c.is_empty()) {
            return Err(Error::NonNumeric {
                file: "z".into(),
                row: i + 1,
                column: name.clone(),
                value: String::new(),
            });
        }
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| parse_cell(c)).collect();
        match parsed {
            Some(values) => {
                columns.push(values);
                meta.push(ColumnMeta::continuous(name.clone()));
            }
            None => {
                let levels: BTreeSet<&str> = cells.iter().copied().collect();
                for level in levels.iter().skip(1) {
                    columns.push(
                        cells
                            .iter()
                            .map(|c| if c == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    meta.push(ColumnMeta::categorical(format!("{name}={level}")));
                }
            }
        }
    }
    let z = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    Ok((z, meta))
}

/// Writes a matrix as CSV with 17 significant digits, which round-trips every
/// finite double exactly.
pub fn save_matrix_csv(path: &Path, headers: &[String], m: &DMatrix<f64>) -> Result<()> {
    if headers.len() != m.ncols() {
        return Err(Error::DimMismatch {
            expected: m.ncols(),
            got: headers.len(),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(headers).map_err(csv_err)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an all-numeric CSV matrix (an `id` column, if present, is skipped).
pub fn load_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = RawTable::read(path)?;
    t.numeric_matrix(&path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn smallest_valid_input() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "a,b\n1,2\n3,4\n5,6\n");
        let y = write(d.path(), "y.csv", "y\n1\n2\n3\n");
        let s = load_sample(&x, &y, None).unwrap();
        assert_eq!((s.n(), s.q(), s.p()), (3, 2, 0));
    }

    #[test]
    fn categorical_reference_level_dropped() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "a\n1\n2\n3\n");
        let y = write(d.path(), "y.csv", "y\n1\n2\n3\n");
        let z = write(d.path(), "z.csv", "site\nA\nB\nA\n");
        let s = load_sample(&x, &y, Some(&z)).unwrap();
        assert_eq!(s.p(), 1);
        assert_eq!(s.z().column(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(s.z_meta()[0].kind, ColumnKind::Categorical);
        assert_eq!(s.z_meta()[0].name, "site=B");
    }

    #[test]
    fn non_numeric_outcome_rejected() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "a\n1\n2\n3\n");
        let y = write(d.path(), "y.csv", "y\n1\nabc\n3\n");
        let err = load_sample(&x, &y, None).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { ref value, .. } if value == "abc"));
    }

    #[test]
    fn row_mismatch_and_too_few_rows() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "a\n1\n2\n3\n");
        let y = write(d.path(), "y.csv", "y\n1\n2\n");
        assert!(matches!(
            load_sample(&x, &y, None),
            Err(Error::RowMismatch(_))
        ));
        let x2 = write(d.path(), "x2.csv", "a\n1\n2\n");
        assert!(matches!(
            load_sample(&x2, &y, None),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn id_join_reorders_and_rejects_unknown_ids() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "id,a\nr1,1\nr2,2\nr3,3\n");
        let y = write(d.path(), "y.csv", "id,y\nr3,30\nr1,10\nr2,20\n");
        let s = load_sample(&x, &y, None).unwrap();
        assert_eq!(s.y().as_slice(), &[10.0, 20.0, 30.0]);
        assert_eq!(s.q(), 1);

        let y_bad = write(d.path(), "yb.csv", "id,y\nr3,30\nr1,10\nr9,20\n");
        assert!(matches!(
            load_sample(&x, &y_bad, None),
            Err(Error::UnmatchedId(ref id)) if id == "r2"
        ));
    }

    #[test]
    fn missing_z_cell_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let x = write(d.path(), "x.csv", "a\n1\n2\n3\n");
        let y = write(d.path(), "y.csv", "y\n1\n2\n3\n");
        let z = write(d.path(), "z.csv", "age,site\n1,A\n2,\n3,B\n");
        assert!(load_sample(&x, &y, Some(&z)).is_err());
    }

    #[test]
    fn standardize_examples() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let (s, means, sds) = standardize_columns(&m);
        assert_eq!(s.column(0).as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!((means[0], sds[0]), (2.0, 1.0));
        assert_eq!(s.column(1).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(sds[1], 0.0);

        // mean 0.5, sample sd sqrt(1/3) = 0.57735 → ±0.5 / 0.57735 = ±0.8660
        let m = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        let (s, _, sds) = standardize_columns(&m);
        assert!((sds[0] - 0.577_350_269_189_625_8).abs() < 1e-12);
        assert!((s[(0, 0)] + 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!((s[(3, 0)] - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn outcome_decision_tracks_alpha() {
        let s = FeatureSample::unconditional(
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
        )
        .unwrap();
        let o = TestOutcome::new(Method::Wald, &s, 1.0, 0.05, 0.05, Params::new(), 0);
        assert!(o.reject);
        let o = TestOutcome::new(Method::Wald, &s, 1.0, 0.0501, 0.05, Params::new(), 0);
        assert!(!o.reject);
        let o = TestOutcome::new(Method::Wald, &s, 1.0, 1.5, 0.05, Params::new(), 0);
        assert_eq!(o.p_value, 1.0);
    }

    #[test]
    fn sample_rejects_non_finite() {
        let x = DMatrix::from_element(3, 1, f64::NAN);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            FeatureSample::unconditional(x, y),
            Err(Error::NonFinite("x"))
        ));
    }
}
