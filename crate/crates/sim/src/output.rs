//! Campaign outputs: one CSV per cell, a JSON summary and QQ tables.

use std::fs;
use std::path::{Path, PathBuf};

use dncit::stats::qq_pairs;
use serde::Serialize;

use crate::campaign::CampaignResult;
use crate::error::{Result, SimError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

/// Results of every method on one cell.
#[derive(Debug, Clone)]
pub struct CellResults {
    pub id: String,
    pub results: Vec<CampaignResult>,
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    cell: &'a str,
    #[serde(flatten)]
    result: &'a CampaignResult,
}

#[derive(Serialize)]
struct Summary<'a> {
    master_seed: u64,
    entries: Vec<SummaryEntry<'a>>,
}

/// Rows `dgm_id, method, replication, seed, p_value, statistic, runtime_ms,
/// error`, ordered by method then replication.
pub fn write_cell_csv(path: &Path, cell: &CellResults) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["dgm_id", "method", "replication", "seed", "p_value", "statistic", "runtime_ms", "error"])
        .map_err(csv_err(path))?;
    for res in &cell.results {
        for r in &res.records {
            w.write_record([
                cell.id.as_str(),
                res.method.as_str(),
                &r.replication.to_string(),
                &r.seed.to_string(),
                &fmt_opt(r.p_value),
                &fmt_opt(r.statistic),
                &format!("{:.3}", r.runtime_ms),
                r.error.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Sorted p-values against uniform plotting positions.
pub fn write_qq(path: &Path, result: &CampaignResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["uniform_quantile", "p_value"]).map_err(csv_err(path))?;
    for (u, p) in qq_pairs(&result.successful_p_values()) {
        w.write_record([format!("{u:.17e}"), format!("{p:.17e}")])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `<id>.csv`, `qq/<id>__<method>.csv` and `summary.json` under `dir`;
/// returns the paths written.
pub fn write_outputs(dir: &Path, master_seed: u64, cells: &[CellResults]) -> Result<Vec<PathBuf>> {
    let qq_dir = dir.join("qq");
    fs::create_dir_all(&qq_dir).map_err(io_err(&qq_dir))?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for cell in cells {
        let path = dir.join(format!("{}.csv", cell.id));
        write_cell_csv(&path, cell)?;
        written.push(path);
        for res in &cell.results {
            let path = qq_dir.join(format!("{}__{}.csv", cell.id, res.method.as_str()));
            write_qq(&path, res)?;
            written.push(path);
            entries.push(SummaryEntry {
                cell: &cell.id,
                result: res,
            });
        }
    }
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&Summary { master_seed, entries }).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}
