//! Accuracy table, rank statistics and critical-difference data written to disk.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ReportConfig;
use super::stats::{cliques, friedman_statistic, nemenyi_cd, wtl_counts, Friedman, RankTable, Wtl, WTL_TOLERANCE};
use crate::error::{Error, Result};

pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CD_FILE: &str = "cd_diagram.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWtl {
    pub method: String,
    pub against: String,
    #[serde(flatten)]
    pub counts: Wtl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub seed: Option<u64>,
    pub n_datasets: usize,
    pub methods: Vec<String>,
    pub mean_ranks: Vec<f64>,
    /// Absent with fewer than two methods or datasets.
    pub friedman: Option<Friedman>,
    pub alpha: f64,
    pub critical_difference: Option<f64>,
    pub wtl: Vec<PairWtl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdMethod {
    pub name: String,
    pub mean_rank: f64,
    /// Indices into `cliques` of the groups containing this method.
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub critical_difference: f64,
    pub methods: Vec<CdMethod>,
    /// Method names of each non-significant group, best rank first.
    pub cliques: Vec<Vec<String>>,
}

/// Builds the summary without touching the filesystem.
pub fn summarize(table: &RankTable, config: &ReportConfig, seed: Option<u64>) -> Result<(ReportSummary, Option<CdDiagram>)> {
    let k = table.methods.len();
    let n = table.datasets.len();
    let friedman = if k >= 2 && n >= 2 { Some(friedman_statistic(table)?) } else { None };
    let cd = if k >= 2 { Some(nemenyi_cd(k, n, config.alpha)?) } else { None };

    let mut wtl = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a != b {
                wtl.push(PairWtl {
                    method: table.methods[a].clone(),
                    against: table.methods[b].clone(),
                    counts: wtl_counts(&table.column(a), &table.column(b), WTL_TOLERANCE)?,
                });
            }
        }
    }

    let diagram = cd.map(|cd| {
        let groups = cliques(&table.mean_ranks, cd);
        CdDiagram {
            critical_difference: cd,
            methods: (0..k)
                .map(|m| CdMethod {
                    name: table.methods[m].clone(),
                    mean_rank: table.mean_ranks[m],
                    groups: (0..groups.len()).filter(|&g| groups[g].contains(&m)).collect(),
                })
                .collect(),
            cliques: groups
                .iter()
                .map(|g| g.iter().map(|&m| table.methods[m].clone()).collect())
                .collect(),
        }
    });

    let summary = ReportSummary {
        seed,
        n_datasets: n,
        methods: table.methods.clone(),
        mean_ranks: table.mean_ranks.clone(),
        friedman,
        alpha: config.alpha,
        critical_difference: cd,
        wtl,
    };
    Ok((summary, diagram))
}

/// Per-dataset accuracies, then a mean-rank row and W/T/L rows of
/// `reference` against each method.
pub fn accuracy_csv(table: &RankTable, reference: Option<usize>) -> Result<String> {
    let mut out = String::from("dataset");
    for m in &table.methods {
        write!(out, ",{m}").unwrap();
    }
    out.push('\n');
    for (d, row) in table.accuracy.iter().enumerate() {
        out.push_str(&table.datasets[d]);
        for a in row {
            write!(out, ",{a:.6}").unwrap();
        }
        out.push('\n');
    }
    out.push_str("Mean Arithmetic Rank");
    for r in &table.mean_ranks {
        write!(out, ",{r:.4}").unwrap();
    }
    out.push('\n');
    if let Some(r) = reference {
        let name = &table.methods[r];
        let reference_column = table.column(r);
        for (label, pick) in [("Wins", 0), ("Ties", 1), ("Losses", 2)] {
            write!(out, "{name} {label}").unwrap();
            for m in 0..table.methods.len() {
                if m == r {
                    out.push_str(",-");
                } else {
                    let c = wtl_counts(&reference_column, &table.column(m), WTL_TOLERANCE)?;
                    write!(out, ",{}", [c.wins, c.ties, c.losses][pick]).unwrap();
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes the accuracy table, the summary and, with at least two methods,
/// the critical-difference data into `dir`.
pub fn emit_report(table: &RankTable, dir: &Path, config: &ReportConfig, seed: Option<u64>) -> Result<ReportSummary> {
    if table.methods.is_empty() {
        return Err(Error::Stats("no methods to report".into()));
    }
    let (summary, diagram) = summarize(table, config, seed)?;
    let reference = table.method_index(&config.reference);
    if reference.is_none() {
        log::warn!("reference method {} not in the table; W/T/L rows omitted", config.reference);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(ACCURACY_FILE), &accuracy_csv(table, reference)?)?;
    write(&dir.join(SUMMARY_FILE), &to_json(&summary)?)?;
    if let Some(diagram) = diagram {
        write(&dir.join(CD_FILE), &to_json(&diagram)?)?;
    }
    Ok(summary)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Stats(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
