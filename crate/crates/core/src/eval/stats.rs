//! Rank statistics over a datasets-by-methods accuracy table.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Equality tolerance for win/tie/loss counts.
pub const WTL_TOLERANCE: f64 = 5e-4;

/// Studentized range quantiles divided by sqrt(2), infinite degrees of
/// freedom, for k = 2..=10 methods.
const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

/// Ranks of one row, highest accuracy first, ties sharing their average rank.
pub fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-dataset mean accuracies with derived ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// `accuracy[d][m]`.
    pub accuracy: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
}

impl RankTable {
    pub fn new(datasets: Vec<String>, methods: Vec<String>, accuracy: Vec<Vec<f64>>) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::Stats("no methods".into()));
        }
        if datasets.is_empty() {
            return Err(Error::Stats("no datasets".into()));
        }
        if accuracy.len() != datasets.len() || accuracy.iter().any(|r| r.len() != methods.len()) {
            return Err(Error::Stats("accuracy table does not match its labels".into()));
        }
        if accuracy.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::Stats("non-finite accuracy".into()));
        }
        let ranks: Vec<Vec<f64>> = accuracy.iter().map(|r| rank_descending(r)).collect();
        let n = datasets.len() as f64;
        let mean_ranks = (0..methods.len())
            .map(|m| ranks.iter().map(|r| r[m]).sum::<f64>() / n)
            .collect();
        Ok(Self {
            datasets,
            methods,
            accuracy,
            ranks,
            mean_ranks,
        })
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    pub fn column(&self, method: usize) -> Vec<f64> {
        self.accuracy.iter().map(|r| r[method]).collect()
    }

    /// Parses a table with a `dataset` column followed by one column per
    /// method. Extra leading columns named in `skip` are ignored.
    pub fn from_csv(text: &str, skip: &[&str]) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Stats("empty table".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let keep: Vec<usize> = (1..header.len()).filter(|&i| !skip.contains(&header[i])).collect();
        let methods = keep.iter().map(|&i| header[i].to_string()).collect();
        let mut datasets = Vec::new();
        let mut accuracy = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(Error::Record {
                    line: n + 2,
                    message: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            datasets.push(fields[0].to_string());
            accuracy.push(
                keep.iter()
                    .map(|&i| {
                        fields[i].parse::<f64>().map_err(|e| Error::Record {
                            line: n + 2,
                            message: format!("{}: {e}", fields[i]),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(datasets, methods, accuracy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub statistic: f64,
    pub k: usize,
    pub n: usize,
    /// Upper tail of the chi-square distribution with `k - 1` degrees of freedom.
    pub p_value: f64,
}

/// `12n / (k(k+1)) * (sum_j R_j^2 - k(k+1)^2 / 4)` over mean ranks `R_j`.
pub fn friedman_statistic(table: &RankTable) -> Result<Friedman> {
    let k = table.methods.len();
    let n = table.datasets.len();
    if k < 2 || n < 2 {
        return Err(Error::Stats(format!("Friedman test needs k >= 2 and n >= 2, got k={k}, n={n}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let sum_sq: f64 = table.mean_ranks.iter().map(|r| r * r).sum();
    let statistic = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let p_value = ChiSquared::new(kf - 1.0)
        .map(|d| d.sf(statistic))
        .map_err(|e| Error::Stats(e.to_string()))?;
    Ok(Friedman {
        statistic,
        k,
        n,
        p_value,
    })
}

/// Nemenyi critical difference `q * sqrt(k(k+1) / (6n))` at `alpha` 0.05 or 0.10.
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::Stats(format!("no critical values for alpha {alpha}; use 0.05 or 0.10")));
    };
    if !(2..=10).contains(&k) {
        return Err(Error::Stats(format!("critical values cover 2 to 10 methods, got {k}")));
    }
    if n == 0 {
        return Err(Error::Stats("critical difference needs at least one dataset".into()));
    }
    let (kf, nf) = (k as f64, n as f64);
    Ok(table[k - 2] * (kf * (kf + 1.0) / (6.0 * nf)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wtl {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

/// Per-dataset wins, ties and losses of `a` against `b`; differences within
/// `tolerance` are ties.
pub fn wtl_counts(a: &[f64], b: &[f64], tolerance: f64) -> Result<Wtl> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!("methods cover {} and {} datasets", a.len(), b.len())));
    }
    let mut out = Wtl {
        wins: 0,
        ties: 0,
        losses: 0,
    };
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        if d.abs() <= tolerance + 1e-12 {
            out.ties += 1;
        } else if d > 0.0 {
            out.wins += 1;
        } else {
            out.losses += 1;
        }
    }
    Ok(out)
}

/// Maximal runs of methods, ordered by mean rank, whose rank spread is at
/// most `cd`. Single methods are not reported. Each clique lists method
/// indices in rank order.
pub fn cliques(mean_ranks: &[f64], cd: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..mean_ranks.len()).collect();
    order.sort_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]).then(a.cmp(&b)));
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut last_end = 0;
    for start in 0..order.len() {
        let mut end = start;
        while end + 1 < order.len() && mean_ranks[order[end + 1]] - mean_ranks[order[start]] <= cd {
            end += 1;
        }
        if end > start && end + 1 > last_end {
            out.push(order[start..=end].to_vec());
            last_end = end + 1;
        }
    }
    out
}
