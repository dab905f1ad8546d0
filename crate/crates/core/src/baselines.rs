//! Nearest-neighbor baselines: Euclidean distance and banded DTW with a
//! leave-one-out selected window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FewShotTask, TimeSeries, TrainSplit};
use crate::error::{Error, Result};

/// Squared Euclidean distance.
pub fn squared_euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Index of the smallest distance; the first wins ties.
fn argmin(dists: impl IntoIterator<Item = Result<f64>>) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in dists.into_iter().enumerate() {
        let d = d?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    Ok(best.map(|(i, _)| i))
}

fn nearest_label(train: &[TimeSeries], dists: impl IntoIterator<Item = Result<f64>>) -> Result<usize> {
    argmin(dists)?
        .map(|i| train[i].label)
        .ok_or_else(|| Error::Usage("nearest-neighbor search over an empty training set".into()))
}

pub fn euclidean_1nn(train: &[TimeSeries], query: &[f64]) -> Result<usize> {
    nearest_label(train, train.iter().map(|s| squared_euclidean(&s.values, query)))
}

/// DTW with squared pointwise cost restricted to `|i - j| <= w`. Returns the
/// accumulated cost without a square root.
pub fn dtw_distance(x: &[f64], y: &[f64], w: usize) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n.abs_diff(m) > w {
        return Err(Error::Shape(format!(
            "band width {w} cannot connect series of lengths {n} and {m}"
        )));
    }
    if n == 0 || m == 0 {
        return if n == m {
            Ok(0.0)
        } else {
            Err(Error::Shape("DTW of an empty series".into()))
        };
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        cur[lo - 1] = f64::INFINITY;
        if hi < m {
            cur[hi + 1] = f64::INFINITY;
        }
        let xi = x[i - 1];
        for j in lo..=hi {
            let d = xi - y[j - 1];
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = d * d + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

pub fn dtw_1nn(train: &[TimeSeries], query: &[f64], w: usize) -> Result<usize> {
    nearest_label(train, train.iter().map(|s| dtw_distance(&s.values, query, w)))
}

/// Band width for a window fraction of length `len`: `ceil(fraction * len)`.
/// A small slack keeps exact multiples such as `0.02 * 50` from rounding up.
pub fn window_steps(fraction: f64, len: usize) -> usize {
    ((fraction * len as f64) - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtwConfig {
    /// Candidate window fractions, strictly increasing in (0, 1].
    pub grid: Vec<f64>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            grid: (1..=50).map(|i| i as f64 / 50.0).collect(),
        }
    }
}

impl DtwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("DTW window grid is empty".into()));
        }
        if self.grid.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("DTW window fractions must lie in (0, 1]".into()));
        }
        if self.grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("DTW window fractions must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Leave-one-out 1NN accuracy of each grid window on `train`.
pub fn loocv_accuracies(train: &TrainSplit, config: &DtwConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let series = train.series();
    if series.len() < 2 {
        return Err(Error::Usage("leave-one-out needs at least 2 training series".into()));
    }
    let len = series[0].values.len();
    config
        .grid
        .par_iter()
        .map(|&frac| {
            let w = window_steps(frac, len);
            let n = series.len();
            let mut dist = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let d = dtw_distance(&series[i].values, &series[j].values, w)?;
                    dist[i * n + j] = d;
                    dist[j * n + i] = d;
                }
            }
            let mut correct = 0usize;
            for i in 0..n {
                let others = (0..n).filter(|&j| j != i).collect::<Vec<_>>();
                let nearest = argmin(others.iter().map(|&j| Ok(dist[i * n + j])))?.map(|k| others[k]);
                if nearest.is_some_and(|j| series[j].label == series[i].label) {
                    correct += 1;
                }
            }
            Ok(correct as f64 / n as f64)
        })
        .collect()
}

/// The grid fraction with the best leave-one-out accuracy; ties go to the
/// smallest window.
pub fn dtw_loocv_window(train: &TrainSplit, config: &DtwConfig) -> Result<f64> {
    let acc = loocv_accuracies(train, config)?;
    let mut best = 0;
    for (i, &a) in acc.iter().enumerate() {
        if a > acc[best] {
            best = i;
        }
    }
    Ok(config.grid[best])
}

fn accuracy(task: &FewShotTask, predict: impl Fn(&[f64]) -> Result<usize> + Sync) -> Result<f64> {
    let queries = task.test.series();
    if queries.is_empty() {
        return Err(Error::Usage(format!("task on {} has no test series", task.dataset)));
    }
    let correct = queries
        .par_iter()
        .map(|q| predict(&q.values).map(|p| usize::from(p == q.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / queries.len() as f64)
}

/// Test accuracy of Euclidean 1NN on one task.
pub fn ed_task_accuracy(task: &FewShotTask) -> Result<f64> {
    accuracy(task, |q| euclidean_1nn(task.train.series(), q))
}

/// Test accuracy of DTW 1NN on one task, with the window chosen on the
/// task's training split. Returns the accuracy and the chosen fraction.
pub fn dtw_task_accuracy(task: &FewShotTask, config: &DtwConfig) -> Result<(f64, f64)> {
    let frac = dtw_loocv_window(&task.train, config)?;
    let len = task.train.series().first().map_or(0, |s| s.values.len());
    let w = window_steps(frac, len);
    Ok((accuracy(task, |q| dtw_1nn(task.train.series(), q, w))?, frac))
}
