//! Batch normalization over a batch of `[channels, T_i]` signals.
//!
//! Statistics pool the batch and time axes, so series of different lengths
//! may share a batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Added to the variance before the square root.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel running mean and variance of one batch-norm layer.
///
/// The first update copies the batch statistics; later updates blend with
/// [`BN_MOMENTUM`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn reset(&mut self) {
        self.mean.fill(0.0);
        self.var.fill(1.0);
        self.initialized = false;
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        if self.initialized {
            for (r, &m) in self.mean.iter_mut().zip(mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, &v) in self.var.iter_mut().zip(var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        } else {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(var);
            self.initialized = true;
        }
    }
}

/// Values saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
    count: usize,
}

fn check_batch(batch: &[Tensor], gamma: &[f64], beta: &[f64]) -> Result<usize> {
    let ch = gamma.len();
    if beta.len() != ch {
        return Err(Error::Shape(format!(
            "batchnorm: gamma has {ch} channels, beta {}",
            beta.len()
        )));
    }
    for x in batch {
        x.expect_rank(2, "batchnorm input")?;
        if x.dim(0) != ch {
            return Err(Error::Shape(format!(
                "batchnorm: input has {} channels, parameters {ch}",
                x.dim(0)
            )));
        }
    }
    Ok(ch)
}

/// Normalizes every channel of the batch.
///
/// `layer` only labels the uninitialized-statistics error. Train mode returns
/// the cache needed by [`batchnorm_backward`] and updates `stats`.
pub fn batchnorm_forward(
    batch: &[Tensor],
    gamma: &[f64],
    beta: &[f64],
    stats: &mut RunningStats,
    mode: Mode,
    layer: usize,
) -> Result<(Vec<Tensor>, Option<BnCache>)> {
    match mode {
        Mode::Infer => Ok((bn_infer(batch, gamma, beta, stats, layer)?, None)),
        Mode::Train => {
            if stats.channels() != gamma.len() {
                return Err(Error::Shape(format!(
                    "batchnorm: running stats have {} channels, parameters {}",
                    stats.channels(),
                    gamma.len()
                )));
            }
            let (out, cache) = bn_train(batch, gamma, beta, Some(stats))?;
            Ok((out, Some(cache)))
        }
    }
}

pub(crate) fn bn_infer(
    batch: &[Tensor],
    gamma: &[f64],
    beta: &[f64],
    stats: &RunningStats,
    layer: usize,
) -> Result<Vec<Tensor>> {
    let ch = check_batch(batch, gamma, beta)?;
    if stats.channels() != ch {
        return Err(Error::Shape(format!(
            "batchnorm: running stats have {} channels, parameters {ch}",
            stats.channels()
        )));
    }
    if !stats.initialized {
        return Err(Error::UninitializedStats { layer });
    }
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    Ok(batch
        .iter()
        .map(|x| {
            let len = x.dim(1);
            let mut y = x.clone();
            for c in 0..ch {
                let scale = gamma[c] * inv_std[c];
                let shift = beta[c] - stats.mean[c] * scale;
                for v in &mut y.data_mut()[c * len..(c + 1) * len] {
                    *v = *v * scale + shift;
                }
            }
            y
        })
        .collect())
}

pub(crate) fn bn_train(
    batch: &[Tensor],
    gamma: &[f64],
    beta: &[f64],
    stats: Option<&mut RunningStats>,
) -> Result<(Vec<Tensor>, BnCache)> {
    let ch = check_batch(batch, gamma, beta)?;
    let count: usize = batch.iter().map(|x| x.dim(1)).sum();
    if count < 2 {
        return Err(Error::Usage(format!(
            "batchnorm train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let n = count as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for x in batch {
        for (c, row) in x.rows().enumerate() {
            mean[c] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for x in batch {
        for (c, row) in x.rows().enumerate() {
            var[c] += row.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut xhat = Vec::with_capacity(batch.len());
    let mut out = Vec::with_capacity(batch.len());
    for x in batch {
        let len = x.dim(1);
        let mut h = x.clone();
        let mut y = x.clone();
        for c in 0..ch {
            let range = c * len..(c + 1) * len;
            for (hv, yv) in h.data_mut()[range.clone()].iter_mut().zip(&mut y.data_mut()[range]) {
                *hv = (*hv - mean[c]) * inv_std[c];
                *yv = gamma[c] * *hv + beta[c];
            }
        }
        xhat.push(h);
        out.push(y);
    }
    if let Some(stats) = stats {
        stats.update(&mean, &var);
    }
    Ok((out, BnCache { xhat, inv_std, count }))
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Vec<Tensor>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Exact reverse-mode of the train-mode forward pass, through the batch statistics.
pub fn batchnorm_backward(upstream: &[Tensor], cache: &BnCache, gamma: &[f64]) -> Result<BnGrads> {
    let ch = gamma.len();
    if upstream.len() != cache.xhat.len() {
        return Err(Error::Shape(format!(
            "batchnorm backward: {} upstream tensors for a batch of {}",
            upstream.len(),
            cache.xhat.len()
        )));
    }
    for (g, h) in upstream.iter().zip(&cache.xhat) {
        if g.shape() != h.shape() {
            return Err(Error::Shape(format!(
                "batchnorm backward: upstream {:?} vs cached {:?}",
                g.shape(),
                h.shape()
            )));
        }
    }
    let n = cache.count as f64;
    let mut grad_gamma = vec![0.0; ch];
    let mut grad_beta = vec![0.0; ch];
    for (g, h) in upstream.iter().zip(&cache.xhat) {
        for (c, (g_row, h_row)) in g.rows().zip(h.rows()).enumerate() {
            grad_beta[c] += g_row.iter().sum::<f64>();
            grad_gamma[c] += g_row.iter().zip(h_row).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    // dL/dxhat = g * gamma, so the two batch reductions are gamma * grad_beta
    // and gamma * grad_gamma.
    let input = upstream
        .iter()
        .zip(&cache.xhat)
        .map(|(g, h)| {
            let len = g.dim(1);
            let mut dx = g.clone();
            for c in 0..ch {
                let k = gamma[c] * cache.inv_std[c] / n;
                let sum_d = grad_beta[c];
                let sum_dh = grad_gamma[c];
                let range = c * len..(c + 1) * len;
                for (d, &hv) in dx.data_mut()[range.clone()].iter_mut().zip(&h.data()[range]) {
                    *d = k * (n * *d - sum_d - hv * sum_dh);
                }
            }
            dx
        })
        .collect();
    Ok(BnGrads {
        input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values_map_to_plus_minus_one() {
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 2.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let (y, _) = batchnorm_forward(&[x], &[1.0], &[0.0], &mut stats, Mode::Train, 0).unwrap();
        assert!((y[0].data()[0] + 1.0).abs() < 1e-3);
        assert!((y[0].data()[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::from_vec(&[1, 4], vec![3.0; 4]).unwrap();
        let mut stats = RunningStats::new(1);
        let (y, _) = batchnorm_forward(&[x], &[1.0], &[0.0], &mut stats, Mode::Train, 0).unwrap();
        assert!(y[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_before_train_is_error() {
        let x = Tensor::zeros(&[2, 3]);
        let mut stats = RunningStats::new(2);
        let err = batchnorm_forward(&[x], &[1.0; 2], &[0.0; 2], &mut stats, Mode::Infer, 7).unwrap_err();
        assert!(matches!(err, Error::UninitializedStats { layer: 7 }));
    }

    #[test]
    fn single_value_train_is_rejected() {
        let x = Tensor::zeros(&[1, 1]);
        let mut stats = RunningStats::new(1);
        assert!(batchnorm_forward(&[x], &[1.0], &[0.0], &mut stats, Mode::Train, 0).is_err());
    }

    #[test]
    fn running_stats_first_copy_then_blend() {
        let mut stats = RunningStats::new(1);
        let a = Tensor::from_vec(&[1, 2], vec![0.0, 2.0]).unwrap();
        batchnorm_forward(&[a], &[1.0], &[0.0], &mut stats, Mode::Train, 0).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.var, vec![1.0]);
        let b = Tensor::from_vec(&[1, 2], vec![10.0, 10.0]).unwrap();
        batchnorm_forward(&[b], &[1.0], &[0.0], &mut stats, Mode::Train, 0).unwrap();
        assert!((stats.mean[0] - 1.9).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn grad_beta_is_upstream_sum() {
        let x = vec![
            Tensor::from_vec(&[2, 3], vec![0.1, 0.5, -0.3, 2.0, 1.0, 0.0]).unwrap(),
            Tensor::from_vec(&[2, 2], vec![1.1, -0.4, 0.7, 0.2]).unwrap(),
        ];
        let mut stats = RunningStats::new(2);
        let gamma = [1.5, 0.5];
        let (_, cache) = batchnorm_forward(&x, &gamma, &[0.0, 0.1], &mut stats, Mode::Train, 0).unwrap();
        let up = vec![
            Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 2.0, 2.0]).unwrap(),
        ];
        let g = batchnorm_backward(&up, &cache.unwrap(), &gamma).unwrap();
        assert!((g.beta[0] - 7.0).abs() < 1e-12);
        assert!((g.beta[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let x = vec![Tensor::from_vec(&[1, 3], vec![0.1, 0.5, -0.3]).unwrap()];
        let mut stats = RunningStats::new(1);
        let (_, cache) = batchnorm_forward(&x, &[2.0], &[0.0], &mut stats, Mode::Train, 0).unwrap();
        let g = batchnorm_backward(&[Tensor::zeros(&[1, 3])], &cache.unwrap(), &[2.0]).unwrap();
        assert!(g.input[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(g.gamma, vec![0.0]);
        assert_eq!(g.beta, vec![0.0]);
    }
}
