//! Finite-difference checks of every hand-written backward pass.
//!
//! Each check builds a random scalar loss `sum(r * output)` over a kernel's
//! output, differentiates it analytically and by central differences, and
//! reports the largest relative error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::{ArchSpec, ResNetModel};
use crate::error::{Error, Result};
use crate::numeric::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, gap_backward, gap_forward,
    relu_backward, relu_forward, Mode, RunningStats, Tensor,
};
use crate::seed::rng_from_seed;
use crate::triplet::{enumerate_valid_triplets, triplet_loss, triplet_loss_grad, TripletLossConfig};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest `|a - n| / max(|a|, |n|, 1e-3 * max|n|)`. The last term keeps
/// near-zero coordinates from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn normal_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, normal_vec(len, rng)).expect("shape matches length")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Conv1d with respect to input, filters and bias.
pub fn check_conv(seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let (in_ch, out_ch, width, len) = (2, 3, 4, 9);
    let x = tensor(&[in_ch, len], &mut rng);
    let w = tensor(&[out_ch, in_ch, width], &mut rng);
    let b = normal_vec(out_ch, &mut rng);
    let r = tensor(&[out_ch, len], &mut rng);

    let g = conv1d_backward(&r, &x, &w)?;
    let analytic = concat(&[g.input.data(), g.filters.data(), &g.bias]);
    let (nx, nw) = (x.len(), w.len());
    let point = concat(&[x.data(), w.data(), &b]);
    let numeric = numeric_grad(
        |p| {
            let x = Tensor::from_vec(&[in_ch, len], p[..nx].to_vec())?;
            let w = Tensor::from_vec(&[out_ch, in_ch, width], p[nx..nx + nw].to_vec())?;
            Ok(dot(conv1d_forward(&x, &w, &p[nx + nw..])?.data(), r.data()))
        },
        &point,
        DEFAULT_STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Train-mode batch norm with respect to inputs, gamma and beta, through the
/// batch statistics. The batch mixes series lengths.
pub fn check_batchnorm(seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let ch = 3;
    let lens = [5, 7, 6];
    let xs: Vec<Tensor> = lens.iter().map(|&l| tensor(&[ch, l], &mut rng)).collect();
    let gamma: Vec<f64> = (0..ch).map(|_| rng.random_range(0.5..1.5)).collect();
    let beta = normal_vec(ch, &mut rng);
    let rs: Vec<Tensor> = lens.iter().map(|&l| tensor(&[ch, l], &mut rng)).collect();

    let mut stats = RunningStats::new(ch);
    let (_, cache) = batchnorm_forward(&xs, &gamma, &beta, &mut stats, Mode::Train, 0)?;
    let cache = cache.ok_or_else(|| Error::Usage("train-mode batch norm returned no cache".into()))?;
    let g = batchnorm_backward(&rs, &cache, &gamma)?;
    let mut analytic: Vec<f64> = g.input.iter().flat_map(|t| t.data().iter().copied()).collect();
    analytic.extend(&g.gamma);
    analytic.extend(&g.beta);

    let mut point: Vec<f64> = xs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let n_x = point.len();
    point.extend(&gamma);
    point.extend(&beta);
    let numeric = numeric_grad(
        |p| {
            let mut offset = 0;
            let mut batch = Vec::new();
            for &l in &lens {
                batch.push(Tensor::from_vec(&[ch, l], p[offset..offset + ch * l].to_vec())?);
                offset += ch * l;
            }
            let mut stats = RunningStats::new(ch);
            let (ys, _) = batchnorm_forward(&batch, &p[n_x..n_x + ch], &p[n_x + ch..], &mut stats, Mode::Train, 0)?;
            Ok(ys.iter().zip(&rs).map(|(y, r)| dot(y.data(), r.data())).sum())
        },
        &point,
        DEFAULT_STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// ReLU followed by global average pooling. Inputs stay away from the kink.
pub fn check_relu_gap(seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let (ch, len) = (3, 8);
    let data: Vec<f64> = (0..ch * len)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    let x = Tensor::from_vec(&[ch, len], data)?;
    let r = normal_vec(ch, &mut rng);

    let pooled_grad = gap_backward(&r, len);
    let analytic = relu_backward(&pooled_grad, &x)?;
    let numeric = numeric_grad(
        |p| {
            let x = Tensor::from_vec(&[ch, len], p.to_vec())?;
            Ok(dot(&gap_forward(&relu_forward(&x))?, &r))
        },
        x.data(),
        DEFAULT_STEP,
    )?;
    Ok(max_relative_error(analytic.data(), &numeric))
}

/// Triplet loss with respect to the embeddings.
pub fn check_triplet(seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let labels = [0, 0, 1, 1, 2, 0];
    let dim = 4;
    let z = tensor(&[labels.len(), dim], &mut rng);
    let triplets = enumerate_valid_triplets(&labels);
    let cfg = TripletLossConfig::with_alpha(0.5);
    let analytic = triplet_loss_grad(&z, &triplets, &cfg)?;
    let numeric = numeric_grad(
        |p| Ok(triplet_loss(&Tensor::from_vec(&[labels.len(), dim], p.to_vec())?, &triplets, &cfg)?.loss),
        z.data(),
        DEFAULT_STEP,
    )?;
    Ok(max_relative_error(analytic.data(), &numeric))
}

/// Triplet loss of a freshly built network over a random batch, with respect
/// to every parameter.
pub fn check_end_to_end(spec: &ArchSpec, batch: usize, len: usize, seed: u64) -> Result<f64> {
    if batch < 3 {
        return Err(Error::Usage("an end-to-end check needs a batch of at least 3".into()));
    }
    let mut rng = rng_from_seed(seed);
    let model = ResNetModel::build(spec.clone(), &mut rng)?;
    let series: Vec<Vec<f64>> = (0..batch).map(|_| normal_vec(len, &mut rng)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i * 2 / batch).collect();
    let triplets = enumerate_valid_triplets(&labels);
    let cfg = TripletLossConfig::with_alpha(0.5);

    let mut m = model.clone();
    let (z, cache) = m.forward_train(&series)?;
    let upstream = triplet_loss_grad(&z, &triplets, &cfg)?;
    let analytic = m.backward_batch(&cache, &upstream)?;

    let layout = model.params().layout().clone();
    let numeric = numeric_grad(
        |p| {
            let mut probe = model.clone();
            probe.set_params(crate::numeric::ParamSet::from_values(layout.clone(), p.to_vec())?)?;
            let (z, _) = probe.forward_train(&series)?;
            Ok(triplet_loss(&z, &triplets, &cfg)?.loss)
        },
        model.params().values(),
        DEFAULT_STEP,
    )?;
    Ok(max_relative_error(analytic.values(), &numeric))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub conv: f64,
    pub batchnorm: f64,
    pub relu_gap: f64,
    pub triplet: f64,
    pub end_to_end: f64,
}

impl GradCheckReport {
    pub fn max_kernel(&self) -> f64 {
        self.conv.max(self.batchnorm).max(self.relu_gap).max(self.triplet)
    }
}

/// All kernel checks plus the whole network at `spec` on a batch of 4 series
/// of length 8.
pub fn run_all(spec: &ArchSpec, seed: u64) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        conv: check_conv(seed)?,
        batchnorm: check_batchnorm(seed)?,
        relu_gap: check_relu_gap(seed)?,
        triplet: check_triplet(seed)?,
        end_to_end: check_end_to_end(spec, 4, 8, seed)?,
    })
}
