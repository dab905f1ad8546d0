//! Batch-all triplet mining and the hinge triplet loss on squared Euclidean
//! distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TripletIndex {
    pub a: usize,
    pub p: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletLossConfig {
    pub alpha: f64,
    /// Divide the summed loss by the number of triplets.
    #[serde(default)]
    pub mean_reduction: bool,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            mean_reduction: false,
        }
    }
}

impl TripletLossConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("triplet margin must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Every `(a, p, n)` with `a != p`, `label[a] == label[p]` and
/// `label[n] != label[a]`, in lexicographic order.
pub fn enumerate_valid_triplets<L: PartialEq>(labels: &[L]) -> Vec<TripletIndex> {
    let mut out = Vec::new();
    for a in 0..labels.len() {
        for p in 0..labels.len() {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..labels.len() {
                if labels[n] != labels[a] {
                    out.push(TripletIndex { a, p, n });
                }
            }
        }
    }
    out
}

/// True when the labels admit at least one valid triplet.
pub fn has_triplet<L: PartialEq>(labels: &[L]) -> bool {
    let has_pair = (0..labels.len()).any(|i| (i + 1..labels.len()).any(|j| labels[i] == labels[j]));
    let has_two_classes = labels.iter().any(|l| *l != labels[0]);
    has_pair && has_two_classes
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn hinge(z: &Tensor, t: &TripletIndex, alpha: f64) -> f64 {
    sq_dist(z.row(t.a), z.row(t.p)) - sq_dist(z.row(t.a), z.row(t.n)) + alpha
}

fn check(z: &Tensor, triplets: &[TripletIndex]) -> Result<()> {
    z.expect_rank(2, "embeddings")?;
    let rows = z.dim(0);
    if let Some(t) = triplets.iter().find(|t| t.a >= rows || t.p >= rows || t.n >= rows) {
        return Err(Error::Shape(format!("triplet {t:?} indexes past {rows} embeddings")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    /// Triplets with a strictly positive hinge.
    pub violations: usize,
}

pub fn triplet_loss(z: &Tensor, triplets: &[TripletIndex], config: &TripletLossConfig) -> Result<TripletLoss> {
    check(z, triplets)?;
    let mut loss = 0.0;
    let mut violations = 0;
    for t in triplets {
        let h = hinge(z, t, config.alpha);
        if h > 0.0 {
            loss += h;
            violations += 1;
        }
    }
    if config.mean_reduction && !triplets.is_empty() {
        loss /= triplets.len() as f64;
    }
    Ok(TripletLoss { loss, violations })
}

/// Subgradient of [`triplet_loss`] with respect to the embeddings. Triplets
/// exactly on the hinge boundary contribute nothing.
pub fn triplet_loss_grad(z: &Tensor, triplets: &[TripletIndex], config: &TripletLossConfig) -> Result<Tensor> {
    check(z, triplets)?;
    let dim = z.dim(1);
    let mut grad = Tensor::zeros(z.shape());
    let scale = if config.mean_reduction && !triplets.is_empty() {
        1.0 / triplets.len() as f64
    } else {
        1.0
    };
    for t in triplets {
        if hinge(z, t, config.alpha) <= 0.0 {
            continue;
        }
        for k in 0..dim {
            let (za, zp, zn) = (z.row(t.a)[k], z.row(t.p)[k], z.row(t.n)[k]);
            let g = grad.data_mut();
            g[t.a * dim + k] += scale * 2.0 * (zn - zp);
            g[t.p * dim + k] += scale * 2.0 * (zp - za);
            g[t.n * dim + k] += scale * 2.0 * (za - zn);
        }
    }
    Ok(grad)
}
