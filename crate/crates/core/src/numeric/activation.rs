use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient passes where the cached pre-activation is strictly positive.
pub fn relu_backward(upstream: &Tensor, pre_activation: &Tensor) -> Result<Tensor> {
    if upstream.shape() != pre_activation.shape() {
        return Err(Error::Shape(format!(
            "relu backward: upstream {:?} vs cached {:?}",
            upstream.shape(),
            pre_activation.shape()
        )));
    }
    let mut g = upstream.clone();
    relu_mask_in_place(g.data_mut(), pre_activation.data());
    Ok(g)
}

pub(crate) fn relu_mask_in_place(grad: &mut [f64], pre_activation: &[f64]) {
    for (g, &p) in grad.iter_mut().zip(pre_activation) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Per-channel mean over time: `[ch, T] -> [ch]`.
pub fn gap_forward(x: &Tensor) -> Result<Vec<f64>> {
    x.expect_rank(2, "gap input")?;
    let len = x.dim(1);
    if len == 0 {
        return Err(Error::Shape("gap over an empty time axis".into()));
    }
    Ok(x.rows().map(|row| row.iter().sum::<f64>() / len as f64).collect())
}

/// Spreads `upstream[c] / T` over every time step of channel `c`.
pub fn gap_backward(upstream: &[f64], len: usize) -> Tensor {
    let ch = upstream.len();
    let mut g = Tensor::zeros(&[ch, len]);
    for (c, &u) in upstream.iter().enumerate() {
        g.row_mut(c).fill(u / len as f64);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let y = relu_forward(&Tensor::signal(&[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let g = relu_backward(&Tensor::signal(&[1.0, 1.0, 1.0]), &Tensor::signal(&[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gap_mean() {
        assert_eq!(gap_forward(&Tensor::signal(&[1.0, 2.0, 3.0])).unwrap(), vec![2.0]);
    }

    #[test]
    fn gap_backward_spreads_evenly() {
        let g = gap_backward(&[3.0, -6.0], 3);
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, -2.0, -2.0, -2.0]);
    }
}
