//! Same-length 1-D convolution.
//!
//! Zero padding puts `ceil((f-1)/2)` zeros on the left and `floor((f-1)/2)` on
//! the right, so filters of every width produce outputs of the input's length
//! and can be concatenated along the channel axis.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// `(left, right)` zero padding for a filter of `width` taps.
pub fn same_padding(width: usize) -> (usize, usize) {
    (width / 2, width.saturating_sub(1) / 2)
}

/// Index range of output positions `t` for which `t + shift` lands inside the input.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = if shift < 0 { (-shift) as usize } else { 0 };
    let hi = if shift > 0 {
        len.saturating_sub(shift as usize)
    } else {
        len
    };
    (lo.min(hi), hi)
}

/// Slice kernel behind [`conv1d_forward`]. `out` is `[out_ch, len]` and is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_forward_into(
    x: &[f64],
    in_ch: usize,
    len: usize,
    w: &[f64],
    out_ch: usize,
    width: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), in_ch * len);
    debug_assert_eq!(w.len(), out_ch * in_ch * width);
    debug_assert_eq!(out.len(), out_ch * len);
    let pad_left = (width / 2) as isize;
    for o in 0..out_ch {
        let out_row = &mut out[o * len..(o + 1) * len];
        out_row.fill(bias[o]);
        for c in 0..in_ch {
            let x_row = &x[c * len..(c + 1) * len];
            let taps = &w[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
            for (d, &tap) in taps.iter().enumerate() {
                if tap == 0.0 {
                    continue;
                }
                let shift = d as isize - pad_left;
                let (lo, hi) = valid_range(len, shift);
                if lo >= hi {
                    continue;
                }
                let src_lo = (lo as isize + shift) as usize;
                let src = &x_row[src_lo..src_lo + (hi - lo)];
                for (y, &v) in out_row[lo..hi].iter_mut().zip(src) {
                    *y += tap * v;
                }
            }
        }
    }
}

/// Slice kernel behind [`conv1d_backward`]. All three gradient buffers are
/// accumulated into; `grad_x` may be `None` when the input gradient is not needed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward_into(
    upstream: &[f64],
    x: &[f64],
    in_ch: usize,
    len: usize,
    w: &[f64],
    out_ch: usize,
    width: usize,
    grad_x: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let pad_left = (width / 2) as isize;
    if let Some(gb) = grad_b {
        for o in 0..out_ch {
            gb[o] += upstream[o * len..(o + 1) * len].iter().sum::<f64>();
        }
    }
    if let Some(gw) = grad_w {
        for o in 0..out_ch {
            let g_row = &upstream[o * len..(o + 1) * len];
            for c in 0..in_ch {
                let x_row = &x[c * len..(c + 1) * len];
                let base = (o * in_ch + c) * width;
                for d in 0..width {
                    let shift = d as isize - pad_left;
                    let (lo, hi) = valid_range(len, shift);
                    if lo >= hi {
                        continue;
                    }
                    let src_lo = (lo as isize + shift) as usize;
                    let src = &x_row[src_lo..src_lo + (hi - lo)];
                    let dot: f64 = g_row[lo..hi].iter().zip(src).map(|(g, v)| g * v).sum();
                    gw[base + d] += dot;
                }
            }
        }
    }
    if let Some(gx) = grad_x {
        for o in 0..out_ch {
            let g_row = &upstream[o * len..(o + 1) * len];
            for c in 0..in_ch {
                let gx_row = &mut gx[c * len..(c + 1) * len];
                let taps = &w[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
                for (d, &tap) in taps.iter().enumerate() {
                    if tap == 0.0 {
                        continue;
                    }
                    let shift = d as isize - pad_left;
                    let (lo, hi) = valid_range(len, shift);
                    if lo >= hi {
                        continue;
                    }
                    let dst_lo = (lo as isize + shift) as usize;
                    let dst = &mut gx_row[dst_lo..dst_lo + (hi - lo)];
                    for (acc, &g) in dst.iter_mut().zip(&g_row[lo..hi]) {
                        *acc += tap * g;
                    }
                }
            }
        }
    }
}

fn check_shapes(input: &Tensor, filters: &Tensor) -> Result<(usize, usize, usize, usize)> {
    input.expect_rank(2, "conv1d input")?;
    filters.expect_rank(3, "conv1d filters")?;
    let (in_ch, len) = (input.dim(0), input.dim(1));
    let (out_ch, f_in, width) = (filters.dim(0), filters.dim(1), filters.dim(2));
    if f_in != in_ch {
        return Err(Error::Config(format!(
            "conv1d: input has {in_ch} channels but filters expect {f_in}"
        )));
    }
    if width == 0 {
        return Err(Error::Config("conv1d: filter width must be at least 1".into()));
    }
    Ok((in_ch, len, out_ch, width))
}

/// Same-length convolution of `input [in_ch, T]` with `filters [out_ch, in_ch, f]`.
pub fn conv1d_forward(input: &Tensor, filters: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (in_ch, len, out_ch, width) = check_shapes(input, filters)?;
    if bias.len() != out_ch {
        return Err(Error::Shape(format!(
            "conv1d: bias has {} entries for {out_ch} filters",
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[out_ch, len]);
    conv1d_forward_into(
        input.data(),
        in_ch,
        len,
        filters.data(),
        out_ch,
        width,
        bias,
        out.data_mut(),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Vec<f64>,
}

/// Exact reverse-mode of [`conv1d_forward`] given the forward input.
pub fn conv1d_backward(upstream: &Tensor, input: &Tensor, filters: &Tensor) -> Result<Conv1dGrads> {
    let (in_ch, len, out_ch, width) = check_shapes(input, filters)?;
    if upstream.shape() != [out_ch, len] {
        return Err(Error::Shape(format!(
            "conv1d backward: upstream {:?} does not match output [{out_ch}, {len}]",
            upstream.shape()
        )));
    }
    let mut grads = Conv1dGrads {
        input: Tensor::zeros(&[in_ch, len]),
        filters: Tensor::zeros(filters.shape()),
        bias: vec![0.0; out_ch],
    };
    conv1d_backward_into(
        upstream.data(),
        input.data(),
        in_ch,
        len,
        filters.data(),
        out_ch,
        width,
        Some(grads.input.data_mut()),
        Some(grads.filters.data_mut()),
        Some(&mut grads.bias),
    );
    Ok(grads)
}
