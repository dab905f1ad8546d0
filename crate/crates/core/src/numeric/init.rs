use rand::Rng;
use rand_distr::StandardNormal;

use crate::numeric::Tensor;

/// Random orthogonal initialization.
///
/// The tensor is viewed as a `shape[0] x prod(shape[1..])` matrix. Wide
/// matrices get orthonormal rows, tall ones orthonormal columns.
pub fn orthogonal_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let rows = shape.first().copied().unwrap_or(1);
    let cols: usize = shape.iter().skip(1).product();
    let (n, dim) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut q: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    orthonormalize_rows(&mut q, n, dim);

    let data = if rows <= cols {
        q
    } else {
        let mut t = vec![0.0; rows * cols];
        for i in 0..n {
            for j in 0..dim {
                t[j * cols + i] = q[i * dim + j];
            }
        }
        t
    };
    Tensor::from_vec(shape, data).expect("orthogonal_init preserves the element count")
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize_rows(q: &mut [f64], n: usize, dim: usize) {
    for i in 0..n {
        for _ in 0..2 {
            for j in 0..i {
                let (done, rest) = q.split_at_mut(i * dim);
                let prev = &done[j * dim..(j + 1) * dim];
                let cur = &mut rest[..dim];
                let proj: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
                for (c, p) in cur.iter_mut().zip(prev) {
                    *c -= proj * p;
                }
            }
        }
        let row = &mut q[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A Gaussian row landing in the span of its predecessors has probability zero.
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram(m: &Tensor, rows: usize, cols: usize, by_rows: bool) -> Vec<f64> {
        let d = m.data();
        let n = if by_rows { rows } else { cols };
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                g[a * n + b] = if by_rows {
                    (0..cols).map(|k| d[a * cols + k] * d[b * cols + k]).sum()
                } else {
                    (0..rows).map(|k| d[k * cols + a] * d[k * cols + b]).sum()
                };
            }
        }
        g
    }

    #[test]
    fn scalar_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = orthogonal_init(&[1, 1, 1], &mut rng);
        assert!((t.data()[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wide_rows_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = orthogonal_init(&[4, 2, 4], &mut rng);
        let g = gram(&t, 4, 8, true);
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g[a * 4 + b] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tall_columns_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = orthogonal_init(&[33, 1, 4], &mut rng);
        let g = gram(&t, 33, 4, false);
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g[a * 4 + b] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = orthogonal_init(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(9));
        let b = orthogonal_init(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
