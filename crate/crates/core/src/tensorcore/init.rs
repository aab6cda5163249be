use rand::Rng as _;

use super::rng::Rng;
use super::Tensor;

/// Uniform on `±√(6 / (fan_in + fan_out))`, shaped `fan_in × fan_out`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
        .collect();
    Tensor {
        shape: [fan_in, fan_out],
        data,
    }
}

/// `rows × cols` matrix with orthonormal columns (`cols ≤ rows`), from
/// Gram–Schmidt on uniform noise.
pub fn orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    assert!(cols <= rows, "need cols <= rows for orthonormal columns");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        // two passes keep the columns orthogonal to rounding precision
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut t = Tensor::zeros(rows, cols);
    for (j, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            t.data[i * cols + j] = x;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::rng::seeded;

    #[test]
    fn glorot_respects_bound() {
        let w = glorot_uniform(174, 32, &mut seeded(1));
        let bound = (6.0f64 / 206.0).sqrt();
        assert!(w.data.iter().all(|x| x.abs() <= bound));
        assert_eq!(w.shape, [174, 32]);
    }

    #[test]
    fn orthonormal_columns_are_orthonormal() {
        let q = orthonormal_columns(256, 32, &mut seeded(3));
        let gram = q.transpose().matmul(&q).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }
}
