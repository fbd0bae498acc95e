use crate::error::{LabError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random semi-orthogonal matrix.
///
/// Gaussian columns are orthonormalised with two passes of modified
/// Gram-Schmidt. For `rows >= cols` the columns are orthonormal
/// (`MᵀM = I`); otherwise the transpose is built so that the rows are
/// (`MMᵀ = I`).
pub fn orthogonal_init(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(LabError::Contract(format!(
            "orthogonal_init needs positive sizes, got {rows}x{cols}"
        )));
    }
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // Column-major scratch: `short` columns of length `tall`.
    let mut cols_v: Vec<Vec<f64>> = Vec::with_capacity(short);
    while cols_v.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| rng.normal()).collect();
        for _pass in 0..2 {
            for q in &cols_v {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A draw that is numerically dependent on the previous columns is
        // discarded and redrawn.
        if norm < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols_v.push(v);
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    for (j, col) in cols_v.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if rows >= cols {
                out.set2(i, j, v);
            } else {
                out.set2(j, i, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{matmul, matmul_nt, matmul_tn};

    fn max_dev_from_identity(g: &Tensor) -> f64 {
        let (n, _) = g.dims2().unwrap();
        g.max_abs_diff(&Tensor::eye(n)).unwrap()
    }

    #[test]
    fn unit_scalar() {
        let m = orthogonal_init(1, 1, &mut Rng::new(0)).unwrap();
        assert!((m.data()[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn square_is_orthogonal() {
        let m = orthogonal_init(100, 100, &mut Rng::new(1)).unwrap();
        assert!(max_dev_from_identity(&matmul_tn(&m, &m).unwrap()) < 1e-8);
        assert!(max_dev_from_identity(&matmul(&m, &m.transpose().unwrap()).unwrap()) < 1e-8);
    }

    #[test]
    fn tall_has_orthonormal_columns() {
        let m = orthogonal_init(100, 2, &mut Rng::new(2)).unwrap();
        let c0: Vec<f64> = (0..100).map(|i| m.get2(i, 0)).collect();
        let c1: Vec<f64> = (0..100).map(|i| m.get2(i, 1)).collect();
        let dot: f64 = c0.iter().zip(&c1).map(|(a, b)| a * b).sum();
        let n0: f64 = c0.iter().map(|a| a * a).sum();
        let n1: f64 = c1.iter().map(|a| a * a).sum();
        assert!(dot.abs() < 1e-8);
        assert!((n0 - 1.0).abs() < 1e-8 && (n1 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn wide_has_orthonormal_rows() {
        let m = orthogonal_init(2, 100, &mut Rng::new(3)).unwrap();
        assert!(max_dev_from_identity(&matmul_nt(&m, &m).unwrap()) < 1e-8);
    }

    #[test]
    fn zero_size_rejected() {
        assert!(orthogonal_init(0, 3, &mut Rng::new(0)).is_err());
    }
}
