use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Mean squared error averaged over the batch per output column, then over
/// columns. Returns `(scalar, per_column)`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Vec<f64>)> {
    check_same_shape(pred, target)?;
    let (rows, cols) = (pred.rows(), pred.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyDataset("mse_loss"));
    }
    let mut per_col = vec![0.0; cols];
    for r in 0..rows {
        for ((acc, p), t) in per_col.iter_mut().zip(pred.row(r)).zip(target.row(r)) {
            let d = p - t;
            *acc += d * d;
        }
    }
    for v in &mut per_col {
        *v /= rows as f64;
    }
    let scalar = per_col.iter().sum::<f64>() / cols as f64;
    Ok((scalar, per_col))
}

/// Gradient of [`mse_loss`]'s scalar with respect to `pred`.
pub fn mse_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    check_same_shape(pred, target)?;
    let scale = 2.0 / (pred.rows() * pred.cols()) as f64;
    let data = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Matrix::from_vec(pred.rows(), pred.cols(), data)
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "mse",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_inputs_give_zero() {
        let m = Matrix::from_vec(2, 8, (0..16).map(f64::from).collect()).unwrap();
        let (s, per) = mse_loss(&m, &m).unwrap();
        assert_eq!(s, 0.0);
        assert!(per.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_unit_error_in_first_column() {
        let pred = Matrix::from_vec(1, 8, vec![1., 0., 0., 0., 0., 0., 0., 0.]).unwrap();
        let target = Matrix::zeros(1, 8);
        let (s, per) = mse_loss(&pred, &target).unwrap();
        assert_eq!(per, vec![1., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(s, 0.125);
    }

    #[test]
    fn matches_elementwise_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = Matrix::from_vec(13, 8, (0..104).map(|_| rng.random_range(-3.0..3.0)).collect())
            .unwrap();
        let target =
            Matrix::from_vec(13, 8, (0..104).map(|_| rng.random_range(-3.0..3.0)).collect())
                .unwrap();
        let (s, per) = mse_loss(&pred, &target).unwrap();
        let mut total = 0.0;
        for c in 0..8 {
            let mut acc = 0.0;
            for r in 0..13 {
                acc += (pred.get(r, c) - target.get(r, c)).powi(2);
            }
            assert!((per[c] - acc / 13.0).abs() <= 1e-12);
            total += acc / 13.0;
        }
        assert!((s - total / 8.0).abs() <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(mse_loss(&Matrix::zeros(2, 8), &Matrix::zeros(3, 8)).is_err());
    }
}
