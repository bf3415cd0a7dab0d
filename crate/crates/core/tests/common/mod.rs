//! Independent reference implementations used as test oracles. Nothing here
//! calls into the model code it checks.

#![allow(dead_code)]

use fedcl_core::data::{Dataset, N_FEATURES, N_LABELS};
use fedcl_core::nn::{Activation, Architecture, Matrix, MlpModel, ParameterVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A model with every slot random, running variances kept positive.
pub fn random_model(rng: &mut impl Rng, activation: Activation) -> MlpModel {
    let arch = Architecture {
        activation,
        ..Architecture::default()
    };
    let layout = arch.layout();
    let mut values: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for slot in layout.slots() {
        if slot.role == fedcl_core::nn::TensorRole::RunningVar {
            for k in slot.range.clone() {
                values[k] = rng.random_range(0.2..2.0);
            }
        }
    }
    MlpModel::from_params(arch, &ParameterVector::new(values, layout).unwrap()).unwrap()
}

/// Straight-line forward pass of the default architecture, reading the flat
/// vector in its documented order: per linear layer W (row-major, out x in)
/// then b; per BN layer gamma, beta, running mean, running var.
pub fn reference_forward(params: &[f64], x: &Matrix, train: bool, relu: bool) -> Vec<Vec<f64>> {
    let widths = [29usize, 16, 16, 8];
    let eps = 1e-5;
    let mut off = 0;
    let mut take = |n: usize| {
        let s = &params[off..off + n];
        off += n;
        s.to_vec()
    };
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for layer in 0..3 {
        let (nin, nout) = (widths[layer], widths[layer + 1]);
        let w = take(nin * nout);
        let b = take(nout);
        h = h
            .iter()
            .map(|row| {
                (0..nout)
                    .map(|o| {
                        let mut acc = 0.0;
                        for i in 0..nin {
                            acc += w[o * nin + i] * row[i];
                        }
                        acc + b[o]
                    })
                    .collect()
            })
            .collect();
        if layer == 2 {
            break;
        }
        let gamma = take(nout);
        let beta = take(nout);
        let rmean = take(nout);
        let rvar = take(nout);
        let n = h.len() as f64;
        for j in 0..nout {
            let (mean, var) = if train {
                let m = h.iter().map(|r| r[j]).sum::<f64>() / n;
                let v = h.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
                (m, v)
            } else {
                (rmean[j], rvar[j])
            };
            for r in h.iter_mut() {
                let z = gamma[j] * (r[j] - mean) / (var + eps).sqrt() + beta[j];
                r[j] = if relu { z.max(0.0) } else { z };
            }
        }
    }
    h
}

/// Mean squared error over all entries.
pub fn reference_mse(pred: &[Vec<f64>], target: &Matrix) -> f64 {
    let mut s = 0.0;
    for (r, row) in pred.iter().enumerate() {
        for (c, p) in row.iter().enumerate() {
            let d = p - target.get(r, c);
            s += d * d;
        }
    }
    s / (pred.len() * target.cols()) as f64
}

/// Central difference of `f` at every coordinate of `theta`.
pub fn central_differences(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + h;
            let up = f(&work);
            work[i] = orig - h;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps coordinates whose true
/// derivative is (near) zero from turning round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Solves `a x = b` for square `a` by Gaussian elimination with partial
/// pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ordinary least squares with intercept, one fit per label:
/// returns `coef[label] = [w_0 .. w_28, intercept]`.
pub fn least_squares(ds: &Dataset) -> Vec<Vec<f64>> {
    let p = N_FEATURES + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![vec![0.0; p]; N_LABELS];
    for s in &ds.samples {
        let mut row = s.features.to_vec();
        row.push(1.0);
        for i in 0..p {
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
            for (l, y) in s.labels.iter().enumerate() {
                xty[l][i] += row[i] * y;
            }
        }
    }
    xty.into_iter().map(|rhs| solve(xtx.clone(), rhs)).collect()
}

/// Test MSE of the least-squares predictor fitted on `train`.
pub fn least_squares_test_mse(train: &Dataset, test: &Dataset) -> f64 {
    let coef = least_squares(train);
    let mut s = 0.0;
    for smp in &test.samples {
        for (l, c) in coef.iter().enumerate() {
            let pred: f64 = smp.features.iter().zip(c).map(|(x, w)| x * w).sum::<f64>() + c[N_FEATURES];
            let d = pred - smp.labels[l];
            s += d * d;
        }
    }
    s / (test.len() * N_LABELS) as f64
}

/// Pearson correlation by the textbook two-pass formula, accumulated with
/// compensated (Kahan) sums.
pub fn reference_pcc(x: &[f64], y: &[f64]) -> f64 {
    let kahan = |it: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for v in it {
            let y = v - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    };
    let n = x.len() as f64;
    let mx = kahan(&mut x.iter().copied()) / n;
    let my = kahan(&mut y.iter().copied()) / n;
    let sxy = kahan(&mut x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = kahan(&mut x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = kahan(&mut y.iter().map(|b| (b - my) * (b - my)));
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Elementwise mean by pairwise (tree) summation.
pub fn pairwise_mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    fn sum(vs: &[Vec<f64>], k: usize) -> f64 {
        match vs.len() {
            1 => vs[0][k],
            n => sum(&vs[..n / 2], k) + sum(&vs[n / 2..], k),
        }
    }
    (0..vectors[0].len())
        .map(|k| sum(vectors, k) / vectors.len() as f64)
        .collect()
}
