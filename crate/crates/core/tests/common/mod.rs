//! Independent reference implementations and instance generators shared by
//! the integration tests. Nothing here calls into the code under test
//! except to build inputs.

#![allow(dead_code, clippy::needless_range_loop)]

use kda_core::gram::FeatureBlock;
use kda_core::landmarks::{landmarks_from_columns, LandmarkSet};
use kda_core::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale]`.
pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn block(m: Matrix) -> FeatureBlock {
    FeatureBlock::new(m, "t").unwrap()
}

/// Triple-loop `AᵀB`.
pub fn naive_tr_matmul(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols())
        .map(|i| {
            (0..b.cols())
                .map(|j| (0..a.rows()).map(|r| a[(r, i)] * b[(r, j)]).sum())
                .collect()
        })
        .collect()
}

pub fn frob(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frob_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Orthonormal basis of the column span of `d` by modified Gram-Schmidt
/// (columns whose residual falls below `tol` are dropped).
pub fn orthonormal_span(d: &Matrix, tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..d.cols() {
        let mut v = d.column(j);
        for _ in 0..2 {
            for q in &basis {
                let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > tol {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    basis
}

/// `XᵀP_D X` with `P_D` the orthogonal projector onto span(D): the value the
/// full-rank Nyström reconstruction must equal.
pub fn projected_gram(x: &Matrix, d: &Matrix) -> Vec<Vec<f64>> {
    let basis = orthonormal_span(d, 1e-9);
    let coords: Vec<Vec<f64>> = (0..x.cols())
        .map(|i| {
            let xi = x.column(i);
            basis.iter().map(|q| q.iter().zip(&xi).map(|(a, b)| a * b).sum()).collect()
        })
        .collect();
    coords
        .iter()
        .map(|ci| coords.iter().map(|cj| ci.iter().zip(cj).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// Random `d × n` features of rank `r` (`r ≤ min(d, n)`).
pub fn low_rank(d: usize, n: usize, r: usize, rng: &mut impl Rng) -> Matrix {
    let a = uniform(d, r, 1.0, rng);
    let b = uniform(r, n, 1.0, rng);
    a.matmul(&b).unwrap()
}

/// Dataset-column landmarks that span the column space of `x`: greedily
/// picks columns that increase the rank, then pads with random others up to
/// `m`.
pub fn spanning_columns(x: &Matrix, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..x.cols()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    for &j in &order {
        if chosen.len() == m {
            break;
        }
        let mut cand = chosen.clone();
        cand.push(j);
        let rank = orthonormal_span(&x.select_columns(&cand).unwrap(), 1e-6).len();
        if rank == cand.len() {
            chosen = cand;
        }
    }
    for &j in &order {
        if chosen.len() == m {
            break;
        }
        if !chosen.contains(&j) {
            chosen.push(j);
        }
    }
    chosen
}

pub fn column_landmarks(x: &Matrix, cols: &[usize]) -> LandmarkSet {
    landmarks_from_columns(&block(x.clone()), cols).unwrap()
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_grad(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + h;
            let up = f(&probe);
            probe[(r, c)] = orig - h;
            let down = f(&probe);
            probe[(r, c)] = orig;
            g[(r, c)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    if scale == 0.0 {
        0.0
    } else {
        a.sub(b).unwrap().frobenius_norm() / scale
    }
}

/// Solves the symmetric positive-definite system `A x = b` by Cholesky.
pub fn cholesky_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let cols = b[0].len();
    let mut x = vec![vec![0.0; cols]; n];
    for c in 0..cols {
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i][c] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        for i in (0..n).rev() {
            x[i][c] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k][c]).sum::<f64>()) / l[i][i];
        }
    }
    x
}

/// One-vs-rest least-squares linear classifier with bias and a small ridge
/// term; returns test accuracy.
pub fn linear_probe_accuracy(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    classes: usize,
) -> f64 {
    let d = train_x.rows();
    let aug = |x: &Matrix, i: usize| {
        let mut v = x.column(i);
        v.push(1.0);
        v
    };
    let p = d + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![vec![0.0; classes]; p];
    for i in 0..train_x.cols() {
        let v = aug(train_x, i);
        for a in 0..p {
            for b in 0..p {
                xtx[a][b] += v[a] * v[b];
            }
            for c in 0..classes {
                xty[a][c] += v[a] * if train_y[i] == c { 1.0 } else { -1.0 };
            }
        }
    }
    for (a, row) in xtx.iter_mut().enumerate() {
        row[a] += 1e-6;
    }
    let w = cholesky_solve(&xtx, &xty);
    let hits = (0..test_x.cols())
        .filter(|&i| {
            let v = aug(test_x, i);
            let scores: Vec<f64> = (0..classes).map(|c| (0..p).map(|a| v[a] * w[a][c]).sum()).collect();
            let best = (0..classes).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            best == test_y[i]
        })
        .count();
    hits as f64 / test_y.len() as f64
}

/// Pearson correlation, two-pass.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

pub mod gradcheck {
    use super::*;
    use kda_core::losses::{
        cross_entropy_loss, kd_loss, kd_squared_logit_loss, kda_loss, kda_loss_weighted, rkd_batch_loss,
    };
    use kda_core::matrix::{pseudo_inverse_sqrt, DEFAULT_PINV_TOL};

    pub const STEP: f64 = 1e-5;
    pub const NAMES: [&str; 6] = ["kda", "kda_weighted", "kd", "kd_squared_logit", "rkd_batch", "cross_entropy"];

    /// Relative error between the analytic gradient and central differences
    /// for one random instance of loss `name`.
    pub fn check(name: &str, seed: u64) -> f64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=8);
        let d_s = r.random_range(1..=5);
        let d_t = r.random_range(1..=5);
        let m = r.random_range(1..=4);
        match name {
            "kda" | "kda_weighted" => {
                let x_s = uniform(d_s, n, 1.0, &mut r);
                let x_t = block(uniform(d_t, n, 1.0, &mut r));
                let l_s = LandmarkSet::from_points(uniform(d_s, m, 1.5, &mut r));
                let l_t = LandmarkSet::from_points(uniform(d_t, m, 1.5, &mut r));
                let weighting = pseudo_inverse_sqrt(&l_t.gram(), DEFAULT_PINV_TOL).unwrap();
                let eval = |x: &Matrix| {
                    if name == "kda" {
                        kda_loss(&block(x.clone()), &x_t, &l_s, &l_t).unwrap()
                    } else {
                        kda_loss_weighted(&block(x.clone()), &x_t, &l_s, &l_t, &weighting).unwrap()
                    }
                };
                relative_error(&eval(&x_s).grad, &numeric_grad(&x_s, STEP, |x| eval(x).value))
            }
            "kd" => {
                let l = r.random_range(2..=6);
                let z_s = uniform(l, n, 3.0, &mut r);
                let z_t = uniform(l, n, 3.0, &mut r);
                let temp = r.random_range(1.0..5.0);
                let eval = |x: &Matrix| kd_loss(x, &z_t, temp).unwrap();
                relative_error(&eval(&z_s).grad, &numeric_grad(&z_s, STEP, |x| eval(x).value))
            }
            "kd_squared_logit" => {
                let l = r.random_range(2..=6);
                let z_s = uniform(l, n, 3.0, &mut r);
                let z_t = uniform(l, n, 3.0, &mut r);
                let eval = |x: &Matrix| kd_squared_logit_loss(x, &z_t).unwrap();
                relative_error(&eval(&z_s).grad, &numeric_grad(&z_s, STEP, |x| eval(x).value))
            }
            "rkd_batch" => {
                let x_s = uniform(d_s, n, 1.0, &mut r);
                let x_t = block(uniform(d_t, n, 1.0, &mut r));
                let eval = |x: &Matrix| rkd_batch_loss(&block(x.clone()), &x_t).unwrap();
                relative_error(&eval(&x_s).grad, &numeric_grad(&x_s, STEP, |x| eval(x).value))
            }
            "cross_entropy" => {
                let l = r.random_range(2..=6);
                let z = uniform(l, n, 4.0, &mut r);
                let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..l)).collect();
                let eval = |x: &Matrix| cross_entropy_loss(x, &labels).unwrap();
                relative_error(&eval(&z).grad, &numeric_grad(&z, STEP, |x| eval(x).value))
            }
            other => panic!("unknown loss {other}"),
        }
    }

    /// Worst relative error over `instances` random instances.
    pub fn worst(name: &str, instances: u64) -> f64 {
        (0..instances).map(|i| check(name, 1000 * i + 17)).fold(0.0, f64::max)
    }
}
