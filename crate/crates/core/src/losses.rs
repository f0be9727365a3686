//! Training losses with analytic gradients.
//!
//! Every distillation loss differentiates only with respect to the student
//! tensor; teacher tensors and landmarks are constants. Layout follows
//! [`FeatureBlock`]: features `d × n`, logits `L × n`.

use serde::{Deserialize, Serialize};

use crate::error::{KdaError, Result};
use crate::gram::{gram, partial_gram, FeatureBlock};
use crate::landmarks::LandmarkSet;
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Weights of the distillation terms added to cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub kda_before_fc: f64,
    pub kda_after_fc: f64,
    pub kd: f64,
    pub rkd: f64,
    pub kd_temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kda_before_fc: 0.0,
            kda_after_fc: 0.0,
            kd: 0.0,
            rkd: 0.0,
            kd_temperature: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.kda_before_fc, self.kda_after_fc, self.kd, self.rkd];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(KdaError::Config(format!("loss weights must be finite and ≥ 0: {self:?}")));
        }
        if !(self.kd_temperature.is_finite() && self.kd_temperature > 0.0) {
            return Err(KdaError::Config(format!(
                "kd temperature must be > 0, got {}",
                self.kd_temperature
            )));
        }
        Ok(())
    }

    pub fn uses_kda(&self) -> bool {
        self.kda_before_fc > 0.0 || self.kda_after_fc > 0.0
    }

    pub fn uses_teacher(&self) -> bool {
        self.uses_kda() || self.kd > 0.0 || self.rkd > 0.0
    }
}

/// Smoothed L1 with its knee at `|z| = 1`: `0.5·z²` inside, `|z| − 0.5`
/// outside. Returns `(value, derivative)`.
#[inline]
pub fn smoothed_l1(z: f64) -> (f64, f64) {
    if z.abs() > 1.0 {
        (z.abs() - 0.5, z.signum())
    } else {
        (0.5 * z * z, z)
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(KdaError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Applies smoothed L1 elementwise; returns the summed value and the
/// elementwise derivative.
fn smoothed_l1_sum(residual: &Matrix) -> (f64, Matrix) {
    let mut total = 0.0;
    let mut deriv = residual.clone();
    for v in deriv.data_mut() {
        let (val, d) = smoothed_l1(*v);
        total += val;
        *v = d;
    }
    (total, deriv)
}

fn check_kda_inputs(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
) -> Result<()> {
    if x_s.len() != x_t.len() {
        return Err(KdaError::dim(
            "kda_loss",
            format!("student has {} examples, teacher {}", x_s.len(), x_t.len()),
        ));
    }
    if d_s.len() != d_t.len() {
        return Err(KdaError::dim(
            "kda_loss",
            format!("student has {} landmarks, teacher {}", d_s.len(), d_t.len()),
        ));
    }
    Ok(())
}

/// Mean smoothed-L1 over the `n·m` entries of `C_S − C_T`, with
/// `C = XᵀD`. Gradient is with respect to `X_S`.
pub fn kda_loss(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
) -> Result<LossValueGrad> {
    check_kda_inputs(x_s, x_t, d_s, d_t)?;
    let residual = partial_gram(x_s, d_s)?.sub(&partial_gram(x_t, d_t)?)?;
    let scale = 1.0 / (residual.rows() * residual.cols()) as f64;
    let (sum, g) = smoothed_l1_sum(&residual);
    // ∂/∂X_S = D_S · Gᵀ / (n·m)
    let grad = d_s.points.matmul_tr(&g)?.scale(scale);
    Ok(LossValueGrad {
        value: sum * scale,
        grad,
    })
}

/// [`kda_loss`] on the right-weighted residual `(C_S − C_T)·M`, typically
/// with `M = (W_T⁺)^{1/2}`.
pub fn kda_loss_weighted(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
    weighting: &Matrix,
) -> Result<LossValueGrad> {
    check_kda_inputs(x_s, x_t, d_s, d_t)?;
    let m = d_s.len();
    if weighting.shape() != (m, m) {
        return Err(KdaError::dim(
            "kda_loss_weighted",
            format!("weighting {:?} for {m} landmarks", weighting.shape()),
        ));
    }
    let residual = partial_gram(x_s, d_s)?
        .sub(&partial_gram(x_t, d_t)?)?
        .matmul(weighting)?;
    let scale = 1.0 / (residual.rows() * residual.cols()) as f64;
    let (sum, g) = smoothed_l1_sum(&residual);
    // ∂/∂C_S = G·Mᵀ, so ∂/∂X_S = D_S·M·Gᵀ
    let grad = d_s.points.matmul(weighting)?.matmul_tr(&g)?.scale(scale);
    Ok(LossValueGrad {
        value: sum * scale,
        grad,
    })
}

/// Column-wise softmax of `logits / temperature`.
pub fn softmax_columns(logits: &Matrix, temperature: f64) -> Matrix {
    let (l, n) = logits.shape();
    let mut out = Matrix::zeros(l, n);
    for j in 0..n {
        let max = (0..l)
            .map(|i| logits[(i, j)] / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..l {
            let e = (logits[(i, j)] / temperature - max).exp();
            out[(i, j)] = e;
            z += e;
        }
        for i in 0..l {
            out[(i, j)] /= z;
        }
    }
    out
}

fn log_softmax_column(logits: &Matrix, j: usize, temperature: f64) -> Vec<f64> {
    let l = logits.rows();
    let scaled: Vec<f64> = (0..l).map(|i| logits[(i, j)] / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|v| v - lse).collect()
}

/// `T²·KL(softmax(z_T/T) ‖ softmax(z_S/T))`, averaged over examples.
pub fn kd_loss(logits_s: &Matrix, logits_t: &Matrix, temperature: f64) -> Result<LossValueGrad> {
    check_same_shape(logits_s, logits_t, "kd_loss")?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(KdaError::Argument(format!("temperature {temperature}")));
    }
    let (l, n) = logits_s.shape();
    let p_s = softmax_columns(logits_s, temperature);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(l, n);
    for j in 0..n {
        let log_t = log_softmax_column(logits_t, j, temperature);
        let log_s = log_softmax_column(logits_s, j, temperature);
        let mut kl = 0.0;
        for i in 0..l {
            let pt = log_t[i].exp();
            if pt > 0.0 {
                kl += pt * (log_t[i] - log_s[i]);
            }
            // d/dz_S of T²·KL is T·(p_S − p_T)
            grad[(i, j)] = temperature * (p_s[(i, j)] - pt) / n as f64;
        }
        value += kl.max(0.0);
    }
    Ok(LossValueGrad {
        value: temperature * temperature * value / n as f64,
        grad,
    })
}

/// `Σ_i ‖x_S^i − x_T^i‖²`, the squared-logit form of conventional KD.
pub fn kd_squared_logit_loss(logits_s: &Matrix, logits_t: &Matrix) -> Result<LossValueGrad> {
    check_same_shape(logits_s, logits_t, "kd_squared_logit_loss")?;
    let diff = logits_s.sub(logits_t)?;
    Ok(LossValueGrad {
        value: diff.sum_squares(),
        grad: diff.scale(2.0),
    })
}

/// `‖X_SᵀD_S − X_TᵀD_T‖_F²`: the summed squared partial-Gram residual.
/// With one-hot landmarks on logits this is the squared-logit KD loss.
pub fn squared_partial_residual(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
) -> Result<f64> {
    check_kda_inputs(x_s, x_t, d_s, d_t)?;
    Ok(partial_gram(x_s, d_s)?
        .sub(&partial_gram(x_t, d_t)?)?
        .sum_squares())
}

/// Mean smoothed-L1 over the `r²` entries of the mini-batch Gram difference.
pub fn rkd_batch_loss(x_s: &FeatureBlock, x_t: &FeatureBlock) -> Result<LossValueGrad> {
    if x_s.len() != x_t.len() {
        return Err(KdaError::dim(
            "rkd_batch_loss",
            format!("batch sizes {} vs {}", x_s.len(), x_t.len()),
        ));
    }
    let r = x_s.len();
    let residual = gram(x_s).sub(&gram(x_t))?;
    let scale = 1.0 / (r * r) as f64;
    let (sum, g) = smoothed_l1_sum(&residual);
    // G is symmetric, so ∂/∂X_S of Σ ℓ(X_SᵀX_S − ·) is 2·X_S·G.
    let grad = x_s.features.matmul(&g)?.scale(2.0 * scale);
    Ok(LossValueGrad {
        value: sum * scale,
        grad,
    })
}

/// Mean negative log-likelihood of the true class under a column softmax.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<LossValueGrad> {
    let (l, n) = logits.shape();
    if labels.len() != n {
        return Err(KdaError::dim(
            "cross_entropy_loss",
            format!("{} labels for {n} examples", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(KdaError::Argument(format!("label {bad} out of range for {l} classes")));
    }
    let mut grad = softmax_columns(logits, 1.0);
    let mut value = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        value -= log_softmax_column(logits, j, 1.0)[y];
        grad[(y, j)] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    Ok(LossValueGrad {
        value: value * inv_n,
        grad: grad.scale(inv_n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{class_centers, onehot_landmarks};

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn fb(rows: &[Vec<f64>]) -> FeatureBlock {
        FeatureBlock::new(m(rows), "t").unwrap()
    }

    #[test]
    fn smoothed_l1_examples() {
        assert_eq!(smoothed_l1(0.0), (0.0, 0.0));
        assert_eq!(smoothed_l1(1.0), (0.5, 1.0));
        let (v, _) = smoothed_l1(1.0 + 1e-9);
        assert!((v - (0.5 + 1e-9)).abs() <= 1e-9 * 1e-6);
        assert_eq!(smoothed_l1(-3.0), (2.5, -1.0));
        assert_eq!(smoothed_l1(-1.0), (0.5, -1.0));
        assert_eq!(smoothed_l1(-0.5), (0.125, -0.5));
    }

    #[test]
    fn smoothed_l1_derivative_continuous_and_bounded() {
        for z in [1.0f64, -1.0] {
            let inside = smoothed_l1(z - z.signum() * 1e-12).1;
            let outside = smoothed_l1(z + z.signum() * 1e-12).1;
            assert!((inside - outside).abs() < 1e-11);
        }
        for i in -1000..=1000 {
            assert!(smoothed_l1(i as f64 * 0.01).1.abs() <= 1.0);
        }
    }

    #[test]
    fn kda_hand_example() {
        let x_s = fb(&[vec![2.0]]);
        let x_t = fb(&[vec![1.0]]);
        let d = LandmarkSet::from_points(m(&[vec![0.5]]));
        let out = kda_loss(&x_s, &x_t, &d, &d).unwrap();
        assert!((out.value - 0.125).abs() < 1e-15);
        assert!((out.grad[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kda_zero_when_matched() {
        let x = fb(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, 1.0]]);
        let d = class_centers(&x, &[0, 1, 1]).unwrap();
        let out = kda_loss(&x, &x, &d, &d).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn kda_dimension_errors() {
        let x_s = fb(&[vec![1.0, 2.0]]);
        let x_t = fb(&[vec![1.0]]);
        let d = LandmarkSet::from_points(m(&[vec![1.0]]));
        assert!(matches!(kda_loss(&x_s, &x_t, &d, &d), Err(KdaError::Dimension { .. })));
        let d2 = LandmarkSet::from_points(m(&[vec![1.0, 2.0]]));
        assert!(kda_loss(&x_s, &x_s, &d, &d2).is_err());
        let wrong_dim = LandmarkSet::from_points(m(&[vec![1.0], vec![1.0]]));
        assert!(kda_loss(&x_s, &x_s, &wrong_dim, &wrong_dim).is_err());
    }

    #[test]
    fn weighted_with_identity_matches_plain() {
        let x_s = fb(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.1, 1.0]]);
        let x_t = fb(&[vec![0.3, 1.0, -0.5], vec![2.0, 0.0, 0.7], vec![1.0, 1.0, 1.0]]);
        let d_s = LandmarkSet::from_points(m(&[vec![1.0, 0.2], vec![0.0, 1.5]]));
        let d_t = LandmarkSet::from_points(m(&[vec![1.0, 0.0], vec![0.5, 1.0], vec![0.0, 2.0]]));
        let a = kda_loss(&x_s, &x_t, &d_s, &d_t).unwrap();
        let b = kda_loss_weighted(&x_s, &x_t, &d_s, &d_t, &Matrix::identity(2)).unwrap();
        assert_eq!(a.value, b.value);
        assert!(a.grad.max_abs_diff(&b.grad) < 1e-15);
        let zero = kda_loss_weighted(&x_s, &x_s, &d_s, &d_s, &m(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        assert_eq!(zero.unwrap().value, 0.0);
        assert!(kda_loss_weighted(&x_s, &x_t, &d_s, &d_t, &Matrix::identity(3)).is_err());
    }

    #[test]
    fn kd_zero_for_identical_logits() {
        let z = m(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![0.0, 0.0]]);
        let out = kd_loss(&z, &z, 4.0).unwrap();
        assert!(out.value.abs() < 1e-15);
        assert!(out.grad.data().iter().all(|g| g.abs() < 1e-15));
        assert!(kd_loss(&z, &z, 0.0).is_err());
    }

    #[test]
    fn kd_squared_logit_examples() {
        let z = m(&[vec![1.0, 2.0]]);
        assert_eq!(kd_squared_logit_loss(&z, &z).unwrap().value, 0.0);
        let s = m(&[vec![3.0], vec![0.0]]);
        let t = m(&[vec![0.0], vec![0.0]]);
        let out = kd_squared_logit_loss(&s, &t).unwrap();
        assert_eq!(out.value, 9.0);
        assert_eq!(out.grad[(0, 0)], 6.0);
    }

    #[test]
    fn squared_logit_equals_onehot_residual() {
        let s = m(&[vec![1.0, -0.5, 2.0], vec![0.3, 0.2, -1.0]]);
        let t = m(&[vec![0.0, 0.5, 1.5], vec![-0.3, 0.9, 0.0]]);
        let oh = onehot_landmarks(2).unwrap();
        let direct = kd_squared_logit_loss(&s, &t).unwrap().value;
        let via = squared_partial_residual(
            &FeatureBlock::new(s, "logits").unwrap(),
            &FeatureBlock::new(t, "logits").unwrap(),
            &oh,
            &oh,
        )
        .unwrap();
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn rkd_hand_example() {
        let x_s = fb(&[vec![2.0]]);
        let x_t = fb(&[vec![1.0]]);
        let out = rkd_batch_loss(&x_s, &x_t).unwrap();
        assert_eq!(out.value, 2.5);
        assert_eq!(out.grad[(0, 0)], 4.0);
        assert_eq!(rkd_batch_loss(&x_s, &x_s).unwrap().value, 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Matrix::zeros(5, 3);
        let out = cross_entropy_loss(&uniform, &[0, 3, 4]).unwrap();
        assert!((out.value - 5f64.ln()).abs() < 1e-14);

        let confident = m(&[vec![50.0], vec![0.0], vec![0.0]]);
        assert!(cross_entropy_loss(&confident, &[0]).unwrap().value < 1e-8);

        assert!(matches!(
            cross_entropy_loss(&uniform, &[0, 5, 1]),
            Err(KdaError::Argument(_))
        ));
    }
}
