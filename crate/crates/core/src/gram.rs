//! Linear-kernel Gram matrices and their Nyström approximations.
//!
//! Features are stored `d × n`: column `i` is the representation of example
//! `i` at some network layer. With landmarks `D` (`d × m`) the partial Gram is
//! `C = XᵀD` and the landmark Gram is `W = DᵀD`, so `K̃_k = C·W_k⁺·Cᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{KdaError, Result};
use crate::landmarks::LandmarkSet;
use crate::matrix::{pseudo_inverse, rank_k_truncate, Matrix, DEFAULT_PINV_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    /// `d × n`, one column per example.
    pub features: Matrix,
    pub layer_tag: String,
}

impl FeatureBlock {
    pub fn new(features: Matrix, layer_tag: impl Into<String>) -> Result<Self> {
        if !features.is_finite() {
            return Err(KdaError::NonFinite("feature block".into()));
        }
        Ok(Self {
            features,
            layer_tag: layer_tag.into(),
        })
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    /// Number of examples `n`.
    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn example(&self, i: usize) -> Vec<f64> {
        self.features.column(i)
    }

    pub fn select(&self, indices: &[usize]) -> Result<FeatureBlock> {
        Ok(FeatureBlock {
            features: self.features.select_columns(indices)?,
            layer_tag: self.layer_tag.clone(),
        })
    }
}

/// `K = XᵀX`.
pub fn gram(x: &FeatureBlock) -> Matrix {
    x.features
        .tr_matmul(&x.features)
        .expect("XᵀX is always conformable")
}

/// `C = XᵀD`, the `n × m` example-to-landmark similarities.
pub fn partial_gram(x: &FeatureBlock, landmarks: &LandmarkSet) -> Result<Matrix> {
    if x.dim() != landmarks.dim() {
        return Err(KdaError::dim(
            "partial_gram",
            format!(
                "features have dim {} but landmarks have dim {}",
                x.dim(),
                landmarks.dim()
            ),
        ));
    }
    x.features.tr_matmul(&landmarks.points)
}

#[derive(Debug, Clone)]
pub struct NystromApprox {
    /// `n × m`.
    pub c: Matrix,
    /// `m × m`, `DᵀD`.
    pub w: Matrix,
    pub k: usize,
    /// `(W_k)⁺`.
    pub w_k_pinv: Matrix,
}

pub fn build_nystrom(x: &FeatureBlock, landmarks: &LandmarkSet, k: usize) -> Result<NystromApprox> {
    let m = landmarks.len();
    if k == 0 || k > m {
        return Err(KdaError::Argument(format!("rank {k} outside 1..={m}")));
    }
    let c = partial_gram(x, landmarks)?;
    let w = landmarks.gram();
    let w_k_pinv = pseudo_inverse(&rank_k_truncate(&w, k)?, DEFAULT_PINV_TOL)?;
    Ok(NystromApprox { c, w, k, w_k_pinv })
}

impl NystromApprox {
    /// `K̃_k = C·W_k⁺·Cᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.c
            .matmul(&self.w_k_pinv)
            .and_then(|cw| cw.matmul_tr(&self.c))
            .expect("shapes fixed at construction")
    }
}

pub fn reconstruct(approx: &NystromApprox) -> Matrix {
    approx.reconstruct()
}

/// `‖K_S − K_T‖_F / ‖K_T‖_F`: the fraction of teacher kernel structure the
/// student has not matched.
pub fn relative_transfer_loss(k_s: &Matrix, k_t: &Matrix) -> Result<f64> {
    let denom = k_t.frobenius_norm();
    if denom == 0.0 {
        return Err(KdaError::DivisionByZero("teacher Gram matrix is zero".into()));
    }
    Ok(k_s.sub(k_t)?.frobenius_norm() / denom)
}

/// `‖C_S − C_T‖_F / ‖K_T‖_F`, the landmark-based estimate of the transfer loss.
pub fn relative_partial_loss(c_s: &Matrix, c_t: &Matrix, k_t: &Matrix) -> Result<f64> {
    let denom = k_t.frobenius_norm();
    if denom == 0.0 {
        return Err(KdaError::DivisionByZero("teacher Gram matrix is zero".into()));
    }
    Ok(c_s.sub(c_t)?.frobenius_norm() / denom)
}

/// `‖XᵀX‖_F` computed as `‖XXᵀ‖_F`, which costs `O(n·d²)` instead of `O(n²·d)`.
pub fn gram_norm(x: &Matrix) -> f64 {
    x.matmul_tr(x).expect("XXᵀ is always conformable").frobenius_norm()
}

/// `‖X_SᵀX_S − X_TᵀX_T‖_F` without forming either `n × n` Gram matrix:
/// `‖A‖² + ‖B‖² − 2‖X_S X_Tᵀ‖²` with `‖A‖ = ‖X_S X_Sᵀ‖`.
pub fn gram_difference_norm(x_s: &Matrix, x_t: &Matrix) -> Result<f64> {
    if x_s.cols() != x_t.cols() {
        return Err(KdaError::dim(
            "gram_difference_norm",
            format!("{} vs {} examples", x_s.cols(), x_t.cols()),
        ));
    }
    let ss = x_s.matmul_tr(x_s)?.sum_squares();
    let tt = x_t.matmul_tr(x_t)?.sum_squares();
    let st = x_s.matmul_tr(x_t)?.sum_squares();
    Ok((ss + tt - 2.0 * st).max(0.0).sqrt())
}
