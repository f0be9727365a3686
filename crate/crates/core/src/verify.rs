//! Numerical checks of the deterministic inequalities behind Gram-matrix
//! transfer, plus randomized sweeps over them.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KdaError, Result};
use crate::gram::{build_nystrom, gram, gram_difference_norm, partial_gram, FeatureBlock};
use crate::landmarks::{class_centers, landmarks_from_columns, LandmarkSet};
use crate::matrix::{pseudo_inverse, sym_eig, Matrix, DEFAULT_PINV_TOL};
use crate::train::{derive_seed, MetricLog};

pub use crate::matrix::min_eigenvalue;

pub const BOUND_TOL: f64 = 1e-9;

/// One checked inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub context: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundReport {
    pub fn new(context: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self {
            context: context.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            satisfied: lhs <= rhs + BOUND_TOL,
        }
    }
}

/// A link of a bound chain: either checked, or not applicable.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainLink {
    Checked(BoundReport),
    Skipped { context: String, reason: String },
}

impl ChainLink {
    pub fn context(&self) -> &str {
        match self {
            ChainLink::Checked(r) => &r.context,
            ChainLink::Skipped { context, .. } => context,
        }
    }

    pub fn report(&self) -> Option<&BoundReport> {
        match self {
            ChainLink::Checked(r) => Some(r),
            ChainLink::Skipped { .. } => None,
        }
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, ChainLink::Checked(r) if !r.satisfied)
    }
}

fn token(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("_")
}

impl fmt::Display for ChainLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainLink::Checked(r) => write!(
                f,
                "context={} lhs={:?} rhs={:?} slack={:?} satisfied={}",
                token(&r.context),
                r.lhs,
                r.rhs,
                r.slack,
                r.satisfied
            ),
            ChainLink::Skipped { context, reason } => {
                write!(f, "context={} satisfied=skipped reason={}", token(context), token(reason))
            }
        }
    }
}

impl FromStr for ChainLink {
    type Err = KdaError;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| KdaError::format("bound record", format!("field without '=': {part}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| KdaError::format("bound record", format!("missing field {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| KdaError::format("bound record", format!("bad number in {k}")))
        };
        let context = get("context")?.to_string();
        match get("satisfied")? {
            "skipped" => Ok(ChainLink::Skipped {
                context,
                reason: get("reason")?.to_string(),
            }),
            s @ ("true" | "false") => Ok(ChainLink::Checked(BoundReport {
                context,
                lhs: num("lhs")?,
                rhs: num("rhs")?,
                slack: num("slack")?,
                satisfied: s == "true",
            })),
            other => Err(KdaError::format("bound record", format!("satisfied={other}"))),
        }
    }
}

pub fn format_bounds(links: &[ChainLink]) -> String {
    links.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_bounds(text: &str) -> Result<Vec<ChainLink>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.parse().map_err(|e| match e {
                KdaError::Format { detail, .. } => KdaError::format(format!("bounds line {}", i + 1), detail),
                other => other,
            })
        })
        .collect()
}

fn require_eig_above_one(name: &str, w: &Matrix) -> Result<()> {
    if !w.is_symmetric(1e-9 * (1.0 + w.frobenius_norm())) {
        return Err(KdaError::Precondition(format!("{name} is not symmetric")));
    }
    let lo = min_eigenvalue(w)?;
    if lo <= 1.0 {
        return Err(KdaError::Precondition(format!(
            "smallest eigenvalue of {name} is {lo}, need > 1"
        )));
    }
    Ok(())
}

/// `‖W_S⁺ − W_T⁺‖_F ≤ ‖W_S − W_T‖_F` for PD inputs with spectra above 1.
pub fn check_pinv_contraction(w_s: &Matrix, w_t: &Matrix) -> Result<BoundReport> {
    if w_s.shape() != w_t.shape() {
        return Err(KdaError::dim("check_pinv_contraction", format!("{:?} vs {:?}", w_s.shape(), w_t.shape())));
    }
    require_eig_above_one("W_S", w_s)?;
    require_eig_above_one("W_T", w_t)?;
    let lhs = pseudo_inverse(w_s, DEFAULT_PINV_TOL)?
        .sub(&pseudo_inverse(w_t, DEFAULT_PINV_TOL)?)?
        .frobenius_norm();
    Ok(BoundReport::new("pinv_contraction", lhs, w_s.sub(w_t)?.frobenius_norm()))
}

/// Triangle form
/// `‖K_S − K_T‖ ≤ ‖K_S − K̃_S‖ + ‖K_T − K̃_T‖ + ‖K̃_S − K̃_T‖`.
pub fn triangle_check(k_s: &Matrix, k_t: &Matrix, approx_s: &Matrix, approx_t: &Matrix) -> Result<BoundReport> {
    let lhs = k_s.sub(k_t)?.frobenius_norm();
    let rhs = k_s.sub(approx_s)?.frobenius_norm()
        + k_t.sub(approx_t)?.frobenius_norm()
        + approx_s.sub(approx_t)?.frobenius_norm();
    Ok(BoundReport::new("triangle", lhs, rhs))
}

/// Deterministic links of the Gram-transfer bound, using full-rank Nyström
/// (`k = m`). The `W ≤ C` link applies only when both landmark sets are the
/// same dataset columns.
pub fn check_thm3_chain(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
) -> Result<Vec<ChainLink>> {
    if x_s.len() != x_t.len() || d_s.len() != d_t.len() {
        return Err(KdaError::dim(
            "check_thm3_chain",
            format!("n {} vs {}, m {} vs {}", x_s.len(), x_t.len(), d_s.len(), d_t.len()),
        ));
    }
    let w_s = d_s.gram();
    let w_t = d_t.gram();
    require_eig_above_one("W_S", &w_s)?;
    require_eig_above_one("W_T", &w_t)?;

    let mut links = Vec::with_capacity(3);
    let submatrix = matches!((&d_s.source_columns, &d_t.source_columns), (Some(a), Some(b)) if a == b);
    if submatrix {
        let c_diff = partial_gram(x_s, d_s)?.sub(&partial_gram(x_t, d_t)?)?;
        links.push(ChainLink::Checked(BoundReport::new(
            "w_le_c",
            w_s.sub(&w_t)?.frobenius_norm(),
            c_diff.frobenius_norm(),
        )));
    } else {
        links.push(ChainLink::Skipped {
            context: "w_le_c".into(),
            reason: "not-a-submatrix".into(),
        });
    }
    links.push(ChainLink::Checked(check_pinv_contraction(&w_s, &w_t)?));

    let m = d_s.len();
    let approx_s = build_nystrom(x_s, d_s, m)?.reconstruct();
    let approx_t = build_nystrom(x_t, d_t, m)?.reconstruct();
    links.push(ChainLink::Checked(triangle_check(&gram(x_s), &gram(x_t), &approx_s, &approx_t)?));
    Ok(links)
}

/// Builds `M_ij = (μ_i·ν_j)²` from the top-`k` eigenvectors of `W_S` and
/// `W_T` and checks that no row or column sum exceeds one.
#[allow(non_snake_case)]
pub fn check_doubly_stochastic_M(w_s: &Matrix, w_t: &Matrix, k: usize) -> Result<BoundReport> {
    if w_s.shape() != w_t.shape() || !w_s.is_square() {
        return Err(KdaError::dim("check_doubly_stochastic_M", format!("{:?} vs {:?}", w_s.shape(), w_t.shape())));
    }
    if k == 0 || k > w_s.rows() {
        return Err(KdaError::Argument(format!("k = {k} for dimension {}", w_s.rows())));
    }
    let m = doubly_stochastic_m(w_s, w_t, k)?;
    let row_max = (0..k).map(|i| m.row(i).iter().sum::<f64>()).fold(f64::MIN, f64::max);
    let col_max = (0..k).map(|j| m.column(j).iter().sum::<f64>()).fold(f64::MIN, f64::max);
    let min_entry = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let mut report = BoundReport::new("doubly_stochastic_m", row_max.max(col_max), 1.0);
    report.satisfied &= min_entry >= -1e-12;
    Ok(report)
}

/// The `k × k` matrix of squared eigenvector overlaps.
pub fn doubly_stochastic_m(w_s: &Matrix, w_t: &Matrix, k: usize) -> Result<Matrix> {
    let es = sym_eig(w_s)?;
    let et = sym_eig(w_t)?;
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        let mu = es.eigenvectors.column(i);
        for j in 0..k {
            let nu = et.eigenvectors.column(j);
            let ip = crate::matrix::dot(&mu, &nu);
            m[(i, j)] = ip * ip;
        }
    }
    Ok(m)
}

/// `‖K_S − K_T‖_F ≤ A + B` where each example is matched to the landmark
/// `assignment[i]`:
///
/// `A = n·e·Σ_i ‖x_S^i − d_S^{a(i)}‖ + n·e·Σ_i ‖x_T^i − d_T^{a(i)}‖`,
/// `B = Σ_{i,j} |d_S^{a(i)}·x_S^j − d_T^{a(i)}·x_T^j|`,
/// and `e` bounds every example norm.
pub fn check_thm5_decomposition(
    x_s: &FeatureBlock,
    x_t: &FeatureBlock,
    d_s: &LandmarkSet,
    d_t: &LandmarkSet,
    assignment: &[usize],
) -> Result<BoundReport> {
    let n = x_s.len();
    let m = d_s.len();
    if x_t.len() != n || assignment.len() != n || d_t.len() != m {
        return Err(KdaError::dim("check_thm5_decomposition", "example or landmark counts differ"));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a >= m) {
        return Err(KdaError::Argument(format!("assignment to landmark {bad} of {m}")));
    }
    let col_norm = |x: &Matrix, j: usize| (0..x.rows()).map(|r| x[(r, j)] * x[(r, j)]).sum::<f64>().sqrt();
    let e = (0..n)
        .map(|j| col_norm(&x_s.features, j).max(col_norm(&x_t.features, j)))
        .fold(0.0, f64::max);

    let residual = |x: &FeatureBlock, d: &LandmarkSet| -> f64 {
        (0..n)
            .map(|i| {
                let a = assignment[i];
                (0..x.dim())
                    .map(|r| (x.features[(r, i)] - d.points[(r, a)]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    };
    let nf = n as f64;
    let a_term = nf * e * residual(x_s, d_s) + nf * e * residual(x_t, d_t);

    // Rows of P are landmark-by-example inner products; B only depends on
    // how many examples pick each landmark.
    let p_s = partial_gram(x_s, d_s)?;
    let p_t = partial_gram(x_t, d_t)?;
    let mut counts = vec![0usize; m];
    for &a in assignment {
        counts[a] += 1;
    }
    let mut b_term = 0.0;
    for (l, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        let row: f64 = (0..n).map(|j| (p_s[(j, l)] - p_t[(j, l)]).abs()).sum();
        b_term += c as f64 * row;
    }
    let lhs = gram_difference_norm(&x_s.features, &x_t.features)?;
    Ok(BoundReport::new("thm5_decomposition", lhs, a_term + b_term))
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KdaError::dim("pearson", format!("{} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(KdaError::UndefinedCorrelation(format!("{} points, need ≥ 3", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(KdaError::UndefinedCorrelation("constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation across epochs between the partial loss
/// `‖C_S − C_T‖/‖K_T‖` and the before-FC transfer loss `‖K_S − K_T‖/‖K_T‖`.
pub fn track_correlation(log: &MetricLog) -> Result<f64> {
    let est: Vec<f64> = log.records.iter().map(|r| r.partial_loss).collect();
    let truth: Vec<f64> = log.records.iter().map(|r| r.transfer_loss_before_fc).collect();
    pearson(&est, &truth)
}

// ---------------------------------------------------------------------------
// Randomized sweeps

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z })
        .collect::<Vec<f64>>();
    Matrix::new(rows, cols, data).expect("positive dimensions")
}

/// Random orthogonal `dim × dim` matrix (eigenvectors of a Gaussian
/// symmetric matrix).
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let g = gaussian_matrix(dim, dim, 1.0, rng);
    Ok(sym_eig(&g.add(&g.transpose())?)?.eigenvectors)
}

/// Symmetric PD matrix with eigenvalues drawn uniformly from `(lo, hi]`.
pub fn random_pd(dim: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Matrix> {
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(KdaError::Argument(format!("spectrum range ({lo}, {hi}]")));
    }
    let q = random_orthogonal(dim, rng)?;
    let spectrum: Vec<f64> = (0..dim).map(|_| hi - rng.random::<f64>() * (hi - lo)).collect();
    q.matmul(&Matrix::from_diag(&spectrum))?.matmul_tr(&q)?.symmetrized()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack seen.
    pub worst_slack: f64,
    /// Reports that failed, in trial order.
    pub failures: Vec<BoundReport>,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn as_link(&self) -> ChainLink {
        ChainLink::Checked(BoundReport::new(
            format!("sweep_{}_violations_of_{}", self.name, self.trials),
            self.violations as f64,
            0.0,
        ))
    }
}

/// Runs `trials` independent instances of `trial` (each seeded from
/// `seed` and its index) on up to `workers` threads. Results are collected
/// in trial order, so the summary does not depend on `workers`.
pub fn run_sweep<F>(name: &str, trials: usize, seed: u64, workers: usize, trial: F) -> Result<SweepSummary>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Vec<BoundReport>> + Sync,
{
    let slots: Vec<Mutex<Option<Result<Vec<BoundReport>>>>> = (0..trials).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, trials.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= trials {
                    break;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                *slots[t].lock().expect("slot lock") = Some(trial(&mut rng));
            });
        }
    });
    let mut summary = SweepSummary {
        name: name.to_string(),
        trials,
        violations: 0,
        worst_slack: f64::INFINITY,
        failures: Vec::new(),
    };
    for slot in slots {
        for report in slot.into_inner().expect("slot lock").expect("every trial ran")? {
            summary.worst_slack = summary.worst_slack.min(report.slack);
            if !report.satisfied {
                summary.violations += 1;
                summary.failures.push(report);
            }
        }
    }
    Ok(summary)
}

pub fn sweep_pinv_contraction(trials: usize, dim: usize, seed: u64, workers: usize) -> Result<SweepSummary> {
    run_sweep("pinv_contraction", trials, seed, workers, |rng| {
        let w_s = random_pd(dim, 1.0, 100.0, rng)?;
        let w_t = random_pd(dim, 1.0, 100.0, rng)?;
        Ok(vec![check_pinv_contraction(&w_s, &w_t)?])
    })
}

pub fn sweep_doubly_stochastic(trials: usize, dim: usize, seed: u64, workers: usize) -> Result<SweepSummary> {
    run_sweep("doubly_stochastic_m", trials, seed, workers, |rng| {
        let w_s = random_pd(dim, 1.0, 100.0, rng)?;
        let w_t = random_pd(dim, 1.0, 100.0, rng)?;
        let k = rng.random_range(1..=dim);
        Ok(vec![check_doubly_stochastic_M(&w_s, &w_t, k)?])
    })
}

fn random_labels(n: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    // every class appears at least once
    let mut labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), rng);
    labels
}

/// Instances with `n ≤ 50`, `d ≤ 8` and class-center assignment.
pub fn sweep_thm5(trials: usize, seed: u64, workers: usize) -> Result<SweepSummary> {
    run_sweep("thm5_decomposition", trials, seed, workers, |rng| {
        let n = rng.random_range(2..=50);
        let classes = rng.random_range(1..=n.min(6));
        let d_s = rng.random_range(1..=8);
        let d_t = rng.random_range(1..=8);
        let labels = random_labels(n, classes, rng);
        let x_s = FeatureBlock::new(gaussian_matrix(d_s, n, 1.0, rng), "s")?;
        let x_t = FeatureBlock::new(gaussian_matrix(d_t, n, 2.0, rng), "t")?;
        let c_s = class_centers(&x_s, &labels)?;
        let c_t = class_centers(&x_t, &labels)?;
        Ok(vec![check_thm5_decomposition(&x_s, &x_t, &c_s, &c_t, &labels)?])
    })
}

/// Random features with dataset-column landmarks and random rank `k`.
pub fn sweep_triangle(trials: usize, seed: u64, workers: usize) -> Result<SweepSummary> {
    run_sweep("triangle", trials, seed, workers, |rng| {
        let n = rng.random_range(2..=40);
        let m = rng.random_range(1..=n.min(8));
        let k = rng.random_range(1..=m);
        let x_s = FeatureBlock::new(gaussian_matrix(rng.random_range(1..=8), n, 1.0, rng), "s")?;
        let x_t = FeatureBlock::new(gaussian_matrix(rng.random_range(1..=8), n, 1.0, rng), "t")?;
        let cols = rand::seq::index::sample(rng, n, m).into_vec();
        let approx_s = build_nystrom(&x_s, &landmarks_from_columns(&x_s, &cols)?, k)?.reconstruct();
        let approx_t = build_nystrom(&x_t, &landmarks_from_columns(&x_t, &cols)?, k)?.reconstruct();
        Ok(vec![triangle_check(&gram(&x_s), &gram(&x_t), &approx_s, &approx_t)?])
    })
}

/// Dataset-column landmarks on features scaled so that landmark Grams meet
/// the eigenvalue precondition. Instances that miss it are redrawn.
pub fn sweep_thm3_chain(trials: usize, seed: u64, workers: usize) -> Result<SweepSummary> {
    run_sweep("thm3_chain", trials, seed, workers, |rng| loop {
        let n = rng.random_range(4..=30);
        let m = rng.random_range(1..=3);
        let x_s = FeatureBlock::new(gaussian_matrix(8, n, 3.0, rng), "s")?;
        let x_t = FeatureBlock::new(gaussian_matrix(6, n, 3.0, rng), "t")?;
        let cols = rand::seq::index::sample(rng, n, m).into_vec();
        let d_s = landmarks_from_columns(&x_s, &cols)?;
        let d_t = landmarks_from_columns(&x_t, &cols)?;
        match check_thm3_chain(&x_s, &x_t, &d_s, &d_t) {
            Ok(links) => return Ok(links.into_iter().filter_map(|l| l.report().cloned()).collect()),
            Err(KdaError::Precondition(_)) => continue,
            Err(e) => return Err(e),
        }
    })
}
