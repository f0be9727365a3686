//! Landmark selection: per-class means, per-class k-means, uniformly sampled
//! dataset columns, and one-hot label vectors.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KdaError, Result};
use crate::gram::FeatureBlock;
use crate::matrix::Matrix;

const KMEANS_MAX_ITERS: usize = 50;
const KMEANS_MIN_IMPROVEMENT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStrategy {
    ClassCenters,
    KMeansPerClass,
    Random,
    OneHot,
    /// Caller-supplied points.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    /// `d × m`, one landmark per column.
    pub points: Matrix,
    pub strategy: LandmarkStrategy,
    /// Class label of each landmark; `None` for random columns.
    pub class_of: Option<Vec<usize>>,
    pub seed: Option<u64>,
    /// Dataset columns the landmarks were copied from, when they were.
    pub source_columns: Option<Vec<usize>>,
}

impl LandmarkSet {
    pub fn from_points(points: Matrix) -> Self {
        Self {
            points,
            strategy: LandmarkStrategy::Explicit,
            class_of: None,
            seed: None,
            source_columns: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.points.rows()
    }

    /// Number of landmarks `m`.
    pub fn len(&self) -> usize {
        self.points.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `W = DᵀD`.
    pub fn gram(&self) -> Matrix {
        self.points
            .tr_matmul(&self.points)
            .expect("DᵀD is always conformable")
    }

    pub fn landmark(&self, l: usize) -> Vec<f64> {
        self.points.column(l)
    }

    /// Reorders landmarks; `perm[j]` is the old index placed at position `j`.
    pub fn permuted(&self, perm: &[usize]) -> Result<LandmarkSet> {
        let mut out = self.clone();
        out.points = self.points.select_columns(perm)?;
        out.class_of = self
            .class_of
            .as_ref()
            .map(|c| perm.iter().map(|&j| c[j]).collect());
        out.source_columns = self
            .source_columns
            .as_ref()
            .map(|c| perm.iter().map(|&j| c[j]).collect());
        Ok(out)
    }
}

pub fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |&l| l + 1)
}

fn check_labels(x: &FeatureBlock, labels: &[usize]) -> Result<usize> {
    if labels.len() != x.len() {
        return Err(KdaError::dim(
            "landmarks",
            format!("{} labels for {} examples", labels.len(), x.len()),
        ));
    }
    Ok(num_classes(labels))
}

/// Column `l` is the mean feature vector of class `l`.
pub fn class_centers(x: &FeatureBlock, labels: &[usize]) -> Result<LandmarkSet> {
    let n_classes = check_labels(x, labels)?;
    let d = x.dim();
    let mut sums = Matrix::zeros(d, n_classes);
    let mut counts = vec![0usize; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for r in 0..d {
            sums[(r, y)] += x.features[(r, i)];
        }
    }
    if let Some(label) = counts.iter().position(|&c| c == 0) {
        return Err(KdaError::EmptyClass { label });
    }
    for r in 0..d {
        for (l, &c) in counts.iter().enumerate() {
            sums[(r, l)] /= c as f64;
        }
    }
    Ok(LandmarkSet {
        points: sums,
        strategy: LandmarkStrategy::ClassCenters,
        class_of: Some((0..n_classes).collect()),
        seed: None,
        source_columns: None,
    })
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm with farthest-point seeding from a random first pick.
///
/// Empty clusters take the point farthest from its center in the largest
/// cluster.
pub fn lloyd_kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<KMeansFit> {
    if k == 0 || k > points.len() {
        return Err(KdaError::Argument(format!(
            "cannot fit {k} centers to {} points",
            points.len()
        )));
    }
    let dim = points[0].len();

    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        let newest = points[far].clone();
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &newest));
        }
        centers.push(newest);
    }

    let mut assignment = vec![0; points.len()];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITERS {
        let mut inertia = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centers);
            *a = j;
            inertia += d;
        }
        trace.push(inertia);
        if prev - inertia < KMEANS_MIN_IMPROVEMENT {
            break;
        }
        prev = inertia;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let far = (0..points.len())
                .filter(|&i| assignment[i] == largest)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centers[largest])
                        .total_cmp(&sq_dist(&points[b], &centers[largest]))
                        .then(b.cmp(&a))
                })
                .unwrap();
            centers[j] = points[far].clone();
            assignment[far] = j;
            counts[largest] -= 1;
            counts[j] += 1;
        }
    }
    Ok(KMeansFit {
        centers,
        assignment,
        inertia_trace: trace,
    })
}

/// `centers_per_class` k-means centers for every class, class-major order.
pub fn kmeans_per_class(
    x: &FeatureBlock,
    labels: &[usize],
    centers_per_class: usize,
    seed: u64,
) -> Result<LandmarkSet> {
    kmeans_per_class_groups(x, labels, centers_per_class, seed).map(|(set, _)| set)
}

/// [`kmeans_per_class`] plus the landmark index each example was assigned to.
pub fn kmeans_per_class_groups(
    x: &FeatureBlock,
    labels: &[usize],
    centers_per_class: usize,
    seed: u64,
) -> Result<(LandmarkSet, Vec<usize>)> {
    let n_classes = check_labels(x, labels)?;
    if centers_per_class == 0 {
        return Err(KdaError::Argument("centers_per_class must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(n_classes * centers_per_class);
    let mut class_of = Vec::with_capacity(n_classes * centers_per_class);
    let mut groups = vec![0; x.len()];
    for l in 0..n_classes {
        let member_idx: Vec<usize> = (0..x.len()).filter(|&i| labels[i] == l).collect();
        if member_idx.is_empty() {
            return Err(KdaError::EmptyClass { label: l });
        }
        if member_idx.len() < centers_per_class {
            return Err(KdaError::Argument(format!(
                "class {l} has {} examples, fewer than {centers_per_class} centers",
                member_idx.len()
            )));
        }
        let members: Vec<Vec<f64>> = member_idx.iter().map(|&i| x.example(i)).collect();
        let fit = lloyd_kmeans(&members, centers_per_class, &mut rng)?;
        for (&i, &a) in member_idx.iter().zip(&fit.assignment) {
            groups[i] = l * centers_per_class + a;
        }
        columns.extend(fit.centers);
        class_of.extend(std::iter::repeat_n(l, centers_per_class));
    }
    let set = LandmarkSet {
        points: Matrix::from_columns(&columns)?,
        strategy: LandmarkStrategy::KMeansPerClass,
        class_of: Some(class_of),
        seed: Some(seed),
        source_columns: None,
    };
    Ok((set, groups))
}

/// Column `g` is the mean of the examples with `groups[i] == g`.
pub fn group_means(x: &FeatureBlock, groups: &[usize], n_groups: usize) -> Result<Matrix> {
    if groups.len() != x.len() {
        return Err(KdaError::dim(
            "group_means",
            format!("{} group ids for {} examples", groups.len(), x.len()),
        ));
    }
    let mut sums = Matrix::zeros(x.dim(), n_groups);
    let mut counts = vec![0usize; n_groups];
    for (i, &g) in groups.iter().enumerate() {
        if g >= n_groups {
            return Err(KdaError::Argument(format!("group {g} out of range")));
        }
        counts[g] += 1;
        for r in 0..x.dim() {
            sums[(r, g)] += x.features[(r, i)];
        }
    }
    if let Some(label) = counts.iter().position(|&c| c == 0) {
        return Err(KdaError::EmptyClass { label });
    }
    for r in 0..x.dim() {
        for (g, &c) in counts.iter().enumerate() {
            sums[(r, g)] /= c as f64;
        }
    }
    Ok(sums)
}

/// `m` distinct columns of `x`, sampled uniformly without replacement.
pub fn random_landmarks(x: &FeatureBlock, m: usize, seed: u64) -> Result<LandmarkSet> {
    let n = x.len();
    if m == 0 || m > n {
        return Err(KdaError::Argument(format!("cannot sample {m} of {n} columns")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, n, m).into_vec();
    let mut set = landmarks_from_columns(x, &picks)?;
    set.strategy = LandmarkStrategy::Random;
    set.seed = Some(seed);
    Ok(set)
}

/// Landmarks copied from the given dataset columns.
pub fn landmarks_from_columns(x: &FeatureBlock, columns: &[usize]) -> Result<LandmarkSet> {
    Ok(LandmarkSet {
        points: x.features.select_columns(columns)?,
        strategy: LandmarkStrategy::Random,
        class_of: None,
        seed: None,
        source_columns: Some(columns.to_vec()),
    })
}

/// `D = I_L`: with logits as features, `C = XᵀI` is the logit matrix itself.
pub fn onehot_landmarks(n_classes: usize) -> Result<LandmarkSet> {
    if n_classes == 0 {
        return Err(KdaError::Argument("one-hot landmarks need ≥ 1 class".into()));
    }
    Ok(LandmarkSet {
        points: Matrix::identity(n_classes),
        strategy: LandmarkStrategy::OneHot,
        class_of: Some((0..n_classes).collect()),
        seed: None,
        source_columns: None,
    })
}

/// Sum of distances from each example to its closest landmark.
pub fn clustering_objective(x: &FeatureBlock, landmarks: &LandmarkSet) -> f64 {
    let centers: Vec<Vec<f64>> = (0..landmarks.len()).map(|l| landmarks.landmark(l)).collect();
    (0..x.len())
        .map(|i| nearest(&x.example(i), &centers).1.sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::sym_eig;
    use rand_distr::{Distribution, Normal};

    fn block_from_points(points: &[Vec<f64>]) -> FeatureBlock {
        FeatureBlock::new(Matrix::from_columns(points).unwrap(), "t").unwrap()
    }

    fn blobs(n_classes: usize, per_class: usize, d: usize, sep: f64, seed: u64) -> (FeatureBlock, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for l in 0..n_classes {
            let mean: Vec<f64> = (0..d).map(|_| sep * noise.sample(&mut rng)).collect();
            for _ in 0..per_class {
                pts.push(mean.iter().map(|m| m + noise.sample(&mut rng)).collect());
                labels.push(l);
            }
        }
        (block_from_points(&pts), labels)
    }

    #[test]
    fn class_centers_hand_example() {
        let x = block_from_points(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 4.0]]);
        let c = class_centers(&x, &[0, 0, 1]).unwrap();
        assert_eq!(c.points, Matrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap());
        assert_eq!(c.strategy, LandmarkStrategy::ClassCenters);
        assert_eq!(c.class_of, Some(vec![0, 1]));
    }

    #[test]
    fn class_centers_singletons_and_constants() {
        let pts = vec![vec![1.5, -2.0], vec![3.0, 7.0], vec![0.25, 0.5]];
        let x = block_from_points(&pts);
        assert_eq!(class_centers(&x, &[0, 1, 2]).unwrap().points, x.features);

        let v = vec![0.3, -1.1, 2.0];
        let x = block_from_points(&vec![v.clone(); 6]);
        let c = class_centers(&x, &[0, 1, 0, 1, 2, 2]).unwrap();
        for l in 0..3 {
            for (a, b) in c.landmark(l).iter().zip(&v) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn class_centers_empty_class_is_named() {
        let x = block_from_points(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            class_centers(&x, &[0, 2]),
            Err(KdaError::EmptyClass { label: 1 })
        ));
    }

    #[test]
    fn class_centers_mean_residual_vanishes() {
        let (x, y) = blobs(4, 30, 5, 3.0, 1);
        let c = class_centers(&x, &y).unwrap();
        for l in 0..4 {
            let mut resid = vec![0.0; 5];
            for i in (0..x.len()).filter(|&i| y[i] == l) {
                for (r, v) in resid.iter_mut().enumerate() {
                    *v += x.features[(r, i)] - c.points[(r, l)];
                }
            }
            assert!(resid.iter().all(|v| v.abs() < 1e-9), "{resid:?}");
        }
    }

    #[test]
    fn kmeans_single_center_is_class_mean() {
        let (x, y) = blobs(3, 25, 4, 2.0, 2);
        let km = kmeans_per_class(&x, &y, 1, 99).unwrap();
        let cc = class_centers(&x, &y).unwrap();
        assert!(km.points.max_abs_diff(&cc.points) < 1e-9);
        assert_eq!(km.strategy, LandmarkStrategy::KMeansPerClass);
    }

    #[test]
    fn kmeans_two_point_line() {
        let x = block_from_points(&[vec![-1.0], vec![1.0]]);
        for seed in 0..5 {
            let km = kmeans_per_class(&x, &[0, 0], 2, seed).unwrap();
            let mut c: Vec<f64> = km.points.row(0).to_vec();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![-1.0, 1.0]);
        }
    }

    #[test]
    fn kmeans_is_deterministic_and_validates() {
        let (x, y) = blobs(3, 20, 3, 2.0, 3);
        let a = kmeans_per_class(&x, &y, 3, 7).unwrap();
        let b = kmeans_per_class(&x, &y, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        assert_eq!(a.class_of.as_ref().unwrap()[3..6], [1, 1, 1]);
        assert!(matches!(kmeans_per_class(&x, &y, 21, 7), Err(KdaError::Argument(_))));
        assert!(kmeans_per_class(&x, &y, 0, 7).is_err());
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        for seed in 0..30 {
            let (x, _) = blobs(5, 20, 3, 1.0, seed);
            let pts: Vec<Vec<f64>> = (0..x.len()).map(|i| x.example(i)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fit = lloyd_kmeans(&pts, 6, &mut rng).unwrap();
            for w in fit.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", fit.inertia_trace);
            }
        }
    }

    #[test]
    fn kmeans_repairs_duplicate_points() {
        // Three identical points and one distinct: farthest-point seeding
        // duplicates a center, leaving one cluster empty.
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = lloyd_kmeans(&pts, 3, &mut rng).unwrap();
        assert_eq!(fit.centers.len(), 3);
        assert!(fit.centers.iter().all(|c| c[0].is_finite()));
        assert!(*fit.inertia_trace.last().unwrap() < 1e-12);
    }

    #[test]
    fn random_landmarks_contract() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0]).collect();
        let x = block_from_points(&pts);
        let all = random_landmarks(&x, 6, 3).unwrap();
        let mut idx = all.source_columns.clone().unwrap();
        idx.sort();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert_eq!(all.strategy, LandmarkStrategy::Random);
        assert!(all.class_of.is_none());

        let one = block_from_points(&[vec![4.0, 2.0]]);
        assert_eq!(random_landmarks(&one, 1, 0).unwrap().points, one.features);

        let a = random_landmarks(&x, 3, 42).unwrap();
        let b = random_landmarks(&x, 3, 42).unwrap();
        assert_eq!(a.source_columns, b.source_columns);
        assert!(matches!(random_landmarks(&x, 7, 0), Err(KdaError::Argument(_))));
        assert!(random_landmarks(&x, 0, 0).is_err());
    }

    #[test]
    fn onehot_is_identity() {
        let oh = onehot_landmarks(3).unwrap();
        assert_eq!(oh.points, Matrix::identity(3));
        assert_eq!(oh.gram(), Matrix::identity(3));
        assert_eq!(sym_eig(&oh.gram()).unwrap().min_eigenvalue(), 1.0);
        assert!(onehot_landmarks(0).is_err());
    }

    #[test]
    fn class_centers_beat_random_on_clustering_objective() {
        let (x, y) = blobs(5, 40, 6, 4.0, 11);
        let centers = class_centers(&x, &y).unwrap();
        let obj_c = clustering_objective(&x, &centers);
        let obj_r: f64 = (0..20)
            .map(|s| clustering_objective(&x, &random_landmarks(&x, 5, s).unwrap()))
            .sum::<f64>()
            / 20.0;
        assert!(obj_c <= obj_r, "centers {obj_c} vs random {obj_r}");
    }

    #[test]
    fn separated_class_centers_have_full_rank_gram() {
        let (x, y) = blobs(6, 30, 10, 5.0, 4);
        let w = class_centers(&x, &y).unwrap().gram();
        assert!(sym_eig(&w).unwrap().min_eigenvalue() > 0.0);
    }
}
