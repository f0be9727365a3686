//! Teacher training and the alternating KDA student loop.
//!
//! The student loop runs `H` warm-up epochs on cross-entropy (plus any
//! non-KDA distillation terms) while recording per-example features. From
//! epoch `H + 1` on, every epoch optimizes the KDA term against landmarks
//! computed from the features recorded during the previous epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{KdaError, Result};
use crate::gram::{gram_difference_norm, gram_norm, partial_gram, FeatureBlock};
use crate::landmarks::{
    class_centers, group_means, kmeans_per_class_groups, landmarks_from_columns,
    onehot_landmarks, LandmarkSet, LandmarkStrategy,
};
use crate::losses::{
    cross_entropy_loss, kd_loss, kda_loss, kda_loss_weighted, rkd_batch_loss, LossWeights,
};
use crate::matrix::{min_eigenvalue, pseudo_inverse_sqrt, Matrix, DEFAULT_PINV_TOL};
use crate::net::{cosine_lr, ForwardPass, Mlp, SgdMomentum, Tap};

const STREAM_TEACHER_INIT: u64 = 1;
const STREAM_STUDENT_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_LANDMARKS: u64 = 4;

/// Independent seed for a named purpose (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 60,
            warmup_epochs: 5,
            batch_size: 64,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    fn validate_common(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(KdaError::Config("total_epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(KdaError::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(KdaError::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KdaError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(KdaError::Config(format!("weight_decay {}", self.weight_decay)));
        }
        self.loss_weights.validate()
    }

    /// Full student-loop contract, including `1 ≤ H < T`.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(KdaError::Config(format!(
                "need 1 ≤ warmup_epochs < total_epochs, got H={} T={}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LandmarkChoice {
    ClassCenters,
    /// Per-class k-means on teacher features; student landmarks are the
    /// student-space means of the same clusters.
    KMeans { centers_per_class: usize },
    /// Uniformly sampled training examples, shared by student and teacher.
    /// `count` defaults to the number of classes.
    Random { count: Option<usize> },
    OneHot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdaWeighting {
    #[default]
    None,
    /// Right-multiply the residual by `(W_T⁺)^{1/2}`.
    TeacherPinvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub hidden: Vec<usize>,
    pub landmarks: LandmarkChoice,
    pub weighting: KdaWeighting,
}

/// Landmarks for one tap: the student and teacher sets are paired column by
/// column.
#[derive(Debug, Clone)]
pub struct TapLandmarks {
    pub student: LandmarkSet,
    pub teacher: LandmarkSet,
    pub weighting: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct KdaLandmarks {
    pub before_fc: Option<TapLandmarks>,
    pub after_fc: Option<TapLandmarks>,
    /// Epoch whose recorded features produced these landmarks.
    pub source_epoch: usize,
}

impl KdaLandmarks {
    pub fn tap(&self, tap: Tap) -> Option<&TapLandmarks> {
        match tap {
            Tap::BeforeFc => self.before_fc.as_ref(),
            Tap::AfterFc => self.after_fc.as_ref(),
        }
    }
}

/// Teacher activations for the examples of one batch.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub before_fc: Matrix,
    pub logits: Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub ce: f64,
    pub kda_before_fc: f64,
    pub kda_after_fc: f64,
    pub kd: f64,
    pub rkd: f64,
    pub total: f64,
}

fn block(m: &Matrix, tag: &str) -> FeatureBlock {
    FeatureBlock {
        features: m.clone(),
        layer_tag: tag.to_string(),
    }
}

/// One SGD-momentum update on a batch. Returns the batch losses and the
/// forward pass taken before the update.
#[allow(clippy::too_many_arguments)]
pub fn backward_step(
    net: &mut Mlp,
    opt: &mut SgdMomentum,
    x: &Matrix,
    labels: &[usize],
    teacher: Option<&TeacherTargets>,
    weights: &LossWeights,
    landmarks: Option<&KdaLandmarks>,
    kda_active: bool,
    lr: f64,
) -> Result<(StepLosses, ForwardPass)> {
    let pass = net.forward(x)?;
    let ce = cross_entropy_loss(pass.logits(), labels)?;
    let mut losses = StepLosses {
        ce: ce.value,
        total: ce.value,
        ..StepLosses::default()
    };
    let mut grad_logits = ce.grad;
    let mut grad_before: Option<Matrix> = None;
    let mut add_before = |g: &Matrix, w: f64| -> Result<()> {
        match grad_before.as_mut() {
            Some(acc) => acc.axpy(w, g),
            None => {
                grad_before = Some(g.scale(w));
                Ok(())
            }
        }
    };

    let needs_teacher = weights.kd > 0.0 || weights.rkd > 0.0 || (kda_active && weights.uses_kda());
    let teacher = match (needs_teacher, teacher) {
        (false, t) => t,
        (true, Some(t)) => Some(t),
        (true, None) => {
            return Err(KdaError::State("distillation loss requires teacher targets".into()))
        }
    };

    if weights.kd > 0.0 {
        let t = teacher.unwrap();
        let out = kd_loss(pass.logits(), &t.logits, weights.kd_temperature)?;
        losses.kd = out.value;
        losses.total += weights.kd * out.value;
        grad_logits.axpy(weights.kd, &out.grad)?;
    }
    if weights.rkd > 0.0 {
        let t = teacher.unwrap();
        let out = rkd_batch_loss(&block(pass.before_fc(), "student"), &block(&t.before_fc, "teacher"))?;
        losses.rkd = out.value;
        losses.total += weights.rkd * out.value;
        add_before(&out.grad, weights.rkd)?;
    }
    if kda_active && weights.uses_kda() {
        let t = teacher.unwrap();
        let lm = landmarks.ok_or_else(|| {
            KdaError::State("KDA loss is active but no landmarks have been computed".into())
        })?;
        for (tap, lambda) in [(Tap::BeforeFc, weights.kda_before_fc), (Tap::AfterFc, weights.kda_after_fc)] {
            if lambda <= 0.0 {
                continue;
            }
            let tl = lm
                .tap(tap)
                .ok_or_else(|| KdaError::State(format!("no landmarks for tap {}", tap.tag())))?;
            let (s_feat, t_feat) = match tap {
                Tap::BeforeFc => (pass.before_fc(), &t.before_fc),
                Tap::AfterFc => (pass.logits(), &t.logits),
            };
            let xs = block(s_feat, tap.tag());
            let xt = block(t_feat, tap.tag());
            let out = match &tl.weighting {
                Some(w) => kda_loss_weighted(&xs, &xt, &tl.student, &tl.teacher, w)?,
                None => kda_loss(&xs, &xt, &tl.student, &tl.teacher)?,
            };
            losses.total += lambda * out.value;
            match tap {
                Tap::BeforeFc => {
                    losses.kda_before_fc = out.value;
                    add_before(&out.grad, lambda)?;
                }
                Tap::AfterFc => {
                    losses.kda_after_fc = out.value;
                    grad_logits.axpy(lambda, &out.grad)?;
                }
            }
        }
    }

    if !losses.total.is_finite() {
        return Err(KdaError::NonFinite(format!("training loss {losses:?}")));
    }
    let grads = net.backward(&pass, &grad_logits, grad_before.as_ref())?;
    if !grads.is_finite() {
        return Err(KdaError::NonFinite("parameter gradient".into()));
    }
    opt.step(net, &grads, lr);
    Ok((losses, pass))
}

/// Observation hooks into the student loop. Epochs are numbered from 1.
pub trait TrainProbe {
    fn on_epoch_start(&mut self, _epoch: usize, _landmarks: Option<&KdaLandmarks>) {}
    fn on_batch(&mut self, _epoch: usize, _indices: &[usize], _pass: &ForwardPass, _losses: &StepLosses) {}
    fn on_epoch_end(&mut self, _epoch: usize, _net: &Mlp) {}
}

pub struct NoProbe;

impl TrainProbe for NoProbe {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub lr: f64,
    pub kda_active: bool,
    pub train_loss: f64,
    pub train_ce: f64,
    pub train_kda_before_fc: f64,
    pub train_kda_after_fc: f64,
    pub train_kd: f64,
    pub train_rkd: f64,
    pub test_accuracy: f64,
    pub transfer_loss_before_fc: f64,
    pub transfer_loss_after_fc: f64,
    /// `‖C_S − C_T‖_F / ‖K_T‖_F` before FC, against class-center landmarks.
    pub partial_loss: f64,
    pub min_eig_ws: f64,
    pub min_eig_wt: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub records: Vec<MetricRecord>,
}

impl MetricLog {
    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(KdaError::State(format!(
                    "epoch {} logged after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("metric records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = MetricLog::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: MetricRecord = serde_json::from_str(line)
                .map_err(|e| KdaError::format(format!("metrics line {}", i + 1), e.to_string()))?;
            log.push(rec)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub net: Mlp,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Cross-entropy-only training; `warmup_epochs` is ignored.
pub fn train_teacher(config: &TrainConfig, data: &SplitDataset, hidden: &[usize]) -> Result<TrainedTeacher> {
    config.validate_common()?;
    let train = &data.train;
    let n_classes = train.num_classes();
    let mut net = Mlp::new(
        &widths(train.dim(), hidden, n_classes),
        derive_seed(config.seed, STREAM_TEACHER_INIT),
    )?;
    let mut opt = SgdMomentum::new(&net, config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SHUFFLE));
    let ce_only = LossWeights::default();
    for epoch in 0..config.total_epochs {
        let lr = cosine_lr(epoch, config.total_epochs, config.lr0);
        for idx in batches(train.len(), config.batch_size, &mut rng) {
            let x = train.x.select_columns(&idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            backward_step(&mut net, &mut opt, &x, &y, None, &ce_only, None, false, lr)?;
        }
    }
    Ok(TrainedTeacher {
        test_accuracy: net.accuracy(&data.test.x, &data.test.labels)?,
        train_accuracy: net.accuracy(&train.x, &train.labels)?,
        net,
    })
}

/// Frozen-teacher quantities reused by every student epoch.
struct TeacherCache {
    before_fc: Matrix,
    logits: Matrix,
    before_norm: f64,
    after_norm: f64,
    centers: LandmarkSet,
    min_eig_wt: f64,
}

impl TeacherCache {
    fn new(teacher: &Mlp, data: &SplitDataset) -> Result<Self> {
        let pass = teacher.forward(&data.train.x)?;
        let before_fc = pass.before_fc().clone();
        let logits = pass.logits().clone();
        let centers = class_centers(&block(&before_fc, "teacher"), &data.train.labels)?;
        let before_norm = gram_norm(&before_fc);
        let after_norm = gram_norm(&logits);
        if before_norm == 0.0 || after_norm == 0.0 {
            return Err(KdaError::DivisionByZero("teacher Gram matrix is zero".into()));
        }
        Ok(Self {
            min_eig_wt: min_eigenvalue(&centers.gram())?,
            before_fc,
            logits,
            before_norm,
            after_norm,
            centers,
        })
    }

    fn tap(&self, tap: Tap) -> &Matrix {
        match tap {
            Tap::BeforeFc => &self.before_fc,
            Tap::AfterFc => &self.logits,
        }
    }
}

/// Per-run landmark machinery that stays fixed across epochs.
struct LandmarkPlan {
    choice: LandmarkChoice,
    weighting: KdaWeighting,
    random_columns: Option<Vec<usize>>,
    kmeans: [Option<(LandmarkSet, Vec<usize>)>; 2],
}

impl LandmarkPlan {
    fn new(spec: &StudentSpec, weights: &LossWeights, cache: &TeacherCache, data: &SplitDataset, seed: u64) -> Result<Self> {
        let labels = &data.train.labels;
        let n = labels.len();
        let random_columns = match spec.landmarks {
            LandmarkChoice::Random { count } => {
                let m = count.unwrap_or_else(|| data.train.num_classes());
                if m == 0 || m > n {
                    return Err(KdaError::Config(format!("random landmark count {m} for {n} examples")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_LANDMARKS));
                Some(rand::seq::index::sample(&mut rng, n, m).into_vec())
            }
            _ => None,
        };
        let mut kmeans = [None, None];
        if let LandmarkChoice::KMeans { centers_per_class } = spec.landmarks {
            for (slot, tap) in kmeans.iter_mut().zip([Tap::BeforeFc, Tap::AfterFc]) {
                if tap_weight(weights, tap) > 0.0 {
                    *slot = Some(kmeans_per_class_groups(
                        &block(cache.tap(tap), tap.tag()),
                        labels,
                        centers_per_class,
                        derive_seed(seed, STREAM_LANDMARKS),
                    )?);
                }
            }
        }
        Ok(Self {
            choice: spec.landmarks,
            weighting: spec.weighting,
            random_columns,
            kmeans,
        })
    }

    fn compute(
        &self,
        weights: &LossWeights,
        student_before: &Matrix,
        student_logits: &Matrix,
        cache: &TeacherCache,
        labels: &[usize],
        source_epoch: usize,
    ) -> Result<KdaLandmarks> {
        let mut out = KdaLandmarks {
            before_fc: None,
            after_fc: None,
            source_epoch,
        };
        for (slot_idx, tap) in [Tap::BeforeFc, Tap::AfterFc].into_iter().enumerate() {
            if tap_weight(weights, tap) <= 0.0 {
                continue;
            }
            let xs = block(
                match tap {
                    Tap::BeforeFc => student_before,
                    Tap::AfterFc => student_logits,
                },
                tap.tag(),
            );
            let xt = block(cache.tap(tap), tap.tag());
            let (student, teacher) = match self.choice {
                LandmarkChoice::ClassCenters => (class_centers(&xs, labels)?, class_centers(&xt, labels)?),
                LandmarkChoice::KMeans { .. } => {
                    let (teacher, groups) = self.kmeans[slot_idx].clone().expect("fitted at plan time");
                    let mut student = teacher.clone();
                    student.points = group_means(&xs, &groups, teacher.len())?;
                    (student, teacher)
                }
                LandmarkChoice::Random { .. } => {
                    let cols = self.random_columns.as_ref().expect("sampled at plan time");
                    (landmarks_from_columns(&xs, cols)?, landmarks_from_columns(&xt, cols)?)
                }
                LandmarkChoice::OneHot => {
                    let n_classes = crate::landmarks::num_classes(labels);
                    if xs.dim() != n_classes || xt.dim() != n_classes {
                        return Err(KdaError::Config(format!(
                            "one-hot landmarks need {n_classes}-dim features at tap {}",
                            tap.tag()
                        )));
                    }
                    (onehot_landmarks(n_classes)?, onehot_landmarks(n_classes)?)
                }
            };
            let weighting = match self.weighting {
                KdaWeighting::None => None,
                KdaWeighting::TeacherPinvSqrt => Some(pseudo_inverse_sqrt(&teacher.gram(), DEFAULT_PINV_TOL)?),
            };
            let tl = TapLandmarks {
                student,
                teacher,
                weighting,
            };
            match tap {
                Tap::BeforeFc => out.before_fc = Some(tl),
                Tap::AfterFc => out.after_fc = Some(tl),
            }
        }
        Ok(out)
    }
}

fn tap_weight(w: &LossWeights, tap: Tap) -> f64 {
    match tap {
        Tap::BeforeFc => w.kda_before_fc,
        Tap::AfterFc => w.kda_after_fc,
    }
}

fn write_columns(dst: &mut Matrix, src: &Matrix, indices: &[usize]) {
    for r in 0..src.rows() {
        for (j, &i) in indices.iter().enumerate() {
            dst[(r, i)] = src[(r, j)];
        }
    }
}

#[derive(Default)]
struct LossTotals {
    sums: StepLosses,
    count: usize,
}

impl LossTotals {
    fn add(&mut self, l: &StepLosses, n: usize) {
        let w = n as f64;
        self.sums.ce += w * l.ce;
        self.sums.kda_before_fc += w * l.kda_before_fc;
        self.sums.kda_after_fc += w * l.kda_after_fc;
        self.sums.kd += w * l.kd;
        self.sums.rkd += w * l.rkd;
        self.sums.total += w * l.total;
        self.count += n;
    }

    fn mean(&self, f: impl Fn(&StepLosses) -> f64) -> f64 {
        f(&self.sums) / self.count as f64
    }
}

fn epoch_metrics(
    student: &Mlp,
    data: &SplitDataset,
    cache: &TeacherCache,
    epoch: usize,
    lr: f64,
    kda_active: bool,
    totals: &LossTotals,
) -> Result<MetricRecord> {
    let pass = student.forward(&data.train.x)?;
    let s_before = pass.before_fc();
    let transfer_before = gram_difference_norm(s_before, &cache.before_fc)? / cache.before_norm;
    let transfer_after = gram_difference_norm(pass.logits(), &cache.logits)? / cache.after_norm;
    let s_block = block(s_before, "student");
    let s_centers = class_centers(&s_block, &data.train.labels)?;
    let c_s = partial_gram(&s_block, &s_centers)?;
    let c_t = partial_gram(&block(&cache.before_fc, "teacher"), &cache.centers)?;
    Ok(MetricRecord {
        epoch,
        lr,
        kda_active,
        train_loss: totals.mean(|l| l.total),
        train_ce: totals.mean(|l| l.ce),
        train_kda_before_fc: totals.mean(|l| l.kda_before_fc),
        train_kda_after_fc: totals.mean(|l| l.kda_after_fc),
        train_kd: totals.mean(|l| l.kd),
        train_rkd: totals.mean(|l| l.rkd),
        test_accuracy: student.accuracy(&data.test.x, &data.test.labels)?,
        transfer_loss_before_fc: transfer_before,
        transfer_loss_after_fc: transfer_after,
        partial_loss: c_s.sub(&c_t)?.frobenius_norm() / cache.before_norm,
        min_eig_ws: min_eigenvalue(&s_centers.gram())?,
        min_eig_wt: cache.min_eig_wt,
    })
}

/// Trains a student against a frozen teacher; see the module docs for the
/// epoch structure.
pub fn train_student_kda(
    config: &TrainConfig,
    data: &SplitDataset,
    teacher: &Mlp,
    spec: &StudentSpec,
    probe: &mut dyn TrainProbe,
) -> Result<(Mlp, MetricLog)> {
    config.validate()?;
    let train = &data.train;
    let n = train.len();
    let n_classes = train.num_classes();
    if teacher.input_dim() != train.dim() || teacher.output_dim() != n_classes {
        return Err(KdaError::dim(
            "train_student_kda",
            format!(
                "teacher maps {} → {} but data is {} → {n_classes}",
                teacher.input_dim(),
                teacher.output_dim(),
                train.dim()
            ),
        ));
    }
    let weights = config.loss_weights;
    let cache = TeacherCache::new(teacher, data)?;
    let plan = LandmarkPlan::new(spec, &weights, &cache, data, config.seed)?;

    let mut student = Mlp::new(
        &widths(train.dim(), &spec.hidden, n_classes),
        derive_seed(config.seed, STREAM_STUDENT_INIT),
    )?;
    let mut opt = SgdMomentum::new(&student, config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SHUFFLE));
    let mut recorded_before = Matrix::zeros(student.tap_dim(Tap::BeforeFc), n);
    let mut recorded_logits = Matrix::zeros(n_classes, n);
    let mut landmarks: Option<KdaLandmarks> = None;
    let mut log = MetricLog::default();

    for epoch in 1..=config.total_epochs {
        let kda_active = epoch > config.warmup_epochs;
        let lr = cosine_lr(epoch - 1, config.total_epochs, config.lr0);
        probe.on_epoch_start(epoch, landmarks.as_ref());
        let mut totals = LossTotals::default();
        for idx in batches(n, config.batch_size, &mut rng) {
            let x = train.x.select_columns(&idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let targets = TeacherTargets {
                before_fc: cache.before_fc.select_columns(&idx)?,
                logits: cache.logits.select_columns(&idx)?,
            };
            let (losses, pass) = backward_step(
                &mut student,
                &mut opt,
                &x,
                &y,
                Some(&targets),
                &weights,
                landmarks.as_ref(),
                kda_active,
                lr,
            )
            .map_err(|e| match e {
                KdaError::NonFinite(what) => {
                    KdaError::NonFinite(format!("epoch {epoch}, lr {lr}: {what}"))
                }
                other => other,
            })?;
            write_columns(&mut recorded_before, pass.before_fc(), &idx);
            write_columns(&mut recorded_logits, pass.logits(), &idx);
            totals.add(&losses, idx.len());
            probe.on_batch(epoch, &idx, &pass, &losses);
        }
        if weights.uses_kda() {
            landmarks = Some(plan.compute(
                &weights,
                &recorded_before,
                &recorded_logits,
                &cache,
                &train.labels,
                epoch,
            )?);
        }
        log.push(epoch_metrics(&student, data, &cache, epoch, lr, kda_active, &totals)?)?;
        probe.on_epoch_end(epoch, &student);
    }
    Ok((student, log))
}

/// Convenience for a landmark strategy tag.
pub fn strategy_of(choice: LandmarkChoice) -> LandmarkStrategy {
    match choice {
        LandmarkChoice::ClassCenters => LandmarkStrategy::ClassCenters,
        LandmarkChoice::KMeans { .. } => LandmarkStrategy::KMeansPerClass,
        LandmarkChoice::Random { .. } => LandmarkStrategy::Random,
        LandmarkChoice::OneHot => LandmarkStrategy::OneHot,
    }
}
