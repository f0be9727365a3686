//! Config-driven experiment runner: one teacher per seed, one student per
//! arm and seed, with results, metric logs and bound reports written to an
//! output directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_blobs, load_dataset, BlobParams, DatasetFormat, SplitDataset};
use crate::error::{KdaError, Result};
use crate::gram::FeatureBlock;
use crate::landmarks::class_centers;
use crate::losses::LossWeights;
use crate::net::{Mlp, Tap};
use crate::train::{
    train_student_kda, train_teacher, KdaWeighting, LandmarkChoice, MetricLog, NoProbe, StudentSpec,
    TrainConfig, TrainedTeacher,
};
use crate::verify::{check_doubly_stochastic_M, check_thm3_chain, check_thm5_decomposition, format_bounds, ChainLink};

pub const THREADS_ENV: &str = "KDA_THREADS";

pub const RESULTS_HEADER: [&str; 10] = [
    "arm",
    "seed",
    "acc",
    "transfer_before",
    "transfer_after",
    "partial_loss",
    "min_eig_ws",
    "min_eig_wt",
    "runtime_s",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// `seed` defaults to the run seed.
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        sigma: f64,
        seed: Option<u64>,
    },
    /// Pre-split files; the format is inferred from the extension unless
    /// given.
    File {
        train: PathBuf,
        test: PathBuf,
        format: Option<DatasetFormat>,
    },
}

impl DatasetSpec {
    pub fn blob_params(&self, run_seed: u64) -> Option<BlobParams> {
        match *self {
            DatasetSpec::Blobs {
                classes,
                dim,
                per_class,
                separation,
                sigma,
                seed,
            } => Some(BlobParams {
                classes,
                dim,
                per_class,
                separation,
                sigma,
                seed: seed.unwrap_or(run_seed),
            }),
            DatasetSpec::File { .. } => None,
        }
    }

    /// Relative file paths resolve against `base`.
    pub fn load(&self, run_seed: u64, base: &Path) -> Result<SplitDataset> {
        match self {
            DatasetSpec::Blobs { .. } => generate_blobs(&self.blob_params(run_seed).expect("blobs")),
            DatasetSpec::File { train, test, format } => {
                let read = |p: &PathBuf| -> Result<_> {
                    let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                    let fmt = match format {
                        Some(f) => *f,
                        None => DatasetFormat::from_path(&path)?,
                    };
                    load_dataset(&path, fmt)
                };
                let split = SplitDataset {
                    train: read(train)?,
                    test: read(test)?,
                };
                if split.train.dim() != split.test.dim() {
                    return Err(KdaError::Config(format!(
                        "train has {} features, test has {}",
                        split.train.dim(),
                        split.test.dim()
                    )));
                }
                if split.test.num_classes() > split.train.num_classes() {
                    return Err(KdaError::Config("test labels exceed train labels".into()));
                }
                Ok(split)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            epochs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentArch {
    pub hidden: Vec<usize>,
}

impl Default for StudentArch {
    fn default() -> Self {
        Self { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.total_epochs,
            warmup: d.warmup_epochs,
            batch_size: d.batch_size,
            lr0: d.lr0,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, epochs: usize, seed: u64, loss_weights: LossWeights) -> TrainConfig {
        TrainConfig {
            total_epochs: epochs,
            warmup_epochs: self.warmup,
            batch_size: self.batch_size,
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            loss_weights,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkKind {
    #[default]
    ClassCenters,
    Kmeans,
    Random,
    Onehot,
}

/// One experiment arm. `kda` is the weight applied to every tap in `taps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub kda: f64,
    pub kd: f64,
    pub rkd: f64,
    pub kd_temperature: f64,
    pub landmarks: LandmarkKind,
    pub centers_per_class: usize,
    pub random_count: Option<usize>,
    pub taps: Vec<Tap>,
    pub weighting: KdaWeighting,
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self {
            name: String::new(),
            kda: 0.0,
            kd: 0.0,
            rkd: 0.0,
            kd_temperature: LossWeights::default().kd_temperature,
            landmarks: LandmarkKind::ClassCenters,
            centers_per_class: 1,
            random_count: None,
            taps: vec![Tap::BeforeFc],
            weighting: KdaWeighting::None,
        }
    }
}

impl ArmSpec {
    pub fn loss_weights(&self) -> LossWeights {
        let tap_w = |t| if self.taps.contains(&t) { self.kda } else { 0.0 };
        LossWeights {
            kda_before_fc: tap_w(Tap::BeforeFc),
            kda_after_fc: tap_w(Tap::AfterFc),
            kd: self.kd,
            rkd: self.rkd,
            kd_temperature: self.kd_temperature,
        }
    }

    pub fn landmark_choice(&self) -> LandmarkChoice {
        match self.landmarks {
            LandmarkKind::ClassCenters => LandmarkChoice::ClassCenters,
            LandmarkKind::Kmeans => LandmarkChoice::KMeans {
                centers_per_class: self.centers_per_class,
            },
            LandmarkKind::Random => LandmarkChoice::Random {
                count: self.random_count,
            },
            LandmarkKind::Onehot => LandmarkChoice::OneHot,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(KdaError::Config(format!(
                "arm name {:?} must be non-empty [A-Za-z0-9_-]",
                self.name
            )));
        }
        if self.centers_per_class == 0 {
            return Err(KdaError::Config(format!("arm {}: centers_per_class must be ≥ 1", self.name)));
        }
        if self.kda > 0.0 && self.taps.is_empty() {
            return Err(KdaError::Config(format!("arm {}: kda weight without taps", self.name)));
        }
        self.loss_weights().validate()
    }
}

/// Sweep sizes for `verify-bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub pinv_trials: usize,
    pub pinv_dim: usize,
    pub m_trials: usize,
    pub thm5_trials: usize,
    pub triangle_trials: usize,
    pub chain_trials: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            pinv_trials: 500,
            pinv_dim: 8,
            m_trials: 500,
            thm5_trials: 200,
            triangle_trials: 200,
            chain_trials: 200,
        }
    }
}

/// Top-level TOML config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    /// When false, `runtime_s` is written as 0 so reruns are byte-identical.
    pub record_runtime: bool,
    pub dataset: Option<DatasetSpec>,
    pub teacher: TeacherSpec,
    pub student: StudentArch,
    pub train: TrainSection,
    pub arms: Vec<ArmSpec>,
    pub verify: VerifySpec,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            output_dir: None,
            seeds: vec![0],
            workers: 1,
            record_runtime: true,
            dataset: None,
            teacher: TeacherSpec::default(),
            student: StudentArch::default(),
            train: TrainSection::default(),
            arms: Vec::new(),
            verify: VerifySpec::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| KdaError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut spec = Self::from_toml(&fs::read_to_string(path)?)?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn dataset(&self) -> Result<&DatasetSpec> {
        self.dataset
            .as_ref()
            .ok_or_else(|| KdaError::Config("missing [dataset] section".into()))
    }

    fn validate_seeds(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(KdaError::Config("seeds must not be empty".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(KdaError::Config(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        Ok(())
    }

    pub fn validate_for_teacher(&self) -> Result<()> {
        self.validate_seeds()?;
        self.dataset()?;
        if self.teacher.epochs == 0 {
            return Err(KdaError::Config("teacher.epochs must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn validate_for_run(&self) -> Result<()> {
        self.validate_for_teacher()?;
        if self.arms.is_empty() {
            return Err(KdaError::Config("at least one [[arms]] entry is required".into()));
        }
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            arm.validate()?;
            if !names.insert(arm.name.as_str()) {
                return Err(KdaError::Config(format!("duplicate arm name {}", arm.name)));
            }
        }
        self.train
            .to_config(self.train.epochs, 0, LossWeights::default())
            .validate()
    }

    /// Configured workers, capped by `KDA_THREADS` when set.
    pub fn effective_workers(&self) -> usize {
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0);
        let w = self.workers.max(1);
        cap.map_or(w, |c| w.min(c))
    }

    pub fn output_dir_or(&self, fallback: &Path) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| fallback.to_path_buf())
    }
}

/// Applies `f` to every item on up to `workers` threads; results keep item
/// order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every item ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub arm: String,
    pub seed: u64,
    pub acc: Option<f64>,
    pub transfer_before: Option<f64>,
    pub transfer_after: Option<f64>,
    pub partial_loss: Option<f64>,
    pub min_eig_ws: Option<f64>,
    pub min_eig_wt: Option<f64>,
    pub runtime_s: f64,
    pub status: String,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map_err = |e: csv::Error| KdaError::Io(std::io::Error::other(e));
    w.write_record(RESULTS_HEADER).map_err(map_err)?;
    for r in rows {
        w.write_record([
            r.arm.clone(),
            r.seed.to_string(),
            num(r.acc),
            num(r.transfer_before),
            num(r.transfer_after),
            num(r.partial_loss),
            num(r.min_eig_ws),
            num(r.min_eig_wt),
            format!("{:?}", r.runtime_s),
            r.status.clone(),
        ])
        .map_err(map_err)?;
    }
    let bytes = w.into_inner().map_err(|e| KdaError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| KdaError::format("results header", e.to_string()))?
        .clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(KdaError::format("results header", format!("{header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let at = || format!("results row {}", i + 2);
        let rec = rec.map_err(|e| KdaError::format(at(), e.to_string()))?;
        let opt = |j: usize| -> Result<Option<f64>> {
            match &rec[j] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| KdaError::format(at(), format!("bad number {s:?}"))),
            }
        };
        rows.push(ResultRow {
            arm: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| KdaError::format(at(), "bad seed"))?,
            acc: opt(2)?,
            transfer_before: opt(3)?,
            transfer_after: opt(4)?,
            partial_loss: opt(5)?,
            min_eig_ws: opt(6)?,
            min_eig_wt: opt(7)?,
            runtime_s: opt(8)?.unwrap_or(0.0),
            status: rec[9].to_string(),
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation; the deviation needs ≥ 2 values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (Some(mean), std)
}

/// Per-arm mean/std over successful seeds, in arm order.
pub fn summary_csv(arms: &[ArmSpec], rows: &[ResultRow]) -> String {
    let mut out = String::from(
        "arm,seeds,acc_mean,acc_std,transfer_before_mean,transfer_before_std,transfer_after_mean,transfer_after_std\n",
    );
    for arm in arms {
        let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.arm == arm.name && r.ok()).collect();
        let stat = |f: fn(&ResultRow) -> Option<f64>| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            let (m, s) = mean_std(&vals);
            format!("{},{}", num(m), num(s))
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            arm.name,
            ok.len(),
            stat(|r| r.acc),
            stat(|r| r.transfer_before),
            stat(|r| r.transfer_after)
        );
    }
    out
}

pub fn metrics_file_name(arm: &str, seed: u64) -> String {
    format!("metrics_{arm}_{seed}.jsonl")
}

pub fn bounds_file_name(arm: &str, seed: u64) -> String {
    format!("bounds_{arm}_{seed}.txt")
}

pub fn teacher_file_name(seed: u64) -> String {
    format!("teacher_{seed}.json")
}

/// Bound checks on the trained pair's train-set features, with class-center
/// landmarks. A failed eigenvalue precondition is recorded as skipped.
pub fn run_bounds(student: &Mlp, teacher: &Mlp, data: &SplitDataset) -> Result<Vec<ChainLink>> {
    let labels = &data.train.labels;
    let x_s = FeatureBlock::new(student.forward(&data.train.x)?.before_fc().clone(), "student")?;
    let x_t = FeatureBlock::new(teacher.forward(&data.train.x)?.before_fc().clone(), "teacher")?;
    let c_s = class_centers(&x_s, labels)?;
    let c_t = class_centers(&x_t, labels)?;
    let mut links = match check_thm3_chain(&x_s, &x_t, &c_s, &c_t) {
        Ok(links) => links,
        Err(KdaError::Precondition(why)) => ["w_le_c", "pinv_contraction", "triangle"]
            .into_iter()
            .map(|c| ChainLink::Skipped {
                context: c.into(),
                reason: format!("eigenvalue-precondition:{why}"),
            })
            .collect(),
        Err(e) => return Err(e),
    };
    let k = c_s.len();
    links.push(ChainLink::Checked(check_doubly_stochastic_M(&c_s.gram(), &c_t.gram(), k)?));
    links.push(ChainLink::Checked(check_thm5_decomposition(&x_s, &x_t, &c_s, &c_t, labels)?));
    Ok(links)
}

#[derive(Debug, Clone)]
pub struct SeedTeacher {
    pub seed: u64,
    pub data: SplitDataset,
    pub teacher: TrainedTeacher,
    pub fingerprint: String,
}

/// Builds the dataset and trains the teacher for every seed.
pub fn train_teachers(spec: &ExperimentSpec, workers: usize) -> Result<Vec<SeedTeacher>> {
    spec.validate_for_teacher()?;
    let dataset = spec.dataset()?;
    parallel_map(&spec.seeds, workers, |&seed| -> Result<SeedTeacher> {
        let data = dataset.load(seed, &spec.base_dir)?;
        let cfg = spec.train.to_config(spec.teacher.epochs, seed, LossWeights::default());
        let teacher = train_teacher(&cfg, &data, &spec.teacher.hidden)?;
        log::info!("teacher seed {seed}: test accuracy {:.4}", teacher.test_accuracy);
        Ok(SeedTeacher {
            seed,
            fingerprint: teacher.net.fingerprint(),
            data,
            teacher,
        })
    })
    .into_iter()
    .collect()
}

pub fn teachers_csv(teachers: &[SeedTeacher]) -> String {
    let mut out = String::from("seed,test_acc,train_acc,fingerprint\n");
    for t in teachers {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{}",
            t.seed, t.teacher.test_accuracy, t.teacher.train_accuracy, t.fingerprint
        );
    }
    out
}

pub fn write_teachers(teachers: &[SeedTeacher], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("teachers.csv"), teachers_csv(teachers))?;
    for t in teachers {
        let json = serde_json::to_string(&t.teacher.net).expect("network serializes");
        fs::write(out.join(teacher_file_name(t.seed)), json)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub teachers: Vec<SeedTeacher>,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(ResultRow::ok)
    }
}

struct ArmOutput {
    row: ResultRow,
    files: Vec<(String, String)>,
}

fn run_arm(spec: &ExperimentSpec, st: &SeedTeacher, arm: &ArmSpec) -> ArmOutput {
    let start = Instant::now();
    let mut row = ResultRow {
        arm: arm.name.clone(),
        seed: st.seed,
        acc: None,
        transfer_before: None,
        transfer_after: None,
        partial_loss: None,
        min_eig_ws: None,
        min_eig_wt: None,
        runtime_s: 0.0,
        status: "ok".into(),
    };
    let mut files = Vec::new();
    let result = (|| -> Result<(Mlp, MetricLog)> {
        let cfg = spec.train.to_config(spec.train.epochs, st.seed, arm.loss_weights());
        let student_spec = StudentSpec {
            hidden: spec.student.hidden.clone(),
            landmarks: arm.landmark_choice(),
            weighting: arm.weighting,
        };
        let out = train_student_kda(&cfg, &st.data, &st.teacher.net, &student_spec, &mut NoProbe)?;
        if st.teacher.net.fingerprint() != st.fingerprint {
            return Err(KdaError::State("teacher parameters changed during student training".into()));
        }
        Ok(out)
    })();
    match result {
        Ok((student, log)) => {
            let last = log.last().expect("at least one epoch").clone();
            row.acc = Some(last.test_accuracy);
            row.transfer_before = Some(last.transfer_loss_before_fc);
            row.transfer_after = Some(last.transfer_loss_after_fc);
            if arm.loss_weights().uses_kda() {
                row.partial_loss = Some(last.partial_loss);
                row.min_eig_ws = Some(last.min_eig_ws);
                row.min_eig_wt = Some(last.min_eig_wt);
            }
            files.push((metrics_file_name(&arm.name, st.seed), log.to_jsonl()));
            match run_bounds(&student, &st.teacher.net, &st.data) {
                Ok(links) => files.push((bounds_file_name(&arm.name, st.seed), format_bounds(&links))),
                Err(e) => row.status = format!("failed: bounds: {e}"),
            }
        }
        Err(e) => row.status = format!("failed: {e}"),
    }
    if spec.record_runtime {
        row.runtime_s = start.elapsed().as_secs_f64();
    }
    ArmOutput { row, files }
}

/// Runs every arm for every seed and writes `results.csv`, `summary.csv`,
/// `teachers.csv` and per-run metric and bound files into `out`. Arm
/// failures are recorded in the status column; check
/// [`ExperimentOutcome::all_ok`].
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentOutcome> {
    spec.validate_for_run()?;
    fs::create_dir_all(out)?;
    let workers = spec.effective_workers();
    let teachers = train_teachers(spec, workers)?;
    fs::write(out.join("teachers.csv"), teachers_csv(&teachers))?;

    let jobs: Vec<(usize, usize)> = (0..teachers.len())
        .flat_map(|s| (0..spec.arms.len()).map(move |a| (s, a)))
        .collect();
    let outputs = parallel_map(&jobs, workers, |&(s, a)| {
        let output = run_arm(spec, &teachers[s], &spec.arms[a]);
        for (name, contents) in &output.files {
            if let Err(e) = fs::write(out.join(name), contents) {
                log::warn!("could not write {name}: {e}");
            }
        }
        log::info!("arm {} seed {}: {}", output.row.arm, output.row.seed, output.row.status);
        output.row
    });
    // arm-major order
    let mut rows = outputs;
    rows.sort_by_key(|r| {
        let a = spec.arms.iter().position(|arm| arm.name == r.arm).unwrap_or(usize::MAX);
        let s = spec.seeds.iter().position(|&seed| seed == r.seed).unwrap_or(usize::MAX);
        (a, s)
    });
    fs::write(out.join("results.csv"), results_csv(&rows)?)?;
    fs::write(out.join("summary.csv"), summary_csv(&spec.arms, &rows))?;
    Ok(ExperimentOutcome {
        rows,
        teachers,
        output_dir: out.to_path_buf(),
    })
}
