//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test --release -p kda-core --test acceptance`.

#![allow(clippy::needless_range_loop)]

mod common;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kda_core::experiment::{metrics_file_name, run_experiment, ExperimentSpec, ResultRow};
use kda_core::gram::build_nystrom;
use kda_core::landmarks::{class_centers, onehot_landmarks};
use kda_core::losses::{kd_squared_logit_loss, squared_partial_residual};
use kda_core::train::MetricLog;
use kda_core::verify::{
    check_doubly_stochastic_M, check_pinv_contraction, check_thm5_decomposition, random_pd, track_correlation,
    triangle_check,
};
use kda_core::Matrix;
use rand::Rng;

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(id: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { id, passed, detail }
}

fn rows_to_vecs(m: &Matrix) -> Vec<Vec<f64>> {
    m.to_rows()
}

fn cholesky_inverse(a: &Matrix) -> Vec<Vec<f64>> {
    let n = a.rows();
    let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    common::cholesky_solve(&rows_to_vecs(a), &id)
}

// ---------------------------------------------------------------------------
// 1. bound suite

fn bound_suite() -> Outcome {
    let start = Instant::now();
    let mut violations = Vec::new();
    let mut disagreements = 0usize;

    for t in 0..500u64 {
        let mut r = common::rng(10_000 + t);
        let w_s = random_pd(8, 1.0, 100.0, &mut r).unwrap();
        let w_t = random_pd(8, 1.0, 100.0, &mut r).unwrap();
        let report = check_pinv_contraction(&w_s, &w_t).unwrap();
        // oracle: inverses by Cholesky, norms by direct sums
        let lhs = common::frob_diff(&cholesky_inverse(&w_s), &cholesky_inverse(&w_t));
        let rhs = common::frob_diff(&w_s.to_rows(), &w_t.to_rows());
        if (lhs - report.lhs).abs() > 1e-9 * (1.0 + lhs) || (rhs - report.rhs).abs() > 1e-9 * (1.0 + rhs) {
            disagreements += 1;
        }
        if !report.satisfied || lhs > rhs + 1e-9 {
            violations.push(format!("pinv#{t}"));
        }
    }

    for t in 0..500u64 {
        let mut r = common::rng(20_000 + t);
        let w_s = random_pd(8, 1.0, 100.0, &mut r).unwrap();
        let w_t = random_pd(8, 1.0, 100.0, &mut r).unwrap();
        let k = r.random_range(1..=8);
        let report = check_doubly_stochastic_M(&w_s, &w_t, k).unwrap();
        if !report.satisfied {
            violations.push(format!("M#{t}"));
        }
        // with k = dim both eigenbases are complete, so sums are exactly 1
        let full = check_doubly_stochastic_M(&w_s, &w_t, 8).unwrap();
        if (full.lhs - 1.0).abs() > 1e-9 {
            disagreements += 1;
        }
    }

    for t in 0..200u64 {
        let mut r = common::rng(30_000 + t);
        let n = r.random_range(2..=50);
        let classes = r.random_range(1..=n.min(5));
        let d_s = r.random_range(1..=8);
        let d_t = r.random_range(1..=8);
        let labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { r.random_range(0..classes) }).collect();
        let x_s = common::uniform(d_s, n, 1.0, &mut r);
        let x_t = common::uniform(d_t, n, 2.0, &mut r);
        let (bs, bt) = (common::block(x_s.clone()), common::block(x_t.clone()));
        let c_s = class_centers(&bs, &labels).unwrap();
        let c_t = class_centers(&bt, &labels).unwrap();
        let report = check_thm5_decomposition(&bs, &bt, &c_s, &c_t, &labels).unwrap();
        // oracle: explicit double sum
        let norm = |x: &Matrix, i: usize| x.column(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = (0..n).map(|i| norm(&x_s, i).max(norm(&x_t, i))).fold(0.0, f64::max);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let dist = |x: &Matrix, c: &Matrix, i: usize| {
            let (xi, ci) = (x.column(i), c.column(labels[i]));
            xi.iter().zip(&ci).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let mut rhs = 0.0;
        let mut lhs_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (ds, dt) = (c_s.points.column(labels[i]), c_t.points.column(labels[i]));
                let (xs_j, xt_j) = (x_s.column(j), x_t.column(j));
                rhs += e * dist(&x_s, &c_s.points, i) + e * dist(&x_t, &c_t.points, i);
                rhs += (dot(&ds, &xs_j) - dot(&dt, &xt_j)).abs();
                lhs_sq += (dot(&x_s.column(i), &xs_j) - dot(&x_t.column(i), &xt_j)).powi(2);
            }
        }
        let lhs = lhs_sq.sqrt();
        if (rhs - report.rhs).abs() > 1e-9 * (1.0 + rhs) || (lhs - report.lhs).abs() > 1e-7 * (1.0 + lhs) {
            disagreements += 1;
        }
        if !report.satisfied || lhs > rhs + 1e-9 {
            violations.push(format!("thm5#{t}"));
        }
    }

    for t in 0..200u64 {
        let mut r = common::rng(40_000 + t);
        let n = r.random_range(2..=40);
        let m = r.random_range(1..=n.min(8));
        let k = r.random_range(1..=m);
        let x_s = common::uniform(r.random_range(1..=8), n, 1.0, &mut r);
        let x_t = common::uniform(r.random_range(1..=8), n, 1.0, &mut r);
        let cols = rand::seq::index::sample(&mut r, n, m).into_vec();
        let a_s = build_nystrom(&common::block(x_s.clone()), &common::column_landmarks(&x_s, &cols), k)
            .unwrap()
            .reconstruct();
        let a_t = build_nystrom(&common::block(x_t.clone()), &common::column_landmarks(&x_t, &cols), k)
            .unwrap()
            .reconstruct();
        let k_s = common::naive_tr_matmul(&x_s, &x_s);
        let k_t = common::naive_tr_matmul(&x_t, &x_t);
        let report = triangle_check(
            &Matrix::from_rows(&k_s).unwrap(),
            &Matrix::from_rows(&k_t).unwrap(),
            &a_s,
            &a_t,
        )
        .unwrap();
        let rhs = common::frob_diff(&k_s, &a_s.to_rows())
            + common::frob_diff(&k_t, &a_t.to_rows())
            + common::frob_diff(&a_s.to_rows(), &a_t.to_rows());
        let lhs = common::frob_diff(&k_s, &k_t);
        if !report.satisfied || lhs > rhs + 1e-9 {
            violations.push(format!("triangle#{t}"));
        }
    }

    let elapsed = start.elapsed();
    let passed = violations.is_empty() && disagreements == 0 && elapsed < Duration::from_secs(60);
    outcome(
        "1 bound suite",
        passed,
        format!(
            "violations {} (pinv 500, M 500, thm5 200, triangle 200), oracle disagreements {disagreements}, {:.2}s{}",
            violations.len(),
            elapsed.as_secs_f64(),
            if violations.is_empty() { String::new() } else { format!(" first {:?}", &violations[..violations.len().min(5)]) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Nyström exactness

fn nystrom_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut monotone_breaks = 0usize;
    for t in 0..100u64 {
        let mut r = common::rng(50_000 + t);
        let d = r.random_range(2..=10);
        let n = r.random_range(3..=40);
        let rank = r.random_range(1..=d.min(n).min(6));
        let m = r.random_range(rank..=n.min(rank + 3));
        let x = common::low_rank(d, n, rank, &mut r);
        let cols = common::spanning_columns(&x, m, &mut r);
        let lm = common::column_landmarks(&x, &cols);
        let k_true = common::naive_tr_matmul(&x, &x);
        let norm = common::frob(&k_true);
        let xb = common::block(x.clone());
        let errs: Vec<f64> = (1..=m)
            .map(|k| common::frob_diff(&build_nystrom(&xb, &lm, k).unwrap().reconstruct().to_rows(), &k_true) / norm)
            .collect();
        worst = worst.max(errs[m - 1]);
        monotone_breaks += errs.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    }
    outcome(
        "2 nystrom exactness",
        worst < 1e-7 && monotone_breaks == 0,
        format!("worst relative error {worst:.3e} (< 1e-7), monotonicity breaks {monotone_breaks}, 100 instances"),
    )
}

// ---------------------------------------------------------------------------
// 3. gradients

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let worst: Vec<(&str, f64)> = common::gradcheck::NAMES
        .iter()
        .map(|&name| (name, common::gradcheck::worst(name, 50)))
        .collect();
    let elapsed = start.elapsed();
    let passed = worst.iter().all(|(_, e)| *e < 1e-5) && elapsed < Duration::from_secs(60);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome("3 gradient suite", passed, format!("worst relative error: {detail}; {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 4. one-hot equivalence

fn onehot_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let mut r = common::rng(60_000 + t);
        let l = r.random_range(2..=10);
        let n = r.random_range(1..=20);
        let z_s = common::uniform(l, n, 3.0, &mut r);
        let z_t = common::uniform(l, n, 3.0, &mut r);
        let kd = kd_squared_logit_loss(&z_s, &z_t).unwrap().value;
        let eye = onehot_landmarks(l).unwrap();
        let res = squared_partial_residual(&common::block(z_s), &common::block(z_t), &eye, &eye).unwrap();
        worst = worst.max((kd - res).abs() / kd.abs().max(1.0));
    }
    outcome(
        "4 one-hot equivalence",
        worst <= 1e-12,
        format!("worst |kd − residual| / max(1, kd) = {worst:.2e} over 100 pairs"),
    )
}

// ---------------------------------------------------------------------------
// 5–7. desk-scale experiment

fn desk_spec() -> ExperimentSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut spec = ExperimentSpec::from_file(&path).expect("desk config");
    spec.workers = 1;
    spec.record_runtime = false;
    spec
}

struct Desk {
    rows: Vec<ResultRow>,
    logs: Vec<(String, u64, MetricLog)>,
    elapsed: Duration,
    dir: tempfile::TempDir,
    warmup: usize,
}

fn run_desk() -> Result<Desk, String> {
    let spec = desk_spec();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_experiment(&spec, dir.path()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut logs = Vec::new();
    for row in &outcome.rows {
        let text = fs::read_to_string(dir.path().join(metrics_file_name(&row.arm, row.seed))).map_err(|e| e.to_string())?;
        logs.push((row.arm.clone(), row.seed, MetricLog::from_jsonl(&text).map_err(|e| e.to_string())?));
    }
    Ok(Desk {
        rows: outcome.rows,
        logs,
        elapsed,
        dir,
        warmup: spec.train.warmup,
    })
}

fn arm_mean(desk: &Desk, arm: &str, f: fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = desk.rows.iter().filter(|r| r.arm == arm && r.ok()).filter_map(f).collect();
    (vals.len() == 5).then(|| vals.iter().sum::<f64>() / 5.0)
}

fn desk_criteria(desk: &Desk) -> Vec<Outcome> {
    let all_ok = desk.rows.iter().all(ResultRow::ok);
    let acc = |arm| arm_mean(desk, arm, |r| r.acc);
    let tb = |arm| arm_mean(desk, arm, |r| r.transfer_before);
    let fmt = |v: Option<f64>| v.map_or("missing".to_string(), |v| format!("{v:.4}"));
    let mut out = Vec::new();

    let in_time = desk.elapsed < Duration::from_secs(600);
    out.push(outcome(
        "5 desk run",
        all_ok && in_time && desk.rows.len() == 30,
        format!("{} runs ok, {:.1}s (< 600s single-threaded)", desk.rows.iter().filter(|r| r.ok()).count(), desk.elapsed.as_secs_f64()),
    ));

    let (a_kda, a_base) = (acc("kda_centers"), acc("baseline"));
    out.push(outcome(
        "5a accuracy kda_centers >= baseline",
        matches!((a_kda, a_base), (Some(k), Some(b)) if k >= b),
        format!("kda_centers {} vs baseline {}", fmt(a_kda), fmt(a_base)),
    ));

    let (t_kda, t_rkd, t_rand) = (tb("kda_centers"), tb("rkd"), tb("kda_random"));
    out.push(outcome(
        "5b transfer kda_centers < rkd",
        matches!((t_kda, t_rkd), (Some(k), Some(r)) if k < r),
        format!("before-FC transfer loss {} vs {}", fmt(t_kda), fmt(t_rkd)),
    ));
    out.push(outcome(
        "5c transfer kda_centers <= kda_random",
        matches!((t_kda, t_rand), (Some(k), Some(r)) if k <= r),
        format!("before-FC transfer loss {} vs {}", fmt(t_kda), fmt(t_rand)),
    ));

    let corrs: Vec<Option<f64>> = desk
        .logs
        .iter()
        .filter(|(arm, _, _)| arm == "kda_centers")
        .map(|(_, _, log)| {
            let r = track_correlation(log).ok();
            // oracle
            let a: Vec<f64> = log.records.iter().map(|x| x.partial_loss).collect();
            let b: Vec<f64> = log.records.iter().map(|x| x.transfer_loss_before_fc).collect();
            r.filter(|v| (v - common::pearson(&a, &b)).abs() < 1e-9)
        })
        .collect();
    let strong = corrs.iter().filter(|c| c.is_some_and(|v| v > 0.9)).count();
    out.push(outcome(
        "5d correlation > 0.9 in >= 4 of 5 seeds",
        strong >= 4,
        format!(
            "pearson r per seed: {}",
            corrs.iter().map(|c| c.map_or("undefined".into(), |v| format!("{v:.4}"))).collect::<Vec<_>>().join(", ")
        ),
    ));

    let mut worst_s = f64::INFINITY;
    let mut worst_t = f64::INFINITY;
    for (_, _, log) in desk.logs.iter().filter(|(arm, _, _)| arm == "kda_centers") {
        for r in log.records.iter().filter(|r| r.epoch > desk.warmup) {
            worst_s = worst_s.min(r.min_eig_ws);
            worst_t = worst_t.min(r.min_eig_wt);
        }
    }
    out.push(outcome(
        "5e min eigenvalues positive after warm-up",
        worst_s > 0.0 && worst_t > 0.0,
        format!("smallest over epochs and seeds: W_S {worst_s:.4}, W_T {worst_t:.4}"),
    ));

    let (k1, k2) = (acc("kda_kmeans1"), acc("kda_kmeans2"));
    out.push(outcome(
        "7 two centers within 2 points of one",
        matches!((k1, k2), (Some(a), Some(b)) if (a - b).abs() <= 0.02),
        format!("1 center {}, 2 centers {}", fmt(k1), fmt(k2)),
    ));
    out
}

fn determinism(first: &Desk) -> Outcome {
    let second = match run_desk() {
        Ok(d) => d,
        Err(e) => return outcome("6 determinism", false, format!("second run failed: {e}")),
    };
    let mut files = vec!["results.csv".to_string()];
    files.extend(first.rows.iter().map(|r| metrics_file_name(&r.arm, r.seed)));
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| fs::read(first.dir.path().join(f)).ok() != fs::read(second.dir.path().join(f)).ok())
        .collect();
    outcome(
        "6 determinism",
        differing.is_empty(),
        format!("{} files compared byte for byte, {} differ", files.len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let mut outcomes = vec![bound_suite(), nystrom_exactness(), gradient_suite(), onehot_equivalence()];
    for o in &outcomes {
        report(o);
    }
    let mut rest = Vec::new();
    match run_desk() {
        Ok(desk) => {
            let mut desk_outcomes = desk_criteria(&desk);
            let ablation = desk_outcomes.pop().expect("ablation outcome");
            rest.extend(desk_outcomes);
            rest.push(determinism(&desk));
            rest.push(ablation);
        }
        Err(e) => {
            for id in ["5 desk run", "6 determinism", "7 two centers within 2 points of one"] {
                rest.push(outcome(id, false, format!("experiment failed: {e}")));
            }
        }
    }
    for o in &rest {
        report(o);
    }
    outcomes.extend(rest);
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(o: &Outcome) {
    println!("{} {:<42} {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail);
}
