use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kda_core::data::{save_dataset, DatasetFormat};
use kda_core::experiment::{run_experiment, train_teachers, write_teachers, ExperimentSpec};
use kda_core::verify::{
    format_bounds, sweep_doubly_stochastic, sweep_pinv_contraction, sweep_thm3_chain, sweep_thm5,
    sweep_triangle, ChainLink,
};
use kda_core::Result;

#[derive(Parser)]
#[command(name = "kda", version, about = "Gram-matrix distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Train and save one teacher per seed.
    TrainTeacher(Common),
    /// Run every arm for every seed.
    Run(Common),
    /// Randomized sweeps over the bound checks.
    VerifyBounds(Common),
    /// Write the configured blob dataset to train/test files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn load(common: &Common) -> Result<(ExperimentSpec, PathBuf)> {
    let mut spec = ExperimentSpec::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| spec.output_dir_or(Path::new(".")));
    fs::create_dir_all(&out)?;
    Ok((spec, out))
}

fn gen_data(common: &Common, format: Format) -> Result<bool> {
    let (spec, out) = load(common)?;
    spec.validate_for_teacher()?;
    let (fmt, ext) = match format {
        Format::Csv => (DatasetFormat::Csv, "csv"),
        Format::Binary => (DatasetFormat::Binary, "bin"),
    };
    let multi = spec.seeds.len() > 1;
    for &seed in &spec.seeds {
        let data = spec.dataset()?.load(seed, &spec.base_dir)?;
        let suffix = if multi { format!("_{seed}") } else { String::new() };
        for (name, part) in [("train", &data.train), ("test", &data.test)] {
            let path = out.join(format!("{name}{suffix}.{ext}"));
            save_dataset(part, &path, fmt)?;
            println!("wrote {} ({} examples)", path.display(), part.len());
        }
    }
    Ok(true)
}

fn train_teacher_cmd(common: &Common) -> Result<bool> {
    let (spec, out) = load(common)?;
    let teachers = train_teachers(&spec, spec.effective_workers())?;
    write_teachers(&teachers, &out)?;
    for t in &teachers {
        println!(
            "seed {}: test accuracy {:.4}, fingerprint {}",
            t.seed, t.teacher.test_accuracy, t.fingerprint
        );
    }
    Ok(true)
}

fn run_cmd(common: &Common) -> Result<bool> {
    let (spec, out) = load(common)?;
    let outcome = run_experiment(&spec, &out)?;
    for row in &outcome.rows {
        println!(
            "{:<16} seed {:<4} acc {:<8} {}",
            row.arm,
            row.seed,
            row.acc.map_or("-".into(), |a| format!("{a:.4}")),
            row.status
        );
    }
    println!("results in {}", out.display());
    Ok(outcome.all_ok())
}

fn verify_cmd(common: &Common) -> Result<bool> {
    let (spec, out) = load(common)?;
    let v = &spec.verify;
    let workers = spec.effective_workers();
    let seed = spec.seeds.first().copied().unwrap_or(0);
    let sweeps = [
        sweep_pinv_contraction(v.pinv_trials, v.pinv_dim, seed, workers)?,
        sweep_doubly_stochastic(v.m_trials, v.pinv_dim, seed, workers)?,
        sweep_thm5(v.thm5_trials, seed, workers)?,
        sweep_triangle(v.triangle_trials, seed, workers)?,
        sweep_thm3_chain(v.chain_trials, seed, workers)?,
    ];
    let mut links = Vec::new();
    for s in &sweeps {
        println!(
            "{:<20} {:>4} trials  {} violations  worst slack {:.3e}",
            s.name, s.trials, s.violations, s.worst_slack
        );
        links.push(s.as_link());
        links.extend(s.failures.iter().cloned().map(ChainLink::Checked));
    }
    fs::write(out.join("bounds.txt"), format_bounds(&links))?;
    Ok(sweeps.iter().all(|s| s.passed()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainTeacher(c) => train_teacher_cmd(c),
        Command::Run(c) => run_cmd(c),
        Command::VerifyBounds(c) => verify_cmd(c),
        Command::GenData { common, format } => gen_data(common, *format),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
