use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optieq::bench::BenchConfig;
use optieq::config::ExperimentConfig;
use optieq::models::Precision;
use optieq::pipeline::{BenchOverrides, Pipeline};
use optieq::train::TrainMode;
use optieq::Error;

/// Optical channel equalizer experiments: simulate datasets, train the
/// recurrent teacher and the convolutional students, evaluate and benchmark.
#[derive(Debug, Parser)]
#[command(name = "optieq", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, conflicts_with = "profile")]
    config: Option<PathBuf>,

    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, default_value = "desk", value_parser = ["desk", "full"])]
    profile: String,

    /// Directory that relative `output_dir` values resolve against.
    #[arg(long, global = true, env = "OEQ_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    /// Upper bound on concurrent (launch power, polarization) jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate datasets for every launch power and the CDC/DBP baselines.
    Datagen {
        #[command(flatten)]
        powers: PowerArgs,
        /// Overwrite existing datasets.
        #[arg(long)]
        force: bool,
    },
    /// Train one model per launch power and polarization.
    Train {
        /// teacher, student_kd, student_scratch or student_l2.
        #[arg(long)]
        mode: TrainMode,
        #[command(flatten)]
        powers: PowerArgs,
        /// Replaces the configured training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite existing checkpoints.
        #[arg(long)]
        force: bool,
    },
    /// Q-factor sweep over all trained models and the baselines.
    Eval {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Inference latency of the teacher and the student.
    Bench(BenchArgs),
    /// Summary table from the baseline, evaluation and benchmark CSVs.
    Report,
    /// Check that every recorded artifact is intact and carries the config digest.
    Verify,
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Comma-separated subset of the configured launch powers [dBm].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    powers: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Teacher checkpoint; defaults to a trained or freshly initialized one.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Student checkpoint.
    #[arg(long)]
    student: Option<PathBuf>,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',')]
    threads: Option<Vec<usize>>,
    /// float32 or float64.
    #[arg(long)]
    precision: Option<String>,
    /// Measured iterations per thread count.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_windows: Option<usize>,
}

impl BenchArgs {
    fn overrides(&self, base: &BenchConfig) -> Result<BenchOverrides, Error> {
        let mut cfg = base.clone();
        let mut changed = false;
        if let Some(t) = &self.threads {
            cfg.thread_counts = t.clone();
            changed = true;
        }
        if let Some(p) = &self.precision {
            cfg.precision = match p.as_str() {
                "float32" | "f32" => Precision::Float32,
                "float64" | "f64" => Precision::Float64,
                other => return Err(Error::Config(format!("unknown precision `{other}`"))),
            };
            changed = true;
        }
        if let Some(i) = self.iters {
            cfg.measured_iters = i;
            changed = true;
        }
        if let Some(b) = self.batch_windows {
            cfg.batch_windows = b;
            changed = true;
        }
        Ok(BenchOverrides {
            config: changed.then_some(cfg),
            teacher: self.teacher.clone(),
            student: self.student.clone(),
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingPrerequisite { .. } => 3,
        Error::Divergence(_) => 4,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::by_profile(&cli.profile)?,
    };
    let pipeline = Pipeline::new(cfg, cli.output_root.as_deref())?;
    match cli.command {
        Command::Datagen { powers, force } => {
            let written = pipeline.datagen(powers.powers.as_deref(), force)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Train {
            mode,
            powers,
            seed,
            force,
        } => {
            for s in pipeline.train(mode, powers.powers.as_deref(), seed, force)? {
                println!(
                    "{mode} {} dBm pol {}: best epoch {}, validation MSE {:.6e}",
                    s.launch_power_dbm,
                    s.polarization.as_str(),
                    s.best_epoch,
                    s.best_val_loss
                );
            }
        }
        Command::Eval { seed } => {
            let report = pipeline.eval(seed)?;
            for r in &report.rows {
                let q = match (r.q_db, r.bit_errors) {
                    (Some(q), _) => format!("{q:.2} dB"),
                    (None, 0) => "no errors".to_string(),
                    (None, _) => "n/a".to_string(),
                };
                println!("{:>5} dBm  {:<16} Q {q}  BER {:.3e}", r.launch_power_dbm, r.method, r.ber);
            }
        }
        Command::Bench(args) => {
            let report = pipeline.bench_with(&args.overrides(&pipeline.config().bench)?)?;
            for r in &report.rows {
                println!(
                    "{:<8} {} threads  {:.1} ns/symbol  speedup {:.2}",
                    r.model, r.threads, r.median_ns_per_symbol, r.speedup_vs_teacher
                );
            }
        }
        Command::Report => print!("{}", pipeline.report()?),
        Command::Verify => {
            let m = pipeline.verify()?;
            println!("{} artifacts verified against config {}", m.artifacts.len(), m.config_digest);
        }
        Command::Config => print!("{}", pipeline.config().to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
