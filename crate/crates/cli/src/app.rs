//! Argument parsing and dispatch for the `crowdmeta` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::benchmark::BenchmarkSettings;
use crate::commands::{cmd_baseline, cmd_benchmark, cmd_evaluate, cmd_meta_train, cmd_simulate, cmd_verify};
use crate::config::Config;
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};
use crate::metrics::Metrics;

#[derive(Debug, Parser)]
#[command(name = "crowdmeta", version, about = "Meta-learning from few examples labeled by noisy annotators")]
pub struct Cli {
    /// Worker threads for parallel task evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct Grid {
    /// Comma-separated support shots per class.
    #[arg(long)]
    pub shots: Option<String>,
    /// Comma-separated annotator counts.
    #[arg(long)]
    pub annotators: Option<String>,
    /// Comma-separated `e:h:s` target distributions.
    #[arg(long)]
    pub dist: Option<String>,
    /// Comma-separated spammer ratios; replaces `--dist` with `(0.1, 0.9 - s, s)`.
    #[arg(long)]
    pub spammer_ratio: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train the encoder and write checkpoint, log and metrics.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        /// `none` or `no-pseudo-annotation`.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Score a checkpoint over a shots x R x distribution grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        grid: Grid,
    },
    /// Run a label-aggregation baseline: mv, ds, proto-mv or proto-ds.
    Baseline {
        method: String,
        #[command(flatten)]
        common: Common,
        /// Meta-learned encoder for the proto- variants.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        grid: Grid,
    },
    /// Sample target annotators and their labels for inspection.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
    },
    /// Run a verification suite (or `all`); exit code 3 on failure.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Synthetic comparison of ours, w/o-PA and prototype baselines.
    Benchmark {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(common: &Common, grid: Option<&Grid>, ablation: Option<&str>) -> CliResult<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = ablation {
        cfg.set("ablation", a)?;
    }
    if let Some(g) = grid {
        for (key, value) in [
            ("shots", &g.shots),
            ("annotators", &g.annotators),
            ("target_dists", &g.dist),
            ("spammer_ratios", &g.spammer_ratio),
        ] {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_cells(m: &Metrics) {
    println!("run {} ({})", m.run_id, m.command);
    for c in &m.cells {
        let rec = c.label_recovery.map_or(String::new(), |r| format!("  label recovery {r:.4}"));
        println!(
            "{:>9} shots={} R={} dist={}  acc {:.4} +- {:.4} over {} tasks{rec}",
            c.method, c.shots, c.annotators, c.dist, c.mean_acc, c.stderr, c.n_tasks
        );
    }
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::MetaTrain { common, ablation } => {
            let cfg = load_config(&common, None, ablation.as_deref())?;
            let m = cmd_meta_train(&cfg, &common.out)?;
            print_cells(&m);
        }
        Command::Evaluate { common, checkpoint, grid } => {
            let cfg = load_config(&common, Some(&grid), None)?;
            print_cells(&cmd_evaluate(&cfg, &checkpoint, &common.out)?);
        }
        Command::Baseline { method, common, checkpoint, grid } => {
            let cfg = load_config(&common, Some(&grid), None)?;
            print_cells(&cmd_baseline(&cfg, &method, checkpoint.as_deref(), &common.out)?);
        }
        Command::Simulate { common, grid } => {
            let cfg = load_config(&common, Some(&grid), None)?;
            for t in cmd_simulate(&cfg, &common.out)? {
                println!(
                    "shots={} R={} dist={}  mv recovery {:.4}  ds recovery {:.4}",
                    t.shots, t.annotators, t.dist, t.mv_recovery, t.ds_recovery
                );
            }
        }
        Command::Verify { suite, seed } => {
            let reports = cmd_verify(&suite, seed)?;
            let mut failed = vec![];
            for r in &reports {
                print!("{r}");
                if !r.passed() {
                    failed.push(r.suite);
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
        Command::Benchmark { out, seed } => {
            let mut s = BenchmarkSettings::default();
            if let Some(seed) = seed {
                s.seed = seed;
            }
            for c in cmd_benchmark(&s, &out)? {
                println!("{:>9} shots={}  acc {:.4} +- {:.4}", c.method, c.shots, c.mean_acc, c.stderr);
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Usage(format!("thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
