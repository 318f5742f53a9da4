use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use capsim::benchmark::load_benchmark;
use capsim::engine::SimConfig;
use capsim::llm::Mode;
use capsim::stats::StdConvention;
use capsim_cli::compare::{compare_files, write_compare};
use capsim_cli::evaluate::{run_evaluate, EvaluateArgs, SelectionFile, Task};
use capsim_cli::io::{load_delta, load_matrix, load_sim_config, read_text};
use capsim_cli::make_client;
use capsim_cli::pipeline::{run_pipeline, PipelineArgs, DEFAULT_REPROMPTS};
use capsim_cli::simulate::{load_runs, run_report, run_simulate};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "capsim", version, about = "Policy evaluation with LLMs and a needs-based agent simulation")]
struct Cli {
    /// Simulation config (JSON or TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (and LLM requests in flight).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "replay")]
    mode: Mode,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StdArg {
    Population,
    Sample,
}

impl From<StdArg> for StdConvention {
    fn from(s: StdArg) -> Self {
        match s {
            StdArg::Population => StdConvention::Population,
            StdArg::Sample => StdConvention::Sample,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ask a model for a top choice or ranking on every benchmark scenario.
    Evaluate {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.1)]
        temperature: f64,
        #[arg(long, value_enum, default_value = "top")]
        task: Task,
        /// Add the location sentence to each prompt.
        #[arg(long)]
        emphasis: bool,
        /// Ask for a four-step justification with short steps.
        #[arg(long)]
        constrained_reasoning: bool,
        #[arg(long, default_value = "cassette.jsonl")]
        cassette: PathBuf,
    },
    /// Pairwise agreement between two or more selection files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Benchmark used for capability histograms.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Fail unless every file covers the same scenarios.
        #[arg(long)]
        strict: bool,
    },
    /// Translate a policy into a SAT delta and measure it in simulation.
    Pipeline {
        /// Text file holding the policy.
        #[arg(long)]
        policy: PathBuf,
        /// Base matrix JSON; defaults to the built-in matrix.
        #[arg(long)]
        base_matrix: Option<PathBuf>,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.1)]
        temperature: f64,
        #[arg(long, default_value = "cassette.jsonl")]
        cassette: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = DEFAULT_REPROMPTS)]
        reprompts: usize,
        /// Give the policy arm its own seeds instead of reusing the baseline's.
        #[arg(long)]
        unpaired: bool,
        #[arg(long, value_enum, default_value = "population")]
        std: StdArg,
        #[arg(long)]
        label: Option<String>,
    },
    /// Run a batch of simulations, optionally under a policy delta.
    Simulate {
        #[arg(long)]
        delta: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, value_enum, default_value = "population")]
        std: StdArg,
    },
    /// Compare two saved batches.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        treated: PathBuf,
        #[arg(long, default_value = "policy")]
        label: String,
        #[arg(long, value_enum, default_value = "population")]
        std: StdArg,
    },
}

fn sim_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_sim_config(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;

    match &cli.command {
        Command::Evaluate { benchmark, model, temperature, task, emphasis, constrained_reasoning, cassette } => {
            let bench = load_benchmark(benchmark)?;
            let client = make_client(cli.mode, cassette, jobs)?;
            let args = EvaluateArgs {
                model: model.clone(),
                temperature: *temperature,
                task: *task,
                emphasis: *emphasis,
                constrained_reasoning: *constrained_reasoning,
                out: cli.out.clone(),
            };
            let s = run_evaluate(&bench, &client, &args)?;
            println!(
                "{} scenarios: {} parsed, {} parse failures, {} errors",
                s.responses.len(),
                s.parsed,
                s.parse_failures,
                s.hard_errors
            );
            if !s.success() {
                eprintln!("see {}", cli.out.join("failures.log").display());
            }
            Ok(s.success())
        }
        Command::Compare { files, benchmark, strict } => {
            let loaded = files.iter().map(|p| SelectionFile::load(p)).collect::<Result<Vec<_>>>()?;
            let bench = benchmark.as_ref().map(load_benchmark).transpose()?;
            let report = compare_files(&loaded, bench.as_ref(), *strict)?;
            write_compare(&report, &cli.out)?;
            for p in report.pairs.iter().filter(|p| p.left < p.right) {
                let tau = p.kendall_tau.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into());
                println!(
                    "{} vs {}: n={} overlap={:.3} rouge_l={:.3} tau={tau}",
                    p.left, p.right, p.aligned, p.overlap, p.rouge_l_f1
                );
            }
            Ok(true)
        }
        Command::Pipeline {
            policy,
            base_matrix,
            model,
            temperature,
            cassette,
            runs,
            reprompts,
            unpaired,
            std,
            label,
        } => {
            let label = label.clone().unwrap_or_else(|| {
                policy.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into())
            });
            let mut args = PipelineArgs::new(label.clone(), read_text(policy)?, model.clone());
            if let Some(p) = base_matrix {
                args.base = load_matrix(p)?;
            }
            args.temperature = *temperature;
            args.sim = sim_config(&cli)?;
            args.n_runs = *runs;
            args.reprompts = *reprompts;
            args.unpaired = *unpaired;
            args.std = (*std).into();
            args.out = Some(cli.out.clone());
            let client = make_client(cli.mode, cassette, jobs)?;
            let outcome = run_pipeline(&args, &client)?;
            println!("delta: {} cell(s) changed", outcome.delta.changes.len());
            print!("{}", outcome.report.to_table(&label));
            Ok(true)
        }
        Command::Simulate { delta, runs, std } => {
            let cfg = sim_config(&cli)?;
            let delta = delta.as_ref().map(|p| load_delta(p)).transpose()?;
            let results = run_simulate(&cfg, delta.as_ref(), *runs, (*std).into(), &cli.out)?;
            println!("{} run(s) written to {}", results.len(), cli.out.join("runs.json").display());
            Ok(true)
        }
        Command::Report { baseline, treated, label, std } => {
            let report = run_report(&load_runs(baseline)?, &load_runs(treated)?, (*std).into(), label, &cli.out)?;
            print!("{}", report.to_table(label));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
