//! Command-line entry point: `run`, `oracle-check` and `report`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ebd_core::error::{Error, Result};
use ebd_core::generator::{RewardBackend, TokenSeq};
use ebd_core::harness::config::{BackendKind, RewardConfig, RunConfig};
use ebd_core::harness::oracle_check::{oracle_check, write_csv, OracleCheckSettings};
use ebd_core::harness::report::{summarize, ReportFormat};
use ebd_core::harness::{
    read_prompts, read_records, run_batch, BatchSettings, Grader, HarnessBackend, Method, PromptItem,
    Timing, Validator,
};
use ebd_core::llm_client::{CompletionsClient, RemoteGenerator};
use ebd_core::reward::{AdvantageStats, RemoteReward, SyntheticReward, SyntheticRewardSpec};
use ebd_core::toy_lm::{parse_token_prompt, ToyLm, ToyModelSpec};

#[derive(Parser)]
#[command(name = "ebd", version, about = "Reward-guided energy-based decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every prompt of a JSONL file and write one record per prompt.
    Run(RunArgs),
    /// Compare long chains on a toy model against the exact tilted target.
    OracleCheck(OracleArgs),
    /// Summarize one or more record files.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// direct, best_of_n or ebd.
    #[arg(long)]
    method: Option<Method>,
    /// toy or remote.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Best-of-n pool size.
    #[arg(long)]
    n: Option<usize>,
    /// Toy model spec.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Synthetic reward spec.
    #[arg(long)]
    reward: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// `wall` or `simulated`.
    #[arg(long)]
    timing: Option<String>,
    /// Write EBD chain traces to this JSONL file.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// `exact`, `boxed` or `regex:<pattern>`.
    #[arg(long)]
    grader: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Synthetic reward spec.
    #[arg(long)]
    reward: PathBuf,
    /// Comma-separated inverse temperatures.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,3.5,5")]
    beta_grid: Vec<f64>,
    /// Counted chain steps per grid point; 0 computes exact rows only.
    #[arg(long, default_value_t = 200_000)]
    chain_steps: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 12)]
    block_count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Prompt token ids.
    #[arg(long, default_value = "")]
    prompt: String,
    /// Fixed standardization; defaults to the prior's reward moments.
    #[arg(long, requires = "stats_std")]
    stats_mean: Option<f64>,
    #[arg(long, requires = "stats_mean")]
    stats_std: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// csv or text.
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Method label speedups are relative to; the slowest method by default.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::OracleCheck(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn merge_run_args(args: RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    cfg.prompts = args.prompts.or(cfg.prompts);
    cfg.output = args.out.or(cfg.output);
    cfg.parallelism = args.workers.unwrap_or(cfg.parallelism);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.n = args.n.or(cfg.n);
    cfg.model = args.model.or(cfg.model);
    if let Some(spec) = args.reward {
        cfg.reward = Some(RewardConfig::Synthetic { spec });
    }
    if let Some(beta) = args.beta {
        cfg.decode.beta = beta;
    }
    if let Some(steps) = args.steps {
        cfg.decode.steps = steps;
    }
    if let Some(t) = args.timing {
        cfg.timing = Some(match t.as_str() {
            "wall" => Timing::Wall,
            "simulated" => Timing::DEFAULT_SIMULATED,
            other => return Err(Error::InputDomain(format!("unknown timing {other:?}"))),
        });
    }
    cfg.traces = args.traces.or(cfg.traces);
    cfg.grader = args.grader.or(cfg.grader);
    cfg.decode.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = merge_run_args(args)?;
    let prompts = read_prompts(cfg.prompts.as_ref().expect("validated"))?;
    let out_path = cfg.output.clone().expect("validated");
    if prompts.is_empty() {
        log::warn!("prompt file is empty; writing an empty output");
        File::create(&out_path)?;
        return Ok(());
    }

    let mut settings = BatchSettings::new(cfg.method, cfg.decode.clone());
    settings.n = cfg.best_of_n();
    settings.run_seed = cfg.seed;
    settings.workers = cfg.parallelism;
    settings.timing = cfg.timing();
    if let Some(g) = &cfg.grader {
        settings.grader = Grader::parse(g)?;
    }
    if let Some(v) = &cfg.validator {
        settings.validator = Validator::pattern(v)?;
    }
    settings.trace_file = cfg.traces.as_ref().map(|p| p.display().to_string());

    match cfg.backend {
        BackendKind::Toy => {
            settings.backend_label = "toy".into();
            let lm = ToyLm::from_config(ToyModelSpec::load(cfg.model.as_ref().expect("validated"))?, &cfg.decode)?;
            let reward = match cfg.reward.as_ref().expect("validated") {
                RewardConfig::Synthetic { spec } => SyntheticReward::new(SyntheticRewardSpec::load(spec)?)?,
                RewardConfig::Remote { .. } => {
                    return Err(Error::InputDomain(
                        "the toy backend needs a synthetic reward".into(),
                    ))
                }
            };
            execute(&lm, &reward, &prompts, &settings, &cfg)
        }
        BackendKind::Remote => {
            let endpoint = cfg.endpoint.clone().expect("validated");
            settings.backend_label = format!("remote:{}", endpoint.model_name);
            let generator = RemoteGenerator::new(CompletionsClient::new(endpoint)?, &cfg.decode)?;
            match cfg.reward.as_ref().expect("validated") {
                RewardConfig::Synthetic { spec } => {
                    let reward = SyntheticReward::new(SyntheticRewardSpec::load(spec)?)?;
                    execute(&generator, &reward, &prompts, &settings, &cfg)
                }
                RewardConfig::Remote { endpoint } => {
                    let reward = RemoteReward::new(endpoint.clone())?;
                    execute(&generator, &reward, &prompts, &settings, &cfg)
                }
            }
        }
    }
}

fn execute<G, B>(
    generator: &G,
    reward: &B,
    prompts: &[PromptItem],
    settings: &BatchSettings,
    cfg: &RunConfig,
) -> Result<()>
where
    G: HarnessBackend,
    B: RewardBackend<G::Prompt, G::Response>,
{
    let mut sink = BufWriter::new(File::create(cfg.output.as_ref().expect("validated"))?);
    let mut trace_sink = match &cfg.traces {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let (_, summary) = run_batch(
        generator,
        reward,
        prompts,
        settings,
        &mut sink,
        trace_sink.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut t) = trace_sink {
        t.flush()?;
    }
    eprintln!(
        "{} prompt(s), {} failure(s), method {}",
        summary.total,
        summary.failures,
        settings.method_label()
    );
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let lm = ToyLm::new(ToyModelSpec::load(&args.model)?, 1.0, usize::MAX)?;
    let reward = SyntheticReward::new(SyntheticRewardSpec::load(&args.reward)?)?;
    let prompt: TokenSeq = parse_token_prompt(&args.prompt)?;
    let stats = match (args.stats_mean, args.stats_std) {
        (Some(m), Some(s)) => Some(AdvantageStats::fixed(m, s)?),
        _ => None,
    };
    let settings = OracleCheckSettings {
        betas: args.beta_grid,
        chain_steps: args.chain_steps,
        burn_in: args.burn_in,
        block_count: args.block_count,
        seed: args.seed,
        stats,
        ..OracleCheckSettings::default()
    };
    let rows = oracle_check(&lm, &reward, &prompt, &settings)?;
    let mut out = output(args.out.as_deref())?;
    write_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.inputs {
        records.extend(read_records(path)?);
    }
    let report = summarize(&records, args.reference.as_deref())?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(report.render(args.format).as_bytes())?;
    out.flush()?;
    Ok(())
}
