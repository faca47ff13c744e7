//! Experiment driver: corpus synthesis, three-stage training, evaluation,
//! ablation suites, and report rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 contract violation,
//! 4 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use zshot_core::ablate::{render_table_csv, run_suite, Suite};
use zshot_core::autodiff::MathError;
use zshot_core::checkpoint::CheckpointError;
use zshot_core::config::ExperimentConfig;
use zshot_core::data::DataError;
use zshot_core::pipeline::{cmd_synth, cmd_train, OutputLayout, PipelineError, TrainStage};
use zshot_core::report::{cmd_eval, cmd_report, format_summary};
use zshot_core::trainer::TrainError;

const EXIT_CONFIG: u8 = 2;
const EXIT_CONTRACT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        print_usage();
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            print_usage();
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

enum CliError {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Pipeline(PipelineError::Data(e))
    }
}

fn exit_code_for(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Data(d) => match d {
            DataError::Lookup { .. } => EXIT_CONTRACT,
            _ => EXIT_CONFIG,
        },
        PipelineError::Math(m) => match m {
            MathError::NonFinite { .. } | MathError::NonFiniteGradient { .. } => EXIT_NUMERICAL,
            _ => EXIT_CONTRACT,
        },
        PipelineError::Train(t) => match t {
            TrainError::Diverged { .. } => EXIT_NUMERICAL,
            TrainError::Math(m) => match m {
                MathError::NonFinite { .. } | MathError::NonFiniteGradient { .. } => EXIT_NUMERICAL,
                _ => EXIT_CONTRACT,
            },
            TrainError::Contract(_) => EXIT_CONTRACT,
        },
        PipelineError::Checkpoint(c) => match c {
            CheckpointError::Io(_) => EXIT_CONFIG,
            _ => EXIT_CONTRACT,
        },
        PipelineError::MissingStage { .. } => EXIT_CONTRACT,
    }
}

struct CommonArgs {
    config: ExperimentConfig,
    layout: OutputLayout,
    force: bool,
    stage: TrainStage,
    suite: Option<Suite>,
}

fn parse_common(args: &[String]) -> Result<CommonArgs, CliError> {
    let mut config_path: Option<PathBuf> = None;
    let mut seed: Option<u64> = None;
    let mut out: Option<PathBuf> = None;
    let mut force = false;
    let mut stage = TrainStage::All;
    let mut suite = None;

    let mut i = 0;
    while i < args.len() {
        let take_value = |i: &mut usize, name: &str| -> Result<String, CliError> {
            *i += 1;
            args.get(*i)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("{name} needs a value")))
        };
        match args[i].as_str() {
            "--config" => config_path = Some(PathBuf::from(take_value(&mut i, "--config")?)),
            "--seed" => {
                let v = take_value(&mut i, "--seed")?;
                seed = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--seed expects an integer, got `{v}`"))
                })?);
            }
            "--out" => out = Some(PathBuf::from(take_value(&mut i, "--out")?)),
            "--force" => force = true,
            "--stage" => {
                let v = take_value(&mut i, "--stage")?;
                stage = TrainStage::parse(&v).ok_or_else(|| {
                    CliError::Usage(format!(
                        "--stage expects pretrain|generator|alignment|all, got `{v}`"
                    ))
                })?;
            }
            "--suite" => {
                let v = take_value(&mut i, "--suite")?;
                suite = Some(Suite::parse(&v).ok_or_else(|| {
                    CliError::Usage(format!(
                        "--suite expects lgp|self_loss|alignment|m_sweep|embeddings, got `{v}`"
                    ))
                })?);
            }
            other => return Err(CliError::Usage(format!("unknown flag `{other}`"))),
        }
        i += 1;
    }

    let mut config = match config_path {
        Some(path) => ExperimentConfig::from_file(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;

    let root = out
        .or_else(|| std::env::var("ZSHOT_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("zshot_out"));
    Ok(CommonArgs {
        config,
        layout: OutputLayout::new(root),
        force,
        stage,
        suite,
    })
}

fn run(args: &[String]) -> Result<(), CliError> {
    let command = args[0].as_str();
    let common = parse_common(&args[1..])?;
    match command {
        "synth" => {
            let manifest = cmd_synth(&common.config, &common.layout, common.force)?;
            println!(
                "corpus written to {} ({} files)",
                common.layout.corpus_dir().display(),
                manifest.artifacts().len()
            );
        }
        "train" => {
            let manifest = cmd_train(&common.config, &common.layout, common.stage)?;
            println!(
                "training complete; {} artifacts under {}",
                manifest.artifacts().len(),
                common.layout.root.display()
            );
        }
        "eval" => {
            let details = cmd_eval(&common.config, &common.layout)?;
            println!("{}", format_summary(&details.report));
            println!("artifacts under {}", common.layout.eval_dir().display());
        }
        "ablate" => {
            let suite = common
                .suite
                .ok_or_else(|| CliError::Usage("ablate needs --suite".into()))?;
            let seeds: Vec<u64> = (0..5).map(|i| common.config.seed + i).collect();
            let scratch = common.layout.root.join("ablate_scratch");
            let (rows, failure) = match run_suite(suite, &common.config, &seeds, &scratch) {
                Ok(rows) => (rows, None),
                Err((rows, e)) => (rows, Some(e)),
            };
            for row in &rows {
                println!("{row}");
            }
            let table_path = common
                .layout
                .root
                .join(format!("ablation_{}.csv", suite.name()));
            std::fs::create_dir_all(&common.layout.root).map_err(DataError::Io)?;
            std::fs::write(&table_path, render_table_csv(&rows)).map_err(DataError::Io)?;
            println!("table written to {}", table_path.display());
            if let Some(e) = failure {
                eprintln!("suite incomplete: {e}");
                return Err(CliError::Pipeline(e));
            }
        }
        "report" => {
            let rendered = cmd_report(&common.layout)?;
            println!("{rendered}");
        }
        other => return Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
    Ok(())
}

fn print_usage() {
    println!("usage: zshot <command> [flags]");
    println!();
    println!("commands:");
    println!("  synth    generate the synthetic corpus directory");
    println!("  train    run training stages (--stage pretrain|generator|alignment|all)");
    println!("  eval     evaluate checkpoints and write report files + plots");
    println!("  ablate   run an ablation suite (--suite lgp|self_loss|alignment|m_sweep|embeddings)");
    println!("  report   render an existing report.csv as a summary table");
    println!();
    println!("flags:");
    println!("  --config <file>   flat key=value experiment configuration");
    println!("  --seed <n>        override the config seed");
    println!("  --out <dir>       run root (default $ZSHOT_OUT_DIR or ./zshot_out)");
    println!("  --force           allow writing into a non-empty corpus directory");
    println!("  --stage <name>    training stage for `train`");
    println!("  --suite <name>    suite for `ablate`");
}
