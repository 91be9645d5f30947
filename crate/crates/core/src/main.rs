use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbr_subg::harness::{
    cmd_ablate_distance, cmd_baseline, cmd_collect, cmd_eval, cmd_gen_data, cmd_stats, cmd_sweep_knn, cmd_train, Baseline,
    ExperimentConfig, MetricsReport,
};
use cbr_subg::{Error, Split};

#[derive(Parser)]
#[command(name = "cbr-subg", version, about = "Case-based subgraph reasoning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and checkpoints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    split: Option<Split>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenData,
    /// Train the model, selecting the temperature on validation.
    Train,
    /// Evaluate a checkpoint on one split.
    Eval,
    /// Evaluate a checkpoint with varying numbers of retrieved cases.
    SweepKnn,
    /// Train with and without distance features.
    AblateDistance,
    /// Collect query subgraphs from an external knowledge graph.
    Collect,
    /// Subgraph size and coverage statistics.
    Stats,
    /// Run a comparison system.
    Baseline {
        #[arg(value_enum)]
        system: BaselineArg,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    CbrPath,
    GnnTranse,
}

fn overrides(common: &Common) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for raw in &common.overrides {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{raw}' is not KEY=VALUE")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let paths = [("out", &common.out), ("data_dir", &common.data), ("checkpoint", &common.checkpoint)];
    for (key, value) in paths {
        if let Some(p) = value {
            let quoted = toml::Value::String(p.display().to_string()).to_string();
            out.push((key.to_string(), quoted));
        }
    }
    if let Some(s) = common.seed {
        out.push(("seed".into(), s.to_string()));
    }
    if let Some(s) = common.split {
        out.push(("split".into(), format!("\"{s}\"")));
    }
    Ok(out)
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("CBR_SUBG_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("CBR_SUBG_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let cfg = ExperimentConfig::load(cli.common.config.as_deref(), &overrides(&cli.common)?)?;
    let report: MetricsReport = match cli.command {
        Command::GenData => {
            let (manifest, hash) = cmd_gen_data(&cfg)?;
            println!("wrote {} (manifest sha256 {hash})", cfg.data_dir.display());
            for (split, n) in &manifest.counts {
                println!("  {split}: {n} examples");
            }
            let shapes: Vec<String> = manifest.shape_counts.iter().map(|(s, n)| format!("{s} {n}")).collect();
            println!("  {} relations, pattern types: {}", manifest.num_relations, shapes.join(", "));
            return Ok(());
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Train => cmd_train(&cfg)?,
        Command::Eval => cmd_eval(&cfg)?,
        Command::SweepKnn => cmd_sweep_knn(&cfg)?,
        Command::AblateDistance => cmd_ablate_distance(&cfg)?,
        Command::Collect => cmd_collect(&cfg)?,
        Command::Stats => cmd_stats(&cfg)?,
        Command::Baseline { system } => {
            let which = match system {
                BaselineArg::CbrPath => Baseline::CbrPath,
                BaselineArg::GnnTranse => Baseline::GnnTranse,
            };
            cmd_baseline(&cfg, which)?
        }
    };
    report.print();
    for (key, value) in &report.notes {
        println!("{key}: {value}");
    }
    println!("reports in {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
