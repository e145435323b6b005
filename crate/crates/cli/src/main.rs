use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use igrf_core::config::PipelineConfig;
use igrf_core::pipeline::{SelectMode, Workspace};
use igrf_core::{synthetic, Error, Result};

#[derive(Parser)]
#[command(name = "igrf", version, about = "IG + random-forest filter with MLP-driven recursive feature elimination")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (sectioned key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the holdout split, the forest and MLP training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Epoch budget for each RFE evaluator fit (overrides rfe.epochs).
    #[arg(long, global = true)]
    rfe_epochs: Option<usize>,
    /// RFE evaluator: `mlp` or `stub:<spec>` (overrides rfe.evaluator).
    #[arg(long, global = true)]
    evaluator: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, drop minority classes, oversample, split, encode and scale.
    Preprocess,
    /// Rank numeric features by information gain.
    RankIg,
    /// Rank numeric features by random-forest impurity importance.
    RankRf,
    /// Threshold the rankings into a feature subset.
    Filter {
        /// union, intersection, ig_only, rf_only or all_features.
        #[arg(long, default_value = "union")]
        mode: String,
    },
    /// Recursive feature elimination over the union subset.
    Rfe,
    /// Train the MLP on a stored selection.
    Train {
        #[arg(long, default_value = "igrf_rfe")]
        mode: String,
    },
    /// Evaluate a trained model on the test split.
    Evaluate {
        #[arg(long, default_value = "igrf_rfe")]
        mode: String,
    },
    /// Every stage end to end for one or more modes.
    Pipeline {
        /// Comma-separated modes, or `all`.
        #[arg(long, default_value = "igrf_rfe")]
        mode: String,
    },
    /// Summarize whatever reports exist in the output directory.
    Report,
    /// Write a planted-signal dataset and a matching config.
    Synth {
        #[arg(long, default_value_t = 3000)]
        train_rows: usize,
        #[arg(long, default_value_t = 2000)]
        test_rows: usize,
    },
}

fn parse_modes(s: &str) -> Result<Vec<SelectMode>> {
    if s == "all" {
        return Ok(SelectMode::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse()).collect()
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::from_env(Path::new("."))?,
    };
    if let Some(seed) = c.seed {
        cfg.preprocess.split_seed = seed;
        cfg.rf.forest.seed = seed;
        cfg.mlp.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    if let Some(e) = c.rfe_epochs {
        cfg.rfe.epochs = Some(e);
    }
    if let Some(ev) = &c.evaluator {
        cfg.rfe.evaluator = ev.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

const SYNTH_CONFIG: &str = "\
[data]
train = train.csv
test = test.csv

[schema]
columns = {columns}
classes = low, mid, high

[preprocess]
drop_classes = none
oversample_class = none

[rf]
n_trees = 100

[rfe]
seeds = 1-3
epochs = 10

[mlp]
hidden_sizes = 32, 32
max_epochs = 40
early_stop_patience = 5

[output]
dir = out
";

fn synth(c: &Common, train_rows: usize, test_rows: usize) -> Result<()> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    std::fs::create_dir_all(&dir)?;
    let seed = c.seed.unwrap_or(2022);
    synthetic::generate(train_rows, seed)?.export_csv(&dir.join("train.csv"))?;
    synthetic::generate(test_rows, seed.wrapping_add(1))?.export_csv(&dir.join("test.csv"))?;
    let columns: Vec<String> = synthetic::schema()
        .columns()
        .iter()
        .map(|col| format!("{}:{}", col.name, kind_name(col.kind)))
        .collect();
    let cfg = SYNTH_CONFIG.replace("{columns}", &columns.join(", "));
    std::fs::write(dir.join("config.ini"), cfg)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn kind_name(kind: igrf_core::data::ColumnKind) -> &'static str {
    use igrf_core::data::ColumnKind::*;
    match kind {
        Numeric => "numeric",
        Categorical => "categorical",
        Label => "label",
        Auxiliary => "auxiliary",
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { train_rows, test_rows } = cli.command {
        return synth(&cli.common, train_rows, test_rows);
    }
    let cfg = load_config(&cli.common)?;
    let mut ws = Workspace::open(cfg)?;
    match cli.command {
        Command::Preprocess => {
            let p = ws.preprocess()?;
            println!(
                "train {} rows, validation {} rows, test {} rows, {} encoded columns",
                p.train.rows(),
                p.val.rows(),
                p.test.rows(),
                p.train.width()
            );
        }
        Command::RankIg => {
            for s in ws.rank_ig()? {
                println!("{:<20} {:.6}", s.feature, s.normalized);
            }
        }
        Command::RankRf => {
            for s in ws.rank_rf()? {
                println!("{:<20} {:.6}", s.feature, s.mdi);
            }
        }
        Command::Filter { mode } => {
            let sel = ws.filter(mode.parse()?)?;
            println!("{} features: {}", sel.features.len(), sel.features.join(", "));
        }
        Command::Rfe => {
            let (sel, trace) = ws.rfe()?;
            println!(
                "{} features (best {:.6}): {}",
                sel.features.len(),
                trace.best_performance,
                sel.features.join(", ")
            );
        }
        Command::Train { mode } => {
            let model = ws.train(mode.parse()?)?;
            println!(
                "trained {} epochs, best epoch {}, validation loss {:.6}",
                model.trace.epochs_run, model.trace.best_epoch, model.trace.best_val_loss
            );
        }
        Command::Evaluate { mode } => print!("{}", ws.evaluate(mode.parse()?)?.render_table()),
        Command::Pipeline { mode } => {
            for (mode, report) in ws.pipeline(&parse_modes(&mode)?)? {
                println!("== {mode}");
                print!("{}", report.render_table());
            }
        }
        Command::Report => print!("{}", ws.report()?),
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
