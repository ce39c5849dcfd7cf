use std::path::PathBuf;
use std::process::ExitCode;

use argmine::commands::{
    cmd_eval, cmd_gen_synthetic, cmd_gradcheck, cmd_predict, cmd_train, GradCheckArgs, SyntheticArgs,
};
use argmine::report::report_table;
use argmine::run_config::RunConfig;
use argmine::{CliError, Result};
use argmine_core::corpus::RelationTypeRule;
use argmine_core::evaluator::ArtcScope;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

/// Joint argument mining: component types, relations and relation types
/// over pre-segmented documents.
#[derive(Parser)]
#[command(name = "argmine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train {
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the epoch limit.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Use the encoder learning rate for every parameter group.
        #[arg(long)]
        uniform_lr: bool,
        /// Drop the component self-attention.
        #[arg(long)]
        no_arguatten: bool,
        /// Drop the signed-distance pair feature.
        #[arg(long)]
        no_distance: bool,
        /// Override any training setting, e.g. `--set lr_ar_head=1e-3`.
        /// The value is parsed as JSON, falling back to a string.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Precomputed token vectors, for models trained on them.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Label schema the corpus is expected to use; must match the checkpoint.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Also write report.json and report.txt here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Score relation types over every gold or predicted relation
        /// instead of gold relations only.
        #[arg(long)]
        end_to_end: bool,
    },
    /// Write predicted argument graphs as JSONL.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with learnable structure.
    GenSynthetic {
        #[arg(long, default_value_t = 20)]
        docs: usize,
        /// Fraction of component key pairs that are related.
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `cdcp`, `pe` or a schema file.
        #[arg(long, default_value = "cdcp")]
        schema: String,
        /// How relation types are assigned.
        #[arg(long, value_enum, default_value_t = Rule::KeyTable)]
        rule: Rule,
        #[arg(long, default_value_t = 3)]
        min_acs: usize,
        #[arg(long, default_value_t = 6)]
        max_acs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the label schema here.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Check analytic gradients of the joint loss against finite differences.
    Gradcheck {
        /// Run config whose ablation switches and penalty apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_arguatten: bool,
        #[arg(long)]
        no_distance: bool,
        /// Components in the probe document.
        #[arg(long, default_value_t = 3)]
        components: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Corrupt one analytic gradient; the check must then fail.
        #[arg(long)]
        self_test: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    KeyTable,
    DistanceSign,
}

fn parse_set(items: &[String]) -> Result<Map<String, Value>> {
    let mut map = Map::new();
    for item in items {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::BadInput(format!("--set expects KEY=VALUE, got {item:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
    }
    Ok(map)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            max_epochs,
            uniform_lr,
            no_arguatten,
            no_distance,
            set,
        } => {
            let mut overrides = parse_set(&set)?;
            if let Some(s) = seed {
                overrides.insert("seed".into(), s.into());
            }
            if let Some(n) = max_epochs {
                overrides.insert("max_epochs".into(), n.into());
            }
            for (flag, key) in [
                (uniform_lr, "uniform_lr"),
                (no_arguatten, "no_arguatten"),
                (no_distance, "no_distance"),
            ] {
                if flag {
                    overrides.insert(key.into(), true.into());
                }
            }
            let summary = cmd_train(&config, &overrides)?;
            println!("{}", summary.output_dir.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            corpus,
            embeddings,
            schema,
            out_dir,
            end_to_end,
        } => {
            let scope = if end_to_end {
                ArtcScope::EndToEnd
            } else {
                ArtcScope::GoldRelations
            };
            let report = cmd_eval(
                &checkpoint,
                &corpus,
                embeddings.as_deref(),
                schema.as_deref(),
                out_dir.as_deref(),
                scope,
            )?;
            print!("{}", report_table(&report));
            Ok(())
        }
        Command::Predict {
            checkpoint,
            corpus,
            embeddings,
            out,
        } => cmd_predict(&checkpoint, &corpus, embeddings.as_deref(), &out).map(drop),
        Command::GenSynthetic {
            docs,
            density,
            seed,
            schema,
            rule,
            min_acs,
            max_acs,
            out,
            schema_out,
        } => {
            let args = SyntheticArgs {
                docs,
                density,
                seed,
                schema,
                rule: match rule {
                    Rule::KeyTable => RelationTypeRule::KeyTable,
                    Rule::DistanceSign => RelationTypeRule::DistanceSign,
                },
                acs_per_doc: (min_acs, max_acs),
                out,
                schema_out,
            };
            cmd_gen_synthetic(&args).map(drop)
        }
        Command::Gradcheck {
            config,
            seed,
            no_arguatten,
            no_distance,
            components,
            step,
            tol,
            self_test,
        } => {
            let args = GradCheckArgs {
                seed,
                no_arguatten,
                no_distance,
                components,
                step,
                tol,
                ..GradCheckArgs::default()
            };
            let args = match config {
                Some(p) => args.with_run_config(&RunConfig::load(&p, &Map::new())?.train),
                None => args,
            };
            cmd_gradcheck(&args, self_test).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARGMINE_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
