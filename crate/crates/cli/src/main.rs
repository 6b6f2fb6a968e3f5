use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use cat2vec_cli::config::apply_override;
use cat2vec_cli::{commands, CliError, RunConfig};
use cat2vec_core::{Metric, Objective, SynthSpec};
use clap::{Args, Parser, Subcommand};

/// Category-aware few-shot text classification.
#[derive(Parser)]
#[command(name = "cat2vec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    prepared_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config, &self.set)?;
        if let Some(dir) = &self.prepared_dir {
            config.prepared_dir = dir.clone();
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize corpora, cap training classes and sample support sets.
    Prepare(RunArgs),
    /// Train one model per objective and support set.
    Train(RunArgs),
    /// Score trained models on the prepared support sets.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluate this checkpoint against every support set.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<Metric>,
    },
    /// Write document and category vectors as TSV.
    DumpEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON-lines corpus with `id`, `text` and `label`.
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Repeatable; every objective when omitted.
        #[arg(long)]
        objective: Vec<Objective>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Generate synthetic train and test corpora.
    Synth {
        #[arg(long)]
        output_dir: PathBuf,
        /// Generator spec (JSON); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown metric {s:?}"))
}

fn synth_spec(path: Option<&PathBuf>, overrides: &[String]) -> Result<SynthSpec, CliError> {
    let mut value = serde_json::to_value(SynthSpec::default()).expect("serializable");
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let given: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let serde_json::Value::Object(map) = given else {
            return Err(CliError::Usage(format!("{}: expected an object", path.display())));
        };
        for (k, v) in map {
            value[k] = v;
        }
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("synth spec: {e}")))
}

fn run(command: Command) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    let mut say = |line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    match command {
        Command::Prepare(args) => {
            let config = args.load()?;
            let m = commands::prepare(&config)?;
            say(format!(
                "prepared {} support sets in {}",
                m.support_sets.len(),
                config.prepared_dir.display()
            ));
        }
        Command::Train(args) => {
            for o in commands::train(&args.load()?)? {
                say(format!(
                    "{} support set {}: final loss {:.6} -> {}",
                    o.objective,
                    o.support_set,
                    o.final_loss,
                    o.checkpoint.display()
                ));
            }
        }
        Command::Eval {
            run,
            checkpoint,
            metric,
        } => {
            let mut config = run.load()?;
            if let Some(metric) = metric {
                config.eval.metric = metric;
            }
            for (label, r) in commands::eval(&config, checkpoint.as_deref())? {
                say(format!(
                    "{label} {} accuracy {:.4} ± {:.4} over {} support sets",
                    r.metric,
                    r.accuracy,
                    r.std,
                    r.accuracies.len()
                ));
            }
        }
        Command::DumpEmbeddings {
            checkpoint,
            corpus,
            output,
        } => {
            let rows = match &output {
                Some(path) => {
                    let mut buf = Vec::new();
                    let rows = commands::dump_embeddings(&checkpoint, &corpus, &mut buf)?;
                    fs::write(path, buf).map_err(|source| CliError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    rows
                }
                None => commands::dump_embeddings(&checkpoint, &corpus, &mut io::stdout().lock())?,
            };
            log::info!("wrote {rows} rows");
        }
        Command::Gradcheck {
            objective,
            instances,
            seed,
            epsilon,
            tolerance,
        } => {
            let objectives = if objective.is_empty() {
                Objective::ALL.to_vec()
            } else {
                objective
            };
            for s in commands::gradcheck(&objectives, instances, seed, epsilon, tolerance)? {
                say(format!(
                    "{}: max relative error {:.3e} over {} instances (worst seed {})",
                    s.objective, s.max_error, s.instances, s.worst_seed
                ));
            }
        }
        Command::Synth {
            output_dir,
            spec,
            set,
        } => {
            let spec = synth_spec(spec.as_ref(), &set)?;
            let (train, test) = commands::synth(&spec, &output_dir)?;
            say(format!(
                "wrote {train} train and {test} test documents to {}",
                output_dir.display()
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAT2VEC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
