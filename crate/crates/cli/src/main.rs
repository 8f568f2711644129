use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codec_core::pipeline::{self, Outcome, RunConfig};
use codec_core::CodecError;

#[derive(Parser)]
#[command(name = "codec", version, about = "Contribution decomposition pipeline for small feedforward networks")]
struct Cli {
    /// Directory holding every artifact of the run.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set sae.epochs=50` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Default preset: `shapes` classifier or `retina` regressor.
    #[arg(long, global = true, default_value = "shapes")]
    task: String,

    /// Worker threads (defaults to CODEC_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset, build and train the model.
    TrainToy {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-channel contribution and activation matrices.
    Contrib(ContribArgs),
    /// Sparsity, correlation and explained-variance tables.
    Stats(ContribArgs),
    /// Train the sparse autoencoder on a contribution matrix.
    Sae {
        #[command(flatten)]
        contrib: ContribArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Class (or firing-rate) correlations of the modes.
    Correlate(ContribArgs),
    /// Ablation or preservation sweeps driven by the modes.
    Perturb {
        #[command(flatten)]
        contrib: ContribArgs,
        #[arg(long)]
        class: Option<usize>,
        /// `ablate` or `preserve`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        top_modes: Option<usize>,
    },
    /// Input-space map and rendered mask for one input.
    Inputmap {
        #[command(flatten)]
        contrib: ContribArgs,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, conflicts_with = "channels")]
        mode: Option<usize>,
        /// Comma-separated channel indices.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<usize>>,
        /// `inputgrad`, `actgrad-decomp` or `hig-decomp`.
        #[arg(long = "map-algorithm")]
        map_algorithm: Option<String>,
        #[arg(long = "map-steps")]
        map_steps: Option<usize>,
        /// Render the net map instead of its positive part.
        #[arg(long)]
        net: bool,
    },
    /// Collect every table of the run into `report/`.
    Report,
    /// Every stage in order.
    All,
}

#[derive(Args, Clone, Default)]
struct ContribArgs {
    #[arg(long)]
    tap: Option<String>,
    /// `actgrad`, `hinput-grad` or `hidden-ig`.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
}

fn json_str(s: &str) -> String {
    serde_json::Value::from(s).to_string()
}

impl ContribArgs {
    fn overrides(&self, out: &mut Vec<(String, String)>) {
        if let Some(t) = &self.tap {
            out.push(("contrib.tap".into(), json_str(t)));
        }
        if let Some(a) = &self.algorithm {
            out.push(("contrib.algorithm".into(), json_str(a)));
        }
        if let Some(s) = self.steps {
            out.push(("contrib.steps".into(), s.to_string()));
        }
    }
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.into(), v.to_string()));
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, CodecError> {
    let mut out = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CodecError::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
        out.push((k.trim().to_string(), v.to_string()));
    }
    match &cli.command {
        Command::TrainToy { samples, epochs } => {
            push(&mut out, "dataset.n_samples", *samples);
            push(&mut out, "train.epochs", *epochs);
        }
        Command::Contrib(c) | Command::Stats(c) | Command::Correlate(c) => c.overrides(&mut out),
        Command::Sae { contrib, epochs, lr } => {
            contrib.overrides(&mut out);
            push(&mut out, "sae.epochs", *epochs);
            push(&mut out, "sae.lr", *lr);
        }
        Command::Perturb {
            contrib,
            class,
            kind,
            top_modes,
        } => {
            contrib.overrides(&mut out);
            push(&mut out, "perturb.class", *class);
            push(&mut out, "perturb.kind", kind.as_deref().map(json_str));
            push(&mut out, "perturb.n_top_modes", *top_modes);
        }
        Command::Inputmap {
            contrib,
            index,
            mode,
            channels,
            map_algorithm,
            map_steps,
            net,
        } => {
            contrib.overrides(&mut out);
            push(&mut out, "inputmap.index", *index);
            push(&mut out, "inputmap.mode", *mode);
            if let Some(ch) = channels {
                let list: Vec<String> = ch.iter().map(|c| c.to_string()).collect();
                out.push(("inputmap.channels".into(), format!("[{}]", list.join(","))));
            }
            push(&mut out, "inputmap.algorithm", map_algorithm.as_deref().map(json_str));
            push(&mut out, "inputmap.steps", *map_steps);
            if *net {
                out.push(("inputmap.net".into(), "true".into()));
            }
        }
        Command::Report | Command::All => {}
    }
    Ok(out)
}

fn print(name: &str, o: &Outcome) {
    println!("[{name}]");
    for (k, v) in &o.summary {
        println!("  {k} = {v}");
    }
    for p in &o.outputs {
        println!("  wrote {}", p.display());
    }
}

type Stage = fn(&Path, &RunConfig) -> codec_core::Result<Outcome>;

fn run(cli: &Cli) -> Result<(), CodecError> {
    pipeline::init_thread_pool(cli.threads)?;
    let task = match cli.task.as_str() {
        "shapes" => pipeline::Task::Shapes,
        "retina" => pipeline::Task::Retina,
        other => return Err(CodecError::Config(format!("unknown task `{other}`"))),
    };
    let cfg = RunConfig::load_from(RunConfig::preset(task), cli.config.as_deref(), &overrides(cli)?)?;
    let dir = &cli.run_dir;
    let stages: Vec<(&str, Stage)> = match &cli.command {
        Command::TrainToy { .. } => vec![("train-toy", pipeline::train_toy)],
        Command::Contrib(_) => vec![("contrib", pipeline::contrib)],
        Command::Stats(_) => vec![("stats", pipeline::stats)],
        Command::Sae { .. } => vec![("sae", pipeline::sae)],
        Command::Correlate(_) => vec![("correlate", pipeline::correlate)],
        Command::Perturb { .. } => vec![("perturb", pipeline::perturb)],
        Command::Inputmap { .. } => vec![("inputmap", pipeline::inputmap)],
        Command::Report => vec![("report", pipeline::report)],
        Command::All => {
            let mut v: Vec<(&str, Stage)> = vec![
                ("train-toy", pipeline::train_toy),
                ("contrib", pipeline::contrib),
                ("stats", pipeline::stats),
                ("sae", pipeline::sae),
                ("correlate", pipeline::correlate),
            ];
            if cfg.task == pipeline::Task::Shapes {
                v.push(("perturb", pipeline::perturb));
            }
            v.push(("inputmap", pipeline::inputmap));
            v.push(("report", pipeline::report));
            v
        }
    };
    for (name, stage) in stages {
        let outcome = stage(dir, &cfg)?;
        print(name, &outcome);
    }
    Ok(())
}

fn exit_code(e: &CodecError) -> u8 {
    match e.category() {
        "config" => 2,
        "missing-artifact" => 3,
        "format" => 4,
        "locked" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
