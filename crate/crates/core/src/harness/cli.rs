use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::commands::{cmd_annotate, cmd_eval, cmd_stats, cmd_synth, cmd_train_cfm, cmd_train_emgpt, stats_table};
use super::{AnnotateArgs, EvalArgs, HarnessError, LlmChoice, RunConfig, SynthArgs, TrainArgs};
use crate::emcap::HttpLlmConfig;

#[derive(Debug, Parser)]
#[command(name = "convsynth", version, about = "Caption-then-codes conversational speech synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LlmArg {
    Mock,
    Http,
}

/// Flags shared by commands that take a run configuration.
#[derive(Debug, Args)]
struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.adam.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure style factors and write empathetic captions for a corpus.
    Annotate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        llm: LlmArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with `pitch`, `tempo` and `energy` boundary pairs.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// JSON phone alignments keyed by utterance id.
        #[arg(long)]
        alignments: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Ask the LLM to double-check captions that pass the rule checks.
        #[arg(long)]
        llm_verify: bool,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Train the caption-then-codes language model (stage 1 or 2).
    TrainEmgpt {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        stage: Option<u8>,
        #[arg(long)]
        steps: Option<usize>,
        /// Stage-1 checkpoint to start stage 2 from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Run stage 2 from random initialization.
        #[arg(long)]
        from_scratch: bool,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        no_context: bool,
        #[arg(long)]
        no_captions: bool,
        #[arg(long)]
        caption_loss_weight: Option<f64>,
        /// Stop after this many updates, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train the flow-matching mel generator.
    TrainCfm {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Generate a caption, speech codes and (optionally) a mel for one turn.
    Synth {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        session: String,
        #[arg(long)]
        turn: usize,
        #[arg(long)]
        emgpt: PathBuf,
        #[arg(long)]
        cfm: Option<PathBuf>,
        #[arg(long)]
        n_turns: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also render a waveform with Griffin-Lim.
        #[arg(long)]
        wav: bool,
    },
    /// Compute objective metrics and write a JSON report.
    Eval {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn resolve(run: &RunFlags, mut extra: Vec<String>) -> Result<RunConfig, HarnessError> {
    let mut overrides = run.set.clone();
    if let Some(m) = &run.manifest {
        overrides.push(format!("paths.manifest={}", toml_str(&m.display().to_string())));
    }
    if let Some(w) = &run.workdir {
        overrides.push(format!("paths.workdir={}", toml_str(&w.display().to_string())));
    }
    if let Some(s) = run.seed {
        for k in ["model.seed", "train.seed", "cfm.seed", "sampling.seed"] {
            overrides.push(format!("{k}={s}"));
        }
    }
    overrides.append(&mut extra);
    RunConfig::resolve(run.config.as_deref(), &overrides)
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Annotate { manifest, out, llm, seed, thresholds, alignments, concurrency, llm_verify, endpoint, model } => {
            let mut http = HttpLlmConfig::default();
            if let Some(e) = endpoint {
                http.endpoint = e;
            }
            if let Some(m) = model {
                http.model = m;
            }
            let llm = match llm {
                LlmArg::Mock => LlmChoice::Mock,
                LlmArg::Http => LlmChoice::Http,
            };
            let args = AnnotateArgs { manifest, out, llm, http, seed, thresholds, alignments, concurrency, llm_verify };
            print_json(&cmd_annotate(&args)?);
        }
        Command::TrainEmgpt { run, stage, steps, init, from_scratch, resume, no_context, no_captions, caption_loss_weight, stop_after } => {
            let mut extra = Vec::new();
            if let Some(s) = stage {
                extra.push(format!("train.stage={s}"));
            }
            if let Some(s) = steps {
                extra.push(format!("train.steps={s}"));
            }
            if no_context {
                extra.push("train.no_context=true".into());
            }
            if no_captions {
                extra.push("train.no_captions=true".into());
            }
            if let Some(w) = caption_loss_weight {
                extra.push(format!("train.caption_loss_weight={w:?}"));
            }
            let cfg = resolve(&run, extra)?;
            print_json(&cmd_train_emgpt(&cfg, &TrainArgs { init, from_scratch, resume, stop_after })?);
        }
        Command::TrainCfm { run, steps, resume, stop_after } => {
            let extra = steps.map(|s| vec![format!("cfm.steps={s}")]).unwrap_or_default();
            let cfg = resolve(&run, extra)?;
            print_json(&cmd_train_cfm(&cfg, &TrainArgs { resume, stop_after, ..TrainArgs::default() })?);
        }
        Command::Synth { run, session, turn, emgpt, cfm, n_turns, out, wav } => {
            let cfg = resolve(&run, Vec::new())?;
            print_json(&cmd_synth(&cfg, &SynthArgs { session, turn, emgpt, cfm, n_turns, out, wav })?);
        }
        Command::Eval { pairs, captions, references, labels, checkpoint, out } => {
            print_json(&cmd_eval(&EvalArgs { pairs, captions, references, labels, checkpoint, out })?);
        }
        Command::Stats { manifest, json } => {
            let s = cmd_stats(&manifest)?;
            if json {
                print_json(&s);
            } else {
                print!("{}", stats_table(&s));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 ok, 2 usage, 3 data, 4 runtime.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
