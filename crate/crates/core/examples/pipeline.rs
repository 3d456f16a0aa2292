//! Runs the whole toy pipeline in one process: annotate, two-stage language
//! model training, flow-matching training, synthesis and evaluation.
//!
//! cargo run --release --example pipeline -- [workdir]

use std::path::PathBuf;

use convsynth::harness::{
    cmd_annotate, cmd_eval, cmd_synth, cmd_train_cfm, cmd_train_emgpt, AnnotateArgs, EvalArgs, LlmChoice, RunConfig, SynthArgs, TrainArgs,
};
use convsynth::toy::{write_toy_corpus, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_run".into()));
    write_toy_corpus(&dir.join("raw"), &ToySpec::default())?;
    let ann = cmd_annotate(&AnnotateArgs {
        manifest: dir.join("raw"),
        out: dir.join("ann"),
        llm: LlmChoice::Mock,
        http: Default::default(),
        seed: 0,
        thresholds: None,
        alignments: None,
        concurrency: 2,
        llm_verify: false,
    })?;
    println!("annotated {} utterances", ann.records);

    let cfg = |extra: &[&str]| {
        let mut o = vec![
            format!("paths.manifest={:?}", dir.join("ann").display().to_string()),
            format!("paths.workdir={:?}", dir.join("work").display().to_string()),
        ];
        o.extend(extra.iter().map(|s| s.to_string()));
        RunConfig::resolve(None, &o)
    };
    let s1 = cmd_train_emgpt(&cfg(&["train.stage=1", "train.steps=100"])?, &TrainArgs::default())?;
    println!("stage 1: loss {:?} -> {}", s1.last_loss, s1.checkpoint.display());
    let s2cfg = cfg(&["train.stage=2", "train.steps=200"])?;
    let s2 = cmd_train_emgpt(&s2cfg, &TrainArgs { init: Some(s1.checkpoint), ..TrainArgs::default() })?;
    println!("stage 2: loss {:?} -> {}", s2.last_loss, s2.checkpoint.display());
    let cfm = cmd_train_cfm(&cfg(&["cfm.steps=200"])?, &TrainArgs::default())?;
    println!("cfm: loss {:?} -> {}", cfm.last_loss.map(|(_, l)| l), cfm.checkpoint.display());

    let out = dir.join("synth");
    let syn = cmd_synth(
        &s2cfg,
        &SynthArgs { session: "toy000".into(), turn: 3, emgpt: s2.checkpoint.clone(), cfm: Some(cfm.checkpoint), n_turns: None, out: out.clone(), wav: true },
    )?;
    println!("caption {:?}, {} codes, mel {:?}", syn.caption, syn.codes.len(), syn.mel_shape);

    std::fs::write(dir.join("captions.txt"), format!("{}\n", syn.caption))?;
    let report = cmd_eval(&EvalArgs { captions: Some(dir.join("captions.txt")), checkpoint: Some(s2.checkpoint), out: dir.join("eval"), ..EvalArgs::default() })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
