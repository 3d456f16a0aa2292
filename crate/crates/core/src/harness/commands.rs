use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{HistoryCaptions, RunConfig};
use super::data::{featurize, history_turn, load_or_fit_artifacts, stage1_targets, stage2_targets, target_turn, Artifacts, Features};
use super::log::{provenance, ExperimentLog, LogEvent};
use super::{derive_seed, HarnessError};
use crate::audio::{read_wav, write_wav};
use crate::cfm::{embed_caption, griffin_lim, load_cfm, load_cfm_optimizer, save_cfm, synthesize, CFMConfig, CfmExample, CfmTrainer, FieldNet};
use crate::codec::{save_mel, SPEAKER_DIM};
use crate::context::{build_sequence, decode_caption, TrainingTarget, TurnTokens};
use crate::corpus::{corpus_stats, load_corpus, manifest_path, split_corpus, write_corpus, CorpusStats, DialogueSession, MANIFEST_FILE};
use crate::emcap::{annotate_corpus, records_to_jsonl, AnnotateOptions, AttributeThresholds, HttpLlm, HttpLlmConfig, LlmClient, MockLlm};
use crate::emgpt::{
    generate_caption, generate_codes, load_checkpoint, load_optimizer, save_checkpoint, teacher_forcing_accuracy, write_metrics_csv,
    EmGPT, EmGPTConfig, EmgptError, StepRecord, StopReason, Trainer,
};
use crate::embed::HashEmbedder;
use crate::metrics::{accuracy, caption_similarity, ddtw, distinct_n, speaker_similarity_proxy, MetricReport};
use crate::prosody::Alignments;

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn data(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(e.to_string())
}

fn load_manifest(path: Option<&Path>) -> Result<Vec<DialogueSession>, HarnessError> {
    let path = path.ok_or_else(|| HarnessError::Usage("no manifest given (--manifest or paths.manifest)".into()))?;
    if !manifest_path(path).exists() {
        return Err(HarnessError::Usage(format!("manifest {} not found", path.display())));
    }
    load_corpus(path).map_err(data)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmChoice {
    Mock,
    Http,
}

#[derive(Debug, Clone)]
pub struct AnnotateArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub llm: LlmChoice,
    pub http: HttpLlmConfig,
    pub seed: u64,
    /// `None` uses the built-in thresholds.
    pub thresholds: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub concurrency: usize,
    pub llm_verify: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnotateSummary {
    pub manifest: PathBuf,
    pub captions: PathBuf,
    pub records: usize,
    pub failures: usize,
    pub verified_fraction: f64,
}

/// Annotates a corpus and writes `<out>/manifest.jsonl` and `<out>/captions.jsonl`.
pub fn cmd_annotate(a: &AnnotateArgs) -> Result<AnnotateSummary, HarnessError> {
    let mut sessions = load_manifest(Some(&a.manifest))?;
    for u in sessions.iter_mut().flat_map(|s| s.turns.iter_mut()) {
        if let Some(p) = &u.audio_path {
            u.audio_path = Some(std::fs::canonicalize(p).map_err(|e| data(format!("{}: {e}", p.display())))?);
        }
    }
    let thresholds = match &a.thresholds {
        Some(p) => AttributeThresholds::from_file(p).map_err(|e| HarnessError::Usage(e.to_string()))?,
        None => AttributeThresholds::default(),
    };
    let alignments = a.alignments.as_deref().map(Alignments::load).transpose().map_err(data)?;
    let client: Box<dyn LlmClient> = match a.llm {
        LlmChoice::Mock => Box::new(MockLlm::new()),
        LlmChoice::Http => Box::new(HttpLlm::from_env(a.http.clone()).map_err(|e| HarnessError::Usage(e.to_string()))?),
    };
    let opts = AnnotateOptions {
        seed: a.seed,
        thresholds,
        alignments,
        retry: a.http.retry,
        concurrency: a.concurrency,
        llm_verify: a.llm_verify,
        ..AnnotateOptions::default()
    };
    let ann = annotate_corpus(&sessions, client.as_ref(), &opts).map_err(|e| match e {
        crate::emcap::EmcapError::UnknownAlignment(_) => data(e),
        other => runtime(other),
    })?;
    for f in &ann.failures {
        eprintln!("warning: {}: {}", f.utterance_id, f.message);
    }
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let manifest = a.out.join(MANIFEST_FILE);
    write_corpus(&ann.sessions, &manifest).map_err(runtime)?;
    let captions = a.out.join("captions.jsonl");
    write_text(&captions, &records_to_jsonl(&ann.records))?;
    Ok(AnnotateSummary {
        manifest,
        captions,
        records: ann.records.len(),
        failures: ann.failures.len(),
        verified_fraction: ann.verified_fraction(),
    })
}

/// Path of the latest checkpoint for a model kind, named by the run's config hash.
pub fn checkpoint_path(cfg: &RunConfig, kind: &str) -> PathBuf {
    cfg.paths.workdir.join("ckpt").join(format!("{kind}-{}.bin", cfg.hash()))
}


fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub init: Option<PathBuf>,
    pub from_scratch: bool,
    pub resume: bool,
    /// Stop after this many updates in this invocation, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub log: PathBuf,
    pub config_hash: String,
    pub step: usize,
    pub examples: usize,
    pub tags: Vec<String>,
    pub last_loss: Option<(f64, f64)>,
    pub teacher_forcing_accuracy: Option<f64>,
}

struct Prepared {
    train: Vec<DialogueSession>,
    art: Artifacts,
    feats: Features,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, HarnessError> {
    let sessions = load_manifest(cfg.paths.manifest.as_deref())?;
    let split = split_corpus(&sessions, &cfg.split).map_err(data)?;
    let art = load_or_fit_artifacts(&cfg.paths.workdir, &split.train, cfg)?;
    let feats = featurize(&split.train, &art)?;
    Ok(Prepared { train: split.train, art, feats })
}

/// Training examples for the configured stage, drawn from the train split only.
pub fn training_targets(cfg: &RunConfig) -> Result<Vec<(super::data::ExampleMeta, TrainingTarget)>, HarnessError> {
    let p = prepare(cfg)?;
    targets_for(cfg, &p)
}

fn targets_for(cfg: &RunConfig, p: &Prepared) -> Result<Vec<(super::data::ExampleMeta, TrainingTarget)>, HarnessError> {
    let vocab = p.art.vocab();
    let t = if cfg.train.stage == 1 {
        stage1_targets(&p.train, &p.feats, &vocab, cfg)?
    } else {
        stage2_targets(&p.train, &p.feats, &vocab, cfg)?
    };
    if t.is_empty() {
        return Err(HarnessError::Data(format!("no stage-{} training examples", cfg.train.stage)));
    }
    Ok(t)
}

fn batch_indices(seed: u64, step: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&seed.to_string(), "batch", &step.to_string()]));
    sample(&mut rng, n, batch.min(n)).into_vec()
}

fn read_metrics_csv(path: &Path, upto: usize) -> Result<Vec<StepRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || data(format!("{}: malformed row {line:?}", path.display()));
        if f.len() != 4 {
            return Err(bad());
        }
        let rec = StepRecord {
            step: f[0].parse().map_err(|_| bad())?,
            l_caption: f[1].parse().map_err(|_| bad())?,
            l_speech: f[2].parse().map_err(|_| bad())?,
            lr: f[3].parse().map_err(|_| bad())?,
        };
        if rec.step < upto {
            out.push(rec);
        }
    }
    Ok(out)
}

fn emgpt_config(cfg: &RunConfig, art: &Artifacts) -> EmGPTConfig {
    let m = &cfg.model;
    EmGPTConfig {
        n_layers: m.n_layers,
        model_dim: m.model_dim,
        n_heads: m.n_heads,
        max_seq_len: m.max_seq_len,
        dropout_rate: m.dropout_rate,
        ffn_mult: m.ffn_mult,
        speaker_dim: SPEAKER_DIM,
        vocab: art.vocab(),
        seed: m.seed,
    }
}

fn emgpt_err(e: EmgptError) -> HarnessError {
    match e {
        EmgptError::Config(_) => HarnessError::Usage(e.to_string()),
        EmgptError::Checkpoint(_) | EmgptError::Io(_) | EmgptError::Json(_) => data(e),
        other => runtime(other),
    }
}

/// Trains EmGPT for the configured stage. Stage 2 needs `init` (a stage-1
/// checkpoint) or `from_scratch`.
pub fn cmd_train_emgpt(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainSummary, HarnessError> {
    let stage = cfg.train.stage;
    if stage == 2 && args.init.is_none() && !args.from_scratch {
        return Err(HarnessError::Usage("stage 2 needs --init <stage-1 checkpoint> or --from-scratch".into()));
    }
    if stage == 1 && (args.init.is_some() || args.from_scratch) {
        return Err(HarnessError::Usage("--init and --from-scratch apply to stage 2 only".into()));
    }
    let p = prepare(cfg)?;
    let targets = targets_for(cfg, &p)?;
    let batch_all: Vec<TrainingTarget> = targets.into_iter().map(|(_, t)| t).collect();

    let kind = format!("emgpt-stage{stage}");
    let ckpt = checkpoint_path(cfg, &kind);
    let csv = cfg.paths.workdir.join(format!("metrics-{kind}-{}.csv", cfg.hash()));
    let log_path = cfg.paths.workdir.join("logs").join(format!("{kind}-{}.jsonl", cfg.hash()));
    let tags = cfg.tags(args.from_scratch);

    let mut model_cfg = emgpt_config(cfg, &p.art);
    let (model, optimizer, history, resumed_at) = if args.resume && ckpt.exists() {
        let (model, meta) = load_checkpoint(&ckpt).map_err(emgpt_err)?;
        let opt = load_optimizer(&ckpt, cfg.train.adam, &model)
            .map_err(emgpt_err)?
            .ok_or_else(|| data(format!("{}: optimizer state missing", ckpt.display())))?;
        let step = opt.step;
        let history = read_metrics_csv(&csv, step)?;
        log::info!("resuming {} at step {step} ({})", ckpt.display(), meta.stage);
        (model, Some(opt), history, Some(step))
    } else if let Some(init) = &args.init {
        let (model, meta) = load_checkpoint(init).map_err(emgpt_err)?;
        if model.vocab().hash() != p.art.vocab().hash() {
            return Err(data(format!("{}: vocabulary {} differs from this run's {}", init.display(), meta.vocab_hash, p.art.vocab().hash())));
        }
        model_cfg = model.config.clone();
        (model, None, Vec::new(), None)
    } else {
        (EmGPT::new(model_cfg.clone()).map_err(emgpt_err)?, None, Vec::new(), None)
    };
    if model.config.vocab != model_cfg.vocab {
        return Err(data("checkpoint vocabulary does not match the run's tokenizer"));
    }

    let mut trainer = Trainer::new(model, cfg.train.adam);
    if let Some(opt) = optimizer {
        trainer.optimizer = opt;
    }
    trainer.caption_weight = cfg.train.caption_loss_weight;
    trainer.history = history;

    let mut log = ExperimentLog::open(&log_path)?;
    log.append(&LogEvent::Start {
        command: format!("train-emgpt stage {stage}"),
        config_hash: cfg.hash(),
        provenance: provenance(),
        tags: tags.clone(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        resumed_at,
    })?;
    write_text(&sibling(&ckpt, ".run.toml"), &cfg.to_toml())?;

    let save = |trainer: &Trainer, log: &mut ExperimentLog| -> Result<(), HarnessError> {
        std::fs::create_dir_all(ckpt.parent().expect("ckpt dir")).map_err(runtime)?;
        save_checkpoint(&ckpt, &trainer.model, Some(&trainer.optimizer), &format!("stage{stage}")).map_err(emgpt_err)?;
        write_metrics_csv(&csv, &trainer.history).map_err(emgpt_err)?;
        log.append(&LogEvent::Checkpoint { step: trainer.step(), path: ckpt.display().to_string() })
    };

    let mut done = 0;
    while trainer.step() < cfg.train.steps {
        if args.stop_after.is_some_and(|n| done >= n) {
            break;
        }
        let step = trainer.step();
        let batch: Vec<TrainingTarget> =
            batch_indices(cfg.train.seed, step, batch_all.len(), cfg.train.batch_size).into_iter().map(|i| batch_all[i].clone()).collect();
        let rec = trainer.train_step(&batch).map_err(emgpt_err)?;
        done += 1;
        if cfg.train.log_every > 0 && (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps) {
            log.append(&LogEvent::Step { step, l_caption: rec.l_caption, l_speech: rec.l_speech, lr: rec.lr })?;
            log::info!("step {step}: L_caption={:.4} L_speech={:.4}", rec.l_caption, rec.l_speech);
        }
        if cfg.train.save_every > 0 && trainer.step() % cfg.train.save_every == 0 {
            save(&trainer, &mut log)?;
        }
    }
    save(&trainer, &mut log)?;
    let probe: Vec<TrainingTarget> = batch_all.iter().take(16).cloned().collect();
    let acc = teacher_forcing_accuracy(&trainer.model, &probe).map_err(emgpt_err)?;
    log.append(&LogEvent::Snapshot { step: trainer.step(), teacher_forcing_accuracy: acc })?;
    log.append(&LogEvent::Finish { step: trainer.step() })?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        metrics_csv: csv,
        log: log_path,
        config_hash: cfg.hash(),
        step: trainer.step(),
        examples: batch_all.len(),
        tags,
        last_loss: trainer.history.last().map(|r| (r.l_caption, r.l_speech)),
        teacher_forcing_accuracy: Some(acc),
    })
}

fn cfm_examples(p: &Prepared, cfg: &RunConfig) -> Result<Vec<CfmExample>, HarnessError> {
    let mut out = Vec::new();
    for s in &p.train {
        for (k, u) in s.turns.iter().enumerate() {
            let f = p.feats.get(s, k)?;
            let caption = if cfg.train.no_captions { "" } else { u.caption.as_deref().unwrap_or("") };
            out.push(CfmExample {
                mel: f.mel.frames.clone(),
                codes: f.codes.clone(),
                caption_embedding: embed_caption(caption),
                speaker: p.feats.speaker(&u.speaker_id)?.clone(),
            });
        }
    }
    Ok(out)
}

fn cfm_err(e: crate::cfm::CfmError) -> HarnessError {
    match e {
        crate::cfm::CfmError::Config(_) => HarnessError::Usage(e.to_string()),
        crate::cfm::CfmError::Checkpoint(_) | crate::cfm::CfmError::Io(_) | crate::cfm::CfmError::Json(_) => data(e),
        other => runtime(other),
    }
}

/// Trains the flow-matching mel generator on single utterances.
pub fn cmd_train_cfm(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainSummary, HarnessError> {
    let p = prepare(cfg)?;
    let examples = cfm_examples(&p, cfg)?;
    let ckpt = checkpoint_path(cfg, "cfm");
    let csv = cfg.paths.workdir.join(format!("metrics-cfm-{}.csv", cfg.hash()));
    let log_path = cfg.paths.workdir.join("logs").join(format!("cfm-{}.jsonl", cfg.hash()));

    let (net, opt, resumed_at) = if args.resume && ckpt.exists() {
        let net = load_cfm(&ckpt).map_err(cfm_err)?;
        let opt = load_cfm_optimizer(&ckpt, cfg.train.adam, &net).map_err(cfm_err)?;
        let at = opt.as_ref().map(|o| o.step);
        (net, opt, at)
    } else {
        let c = &cfg.cfm;
        let (norm_mean, norm_std) = crate::cfm::fit_normalization(&examples);
        let net_cfg = CFMConfig {
            n_mels: p.art.mel.n_mels,
            cond_width: c.cond_width,
            n_blocks: c.n_blocks,
            code_dim: c.code_dim,
            time_dim: c.time_dim,
            frame_rate: p.art.mel.frame_rate,
            sample_rate: p.art.mel.sample_rate,
            sigma_min: c.sigma_min,
            n_euler_steps: c.n_euler_steps,
            loss: c.loss,
            prompt_max_frac: c.prompt_max_frac,
            norm_mean,
            norm_std,
            seed: c.seed,
            ..CFMConfig::new(p.art.codebook.k())
        };
        (FieldNet::new(net_cfg).map_err(cfm_err)?, None, None)
    };
    let mut trainer = CfmTrainer::new(net, cfg.train.adam);
    if let Some(o) = opt {
        trainer.optimizer = o;
    }
    let mut log = ExperimentLog::open(&log_path)?;
    log.append(&LogEvent::Start {
        command: "train-cfm".into(),
        config_hash: cfg.hash(),
        provenance: provenance(),
        tags: Vec::new(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        resumed_at,
    })?;
    write_text(&sibling(&ckpt, ".run.toml"), &cfg.to_toml())?;
    let mut rows = String::from("step,loss,lr\n");
    if resumed_at.is_some() && csv.exists() {
        let old = std::fs::read_to_string(&csv).map_err(runtime)?;
        rows = old.lines().take(1 + trainer.optimizer.step).map(|l| format!("{l}\n")).collect();
    }
    let save = |trainer: &CfmTrainer, rows: &str, log: &mut ExperimentLog| -> Result<(), HarnessError> {
        std::fs::create_dir_all(ckpt.parent().expect("ckpt dir")).map_err(runtime)?;
        save_cfm(&ckpt, &trainer.net, Some(&trainer.optimizer)).map_err(cfm_err)?;
        write_text(&csv, rows)?;
        log.append(&LogEvent::Checkpoint { step: trainer.optimizer.step, path: ckpt.display().to_string() })
    };
    let mut done = 0;
    let mut last = None;
    while trainer.optimizer.step < cfg.cfm.steps {
        if args.stop_after.is_some_and(|n| done >= n) {
            break;
        }
        let step = trainer.optimizer.step;
        let batch: Vec<CfmExample> =
            batch_indices(cfg.cfm.seed, step, examples.len(), cfg.cfm.batch_size).into_iter().map(|i| examples[i].clone()).collect();
        let rec = trainer.train_step(&batch).map_err(cfm_err)?;
        done += 1;
        let _ = writeln!(rows, "{},{},{}", rec.step, rec.loss, rec.lr);
        last = Some(rec.loss);
        if cfg.train.log_every > 0 && step % cfg.train.log_every == 0 {
            log.append(&LogEvent::CfmStep { step, loss: rec.loss, lr: rec.lr })?;
            log::info!("cfm step {step}: loss={:.4}", rec.loss);
        }
        if cfg.train.save_every > 0 && trainer.optimizer.step % cfg.train.save_every == 0 {
            save(&trainer, &rows, &mut log)?;
        }
    }
    save(&trainer, &rows, &mut log)?;
    log.append(&LogEvent::Finish { step: trainer.optimizer.step })?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        metrics_csv: csv,
        log: log_path,
        config_hash: cfg.hash(),
        step: trainer.optimizer.step,
        examples: examples.len(),
        tags: Vec::new(),
        last_loss: last.map(|l| (0.0, l)),
        teacher_forcing_accuracy: None,
    })
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub session: String,
    pub turn: usize,
    pub emgpt: PathBuf,
    pub cfm: Option<PathBuf>,
    /// Preceding turns used as context; defaults to `data.n_turns`.
    pub n_turns: Option<usize>,
    pub out: PathBuf,
    pub wav: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOutput {
    pub caption: String,
    pub codes: Vec<u32>,
    pub caption_stop: StopReason,
    pub code_stop: StopReason,
    pub mel_shape: Option<(usize, usize)>,
    pub prompt_tokens: usize,
    pub history_turns: usize,
}

/// Caption, then codes, then (with a flow-matching checkpoint) a mel and optional waveform.
pub fn cmd_synth(cfg: &RunConfig, a: &SynthArgs) -> Result<SynthOutput, HarnessError> {
    let sessions = load_manifest(cfg.paths.manifest.as_deref())?;
    let session = sessions
        .iter()
        .find(|s| s.session_id == a.session)
        .ok_or_else(|| HarnessError::Usage(format!("session {} not in manifest", a.session)))?;
    if a.turn >= session.turns.len() {
        return Err(HarnessError::Usage(format!("turn {} out of range ({} turns)", a.turn, session.turns.len())));
    }
    let art = load_or_fit_artifacts(&cfg.paths.workdir, &[], cfg)
        .map_err(|e| data(format!("{e}; train a model in {} first", cfg.paths.workdir.display())))?;
    let feats = featurize(std::slice::from_ref(session), &art)?;
    let (model, _) = load_checkpoint(&a.emgpt).map_err(emgpt_err)?;
    let vocab = art.vocab();
    if model.config.vocab != vocab {
        return Err(data(format!("{}: vocabulary does not match {}", a.emgpt.display(), cfg.paths.workdir.display())));
    }
    let n = if cfg.train.no_context { 0 } else { a.n_turns.unwrap_or(cfg.data.n_turns).min(a.turn) };
    let max = model.config.max_seq_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed);

    let mut history: Vec<TurnTokens> = Vec::with_capacity(n);
    for j in a.turn - n..a.turn {
        let mut t = history_turn(session, j, &feats, cfg)?;
        if cfg.data.history_captions == HistoryCaptions::Predicted && !cfg.train.no_captions {
            let prompt = build_sequence(&history, &target_turn(session, j, &feats)?, &vocab, None, None).map_err(data)?;
            let budget = max.saturating_sub(prompt.len()).min(cfg.data.caption_max);
            let (ids, _) = generate_caption(&model, &prompt, &cfg.sampling, budget, &mut rng).map_err(emgpt_err)?;
            t.caption = Some(ids);
        }
        history.push(t);
    }
    let prompt = build_sequence(&history, &target_turn(session, a.turn, &feats)?, &vocab, None, None).map_err(data)?;
    let too_long = |len: usize| {
        runtime(format!("context of {n} turns needs {len} tokens but max_seq_len is {max}; use a smaller --n-turns"))
    };
    if prompt.len() + 2 > max {
        return Err(too_long(prompt.len() + 2));
    }
    let (caption_ids, caption_stop) = if cfg.train.no_captions {
        (Vec::new(), StopReason::Skipped)
    } else {
        let budget = (max - prompt.len() - 2).min(cfg.data.caption_max);
        generate_caption(&model, &prompt, &cfg.sampling, budget, &mut rng).map_err(emgpt_err)?
    };
    let with_caption = prompt.with_caption(&caption_ids, &vocab).map_err(data)?;
    let code_budget = max.saturating_sub(with_caption.len()).min(cfg.data.code_max);
    if code_budget == 0 {
        return Err(too_long(with_caption.len() + 1));
    }
    let (codes, code_stop) = generate_codes(&model, &with_caption, &cfg.sampling, code_budget, &mut rng).map_err(emgpt_err)?;
    let caption = decode_caption(&caption_ids, &vocab, &art.bpe).map_err(runtime)?;

    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    write_text(&a.out.join("caption.txt"), &format!("{caption}\n"))?;
    let mut out = SynthOutput {
        caption,
        codes: codes.codes.clone(),
        caption_stop,
        code_stop,
        mel_shape: None,
        prompt_tokens: prompt.len(),
        history_turns: n,
    };
    if let Some(cfm_path) = &a.cfm {
        if codes.is_empty() {
            return Err(runtime("the model produced no speech codes; nothing to render"));
        }
        let net = load_cfm(cfm_path).map_err(cfm_err)?;
        let target = &session.turns[a.turn];
        let reference = (a.turn - n..a.turn).rev().find(|&j| session.turns[j].speaker_id == target.speaker_id);
        let prompt_mel = reference.map(|j| feats.get(session, j).map(|f| f.mel.clone())).transpose()?;
        let mel = synthesize(
            &net,
            &codes,
            embed_caption(&out.caption),
            feats.speaker(&target.speaker_id)?.clone(),
            prompt_mel.as_ref(),
            cfg.sampling.seed,
        )
        .map_err(cfm_err)?;
        save_mel(&a.out.join("mel.bin"), &mel).map_err(runtime)?;
        out.mel_shape = Some((mel.n_frames(), mel.n_mels()));
        if a.wav {
            let wave = griffin_lim(&mel, &art.mel, cfg.cfm.vocoder_iters, cfg.sampling.seed).map_err(cfm_err)?;
            write_wav(&a.out.join("synth.wav"), &wave).map_err(runtime)?;
        }
    }
    write_text(&a.out.join("codes.json"), &serde_json::to_string_pretty(&out).expect("output serializes"))?;
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    /// Tab-separated `reference<TAB>synthesized` waveform paths.
    pub pairs: Option<PathBuf>,
    /// One generated caption per line.
    pub captions: Option<PathBuf>,
    /// One reference caption per line, aligned with `captions`.
    pub references: Option<PathBuf>,
    /// Tab-separated `judged<TAB>gold` labels.
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

fn read_lines(path: &Path) -> Result<Vec<String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn read_pairs(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, HarnessError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut pairs = Vec::new();
    let mut offenders = Vec::new();
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        match f.as_slice() {
            [r, s] if !r.is_empty() && !s.is_empty() => {
                let (r, s) = (base.join(r), base.join(s));
                let missing: Vec<String> = [&r, &s].iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
                if missing.is_empty() {
                    pairs.push((r, s));
                } else {
                    offenders.push(format!("line {}: missing {}", i + 1, missing.join(", ")));
                }
            }
            _ => offenders.push(format!("line {}: expected two tab-separated paths, got {line:?}", i + 1)),
        }
    }
    if !offenders.is_empty() {
        return Err(data(format!("unpaired entries in {}:\n  {}", path.display(), offenders.join("\n  "))));
    }
    Ok(pairs)
}

/// Hash identifying the run configuration behind a checkpoint.
fn checkpoint_hash(ckpt: &Path) -> Result<String, HarnessError> {
    let run = sibling(ckpt, ".run.toml");
    if run.exists() {
        let text = std::fs::read_to_string(&run).map_err(data)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| data(format!("{}: {e}", run.display())))?;
        return Ok(cfg.hash());
    }
    let meta = std::fs::read(sibling(ckpt, ".json")).map_err(|e| data(format!("{}: {e}", ckpt.display())))?;
    Ok(hex::encode(Sha256::digest(&meta))[..12].to_string())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport, HarnessError> {
    if a.pairs.is_none() && a.captions.is_none() && a.labels.is_none() {
        return Err(HarnessError::Usage("eval needs at least one of --pairs, --captions, --labels".into()));
    }
    let mut report = MetricReport::default();
    let mut csv = String::from("index,reference,synthesized,dtw\n");
    if let Some(p) = &a.pairs {
        let paths = read_pairs(p)?;
        let waves = paths
            .iter()
            .map(|(r, s)| Ok((read_wav(r).map_err(data)?, read_wav(s).map_err(data)?)))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let (mean, per) = ddtw(&waves).map_err(data)?;
        for (i, ((r, s), d)) in paths.iter().zip(&per).enumerate() {
            let d = d.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{i},{},{},{d}", r.display(), s.display());
        }
        report.ddtw = Some(mean);
        report.pairs = per.len();
        report.skipped_pairs = per.iter().filter(|d| d.is_none()).count();
        report.ssim_proxy = speaker_similarity_proxy(&waves).ok();
    }
    if let Some(c) = &a.captions {
        let caps = read_lines(c)?;
        report.dis1 = Some(distinct_n(&caps, 1).map_err(data)?);
        report.dis2 = distinct_n(&caps, 2).ok();
        if let Some(r) = &a.references {
            let refs = read_lines(r)?;
            report.sim = Some(caption_similarity(&caps, &refs, &HashEmbedder::default()).map_err(data)?);
        }
    } else if a.references.is_some() {
        return Err(HarnessError::Usage("--references needs --captions".into()));
    }
    if let Some(l) = &a.labels {
        let mut judged = Vec::new();
        let mut gold = Vec::new();
        for (i, line) in read_lines(l)?.iter().enumerate() {
            let (j, g) = line.split_once('\t').ok_or_else(|| data(format!("{} line {}: expected judged<TAB>gold", l.display(), i + 1)))?;
            judged.push(j.trim().to_lowercase());
            gold.push(g.trim().to_lowercase());
        }
        report.acc = Some(accuracy(&judged, &gold).map_err(data)?);
    }
    if let Some(ck) = &a.checkpoint {
        report.config_hash = Some(checkpoint_hash(ck)?);
    }
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    write_text(&a.out.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    if a.pairs.is_some() {
        write_text(&a.out.join("pairs.csv"), &csv)?;
    }
    Ok(report)
}

fn row(name: &str, counts: &std::collections::BTreeMap<String, usize>, available: bool) -> String {
    if !available {
        return format!("{name:<12} n/a\n");
    }
    let cells: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{name:<12} {}\n", cells.join(" "))
}

/// Human-readable rendering of the same numbers as the JSON form.
pub fn stats_table(s: &CorpusStats) -> String {
    let styled = s.styled_utterances > 0;
    let mut t = String::new();
    let _ = writeln!(t, "{:<12} {}", "dialogs", s.dialogs);
    let _ = writeln!(t, "{:<12} {}", "utterances", s.utterances);
    let _ = writeln!(t, "{:<12} {:.6}", "hours", s.hours);
    t.push_str(&row("gender", &s.gender, styled));
    t.push_str(&row("pitch", &s.pitch, styled));
    t.push_str(&row("energy", &s.energy, styled));
    t.push_str(&row("tempo", &s.tempo, styled));
    t.push_str(&row("emotion", &s.emotion, s.emotion_labeled_utterances > 0));
    t
}

pub fn cmd_stats(manifest: &Path) -> Result<CorpusStats, HarnessError> {
    let sessions = load_manifest(Some(manifest))?;
    Ok(corpus_stats(&sessions))
}

/// Session ids a stage-2 run trains on, for leakage checks.
pub fn train_session_ids(cfg: &RunConfig) -> Result<BTreeSet<String>, HarnessError> {
    let sessions = load_manifest(cfg.paths.manifest.as_deref())?;
    let split = split_corpus(&sessions, &cfg.split).map_err(data)?;
    Ok(split.train.into_iter().map(|s| s.session_id).collect())
}
