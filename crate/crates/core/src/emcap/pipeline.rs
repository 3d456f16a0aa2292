use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::{Attributes, DialogTurn, LlmClient, LlmRequest, LlmTask, RetryPolicy};
use super::prompts::{self, render, render_dialog_prompt};
use super::rules::rule;
use super::text::contradictions;
use super::{classify_level, AttributeThresholds, EmcapError};
use crate::audio::read_wav;
use crate::corpus::{DialogueSession, Emotion, Gender, StyleFactors, StyleLevels};
use crate::prosody::{extract_energy, extract_pitch, extract_tempo, Alignments};

pub(crate) fn derive_seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn call(
    client: &dyn LlmClient,
    task: LlmTask,
    prompt: String,
    seed: u64,
    policy: &RetryPolicy,
    what: &'static str,
) -> Result<String, EmcapError> {
    let mut last = None;
    for attempt in 0..=policy.max_retries {
        let req = LlmRequest { task: task.clone(), prompt: prompt.clone(), seed, attempt };
        match client.complete(&req) {
            Ok(s) if !s.trim().is_empty() => return Ok(s.trim().to_string()),
            Ok(_) => last = Some(EmcapError::EmptyResponse(what)),
            Err(e) => last = Some(EmcapError::Llm(e)),
        }
    }
    Err(last.unwrap_or(EmcapError::EmptyResponse(what)))
}

/// Per-turn emotions for one dialog and which turns fell back to neutral.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionLabels {
    pub emotions: Vec<Emotion>,
    pub fallback: Vec<bool>,
}

fn parse_label(s: &str) -> Option<Emotion> {
    let cleaned: String = s.chars().filter(|c| c.is_alphabetic()).collect();
    Emotion::from_label(&cleaned)
}

fn parse_emotions(reply: &str, n: usize, out: &mut [Option<Emotion>]) {
    let mut positional = 0;
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (idx, label) = match line.split_once(':') {
            Some((k, v)) => match k.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']', '.']).parse::<usize>() {
                Ok(i) if (1..=n).contains(&i) => (i - 1, v),
                Ok(_) => continue,
                Err(_) => (positional, v),
            },
            None => (positional, line),
        };
        positional += 1;
        if idx < n && out[idx].is_none() {
            out[idx] = parse_label(label);
        }
    }
}

/// One request per dialog; unparseable turns are retried, then labeled neutral.
pub fn classify_dialog_emotions(
    session: &DialogueSession,
    client: &dyn LlmClient,
    policy: &RetryPolicy,
    seed: u64,
) -> Result<EmotionLabels, EmcapError> {
    let turns: Vec<DialogTurn> = session
        .turns
        .iter()
        .map(|u| DialogTurn {
            speaker_id: u.speaker_id.clone(),
            role: u.role,
            text: u.text.clone(),
            audio: u.audio_path.as_ref().map(|p| p.display().to_string()),
            gold_emotion: u.emotion,
        })
        .collect();
    let n = turns.len();
    let prompt = render_dialog_prompt(&turns);
    let task = LlmTask::DialogEmotions { session_id: session.session_id.clone(), turns };
    let mut got = vec![None; n];
    let mut last_err = None;
    let mut any_reply = false;
    for attempt in 0..=policy.max_retries {
        let req = LlmRequest { task: task.clone(), prompt: prompt.clone(), seed, attempt };
        match client.complete(&req) {
            Ok(reply) => {
                any_reply = true;
                parse_emotions(&reply, n, &mut got);
            }
            Err(e) => last_err = Some(e),
        }
        if got.iter().all(Option::is_some) {
            break;
        }
    }
    if !any_reply {
        if let Some(e) = last_err {
            return Err(EmcapError::Llm(e));
        }
    }
    let fallback: Vec<bool> = got.iter().map(Option::is_none).collect();
    for (i, f) in fallback.iter().enumerate() {
        if *f {
            log::warn!("{}: emotion for turn {i} unparseable; using Neutral", session.session_id);
        }
    }
    Ok(EmotionLabels { emotions: got.into_iter().map(|e| e.unwrap_or(Emotion::Neutral)).collect(), fallback })
}

/// Caption text tagged with whether it has already been rewritten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub expanded: bool,
}

pub fn generate_basic_description(
    utterance_id: &str,
    context: &str,
    text: &str,
    attributes: &Attributes,
    client: &dyn LlmClient,
    policy: &RetryPolicy,
    seed: u64,
) -> Result<Description, EmcapError> {
    let l = attributes.levels;
    let prompt = render(
        prompts::BASIC_DESCRIPTION,
        &[
            ("context", context.to_string()),
            ("utterance_id", utterance_id.to_string()),
            ("text", text.to_string()),
            ("emotion", attributes.emotion.to_string()),
            ("gender", attributes.gender.to_string()),
            ("pitch", l.pitch.to_string()),
            ("energy", l.energy.to_string()),
            ("tempo", l.tempo.to_string()),
        ],
    );
    let task = LlmTask::BasicDescription { utterance_id: utterance_id.to_string(), attributes: *attributes };
    let text = call(client, task, prompt, seed, policy, "basic description")?;
    Ok(Description { text, expanded: false })
}

pub fn expand_caption(
    description: &Description,
    rule_id: u8,
    attributes: &Attributes,
    client: &dyn LlmClient,
    policy: &RetryPolicy,
    seed: u64,
) -> Result<Description, EmcapError> {
    if description.expanded {
        return Err(EmcapError::AlreadyExpanded);
    }
    let r = rule(rule_id).ok_or(EmcapError::Rule(rule_id))?;
    let prompt = render(
        prompts::EXPAND_CAPTION,
        &[
            ("rule_id", r.id.to_string()),
            ("rule_name", r.name.to_string()),
            ("rule_instruction", r.instruction.to_string()),
            ("description", description.text.clone()),
        ],
    );
    let task = LlmTask::Expand { description: description.text.clone(), rule: rule_id, attributes: *attributes };
    let text = call(client, task, prompt, seed, policy, "caption expansion")?;
    Ok(Description { text, expanded: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub verified: bool,
    pub reasons: Vec<String>,
}

/// Offline keyword check, plus a model check when a client is given.
pub fn verify_caption(
    caption: &str,
    attributes: &Attributes,
    client: Option<&dyn LlmClient>,
    policy: &RetryPolicy,
    seed: u64,
) -> Verification {
    if caption.trim().is_empty() {
        return Verification { verified: false, reasons: vec!["empty caption".into()] };
    }
    let mut reasons = contradictions(caption, attributes);
    if let Some(client) = client {
        let l = attributes.levels;
        let prompt = render(
            prompts::VERIFY_CAPTION,
            &[
                ("caption", caption.to_string()),
                ("emotion", attributes.emotion.to_string()),
                ("gender", attributes.gender.to_string()),
                ("pitch", l.pitch.to_string()),
                ("energy", l.energy.to_string()),
                ("tempo", l.tempo.to_string()),
            ],
        );
        let task = LlmTask::Verify { caption: caption.to_string(), attributes: *attributes };
        match call(client, task, prompt, seed, policy, "verification") {
            Ok(r) if r.to_lowercase().starts_with("yes") => {}
            Ok(r) => reasons.push(format!("model check rejected: {r}")),
            Err(e) => reasons.push(format!("model check failed: {e}")),
        }
    }
    Verification { verified: reasons.is_empty(), reasons }
}

/// Raw measurements and levels for one utterance with audio.
pub fn measure_style(
    wave: &crate::audio::Waveform,
    utterance_id: &str,
    text: &str,
    gender: Gender,
    alignments: Option<&Alignments>,
    thresholds: &AttributeThresholds,
) -> Result<StyleFactors, EmcapError> {
    let pitch_hz = extract_pitch(wave)?;
    let energy_rms = extract_energy(wave)?;
    let tempo = extract_tempo(alignments, utterance_id, wave.duration(), text)?;
    Ok(StyleFactors {
        gender,
        pitch_hz,
        energy_rms,
        tempo_mpd: tempo.mpd,
        levels: StyleLevels {
            pitch: classify_level(pitch_hz, thresholds.pitch),
            energy: classify_level(energy_rms, thresholds.energy),
            tempo: classify_level(tempo.mpd, thresholds.tempo),
        },
        tempo_approximate: tempo.approximate,
    })
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    pub seed: u64,
    pub thresholds: AttributeThresholds,
    pub alignments: Option<Alignments>,
    pub retry: RetryPolicy,
    /// Extra rewrite attempts after a failed verification.
    pub max_regenerations: u32,
    pub llm_verify: bool,
    pub concurrency: usize,
    /// Turns of preceding dialog given to the description prompt.
    pub context_turns: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            thresholds: AttributeThresholds::default(),
            alignments: None,
            retry: RetryPolicy::default(),
            max_regenerations: 2,
            llm_verify: false,
            concurrency: 4,
            context_turns: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub utterance_id: String,
    pub session_id: String,
    pub turn: usize,
    pub text: String,
    pub emotion: Emotion,
    pub emotion_fallback: bool,
    pub style: StyleFactors,
    pub basic_description: String,
    pub empathetic_caption: String,
    pub expansion_rule_id: u8,
    pub regenerations: u32,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verification_notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceFailure {
    pub utterance_id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub sessions: Vec<DialogueSession>,
    pub records: Vec<CaptionRecord>,
    pub failures: Vec<UtteranceFailure>,
}

impl Annotation {
    pub fn verified_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.verified).count() as f64 / self.records.len() as f64
    }
}

pub fn records_to_jsonl(records: &[CaptionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

struct Job<'a> {
    session: &'a DialogueSession,
    turn: usize,
    emotion: Emotion,
    emotion_fallback: bool,
}

fn annotate_one(
    job: &Job<'_>,
    client: &dyn LlmClient,
    opts: &AnnotateOptions,
    known_genders: &BTreeMap<String, Gender>,
) -> Result<CaptionRecord, EmcapError> {
    let s = job.session;
    let u = &s.turns[job.turn];
    let utt_id = s.utterance_id(job.turn);
    let seed = derive_seed(&[&opts.seed.to_string(), &s.session_id, &job.turn.to_string()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let style = match (&u.audio_path, &u.style) {
        (Some(path), _) => {
            let wave = read_wav(path)?;
            let pitch_hz = extract_pitch(&wave)?;
            let gender = match known_genders.get(&u.speaker_id) {
                Some(g) => *g,
                None => {
                    let prompt = render(
                        prompts::GENDER,
                        &[
                            ("utterance_id", utt_id.clone()),
                            ("audio", path.display().to_string()),
                            ("pitch_hz", format!("{pitch_hz:.1}")),
                        ],
                    );
                    let task = LlmTask::Gender { utterance_id: utt_id.clone(), pitch_hz };
                    let reply = call(client, task, prompt, seed, &opts.retry, "gender")?;
                    let ws = super::text::words(&reply);
                    match super::text::mentioned_genders(&ws).as_slice() {
                        [g] => *g,
                        _ => return Err(EmcapError::Input(format!("{utt_id}: unparseable gender reply {reply:?}"))),
                    }
                }
            };
            measure_style(&wave, &utt_id, &u.text, gender, opts.alignments.as_ref(), &opts.thresholds)?
        }
        (None, Some(st)) => {
            let t = &opts.thresholds;
            StyleFactors {
                levels: StyleLevels {
                    pitch: classify_level(st.pitch_hz, t.pitch),
                    energy: classify_level(st.energy_rms, t.energy),
                    tempo: classify_level(st.tempo_mpd, t.tempo),
                },
                ..st.clone()
            }
        }
        (None, None) => return Err(EmcapError::Input(format!("{utt_id}: no audio and no style measurements"))),
    };

    let attributes = Attributes { emotion: job.emotion, gender: style.gender, levels: style.levels };
    let lo = job.turn.saturating_sub(opts.context_turns);
    let context: Vec<String> = s.turns[lo..job.turn].iter().map(|t| format!("{}: {}", t.speaker_id, t.text)).collect();
    let basic = generate_basic_description(&utt_id, &context.join("\n"), &u.text, &attributes, client, &opts.retry, seed)?;

    let verifier = if opts.llm_verify { Some(client) } else { None };
    let mut regenerations = 0;
    loop {
        let rule_id: u8 = rng.gen_range(1..=8);
        let expanded = expand_caption(&basic, rule_id, &attributes, client, &opts.retry, rng.gen())?;
        let v = verify_caption(&expanded.text, &attributes, verifier, &opts.retry, rng.gen());
        if v.verified || regenerations >= opts.max_regenerations {
            if !v.verified {
                log::warn!("{utt_id}: caption failed verification after {regenerations} regenerations");
            }
            return Ok(CaptionRecord {
                utterance_id: utt_id,
                session_id: s.session_id.clone(),
                turn: job.turn,
                text: u.text.clone(),
                emotion: job.emotion,
                emotion_fallback: job.emotion_fallback,
                style,
                basic_description: basic.text,
                empathetic_caption: expanded.text,
                expansion_rule_id: rule_id,
                regenerations,
                verified: v.verified,
                verification_notes: v.reasons,
            });
        }
        regenerations += 1;
    }
}

/// Annotates every utterance. Per-utterance failures are collected rather than
/// aborting; results are in corpus order regardless of concurrency.
pub fn annotate_corpus(
    sessions: &[DialogueSession],
    client: &dyn LlmClient,
    opts: &AnnotateOptions,
) -> Result<Annotation, EmcapError> {
    opts.thresholds.validate()?;
    if let Some(a) = &opts.alignments {
        let ids: std::collections::BTreeSet<String> =
            sessions.iter().flat_map(|s| (0..s.turns.len()).map(move |i| s.utterance_id(i))).collect();
        if let Some(bad) = a.0.keys().find(|k| !ids.contains(*k)) {
            return Err(EmcapError::UnknownAlignment(bad.clone()));
        }
    }
    let mut known_genders = BTreeMap::new();
    for u in sessions.iter().flat_map(|s| &s.turns) {
        if let Some(st) = &u.style {
            known_genders.entry(u.speaker_id.clone()).or_insert(st.gender);
        }
    }

    let mut jobs = Vec::new();
    for s in sessions {
        let seed = derive_seed(&[&opts.seed.to_string(), &s.session_id]);
        let labels = classify_dialog_emotions(s, client, &opts.retry, seed)?;
        for turn in 0..s.turns.len() {
            jobs.push(Job { session: s, turn, emotion: labels.emotions[turn], emotion_fallback: labels.fallback[turn] });
        }
    }

    let workers = opts.concurrency.max(1).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<CaptionRecord, EmcapError>>> = (0..jobs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = annotate_one(&jobs[i], client, opts, &known_genders);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });

    let mut out_sessions = sessions.to_vec();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let utterance_id = job.session.utterance_id(job.turn);
        match r.expect("every job ran") {
            Ok(rec) => {
                let si = sessions.iter().position(|s| std::ptr::eq(s, job.session)).expect("job session in corpus");
                let u = &mut out_sessions[si].turns[job.turn];
                u.caption = Some(rec.empathetic_caption.clone());
                u.emotion = Some(rec.emotion);
                u.style = Some(rec.style.clone());
                records.push(rec);
            }
            Err(e) => {
                log::warn!("{utterance_id}: {e}");
                failures.push(UtteranceFailure { utterance_id, message: e.to_string() });
            }
        }
    }
    Ok(Annotation { sessions: out_sessions, records, failures })
}
