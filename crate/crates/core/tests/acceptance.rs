//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! cargo test --test acceptance [-- 3 6]   runs only the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convsynth::audio::Waveform;
use convsynth::cfm::{
    cfm_loss_with_draws, euler_integrate, euler_solve, flow_sample, ot_flow, standard_normal, target_field, CFMConfig, CfmError,
    CfmExample, CfmTrainer, ConditionalField, ConditioningBundle, FieldNet, FlowSample, LossNorm,
};
use convsynth::codec::{SemanticCodes, SpeakerVector};
use convsynth::context::{build_sequence, build_training_target, parse_sequence, TokenSequence, TrainingTarget, TurnTokens, VocabSpec};
use convsynth::corpus::{load_corpus, Level};
use convsynth::emcap::{classify_level, AttributeThresholds};
use convsynth::emgpt::{
    chain_loss, generate_chain, loss_and_grads, teacher_forcing_accuracy, EmGPT, EmGPTConfig, SamplingConfig, Trainer,
};
use convsynth::harness::data::{featurize, load_or_fit_artifacts, training_sequence};
use convsynth::harness::{
    cmd_annotate, cmd_eval, cmd_synth, cmd_train_cfm, cmd_train_emgpt, training_targets, AnnotateArgs, EvalArgs, ExperimentLog,
    LlmChoice, LogEvent, RunConfig, SynthArgs, TrainArgs,
};
use convsynth::metrics::{distinct_n, dtw_distance, MetricReport};
use convsynth::nn::{AdamConfig, Mat, ParamStore, Tape, Var};
use convsynth::prosody::{extract_energy, extract_pitch};
use convsynth::toy::{write_toy_corpus, ToySpec};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t <= budget, format!("took {:.1}s, budget {:.0}s", t.as_secs_f64(), budget.as_secs_f64()))
}

fn random_turn(rng: &mut ChaCha8Rng, v: &VocabSpec, history: bool) -> TurnTokens {
    let text: Vec<u32> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(0..v.bpe_vocab_size)).collect();
    let speaker = SpeakerVector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    if !history {
        return TurnTokens { speaker, text, codes: None, caption: None };
    }
    TurnTokens { speaker, text, codes: Some(random_codes(rng, v)), caption: Some(random_caption(rng, v)) }
}

fn random_codes(rng: &mut ChaCha8Rng, v: &VocabSpec) -> SemanticCodes {
    SemanticCodes::new((0..rng.gen_range(1..60)).map(|_| rng.gen_range(0..v.code_vocab_size)).collect())
}

fn random_caption(rng: &mut ChaCha8Rng, v: &VocabSpec) -> Vec<u32> {
    (0..rng.gen_range(0..30)).map(|_| rng.gen_range(0..v.bpe_vocab_size)).collect()
}

struct RandomSession {
    history: Vec<TurnTokens>,
    target: TurnTokens,
    codes: SemanticCodes,
    caption: Vec<u32>,
}

fn random_session(rng: &mut ChaCha8Rng, v: &VocabSpec) -> RandomSession {
    let h = rng.gen_range(0..=6);
    RandomSession {
        history: (0..h).map(|_| random_turn(rng, v, true)).collect(),
        target: random_turn(rng, v, false),
        codes: random_codes(rng, v),
        caption: random_caption(rng, v),
    }
}

/// Boundaries computed by direct offset arithmetic, independent of the framing code:
/// per history turn (slot, codes, text, sps, caption, spe), then target (slot, text, sps, caption, spe, codes, end, eos).
fn oracle_boundaries(s: &RandomSession) -> Vec<usize> {
    let mut b = Vec::new();
    let mut pos = 1;
    for t in &s.history {
        let (nc, nt, nd) = (t.codes.as_ref().unwrap().len(), t.text.len(), t.caption.as_ref().unwrap().len());
        b.extend([pos, pos + 1, pos + 1 + nc, pos + 1 + nc + nt, pos + 2 + nc + nt, pos + 2 + nc + nt + nd]);
        pos += 3 + nc + nt + nd;
    }
    let (nt, nd, na) = (s.target.text.len(), s.caption.len(), s.codes.len());
    b.extend([pos, pos + 1, pos + 1 + nt, pos + 2 + nt, pos + 2 + nt + nd, pos + 3 + nt + nd, pos + 3 + nt + nd + na, pos + 4 + nt + nd + na]);
    b
}

fn layout_boundaries(l: &convsynth::context::SegmentLayout) -> Vec<usize> {
    let mut b = Vec::new();
    for h in &l.history {
        b.extend([h.speaker, h.codes.start, h.text.start, h.sps, h.caption.start, h.spe]);
        assert_eq!((h.codes.end, h.text.end, h.caption.end), (h.text.start, h.sps, h.spe));
    }
    let t = &l.target;
    let caption = t.caption.clone().unwrap_or(usize::MAX..usize::MAX);
    let codes = t.codes.clone().unwrap_or(usize::MAX..usize::MAX);
    b.extend([
        t.speaker,
        t.text.start,
        t.sps,
        caption.start,
        t.spe.unwrap_or(usize::MAX),
        codes.start,
        t.end_of_codes.unwrap_or(usize::MAX),
        t.eos.unwrap_or(usize::MAX),
    ]);
    b
}

fn c1_tokenization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let v = VocabSpec::new(rng.gen_range(8..300), rng.gen_range(2..128));
        let s = random_session(&mut rng, &v);
        let seq = build_sequence(&s.history, &s.target, &v, Some(&s.codes), Some(&s.caption)).map_err(err)?;
        let parsed = parse_sequence(&seq.ids, &v).map_err(err)?;
        let want = oracle_boundaries(&s);
        check(layout_boundaries(&parsed) == want, format!("session {i}: parsed boundaries differ from oracle"))?;
        check(parsed == seq.layout, format!("session {i}: parsed layout differs from built layout"))?;
        check(seq.ids.len() == want[want.len() - 1] + 1, format!("session {i}: length"))?;
        let h = s.history.len();
        let count = |id: u32| seq.ids.iter().filter(|&&x| x == id).count();
        let counts = [count(v.bos), count(v.eos), count(v.sps), count(v.spe), count(v.end_of_codes), count(v.speaker_slot)];
        check(counts == [1, 1, h + 1, h + 1, 1, h + 1], format!("session {i}: special counts {counts:?} with H={h}"))?;
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("1000 sessions in {:.2}s", start.elapsed().as_secs_f64()))
}

fn c2_loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let v = VocabSpec::new(rng.gen_range(8..300), rng.gen_range(2..128));
        let s = random_session(&mut rng, &v);
        let seq = build_sequence(&s.history, &s.target, &v, Some(&s.codes), Some(&s.caption)).map_err(err)?;
        let t = build_training_target(&seq).map_err(err)?;
        check(t.caption_mask.iter().zip(&t.speech_mask).all(|(a, b)| !(a & b)), format!("example {i}: masks overlap"))?;
        let (d, a) = (s.caption.len(), s.codes.len());
        check(t.caption_count() == d + 1, format!("example {i}: caption mask {} != D+1 = {}", t.caption_count(), d + 1))?;
        check(t.speech_count() == a + 1, format!("example {i}: speech mask {} != A+1 = {}", t.speech_count(), a + 1))?;
        let logits = Mat::from_elem((t.target.len(), v.size()), rng.gen_range(-3.0..3.0));
        let l = chain_loss(&logits, &t).map_err(err)?;
        let ln_v = (v.size() as f64).ln();
        worst = worst.max((l.caption - ln_v).abs()).max((l.speech - ln_v).abs()).max((l.total - 2.0 * ln_v).abs());
    }
    check(worst <= 1e-9, format!("uniform loss off by {worst:e}"))?;
    Ok(format!("200 examples, max |L - ln V| = {worst:.1e}"))
}

struct OverfitData {
    targets: Vec<TrainingTarget>,
    prompts: Vec<TokenSequence>,
    captions: Vec<Vec<u32>>,
    codes: Vec<SemanticCodes>,
    vocab: VocabSpec,
}

fn annotated_toy(dir: &Path, spec: &ToySpec) -> Result<std::path::PathBuf, String> {
    write_toy_corpus(&dir.join("raw"), spec).map_err(err)?;
    let out = dir.join("ann");
    cmd_annotate(&AnnotateArgs {
        manifest: dir.join("raw"),
        out: out.clone(),
        llm: LlmChoice::Mock,
        http: Default::default(),
        seed: 7,
        thresholds: None,
        alignments: None,
        concurrency: 2,
        llm_verify: false,
    })
    .map_err(err)?;
    Ok(out)
}

fn overfit_data(dir: &Path) -> Result<OverfitData, String> {
    let manifest = annotated_toy(dir, &ToySpec { dialogues: 8, turns: 2, seed: 3, ..ToySpec::default() })?;
    let cfg = RunConfig::resolve(
        None,
        &[
            format!("paths.manifest={:?}", manifest.display().to_string()),
            format!("paths.workdir={:?}", dir.join("work").display().to_string()),
            "data.bpe_vocab=256".into(),
            "data.code_vocab=64".into(),
        ],
    )
    .map_err(err)?;
    let sessions = load_corpus(&manifest).map_err(err)?;
    let art = load_or_fit_artifacts(&cfg.paths.workdir, &sessions, &cfg).map_err(err)?;
    let feats = featurize(&sessions, &art).map_err(err)?;
    let vocab = art.vocab();
    let mut d = OverfitData { targets: vec![], prompts: vec![], captions: vec![], codes: vec![], vocab };
    for s in &sessions {
        let seq = training_sequence(s, 1, 1, &feats, &vocab, &cfg).map_err(err)?;
        d.targets.push(build_training_target(&seq).map_err(err)?);
        let t = &seq.layout.target;
        d.prompts.push(TokenSequence {
            ids: seq.ids[..=t.sps].to_vec(),
            layout: convsynth::context::SegmentLayout {
                history: seq.layout.history.clone(),
                target: convsynth::context::TargetSpans { caption: None, spe: None, codes: None, end_of_codes: None, eos: None, ..t.clone() },
            },
            speakers: seq.speakers.clone(),
        });
        d.captions.push(seq.ids[t.caption.clone().unwrap()].to_vec());
        d.codes.push(SemanticCodes::new(seq.ids[t.codes.clone().unwrap()].iter().map(|&id| id - vocab.code_offset).collect()));
    }
    Ok(d)
}

fn c3_overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let d = overfit_data(dir.path())?;
    check(d.vocab.bpe_vocab_size <= 256 && d.vocab.code_vocab_size == 64, format!("vocab {:?}", d.vocab))?;
    let max_len = d.targets.iter().map(|t| t.input.len() + 1).max().unwrap();
    let model = EmGPT::new(EmGPTConfig {
        n_layers: 2,
        model_dim: 64,
        n_heads: 4,
        max_seq_len: max_len.next_power_of_two(),
        dropout_rate: 0.0,
        ffn_mult: 4,
        speaker_dim: d.targets[0].speakers[0].dim(),
        vocab: d.vocab,
        seed: 0,
    })
    .map_err(err)?;
    let mut trainer = Trainer::new(model, AdamConfig { lr: 3e-3, warmup_steps: 20, ..AdamConfig::default() });
    let mut acc = 0.0;
    while trainer.step() < 2000 {
        trainer.train_step(&d.targets).map_err(err)?;
        if trainer.step() % 50 == 0 {
            acc = teacher_forcing_accuracy(&trainer.model, &d.targets).map_err(err)?;
            if acc >= 1.0 {
                break;
            }
        }
    }
    acc = acc.max(teacher_forcing_accuracy(&trainer.model, &d.targets).map_err(err)?);
    check(acc >= 0.99, format!("teacher-forcing accuracy {acc:.4} after {} steps", trainer.step()))?;
    let mut exact = 0;
    for i in 0..d.prompts.len() {
        let out = generate_chain(&trainer.model, &d.prompts[i], &SamplingConfig::greedy(), 200, 400, false).map_err(err)?;
        if out.caption_ids == d.captions[i] && out.code_ids == d.codes[i] {
            exact += 1;
        }
    }
    check(exact == 8, format!("greedy decoding reproduced {exact}/8 dialogues (accuracy {acc:.4})"))?;
    within_budget(start, Duration::from_secs(15 * 60))?;
    Ok(format!("accuracy {acc:.4} at step {}, 8/8 exact, {:.0}s", trainer.step(), start.elapsed().as_secs_f64()))
}

/// Central-difference check on `n` randomly chosen parameters.
fn grad_check(
    store: &mut ParamStore,
    analytic: &convsynth::nn::Grads,
    f: &dyn Fn(&ParamStore) -> f64,
    n: usize,
    seed: u64,
) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let total = store.numel();
    check(total >= n, format!("only {total} parameters"))?;
    let picks = rand::seq::index::sample(&mut rng, total, n);
    for flat in picks.iter() {
        let (id, (r, c)) = store.locate(flat);
        let orig = store.get(id)[[r, c]];
        store.get_mut(id)[[r, c]] = orig + h;
        let up = f(store);
        store.get_mut(id)[[r, c]] = orig - h;
        let down = f(store);
        store.get_mut(id)[[r, c]] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.flat(flat);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    Ok((n, worst))
}

fn c4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = VocabSpec::new(30, 12);
    let mut model = EmGPT::new(EmGPTConfig {
        n_layers: 2,
        model_dim: 16,
        n_heads: 2,
        max_seq_len: 512,
        dropout_rate: 0.0,
        ffn_mult: 2,
        speaker_dim: 4,
        vocab: v,
        seed: 4,
    })
    .map_err(err)?;
    let s = loop {
        let s = random_session(&mut rng, &v);
        if s.history.len() <= 2 {
            break s;
        }
    };
    let seq = build_sequence(&s.history, &s.target, &v, Some(&s.codes), Some(&s.caption)).map_err(err)?;
    let t = build_training_target(&seq).map_err(err)?;
    let (_, _, grads) = loss_and_grads(&model, std::slice::from_ref(&t), 0.7, None).map_err(err)?;
    let cfg = model.config.clone();
    let objective = |store: &ParamStore| {
        let mut m = EmGPT::new(cfg.clone()).expect("config is valid");
        m.store = store.clone();
        loss_and_grads(&m, std::slice::from_ref(&t), 0.7, None).expect("finite").1
    };
    let (n1, w1) = grad_check(&mut model.store, &grads, &objective, 120, 40)?;

    let ccfg = CFMConfig {
        n_mels: 4,
        cond_width: 8,
        n_blocks: 2,
        code_dim: 3,
        caption_dim: 2,
        speaker_dim: 2,
        time_dim: 4,
        seed: 5,
        ..CFMConfig::new(5)
    };
    let mut net = FieldNet::new(ccfg.clone()).map_err(err)?;
    let codes = SemanticCodes::new(vec![0, 3, 1]);
    let x1 = standard_normal(12, 4, &mut rng);
    let cond = ConditioningBundle::new(&ccfg, &codes, vec![0.3, -0.2], SpeakerVector(vec![0.5, 0.1]), Some(&x1), 5).map_err(err)?;
    let draw = flow_sample(standard_normal(12, 4, &mut rng), x1, 0.37, ccfg.sigma_min).map_err(err)?;
    let out = cfm_loss_with_draws(&net, &[&cond], std::slice::from_ref(&draw), LossNorm::SquaredL2).map_err(err)?;
    let cfm_objective = |store: &ParamStore| {
        let mut n = FieldNet::new(ccfg.clone()).expect("config is valid");
        n.store = store.clone();
        cfm_loss_with_draws(&n, &[&cond], std::slice::from_ref(&draw), LossNorm::SquaredL2).expect("finite").loss
    };
    let (n2, w2) = grad_check(&mut net.store, &out.grads, &cfm_objective, 120, 41)?;
    check(w1 < 1e-3, format!("EmGPT worst relative error {w1:.2e}"))?;
    check(w2 < 1e-3, format!("CFM worst relative error {w2:.2e}"))?;
    Ok(format!("EmGPT {n1} params worst {w1:.1e}; CFM {n2} params worst {w2:.1e}"))
}

/// `ν(x, t) = a·x + t`, independent of parameters and conditioning.
struct AffineField {
    a: f64,
    store: ParamStore,
}

impl ConditionalField for AffineField {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn predict(&self, tape: &mut Tape, x_t: &Mat, t: f64, _: &ConditioningBundle) -> Result<Var, CfmError> {
        Ok(tape.constant(x_t.mapv(|v| self.a * v + t)))
    }
}

fn c5_flow_analytics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x0, x1) = (standard_normal(7, 5, &mut rng), standard_normal(7, 5, &mut rng));
    check(ot_flow(&x0, &x1, 0.0, 1e-4).map_err(err)? == x0, "phi_0 != X0")?;
    check(ot_flow(&x0, &x1, 1.0, 0.0).map_err(err)? == x1, "phi_1 != X1 with sigma 0")?;
    let sigma = 1e-4;
    let mut fd_worst: f64 = 0.0;
    for &t in &[0.1, 0.35, 0.5, 0.8, 0.95] {
        let h = 1e-3;
        let fd = (ot_flow(&x0, &x1, t + h, sigma).map_err(err)? - ot_flow(&x0, &x1, t - h, sigma).map_err(err)?) / (2.0 * h);
        let omega = target_field(&x0, &x1, sigma).map_err(err)?;
        fd_worst = fd_worst.max((fd - omega).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    check(fd_worst <= 1e-8, format!("finite-difference derivative off by {fd_worst:e}"))?;

    let field = AffineField { a: -0.6, store: ParamStore::default() };
    let cfg = CFMConfig { n_mels: 5, caption_dim: 0, speaker_dim: 0, ..CFMConfig::new(3) };
    let mut oracle = 0.0;
    let mut draws: Vec<FlowSample> = Vec::new();
    let mut conds = Vec::new();
    let b = 3;
    for i in 0..b {
        let codes = SemanticCodes::new(vec![i as u32; 2]);
        let n = codes.len() * cfg.frames_per_code();
        let (x0, x1) = (standard_normal(n, 5, &mut rng), standard_normal(n, 5, &mut rng));
        let t = rng.gen::<f64>();
        let d = flow_sample(x0, x1, t, sigma).map_err(err)?;
        let mut sq = 0.0;
        for r in 0..n {
            for c in 0..5 {
                let nu = field.a * d.phi[[r, c]] + t;
                sq += (d.omega[[r, c]] - nu).powi(2);
            }
        }
        oracle += sq / (b as f64 * n as f64);
        draws.push(d);
        conds.push(ConditioningBundle::new(&cfg, &codes, vec![], SpeakerVector(vec![]), None, 0).map_err(err)?);
    }
    let refs: Vec<&ConditioningBundle> = conds.iter().collect();
    let loss = cfm_loss_with_draws(&field, &refs, &draws, LossNorm::SquaredL2).map_err(err)?.loss;
    check((loss - oracle).abs() <= 1e-12, format!("loss {loss} vs oracle {oracle}"))?;

    let x = standard_normal(4, 3, &mut rng);
    let exact = x.mapv(|v| v * (-1.0f64).exp());
    let decay = |x: &Mat, _t: f64| -x.clone();
    let e = |n: usize| -> Result<f64, String> {
        let y = euler_integrate(&decay, x.clone(), n).map_err(err)?;
        Ok((y - &exact).iter().fold(0.0f64, |m, v| m.max(v.abs())))
    };
    let (e100, e1000) = (e(100)?, e(1000)?);
    let ratio = e100 / e1000;
    check((10.0 / 1.5..=10.0 * 1.5).contains(&ratio), format!("Euler error ratio {ratio:.3}"))?;
    Ok(format!("fd {fd_worst:.1e}, loss diff {:.1e}, Euler ratio {ratio:.3}", (loss - oracle).abs()))
}

fn c6_gmm() -> Outcome {
    let start = Instant::now();
    let means = [[-1.5, 0.5], [1.5, -0.5]];
    let std = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sample = |rng: &mut ChaCha8Rng, rows: usize| -> Mat {
        let z = standard_normal(rows, 2, rng);
        let mut m = Mat::zeros((rows, 2));
        for r in 0..rows {
            let k = rng.gen_range(0..2);
            m[[r, 0]] = means[k][0] + std * z[[r, 0]];
            m[[r, 1]] = means[k][1] + std * z[[r, 1]];
        }
        m
    };
    let cfg = CFMConfig {
        n_mels: 2,
        cond_width: 64,
        n_blocks: 2,
        code_dim: 2,
        caption_dim: 0,
        speaker_dim: 0,
        time_dim: 16,
        prompt_max_frac: 0.0,
        n_euler_steps: 50,
        seed: 6,
        ..CFMConfig::new(1)
    };
    let fpc = cfg.frames_per_code();
    let codes = SemanticCodes::new(vec![0; 16]);
    let data: Vec<CfmExample> = (0..256)
        .map(|_| CfmExample { mel: sample(&mut rng, 16 * fpc), codes: codes.clone(), caption_embedding: vec![], speaker: SpeakerVector(vec![]) })
        .collect();
    let mut trainer = CfmTrainer::new(FieldNet::new(cfg.clone()).map_err(err)?, AdamConfig { lr: 2e-3, warmup_steps: 100, ..AdamConfig::default() });
    for step in 0..5000 {
        let batch: Vec<CfmExample> = (0..8).map(|i| data[(step * 8 + i) % data.len()].clone()).collect();
        trainer.train_step(&batch).map_err(err)?;
    }
    let big = SemanticCodes::new(vec![0; 500]);
    let cond = ConditioningBundle::new(&cfg, &big, vec![], SpeakerVector(vec![]), None, 0).map_err(err)?;
    let gen = euler_solve(&trainer.net, &cond, cfg.n_euler_steps, 60).map_err(err)?;
    let reference = sample(&mut rng, 20000);
    let component_means = |m: &Mat| -> [[f64; 2]; 2] {
        let mut acc = [[0.0; 2]; 2];
        let mut n = [0usize; 2];
        for row in m.rows() {
            let d = |k: usize| (row[0] - means[k][0]).powi(2) + (row[1] - means[k][1]).powi(2);
            let k = if d(0) <= d(1) { 0 } else { 1 };
            acc[k][0] += row[0];
            acc[k][1] += row[1];
            n[k] += 1;
        }
        [[acc[0][0] / n[0] as f64, acc[0][1] / n[0] as f64], [acc[1][0] / n[1] as f64, acc[1][1] / n[1] as f64]]
    };
    let (g, r) = (component_means(&gen), component_means(&reference));
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let worst = dist(g[0], r[0]).max(dist(g[1], r[1]));
    check(worst.is_finite() && worst <= 0.1, format!("component means {g:?} vs data {r:?} (off by {worst:.3})"))?;
    within_budget(start, Duration::from_secs(5 * 60))?;
    Ok(format!("means off by {worst:.3}, {:.0}s", start.elapsed().as_secs_f64()))
}

fn c7_thresholds() -> Outcome {
    let t = AttributeThresholds::default();
    check(t.pitch == (136.577, 196.098) && t.tempo == (0.252, 0.386) && t.energy == (0.033, 0.0505), format!("{t:?}"))?;
    let sr = 16000;
    let p110 = extract_pitch(&Waveform::sine(110.0, 0.3, 1.0, sr)).map_err(err)?;
    let p220 = extract_pitch(&Waveform::sine(220.0, 0.3, 1.0, sr)).map_err(err)?;
    check(classify_level(p110, t.pitch) == Level::Low, format!("110 Hz measured {p110:.2}"))?;
    check(classify_level(p220, t.pitch) == Level::High, format!("220 Hz measured {p220:.2}"))?;
    let e_sil = extract_energy(&Waveform::silence(1.0, sr)).map_err(err)?;
    let square: Vec<f64> = (0..sr as usize).map(|i| if (i / 40) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let e_sq = extract_energy(&Waveform::new(square, sr)).map_err(err)?;
    let e_sine = extract_energy(&Waveform::sine(200.0, 0.06, 1.0, sr)).map_err(err)?;
    check(classify_level(e_sil, t.energy) == Level::Low, format!("silence energy {e_sil}"))?;
    check(classify_level(e_sq, t.energy) == Level::High, format!("square energy {e_sq}"))?;
    check((e_sine - 0.06 / 2f64.sqrt()).abs() < 1e-3, format!("sine RMS {e_sine}"))?;
    check(classify_level(e_sine, t.energy) == Level::Normal, format!("sine energy {e_sine}"))?;
    Ok(format!("pitch {p110:.1}/{p220:.1} Hz, energy {e_sil:.3}/{e_sine:.4}/{e_sq:.3}"))
}

fn c8_annotation_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    write_toy_corpus(&dir.path().join("raw"), &ToySpec { dialogues: 3, turns: 3, ..ToySpec::default() }).map_err(err)?;
    let run = |out: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(out);
        let s = cmd_annotate(&AnnotateArgs {
            manifest: dir.path().join("raw"),
            out: out.clone(),
            llm: LlmChoice::Mock,
            http: Default::default(),
            seed: 7,
            thresholds: None,
            alignments: None,
            concurrency: 3,
            llm_verify: true,
        })
        .map_err(err)?;
        check(s.records == 9, format!("{} records", s.records))?;
        Ok((std::fs::read(&s.captions).map_err(err)?, std::fs::read(&s.manifest).map_err(err)?))
    };
    let (a, b) = (run("a")?, run("b")?);
    check(a == b, "outputs differ between runs")?;
    Ok(format!("{} caption bytes identical", a.0.len()))
}

fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, cost: f64, len: usize, best: &mut (f64, usize)) {
        let cost = cost + (a[i] - b[j]).abs();
        let len = len + 1;
        if i + 1 == a.len() && j + 1 == b.len() {
            if cost < best.0 || (cost == best.0 && len < best.1) {
                *best = (cost, len);
            }
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, cost, len, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, cost, len, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, cost, len, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(a, b, 0, 0, 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

fn c9_dtw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(50.0..300.0)).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(50.0..300.0)).collect();
        let d = dtw_distance(&a, &b).map_err(err)?;
        worst = worst.max((d - brute_dtw(&a, &b)).abs());
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("200 trials, max deviation {worst:.1e}"))
}

fn c10_distinct() -> Outcome {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let d1 = distinct_n(&s(&["a b a"]), 1).map_err(err)?;
    let d2 = distinct_n(&s(&["a b", "a b"]), 2).map_err(err)?;
    check((d1 - 2.0 / 3.0).abs() < 1e-12, format!("dis1 {d1}"))?;
    check((d2 - 0.5).abs() < 1e-12, format!("dis2 {d2}"))?;
    let corpus = s(&["the cat sat", "a dog ran far", "the dog sat", "cat cat cat"]);
    let mut rev = corpus.clone();
    rev.reverse();
    let mut rot = corpus.clone();
    rot.rotate_left(1);
    for n in 1..=3 {
        let base = distinct_n(&corpus, n).map_err(err)?;
        for p in [&rev, &rot] {
            check(distinct_n(p, n).map_err(err)? == base, format!("distinct-{n} changes under permutation"))?;
        }
    }
    Ok(format!("dis1 {d1:.4}, dis2 {d2:.2}, permutation invariant"))
}

fn smoke_config(dir: &Path, manifest: &Path, extra: &[String]) -> Result<RunConfig, String> {
    let mut o = vec![
        format!("paths.manifest={:?}", manifest.display().to_string()),
        format!("paths.workdir={:?}", dir.join("run").display().to_string()),
        "train.log_every=50".into(),
    ];
    o.extend_from_slice(extra);
    RunConfig::resolve(None, &o).map_err(err)
}

fn c11_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let manifest = annotated_toy(dir.path(), &ToySpec::default())?;
    let s1cfg = smoke_config(dir.path(), &manifest, &["train.stage=1".into(), "train.steps=200".into()])?;
    let s1 = cmd_train_emgpt(&s1cfg, &TrainArgs::default()).map_err(err)?;
    let s2cfg = smoke_config(dir.path(), &manifest, &["train.stage=2".into(), "train.steps=500".into()])?;
    let s2 = cmd_train_emgpt(&s2cfg, &TrainArgs { init: Some(s1.checkpoint.clone()), ..TrainArgs::default() }).map_err(err)?;
    let ccfg = smoke_config(dir.path(), &manifest, &["cfm.steps=500".into()])?;
    let cfm = cmd_train_cfm(&ccfg, &TrainArgs::default()).map_err(err)?;
    check(s1.step == 200 && s2.step == 500 && cfm.step == 500, "step counts")?;
    let out = dir.path().join("synth");
    let syn = cmd_synth(
        &s2cfg,
        &SynthArgs {
            session: "toy007".into(),
            turn: 3,
            emgpt: s2.checkpoint.clone(),
            cfm: Some(cfm.checkpoint.clone()),
            n_turns: None,
            out: out.clone(),
            wav: true,
        },
    )
    .map_err(err)?;
    check(!syn.caption.trim().is_empty(), "empty caption")?;
    check(!syn.codes.is_empty(), "no codes")?;
    check(syn.mel_shape == Some((syn.codes.len() * 4, 80)), format!("mel shape {:?} for {} codes", syn.mel_shape, syn.codes.len()))?;
    let mel = convsynth::codec::load_mel(&out.join("mel.bin")).map_err(err)?;
    check(mel.frames.dim() == (syn.codes.len() * 4, 80), "saved mel shape")?;
    let sessions = load_corpus(&manifest).map_err(err)?;
    let reference = sessions.iter().find(|s| s.session_id == "toy007").unwrap().turns[3].audio_path.clone().unwrap();
    std::fs::write(dir.path().join("pairs.tsv"), format!("{}\t{}\n", reference.display(), out.join("synth.wav").display())).map_err(err)?;
    std::fs::write(dir.path().join("captions.txt"), format!("{}\n", syn.caption)).map_err(err)?;
    let report = cmd_eval(&EvalArgs {
        pairs: Some(dir.path().join("pairs.tsv")),
        captions: Some(dir.path().join("captions.txt")),
        checkpoint: Some(s2.checkpoint.clone()),
        out: dir.path().join("eval"),
        ..EvalArgs::default()
    })
    .map_err(err)?;
    let json: MetricReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/metrics.json")).map_err(err)?).map_err(err)?;
    check(json == report, "metrics.json differs from the returned report")?;
    check(report.config_hash.as_deref() == Some(s2.config_hash.as_str()), "report lacks the checkpoint config hash")?;
    within_budget(start, Duration::from_secs(30 * 60))?;
    Ok(format!("caption {:?}, {} codes, ddtw {:?}, {:.0}s", syn.caption, syn.codes.len(), report.ddtw, start.elapsed().as_secs_f64()))
}

fn start_event(log: &Path) -> Result<(Vec<String>, serde_json::Value), String> {
    for e in ExperimentLog::read(log).map_err(err)? {
        if let LogEvent::Start { tags, config, .. } = e {
            return Ok((tags, config));
        }
    }
    Err(format!("{}: no start event", log.display()))
}

fn c12_ablations() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let manifest = annotated_toy(dir.path(), &ToySpec { dialogues: 4, turns: 4, ..ToySpec::default() })?;
    let cfg = |extra: &[&str]| {
        let mut o: Vec<String> = vec!["train.stage=2".into(), "train.steps=3".into(), "train.save_every=0".into()];
        o.extend(extra.iter().map(|s| s.to_string()));
        smoke_config(dir.path(), &manifest, &o)
    };

    let full = training_targets(&cfg(&[])?).map_err(err)?;
    check(full.iter().any(|(m, _)| m.history_turns > 0), "baseline has no context")?;
    let no_ctx_cfg = cfg(&["train.no_context=true"])?;
    let no_ctx = training_targets(&no_ctx_cfg).map_err(err)?;
    check(no_ctx.iter().all(|(m, t)| m.history_turns == 0 && t.speaker_slots.len() == 1), "w/o context: history not empty")?;
    let s = cmd_train_emgpt(&no_ctx_cfg, &TrainArgs { from_scratch: true, ..TrainArgs::default() }).map_err(err)?;
    check(start_event(&s.log)?.0.contains(&"w/o context".to_string()), "w/o context tag missing from log")?;

    let no_cap_cfg = cfg(&["train.no_captions=true"])?;
    let no_cap = training_targets(&no_cap_cfg).map_err(err)?;
    check(no_cap.iter().all(|(_, t)| t.caption_count() == 1), "w/o captions: caption span not empty")?;
    let s = cmd_train_emgpt(&no_cap_cfg, &TrainArgs { from_scratch: true, ..TrainArgs::default() }).map_err(err)?;
    check(start_event(&s.log)?.0.contains(&"w/o captions".to_string()), "w/o captions tag missing from log")?;
    let syn = cmd_synth(
        &no_cap_cfg,
        &SynthArgs { session: "toy000".into(), turn: 3, emgpt: s.checkpoint, cfm: None, n_turns: None, out: dir.path().join("s"), wav: false },
    )
    .map_err(err)?;
    check(syn.caption.is_empty() && syn.caption_stop == convsynth::emgpt::StopReason::Skipped, "w/o captions: caption phase ran")?;

    let no_lc_cfg = cfg(&["train.caption_loss_weight=0.0"])?;
    let s = cmd_train_emgpt(&no_lc_cfg, &TrainArgs { from_scratch: true, ..TrainArgs::default() }).map_err(err)?;
    let (tags, config) = start_event(&s.log)?;
    check(tags.contains(&"w/o L^caption".to_string()), "w/o L^caption tag missing from log")?;
    check(config["train"]["caption_loss_weight"].as_f64() == Some(0.0), "logged caption weight not zero")?;
    let targets: Vec<TrainingTarget> = training_targets(&no_lc_cfg).map_err(err)?.into_iter().map(|(_, t)| t).take(4).collect();
    let (model, _) = convsynth::emgpt::load_checkpoint(&s.checkpoint).map_err(err)?;
    let (parts, objective, _) = loss_and_grads(&model, &targets, 0.0, None).map_err(err)?;
    check(parts.caption > 0.0 && (objective - parts.speech).abs() < 1e-12, "zero caption weight still trains on L_caption")?;
    Ok(format!("{} / {} / {} examples; objective = L_speech", full.len(), no_ctx.len(), no_cap.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("tokenization structure", c1_tokenization),
        ("loss correctness", c2_loss),
        ("chain overfit", c3_overfit),
        ("gradient checks", c4_gradients),
        ("OT-CFM analytics", c5_flow_analytics),
        ("CFM on 2-D GMM", c6_gmm),
        ("attribute thresholds", c7_thresholds),
        ("annotation determinism", c8_annotation_determinism),
        ("DTW oracle", c9_dtw),
        ("distinct-n", c10_distinct),
        ("end-to-end smoke", c11_end_to_end),
        ("ablation plumbing", c12_ablations),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({e}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
