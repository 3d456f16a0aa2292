//! Trains a small caption-then-codes model on three synthetic turns until it
//! memorizes them, then decodes each prompt greedily.
//!
//! cargo run --release --example emgpt_chain

use convsynth::codec::{SemanticCodes, SpeakerVector};
use convsynth::context::{build_sequence, build_training_target, TurnTokens, VocabSpec};
use convsynth::emgpt::{generate_chain, teacher_forcing_accuracy, EmGPT, EmGPTConfig, SamplingConfig, Trainer};
use convsynth::nn::AdamConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = VocabSpec::new(24, 12);
    let speaker = |k: f64| SpeakerVector::from_raw((0..8).map(|i| ((i + 1) as f64 * k).cos()).collect());
    let turns = [
        (vec![1, 2, 3], vec![10, 11], vec![0, 1, 2, 3]),
        (vec![4, 5], vec![12, 13, 14], vec![7, 7, 6]),
        (vec![6, 7, 8], vec![15], vec![11, 2, 9, 9, 4]),
    ];
    let mut targets = Vec::new();
    let mut prompts = Vec::new();
    for (i, (text, caption, codes)) in turns.iter().enumerate() {
        let t = TurnTokens { speaker: speaker(i as f64 + 0.5), text: text.clone(), codes: None, caption: None };
        let seq = build_sequence(&[], &t, &vocab, Some(&SemanticCodes::new(codes.clone())), Some(caption))?;
        targets.push(build_training_target(&seq)?);
        prompts.push(build_sequence(&[], &t, &vocab, None, None)?);
    }
    let cfg = EmGPTConfig { model_dim: 32, max_seq_len: 32, dropout_rate: 0.0, speaker_dim: 8, ..EmGPTConfig::toy(vocab) };
    let mut trainer = Trainer::new(EmGPT::new(cfg)?, AdamConfig { lr: 3e-3, warmup_steps: 10, ..AdamConfig::default() });
    while trainer.step() < 1000 {
        let r = trainer.train_step(&targets)?;
        if r.step % 50 == 0 {
            let acc = teacher_forcing_accuracy(&trainer.model, &targets)?;
            println!("step {:4}  L_caption {:.4}  L_speech {:.4}  accuracy {acc:.3}", r.step, r.l_caption, r.l_speech);
            if acc >= 1.0 {
                break;
            }
        }
    }
    for (p, (_, caption, codes)) in prompts.iter().zip(&turns) {
        let out = generate_chain(&trainer.model, p, &SamplingConfig::greedy(), 16, 16, false)?;
        println!("caption {:?} (want {caption:?}), codes {:?} (want {codes:?})", out.caption_ids, out.code_ids.codes);
    }
    Ok(())
}
