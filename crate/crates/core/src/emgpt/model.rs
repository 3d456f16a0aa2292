use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmgptError;
use crate::codec::{SpeakerVector, SPEAKER_DIM};
use crate::context::{TokenSequence, TrainingTarget, VocabSpec};
use crate::nn::{Mat, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmGPTConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    /// Hidden width of the feed-forward block as a multiple of `model_dim`.
    pub ffn_mult: usize,
    pub speaker_dim: usize,
    pub vocab: VocabSpec,
    pub seed: u64,
}

impl EmGPTConfig {
    pub fn toy(vocab: VocabSpec) -> Self {
        Self {
            n_layers: 2,
            model_dim: 128,
            n_heads: 4,
            max_seq_len: 512,
            dropout_rate: 0.1,
            ffn_mult: 4,
            speaker_dim: SPEAKER_DIM,
            vocab,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EmgptError> {
        let bad = |m: String| Err(EmgptError::Config(m));
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return bad(format!("model_dim {} not divisible by n_heads {}", self.model_dim, self.n_heads));
        }
        if self.n_layers == 0 || self.max_seq_len == 0 || self.ffn_mult == 0 {
            return bad("n_layers, max_seq_len and ffn_mult must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        self.vocab.validate().map_err(|e| EmgptError::Config(e.to_string()))
    }
}

struct Layer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Model input: ids plus the speaker vectors attached to each speaker slot.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub ids: &'a [u32],
    pub speaker_slots: &'a [usize],
    pub speakers: &'a [SpeakerVector],
}

impl<'a> ModelInput<'a> {
    pub fn from_sequence(seq: &'a TokenSequence, slots: &'a [usize]) -> Self {
        Self { ids: &seq.ids, speaker_slots: slots, speakers: &seq.speakers }
    }

    pub fn from_target(t: &'a TrainingTarget) -> Self {
        Self { ids: &t.input, speaker_slots: &t.speaker_slots, speakers: &t.speakers }
    }
}

/// Pre-norm decoder-only transformer over the unified vocabulary.
pub struct EmGPT {
    pub config: EmGPTConfig,
    pub store: ParamStore,
    tok_emb: ParamId,
    pos_emb: ParamId,
    spk_proj: ParamId,
    layers: Vec<Layer>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head: ParamId,
    head_b: ParamId,
}

const INIT_STD: f64 = 0.02;

impl EmGPT {
    pub fn new(config: EmGPTConfig) -> Result<Self, EmgptError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut s = ParamStore::default();
        let (d, v, h) = (config.model_dim, config.vocab.size(), config.model_dim * config.ffn_mult);
        let out_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let tok_emb = s.add_normal("tok_emb", (v, d), INIT_STD, &mut rng);
        let pos_emb = s.add_normal("pos_emb", (config.max_seq_len, d), INIT_STD, &mut rng);
        let spk_proj = s.add_normal("spk_proj", (config.speaker_dim, d), INIT_STD, &mut rng);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let n = |p: &str| format!("layer{l}.{p}");
            layers.push(Layer {
                ln1_g: s.add_ones(&n("ln1_g"), (1, d)),
                ln1_b: s.add_zeros(&n("ln1_b"), (1, d)),
                wq: s.add_normal(&n("wq"), (d, d), INIT_STD, &mut rng),
                wk: s.add_normal(&n("wk"), (d, d), INIT_STD, &mut rng),
                wv: s.add_normal(&n("wv"), (d, d), INIT_STD, &mut rng),
                wo: s.add_normal(&n("wo"), (d, d), out_std, &mut rng),
                ln2_g: s.add_ones(&n("ln2_g"), (1, d)),
                ln2_b: s.add_zeros(&n("ln2_b"), (1, d)),
                w1: s.add_normal(&n("w1"), (d, h), INIT_STD, &mut rng),
                b1: s.add_zeros(&n("b1"), (1, h)),
                w2: s.add_normal(&n("w2"), (h, d), out_std, &mut rng),
                b2: s.add_zeros(&n("b2"), (1, d)),
            });
        }
        let lnf_g = s.add_ones("lnf_g", (1, d));
        let lnf_b = s.add_zeros("lnf_b", (1, d));
        let head = s.add_normal("head", (d, v), INIT_STD, &mut rng);
        let head_b = s.add_zeros("head_b", (1, v));
        Ok(Self { config, store: s, tok_emb, pos_emb, spk_proj, layers, lnf_g, lnf_b, head, head_b })
    }

    pub fn vocab(&self) -> &VocabSpec {
        &self.config.vocab
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<(), EmgptError> {
        let n = input.ids.len();
        if n == 0 {
            return Err(EmgptError::Input("empty input".into()));
        }
        if n > self.config.max_seq_len {
            return Err(EmgptError::Overlength { len: n, max: self.config.max_seq_len });
        }
        let v = self.config.vocab.size() as u32;
        if let Some(&bad) = input.ids.iter().find(|&&id| id >= v) {
            return Err(EmgptError::Input(format!("token id {bad} outside vocabulary of {v}")));
        }
        if input.speaker_slots.len() != input.speakers.len() {
            return Err(EmgptError::Input(format!(
                "{} speaker slots but {} speaker vectors",
                input.speaker_slots.len(),
                input.speakers.len()
            )));
        }
        for (slot, spk) in input.speaker_slots.iter().zip(input.speakers) {
            if *slot >= n {
                return Err(EmgptError::Input(format!("speaker slot {slot} beyond input length {n}")));
            }
            if spk.dim() != self.config.speaker_dim {
                return Err(EmgptError::Input(format!("speaker vector of dim {}, expected {}", spk.dim(), self.config.speaker_dim)));
            }
        }
        Ok(())
    }

    fn dropout<R: Rng>(&self, tape: &mut Tape, x: Var, rng: &mut Option<&mut R>) -> Var {
        let p = self.config.dropout_rate;
        match rng {
            Some(rng) if p > 0.0 => {
                let shape = tape.value(x).raw_dim();
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { 0.0 } else { keep });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => x,
        }
    }

    fn norm(&self, tape: &mut Tape, x: Var, g: ParamId, b: ParamId) -> Var {
        let n = tape.layer_norm(x);
        let g = tape.param(g);
        let b = tape.param(b);
        let n = tape.mul_row(n, g);
        tape.add_row(n, b)
    }

    /// Records the forward pass and returns `[len x vocab]` logits. Dropout is
    /// active only when `rng` is supplied.
    pub fn forward<R: Rng>(&self, tape: &mut Tape, input: &ModelInput, mut rng: Option<&mut R>) -> Result<Var, EmgptError> {
        self.check_input(input)?;
        let n = input.ids.len();
        let d = self.config.model_dim;
        let tok = tape.param(self.tok_emb);
        let mut x = tape.gather(tok, input.ids.iter().map(|&i| i as usize).collect());
        let pos = tape.param(self.pos_emb);
        let p = tape.gather(pos, (0..n).collect());
        x = tape.add(x, p);
        if !input.speakers.is_empty() {
            let mut spk = Mat::zeros((input.speakers.len(), self.config.speaker_dim));
            for (r, s) in input.speakers.iter().enumerate() {
                for (c, v) in s.0.iter().enumerate() {
                    spk[[r, c]] = *v;
                }
            }
            let spk = tape.constant(spk);
            let proj = tape.param(self.spk_proj);
            let e = tape.matmul(spk, proj);
            x = tape.scatter_add_rows(x, e, input.speaker_slots.to_vec());
        }
        x = self.dropout(tape, x, &mut rng);

        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let h = self.norm(tape, x, layer.ln1_g, layer.ln1_b);
            let (wq, wk, wv) = (tape.param(layer.wq), tape.param(layer.wk), tape.param(layer.wv));
            let q = tape.matmul(h, wq);
            let k = tape.matmul(h, wk);
            let v = tape.matmul(h, wv);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * dh, dh);
                let kh = tape.slice_cols(k, hd * dh, dh);
                let vh = tape.slice_cols(v, hd * dh, dh);
                let scores = tape.matmul_nt(qh, kh);
                let att = tape.causal_softmax(scores, scale);
                outs.push(tape.matmul(att, vh));
            }
            let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
            let wo = tape.param(layer.wo);
            let a = tape.matmul(cat, wo);
            let a = self.dropout(tape, a, &mut rng);
            x = tape.add(x, a);

            let h = self.norm(tape, x, layer.ln2_g, layer.ln2_b);
            let (w1, b1, w2, b2) = (tape.param(layer.w1), tape.param(layer.b1), tape.param(layer.w2), tape.param(layer.b2));
            let f = tape.matmul(h, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, b2);
            let f = self.dropout(tape, f, &mut rng);
            x = tape.add(x, f);
        }
        let h = self.norm(tape, x, self.lnf_g, self.lnf_b);
        let (head, head_b) = (tape.param(self.head), tape.param(self.head_b));
        let logits = tape.matmul(h, head);
        Ok(tape.add_row(logits, head_b))
    }

    /// Eval-mode logits, `[len x vocab]`.
    pub fn logits(&self, input: &ModelInput) -> Result<Mat, EmgptError> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward::<ChaCha8Rng>(&mut tape, input, None)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode logits for the position after the last input token.
    pub fn next_logits(&self, input: &ModelInput) -> Result<Vec<f64>, EmgptError> {
        let l = self.logits(input)?;
        Ok(l.row(l.nrows() - 1).to_vec())
    }
}
