use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use convsynth::cfm::{ot_flow, target_field};
use convsynth::codec::{kmeans, SemanticCodes, SpeakerVector};
use convsynth::context::{build_sequence, build_training_target, parse_sequence, TokenClass, TurnTokens, VocabSpec};
use convsynth::corpus::{split_corpus, DialogueSession, Role, SplitSpec, Utterance};
use convsynth::emgpt::{sample_token, SamplingConfig};
use convsynth::metrics::{distinct_n, dtw_distance};
use convsynth::nn::Mat;

const BPE: u32 = 40;
const CODES: u32 = 16;

fn turn(text: Vec<u32>, codes: Option<Vec<u32>>, caption: Option<Vec<u32>>) -> TurnTokens {
    TurnTokens { speaker: SpeakerVector::zeros(), text, codes: codes.map(SemanticCodes::new), caption }
}

fn text() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..BPE, 1..6)
}

fn codes() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..CODES, 1..8)
}

fn history() -> impl Strategy<Value = Vec<TurnTokens>> {
    prop::collection::vec((text(), codes(), prop::collection::vec(0..BPE, 0..5)), 0..4)
        .prop_map(|v| v.into_iter().map(|(t, c, cap)| turn(t, Some(c), Some(cap))).collect())
}

fn session(id: usize) -> DialogueSession {
    DialogueSession {
        session_id: format!("s{id:03}"),
        turns: vec![Utterance::new("u", Role::User, "hi"), Utterance::new("a", Role::Agent, "hello")],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn framing_parses_back_and_masks_cover_targets(
        hist in history(),
        target_text in text(),
        caption in prop::collection::vec(0..BPE, 0..6),
        target_codes in codes(),
    ) {
        let vocab = VocabSpec::new(BPE, CODES);
        let t = turn(target_text, None, None);
        let seq = build_sequence(&hist, &t, &vocab, Some(&SemanticCodes::new(target_codes.clone())), Some(&caption)).unwrap();
        prop_assert_eq!(&parse_sequence(&seq.ids, &vocab).unwrap(), &seq.layout);
        prop_assert_eq!(seq.speakers.len(), hist.len() + 1);
        prop_assert_eq!(seq.ids[0], vocab.bos);
        prop_assert_eq!(*seq.ids.last().unwrap(), vocab.eos);

        let tt = build_training_target(&seq).unwrap();
        prop_assert_eq!(tt.caption_count(), caption.len() + 1);
        prop_assert_eq!(tt.speech_count(), target_codes.len() + 1);
        for p in 0..tt.target.len() {
            prop_assert!(!(tt.caption_mask[p] && tt.speech_mask[p]));
            if tt.target[p] == vocab.eos {
                prop_assert!(!tt.caption_mask[p] && !tt.speech_mask[p]);
            }
            if tt.speech_mask[p] {
                prop_assert!(matches!(vocab.classify(tt.target[p]), TokenClass::Code(_)) || tt.target[p] == vocab.end_of_codes);
            }
            if tt.caption_mask[p] {
                prop_assert!(matches!(vocab.classify(tt.target[p]), TokenClass::Text(_)) || tt.target[p] == vocab.spe);
            }
        }
        prop_assert_eq!(&tt.input[1..], &tt.target[..tt.target.len() - 1]);
    }

    #[test]
    fn split_partitions_sessions(n in 3usize..40, seed in any::<u64>(), a in 0.1f64..0.8) {
        let b = (1.0 - a) / 2.0;
        let spec = SplitSpec { ratios: [a, b, 1.0 - a - b], seed };
        let sessions: Vec<_> = (0..n).map(session).collect();
        let split = split_corpus(&sessions, &spec).unwrap();
        let mut ids: Vec<String> = split.train.iter().chain(&split.valid).chain(&split.test).map(|s| s.session_id.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(split_corpus(&sessions, &spec).unwrap(), split);
    }

    #[test]
    fn sampling_stays_in_top_k_and_allowed(
        logits in prop::collection::vec(-5.0f64..5.0, 2..30),
        banned in prop::collection::vec(any::<bool>(), 30),
        k in 1usize..6,
        seed in any::<u64>(),
        recent in prop::collection::vec(0u32..30, 0..12),
    ) {
        let masked: Vec<f64> = logits.iter().zip(&banned).map(|(&l, &b)| if b { f64::NEG_INFINITY } else { l }).collect();
        prop_assume!(masked.iter().any(|l| l.is_finite()));
        let cfg = SamplingConfig { top_k: k, seed, ..SamplingConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = sample_token(&masked, &recent, &cfg, &mut rng) as usize;
        prop_assert!(masked[id].is_finite());
        let better = masked.iter().filter(|&&l| l > masked[id]).count();
        prop_assert!(better < k, "token ranked {} with top_k {}", better + 1, k);
    }

    #[test]
    fn ot_path_endpoints_and_derivative(vals in prop::collection::vec(-3.0f64..3.0, 12), t in 0.0f64..1.0) {
        let sigma = 1e-3;
        let x0 = Mat::from_shape_vec((2, 3), vals[..6].to_vec()).unwrap();
        let x1 = Mat::from_shape_vec((2, 3), vals[6..].to_vec()).unwrap();
        prop_assert_eq!(ot_flow(&x0, &x1, 0.0, sigma).unwrap(), x0.clone());
        let end = ot_flow(&x0, &x1, 1.0, sigma).unwrap();
        prop_assert!((&end - &(&x1 + &(&x0 * sigma))).iter().all(|d| d.abs() < 1e-12));
        let h = 1e-6;
        let t = t.min(1.0 - h);
        let fd = (ot_flow(&x0, &x1, t + h, sigma).unwrap() - ot_flow(&x0, &x1, t, sigma).unwrap()) / h;
        prop_assert!((&fd - &target_field(&x0, &x1, sigma).unwrap()).iter().all(|d| d.abs() < 1e-6));
    }

    #[test]
    fn kmeans_assigns_nearest_centroid(vals in prop::collection::vec(-2.0f64..2.0, 40), k in 1usize..5, seed in any::<u64>()) {
        let data = Mat::from_shape_vec((20, 2), vals).unwrap();
        let (book, report) = kmeans(&data, k, seed, 50).unwrap();
        prop_assert!(report.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let codes = book.encode_features(&data).unwrap();
        for (row, &c) in data.rows().into_iter().zip(&codes.codes) {
            let d = |j: usize| book.centroids.row(j).iter().zip(row.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            prop_assert!((0..book.k()).all(|j| d(c as usize) <= d(j) + 1e-12));
        }
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in prop::collection::vec(50.0f64..300.0, 1..20), b in prop::collection::vec(50.0f64..300.0, 1..20)) {
        let ab = dtw_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dtw_distance(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distinct_n_is_a_permutation_invariant_ratio(words in prop::collection::vec(prop::collection::vec("[a-d]{1,3}", 2..6), 1..6), n in 1usize..3) {
        let caps: Vec<String> = words.iter().map(|w| w.join(" ")).collect();
        let d = distinct_n(&caps, n).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0);
        let rev: Vec<String> = caps.iter().rev().cloned().collect();
        prop_assert_eq!(distinct_n(&rev, n).unwrap(), d);
    }
}
