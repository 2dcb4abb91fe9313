//! Whole-model properties: online causality, batching and precision.

mod common;

use common::{random_dialogues, random_utterance, synthetic, tiny};
use hkd_core::corpus::Batch;
use hkd_core::trainer::{batch_loss, evaluate_accuracy, TeacherSource};
use hkd_core::{Labeler, LossWeights, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn earlier_steps_ignore_later_utterances(seed in any::<u64>(), cut in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Labeler::<f32>::new(tiny(20, 4), seed).unwrap();
        let base: Vec<Vec<usize>> = (0..6).map(|_| random_utterance(&mut rng, 20)).collect();
        let mut mutated = base[..=cut].to_vec();
        let extra = rng.random_range(0..5);
        mutated.extend((0..extra).map(|_| random_utterance(&mut rng, 20)));

        let a = model.forward_dialogue(&base).unwrap();
        let b = model.forward_dialogue(&mutated).unwrap();
        for t in 0..=cut {
            prop_assert_eq!(&a.utterance[t], &b.utterance[t]);
            prop_assert_eq!(&a.context[t], &b.context[t]);
            prop_assert_eq!(&a.logits[t], &b.logits[t]);
            prop_assert_eq!(&a.probs[t], &b.probs[t]);
        }
        prop_assert_eq!(&model.predict(&base).unwrap()[..=cut], &model.predict(&mutated).unwrap()[..=cut]);
    }

    #[test]
    fn batch_members_match_their_single_traces(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Labeler::<f64>::new(tiny(15, 3), seed).unwrap();
        let ds = random_dialogues(&mut rng, 4, 15, 3, 6);
        let batch = Batch::from_dialogues(&ds, (0..ds.len()).collect());
        for (tr, d) in model.traces(&batch).unwrap().iter().zip(&ds) {
            let single = model.forward_dialogue(&d.utterances).unwrap();
            prop_assert_eq!(&tr.probs, &single.probs);
            prop_assert_eq!(&tr.context, &single.context);
        }
    }
}

fn full_weights() -> LossWeights {
    LossWeights::default()
}

#[test]
fn batched_loss_equals_mean_of_unbatched_losses() {
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
        let student = Labeler::<f64>::new(tiny(18, 4), case).unwrap();
        let mut teacher_cfg = tiny(18, 4);
        teacher_cfg.utterance_layers = 2;
        teacher_cfg.dialogue_layers = 3;
        let teacher = Labeler::<f64>::new(teacher_cfg, 1000 + case).unwrap();
        let src = TeacherSource::new(&teacher);
        let n = rng.random_range(2..6);
        let ds = random_dialogues(&mut rng, n, 18, 4, 7);

        let batch = Batch::from_dialogues(&ds, (0..n).collect());
        let batched = batch_loss(&student, &batch, &full_weights(), Some(&src)).unwrap();
        let mut mean = [0.0; 5];
        for i in 0..n {
            let one = Batch::from_dialogues(&ds, vec![i]);
            let b = batch_loss(&student, &one, &full_weights(), Some(&src)).unwrap();
            for (m, v) in mean.iter_mut().zip([b.ht, b.st, b.uc, b.dc, b.combined]) {
                *m += v / n as f64;
            }
        }
        let got = [batched.ht, batched.st, batched.uc, batched.dc, batched.combined];
        for (g, m) in got.iter().zip(mean) {
            assert!((g - m).abs() <= 1e-5, "case {case}: batched {g} vs unbatched {m}");
        }
    }
}

#[test]
fn batched_loss_is_padding_invariant_at_single_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = Labeler::<f32>::new(tiny(18, 4), 2).unwrap();
    let ds = random_dialogues(&mut rng, 5, 18, 4, 9);
    let batch = Batch::from_dialogues(&ds, (0..5).collect());
    let batched = batch_loss(&model, &batch, &LossWeights::hard_only(), None).unwrap().combined;
    let mean: f64 = (0..5)
        .map(|i| batch_loss(&model, &Batch::from_dialogues(&ds, vec![i]), &LossWeights::hard_only(), None).unwrap().combined)
        .sum::<f64>()
        / 5.0;
    assert!((batched - mean).abs() <= 1e-5, "{batched} vs {mean}");
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = random_dialogues(&mut rng, 3, 12, 3, 5);
    let batch = Batch::from_dialogues(&ds, vec![0, 1, 2]);
    let a = Labeler::<f32>::new(tiny(12, 3), 5).unwrap().traces(&batch).unwrap();
    let b = Labeler::<f32>::new(tiny(12, 3), 5).unwrap().traces(&batch).unwrap();
    assert_eq!(a, b);
}

#[test]
fn self_distillation_starts_at_teacher_entropy() {
    let tau = 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = ModelConfig::with_shape(2, 2, 8, 2, 16, 6, 20, 4);
    let teacher = Labeler::<f64>::new(cfg, 4).unwrap();
    let student = teacher.clone();
    let ds = random_dialogues(&mut rng, 4, 20, 4, 6);
    let batch = Batch::from_dialogues(&ds, (0..4).collect());
    let src = TeacherSource::new(&teacher);
    let b = batch_loss(&student, &batch, &full_weights(), Some(&src)).unwrap();

    // nested mean of tau^2 * entropy of the softened teacher rows
    let mut want = 0.0;
    for tr in teacher.traces(&batch).unwrap() {
        let mut per = 0.0;
        for row in &tr.logits {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|z| ((z - m) / tau).exp()).collect();
            let s: f64 = e.iter().sum();
            per -= e.iter().map(|v| v / s * (v / s).ln()).sum::<f64>();
        }
        want += per / tr.len() as f64;
    }
    want *= tau * tau / 4.0;
    assert!(b.uc.abs() <= 1e-10 && b.dc.abs() <= 1e-10, "uc {} dc {}", b.uc, b.dc);
    assert!(((b.st - want) / want).abs() <= 1e-6, "st {} vs entropy {want}", b.st);
}

#[test]
fn untrained_model_is_at_chance() {
    let (ds, vocab, labels) = synthetic(60, 5);
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            let m = Labeler::<f32>::new(ModelConfig::desk_s1(vocab.len(), labels.len()), seed).unwrap();
            evaluate_accuracy(&m, &ds).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 20.0).abs() <= 5.0, "mean {mean} from {accs:?}");
}

#[test]
fn precisions_agree_closely() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = random_dialogues(&mut rng, 3, 12, 3, 5);
    let batch = Batch::from_dialogues(&ds, vec![0, 1, 2]);
    let hi = Labeler::<f64>::new(tiny(12, 3), 1).unwrap();
    let lo: Labeler<f32> = hi.cast();
    for (a, b) in hi.traces(&batch).unwrap().iter().zip(lo.traces(&batch).unwrap()) {
        for (ra, rb) in a.probs.iter().zip(&b.probs) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - *y as f64).abs() < 1e-5);
            }
        }
    }
}
