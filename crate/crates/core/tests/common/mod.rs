#![allow(dead_code)]

use hkd_core::corpus::{encode, generate_synthetic, EncodedDialogue, LabelSet, SyntheticSpec, Vocabulary};
use hkd_core::ModelConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny(vocab: usize, labels: usize) -> ModelConfig {
    ModelConfig::with_shape(1, 2, 8, 2, 12, 6, vocab, labels)
}

pub fn random_dialogue(rng: &mut ChaCha8Rng, id: usize, vocab: usize, labels: usize, max_t: usize) -> EncodedDialogue {
    let t = rng.random_range(1..=max_t);
    EncodedDialogue {
        id: format!("d{id}"),
        utterances: (0..t).map(|_| random_utterance(rng, vocab)).collect(),
        labels: (0..t).map(|_| rng.random_range(0..labels)).collect(),
    }
}

pub fn random_utterance(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<usize> {
    (0..rng.random_range(1..=5)).map(|_| rng.random_range(1..vocab)).collect()
}

pub fn random_dialogues(rng: &mut ChaCha8Rng, n: usize, vocab: usize, labels: usize, max_t: usize) -> Vec<EncodedDialogue> {
    (0..n).map(|i| random_dialogue(rng, i, vocab, labels, max_t)).collect()
}

/// Small synthetic corpus, encoded with a vocabulary built from it.
pub fn synthetic(dialogues: usize, seed: u64) -> (Vec<EncodedDialogue>, Vocabulary, LabelSet) {
    let spec = SyntheticSpec {
        dialogues,
        min_utterances: 6,
        max_utterances: 10,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let labels = LabelSet::new((0..spec.labels).map(|l| spec.label_name(l)).collect()).unwrap();
    let vocab = Vocabulary::build(&ds);
    (encode(&ds, &vocab, &labels).unwrap(), vocab, labels)
}
