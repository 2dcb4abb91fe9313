//! Checkpoint and corpus files.

mod common;

use std::fs;

use common::tiny;
use hkd_autodiff::Tensor;
use hkd_core::checkpoint::{read_tensors, sidecar_path, write_tensors};
use hkd_core::corpus::{load_corpus, load_labels, load_vocab, save_corpus, save_labels, save_vocab, Dialogue, LabelSet, Utterance, Vocabulary};
use hkd_core::{Checkpoint, HkdError, Labeler, TrainingMeta};
use proptest::prelude::*;

fn checkpoint(seed: u64) -> Checkpoint<f32> {
    let vocab = Vocabulary::new((0..8).map(|i| format!("w{i}")).collect()).unwrap();
    let labels = LabelSet::new(vec!["open".into(), "ask".into(), "close".into()]).unwrap();
    Checkpoint {
        model: Labeler::new(tiny(vocab.len(), labels.len()), seed).unwrap(),
        vocab,
        labels,
        training: TrainingMeta {
            seed,
            epoch: 4,
            valid_accuracy: 87.5,
            precision: "f32".into(),
        },
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ckpt = checkpoint(3);
    ckpt.save(&a).unwrap();
    let loaded = Checkpoint::<f32>::load(&a).unwrap();
    assert_eq!(loaded.model.params(), ckpt.model.params());
    assert_eq!(loaded.training, ckpt.training);
    assert_eq!(loaded.labels, ckpt.labels);
    loaded.save(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(sidecar_path(&a)).unwrap(), fs::read(sidecar_path(&b)).unwrap());
    assert_eq!(sidecar_path(&a), dir.path().join("a.json"));
}

#[test]
fn wide_models_are_stored_at_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let narrow = checkpoint(5);
    let wide = Checkpoint {
        model: narrow.model.cast::<f64>(),
        vocab: narrow.vocab.clone(),
        labels: narrow.labels.clone(),
        training: narrow.training.clone(),
    };
    wide.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.model.params(), wide.model.params());
}

#[test]
fn name_set_must_match_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint(1).save(&path).unwrap();
    let mut tensors = read_tensors(fs::File::open(&path).unwrap()).unwrap();

    let mut renamed = tensors.clone();
    renamed[0].0 = "embedding.other".into();
    let mut buf = Vec::new();
    write_tensors(&mut buf, &renamed).unwrap();
    fs::write(&path, &buf).unwrap();
    assert!(Checkpoint::<f32>::load(&path).is_err());

    tensors.pop();
    buf.clear();
    write_tensors(&mut buf, &tensors).unwrap();
    fs::write(&path, &buf).unwrap();
    assert!(matches!(Checkpoint::<f32>::load(&path), Err(HkdError::Checkpoint(_))));
}

#[test]
fn tensor_stream_is_little_endian() {
    let t = Tensor::new(vec![2], vec![1.0f32, -2.5]).unwrap();
    let mut buf = Vec::new();
    write_tensors(&mut buf, &[("x".into(), t)]).unwrap();
    let mut want = b"HKD1".to_vec();
    want.extend(1u32.to_le_bytes());
    want.extend(1u16.to_le_bytes());
    want.push(b'x');
    want.push(1);
    want.extend(2u32.to_le_bytes());
    want.extend(1.0f32.to_le_bytes());
    want.extend((-2.5f32).to_le_bytes());
    assert_eq!(buf, want);
}

fn token() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9'é,.?!-]{1,6}"
}

fn dialogue() -> impl Strategy<Value = Dialogue> {
    (
        "[a-z0-9_]{1,8}",
        prop::collection::vec(
            (
                prop::collection::vec(token(), 1..5),
                "[a-z]{1,5}",
                prop::option::of("[A-Z]{1,3}"),
            ),
            1..5,
        ),
    )
        .prop_map(|(id, utts)| Dialogue {
            id,
            utterances: utts
                .into_iter()
                .map(|(tokens, label, speaker)| Utterance { tokens, label, speaker })
                .collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn corpus_files_round_trip(ds in prop::collection::vec(dialogue(), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&path, &ds).unwrap();
        let (back, labels) = load_corpus(&path, None).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(labels, LabelSet::from_dialogues(&ds));

        let vocab = Vocabulary::build(&ds);
        save_vocab(&dir.path().join("v.txt"), &vocab).unwrap();
        prop_assert_eq!(load_vocab(&dir.path().join("v.txt")).unwrap(), vocab);
        let labels = LabelSet::from_dialogues(&ds);
        save_labels(&dir.path().join("l.txt"), &labels).unwrap();
        prop_assert_eq!(load_labels(&dir.path().join("l.txt")).unwrap(), labels);
    }
}
