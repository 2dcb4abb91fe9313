//! Dialogue corpora: records, label sets, vocabularies, batching and the
//! synthetic generator.

mod batch;
mod io;
mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{HkdError, Result};

pub(crate) use batch::sequential_batches;
pub use batch::{make_batches, split_train_valid, Batch};
pub use io::{load_corpus, load_labels, load_vocab, read_dialogues, save_corpus, save_labels, save_vocab, write_dialogues};
pub use synthetic::{generate_synthetic, history_pair, SyntheticSpec};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Ordered label inventory; a label's index is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = HkdError;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut set = Self::default();
        for l in labels {
            if set.index.contains_key(&l) {
                return Err(HkdError::Input(format!("duplicate label {l:?}")));
            }
            set.insert(l);
        }
        Ok(set)
    }

    /// Labels in first-seen order.
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Self {
        let mut set = Self::default();
        for u in dialogues.iter().flat_map(|d| &d.utterances) {
            if !set.index.contains_key(&u.label) {
                set.insert(u.label.clone());
            }
        }
        set
    }

    fn insert(&mut self, label: String) {
        self.index.insert(label.clone(), self.labels.len());
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| HkdError::UnknownLabel(label.to_string()))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Token ids with PAD = 0 and UNK = 1; other tokens start at 2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i + 2).is_some() {
                return Err(HkdError::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Every token of `dialogues`, most frequent first, ties in byte order.
    pub fn build(dialogues: &[Dialogue]) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in dialogues.iter().flat_map(|d| &d.utterances).flat_map(|u| &u.tokens) {
            *counts.entry(tok).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::new(ranked.into_iter().map(|(t, _)| t.to_string()).collect()).expect("tokens are unique")
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A dialogue mapped to token and label ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDialogue {
    pub id: String,
    pub utterances: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl EncodedDialogue {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Maps tokens through `vocab` (unknown tokens become UNK) and labels through
/// `labels` (unknown labels are an error).
pub fn encode(dialogues: &[Dialogue], vocab: &Vocabulary, labels: &LabelSet) -> Result<Vec<EncodedDialogue>> {
    dialogues
        .iter()
        .map(|d| {
            if d.utterances.is_empty() {
                return Err(HkdError::Input(format!("dialogue {} has no utterances", d.id)));
            }
            let mut utterances = Vec::with_capacity(d.utterances.len());
            let mut ids = Vec::with_capacity(d.utterances.len());
            for u in &d.utterances {
                if u.tokens.is_empty() {
                    return Err(HkdError::Input(format!("dialogue {} has an empty utterance", d.id)));
                }
                utterances.push(u.tokens.iter().map(|t| vocab.id(t)).collect());
                ids.push(labels.index(&u.label)?);
            }
            Ok(EncodedDialogue {
                id: d.id.clone(),
                utterances,
                labels: ids,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(id: &str, utts: &[(&str, &str)]) -> Dialogue {
        Dialogue {
            id: id.into(),
            utterances: utts
                .iter()
                .map(|(text, label)| Utterance {
                    tokens: text.split_whitespace().map(String::from).collect(),
                    label: label.to_string(),
                    speaker: None,
                })
                .collect(),
        }
    }

    #[test]
    fn labels_in_first_seen_order() {
        let ds = [dialogue("a", &[("hi", "open"), ("ok", "resp"), ("bye", "open")])];
        let set = LabelSet::from_dialogues(&ds);
        assert_eq!(set.labels(), ["open", "resp"]);
        assert!(matches!(set.index("close"), Err(HkdError::UnknownLabel(_))));
        assert!(LabelSet::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let ds = [dialogue("a", &[("b a a", "x"), ("c b a", "x")])];
        let v = Vocabulary::build(&ds);
        assert_eq!(v.tokens(), ["a", "b", "c"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn encode_rejects_unknown_label() {
        let ds = [dialogue("a", &[("x", "p")])];
        let labels = LabelSet::new(vec!["q".into()]).unwrap();
        let v = Vocabulary::build(&ds);
        assert!(matches!(encode(&ds, &v, &labels), Err(HkdError::UnknownLabel(l)) if l == "p"));
    }
}
