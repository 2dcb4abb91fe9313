use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncodedDialogue, PAD};
use crate::error::{HkdError, Result};

/// Padded mini-batch. Token arrays are `[n, max_t, max_k]` and utterance
/// arrays `[n, max_t]`, both row-major; padded slots hold PAD and label 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Positions of the dialogues in the source list.
    pub source: Vec<usize>,
    pub max_t: usize,
    pub max_k: usize,
    pub tokens: Vec<usize>,
    pub token_mask: Vec<bool>,
    pub utterance_mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Pads `dialogues[i]` for every `i` in `source`.
    pub fn from_dialogues(dialogues: &[EncodedDialogue], source: Vec<usize>) -> Self {
        let max_t = source.iter().map(|&i| dialogues[i].len()).max().unwrap_or(0);
        let max_k = source
            .iter()
            .flat_map(|&i| dialogues[i].utterances.iter().map(Vec::len))
            .max()
            .unwrap_or(0);
        let n = source.len();
        let mut b = Self {
            max_t,
            max_k,
            tokens: vec![PAD; n * max_t * max_k],
            token_mask: vec![false; n * max_t * max_k],
            utterance_mask: vec![false; n * max_t],
            lengths: source.iter().map(|&i| dialogues[i].len()).collect(),
            labels: vec![0; n * max_t],
            source,
        };
        for (row, &src) in b.source.iter().enumerate() {
            let d = &dialogues[src];
            for (t, (utt, &label)) in d.utterances.iter().zip(&d.labels).enumerate() {
                let u = row * max_t + t;
                b.utterance_mask[u] = true;
                b.labels[u] = label;
                let base = u * max_k;
                b.tokens[base..base + utt.len()].copy_from_slice(utt);
                b.token_mask[base..base + utt.len()].fill(true);
            }
        }
        b
    }

    /// One-dialogue batch from raw token ids (labels all 0).
    pub fn single(utterances: &[Vec<usize>]) -> Result<Self> {
        if utterances.is_empty() {
            return Err(HkdError::Input("dialogue with zero utterances".into()));
        }
        if utterances.iter().any(Vec::is_empty) {
            return Err(HkdError::Input("empty utterance".into()));
        }
        let d = EncodedDialogue {
            id: String::new(),
            utterances: utterances.to_vec(),
            labels: vec![0; utterances.len()],
        };
        Ok(Self::from_dialogues(std::slice::from_ref(&d), vec![0]))
    }

    /// Number of dialogues.
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Total real utterances.
    pub fn utterance_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Padded token slots of utterance `t` in batch dialogue `i`.
    pub fn utterance(&self, i: usize, t: usize) -> &[usize] {
        let base = (i * self.max_t + t) * self.max_k;
        &self.tokens[base..base + self.max_k]
    }

    pub fn utterance_len(&self, i: usize, t: usize) -> usize {
        let base = (i * self.max_t + t) * self.max_k;
        self.token_mask[base..base + self.max_k].iter().filter(|&&m| m).count()
    }

    pub fn label(&self, i: usize, t: usize) -> usize {
        self.labels[i * self.max_t + t]
    }
}

/// Splits dialogues into batches of `batch_size` in an order shuffled by
/// `seed`; the last batch may be smaller.
pub fn make_batches(dialogues: &[EncodedDialogue], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(HkdError::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch::from_dialogues(dialogues, c.to_vec()))
        .collect())
}

/// Batches in corpus order, for evaluation.
pub(crate) fn sequential_batches(dialogues: &[EncodedDialogue], batch_size: usize) -> Vec<Batch> {
    let order: Vec<usize> = (0..dialogues.len()).collect();
    order
        .chunks(batch_size.max(1))
        .map(|c| Batch::from_dialogues(dialogues, c.to_vec()))
        .collect()
}

/// Random partition with `round(fraction * n)` dialogues held out.
pub fn split_train_valid<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HkdError::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let n = items.len();
    let held = (fraction * n as f64).round() as usize;
    if held == 0 || held == n {
        return Err(HkdError::Config(format!(
            "validation fraction {fraction} of {n} dialogues leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_valid = vec![false; n];
    for &i in &order[..held] {
        is_valid[i] = true;
    }
    let (mut train, mut valid) = (Vec::with_capacity(n - held), Vec::with_capacity(held));
    for (item, v) in items.iter().zip(is_valid) {
        if v {
            valid.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, valid))
}
