//! Synthetic call-scene corpora.
//!
//! Every dialogue walks through the scenes left to right, spending at least
//! one utterance in each; change points are uniform. Each label owns a block
//! of signature tokens and every utterance carries at least one of them,
//! padded with tokens from a shared filler pool. The two labels returned by
//! [`history_pair`] share one signature block, so only the position in the
//! dialogue tells them apart. Noise replaces each token with a uniformly
//! drawn vocabulary token.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dialogue, Utterance};
use crate::error::{HkdError, Result};

/// Share of non-mandatory token slots filled from the label's signature block.
const SIGNATURE_RATE: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub scenes: usize,
    /// Labels are spread over the scenes round-robin: label `l` belongs to
    /// scene `l % scenes`.
    pub labels: usize,
    pub dialogues: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            scenes: 5,
            labels: 5,
            dialogues: 280,
            min_utterances: 20,
            max_utterances: 40,
            min_tokens: 2,
            max_tokens: 6,
            vocab_size: 60,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HkdError::Config(m));
        if self.scenes < 2 || self.labels < self.scenes {
            return fail(format!(
                "need at least 2 scenes and one label per scene (scenes {}, labels {})",
                self.scenes, self.labels
            ));
        }
        if self.dialogues == 0 || self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return fail("dialogue count and token range must be positive".into());
        }
        if self.min_utterances < self.scenes || self.min_utterances > self.max_utterances {
            return fail(format!(
                "utterance range {}..={} cannot visit {} scenes",
                self.min_utterances, self.max_utterances, self.scenes
            ));
        }
        if self.vocab_size < self.labels * 3 {
            return fail(format!(
                "vocabulary of {} is smaller than 3 x {} labels",
                self.vocab_size, self.labels
            ));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return fail(format!("noise rate {} outside [0, 0.5)", self.noise));
        }
        Ok(())
    }

    pub fn label_name(&self, label: usize) -> String {
        if self.labels == self.scenes {
            format!("scene{label}")
        } else {
            format!("scene{}.{}", label % self.scenes, label / self.scenes)
        }
    }
}

/// Labels that share an emission distribution and differ only by scene
/// position; they belong to non-adjacent scenes when there are five or more.
pub fn history_pair(scenes: usize) -> (usize, usize) {
    if scenes >= 5 {
        (1, scenes - 2)
    } else {
        (0, scenes - 1)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Dialogue>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pair = history_pair(spec.scenes);
    let group = |label: usize| if label == pair.1 { pair.0 } else { label };
    let block = spec.vocab_size / spec.labels;
    // group ids skip pair.1, so the filler pool starts after labels - 1 blocks
    let block_start = |g: usize| if g > pair.1 { (g - 1) * block } else { g * block };
    let filler = (spec.labels - 1) * block..spec.vocab_size;

    let mut dialogues = Vec::with_capacity(spec.dialogues);
    for n in 0..spec.dialogues {
        let len = rng.random_range(spec.min_utterances..=spec.max_utterances);
        let mut cuts: Vec<usize> = sample(&mut rng, len - 1, spec.scenes - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        let mut scene = 0;
        let mut utterances = Vec::with_capacity(len);
        for t in 0..len {
            while scene < cuts.len() && cuts[scene] == t {
                scene += 1;
            }
            let subs = (spec.labels - scene).div_ceil(spec.scenes);
            let label = scene + spec.scenes * rng.random_range(0..subs);
            let start = block_start(group(label));
            let k = rng.random_range(spec.min_tokens..=spec.max_tokens);
            let anchor = rng.random_range(0..k);
            let tokens = (0..k)
                .map(|pos| {
                    let id = if pos == anchor || rng.random_bool(SIGNATURE_RATE) {
                        start + rng.random_range(0..block)
                    } else {
                        rng.random_range(filler.clone())
                    };
                    let id = if rng.random_bool(spec.noise) {
                        rng.random_range(0..spec.vocab_size)
                    } else {
                        id
                    };
                    format!("w{id}")
                })
                .collect();
            utterances.push(Utterance {
                tokens,
                label: spec.label_name(label),
                speaker: Some(if t % 2 == 0 { "agent" } else { "customer" }.into()),
            });
        }
        dialogues.push(Dialogue {
            id: format!("syn{n:05}"),
            utterances,
        });
    }
    Ok(dialogues)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::corpus::write_dialogues;

    fn spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            dialogues: 200,
            noise,
            seed: 17,
            ..SyntheticSpec::default()
        }
    }

    fn scene_of(label: &str) -> usize {
        label.trim_start_matches("scene").split('.').next().unwrap().parse().unwrap()
    }

    #[test]
    fn scenes_are_monotone_and_complete() {
        for d in generate_synthetic(&spec(0.1)).unwrap() {
            let scenes: Vec<usize> = d.utterances.iter().map(|u| scene_of(&u.label)).collect();
            assert!(scenes.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1), "{scenes:?}");
            assert_eq!(scenes[0], 0);
            assert_eq!(*scenes.last().unwrap(), 4);
            assert!((20..=40).contains(&d.utterances.len()));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let bytes = |s: &SyntheticSpec| {
            let mut buf = Vec::new();
            write_dialogues(&mut buf, &generate_synthetic(s).unwrap()).unwrap();
            buf
        };
        assert_eq!(bytes(&spec(0.1)), bytes(&spec(0.1)));
        let mut other = spec(0.1);
        other.seed += 1;
        assert_ne!(bytes(&spec(0.1)), bytes(&other));
    }

    #[test]
    fn parameter_guards() {
        let mut s = spec(0.0);
        s.vocab_size = 14;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(0.5);
        s.noise = 0.5;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(0.0);
        s.min_utterances = 3;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn more_labels_than_scenes() {
        let s = SyntheticSpec {
            scenes: 3,
            labels: 7,
            vocab_size: 40,
            ..spec(0.0)
        };
        let ds = generate_synthetic(&s).unwrap();
        let mut seen: Vec<String> = ds.iter().flat_map(|d| &d.utterances).map(|u| u.label.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 7);
    }

    /// Multinomial naive Bayes over tokens with add-one smoothing, trained
    /// and scored on the same corpus.
    fn frequency_classifier(ds: &[Dialogue]) -> impl Fn(&Utterance) -> String {
        let mut counts: HashMap<String, HashMap<String, f64>> = HashMap::new();
        let mut totals: HashMap<String, f64> = HashMap::new();
        let mut priors: HashMap<String, f64> = HashMap::new();
        for u in ds.iter().flat_map(|d| &d.utterances) {
            *priors.entry(u.label.clone()).or_default() += 1.0;
            for t in &u.tokens {
                *counts.entry(u.label.clone()).or_default().entry(t.clone()).or_default() += 1.0;
                *totals.entry(u.label.clone()).or_default() += 1.0;
            }
        }
        let mut labels: Vec<String> = priors.keys().cloned().collect();
        labels.sort();
        let vocab = 60.0;
        move |u: &Utterance| {
            let score = |l: &String| {
                priors[l].ln()
                    + u.tokens
                        .iter()
                        .map(|t| ((counts[l].get(t).copied().unwrap_or(0.0) + 1.0) / (totals[l] + vocab)).ln())
                        .sum::<f64>()
            };
            labels
                .iter()
                .fold(None::<(&String, f64)>, |best, l| {
                    let s = score(l);
                    match best {
                        Some((_, b)) if b >= s => best,
                        _ => Some((l, s)),
                    }
                })
                .unwrap()
                .0
                .clone()
        }
    }

    #[test]
    fn token_frequencies_resolve_all_but_the_history_pair() {
        let s = spec(0.0);
        let ds = generate_synthetic(&s).unwrap();
        let classify = frequency_classifier(&ds);
        let (a, b) = history_pair(s.scenes);
        let pair = [s.label_name(a), s.label_name(b)];
        let (mut free_ok, mut free_n) = (0, 0);
        let (mut pair_ok, mut pair_n, mut pair_a) = (0, 0, 0);
        for u in ds.iter().flat_map(|d| &d.utterances) {
            let hit = classify(u) == u.label;
            if pair.contains(&u.label) {
                pair_n += 1;
                pair_ok += hit as usize;
                pair_a += (u.label == pair[0]) as usize;
            } else {
                free_n += 1;
                free_ok += hit as usize;
            }
        }
        assert_eq!(free_ok, free_n);
        let majority = pair_a.max(pair_n - pair_a) as f64 / pair_n as f64;
        let acc = pair_ok as f64 / pair_n as f64;
        assert!(acc <= majority + 0.02, "pair accuracy {acc} vs majority share {majority}");
    }
}
