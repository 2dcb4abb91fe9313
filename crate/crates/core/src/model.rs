//! The hierarchical labeler: utterance encoder, LSTM dialogue network and
//! output head.

use std::collections::BTreeMap;

use hkd_autodiff::{Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{HkdError, Result};
use crate::layers::{add_pos_enc, AttentionPool, Dropout, Embedding, LstmStack, OutputHead, TransformerBlock};
use crate::params::{Binding, ParamStore};

/// Geometry of a labeler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Transformer blocks in the utterance network.
    pub utterance_layers: usize,
    /// LSTM layers in the dialogue network.
    pub dialogue_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_units: usize,
    pub lstm_hidden: usize,
    pub vocab_size: usize,
    pub label_count: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    /// Large teacher geometry (8 blocks, 2 LSTM layers, 2048 FFN units).
    pub fn large_teacher(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(8, 2, 256, 4, 2048, 256, vocab_size, label_count)
    }

    pub fn large_s1(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(1, 1, 256, 4, 256, 256, vocab_size, label_count)
    }

    pub fn large_s2(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(2, 2, 256, 4, 512, 256, vocab_size, label_count)
    }

    /// Desk-scale teacher used by the ablation experiment.
    pub fn desk_teacher(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(2, 2, 64, 4, 256, 64, vocab_size, label_count)
    }

    pub fn desk_s1(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(1, 1, 64, 4, 64, 64, vocab_size, label_count)
    }

    pub fn desk_s2(vocab_size: usize, label_count: usize) -> Self {
        Self::with_shape(2, 2, 64, 4, 128, 64, vocab_size, label_count)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_shape(
        utterance_layers: usize,
        dialogue_layers: usize,
        d_model: usize,
        heads: usize,
        ff_units: usize,
        lstm_hidden: usize,
        vocab_size: usize,
        label_count: usize,
    ) -> Self {
        Self {
            utterance_layers,
            dialogue_layers,
            d_model,
            heads,
            ff_units,
            lstm_hidden,
            vocab_size,
            label_count,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HkdError::Config(msg));
        if self.utterance_layers == 0 || self.dialogue_layers == 0 {
            return fail(format!(
                "layer counts must be at least 1 (utterance {}, dialogue {})",
                self.utterance_layers, self.dialogue_layers
            ));
        }
        if self.d_model == 0 || self.ff_units == 0 || self.lstm_hidden == 0 {
            return fail("widths must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.vocab_size < 2 {
            return fail("vocabulary must hold at least the PAD and UNK entries".into());
        }
        if self.label_count == 0 {
            return fail("label set is empty".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Per-dialogue tap points, one row per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<F> {
    /// Pooled utterance vectors.
    pub utterance: Vec<Vec<F>>,
    /// Top LSTM layer states.
    pub context: Vec<Vec<F>>,
    pub logits: Vec<Vec<F>>,
    pub probs: Vec<Vec<F>>,
}

impl<F> ForwardTrace<F> {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Graph outputs for a batch. Rows are time-major: row `t * n + i` holds
/// utterance `t` of batch dialogue `i`; rows past a dialogue's end are
/// computed from a zero utterance vector and must be ignored.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub utterance: Var,
    /// Hidden states of every LSTM layer, bottom to top, each `[rows, hidden]`.
    pub layers: Vec<Var>,
    pub logits: Var,
    pub probs: Var,
}

impl BatchOutput {
    pub fn top(&self) -> Var {
        *self.layers.last().expect("at least one LSTM layer")
    }
}

#[derive(Clone, Debug)]
pub struct Labeler<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    embedding: Embedding,
    blocks: Vec<TransformerBlock>,
    pool: AttentionPool,
    lstm: LstmStack,
    head: OutputHead,
}

impl<F: Real> Labeler<F> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let embedding = Embedding::init(&mut params, &mut rng, c.vocab_size, c.d_model)?;
        let blocks = (0..c.utterance_layers)
            .map(|l| TransformerBlock::init(&mut params, &mut rng, &format!("block.{l}"), c.d_model, c.heads, c.ff_units))
            .collect::<Result<Vec<_>>>()?;
        let pool = AttentionPool::init(&mut params, &mut rng, c.d_model)?;
        let lstm = LstmStack::init(&mut params, &mut rng, c.dialogue_layers, c.d_model, c.lstm_hidden)?;
        let head = OutputHead::init(&mut params, &mut rng, c.lstm_hidden, c.label_count)?;
        Ok(Self {
            config,
            params,
            embedding,
            blocks,
            pool,
            lstm,
            head,
        })
    }

    /// Model with the given parameter values; the names and shapes must
    /// match the configuration exactly.
    pub fn from_params(config: ModelConfig, tensors: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(HkdError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            model.params.set(&name, t)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> Labeler<G> {
        let tensors = self.params.iter().map(|(n, t)| (n.to_string(), t.cast())).collect();
        Labeler::from_params(self.config.clone(), tensors).expect("identical geometry")
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Result<Binding> {
        self.params.bind(g, trainable)
    }

    /// Pooled vectors `[U, d]` for utterances of one common length.
    pub fn encode_same_length(
        &self,
        g: &mut Graph<F>,
        p: &Binding,
        utterances: &[&[usize]],
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let k = utterances.first().map_or(0, |u| u.len());
        if k == 0 {
            return Err(HkdError::Input("empty utterance".into()));
        }
        if utterances.iter().any(|u| u.len() != k) {
            return Err(HkdError::Input("utterances of unequal length".into()));
        }
        let ids: Vec<usize> = utterances.iter().flat_map(|u| u.iter().copied()).collect();
        let d = self.config.d_model;
        let x = self.embedding.forward(g, p, &ids)?;
        let x = g.reshape(x, &[utterances.len(), k, d])?;
        let mut x = add_pos_enc(g, x)?;
        let valid = vec![true; ids.len()];
        for block in &self.blocks {
            x = block.forward(g, p, x, &valid, drop.as_deref_mut())?;
        }
        let (s, _) = self.pool.forward(g, p, x, &valid)?;
        Ok(s)
    }

    /// Runs the full model over a batch.
    ///
    /// Utterances are grouped by token count and encoded without padding, so
    /// each utterance vector is independent of the rest of the batch.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        p: &Binding,
        batch: &Batch,
        mut drop: Option<&mut Dropout>,
    ) -> Result<BatchOutput> {
        let (n, steps) = (batch.len(), batch.max_t);
        if n == 0 || steps == 0 {
            return Err(HkdError::Input("dialogue with zero utterances".into()));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &len) in batch.lengths.iter().enumerate() {
            if len == 0 {
                return Err(HkdError::Input("dialogue with zero utterances".into()));
            }
            for t in 0..len {
                let k = batch.utterance_len(i, t);
                if k == 0 {
                    return Err(HkdError::Input(format!("empty utterance {t} in batch dialogue {i}")));
                }
                groups.entry(k).or_default().push(t * n + i);
            }
        }

        let d = self.config.d_model;
        let mut parts = Vec::with_capacity(groups.len() + 1);
        let mut slot = vec![usize::MAX; n * steps];
        let mut next = 0;
        for (&k, rows) in &groups {
            let utts: Vec<&[usize]> = rows.iter().map(|&r| &batch.utterance(r % n, r / n)[..k]).collect();
            parts.push(self.encode_same_length(g, p, &utts, drop.as_deref_mut())?);
            for &r in rows {
                slot[r] = next;
                next += 1;
            }
        }
        parts.push(g.constant(Tensor::zeros(&[1, d]))?);
        let pooled = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
        let order: Vec<usize> = slot.iter().map(|&s| if s == usize::MAX { next } else { s }).collect();
        let utterance = g.gather(pooled, &order)?;

        let seq = g.reshape(utterance, &[steps, n, d])?;
        let h = self.config.lstm_hidden;
        let layers = self
            .lstm
            .forward(g, p, seq)?
            .into_iter()
            .map(|v| g.reshape(v, &[steps * n, h]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (logits, probs) = self.head.forward(g, p, *layers.last().expect("validated depth"))?;
        Ok(BatchOutput {
            utterance,
            layers,
            logits,
            probs,
        })
    }

    /// Inference-mode traces for every dialogue of `batch`.
    pub fn traces(&self, batch: &Batch) -> Result<Vec<ForwardTrace<F>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let out = self.forward(&mut g, &p, batch, None)?;
        let n = batch.len();
        let pick = |v: Var, i: usize, len: usize| -> Vec<Vec<F>> {
            let rows: Vec<&[F]> = g.value(v).rows().collect();
            (0..len).map(|t| rows[t * n + i].to_vec()).collect()
        };
        Ok((0..n)
            .map(|i| {
                let len = batch.lengths[i];
                ForwardTrace {
                    utterance: pick(out.utterance, i, len),
                    context: pick(out.top(), i, len),
                    logits: pick(out.logits, i, len),
                    probs: pick(out.probs, i, len),
                }
            })
            .collect())
    }

    /// Trace of a single dialogue given as token-id utterances.
    pub fn forward_dialogue(&self, utterances: &[Vec<usize>]) -> Result<ForwardTrace<F>> {
        let batch = Batch::single(utterances)?;
        Ok(self.traces(&batch)?.remove(0))
    }

    /// Argmax label per utterance.
    pub fn predict(&self, utterances: &[Vec<usize>]) -> Result<Vec<usize>> {
        Ok(self.forward_dialogue(utterances)?.probs.iter().map(|o| argmax(o)).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate().skip(1) {
        if *x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::with_shape(1, 2, 8, 2, 16, 6, 12, 4)
    }

    #[test]
    fn config_guards() {
        let mut c = tiny();
        c.utterance_layers = 0;
        assert!(Labeler::<f64>::new(c, 0).is_err());
        let mut c = tiny();
        c.heads = 3;
        assert!(Labeler::<f64>::new(c, 0).is_err());
        let mut c = tiny();
        c.dialogue_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn zero_head_predicts_first_label() {
        let mut m = Labeler::<f64>::new(tiny(), 3).unwrap();
        m.params_mut().set("head.weight", Tensor::zeros(&[4, 6])).unwrap();
        m.params_mut().set("head.bias", Tensor::zeros(&[4])).unwrap();
        assert_eq!(m.predict(&[vec![2, 3], vec![4]]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Labeler::<f32>::new(tiny(), 9).unwrap();
        let b = Labeler::<f32>::new(tiny(), 9).unwrap();
        let c = Labeler::<f32>::new(tiny(), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_count_is_monotone() {
        let count = |c: ModelConfig| Labeler::<f32>::new(c, 0).unwrap().count_parameters();
        let base = tiny();
        let mut wider = base.clone();
        wider.ff_units *= 2;
        let mut deeper = base.clone();
        deeper.utterance_layers += 1;
        let mut taller = base.clone();
        taller.dialogue_layers += 1;
        assert!(count(wider) > count(base.clone()));
        assert!(count(deeper) > count(base.clone()));
        assert!(count(taller) > count(base));
    }

    #[test]
    fn trace_rows_are_distributions() {
        let m = Labeler::<f64>::new(tiny(), 1).unwrap();
        let tr = m.forward_dialogue(&[vec![2, 3, 4], vec![5], vec![6, 7]]).unwrap();
        assert_eq!(tr.len(), 3);
        for o in &tr.probs {
            assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(m.forward_dialogue(&[]).is_err());
        assert!(m.forward_dialogue(&[vec![]]).is_err());
    }

    #[test]
    fn shared_utterance_gives_shared_vector() {
        let m = Labeler::<f64>::new(tiny(), 4).unwrap();
        let a = m.forward_dialogue(&[vec![2, 3], vec![8, 9, 10]]).unwrap();
        let b = m.forward_dialogue(&[vec![4], vec![5, 5, 5, 5], vec![8, 9, 10]]).unwrap();
        assert_eq!(a.utterance[1], b.utterance[2]);
    }
}
