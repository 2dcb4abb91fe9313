//! Differentiable building blocks of the labeler.
//!
//! Utterance-level layers work on a batch of `U` utterances padded to `K`
//! tokens, i.e. `[U, K, d]` activations plus a `U*K` validity mask (`true` =
//! real token, `false` = padding). Padded positions are computed but never
//! attended to, so appending padding leaves every real position unchanged.

use hkd_autodiff::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HkdError, Result};
use crate::params::{uniform_init, Binding, ParamId, ParamStore};

/// Layer-normalization epsilon, added to the variance.
pub const LN_EPS: f64 = 1e-5;

/// Score given to masked keys before the softmax; `exp` of it underflows to
/// exactly zero in both precisions.
pub const MASK_FILL: f64 = -1e30;

/// Inverted dropout applied during training when the rate is non-zero.
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn apply<F: Real>(&mut self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let scale = F::from_f64_lossy(1.0 / keep);
        let mask = Tensor::from_fn(g.shape(x), |_| {
            if self.rng.random_bool(keep) {
                scale
            } else {
                F::zero()
            }
        });
        let m = g.constant(mask)?;
        Ok(g.mul(x, m)?)
    }
}

fn maybe_dropout<F: Real>(drop: &mut Option<&mut Dropout>, g: &mut Graph<F>, x: Var) -> Result<Var> {
    match drop {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

fn check_rows_have_tokens(valid: &[bool], k: usize) -> Result<()> {
    if let Some(u) = valid.chunks(k).position(|row| !row.iter().any(|&v| v)) {
        return Err(HkdError::Input(format!("utterance {u} has no unmasked tokens")));
    }
    Ok(())
}

/// Token embedding table (`vocab × d_model`).
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub width: usize,
}

impl Embedding {
    pub fn init<F: Real>(store: &mut ParamStore<F>, rng: &mut impl Rng, vocab: usize, width: usize) -> Result<Self> {
        // one-hot input: a single active unit, so fan-in is 1
        let table = store.add("embedding.weight", uniform_init(rng, &[vocab, width], 1))?;
        Ok(Self { table, vocab, width })
    }

    /// Rows of the table for `ids`, shaped `[ids.len(), width]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Binding, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(HkdError::Input("empty token sequence".into()));
        }
        Ok(g.gather(p[self.table], ids)?)
    }
}

/// Fixed sinusoidal position table `[len, width]`: even dimensions hold
/// `sin(pos / 10000^(2i/width))`, odd dimensions the matching cosine.
pub fn positional_encoding<F: Real>(len: usize, width: usize) -> Tensor<F> {
    Tensor::from_fn(&[len, width], |idx| {
        let (pos, dim) = (idx / width, idx % width);
        let pair = (dim / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
        F::from_f64_lossy(if dim % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Adds the position table to `[.., K, width]` activations (position within
/// each utterance).
pub fn add_pos_enc<F: Real>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() < 2 {
        return Err(HkdError::Input(format!("positional encoding needs [.., K, d], got {s:?}")));
    }
    let pe = positional_encoding::<F>(s[s.len() - 2], s[s.len() - 1]);
    let pe = g.constant(pe)?;
    Ok(g.add(x, pe)?)
}

/// Post-norm Transformer encoder block.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub width: usize,
    pub heads: usize,
    pub ff_units: usize,
}

impl TransformerBlock {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        prefix: &str,
        width: usize,
        heads: usize,
        ff_units: usize,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(HkdError::Config(format!("d_model {width} not divisible by {heads} heads")));
        }
        let mut mat = |name: &str, rows: usize, cols: usize, store: &mut ParamStore<F>| {
            store.add(format!("{prefix}.{name}"), uniform_init(rng, &[rows, cols], rows))
        };
        let wq = mat("attn.wq", width, width, store)?;
        let wk = mat("attn.wk", width, width, store)?;
        let wv = mat("attn.wv", width, width, store)?;
        let wo = mat("attn.wo", width, width, store)?;
        let w1 = mat("ffn.w1", width, ff_units, store)?;
        let w2 = mat("ffn.w2", ff_units, width, store)?;
        let b1 = store.add(format!("{prefix}.ffn.b1"), uniform_init(rng, &[ff_units], width))?;
        let b2 = store.add(format!("{prefix}.ffn.b2"), uniform_init(rng, &[width], ff_units))?;
        let ones = Tensor::filled(&[width], F::one());
        let zeros = Tensor::zeros(&[width]);
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            w1,
            b1,
            w2,
            b2,
            ln1_gain: store.add(format!("{prefix}.ln1.gain"), ones.clone())?,
            ln1_bias: store.add(format!("{prefix}.ln1.bias"), zeros.clone())?,
            ln2_gain: store.add(format!("{prefix}.ln2.gain"), ones)?,
            ln2_bias: store.add(format!("{prefix}.ln2.bias"), zeros)?,
            width,
            heads,
            ff_units,
        })
    }

    /// `LN(x + MHA(x))` then `LN(h + FFN(h))` over `[U, K, d]`.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        p: &Binding,
        x: Var,
        valid: &[bool],
        drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        self.forward_with_attention(g, p, x, valid, drop).map(|(out, _)| out)
    }

    /// Like [`TransformerBlock::forward`], also returning the per-head
    /// attention weights `[U, K, K]`.
    pub fn forward_with_attention<F: Real>(
        &self,
        g: &mut Graph<F>,
        p: &Binding,
        x: Var,
        valid: &[bool],
        mut drop: Option<&mut Dropout>,
    ) -> Result<(Var, Vec<Var>)> {
        let s = g.shape(x).to_vec();
        let [u, k, d] = s[..] else {
            return Err(HkdError::Input(format!("transformer block expects [U, K, d], got {s:?}")));
        };
        if d != self.width || valid.len() != u * k {
            return Err(HkdError::Input(format!(
                "transformer block: width {d} (expected {}), mask {} (expected {})",
                self.width,
                valid.len(),
                u * k
            )));
        }
        check_rows_have_tokens(valid, k)?;

        let flat = g.reshape(x, &[u * k, d])?;
        let project = |g: &mut Graph<F>, w: ParamId| -> Result<Var> {
            let y = g.matmul(flat, p[w])?;
            Ok(g.reshape(y, &[u, k, d])?)
        };
        let q = project(g, self.wq)?;
        let kk = project(g, self.wk)?;
        let v = project(g, self.wv)?;

        let key_mask: Vec<bool> = (0..u * k * k)
            .map(|i| {
                let (utt, key) = (i / (k * k), i % k);
                !valid[utt * k + key]
            })
            .collect();
        let dh = d / self.heads;
        let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
        let fill = F::from_f64_lossy(MASK_FILL);
        let mut head_out = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 2, h * dh, dh)?;
            let kh = g.slice(kk, 2, h * dh, dh)?;
            let vh = g.slice(v, 2, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let scores = g.masked_fill(scores, &key_mask, fill)?;
            let att = g.softmax(scores, 2)?;
            weights.push(att);
            head_out.push(g.matmul(att, vh)?);
        }
        let heads = if head_out.len() == 1 {
            head_out[0]
        } else {
            g.concat(&head_out, 2)?
        };
        let heads = g.reshape(heads, &[u * k, d])?;
        let attn = g.matmul(heads, p[self.wo])?;
        let attn = maybe_dropout(&mut drop, g, attn)?;
        let res = g.add(flat, attn)?;
        let eps = F::from_f64_lossy(LN_EPS);
        let h1 = g.layer_norm(res, p[self.ln1_gain], p[self.ln1_bias], eps)?;

        let f = g.matmul(h1, p[self.w1])?;
        let f = g.add(f, p[self.b1])?;
        let f = g.relu(f)?;
        let f = g.matmul(f, p[self.w2])?;
        let f = g.add(f, p[self.b2])?;
        let f = maybe_dropout(&mut drop, g, f)?;
        let res = g.add(h1, f)?;
        let out = g.layer_norm(res, p[self.ln2_gain], p[self.ln2_bias], eps)?;
        Ok((g.reshape(out, &[u, k, d])?, weights))
    }
}

/// Additive self-attention pooling: `e_k = v·tanh(W r_k + b)`,
/// `a = softmax(e)` over real tokens, `s = Σ a_k r_k`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    pub width: usize,
    pub attn_width: usize,
}

impl AttentionPool {
    pub fn init<F: Real>(store: &mut ParamStore<F>, rng: &mut impl Rng, width: usize) -> Result<Self> {
        let attn_width = width;
        Ok(Self {
            w: store.add("pool.w", uniform_init(rng, &[width, attn_width], width))?,
            b: store.add("pool.b", uniform_init(rng, &[attn_width], width))?,
            v: store.add("pool.v", uniform_init(rng, &[attn_width], attn_width))?,
            width,
            attn_width,
        })
    }

    /// Pools `[U, K, d]` into `[U, d]`; also returns the weights `[U, K]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Binding, x: Var, valid: &[bool]) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        let [u, k, d] = s[..] else {
            return Err(HkdError::Input(format!("pooling expects [U, K, d], got {s:?}")));
        };
        if valid.len() != u * k || d != self.width {
            return Err(HkdError::Input("pooling: mask or width mismatch".into()));
        }
        check_rows_have_tokens(valid, k)?;
        let flat = g.reshape(x, &[u * k, d])?;
        let hid = g.matmul(flat, p[self.w])?;
        let hid = g.add(hid, p[self.b])?;
        let hid = g.tanh(hid)?;
        let v = g.reshape(p[self.v], &[self.attn_width, 1])?;
        let e = g.matmul(hid, v)?;
        let e = g.reshape(e, &[u, k])?;
        let masked: Vec<bool> = valid.iter().map(|&ok| !ok).collect();
        let e = g.masked_fill(e, &masked, F::from_f64_lossy(MASK_FILL))?;
        let a = g.softmax(e, 1)?;
        let a3 = g.reshape(a, &[u, 1, k])?;
        let pooled = g.matmul(a3, x)?;
        Ok((g.reshape(pooled, &[u, d])?, a))
    }
}

/// One unidirectional LSTM layer; gate order in the fused matrices is
/// input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let w_ih = store.add(format!("{prefix}.w_ih"), uniform_init(rng, &[input, 4 * hidden], input))?;
        let w_hh = store.add(format!("{prefix}.w_hh"), uniform_init(rng, &[hidden, 4 * hidden], hidden))?;
        let mut bias: Tensor<F> = uniform_init(rng, &[4 * hidden], hidden);
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = F::one();
        }
        let bias = store.add(format!("{prefix}.bias"), bias)?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    /// Runs the recurrence over time-major input `[T, B, input]` from zero
    /// initial states and returns the hidden states `[T, B, hidden]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Binding, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let [t_len, b, d] = s[..] else {
            return Err(HkdError::Input(format!("lstm expects [T, B, d], got {s:?}")));
        };
        if d != self.input {
            return Err(HkdError::Input(format!("lstm input width {d}, expected {}", self.input)));
        }
        let h = self.hidden;
        let flat = g.reshape(x, &[t_len * b, d])?;
        let xp = g.matmul(flat, p[self.w_ih])?;
        let xp = g.add(xp, p[self.bias])?;
        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut gates = g.slice(xp, 0, t * b, b)?;
            if let Some(hp) = hidden {
                let rec = g.matmul(hp, p[self.w_hh])?;
                gates = g.add(gates, rec)?;
            }
            let sig = g.sigmoid(gates)?;
            let i = g.slice(sig, 1, 0, h)?;
            let f = g.slice(sig, 1, h, h)?;
            let o = g.slice(sig, 1, 3 * h, h)?;
            let cand = g.slice(gates, 1, 2 * h, h)?;
            let cand = g.tanh(cand)?;
            let ic = g.mul(i, cand)?;
            let c = match cell {
                Some(cp) => {
                    let fc = g.mul(f, cp)?;
                    g.add(fc, ic)?
                }
                None => ic,
            };
            let tc = g.tanh(c)?;
            let hn = g.mul(o, tc)?;
            cell = Some(c);
            hidden = Some(hn);
            outs.push(hn);
        }
        let all = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 0)? };
        Ok(g.reshape(all, &[t_len, b, h])?)
    }
}

/// Stack of LSTM layers; layer 0 reads the utterance vectors.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        depth: usize,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|m| LstmLayer::init(store, rng, &format!("dialogue.{m}"), if m == 0 { input } else { hidden }, hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// Hidden states of every layer, bottom to top, each `[T, B, hidden]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Binding, x: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.forward(g, p, cur)?;
            outs.push(cur);
        }
        Ok(outs)
    }
}

/// Fully connected output layer, weight `[labels, hidden]`.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub w: ParamId,
    pub b: ParamId,
    pub labels: usize,
    pub hidden: usize,
}

impl OutputHead {
    pub fn init<F: Real>(store: &mut ParamStore<F>, rng: &mut impl Rng, hidden: usize, labels: usize) -> Result<Self> {
        Ok(Self {
            w: store.add("head.weight", uniform_init(rng, &[labels, hidden], hidden))?,
            b: store.add("head.bias", uniform_init(rng, &[labels], hidden))?,
            labels,
            hidden,
        })
    }

    /// Logits `[R, labels]` and probabilities `[R, labels]` for `[R, hidden]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Binding, u: Var) -> Result<(Var, Var)> {
        let wt = g.transpose(p[self.w])?;
        let logits = g.matmul(u, wt)?;
        let logits = g.add(logits, p[self.b])?;
        let probs = g.softmax(logits, 1)?;
        Ok((logits, probs))
    }
}

/// Softmax of `logits / tau` along the last axis.
pub fn softmax_temp<F: Real>(g: &mut Graph<F>, logits: Var, tau: F) -> Result<Var> {
    if tau.is_nan() || tau <= F::zero() {
        return Err(HkdError::Config(format!("temperature must be positive, got {tau}")));
    }
    let axis = g.shape(logits).len().saturating_sub(1);
    let scaled = if tau == F::one() {
        logits
    } else {
        g.scale(logits, F::one() / tau)?
    };
    Ok(g.softmax(scaled, axis)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn embedding_with_identity_table_returns_unit_vector() {
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::init(&mut store, &mut rng(0), 4, 4).unwrap();
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        store.set("embedding.weight", eye).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let out = emb.forward(&mut g, &p, &[2]).unwrap();
        assert_eq!(g.value(out).data(), &[0., 0., 1., 0.]);
        assert!(emb.forward(&mut g, &p, &[]).is_err());
        assert!(emb.forward(&mut g, &p, &[4]).is_err());
    }

    #[test]
    fn repeated_ids_give_identical_rows() {
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::init(&mut store, &mut rng(5), 6, 3).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let out = emb.forward(&mut g, &p, &[1, 1]).unwrap();
        let d = g.value(out).data();
        assert_eq!(d[..3], d[3..]);
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(7, 6);
        assert_eq!(&pe.data()[..6], &[0., 1., 0., 1., 0., 1.]);
        assert!(pe.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 7, 6], |i| i as f64 * 0.1)).unwrap();
        let z = g.constant(Tensor::<f64>::zeros(&[1, 7, 6])).unwrap();
        let px = add_pos_enc(&mut g, x).unwrap();
        let pz = add_pos_enc(&mut g, z).unwrap();
        for ((a, b), c) in g.value(px).data().iter().zip(g.value(pz).data()).zip(g.value(x).data()) {
            assert!((a - b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_temp_closed_forms() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::new(vec![2], vec![4f64.ln(), 0.0]).unwrap()).unwrap();
        let z1 = softmax_temp(&mut g, v, 1.0).unwrap();
        let z2 = softmax_temp(&mut g, v, 2.0).unwrap();
        assert!((g.value(z1).data()[0] - 0.8).abs() < 1e-12);
        assert!((g.value(z1).data()[1] - 0.2).abs() < 1e-12);
        assert!((g.value(z2).data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((g.value(z2).data()[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax_temp(&mut g, v, 0.0).is_err());
        assert!(softmax_temp(&mut g, v, -1.0).is_err());
    }

    #[test]
    fn softmax_temp_high_temperature_is_uniform() {
        let mut r = rng(9);
        let mut g = Graph::<f64>::new();
        let v = g
            .constant(Tensor::from_fn(&[7], |_| r.random_range(-10.0..10.0)))
            .unwrap();
        let z = softmax_temp(&mut g, v, 1e6).unwrap();
        for &p in g.value(z).data() {
            assert!((p - 1.0 / 7.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn softmax_temp_at_one_matches_engine_softmax_bitwise() {
        let mut g = Graph::<f32>::new();
        let v = g.constant(Tensor::from_fn(&[3, 5], |i| (i as f32 * 0.7).sin() * 3.0)).unwrap();
        let a = softmax_temp(&mut g, v, 1.0).unwrap();
        let b = g.softmax(v, 1).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn output_head_zero_weights_give_uniform_probabilities() {
        let mut store = ParamStore::<f64>::new();
        let head = OutputHead::init(&mut store, &mut rng(1), 4, 43).unwrap();
        store.set("head.weight", Tensor::zeros(&[43, 4])).unwrap();
        store.set("head.bias", Tensor::zeros(&[43])).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let u = g.constant(Tensor::from_fn(&[2, 4], |i| i as f64)).unwrap();
        let (_, probs) = head.forward(&mut g, &p, u).unwrap();
        for &x in g.value(probs).data() {
            assert!((x - 1.0 / 43.0).abs() < 1e-15);
        }
    }

    #[test]
    fn output_head_argmax_and_shift_invariance() {
        let mut store = ParamStore::<f64>::new();
        let head = OutputHead::init(&mut store, &mut rng(2), 5, 6).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let u = g.constant(Tensor::from_fn(&[3, 5], |i| (i as f64).cos())).unwrap();
        let (logits, probs) = head.forward(&mut g, &p, u).unwrap();
        let argmax = |row: &[f64]| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &x)| if x > row[best] { i } else { best })
        };
        for (l, o) in g.value(logits).rows().zip(g.value(probs).rows()) {
            assert_eq!(argmax(l), argmax(o));
            assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let c = g.constant(Tensor::filled(&[6], 12.5)).unwrap();
        let shifted = g.add(logits, c).unwrap();
        let sp = g.softmax(shifted, 1).unwrap();
        for (a, b) in g.value(sp).data().iter().zip(g.value(probs).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        let mut store = ParamStore::<f64>::new();
        let block = TransformerBlock::init(&mut store, &mut rng(3), "b", 8, 2, 16).unwrap();
        let pool = AttentionPool::init(&mut store, &mut rng(4), 8).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let x = g.constant(Tensor::from_fn(&[1, 1, 8], |i| i as f64 * 0.3)).unwrap();
        let (out, weights) = block.forward_with_attention(&mut g, &p, x, &[true], None).unwrap();
        for w in weights {
            assert_eq!(g.value(w).data(), &[1.0]);
        }
        let (s, a) = pool.forward(&mut g, &p, out, &[true]).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
        assert_eq!(g.value(s).data(), g.value(out).data());
    }

    #[test]
    fn all_masked_utterance_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let block = TransformerBlock::init(&mut store, &mut rng(3), "b", 4, 1, 4).unwrap();
        let pool = AttentionPool::init(&mut store, &mut rng(4), 4).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let x = g.constant(Tensor::zeros(&[2, 2, 4])).unwrap();
        let valid = [true, false, false, false];
        assert!(block.forward(&mut g, &p, x, &valid, None).is_err());
        assert!(pool.forward(&mut g, &p, x, &valid).is_err());
    }

    #[test]
    fn pooling_equal_rows_returns_the_row() {
        let mut store = ParamStore::<f64>::new();
        let pool = AttentionPool::init(&mut store, &mut rng(8), 3).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let row = [0.3, -1.2, 2.0];
        let x = g.constant(Tensor::from_fn(&[1, 4, 3], |i| row[i % 3])).unwrap();
        let (s, a) = pool.forward(&mut g, &p, x, &[true, true, false, true]).unwrap();
        for (got, want) in g.value(s).data().iter().zip(row) {
            assert!((got - want).abs() < 1e-12);
        }
        let w = g.value(a).data();
        assert_eq!(w[2], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lstm_with_zero_weights_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let stack = LstmStack::init(&mut store, &mut rng(1), 2, 3, 2).unwrap();
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let x = g.constant(Tensor::zeros(&[4, 1, 3])).unwrap();
        let outs = stack.forward(&mut g, &p, x).unwrap();
        assert_eq!(outs.len(), 2);
        assert!(g.value(outs[1]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_is_causal() {
        let mut store = ParamStore::<f64>::new();
        let stack = LstmStack::init(&mut store, &mut rng(7), 2, 3, 4).unwrap();
        let full = Tensor::from_fn(&[6, 1, 3], |i| (i as f64 * 0.37).sin());
        let run = |steps: usize| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false).unwrap();
            let x = Tensor::new(vec![steps, 1, 3], full.data()[..steps * 3].to_vec()).unwrap();
            let x = g.constant(x).unwrap();
            let outs = stack.forward(&mut g, &p, x).unwrap();
            g.value(*outs.last().unwrap()).data().to_vec()
        };
        let all = run(6);
        for t in 1..6 {
            assert_eq!(run(t)[..], all[..t * 4]);
        }
    }
}
