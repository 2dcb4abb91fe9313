//! Finite-difference checks of every layer and loss at 64-bit.

use hkd_autodiff::{grad_check, AutodiffError, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Batch, EncodedDialogue};
use crate::error::{HkdError, Result};
use crate::layers::{add_pos_enc, softmax_temp, AttentionPool, Embedding, LstmStack, OutputHead, TransformerBlock};
use crate::losses::{combined_loss, context_distance, hard_target, row_labels, row_weights, soft_target, LossWeights, StudentTaps, TeacherTargets};
use crate::model::{Labeler, ModelConfig};
use crate::params::{Binding, ParamStore};

/// Step of the five-point central stencil.
pub const EPS: f64 = 3e-3;

/// Instances with a relu input closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 3e-2;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
}

type Program = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> hkd_autodiff::Result<Var>>;

fn lift<T>(r: Result<T>) -> hkd_autodiff::Result<T> {
    r.map_err(|e| match e {
        HkdError::Autodiff(inner) => inner,
        other => AutodiffError::Invalid {
            op: "layer",
            msg: other.to_string(),
        },
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Random weights contracting a layer output to a scalar.
fn contract(g: &mut Graph<f64>, out: Var, seed: u64) -> hkd_autodiff::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
    let w = rand_tensor(&mut rng, g.shape(out), 1.0);
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum(p, None)
}

/// Parameters as leading inputs; the program rebinds them.
fn store_inputs(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

fn mask(rng: &mut ChaCha8Rng, u: usize, k: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..u * k).map(|_| rng.random_bool(0.75)).collect();
    for row in m.chunks_mut(k) {
        row[0] = true;
    }
    m
}

fn case_block(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    let heads = [1, 2][rng.random_range(0..2)];
    let (u, k) = (rng.random_range(1..3), rng.random_range(1..4));
    let mut store = ParamStore::new();
    let block = TransformerBlock::init(&mut store, rng, "b", 4, heads, 5).unwrap();
    let valid = mask(rng, u, k);
    let mut inputs = store_inputs(&store);
    inputs.push(rand_tensor(rng, &[u, k, 4], 1.0));
    let n = store.len();
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let out = lift(block.forward(g, &p, v[n], &valid, None))?;
        contract(g, out, seed)
    };
    (inputs, Box::new(program))
}

fn case_pool(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    let (u, k) = (rng.random_range(1..3), rng.random_range(1..5));
    let mut store = ParamStore::new();
    let pool = AttentionPool::init(&mut store, rng, 3).unwrap();
    let valid = mask(rng, u, k);
    let mut inputs = store_inputs(&store);
    inputs.push(rand_tensor(rng, &[u, k, 3], 1.0));
    let n = store.len();
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let (s, _) = lift(pool.forward(g, &p, v[n], &valid))?;
        contract(g, s, seed)
    };
    (inputs, Box::new(program))
}

fn case_encoder(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    // embedding, positions, one block and pooling over a 3-token utterance
    let mut store = ParamStore::new();
    let emb = Embedding::init(&mut store, rng, 6, 4).unwrap();
    let block = TransformerBlock::init(&mut store, rng, "b", 4, 2, 5).unwrap();
    let pool = AttentionPool::init(&mut store, rng, 4).unwrap();
    let ids: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
    let n = store.len();
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let x = lift(emb.forward(g, &p, &ids))?;
        let x = g.reshape(x, &[1, 3, 4])?;
        let x = lift(add_pos_enc(g, x))?;
        let x = lift(block.forward(g, &p, x, &[true; 3], None))?;
        let (s, _) = lift(pool.forward(g, &p, x, &[true; 3]))?;
        contract(g, s, seed)
    };
    (store_inputs(&store), Box::new(program))
}

fn case_lstm(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    let (t, b, depth) = (rng.random_range(1..4), rng.random_range(1..3), rng.random_range(1..3));
    let mut store = ParamStore::new();
    let lstm = LstmStack::init(&mut store, rng, depth, 3, 2).unwrap();
    let mut inputs = store_inputs(&store);
    inputs.push(rand_tensor(rng, &[t, b, 3], 1.0));
    let n = store.len();
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let outs = lift(lstm.forward(g, &p, v[n]))?;
        let all = g.concat(&outs, 2)?;
        contract(g, all, seed)
    };
    (inputs, Box::new(program))
}

fn case_head(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    let rows = rng.random_range(1..4);
    let mut store = ParamStore::new();
    let head = OutputHead::init(&mut store, rng, 3, 4).unwrap();
    let mut inputs = store_inputs(&store);
    inputs.push(rand_tensor(rng, &[rows, 3], 1.0));
    let n = store.len();
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let (logits, probs) = lift(head.forward(g, &p, v[n]))?;
        let both = g.concat(&[logits, probs], 1)?;
        contract(g, both, seed)
    };
    (inputs, Box::new(program))
}

fn case_softmax_temp(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<Tensor<f64>>, Program) {
    let rows = rng.random_range(1..4);
    let logits = rand_tensor(rng, &[rows, 5], 5.0);
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let z = lift(softmax_temp(g, v[0], 5.0))?;
        contract(g, z, seed)
    };
    (vec![logits], Box::new(program))
}

/// Row weights and labels of random dialogue lengths.
fn random_rows(rng: &mut ChaCha8Rng, classes: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = rng.random_range(1..4);
    let lens: Vec<usize> = (0..n).map(|_| rng.random_range(1..4)).collect();
    let max_t = *lens.iter().max().unwrap();
    let mut w = vec![0.0; n * max_t];
    let mut y = vec![None; n * max_t];
    for (i, &len) in lens.iter().enumerate() {
        for t in 0..len {
            w[t * n + i] = 1.0 / (n * len) as f64;
            y[t * n + i] = Some(rng.random_range(0..classes));
        }
    }
    (w, y)
}

fn case_hard_target(rng: &mut ChaCha8Rng, _: u64) -> (Vec<Tensor<f64>>, Program) {
    let (w, y) = random_rows(rng, 4);
    let logits = rand_tensor(rng, &[w.len(), 4], 2.0);
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let probs = g.softmax(v[0], 1)?;
        Ok(lift(hard_target(g, probs, &y, &w))?.0)
    };
    (vec![logits], Box::new(program))
}

fn case_soft_target(rng: &mut ChaCha8Rng, _: u64) -> (Vec<Tensor<f64>>, Program) {
    let (w, _) = random_rows(rng, 4);
    let teacher = rand_tensor(rng, &[w.len(), 4], 5.0);
    let mut g = Graph::new();
    let tv = g.constant(teacher).unwrap();
    let sv = softmax_temp(&mut g, tv, 5.0).unwrap();
    let soft = g.value(sv).clone();
    let student = rand_tensor(rng, &[w.len(), 4], 5.0);
    let program = move |g: &mut Graph<f64>, v: &[Var]| lift(soft_target(g, &soft, v[0], 5.0, &w));
    (vec![student], Box::new(program))
}

fn case_context(rng: &mut ChaCha8Rng, _: u64) -> (Vec<Tensor<f64>>, Program) {
    let (w, _) = random_rows(rng, 1);
    let width = rng.random_range(1..5);
    let teacher = rand_tensor(rng, &[w.len(), width], 1.0);
    let student = rand_tensor(rng, &[w.len(), width], 1.0);
    let program = move |g: &mut Graph<f64>, v: &[Var]| lift(context_distance(g, "context", &teacher, v[0], &w));
    (vec![student], Box::new(program))
}

fn tiny_dialogues(rng: &mut ChaCha8Rng, vocab: usize, labels: usize) -> Vec<EncodedDialogue> {
    (0..rng.random_range(1..3))
        .map(|i| {
            let t = rng.random_range(1..4);
            EncodedDialogue {
                id: format!("g{i}"),
                utterances: (0..t)
                    .map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(2..vocab)).collect())
                    .collect(),
                labels: (0..t).map(|_| rng.random_range(0..labels)).collect(),
            }
        })
        .collect()
}

fn case_combined(rng: &mut ChaCha8Rng, _: u64) -> (Vec<Tensor<f64>>, Program) {
    // whole student model under the combined loss against a frozen teacher
    let cfg = ModelConfig {
        utterance_layers: 1,
        dialogue_layers: 1,
        d_model: 4,
        heads: 2,
        ff_units: 3,
        lstm_hidden: 3,
        vocab_size: 7,
        label_count: 3,
        dropout: 0.0,
    };
    let teacher_cfg = ModelConfig {
        dialogue_layers: 2,
        ..cfg.clone()
    };
    let student = Labeler::<f64>::new(cfg, rng.random()).unwrap();
    let teacher = Labeler::<f64>::new(teacher_cfg, rng.random()).unwrap();
    let ds = tiny_dialogues(rng, 7, 3);
    let batch = Batch::from_dialogues(&ds, (0..ds.len()).collect());
    let w = LossWeights {
        tau: 2.0,
        lambda: 0.5,
        alpha: 0.3,
        beta: 0.2,
    };
    let targets: TeacherTargets<f64> = crate::trainer::TeacherSource::new(&teacher).targets(&batch, w.tau).unwrap();
    let n = student.params().len();
    let inputs = store_inputs(student.params());
    let program = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = Binding::from_vars(v[..n].to_vec());
        let out = lift(student.forward(g, &p, &batch, None))?;
        let taps = StudentTaps {
            probs: out.probs,
            logits: out.logits,
            utterance: out.utterance,
            context: out.top(),
        };
        let terms = lift(combined_loss(g, taps, &row_labels(&batch), &row_weights(&batch), Some(&targets), &w))?;
        Ok(terms.combined)
    };
    (inputs, Box::new(program))
}

type Case = fn(&mut ChaCha8Rng, u64) -> (Vec<Tensor<f64>>, Program);

const CASES: [(&str, Case); 10] = [
    ("transformer block", case_block),
    ("attention pooling", case_pool),
    ("utterance encoder chain", case_encoder),
    ("lstm stack", case_lstm),
    ("output head", case_head),
    ("softmax with temperature", case_softmax_temp),
    ("hard target loss", case_hard_target),
    ("soft target loss", case_soft_target),
    ("context loss", case_context),
    ("combined loss through full model", case_combined),
];

fn clear_of_kinks(inputs: &[Tensor<f64>], program: &Program) -> Result<bool> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<hkd_autodiff::Result<Vec<_>>>()?;
    program(&mut g, &vars)?;
    Ok(g.relu_margin().is_none_or(|m| m >= KINK_MARGIN))
}

/// Runs every case on `instances` random instances.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    CASES
        .iter()
        .enumerate()
        .map(|(c, &(name, case))| {
            let mut worst: f64 = 0.0;
            for i in 0..instances {
                let s = seed.wrapping_mul(1_000_003).wrapping_add((c * 100_000 + i) as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let (inputs, program) = loop {
                    let (inputs, program) = case(&mut rng, s);
                    if clear_of_kinks(&inputs, &program)? {
                        break (inputs, program);
                    }
                };
                let err = grad_check(&program, &inputs, EPS)?;
                worst = worst.max(err);
            }
            Ok(CheckResult {
                name,
                instances,
                max_error: worst,
            })
        })
        .collect()
}
