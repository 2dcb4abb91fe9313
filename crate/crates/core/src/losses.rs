//! Hard-target, soft-target and context losses and their weighted sum.
//!
//! All losses average per utterance within a dialogue first and then over
//! the dialogues of a batch. Graph-level functions take per-row weights that
//! encode this: a real row of dialogue `n` weighs `1 / (N * T_n)`, a padded
//! row weighs 0 (see [`row_weights`]).

use hkd_autodiff::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{HkdError, Result};
use crate::layers::softmax_temp;

/// Probability floor inside the cross-entropy logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 5.0,
            lambda: 0.1,
            alpha: 0.05,
            beta: 0.05,
        }
    }
}

impl LossWeights {
    /// Hard-target loss only.
    pub fn hard_only() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(HkdError::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        for (name, w) in [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(HkdError::Config(format!("loss weight {name} must be non-negative, got {w}")));
            }
        }
        Ok(())
    }

    /// True when any teacher-dependent term is active.
    pub fn needs_teacher(&self) -> bool {
        self.lambda > 0.0 || self.alpha > 0.0 || self.beta > 0.0
    }
}

/// Loss values of one batch (or their mean over batches).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ht: f64,
    pub st: f64,
    pub uc: f64,
    pub dc: f64,
    pub combined: f64,
    /// Reference probabilities that fell below the log floor.
    pub clamped: usize,
}

impl LossBreakdown {
    /// Fills `combined` from the components.
    pub fn combine(ht: f64, st: f64, uc: f64, dc: f64, w: &LossWeights) -> Result<Self> {
        w.validate()?;
        let mut combined = ht;
        if w.lambda != 0.0 {
            combined += w.lambda * st;
        }
        if w.alpha != 0.0 {
            combined += w.alpha * uc;
        }
        if w.beta != 0.0 {
            combined += w.beta * dc;
        }
        Ok(Self {
            ht,
            st,
            uc,
            dc,
            combined,
            clamped: 0,
        })
    }
}

/// Weights of time-major batch rows (`t * n + i`).
pub fn row_weights(batch: &Batch) -> Vec<f64> {
    let n = batch.len();
    let mut w = vec![0.0; n * batch.max_t];
    for (i, &len) in batch.lengths.iter().enumerate() {
        for t in 0..len {
            w[t * n + i] = 1.0 / (n as f64 * len as f64);
        }
    }
    w
}

/// Label of every time-major batch row; `None` for padding.
pub fn row_labels(batch: &Batch) -> Vec<Option<usize>> {
    let n = batch.len();
    (0..n * batch.max_t)
        .map(|r| {
            let (t, i) = (r / n, r % n);
            (t < batch.lengths[i]).then(|| batch.label(i, t))
        })
        .collect()
}

fn check_rows(what: &str, rows: usize, expected: usize) -> Result<()> {
    if rows != expected {
        return Err(HkdError::Input(format!("{what}: {rows} rows, expected {expected}")));
    }
    Ok(())
}

/// `-Σ_r w_r log max(o_r[y_r], floor)`; also returns how many reference
/// probabilities were clamped.
pub fn hard_target<F: Real>(
    g: &mut Graph<F>,
    probs: Var,
    labels: &[Option<usize>],
    weights: &[f64],
) -> Result<(Var, usize)> {
    let s = g.shape(probs).to_vec();
    let [rows, classes] = s[..] else {
        return Err(HkdError::Input(format!("probabilities must be [rows, labels], got {s:?}")));
    };
    check_rows("hard target labels", labels.len(), rows)?;
    check_rows("hard target weights", weights.len(), rows)?;
    let floor = F::from_f64_lossy(LOG_FLOOR);
    let mut target = vec![F::zero(); rows * classes];
    let mut clamped = 0;
    for (r, (label, &w)) in labels.iter().zip(weights).enumerate() {
        if let Some(y) = *label {
            if y >= classes {
                return Err(HkdError::Input(format!("label {y} outside {classes} classes")));
            }
            target[r * classes + y] = F::from_f64_lossy(w);
            if g.value(probs).data()[r * classes + y] < floor {
                clamped += 1;
            }
        }
    }
    let target = g.constant(Tensor::new(s, target)?)?;
    let logp = g.log(probs, floor)?;
    let prod = g.mul(logp, target)?;
    let total = g.sum(prod, None)?;
    Ok((g.scale(total, -F::one())?, clamped))
}

/// `-τ² Σ_r w_r Σ_y z̃_r[y] log z_r[y]` with `z = softmax(logits / τ)` and
/// `teacher_soft` the teacher's already softened distribution.
pub fn soft_target<F: Real>(
    g: &mut Graph<F>,
    teacher_soft: &Tensor<F>,
    student_logits: Var,
    tau: F,
    weights: &[f64],
) -> Result<Var> {
    let s = g.shape(student_logits).to_vec();
    if teacher_soft.shape() != &s[..] || s.len() != 2 {
        return Err(HkdError::Input(format!(
            "soft target shapes differ: teacher {:?}, student {s:?}",
            teacher_soft.shape()
        )));
    }
    check_rows("soft target weights", weights.len(), s[0])?;
    let z = softmax_temp(g, student_logits, tau)?;
    let logz = g.log(z, F::from_f64_lossy(LOG_FLOOR))?;
    let cols = s[1];
    let target = Tensor::from_fn(&s, |i| teacher_soft.data()[i] * F::from_f64_lossy(weights[i / cols]));
    let target = g.constant(target)?;
    let prod = g.mul(logz, target)?;
    let total = g.sum(prod, None)?;
    Ok(g.scale(total, -(tau * tau))?)
}

/// `Σ_r w_r ‖teacher_r − student_r‖²`. `what` names the tap point in width
/// errors.
pub fn context_distance<F: Real>(
    g: &mut Graph<F>,
    what: &'static str,
    teacher: &Tensor<F>,
    student: Var,
    weights: &[f64],
) -> Result<Var> {
    let s = g.shape(student).to_vec();
    if teacher.rank() != 2 || s.len() != 2 {
        return Err(HkdError::Input(format!("{what} traces must be [rows, width]")));
    }
    if teacher.shape()[1] != s[1] {
        return Err(HkdError::WidthMismatch {
            what,
            teacher: teacher.shape()[1],
            student: s[1],
        });
    }
    check_rows(what, teacher.shape()[0], s[0])?;
    check_rows(what, weights.len(), s[0])?;
    let t = g.constant(teacher.clone())?;
    let d = g.squared_distance(t, student)?;
    let w = g.constant(Tensor::new(vec![weights.len()], weights.iter().map(|&x| F::from_f64_lossy(x)).collect())?)?;
    let wd = g.mul(d, w)?;
    Ok(g.sum(wd, None)?)
}

/// Teacher quantities a student is trained against, one row per
/// time-major batch row.
#[derive(Clone, Debug)]
pub struct TeacherTargets<F> {
    /// Teacher distribution softened at the configured temperature.
    pub soft: Tensor<F>,
    pub utterance: Tensor<F>,
    /// Top LSTM layer states.
    pub context: Tensor<F>,
}

/// Graph terms of the combined loss.
pub struct LossTerms {
    pub combined: Var,
    pub ht: Var,
    pub st: Option<Var>,
    pub uc: Option<Var>,
    pub dc: Option<Var>,
    pub clamped: usize,
}

impl LossTerms {
    pub fn breakdown<F: Real>(&self, g: &Graph<F>) -> LossBreakdown {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0].to_f64_lossy());
        LossBreakdown {
            ht: val(Some(self.ht)),
            st: val(self.st),
            uc: val(self.uc),
            dc: val(self.dc),
            combined: val(Some(self.combined)),
            clamped: self.clamped,
        }
    }
}

/// Student outputs the combined loss reads.
#[derive(Clone, Copy, Debug)]
pub struct StudentTaps {
    pub probs: Var,
    pub logits: Var,
    pub utterance: Var,
    pub context: Var,
}

/// `HT + λ ST + α UC + β DC`; a term whose weight is zero is not built.
pub fn combined_loss<F: Real>(
    g: &mut Graph<F>,
    student: StudentTaps,
    labels: &[Option<usize>],
    row_w: &[f64],
    teacher: Option<&TeacherTargets<F>>,
    w: &LossWeights,
) -> Result<LossTerms> {
    w.validate()?;
    let (ht, clamped) = hard_target(g, student.probs, labels, row_w)?;
    let mut terms = LossTerms {
        combined: ht,
        ht,
        st: None,
        uc: None,
        dc: None,
        clamped,
    };
    if !w.needs_teacher() {
        return Ok(terms);
    }
    let teacher = teacher.ok_or_else(|| HkdError::Input("teacher targets required for distillation terms".into()))?;
    if w.lambda > 0.0 {
        let st = soft_target(g, &teacher.soft, student.logits, F::from_f64_lossy(w.tau), row_w)?;
        let ws = g.scale(st, F::from_f64_lossy(w.lambda))?;
        terms.combined = g.add(terms.combined, ws)?;
        terms.st = Some(st);
    }
    if w.alpha > 0.0 {
        let uc = context_distance(g, "utterance vector", &teacher.utterance, student.utterance, row_w)?;
        let wu = g.scale(uc, F::from_f64_lossy(w.alpha))?;
        terms.combined = g.add(terms.combined, wu)?;
        terms.uc = Some(uc);
    }
    if w.beta > 0.0 {
        let dc = context_distance(g, "dialogue context", &teacher.context, student.context, row_w)?;
        let wd = g.scale(dc, F::from_f64_lossy(w.beta))?;
        terms.combined = g.add(terms.combined, wd)?;
        terms.dc = Some(dc);
    }
    Ok(terms)
}

/// Flattens per-dialogue rows into one matrix plus nested-mean weights.
fn flatten(dialogues: &[Vec<Vec<f64>>]) -> Result<(Tensor<f64>, Vec<f64>)> {
    if dialogues.is_empty() || dialogues.iter().any(Vec::is_empty) {
        return Err(HkdError::Input("every dialogue needs at least one utterance".into()));
    }
    let n = dialogues.len() as f64;
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for d in dialogues {
        for r in d {
            rows.push(r.clone());
            weights.push(1.0 / (n * d.len() as f64));
        }
    }
    let t = Tensor::from_rows(&rows).map_err(|e| HkdError::Input(e.to_string()))?;
    Ok((t, weights))
}

/// Hard-target loss of per-dialogue probability rows against label ids.
pub fn hard_target_loss(probs: &[Vec<Vec<f64>>], references: &[Vec<usize>]) -> Result<f64> {
    if probs.len() != references.len() || probs.iter().zip(references).any(|(p, r)| p.len() != r.len()) {
        return Err(HkdError::Input("probabilities and references differ in shape".into()));
    }
    let (t, w) = flatten(probs)?;
    let labels: Vec<Option<usize>> = references.iter().flatten().map(|&y| Some(y)).collect();
    let mut g = Graph::new();
    let p = g.constant(t)?;
    let (loss, _) = hard_target(&mut g, p, &labels, &w)?;
    Ok(g.value(loss).data()[0])
}

/// Soft-target loss between per-dialogue teacher and student logits.
pub fn soft_target_loss(teacher_logits: &[Vec<Vec<f64>>], student_logits: &[Vec<Vec<f64>>], tau: f64) -> Result<f64> {
    let (tl, w) = flatten(teacher_logits)?;
    let (sl, _) = flatten(student_logits)?;
    if tl.shape() != sl.shape() {
        return Err(HkdError::Input(format!(
            "soft target shapes differ: teacher {:?}, student {:?}",
            tl.shape(),
            sl.shape()
        )));
    }
    let mut g = Graph::new();
    let tv = g.constant(tl)?;
    let soft = softmax_temp(&mut g, tv, tau)?;
    let soft = g.value(soft).clone();
    let sv = g.constant(sl)?;
    let loss = soft_target(&mut g, &soft, sv, tau, &w)?;
    Ok(g.value(loss).data()[0])
}

fn context_loss(what: &'static str, teacher: &[Vec<Vec<f64>>], student: &[Vec<Vec<f64>>]) -> Result<f64> {
    let (tt, w) = flatten(teacher)?;
    let (st, _) = flatten(student)?;
    let mut g = Graph::new();
    let sv = g.constant(st)?;
    let loss = context_distance(&mut g, what, &tt, sv, &w)?;
    Ok(g.value(loss).data()[0])
}

/// Utterance-level context loss between pooled utterance vectors.
pub fn utterance_context_loss(teacher: &[Vec<Vec<f64>>], student: &[Vec<Vec<f64>>]) -> Result<f64> {
    context_loss("utterance vector", teacher, student)
}

/// Dialogue-level context loss between the top LSTM layers.
/// `teacher_depth` must be at least `student_depth`.
pub fn dialogue_context_loss(
    teacher_top: &[Vec<Vec<f64>>],
    student_top: &[Vec<Vec<f64>>],
    teacher_depth: usize,
    student_depth: usize,
) -> Result<f64> {
    if teacher_depth < student_depth {
        return Err(HkdError::Config(format!(
            "teacher has {teacher_depth} LSTM layers, fewer than the student's {student_depth}"
        )));
    }
    context_loss("dialogue context", teacher_top, student_top)
}
