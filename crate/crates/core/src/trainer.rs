//! Teacher training, student distillation, evaluation and the ablation
//! matrix.

use std::fmt;
use std::str::FromStr;

use hkd_autodiff::{AutodiffError, Graph, Real, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, split_train_valid, Batch, EncodedDialogue};
use crate::error::{HkdError, Result};
use crate::layers::{softmax_temp, Dropout};
use crate::losses::{combined_loss, row_labels, row_weights, LossBreakdown, LossTerms, LossWeights, StudentTaps, TeacherTargets};
use crate::model::{argmax, ForwardTrace, Labeler, ModelConfig};
use crate::optim::{RAdam, RAdamConfig};
use crate::report::{AblationCell, AblationReport, AblationRow, EpochRecord, RunReport, SeedResult};

/// Dialogues per forward pass during evaluation and teacher caching.
const EVAL_BATCH: usize = 16;

/// Environment variable capping the number of parallel runs.
pub const THREADS_ENV: &str = "HKD_THREADS";

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Independent seed for one purpose of one run (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = HkdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(HkdError::Config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

/// Ablation variants; each zeroes some distillation weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    #[serde(rename = "st")]
    StOnly,
    NoUc,
    NoDc,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::StOnly,
        Variant::NoUc,
        Variant::NoDc,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::StOnly => "st",
            Variant::NoUc => "no-uc",
            Variant::NoDc => "no-dc",
            Variant::Full => "full",
        }
    }

    /// Row heading in ablation tables.
    pub fn row_label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline (no distillation)",
            Variant::StOnly => "KD w/o UC, DC",
            Variant::NoUc => "KD w/o UC",
            Variant::NoDc => "KD w/o DC",
            Variant::Full => "KD full",
        }
    }

    pub fn weights(self, base: LossWeights) -> LossWeights {
        let mut w = base;
        match self {
            Variant::Baseline => {
                w.lambda = 0.0;
                w.alpha = 0.0;
                w.beta = 0.0;
            }
            Variant::StOnly => {
                w.alpha = 0.0;
                w.beta = 0.0;
            }
            Variant::NoUc => w.alpha = 0.0,
            Variant::NoDc => w.beta = 0.0,
            Variant::Full => {}
        }
        w
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HkdError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HkdError::Config(format!("unknown variant {s:?} (expected baseline|st|no-uc|no-dc|full)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub valid_fraction: f64,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub precision: Precision,
    pub lr: f64,
    /// Seed of the train/validation split; fixed across runs so seeds vary
    /// only initialization and shuffling.
    pub split_seed: u64,
    /// Compute teacher outputs once per training dialogue instead of per
    /// batch.
    pub cache_teacher: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 5,
            weights: LossWeights::default(),
            valid_fraction: 0.1,
            patience: 5,
            seeds: vec![1, 2, 3, 4, 5],
            precision: Precision::F32,
            lr: RAdamConfig::default().lr,
            split_seed: 0,
            cache_teacher: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HkdError::Config(m.into()));
        if self.max_epochs == 0 {
            return fail("max epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        self.weights.validate()
    }

    fn optimizer(&self) -> RAdamConfig {
        RAdamConfig {
            lr: self.lr,
            ..RAdamConfig::default()
        }
    }

    /// Deterministic train/validation partition of `dialogues`.
    pub fn split(&self, dialogues: &[EncodedDialogue]) -> Result<(Vec<EncodedDialogue>, Vec<EncodedDialogue>)> {
        split_train_valid(dialogues, self.valid_fraction, self.split_seed)
    }
}

/// Frozen teacher, optionally with its outputs precomputed for every
/// training dialogue.
pub struct TeacherSource<'a, F> {
    pub model: &'a Labeler<F>,
    cache: Option<Vec<ForwardTrace<F>>>,
}

impl<'a, F: Real> TeacherSource<'a, F> {
    pub fn new(model: &'a Labeler<F>) -> Self {
        Self { model, cache: None }
    }

    /// Precomputes traces for `train`; batches must then index into the same
    /// list.
    pub fn cached(model: &'a Labeler<F>, train: &[EncodedDialogue]) -> Result<Self> {
        let mut cache = Vec::with_capacity(train.len());
        for chunk in (0..train.len()).collect::<Vec<_>>().chunks(EVAL_BATCH) {
            let batch = Batch::from_dialogues(train, chunk.to_vec());
            cache.extend(model.traces(&batch)?);
        }
        Ok(Self {
            model,
            cache: Some(cache),
        })
    }

    /// Teacher targets for the time-major rows of `batch`.
    pub fn targets(&self, batch: &Batch, tau: f64) -> Result<TeacherTargets<F>> {
        let computed;
        let traces: Vec<&ForwardTrace<F>> = match &self.cache {
            Some(c) => batch.source.iter().map(|&i| &c[i]).collect(),
            None => {
                computed = self.model.traces(batch)?;
                computed.iter().collect()
            }
        };
        let n = batch.len();
        let rows = n * batch.max_t;
        let assemble = |pick: &dyn Fn(&ForwardTrace<F>) -> &Vec<Vec<F>>| -> Result<Tensor<F>> {
            let width = pick(traces[0])[0].len();
            let mut data = vec![F::zero(); rows * width];
            for (i, tr) in traces.iter().enumerate() {
                for (t, row) in pick(tr).iter().enumerate() {
                    let r = t * n + i;
                    data[r * width..(r + 1) * width].copy_from_slice(row);
                }
            }
            Ok(Tensor::new(vec![rows, width], data)?)
        };
        let logits = assemble(&|t| &t.logits)?;
        let mut g = Graph::new();
        let lv = g.constant(logits)?;
        let soft = softmax_temp(&mut g, lv, F::from_f64_lossy(tau))?;
        Ok(TeacherTargets {
            soft: g.value(soft).clone(),
            utterance: assemble(&|t| &t.utterance)?,
            context: assemble(&|t| &t.context)?,
        })
    }
}

/// Builds the loss graph of one batch; returns the graph, the parameter
/// binding and the loss terms.
fn loss_graph<F: Real>(
    model: &Labeler<F>,
    batch: &Batch,
    w: &LossWeights,
    teacher: Option<&TeacherSource<'_, F>>,
    trainable: bool,
    drop: Option<&mut Dropout>,
) -> Result<(Graph<F>, crate::params::Binding, LossTerms)> {
    let targets = match teacher {
        Some(t) if w.needs_teacher() => Some(t.targets(batch, w.tau)?),
        _ => None,
    };
    let mut g = Graph::new();
    let p = model.bind(&mut g, trainable)?;
    let out = model.forward(&mut g, &p, batch, drop)?;
    let taps = StudentTaps {
        probs: out.probs,
        logits: out.logits,
        utterance: out.utterance,
        context: out.top(),
    };
    let terms = combined_loss(&mut g, taps, &row_labels(batch), &row_weights(batch), targets.as_ref(), w)?;
    Ok((g, p, terms))
}

/// Loss values of `model` on one batch, without updating anything.
pub fn batch_loss<F: Real>(
    model: &Labeler<F>,
    batch: &Batch,
    w: &LossWeights,
    teacher: Option<&TeacherSource<'_, F>>,
) -> Result<LossBreakdown> {
    let (g, _, terms) = loss_graph(model, batch, w, teacher, false, None)?;
    Ok(terms.breakdown(&g))
}

/// Micro-averaged utterance accuracy in percent.
pub fn evaluate_accuracy<F: Real>(model: &Labeler<F>, dialogues: &[EncodedDialogue]) -> Result<f64> {
    let (correct, total) = count_correct(model, dialogues)?;
    Ok(100.0 * correct as f64 / total as f64)
}

fn count_correct<F: Real>(model: &Labeler<F>, dialogues: &[EncodedDialogue]) -> Result<(usize, usize)> {
    if dialogues.is_empty() {
        return Err(HkdError::Input("empty evaluation set".into()));
    }
    let labels = model.config().label_count;
    let (mut correct, mut total) = (0, 0);
    for batch in crate::corpus::sequential_batches(dialogues, EVAL_BATCH) {
        for (tr, &src) in model.traces(&batch)?.iter().zip(&batch.source) {
            for (o, &y) in tr.probs.iter().zip(&dialogues[src].labels) {
                if y >= labels {
                    return Err(HkdError::Input(format!("label id {y} outside the model's {labels} labels")));
                }
                correct += (argmax(o) == y) as usize;
                total += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Argmax labels for every dialogue.
pub fn predict_all<F: Real>(model: &Labeler<F>, dialogues: &[EncodedDialogue]) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); dialogues.len()];
    for batch in crate::corpus::sequential_batches(dialogues, EVAL_BATCH) {
        for (tr, &src) in model.traces(&batch)?.iter().zip(&batch.source) {
            out[src] = tr.probs.iter().map(|o| argmax(o)).collect();
        }
    }
    Ok(out)
}

/// Result of one training run: the best-validation model and its history.
#[derive(Clone, Debug)]
pub struct FitOutcome<F> {
    pub model: Labeler<F>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

fn diverged(epoch: usize, step: usize, e: HkdError) -> HkdError {
    match e {
        HkdError::Autodiff(AutodiffError::NonFinite { .. }) | HkdError::NonFiniteGradient(_) => HkdError::Diverged {
            epoch,
            step,
            msg: e.to_string(),
        },
        other => other,
    }
}

/// Trains `model` on `train` with early stopping on `valid` accuracy.
pub fn fit<F: Real>(
    mut model: Labeler<F>,
    train: &[EncodedDialogue],
    valid: &[EncodedDialogue],
    cfg: &TrainConfig,
    w: &LossWeights,
    teacher: Option<&TeacherSource<'_, F>>,
    seed: u64,
) -> Result<FitOutcome<F>> {
    cfg.validate()?;
    w.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(HkdError::Input("training and validation sets must be non-empty".into()));
    }
    if w.needs_teacher() && teacher.is_none() {
        return Err(HkdError::Input("distillation weights set but no teacher given".into()));
    }
    let mut opt = RAdam::new(cfg.optimizer(), model.params());
    let rate = model.config().dropout;
    let mut dropout = (rate > 0.0).then(|| Dropout::new(rate, derive_seed(seed, STREAM_DROPOUT)));
    let shuffle = derive_seed(seed, STREAM_SHUFFLE);

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(train, cfg.batch_size, derive_seed(shuffle, epoch as u64))?;
        let mut sum = LossBreakdown::default();
        for (step, batch) in batches.iter().enumerate() {
            let run = |model: &Labeler<F>, dropout: Option<&mut Dropout>| -> Result<(LossBreakdown, Vec<Tensor<F>>)> {
                let (g, p, terms) = loss_graph(model, batch, w, teacher, true, dropout)?;
                let mut grads = g.backward(terms.combined)?;
                Ok((terms.breakdown(&g), p.collect(&mut grads)))
            };
            let (b, grads) = run(&model, dropout.as_mut()).map_err(|e| diverged(epoch, step, e))?;
            if !b.combined.is_finite() {
                return Err(HkdError::Diverged {
                    epoch,
                    step,
                    msg: "non-finite loss".into(),
                });
            }
            opt.step(model.params_mut(), &grads).map_err(|e| diverged(epoch, step, e))?;
            sum.ht += b.ht;
            sum.st += b.st;
            sum.uc += b.uc;
            sum.dc += b.dc;
            sum.combined += b.combined;
            sum.clamped += b.clamped;
        }
        let k = batches.len() as f64;
        let mean = LossBreakdown {
            ht: sum.ht / k,
            st: sum.st / k,
            uc: sum.uc / k,
            dc: sum.dc / k,
            combined: sum.combined / k,
            clamped: sum.clamped,
        };
        let acc = evaluate_accuracy(&model, valid)?;
        epochs.push(EpochRecord {
            epoch,
            train: mean,
            valid_accuracy: acc,
        });
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        model: best,
        best_epoch,
        best_valid_accuracy: best_acc,
        epochs,
    })
}

/// Checks that `teacher` can supply every active distillation term for a
/// `student`.
pub fn check_compatible(teacher: &ModelConfig, student: &ModelConfig, w: &LossWeights) -> Result<()> {
    if teacher.vocab_size != student.vocab_size {
        return Err(HkdError::WidthMismatch {
            what: "vocabulary",
            teacher: teacher.vocab_size,
            student: student.vocab_size,
        });
    }
    if teacher.label_count != student.label_count {
        return Err(HkdError::WidthMismatch {
            what: "label set",
            teacher: teacher.label_count,
            student: student.label_count,
        });
    }
    if w.alpha > 0.0 && teacher.d_model != student.d_model {
        return Err(HkdError::WidthMismatch {
            what: "utterance vector",
            teacher: teacher.d_model,
            student: student.d_model,
        });
    }
    if w.beta > 0.0 {
        if teacher.lstm_hidden != student.lstm_hidden {
            return Err(HkdError::WidthMismatch {
                what: "dialogue context",
                teacher: teacher.lstm_hidden,
                student: student.lstm_hidden,
            });
        }
        if teacher.dialogue_layers < student.dialogue_layers {
            return Err(HkdError::Config(format!(
                "teacher has {} LSTM layers, fewer than the student's {}",
                teacher.dialogue_layers, student.dialogue_layers
            )));
        }
    }
    Ok(())
}

/// One seed of one configuration, including test accuracy when a test set
/// is given.
#[allow(clippy::too_many_arguments)]
pub fn train_seed<F: Real>(
    model_cfg: &ModelConfig,
    train: &[EncodedDialogue],
    valid: &[EncodedDialogue],
    test: Option<&[EncodedDialogue]>,
    cfg: &TrainConfig,
    w: &LossWeights,
    teacher: Option<&TeacherSource<'_, F>>,
    seed: u64,
) -> Result<(FitOutcome<F>, SeedResult)> {
    let model = Labeler::new(model_cfg.clone(), derive_seed(seed, STREAM_INIT))?;
    let out = fit(model, train, valid, cfg, w, teacher, seed)?;
    let test_accuracy = test.map(|t| evaluate_accuracy(&out.model, t)).transpose()?;
    let result = SeedResult {
        seed,
        test_accuracy,
        best_epoch: out.best_epoch,
        best_valid_accuracy: out.best_valid_accuracy,
        epochs: out.epochs.clone(),
    };
    Ok((out, result))
}

/// Trained models of a multi-seed run plus its report.
#[derive(Clone, Debug)]
pub struct TrainedRuns<F> {
    /// Best-validation model of each successful seed, in seed order.
    pub models: Vec<(u64, Labeler<F>)>,
    pub report: RunReport,
}

impl<F: Real> TrainedRuns<F> {
    /// Model of the seed with the highest validation accuracy (first on
    /// ties).
    pub fn best(&self) -> Option<(u64, &Labeler<F>, &SeedResult)> {
        let mut best: Option<(u64, &Labeler<F>, &SeedResult)> = None;
        for ((seed, m), r) in self.models.iter().zip(&self.report.seeds) {
            if best.is_none_or(|(_, _, b)| r.best_valid_accuracy > b.best_valid_accuracy) {
                best = Some((*seed, m, r));
            }
        }
        best
    }
}

#[allow(clippy::too_many_arguments)]
fn run_seeds<F: Real>(
    kind: &str,
    variant: Option<Variant>,
    model_cfg: &ModelConfig,
    dialogues: &[EncodedDialogue],
    test: Option<&[EncodedDialogue]>,
    cfg: &TrainConfig,
    w: &LossWeights,
    teacher: Option<&Labeler<F>>,
) -> Result<TrainedRuns<F>> {
    cfg.validate()?;
    let (train, valid) = cfg.split(dialogues)?;
    let source = match teacher {
        Some(t) if w.needs_teacher() && cfg.cache_teacher => Some(TeacherSource::cached(t, &train)?),
        Some(t) => Some(TeacherSource::new(t)),
        None => None,
    };
    let mut models = Vec::new();
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let (out, r) = train_seed(model_cfg, &train, &valid, test, cfg, w, source.as_ref(), seed)?;
        models.push((seed, out.model));
        results.push(r);
    }
    Ok(TrainedRuns {
        models,
        report: RunReport::new(kind, variant, model_cfg.clone(), cfg.clone(), results),
    })
}

/// Trains a model on hard targets only, once per configured seed.
pub fn train_teacher<F: Real>(
    dialogues: &[EncodedDialogue],
    test: Option<&[EncodedDialogue]>,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainedRuns<F>> {
    run_seeds("teacher", None, model_cfg, dialogues, test, cfg, &LossWeights::hard_only(), None)
}

/// Trains a student in `variant` against a frozen `teacher`, once per
/// configured seed.
pub fn distill_student<F: Real>(
    dialogues: &[EncodedDialogue],
    test: Option<&[EncodedDialogue]>,
    cfg: &TrainConfig,
    student: &ModelConfig,
    variant: Variant,
    teacher: Option<&Labeler<F>>,
) -> Result<TrainedRuns<F>> {
    let w = variant.weights(cfg.weights);
    if w.needs_teacher() {
        let t = teacher.ok_or_else(|| HkdError::MissingTeacher(variant.name().into()))?;
        check_compatible(t.config(), student, &w)?;
    }
    let teacher = teacher.filter(|_| w.needs_teacher());
    run_seeds("distill", Some(variant), student, dialogues, test, cfg, &w, teacher)
}

/// Number of parallel runs: `HKD_THREADS` when set, else the core count.
pub fn thread_budget() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Trains every variant of every student configuration for every seed and
/// tabulates test accuracy. Failed runs are recorded in their cell.
pub fn run_ablation<F: Real>(
    dialogues: &[EncodedDialogue],
    test: &[EncodedDialogue],
    cfg: &TrainConfig,
    teacher: &Labeler<F>,
    students: &[(String, ModelConfig)],
    variants: &[Variant],
) -> Result<AblationReport> {
    cfg.validate()?;
    let (train, valid) = cfg.split(dialogues)?;
    let teacher_accuracy = evaluate_accuracy(teacher, test)?;
    let source = if cfg.cache_teacher {
        TeacherSource::cached(teacher, &train)?
    } else {
        TeacherSource::new(teacher)
    };

    let jobs: Vec<(usize, Variant, u64)> = students
        .iter()
        .enumerate()
        .flat_map(|(c, _)| variants.iter().flat_map(move |&v| cfg.seeds.iter().map(move |&s| (c, v, s))))
        .collect();
    let run = |&(c, v, seed): &(usize, Variant, u64)| -> Result<SeedResult> {
        let student = &students[c].1;
        let w = v.weights(cfg.weights);
        if w.needs_teacher() {
            check_compatible(teacher.config(), student, &w)?;
        }
        let src = w.needs_teacher().then_some(&source);
        train_seed(student, &train, &valid, Some(test), cfg, &w, src, seed).map(|(_, r)| r)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_budget())
        .build()
        .map_err(|e| HkdError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SeedResult>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|&v| AblationRow {
            variant: v,
            label: v.row_label().into(),
            cells: Vec::new(),
        })
        .collect();
    let mut it = jobs.iter().zip(results);
    for _ in students {
        for row in rows.iter_mut() {
            let mut runs = Vec::new();
            let mut failures = Vec::new();
            for _ in &cfg.seeds {
                let (&(_, _, seed), r) = it.next().expect("one result per job");
                match r {
                    Ok(r) => runs.push(r),
                    Err(e) => failures.push((seed, e.to_string())),
                }
            }
            row.cells.push(AblationCell::new(runs, failures));
        }
    }
    Ok(AblationReport {
        teacher_accuracy,
        teacher_config: teacher.config().clone(),
        columns: students.iter().map(|(n, _)| n.clone()).collect(),
        student_configs: students.iter().map(|(_, c)| c.clone()).collect(),
        train_config: cfg.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_weight_algebra() {
        let base = LossWeights::default();
        assert!(!Variant::Baseline.weights(base).needs_teacher());
        let st = Variant::StOnly.weights(base);
        assert_eq!((st.lambda, st.alpha, st.beta), (0.1, 0.0, 0.0));
        assert_eq!(Variant::NoUc.weights(base).alpha, 0.0);
        assert_eq!(Variant::NoDc.weights(base).beta, 0.0);
        assert_eq!(Variant::Full.weights(base), base);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("kd".parse::<Variant>().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, STREAM_INIT), derive_seed(1, STREAM_SHUFFLE));
        assert_ne!(derive_seed(1, STREAM_INIT), derive_seed(2, STREAM_INIT));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn config_guards() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.patience = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            seeds: vec![],
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn compatibility_checks() {
        let t = ModelConfig::desk_teacher(30, 5);
        let s = ModelConfig::desk_s1(30, 5);
        assert!(check_compatible(&t, &s, &LossWeights::default()).is_ok());
        let mut narrow = s.clone();
        narrow.d_model = 32;
        let err = check_compatible(&t, &narrow, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("64") && err.to_string().contains("32"));
        // utterance width is irrelevant when that term is off
        assert!(check_compatible(&t, &narrow, &Variant::NoUc.weights(LossWeights::default())).is_ok());
        let mut deep = s;
        deep.dialogue_layers = 3;
        assert!(check_compatible(&t, &deep, &LossWeights::default()).is_err());
    }
}
