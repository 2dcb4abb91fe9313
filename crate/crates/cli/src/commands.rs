use std::fs;
use std::path::Path;

use hkd_autodiff::Real;
use hkd_core::checkpoint::{read_tensors, sidecar_path};
use hkd_core::corpus::{
    encode, generate_synthetic, load_corpus, load_labels, load_vocab, save_corpus, save_labels, Dialogue, EncodedDialogue, LabelSet,
    SyntheticSpec, Vocabulary,
};
use hkd_core::gradcheck::run_suite;
use hkd_core::report::mean_std;
use hkd_core::trainer::{self, TrainedRuns};
use hkd_core::{Checkpoint, HkdError, LossWeights, ModelConfig, Precision, Result, TrainConfig, TrainingMeta};
use serde_json::json;

use crate::{AblateArgs, CorpusArgs, DistillArgs, EvalArgs, GenCorpusArgs, GradcheckArgs, InspectArgs, ModelArgs, TrainArgs, TrainTeacherArgs};

/// Tolerance of the `gradcheck` command.
const GRAD_TOL: f64 = 1e-4;

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let spec = SyntheticSpec {
        scenes: a.scenes,
        labels: a.label_count,
        dialogues: a.dialogues,
        min_utterances: a.min_utterances,
        max_utterances: a.max_utterances,
        min_tokens: a.min_tokens,
        max_tokens: a.max_tokens,
        vocab_size: a.vocab_size,
        noise: a.noise,
        seed: a.seed,
    };
    let mut dialogues = generate_synthetic(&spec)?;
    if let (Some(path), Some(n)) = (&a.test_out, a.test_dialogues) {
        if n == 0 || n >= dialogues.len() {
            return Err(HkdError::Config(format!("--test-dialogues {n} must leave both files non-empty")));
        }
        let test = dialogues.split_off(dialogues.len() - n);
        save_corpus(path, &test)?;
    }
    save_corpus(&a.out, &dialogues)?;
    if let Some(path) = &a.labels {
        save_labels(path, &LabelSet::new((0..spec.labels).map(|l| spec.label_name(l)).collect())?)?;
    }
    println!("wrote {} dialogues to {}", dialogues.len(), a.out.display());
    Ok(())
}

fn preset(name: &str, vocab: usize, labels: usize) -> Result<ModelConfig> {
    Ok(match name {
        "desk-teacher" => ModelConfig::desk_teacher(vocab, labels),
        "desk-s1" => ModelConfig::desk_s1(vocab, labels),
        "desk-s2" => ModelConfig::desk_s2(vocab, labels),
        "large-teacher" => ModelConfig::large_teacher(vocab, labels),
        "large-s1" => ModelConfig::large_s1(vocab, labels),
        "large-s2" => ModelConfig::large_s2(vocab, labels),
        _ => return Err(HkdError::Config(format!("unknown preset {name:?}"))),
    })
}

fn model_config(a: &ModelArgs, default: &str, vocab: usize, labels: usize) -> Result<ModelConfig> {
    let mut c = preset(a.preset.as_deref().unwrap_or(default), vocab, labels)?;
    let set = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut c.utterance_layers, a.utterance_layers);
    set(&mut c.dialogue_layers, a.dialogue_layers);
    set(&mut c.d_model, a.d_model);
    set(&mut c.heads, a.heads);
    set(&mut c.ff_units, a.ff_units);
    set(&mut c.lstm_hidden, a.lstm_hidden);
    if let Some(d) = a.dropout {
        c.dropout = d;
    }
    c.validate()?;
    Ok(c)
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        weights: LossWeights {
            tau: a.tau,
            lambda: a.lambda,
            alpha: a.alpha,
            beta: a.beta,
        },
        valid_fraction: a.valid_fraction,
        patience: a.patience,
        seeds: a.seeds.clone(),
        precision: a.precision,
        lr: a.lr,
        split_seed: a.split_seed,
        cache_teacher: a.cache_teacher,
    }
}

/// Encoded training and test data. Vocabulary and labels come from the
/// explicit files, else from `inherited` (a teacher), else from the
/// training corpus.
struct Data {
    train: Vec<EncodedDialogue>,
    test: Option<Vec<EncodedDialogue>>,
    vocab: Vocabulary,
    labels: LabelSet,
}

fn load_data(a: &CorpusArgs, inherited: Option<(&Vocabulary, &LabelSet)>) -> Result<Data> {
    let labels = match (&a.labels, inherited) {
        (Some(p), _) => Some(load_labels(p)?),
        (None, Some((_, l))) => Some(l.clone()),
        (None, None) => None,
    };
    let (train, labels) = load_corpus(&a.data, labels.as_ref())?;
    let vocab = match (&a.vocab, inherited) {
        (Some(p), _) => load_vocab(p)?,
        (None, Some((v, _))) => v.clone(),
        (None, None) => Vocabulary::build(&train),
    };
    let test = a
        .test
        .as_ref()
        .map(|p| load_encoded(p, &vocab, &labels))
        .transpose()?;
    Ok(Data {
        train: encode(&train, &vocab, &labels)?,
        test,
        vocab,
        labels,
    })
}

fn load_encoded(path: &Path, vocab: &Vocabulary, labels: &LabelSet) -> Result<Vec<EncodedDialogue>> {
    let (ds, _): (Vec<Dialogue>, _) = load_corpus(path, Some(labels))?;
    encode(&ds, vocab, labels)
}

/// The metrics file must not overwrite the checkpoint's sidecar.
fn check_outputs(ckpt: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if let (Some(c), Some(o)) = (ckpt, out) {
        if sidecar_path(c) == o || c == o {
            return Err(HkdError::Config(format!("--out {} collides with the checkpoint files of {}", o.display(), c.display())));
        }
    }
    Ok(())
}

fn save_best<F: Real>(runs: &TrainedRuns<F>, data: &Data, path: Option<&Path>, precision: Precision) -> Result<()> {
    let (Some(path), Some((seed, model, r))) = (path, runs.best()) else {
        return Ok(());
    };
    Checkpoint {
        model: model.clone(),
        vocab: data.vocab.clone(),
        labels: data.labels.clone(),
        training: TrainingMeta {
            seed,
            epoch: r.best_epoch,
            valid_accuracy: r.best_valid_accuracy,
            precision: precision.name().into(),
        },
    }
    .save(path)
}

fn summarize<F>(runs: &TrainedRuns<F>) {
    let r = &runs.report;
    let best: Vec<f64> = r.seeds.iter().map(|s| s.best_valid_accuracy).collect();
    let (vm, _) = mean_std(&best).unwrap_or((f64::NAN, 0.0));
    match (r.mean_test_accuracy, r.std_test_accuracy) {
        (Some(m), Some(s)) => println!("{} seeds: validation {vm:.2}, test {m:.2} ± {s:.2}", r.seeds.len()),
        _ => println!("{} seeds: validation {vm:.2}", r.seeds.len()),
    }
}

fn run_teacher<F: Real>(a: &TrainTeacherArgs) -> Result<()> {
    check_outputs(a.ckpt.as_deref(), a.out.as_deref())?;
    let data = load_data(&a.corpus, None)?;
    let model = model_config(&a.model, "desk-teacher", data.vocab.len(), data.labels.len())?;
    let cfg = train_config(&a.train);
    let runs = trainer::train_teacher::<F>(&data.train, data.test.as_deref(), &cfg, &model)?;
    save_best(&runs, &data, a.ckpt.as_deref(), cfg.precision)?;
    summarize(&runs);
    if let Some(out) = &a.out {
        fs::write(out, runs.report.to_json()?)?;
    }
    Ok(())
}

pub fn train_teacher(a: TrainTeacherArgs) -> Result<()> {
    match a.train.precision {
        Precision::F32 => run_teacher::<f32>(&a),
        Precision::F64 => run_teacher::<f64>(&a),
    }
}

fn run_distill<F: Real>(a: &DistillArgs) -> Result<()> {
    check_outputs(a.ckpt.as_deref(), a.out.as_deref())?;
    let w = a.variant.weights(train_config(&a.train).weights);
    let teacher = match (&a.teacher, w.needs_teacher()) {
        (Some(p), _) => Some(Checkpoint::<F>::load(p)?),
        (None, true) => return Err(HkdError::MissingTeacher(a.variant.name().into())),
        (None, false) => None,
    };
    let data = load_data(&a.corpus, teacher.as_ref().map(|t| (&t.vocab, &t.labels)))?;
    let model = model_config(&a.model, "desk-s1", data.vocab.len(), data.labels.len())?;
    let cfg = train_config(&a.train);
    let runs = trainer::distill_student(
        &data.train,
        data.test.as_deref(),
        &cfg,
        &model,
        a.variant,
        teacher.as_ref().map(|t| &t.model),
    )?;
    save_best(&runs, &data, a.ckpt.as_deref(), cfg.precision)?;
    summarize(&runs);
    if let Some(out) = &a.out {
        fs::write(out, runs.report.to_json()?)?;
    }
    Ok(())
}

pub fn distill(a: DistillArgs) -> Result<()> {
    match a.train.precision {
        Precision::F32 => run_distill::<f32>(&a),
        Precision::F64 => run_distill::<f64>(&a),
    }
}

fn run_eval<F: Real>(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(&a.model)?;
    let ds = load_encoded(&a.data, &ckpt.vocab, &ckpt.labels)?;
    let acc = trainer::evaluate_accuracy(&ckpt.model, &ds)?;
    println!("accuracy {acc}");
    if let Some(out) = &a.out {
        let utterances: usize = ds.iter().map(EncodedDialogue::len).sum();
        let report = json!({ "accuracy": acc, "dialogues": ds.len(), "utterances": utterances });
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    match a.precision {
        Precision::F32 => run_eval::<f32>(&a),
        Precision::F64 => run_eval::<f64>(&a),
    }
}

fn run_ablate<F: Real>(a: &AblateArgs) -> Result<()> {
    let teacher = Checkpoint::<F>::load(&a.teacher)?;
    let corpus = CorpusArgs {
        data: a.data.clone(),
        test: Some(a.test.clone()),
        labels: None,
        vocab: None,
    };
    let data = load_data(&corpus, Some((&teacher.vocab, &teacher.labels)))?;
    let students = a
        .students
        .iter()
        .map(|name| Ok((name.clone(), preset(name, data.vocab.len(), data.labels.len())?)))
        .collect::<Result<Vec<_>>>()?;
    let cfg = train_config(&a.train);
    let test = data.test.as_deref().unwrap_or_default();
    let report = trainer::run_ablation(&data.train, test, &cfg, &teacher.model, &students, &a.variants)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_json()?)?;
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    if a.variants.is_empty() || a.students.is_empty() {
        return Err(HkdError::Config("need at least one variant and one student".into()));
    }
    match a.train.precision {
        Precision::F32 => run_ablate::<f32>(&a),
        Precision::F64 => run_ablate::<f64>(&a),
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_suite(a.instances, a.seed)?;
    for r in &results {
        println!("{:<34} {:.3e}", r.name, r.max_error);
    }
    match results.iter().find(|r| r.max_error > GRAD_TOL) {
        Some(r) => Err(HkdError::GradientCheck {
            case: r.name.into(),
            error: r.max_error,
        }),
        None => Ok(()),
    }
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&a.ckpt)?;
    let tensors = read_tensors(fs::File::open(&a.ckpt)?)?;
    let list: Vec<_> = tensors
        .iter()
        .map(|(name, t)| json!({ "name": name, "shape": t.shape() }))
        .collect();
    let doc = json!({
        "sidecar": ckpt.sidecar(),
        "parameters": ckpt.model.count_parameters(),
        "tensors": list,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
