use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mcsp_core::data::store::{
    load_subject_inputs, read_raw_dataset, write_domain_dataset, write_raw_dataset,
};
use mcsp_core::data::{
    build_subject_inputs, generate_synthetic_cohort, DataConfig, Domain, SubjectInputs,
    SyntheticSpec,
};
use mcsp_core::distillation::DistillConfig;
use mcsp_core::error::{Error, Result};
use mcsp_core::model::{parameter_budget, Model, ModelConfig};
use mcsp_core::scalar::Scalar;
use mcsp_core::training::finetune::{task_labels, FeatureCache};
use mcsp_core::training::{
    cross_validate, cross_validate_distill, finetune, initial_model, pretrain, Checkpoint,
    MetricsReport,
};

use crate::config::{Precision, RunConfig};

/// ROI count used by `--param-count` when the config leaves it open.
pub const DEFAULT_PARAM_COUNT_ROI: usize = 100;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_dir(output: &Path) -> PathBuf {
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Serialize)]
struct RunStamp<'a, M: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    precision: Precision,
    metrics: M,
}

/// Effective config, seed/version stamp and metrics of a stage, written next to its output.
fn record_run<M: Serialize>(dir: &Path, command: &str, cfg: &RunConfig, metrics: M) -> Result<()> {
    write_text(&dir.join(format!("{command}.config.toml")), &cfg.to_toml())?;
    let stamp = RunStamp {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        precision: cfg.precision,
        metrics,
    };
    let text = toml::to_string(&stamp).map_err(|e| Error::validation(format!("run stamp: {e}")))?;
    write_text(&dir.join(format!("{command}.run.toml")), &text)
}

pub fn synth_gen(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<String> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let de = toml::Deserializer::new(&text);
    let mut spec: SyntheticSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().message().trim().to_string())
    })?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let records = generate_synthetic_cohort::<f64>(&spec)?;
    write_raw_dataset(out, &records)?;
    let spec_text = toml::to_string(&spec).map_err(|e| Error::validation(e.to_string()))?;
    write_text(&out.join("synth-gen.spec.toml"), &spec_text)?;
    Ok(format!(
        "wrote {} subjects to {}",
        records.len(),
        out.display()
    ))
}

pub fn build_data(input: &Path, out: &Path, cfg: &RunConfig) -> Result<String> {
    match cfg.precision {
        Precision::Float32 => build_data_as::<f32>(input, out, &cfg.data),
        Precision::Float64 => build_data_as::<f64>(input, out, &cfg.data),
    }
}

fn build_data_as<T: Scalar>(input: &Path, out: &Path, data: &DataConfig) -> Result<String> {
    let records = read_raw_dataset::<T>(input)?;
    let inputs = records
        .iter()
        .map(|r| build_subject_inputs(r, data))
        .collect::<Result<Vec<_>>>()?;
    write_domain_dataset(out, &inputs, data)?;
    Ok(format!(
        "built domain inputs for {} subjects in {}",
        inputs.len(),
        out.display()
    ))
}

fn load_subjects<T: Scalar>(
    dir: &Path,
    data: &DataConfig,
) -> Result<(Vec<SubjectInputs<T>>, usize)> {
    let subjects = load_subject_inputs::<T>(dir, data)?;
    if subjects.is_empty() {
        return Err(Error::validation(format!(
            "{} holds no subjects",
            dir.display()
        )));
    }
    let n_roi = subjects
        .iter()
        .find_map(SubjectInputs::n_roi)
        .ok_or_else(|| Error::validation("dataset has no runs"))?;
    if let Some(s) = subjects
        .iter()
        .find(|s| s.n_roi().is_some_and(|n| n != n_roi))
    {
        return Err(Error::validation(format!(
            "subject {} has a different ROI count",
            s.subject_id
        )));
    }
    Ok((subjects, n_roi))
}

pub fn param_count(cfg: &RunConfig) -> Result<String> {
    let n_roi = cfg.model.n_roi.unwrap_or(DEFAULT_PARAM_COUNT_ROI);
    let budget = parameter_budget(&cfg.model_config(), &cfg.data, n_roi)?;
    let model = Model::<f32>::new(&cfg.model_config().resolved(n_roi)?, &cfg.data, 0)?;
    let mut out = String::new();
    let _ = writeln!(out, "n_roi {n_roi}");
    for d in Domain::ALL {
        let _ = writeln!(out, "{d} {}", budget[&d]);
    }
    let _ = writeln!(out, "classifier {}", model.classifier_params());
    let _ = writeln!(out, "total {}", model.params.total_count());
    Ok(out)
}

pub fn pretrain_cmd(data_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<String> {
    match cfg.precision {
        Precision::Float32 => pretrain_as::<f32>(data_dir, out, cfg),
        Precision::Float64 => pretrain_as::<f64>(data_dir, out, cfg),
    }
}

#[derive(Serialize)]
struct PretrainMetrics {
    steps: u64,
    epoch_losses: Vec<f64>,
}

fn pretrain_as<T: Scalar>(data_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<String> {
    let (subjects, n_roi) = load_subjects::<T>(data_dir, &cfg.data)?;
    let model_cfg = cfg.model_config().resolved(n_roi)?;
    let mut model = Model::<T>::new(&model_cfg, &cfg.data, cfg.seed)?;
    let train = cfg.train();
    let stats = pretrain(&mut model, &subjects, &train, &cfg.loss, &cfg.augmentation)?;
    let mut ck = Checkpoint::from_model(&model, cfg.seed, stats.steps, train.epochs as u64);
    ck.meta.config = Some(cfg.to_table());
    ck.save(out)?;
    let last = stats.epoch_losses.last().copied().unwrap_or(f64::NAN);
    record_run(
        &run_dir(out),
        "pretrain",
        cfg,
        PretrainMetrics {
            steps: stats.steps,
            epoch_losses: stats.epoch_losses,
        },
    )?;
    Ok(format!(
        "pretrained {} steps, final loss {last:.4}; checkpoint {}",
        ck.meta.step,
        out.display()
    ))
}

/// Config for a stage that starts from a checkpoint: the explicit file if
/// given, else the snapshot stored in the checkpoint, else defaults. Model
/// and data sections must agree with the checkpoint.
pub fn config_for_checkpoint<T: Scalar>(
    explicit: Option<RunConfig>,
    ck: &Checkpoint<T>,
) -> Result<RunConfig> {
    let mut cfg = match (explicit, &ck.meta.config) {
        (Some(c), _) => c,
        (None, Some(snapshot)) => RunConfig::parse(
            &toml::to_string(snapshot).unwrap_or_default(),
            Path::new("<checkpoint>"),
        )?,
        (None, None) => RunConfig::default(),
    };
    if cfg.data != ck.meta.data {
        return Err(Error::config(
            "data",
            "differs from the checkpoint's data settings",
        ));
    }
    let stored = &ck.meta.model;
    let wanted = cfg.model_config().resolved(stored.n_roi.unwrap_or(0))?;
    let same_backbone = wanted.encoder == stored.encoder && wanted.projector == stored.projector;
    if !same_backbone || wanted.classifier.hidden != stored.classifier.hidden {
        return Err(Error::config(
            "encoder",
            "architecture differs from the checkpoint",
        ));
    }
    cfg.model.n_roi = stored.n_roi;
    Ok(cfg)
}

pub struct FinetuneArgs<'a> {
    pub data_dir: &'a Path,
    pub init: Option<&'a Path>,
    pub task: &'a str,
    pub report: &'a Path,
    pub out: Option<&'a Path>,
}

pub fn finetune_cmd(
    args: &FinetuneArgs<'_>,
    explicit: Option<RunConfig>,
    seed: Option<u64>,
) -> Result<String> {
    let precision = match args.init {
        Some(p) => Checkpoint::<f64>::load(p).map(|ck| {
            ck.meta
                .config
                .as_ref()
                .and_then(|c| c.get("precision"))
                .and_then(|v| v.as_str())
                .map(|s| {
                    if s == "float64" {
                        Precision::Float64
                    } else {
                        Precision::Float32
                    }
                })
        })?,
        None => None,
    };
    let precision = explicit
        .as_ref()
        .map(|c| c.precision)
        .or(precision)
        .unwrap_or_default();
    match precision {
        Precision::Float32 => finetune_as::<f32>(args, explicit, seed),
        Precision::Float64 => finetune_as::<f64>(args, explicit, seed),
    }
}

fn finetune_as<T: Scalar>(
    args: &FinetuneArgs<'_>,
    explicit: Option<RunConfig>,
    seed: Option<u64>,
) -> Result<String> {
    let ck = args.init.map(Checkpoint::<T>::load).transpose()?;
    let mut cfg = match &ck {
        Some(ck) => config_for_checkpoint(explicit, ck)?,
        None => explicit.unwrap_or_default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (subjects, n_roi) = load_subjects::<T>(args.data_dir, &cfg.data)?;
    let model_cfg: ModelConfig = cfg.model_config().resolved(n_roi)?;
    let train = cfg.train();
    let pretrained = ck.as_ref().map(|c| &c.params);
    let init = || initial_model(&model_cfg, &cfg.data, cfg.seed, pretrained);
    let report = cross_validate(&init, &subjects, args.task, &train)?;
    write_text(args.report, &report.to_key_values())?;
    if let Some(out) = args.out {
        let mut model = init()?;
        let labels = task_labels(&subjects, args.task, model.n_classes())?;
        let all: Vec<usize> = (0..subjects.len()).collect();
        let cache = train
            .freeze_encoders
            .then(|| FeatureCache::build(&model, &subjects))
            .transpose()?;
        finetune(
            &mut model,
            &subjects,
            &labels,
            &all,
            &train,
            cfg.seed,
            cache.as_ref(),
            None,
        )?;
        let mut final_ck =
            Checkpoint::from_model(&model, cfg.seed, 0, train.finetune_epochs as u64);
        final_ck.meta.config = Some(cfg.to_table());
        final_ck.save(out)?;
    }
    record_run(
        &run_dir(args.report),
        "finetune",
        &cfg,
        summary_table(&report),
    )?;
    Ok(report.to_table())
}

fn summary_table(report: &MetricsReport) -> toml::Table {
    let mut t = toml::Table::new();
    for (name, s) in report.summary() {
        t.insert(format!("{name}_mean"), toml::Value::Float(s.mean));
        t.insert(format!("{name}_std"), toml::Value::Float(s.std));
    }
    t.insert(
        "evaluations".into(),
        toml::Value::Integer(report.entries.len() as i64),
    );
    t
}

pub struct DistillArgs<'a> {
    pub data_dir: &'a Path,
    pub teacher: &'a Path,
    pub student_domain: Domain,
    pub task: &'a str,
    pub report: &'a Path,
}

pub fn distill_cmd(
    args: &DistillArgs<'_>,
    explicit: Option<RunConfig>,
    seed: Option<u64>,
) -> Result<String> {
    let precision = explicit.as_ref().map(|c| c.precision).unwrap_or_default();
    match precision {
        Precision::Float32 => distill_as::<f32>(args, explicit, seed),
        Precision::Float64 => distill_as::<f64>(args, explicit, seed),
    }
}

fn distill_as<T: Scalar>(
    args: &DistillArgs<'_>,
    explicit: Option<RunConfig>,
    seed: Option<u64>,
) -> Result<String> {
    let ck = Checkpoint::<T>::load(args.teacher)?;
    if ck.meta.domains.len() != Domain::ALL.len() {
        return Err(Error::validation(
            "teacher checkpoint must cover all three domains",
        ));
    }
    let mut cfg = config_for_checkpoint(explicit, &ck)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (subjects, n_roi) = load_subjects::<T>(args.data_dir, &cfg.data)?;
    let model_cfg = cfg.model_config().resolved(n_roi)?;
    let train = cfg.train();
    let teacher_init = || {
        let mut m = Model::<T>::new(&model_cfg, &cfg.data, cfg.seed)?;
        m.load_matching(&ck.params, |_| true);
        Ok(m)
    };
    let student_init =
        || Model::<T>::with_domains(&model_cfg, &cfg.data, &[args.student_domain], cfg.seed);
    let hard = DistillConfig {
        lambda_soft: 0.0,
        ..cfg.distill.clone()
    };
    let (teacher, students) = cross_validate_distill(
        &teacher_init,
        &student_init,
        &subjects,
        args.task,
        &train,
        &[cfg.distill.clone(), hard],
    )?;
    write_text(args.report, &students[0].to_key_values())?;
    let mut stamp = toml::Table::new();
    stamp.insert(
        "teacher".into(),
        toml::Value::Table(summary_table(&teacher)),
    );
    stamp.insert(
        "student".into(),
        toml::Value::Table(summary_table(&students[0])),
    );
    stamp.insert(
        "hard_only_student".into(),
        toml::Value::Table(summary_table(&students[1])),
    );
    record_run(&run_dir(args.report), "distill", &cfg, stamp)?;
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {}", "model", metric_header());
    let _ = writeln!(out, "{:<18} {}", "teacher", metric_row(&teacher));
    let _ = writeln!(
        out,
        "{:<18} {}",
        format!("student/{}", args.student_domain),
        metric_row(&students[0])
    );
    let _ = writeln!(
        out,
        "{:<18} {}",
        "hard-only student",
        metric_row(&students[1])
    );
    Ok(out)
}

fn metric_header() -> String {
    format!(
        "{:>15} {:>15} {:>15} {:>15}",
        "AUROC", "Acc", "Recall", "Precision"
    )
}

fn metric_row(report: &MetricsReport) -> String {
    let s = report.summary();
    ["auroc", "accuracy", "recall", "precision"]
        .iter()
        .map(|k| format!("{:>15}", format!("{:.2}±{:.2}", s[k].mean, s[k].std)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn evaluate_cmd(report: &Path) -> Result<String> {
    let text = fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
    let parsed = MetricsReport::from_key_values(&text).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(report, message),
        other => other,
    })?;
    Ok(format!("{}\n{}\n", metric_header(), metric_row(&parsed)))
}
