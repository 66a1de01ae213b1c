//! Supervised fine-tuning of the classifier (and optionally the backbone),
//! subject-level cross-validation, and distillation into single-domain students.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::data::{Domain, Modality, SubjectInputs};
use crate::distillation::{distill_logit_grad, softmax_t, DistillConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Model;
use crate::params::Grads;
use crate::rng;
use crate::scalar::Scalar;
use crate::training::folds::{assign_folds, split};
use crate::training::metrics::{evaluate_probs, MetricsReport};
use crate::training::optim::Adam;
use crate::training::parallel;
use crate::training::samples::{self, RunChoice};
use crate::training::TrainConfig;

/// Pooled encoder outputs of one run, per domain.
pub type RunFeatures<T> = BTreeMap<Domain, Vec<Matrix<T>>>;

/// Encoder outputs of every run of every subject, for training with a frozen backbone.
#[derive(Debug, Clone)]
pub struct FeatureCache<T> {
    /// `[subject][modality index][run]`.
    runs: Vec<[Vec<RunFeatures<T>>; 2]>,
}

impl<T: Scalar> FeatureCache<T> {
    pub fn build(model: &Model<T>, subjects: &[SubjectInputs<T>]) -> Result<Self> {
        let runs = parallel::map(subjects, |s| -> Result<[Vec<RunFeatures<T>>; 2]> {
            let mut out: [Vec<RunFeatures<T>>; 2] = [Vec::new(), Vec::new()];
            for m in Modality::ALL {
                for run in s.runs(m) {
                    let mut f = BTreeMap::new();
                    for &d in model.domains() {
                        f.insert(d, model.pooled(run, d)?);
                    }
                    out[m.index()].push(f);
                }
            }
            Ok(out)
        });
        Ok(FeatureCache {
            runs: runs.into_iter().collect::<Result<_>>()?,
        })
    }
}

/// Encoder outputs of one sample, taken from a cache or computed now.
fn features<T: Scalar>(
    model: &Model<T>,
    subject: &SubjectInputs<T>,
    index: usize,
    choice: &RunChoice,
    cache: Option<&FeatureCache<T>>,
) -> Result<[Option<RunFeatures<T>>; 2]> {
    let mut out = [None, None];
    for m in Modality::ALL {
        let Some(r) = choice[m.index()] else { continue };
        out[m.index()] = Some(match cache {
            Some(c) => c.runs[index][m.index()][r].clone(),
            None => {
                let run = &subject.runs(m)[r];
                let mut f = BTreeMap::new();
                for &d in model.domains() {
                    f.insert(d, model.pooled(run, d)?);
                }
                f
            }
        });
    }
    Ok(out)
}

/// Head forward pass on cached features; returns the logits and the input
/// variables standing for each pooled vector.
fn head<'p, T: Scalar>(
    model: &'p Model<T>,
    feats: &[Option<RunFeatures<T>>; 2],
) -> Result<(Tape<'p, T>, Var, Vec<(Modality, Domain, Vec<Var>)>)> {
    let mut tape = Tape::new(&model.params);
    let mut inputs = Vec::new();
    let mut per_domain = Vec::new();
    for &d in model.domains() {
        let mut hs = Vec::new();
        for m in Modality::ALL {
            let Some(f) = &feats[m.index()] else { continue };
            let vars: Vec<Var> = f[&d].iter().map(|p| tape.input(p.clone())).collect();
            hs.push(model.projector(d, m).forward(&mut tape, &vars)?);
            inputs.push((m, d, vars));
        }
        per_domain.push(hs);
    }
    let logits = model.classify(&mut tape, &per_domain)?;
    Ok((tape, logits, inputs))
}

/// Class probabilities of one sample.
fn sample_logits<T: Scalar>(
    model: &Model<T>,
    feats: &[Option<RunFeatures<T>>; 2],
) -> Result<Vec<T>> {
    let (tape, logits, _) = head(model, feats)?;
    Ok(tape.value(logits).as_slice().to_vec())
}

/// Mean class probabilities over every run combination of a subject.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    subject: &SubjectInputs<T>,
    index: usize,
    cache: Option<&FeatureCache<T>>,
) -> Result<Vec<f64>> {
    let choices = samples::all_choices(subject);
    if choices.is_empty() {
        return Err(Error::validation(format!(
            "subject {} has no runs",
            subject.subject_id
        )));
    }
    let mut acc = vec![0.0; model.n_classes()];
    for c in &choices {
        let logits = sample_logits(model, &features(model, subject, index, c, cache)?)?;
        for (a, p) in acc.iter_mut().zip(softmax_t(&logits, 1.0)) {
            *a += p.as_f64() / choices.len() as f64;
        }
    }
    Ok(acc)
}

/// Label of every subject for `task` (`None` where missing). Errors if no
/// subject carries the task or a label falls outside the classifier's range.
pub fn task_labels<T: Scalar>(
    subjects: &[SubjectInputs<T>],
    task: &str,
    n_classes: usize,
) -> Result<Vec<Option<usize>>> {
    if !subjects.iter().any(|s| s.labels.contains_key(task)) {
        return Err(Error::validation(format!(
            "label column `{task}` is missing"
        )));
    }
    subjects
        .iter()
        .map(|s| match s.labels.get(task) {
            None => Ok(None),
            Some(&y) if y >= 0 && (y as usize) < n_classes => Ok(Some(y as usize)),
            Some(&y) => Err(Error::validation(format!(
                "subject {} has label {y} for `{task}`, outside 0..{n_classes}",
                s.subject_id
            ))),
        })
        .collect()
}

/// Soft targets for student training: the teacher, its features and the mixing config.
pub struct Teacher<'a, T> {
    pub model: &'a Model<T>,
    pub cache: Option<&'a FeatureCache<T>>,
    pub cfg: DistillConfig,
}

/// Trains `model` on `train_idx` (subjects with a label). With a teacher the
/// per-sample loss is the soft/hard distillation mix, otherwise cross-entropy.
/// Returns the mean loss of each epoch.
#[allow(clippy::too_many_arguments)]
pub fn finetune<T: Scalar>(
    model: &mut Model<T>,
    subjects: &[SubjectInputs<T>],
    labels: &[Option<usize>],
    train_idx: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    cache: Option<&FeatureCache<T>>,
    teacher: Option<&Teacher<'_, T>>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&s| labels[s].is_some())
        .collect();
    if idx.is_empty() {
        return Err(Error::validation("no labelled training subjects"));
    }
    let frozen = cfg.freeze_encoders;
    if cache.is_some() && !frozen {
        return Err(Error::validation("cached features require frozen encoders"));
    }
    let hard = DistillConfig {
        lambda_soft: 0.0,
        distill_temperature: 1.0,
    };
    let loss_cfg = teacher.map_or(hard, |t| t.cfg.clone());
    let per_epoch = idx.len().div_ceil(cfg.finetune_batch);
    let total_steps = cfg.finetune_epochs * per_epoch;
    let mut adam = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.finetune_epochs);
    for epoch in 0..cfg.finetune_epochs {
        let mut order = idx.clone();
        order.shuffle(&mut rng::stream(seed, "finetune-order", epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.finetune_batch) {
            let scale = T::of(1.0 / batch.len() as f64);
            let m: &Model<T> = model;
            let per_sample = |&s: &usize| -> Result<(f64, Grads<T>)> {
                let choice = samples::draw(&subjects[s], seed, "finetune-runs", epoch, s);
                let feats = features(m, &subjects[s], s, &choice, cache)?;
                let y = labels[s].expect("filtered to labelled subjects");
                let target = match teacher {
                    Some(t) => {
                        let tf = features(t.model, &subjects[s], s, &choice, t.cache)?;
                        softmax_t(&sample_logits(t.model, &tf)?, t.cfg.distill_temperature)
                    }
                    None => (0..m.n_classes())
                        .map(|k| if k == y { T::one() } else { T::zero() })
                        .collect(),
                };
                let (tape, logits, inputs) = head(m, &feats)?;
                let (loss, g) =
                    distill_logit_grad(&target, tape.value(logits).as_slice(), y, &loss_cfg)?;
                let mut grads = Grads::new(&m.params);
                let node = tape.backward(logits, Matrix::row_vector(g).scale(scale), &mut grads);
                if !frozen {
                    for (modality, d, vars) in &inputs {
                        let d_pooled: Vec<Matrix<T>> = vars
                            .iter()
                            .map(|&v| {
                                node.wrt(v)
                                    .cloned()
                                    .unwrap_or_else(|| Matrix::zeros(1, tape.value(v).cols()))
                            })
                            .collect();
                        let run = &subjects[s].runs(*modality)
                            [choice[modality.index()].expect("feature present")];
                        m.backward_parts(run, *d, &d_pooled, &mut grads)?;
                    }
                }
                Ok((loss.as_f64(), grads))
            };
            let mut grads = Grads::new(&model.params);
            for wave in batch.chunks(parallel::worker_count()) {
                for r in parallel::map(wave, per_sample) {
                    let (l, g) = r?;
                    epoch_loss += l / idx.len() as f64;
                    grads.merge(&g);
                }
            }
            let lr = cfg.learning_rate_at(step, total_steps);
            adam.step(&mut model.params, &grads, lr, |name| {
                !frozen || !Model::<T>::is_encoder_param(name)
            });
            step += 1;
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Metrics of `model` on the labelled subjects of `test_idx`.
pub fn evaluate_subjects<T: Scalar>(
    model: &Model<T>,
    subjects: &[SubjectInputs<T>],
    labels: &[Option<usize>],
    test_idx: &[usize],
    cache: Option<&FeatureCache<T>>,
) -> Result<crate::training::metrics::BinaryMetrics> {
    let idx: Vec<usize> = test_idx
        .iter()
        .copied()
        .filter(|&s| labels[s].is_some())
        .collect();
    let probs = parallel::map(&idx, |&s| predict(model, &subjects[s], s, cache));
    let probs = probs.into_iter().collect::<Result<Vec<_>>>()?;
    let y: Vec<usize> = idx.iter().map(|&s| labels[s].expect("labelled")).collect();
    evaluate_probs(&probs, &y)
}

fn fold_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    use rand::RngCore;
    rng::stream(seed, "fold", ((repeat as u64) << 32) | fold as u64).next_u64()
}

fn check_no_leak<T>(subjects: &[SubjectInputs<T>], train: &[usize], test: &[usize]) -> Result<()> {
    let train_ids: std::collections::BTreeSet<&str> = train
        .iter()
        .map(|&s| subjects[s].subject_id.as_str())
        .collect();
    if let Some(&s) = test
        .iter()
        .find(|&&s| train_ids.contains(subjects[s].subject_id.as_str()))
    {
        return Err(Error::validation(format!(
            "subject {} appears in both train and test",
            subjects[s].subject_id
        )));
    }
    Ok(())
}

fn frozen_cache<T: Scalar>(
    model: &Model<T>,
    subjects: &[SubjectInputs<T>],
    cfg: &TrainConfig,
) -> Result<Option<FeatureCache<T>>> {
    cfg.freeze_encoders
        .then(|| FeatureCache::build(model, subjects))
        .transpose()
}

/// `repeats × folds` subject-level cross-validation. `init` builds the
/// starting model for each fold and must be deterministic.
pub fn cross_validate<T: Scalar>(
    init: &(dyn Fn() -> Result<Model<T>> + Sync),
    subjects: &[SubjectInputs<T>],
    task: &str,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let probe = init()?;
    let labels = task_labels(subjects, task, probe.n_classes())?;
    let cache = frozen_cache(&probe, subjects, cfg)?;
    let mut report = MetricsReport::default();
    for repeat in 0..cfg.repeats {
        let assignment = assign_folds(subjects.len(), cfg.folds, cfg.seed, repeat)?;
        for fold in 0..cfg.folds {
            let (train, test) = split(&assignment, fold);
            check_no_leak(subjects, &train, &test)?;
            let mut model = init()?;
            finetune(
                &mut model,
                subjects,
                &labels,
                &train,
                cfg,
                fold_seed(cfg.seed, repeat, fold),
                cache.as_ref(),
                None,
            )?;
            report.push(evaluate_subjects(
                &model,
                subjects,
                &labels,
                &test,
                cache.as_ref(),
            )?);
        }
    }
    Ok(report)
}

/// Cross-validated distillation. In every fold a three-domain teacher is
/// fine-tuned from `teacher_init`, then one single-domain student per entry
/// of `student_cfgs` is trained from scratch against it and evaluated.
/// Returns the teacher's report followed by one report per student config.
pub fn cross_validate_distill<T: Scalar>(
    teacher_init: &(dyn Fn() -> Result<Model<T>> + Sync),
    student_init: &(dyn Fn() -> Result<Model<T>> + Sync),
    subjects: &[SubjectInputs<T>],
    task: &str,
    cfg: &TrainConfig,
    student_cfgs: &[DistillConfig],
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    cfg.validate()?;
    for c in student_cfgs {
        c.validate()?;
    }
    let teacher0 = teacher_init()?;
    let student0 = student_init()?;
    if student0.n_classes() != teacher0.n_classes() {
        return Err(Error::validation(
            "teacher and student disagree on the number of classes",
        ));
    }
    let labels = task_labels(subjects, task, teacher0.n_classes())?;
    let teacher_cache = frozen_cache(&teacher0, subjects, cfg)?;
    let student_cache = frozen_cache(&student0, subjects, cfg)?;
    let mut teacher_report = MetricsReport::default();
    let mut student_reports = vec![MetricsReport::default(); student_cfgs.len()];
    for repeat in 0..cfg.repeats {
        let assignment = assign_folds(subjects.len(), cfg.folds, cfg.seed, repeat)?;
        for fold in 0..cfg.folds {
            let (train, test) = split(&assignment, fold);
            check_no_leak(subjects, &train, &test)?;
            let seed = fold_seed(cfg.seed, repeat, fold);
            let mut teacher = teacher_init()?;
            finetune(
                &mut teacher,
                subjects,
                &labels,
                &train,
                cfg,
                seed,
                teacher_cache.as_ref(),
                None,
            )?;
            teacher_report.push(evaluate_subjects(
                &teacher,
                subjects,
                &labels,
                &test,
                teacher_cache.as_ref(),
            )?);
            for (k, dcfg) in student_cfgs.iter().enumerate() {
                let t = Teacher {
                    model: &teacher,
                    cache: teacher_cache.as_ref(),
                    cfg: dcfg.clone(),
                };
                let mut student = student_init()?;
                finetune(
                    &mut student,
                    subjects,
                    &labels,
                    &train,
                    cfg,
                    seed,
                    student_cache.as_ref(),
                    Some(&t),
                )?;
                student_reports[k].push(evaluate_subjects(
                    &student,
                    subjects,
                    &labels,
                    &test,
                    student_cache.as_ref(),
                )?);
            }
        }
    }
    Ok((teacher_report, student_reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::pretrain::tests::tiny_setup;

    fn quick(freeze: bool) -> TrainConfig {
        TrainConfig {
            finetune_epochs: 3,
            finetune_batch: 4,
            folds: 3,
            repeats: 1,
            freeze_encoders: freeze,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn missing_label_column_is_a_validation_error() {
        let (_, subjects) = tiny_setup(4, 1);
        assert!(matches!(
            task_labels(&subjects, "nope", 2),
            Err(Error::Validation(_))
        ));
        let labels = task_labels(&subjects, &crate::data::task_name(0), 2).unwrap();
        assert!(labels.iter().all(Option::is_some));
    }

    #[test]
    fn frozen_training_leaves_encoders_untouched() {
        let (model, subjects) = tiny_setup(6, 2);
        let labels = task_labels(&subjects, &crate::data::task_name(0), 2).unwrap();
        let cache = FeatureCache::build(&model, &subjects).unwrap();
        let mut m = model.clone();
        let idx: Vec<usize> = (0..6).collect();
        finetune(
            &mut m,
            &subjects,
            &labels,
            &idx,
            &quick(true),
            1,
            Some(&cache),
            None,
        )
        .unwrap();
        for (id, name, v) in model.params.iter() {
            let moved = m.params.get(id) != v;
            assert_eq!(moved, !Model::<f64>::is_encoder_param(name), "{name}");
        }
        // cached and recomputed features give the same model
        let mut direct = model.clone();
        finetune(
            &mut direct,
            &subjects,
            &labels,
            &idx,
            &quick(true),
            1,
            None,
            None,
        )
        .unwrap();
        assert_eq!(direct.params, m.params);
    }

    #[test]
    fn end_to_end_finetune_moves_encoders_and_reduces_loss() {
        let (model, subjects) = tiny_setup(8, 3);
        let labels = task_labels(&subjects, &crate::data::task_name(0), 2).unwrap();
        let mut m = model.clone();
        let idx: Vec<usize> = (0..8).collect();
        let cfg = TrainConfig {
            finetune_epochs: 15,
            learning_rate: 3e-3,
            ..quick(false)
        };
        let hist = finetune(&mut m, &subjects, &labels, &idx, &cfg, 1, None, None).unwrap();
        assert!(hist.last().unwrap() < &hist[0], "{hist:?}");
        let id = m.params.id("enc.temporal.l0.q.w").unwrap();
        assert_ne!(m.params.get(id), model.params.get(id));
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (model, subjects) = tiny_setup(6, 4);
        let init = || Ok(model.clone());
        let a = cross_validate(&init, &subjects, &crate::data::task_name(0), &quick(true)).unwrap();
        let b = cross_validate(&init, &subjects, &crate::data::task_name(0), &quick(true)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries.len(), 3);
    }

    #[test]
    fn distillation_runs_per_student_config() {
        let (teacher, subjects) = tiny_setup(6, 5);
        let student =
            Model::<f64>::with_domains(&teacher.cfg, &teacher.data, &[Domain::Temporal], 9)
                .unwrap();
        let t_init = || Ok(teacher.clone());
        let s_init = || Ok(student.clone());
        let cfgs = [
            DistillConfig::default(),
            DistillConfig {
                lambda_soft: 0.0,
                ..DistillConfig::default()
            },
        ];
        let (t, s) = cross_validate_distill(
            &t_init,
            &s_init,
            &subjects,
            &crate::data::task_name(0),
            &quick(true),
            &cfgs,
        )
        .unwrap();
        assert_eq!(t.entries.len(), 3);
        assert_eq!(s.len(), 2);

        let labels = task_labels(&subjects, &crate::data::task_name(0), 2).unwrap();
        let idx: Vec<usize> = (0..6).collect();
        let train = |cfg: &DistillConfig| {
            let t = Teacher {
                model: &teacher,
                cache: None,
                cfg: cfg.clone(),
            };
            let mut m = student.clone();
            finetune(
                &mut m,
                &subjects,
                &labels,
                &idx,
                &quick(false),
                3,
                None,
                Some(&t),
            )
            .unwrap();
            m.params
        };
        assert_ne!(train(&cfgs[0]), train(&cfgs[1]));
        // a hard-only student ignores the teacher entirely
        let mut plain = student.clone();
        finetune(
            &mut plain,
            &subjects,
            &labels,
            &idx,
            &quick(false),
            3,
            None,
            None,
        )
        .unwrap();
        assert_eq!(train(&cfgs[1]), plain.params);
    }
}
