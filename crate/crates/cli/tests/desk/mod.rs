//! Desk-scale learning criteria on the 200-subject synthetic cohort.
//!
//! Protocol, shared by every criterion here: 16 ROIs, fMRI unified to 50
//! samples and EEG to 100 (two 50-sample segments), small encoders, 40
//! pretraining epochs at batch 16, then 10-fold subject-level fine-tuning of
//! the projection heads and classifier on frozen encoders. Pretrained models
//! are cached per seed and shared between criteria.

use std::sync::OnceLock;
use std::time::Instant;

use mcsp_core::augmentation::AugmentationConfig;
use mcsp_core::data::{
    build_subject_inputs, generate_synthetic_cohort, task_name, DataConfig, Domain, SubjectInputs,
    SyntheticSpec,
};
use mcsp_core::distillation::DistillConfig;
use mcsp_core::encoders::EncoderConfig;
use mcsp_core::losses::LossConfig;
use mcsp_core::model::{ClassifierConfig, EncoderSet, Model, ModelConfig};
use mcsp_core::params::ParamSet;
use mcsp_core::projectors::ProjectorConfig;
use mcsp_core::training::{
    cross_validate, cross_validate_distill, initial_model, pretrain, TrainConfig,
};

use super::report;

type F = f32;

const SEEDS: usize = 5;
const N_ROI: usize = 16;

fn data_config() -> DataConfig {
    DataConfig {
        fmri_length: 50,
        eeg_unified_length: 100,
        segment_length: 50,
    }
}

fn model_config() -> ModelConfig {
    let enc = EncoderConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_enc: 16,
        d_ff: 32,
    };
    ModelConfig {
        n_roi: Some(N_ROI),
        encoder: EncoderSet {
            spatial: enc.clone(),
            temporal: enc.clone(),
            frequency: enc,
        },
        projector: ProjectorConfig { hidden: 32 },
        classifier: ClassifierConfig {
            hidden: 32,
            n_classes: 2,
        },
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        pretrain_batch: 16,
        finetune_epochs: 30,
        finetune_batch: 16,
        learning_rate: 1e-3,
        min_learning_rate: 1e-5,
        folds: 10,
        repeats: 1,
        freeze_encoders: true,
        seed,
        ..TrainConfig::default()
    }
}

fn cohort(seed: usize) -> &'static [SubjectInputs<F>] {
    static COHORTS: [OnceLock<Vec<SubjectInputs<F>>>; SEEDS] = [const { OnceLock::new() }; SEEDS];
    COHORTS[seed].get_or_init(|| {
        let mut spec = SyntheticSpec::new(200, 2, N_ROI, 1.0, seed as u64);
        spec.eeg_min_length = 1000;
        generate_synthetic_cohort::<F>(&spec)
            .unwrap()
            .iter()
            .map(|r| build_subject_inputs(r, &data_config()).unwrap())
            .collect()
    })
}

#[derive(Clone, Copy)]
enum Objective {
    /// Cross-domain terms only.
    CrossDomain,
    /// Cross-domain plus cross-modal terms (the full objective).
    Full,
}

fn pretrained(seed: usize, objective: Objective) -> &'static ParamSet<F> {
    static CD: [OnceLock<ParamSet<F>>; SEEDS] = [const { OnceLock::new() }; SEEDS];
    static FULL: [OnceLock<ParamSet<F>>; SEEDS] = [const { OnceLock::new() }; SEEDS];
    let slot = match objective {
        Objective::CrossDomain => &CD[seed],
        Objective::Full => &FULL[seed],
    };
    slot.get_or_init(|| {
        let mut train = train_config(seed as u64);
        if let Objective::CrossDomain = objective {
            for d in Domain::ALL {
                train.loss_weights.insert(format!("cm_{d}"), 0.0);
            }
        }
        let mut model = Model::<F>::new(&model_config(), &data_config(), seed as u64).unwrap();
        pretrain(
            &mut model,
            cohort(seed),
            &train,
            &LossConfig::default(),
            &AugmentationConfig::default(),
        )
        .unwrap();
        model.params
    })
}

/// Mean fold AUROC of fine-tuning from `init` (scratch when `None`).
fn finetune_auroc(seed: usize, init: Option<&ParamSet<F>>) -> f64 {
    let (cfg, data) = (model_config(), data_config());
    let build = || initial_model(&cfg, &data, seed as u64, init);
    cross_validate(
        &build,
        cohort(seed),
        &task_name(0),
        &train_config(seed as u64),
    )
    .unwrap()
    .mean_auroc()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.1}"))
        .collect::<Vec<_>>()
        .join("/")
}

pub fn pretraining_gain() {
    let t = Instant::now();
    let mut scratch = Vec::new();
    let mut pre = Vec::new();
    for seed in 0..3 {
        scratch.push(finetune_auroc(seed, None));
        pre.push(finetune_auroc(
            seed,
            Some(pretrained(seed, Objective::Full)),
        ));
    }
    let gain = mean(&pre) - mean(&scratch);
    let secs = t.elapsed().as_secs_f64();
    report(
        6,
        gain >= 3.0 && secs < 900.0,
        format!(
            "pretrained {:.2} vs scratch {:.2} AUROC, gain {gain:+.2} (seeds {} vs {}), {secs:.0}s",
            mean(&pre),
            mean(&scratch),
            list(&pre),
            list(&scratch)
        ),
    );
}

pub fn loss_ablation() {
    let mut ce = Vec::new();
    let mut cd = Vec::new();
    let mut cm = Vec::new();
    for seed in 0..3 {
        ce.push(finetune_auroc(seed, None));
        cd.push(finetune_auroc(
            seed,
            Some(pretrained(seed, Objective::CrossDomain)),
        ));
        cm.push(finetune_auroc(
            seed,
            Some(pretrained(seed, Objective::Full)),
        ));
    }
    let (a, b, c) = (mean(&ce), mean(&cd), mean(&cm));
    report(
        7,
        a <= b && b <= c,
        format!(
            "CE {a:.2} <= +CD {b:.2} <= +CM {c:.2} (seeds {} / {} / {})",
            list(&ce),
            list(&cd),
            list(&cm)
        ),
    );
}

pub fn distillation_gain() {
    let student_domain = Domain::Temporal;
    let (cfg, data) = (model_config(), data_config());
    let soft = DistillConfig::default();
    let hard = DistillConfig {
        lambda_soft: 0.0,
        ..soft.clone()
    };
    let mut distilled = Vec::new();
    let mut hard_only = Vec::new();
    for seed in 0..SEEDS {
        let weights = pretrained(seed, Objective::Full);
        let teacher = || initial_model(&cfg, &data, seed as u64, Some(weights));
        let student = || Model::<F>::with_domains(&cfg, &data, &[student_domain], seed as u64);
        let (_, students) = cross_validate_distill(
            &teacher,
            &student,
            cohort(seed),
            &task_name(0),
            &train_config(seed as u64),
            &[soft.clone(), hard.clone()],
        )
        .unwrap();
        distilled.push(students[0].mean_auroc());
        hard_only.push(students[1].mean_auroc());
    }
    let (d, h) = (mean(&distilled), mean(&hard_only));
    report(
        8,
        d >= h,
        format!(
            "{student_domain} student with soft targets {d:.2} vs hard-only {h:.2} AUROC (seeds {} vs {})",
            list(&distilled),
            list(&hard_only)
        ),
    );
}
