//! Self-supervised pretraining with the cross-domain and cross-modal objectives.
//!
//! A step runs in three passes so that no full computation graph has to be
//! kept per sample: a forward pass caches pooled encoder outputs and
//! projections, the batch losses give gradients w.r.t. every projection,
//! and a second pass re-runs each encoder input with its gradient as seed.

use rand::seq::SliceRandom;

use crate::augmentation::{augment_run, AugmentationConfig};
use crate::data::{Domain, Modality, RunInputs, SubjectInputs};
use crate::error::{Error, Result};
use crate::losses::{cd_ssl_logits, cm_ssl, LossConfig};
use crate::matrix::Matrix;
use crate::model::{Model, RunProjection};
use crate::params::Grads;
use crate::rng;
use crate::scalar::Scalar;
use crate::training::config::{cd_term, cm_term, TrainConfig};
use crate::training::optim::Adam;
use crate::training::parallel;
use crate::training::samples::{self, RunChoice};

/// Items whose gradients are summed sequentially before joining the batch total.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainStats {
    /// Mean total objective over the batches of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

pub(crate) struct Item {
    subject: usize,
    choice: RunChoice,
    epoch: usize,
}

/// Anchor and augmented projections of one modality of an item.
struct Views<T> {
    anchor: RunProjection<T>,
    augmented: RunProjection<T>,
}

fn augmented<T: Scalar>(
    model: &Model<T>,
    run: &RunInputs<T>,
    aug: &AugmentationConfig,
    seed: u64,
    item: &Item,
    n_subjects: usize,
) -> Result<RunInputs<T>> {
    let key = ((item.epoch * n_subjects + item.subject) * 2 + run.modality.index()) as u64;
    let mut r = rng::stream(seed ^ aug.seed, "augment", key);
    augment_run(run, aug, &model.data, &mut r)
}

fn run_of<'a, T: Scalar>(
    subjects: &'a [SubjectInputs<T>],
    item: &Item,
    m: Modality,
) -> Option<&'a RunInputs<T>> {
    item.choice[m.index()].map(|i| &subjects[item.subject].runs(m)[i])
}

/// Pretrains `model` in place. Deterministic for a given `train.seed`.
pub fn pretrain<T: Scalar>(
    model: &mut Model<T>,
    subjects: &[SubjectInputs<T>],
    train: &TrainConfig,
    loss: &LossConfig,
    aug: &AugmentationConfig,
) -> Result<PretrainStats> {
    train.validate()?;
    loss.validate()?;
    aug.validate()?;
    if subjects.is_empty()
        || subjects
            .iter()
            .all(|s| s.fmri.is_empty() && s.eeg.is_empty())
    {
        return Err(Error::validation(
            "pretraining needs at least one subject with a run",
        ));
    }
    let seed = train.seed;
    let n = subjects.len();
    let batches_per_epoch = n.div_ceil(train.pretrain_batch);
    let total_steps = train.epochs * batches_per_epoch;
    let mut adam = Adam::new(
        &model.params,
        train.adam_beta1,
        train.adam_beta2,
        train.adam_eps,
    );
    let mut stats = PretrainStats {
        epoch_losses: Vec::with_capacity(train.epochs),
        steps: 0,
    };
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n)
            .filter(|&s| !(subjects[s].fmri.is_empty() && subjects[s].eeg.is_empty()))
            .collect();
        order.shuffle(&mut rng::stream(seed, "order", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(train.pretrain_batch) {
            let items: Vec<Item> = batch
                .iter()
                .map(|&s| Item {
                    subject: s,
                    choice: samples::draw(&subjects[s], seed, "pretrain-runs", epoch, s),
                    epoch,
                })
                .collect();
            let (value, grads) = batch_gradients(model, subjects, &items, train, loss, aug)?;
            let lr = train.learning_rate_at(stats.steps as usize, total_steps);
            adam.step(&mut model.params, &grads, lr, |_| true);
            stats.steps += 1;
            epoch_loss += value;
            batches += 1;
        }
        stats.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(stats)
}

/// Objective value and parameter gradients of one batch.
pub(crate) fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    subjects: &[SubjectInputs<T>],
    items: &[Item],
    train: &TrainConfig,
    loss: &LossConfig,
    aug: &AugmentationConfig,
) -> Result<(f64, Grads<T>)> {
    let seed = train.seed;
    let n = subjects.len();
    let forward: Vec<Result<[Option<Views<T>>; 2]>> = parallel::map(items, |item| {
        let mut out = [None, None];
        for m in Modality::ALL {
            if let Some(run) = run_of(subjects, item, m) {
                let aug_run = augmented(model, run, aug, seed, item, n)?;
                out[m.index()] = Some(Views {
                    anchor: model.project_run(run)?,
                    augmented: model.project_run(&aug_run)?,
                });
            }
        }
        Ok(out)
    });
    let views = forward.into_iter().collect::<Result<Vec<_>>>()?;

    // d objective / d projection, per item, modality, view (0 anchor, 1 augmented) and domain
    let domains = model.domains().to_vec();
    let zero = || Matrix::<T>::zeros(1, crate::projectors::PROJECTION_DIM);
    let mut dh: Vec<[[Vec<Matrix<T>>; 2]; 2]> = (0..items.len())
        .map(|_| {
            std::array::from_fn(|_| {
                std::array::from_fn(|_| domains.iter().map(|_| zero()).collect())
            })
        })
        .collect();
    let mut total = 0.0;

    if domains.len() == 3 {
        for m in Modality::ALL {
            let w = train.weight(&cd_term(m));
            let rows: Vec<usize> = (0..items.len())
                .filter(|&i| views[i][m.index()].is_some())
                .collect();
            if w == 0.0 || rows.is_empty() {
                continue;
            }
            let stack = |view: usize, d: Domain| {
                let parts: Vec<&Matrix<T>> = rows
                    .iter()
                    .map(|&i| {
                        let v = views[i][m.index()].as_ref().expect("row has modality");
                        if view == 0 {
                            &v.anchor.h[&d]
                        } else {
                            &v.augmented.h[&d]
                        }
                    })
                    .collect();
                Matrix::vcat(&parts)
            };
            let anchors: Vec<Matrix<T>> = Domain::ALL.iter().map(|&d| stack(0, d)).collect();
            let augs: Vec<Matrix<T>> = Domain::ALL.iter().map(|&d| stack(1, d)).collect();
            let lg = cd_ssl_logits(
                [&anchors[0], &anchors[1], &anchors[2]],
                [&augs[0], &augs[1], &augs[2]],
                loss,
            )?;
            total += w * lg.value.as_f64();
            let wt = T::of(w);
            for (k, &i) in rows.iter().enumerate() {
                for d in 0..3 {
                    dh[i][m.index()][0][d]
                        .scaled_add_assign(wt, &Matrix::row_vector(lg.grads[d].row(k).to_vec()));
                    dh[i][m.index()][1][d].scaled_add_assign(
                        wt,
                        &Matrix::row_vector(lg.grads[3 + d].row(k).to_vec()),
                    );
                }
            }
        }
    }

    let paired: Vec<usize> = (0..items.len())
        .filter(|&i| views[i].iter().all(Option::is_some))
        .collect();
    if !paired.is_empty() {
        for (k_d, &d) in domains.iter().enumerate() {
            let w = train.weight(&cm_term(d));
            if w == 0.0 {
                continue;
            }
            let stack = |m: Modality| {
                let parts: Vec<&Matrix<T>> = paired
                    .iter()
                    .map(|&i| &views[i][m.index()].as_ref().expect("paired").anchor.h[&d])
                    .collect();
                Matrix::vcat(&parts)
            };
            let lg = cm_ssl(&stack(Modality::Fmri), &stack(Modality::Eeg), loss, d)?;
            total += w * lg.value.as_f64();
            let wt = T::of(w);
            for (k, &i) in paired.iter().enumerate() {
                for m in Modality::ALL {
                    dh[i][m.index()][0][k_d].scaled_add_assign(
                        wt,
                        &Matrix::row_vector(lg.grads[m.index()].row(k).to_vec()),
                    );
                }
            }
        }
    }

    let idx: Vec<usize> = (0..items.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(GRAD_CHUNK).collect();
    let mut grads = Grads::new(&model.params);
    for wave in chunks.chunks(parallel::worker_count().max(1)) {
        let partial: Vec<Result<Grads<T>>> = parallel::map(wave, |chunk| {
            let mut g = Grads::new(&model.params);
            for &i in chunk.iter() {
                let item = &items[i];
                for m in Modality::ALL {
                    let (Some(run), Some(v)) =
                        (run_of(subjects, item, m), views[i][m.index()].as_ref())
                    else {
                        continue;
                    };
                    let aug_run = augmented(model, run, aug, seed, item, n)?;
                    for (k_d, &d) in domains.iter().enumerate() {
                        for (view, source, proj) in
                            [(0, run, &v.anchor), (1, &aug_run, &v.augmented)]
                        {
                            let seed_grad = &dh[i][m.index()][view][k_d];
                            if seed_grad.as_slice().iter().all(|x| *x == T::zero()) {
                                continue;
                            }
                            model.backward_projection(
                                source,
                                d,
                                &proj.pooled[&d],
                                seed_grad,
                                true,
                                &mut g,
                            )?;
                        }
                    }
                }
            }
            Ok(g)
        });
        for g in partial {
            grads.merge(&g?);
        }
    }
    Ok((total, grads))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{build_subject_inputs, generate_synthetic_cohort, DataConfig, SyntheticSpec};
    use crate::encoders::EncoderConfig;
    use crate::model::{ClassifierConfig, EncoderSet, ModelConfig};
    use crate::projectors::ProjectorConfig;

    pub(crate) fn tiny_setup(
        n_subjects: usize,
        seed: u64,
    ) -> (Model<f64>, Vec<SubjectInputs<f64>>) {
        let mut spec = SyntheticSpec::new(n_subjects, 2, 4, 1.0, seed);
        spec.eeg_min_length = 400;
        let data = DataConfig {
            fmri_length: 40,
            eeg_unified_length: 80,
            segment_length: 40,
        };
        let subjects = generate_synthetic_cohort::<f64>(&spec)
            .unwrap()
            .iter()
            .map(|r| build_subject_inputs(r, &data).unwrap())
            .collect();
        let enc = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_enc: 4,
            d_ff: 8,
        };
        let cfg = ModelConfig {
            n_roi: Some(4),
            encoder: EncoderSet {
                spatial: enc.clone(),
                temporal: enc.clone(),
                frequency: enc,
            },
            projector: ProjectorConfig { hidden: 8 },
            classifier: ClassifierConfig::default(),
        };
        (Model::new(&cfg, &data, seed).unwrap(), subjects)
    }

    fn quick_train(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            pretrain_batch: 4,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (mut model, _) = tiny_setup(2, 1);
        let r = pretrain(
            &mut model,
            &[],
            &quick_train(0),
            &LossConfig::default(),
            &AugmentationConfig::default(),
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let (m0, subjects) = tiny_setup(6, 2);
        let run = || {
            let mut m = m0.clone();
            let stats = pretrain(
                &mut m,
                &subjects,
                &quick_train(5),
                &LossConfig::default(),
                &AugmentationConfig::default(),
            )
            .unwrap();
            (m.params, stats)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.steps, 4);
        assert_ne!(a, m0.params);
    }

    #[test]
    fn single_modality_objective_has_no_cross_modal_terms() {
        let (model, subjects) = tiny_setup(4, 3);
        let fmri_only: Vec<_> = subjects
            .into_iter()
            .map(|s| s.without(Modality::Eeg))
            .collect();
        let items: Vec<Item> = (0..4)
            .map(|s| Item {
                subject: s,
                choice: [Some(0), None],
                epoch: 0,
            })
            .collect();
        let base = quick_train(1);
        let (full, _) = batch_gradients(
            &model,
            &fmri_only,
            &items,
            &base,
            &LossConfig::default(),
            &AugmentationConfig::default(),
        )
        .unwrap();
        let mut no_cm = base.clone();
        for d in Domain::ALL {
            no_cm.loss_weights.insert(cm_term(d), 0.0);
        }
        let (without, _) = batch_gradients(
            &model,
            &fmri_only,
            &items,
            &no_cm,
            &LossConfig::default(),
            &AugmentationConfig::default(),
        )
        .unwrap();
        assert_eq!(full, without);
        assert!(full > 0.0);
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let (model, subjects) = tiny_setup(3, 4);
        let items = || -> Vec<Item> {
            (0..3)
                .map(|s| Item {
                    subject: s,
                    choice: [Some(0), Some(1)],
                    epoch: 0,
                })
                .collect()
        };
        let train = quick_train(1);
        // the stop-gradient on the distillation teacher makes the analytic
        // gradient differ from the derivative of the value on purpose
        let loss = LossConfig {
            teacher_stopgrad: false,
            ..LossConfig::default()
        };
        let aug = AugmentationConfig::default();
        let (_, grads) = batch_gradients(&model, &subjects, &items(), &train, &loss, &aug).unwrap();
        let value = |m: &Model<f64>| {
            batch_gradients(m, &subjects, &items(), &train, &loss, &aug)
                .unwrap()
                .0
        };
        for name in [
            "enc.temporal.l0.q.w",
            "enc.spatial.in.w",
            "proj.frequency.eeg.l1.w",
            "enc.frequency.out.w",
        ] {
            let id = model.params.id(name).unwrap();
            let g = grads.get(id).unwrap().as_slice()[1];
            let h = 1e-5;
            let mut plus = model.clone();
            plus.params.get_mut(id).as_mut_slice()[1] += h;
            let mut minus = model.clone();
            minus.params.get_mut(id).as_mut_slice()[1] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            assert!(
                (fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1e-4),
                "{name}: fd {fd} vs {g}"
            );
        }
    }
}
