//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line.
//!
//! Run with `cargo test -p mcsp-cli --test acceptance -- --nocapture` to see
//! the lines; MCSP_THREADS controls the worker count of the training runs.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use tempfile::TempDir;

use mcsp_core::augmentation::{drop_weak_edges, AugmentationConfig};
use mcsp_core::connectivity::{graph_from_connectivity, pearson_connectivity};
use mcsp_core::data::{
    fft_magnitude, one_sided_magnitude, total_cross_pairs, DataConfig, Domain, Modality,
    RoiTimeSeries, RunInputs, SubjectRecord,
};
use mcsp_core::distillation::{distill_logit_grad, distill_step_loss, softmax_t, DistillConfig};
use mcsp_core::losses::{
    cd_ssl_logits, cm_ssl, cross_domain_contrastive, cross_modal_consistency,
    distill_contrastive_term, intra_domain_contrastive, intra_domain_cross_modal_distill, softmax,
    softmax_backward, LossConfig, LossGrad,
};
use mcsp_core::matrix::Matrix;
use mcsp_core::model::{parameter_budget, ModelConfig};
use mcsp_core::rng;

mod desk;

fn report(n: usize, pass: bool, detail: impl AsRef<str>) {
    println!(
        "criterion {n}: {} {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

fn random(n: usize, d: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng::seeded(seed);
    Matrix::from_fn(n, d, |_, _| r.gen_range(-2.0..2.0))
}

/// Worst norm-wise relative error `|g - fd| / |fd|` over all inputs.
fn fd_relative_error(inputs: &[Matrix<f64>], f: impl Fn(&[Matrix<f64>]) -> LossGrad<f64>) -> f64 {
    let h = 1e-6;
    let analytic = f(inputs).grads;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let mut fd = Matrix::zeros(x.rows(), x.cols());
        for idx in 0..x.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].as_mut_slice()[idx] += h;
            minus[k].as_mut_slice()[idx] -= h;
            fd.as_mut_slice()[idx] = (f(&plus).value - f(&minus).value) / (2.0 * h);
        }
        let diff = analytic[k].sub(&fd).frobenius();
        let scale = fd.frobenius().max(analytic[k].frobenius());
        worst = worst.max(if scale == 0.0 { diff } else { diff / scale });
    }
    worst
}

fn through_softmax(
    a: &[Matrix<f64>],
    l: impl Fn(&[Matrix<f64>]) -> LossGrad<f64>,
) -> LossGrad<f64> {
    let z: Vec<Matrix<f64>> = a.iter().map(softmax).collect();
    let out = l(&z);
    LossGrad {
        value: out.value,
        grads: out
            .grads
            .iter()
            .zip(&z)
            .map(|(g, z)| softmax_backward(z, g))
            .collect(),
    }
}

#[test]
fn criterion_01_gradient_fidelity() {
    let t = Instant::now();
    let cfg = LossConfig::default();
    let open = LossConfig {
        teacher_stopgrad: false,
        ..cfg.clone()
    };
    let h = |s| random(4, 16, s);
    let mut errors: Vec<(&str, f64)> = Vec::new();

    errors.push((
        "intra-domain",
        fd_relative_error(&[h(1), h(2)], |a| {
            through_softmax(a, |z| intra_domain_contrastive(&z[0], &z[1], &cfg).unwrap())
        }),
    ));
    errors.push((
        "cross-domain",
        fd_relative_error(&[h(3), h(4)], |a| {
            through_softmax(a, |z| cross_domain_contrastive(&z[0], &z[1], &cfg).unwrap())
        }),
    ));
    errors.push((
        "cd-ssl",
        fd_relative_error(&[h(5), h(6), h(7), h(8), h(9), h(10)], |a| {
            cd_ssl_logits([&a[0], &a[1], &a[2]], [&a[3], &a[4], &a[5]], &cfg).unwrap()
        }),
    ));
    errors.push((
        "cross-modal distill",
        fd_relative_error(&[h(11), h(12)], |a| {
            through_softmax(a, |z| {
                intra_domain_cross_modal_distill(&z[0], &z[1], &open).unwrap()
            })
        }),
    ));
    errors.push((
        "consistency",
        fd_relative_error(&[h(13), h(14), h(15)], |a| {
            through_softmax(a, |z| cross_modal_consistency(&z[0], &z[1], &z[2]).unwrap())
        }),
    ));
    for domain in Domain::ALL {
        errors.push((
            "cm-ssl",
            fd_relative_error(&[h(16), h(17)], |a| {
                cm_ssl(&a[0], &a[1], &open, domain).unwrap()
            }),
        ));
    }
    // distillation step loss w.r.t. student logits, teacher held fixed
    let teacher = softmax_t(&[0.3, -1.2, 0.8], 1.0);
    for (lambda_soft, temp) in [(0.5, 1.0), (0.2, 2.0), (1.0, 0.5)] {
        let dc = DistillConfig {
            lambda_soft,
            distill_temperature: temp,
        };
        let logits = Matrix::row_vector(vec![0.7, -0.4, 0.1]);
        errors.push((
            "distill step",
            fd_relative_error(&[logits], |a| {
                let (value, g) = distill_logit_grad(&teacher, a[0].row(0), 2, &dc).unwrap();
                let check =
                    distill_step_loss(&teacher, &softmax_t(a[0].row(0), temp), 2, &dc).unwrap();
                assert!((check - value).abs() < 1e-12);
                LossGrad {
                    value,
                    grads: vec![Matrix::row_vector(g)],
                }
            }),
        ));
    }
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let name = errors.iter().find(|e| e.1 == worst).map_or("", |e| e.0);
    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-4 && secs < 60.0,
        format!(
            "max relative error {worst:.2e} ({name}), {} checks in {secs:.1}s",
            errors.len()
        ),
    );
}

#[test]
fn criterion_02_forced_loss_values() {
    let cfg = LossConfig::default();
    let z = softmax(&random(1, 8, 20));
    let intra = intra_domain_contrastive(&z, &z, &cfg).unwrap().value;
    let contrastive = distill_contrastive_term(
        &z,
        &z,
        &LossConfig {
            tau: 0.2,
            ..cfg.clone()
        },
    )
    .unwrap();
    let consistency = cross_modal_consistency(&z, &z, &z).unwrap().value;
    let pass =
        intra.abs() <= 1e-9 && (contrastive - 5.0).abs() <= 1e-9 && consistency.abs() <= 1e-9;
    report(
        2,
        pass,
        format!("intra {intra:.3e}, distill contrastive {contrastive:.12}, consistency {consistency:.3e}"),
    );
}

fn shaped_record(id: usize, n_fmri: usize, n_eeg: usize) -> SubjectRecord<f32> {
    let run = |m| RoiTimeSeries::new(Matrix::zeros(1, 2), 1.0, m).unwrap();
    let mut r = SubjectRecord::new(format!("s{id}"));
    r.fmri_runs = (0..n_fmri).map(|_| run(Modality::Fmri)).collect();
    r.eeg_runs = (0..n_eeg).map(|_| run(Modality::Eeg)).collect();
    r
}

#[test]
fn criterion_03_data_construction() {
    let cfg = DataConfig::default();
    let mut r = rng::seeded(3);
    let eeg = Matrix::from_fn(3, 25_000, |_, _| r.gen_range(-1.0f64..1.0));
    let run = RoiTimeSeries::new(eeg, 250.0, Modality::Eeg).unwrap();
    let inputs = RunInputs::build(&run, &cfg).unwrap();
    let segs = inputs.temporal_segments(cfg.segment_length).unwrap();
    let seg_ok = segs.len() == 125 && segs.segment_length() == 200 && cfg.eeg_segments() == 125;

    let cohort = |n| (0..n).map(|i| shaped_record(i, 2, 2)).collect::<Vec<_>>();
    let a = total_cross_pairs(&cohort(308));
    let b = total_cross_pairs(&cohort(1029));
    report(
        3,
        seg_ok && a == 1232 && b == 4116,
        format!(
            "{} segments of length {}, pairs {a} and {b}",
            segs.len(),
            segs.segment_length()
        ),
    );
}

#[test]
fn criterion_04_augmentation_bounds() {
    let mut r = rng::seeded(4);
    let x = Matrix::from_fn(30, 120, |_, _| r.gen_range(-1.0f64..1.0));
    let g = graph_from_connectivity(&pearson_connectivity(&x).unwrap().matrix).unwrap();
    let e = g.edges().len();
    let (lo, hi) = (
        (0.2 * e as f64).floor() as usize,
        (0.5 * e as f64).floor() as usize,
    );
    let cfg = AugmentationConfig::default();
    let mut aug_rng = rng::seeded(40);
    let (mut min_seen, mut max_seen, mut ok) = (usize::MAX, 0, true);
    for _ in 0..1000 {
        let out = drop_weak_edges(&g, &cfg, &mut aug_rng);
        let removed = e - out.edges().len();
        min_seen = min_seen.min(removed);
        max_seen = max_seen.max(removed);
        ok &= (lo..=hi).contains(&removed) && out.is_symmetric();
    }
    report(
        4,
        ok,
        format!(
            "E = {e}, removed {min_seen}..={max_seen} within {lo}..={hi}, symmetric on all draws"
        ),
    );
}

#[test]
fn criterion_05_connectivity_oracles() {
    let mut r = rng::seeded(5);
    let x = Matrix::from_fn(100, 200, |_, _| r.gen_range(-1.0f64..1.0));
    let c = pearson_connectivity(&x).unwrap().matrix;
    let n = x.rows();
    let t = x.cols() as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (x.row(i), x.row(j));
            let (ma, mb) = (a.iter().sum::<f64>() / t, b.iter().sum::<f64>() / t);
            let mut sab = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            for k in 0..a.len() {
                sab += (a[k] - ma) * (b[k] - mb);
                saa += (a[k] - ma) * (a[k] - ma);
                sbb += (b[k] - mb) * (b[k] - mb);
            }
            worst = worst.max((c[(i, j)] - sab / (saa * sbb).sqrt()).abs());
        }
    }
    let unit_diag = (0..n).all(|i| c[(i, i)] == 1.0);
    let symmetric = c.is_symmetric(0.0);

    let mut parseval: f64 = 0.0;
    for len in [200usize, 201] {
        let row: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let energy: f64 = row.iter().map(|v| v * v).sum();
        let mags = one_sided_magnitude(&row);
        let bins = fft_magnitude(&Matrix::row_vector(row.clone()), mags.len()).unwrap();
        assert_eq!(
            bins.values().row(0),
            &mags[..],
            "native-length spectrum is not resampled"
        );
        let mut spectral = mags[0] * mags[0];
        for (k, m) in mags.iter().enumerate().skip(1) {
            let nyquist = len % 2 == 0 && k == len / 2;
            spectral += if nyquist { m * m } else { 2.0 * m * m };
        }
        parseval = parseval.max((spectral / len as f64 - energy).abs() / energy);
    }
    report(
        5,
        worst <= 1e-9 && unit_diag && symmetric && parseval <= 1e-6,
        format!("pearson max error {worst:.2e}, symmetric {symmetric}, unit diagonal {unit_diag}, Parseval relative error {parseval:.2e}"),
    );
}

#[test]
fn criterion_06_pretraining_gain() {
    desk::pretraining_gain();
}

#[test]
fn criterion_07_loss_ablation_ordering() {
    desk::loss_ablation();
}

#[test]
fn criterion_08_distillation_gain() {
    desk::distillation_gain();
}

#[test]
fn criterion_09_parameter_budget() {
    let cfg = ModelConfig::default();
    let budget = parameter_budget(&cfg, &DataConfig::default(), 100).unwrap();
    let targets = [
        (Domain::Spatial, 1.2e6),
        (Domain::Temporal, 1.1e6),
        (Domain::Frequency, 1.1e6),
    ];
    let within = targets
        .iter()
        .all(|(d, t)| ((budget[d] as f64 - t) / t).abs() <= 0.10);

    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mcsp"))
        .arg("--param-count")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let printed = String::from_utf8_lossy(&out.stdout).to_string();
    let flag_ok = out.status.success()
        && targets
            .iter()
            .all(|(d, _)| printed.contains(&format!("{d} {}", budget[d])));
    report(
        9,
        within && flag_ok,
        format!(
            "spatial {} temporal {} frequency {}; --param-count agrees: {flag_ok}",
            budget[&Domain::Spatial],
            budget[&Domain::Temporal],
            budget[&Domain::Frequency]
        ),
    );
}

const DET_CONFIG: &str = r#"
seed = 21

[data]
fmri_length = 40
eeg_unified_length = 80
segment_length = 40

[encoder.spatial]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 8
d_ff = 16

[encoder.temporal]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 8
d_ff = 16

[encoder.frequency]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 8
d_ff = 16

[projector]
hidden = 16

[classifier]
hidden = 16

[train]
epochs = 3
finetune_epochs = 3
pretrain_batch = 8
finetune_batch = 8
folds = 4
repeats = 2
"#;

const DET_SPEC: &str =
    "n_subjects = 16\nn_classes = 2\nn_roi = 6\nclass_effect = 1.0\nshared_latent_dim = 4\nseed = 9\neeg_min_length = 500\n";

fn det_pipeline(root: &Path) -> (Vec<u8>, String) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_mcsp"))
            .args(args)
            .current_dir(root)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    fs::write(root.join("run.toml"), DET_CONFIG).unwrap();
    fs::write(root.join("spec.toml"), DET_SPEC).unwrap();
    run(&["synth-gen", "--spec", "spec.toml", "--out", "raw"]);
    run(&[
        "--config",
        "run.toml",
        "build-data",
        "--in",
        "raw",
        "--out",
        "data",
    ]);
    run(&[
        "--config",
        "run.toml",
        "pretrain",
        "--data",
        "data",
        "--out",
        "pre/model.ckpt",
    ]);
    run(&[
        "--config",
        "run.toml",
        "finetune",
        "--data",
        "data",
        "--init",
        "pre/model.ckpt",
        "--task",
        "task0",
        "--report",
        "ft/report.txt",
        "--out",
        "ft/final.ckpt",
    ]);
    let mut ckpts = fs::read(root.join("pre/model.ckpt")).unwrap();
    ckpts.extend(fs::read(root.join("ft/final.ckpt")).unwrap());
    (
        ckpts,
        fs::read_to_string(root.join("ft/report.txt")).unwrap(),
    )
}

#[test]
fn criterion_10_determinism() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ck_a, rep_a) = det_pipeline(a.path());
    let (ck_b, rep_b) = det_pipeline(b.path());
    let same_ck = ck_a == ck_b;
    let same_rep = rep_a == rep_b;
    report(
        10,
        same_ck && same_rep,
        format!(
            "checkpoints bit-identical: {same_ck} ({} bytes), reports identical: {same_rep}",
            ck_a.len()
        ),
    );
}
