//! End-to-end flows at toy scale: ensemble scoring and label refinement.

use gaescore::classify::{
    calibrate, class_scores_batch, evaluate_error, fit_ensemble, posterior, CalibrateOpts,
    EnsembleSpec, MemberKind,
};
use gaescore::data::{split_folds, standardize, synth_covariance_classes, SynthCovConfig};
use gaescore::data::{synth_correlated_labels, SynthLabelsConfig};
use gaescore::structured::{run_multilabel_fold, LabelOptConfig, LabelOptVariant, PipelineConfig};
use gaescore::train::TrainConfig;
use gaescore::ReconstructionMode;

fn toy_classification() -> (gaescore::data::LabeledDataset, Vec<usize>, usize) {
    let ds = synth_covariance_classes(&SynthCovConfig {
        n_per_class: 150,
        dim: 8,
        classes: 2,
        correlation: 0.05,
        scale_contrast: 0.95,
        group: 4,
        seed: 31,
    })
    .unwrap();
    let (ids, k) = ds.class_ids().unwrap();
    (ds.clone(), ids.to_vec(), k)
}

#[test]
fn covariance_ensemble_beats_chance_on_toy_data() {
    let (ds, ids, k) = toy_classification();
    let split = split_folds(ds.len(), 1, (0.8, 0.1, 0.1), 31).unwrap().remove(0);
    let train = ds.subset(&split.train);
    let (train_std, st) = standardize(&train).unwrap();
    let test_x = st.apply(&ds.subset(&split.test).features).unwrap();
    let train_labels: Vec<usize> = split.train.iter().map(|&i| ids[i]).collect();
    let test_labels: Vec<usize> = split.test.iter().map(|&i| ids[i]).collect();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        corruption_kind: gaescore::CorruptionKind::Gaussian,
        corruption_level: 0.3,
        batch_size: 30,
        epochs: 120,
        seed: 31,
        mode: ReconstructionMode::Symmetric,
        ..TrainConfig::default()
    };
    let spec = EnsembleSpec {
        kind: MemberKind::Cov,
        mean_hidden: 16,
        cov_hidden: 16,
        cov_factors: 16,
    };
    let ens = fit_ensemble(&train_std.features.view(), &train_labels, k, &spec, &cfg, 2).unwrap();
    let calibrated = calibrate(
        &ens,
        &train_std.features.view(),
        &train_labels,
        &CalibrateOpts {
            tune_members: true,
            learning_rate: 0.05,
            epochs: 150,
            ..CalibrateOpts::default()
        },
    )
    .unwrap();
    let err = evaluate_error(&calibrated, &test_x.view(), &test_labels).unwrap();
    assert!(err < 0.4, "covariance ensemble should clearly beat chance, got {err}");

    // batch and single-example scoring agree
    let scores = class_scores_batch(&calibrated, &test_x.view()).unwrap();
    let p0 = posterior(&calibrated, &test_x.row(0)).unwrap();
    let row0 = scores.row(0);
    let max = row0.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp: Vec<f64> = row0.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    for (a, b) in p0.iter().zip(exp.iter().map(|e| e / sum)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn multilabel_fold_runs_and_zero_iters_is_identity() {
    let ds = synth_correlated_labels(&SynthLabelsConfig {
        n: 600,
        dim: 8,
        labels: 4,
        strength: 1.0,
        noise: 1.0,
        outliers: 0.1,
        group: 2,
        seed: 17,
    })
    .unwrap();
    let split = split_folds(ds.len(), 1, (0.8, 0.1, 0.1), 17).unwrap().remove(0);
    let mk = |max_iter: usize| PipelineConfig {
        mlp_hidden: 6,
        mlp_cfg: TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 30,
            epochs: 15,
            seed: 17,
            ..TrainConfig::default()
        },
        gae_hidden: 8,
        gae_factors: 8,
        gae_cfg: TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 30,
            epochs: 30,
            seed: 18,
            mode: ReconstructionMode::Symmetric,
            ..TrainConfig::default()
        },
        opt: LabelOptConfig {
            step: 1.0,
            tol: 1e-6,
            max_iter,
            variant: LabelOptVariant::GaeY2,
            ascend: true,
            train_noise_std: 0.0,
        },
        opt_menu: Vec::new(),
        gae_candidates: 1,
        threads: 2,
    };

    let refined = run_multilabel_fold(&ds, &split, &mk(2)).unwrap();
    assert!(refined.mlp_error > 0.0 && refined.mlp_error < 0.5);
    assert!(refined.refined_error < 0.5);

    let baseline = run_multilabel_fold(&ds, &split, &mk(0)).unwrap();
    assert_eq!(baseline.mlp_error, baseline.refined_error);

    // determinism of the whole fold pipeline
    let again = run_multilabel_fold(&ds, &split, &mk(2)).unwrap();
    assert_eq!(refined.mlp_error, again.mlp_error);
    assert_eq!(refined.refined_error, again.refined_error);
}
