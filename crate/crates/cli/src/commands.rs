use gaescore::archive::{save_archive, Archive, ModelKind};
use gaescore::classify::{
    calibrate, evaluate_error, fit_ensemble, CalibrateOpts, ClassifierEnsemble, EnsembleSpec,
    Member, MemberKind,
};
use gaescore::data::{
    holdout_split, load_dataset, split_folds, standardize, DatasetSchema, LabelKind,
    LabeledDataset, SynthCovConfig, SynthLabelsConfig,
};
use gaescore::gae::{ActivationKind, GaeParams, MeanAeParams};
use gaescore::structured::{LabelOptConfig, LabelOptVariant, PipelineConfig};
use gaescore::train::{
    train_cov_gae, train_gae, train_mean_ae, CorruptionKind, TrainConfig, TrainReport,
};
use gaescore::verify::run_all;
use gaescore::ReconstructionMode;

use crate::args::Opts;
use crate::CliError;

fn map_core(e: gaescore::Error) -> CliError {
    use gaescore::Error::*;
    let code = match &e {
        Usage(_) | Capability(_) => 2,
        Diverged { .. } | NonFiniteEnergy { .. } => 4,
        _ => 3,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn train_config(opts: &mut Opts) -> Result<TrainConfig, CliError> {
    let mode = match opts.str_or("mode", "conditional").as_str() {
        "conditional" => ReconstructionMode::Conditional,
        "symmetric" => ReconstructionMode::Symmetric,
        other => return Err(CliError::config(format!("unknown mode '{other}'"))),
    };
    let cfg = TrainConfig {
        learning_rate: opts.f64_or("lr", 0.01)?,
        momentum: opts.f64_or("momentum", 0.9)?,
        weight_decay: opts.f64_or("decay", 0.0)?,
        corruption_level: opts.f64_or("corruption", 0.0)?,
        corruption_kind: CorruptionKind::parse(&opts.str_or("corruption-kind", "none"))
            .map_err(map_core)?,
        corrupt_target: Default::default(),
        batch_size: opts.usize_or("batch", 100)?,
        epochs: opts.usize_or("epochs", 50)?,
        seed: opts.u64_or("seed", 0)?,
        mode,
    };
    cfg.validate().map_err(map_core)?;
    Ok(cfg)
}

/// `--data` accepts a path or an inline generator spec
/// (`synth-cov:<kv>` / `synth-labels:<kv>`).
fn load_data(opts: &mut Opts) -> Result<LabeledDataset, CliError> {
    let data = opts.required("data")?;
    if let Some(kv) = data.strip_prefix("synth-cov:") {
        let cfg = SynthCovConfig::from_kv(kv).map_err(map_core)?;
        return gaescore::data::synth_covariance_classes(&cfg).map_err(map_core);
    }
    if let Some(kv) = data.strip_prefix("synth-labels:") {
        let cfg = SynthLabelsConfig::from_kv(kv).map_err(map_core)?;
        return gaescore::data::synth_correlated_labels(&cfg).map_err(map_core);
    }
    let dim = opts
        .str_opt("dim")
        .ok_or_else(|| CliError::config("file data needs --dim"))?
        .parse::<usize>()
        .map_err(|_| CliError::config("--dim must be an integer"))?;
    let kind = match opts.str_or("label-kind", "class").as_str() {
        "class" => LabelKind::Class,
        "multi" => LabelKind::Multi,
        other => return Err(CliError::config(format!("unknown label kind '{other}'"))),
    };
    let width = opts.usize_or("labels", 0)?;
    if kind == LabelKind::Multi && width == 0 {
        return Err(CliError::config("multi-label data needs --labels"));
    }
    load_dataset(
        &data,
        &DatasetSchema {
            dim,
            kind,
            width,
        },
    )
    .map_err(map_core)
}

fn print_report(report: &TrainReport) {
    for (i, loss) in report.train_loss.iter().enumerate() {
        match report.val_loss.get(i) {
            Some(v) => println!("epoch={i} train_loss={loss} val_loss={v}"),
            None => println!("epoch={i} train_loss={loss}"),
        }
    }
    if let Some(last) = report.train_loss.last() {
        println!("final_train_loss={last}");
    }
}

pub fn cmd_train(opts: &mut Opts) -> Result<i32, CliError> {
    let kind = opts.str_or("kind", "cov-gae");
    let cfg = train_config(opts)?;
    let hidden = opts.usize_or("hidden", 32)?;
    let factors = opts.usize_or("factors", 32)?;
    let val_fraction = opts.f64_or("val-fraction", 0.1)?;
    let do_standardize = opts.bool_or("standardize", false)?;
    let out = opts.str_opt("out");
    opts.usize_or("threads", 1)?;
    let mut ds = load_data(opts)?;
    opts.finish()?;
    opts.echo("train");

    if ds.is_empty() {
        return Err(CliError {
            code: 3,
            message: "dataset is empty".into(),
        });
    }
    if do_standardize {
        ds = standardize(&ds).map_err(map_core)?.0;
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CliError::config("--val-fraction must lie in [0, 1)"));
    }
    let (train_idx, val_idx) = holdout_split(ds.len(), val_fraction, cfg.seed);
    let train = ds.subset(&train_idx);
    let val = if val_idx.is_empty() {
        None
    } else {
        Some(ds.subset(&val_idx))
    };
    let d = ds.dim();

    let (archive, report) = match kind.as_str() {
        "mean" => {
            let init = MeanAeParams::random(d, hidden, cfg.seed);
            let (p, report) = train_mean_ae(
                &train.features.view(),
                val.as_ref().map(|v| v.features.view()).as_ref(),
                &cfg,
                init,
            )
            .map_err(map_core)?;
            (Archive::from_mean(&p), report)
        }
        "cov-gae" => {
            let init = GaeParams::random_covariance(d, factors, hidden, cfg.seed);
            let mut cov_cfg = cfg.clone();
            cov_cfg.mode = ReconstructionMode::Symmetric;
            let (p, report) = train_cov_gae(
                &train.features.view(),
                val.as_ref().map(|v| v.features.view()).as_ref(),
                &cov_cfg,
                init,
            )
            .map_err(map_core)?;
            (Archive::from_gae(&p, ModelKind::CovGae).map_err(map_core)?, report)
        }
        "gae" => {
            let ys = train.multi_labels().map_err(|_| {
                CliError::config("--kind gae trains on multi-label data (features as x, labels as y)")
            })?;
            let l = ys.ncols();
            let init = GaeParams::random(d, l, factors, hidden, ActivationKind::Sigmoid, cfg.seed);
            let val_pair = val
                .as_ref()
                .map(|v| -> Result<_, CliError> {
                    Ok((v.features.view(), v.multi_labels().map_err(map_core)?.view()))
                })
                .transpose()?;
            let (p, report) = train_gae(
                &train.features.view(),
                &ys.view(),
                val_pair.as_ref().map(|(a, b)| (a, b)),
                &cfg,
                init,
            )
            .map_err(map_core)?;
            (Archive::from_gae(&p, ModelKind::Gae).map_err(map_core)?, report)
        }
        "mc" => {
            let mean_init = MeanAeParams::random(d, hidden, cfg.seed);
            let (mean, mean_report) = train_mean_ae(
                &train.features.view(),
                val.as_ref().map(|v| v.features.view()).as_ref(),
                &cfg,
                mean_init,
            )
            .map_err(map_core)?;
            let cov_init = GaeParams::random_covariance(d, factors, hidden, cfg.seed);
            let mut cov_cfg = cfg.clone();
            cov_cfg.mode = ReconstructionMode::Symmetric;
            let (cov, _) = train_cov_gae(
                &train.features.view(),
                val.as_ref().map(|v| v.features.view()).as_ref(),
                &cov_cfg,
                cov_init,
            )
            .map_err(map_core)?;
            (Archive::from_mean_cov(&mean, &cov), mean_report)
        }
        other => return Err(CliError::config(format!("unknown model kind '{other}'"))),
    };

    print_report(&report);
    if let Some(path) = out {
        save_archive(&path, &archive).map_err(map_core)?;
        println!("out={path}");
    }
    Ok(0)
}

pub fn cmd_verify(opts: &mut Opts) -> Result<i32, CliError> {
    let models = opts.usize_or("seeds", 100)?.max(1);
    let steps = opts.usize_or("steps", 10_000)?.max(10);
    let untied = opts.bool_or("break-tie-weights", false)?;
    let seed = opts.u64_or("seed", 42)?;
    opts.finish()?;
    opts.echo("verify");

    let outcomes = run_all(models, seed, untied, steps).map_err(map_core)?;
    let mut all_pass = true;
    for o in &outcomes {
        all_pass &= o.pass;
        println!(
            "suite={} residual={:e} threshold={:e} mode={} pass={} detail={}",
            o.name,
            o.residual,
            o.threshold,
            if o.exceeds { "exceed" } else { "bound" },
            o.pass,
            o.detail.replace(' ', "_"),
        );
    }
    println!("verify={}", if all_pass { "pass" } else { "fail" });
    Ok(if all_pass { 0 } else { 1 })
}

fn split_members(ens: &ClassifierEnsemble) -> Result<(ClassifierEnsemble, ClassifierEnsemble), CliError> {
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for m in &ens.members {
        match m {
            Member::MeanCov { mean, cov } => {
                means.push(Member::Mean(mean.clone()));
                covs.push(Member::Cov(cov.clone()));
            }
            _ => return Err(CliError::config("expected mean-covariance members")),
        }
    }
    Ok((
        ClassifierEnsemble::new(means).map_err(map_core)?,
        ClassifierEnsemble::new(covs).map_err(map_core)?,
    ))
}

pub fn cmd_classify(opts: &mut Opts) -> Result<i32, CliError> {
    let kind = opts.str_or("kind", "mc");
    let mut cfg = train_config(opts)?;
    cfg.mode = ReconstructionMode::Symmetric;
    let hidden = opts.usize_or("hidden", 32)?;
    let factors = opts.usize_or("factors", 32)?;
    let threads = opts.usize_or("threads", 2)?.max(1);
    let calib = CalibrateOpts {
        tune_members: opts.bool_or("tune-members", false)?,
        learning_rate: opts.f64_or("calib-lr", 0.5)?,
        epochs: opts.usize_or("calib-epochs", 300)?,
        ..CalibrateOpts::default()
    };
    let out = opts.str_opt("out");
    let ds = load_data(opts)?;
    opts.finish()?;
    opts.echo("classify");

    let (ids, k) = ds.class_ids().map_err(map_core)?;
    let ids = ids.to_vec();
    let split = split_folds(ds.len(), 1, (0.8, 0.1, 0.1), cfg.seed)
        .map_err(map_core)?
        .remove(0);
    let train = ds.subset(&split.train);
    let test = ds.subset(&split.test);
    let (train_std, st) = standardize(&train).map_err(map_core)?;
    let test_x = st.apply(&test.features).map_err(map_core)?;
    let train_labels: Vec<usize> = split.train.iter().map(|&i| ids[i]).collect();
    let test_labels: Vec<usize> = split.test.iter().map(|&i| ids[i]).collect();

    let member_kind = match kind.as_str() {
        "mean" => MemberKind::Mean,
        "cov-gae" => MemberKind::Cov,
        "mc" => MemberKind::MeanCov,
        other => return Err(CliError::config(format!("unknown classifier kind '{other}'"))),
    };
    let spec = EnsembleSpec {
        kind: member_kind,
        mean_hidden: hidden,
        cov_hidden: hidden,
        cov_factors: factors,
    };
    let ens = fit_ensemble(&train_std.features.view(), &train_labels, k, &spec, &cfg, threads)
        .map_err(map_core)?;

    let val_x = st.apply(&ds.subset(&split.val).features).map_err(map_core)?;
    let val_labels: Vec<usize> = split.val.iter().map(|&i| ids[i]).collect();
    let report_one = |name: &str, e: &ClassifierEnsemble| -> Result<ClassifierEnsemble, CliError> {
        // member tuning overfits without a validation gate
        let calibrated = if calib.tune_members {
            gaescore::classify::calibrate_early_stopping(
                e,
                &train_std.features.view(),
                &train_labels,
                &val_x.view(),
                &val_labels,
                &calib,
                10,
            )
            .map_err(map_core)?
            .0
        } else {
            calibrate(e, &train_std.features.view(), &train_labels, &calib).map_err(map_core)?
        };
        let err = evaluate_error(&calibrated, &test_x.view(), &test_labels).map_err(map_core)?;
        println!("{name}={err}");
        Ok(calibrated)
    };

    let final_ens = match member_kind {
        MemberKind::Mean => report_one("aes_error", &ens)?,
        MemberKind::Cov => report_one("caes_error", &ens)?,
        MemberKind::MeanCov => {
            let (mean_ens, cov_ens) = split_members(&ens)?;
            report_one("aes_error", &mean_ens)?;
            report_one("caes_error", &cov_ens)?;
            report_one("mcaes_error", &ens)?
        }
    };

    if let Some(path) = out {
        let archive = final_ens.to_archive().map_err(map_core)?;
        save_archive(&path, &archive).map_err(map_core)?;
        println!("out={path}");
    }
    Ok(0)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn cmd_multilabel(opts: &mut Opts) -> Result<i32, CliError> {
    let cfg = train_config(opts)?;
    let gae_epochs = opts.usize_or("gae-epochs", cfg.epochs)?;
    let folds = opts.usize_or("folds", 10)?.max(1);
    let mlp_hidden = opts.usize_or("mlp-hidden", 32)?;
    let hidden = opts.usize_or("hidden", 32)?;
    let factors = opts.usize_or("factors", 32)?;
    let threads = opts.usize_or("threads", 2)?.max(1);
    let variant = LabelOptVariant::parse(&opts.str_or("variant", "y2")).map_err(map_core)?;
    let default_noise = match variant {
        LabelOptVariant::GaeXy => 0.1,
        LabelOptVariant::GaeY2 => 0.0,
    };
    let pred_out = opts.str_opt("pred-out");
    let opt = LabelOptConfig {
        step: opts.f64_or("step", 0.1)?,
        tol: opts.f64_or("tol", 1e-6)?,
        max_iter: opts.usize_or("max-iter", 100)?,
        variant,
        ascend: opts.bool_or("ascend", true)?,
        train_noise_std: opts.f64_or("noise", default_noise)?,
    };
    opt.validate().map_err(map_core)?;
    let candidates = opts.usize_or("gae-candidates", 1)?.max(1);
    let ds = load_data(opts)?;
    opts.finish()?;
    opts.echo("multilabel");

    ds.multi_labels().map_err(map_core)?;
    let splits = split_folds(ds.len(), folds, (0.8, 0.1, 0.1), cfg.seed).map_err(map_core)?;
    let mut gae_cfg = cfg.clone();
    gae_cfg.epochs = gae_epochs;
    gae_cfg.mode = ReconstructionMode::Symmetric;
    // menu of refinement depths tried on the validation split
    let mut opt_menu = Vec::new();
    if opt.max_iter > 0 {
        for scale in [0.6, 1.4] {
            let mut alt = opt.clone();
            alt.max_iter = ((opt.max_iter as f64 * scale).round() as usize).max(1);
            opt_menu.push(alt);
        }
    }
    let pipeline = PipelineConfig {
        mlp_hidden,
        mlp_cfg: cfg.clone(),
        gae_hidden: hidden,
        gae_factors: factors,
        gae_cfg,
        opt,
        opt_menu,
        gae_candidates: candidates,
        threads,
    };

    let mut mlp_errors = Vec::with_capacity(folds);
    let mut refined_errors = Vec::with_capacity(folds);
    let mut predictions: Vec<String> = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let outcome =
            gaescore::structured::run_multilabel_fold(&ds, split, &pipeline).map_err(map_core)?;
        println!(
            "fold={i} mlp_error={} refined_error={}",
            outcome.mlp_error, outcome.refined_error
        );
        if pred_out.is_some() {
            for row in outcome.refined.rows() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                predictions.push(line.join(" "));
            }
        }
        mlp_errors.push(outcome.mlp_error);
        refined_errors.push(outcome.refined_error);
    }
    println!("mlp_error_median={}", median(&mut mlp_errors));
    println!("refined_error_median={}", median(&mut refined_errors));
    if let Some(path) = pred_out {
        std::fs::write(&path, predictions.join("\n") + "\n").map_err(|e| CliError {
            code: 3,
            message: format!("{path}: {e}"),
        })?;
        println!("pred_out={path}");
    }
    Ok(0)
}
