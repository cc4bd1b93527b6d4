//! Mini-batch SGD with momentum, weight decay, and denoising corruption.
//!
//! All trainers are deterministic given the data, the config, the init, and
//! the seed. Corruption noise is re-derived from the seed and the batch
//! coordinates, never from a shared mutable stream, so the corrupted view of
//! batch `i` in epoch `e` does not depend on anything computed before it.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gae::{
    batch_loss, loss_gradients_with_targets, mean_loss, mean_loss_gradients, GaeGrads, GaeParams,
    MeanAeParams, MeanGrads, ReconstructionMode,
};

/// How encoder inputs are corrupted during denoising training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Zero each entry independently with probability `level`.
    Masking,
    /// Add Gaussian noise with standard deviation `level`.
    Gaussian,
    /// Leave inputs unchanged.
    None,
}

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Masking => "masking",
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "masking" => Ok(CorruptionKind::Masking),
            "gaussian" => Ok(CorruptionKind::Gaussian),
            "none" => Ok(CorruptionKind::None),
            other => Err(Error::usage(format!("unknown corruption kind '{other}'"))),
        }
    }
}

/// Which encoder inputs receive corruption in pair training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorruptTarget {
    #[default]
    Both,
    XOnly,
    YOnly,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub corruption_level: f64,
    pub corruption_kind: CorruptionKind,
    pub corrupt_target: CorruptTarget,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ReconstructionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            corruption_level: 0.0,
            corruption_kind: CorruptionKind::None,
            corrupt_target: CorruptTarget::Both,
            batch_size: 100,
            epochs: 50,
            seed: 0,
            mode: ReconstructionMode::Conditional,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::usage("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage("momentum must lie in [0, 1)"));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::usage("weight decay must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::usage("epoch count must be positive"));
        }
        validate_corruption(self.corruption_kind, self.corruption_level)
    }
}

fn validate_corruption(kind: CorruptionKind, level: f64) -> Result<()> {
    match kind {
        CorruptionKind::Masking => {
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::usage("masking level must lie in [0, 1]"));
            }
        }
        CorruptionKind::Gaussian => {
            if !level.is_finite() || level < 0.0 {
                return Err(Error::usage("gaussian noise std must be finite and non-negative"));
            }
        }
        CorruptionKind::None => {}
    }
    Ok(())
}

/// Per-epoch loss traces and timing for a finished run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    /// Empty when no validation set was supplied; otherwise one entry per epoch.
    pub val_loss: Vec<f64>,
    pub wall_time_secs: f64,
}

/// Apply corruption to a batch. Deterministic given the RNG state.
pub fn corrupt(
    batch: &ArrayView2<f64>,
    kind: CorruptionKind,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    validate_corruption(kind, level)?;
    let mut out = batch.to_owned();
    match kind {
        CorruptionKind::None => {}
        CorruptionKind::Masking => {
            for v in out.iter_mut() {
                if rng.gen::<f64>() < level {
                    *v = 0.0;
                }
            }
        }
        CorruptionKind::Gaussian => {
            for v in out.iter_mut() {
                *v += rng.sample::<f64, _>(StandardNormal) * level;
            }
        }
    }
    Ok(out)
}

fn corruption_rng(seed: u64, epoch: usize, batch_index: usize, n_batches: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    rng.set_stream(1 + (epoch * n_batches + batch_index) as u64);
    rng
}

fn shuffle_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    // a single full batch needs no decorrelation, and keeping the canonical
    // order makes one full-batch step equal plain gradient descent bit for bit
    if batch_size < n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x100_0000 + epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

fn sgd_step_2(theta: &mut Array2<f64>, vel: &mut Array2<f64>, grad: &Array2<f64>, cfg: &TrainConfig) {
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    ndarray::Zip::from(vel.view_mut())
        .and(grad)
        .and(theta.view())
        .for_each(|v, &g, &t| *v = cfg.momentum * *v - lr * (g + wd * t));
    *theta += &*vel;
}

fn sgd_step_1(
    theta: &mut ndarray::Array1<f64>,
    vel: &mut ndarray::Array1<f64>,
    grad: &ndarray::Array1<f64>,
    cfg: &TrainConfig,
) {
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    ndarray::Zip::from(vel.view_mut())
        .and(grad)
        .and(theta.view())
        .for_each(|v, &g, &t| *v = cfg.momentum * *v - lr * (g + wd * t));
    *theta += &*vel;
}

fn check_rows(name: &str, rows: usize, expected: usize) -> Result<()> {
    if rows != expected {
        return Err(Error::shape(format!("{name}: expected {expected} rows, got {rows}")));
    }
    Ok(())
}

/// Train a gated auto-encoder where encoder inputs and reconstruction
/// targets are supplied separately (the inputs are typically an already
/// degraded version of the targets). Corruption from the config is applied
/// on top of the given inputs.
pub fn train_gae_with_targets(
    x_in: &ArrayView2<f64>,
    y_in: &ArrayView2<f64>,
    x_target: &ArrayView2<f64>,
    y_target: &ArrayView2<f64>,
    cfg: &TrainConfig,
    init: GaeParams,
) -> Result<(GaeParams, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    let n = x_in.nrows();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    check_rows("y input", y_in.nrows(), n)?;
    check_rows("x target", x_target.nrows(), n)?;
    check_rows("y target", y_target.nrows(), n)?;
    let start = Instant::now();
    let mut p = init;
    let mut vel = GaeGrads::zeros_like(&p);
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut train_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = shuffle_order(n, cfg.batch_size, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx = x_in.select(Axis(0), chunk);
            let by = y_in.select(Axis(0), chunk);
            let btx = x_target.select(Axis(0), chunk);
            let bty = y_target.select(Axis(0), chunk);
            let mut rng = corruption_rng(cfg.seed, epoch, bi, n_batches);
            let bx = match cfg.corrupt_target {
                CorruptTarget::Both | CorruptTarget::XOnly => {
                    corrupt(&bx.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?
                }
                CorruptTarget::YOnly => bx,
            };
            let by = match cfg.corrupt_target {
                CorruptTarget::Both | CorruptTarget::YOnly => {
                    corrupt(&by.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?
                }
                CorruptTarget::XOnly => by,
            };
            let (loss, grads) = loss_gradients_with_targets(
                &p,
                &bx.view(),
                &by.view(),
                &btx.view(),
                &bty.view(),
                cfg.mode,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch {bi} loss is not finite"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            sgd_step_2(&mut p.wx, &mut vel.wx, &grads.wx, cfg);
            sgd_step_2(&mut p.wy, &mut vel.wy, &grads.wy, cfg);
            sgd_step_2(&mut p.wh, &mut vel.wh, &grads.wh, cfg);
            sgd_step_1(&mut p.b, &mut vel.b, &grads.b, cfg);
            sgd_step_1(&mut p.ax, &mut vel.ax, &grads.ax, cfg);
            sgd_step_1(&mut p.ay, &mut vel.ay, &grads.ay, cfg);
        }
        train_trace.push(epoch_loss / n as f64);
    }

    Ok((
        p,
        TrainReport {
            train_loss: train_trace,
            val_loss: Vec::new(),
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Train a gated auto-encoder on pairs `(x, y)`.
///
/// Corruption is applied to the encoder inputs selected by
/// [`TrainConfig::corrupt_target`]; reconstruction targets stay clean.
pub fn train_gae(
    xs: &ArrayView2<f64>,
    ys: &ArrayView2<f64>,
    val: Option<(&ArrayView2<f64>, &ArrayView2<f64>)>,
    cfg: &TrainConfig,
    init: GaeParams,
) -> Result<(GaeParams, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    check_rows("y batch", ys.nrows(), n)?;
    let start = Instant::now();
    let mut p = init;
    let mut vel = GaeGrads::zeros_like(&p);
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut train_trace = Vec::with_capacity(cfg.epochs);
    let mut val_trace = Vec::new();

    for epoch in 0..cfg.epochs {
        let order = shuffle_order(n, cfg.batch_size, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx = xs.select(Axis(0), chunk);
            let by = ys.select(Axis(0), chunk);
            let mut rng = corruption_rng(cfg.seed, epoch, bi, n_batches);
            let x_in = match cfg.corrupt_target {
                CorruptTarget::Both | CorruptTarget::XOnly => {
                    corrupt(&bx.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?
                }
                CorruptTarget::YOnly => bx.clone(),
            };
            let y_in = match cfg.corrupt_target {
                CorruptTarget::Both | CorruptTarget::YOnly => {
                    corrupt(&by.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?
                }
                CorruptTarget::XOnly => by.clone(),
            };
            let (loss, grads) = loss_gradients_with_targets(
                &p,
                &x_in.view(),
                &y_in.view(),
                &bx.view(),
                &by.view(),
                cfg.mode,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch {bi} loss is not finite"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            sgd_step_2(&mut p.wx, &mut vel.wx, &grads.wx, cfg);
            sgd_step_2(&mut p.wy, &mut vel.wy, &grads.wy, cfg);
            sgd_step_2(&mut p.wh, &mut vel.wh, &grads.wh, cfg);
            sgd_step_1(&mut p.b, &mut vel.b, &grads.b, cfg);
            sgd_step_1(&mut p.ax, &mut vel.ax, &grads.ax, cfg);
            sgd_step_1(&mut p.ay, &mut vel.ay, &grads.ay, cfg);
        }
        train_trace.push(epoch_loss / n as f64);
        if let Some((vx, vy)) = val {
            val_trace.push(batch_loss(&p, vx, vy, cfg.mode)?);
        }
    }

    Ok((
        p,
        TrainReport {
            train_loss: train_trace,
            val_loss: val_trace,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Train a covariance auto-encoder: pairs are `(x, x)`, the objective is
/// symmetric, and the factor matrix and output bias are shared between the
/// two roles. The shared tensors stay bit-identical after every update.
pub fn train_cov_gae(
    xs: &ArrayView2<f64>,
    val: Option<&ArrayView2<f64>>,
    cfg: &TrainConfig,
    init: GaeParams,
) -> Result<(GaeParams, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    if !init.factors_tied() {
        return Err(Error::usage("covariance training requires tied initial factors"));
    }
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    let start = Instant::now();
    let mut p = init;
    let mut vel_w = Array2::<f64>::zeros(p.wx.raw_dim());
    let mut vel_wh = Array2::<f64>::zeros(p.wh.raw_dim());
    let mut vel_b = ndarray::Array1::<f64>::zeros(p.b.len());
    let mut vel_a = ndarray::Array1::<f64>::zeros(p.ax.len());
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut train_trace = Vec::with_capacity(cfg.epochs);
    let mut val_trace = Vec::new();

    for epoch in 0..cfg.epochs {
        let order = shuffle_order(n, cfg.batch_size, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx = xs.select(Axis(0), chunk);
            let mut rng = corruption_rng(cfg.seed, epoch, bi, n_batches);
            let x_in = corrupt(&bx.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?;
            let (loss, grads) = loss_gradients_with_targets(
                &p,
                &x_in.view(),
                &x_in.view(),
                &bx.view(),
                &bx.view(),
                ReconstructionMode::Symmetric,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch {bi} loss is not finite"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            // both roles contribute to the single shared factor matrix / bias
            let gw = &grads.wx + &grads.wy;
            let ga = &grads.ax + &grads.ay;
            sgd_step_2(&mut p.wx, &mut vel_w, &gw, cfg);
            p.wy.assign(&p.wx);
            sgd_step_2(&mut p.wh, &mut vel_wh, &grads.wh, cfg);
            sgd_step_1(&mut p.b, &mut vel_b, &grads.b, cfg);
            sgd_step_1(&mut p.ax, &mut vel_a, &ga, cfg);
            p.ay.assign(&p.ax);
        }
        train_trace.push(epoch_loss / n as f64);
        if let Some(vx) = val {
            val_trace.push(batch_loss(&p, vx, vx, ReconstructionMode::Symmetric)?);
        }
    }

    Ok((
        p,
        TrainReport {
            train_loss: train_trace,
            val_loss: val_trace,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Train a classical auto-encoder (sigmoid hiddens, linear output, tied weights).
pub fn train_mean_ae(
    xs: &ArrayView2<f64>,
    val: Option<&ArrayView2<f64>>,
    cfg: &TrainConfig,
    init: MeanAeParams,
) -> Result<(MeanAeParams, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    let start = Instant::now();
    let mut p = init;
    let mut vel = MeanGrads::zeros_like(&p);
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut train_trace = Vec::with_capacity(cfg.epochs);
    let mut val_trace = Vec::new();

    for epoch in 0..cfg.epochs {
        let order = shuffle_order(n, cfg.batch_size, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx = xs.select(Axis(0), chunk);
            let mut rng = corruption_rng(cfg.seed, epoch, bi, n_batches);
            let x_in = corrupt(&bx.view(), cfg.corruption_kind, cfg.corruption_level, &mut rng)?;
            let (loss, grads) = mean_loss_gradients(&p, &x_in.view(), &bx.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch {bi} loss is not finite"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            sgd_step_2(&mut p.w, &mut vel.w, &grads.w, cfg);
            sgd_step_1(&mut p.c, &mut vel.c, &grads.c, cfg);
            sgd_step_1(&mut p.a, &mut vel.a, &grads.a, cfg);
        }
        train_trace.push(epoch_loss / n as f64);
        if let Some(vx) = val {
            val_trace.push(mean_loss(&p, vx, vx)?);
        }
    }

    Ok((
        p,
        TrainReport {
            train_loss: train_trace,
            val_loss: val_trace,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Validation-based hyperparameter selection.
// ---------------------------------------------------------------------------

/// Candidate axes for grid search.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub hiddens: Vec<usize>,
    pub factors: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub corruption_levels: Vec<f64>,
}

impl GridSpec {
    /// The full-scale selection grid.
    pub fn full() -> Self {
        GridSpec {
            hiddens: vec![100, 300, 500],
            factors: vec![100, 300, 500],
            learning_rates: vec![0.001, 0.0001],
            weight_decays: vec![0.001, 0.0001],
            corruption_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }

    /// A small grid that finishes in seconds on desk-scale data.
    pub fn desk() -> Self {
        GridSpec {
            hiddens: vec![16, 32],
            factors: vec![16, 32],
            learning_rates: vec![0.01],
            weight_decays: vec![0.0, 1e-4],
            corruption_levels: vec![0.0, 0.2],
        }
    }
}

/// Winner of a grid search.
#[derive(Debug, Clone)]
pub struct GridOutcome<P> {
    pub params: P,
    pub config: TrainConfig,
    pub hidden: usize,
    pub factors: usize,
    pub val_loss: f64,
}

/// Exhaustive search over the grid for a covariance model; the candidate with
/// the lowest final validation loss wins, first seen on ties.
pub fn grid_search_cov_gae(
    train: &ArrayView2<f64>,
    val: &ArrayView2<f64>,
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridOutcome<GaeParams>> {
    let mut best: Option<GridOutcome<GaeParams>> = None;
    for &hidden in &grid.hiddens {
        for &factors in &grid.factors {
            for &lr in &grid.learning_rates {
                for &wd in &grid.weight_decays {
                    for &corr in &grid.corruption_levels {
                        let mut cfg = base.clone();
                        cfg.learning_rate = lr;
                        cfg.weight_decay = wd;
                        cfg.corruption_level = corr;
                        if corr > 0.0 && cfg.corruption_kind == CorruptionKind::None {
                            cfg.corruption_kind = CorruptionKind::Masking;
                        }
                        let init =
                            GaeParams::random_covariance(train.ncols(), factors, hidden, cfg.seed);
                        let (params, report) = train_cov_gae(train, Some(val), &cfg, init)?;
                        let val_loss = *report.val_loss.last().expect("val trace");
                        if best.as_ref().map_or(true, |b| val_loss < b.val_loss) {
                            best = Some(GridOutcome {
                                params,
                                config: cfg,
                                hidden,
                                factors,
                                val_loss,
                            });
                        }
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::usage("grid is empty"))
}

/// Grid search for the classical auto-encoder; the factor axis is ignored.
pub fn grid_search_mean_ae(
    train: &ArrayView2<f64>,
    val: &ArrayView2<f64>,
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridOutcome<MeanAeParams>> {
    let mut best: Option<GridOutcome<MeanAeParams>> = None;
    for &hidden in &grid.hiddens {
        for &lr in &grid.learning_rates {
            for &wd in &grid.weight_decays {
                for &corr in &grid.corruption_levels {
                    let mut cfg = base.clone();
                    cfg.learning_rate = lr;
                    cfg.weight_decay = wd;
                    cfg.corruption_level = corr;
                    if corr > 0.0 && cfg.corruption_kind == CorruptionKind::None {
                        cfg.corruption_kind = CorruptionKind::Masking;
                    }
                    let init = MeanAeParams::random(train.ncols(), hidden, cfg.seed);
                    let (params, report) = train_mean_ae(train, Some(val), &cfg, init)?;
                    let val_loss = *report.val_loss.last().expect("val trace");
                    if best.as_ref().map_or(true, |b| val_loss < b.val_loss) {
                        best = Some(GridOutcome {
                            params,
                            config: cfg,
                            hidden,
                            factors: 0,
                            val_loss,
                        });
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::usage("grid is empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gae::{loss_gradients, ActivationKind};

    fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn corrupt_level_zero_is_identity() {
        let batch = random_matrix(10, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = corrupt(&batch.view(), CorruptionKind::Masking, 0.0, &mut rng).unwrap();
        assert_eq!(out, batch);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = corrupt(&batch.view(), CorruptionKind::Gaussian, 0.0, &mut rng).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn corrupt_level_one_masks_everything() {
        let batch = random_matrix(10, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = corrupt(&batch.view(), CorruptionKind::Masking, 1.0, &mut rng).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrupt_masking_fraction_concentrates() {
        let batch = Array2::<f64>::ones((1000, 1000));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = corrupt(&batch.view(), CorruptionKind::Masking, 0.3, &mut rng).unwrap();
        let zeroed = out.iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeroed - 0.3).abs() <= 0.003, "zeroed fraction {zeroed}");
    }

    #[test]
    fn corrupt_rejects_bad_level() {
        let batch = Array2::<f64>::ones((2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(matches!(
            corrupt(&batch.view(), CorruptionKind::Masking, 1.5, &mut rng),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            corrupt(&batch.view(), CorruptionKind::Gaussian, -0.1, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_learning_rate_returns_init() {
        let xs = random_matrix(32, 4, 7);
        let ys = random_matrix(32, 3, 8);
        let init = GaeParams::random(4, 3, 2, 2, ActivationKind::Sigmoid, 9);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (p, report) = train_gae(&xs.view(), &ys.view(), None, &cfg, init.clone()).unwrap();
        assert_eq!(p, init);
        assert_eq!(report.train_loss.len(), 3);

        let m_init = MeanAeParams::random(4, 3, 10);
        let (m, _) = train_mean_ae(&xs.view(), None, &cfg, m_init.clone()).unwrap();
        assert_eq!(m, m_init);
    }

    /// Pairs produced by a fixed random teacher model.
    fn teacher_pairs(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let teacher = GaeParams::random(8, 8, 4, 4, ActivationKind::Sigmoid, 1234);
        let xs = random_matrix(n, 8, seed);
        let mut ys = Array2::zeros((n, 8));
        for (i, x) in xs.axis_iter(Axis(0)).enumerate() {
            let state = crate::gae::encode(&teacher, &x, &x).unwrap();
            let r = crate::gae::decode_y(&teacher, &x, &state).unwrap();
            ys.row_mut(i).assign(&r);
        }
        (xs, ys)
    }

    #[test]
    fn training_reduces_loss_on_teacher_data() {
        for seed in 0..10u64 {
            let (xs, ys) = teacher_pairs(256, 100 + seed);
            let init = GaeParams::random(8, 8, 4, 4, ActivationKind::Sigmoid, seed);
            let cfg = TrainConfig {
                learning_rate: 0.02,
                momentum: 0.5,
                epochs: 50,
                batch_size: 32,
                seed,
                ..TrainConfig::default()
            };
            let (_, report) = train_gae(&xs.view(), &ys.view(), None, &cfg, init).unwrap();
            assert!(
                report.train_loss[49] < report.train_loss[0],
                "seed {seed}: {} !< {}",
                report.train_loss[49],
                report.train_loss[0]
            );
        }
    }

    #[test]
    fn heavy_weight_decay_shrinks_weights() {
        let xs = random_matrix(64, 4, 20);
        let init = GaeParams::random_covariance(4, 3, 3, 21);
        let norm0 = init.wx.mapv(|v| v * v).sum() + init.wh.mapv(|v| v * v).sum();
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.0,
            weight_decay: 1e3,
            epochs: 20,
            batch_size: 16,
            mode: ReconstructionMode::Symmetric,
            ..TrainConfig::default()
        };
        let (p, _) = train_cov_gae(&xs.view(), None, &cfg, init).unwrap();
        let norm1 = p.wx.mapv(|v| v * v).sum() + p.wh.mapv(|v| v * v).sum();
        assert!(norm1 < norm0, "decay should shrink weights: {norm1} !< {norm0}");
    }

    #[test]
    fn single_step_matches_plain_gradient_descent() {
        let xs = random_matrix(16, 4, 30);
        let ys = random_matrix(16, 3, 31);
        let init = GaeParams::random(4, 3, 2, 3, ActivationKind::Sigmoid, 32);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 1,
            batch_size: 16,
            seed: 33,
            ..TrainConfig::default()
        };
        let (p, _) = train_gae(&xs.view(), &ys.view(), None, &cfg, init.clone()).unwrap();
        let (_, g) = loss_gradients(
            &init,
            &xs.view(),
            &ys.view(),
            ReconstructionMode::Conditional,
        )
        .unwrap();
        let expect = &init.wx - &(0.05 * &g.wx);
        assert_eq!(p.wx, expect);
        let expect_b = &init.b - &(0.05 * &g.b);
        assert_eq!(p.b, expect_b);
    }

    #[test]
    fn same_seed_same_result() {
        let xs = random_matrix(40, 5, 40);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            corruption_kind: CorruptionKind::Masking,
            corruption_level: 0.2,
            seed: 41,
            ..TrainConfig::default()
        };
        let init = MeanAeParams::random(5, 4, 42);
        let (a, _) = train_mean_ae(&xs.view(), None, &cfg, init.clone()).unwrap();
        let (b, _) = train_mean_ae(&xs.view(), None, &cfg, init).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_ae_reconstruction_improves_on_structured_data() {
        // one dominant direction in the data
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let n = 200;
        let mut xs = Array2::<f64>::zeros((n, 6));
        for mut row in xs.axis_iter_mut(Axis(0)) {
            let t: f64 = rng.gen::<f64>() * 4.0 - 2.0;
            for (j, v) in row.iter_mut().enumerate() {
                *v = t * (j as f64 * 0.7).cos() + 0.05 * (rng.gen::<f64>() - 0.5);
            }
        }
        let init = MeanAeParams::random(6, 3, 51);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.5,
            epochs: 60,
            batch_size: 25,
            seed: 52,
            ..TrainConfig::default()
        };
        let (_, report) = train_mean_ae(&xs.view(), None, &cfg, init).unwrap();
        assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
    }

    #[test]
    fn covariance_training_keeps_factors_tied() {
        let xs = random_matrix(48, 5, 60);
        let init = GaeParams::random_covariance(5, 4, 4, 61);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.8,
            weight_decay: 1e-4,
            epochs: 8,
            batch_size: 16,
            corruption_kind: CorruptionKind::Masking,
            corruption_level: 0.1,
            seed: 62,
            ..TrainConfig::default()
        };
        let (p, _) = train_cov_gae(&xs.view(), None, &cfg, init).unwrap();
        assert_eq!(p.wx, p.wy);
        assert_eq!(p.ax, p.ay);
    }

    #[test]
    fn divergence_reports_epoch() {
        let xs = random_matrix(16, 4, 70) * 10.0;
        let init = GaeParams::random_covariance(4, 4, 4, 71);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            momentum: 0.0,
            epochs: 50,
            batch_size: 16,
            mode: ReconstructionMode::Symmetric,
            ..TrainConfig::default()
        };
        match train_cov_gae(&xs.view(), None, &cfg, init) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_prefers_learning_over_not_learning() {
        let xs = random_matrix(96, 4, 80);
        let val = random_matrix(32, 4, 81);
        let base = TrainConfig {
            epochs: 10,
            batch_size: 32,
            momentum: 0.5,
            seed: 82,
            mode: ReconstructionMode::Symmetric,
            ..TrainConfig::default()
        };
        let grid = GridSpec {
            hiddens: vec![4],
            factors: vec![3],
            learning_rates: vec![0.0, 0.05],
            weight_decays: vec![0.0],
            corruption_levels: vec![0.0],
        };
        let out = grid_search_cov_gae(&xs.view(), &val.view(), &base, &grid).unwrap();
        assert_eq!(out.config.learning_rate, 0.05);
        let out = grid_search_mean_ae(&xs.view(), &val.view(), &base, &grid).unwrap();
        assert_eq!(out.config.learning_rate, 0.05);
    }
}
